//! Principal Koopman eigenfunctions of a stable equilibrium, computed on its
//! region of attraction from the limit `ψ_i(x) = lim e^{-λ_i t} w_i^* Φ(t, x)`,
//! together with finite-difference certificates relating eigenfunction
//! gradients, conservative linearizing fields and commuting symmetry frames.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[cfg(feature = "cli")]
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod koopman;
mod parallel;
pub mod sampling;
pub mod spectral;

pub use error::{Error, Result};
