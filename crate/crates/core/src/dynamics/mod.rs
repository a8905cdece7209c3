//! Vector fields and their flows.

mod config;
pub mod integrator;
mod registry;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use config::SystemConfig;
pub use integrator::Tolerance;
use integrator::{ErrorScale, Failure, Options, Stepper};
pub use registry::{lookup, registry, RegistryEntry};

pub type FieldFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Writes the Jacobian in column-major order (`out[i + j * n] = dF_i/dx_j`).
pub type JacobianFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Equilibrium residual accepted by [`SystemSpec::validate`].
pub const EQUILIBRIUM_TOL: f64 = 1e-10;

/// A named smooth vector field `x' = F(x)` with a known equilibrium.
#[derive(Clone)]
pub struct SystemSpec {
    pub name: String,
    pub dim: usize,
    pub params: BTreeMap<String, f64>,
    pub equilibrium: Vec<f64>,
    field: FieldFn,
    jacobian: Option<JacobianFn>,
}

impl fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("params", &self.params)
            .field("equilibrium", &self.equilibrium)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl SystemSpec {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        equilibrium: Vec<f64>,
        field: FieldFn,
        jacobian: Option<JacobianFn>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        if equilibrium.len() != dim {
            return Err(Error::InvalidInput(format!(
                "equilibrium has {} components, expected {dim}",
                equilibrium.len()
            )));
        }
        Ok(SystemSpec {
            name: name.into(),
            dim,
            params: BTreeMap::new(),
            equilibrium,
            field,
            jacobian,
        })
    }

    pub fn with_params(mut self, params: BTreeMap<String, f64>) -> Self {
        self.params = params;
        self
    }

    /// `x' = A x` with equilibrium at the origin.
    pub fn linear(name: impl Into<String>, a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidInput("linear system matrix must be square".into()));
        }
        let n = a.nrows();
        let af = a.clone();
        let field: FieldFn = Arc::new(move |x, out| {
            for i in 0..n {
                out[i] = (0..n).map(|j| af[(i, j)] * x[j]).sum();
            }
        });
        let aj = a;
        let jac: JacobianFn = Arc::new(move |_, out| out.copy_from_slice(aj.as_slice()));
        SystemSpec::new(name, n, vec![0.0; n], field, Some(jac))
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (self.field)(x, out)
    }

    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        (self.field)(x, out.as_mut_slice());
        out
    }

    /// Jacobian of the field, analytic when available, central differences otherwise.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        self.jacobian_into(x, m.as_mut_slice());
        m
    }

    fn jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.jacobian {
            Some(j) => j(x, out),
            None => fd_jacobian_into(&*self.field, x, out),
        }
    }

    pub fn fd_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        fd_jacobian_into(&*self.field, x, m.as_mut_slice());
        m
    }

    /// Same system with the field scaled by `c` (time rescaling).
    pub fn scaled(&self, c: f64) -> SystemSpec {
        let f = self.field.clone();
        let field: FieldFn = Arc::new(move |x, out| {
            f(x, out);
            out.iter_mut().for_each(|v| *v *= c);
        });
        let jacobian = self.jacobian.clone().map(|j| {
            let j: JacobianFn = Arc::new(move |x, out| {
                j(x, out);
                out.iter_mut().for_each(|v| *v *= c);
            });
            j
        });
        SystemSpec {
            name: format!("{}*{c}", self.name),
            field,
            jacobian,
            ..self.clone()
        }
    }

    /// The same system in coordinates `z = x - x0`, so the equilibrium sits at the origin.
    pub fn centered(&self) -> SystemSpec {
        if self.equilibrium.iter().all(|v| *v == 0.0) {
            return self.clone();
        }
        let x0 = self.equilibrium.clone();
        let shift = move |z: &[f64]| -> Vec<f64> { z.iter().zip(&x0).map(|(a, b)| a + b).collect() };
        let f = self.field.clone();
        let s = shift.clone();
        let field: FieldFn = Arc::new(move |z, out| f(&s(z), out));
        let jacobian = self.jacobian.clone().map(|j| {
            let j: JacobianFn = Arc::new(move |z, out| j(&shift(z), out));
            j
        });
        SystemSpec {
            equilibrium: vec![0.0; self.dim],
            field,
            jacobian,
            ..self.clone()
        }
    }

    /// Checks the equilibrium residual and, when an analytic Jacobian is
    /// present, compares it with central differences at 10 seeded points.
    pub fn validate(&self) -> Result<()> {
        let residual = self.eval(&self.equilibrium).norm();
        if !(residual <= EQUILIBRIUM_TOL) {
            return Err(Error::NotEquilibrium {
                residual,
                tolerance: EQUILIBRIUM_TOL,
            });
        }
        if self.jacobian.is_some() {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            for _ in 0..10 {
                let x: Vec<f64> = self.equilibrium.iter().map(|c| c + rng.gen_range(-1.0..1.0)).collect();
                let analytic = self.jacobian(&x);
                let fd = self.fd_jacobian(&x);
                let err = (&analytic - &fd).norm();
                if err > 1e-5 * fd.norm().max(1.0) {
                    return Err(Error::InvalidInput(format!(
                        "analytic Jacobian of `{}` disagrees with finite differences at {x:?} (error {err:e})",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Central-difference Jacobian with step `cbrt(eps) * max(1, |x_k|)`.
pub fn fd_jacobian_into(f: &(dyn Fn(&[f64], &mut [f64]) + Send + Sync), x: &[f64], out: &mut [f64]) {
    let n = x.len();
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    let base = f64::EPSILON.cbrt();
    for k in 0..n {
        let h = base * x[k].abs().max(1.0);
        xp[k] = x[k] + h;
        f(&xp, &mut fp);
        xp[k] = x[k] - h;
        f(&xp, &mut fm);
        xp[k] = x[k];
        let width = 2.0 * h;
        for i in 0..n {
            out[i + k * n] = (fp[i] - fm[i]) / width;
        }
    }
}

/// Axis-aligned rectangular grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub spacing: Vec<f64>,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, spacing: Vec<f64>) -> Result<Self> {
        let g = GridSpec { lower, upper, spacing };
        g.check()?;
        Ok(g)
    }

    /// A uniform square grid `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64, spacing: f64) -> Result<Self> {
        GridSpec::new(vec![lo; dim], vec![hi; dim], vec![spacing; dim])
    }

    /// Degenerate grid holding exactly one point.
    pub fn single(point: &[f64]) -> Self {
        GridSpec {
            lower: point.to_vec(),
            upper: point.to_vec(),
            spacing: vec![1.0; point.len()],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.lower.len();
        if n == 0 || self.upper.len() != n || self.spacing.len() != n {
            return Err(Error::InvalidInput(
                "grid bounds and spacing must have the same positive length".into(),
            ));
        }
        for k in 0..n {
            let (lo, hi, h) = (self.lower[k], self.upper[k], self.spacing[k]);
            if !(lo.is_finite() && hi.is_finite() && h.is_finite() && h > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "axis {k}: bounds and spacing must be finite, spacing positive"
                )));
            }
            if lo > hi {
                return Err(Error::InvalidInput(format!("axis {k}: lower {lo} exceeds upper {hi}")));
            }
        }
        let total = self.axis_counts().iter().try_fold(1usize, |acc, &c| acc.checked_mul(c));
        match total {
            Some(c) if c > 0 && c <= 100_000_000 => Ok(()),
            _ => Err(Error::InvalidInput("grid point count out of range".into())),
        }
    }

    pub fn axis_counts(&self) -> Vec<usize> {
        (0..self.dim())
            .map(|k| {
                let span = (self.upper[k] - self.lower[k]) / self.spacing[k];
                (span + 1e-9).floor() as usize + 1
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.axis_counts().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid points in row-major order: the last coordinate varies fastest.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let counts = self.axis_counts();
        let n = self.dim();
        let total: usize = counts.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; n];
        for _ in 0..total {
            out.push(
                (0..n)
                    .map(|k| self.lower[k] + idx[k] as f64 * self.spacing[k])
                    .collect(),
            );
            for k in (0..n).rev() {
                idx[k] += 1;
                if idx[k] < counts[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryStatus {
    Completed,
    Diverged,
    StepFailure,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub status: TrajectoryStatus,
}

impl Trajectory {
    /// Φ(T, x) when the integration completed.
    pub fn final_state(&self) -> Option<&DVector<f64>> {
        match self.status {
            TrajectoryStatus::Completed => self.states.last(),
            _ => None,
        }
    }

    pub fn into_result(self) -> Result<Trajectory> {
        let t = self.times.last().copied().unwrap_or(0.0);
        match self.status {
            TrajectoryStatus::Completed => Ok(self),
            TrajectoryStatus::Diverged => Err(Error::Diverged { t }),
            TrajectoryStatus::StepFailure => Err(Error::StepFailure { t }),
        }
    }
}

fn check_flow_args(system: &SystemSpec, x: &[f64], duration: f64, tol: Tolerance) -> Result<()> {
    if x.len() != system.dim {
        return Err(Error::InvalidInput(format!(
            "point has {} components, system `{}` has dimension {}",
            x.len(),
            system.name,
            system.dim
        )));
    }
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "duration must be finite and non-negative, got {duration}"
        )));
    }
    if !tol.is_valid() {
        return Err(Error::InvalidInput("tolerances must be positive".into()));
    }
    Ok(())
}

/// Integrates the flow Φ(t, x) on `[0, duration]`, recording every accepted step.
pub fn flow(system: &SystemSpec, x: &[f64], duration: f64, tol: Tolerance) -> Result<Trajectory> {
    check_flow_args(system, x, duration, tol)?;
    let field = &*system.field;
    let mut stepper = Stepper::new(field, x, Options::new(tol, system.dim));
    let mut times = vec![0.0];
    let mut states = vec![DVector::from_column_slice(x)];
    let res = stepper.advance(duration, |step| {
        times.push(step.t1());
        states.push(DVector::from_column_slice(step.y1));
    });
    let status = match res {
        Ok(()) => TrajectoryStatus::Completed,
        Err(Failure::Diverged { .. }) => TrajectoryStatus::Diverged,
        Err(Failure::StepUnderflow { .. }) => TrajectoryStatus::StepFailure,
    };
    Ok(Trajectory { times, states, status })
}

/// Right-hand side of the state plus variational equation `M' = ∇F(x) M`.
/// Layout: `[x (n), M column-major (n*n)]`.
pub(crate) fn variational_rhs(system: &SystemSpec) -> impl Fn(&[f64], &mut [f64]) + Sync + '_ {
    let n = system.dim;
    move |y: &[f64], out: &mut [f64]| {
        let (x, m) = y.split_at(n);
        let (dx, dm) = out.split_at_mut(n);
        system.eval_into(x, dx);
        let mut jac = [0.0; 64];
        let mut heap;
        let jac: &mut [f64] = if n * n <= 64 {
            &mut jac[..n * n]
        } else {
            heap = vec![0.0; n * n];
            &mut heap
        };
        system.jacobian_into(x, jac);
        for c in 0..n {
            for i in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += jac[i + k * n] * m[k + c * n];
                }
                dm[i + c * n] = acc;
            }
        }
    }
}

pub(crate) fn sensitivity_initial(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut y0 = vec![0.0; n + n * n];
    y0[..n].copy_from_slice(x);
    for i in 0..n {
        y0[n + i + i * n] = 1.0;
    }
    y0
}

/// Φ(T, x) together with the state-transition matrix ∇Φ(T, x).
/// The error control is relative per block (state, then each column of the
/// matrix), so decaying sensitivities keep their accuracy.
pub fn flow_with_sensitivity(
    system: &SystemSpec,
    x: &[f64],
    duration: f64,
    tol: Tolerance,
) -> Result<(Trajectory, DMatrix<f64>)> {
    check_flow_args(system, x, duration, tol)?;
    let n = system.dim;
    let rhs = variational_rhs(system);
    let y0 = sensitivity_initial(x);
    let opts = decaying_options(tol, n, n);
    let mut stepper = Stepper::new(&rhs, &y0, opts);
    let mut times = vec![0.0];
    let mut states = vec![DVector::from_column_slice(x)];
    let res = stepper.advance(duration, |step| {
        times.push(step.t1());
        states.push(DVector::from_column_slice(&step.y1[..n]));
    });
    let status = match res {
        Ok(()) => TrajectoryStatus::Completed,
        Err(Failure::Diverged { .. }) => TrajectoryStatus::Diverged,
        Err(Failure::StepUnderflow { .. }) => TrajectoryStatus::StepFailure,
    };
    let m = DMatrix::from_column_slice(n, n, &stepper.state()[n..]);
    Ok((Trajectory { times, states, status }, m))
}

/// Stepper options that keep relative accuracy on states decaying to the
/// equilibrium: the absolute tolerance is scaled by the state norm.
pub(crate) fn decaying_options(tol: Tolerance, dim: usize, block: usize) -> Options {
    Options {
        scale: ErrorScale::BlockNorm(block),
        ..Options::new(tol, dim)
    }
}
