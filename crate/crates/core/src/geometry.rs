//! Finite-difference oracles for Lie derivatives, Lie brackets, commuting
//! symmetries, conservative fields and frame duality.
//!
//! Gradients are plain vectors of partial derivatives. Where a pairing needs
//! the conjugate-transpose convention (`X^* F`), it is spelled out at the call.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::SystemSpec;
use crate::error::{Error, Result};
use crate::parallel::map_ordered;
use crate::spectral::condition_number;

/// Frames with a larger condition number are treated as singular.
pub const FRAME_SINGULAR_COND: f64 = 1e8;

pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;

/// A complex vector field on `R^n`.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Result<CVector>;
}

/// A complex scalar field on `R^n`.
pub trait ScalarField: Send + Sync {
    fn value(&self, x: &[f64]) -> Result<Complex64>;

    /// Plain partial derivatives; central differences unless overridden.
    fn gradient(&self, x: &[f64], h: f64) -> Result<CVector> {
        fd_gradient(self, x, h)
    }
}

impl VectorField for SystemSpec {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64]) -> Result<CVector> {
        let f = SystemSpec::eval(self, x);
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation {
                point: x.to_vec(),
                reason: "non-finite field value".into(),
            });
        }
        Ok(f.map(|v| Complex64::new(v, 0.0)))
    }
}

impl<T: VectorField + ?Sized> VectorField for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval(&self, x: &[f64]) -> Result<CVector> {
        (**self).eval(x)
    }
}

impl<T: ScalarField + ?Sized> ScalarField for Arc<T> {
    fn value(&self, x: &[f64]) -> Result<Complex64> {
        (**self).value(x)
    }

    fn gradient(&self, x: &[f64], h: f64) -> Result<CVector> {
        (**self).gradient(x, h)
    }
}

/// Closure-backed vector field.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&[f64]) -> CVector + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64]) -> Result<CVector> {
        Ok((self.f)(x))
    }
}

pub fn complex_field<F>(dim: usize, f: F) -> FnField<F>
where
    F: Fn(&[f64]) -> CVector + Send + Sync,
{
    FnField { dim, f }
}

/// Real vector field lifted to a complex one.
pub fn real_field(
    dim: usize,
    f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync,
) -> FnField<impl Fn(&[f64]) -> CVector + Send + Sync> {
    complex_field(dim, move |x| {
        CVector::from_iterator(dim, f(x).into_iter().map(|v| Complex64::new(v, 0.0)))
    })
}

/// The constant field `e_k` (zero-based `k`).
pub fn unit_field(dim: usize, k: usize) -> FnField<impl Fn(&[f64]) -> CVector + Send + Sync> {
    complex_field(dim, move |_| {
        let mut v = CVector::zeros(dim);
        v[k] = Complex64::new(1.0, 0.0);
        v
    })
}

/// Closure-backed scalar field.
pub struct FnScalar<F>(pub F);

impl<F> ScalarField for FnScalar<F>
where
    F: Fn(&[f64]) -> Complex64 + Send + Sync,
{
    fn value(&self, x: &[f64]) -> Result<Complex64> {
        Ok((self.0)(x))
    }
}

/// `1e-4 * max(1, ‖x‖)`.
pub fn default_step(x: &[f64]) -> f64 {
    1e-4 * x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0)
}

fn check_step(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "finite-difference step must be positive, got {h}"
        )))
    }
}

pub fn fd_gradient<G: ScalarField + ?Sized>(g: &G, x: &[f64], h: f64) -> Result<CVector> {
    check_step(h)?;
    let n = x.len();
    let mut xp = x.to_vec();
    let mut grad = CVector::zeros(n);
    for k in 0..n {
        xp[k] = x[k] + h;
        let gp = g.value(&xp)?;
        xp[k] = x[k] - h;
        let gm = g.value(&xp)?;
        xp[k] = x[k];
        grad[k] = (gp - gm) / (2.0 * h);
    }
    Ok(grad)
}

/// Central-difference Jacobian, `J[(i, k)] = ∂G_i/∂x_k`.
pub fn fd_jacobian<V: VectorField + ?Sized>(g: &V, x: &[f64], h: f64) -> Result<CMatrix> {
    check_step(h)?;
    let n = x.len();
    let mut xp = x.to_vec();
    let mut jac = CMatrix::zeros(g.dim(), n);
    for k in 0..n {
        xp[k] = x[k] + h;
        let gp = g.eval(&xp)?;
        xp[k] = x[k] - h;
        let gm = g.eval(&xp)?;
        xp[k] = x[k];
        jac.set_column(k, &((gp - gm) / Complex64::new(2.0 * h, 0.0)));
    }
    Ok(jac)
}

/// `L_F g(x) = Σ_k ∂g/∂x_k F_k(x)` with central differences of step `h`.
pub fn lie_derivative<G, V>(g: &G, f: &V, x: &[f64], h: f64) -> Result<Complex64>
where
    G: ScalarField + ?Sized,
    V: VectorField + ?Sized,
{
    let grad = fd_gradient(g, x, h)?;
    let fx = f.eval(x)?;
    Ok(grad.iter().zip(fx.iter()).map(|(a, b)| a * b).sum())
}

/// Both terms of `[G, F](x) = ∇G(x) F(x) - ∇F(x) G(x)`.
fn bracket_terms<A, B>(g: &A, f: &B, x: &[f64], h: f64) -> Result<(CVector, CVector)>
where
    A: VectorField + ?Sized,
    B: VectorField + ?Sized,
{
    let jg = fd_jacobian(g, x, h)?;
    let jf = fd_jacobian(f, x, h)?;
    Ok((jg * f.eval(x)?, jf * g.eval(x)?))
}

/// `[G, F](x) = ∇G(x) F(x) - ∇F(x) G(x)` with central-difference Jacobians.
pub fn lie_bracket<A, B>(g: &A, f: &B, x: &[f64], h: f64) -> Result<CVector>
where
    A: VectorField + ?Sized,
    B: VectorField + ?Sized,
{
    let (a, b) = bracket_terms(g, f, x, h)?;
    Ok(a - b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlagReason {
    SingularFrame,
    BelowFloor,
    EvaluationFailure,
    NonConvergent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedPoint {
    pub point: Vec<f64>,
    pub reason: FlagReason,
}

/// Outcome of one certificate over a point set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub check_name: String,
    /// Points that produced a residual (flagged points excluded).
    pub points_tested: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub flagged_points: Vec<FlaggedPoint>,
    pub pass: bool,
}

/// Per-point outcome fed to [`certify`].
pub type PointOutcome = std::result::Result<f64, FlagReason>;

/// Maps an evaluation error at a point to its flag reason.
pub fn flag_of(err: &Error) -> FlagReason {
    match err {
        Error::SingularFrame { .. } => FlagReason::SingularFrame,
        Error::BelowFloor { .. } => FlagReason::BelowFloor,
        Error::NotConverged { .. } => FlagReason::NonConvergent,
        _ => FlagReason::EvaluationFailure,
    }
}

/// Runs `residual` at every point (in parallel when enabled) and reduces
/// in point order. Non-finite residuals count as infinite.
pub fn certify<F>(name: &str, points: &[Vec<f64>], tolerance: f64, residual: F) -> CertificationReport
where
    F: Fn(&[f64]) -> PointOutcome + Send + Sync,
{
    let outcomes = map_ordered(points, |p| residual(p));
    let mut report = CertificationReport {
        check_name: name.to_string(),
        points_tested: 0,
        max_residual: 0.0,
        tolerance,
        flagged_points: Vec::new(),
        pass: false,
    };
    for (p, o) in points.iter().zip(outcomes) {
        match o {
            Ok(r) => {
                report.points_tested += 1;
                let r = if r.is_nan() { f64::INFINITY } else { r };
                report.max_residual = report.max_residual.max(r);
            }
            Err(reason) => report.flagged_points.push(FlaggedPoint {
                point: p.clone(),
                reason,
            }),
        }
    }
    report.pass = report.max_residual <= tolerance;
    report
}

/// Relative bracket residual `‖[G, F]‖ / max(1, ‖∇G F‖)`.
fn bracket_residual<A, B>(g: &A, f: &B, x: &[f64], h: f64) -> Result<f64>
where
    A: VectorField + ?Sized,
    B: VectorField + ?Sized,
{
    let (a, b) = bracket_terms(g, f, x, h)?;
    Ok((&a - &b).norm() / a.norm().max(1.0))
}

/// Certifies `[G, F] = 0` for the system field `F`. A complex `G` is checked
/// as two real fields, its real and imaginary parts.
pub fn check_symmetry<G>(g: &G, system: &SystemSpec, points: &[Vec<f64>], tolerance: f64) -> CertificationReport
where
    G: VectorField + ?Sized,
{
    certify("symmetry", points, tolerance, |x| {
        let h = default_step(x);
        let re = complex_field(g.dim(), |p: &[f64]| {
            g.eval(p)
                .map(|v| v.map(|c| Complex64::new(c.re, 0.0)))
                .unwrap_or_else(|_| CVector::from_element(g.dim(), Complex64::new(f64::NAN, 0.0)))
        });
        let im = complex_field(g.dim(), |p: &[f64]| {
            g.eval(p)
                .map(|v| v.map(|c| Complex64::new(c.im, 0.0)))
                .unwrap_or_else(|_| CVector::from_element(g.dim(), Complex64::new(f64::NAN, 0.0)))
        });
        // surface evaluation failures as flags rather than NaN residuals
        g.eval(x).map_err(|e| flag_of(&e))?;
        let r_re = bracket_residual(&re, system, x, h).map_err(|e| flag_of(&e))?;
        let r_im = bracket_residual(&im, system, x, h).map_err(|e| flag_of(&e))?;
        Ok(r_re.max(r_im))
    })
}

/// Certifies `[G, H] = 0` for two complex fields.
pub fn check_commuting<A, B>(g: &A, hf: &B, points: &[Vec<f64>], tolerance: f64) -> CertificationReport
where
    A: VectorField + ?Sized,
    B: VectorField + ?Sized,
{
    certify("commuting", points, tolerance, |x| {
        bracket_residual(g, hf, x, default_step(x)).map_err(|e| flag_of(&e))
    })
}

/// Symmetric-Jacobian test `‖∇X - ∇X^T‖ / max(1, ‖∇X‖)`.
pub fn check_conservative<V>(field: &V, points: &[Vec<f64>], step: Option<f64>, tolerance: f64) -> CertificationReport
where
    V: VectorField + ?Sized,
{
    certify("conservative", points, tolerance, |x| {
        let h = step.unwrap_or_else(|| default_step(x));
        let j = fd_jacobian(field, x, h).map_err(|e| flag_of(&e))?;
        Ok((&j - j.transpose()).norm() / j.norm().max(1.0))
    })
}

/// Dual frame `[X_1 ⋯ X_n] = ([E_1 ⋯ E_n]^{-1})^*`.
pub fn dual_frame(frame: &CMatrix) -> Result<CMatrix> {
    if !frame.is_square() {
        return Err(Error::InvalidInput("frame matrix must be square".into()));
    }
    let condition = condition_number(frame);
    if !(condition <= FRAME_SINGULAR_COND) {
        return Err(Error::SingularFrame {
            condition,
            threshold: FRAME_SINGULAR_COND,
        });
    }
    let inv = frame.clone().lu().try_inverse().ok_or(Error::SingularFrame {
        condition: f64::INFINITY,
        threshold: FRAME_SINGULAR_COND,
    })?;
    Ok(inv.adjoint())
}

/// `n` complex vector fields, one per column.
#[derive(Clone)]
pub struct Frame {
    pub columns: Vec<Arc<dyn VectorField>>,
}

impl Frame {
    pub fn new(columns: Vec<Arc<dyn VectorField>>) -> Result<Self> {
        let n = columns.len();
        if n == 0 || columns.iter().any(|c| c.dim() != n) {
            return Err(Error::InvalidInput("a frame needs n fields of dimension n".into()));
        }
        Ok(Frame { columns })
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn matrix_at(&self, x: &[f64]) -> Result<CMatrix> {
        let n = self.dim();
        let mut m = CMatrix::zeros(n, n);
        for (k, c) in self.columns.iter().enumerate() {
            m.set_column(k, &c.eval(x)?);
        }
        Ok(m)
    }
}

/// The dual frame of `frame` at `x`.
pub fn invert_frame(frame: &Frame, x: &[f64]) -> Result<CMatrix> {
    dual_frame(&frame.matrix_at(x)?)
}

/// `‖[X]^* [E] - I‖`, the product identity of a frame and its dual.
pub fn duality_residual(frame: &CMatrix, dual: &CMatrix) -> f64 {
    let n = frame.nrows();
    (dual.adjoint() * frame - CMatrix::identity(n, n)).norm()
}

/// The two certificates for a conservative linearizing field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizingReport {
    /// `|X^* F - c| / max(1, |c|)`.
    pub pairing: CertificationReport,
    /// Gradient of the pairing, `‖∇X F + ∇F^T X‖ / max(1, ‖∇X F‖)`.
    pub gradient_identity: CertificationReport,
}

impl LinearizingReport {
    pub fn pass(&self) -> bool {
        self.pairing.pass && self.gradient_identity.pass
    }
}

/// Certifies that `X^* F ≡ c` (conjugate pairing) and that its gradient vanishes.
pub fn check_linearizing<V>(
    field: &V,
    system: &SystemSpec,
    expected: Complex64,
    points: &[Vec<f64>],
    tolerance: f64,
) -> LinearizingReport
where
    V: VectorField + ?Sized,
{
    let pairing = certify("linearizing-pairing", points, tolerance, |x| {
        let xv = field.eval(x).map_err(|e| flag_of(&e))?;
        let f = SystemSpec::eval(system, x);
        let p: Complex64 = xv.iter().zip(f.iter()).map(|(a, b)| a.conj() * b).sum();
        Ok((p - expected).norm() / expected.norm().max(1.0))
    });
    let gradient_identity = certify("linearizing-gradient", points, tolerance, |x| {
        let h = default_step(x);
        let jx = fd_jacobian(field, x, h).map_err(|e| flag_of(&e))?;
        let xv = field.eval(x).map_err(|e| flag_of(&e))?;
        let f = VectorField::eval(system, x).map_err(|e| flag_of(&e))?;
        let jf = system.jacobian(x).map(|v| Complex64::new(v, 0.0));
        let a = jx * f;
        let r = &a + jf.transpose() * xv;
        Ok(r.norm() / a.norm().max(1.0))
    });
    LinearizingReport {
        pairing,
        gradient_identity,
    }
}
