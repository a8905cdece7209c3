//! Principal Koopman eigenfunctions from the limit
//! `ψ_i(x) = lim_{T→∞} e^{-λ_i T} w_i^* (Φ(T, x) - x0)`.
//!
//! Indices are zero-based and follow the canonical order of [`SpectralData`].
//! Gradients are plain partial derivatives; the conjugate-pairing linearizing
//! field is their conjugate, `X_i = conj(∇ψ_i / ψ_i)`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::integrator::{Failure, Stepper};
use crate::dynamics::{
    decaying_options, flow, flow_with_sensitivity, GridSpec, SystemSpec, Tolerance, TrajectoryStatus,
};
use crate::error::{Error, Result};
use crate::geometry::{
    certify, default_step, dual_frame, fd_gradient, flag_of, CMatrix, CVector, CertificationReport, FlagReason,
    ScalarField, VectorField, FRAME_SINGULAR_COND,
};
use crate::parallel::map_ordered;
use crate::spectral::SpectralData;

/// Estimates whose exponential weight `|Re(-λT)|` exceeds this are refused.
pub const LOG_WEIGHT_LIMIT: f64 = 600.0;

/// Horizons `T0, T0·growth, …` capped at `t_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSchedule {
    pub t0: f64,
    pub growth: f64,
    pub t_max: f64,
    pub rel_tol: f64,
    /// Magnitude floor in the relative-change denominator.
    pub floor: f64,
}

impl Default for ConvergenceSchedule {
    fn default() -> Self {
        ConvergenceSchedule {
            t0: 4.0,
            growth: 1.5,
            t_max: 64.0,
            rel_tol: 1e-6,
            floor: 1e-12,
        }
    }
}

impl ConvergenceSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = self.t0 > 0.0
            && self.growth > 1.0
            && self.t_max >= self.t0
            && self.t_max.is_finite()
            && self.rel_tol > 0.0
            && self.floor > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "schedule needs T0 > 0, growth > 1, Tmax >= T0, positive tolerances; got {self:?}"
            )))
        }
    }

    /// The horizons visited, the last one equal to `t_max`.
    pub fn horizons(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut t = self.t0;
        loop {
            if t >= self.t_max {
                out.push(self.t_max);
                return out;
            }
            out.push(t);
            t *= self.growth;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointStatus {
    Converged,
    DivergedTrajectory,
    NonConvergent,
    Singular,
}

impl fmt::Display for PointStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PointStatus::Converged => "converged",
            PointStatus::DivergedTrajectory => "diverged-trajectory",
            PointStatus::NonConvergent => "non-convergent",
            PointStatus::Singular => "singular",
        })
    }
}

/// Result of the horizon sweep at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    /// Last estimate; NaN when the trajectory diverged.
    pub value: Complex64,
    pub status: PointStatus,
    /// Horizon of the returned value (time of failure for diverged trajectories).
    pub converged_t: f64,
    pub last_rel_change: f64,
    /// `(T, ψ̂(T))` for every horizon reached.
    pub history: Vec<(f64, Complex64)>,
}

/// `e^{-λT} p`, formed in log-space.
fn weighted(p: Complex64, lambda: Complex64, t: f64) -> Option<Complex64> {
    if p == Complex64::new(0.0, 0.0) {
        return Some(p);
    }
    let log_weight = -lambda.re * t;
    if !(log_weight.abs() <= LOG_WEIGHT_LIMIT) {
        return None;
    }
    let magnitude = (p.norm().ln() + log_weight).exp();
    Some(Complex64::from_polar(magnitude, p.arg() - lambda.im * t))
}

fn dot(w: &[Complex64], z: &[f64]) -> Complex64 {
    w.iter().zip(z).map(|(a, b)| a * b).sum()
}

fn check_index(system: &SystemSpec, spectral: &SpectralData, index: usize, x: &[f64]) -> Result<()> {
    if spectral.dim() != system.dim {
        return Err(Error::InvalidInput(
            "spectral data does not match the system dimension".into(),
        ));
    }
    if index >= system.dim {
        return Err(Error::InvalidInput(format!(
            "eigenvalue index {index} out of range for dimension {}",
            system.dim
        )));
    }
    if x.len() != system.dim || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "point {x:?} must be finite with {} components",
            system.dim
        )));
    }
    Ok(())
}

fn centered_point(system: &SystemSpec, x: &[f64]) -> Vec<f64> {
    x.iter().zip(&system.equilibrium).map(|(a, b)| a - b).collect()
}

/// Integrates once from `x`, visiting each horizon in increasing order.
/// `visit` returns `false` to stop early.
fn sweep(
    system: &SystemSpec,
    x: &[f64],
    horizons: &[f64],
    tol: Tolerance,
    mut visit: impl FnMut(f64, &[f64]) -> bool,
) -> std::result::Result<(), Failure> {
    let centered = system.centered();
    let z0 = centered_point(system, x);
    let rhs = |z: &[f64], out: &mut [f64]| centered.eval_into(z, out);
    let mut stepper = Stepper::new(&rhs, &z0, decaying_options(tol, system.dim, system.dim));
    for &t in horizons {
        stepper.advance(t, |_| {})?;
        if !visit(t, stepper.state()) {
            break;
        }
    }
    Ok(())
}

/// Runs the horizon schedule at `x` until the relative change between
/// consecutive horizons drops to `sched.rel_tol`.
pub fn estimate_eigenfunction(
    system: &SystemSpec,
    spectral: &SpectralData,
    index: usize,
    x: &[f64],
    sched: &ConvergenceSchedule,
    tol: Tolerance,
) -> Result<Estimate> {
    check_index(system, spectral, index, x)?;
    sched.validate()?;
    let w = spectral.left_row(index);
    let lambda = spectral.eigenvalues[index];
    let mut est = Estimate {
        value: Complex64::new(f64::NAN, f64::NAN),
        status: PointStatus::NonConvergent,
        converged_t: f64::NAN,
        last_rel_change: f64::INFINITY,
        history: Vec::new(),
    };
    let mut done = false;
    let res = sweep(system, x, &sched.horizons(), tol, |t, z| {
        let Some(v) = weighted(dot(&w, z), lambda, t) else {
            done = true;
            return false;
        };
        if let Some(&(_, prev)) = est.history.last() {
            est.last_rel_change = (v - prev).norm() / prev.norm().max(sched.floor);
        }
        est.history.push((t, v));
        est.value = v;
        est.converged_t = t;
        if est.last_rel_change <= sched.rel_tol {
            est.status = PointStatus::Converged;
            done = true;
        }
        !done
    });
    if let Err(Failure::Diverged { t } | Failure::StepUnderflow { t }) = res {
        est.value = Complex64::new(f64::NAN, f64::NAN);
        est.status = PointStatus::DivergedTrajectory;
        est.converged_t = t;
        est.last_rel_change = f64::NAN;
    }
    Ok(est)
}

/// `ψ̂(T)` at each of the increasing `horizons`, from one integration.
pub fn estimate_at_horizons(
    system: &SystemSpec,
    spectral: &SpectralData,
    index: usize,
    x: &[f64],
    horizons: &[f64],
    tol: Tolerance,
) -> Result<Vec<Complex64>> {
    check_index(system, spectral, index, x)?;
    if horizons.windows(2).any(|w| !(w[0] <= w[1])) || horizons.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::InvalidInput(
            "horizons must be non-negative and increasing".into(),
        ));
    }
    let w = spectral.left_row(index);
    let lambda = spectral.eigenvalues[index];
    let mut out = Vec::with_capacity(horizons.len());
    let mut overflow = false;
    sweep(system, x, horizons, tol, |t, z| match weighted(dot(&w, z), lambda, t) {
        Some(v) => {
            out.push(v);
            true
        }
        None => {
            overflow = true;
            false
        }
    })
    .map_err(|f| match f {
        Failure::Diverged { t } => Error::Diverged { t },
        Failure::StepUnderflow { t } => Error::StepFailure { t },
    })?;
    if overflow {
        return Err(Error::Evaluation {
            point: x.to_vec(),
            reason: "exponential weight out of range".into(),
        });
    }
    Ok(out)
}

/// Per-point estimates over a grid, in grid order.
#[derive(Debug, Clone)]
pub struct EigenfunctionField {
    pub grid: GridSpec,
    pub index: usize,
    pub eigenvalue: Complex64,
    pub points: Vec<Vec<f64>>,
    pub estimates: Vec<Estimate>,
}

impl EigenfunctionField {
    pub fn values(&self) -> Vec<Complex64> {
        self.estimates.iter().map(|e| e.value).collect()
    }

    pub fn count(&self, status: PointStatus) -> usize {
        self.estimates.iter().filter(|e| e.status == status).count()
    }

    pub fn all_converged(&self) -> bool {
        self.count(PointStatus::Converged) == self.estimates.len()
    }

    /// One row per grid point; numbers in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.grid.dim();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=n).map(|k| format!("x{k}")).collect();
        header.extend(
            [
                "re_psi",
                "im_psi",
                "abs_psi",
                "arg_psi",
                "converged_T",
                "last_rel_change",
                "status",
            ]
            .map(String::from),
        );
        w.write_record(&header).map_err(csv_error)?;
        for (p, e) in self.points.iter().zip(&self.estimates) {
            let mut row: Vec<String> = p.iter().map(|c| c.to_string()).collect();
            row.extend([
                e.value.re.to_string(),
                e.value.im.to_string(),
                e.value.norm().to_string(),
                e.value.arg().to_string(),
                e.converged_t.to_string(),
                e.last_rel_change.to_string(),
                e.status.to_string(),
            ]);
            w.write_record(&row).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn metadata(
        &self,
        system: &SystemSpec,
        spectral: &SpectralData,
        sched: &ConvergenceSchedule,
        tol: Tolerance,
    ) -> FieldMetadata {
        FieldMetadata {
            system: system.name.clone(),
            params: system.params.clone(),
            dim: system.dim,
            equilibrium: system.equilibrium.clone(),
            index: self.index + 1,
            eigenvalue: [self.eigenvalue.re, self.eigenvalue.im],
            left_vector: spectral.left_row(self.index).iter().map(|c| [c.re, c.im]).collect(),
            schedule: *sched,
            integrator_tolerance: tol,
            grid: self.grid.clone(),
            points: self.points.len(),
            converged: self.count(PointStatus::Converged),
            diverged_trajectory: self.count(PointStatus::DivergedTrajectory),
            non_convergent: self.count(PointStatus::NonConvergent),
            singular: self.count(PointStatus::Singular),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::InvalidInput(format!("csv: {other:?}")),
    }
}

/// JSON sidecar of a field CSV. `index` is one-based here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMetadata {
    pub system: String,
    pub params: BTreeMap<String, f64>,
    pub dim: usize,
    pub equilibrium: Vec<f64>,
    pub index: usize,
    pub eigenvalue: [f64; 2],
    pub left_vector: Vec<[f64; 2]>,
    pub schedule: ConvergenceSchedule,
    pub integrator_tolerance: Tolerance,
    pub grid: GridSpec,
    pub points: usize,
    pub converged: usize,
    pub diverged_trajectory: usize,
    pub non_convergent: usize,
    pub singular: usize,
    pub code_version: String,
}

/// [`estimate_eigenfunction`] at every grid point. The result does not
/// depend on how the points are scheduled across threads.
pub fn estimate_field(
    system: &SystemSpec,
    spectral: &SpectralData,
    index: usize,
    grid: &GridSpec,
    sched: &ConvergenceSchedule,
    tol: Tolerance,
) -> Result<EigenfunctionField> {
    grid.check()?;
    if grid.dim() != system.dim {
        return Err(Error::InvalidInput(format!(
            "grid dimension {} != system dimension {}",
            grid.dim(),
            system.dim
        )));
    }
    check_index(system, spectral, index, &system.equilibrium)?;
    sched.validate()?;
    let points = grid.points();
    let estimates = map_ordered(&points, |p| {
        estimate_eigenfunction(system, spectral, index, p, sched, tol)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(EigenfunctionField {
        grid: grid.clone(),
        index,
        eigenvalue: spectral.eigenvalues[index],
        points,
        estimates,
    })
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_KRONROD: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights for nodes 1, 3, 5 and the centre.
const GK_GAUSS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Adaptive 7/15-point Gauss–Kronrod quadrature of a complex integrand.
fn gauss_kronrod(f: &mut impl FnMut(f64) -> Complex64, a: f64, b: f64, tol: f64, depth: u32) -> Complex64 {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let centre = f(c);
    let mut kronrod = centre * GK_KRONROD[7];
    let mut gauss = centre * GK_GAUSS[3];
    for (j, (&x, &wk)) in GK_NODES[..7].iter().zip(&GK_KRONROD[..7]).enumerate() {
        let pair = f(c - r * x) + f(c + r * x);
        kronrod += pair * wk;
        if j % 2 == 1 {
            gauss += pair * GK_GAUSS[j / 2];
        }
    }
    let (kronrod, gauss) = (kronrod * r, gauss * r);
    let err = (kronrod - gauss).norm();
    if depth == 0 || err <= tol * kronrod.norm() || err <= 1e-15 * r {
        return kronrod;
    }
    gauss_kronrod(f, a, c, tol, depth - 1) + gauss_kronrod(f, c, b, tol, depth - 1)
}

/// `w_i^* (x - x0) + ∫_0^{T_end} e^{-λ_i s} w_i^* F_n(Φ(s, x)) ds` with
/// `F_n(x) = F(x) - ∇F(x0)(x - x0)`, integrated step by step on the dense output.
pub fn path_integral_eigenfunction(
    system: &SystemSpec,
    spectral: &SpectralData,
    index: usize,
    x: &[f64],
    t_end: f64,
    quad_tol: f64,
    tol: Tolerance,
) -> Result<Complex64> {
    check_index(system, spectral, index, x)?;
    if !(t_end >= 0.0 && t_end.is_finite() && quad_tol > 0.0) {
        return Err(Error::InvalidInput(
            "T_end must be finite and non-negative, quad_tol positive".into(),
        ));
    }
    let n = system.dim;
    let centered = system.centered();
    let a = centered.jacobian(&vec![0.0; n]);
    let w = spectral.left_row(index);
    let lambda = spectral.eigenvalues[index];
    let z0 = centered_point(system, x);
    let rhs = |z: &[f64], out: &mut [f64]| centered.eval_into(z, out);
    let mut stepper = Stepper::new(&rhs, &z0, decaying_options(tol, n, n));
    let mut total = dot(&w, &z0);
    let mut z = vec![0.0; n];
    let mut f = vec![0.0; n];
    stepper
        .advance(t_end, |step| {
            let mut integrand = |s: f64| {
                step.eval(s, &mut z);
                centered.eval_into(&z, &mut f);
                let nonlinear: Vec<f64> = (0..n)
                    .map(|i| f[i] - (0..n).map(|j| a[(i, j)] * z[j]).sum::<f64>())
                    .collect();
                (-lambda * s).exp() * dot(&w, &nonlinear)
            };
            total += gauss_kronrod(&mut integrand, step.t0, step.t1(), quad_tol, 20);
        })
        .map_err(|f| match f {
            Failure::Diverged { t } => Error::Diverged { t },
            Failure::StepUnderflow { t } => Error::StepFailure { t },
        })?;
    Ok(total)
}

/// `ψ̂_i(x; T)` at a fixed horizon, differentiable through the
/// variational equation.
#[derive(Debug, Clone)]
pub struct PrincipalEigenfunction {
    system: SystemSpec,
    spectral: SpectralData,
    index: usize,
    horizon: f64,
    tol: Tolerance,
}

impl PrincipalEigenfunction {
    pub fn new(
        system: &SystemSpec,
        spectral: &SpectralData,
        index: usize,
        horizon: f64,
        tol: Tolerance,
    ) -> Result<Self> {
        check_index(system, spectral, index, &system.equilibrium)?;
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "horizon must be finite and non-negative, got {horizon}"
            )));
        }
        Ok(PrincipalEigenfunction {
            system: system.clone(),
            spectral: spectral.clone(),
            index,
            horizon,
            tol,
        })
    }

    pub fn eigenvalue(&self) -> Complex64 {
        self.spectral.eigenvalues[self.index]
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `e^{-λT} w_i^* ∇Φ(T, x)`.
    pub fn sensitivity_gradient(&self, x: &[f64]) -> Result<CVector> {
        check_index(&self.system, &self.spectral, self.index, x)?;
        let centered = self.system.centered();
        let z = centered_point(&self.system, x);
        let (traj, m) = flow_with_sensitivity(&centered, &z, self.horizon, self.tol)?;
        let t = traj.times.last().copied().unwrap_or(0.0);
        match traj.status {
            TrajectoryStatus::Completed => {}
            TrajectoryStatus::Diverged => return Err(Error::Diverged { t }),
            TrajectoryStatus::StepFailure => return Err(Error::StepFailure { t }),
        }
        let lambda = self.eigenvalue();
        let log_weight = -lambda.re * self.horizon;
        if log_weight.abs() > LOG_WEIGHT_LIMIT {
            return Err(Error::Evaluation {
                point: x.to_vec(),
                reason: "exponential weight out of range".into(),
            });
        }
        let scale = (-lambda * self.horizon).exp();
        let w = self.spectral.left_row(self.index);
        let n = self.system.dim;
        Ok(CVector::from_fn(n, |k, _| {
            scale * (0..n).map(|j| w[j] * m[(j, k)]).sum::<Complex64>()
        }))
    }
}

impl ScalarField for PrincipalEigenfunction {
    fn value(&self, x: &[f64]) -> Result<Complex64> {
        Ok(estimate_at_horizons(&self.system, &self.spectral, self.index, x, &[self.horizon], self.tol)?[0])
    }

    fn gradient(&self, x: &[f64], _h: f64) -> Result<CVector> {
        self.sensitivity_gradient(x)
    }
}

/// The adaptive estimator as a scalar field; points that do not converge
/// are evaluation errors.
#[derive(Debug, Clone)]
pub struct AdaptiveEigenfunction {
    pub system: SystemSpec,
    pub spectral: SpectralData,
    pub index: usize,
    pub schedule: ConvergenceSchedule,
    pub tol: Tolerance,
}

impl AdaptiveEigenfunction {
    pub fn estimate(&self, x: &[f64]) -> Result<Estimate> {
        let e = estimate_eigenfunction(&self.system, &self.spectral, self.index, x, &self.schedule, self.tol)?;
        if e.status != PointStatus::Converged {
            return Err(Error::NotConverged {
                point: x.to_vec(),
                status: e.status.to_string(),
            });
        }
        Ok(e)
    }
}

impl ScalarField for AdaptiveEigenfunction {
    fn value(&self, x: &[f64]) -> Result<Complex64> {
        Ok(self.estimate(x)?.value)
    }

    /// Sensitivity gradient at the horizon where the estimate converged.
    fn gradient(&self, x: &[f64], _h: f64) -> Result<CVector> {
        let e = self.estimate(x)?;
        PrincipalEigenfunction::new(&self.system, &self.spectral, self.index, e.converged_t, self.tol)?
            .sensitivity_gradient(x)
    }
}

/// Largest converged horizon over `points` and `indices`; `t_max` if none converged.
pub fn calibrate_horizon(
    system: &SystemSpec,
    spectral: &SpectralData,
    indices: &[usize],
    points: &[Vec<f64>],
    sched: &ConvergenceSchedule,
    tol: Tolerance,
) -> Result<f64> {
    let jobs: Vec<(usize, &Vec<f64>)> = indices
        .iter()
        .flat_map(|&i| points.iter().map(move |p| (i, p)))
        .collect();
    let estimates = map_ordered(&jobs, |(i, p)| {
        estimate_eigenfunction(system, spectral, *i, p, sched, tol)
    });
    let mut horizon: Option<f64> = None;
    for e in estimates {
        let e = e?;
        if e.status == PointStatus::Converged {
            horizon = Some(horizon.map_or(e.converged_t, |h| h.max(e.converged_t)));
        }
    }
    Ok(horizon.unwrap_or(sched.t_max))
}

/// `ψ ≡ c`, an eigenfunction for `μ = 0`.
#[derive(Debug, Clone, Copy)]
pub struct Constant(pub Complex64);

impl ScalarField for Constant {
    fn value(&self, _x: &[f64]) -> Result<Complex64> {
        Ok(self.0)
    }

    fn gradient(&self, x: &[f64], _h: f64) -> Result<CVector> {
        Ok(CVector::zeros(x.len()))
    }
}

/// Pointwise complex conjugate, an eigenfunction for `conj(μ)`.
#[derive(Debug, Clone)]
pub struct Conjugate<A>(pub A);

impl<A: ScalarField> ScalarField for Conjugate<A> {
    fn value(&self, x: &[f64]) -> Result<Complex64> {
        Ok(self.0.value(x)?.conj())
    }

    fn gradient(&self, x: &[f64], h: f64) -> Result<CVector> {
        Ok(self.0.gradient(x, h)?.map(|c| c.conj()))
    }
}

/// Pointwise product of two eigenfunctions.
#[derive(Debug, Clone)]
pub struct Product<A, B> {
    pub a: A,
    pub b: B,
}

impl<A: ScalarField, B: ScalarField> ScalarField for Product<A, B> {
    fn value(&self, x: &[f64]) -> Result<Complex64> {
        Ok(self.a.value(x)? * self.b.value(x)?)
    }

    fn gradient(&self, x: &[f64], h: f64) -> Result<CVector> {
        let (va, vb) = (self.a.value(x)?, self.b.value(x)?);
        Ok(self.a.gradient(x, h)? * vb + self.b.gradient(x, h)? * va)
    }
}

/// `(ψ1 ψ2, μ1 + μ2)`.
pub fn product_eigenfunction<A, B>(a: A, mu_a: Complex64, b: B, mu_b: Complex64) -> (Product<A, B>, Complex64) {
    (Product { a, b }, mu_a + mu_b)
}

/// Certifies `ψ(Φ(t, x)) = e^{λt} ψ(x)`, residual relative to `max(|ψ(x)|, floor)`.
#[allow(clippy::too_many_arguments)]
pub fn verify_eigenfunction_property<P: ScalarField + ?Sized>(
    psi: &P,
    lambda: Complex64,
    system: &SystemSpec,
    points: &[Vec<f64>],
    t_probe: f64,
    floor: f64,
    tol: Tolerance,
    tolerance: f64,
) -> CertificationReport {
    certify("eigenproperty", points, tolerance, |x| {
        let traj = flow(system, x, t_probe, tol).map_err(|e| flag_of(&e))?;
        let end = traj.final_state().ok_or(FlagReason::EvaluationFailure)?.clone();
        let here = psi.value(x).map_err(|e| flag_of(&e))?;
        let there = psi.value(end.as_slice()).map_err(|e| flag_of(&e))?;
        Ok((there - (lambda * t_probe).exp() * here).norm() / here.norm().max(floor))
    })
}

/// Central-difference gradient of `ψ`.
pub fn gradient_field<P: ScalarField + ?Sized>(psi: &P, x: &[f64], h: f64) -> Result<CVector> {
    fd_gradient(psi, x, h)
}

/// Finite-difference and variational gradients of a fixed-horizon estimate.
#[derive(Debug, Clone)]
pub struct GradientCheck {
    pub finite_difference: CVector,
    pub sensitivity: CVector,
    pub relative_difference: f64,
}

pub fn cross_check_gradient(psi: &PrincipalEigenfunction, x: &[f64], h: f64) -> Result<GradientCheck> {
    let finite_difference = gradient_field(psi, x, h)?;
    let sensitivity = psi.sensitivity_gradient(x)?;
    let relative_difference = (&finite_difference - &sensitivity).norm() / sensitivity.norm().max(f64::MIN_POSITIVE);
    Ok(GradientCheck {
        finite_difference,
        sensitivity,
        relative_difference,
    })
}

/// `F(x)` solved from `[∇ψ_1 ⋯ ∇ψ_n]^T F = (λ_i ψ_i)`.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// Real part of the solution.
    pub field: DVector<f64>,
    /// `‖Im F‖ / max(1, ‖Re F‖)`.
    pub imag_residual: f64,
    /// Condition number of the gradient matrix.
    pub condition: f64,
}

fn gradient_rows<P: AsRef<dyn ScalarField>>(psis: &[P], x: &[f64]) -> Result<(CMatrix, CVector)> {
    let n = x.len();
    if psis.len() != n {
        return Err(Error::InvalidInput(format!(
            "need {n} eigenfunctions, got {}",
            psis.len()
        )));
    }
    let h = default_step(x);
    let mut rows = CMatrix::zeros(n, n);
    let mut values = CVector::zeros(n);
    for (i, p) in psis.iter().enumerate() {
        let p = p.as_ref();
        values[i] = p.value(x)?;
        rows.set_row(i, &p.gradient(x, h)?.transpose());
    }
    Ok((rows, values))
}

pub fn reconstruct_dynamics<P: AsRef<dyn ScalarField>>(
    psis: &[P],
    lambdas: &[Complex64],
    x: &[f64],
) -> Result<Reconstruction> {
    if lambdas.len() != psis.len() {
        return Err(Error::InvalidInput("one eigenvalue per eigenfunction required".into()));
    }
    let (rows, values) = gradient_rows(psis, x)?;
    let condition = crate::spectral::condition_number(&rows);
    if !(condition <= FRAME_SINGULAR_COND) {
        return Err(Error::SingularFrame {
            condition,
            threshold: FRAME_SINGULAR_COND,
        });
    }
    let rhs = CVector::from_fn(values.len(), |i, _| lambdas[i] * values[i]);
    let sol = rows.lu().solve(&rhs).ok_or(Error::SingularFrame {
        condition: f64::INFINITY,
        threshold: FRAME_SINGULAR_COND,
    })?;
    let field = sol.map(|c| c.re);
    let imag = sol.map(|c| c.im);
    Ok(Reconstruction {
        imag_residual: imag.norm() / field.norm().max(1.0),
        field,
        condition,
    })
}

/// Linearizing fields and the commuting frame dual to them at one point.
#[derive(Debug, Clone)]
pub struct SymmetryFrame {
    /// Columns `X_i = conj(∇ψ_i / ψ_i)`.
    pub linearizing: CMatrix,
    /// Columns `E_i`, with `[X]^* [E] = I`.
    pub frame: CMatrix,
}

/// `1e-6 · max |ψ_i|` over `points`, per eigenfunction. Points where `ψ_i`
/// cannot be evaluated are skipped.
pub fn magnitude_floors<P: AsRef<dyn ScalarField> + Sync>(psis: &[P], points: &[Vec<f64>]) -> Vec<f64> {
    psis.iter()
        .map(|p| {
            let mags = map_ordered(points, |x| p.as_ref().value(x).map(|v| v.norm()).unwrap_or(0.0));
            1e-6 * mags.into_iter().fold(0.0, f64::max)
        })
        .collect()
}

pub fn symmetry_frame<P: AsRef<dyn ScalarField>>(psis: &[P], x: &[f64], floors: &[f64]) -> Result<SymmetryFrame> {
    let (rows, values) = gradient_rows(psis, x)?;
    let n = x.len();
    let mut linearizing = CMatrix::zeros(n, n);
    for i in 0..n {
        let floor = floors.get(i).copied().unwrap_or(0.0);
        if !(values[i].norm() > floor) {
            return Err(Error::BelowFloor {
                magnitude: values[i].norm(),
                floor,
            });
        }
        let col = rows.row(i).transpose().map(|g| (g / values[i]).conj());
        linearizing.set_column(i, &col);
    }
    let frame = dual_frame(&linearizing)?;
    Ok(SymmetryFrame { linearizing, frame })
}

/// Column `k` of [`symmetry_frame`] as a vector field.
#[derive(Clone)]
pub struct FrameColumn {
    pub psis: Vec<Arc<dyn ScalarField>>,
    pub floors: Vec<f64>,
    pub column: usize,
}

impl VectorField for FrameColumn {
    fn dim(&self) -> usize {
        self.psis.len()
    }

    fn eval(&self, x: &[f64]) -> Result<CVector> {
        Ok(symmetry_frame(&self.psis, x, &self.floors)?
            .frame
            .column(self.column)
            .into_owned())
    }
}

/// `X = conj(∇ψ / ψ)` as a vector field.
#[derive(Clone)]
pub struct LinearizingField {
    pub psi: Arc<dyn ScalarField>,
    pub dim: usize,
    pub floor: f64,
}

impl VectorField for LinearizingField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64]) -> Result<CVector> {
        let v = self.psi.value(x)?;
        if !(v.norm() > self.floor) {
            return Err(Error::BelowFloor {
                magnitude: v.norm(),
                floor: self.floor,
            });
        }
        Ok(self.psi.gradient(x, default_step(x))?.map(|g| (g / v).conj()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::lookup;
    use crate::spectral::{decompose, linearize};
    use nalgebra::DMatrix;

    fn vdp() -> (SystemSpec, SpectralData) {
        let s = lookup("vdp-reverse", &BTreeMap::new()).unwrap();
        let sp = linearize(&s).unwrap();
        (s, sp)
    }

    fn diag_linear() -> (SystemSpec, SpectralData) {
        let s = lookup("linear", &BTreeMap::new()).unwrap();
        let sp = linearize(&s).unwrap();
        (s, sp)
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn schedule_horizons() {
        let h = ConvergenceSchedule::default().horizons();
        assert_eq!(h[0], 4.0);
        assert_eq!(h[1], 6.0);
        assert_eq!(*h.last().unwrap(), 64.0);
        assert!(h.windows(2).all(|w| w[1] > w[0]));
        let bad = ConvergenceSchedule {
            growth: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn linear_estimate_is_projection() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, -0.3, -1.5]);
        let s = SystemSpec::linear("l", a.clone()).unwrap();
        let sp = decompose(&a).unwrap();
        let x = [0.7, -0.4];
        for i in 0..2 {
            let e = estimate_eigenfunction(&s, &sp, i, &x, &Default::default(), Tolerance::default()).unwrap();
            assert_eq!(e.status, PointStatus::Converged);
            let exact = sp.project(i, &x);
            assert!(
                (e.value - exact).norm() / exact.norm() < 1e-8,
                "{:?} vs {exact}",
                e.value
            );
            assert!((e.history[0].1 - exact).norm() / exact.norm() < 1e-8);
        }
    }

    #[test]
    fn equilibrium_is_zero() {
        let (s, sp) = vdp();
        for i in 0..2 {
            let e = estimate_eigenfunction(&s, &sp, i, &[0.0, 0.0], &Default::default(), Tolerance::default()).unwrap();
            assert_eq!(e.status, PointStatus::Converged);
            assert_eq!(e.value, c(0.0, 0.0));
        }
    }

    #[test]
    fn resonant_case_grows_linearly() {
        let s = lookup("resonant-quadratic", &BTreeMap::new()).unwrap();
        let sp = linearize(&s).unwrap();
        assert_eq!(sp.eigenvalues[1], c(-2.0, 0.0));
        let e = estimate_eigenfunction(&s, &sp, 1, &[1.0, 1.0], &Default::default(), Tolerance::default()).unwrap();
        assert_eq!(e.status, PointStatus::NonConvergent);
        assert_eq!(e.converged_t, 64.0);
        for (t, v) in &e.history {
            assert!((v - c(1.0 + t, 0.0)).norm() / (1.0 + t) < 1e-5, "T = {t}: {v}");
        }
    }

    #[test]
    fn outside_region_of_attraction_diverges() {
        let (s, sp) = vdp();
        let e = estimate_eigenfunction(&s, &sp, 0, &[5.0, 5.0], &Default::default(), Tolerance::default()).unwrap();
        assert_eq!(e.status, PointStatus::DivergedTrajectory);
        assert!(e.value.re.is_nan());
    }

    #[test]
    fn conjugate_pair_values_are_conjugate() {
        let (s, sp) = vdp();
        let grid = GridSpec::cube(2, -0.5, 0.5, 0.25).unwrap();
        let sched = ConvergenceSchedule::default();
        let a = estimate_field(&s, &sp, 0, &grid, &sched, Tolerance::default()).unwrap();
        let b = estimate_field(&s, &sp, 1, &grid, &sched, Tolerance::default()).unwrap();
        assert!(a.all_converged());
        for (u, v) in a.values().iter().zip(b.values()) {
            assert_eq!(*u, v.conj());
        }
    }

    #[test]
    fn cocycle_consistency() {
        let (s, sp) = vdp();
        let x = [0.4, -0.3];
        let (big_t, t) = (20.0, 3.0);
        let tol = Tolerance::default();
        let direct = estimate_at_horizons(&s, &sp, 0, &x, &[big_t], tol).unwrap()[0];
        let moved = flow(&s, &x, t, tol).unwrap();
        let y = moved.final_state().unwrap();
        let later = estimate_at_horizons(&s, &sp, 0, y.as_slice(), &[big_t - t], tol).unwrap()[0];
        let lambda = sp.eigenvalues[0];
        let shifted = (-lambda * t).exp() * later;
        assert!(
            (direct - shifted).norm() / direct.norm() < 1e-6,
            "{direct} vs {shifted}"
        );
    }

    #[test]
    fn path_integral_matches_estimator() {
        let (s, sp) = vdp();
        let x = [0.5, 0.5];
        let tol = Tolerance::default();
        let est = estimate_eigenfunction(&s, &sp, 0, &x, &Default::default(), tol).unwrap();
        let pi = path_integral_eigenfunction(&s, &sp, 0, &x, 10.0, 1e-10, tol).unwrap();
        assert!((pi - est.value).norm() / est.value.norm() < 1e-3);
        let same = path_integral_eigenfunction(&s, &sp, 0, &x, est.converged_t, 1e-10, tol).unwrap();
        assert!((same - est.value).norm() / est.value.norm() < 1e-6);
        assert_eq!(
            path_integral_eigenfunction(&s, &sp, 0, &[0.0, 0.0], 10.0, 1e-10, tol).unwrap(),
            c(0.0, 0.0)
        );

        let (l, lsp) = diag_linear();
        let v = path_integral_eigenfunction(&l, &lsp, 1, &[0.3, 0.9], 5.0, 1e-10, tol).unwrap();
        assert!((v - c(0.9, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn gradient_routes_agree() {
        let (s, sp) = vdp();
        let psi = PrincipalEigenfunction::new(&s, &sp, 0, 40.0, Tolerance::default()).unwrap();
        let check = cross_check_gradient(&psi, &[0.5, 0.5], 1e-4).unwrap();
        assert!(check.relative_difference < 1e-4, "{}", check.relative_difference);

        let sq = crate::geometry::FnScalar(|x: &[f64]| c(x[0] * x[0], 0.0));
        let g = gradient_field(&sq, &[3.0, 0.0], 1e-4).unwrap();
        assert!((g[0] - c(6.0, 0.0)).norm() < 1e-8 && g[1].norm() < 1e-12);

        let (l, lsp) = diag_linear();
        let psi = PrincipalEigenfunction::new(&l, &lsp, 0, 4.0, Tolerance::default()).unwrap();
        let g = psi.sensitivity_gradient(&[0.2, -0.7]).unwrap();
        assert!((g[0] - c(1.0, 0.0)).norm() < 1e-8 && g[1].norm() < 1e-8);
    }

    #[test]
    fn eigenfunction_property_and_products() {
        let (s, sp) = vdp();
        let tol = Tolerance::default();
        let pts = crate::sampling::box_points(&[-0.6, -0.6], &[0.6, 0.6], 8, 3).unwrap();
        let psi = PrincipalEigenfunction::new(&s, &sp, 0, 40.0, tol).unwrap();
        let l = sp.eigenvalues[0];
        assert!(verify_eigenfunction_property(&psi, l, &s, &pts, 1.0, 1e-12, tol, 1e-4).pass);

        let (sq, mu) = product_eigenfunction(psi.clone(), l, psi.clone(), l);
        assert!(verify_eigenfunction_property(&sq, mu, &s, &pts, 1.0, 1e-12, tol, 1e-4).pass);
        let (abs2, mu) = product_eigenfunction(psi.clone(), l, Conjugate(psi.clone()), l.conj());
        assert!((mu - c(2.0 * l.re, 0.0)).norm() < 1e-15);
        assert!(verify_eigenfunction_property(&abs2, mu, &s, &pts, 1.0, 1e-12, tol, 1e-4).pass);

        let (same, mu) = product_eigenfunction(psi.clone(), l, Constant(c(1.0, 0.0)), c(0.0, 0.0));
        assert_eq!(mu, l);
        assert_eq!(same.value(&[0.3, 0.1]).unwrap(), psi.value(&[0.3, 0.1]).unwrap());

        let one = Constant(c(1.0, 0.0));
        let r = verify_eigenfunction_property(&one, c(0.0, 0.0), &s, &pts, 1.0, 1e-12, tol, 0.0);
        assert!(r.pass && r.max_residual == 0.0);

        let wrong = verify_eigenfunction_property(&psi, l.conj(), &s, &pts, 1.0, 1e-12, tol, 1e-2);
        assert!(!wrong.pass);
    }

    #[test]
    fn linear_reconstruction_and_frame() {
        let (l, lsp) = diag_linear();
        let tol = Tolerance::default();
        let psis: Vec<Arc<dyn ScalarField>> = (0..2)
            .map(|i| Arc::new(PrincipalEigenfunction::new(&l, &lsp, i, 4.0, tol).unwrap()) as Arc<dyn ScalarField>)
            .collect();
        let x = [1.0, 1.0];
        let r = reconstruct_dynamics(&psis, &lsp.eigenvalues, &x).unwrap();
        assert!((r.field[0] + 1.0).abs() < 1e-8 && (r.field[1] + 2.0).abs() < 1e-8);
        assert!(r.imag_residual < 1e-12);

        let f = symmetry_frame(&psis, &x, &[0.0, 0.0]).unwrap();
        let expected = CMatrix::identity(2, 2);
        assert!((&f.frame - &expected).norm() < 1e-8);
        assert!((&f.linearizing - &expected).norm() < 1e-8);
        assert!((dual_frame(&f.frame).unwrap() - &f.linearizing).norm() < 1e-8);

        let y = [0.5, -2.0];
        let f = symmetry_frame(&psis, &y, &[0.0, 0.0]).unwrap();
        assert!((f.frame[(0, 0)] - c(0.5, 0.0)).norm() < 1e-8);
        assert!((f.frame[(1, 1)] - c(-2.0, 0.0)).norm() < 1e-8);
        assert!(f.frame[(0, 1)].norm() < 1e-8);

        assert!(matches!(
            symmetry_frame(&psis, &[0.0, 1.0], &[1e-6, 1e-6]),
            Err(Error::BelowFloor { .. })
        ));
    }
}
