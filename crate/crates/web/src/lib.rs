use std::collections::BTreeMap;

use koopman::dynamics::{lookup, GridSpec, SystemSpec, Tolerance};
use koopman::koopman::{estimate_eigenfunction, estimate_field, ConvergenceSchedule, PointStatus};
use koopman::spectral::{check_resonance, linearize, SpectralData};
use num_complex::Complex64;
use wasm_bindgen::prelude::*;

fn setup(mu: f64) -> koopman::Result<(SystemSpec, SpectralData)> {
    let sys = lookup("vdp-reverse", &BTreeMap::from([("mu".to_string(), mu)]))?;
    let sp = linearize(&sys)?;
    Ok((sys, sp))
}

fn schedule(t_max: f64) -> ConvergenceSchedule {
    ConvergenceSchedule {
        t_max,
        ..ConvergenceSchedule::default()
    }
}

/// Samples ψ_1 on an `n × n` grid over `[lo, hi]²`, x2 varying fastest.
///
/// Returns `[re, im, converged]` per point, `converged` being 1 or 0.
pub fn field_values(mu: f64, lo: f64, hi: f64, n: usize, t_max: f64) -> koopman::Result<Vec<f64>> {
    let (sys, sp) = setup(mu)?;
    let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 1.0 };
    let grid = GridSpec::new(vec![lo, lo], vec![hi, hi], vec![step, step])?;
    let field = estimate_field(&sys, &sp, 0, &grid, &schedule(t_max), Tolerance::default())?;
    let mut out = Vec::with_capacity(3 * field.estimates.len());
    for e in &field.estimates {
        let ok = if e.status == PointStatus::Converged { 1.0 } else { 0.0 };
        out.extend([e.value.re, e.value.im, ok]);
    }
    Ok(out)
}

/// `[T, re, im, rel_change]` for every horizon the estimator reached at `(x1, x2)`.
pub fn convergence_values(mu: f64, x1: f64, x2: f64, t_max: f64) -> koopman::Result<Vec<f64>> {
    let (sys, sp) = setup(mu)?;
    let e = estimate_eigenfunction(&sys, &sp, 0, &[x1, x2], &schedule(t_max), Tolerance::default())?;
    let mut out = Vec::with_capacity(4 * e.history.len());
    let mut prev: Option<Complex64> = None;
    for &(t, v) in &e.history {
        let rel = prev.map_or(f64::NAN, |p| (v - p).norm() / p.norm().max(1e-12));
        out.extend([t, v.re, v.im, rel]);
        prev = Some(v);
    }
    Ok(out)
}

/// Eigenvalues and resonance report as JSON.
pub fn spectrum_json(mu: f64, degree: u32) -> koopman::Result<String> {
    let (_, sp) = setup(mu)?;
    let report = check_resonance(&sp, degree)?;
    let value = serde_json::json!({
        "eigenvalues": sp.eigenvalues.iter().map(|l| [l.re, l.im]).collect::<Vec<_>>(),
        "hurwitz": sp.is_hurwitz(),
        "resonance": report,
    });
    Ok(value.to_string())
}

fn js(e: koopman::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn field(mu: f64, lo: f64, hi: f64, n: usize, t_max: f64) -> Result<Vec<f64>, JsError> {
    field_values(mu, lo, hi, n, t_max).map_err(js)
}

#[wasm_bindgen]
pub fn convergence(mu: f64, x1: f64, x2: f64, t_max: f64) -> Result<Vec<f64>, JsError> {
    convergence_values(mu, x1, x2, t_max).map_err(js)
}

#[wasm_bindgen]
pub fn spectrum(mu: f64, degree: u32) -> Result<String, JsError> {
    spectrum_json(mu, degree).map_err(js)
}
