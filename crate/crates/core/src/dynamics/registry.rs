use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;

use super::{FieldFn, JacobianFn, SystemSpec};
use crate::error::{Error, Result};

/// A built-in system with its default parameters.
#[derive(Debug, Clone)]
pub struct RegistryEntry {
    pub name: &'static str,
    pub description: &'static str,
    pub defaults: BTreeMap<String, f64>,
}

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

pub fn registry() -> Vec<RegistryEntry> {
    vec![
        RegistryEntry {
            name: "vdp-reverse",
            description: "reverse-time van der Pol: x1' = -x2, x2' = x1 - mu (1 - x1^2) x2",
            defaults: params(&[("mu", 0.5)]),
        },
        RegistryEntry {
            name: "vdp",
            description: "forward-time van der Pol (unstable origin): x1' = x2, x2' = -x1 + mu (1 - x1^2) x2",
            defaults: params(&[("mu", 0.5)]),
        },
        RegistryEntry {
            name: "linear",
            description: "x' = A x with A given row-major by parameters aIJ (n inferred from the count)",
            defaults: params(&[("a11", -1.0), ("a12", 0.0), ("a21", 0.0), ("a22", -2.0)]),
        },
        RegistryEntry {
            name: "resonant-quadratic",
            description: "x1' = -x1, x2' = -2 x2 + x1^2 (eigenvalues -1, -2 in resonance)",
            defaults: BTreeMap::new(),
        },
    ]
}

/// Builds a registry system, overriding default parameters with `overrides`.
pub fn lookup(name: &str, overrides: &BTreeMap<String, f64>) -> Result<SystemSpec> {
    let entry = registry()
        .into_iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::UnknownSystem(name.to_string()))?;
    let mut p = entry.defaults.clone();
    if name == "linear" && !overrides.is_empty() {
        // A user matrix replaces the default one entirely.
        p.clear();
    }
    for (k, v) in overrides {
        if name != "linear" && !p.contains_key(k) {
            return Err(Error::InvalidInput(format!("system `{name}` has no parameter `{k}`")));
        }
        p.insert(k.clone(), *v);
    }
    let sys = match name {
        "vdp-reverse" => van_der_pol(p["mu"], -1.0)?,
        "vdp" => van_der_pol(p["mu"], 1.0)?,
        "linear" => SystemSpec::linear("linear", matrix_from_params(&p)?)?,
        "resonant-quadratic" => resonant_quadratic()?,
        _ => unreachable!(),
    };
    let mut sys = sys.with_params(p);
    sys.name = name.to_string();
    Ok(sys)
}

/// `sign = -1` gives the reverse-time oscillator.
fn van_der_pol(mu: f64, sign: f64) -> Result<SystemSpec> {
    let field: FieldFn = Arc::new(move |x, out| {
        out[0] = sign * x[1];
        out[1] = sign * (-x[0] + mu * (1.0 - x[0] * x[0]) * x[1]);
    });
    let jac: JacobianFn = Arc::new(move |x, out| {
        // column-major
        out[0] = 0.0;
        out[1] = sign * (-1.0 - 2.0 * mu * x[0] * x[1]);
        out[2] = sign;
        out[3] = sign * mu * (1.0 - x[0] * x[0]);
    });
    SystemSpec::new("vdp", 2, vec![0.0, 0.0], field, Some(jac))
}

fn resonant_quadratic() -> Result<SystemSpec> {
    let field: FieldFn = Arc::new(|x, out| {
        out[0] = -x[0];
        out[1] = -2.0 * x[1] + x[0] * x[0];
    });
    let jac: JacobianFn = Arc::new(|x, out| {
        out[0] = -1.0;
        out[1] = 2.0 * x[0];
        out[2] = 0.0;
        out[3] = -2.0;
    });
    SystemSpec::new("resonant-quadratic", 2, vec![0.0, 0.0], field, Some(jac))
}

fn matrix_from_params(p: &BTreeMap<String, f64>) -> Result<DMatrix<f64>> {
    let n = (p.len() as f64).sqrt().round() as usize;
    if n == 0 || n * n != p.len() || n > 9 {
        return Err(Error::InvalidInput(format!(
            "linear system needs n*n parameters a11..ann (n <= 9), got {}",
            p.len()
        )));
    }
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let key = format!("a{}{}", i + 1, j + 1);
            a[(i, j)] = *p
                .get(&key)
                .ok_or_else(|| Error::InvalidInput(format!("missing linear system entry `{key}`")))?;
        }
    }
    Ok(a)
}
