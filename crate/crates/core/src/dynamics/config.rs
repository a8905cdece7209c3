use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{FieldFn, JacobianFn, SystemSpec};
use crate::error::{Error, Result};
use crate::expr::Expr;

/// User-defined system, read from TOML:
///
/// ```toml
/// name = "damped-duffing"
/// dim = 2
/// equilibrium = [0.0, 0.0]
/// rhs = ["x2", "-x1 - c*x2 - x1^3"]
///
/// [params]
/// c = 0.3
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub name: String,
    pub dim: usize,
    pub equilibrium: Vec<f64>,
    pub rhs: Vec<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl SystemConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// Compiles the expressions; parameter `overrides` win over file values.
    pub fn build(&self, overrides: &BTreeMap<String, f64>) -> Result<SystemSpec> {
        let n = self.dim;
        if self.rhs.len() != n {
            return Err(Error::Config(format!(
                "`rhs` has {} expressions, expected dim = {n}",
                self.rhs.len()
            )));
        }
        let mut params = self.params.clone();
        for (k, v) in overrides {
            if !params.contains_key(k) {
                return Err(Error::InvalidInput(format!(
                    "system `{}` has no parameter `{k}`",
                    self.name
                )));
            }
            params.insert(k.clone(), *v);
        }
        let exprs = self
            .rhs
            .iter()
            .enumerate()
            .map(|(i, src)| Expr::parse(src, n, &params).map_err(|e| Error::Config(format!("rhs[{}]: {e}", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        // column-major: entry (i, j) at i + j n
        let mut partials = Vec::with_capacity(n * n);
        for j in 0..n {
            for e in &exprs {
                partials.push(e.derivative(j));
            }
        }
        let exprs = Arc::new(exprs);
        let partials = Arc::new(partials);
        let field: FieldFn = Arc::new(move |x, out| {
            for (o, e) in out.iter_mut().zip(exprs.iter()) {
                *o = e.eval(x);
            }
        });
        let jac: JacobianFn = Arc::new(move |x, out| {
            for (o, e) in out.iter_mut().zip(partials.iter()) {
                *o = e.eval(x);
            }
        });
        let sys =
            SystemSpec::new(self.name.clone(), n, self.equilibrium.clone(), field, Some(jac))?.with_params(params);
        sys.validate()?;
        Ok(sys)
    }
}
