use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// SVM kernel. A `gamma` of `None` resolves to `1 / dim` at training time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    Linear,
    Polynomial {
        degree: u32,
        #[serde(default)]
        gamma: Option<f64>,
        #[serde(default = "one")]
        coef0: f64,
    },
    Rbf {
        #[serde(default)]
        gamma: Option<f64>,
    },
}

fn one() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn polynomial(degree: u32) -> Self {
        KernelSpec::Polynomial {
            degree,
            gamma: None,
            coef0: 1.0,
        }
    }

    pub fn rbf() -> Self {
        KernelSpec::Rbf { gamma: None }
    }

    /// Fill in default gamma for `dim` and validate.
    pub fn resolve(&self, dim: usize) -> Result<KernelSpec> {
        let default_gamma = 1.0 / dim.max(1) as f64;
        let check = |g: f64| {
            if g > 0.0 && g.is_finite() {
                Ok(g)
            } else {
                Err(Error::config(format!("kernel gamma must be positive, got {g}")))
            }
        };
        Ok(match *self {
            KernelSpec::Linear => KernelSpec::Linear,
            KernelSpec::Polynomial { degree, gamma, coef0 } => {
                if degree < 1 {
                    return Err(Error::config("polynomial degree must be at least 1"));
                }
                KernelSpec::Polynomial {
                    degree,
                    gamma: Some(check(gamma.unwrap_or(default_gamma))?),
                    coef0,
                }
            }
            KernelSpec::Rbf { gamma } => KernelSpec::Rbf {
                gamma: Some(check(gamma.unwrap_or(default_gamma))?),
            },
        })
    }

    /// Kernel value. Expects a resolved spec.
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(a, b),
            KernelSpec::Polynomial { degree, gamma, coef0 } => {
                (gamma.unwrap_or(1.0) * dot(a, b) + coef0).powi(degree as i32)
            }
            KernelSpec::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma.unwrap_or(1.0) * d2).exp()
            }
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            KernelSpec::Linear => "linear".into(),
            KernelSpec::Polynomial { degree, .. } => format!("poly{degree}"),
            KernelSpec::Rbf { .. } => "rbf".into(),
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense symmetric Gram matrix over `rows`, row-major.
pub fn kernel_matrix(kernel: &KernelSpec, rows: &[&[f64]]) -> Vec<f64> {
    let n = rows.len();
    let upper: Vec<Vec<f64>> = par::map_range(n, |i| (i..n).map(|j| kernel.eval(rows[i], rows[j])).collect());
    let mut k = vec![0.0; n * n];
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + off;
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}
