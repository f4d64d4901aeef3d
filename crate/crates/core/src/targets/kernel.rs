use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LgmError, Result};

/// Covariance function family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelKind {
    /// `σ_x² exp(−‖s−s′‖² / 2ℓ²)`.
    SquaredExponential { variance: f64, lengthscale2: f64 },
    /// `σ_x² exp(−‖s−s′‖ / (divisor·β))` over grid-cell indices; the divisor
    /// is the grid side length.
    CoxExponential {
        variance: f64,
        beta: f64,
        scale_divisor: f64,
    },
}

impl KernelKind {
    pub fn variance(&self) -> f64 {
        match *self {
            KernelKind::SquaredExponential { variance, .. } => variance,
            KernelKind::CoxExponential { variance, .. } => variance,
        }
    }

    fn validate(&self) -> Result<()> {
        let check = |name: &'static str, value: f64| {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(LgmError::InvalidHyperparameter { name, value })
            }
        };
        match *self {
            KernelKind::SquaredExponential {
                variance,
                lengthscale2,
            } => {
                check("variance", variance)?;
                check("lengthscale2", lengthscale2)
            }
            KernelKind::CoxExponential {
                variance,
                beta,
                scale_divisor,
            } => {
                check("variance", variance)?;
                check("beta", beta)?;
                check("scale_divisor", scale_divisor)
            }
        }
    }

    fn eval(&self, sq_dist: f64) -> f64 {
        match *self {
            KernelKind::SquaredExponential {
                variance,
                lengthscale2,
            } => variance * (-sq_dist / (2.0 * lengthscale2)).exp(),
            KernelKind::CoxExponential {
                variance,
                beta,
                scale_divisor,
            } => variance * (-sq_dist.sqrt() / (scale_divisor * beta)).exp(),
        }
    }
}

/// A kernel together with the input locations it is evaluated on.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub inputs: Vec<Vec<f64>>,
}

/// Assemble the covariance matrix. The upper triangle is computed and
/// mirrored, so the result is exactly symmetric.
pub fn build_kernel(spec: &KernelSpec) -> Result<DMatrix<f64>> {
    spec.kind.validate()?;
    let n = spec.inputs.len();
    let d = spec.inputs.first().map_or(0, Vec::len);
    for s in &spec.inputs {
        if s.len() != d {
            return Err(LgmError::DimensionMismatch {
                expected: d,
                found: s.len(),
            });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(LgmError::NonFinite);
        }
    }
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let sq: f64 = spec.inputs[i]
                .iter()
                .zip(&spec.inputs[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let v = spec.kind.eval(sq);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    Ok(c)
}

/// Row-major cell indices `(i, j)` of a `g × g` grid, 1-based.
pub fn grid_inputs(g: usize) -> Vec<Vec<f64>> {
    (0..g)
        .flat_map(|i| (0..g).map(move |j| vec![(i + 1) as f64, (j + 1) as f64]))
        .collect()
}

/// Rescale every column to zero mean and unit variance in place. Constant
/// columns are centered only.
pub fn standardize_columns(rows: &mut [Vec<f64>]) {
    let Some(d) = rows.first().map(Vec::len) else {
        return;
    };
    let n = rows.len() as f64;
    for k in 0..d {
        let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for r in rows.iter_mut() {
            r[k] -= mean;
            if sd > 0.0 {
                r[k] /= sd;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn squared_exponential_entries() {
        let spec = KernelSpec {
            kind: KernelKind::SquaredExponential {
                variance: 1.0,
                lengthscale2: 1.0,
            },
            inputs: vec![vec![0.0, 0.0], vec![1.0, 1.0]],
        };
        let c = build_kernel(&spec).unwrap();
        assert_eq!(c[(0, 0)], 1.0);
        assert_abs_diff_eq!(c[(0, 1)], (-1.0f64).exp(), epsilon = 1e-15);
        assert_eq!(c[(0, 1)], c[(1, 0)]);
    }

    #[test]
    fn cox_entry_matches_hand_value() {
        let spec = KernelSpec {
            kind: KernelKind::CoxExponential {
                variance: 1.91,
                beta: 1.0 / 33.0,
                scale_divisor: 64.0,
            },
            inputs: vec![vec![1.0, 1.0], vec![1.0, 2.0]],
        };
        let c = build_kernel(&spec).unwrap();
        assert_abs_diff_eq!(c[(0, 1)], 1.91 * (-33.0f64 / 64.0).exp(), epsilon = 1e-14);
        assert_eq!(c[(1, 1)], 1.91);
    }

    #[test]
    fn grid_kernel_is_exactly_symmetric_with_variance_diagonal() {
        let spec = KernelSpec {
            kind: KernelKind::CoxExponential {
                variance: 2.5,
                beta: 0.1,
                scale_divisor: 4.0,
            },
            inputs: grid_inputs(4),
        };
        let c = build_kernel(&spec).unwrap();
        assert_eq!(c, c.transpose());
        assert!(c.diagonal().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let spec = KernelSpec {
            kind: KernelKind::SquaredExponential {
                variance: 0.0,
                lengthscale2: 1.0,
            },
            inputs: vec![vec![0.0]],
        };
        assert!(build_kernel(&spec).is_err());
    }

    #[test]
    fn standardize() {
        let mut rows = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        standardize_columns(&mut rows);
        assert_eq!(rows, vec![vec![-1.0, 0.0], vec![1.0, 0.0]]);
    }
}
