use std::f64::consts::PI;

use nalgebra::DVector;

use super::TargetModel;
use crate::error::{LgmError, Result};

/// Gaussian observations `y ~ N(x, σ² I)`.
#[derive(Debug, Clone)]
pub struct RegressionTarget {
    y: DVector<f64>,
    sigma2: f64,
}

pub fn regression_target(y: DVector<f64>, sigma2: f64) -> Result<RegressionTarget> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(LgmError::InvalidHyperparameter {
            name: "sigma2",
            value: sigma2,
        });
    }
    Ok(RegressionTarget { y, sigma2 })
}

impl RegressionTarget {
    pub fn observations(&self) -> &DVector<f64> {
        &self.y
    }
}

impl TargetModel for RegressionTarget {
    fn dim(&self) -> usize {
        self.y.len()
    }

    fn evaluate(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let n = self.y.len() as f64;
        let resid = &self.y - x;
        let f =
            -0.5 * n * (2.0 * PI * self.sigma2).ln() - resid.norm_squared() / (2.0 * self.sigma2);
        (f, resid / self.sigma2)
    }

    fn noise_variance(&self) -> Option<f64> {
        Some(self.sigma2)
    }
}

/// `log σ(x)` without overflow.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Bernoulli observations with logistic link.
#[derive(Debug, Clone)]
pub struct LogisticTarget {
    labels: Vec<bool>,
}

pub fn logistic_target(labels: &[u8]) -> Result<LogisticTarget> {
    let labels = labels
        .iter()
        .map(|&y| match y {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(LgmError::InvalidData(format!(
                "binary label {other} not in {{0,1}}"
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LogisticTarget { labels })
}

impl LogisticTarget {
    pub fn labels(&self) -> &[bool] {
        &self.labels
    }
}

impl TargetModel for LogisticTarget {
    fn dim(&self) -> usize {
        self.labels.len()
    }

    fn evaluate(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let mut f = 0.0;
        let mut grad = DVector::zeros(x.len());
        for (i, (&xi, &yi)) in x.iter().zip(&self.labels).enumerate() {
            if yi {
                f += log_sigmoid(xi);
                grad[i] = 1.0 - sigmoid(xi);
            } else {
                f += log_sigmoid(-xi);
                grad[i] = -sigmoid(xi);
            }
        }
        (f, grad)
    }
}

/// Poisson counts on a `g × g` grid with intensity `m exp(x + v)`.
#[derive(Debug, Clone)]
pub struct CoxTarget {
    counts: Vec<f64>,
    side: usize,
    cell_area: f64,
    offset: f64,
}

/// `counts` are row-major over a square grid.
pub fn cox_target(counts: &[i64], cell_area: f64, offset: f64) -> Result<CoxTarget> {
    let side = (counts.len() as f64).sqrt().round() as usize;
    if side * side != counts.len() {
        return Err(LgmError::InvalidData(format!(
            "{} counts do not form a square grid",
            counts.len()
        )));
    }
    if let Some(c) = counts.iter().find(|&&c| c < 0) {
        return Err(LgmError::InvalidData(format!("negative count {c}")));
    }
    if !(cell_area > 0.0) {
        return Err(LgmError::InvalidHyperparameter {
            name: "cell_area",
            value: cell_area,
        });
    }
    Ok(CoxTarget {
        counts: counts.iter().map(|&c| c as f64).collect(),
        side,
        cell_area,
        offset,
    })
}

impl CoxTarget {
    pub fn side(&self) -> usize {
        self.side
    }
    pub fn cell_area(&self) -> f64 {
        self.cell_area
    }
    pub fn offset(&self) -> f64 {
        self.offset
    }
}

impl TargetModel for CoxTarget {
    fn dim(&self) -> usize {
        self.counts.len()
    }

    fn evaluate(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let mut f = 0.0;
        let mut grad = DVector::zeros(x.len());
        for (i, (&xi, &yi)) in x.iter().zip(&self.counts).enumerate() {
            let eta = xi + self.offset;
            let rate = self.cell_area * eta.exp();
            f += yi * eta - rate;
            grad[i] = yi - rate;
        }
        (f, grad)
    }
}

/// Multinomial-logistic likelihood over a class-major stacked latent vector:
/// entries `[k*n .. (k+1)*n)` hold the field of class `k`.
#[derive(Debug, Clone)]
pub struct SoftmaxTarget {
    labels: Vec<usize>,
    classes: usize,
}

/// `labels` are 0-based class indices.
pub fn softmax_target(labels: &[usize], classes: usize) -> Result<SoftmaxTarget> {
    if classes < 2 {
        return Err(LgmError::InvalidData(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(LgmError::InvalidData(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(SoftmaxTarget {
        labels: labels.to_vec(),
        classes,
    })
}

impl SoftmaxTarget {
    pub fn classes(&self) -> usize {
        self.classes
    }
    pub fn examples(&self) -> usize {
        self.labels.len()
    }
}

impl TargetModel for SoftmaxTarget {
    fn dim(&self) -> usize {
        self.labels.len() * self.classes
    }

    fn evaluate(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let n = self.labels.len();
        let mut f = 0.0;
        let mut grad = DVector::zeros(x.len());
        for (i, &yi) in self.labels.iter().enumerate() {
            let max = (0..self.classes)
                .map(|k| x[k * n + i])
                .fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = (0..self.classes).map(|k| (x[k * n + i] - max).exp()).sum();
            let lse = max + sum.ln();
            f += x[yi * n + i] - lse;
            for k in 0..self.classes {
                let p = (x[k * n + i] - lse).exp();
                grad[k * n + i] = if k == yi { 1.0 - p } else { -p };
            }
        }
        (f, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::finite_difference_gradient;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
        DVector::from_fn(n, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
    }

    fn assert_gradient(target: &dyn TargetModel, x: &DVector<f64>, tol: f64) {
        let (_, g) = target.evaluate(x);
        let fd = finite_difference_gradient(target, x, 1e-5);
        for i in 0..x.len() {
            let scale = g[i].abs().max(fd[i].abs()).max(1.0);
            assert!(
                (g[i] - fd[i]).abs() <= tol * scale,
                "coordinate {i}: analytic {} vs fd {}",
                g[i],
                fd[i]
            );
        }
    }

    #[test]
    fn regression_examples() {
        let y = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        let t = regression_target(y.clone(), 0.5).unwrap();
        let (f, g) = t.evaluate(&y);
        assert_abs_diff_eq!(f, -1.5 * (2.0 * PI * 0.5).ln(), epsilon = 1e-14);
        assert_eq!(g.amax(), 0.0);

        let t = regression_target(DVector::from_vec(vec![0.0]), 1.0).unwrap();
        let (f, g) = t.evaluate(&DVector::from_vec(vec![1.0]));
        assert_abs_diff_eq!(f, -0.5 * (2.0 * PI).ln() - 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(g[0], -1.0, epsilon = 1e-15);
        assert!(regression_target(y, 0.0).is_err());
    }

    #[test]
    fn regression_gradient_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y = random_vec(&mut rng, 20, 2.0);
        let t = regression_target(y, 0.7).unwrap();
        for _ in 0..5 {
            assert_gradient(&t, &random_vec(&mut rng, 20, 3.0), 1e-6);
        }
    }

    #[test]
    fn logistic_examples() {
        let t = logistic_target(&[1, 0, 1]).unwrap();
        let (f, g) = t.evaluate(&DVector::zeros(3));
        assert_abs_diff_eq!(f, 3.0 * 0.5f64.ln(), epsilon = 1e-14);
        assert_eq!(g.as_slice(), &[0.5, -0.5, 0.5]);

        let t = logistic_target(&[1]).unwrap();
        let (f, g) = t.evaluate(&DVector::from_vec(vec![40.0]));
        // log σ(40) = -log1p(e^-40) ≈ -4.248e-18
        assert!(f.is_finite() && f <= 0.0 && f > -1e-17);
        assert!(g[0].abs() < 1e-17);
        let t = logistic_target(&[0]).unwrap();
        let (f, _) = t.evaluate(&DVector::from_vec(vec![800.0]));
        assert_abs_diff_eq!(f, -800.0, epsilon = 1e-9);

        assert!(logistic_target(&[2]).is_err());
    }

    #[test]
    fn logistic_gradient_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let labels: Vec<u8> = (0..20).map(|_| rng.random_range(0..2)).collect();
        let t = logistic_target(&labels).unwrap();
        for _ in 0..5 {
            assert_gradient(&t, &random_vec(&mut rng, 20, 4.0), 1e-5);
        }
    }

    #[test]
    fn cox_examples() {
        let v = 0.8;
        let t = cox_target(&[0; 9], 1.0, v).unwrap();
        let (f, g) = t.evaluate(&DVector::from_element(9, -v));
        assert_abs_diff_eq!(f, -9.0, epsilon = 1e-14);
        assert!(g.iter().all(|&gi| (gi + 1.0).abs() < 1e-15));
        assert!(cox_target(&[1, -1, 0, 0], 1.0, 0.0).is_err());
        assert!(cox_target(&[1, 1, 0], 1.0, 0.0).is_err());
    }

    #[test]
    fn cox_gradient_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let counts: Vec<i64> = (0..16).map(|_| rng.random_range(0..5)).collect();
        let t = cox_target(&counts, 1.0 / 16.0, 126f64.ln() - 1.91 / 2.0).unwrap();
        for _ in 0..5 {
            assert_gradient(&t, &random_vec(&mut rng, 16, 1.5), 1e-5);
        }
    }

    #[test]
    fn softmax_uniform_point() {
        let t = softmax_target(&[0, 2, 1, 2], 3).unwrap();
        let (f, g) = t.evaluate(&DVector::zeros(12));
        assert_abs_diff_eq!(f, -4.0 * 3f64.ln(), epsilon = 1e-13);
        for k in 0..3 {
            for (i, &y) in [0usize, 2, 1, 2].iter().enumerate() {
                let expected = if y == k { 1.0 - 1.0 / 3.0 } else { -1.0 / 3.0 };
                assert_abs_diff_eq!(g[k * 4 + i], expected, epsilon = 1e-14);
            }
        }
        assert!(softmax_target(&[3], 3).is_err());
    }

    #[test]
    fn softmax_two_classes_reduces_to_logistic() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 15;
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        // class 0 plays the role of the positive logistic label
        let binary: Vec<u8> = labels.iter().map(|&y| u8::from(y == 0)).collect();
        let soft = softmax_target(&labels, 2).unwrap();
        let logi = logistic_target(&binary).unwrap();
        for _ in 0..10 {
            let x = random_vec(&mut rng, 2 * n, 3.0);
            let diff = DVector::from_fn(n, |i, _| x[i] - x[n + i]);
            assert_abs_diff_eq!(
                soft.log_likelihood(&x),
                logi.log_likelihood(&diff),
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn softmax_gradient_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let labels: Vec<usize> = (0..10).map(|_| rng.random_range(0..3)).collect();
        let t = softmax_target(&labels, 3).unwrap();
        for _ in 0..5 {
            assert_gradient(&t, &random_vec(&mut rng, 30, 3.0), 1e-5);
        }
    }

    #[test]
    fn summation_order_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let n = 200;
        let y = random_vec(&mut rng, n, 2.0);
        let x = random_vec(&mut rng, n, 2.0);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.reverse();
        let yp = DVector::from_fn(n, |i, _| y[perm[i]]);
        let xp = DVector::from_fn(n, |i, _| x[perm[i]]);
        let a = regression_target(y, 0.3).unwrap().log_likelihood(&x);
        let b = regression_target(yp, 0.3).unwrap().log_likelihood(&xp);
        assert!(((a - b) / a).abs() < 1e-8);
    }
}
