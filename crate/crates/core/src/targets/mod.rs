//! Likelihood models `f(x)` with gradients, and prior covariance kernels.

mod kernel;
mod models;

pub use kernel::{build_kernel, grid_inputs, standardize_columns, KernelKind, KernelSpec};
pub use models::{
    cox_target, logistic_target, regression_target, softmax_target, CoxTarget, LogisticTarget,
    RegressionTarget, SoftmaxTarget,
};

use nalgebra::DVector;

/// Log-likelihood contract for a latent Gaussian model.
///
/// Implementations are pure functions of `x` and fixed data.
pub trait TargetModel: Send + Sync {
    fn dim(&self) -> usize;

    /// `(f(x), ∇f(x))`.
    fn evaluate(&self, x: &DVector<f64>) -> (f64, DVector<f64>);

    fn log_likelihood(&self, x: &DVector<f64>) -> f64 {
        self.evaluate(x).0
    }

    /// Observation noise variance, for models that have one.
    fn noise_variance(&self) -> Option<f64> {
        None
    }
}

impl<T: TargetModel + ?Sized> TargetModel for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn evaluate(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        (**self).evaluate(x)
    }
    fn log_likelihood(&self, x: &DVector<f64>) -> f64 {
        (**self).log_likelihood(x)
    }
    fn noise_variance(&self) -> Option<f64> {
        (**self).noise_variance()
    }
}

impl<T: TargetModel + ?Sized> TargetModel for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn evaluate(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        (**self).evaluate(x)
    }
    fn log_likelihood(&self, x: &DVector<f64>) -> f64 {
        (**self).log_likelihood(x)
    }
    fn noise_variance(&self) -> Option<f64> {
        (**self).noise_variance()
    }
}

/// `f ≡ 0`. Useful for prior-only checks.
#[derive(Debug, Clone, Copy)]
pub struct FlatTarget {
    pub dim: usize,
}

impl TargetModel for FlatTarget {
    fn dim(&self) -> usize {
        self.dim
    }
    fn evaluate(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        (0.0, DVector::zeros(x.len()))
    }
}
