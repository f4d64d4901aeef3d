use nalgebra::DVector;

use crate::error::{LgmError, Result};
use crate::spectral::{DeltaOperators, OpCounters, SpectralPrior};
use crate::targets::TargetModel;

/// Current point of a chain together with every cached quantity the
/// spectral kernels reuse between iterations.
///
/// `ugrad_x` is only refreshed by kernels that need it; `ugrad_valid`
/// records whether it matches `grad_x`. The mGrad vectors are tagged with
/// the step size they were built at.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub(crate) x: DVector<f64>,
    pub(crate) f_x: f64,
    pub(crate) grad_x: DVector<f64>,
    pub(crate) ux: DVector<f64>,
    pub(crate) ugrad_x: DVector<f64>,
    pub(crate) ugrad_valid: bool,
    pub(crate) tmp_sample: DVector<f64>,
    pub(crate) tmp_mh: DVector<f64>,
    pub(crate) tmp_delta: Option<f64>,
    pub(crate) accepted: u64,
    pub(crate) steps: u64,
    pub(crate) lik_evals: u64,
    pub(crate) counters: OpCounters,
    pub(crate) record_proposals: bool,
    pub(crate) last_proposal: Option<DVector<f64>>,
}

impl ChainState {
    /// Initialise at `x0`. Costs one likelihood evaluation and two matvecs.
    pub fn new<T: TargetModel + ?Sized>(
        x0: DVector<f64>,
        prior: &SpectralPrior,
        target: &T,
    ) -> Result<Self> {
        if x0.len() != prior.dim() {
            return Err(LgmError::DimensionMismatch {
                expected: prior.dim(),
                found: x0.len(),
            });
        }
        if target.dim() != prior.dim() {
            return Err(LgmError::DimensionMismatch {
                expected: prior.dim(),
                found: target.dim(),
            });
        }
        let (f_x, grad_x) = target.evaluate(&x0);
        if !f_x.is_finite() || grad_x.iter().any(|g| !g.is_finite()) {
            return Err(LgmError::NonFiniteInitialState);
        }
        let mut counters = OpCounters::default();
        counters.likelihood_evals += 1;
        let ux = prior.to_spectral(&x0, &mut counters)?;
        let ugrad_x = prior.to_spectral(&grad_x, &mut counters)?;
        let n = x0.len();
        Ok(ChainState {
            x: x0,
            f_x,
            grad_x,
            ux,
            ugrad_x,
            ugrad_valid: true,
            tmp_sample: DVector::zeros(n),
            tmp_mh: DVector::zeros(n),
            tmp_delta: None,
            accepted: 0,
            steps: 0,
            lik_evals: 1,
            counters,
            record_proposals: false,
            last_proposal: None,
        })
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn log_likelihood(&self) -> f64 {
        self.f_x
    }

    pub fn grad(&self) -> &DVector<f64> {
        &self.grad_x
    }

    /// `Uᵀx`.
    pub fn spectral_x(&self) -> &DVector<f64> {
        &self.ux
    }

    pub fn counters(&self) -> OpCounters {
        self.counters
    }

    pub fn accepted(&self) -> u64 {
        self.accepted
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn likelihood_evals(&self) -> u64 {
        self.lik_evals
    }

    /// Keep a copy of every proposed point (the last one is retrievable
    /// with [`ChainState::last_proposal`]). Off by default.
    pub fn set_record_proposals(&mut self, on: bool) {
        self.record_proposals = on;
        if !on {
            self.last_proposal = None;
        }
    }

    pub fn last_proposal(&self) -> Option<&DVector<f64>> {
        self.last_proposal.as_ref()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.accepted as f64 / self.steps as f64
        }
    }

    pub(crate) fn ensure_ugrad(&mut self, prior: &SpectralPrior) -> Result<()> {
        if !self.ugrad_valid {
            self.ugrad_x = prior.to_spectral(&self.grad_x, &mut self.counters)?;
            self.ugrad_valid = true;
        }
        Ok(())
    }

    /// Rebuild the mGrad vectors if they were made at another step size.
    pub(crate) fn ensure_marginal_cache(
        &mut self,
        prior: &SpectralPrior,
        ops: &DeltaOperators,
    ) -> Result<()> {
        self.ensure_ugrad(prior)?;
        if self.tmp_delta != Some(ops.delta()) {
            let (s, m) = marginal_vectors(ops, &self.ux, &self.ugrad_x);
            self.tmp_sample = s;
            self.tmp_mh = m;
            self.tmp_delta = Some(ops.delta());
        }
        Ok(())
    }

    /// Install spectral coordinates in a new basis and drop everything
    /// derived from the old one. Used when the prior itself changes.
    pub(crate) fn reset_spectral(&mut self, ux: DVector<f64>) {
        self.ux = ux;
        self.ugrad_valid = false;
        self.tmp_delta = None;
    }

    /// Largest absolute discrepancy between the caches and a full
    /// recomputation. Intended for tests; does not touch the counters.
    pub fn check_coherence<T: TargetModel + ?Sized>(
        &self,
        prior: &SpectralPrior,
        target: &T,
    ) -> Result<f64> {
        let mut scratch = OpCounters::default();
        let (f, g) = target.evaluate(&self.x);
        let mut worst = (f - self.f_x).abs();
        worst = worst.max((&g - &self.grad_x).amax());
        let ux = prior.to_spectral(&self.x, &mut scratch)?;
        worst = worst.max((&ux - &self.ux).amax());
        if self.ugrad_valid {
            let ug = prior.to_spectral(&g, &mut scratch)?;
            worst = worst.max((&ug - &self.ugrad_x).amax());
            if let Some(delta) = self.tmp_delta {
                let ops = DeltaOperators::new(prior, delta)?;
                let (s, m) = marginal_vectors(&ops, &ux, &ug);
                worst = worst.max((&s - &self.tmp_sample).amax());
                worst = worst.max((&m - &self.tmp_mh).amax());
            }
        }
        Ok(worst)
    }
}

/// `(Λ₁((2/δ)ux + ug), Λ₁((2/δ)ux + ½ug))`.
pub(crate) fn marginal_vectors(
    ops: &DeltaOperators,
    ux: &DVector<f64>,
    ug: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let scale = 2.0 / ops.delta();
    let l1 = ops.lambda1();
    let n = ux.len();
    let sample = DVector::from_fn(n, |i, _| l1[i] * (scale * ux[i] + ug[i]));
    let mh = DVector::from_fn(n, |i, _| l1[i] * (scale * ux[i] + 0.5 * ug[i]));
    (sample, mh)
}
