//! Step-size tuning during burn-in, and the burn-in/collection chain runner.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LgmError, Result};
use crate::samplers::{step, ChainState, SamplerKind};
use crate::spectral::{DeltaOperators, OpCounters, SpectralPrior};
use crate::targets::TargetModel;

/// Shortest burn-in the tuner accepts.
pub const MIN_BURN_IN: usize = 100;

/// Robbins–Monro controller on `log δ`:
/// `log δ ← log δ + c·t^{−0.6}(accepted − target)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptState {
    pub log_delta: f64,
    pub target_rate: f64,
    pub gain: f64,
    pub iteration: u64,
    pub frozen: bool,
}

impl AdaptState {
    pub fn new(initial_delta: f64, target_rate: f64) -> Result<Self> {
        if !(initial_delta > 0.0) || !initial_delta.is_finite() {
            return Err(LgmError::InvalidStepSize(initial_delta));
        }
        if !(target_rate > 0.0 && target_rate < 1.0) {
            return Err(LgmError::InvalidHyperparameter {
                name: "target_rate",
                value: target_rate,
            });
        }
        Ok(AdaptState {
            log_delta: initial_delta.ln(),
            target_rate,
            gain: 1.0,
            iteration: 0,
            frozen: false,
        })
    }

    pub fn delta(&self) -> f64 {
        self.log_delta.exp()
    }

    /// One update from a single accept/reject outcome. No-op once frozen.
    pub fn adapt_step(&mut self, accepted: bool) {
        if self.frozen {
            return;
        }
        self.iteration += 1;
        let rate = (self.iteration as f64).powf(-0.6);
        let hit = if accepted { 1.0 } else { 0.0 };
        self.log_delta += self.gain * rate * (hit - self.target_rate);
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }
}

/// Outcome of the burn-in phase.
#[derive(Debug, Clone)]
pub struct TuneResult {
    /// Frozen step size; `None` for samplers without one.
    pub delta: Option<f64>,
    pub acceptance: Vec<bool>,
    /// Acceptance was all-or-nothing over the second half of burn-in.
    pub untunable: bool,
    pub seconds: f64,
}

/// Run `burn_in` adapted steps from the current state, then freeze.
#[allow(clippy::too_many_arguments)]
pub fn tune_and_freeze<T, R>(
    kind: SamplerKind,
    state: &mut ChainState,
    prior: &SpectralPrior,
    target: &T,
    burn_in: usize,
    initial_delta: f64,
    target_rate: f64,
    rng: &mut R,
) -> Result<TuneResult>
where
    T: TargetModel + ?Sized,
    R: Rng + ?Sized,
{
    if burn_in < MIN_BURN_IN {
        return Err(LgmError::BurnInTooShort(burn_in));
    }
    let start = Instant::now();
    let mut acceptance = Vec::with_capacity(burn_in);
    if !kind.has_step_size() {
        for _ in 0..burn_in {
            acceptance.push(step(kind, state, prior, None, target, rng)?.accepted);
        }
        return Ok(TuneResult {
            delta: None,
            acceptance,
            untunable: false,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let mut adapt = AdaptState::new(initial_delta, target_rate)?;
    let mut ops = DeltaOperators::new(prior, adapt.delta())?;
    for _ in 0..burn_in {
        let out = step(kind, state, prior, Some(&ops), target, rng)?;
        acceptance.push(out.accepted);
        adapt.adapt_step(out.accepted);
        ops = DeltaOperators::new(prior, adapt.delta())?;
    }
    adapt.freeze();
    let tail = &acceptance[burn_in / 2..];
    let untunable = tail.iter().all(|&a| a) || tail.iter().all(|&a| !a);
    if untunable {
        log::warn!("{kind}: acceptance stuck at 0 or 1 through the second half of burn-in");
    }
    Ok(TuneResult {
        delta: Some(adapt.delta()),
        acceptance,
        untunable,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Settings for one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub kind: SamplerKind,
    pub burn_in: usize,
    pub collect: usize,
    pub thin: usize,
    pub seed: u64,
    pub initial_delta: Option<f64>,
    pub target_rate: Option<f64>,
}

impl ChainConfig {
    pub fn new(kind: SamplerKind, burn_in: usize, collect: usize, seed: u64) -> Self {
        ChainConfig {
            kind,
            burn_in,
            collect,
            thin: 1,
            seed,
            initial_delta: None,
            target_rate: None,
        }
    }
}

/// Everything a finished chain produced.
#[derive(Debug, Clone)]
pub struct ChainRun {
    pub kind: SamplerKind,
    pub seed: u64,
    pub delta: Option<f64>,
    /// One row per retained sample.
    pub samples: DMatrix<f64>,
    pub log_likelihood: Vec<f64>,
    pub burn_seconds: f64,
    pub collect_seconds: f64,
    pub burn_acceptance: f64,
    pub collect_acceptance: f64,
    pub untunable: bool,
    /// Counters for the collection phase only.
    pub collect_counters: OpCounters,
    /// Counters over the whole run, initialisation included.
    pub total_counters: OpCounters,
    pub collect_iterations: usize,
}

/// Start at `x = 0`, tune through burn-in, then collect with δ frozen.
pub fn run_chain<T: TargetModel + ?Sized>(
    config: &ChainConfig,
    prior: &SpectralPrior,
    target: &T,
) -> Result<ChainRun> {
    let x0 = DVector::zeros(prior.dim());
    run_chain_from(config, prior, target, x0)
}

pub fn run_chain_from<T: TargetModel + ?Sized>(
    config: &ChainConfig,
    prior: &SpectralPrior,
    target: &T,
    x0: DVector<f64>,
) -> Result<ChainRun> {
    if config.collect == 0 {
        return Err(LgmError::InvalidData("collect must be positive".into()));
    }
    let thin = config.thin.max(1);
    let kind = config.kind;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = ChainState::new(x0, prior, target)?;
    let tune = tune_and_freeze(
        kind,
        &mut state,
        prior,
        target,
        config.burn_in,
        config.initial_delta.unwrap_or(kind.default_initial_delta()),
        config.target_rate.unwrap_or(kind.default_target_rate()),
        &mut rng,
    )?;
    let burn_acceptance =
        tune.acceptance.iter().filter(|&&a| a).count() as f64 / tune.acceptance.len() as f64;
    let ops = match tune.delta {
        Some(d) => Some(DeltaOperators::new(prior, d)?),
        None => None,
    };
    let before = state.counters();
    let rows = config.collect / thin;
    let mut samples = DMatrix::zeros(rows, prior.dim());
    let mut log_likelihood = Vec::with_capacity(rows);
    let mut accepted = 0usize;
    let start = Instant::now();
    for i in 0..rows * thin {
        if step(kind, &mut state, prior, ops.as_ref(), target, &mut rng)?.accepted {
            accepted += 1;
        }
        if (i + 1) % thin == 0 {
            let r = i / thin;
            samples.row_mut(r).tr_copy_from(state.x());
            log_likelihood.push(state.log_likelihood());
        }
    }
    let collect_seconds = start.elapsed().as_secs_f64();
    let total = state.counters();
    let collect_counters = OpCounters {
        matvecs: total.matvecs - before.matvecs,
        factorizations: total.factorizations - before.factorizations,
        likelihood_evals: total.likelihood_evals - before.likelihood_evals,
    };
    Ok(ChainRun {
        kind,
        seed: config.seed,
        delta: tune.delta,
        samples,
        log_likelihood,
        burn_seconds: tune.seconds,
        collect_seconds,
        burn_acceptance,
        collect_acceptance: accepted as f64 / (rows * thin) as f64,
        untunable: tune.untunable,
        collect_counters,
        total_counters: total,
        collect_iterations: rows * thin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::eigendecompose_covariance;
    use crate::targets::{regression_target, FlatTarget};
    use proptest::prelude::*;

    #[test]
    fn always_accepting_grows_step() {
        let mut a = AdaptState::new(1.0, 0.55).unwrap();
        let mut last = a.log_delta;
        for _ in 0..100 {
            a.adapt_step(true);
            assert!(a.log_delta > last);
            last = a.log_delta;
        }
    }

    #[test]
    fn frozen_state_does_not_move() {
        let mut a = AdaptState::new(0.3, 0.25).unwrap();
        a.adapt_step(false);
        a.freeze();
        let before = a;
        a.adapt_step(true);
        assert_eq!(a, before);
    }

    #[test]
    fn fixed_point_has_zero_drift() {
        let mut a = AdaptState::new(1.0, 0.25).unwrap();
        a.iteration = 10;
        let rate = 11f64.powf(-0.6);
        let up = 0.25 * rate * 0.75;
        let down = 0.75 * rate * -0.25;
        assert!((up + down).abs() < 1e-15);
        a.adapt_step(true);
        assert!((a.log_delta - 0.75 * rate).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn adaptation_diminishes(outcomes in proptest::collection::vec(any::<bool>(), 1..400)) {
            let mut a = AdaptState::new(1.0, 0.55).unwrap();
            for (t, &hit) in outcomes.iter().enumerate() {
                let before = a.log_delta;
                a.adapt_step(hit);
                let bound = ((t + 1) as f64).powf(-0.6);
                prop_assert!((a.log_delta - before).abs() <= bound + 1e-15);
            }
        }
    }

    fn regression_setup(
        n: usize,
        sigma2: f64,
    ) -> (SpectralPrior, crate::targets::RegressionTarget) {
        let inputs: Vec<f64> = (0..n).map(|i| 10.0 * i as f64 / (n - 1) as f64).collect();
        let c =
            nalgebra::DMatrix::from_fn(n, n, |i, j| (-(inputs[i] - inputs[j]).powi(2) / 2.0).exp());
        let prior = eigendecompose_covariance(&c, 0.0).unwrap();
        let y = DVector::from_fn(n, |i, _| (inputs[i]).sin());
        (prior, regression_target(y, sigma2).unwrap())
    }

    #[test]
    fn short_burn_in_is_rejected() {
        let (prior, target) = regression_setup(5, 1.0);
        let cfg = ChainConfig::new(SamplerKind::MGrad, 50, 200, 1);
        assert!(matches!(
            run_chain(&cfg, &prior, &target),
            Err(LgmError::BurnInTooShort(50))
        ));
    }

    #[test]
    fn ellipt_has_no_step_size() {
        let (prior, target) = regression_setup(5, 1.0);
        let cfg = ChainConfig::new(SamplerKind::Ellipt, 100, 100, 1);
        let run = run_chain(&cfg, &prior, &target).unwrap();
        assert!(run.delta.is_none());
    }

    #[test]
    fn collection_phase_is_frozen_and_counted() {
        let (prior, target) = regression_setup(20, 0.5);
        let mut cfg = ChainConfig::new(SamplerKind::MGrad, 300, 500, 3);
        cfg.thin = 2;
        let run = run_chain(&cfg, &prior, &target).unwrap();
        assert_eq!(run.samples.nrows(), 250);
        assert_eq!(run.collect_counters.matvecs, 3 * 500);
        assert_eq!(run.total_counters.factorizations, 0);
        assert_eq!(run.total_counters.matvecs, 2 + 3 * 800);
    }

    #[test]
    fn mgrad_tunes_into_band() {
        let (prior, target) = regression_setup(200, 1.0);
        let cfg = ChainConfig::new(SamplerKind::MGrad, 2000, 2000, 5);
        let run = run_chain(&cfg, &prior, &target).unwrap();
        assert!(
            (0.45..=0.65).contains(&run.collect_acceptance),
            "acceptance {}",
            run.collect_acceptance
        );
    }

    #[test]
    fn flat_target_drives_step_up() {
        let (prior, _) = regression_setup(5, 1.0);
        let flat = FlatTarget { dim: 5 };
        let cfg = ChainConfig::new(SamplerKind::Pcn, 200, 100, 2);
        let run = run_chain(&cfg, &prior, &flat).unwrap();
        assert!(run.delta.unwrap() > 1.0);
        assert!(run.untunable);
    }
}
