//! Covariance hyperparameter learning: the joint `(x, θ)` move driven by the
//! `z` auxiliary variable, and a plain Metropolis-within-Gibbs `θ` update.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptation::{AdaptState, MIN_BURN_IN};
use crate::error::{LgmError, Result};
use crate::samplers::{
    agrad_z_auxiliary, agrad_z_g, mh_accept, standard_normal_vec, step, ChainState, SamplerKind,
};
use crate::spectral::{DeltaOperators, OpCounters, SpectralPrior, CLAMP_TOLERANCE};
use crate::targets::{build_kernel, KernelKind, KernelSpec, TargetModel};

/// A parametric family `θ ↦ C_θ`, returned already decomposed.
pub trait CovarianceFamily: Send + Sync {
    fn theta_dim(&self) -> usize;
    fn dim(&self) -> usize;
    fn decompose(&self, theta: &DVector<f64>) -> Result<SpectralPrior>;
}

/// `C_θ = exp(2θ) · C₀`: θ is a log standard deviation.
#[derive(Debug, Clone)]
pub struct ScaledCovariance {
    pub base: DMatrix<f64>,
    pub jitter: f64,
}

impl CovarianceFamily for ScaledCovariance {
    fn theta_dim(&self) -> usize {
        1
    }
    fn dim(&self) -> usize {
        self.base.nrows()
    }
    fn decompose(&self, theta: &DVector<f64>) -> Result<SpectralPrior> {
        let scale = (2.0 * theta[0]).exp();
        if !scale.is_finite() || scale == 0.0 {
            return Err(LgmError::InvalidHyperparameter {
                name: "theta",
                value: theta[0],
            });
        }
        crate::spectral::eigendecompose_covariance(&(&self.base * scale), self.jitter)
    }
}

/// Squared-exponential prior per class with `θ_k = (log σ_x, log ℓ)`,
/// stacked class-major into a block-diagonal covariance.
#[derive(Debug, Clone)]
pub struct SquaredExponentialFamily {
    pub inputs: Vec<Vec<f64>>,
    pub classes: usize,
    pub jitter: f64,
}

impl SquaredExponentialFamily {
    fn block(&self, log_sd: f64, log_len: f64) -> Result<DMatrix<f64>> {
        build_kernel(&KernelSpec {
            kind: KernelKind::SquaredExponential {
                variance: (2.0 * log_sd).exp(),
                lengthscale2: (2.0 * log_len).exp(),
            },
            inputs: self.inputs.clone(),
        })
    }
}

impl CovarianceFamily for SquaredExponentialFamily {
    fn theta_dim(&self) -> usize {
        2 * self.classes
    }
    fn dim(&self) -> usize {
        self.inputs.len() * self.classes
    }
    fn decompose(&self, theta: &DVector<f64>) -> Result<SpectralPrior> {
        let blocks = (0..self.classes)
            .map(|k| self.block(theta[2 * k], theta[2 * k + 1]))
            .collect::<Result<Vec<_>>>()?;
        SpectralPrior::from_blocks(&blocks, self.jitter)
    }
}

/// Independent Gaussian prior on each coordinate of θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaPrior {
    pub mean: Vec<f64>,
    pub variance: f64,
}

impl ThetaPrior {
    /// Wide default: variance 10² on the log scale.
    pub fn flat(d: usize) -> Self {
        ThetaPrior {
            mean: vec![0.0; d],
            variance: 100.0,
        }
    }

    pub fn log_density(&self, theta: &DVector<f64>) -> f64 {
        theta
            .iter()
            .zip(&self.mean)
            .map(|(t, m)| -0.5 * (t - m).powi(2) / self.variance)
            .sum()
    }
}

/// θ together with the decomposition of `C_θ`.
#[derive(Debug, Clone)]
pub struct HyperState {
    pub theta: DVector<f64>,
    pub prior: SpectralPrior,
    pub theta_prior: ThetaPrior,
    pub kappa: f64,
    pub proposals: u64,
    pub accepted: u64,
}

impl HyperState {
    pub fn new<F: CovarianceFamily + ?Sized>(
        family: &F,
        theta: DVector<f64>,
        theta_prior: ThetaPrior,
        kappa: f64,
    ) -> Result<Self> {
        if theta.len() != family.theta_dim() || theta_prior.mean.len() != theta.len() {
            return Err(LgmError::DimensionMismatch {
                expected: family.theta_dim(),
                found: theta.len(),
            });
        }
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(LgmError::InvalidHyperparameter {
                name: "kappa",
                value: kappa,
            });
        }
        let prior = family.decompose(&theta)?;
        Ok(HyperState {
            theta,
            prior,
            theta_prior,
            kappa,
            proposals: 0,
            accepted: 0,
        })
    }
}

/// `log N(z | 0, C + (δ/2)I)` in the eigenbasis of `C`, given `Uᵀz`.
pub fn log_evidence_spectral(prior: &SpectralPrior, uz: &DVector<f64>, delta: f64) -> f64 {
    prior
        .eigenvalues()
        .iter()
        .zip(uz.iter())
        .map(|(g, u)| {
            let s = g + 0.5 * delta;
            -0.5 * ((2.0 * PI * s).ln() + u * u / s)
        })
        .sum()
}

/// `log N(z | 0, C + (δ/2)I)`; costs one matvec.
pub fn log_evidence(
    prior: &SpectralPrior,
    z: &DVector<f64>,
    delta: f64,
    counters: &mut OpCounters,
) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(LgmError::InvalidStepSize(delta));
    }
    let uz = prior.to_spectral(z, counters)?;
    Ok(log_evidence_spectral(prior, &uz, delta))
}

/// `log N(x | 0, C)` with the thresholded pseudo-inverse, given `Uᵀx`.
pub fn log_prior_density(prior: &SpectralPrior, ux: &DVector<f64>) -> f64 {
    let threshold = CLAMP_TOLERANCE * prior.max_eigenvalue();
    prior
        .eigenvalues()
        .iter()
        .zip(ux.iter())
        .filter(|(g, _)| **g > threshold)
        .map(|(g, u)| -0.5 * ((2.0 * PI * g).ln() + u * u / g))
        .sum()
}

fn propose_theta<R: Rng + ?Sized>(hyper: &HyperState, rng: &mut R) -> DVector<f64> {
    let eta = standard_normal_vec(rng, hyper.theta.len());
    &hyper.theta + eta * hyper.kappa.sqrt()
}

/// Result of a θ move. The joint move also reports its two ratio factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperOutcome {
    pub accepted: bool,
    pub log_ratio: f64,
    /// `f(y) − f(x) + g(z,y) − g(z,x)`.
    pub latent_term: f64,
    /// `log Z(z,θ′) + log p(θ′) − log Z(z,θ) − log p(θ)`.
    pub theta_term: f64,
}

/// Joint move `(x, θ) → (y, θ′)` conditional on `z ~ N(x + (δ/2)∇f(x), (δ/2)I)`.
///
/// With `κ = 0` no θ is drawn and no decomposition happens, so the move
/// consumes the random stream exactly like [`crate::samplers::step_agrad_z`]
/// and makes the same decision.
pub fn step_joint_x_theta<F, T, R>(
    state: &mut ChainState,
    hyper: &mut HyperState,
    family: &F,
    delta: f64,
    target: &T,
    rng: &mut R,
) -> Result<HyperOutcome>
where
    F: CovarianceFamily + ?Sized,
    T: TargetModel + ?Sized,
    R: Rng + ?Sized,
{
    let z = agrad_z_auxiliary(state, delta, rng);
    let moves_theta = hyper.kappa > 0.0;
    let (theta_new, fresh) = if moves_theta {
        let theta_new = propose_theta(hyper, rng);
        state.counters.factorizations += 1;
        hyper.proposals += 1;
        match family.decompose(&theta_new) {
            Ok(p) => (theta_new, Some(p)),
            Err(e) => {
                log::warn!("rejecting θ proposal: decomposition failed ({e})");
                mh_accept(f64::NEG_INFINITY, rng);
                state.steps += 1;
                return Ok(HyperOutcome {
                    accepted: false,
                    log_ratio: f64::NEG_INFINITY,
                    latent_term: f64::NAN,
                    theta_term: f64::NEG_INFINITY,
                });
            }
        }
    } else {
        (hyper.theta.clone(), None)
    };
    let prior_new = fresh.as_ref().unwrap_or(&hyper.prior);
    let ops = DeltaOperators::new(prior_new, delta)?;
    let uz = prior_new.to_spectral(&(&z * (2.0 / delta)), &mut state.counters)?;
    let eta = standard_normal_vec(rng, z.len());
    let s1 = ops.sqrt_lambda1();
    let wy = DVector::from_fn(z.len(), |i, _| s1[i] * (s1[i] * uz[i] + eta[i]));
    let y = prior_new.from_spectral(&wy, &mut state.counters)?;
    state.lik_evals += 1;
    state.counters.likelihood_evals += 1;
    let (f_y, g_y) = target.evaluate(&y);
    if !f_y.is_finite() || g_y.iter().any(|v| !v.is_finite()) {
        mh_accept(f64::NEG_INFINITY, rng);
        state.steps += 1;
        return Ok(HyperOutcome {
            accepted: false,
            log_ratio: f64::NEG_INFINITY,
            latent_term: f64::NEG_INFINITY,
            theta_term: f64::NAN,
        });
    }
    let latent_term = f_y - state.f_x + agrad_z_g(&z, &y, &g_y, delta)
        - agrad_z_g(&z, &state.x, &state.grad_x, delta);
    let theta_term = if moves_theta {
        let uz_new = &uz * (0.5 * delta);
        let uz_old = hyper.prior.to_spectral(&z, &mut state.counters)?;
        log_evidence_spectral(prior_new, &uz_new, delta) + hyper.theta_prior.log_density(&theta_new)
            - log_evidence_spectral(&hyper.prior, &uz_old, delta)
            - hyper.theta_prior.log_density(&hyper.theta)
    } else {
        0.0
    };
    let log_ratio = latent_term + theta_term;
    let accepted = mh_accept(log_ratio, rng);
    state.steps += 1;
    if accepted {
        state.accepted += 1;
        state.x = y;
        state.f_x = f_y;
        state.grad_x = g_y;
        state.reset_spectral(wy);
        if let Some(p) = fresh {
            hyper.prior = p;
            hyper.theta = theta_new;
            hyper.accepted += 1;
        }
    }
    Ok(HyperOutcome {
        accepted,
        log_ratio,
        latent_term,
        theta_term,
    })
}

/// Metropolis update of θ alone, targeting `N(x | 0, C_θ) p(θ)`.
pub fn step_gibbs_theta<F, R>(
    state: &mut ChainState,
    hyper: &mut HyperState,
    family: &F,
    rng: &mut R,
) -> Result<HyperOutcome>
where
    F: CovarianceFamily + ?Sized,
    R: Rng + ?Sized,
{
    let theta_new = propose_theta(hyper, rng);
    hyper.proposals += 1;
    state.counters.factorizations += 1;
    let fresh = match family.decompose(&theta_new) {
        Ok(p) => p,
        Err(e) => {
            log::warn!("rejecting θ proposal: decomposition failed ({e})");
            mh_accept(f64::NEG_INFINITY, rng);
            return Ok(HyperOutcome {
                accepted: false,
                log_ratio: f64::NEG_INFINITY,
                latent_term: 0.0,
                theta_term: f64::NEG_INFINITY,
            });
        }
    };
    let ux_new = fresh.to_spectral(&state.x, &mut state.counters)?;
    let log_ratio = log_prior_density(&fresh, &ux_new) + hyper.theta_prior.log_density(&theta_new)
        - log_prior_density(&hyper.prior, &state.ux)
        - hyper.theta_prior.log_density(&hyper.theta);
    let accepted = mh_accept(log_ratio, rng);
    if accepted {
        hyper.prior = fresh;
        hyper.theta = theta_new;
        hyper.accepted += 1;
        state.reset_spectral(ux_new);
    }
    Ok(HyperOutcome {
        accepted,
        log_ratio,
        latent_term: 0.0,
        theta_term: log_ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HyperMode {
    Fixed,
    Gibbs,
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperConfig {
    pub mode: HyperMode,
    /// Latent sampler between θ moves. The joint mode always uses aGrad-z.
    pub latent: SamplerKind,
    /// Latent updates per θ update.
    pub updates_per_theta: usize,
    /// Outer cycles; each is `updates_per_theta` latent steps plus a θ move.
    pub burn_in: usize,
    pub collect: usize,
    pub seed: u64,
    pub theta0: Vec<f64>,
    pub theta_prior: ThetaPrior,
    pub initial_delta: f64,
    pub initial_kappa: f64,
    pub kappa_target: f64,
}

impl HyperConfig {
    pub fn new(mode: HyperMode, theta0: Vec<f64>, seed: u64) -> Self {
        let d = theta0.len();
        HyperConfig {
            mode,
            latent: SamplerKind::AGradZ,
            updates_per_theta: 10,
            burn_in: 500,
            collect: 500,
            seed,
            theta0,
            theta_prior: ThetaPrior::flat(d),
            initial_delta: 1.0,
            initial_kappa: 0.01,
            kappa_target: 0.25,
        }
    }
}

/// Traces of a hyperparameter run, one entry per outer cycle of the
/// collection phase.
#[derive(Debug, Clone)]
pub struct HyperRun {
    pub theta: DMatrix<f64>,
    pub log_likelihood: Vec<f64>,
    /// Log-likelihood after every cycle, burn-in included.
    pub log_likelihood_all: Vec<f64>,
    pub x_mean: DVector<f64>,
    pub delta: f64,
    pub kappa: f64,
    pub latent_acceptance: f64,
    pub theta_acceptance: f64,
    pub counters: OpCounters,
    pub burn_seconds: f64,
    pub collect_seconds: f64,
}

/// Alternate latent updates with θ moves. δ and κ adapt during burn-in.
pub fn run_hyper_chain<F, T>(config: &HyperConfig, family: &F, target: &T) -> Result<HyperRun>
where
    F: CovarianceFamily + ?Sized,
    T: TargetModel + ?Sized,
{
    if config.updates_per_theta == 0 {
        return Err(LgmError::InvalidData(
            "updates_per_theta must be at least 1".into(),
        ));
    }
    if config.burn_in < MIN_BURN_IN {
        return Err(LgmError::BurnInTooShort(config.burn_in));
    }
    if config.collect == 0 {
        return Err(LgmError::InvalidData("collect must be positive".into()));
    }
    let latent = match config.mode {
        HyperMode::Joint => SamplerKind::AGradZ,
        _ => config.latent,
    };
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let theta0 = DVector::from_vec(config.theta0.clone());
    let mut hyper = HyperState::new(
        family,
        theta0,
        config.theta_prior.clone(),
        config.initial_kappa,
    )?;
    let mut state = ChainState::new(DVector::zeros(family.dim()), &hyper.prior, target)?;
    let mut delta_adapt = AdaptState::new(config.initial_delta, latent.default_target_rate())?;
    let mut kappa_adapt = AdaptState::new(config.initial_kappa, config.kappa_target)?;
    let d = family.theta_dim();
    let mut theta = DMatrix::zeros(config.collect, d);
    let mut log_likelihood = Vec::with_capacity(config.collect);
    let mut log_likelihood_all = Vec::with_capacity(config.burn_in + config.collect);
    let mut x_sum = DVector::zeros(family.dim());
    let (mut latent_hits, mut latent_tries) = (0u64, 0u64);
    let (mut theta_hits, mut theta_tries) = (0u64, 0u64);
    let mut burn_seconds = 0.0;
    for cycle in 0..config.burn_in + config.collect {
        let burning = cycle < config.burn_in;
        if cycle == config.burn_in {
            delta_adapt.freeze();
            kappa_adapt.freeze();
            burn_seconds = start.elapsed().as_secs_f64();
        }
        for _ in 0..config.updates_per_theta {
            let ops = latent
                .has_step_size()
                .then(|| DeltaOperators::new(&hyper.prior, delta_adapt.delta()))
                .transpose()?;
            let out = step(
                latent,
                &mut state,
                &hyper.prior,
                ops.as_ref(),
                target,
                &mut rng,
            )?;
            if burning {
                delta_adapt.adapt_step(out.accepted);
            } else {
                latent_tries += 1;
                latent_hits += u64::from(out.accepted);
            }
        }
        if config.mode != HyperMode::Fixed {
            hyper.kappa = kappa_adapt.delta();
            let out = match config.mode {
                HyperMode::Joint => step_joint_x_theta(
                    &mut state,
                    &mut hyper,
                    family,
                    delta_adapt.delta(),
                    target,
                    &mut rng,
                )?,
                _ => step_gibbs_theta(&mut state, &mut hyper, family, &mut rng)?,
            };
            if burning {
                kappa_adapt.adapt_step(out.accepted);
            } else {
                theta_tries += 1;
                theta_hits += u64::from(out.accepted);
            }
        }
        log_likelihood_all.push(state.log_likelihood());
        if !burning {
            let r = cycle - config.burn_in;
            theta.row_mut(r).tr_copy_from(&hyper.theta);
            log_likelihood.push(state.log_likelihood());
            x_sum += state.x();
        }
    }
    let ratio = |h: u64, t: u64| if t == 0 { 0.0 } else { h as f64 / t as f64 };
    Ok(HyperRun {
        theta,
        log_likelihood,
        log_likelihood_all,
        x_mean: x_sum / config.collect as f64,
        delta: delta_adapt.delta(),
        kappa: kappa_adapt.delta(),
        latent_acceptance: ratio(latent_hits, latent_tries),
        theta_acceptance: ratio(theta_hits, theta_tries),
        counters: state.counters(),
        burn_seconds,
        collect_seconds: start.elapsed().as_secs_f64() - burn_seconds,
    })
}
