use std::f64::consts::PI;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use super::state::{marginal_vectors, ChainState};
use super::{mh_accept, StepOutcome};
use crate::error::{LgmError, Result};
use crate::spectral::{DeltaOperators, SpectralPrior, CLAMP_TOLERANCE};
use crate::targets::TargetModel;

/// Shrink steps after which an elliptical slice move gives up.
pub const MAX_SHRINKS: u32 = 100;

pub(crate) fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `Some((f, ∇f))` when both are finite.
fn evaluate_finite<T: TargetModel + ?Sized>(
    target: &T,
    state: &mut ChainState,
    y: &DVector<f64>,
) -> Option<(f64, DVector<f64>)> {
    if state.record_proposals {
        state.last_proposal = Some(y.clone());
    }
    state.lik_evals += 1;
    state.counters.likelihood_evals += 1;
    let (f, g) = target.evaluate(y);
    (f.is_finite() && g.iter().all(|v| v.is_finite())).then_some((f, g))
}

fn finish(state: &mut ChainState, accepted: bool, log_ratio: f64, evals: u32) -> StepOutcome {
    state.steps += 1;
    if accepted {
        state.accepted += 1;
    }
    StepOutcome {
        accepted,
        log_ratio,
        likelihood_evals: evals,
    }
}

fn promote(
    state: &mut ChainState,
    y: DVector<f64>,
    f_y: f64,
    grad_y: DVector<f64>,
    uy: DVector<f64>,
    ugrad_y: Option<DVector<f64>>,
) {
    state.x = y;
    state.f_x = f_y;
    state.grad_x = grad_y;
    state.ux = uy;
    match ugrad_y {
        Some(ug) => {
            state.ugrad_x = ug;
            state.ugrad_valid = true;
        }
        None => state.ugrad_valid = false,
    }
    state.tmp_delta = None;
}

/// `z = x + (δ/2)∇f(x) + √(δ/2) η`.
pub(crate) fn agrad_z_auxiliary<R: Rng + ?Sized>(
    state: &ChainState,
    delta: f64,
    rng: &mut R,
) -> DVector<f64> {
    let eta = standard_normal_vec(rng, state.x.len());
    let s = (0.5 * delta).sqrt();
    DVector::from_fn(state.x.len(), |i, _| {
        state.x[i] + 0.5 * delta * state.grad_x[i] + s * eta[i]
    })
}

/// `g(z, w) = (z − w − (δ/4)∇f(w))ᵀ∇f(w)`.
pub(crate) fn agrad_z_g(z: &DVector<f64>, w: &DVector<f64>, gw: &DVector<f64>, delta: f64) -> f64 {
    z.iter()
        .zip(w.iter())
        .zip(gw.iter())
        .map(|((zi, wi), gi)| (zi - wi - 0.25 * delta * gi) * gi)
        .sum()
}

/// Auxiliary sampler on `z`: two matvecs.
pub fn step_agrad_z<T, R>(
    state: &mut ChainState,
    prior: &SpectralPrior,
    ops: &DeltaOperators,
    target: &T,
    rng: &mut R,
) -> Result<StepOutcome>
where
    T: TargetModel + ?Sized,
    R: Rng + ?Sized,
{
    let delta = ops.delta();
    let z = agrad_z_auxiliary(state, delta, rng);
    let uz = prior.to_spectral(&(&z * (2.0 / delta)), &mut state.counters)?;
    let eta = standard_normal_vec(rng, z.len());
    let s1 = ops.sqrt_lambda1();
    let wy = DVector::from_fn(z.len(), |i, _| s1[i] * (s1[i] * uz[i] + eta[i]));
    let y = prior.from_spectral(&wy, &mut state.counters)?;
    let Some((f_y, g_y)) = evaluate_finite(target, state, &y) else {
        mh_accept(f64::NEG_INFINITY, rng);
        return Ok(finish(state, false, f64::NEG_INFINITY, 1));
    };
    let log_ratio = f_y - state.f_x + agrad_z_g(&z, &y, &g_y, delta)
        - agrad_z_g(&z, &state.x, &state.grad_x, delta);
    let accepted = mh_accept(log_ratio, rng);
    if accepted {
        promote(state, y, f_y, g_y, wy, None);
    }
    Ok(finish(state, accepted, log_ratio, 1))
}

/// Auxiliary sampler on `u`: three matvecs.
pub fn step_agrad_u<T, R>(
    state: &mut ChainState,
    prior: &SpectralPrior,
    ops: &DeltaOperators,
    target: &T,
    rng: &mut R,
) -> Result<StepOutcome>
where
    T: TargetModel + ?Sized,
    R: Rng + ?Sized,
{
    state.ensure_ugrad(prior)?;
    let delta = ops.delta();
    let n = state.x.len();
    let eta = standard_normal_vec(rng, n);
    let s = (0.5 * delta).sqrt();
    let scaled_u = DVector::from_fn(n, |i, _| (2.0 / delta) * (state.x[i] + s * eta[i]));
    let ud = prior.to_spectral(&scaled_u, &mut state.counters)?;
    let eta = standard_normal_vec(rng, n);
    let l1 = ops.lambda1();
    let s1 = ops.sqrt_lambda1();
    let wy = DVector::from_fn(n, |i, _| {
        l1[i] * (ud[i] + state.ugrad_x[i]) + s1[i] * eta[i]
    });
    let y = prior.from_spectral(&wy, &mut state.counters)?;
    let Some((f_y, g_y)) = evaluate_finite(target, state, &y) else {
        mh_accept(f64::NEG_INFINITY, rng);
        return Ok(finish(state, false, f64::NEG_INFINITY, 1));
    };
    let ug_y = prior.to_spectral(&g_y, &mut state.counters)?;
    let quad =
        |ug: &DVector<f64>| -> f64 { (0..n).map(|i| l1[i] * (ud[i] + 0.5 * ug[i]) * ug[i]).sum() };
    let j_xy = state.x.dot(&g_y) - quad(&ug_y);
    let j_yx = y.dot(&state.grad_x) - quad(&state.ugrad_x);
    let log_ratio = f_y - state.f_x + j_xy - j_yx;
    let accepted = mh_accept(log_ratio, rng);
    if accepted {
        promote(state, y, f_y, g_y, wy, Some(ug_y));
    }
    Ok(finish(state, accepted, log_ratio, 1))
}

/// Marginal sampler: three matvecs, with `Uᵀy` recomputed from `y`.
pub fn step_mgrad<T, R>(
    state: &mut ChainState,
    prior: &SpectralPrior,
    ops: &DeltaOperators,
    target: &T,
    rng: &mut R,
) -> Result<StepOutcome>
where
    T: TargetModel + ?Sized,
    R: Rng + ?Sized,
{
    state.ensure_marginal_cache(prior, ops)?;
    let n = state.x.len();
    let eta = standard_normal_vec(rng, n);
    let s2 = ops.sqrt_lambda2();
    let w = DVector::from_fn(n, |i, _| state.tmp_sample[i] + s2[i] * eta[i]);
    let y = prior.from_spectral(&w, &mut state.counters)?;
    let Some((f_y, g_y)) = evaluate_finite(target, state, &y) else {
        mh_accept(f64::NEG_INFINITY, rng);
        return Ok(finish(state, false, f64::NEG_INFINITY, 1));
    };
    let uy = prior.to_spectral(&y, &mut state.counters)?;
    let ug_y = prior.to_spectral(&g_y, &mut state.counters)?;
    let (sample_y, mh_y) = marginal_vectors(ops, &uy, &ug_y);
    let l3 = ops.lambda3();
    let h_xy: f64 = (0..n)
        .map(|i| (state.ux[i] - mh_y[i]) * l3[i] * ug_y[i])
        .sum();
    let h_yx: f64 = (0..n)
        .map(|i| (uy[i] - state.tmp_mh[i]) * l3[i] * state.ugrad_x[i])
        .sum();
    let log_ratio = f_y - state.f_x + h_xy - h_yx;
    let accepted = mh_accept(log_ratio, rng);
    if accepted {
        promote(state, y, f_y, g_y, uy, Some(ug_y));
        state.tmp_sample = sample_y;
        state.tmp_mh = mh_y;
        state.tmp_delta = Some(ops.delta());
    }
    Ok(finish(state, accepted, log_ratio, 1))
}

/// `(2/(2+δ), √(δ(δ+4))/(2+δ))`.
fn crank_nicolson_coefficients(delta: f64) -> (f64, f64) {
    let rho = 2.0 / (2.0 + delta);
    let c = (delta * (delta + 4.0)).sqrt() / (2.0 + delta);
    (rho, c)
}

/// Preconditioned Crank–Nicolson: one matvec, prior-reversible.
pub fn step_pcn<T, R>(
    state: &mut ChainState,
    prior: &SpectralPrior,
    ops: &DeltaOperators,
    target: &T,
    rng: &mut R,
) -> Result<StepOutcome>
where
    T: TargetModel + ?Sized,
    R: Rng + ?Sized,
{
    let n = state.x.len();
    let (rho, c) = crank_nicolson_coefficients(ops.delta());
    let eta = standard_normal_vec(rng, n);
    let sg = prior.sqrt_eigenvalues();
    let w = DVector::from_fn(n, |i, _| c * sg[i] * eta[i]);
    let noise = prior.from_spectral(&w, &mut state.counters)?;
    let y = &state.x * rho + noise;
    let Some((f_y, g_y)) = evaluate_finite(target, state, &y) else {
        mh_accept(f64::NEG_INFINITY, rng);
        return Ok(finish(state, false, f64::NEG_INFINITY, 1));
    };
    let log_ratio = f_y - state.f_x;
    let accepted = mh_accept(log_ratio, rng);
    if accepted {
        let uy = &state.ux * rho + w;
        promote(state, y, f_y, g_y, uy, None);
    }
    Ok(finish(state, accepted, log_ratio, 1))
}

/// Crank–Nicolson Langevin: two matvecs.
pub fn step_pcnl<T, R>(
    state: &mut ChainState,
    prior: &SpectralPrior,
    ops: &DeltaOperators,
    target: &T,
    rng: &mut R,
) -> Result<StepOutcome>
where
    T: TargetModel + ?Sized,
    R: Rng + ?Sized,
{
    state.ensure_ugrad(prior)?;
    let n = state.x.len();
    let delta = ops.delta();
    let (rho, c) = crank_nicolson_coefficients(delta);
    let drift = delta / (2.0 + delta);
    let gamma = prior.eigenvalues();
    let sg = prior.sqrt_eigenvalues();
    let eta = standard_normal_vec(rng, n);
    let v = DVector::from_fn(n, |i, _| {
        drift * gamma[i] * state.ugrad_x[i] + c * sg[i] * eta[i]
    });
    let y = &state.x * rho + prior.from_spectral(&v, &mut state.counters)?;
    let Some((f_y, g_y)) = evaluate_finite(target, state, &y) else {
        mh_accept(f64::NEG_INFINITY, rng);
        return Ok(finish(state, false, f64::NEG_INFINITY, 1));
    };
    let ug_y = prior.to_spectral(&g_y, &mut state.counters)?;
    let k = |from: &DVector<f64>, to: &DVector<f64>, g_to: &DVector<f64>, ug_to: &DVector<f64>| {
        let quad: f64 = (0..n).map(|i| gamma[i] * ug_to[i] * ug_to[i]).sum();
        ((2.0 + delta) * from.dot(g_to) - 2.0 * to.dot(g_to)) / (4.0 + delta)
            - delta / (2.0 * (delta + 4.0)) * quad
    };
    let k_xy = k(&state.x, &y, &g_y, &ug_y);
    let k_yx = k(&y, &state.x, &state.grad_x, &state.ugrad_x);
    let log_ratio = f_y - state.f_x + k_xy - k_yx;
    let accepted = mh_accept(log_ratio, rng);
    if accepted {
        let uy = &state.ux * rho + v;
        promote(state, y, f_y, g_y, uy, Some(ug_y));
    }
    Ok(finish(state, accepted, log_ratio, 1))
}

/// Indices whose eigenvalue is kept by the pseudo-inverse.
fn active_mask(prior: &SpectralPrior) -> Vec<bool> {
    let threshold = CLAMP_TOLERANCE * prior.max_eigenvalue();
    prior.eigenvalues().iter().map(|&g| g > threshold).collect()
}

/// Langevin proposal preconditioned by `C`, with the full prior term in
/// the ratio: two matvecs. Directions the pseudo-inverse drops are never
/// perturbed, so a state with mass there is an error.
pub fn step_pmala<T, R>(
    state: &mut ChainState,
    prior: &SpectralPrior,
    ops: &DeltaOperators,
    target: &T,
    rng: &mut R,
) -> Result<StepOutcome>
where
    T: TargetModel + ?Sized,
    R: Rng + ?Sized,
{
    state.ensure_ugrad(prior)?;
    let n = state.x.len();
    let delta = ops.delta();
    let active = active_mask(prior);
    let scale = state.ux.amax().max(1.0);
    for (i, &on) in active.iter().enumerate() {
        if !on && state.ux[i].abs() > 1e-8 * scale {
            return Err(LgmError::PriorSingularState { index: i });
        }
    }
    let gamma = DVector::from_fn(n, |i, _| {
        if active[i] {
            prior.eigenvalues()[i]
        } else {
            0.0
        }
    });
    let keep = 1.0 - 0.5 * delta;
    let eta = standard_normal_vec(rng, n);
    let v = DVector::from_fn(n, |i, _| {
        0.5 * delta * gamma[i] * state.ugrad_x[i] + (delta * gamma[i]).sqrt() * eta[i]
    });
    let y = &state.x * keep + prior.from_spectral(&v, &mut state.counters)?;
    let uy = &state.ux * keep + &v;
    let Some((f_y, g_y)) = evaluate_finite(target, state, &y) else {
        mh_accept(f64::NEG_INFINITY, rng);
        return Ok(finish(state, false, f64::NEG_INFINITY, 1));
    };
    let ug_y = prior.to_spectral(&g_y, &mut state.counters)?;
    let mut log_ratio = f_y - state.f_x;
    for i in (0..n).filter(|&i| active[i]) {
        let g = gamma[i];
        let mean_x = keep * state.ux[i] + 0.5 * delta * g * state.ugrad_x[i];
        let mean_y = keep * uy[i] + 0.5 * delta * g * ug_y[i];
        log_ratio += 0.5 * (state.ux[i] * state.ux[i] - uy[i] * uy[i]) / g;
        log_ratio +=
            ((uy[i] - mean_x).powi(2) - (state.ux[i] - mean_y).powi(2)) / (2.0 * delta * g);
    }
    let accepted = mh_accept(log_ratio, rng);
    if accepted {
        promote(state, y, f_y, g_y, uy, Some(ug_y));
    }
    Ok(finish(state, accepted, log_ratio, 1))
}

/// Elliptical slice move: one matvec for the auxiliary prior draw, then
/// likelihood evaluations until the slice is hit. Always moves unless the
/// shrink limit is reached.
pub fn step_ellipt<T, R>(
    state: &mut ChainState,
    prior: &SpectralPrior,
    target: &T,
    rng: &mut R,
) -> Result<StepOutcome>
where
    T: TargetModel + ?Sized,
    R: Rng + ?Sized,
{
    let n = state.x.len();
    let eta = standard_normal_vec(rng, n);
    let w = prior.sqrt_eigenvalues().component_mul(&eta);
    let nu = prior.from_spectral(&w, &mut state.counters)?;
    let u: f64 = rng.random();
    let height = state.f_x + u.ln();
    let mut theta = 2.0 * PI * rng.random::<f64>();
    let (mut lo, mut hi) = (theta - 2.0 * PI, theta);
    let mut evals = 0u32;
    loop {
        let (s, c) = theta.sin_cos();
        let y = &state.x * c + &nu * s;
        evals += 1;
        if let Some((f_y, g_y)) = evaluate_finite(target, state, &y) {
            if f_y > height {
                let uy = &state.ux * c + &w * s;
                promote(state, y, f_y, g_y, uy, None);
                return Ok(finish(state, true, f64::NAN, evals));
            }
        }
        if evals >= MAX_SHRINKS {
            log::warn!("elliptical slice gave up after {evals} shrinks; keeping current state");
            return Ok(finish(state, false, f64::NAN, evals));
        }
        if theta < 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        theta = lo + (hi - lo) * rng.random::<f64>();
    }
}
