//! Dense-matrix reference formulas for small instances.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{LgmError, Result};
use crate::samplers::{standard_normal_vec, SamplerKind};
use crate::spectral::{shrinkage_maps, SpectralPrior};
use crate::targets::TargetModel;

/// Centered finite-difference gradient.
pub fn finite_difference_gradient<T: TargetModel + ?Sized>(
    target: &T,
    x: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    let mut probe = x.clone();
    DVector::from_fn(x.len(), |i, _| {
        probe[i] = x[i] + h;
        let up = target.log_likelihood(&probe);
        probe[i] = x[i] - h;
        let down = target.log_likelihood(&probe);
        probe[i] = x[i];
        (up - down) / (2.0 * h)
    })
}

fn symmetric_function(c: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(c.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

fn inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    m.clone().try_inverse().ok_or(LgmError::Singular(what))
}

/// `A = (δ/2)(C + (δ/2)I)⁻¹C`, valid for singular `C`.
pub fn dense_a_matrix(c: &DMatrix<f64>, delta: f64) -> Result<DMatrix<f64>> {
    let n = c.nrows();
    let shifted = c + DMatrix::identity(n, n) * (0.5 * delta);
    Ok(inverse(&shifted, "C + (δ/2)I")? * c * (0.5 * delta))
}

/// Mean and covariance of the one-step proposal of `kind` from `x` with
/// gradient `grad`, built from dense matrices. The auxiliary samplers
/// report their marginal proposal.
pub fn proposal_moments(
    kind: SamplerKind,
    c: &DMatrix<f64>,
    delta: f64,
    x: &DVector<f64>,
    grad: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(LgmError::InvalidStepSize(delta));
    }
    let rho = 2.0 / (2.0 + delta);
    let cn_cov = c * (delta * (delta + 4.0) / (2.0 + delta).powi(2));
    Ok(match kind {
        SamplerKind::AGradZ | SamplerKind::AGradU | SamplerKind::MGrad => {
            let a = dense_a_matrix(c, delta)?;
            let mean = &a * (x * (2.0 / delta) + grad);
            let cov = &a * &a * (2.0 / delta) + &a;
            (mean, cov)
        }
        SamplerKind::Pcn => (x * rho, cn_cov),
        SamplerKind::Pcnl => (x * rho + c * grad * (delta / (2.0 + delta)), cn_cov),
        SamplerKind::Pmala => (
            x * (1.0 - 0.5 * delta) + c * grad * (0.5 * delta),
            c * delta,
        ),
        SamplerKind::Ellipt => {
            return Err(LgmError::InvalidData(
                "elliptical slice has no proposal density".into(),
            ))
        }
    })
}

/// `log N(y | mean, cov)` for positive definite `cov`.
pub fn log_gaussian_density(
    y: &DVector<f64>,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<f64> {
    let chol = cov
        .clone()
        .cholesky()
        .ok_or(LgmError::Singular("covariance is not positive definite"))?;
    let r = y - mean;
    let sol = chol.solve(&r);
    let logdet: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    Ok(-0.5 * (r.len() as f64 * (2.0 * PI).ln() + logdet + r.dot(&sol)))
}

/// Full MH log ratio `log π(y)q(x|y) − log π(x)q(y|x)` for a marginal
/// proposal, evaluated with dense densities.
pub fn dense_mh_log_ratio<T: TargetModel + ?Sized>(
    kind: SamplerKind,
    c: &DMatrix<f64>,
    delta: f64,
    target: &T,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<f64> {
    let (fx, gx) = target.evaluate(x);
    let (fy, gy) = target.evaluate(y);
    let zero = DVector::zeros(x.len());
    let (mx, sx) = proposal_moments(kind, c, delta, x, &gx)?;
    let (my, sy) = proposal_moments(kind, c, delta, y, &gy)?;
    Ok(
        fy - fx + log_gaussian_density(y, &zero, c)? - log_gaussian_density(x, &zero, c)?
            + log_gaussian_density(x, &my, &sy)?
            - log_gaussian_density(y, &mx, &sx)?,
    )
}

/// Proposal of the preconditioned marginal sampler with
/// `q(u|x) = N(u | x, (δ/2)S)`:
/// `B = ((2/δ)S⁻¹ + C⁻¹)⁻¹`, mean `(2/δ)BS⁻¹(x + (δ/2)S∇f)`,
/// covariance `(2/δ)BS⁻¹B + B`.
pub fn generalized_marginal_proposal(
    s: &DMatrix<f64>,
    c: &DMatrix<f64>,
    delta: f64,
    x: &DVector<f64>,
    grad: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !(delta > 0.0) {
        return Err(LgmError::InvalidStepSize(delta));
    }
    let s_inv = inverse(s, "preconditioner S")?;
    let c_inv = inverse(c, "covariance C")?;
    let b = inverse(&(&s_inv * (2.0 / delta) + c_inv), "B")?;
    let drift = x + s * grad * (0.5 * delta);
    let mean = &b * &s_inv * drift * (2.0 / delta);
    let cov = &b * &s_inv * &b * (2.0 / delta) + &b;
    Ok((mean, cov))
}

/// Conjugate posterior for `y ~ N(x, σ²I)` in the prior eigenbasis:
/// returns the mean and the posterior eigenvalues `t(γ)`.
pub fn exact_gaussian_posterior(
    prior: &SpectralPrior,
    sigma2: f64,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let mut counters = Default::default();
    let uy = prior.to_spectral(y, &mut counters)?;
    let gamma = prior.eigenvalues();
    let shrunk = DVector::from_fn(y.len(), |i, _| gamma[i] / (gamma[i] + sigma2) * uy[i]);
    let mean = prior.from_spectral(&shrunk, &mut counters)?;
    let t = gamma.map(|g| shrinkage_maps(g, 1.0, sigma2).t);
    Ok((mean, t))
}

/// Same posterior by dense algebra: `C(C+σ²I)⁻¹y` and `C − C(C+σ²I)⁻¹C`.
pub fn dense_gaussian_posterior(
    c: &DMatrix<f64>,
    sigma2: f64,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = c.nrows();
    let k = inverse(&(c + DMatrix::identity(n, n) * sigma2), "C + σ²I")?;
    let gain = c * &k;
    let mean = &gain * y;
    let cov = c - &gain * c;
    Ok((mean, cov))
}

/// Largest violation of `N(x|0,C)q(y|x) = N(y|0,C)q(x|y)` over `pairs`
/// random pairs, for a gradient-free proposal of `kind`.
pub fn prior_reversibility_residual<R: Rng + ?Sized>(
    kind: SamplerKind,
    c: &DMatrix<f64>,
    delta: f64,
    pairs: usize,
    rng: &mut R,
) -> Result<f64> {
    let n = c.nrows();
    let zero = DVector::zeros(n);
    let root = symmetric_function(c, |v| v.max(0.0).sqrt());
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let x = &root * standard_normal_vec(rng, n);
        let y = &root * standard_normal_vec(rng, n);
        let (mx, sx) = proposal_moments(kind, c, delta, &x, &zero)?;
        let (my, sy) = proposal_moments(kind, c, delta, &y, &zero)?;
        let forward = log_gaussian_density(&x, &zero, c)? + log_gaussian_density(&y, &mx, &sx)?;
        let backward = log_gaussian_density(&y, &zero, c)? + log_gaussian_density(&x, &my, &sy)?;
        worst = worst.max((forward - backward).abs());
    }
    Ok(worst)
}

/// Largest violation of reversibility of `N(y | GFG⁻¹x, G(I−F²)G)` with
/// respect to `N(0, C)`, where `G = C^{1/2}` and `F` is symmetric with
/// spectrum inside `(−1, 1)`.
pub fn autoregressive_reversibility_residual<R: Rng + ?Sized>(
    c: &DMatrix<f64>,
    f: &DMatrix<f64>,
    pairs: usize,
    rng: &mut R,
) -> Result<f64> {
    let n = c.nrows();
    let g = symmetric_function(c, f64::sqrt);
    let g_inv = inverse(&g, "C^{1/2}")?;
    let transfer = &g * f * &g_inv;
    let cov = &g * (DMatrix::identity(n, n) - f * f) * &g;
    let cov = (&cov + cov.transpose()) * 0.5;
    let zero = DVector::zeros(n);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let x = &g * standard_normal_vec(rng, n);
        let y = &g * standard_normal_vec(rng, n);
        let forward = log_gaussian_density(&x, &zero, c)?
            + log_gaussian_density(&y, &(&transfer * &x), &cov)?;
        let backward = log_gaussian_density(&y, &zero, c)?
            + log_gaussian_density(&x, &(&transfer * &y), &cov)?;
        worst = worst.max((forward - backward).abs());
    }
    Ok(worst)
}

/// Random symmetric matrix with eigenvalues drawn uniformly from
/// `[lo, hi]`.
pub fn random_symmetric<R: Rng + ?Sized>(rng: &mut R, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
    let q = m.qr().q();
    let d = DVector::from_fn(n, |_, _| lo + (hi - lo) * rng.random::<f64>());
    let c = &q * DMatrix::from_diagonal(&d) * q.transpose();
    (&c + c.transpose()) * 0.5
}
