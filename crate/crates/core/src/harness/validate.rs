//! Self-checks against brute-force references, reported as one row per
//! check with the measured value and its tolerance.

use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adaptation::{run_chain, ChainConfig};
use crate::diagnostics::ess_geyer;
use crate::error::Result;
use crate::oracle::{
    autoregressive_reversibility_residual, build_kernel_matrix, finite_difference_gradient,
    generalized_marginal_proposal, peskun_battery, prior_reversibility_residual, proposal_moments,
    random_symmetric, OracleKernel, ScalarModel, GRID_POINTS,
};
use crate::samplers::SamplerKind;
use crate::spectral::{eigendecompose_covariance, shrinkage_maps};
use crate::targets::{cox_target, logistic_target, regression_target, softmax_target, TargetModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub check: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl ValidationRow {
    /// Passes when `measured ≤ tolerance`.
    pub fn at_most(check: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        ValidationRow {
            check: check.into(),
            measured,
            tolerance,
            passed: measured <= tolerance,
        }
    }
}

/// `m′(0) = 1`, `m(γ) → δ` for large γ, and `max m/t = 9/8` at `δ = σ²`.
pub fn shrinkage_checks() -> Vec<ValidationRow> {
    let mut rows = Vec::new();
    let mut slope = 0.0f64;
    let mut limit = 0.0f64;
    for delta in [0.01, 0.1, 1.0, 10.0] {
        let h = 1e-6 * delta;
        slope = slope.max((shrinkage_maps(h, delta, 1.0).m / h - 1.0).abs());
        limit = limit.max((shrinkage_maps(1e6 * delta, delta, 1.0).m / delta - 1.0).abs());
    }
    rows.push(ValidationRow::at_most(
        "marginal map slope at zero",
        slope,
        1e-4,
    ));
    rows.push(ValidationRow::at_most(
        "marginal map large-eigenvalue limit",
        limit,
        1e-4,
    ));
    let mut worst = 0.0f64;
    for sigma2 in [0.01, 1.0, 100.0] {
        let peak = (0..10_000)
            .map(|i| {
                let gamma = sigma2 * 10f64.powf(-4.0 + 8.0 * i as f64 / 9999.0);
                let s = shrinkage_maps(gamma, sigma2, sigma2);
                s.m / s.t
            })
            .fold(0.0, f64::max);
        worst = worst.max((peak - 1.125).abs());
    }
    rows.push(ValidationRow::at_most(
        "peak marginal/posterior ratio is 9/8",
        worst,
        1e-6,
    ));
    rows
}

/// Prior reversibility of the gradient-free proposals and of the general
/// autoregressive kernel.
pub fn reversibility_checks(seed: u64) -> Result<Vec<ValidationRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for kind in [SamplerKind::Pcn, SamplerKind::MGrad] {
        let mut worst = 0.0f64;
        for _ in 0..5 {
            let c = random_symmetric(&mut rng, 5, 0.1, 3.0);
            let delta = 0.1 + 2.0 * rng.random::<f64>();
            worst = worst.max(prior_reversibility_residual(
                kind, &c, delta, 100, &mut rng,
            )?);
        }
        rows.push(ValidationRow::at_most(
            format!("{kind} prior reversibility"),
            worst,
            1e-8,
        ));
    }
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let c = random_symmetric(&mut rng, 2, 0.2, 2.0);
        let f = random_symmetric(&mut rng, 2, -0.9, 0.9);
        worst = worst.max(autoregressive_reversibility_residual(
            &c, &f, 100, &mut rng,
        )?);
    }
    rows.push(ValidationRow::at_most(
        "autoregressive kernel reversibility",
        worst,
        1e-10,
    ));
    Ok(rows)
}

type NamedModel = (&'static str, ScalarModel<Box<dyn TargetModel>>);

/// The two one-dimensional reference models.
fn scalar_models() -> Result<Vec<NamedModel>> {
    let gaussian: Box<dyn TargetModel> =
        Box::new(regression_target(DVector::from_element(1, 0.8), 0.5)?);
    let logistic: Box<dyn TargetModel> = Box::new(logistic_target(&[1])?);
    Ok(vec![
        ("gaussian", ScalarModel::new(1.0, gaussian)?),
        ("logistic", ScalarModel::new(1.0, logistic)?),
    ])
}

/// mGrad's asymptotic variance never exceeds either auxiliary sampler's.
/// The measured value is the largest relative excess.
pub fn peskun_checks(grid_points: usize) -> Result<Vec<ValidationRow>> {
    let mut rows = Vec::new();
    for (name, model) in scalar_models()? {
        for delta in [0.5, 1.0, 2.0] {
            let battery = peskun_battery(&model, delta, grid_points)?;
            let worst = battery
                .iter()
                .map(|r| r.violation() / r.agrad_u.min(r.agrad_z).max(f64::MIN_POSITIVE))
                .fold(0.0, f64::max);
            rows.push(ValidationRow::at_most(
                format!("mGrad variance ordering, {name}, delta {delta}"),
                worst,
                1e-4,
            ));
        }
    }
    Ok(rows)
}

/// Every one-dimensional grid kernel leaves π invariant and is reversible.
pub fn stationarity_checks() -> Result<Vec<ValidationRow>> {
    let mut rows = Vec::new();
    for (name, model) in scalar_models()? {
        let grid = model.grid(GRID_POINTS)?;
        let (mut stat, mut balance) = (0.0f64, 0.0f64);
        for kind in SamplerKind::ALL
            .into_iter()
            .filter(|k| *k != SamplerKind::Ellipt)
        {
            let chain =
                build_kernel_matrix(OracleKernel::Sampler { kind, delta: 1.0 }, &model, &grid)?;
            stat = stat.max(chain.stationarity_residual());
            balance = balance.max(chain.detailed_balance_residual());
        }
        rows.push(ValidationRow::at_most(
            format!("grid kernel stationarity, {name}"),
            stat,
            1e-6,
        ));
        rows.push(ValidationRow::at_most(
            format!("grid kernel detailed balance, {name}"),
            balance,
            1e-6,
        ));
    }
    Ok(rows)
}

/// The preconditioned marginal proposal with `S = C` is the pCNL proposal.
pub fn pcnl_equivalence_checks(seed: u64) -> Result<Vec<ValidationRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let c = random_symmetric(&mut rng, 3, 0.2, 3.0);
        let delta = 0.05 + 3.0 * rng.random::<f64>();
        let x = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let g = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let (m1, s1) = generalized_marginal_proposal(&c, &c, delta, &x, &g)?;
        let (m2, s2) = proposal_moments(SamplerKind::Pcnl, &c, delta, &x, &g)?;
        worst = worst.max((m1 - m2).amax()).max((s1 - s2).amax());
    }
    Ok(vec![ValidationRow::at_most(
        "preconditioned proposal with S = C is pCNL",
        worst,
        1e-10,
    )])
}

/// Geyer ESS on iid and AR(1) series of length 10⁵.
pub fn ess_checks(seed: u64) -> Result<Vec<ValidationRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = 100_000;
    let iid: Vec<f64> = (0..t).map(|_| rng.sample(StandardNormal)).collect();
    let ratio = ess_geyer(&iid)?.ess / t as f64;
    let mut ar = Vec::with_capacity(t);
    let mut v: f64 = rng.sample(StandardNormal);
    let innovation = (1.0f64 - 0.25).sqrt();
    for _ in 0..t {
        v = 0.5 * v + innovation * rng.sample::<f64, _>(StandardNormal);
        ar.push(v);
    }
    let expected = t as f64 / 3.0;
    let rel = (ess_geyer(&ar)?.ess - expected).abs() / expected;
    Ok(vec![
        ValidationRow {
            check: "ESS/T of iid series".into(),
            measured: ratio,
            tolerance: 0.1,
            passed: (0.9..=1.1).contains(&ratio),
        },
        ValidationRow::at_most("ESS of AR(1) series vs T/3", rel, 0.1),
    ])
}

fn gradient_error<T: TargetModel + ?Sized>(target: &T, x: &DVector<f64>) -> f64 {
    let (_, g) = target.evaluate(x);
    let fd = finite_difference_gradient(target, x, 1e-5);
    (0..x.len())
        .map(|i| (g[i] - fd[i]).abs() / g[i].abs().max(fd[i].abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Analytic gradients of all four likelihoods against central differences.
pub fn gradient_checks(seed: u64) -> Result<Vec<ValidationRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |n: usize, scale: f64| {
        DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
    };
    let y = normal(6, 1.0);
    let targets: Vec<(&str, Box<dyn TargetModel>, f64)> = vec![
        ("regression", Box::new(regression_target(y, 0.3)?), 1.0),
        (
            "logistic",
            Box::new(logistic_target(&[0, 1, 1, 0, 1, 0])?),
            2.0,
        ),
        (
            "cox",
            Box::new(cox_target(&[0, 3, 1, 7, 0, 2, 5, 1, 0], 1.0 / 9.0, 2.0)?),
            1.0,
        ),
        ("softmax", Box::new(softmax_target(&[0, 2, 1, 1], 3)?), 2.0),
    ];
    let mut rows = Vec::new();
    for (name, target, scale) in &targets {
        let worst = (0..20)
            .map(|_| gradient_error(target.as_ref(), &normal(target.dim(), *scale)))
            .fold(0.0, f64::max);
        rows.push(ValidationRow::at_most(
            format!("{name} gradient"),
            worst,
            1e-4,
        ));
    }
    Ok(rows)
}

/// Basis products per collected iteration minus the sampler's budget, and
/// factorizations after initialization.
pub fn budget_checks(seed: u64) -> Result<Vec<ValidationRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = random_symmetric(&mut rng, 8, 0.1, 2.0);
    let prior = eigendecompose_covariance(&c, 0.0)?;
    let y = DVector::from_fn(8, |_, _| rng.sample::<f64, _>(StandardNormal));
    let target = regression_target(y, 0.5)?;
    let mut rows = Vec::new();
    for kind in SamplerKind::ALL {
        let run = run_chain(&ChainConfig::new(kind, 100, 200, seed), &prior, &target)?;
        let per = run.collect_counters.matvecs as f64 / run.collect_iterations as f64;
        rows.push(ValidationRow::at_most(
            format!("{kind} matvecs per iteration"),
            (per - kind.matvecs_per_step() as f64).abs(),
            0.0,
        ));
        rows.push(ValidationRow::at_most(
            format!("{kind} factorizations while sampling"),
            run.total_counters.factorizations as f64,
            0.0,
        ));
    }
    Ok(rows)
}

/// All checks, deterministic given `seed`.
pub fn validation_suite(seed: u64) -> Result<Vec<ValidationRow>> {
    let mut rows = shrinkage_checks();
    rows.extend(reversibility_checks(seed)?);
    rows.extend(pcnl_equivalence_checks(seed)?);
    rows.extend(stationarity_checks()?);
    rows.extend(peskun_checks(GRID_POINTS)?);
    rows.extend(ess_checks(seed)?);
    rows.extend(gradient_checks(seed)?);
    rows.extend(budget_checks(seed)?);
    Ok(rows)
}

pub fn write_validation<W: Write>(rows: &[ValidationRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
