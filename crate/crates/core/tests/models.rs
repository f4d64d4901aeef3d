use lgm_core::adaptation::{run_chain, ChainConfig};
use lgm_core::diagnostics::{ess_geyer, ess_per_coordinate};
use lgm_core::harness::{
    build_problem, parse_config_str, resolve_dataset, run_benchmark, simulate_dataset, ModelKind,
    SimulateSpec,
};
use lgm_core::hyper::{run_hyper_chain, HyperConfig, HyperMode, ThetaPrior};
use lgm_core::samplers::SamplerKind;
use nalgebra::DMatrix;

/// Column means with ESS-based standard errors.
fn means_and_errors(samples: &DMatrix<f64>) -> Vec<(f64, f64)> {
    let ess = ess_per_coordinate(samples).unwrap();
    let rows = samples.nrows() as f64;
    (0..samples.ncols())
        .map(|j| {
            let col = samples.column(j);
            let m = col.sum() / rows;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (rows - 1.0);
            (m, (v / ess[j].ess).sqrt())
        })
        .collect()
}

#[test]
fn softmax_joint_and_gibbs_agree_on_theta() {
    let sim = simulate_dataset(
        ModelKind::Multiclass,
        &SimulateSpec {
            n: Some(30),
            classes: Some(3),
            seed: Some(5),
            ..SimulateSpec::default()
        },
    )
    .unwrap();
    let problem = build_problem(&sim.dataset, &sim.manifest.kernel).unwrap();
    let family = problem.family.as_ref().unwrap();
    let traces: Vec<Vec<f64>> = [HyperMode::Joint, HyperMode::Gibbs]
        .into_iter()
        .map(|mode| {
            let mut cfg = HyperConfig::new(mode, problem.theta0.clone(), 9);
            cfg.theta_prior = ThetaPrior {
                mean: problem.theta0.clone(),
                variance: 1.0,
            };
            cfg.updates_per_theta = 5;
            cfg.burn_in = 1_000;
            cfg.collect = 6_000;
            let run = run_hyper_chain(&cfg, family, &problem.target).unwrap();
            assert_eq!(
                run.counters.factorizations,
                (cfg.burn_in + cfg.collect) as u64
            );
            assert!(run.theta_acceptance > 0.05 && run.theta_acceptance < 0.6);
            // θ of the first class: log σ_x
            run.theta.column(0).iter().copied().collect()
        })
        .collect();
    let stats: Vec<(f64, f64)> = traces
        .iter()
        .map(|t| {
            let n = t.len() as f64;
            let m = t.iter().sum::<f64>() / n;
            let v = t.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
            (m, (v / ess_geyer(t).unwrap().ess).sqrt())
        })
        .collect();
    let (a, b) = (stats[0], stats[1]);
    let se = (a.1 * a.1 + b.1 * b.1).sqrt();
    assert!((a.0 - b.0).abs() < 4.0 * se, "joint {a:?} vs gibbs {b:?}");
}

#[test]
fn logistic_posterior_agrees_across_samplers() {
    let sim = simulate_dataset(
        ModelKind::Binary,
        &SimulateSpec {
            n: Some(30),
            seed: Some(4),
            ..SimulateSpec::default()
        },
    )
    .unwrap();
    let problem = build_problem(&sim.dataset, &sim.manifest.kernel).unwrap();
    let summary = |kind| {
        let run = run_chain(
            &ChainConfig::new(kind, 2_000, 20_000, 1),
            &problem.prior,
            &problem.target,
        )
        .unwrap();
        means_and_errors(&run.samples)
    };
    let reference = summary(SamplerKind::Ellipt);
    for kind in [SamplerKind::MGrad, SamplerKind::AGradZ] {
        let got = summary(kind);
        for (j, (a, b)) in got.iter().zip(&reference).enumerate() {
            let se = (a.1 * a.1 + b.1 * b.1).sqrt();
            assert!(
                (a.0 - b.0).abs() < 4.5 * se,
                "{kind} coordinate {j}: {a:?} vs {b:?}"
            );
        }
    }
}

#[test]
fn cox_benchmark_runs_every_sampler() {
    let cfg = parse_config_str(
        r#"{"model": "cox", "simulate": {"grid": 8, "seed": 2},
            "samplers": ["agrad-z", "agrad-u", "mgrad", "pcn", "pcnl", "pmala", "ellipt"],
            "seeds": [1], "burn_in": 500, "collect": 500}"#,
    )
    .unwrap();
    let (data, kernel) = resolve_dataset(&cfg).unwrap();
    let problem = build_problem(&data, &kernel).unwrap();
    let result = run_benchmark(&cfg, &problem, 1).unwrap();
    assert!(result.failures.is_empty(), "{:?}", result.failures);
    assert_eq!(result.reports.len(), 7);
    for r in &result.reports {
        assert_eq!(r.factorizations, 0);
        assert_eq!(r.delta.is_some(), r.sampler.has_step_size());
        assert!(r.ess_min >= 1.0);
    }
}
