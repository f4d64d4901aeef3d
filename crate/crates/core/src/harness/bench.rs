//! Benchmark orchestration: build the model, run every (sampler, seed)
//! pair on a worker pool, and write the reports.

use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, KernelConfig};
use super::data::Dataset;
use crate::adaptation::{run_chain, tune_and_freeze, ChainConfig};
use crate::diagnostics::{
    aggregate, ess_per_coordinate, summarize_run, write_runs, write_table, AggregateSummary,
    RunFailure, RunReport, SCHEMA_VERSION,
};
use crate::error::{LgmError, Result};
use crate::hyper::{run_hyper_chain, HyperConfig, HyperMode, SquaredExponentialFamily};
use crate::samplers::{ChainState, SamplerKind};
use crate::spectral::SpectralPrior;
use crate::targets::{
    build_kernel, cox_target, grid_inputs, logistic_target, regression_target, softmax_target,
    KernelKind, KernelSpec, TargetModel,
};

/// A decomposed prior with its likelihood.
pub struct Problem {
    pub prior: SpectralPrior,
    pub target: Box<dyn TargetModel>,
    /// Present for squared-exponential models, which can learn θ.
    pub family: Option<SquaredExponentialFamily>,
    /// `(log σ_x, log ℓ)` per class at the configured kernel.
    pub theta0: Vec<f64>,
    pub setup_seconds: f64,
}

fn require(name: &'static str, v: Option<f64>) -> Result<f64> {
    v.ok_or_else(|| LgmError::Config {
        path: format!("kernel.{name}"),
        message: "missing".into(),
    })
}

/// Assemble the covariance and target for `data`, decomposing once.
pub fn build_problem(data: &Dataset, kernel: &KernelConfig) -> Result<Problem> {
    let start = Instant::now();
    let se = |inputs: &[Vec<f64>]| -> Result<(DMatrix<f64>, [f64; 2])> {
        let variance = require("variance", kernel.variance)?;
        let lengthscale2 = require("lengthscale2", kernel.lengthscale2)?;
        let c = build_kernel(&KernelSpec {
            kind: KernelKind::SquaredExponential {
                variance,
                lengthscale2,
            },
            inputs: inputs.to_vec(),
        })?;
        Ok((c, [0.5 * variance.ln(), 0.5 * lengthscale2.ln()]))
    };
    let family = |inputs: &[Vec<f64>], classes| SquaredExponentialFamily {
        inputs: inputs.to_vec(),
        classes,
        jitter: kernel.jitter,
    };
    let (prior, target, fam, theta0): (_, Box<dyn TargetModel>, _, _) = match data {
        Dataset::Regression { inputs, y, sigma2 } => {
            let (c, t) = se(inputs)?;
            (
                SpectralPrior::from_blocks(&[c], kernel.jitter)?,
                Box::new(regression_target(DVector::from_column_slice(y), *sigma2)?),
                Some(family(inputs, 1)),
                t.to_vec(),
            )
        }
        Dataset::Binary { inputs, labels } => {
            let (c, t) = se(inputs)?;
            (
                SpectralPrior::from_blocks(&[c], kernel.jitter)?,
                Box::new(logistic_target(labels)?),
                Some(family(inputs, 1)),
                t.to_vec(),
            )
        }
        Dataset::Multiclass {
            inputs,
            labels,
            classes,
        } => {
            let (c, t) = se(inputs)?;
            let blocks = vec![c; *classes];
            (
                SpectralPrior::from_blocks(&blocks, kernel.jitter)?,
                Box::new(softmax_target(labels, *classes)?),
                Some(family(inputs, *classes)),
                t.repeat(*classes),
            )
        }
        Dataset::Cox {
            counts,
            side,
            cell_area,
            offset,
        } => {
            let c = build_kernel(&KernelSpec {
                kind: KernelKind::CoxExponential {
                    variance: require("variance", kernel.variance)?,
                    beta: require("beta", kernel.beta)?,
                    scale_divisor: kernel.scale_divisor.unwrap_or(*side as f64),
                },
                inputs: grid_inputs(*side),
            })?;
            (
                SpectralPrior::from_blocks(&[c], kernel.jitter)?,
                Box::new(cox_target(counts, *cell_area, *offset)?),
                None,
                Vec::new(),
            )
        }
    };
    Ok(Problem {
        prior,
        target,
        family: fam,
        theta0,
        setup_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Stored chain output of one run.
#[derive(Debug, Clone)]
pub struct Trace {
    pub sampler: SamplerKind,
    pub seed: u64,
    pub column_names: Vec<String>,
    /// One row per retained sample.
    pub values: DMatrix<f64>,
    pub log_likelihood: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct BenchmarkResult {
    pub reports: Vec<RunReport>,
    pub failures: Vec<RunFailure>,
    pub traces: Vec<Trace>,
}

impl BenchmarkResult {
    pub fn summary(&self) -> AggregateSummary {
        AggregateSummary {
            schema_version: SCHEMA_VERSION,
            rows: aggregate(&self.reports),
            failures: self.failures.clone(),
        }
    }
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| LgmError::InvalidData(format!("thread pool: {e}")))
}

fn jobs(config: &ExperimentConfig) -> Vec<(SamplerKind, u64)> {
    config
        .samplers
        .iter()
        .flat_map(|&s| config.seeds.iter().map(move |&seed| (s, seed)))
        .collect()
}

fn run_fixed(
    config: &ExperimentConfig,
    problem: &Problem,
    kind: SamplerKind,
    seed: u64,
    keep: bool,
) -> Result<(RunReport, Option<Trace>)> {
    let mut cc = ChainConfig::new(kind, config.burn_in(), config.collect(), seed);
    cc.thin = config.thin;
    let run = run_chain(&cc, &problem.prior, &problem.target)?;
    let report = summarize_run(&run)?;
    let trace = keep.then(|| Trace {
        sampler: kind,
        seed,
        column_names: (1..=run.samples.ncols()).map(|i| format!("x{i}")).collect(),
        values: run.samples,
        log_likelihood: run.log_likelihood,
    });
    Ok((report, trace))
}

fn run_hyper(
    config: &ExperimentConfig,
    problem: &Problem,
    kind: SamplerKind,
    seed: u64,
    keep: bool,
) -> Result<(RunReport, Option<Trace>)> {
    let family = problem.family.as_ref().ok_or_else(|| LgmError::Config {
        path: "hyper".into(),
        message: "this model has no hyperparameter family".into(),
    })?;
    let mut hc = HyperConfig::new(config.hyper, problem.theta0.clone(), seed);
    hc.latent = kind;
    hc.updates_per_theta = config.updates_per_theta;
    hc.burn_in = config.burn_in();
    hc.collect = config.collect();
    hc.initial_delta = kind.default_initial_delta();
    let run = run_hyper_chain(&hc, family, &problem.target)?;
    // mixing is judged on θ, the slowest component
    let ess = ess_per_coordinate(&run.theta)?;
    let mut values: Vec<f64> = ess.iter().map(|e| e.ess).collect();
    values.sort_by(f64::total_cmp);
    let ess_min = values[0];
    let per_second = |secs: f64| {
        if secs > 0.0 {
            ess_min / secs
        } else {
            f64::INFINITY
        }
    };
    let mid = values.len() / 2;
    let ess_median = if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    };
    let report = RunReport {
        sampler: if config.hyper == HyperMode::Joint {
            SamplerKind::AGradZ
        } else {
            kind
        },
        seed,
        delta: kind.has_step_size().then_some(run.delta),
        kappa: Some(run.kappa),
        burn_seconds: run.burn_seconds,
        collect_seconds: run.collect_seconds,
        ess_min,
        ess_median,
        ess_max: values[values.len() - 1],
        min_ess_per_second: per_second(run.collect_seconds),
        min_ess_per_second_total: per_second(run.burn_seconds + run.collect_seconds),
        acceptance_rate: run.latent_acceptance,
        burn_acceptance_rate: f64::NAN,
        untunable: false,
        degenerate_coordinates: ess.iter().filter(|e| e.degenerate).count(),
        iterations: hc.collect * hc.updates_per_theta,
        matvecs: run.counters.matvecs,
        factorizations: run.counters.factorizations,
        likelihood_evals: run.counters.likelihood_evals,
    };
    let trace = keep.then(|| Trace {
        sampler: report.sampler,
        seed,
        column_names: (1..=run.theta.ncols())
            .map(|i| format!("theta{i}"))
            .collect(),
        values: run.theta,
        log_likelihood: run.log_likelihood,
    });
    Ok((report, trace))
}

/// Run every (sampler, seed) pair on `threads` workers. Results come back
/// in config order regardless of scheduling; a failed run is recorded and
/// does not affect the others.
pub fn run_benchmark(
    config: &ExperimentConfig,
    problem: &Problem,
    threads: usize,
) -> Result<BenchmarkResult> {
    let keep = config.save_traces;
    let outcomes: Vec<_> = pool(threads)?.install(|| {
        jobs(config)
            .into_par_iter()
            .map(|(kind, seed)| {
                let out = if config.hyper == HyperMode::Fixed {
                    run_fixed(config, problem, kind, seed, keep)
                } else {
                    run_hyper(config, problem, kind, seed, keep)
                };
                (kind, seed, out)
            })
            .collect()
    });
    let mut result = BenchmarkResult::default();
    for (kind, seed, out) in outcomes {
        match out {
            Ok((report, trace)) => {
                result.reports.push(report);
                result.traces.extend(trace);
            }
            Err(e) => {
                log::warn!("{kind} seed {seed} failed: {e}");
                result.failures.push(RunFailure {
                    sampler: kind,
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(result)
}

/// Frozen step size after burn-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRow {
    pub sampler: SamplerKind,
    pub seed: u64,
    pub delta: Option<f64>,
    pub burn_acceptance_rate: f64,
    pub untunable: bool,
}

/// Burn-in only: report the step size each (sampler, seed) settles on.
pub fn run_tuning(
    config: &ExperimentConfig,
    problem: &Problem,
    threads: usize,
) -> Result<Vec<TuneRow>> {
    pool(threads)?.install(|| {
        jobs(config)
            .into_par_iter()
            .map(|(kind, seed)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut state = ChainState::new(
                    DVector::zeros(problem.prior.dim()),
                    &problem.prior,
                    &problem.target,
                )?;
                let t = tune_and_freeze(
                    kind,
                    &mut state,
                    &problem.prior,
                    &problem.target,
                    config.burn_in(),
                    kind.default_initial_delta(),
                    kind.default_target_rate(),
                    &mut rng,
                )?;
                let hits = t.acceptance.iter().filter(|a| **a).count();
                Ok(TuneRow {
                    sampler: kind,
                    seed,
                    delta: t.delta,
                    burn_acceptance_rate: hits as f64 / t.acceptance.len() as f64,
                    untunable: t.untunable,
                })
            })
            .collect()
    })
}

pub fn write_tuning(dir: &Path, rows: &[TuneRow]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("tuning.csv"))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_trace(path: &Path, trace: &Trace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["row".to_string(), "log_likelihood".to_string()];
    header.extend(trace.column_names.iter().cloned());
    w.write_record(&header)?;
    for (r, ll) in trace.log_likelihood.iter().enumerate() {
        let mut rec = vec![r.to_string(), ll.to_string()];
        rec.extend(trace.values.row(r).iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Write `runs.csv`, `table.csv`, `summary.json`, the resolved config and,
/// when kept, one trace file per run under `traces/`.
pub fn write_outputs(
    dir: &Path,
    config: &ExperimentConfig,
    result: &BenchmarkResult,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_runs(&result.reports, fs::File::create(dir.join("runs.csv"))?)?;
    let summary = result.summary();
    write_table(&summary.rows, fs::File::create(dir.join("table.csv"))?)?;
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(config)? + "\n",
    )?;
    if !result.traces.is_empty() {
        let tdir = dir.join("traces");
        fs::create_dir_all(&tdir)?;
        for t in &result.traces {
            write_trace(
                &tdir.join(format!("{}_{}.csv", t.sampler.name(), t.seed)),
                t,
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::TIMING_COLUMNS;
    use crate::harness::config::parse_config_str;
    use crate::harness::data::resolve_dataset;

    fn config(extra: &str) -> ExperimentConfig {
        parse_config_str(&format!(
            r#"{{"model": "regression", "simulate": {{"n": 30, "sigma2": 0.5, "seed": 3}},
                "samplers": ["mgrad", "pcn"], "seeds": [1, 2], "burn_in": 200, "collect": 200{extra}}}"#
        ))
        .unwrap()
    }

    fn setup(cfg: &ExperimentConfig) -> Problem {
        let (data, kernel) = resolve_dataset(cfg).unwrap();
        build_problem(&data, &kernel).unwrap()
    }

    fn strip_timing(csv_text: &str) -> Vec<Vec<String>> {
        let mut r = csv::Reader::from_reader(csv_text.as_bytes());
        let header = r.headers().unwrap().clone();
        let keep: Vec<usize> = (0..header.len())
            .filter(|&i| !TIMING_COLUMNS.contains(&&header[i]))
            .collect();
        r.records()
            .map(|rec| {
                let rec = rec.unwrap();
                keep.iter().map(|&i| rec[i].to_string()).collect()
            })
            .collect()
    }

    #[test]
    fn single_run_gives_one_row() {
        let cfg = parse_config_str(
            r#"{"model": "regression", "simulate": {"n": 20, "sigma2": 1}, "samplers": ["mgrad"],
                "seeds": [1], "burn_in": 100, "collect": 100}"#,
        )
        .unwrap();
        let result = run_benchmark(&cfg, &setup(&cfg), 1).unwrap();
        assert_eq!(result.reports.len(), 1);
        assert_eq!(result.summary().rows.len(), 1);
        assert!(result.failures.is_empty());
    }

    #[test]
    fn outputs_are_reproducible_apart_from_timing() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config("");
        let problem = setup(&cfg);
        for (sub, threads) in [("a", 1), ("b", 2)] {
            let result = run_benchmark(&cfg, &problem, threads).unwrap();
            write_outputs(&dir.path().join(sub), &cfg, &result).unwrap();
        }
        let read = |s: &str| fs::read_to_string(dir.path().join(s).join("runs.csv")).unwrap();
        let (a, b) = (read("a"), read("b"));
        assert_eq!(strip_timing(&a), strip_timing(&b));
        assert_eq!(strip_timing(&a).len(), 4);
        let table = fs::read_to_string(dir.path().join("a/table.csv")).unwrap();
        assert!(table.starts_with("Method,Time(s),Step δ,\"ESS (Min, Med, Max)\",Min ESS/s (s.d.)"));
        let summary: AggregateSummary =
            serde_json::from_str(&fs::read_to_string(dir.path().join("a/summary.json")).unwrap())
                .unwrap();
        assert_eq!(summary.schema_version, SCHEMA_VERSION);
    }

    #[test]
    fn traces_are_written_when_requested() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config("");
        cfg.save_traces = true;
        cfg.thin = 4;
        cfg.collect = Some(400);
        let result = run_benchmark(&cfg, &setup(&cfg), 1).unwrap();
        assert!(result.failures.is_empty(), "{:?}", result.failures);
        write_outputs(dir.path(), &cfg, &result).unwrap();
        let text = fs::read_to_string(dir.path().join("traces/mGrad_1.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + 100);
    }

    #[test]
    fn failing_run_does_not_disturb_others() {
        let cfg = config("");
        let mut problem = setup(&cfg);
        // a target whose gradient is NaN at the start state
        struct Broken(usize);
        impl TargetModel for Broken {
            fn dim(&self) -> usize {
                self.0
            }
            fn evaluate(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
                (f64::NAN, DVector::zeros(x.len()))
            }
        }
        let good = run_benchmark(&cfg, &problem, 1).unwrap();
        problem.target = Box::new(Broken(30));
        let bad = run_benchmark(&cfg, &problem, 1).unwrap();
        assert_eq!(bad.failures.len(), 4);
        assert!(bad.reports.is_empty());
        assert_eq!(good.reports.len(), 4);
    }

    #[test]
    fn hyper_runs_report_theta_mixing() {
        let cfg = parse_config_str(
            r#"{"model": "binary", "simulate": {"n": 25}, "samplers": ["mgrad"], "seeds": [1],
                "burn_in": 150, "collect": 150, "hyper": "gibbs", "updates_per_theta": 2}"#,
        )
        .unwrap();
        let result = run_benchmark(&cfg, &setup(&cfg), 1).unwrap();
        let r = &result.reports[0];
        assert!(r.kappa.is_some());
        assert!(r.factorizations > 0);
        assert_eq!(r.iterations, 300);
    }

    #[test]
    fn tuning_reports_a_step_per_sampler() {
        let cfg = config("");
        let rows = run_tuning(&cfg, &setup(&cfg), 1).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.delta.is_some_and(|d| d > 0.0)));
    }

    #[test]
    fn multiclass_prior_has_one_block_per_class() {
        let cfg = parse_config_str(
            r#"{"model": "multiclass", "simulate": {"n": 15, "classes": 3}, "samplers": ["agrad-z"],
                "seeds": [1], "burn_in": 100, "collect": 100}"#,
        )
        .unwrap();
        let p = setup(&cfg);
        assert_eq!(p.prior.num_blocks(), 3);
        assert_eq!(p.prior.dim(), 45);
        assert_eq!(p.theta0.len(), 6);
    }
}
