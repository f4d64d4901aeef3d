//! Autocovariance, effective sample size and benchmark summaries.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::adaptation::ChainRun;
use crate::error::{LgmError, Result};
use crate::samplers::SamplerKind;

/// Largest lag the estimators look at.
pub const MAX_LAG: usize = 10_000;

/// Version tag written into JSON summaries.
pub const SCHEMA_VERSION: u32 = 1;

/// Biased (`1/T`-normalised) autocovariance at lags `0..=min(T−1, MAX_LAG)`.
/// A constant series yields all zeros.
pub fn autocovariance(series: &[f64]) -> Result<Vec<f64>> {
    let t = series.len();
    if t < 10 {
        return Err(LgmError::SeriesTooShort {
            needed: 10,
            found: t,
        });
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(LgmError::NonFinite);
    }
    let mean = series.iter().sum::<f64>() / t as f64;
    let len = (2 * t).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = series
        .iter()
        .map(|&v| Complex::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(len)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for v in buf.iter_mut() {
        *v = Complex::new(v.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let max_lag = (t - 1).min(MAX_LAG);
    let scale = 1.0 / (len as f64 * t as f64);
    Ok(buf[..=max_lag].iter().map(|v| v.re * scale).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssEstimate {
    pub ess: f64,
    /// The series had zero variance; `ess` is then reported as `T`.
    pub degenerate: bool,
}

/// Effective sample size from the initial monotone sequence estimator:
/// paired autocorrelations `Γ_m = ρ(2m) + ρ(2m+1)` are truncated at the
/// first non-positive pair and forced nonincreasing, then
/// `ESS = T / (−1 + 2ΣΓ_m)`, clipped to `[1, T]`.
pub fn ess_geyer(series: &[f64]) -> Result<EssEstimate> {
    let t = series.len();
    if t < 100 {
        return Err(LgmError::SeriesTooShort {
            needed: 100,
            found: t,
        });
    }
    let acov = autocovariance(series)?;
    let var = acov[0];
    let spread = series.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if var <= f64::EPSILON * spread * spread || var == 0.0 {
        return Ok(EssEstimate {
            ess: t as f64,
            degenerate: true,
        });
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < acov.len() {
        let pair = (acov[2 * m] + acov[2 * m + 1]) / var;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        m += 1;
    }
    let tau = -1.0 + 2.0 * sum;
    let ess = if tau > 0.0 { t as f64 / tau } else { t as f64 };
    Ok(EssEstimate {
        ess: ess.clamp(1.0, t as f64),
        degenerate: false,
    })
}

/// ESS of every column of a `T × n` sample matrix.
pub fn ess_per_coordinate(samples: &DMatrix<f64>) -> Result<Vec<EssEstimate>> {
    (0..samples.ncols())
        .into_par_iter()
        .map(|j| {
            let col: Vec<f64> = samples.column(j).iter().copied().collect();
            ess_geyer(&col)
        })
        .collect()
}

/// Per-sampler benchmark record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub sampler: SamplerKind,
    pub seed: u64,
    pub delta: Option<f64>,
    pub kappa: Option<f64>,
    pub burn_seconds: f64,
    pub collect_seconds: f64,
    pub ess_min: f64,
    pub ess_median: f64,
    pub ess_max: f64,
    /// `ess_min / collect_seconds`: the headline metric.
    pub min_ess_per_second: f64,
    /// `ess_min / (burn_seconds + collect_seconds)`.
    pub min_ess_per_second_total: f64,
    pub acceptance_rate: f64,
    pub burn_acceptance_rate: f64,
    pub untunable: bool,
    pub degenerate_coordinates: usize,
    pub iterations: usize,
    pub matvecs: u64,
    pub factorizations: u64,
    pub likelihood_evals: u64,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Reduce a finished chain to its report row.
pub fn summarize_run(run: &ChainRun) -> Result<RunReport> {
    let ess = ess_per_coordinate(&run.samples)?;
    let degenerate = ess.iter().filter(|e| e.degenerate).count();
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
    Ok(RunReport {
        sampler: run.kind,
        seed: run.seed,
        delta: run.delta,
        kappa: None,
        burn_seconds: run.burn_seconds,
        collect_seconds: run.collect_seconds,
        ess_min,
        ess_median: median(&values),
        ess_max: values[values.len() - 1],
        min_ess_per_second: per_second(run.collect_seconds),
        min_ess_per_second_total: per_second(run.burn_seconds + run.collect_seconds),
        acceptance_rate: run.collect_acceptance,
        burn_acceptance_rate: run.burn_acceptance,
        untunable: run.untunable,
        degenerate_coordinates: degenerate,
        iterations: run.collect_iterations,
        matvecs: run.total_counters.matvecs,
        factorizations: run.total_counters.factorizations,
        likelihood_evals: run.total_counters.likelihood_evals,
    })
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Seed-averaged summary of one sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub sampler: SamplerKind,
    pub runs: usize,
    pub collect_seconds: f64,
    pub delta: Option<f64>,
    pub ess_min: f64,
    pub ess_median: f64,
    pub ess_max: f64,
    pub min_ess_per_second: f64,
    pub min_ess_per_second_sd: f64,
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub schema_version: u32,
    pub rows: Vec<AggregateRow>,
    pub failures: Vec<RunFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub sampler: SamplerKind,
    pub seed: u64,
    pub error: String,
}

/// Mean across seeds per sampler, keeping the samplers in first-seen order.
pub fn aggregate(reports: &[RunReport]) -> Vec<AggregateRow> {
    let mut order: Vec<SamplerKind> = Vec::new();
    for r in reports {
        if !order.contains(&r.sampler) {
            order.push(r.sampler);
        }
    }
    order
        .into_iter()
        .map(|kind| {
            let group: Vec<&RunReport> = reports.iter().filter(|r| r.sampler == kind).collect();
            let col = |f: fn(&RunReport) -> f64| group.iter().map(|r| f(r)).collect::<Vec<_>>();
            let deltas: Vec<f64> = group.iter().filter_map(|r| r.delta).collect();
            let (eps, eps_sd) = mean_sd(&col(|r| r.min_ess_per_second));
            AggregateRow {
                sampler: kind,
                runs: group.len(),
                collect_seconds: mean_sd(&col(|r| r.collect_seconds)).0,
                delta: (!deltas.is_empty()).then(|| mean_sd(&deltas).0),
                ess_min: mean_sd(&col(|r| r.ess_min)).0,
                ess_median: mean_sd(&col(|r| r.ess_median)).0,
                ess_max: mean_sd(&col(|r| r.ess_max)).0,
                min_ess_per_second: eps,
                min_ess_per_second_sd: eps_sd,
                acceptance_rate: mean_sd(&col(|r| r.acceptance_rate)).0,
            }
        })
        .collect()
}

/// Column headers of the summary table.
pub const TABLE_HEADER: [&str; 5] = [
    "Method",
    "Time(s)",
    "Step δ",
    "ESS (Min, Med, Max)",
    "Min ESS/s (s.d.)",
];

fn format_delta(delta: Option<f64>) -> String {
    match delta {
        None => "-".to_string(),
        Some(d) if d < 0.001 => "< 0.001".to_string(),
        Some(d) => format!("{d:.3}"),
    }
}

/// Write the seed-averaged table.
pub fn write_table<W: Write>(rows: &[AggregateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TABLE_HEADER)?;
    for r in rows {
        w.write_record([
            r.sampler.name().to_string(),
            format!("{:.1}", r.collect_seconds),
            format_delta(r.delta),
            format!("({:.1}, {:.1}, {:.1})", r.ess_min, r.ess_median, r.ess_max),
            format!(
                "{:.2} ({:.2})",
                r.min_ess_per_second, r.min_ess_per_second_sd
            ),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns of the per-run CSV whose values depend on wall-clock time.
pub const TIMING_COLUMNS: [&str; 4] = [
    "burn_seconds",
    "collect_seconds",
    "min_ess_per_second",
    "min_ess_per_second_total",
];

/// One row per (sampler, seed).
pub fn write_runs<W: Write>(reports: &[RunReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn white_noise(t: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..t).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn ar1(t: usize, rho: f64, seed: u64) -> Vec<f64> {
        let noise = white_noise(t, seed);
        let mut x = vec![0.0; t];
        x[0] = noise[0] / (1.0 - rho * rho).sqrt();
        for i in 1..t {
            x[i] = rho * x[i - 1] + noise[i];
        }
        x
    }

    #[test]
    fn constant_series_has_zero_autocovariance() {
        let acov = autocovariance(&[3.0; 50]).unwrap();
        assert!(acov.iter().all(|&v| v == 0.0));
        let e = ess_geyer(&[3.0; 200]).unwrap();
        assert!(e.degenerate);
        assert_eq!(e.ess, 200.0);
    }

    #[test]
    fn alternating_series_lag_one() {
        let s: Vec<f64> = (0..10)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let acov = autocovariance(&s).unwrap();
        assert!((acov[0] - 1.0).abs() < 1e-12);
        assert!((acov[1] + 0.9).abs() < 1e-12);
    }

    #[test]
    fn matches_direct_sum() {
        let s = white_noise(300, 3);
        let acov = autocovariance(&s).unwrap();
        let mean = s.iter().sum::<f64>() / 300.0;
        for k in [0, 1, 7, 150, 299] {
            let direct: f64 = (0..300 - k)
                .map(|t| (s[t] - mean) * (s[t + k] - mean))
                .sum::<f64>()
                / 300.0;
            assert!((acov[k] - direct).abs() < 1e-12, "lag {k}");
        }
    }

    #[test]
    fn white_noise_lag_one_is_small() {
        let t = 100_000;
        let acov = autocovariance(&white_noise(t, 4)).unwrap();
        assert!((acov[1] / acov[0]).abs() < 3.0 / (t as f64).sqrt());
        assert_eq!(acov.len(), MAX_LAG + 1);
    }

    #[test]
    fn iid_ess_is_near_length() {
        let t = 100_000;
        let e = ess_geyer(&white_noise(t, 5)).unwrap();
        let ratio = e.ess / t as f64;
        assert!((0.9..=1.1).contains(&ratio), "{ratio}");
    }

    #[test]
    fn ar1_ess_matches_formula() {
        let t = 100_000;
        let e = ess_geyer(&ar1(t, 0.5, 6)).unwrap();
        let expected = t as f64 / 3.0;
        assert!((e.ess / expected - 1.0).abs() < 0.1, "{}", e.ess);
    }

    #[test]
    fn ess_is_affine_invariant_and_deterministic() {
        let s = ar1(5000, 0.8, 7);
        let a = ess_geyer(&s).unwrap().ess;
        let scaled: Vec<f64> = s.iter().map(|v| 3.0 * v - 11.0).collect();
        let b = ess_geyer(&scaled).unwrap().ess;
        assert!((a - b).abs() / a < 1e-9);
        assert_eq!(a.to_bits(), ess_geyer(&s).unwrap().ess.to_bits());
    }

    #[test]
    fn short_series_is_an_error() {
        assert!(autocovariance(&[1.0; 5]).is_err());
        assert!(ess_geyer(&[1.0; 50]).is_err());
    }

    #[test]
    fn table_header_and_row() {
        let rows = vec![AggregateRow {
            sampler: SamplerKind::Pcnl,
            runs: 10,
            collect_seconds: 23.94,
            delta: Some(0.0004),
            ess_min: 8.7,
            ess_median: 54.4,
            ess_max: 208.6,
            min_ess_per_second: 0.36,
            min_ess_per_second_sd: 0.13,
            acceptance_rate: 0.55,
        }];
        let mut buf = Vec::new();
        write_table(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "Method,Time(s),Step δ,\"ESS (Min, Med, Max)\",Min ESS/s (s.d.)"
        );
        assert_eq!(
            lines.next().unwrap(),
            "pCNL,23.9,< 0.001,\"(8.7, 54.4, 208.6)\",0.36 (0.13)"
        );
    }

    #[test]
    fn aggregate_keeps_order_and_sd() {
        let base = RunReport {
            sampler: SamplerKind::MGrad,
            seed: 0,
            delta: Some(1.0),
            kappa: None,
            burn_seconds: 1.0,
            collect_seconds: 1.0,
            ess_min: 10.0,
            ess_median: 20.0,
            ess_max: 30.0,
            min_ess_per_second: 10.0,
            min_ess_per_second_total: 5.0,
            acceptance_rate: 0.5,
            burn_acceptance_rate: 0.5,
            untunable: false,
            degenerate_coordinates: 0,
            iterations: 100,
            matvecs: 0,
            factorizations: 0,
            likelihood_evals: 0,
        };
        let mut other = base.clone();
        other.min_ess_per_second = 14.0;
        let mut pcn = base.clone();
        pcn.sampler = SamplerKind::Pcn;
        let rows = aggregate(&[pcn, base, other]);
        assert_eq!(rows[0].sampler, SamplerKind::Pcn);
        assert_eq!(rows[1].runs, 2);
        assert!((rows[1].min_ess_per_second - 12.0).abs() < 1e-12);
        assert!((rows[1].min_ess_per_second_sd - 8f64.sqrt()).abs() < 1e-12);
    }
}
