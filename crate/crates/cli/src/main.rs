use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lgm_core::diagnostics::aggregate;
use lgm_core::harness::{
    build_problem, down_sample_cox, down_sample_manifest, parse_config, parse_simulation_str,
    read_counts_csv, resolve_dataset, run_benchmark, run_tuning, simulate_dataset,
    validation_suite, write_counts_csv, write_dataset, write_outputs, write_tuning,
    write_validation, ExperimentConfig,
};

#[derive(Parser)]
#[command(
    name = "lgm",
    version,
    about = "Samplers and benchmarks for latent Gaussian models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed; replaces the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory or file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = "LGM_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark and write runs.csv, table.csv and summary.json.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Keep per-run traces.
        #[arg(long)]
        trace: bool,
    },
    /// Draw a synthetic dataset with its manifest.
    Simulate {
        spec: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Burn in only and report the step size each sampler settles on.
    Tune {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the reference checks; exits nonzero if any fails.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Merge 2×2 blocks of a Cox count grid (CSV or dataset manifest).
    Downsample {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn threads(common: &Common) -> usize {
    common
        .threads
        .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
        .unwrap_or(1)
}

fn load_config(path: &Path, common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = parse_config(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: Option<&ExperimentConfig>, fallback: &str) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output.clone()))
        .unwrap_or_else(|| PathBuf::from(fallback))
}

fn run(config: &Path, common: &Common, trace: bool) -> Result<ExitCode> {
    let mut cfg = load_config(config, common)?;
    cfg.save_traces |= trace;
    let (data, kernel) = resolve_dataset(&cfg)?;
    let problem = build_problem(&data, &kernel)?;
    log::info!(
        "{} model, n = {}, decomposed in {:.2}s",
        cfg.model.name(),
        problem.prior.dim(),
        problem.setup_seconds
    );
    let result = run_benchmark(&cfg, &problem, threads(common))?;
    let dir = out_dir(common, Some(&cfg), "lgm-out");
    write_outputs(&dir, &cfg, &result)?;
    for row in aggregate(&result.reports) {
        println!(
            "{:8} δ={:<10} ESS min/med/max {:.1}/{:.1}/{:.1}  min ESS/s {:.2} ({:.2})",
            row.sampler.name(),
            row.delta.map_or("-".to_string(), |d| format!("{d:.4}")),
            row.ess_min,
            row.ess_median,
            row.ess_max,
            row.min_ess_per_second,
            row.min_ess_per_second_sd,
        );
    }
    for f in &result.failures {
        eprintln!("failed: {} seed {}: {}", f.sampler, f.seed, f.error);
    }
    println!("wrote {}", dir.display());
    Ok(if result.reports.is_empty() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn simulate(spec: &Path, common: &Common) -> Result<ExitCode> {
    let text = fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let (model, mut request) = parse_simulation_str(&text)?;
    if common.seed.is_some() {
        request.seed = common.seed;
    }
    let sim = simulate_dataset(model, &request)?;
    let manifest = write_dataset(&out_dir(common, None, "lgm-data"), &sim)?;
    println!("wrote {}", manifest.display());
    Ok(ExitCode::SUCCESS)
}

fn tune(config: &Path, common: &Common) -> Result<ExitCode> {
    let cfg = load_config(config, common)?;
    let (data, kernel) = resolve_dataset(&cfg)?;
    let problem = build_problem(&data, &kernel)?;
    let rows = run_tuning(&cfg, &problem, threads(common))?;
    for r in &rows {
        println!(
            "{:8} seed {:<4} δ={:<10} burn-in acceptance {:.3}{}",
            r.sampler.name(),
            r.seed,
            r.delta.map_or("-".to_string(), |d| format!("{d:.4}")),
            r.burn_acceptance_rate,
            if r.untunable { "  (untunable)" } else { "" }
        );
    }
    let dir = out_dir(common, Some(&cfg), "lgm-out");
    write_tuning(&dir, &rows)?;
    println!("wrote {}", dir.join("tuning.csv").display());
    Ok(ExitCode::SUCCESS)
}

fn validate(common: &Common) -> Result<ExitCode> {
    let rows = validation_suite(common.seed.unwrap_or(1))?;
    for r in &rows {
        println!(
            "{} {:<50} {:.3e} (tolerance {:.1e})",
            if r.passed { "PASS" } else { "FAIL" },
            r.check,
            r.measured,
            r.tolerance
        );
    }
    if let Some(out) = &common.out {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        write_validation(&rows, fs::File::create(out)?)?;
    }
    let failed = rows.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed", rows.len());
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn downsample(input: &Path, common: &Common) -> Result<ExitCode> {
    let is_json = input
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let dir = common
            .out
            .clone()
            .context("--out is required when down-sampling a manifest")?;
        let manifest = down_sample_manifest(input, &dir)?;
        println!("wrote {}", manifest.display());
        return Ok(ExitCode::SUCCESS);
    }
    let (counts, side) = read_counts_csv(input)?;
    if side % 2 == 1 {
        bail!("grid side {side} is odd and cannot be halved");
    }
    let coarse = down_sample_cox(&counts, side)?;
    let out = common.out.clone().unwrap_or_else(|| {
        let stem = input
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("counts");
        input.with_file_name(format!("{stem}_{}x{}.csv", side / 2, side / 2))
    });
    write_counts_csv(&out, &coarse, side / 2)?;
    let half = side / 2;
    println!(
        "wrote {} ({side}x{side} → {half}x{half}; cell area is four times larger)",
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run {
            config,
            common,
            trace,
        } => run(config, common, *trace),
        Command::Simulate { spec, common } => simulate(spec, common),
        Command::Tune { config, common } => tune(config, common),
        Command::Validate { common } => validate(common),
        Command::Downsample { input, common } => downsample(input, common),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
