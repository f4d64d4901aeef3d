//! Experiment configuration: strict JSON with defaults filled in.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{LgmError, Result};
use crate::hyper::HyperMode;
use crate::samplers::SamplerKind;

/// Smallest allowed number of collected samples.
pub const MIN_COLLECT: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Regression,
    Cox,
    Binary,
    Multiclass,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Regression => "regression",
            ModelKind::Cox => "cox",
            ModelKind::Binary => "binary",
            ModelKind::Multiclass => "multiclass",
        }
    }
}

/// Which run lengths to use when the config leaves them out.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Short runs suited to a laptop.
    #[default]
    Desk,
    /// Long runs for publication-quality benchmarks.
    Full,
}

impl Protocol {
    /// `(burn_in, collect)` for `model` under `hyper`.
    pub fn run_lengths(self, model: ModelKind, hyper: HyperMode) -> (usize, usize) {
        match (self, model, hyper) {
            (Protocol::Desk, _, _) => (2000, 2000),
            (Protocol::Full, _, HyperMode::Gibbs | HyperMode::Joint) => (40_000, 5000),
            (Protocol::Full, ModelKind::Regression, _) => (10_000, 5000),
            (Protocol::Full, ModelKind::Cox, _) => (2000, 5000),
            (Protocol::Full, _, _) => (5000, 5000),
        }
    }
}

/// Kernel hyperparameters. Which fields apply depends on the model:
/// squared-exponential models use `variance` and `lengthscale2`, the Cox
/// model uses `variance`, `beta` and `scale_divisor`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub variance: Option<f64>,
    pub lengthscale2: Option<f64>,
    pub beta: Option<f64>,
    pub scale_divisor: Option<f64>,
    /// Added to the diagonal before decomposition.
    #[serde(default)]
    pub jitter: f64,
}

/// How to generate a synthetic dataset. Unset fields take model defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    /// Number of observations (regression and classification).
    pub n: Option<usize>,
    /// Side length of the Cox grid.
    pub grid: Option<usize>,
    pub sigma2: Option<f64>,
    pub input_dim: Option<usize>,
    /// Inputs lie in `[0, input_range]`.
    pub input_range: Option<f64>,
    pub classes: Option<usize>,
    pub variance: Option<f64>,
    pub lengthscale2: Option<f64>,
    pub beta: Option<f64>,
    pub cell_area: Option<f64>,
    pub offset: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    /// Dataset manifest (`.json`) or raw CSV.
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub simulate: Option<SimulateSpec>,
    #[serde(default)]
    pub kernel: Option<KernelConfig>,
    /// Noise variance for regression data read from CSV.
    #[serde(default)]
    pub sigma2: Option<f64>,
    /// Cox cell area for counts read from CSV.
    #[serde(default)]
    pub cell_area: Option<f64>,
    /// Cox intensity offset for counts read from CSV.
    #[serde(default)]
    pub offset: Option<f64>,
    pub samplers: Vec<SamplerKind>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default)]
    pub burn_in: Option<usize>,
    #[serde(default)]
    pub collect: Option<usize>,
    #[serde(default = "one")]
    pub thin: usize,
    /// Latent updates per hyperparameter update.
    #[serde(default = "ten")]
    pub updates_per_theta: usize,
    #[serde(default = "fixed")]
    pub hyper: HyperMode,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub save_traces: bool,
}

fn one() -> usize {
    1
}
fn ten() -> usize {
    10
}
fn fixed() -> HyperMode {
    HyperMode::Fixed
}

impl ExperimentConfig {
    pub fn burn_in(&self) -> usize {
        self.burn_in
            .unwrap_or_else(|| self.protocol.run_lengths(self.model, self.hyper).0)
    }

    pub fn collect(&self) -> usize {
        self.collect
            .unwrap_or_else(|| self.protocol.run_lengths(self.model, self.hyper).1)
    }

    /// Fill defaults in place so that the config serializes fully resolved.
    pub fn resolve(&mut self) {
        self.burn_in = Some(self.burn_in());
        self.collect = Some(self.collect());
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| LgmError::Config {
            path: field.to_string(),
            message,
        };
        if self.samplers.is_empty() {
            return Err(bad("samplers", "must name at least one sampler".into()));
        }
        if self.seeds.is_empty() {
            return Err(bad("seeds", "must list at least one seed".into()));
        }
        if self.collect() < MIN_COLLECT {
            return Err(bad("collect", format!("must be at least {MIN_COLLECT}")));
        }
        if self.burn_in() < crate::adaptation::MIN_BURN_IN {
            return Err(bad(
                "burn_in",
                format!("must be at least {}", crate::adaptation::MIN_BURN_IN),
            ));
        }
        if self.thin == 0 || self.collect() / self.thin < MIN_COLLECT {
            return Err(bad(
                "thin",
                format!("must be positive and keep at least {MIN_COLLECT} samples"),
            ));
        }
        if self.updates_per_theta == 0 {
            return Err(bad("updates_per_theta", "must be positive".into()));
        }
        match (&self.data, &self.simulate) {
            (Some(_), Some(_)) => {
                return Err(bad(
                    "data",
                    "give either `data` or `simulate`, not both".into(),
                ))
            }
            (None, None) => return Err(bad("data", "give either `data` or `simulate`".into())),
            _ => {}
        }
        if self.model == ModelKind::Cox && self.hyper != HyperMode::Fixed {
            return Err(bad(
                "hyper",
                "the Cox model only runs with fixed hyperparameters".into(),
            ));
        }
        if self.hyper != HyperMode::Fixed && self.samplers.contains(&SamplerKind::Ellipt) {
            return Err(bad(
                "samplers",
                "Ellipt has no step size to pair with θ moves".into(),
            ));
        }
        // external data carries no generating values, so the kernel must be given
        if self.data.as_ref().is_some_and(|p| !is_manifest(p)) {
            let k = self.kernel.as_ref();
            let missing = match self.model {
                ModelKind::Cox => k.is_none_or(|k| k.variance.is_none() || k.beta.is_none()),
                _ => k.is_none_or(|k| k.variance.is_none() || k.lengthscale2.is_none()),
            };
            if missing {
                return Err(bad(
                    "kernel",
                    "hyperparameters are required for CSV data".into(),
                ));
            }
            if self.model == ModelKind::Regression && self.sigma2.is_none() {
                return Err(bad("sigma2", "required for regression CSV data".into()));
            }
        }
        if let Some(k) = &self.kernel {
            for (name, v) in [
                ("kernel.variance", k.variance),
                ("kernel.lengthscale2", k.lengthscale2),
                ("kernel.beta", k.beta),
                ("kernel.scale_divisor", k.scale_divisor),
            ] {
                if let Some(v) = v {
                    if !(v > 0.0) || !v.is_finite() {
                        return Err(bad(name, format!("must be positive, got {v}")));
                    }
                }
            }
            if !(k.jitter >= 0.0) {
                return Err(bad("kernel.jitter", "must be non-negative".into()));
            }
        }
        Ok(())
    }
}

pub(crate) fn is_manifest(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Parse and validate a config from JSON text.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| LgmError::Config {
        path: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    cfg.resolve();
    Ok(cfg)
}

/// Read, parse and validate a config file. A relative `data` path is taken
/// relative to the config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut cfg = parse_config_str(&text).map_err(|e| match e {
        LgmError::Config { path: p, message } => LgmError::Config {
            path: format!("{}: {p}", path.display()),
            message,
        },
        other => other,
    })?;
    if let (Some(data), Some(dir)) = (&cfg.data, path.parent()) {
        if data.is_relative() {
            cfg.data = Some(dir.join(data));
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"model": "regression", "simulate": {"n": 200, "sigma2": 1}, "samplers": ["mgrad"], "seeds": [1]}"#;

    #[test]
    fn minimal_config_gets_desk_defaults() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        assert_eq!(cfg.burn_in, Some(2000));
        assert_eq!(cfg.collect, Some(2000));
        assert_eq!(cfg.thin, 1);
        assert_eq!(cfg.updates_per_theta, 10);
        assert_eq!(cfg.hyper, HyperMode::Fixed);
        assert_eq!(cfg.samplers, vec![SamplerKind::MGrad]);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = MINIMAL.replace(r#""seeds": [1]"#, r#""seeds": [1], "stepsize": 0.1"#);
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("stepsize"), "{err}");
        let nested = MINIMAL.replace(r#""sigma2": 1"#, r#""sigma2": 1, "noise": 2"#);
        assert!(parse_config_str(&nested)
            .unwrap_err()
            .to_string()
            .contains("noise"));
    }

    #[test]
    fn full_protocol_run_lengths() {
        let cox = r#"{"model": "cox", "simulate": {"grid": 16}, "samplers": ["mGrad"], "seeds": [1], "protocol": "full"}"#;
        let cfg = parse_config_str(cox).unwrap();
        assert_eq!((cfg.burn_in(), cfg.collect()), (2000, 5000));
        let reg = MINIMAL.replace(r#""seeds": [1]"#, r#""seeds": [1], "protocol": "full""#);
        let cfg = parse_config_str(&reg).unwrap();
        assert_eq!((cfg.burn_in(), cfg.collect()), (10_000, 5000));
        let explicit = reg.replace(r#""protocol""#, r#""burn_in": 300, "protocol""#);
        assert_eq!(parse_config_str(&explicit).unwrap().burn_in(), 300);
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let cases = [
            (MINIMAL.replace("[1]", "[]"), "seeds"),
            (
                MINIMAL.replace(r#""seeds": [1]"#, r#""seeds": [1], "collect": 50"#),
                "collect",
            ),
            (
                MINIMAL.replace(r#""seeds": [1]"#, r#""seeds": [1], "burn_in": 10"#),
                "burn_in",
            ),
            (MINIMAL.replace(r#"["mgrad"]"#, "[]"), "samplers"),
            (
                MINIMAL.replace(
                    r#""simulate": {"n": 200, "sigma2": 1}"#,
                    r#""data": "y.csv""#,
                ),
                "kernel",
            ),
            (
                MINIMAL.replace(
                    r#""seeds": [1]"#,
                    r#""seeds": [1], "kernel": {"variance": -1}"#,
                ),
                "kernel.variance",
            ),
        ];
        for (text, field) in cases {
            match parse_config_str(&text) {
                Err(LgmError::Config { path, .. }) => assert_eq!(path, field),
                other => panic!("{field}: {other:?}"),
            }
        }
    }

    #[test]
    fn unknown_sampler_is_rejected() {
        let text = MINIMAL.replace("mgrad", "hmc");
        assert!(parse_config_str(&text).is_err());
    }

    #[test]
    fn relative_data_path_follows_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.json");
        std::fs::write(
            &path,
            r#"{"model": "cox", "data": "sim/manifest.json", "samplers": ["pCN"], "seeds": [3]}"#,
        )
        .unwrap();
        let cfg = parse_config(&path).unwrap();
        assert_eq!(cfg.data.unwrap(), dir.path().join("sim/manifest.json"));
    }
}
