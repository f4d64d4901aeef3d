//! Datasets: simulation from the generative models, CSV input and output,
//! and Cox grid coarsening.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::{is_manifest, ExperimentConfig, KernelConfig, ModelKind, SimulateSpec};
use crate::error::{LgmError, Result};
use crate::spectral::eigendecompose_covariance;
use crate::targets::{build_kernel, grid_inputs, standardize_columns, KernelKind, KernelSpec};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Observed data of one of the four models.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Regression {
        inputs: Vec<Vec<f64>>,
        y: Vec<f64>,
        sigma2: f64,
    },
    Cox {
        /// Row-major `side × side` counts.
        counts: Vec<i64>,
        side: usize,
        cell_area: f64,
        offset: f64,
    },
    Binary {
        inputs: Vec<Vec<f64>>,
        labels: Vec<u8>,
    },
    Multiclass {
        inputs: Vec<Vec<f64>>,
        /// 0-based class of each example.
        labels: Vec<usize>,
        classes: usize,
    },
}

impl Dataset {
    pub fn model(&self) -> ModelKind {
        match self {
            Dataset::Regression { .. } => ModelKind::Regression,
            Dataset::Cox { .. } => ModelKind::Cox,
            Dataset::Binary { .. } => ModelKind::Binary,
            Dataset::Multiclass { .. } => ModelKind::Multiclass,
        }
    }

    /// Latent dimension.
    pub fn dim(&self) -> usize {
        match self {
            Dataset::Regression { y, .. } => y.len(),
            Dataset::Cox { counts, .. } => counts.len(),
            Dataset::Binary { labels, .. } => labels.len(),
            Dataset::Multiclass {
                labels, classes, ..
            } => labels.len() * classes,
        }
    }
}

/// Sidecar describing a dataset file and how it was made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub model: ModelKind,
    pub data_file: String,
    #[serde(default)]
    pub latent_file: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub sigma2: Option<f64>,
    #[serde(default)]
    pub grid: Option<usize>,
    #[serde(default)]
    pub cell_area: Option<f64>,
    #[serde(default)]
    pub offset: Option<f64>,
    #[serde(default)]
    pub classes: Option<usize>,
    /// Generating kernel hyperparameters.
    pub kernel: KernelConfig,
}

/// A simulated dataset with the latent field that produced it.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub dataset: Dataset,
    pub latent: Vec<f64>,
    pub manifest: Manifest,
}

/// Cox defaults: `β = 1/33`, `σ_x² = 1.91`, `v = log 126 − σ_x²/2`.
pub const COX_BETA: f64 = 1.0 / 33.0;
pub const COX_VARIANCE: f64 = 1.91;

pub fn cox_default_offset(variance: f64) -> f64 {
    126f64.ln() - 0.5 * variance
}

/// Draw `x ~ N(0, C)` through the eigendecomposition of `C`.
fn draw_gaussian<R: Rng + ?Sized>(c: &DMatrix<f64>, rng: &mut R) -> Result<Vec<f64>> {
    let prior = eigendecompose_covariance(c, 0.0)?;
    let eta = DVector::from_fn(c.nrows(), |_, _| rng.sample(StandardNormal));
    let x = prior.dense_function(|g| g.max(0.0).sqrt()) * eta;
    Ok(x.iter().copied().collect())
}

fn se_kernel(variance: f64, lengthscale2: f64, inputs: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    build_kernel(&KernelSpec {
        kind: KernelKind::SquaredExponential {
            variance,
            lengthscale2,
        },
        inputs: inputs.to_vec(),
    })
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Regression inputs: equispaced on `[0, range]` in one dimension, uniform
/// on `[0, range]^d` otherwise.
fn regression_inputs<R: Rng + ?Sized>(
    n: usize,
    d: usize,
    range: f64,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    if d == 1 {
        let step = if n > 1 { range / (n - 1) as f64 } else { 0.0 };
        (0..n).map(|i| vec![i as f64 * step]).collect()
    } else {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random::<f64>() * range).collect())
            .collect()
    }
}

/// Classification inputs: standard normal features, then standardized.
fn classification_inputs<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    standardize_columns(&mut rows);
    rows
}

fn positive(name: &'static str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(LgmError::InvalidHyperparameter { name, value: v })
    }
}

/// Draw a latent field from the prior and observations given it.
pub fn simulate_dataset(model: ModelKind, spec: &SimulateSpec) -> Result<Simulated> {
    let seed = spec.seed.unwrap_or(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        model,
        data_file: "data.csv".into(),
        latent_file: Some("latent.csv".into()),
        seed: Some(seed),
        sigma2: None,
        grid: None,
        cell_area: None,
        offset: None,
        classes: None,
        kernel: KernelConfig::default(),
    };
    let (dataset, latent) = match model {
        ModelKind::Regression => {
            let n = spec.n.unwrap_or(200);
            let sigma2 = positive("sigma2", spec.sigma2.unwrap_or(1.0))?;
            let variance = positive("variance", spec.variance.unwrap_or(1.0))?;
            let lengthscale2 = positive("lengthscale2", spec.lengthscale2.unwrap_or(1.0))?;
            let d = spec.input_dim.unwrap_or(1).max(1);
            let inputs = regression_inputs(n, d, spec.input_range.unwrap_or(10.0), &mut rng);
            let x = draw_gaussian(&se_kernel(variance, lengthscale2, &inputs)?, &mut rng)?;
            let sd = sigma2.sqrt();
            let y = x
                .iter()
                .map(|xi| xi + sd * rng.sample::<f64, _>(StandardNormal))
                .collect();
            manifest.sigma2 = Some(sigma2);
            manifest.kernel = KernelConfig {
                variance: Some(variance),
                lengthscale2: Some(lengthscale2),
                ..KernelConfig::default()
            };
            (Dataset::Regression { inputs, y, sigma2 }, x)
        }
        ModelKind::Cox => {
            let g = spec.grid.unwrap_or(16);
            if g == 0 {
                return Err(LgmError::InvalidData("grid must be positive".into()));
            }
            let variance = positive("variance", spec.variance.unwrap_or(COX_VARIANCE))?;
            let beta = positive("beta", spec.beta.unwrap_or(COX_BETA))?;
            let cell_area = positive("cell_area", spec.cell_area.unwrap_or(1.0 / (g * g) as f64))?;
            let offset = spec.offset.unwrap_or_else(|| cox_default_offset(variance));
            let c = build_kernel(&KernelSpec {
                kind: KernelKind::CoxExponential {
                    variance,
                    beta,
                    scale_divisor: g as f64,
                },
                inputs: grid_inputs(g),
            })?;
            let x = draw_gaussian(&c, &mut rng)?;
            let counts = x
                .iter()
                .map(|xi| {
                    let rate = cell_area * (xi + offset).exp();
                    Poisson::new(rate)
                        .map(|p| p.sample(&mut rng) as i64)
                        .map_err(|e| LgmError::InvalidData(format!("Poisson rate {rate}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            manifest.grid = Some(g);
            manifest.cell_area = Some(cell_area);
            manifest.offset = Some(offset);
            manifest.kernel = KernelConfig {
                variance: Some(variance),
                beta: Some(beta),
                scale_divisor: Some(g as f64),
                ..KernelConfig::default()
            };
            (
                Dataset::Cox {
                    counts,
                    side: g,
                    cell_area,
                    offset,
                },
                x,
            )
        }
        ModelKind::Binary | ModelKind::Multiclass => {
            let n = spec.n.unwrap_or(200);
            let d = spec.input_dim.unwrap_or(2).max(1);
            let variance = positive("variance", spec.variance.unwrap_or(4.0))?;
            let lengthscale2 = positive("lengthscale2", spec.lengthscale2.unwrap_or(1.0))?;
            let inputs = classification_inputs(n, d, &mut rng);
            let c = se_kernel(variance, lengthscale2, &inputs)?;
            manifest.kernel = KernelConfig {
                variance: Some(variance),
                lengthscale2: Some(lengthscale2),
                ..KernelConfig::default()
            };
            if model == ModelKind::Binary {
                let x = draw_gaussian(&c, &mut rng)?;
                let labels = x
                    .iter()
                    .map(|&xi| u8::from(rng.random::<f64>() < sigmoid(xi)))
                    .collect();
                (Dataset::Binary { inputs, labels }, x)
            } else {
                let k = spec.classes.unwrap_or(3);
                if k < 2 {
                    return Err(LgmError::InvalidData("need at least two classes".into()));
                }
                let mut x = Vec::with_capacity(k * n);
                for _ in 0..k {
                    x.extend(draw_gaussian(&c, &mut rng)?);
                }
                let labels = (0..n)
                    .map(|i| {
                        let scores: Vec<f64> = (0..k).map(|c| x[c * n + i]).collect();
                        let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let w: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
                        let mut u = rng.random::<f64>() * w.iter().sum::<f64>();
                        w.iter()
                            .position(|wi| {
                                u -= wi;
                                u < 0.0
                            })
                            .unwrap_or(k - 1)
                    })
                    .collect();
                manifest.classes = Some(k);
                (
                    Dataset::Multiclass {
                        inputs,
                        labels,
                        classes: k,
                    },
                    x,
                )
            }
        }
    };
    Ok(Simulated {
        dataset,
        latent,
        manifest,
    })
}

/// Parse a simulation request: a `model` key plus [`SimulateSpec`] fields.
pub fn parse_simulation_str(text: &str) -> Result<(ModelKind, SimulateSpec)> {
    let bad = |path: &str, message: String| LgmError::Config {
        path: path.into(),
        message,
    };
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| bad("", e.to_string()))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| bad("", "expected a JSON object".into()))?;
    let model = obj
        .remove("model")
        .ok_or_else(|| bad("model", "missing".into()))?;
    let model: ModelKind =
        serde_json::from_value(model).map_err(|e| bad("model", e.to_string()))?;
    let spec: SimulateSpec = serde_json::from_value(value).map_err(|e| bad("", e.to_string()))?;
    Ok((model, spec))
}

fn input_header(d: usize) -> Vec<String> {
    (1..=d).map(|k| format!("s{k}")).collect()
}

fn write_table_csv(
    path: &Path,
    inputs: &[Vec<f64>],
    y: impl Iterator<Item = String>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = inputs.first().map_or(0, Vec::len);
    let mut header = input_header(d);
    header.push("y".into());
    w.write_record(&header)?;
    for (row, yi) in inputs.iter().zip(y) {
        let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
        rec.push(yi);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Write a `side × side` count grid without a header.
pub fn write_counts_csv(path: &Path, counts: &[i64], side: usize) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    for row in counts.chunks(side) {
        w.write_record(row.iter().map(i64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a square count grid without a header.
pub fn read_counts_csv(path: &Path) -> Result<(Vec<i64>, usize)> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut counts = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        for field in rec.iter() {
            let v: i64 = field.trim().parse().map_err(|_| {
                LgmError::InvalidData(format!(
                    "{}: `{field}` is not an integer count",
                    path.display()
                ))
            })?;
            counts.push(v);
        }
        rows += 1;
    }
    if rows == 0 || counts.len() != rows * rows {
        return Err(LgmError::InvalidData(format!(
            "{}: expected a square grid, got {} values in {rows} rows",
            path.display(),
            counts.len()
        )));
    }
    Ok((counts, rows))
}

/// Write `data.csv`, `latent.csv` and `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, sim: &Simulated) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let data = dir.join(&sim.manifest.data_file);
    match &sim.dataset {
        Dataset::Regression { inputs, y, .. } => {
            write_table_csv(&data, inputs, y.iter().map(f64::to_string))?
        }
        Dataset::Binary { inputs, labels } => {
            write_table_csv(&data, inputs, labels.iter().map(u8::to_string))?
        }
        // classes are written 1..K
        Dataset::Multiclass { inputs, labels, .. } => {
            write_table_csv(&data, inputs, labels.iter().map(|l| (l + 1).to_string()))?
        }
        Dataset::Cox { counts, side, .. } => write_counts_csv(&data, counts, *side)?,
    }
    if let Some(name) = &sim.manifest.latent_file {
        let mut w = csv::Writer::from_path(dir.join(name))?;
        w.write_record(["x"])?;
        for v in &sim.latent {
            w.write_record([v.to_string()])?;
        }
        w.flush()?;
    }
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&sim.manifest)? + "\n")?;
    Ok(path)
}

/// Inputs and the `y` column of a headed CSV.
fn read_table_csv(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<String>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let y_col = header
        .iter()
        .position(|h| h.trim() == "y")
        .ok_or_else(|| LgmError::InvalidData(format!("{}: no `y` column", path.display())))?;
    let mut inputs = Vec::new();
    let mut ys = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut row = Vec::with_capacity(rec.len().saturating_sub(1));
        for (k, field) in rec.iter().enumerate() {
            if k == y_col {
                ys.push(field.trim().to_string());
            } else {
                row.push(field.trim().parse::<f64>().map_err(|_| {
                    LgmError::InvalidData(format!("{}: `{field}` is not a number", path.display()))
                })?);
            }
        }
        inputs.push(row);
    }
    if ys.is_empty() {
        return Err(LgmError::InvalidData(format!(
            "{}: no rows",
            path.display()
        )));
    }
    Ok((inputs, ys))
}

fn parse_labels<T: std::str::FromStr>(ys: &[String], path: &Path) -> Result<Vec<T>> {
    ys.iter()
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| LgmError::InvalidData(format!("{}: bad label `{s}`", path.display())))
        })
        .collect()
}

/// Where the data lives and the metadata the model needs.
#[derive(Debug, Clone, Default)]
pub struct DataSource {
    pub sigma2: Option<f64>,
    pub cell_area: Option<f64>,
    pub offset: Option<f64>,
    pub classes: Option<usize>,
}

/// Read a dataset from CSV. Classification inputs are standardized.
/// Multiclass labels may be `1..K` or, when a 0 appears, `0..K−1`.
pub fn load_dataset(model: ModelKind, path: &Path, meta: &DataSource) -> Result<Dataset> {
    Ok(match model {
        ModelKind::Regression => {
            let (inputs, ys) = read_table_csv(path)?;
            let y = parse_labels::<f64>(&ys, path)?;
            let sigma2 = meta
                .sigma2
                .ok_or_else(|| LgmError::InvalidData("regression data needs sigma2".into()))?;
            Dataset::Regression {
                inputs,
                y,
                sigma2: positive("sigma2", sigma2)?,
            }
        }
        ModelKind::Cox => {
            let (counts, side) = read_counts_csv(path)?;
            if let Some(bad) = counts.iter().find(|c| **c < 0) {
                return Err(LgmError::InvalidData(format!("negative count {bad}")));
            }
            let cell_area = meta.cell_area.unwrap_or(1.0 / (side * side) as f64);
            let offset = meta
                .offset
                .unwrap_or_else(|| cox_default_offset(COX_VARIANCE));
            Dataset::Cox {
                counts,
                side,
                cell_area: positive("cell_area", cell_area)?,
                offset,
            }
        }
        ModelKind::Binary => {
            let (mut inputs, ys) = read_table_csv(path)?;
            let labels = parse_labels::<u8>(&ys, path)?;
            if let Some(bad) = labels.iter().find(|l| **l > 1) {
                return Err(LgmError::InvalidData(format!(
                    "binary label {bad} is not 0 or 1"
                )));
            }
            standardize_columns(&mut inputs);
            Dataset::Binary { inputs, labels }
        }
        ModelKind::Multiclass => {
            let (mut inputs, ys) = read_table_csv(path)?;
            let raw = parse_labels::<usize>(&ys, path)?;
            let shift = usize::from(!raw.contains(&0));
            let labels: Vec<usize> = raw.iter().map(|l| l - shift).collect();
            let seen = labels.iter().max().map_or(0, |m| m + 1);
            let classes = meta.classes.unwrap_or(seen).max(seen);
            if classes < 2 {
                return Err(LgmError::InvalidData("need at least two classes".into()));
            }
            standardize_columns(&mut inputs);
            Dataset::Multiclass {
                inputs,
                labels,
                classes,
            }
        }
    })
}

/// Read the dataset a manifest points to.
pub fn load_manifest(path: &Path) -> Result<(Manifest, Dataset)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let meta = DataSource {
        sigma2: manifest.sigma2,
        cell_area: manifest.cell_area,
        offset: manifest.offset,
        classes: manifest.classes,
    };
    let data = load_dataset(manifest.model, &dir.join(&manifest.data_file), &meta)?;
    Ok((manifest, data))
}

/// The dataset and generating kernel named by an experiment config.
pub fn resolve_dataset(config: &ExperimentConfig) -> Result<(Dataset, KernelConfig)> {
    let (data, generating) = match (&config.data, &config.simulate) {
        (Some(path), _) if is_manifest(path) => {
            let (m, d) = load_manifest(path)?;
            if m.model != config.model {
                return Err(LgmError::Config {
                    path: "data".into(),
                    message: format!("manifest holds a {} dataset", m.model.name()),
                });
            }
            (d, m.kernel)
        }
        (Some(path), _) => {
            let meta = DataSource {
                sigma2: config.sigma2,
                cell_area: config.cell_area,
                offset: config.offset,
                classes: None,
            };
            (
                load_dataset(config.model, path, &meta)?,
                KernelConfig::default(),
            )
        }
        (None, Some(spec)) => {
            let sim = simulate_dataset(config.model, spec)?;
            (sim.dataset, sim.manifest.kernel)
        }
        (None, None) => {
            return Err(LgmError::Config {
                path: "data".into(),
                message: "no dataset given".into(),
            })
        }
    };
    // explicit kernel settings override the generating ones field by field
    let k = config.kernel.clone().unwrap_or_default();
    let kernel = KernelConfig {
        variance: k.variance.or(generating.variance),
        lengthscale2: k.lengthscale2.or(generating.lengthscale2),
        beta: k.beta.or(generating.beta),
        scale_divisor: k.scale_divisor.or(generating.scale_divisor),
        jitter: k.jitter,
    };
    Ok((data, kernel))
}

/// Merge every 2×2 block of a `g × g` grid by summing its counts.
pub fn down_sample_cox(counts: &[i64], g: usize) -> Result<Vec<i64>> {
    if g == 0 || g % 2 == 1 {
        return Err(LgmError::InvalidData(format!("grid side {g} is not even")));
    }
    if counts.len() != g * g {
        return Err(LgmError::DimensionMismatch {
            expected: g * g,
            found: counts.len(),
        });
    }
    let h = g / 2;
    Ok((0..h * h)
        .map(|k| {
            let (i, j) = (2 * (k / h), 2 * (k % h));
            counts[i * g + j]
                + counts[i * g + j + 1]
                + counts[(i + 1) * g + j]
                + counts[(i + 1) * g + j + 1]
        })
        .collect())
}

/// Coarsen a Cox dataset: counts are block-summed and the cell area
/// quadruples. The scale divisor follows the new grid side.
pub fn down_sample_dataset(data: &Dataset) -> Result<Dataset> {
    match data {
        Dataset::Cox {
            counts,
            side,
            cell_area,
            offset,
        } => Ok(Dataset::Cox {
            counts: down_sample_cox(counts, *side)?,
            side: side / 2,
            cell_area: 4.0 * cell_area,
            offset: *offset,
        }),
        other => Err(LgmError::InvalidData(format!(
            "only Cox grids can be down-sampled, got {}",
            other.model().name()
        ))),
    }
}

/// Coarsen the Cox dataset behind `manifest_path` into `out_dir`.
pub fn down_sample_manifest(manifest_path: &Path, out_dir: &Path) -> Result<PathBuf> {
    let (manifest, data) = load_manifest(manifest_path)?;
    let coarse = down_sample_dataset(&data)?;
    let Dataset::Cox {
        side, cell_area, ..
    } = &coarse
    else {
        unreachable!()
    };
    let kernel = KernelConfig {
        scale_divisor: Some(*side as f64),
        ..manifest.kernel.clone()
    };
    let m = Manifest {
        latent_file: None,
        grid: Some(*side),
        cell_area: Some(*cell_area),
        kernel,
        ..manifest
    };
    write_dataset(
        out_dir,
        &Simulated {
            dataset: coarse,
            latent: Vec::new(),
            manifest: m,
        },
    )
}
