//! Experiment configuration, data ingestion, orchestration and result files.
//!
//! A run is described by a TOML [`ExperimentConfig`]. [`run_experiment`]
//! fits every model of the grid for every repeat, combines the fits, compares
//! the averaged posterior with the selected single model and collects the
//! results into versioned [`RunResult`] records. [`write_outputs`] stores one
//! JSON file per repeat, a `summary.json` and plot-data CSV files.
//!
//! ```toml
//! kind = "deep_regression"
//!
//! [data]
//! source = "builtin"
//! n = 256
//! noise_sd = 0.1
//!
//! [grid]
//! depths = [2, 3]
//! widths = [8, 16]
//!
//! [optimizer]
//! epochs = 500
//! lr = 1e-3
//! mc_samples = 8
//! batch_size = 32
//!
//! [prior]
//! b0 = 1e-5
//!
//! [seeds]
//! master = 7
//! repeats = 20
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compare::{
    default_upsilon_grid, exact_risk, objective_dominance, risk_bound_functional, select_model,
    tv_combined_vs_selected, Dominance, SelectionResult,
};
use crate::deep::{
    architecture_collection, fit_grid, forward, posterior_predictive_summary, FitConfig,
    LikelihoodAdapter, NetArchitecture, OptimizerKind, RegressionData,
};
use crate::error::{AvbError, Result};
use crate::mixture::{
    fit_mixture_grid, predictive_density, sample_truth_labeled, CaviConfig, TRUTH_MEANS,
    TRUTH_WEIGHTS,
};
use crate::particle::{
    run_algorithm2, DiscretizedSpace, LearningRate, NetworkModel, ParticleModel, ParticleState,
    UniformUnoccupied,
};
use crate::quasi::{
    fit_sbm_grid, label_accuracy, planted_partition, quasi_fit_deep, NoiseModel,
    QuasiRegressionAdapter, SbmConfig, SbmData,
};
use crate::rng::{derive_seed, substream};
use crate::vb::{
    combine_posteriors, normalize_log_weights, posterior_model_weights, CombinedPosterior,
    ElboBreakdown, ModelCollection,
};

/// Version of the result JSON layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Mixture,
    DeepRegression,
    Sbm,
    ParticleDemo,
    QuasiRegression,
}

/// Where the data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Synthetic data drawn afresh for every repeat.
    Builtin {
        n: Option<usize>,
        /// Gaussian noise level for the regression generators.
        noise_sd: Option<f64>,
        /// Noise distribution for `quasi_regression`; overrides `noise_sd`.
        noise: Option<NoiseModel>,
        /// Planted communities for `sbm`.
        blocks: Option<usize>,
        p_in: Option<f64>,
        p_out: Option<f64>,
    },
    /// Numeric CSV with a header row. For regression, `target` names the
    /// response column and `features` (default: all other columns) the inputs.
    Csv {
        path: PathBuf,
        target: Option<String>,
        features: Option<Vec<String>>,
    },
    /// Undirected edges `i,j` (0-based), one per line.
    EdgeList { path: PathBuf, nodes: Option<usize> },
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Builtin {
            n: None,
            noise_sd: None,
            noise: None,
            blocks: None,
            p_in: None,
            p_out: None,
        }
    }
}

/// Model grid. Networks use `depths x widths`; mixtures and SBMs use
/// `components`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub depths: Vec<usize>,
    pub widths: Vec<usize>,
    pub components: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub name: OptimizerKind,
    pub epochs: usize,
    pub lr: f64,
    /// Monte Carlo draws per gradient step (`V`).
    pub mc_samples: usize,
    /// Monte Carlo draws for the reported objective.
    pub eval_samples: usize,
    pub batch_size: Option<usize>,
    pub init_half_width: Option<f64>,
    /// Parameter bound `B`; defaults to `sqrt(n_train)`.
    pub bound: Option<f64>,
    /// Posterior draws for predictive means.
    pub predictive_draws: usize,
    /// Restarts for mixture and SBM fits (defaults 5 and 10).
    pub restarts: Option<usize>,
    /// Coordinate-ascent sweeps for mixture and SBM fits.
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let fit = FitConfig::default();
        Self {
            name: fit.optimizer,
            epochs: fit.epochs,
            lr: fit.lr,
            mc_samples: fit.mc_samples,
            eval_samples: fit.eval_samples,
            batch_size: None,
            init_half_width: None,
            bound: None,
            predictive_draws: 100,
            restarts: None,
            max_iters: None,
            tol: None,
        }
    }
}

/// Prior over the model index. Networks use
/// `alpha ∝ exp(-b0 L (K M)^2 log n)`, SBMs `exp(-b0 L (m^2 log n + n log m))`
/// and mixtures the fixed `exp(-m log m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// Defaults to `1e-5` for networks and `1` for SBMs.
    pub b0: Option<f64>,
    /// The exponent multiplier `L`.
    pub exponent: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            b0: None,
            exponent: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    pub master: u64,
    pub repeats: usize,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self {
            master: 0,
            repeats: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RateSchedule {
    #[default]
    Constant,
    InvSqrt,
}

/// Settings of the particle demo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParticleConfig {
    pub particles: usize,
    pub iterations: usize,
    pub lr: f64,
    pub schedule: RateSchedule,
    /// Grid spacing of the discretized parameter space.
    pub spacing: f64,
    /// Half-width of the parameter box.
    pub bound: f64,
    /// Exact posteriors and risk bounds are computed only when the total
    /// number of atoms is at most this.
    pub exact_atom_limit: u64,
}

impl Default for ParticleConfig {
    fn default() -> Self {
        Self {
            particles: 16,
            iterations: 100,
            lr: 0.01,
            schedule: RateSchedule::Constant,
            spacing: 0.5,
            bound: 2.0,
            exact_atom_limit: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Learning rate `kappa` of the tempered quasi-likelihood.
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub data: DataConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub seeds: SeedConfig,
    #[serde(default)]
    pub particle: ParticleConfig,
}

impl ExperimentConfig {
    /// Parses and validates a config. Relative data paths are resolved
    /// against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: ExperimentConfig =
            toml::from_str(text).map_err(|e| AvbError::Config(e.to_string()))?;
        match &mut config.data {
            DataConfig::Csv { path, .. } | DataConfig::EdgeList { path, .. }
                if path.is_relative() =>
            {
                *path = base_dir.join(&*path);
            }
            _ => {}
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| AvbError::io(path, e))?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(AvbError::Config(msg));
        let g = &self.grid;
        match self.kind {
            ExperimentKind::Mixture | ExperimentKind::Sbm => {
                if g.components.is_empty() {
                    return bad("the model grid is empty: set grid.components".into());
                }
                if g.components.contains(&0) {
                    return bad("component counts must be at least 1".into());
                }
            }
            _ => {
                if g.depths.is_empty() || g.widths.is_empty() {
                    return bad("the model grid is empty: set grid.depths and grid.widths".into());
                }
                if g.depths.iter().any(|&k| k < 2) || g.widths.contains(&0) {
                    return bad("depths must be at least 2 and widths at least 1".into());
                }
            }
        }
        if self.seeds.repeats == 0 {
            return bad("seeds.repeats must be at least 1".into());
        }
        match (&self.data, self.kind) {
            (DataConfig::EdgeList { .. }, ExperimentKind::Sbm) => {}
            (DataConfig::EdgeList { .. }, _) => {
                return bad("edge lists are only used by sbm experiments".into())
            }
            (DataConfig::Csv { .. }, ExperimentKind::Sbm | ExperimentKind::ParticleDemo) => {
                return bad("this experiment kind does not read CSV tables".into());
            }
            (
                DataConfig::Csv { target: None, .. },
                ExperimentKind::DeepRegression | ExperimentKind::QuasiRegression,
            ) => {
                return bad("regression CSV data needs a target column".into());
            }
            (
                DataConfig::Csv {
                    target: Some(_), ..
                },
                ExperimentKind::Mixture,
            ) => {
                return bad("mixture data has no target column".into());
            }
            _ => {}
        }
        match &self.data {
            DataConfig::Csv { path, .. } | DataConfig::EdgeList { path, .. } => {
                if !path.is_file() {
                    return bad(format!("data file {} does not exist", path.display()));
                }
            }
            DataConfig::Builtin {
                n,
                noise_sd,
                blocks,
                p_in,
                p_out,
                ..
            } => {
                if n.is_some_and(|n| n < 2) {
                    return bad("data.n must be at least 2".into());
                }
                if noise_sd.is_some_and(|s| !(s >= 0.0 && s.is_finite())) {
                    return bad("data.noise_sd must be nonnegative".into());
                }
                if blocks == &Some(0) {
                    return bad("data.blocks must be at least 1".into());
                }
                if [p_in, p_out]
                    .iter()
                    .any(|p| p.is_some_and(|p| !(0.0..=1.0).contains(&p)))
                {
                    return bad("edge probabilities must lie in [0, 1]".into());
                }
            }
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0) || o.mc_samples == 0 || o.eval_samples == 0 || o.predictive_draws == 0 {
            return bad(
                "optimizer lr, mc_samples, eval_samples and predictive_draws must be positive"
                    .into(),
            );
        }
        if o.batch_size == Some(0) || o.restarts == Some(0) {
            return bad("batch_size and restarts must be positive".into());
        }
        if o.bound.is_some_and(|b| !(b > 0.0)) || o.init_half_width.is_some_and(|h| !(h > 0.0)) {
            return bad("bound and init_half_width must be positive".into());
        }
        if self.prior.b0.is_some_and(|b| !(b > 0.0)) || !(self.prior.exponent > 0.0) {
            return bad("prior b0 and exponent must be positive".into());
        }
        if self.kind == ExperimentKind::Mixture
            && (self.prior.b0.is_some() || self.prior.exponent != 1.0)
        {
            return bad("the mixture prior exp(-m log m) takes no b0 or exponent".into());
        }
        match (self.kind, self.kappa) {
            (ExperimentKind::QuasiRegression, None) => {
                return bad("quasi_regression needs kappa".into())
            }
            (_, Some(k)) if !(k > 0.0 && k.is_finite()) => {
                return bad("kappa must be positive".into())
            }
            _ => {}
        }
        let p = &self.particle;
        if p.particles == 0 || !(p.spacing > 0.0) || !(p.bound > 0.0) || !(p.lr >= 0.0) {
            return bad("particle count, spacing and bound must be positive".into());
        }
        Ok(())
    }

    fn b0(&self) -> f64 {
        let base = self.prior.b0.unwrap_or(match self.kind {
            ExperimentKind::Sbm => 1.0,
            _ => 1e-5,
        });
        base * self.prior.exponent
    }
}

/// Per-column affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub columns: Vec<String>,
    pub means: Vec<f64>,
    /// Population standard deviations; constant columns get scale 1.
    pub scales: Vec<f64>,
}

impl Standardization {
    pub fn fit(columns: Vec<String>, rows: &[Vec<f64>]) -> Self {
        let d = columns.len();
        let n = rows.len().max(1) as f64;
        let means: Vec<f64> = (0..d)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
            .collect();
        let scales = (0..d)
            .map(|j| {
                let v = rows.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n;
                if v > 0.0 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self {
            columns,
            means,
            scales,
        }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.means)
            .zip(&self.scales)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.means)
            .zip(&self.scales)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }
}

/// Which CSV columns to read.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvSchema {
    /// Feature columns; `None` takes every non-target column.
    pub features: Option<Vec<String>>,
    pub target: Option<String>,
}

/// A CSV table with standardized features and raw targets.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvDataset {
    pub features: Vec<Vec<f64>>,
    pub target: Option<Vec<f64>>,
    pub transform: Standardization,
}

impl CsvDataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn to_regression(&self) -> Result<RegressionData> {
        let y = self
            .target
            .clone()
            .ok_or_else(|| AvbError::Config("the dataset has no target column".into()))?;
        RegressionData::new(self.transform.columns.len(), self.features.concat(), y)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> AvbError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => AvbError::io(path, io),
        other => AvbError::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Reads a numeric CSV table with a header row. Line numbers in errors
/// count the header as line 1.
pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<CsvDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| AvbError::Parse {
                line: 1,
                message: format!("header has no column `{name}`"),
            })
    };
    let target = schema.target.as_deref().map(column).transpose()?;
    let feature_idx: Vec<usize> = match &schema.features {
        Some(names) => names.iter().map(|n| column(n)).collect::<Result<_>>()?,
        None => (0..header.len()).filter(|&j| Some(j) != target).collect(),
    };
    if feature_idx.is_empty() {
        return Err(AvbError::Parse {
            line: 1,
            message: "no feature columns".into(),
        });
    }
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(AvbError::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let cell = |j: usize| -> Result<f64> {
            let v: f64 = record[j].parse().map_err(|_| AvbError::Parse {
                line,
                message: format!("column `{}`: `{}` is not a number", header[j], &record[j]),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(AvbError::Parse {
                    line,
                    message: format!("column `{}` is not finite", header[j]),
                })
            }
        };
        features.push(
            feature_idx
                .iter()
                .map(|&j| cell(j))
                .collect::<Result<Vec<f64>>>()?,
        );
        if let Some(t) = target {
            targets.push(cell(t)?);
        }
    }
    if features.is_empty() {
        return Err(AvbError::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }
    let names = feature_idx.iter().map(|&j| header[j].clone()).collect();
    let transform = Standardization::fit(names, &features);
    let features = features.iter().map(|r| transform.transform(r)).collect();
    Ok(CsvDataset {
        features,
        target: target.map(|_| targets),
        transform,
    })
}

/// Reads an undirected edge list `i,j` (0-based, no self-loops). A first
/// line that is not numeric is taken as a header. Without `nodes` the node
/// count is one more than the largest index.
pub fn read_edge_list(path: &Path, nodes: Option<usize>) -> Result<SbmData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut edges = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            return Err(AvbError::Parse {
                line,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        match (record[0].parse::<usize>(), record[1].parse::<usize>()) {
            (Ok(i), Ok(j)) if i != j => edges.push((i, j)),
            (Ok(_), Ok(_)) => {
                return Err(AvbError::Parse {
                    line,
                    message: "self-loops are not allowed".into(),
                })
            }
            _ if line == 1 => {}
            _ => {
                return Err(AvbError::Parse {
                    line,
                    message: "node indices must be nonnegative integers".into(),
                })
            }
        }
    }
    let max = edges.iter().map(|&(i, j)| i.max(j) + 1).max().unwrap_or(0);
    let n = nodes.unwrap_or(max);
    if max > n {
        return Err(AvbError::Config(format!(
            "edge list refers to node {} but nodes = {n}",
            max - 1
        )));
    }
    SbmData::from_edges(n, &edges)
}

/// One model of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub id: String,
    pub complexity: f64,
    pub log_alpha: f64,
    pub elbo: ElboBreakdown,
    pub gamma: f64,
    pub log_gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedModel {
    pub id: String,
    pub error: String,
}

/// The result of one repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub schema_version: u32,
    pub code_version: String,
    pub kind: ExperimentKind,
    pub repeat: usize,
    pub seed: u64,
    /// Successfully fitted models, in collection order.
    pub models: Vec<ModelResult>,
    pub selection: SelectionResult,
    pub dominance: Dominance,
    pub tv_avb_msvb: f64,
    pub mc_settings_mismatch: bool,
    /// Models excluded from the combination; the prior was renormalized.
    pub failures: Vec<FailedModel>,
    pub metrics: BTreeMap<String, f64>,
    pub standardization: Option<Standardization>,
    pub plot_files: Vec<String>,
    pub wall_clock_seconds: f64,
    pub config: ExperimentConfig,
}

impl RunResult {
    pub fn gamma(&self) -> Vec<f64> {
        self.models.iter().map(|m| m.gamma).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub code_version: String,
    pub kind: ExperimentKind,
    pub repeats: usize,
    pub result_files: Vec<String>,
    pub selected_models: Vec<String>,
    pub dominance_holds_everywhere: bool,
    pub failures: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
    pub wall_clock_seconds: f64,
}

/// A plot-data table written as CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotTable {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub runs: Vec<RunResult>,
    pub plots: Vec<PlotTable>,
    pub summary: RunSummary,
}

pub fn result_file_name(repeat: usize) -> String {
    format!("run_{repeat:03}.json")
}

enum Source {
    Builtin,
    Regression(RegressionData, Standardization),
    Table(DMatrix<f64>, Standardization),
    Graph(SbmData),
}

fn load_source(config: &ExperimentConfig) -> Result<Source> {
    match &config.data {
        DataConfig::Builtin { .. } => Ok(Source::Builtin),
        DataConfig::Csv {
            path,
            target,
            features,
        } => {
            let ds = ingest_csv(
                path,
                &CsvSchema {
                    features: features.clone(),
                    target: target.clone(),
                },
            )?;
            if config.kind == ExperimentKind::Mixture {
                let d = ds.transform.columns.len();
                let m = DMatrix::from_fn(ds.len(), d, |i, j| ds.features[i][j]);
                Ok(Source::Table(m, ds.transform))
            } else {
                Ok(Source::Regression(ds.to_regression()?, ds.transform))
            }
        }
        DataConfig::EdgeList { path, nodes } => Ok(Source::Graph(read_edge_list(path, *nodes)?)),
    }
}

/// Runs every repeat of the experiment on a pool of `jobs` threads (all
/// cores when `None`). Results do not depend on `jobs`.
pub fn run_experiment(config: &ExperimentConfig, jobs: Option<usize>) -> Result<ExperimentOutput> {
    config.validate()?;
    let source = load_source(config)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| AvbError::Config(format!("cannot start worker pool: {e}")))?;
    let start = Instant::now();
    let outcomes: Vec<Result<(RunResult, Vec<PlotTable>)>> = pool.install(|| {
        (0..config.seeds.repeats)
            .into_par_iter()
            .map(|r| run_repeat(config, &source, r))
            .collect()
    });
    let mut runs = Vec::with_capacity(outcomes.len());
    let mut plots = Vec::new();
    for o in outcomes {
        let (run, p) = o?;
        if !run.dominance.holds {
            log::error!(
                "repeat {}: averaged objective {} exceeds selected objective {}",
                run.repeat,
                run.dominance.avb_objective,
                run.dominance.msvb_objective
            );
        }
        runs.push(run);
        plots.extend(p);
    }
    let summary = summarize(config, &runs, start.elapsed().as_secs_f64());
    Ok(ExperimentOutput {
        runs,
        plots,
        summary,
    })
}

fn summarize(config: &ExperimentConfig, runs: &[RunResult], seconds: f64) -> RunSummary {
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for run in runs {
        for (k, v) in &run.metrics {
            values.entry(k.clone()).or_default().push(*v);
        }
    }
    let metrics = values
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by(f64::total_cmp);
            let n = v.len();
            let median = if n % 2 == 1 {
                v[n / 2]
            } else {
                0.5 * (v[n / 2 - 1] + v[n / 2])
            };
            let s = MetricSummary {
                mean: v.iter().sum::<f64>() / n as f64,
                median,
                min: v[0],
                max: v[n - 1],
            };
            (k, s)
        })
        .collect();
    RunSummary {
        schema_version: SCHEMA_VERSION,
        code_version: env!("CARGO_PKG_VERSION").to_owned(),
        kind: config.kind,
        repeats: runs.len(),
        result_files: runs.iter().map(|r| result_file_name(r.repeat)).collect(),
        selected_models: runs
            .iter()
            .map(|r| r.selection.selected_model.to_string())
            .collect(),
        dominance_holds_everywhere: runs.iter().all(|r| r.dominance.holds),
        failures: runs.iter().map(|r| r.failures.len()).sum(),
        metrics,
        wall_clock_seconds: seconds,
    }
}

/// Writes `run_NNN.json` per repeat, `summary.json` and the plot CSVs into
/// `dir`, creating it if needed.
pub fn write_outputs(output: &ExperimentOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| AvbError::io(dir, e))?;
    let write_json = |name: &str, text: String| {
        let path = dir.join(name);
        fs::write(&path, text + "\n").map_err(|e| AvbError::io(path, e))
    };
    for run in &output.runs {
        write_json(
            &result_file_name(run.repeat),
            serde_json::to_string_pretty(run)?,
        )?;
    }
    write_json(
        "summary.json",
        serde_json::to_string_pretty(&output.summary)?,
    )?;
    for table in &output.plots {
        let path = dir.join(&table.file);
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        w.write_record(&table.header)
            .map_err(|e| csv_error(&path, e))?;
        for row in &table.rows {
            w.write_record(row.iter().map(|v| v.to_string()))
                .map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| AvbError::io(&path, e))?;
    }
    Ok(())
}

pub fn read_result(path: &Path) -> Result<RunResult> {
    let text = fs::read_to_string(path).map_err(|e| AvbError::io(path, e))?;
    let run: RunResult = serde_json::from_str(&text)?;
    if run.schema_version != SCHEMA_VERSION {
        return Err(AvbError::Config(format!(
            "result schema version {} is not supported (expected {SCHEMA_VERSION})",
            run.schema_version
        )));
    }
    Ok(run)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub models: usize,
    pub max_abs_gamma_diff: f64,
    pub max_abs_log_gamma_diff: f64,
    /// Both differences at most `1e-12`.
    pub consistent: bool,
}

/// Recomputes the model weights from the stored objectives and prior
/// weights and compares them with the stored weights.
pub fn replay(run: &RunResult) -> ReplayReport {
    let log_alpha: Vec<f64> = run.models.iter().map(|m| m.log_alpha).collect();
    let totals: Vec<f64> = run.models.iter().map(|m| m.elbo.total).collect();
    let (log_gamma, gamma) = posterior_model_weights(&log_alpha, &totals);
    let diff = |a: &[f64], b: Vec<f64>| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    let dg = diff(&gamma, run.models.iter().map(|m| m.gamma).collect());
    let dl = diff(&log_gamma, run.models.iter().map(|m| m.log_gamma).collect());
    ReplayReport {
        models: run.models.len(),
        max_abs_gamma_diff: dg,
        max_abs_log_gamma_diff: dl,
        consistent: dg <= 1e-12 && dl <= 1e-12,
    }
}

fn put(metrics: &mut BTreeMap<String, f64>, key: &str, value: f64) {
    if value.is_finite() {
        metrics.insert(key.to_owned(), value);
    } else {
        log::warn!("metric {key} = {value} is not finite and was dropped");
    }
}

fn gamma_entropy(gamma: &[f64]) -> f64 {
    0.0 - gamma
        .iter()
        .filter(|g| **g > 0.0)
        .map(|g| g * g.ln())
        .sum::<f64>()
}

fn sine(x: f64) -> f64 {
    (2.0 * std::f64::consts::PI * x).sin()
}

fn relu_ramp(x: f64) -> f64 {
    (2.0 * x - 1.0).max(0.0)
}

/// `n` inputs uniform on `[0, 1]` with responses `f(x) + noise`.
fn synthetic_regression(
    n: usize,
    f: fn(f64) -> f64,
    noise: NoiseModel,
    rng: &mut impl Rng,
) -> Result<RegressionData> {
    let x: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let y = x.iter().map(|&x| f(x) + noise.sample(rng)).collect();
    RegressionData::new(1, x, y)
}

/// Common part of every run: selection, dominance and per-model records.
struct Assembled {
    models: Vec<ModelResult>,
    selection: SelectionResult,
    dominance: Dominance,
    tv: f64,
    mismatch: bool,
}

fn assemble<S>(combined: &CombinedPosterior<S>, collection: &ModelCollection) -> Result<Assembled> {
    let selection = select_model(combined, collection)?;
    let dominance = objective_dominance(combined, collection, &selection)?;
    let models = combined
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let pos = collection
                .position(id)
                .ok_or_else(|| AvbError::MissingModelFit(id.to_string()))?;
            Ok(ModelResult {
                id: id.to_string(),
                complexity: collection.models()[pos].complexity,
                log_alpha: collection.log_alpha()[pos],
                elbo: combined.per_model_elbo[i],
                gamma: combined.gamma[i],
                log_gamma: combined.log_gamma[i],
            })
        })
        .collect::<Result<_>>()?;
    Ok(Assembled {
        models,
        tv: tv_combined_vs_selected(combined, &selection),
        selection,
        dominance,
        mismatch: combined.mc_settings_mismatch,
    })
}

struct Partial {
    assembled: Assembled,
    failures: Vec<FailedModel>,
    metrics: BTreeMap<String, f64>,
    standardization: Option<Standardization>,
    plots: Vec<PlotTable>,
}

fn run_repeat(
    config: &ExperimentConfig,
    source: &Source,
    repeat: usize,
) -> Result<(RunResult, Vec<PlotTable>)> {
    let start = Instant::now();
    let seed = derive_seed(config.seeds.master, &[repeat as u64]);
    let partial = match config.kind {
        ExperimentKind::DeepRegression | ExperimentKind::QuasiRegression => {
            run_regression(config, source, repeat, seed)?
        }
        ExperimentKind::Mixture => run_mixture(config, source, repeat, seed)?,
        ExperimentKind::Sbm => run_sbm(config, source, repeat, seed)?,
        ExperimentKind::ParticleDemo => run_particle(config, seed)?,
    };
    let Partial {
        assembled: a,
        failures,
        mut metrics,
        standardization,
        plots,
    } = partial;
    put(
        &mut metrics,
        "gamma_entropy",
        gamma_entropy(&a.selection.gamma),
    );
    put(&mut metrics, "tv_avb_msvb", a.tv);
    let run = RunResult {
        schema_version: SCHEMA_VERSION,
        code_version: env!("CARGO_PKG_VERSION").to_owned(),
        kind: config.kind,
        repeat,
        seed,
        models: a.models,
        selection: a.selection,
        dominance: a.dominance,
        tv_avb_msvb: a.tv,
        mc_settings_mismatch: a.mismatch,
        failures,
        metrics,
        standardization,
        plot_files: plots.iter().map(|p| p.file.clone()).collect(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        config: config.clone(),
    };
    log::info!(
        "repeat {repeat}: selected {} with gamma {:.4}",
        run.selection.selected_model,
        run.selection.gamma[run.selection.selected]
    );
    Ok((run, plots))
}

fn builtin_n(config: &ExperimentConfig, default: usize) -> usize {
    match config.data {
        DataConfig::Builtin { n: Some(n), .. } => n,
        _ => default,
    }
}

fn regression_noise(config: &ExperimentConfig) -> NoiseModel {
    match config.data {
        DataConfig::Builtin {
            noise: Some(noise), ..
        } => noise,
        DataConfig::Builtin {
            noise_sd: Some(sd), ..
        } => NoiseModel::Gaussian { sd },
        _ => NoiseModel::Gaussian { sd: 0.1 },
    }
}

fn rmse(pred: &[f64], y: &[f64]) -> f64 {
    (pred
        .iter()
        .zip(y)
        .map(|(p, y)| (p - y).powi(2))
        .sum::<f64>()
        / y.len().max(1) as f64)
        .sqrt()
}

fn fit_config(config: &ExperimentConfig, seed: u64) -> FitConfig {
    let o = &config.optimizer;
    FitConfig {
        epochs: o.epochs,
        lr: o.lr,
        mc_samples: o.mc_samples,
        eval_samples: o.eval_samples,
        optimizer: o.name,
        seed,
        batch_size: o.batch_size,
        init_half_width: o.init_half_width,
    }
}

fn architectures(
    config: &ExperimentConfig,
    input_dim: usize,
    bound: f64,
) -> Result<Vec<NetArchitecture>> {
    let mut grid = Vec::new();
    for &k in &config.grid.depths {
        for &m in &config.grid.widths {
            grid.push(NetArchitecture::new(k, m, input_dim, bound)?);
        }
    }
    Ok(grid)
}

fn run_regression(
    config: &ExperimentConfig,
    source: &Source,
    repeat: usize,
    seed: u64,
) -> Result<Partial> {
    let (data, standardization, truth) = match source {
        Source::Regression(d, t) => (d.clone(), Some(t.clone()), None),
        _ => {
            let noise = regression_noise(config);
            let n = builtin_n(config, 256);
            let d = synthetic_regression(n, sine, noise, &mut substream(seed, &[0]))?;
            (d, None, Some(sine as fn(f64) -> f64))
        }
    };
    let n = data.len();
    let n_test = ((n as f64) * 0.1).round().max(1.0) as usize;
    if n_test >= n {
        return Err(AvbError::Config(format!(
            "{n} observations are too few for a 90/10 split"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, &[1]));
    let train = data.subset(&order[n_test..]);
    let test = data.subset(&order[..n_test]);
    let bound = config
        .optimizer
        .bound
        .unwrap_or((train.len() as f64).sqrt());
    let grid = architectures(config, data.dim, bound)?;
    let fit_cfg = fit_config(config, derive_seed(seed, &[2]));
    let mut metrics = BTreeMap::new();
    let gf = if config.kind == ExperimentKind::QuasiRegression {
        let kappa = config.kappa.expect("validated");
        let proxy = match source {
            Source::Builtin => Some(regression_noise(config).variance_proxy()),
            _ => None,
        };
        let adapter = QuasiRegressionAdapter::new(train.clone(), kappa, proxy)?;
        if let Some(valid) = adapter.is_valid() {
            put(&mut metrics, "kappa_valid", if valid { 1.0 } else { 0.0 });
        }
        quasi_fit_deep(&grid, &adapter, &fit_cfg, config.b0())?
    } else {
        fit_grid(
            &grid,
            &LikelihoodAdapter::gaussian(train.clone()),
            &fit_cfg,
            config.b0(),
        )?
    };
    let assembled = assemble(&gf.combined, &gf.collection)?;
    let draws = config.optimizer.predictive_draws;
    let msvb = gf.combined.clone().point_mass(assembled.selection.selected);
    let inputs: Vec<Vec<f64>> = (0..test.len()).map(|i| test.input(i).to_vec()).collect();
    let pred_avb =
        posterior_predictive_summary(&gf.combined, &inputs, draws, &mut substream(seed, &[3]))?
            .mean;
    let pred_msvb =
        posterior_predictive_summary(&msvb, &inputs, draws, &mut substream(seed, &[4]))?.mean;
    let (r_avb, r_msvb) = (rmse(&pred_avb, &test.y), rmse(&pred_msvb, &test.y));
    let y_mean = train.y.iter().sum::<f64>() / train.len() as f64;
    let y_sd =
        (train.y.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / train.len() as f64).sqrt();
    let y_sd = if y_sd > 0.0 { y_sd } else { 1.0 };
    put(&mut metrics, "rmse_avb", r_avb);
    put(&mut metrics, "rmse_msvb", r_msvb);
    put(&mut metrics, "rmse_avb_standardized", r_avb / y_sd);
    put(&mut metrics, "rmse_msvb_standardized", r_msvb / y_sd);
    put(&mut metrics, "n_train", train.len() as f64);
    put(&mut metrics, "n_test", test.len() as f64);
    put(&mut metrics, "bound", bound);
    let mut plots = Vec::new();
    if data.dim == 1 {
        let (lo, hi) = data
            .x
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                (a.min(x), b.max(x))
            });
        let xs: Vec<Vec<f64>> = (0..201)
            .map(|i| vec![lo + (hi - lo) * i as f64 / 200.0])
            .collect();
        let avb =
            posterior_predictive_summary(&gf.combined, &xs, draws, &mut substream(seed, &[5]))?;
        let ms = posterior_predictive_summary(&msvb, &xs, draws, &mut substream(seed, &[6]))?;
        let mut header = vec![
            "x",
            "avb_mean",
            "avb_std_error",
            "msvb_mean",
            "msvb_std_error",
        ];
        if truth.is_some() {
            header.push("truth");
        }
        let rows = xs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let raw_x = standardization.as_ref().map_or(x[0], |t| t.inverse(x)[0]);
                let mut row = vec![
                    raw_x,
                    avb.mean[i],
                    avb.std_error[i],
                    ms.mean[i],
                    ms.std_error[i],
                ];
                if let Some(f) = truth {
                    row.push(f(x[0]));
                }
                row
            })
            .collect();
        plots.push(PlotTable {
            file: format!("predictive_{repeat:03}.csv"),
            header: header.into_iter().map(String::from).collect(),
            rows,
        });
    }
    Ok(Partial {
        assembled,
        failures: gf
            .failures
            .into_iter()
            .map(|(id, error)| FailedModel {
                id: id.to_string(),
                error,
            })
            .collect(),
        metrics,
        standardization,
        plots,
    })
}

fn truth_mixture_density(x: &[f64]) -> f64 {
    TRUTH_WEIGHTS
        .iter()
        .zip(TRUTH_MEANS)
        .map(|(w, m)| {
            let d2 = (x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2);
            w * (-0.5 * d2).exp() / (2.0 * std::f64::consts::PI)
        })
        .sum()
}

fn run_mixture(
    config: &ExperimentConfig,
    source: &Source,
    repeat: usize,
    seed: u64,
) -> Result<Partial> {
    let (data, standardization, builtin) = match source {
        Source::Table(m, t) => (m.clone(), Some(t.clone()), false),
        _ => (
            sample_truth_labeled(builtin_n(config, 200), derive_seed(seed, &[0])).0,
            None,
            true,
        ),
    };
    let defaults = CaviConfig::default();
    let o = &config.optimizer;
    let cavi = CaviConfig {
        restarts: o.restarts.unwrap_or(defaults.restarts),
        max_iters: o.max_iters.unwrap_or(defaults.max_iters),
        tol: o.tol.unwrap_or(defaults.tol),
        seed: derive_seed(seed, &[2]),
    };
    let gf = fit_mixture_grid(&data, &config.grid.components, &cavi)?;
    let assembled = assemble(&gf.combined, &gf.collection)?;
    let mut metrics = BTreeMap::new();
    let m_of = |id: &str| {
        id.trim_start_matches('m')
            .parse::<f64>()
            .unwrap_or(f64::NAN)
    };
    put(
        &mut metrics,
        "selected_components",
        m_of(&assembled.selection.selected_model.0),
    );
    let expected: f64 = gf
        .combined
        .ids
        .iter()
        .zip(&gf.combined.gamma)
        .map(|(id, g)| g * m_of(&id.0))
        .sum();
    put(&mut metrics, "expected_components", expected);
    let mut plots = Vec::new();
    if data.ncols() == 2 {
        let lo: Vec<f64> = (0..2).map(|j| data.column(j).min() - 1.0).collect();
        let hi: Vec<f64> = (0..2).map(|j| data.column(j).max() + 1.0).collect();
        let steps = 80;
        let grid: Vec<Vec<f64>> = (0..=steps)
            .flat_map(|i| {
                let (lo, hi) = (lo.clone(), hi.clone());
                (0..=steps).map(move |j| {
                    vec![
                        lo[0] + (hi[0] - lo[0]) * i as f64 / steps as f64,
                        lo[1] + (hi[1] - lo[1]) * j as f64 / steps as f64,
                    ]
                })
            })
            .collect();
        let avb = predictive_density(&gf.combined, &grid);
        let msvb = predictive_density(
            &gf.combined.clone().point_mass(assembled.selection.selected),
            &grid,
        );
        let mut header = vec!["x1", "x2", "avb_density", "msvb_density"];
        if builtin {
            header.push("true_density");
        }
        let rows = grid
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let mut row = standardization.as_ref().map_or(x.clone(), |t| t.inverse(x));
                row.extend([avb[i], msvb[i]]);
                if builtin {
                    row.push(truth_mixture_density(x));
                }
                row
            })
            .collect();
        plots.push(PlotTable {
            file: format!("density_{repeat:03}.csv"),
            header: header.into_iter().map(String::from).collect(),
            rows,
        });
    }
    Ok(Partial {
        assembled,
        failures: gf
            .failures
            .into_iter()
            .map(|(m, error)| FailedModel {
                id: format!("m{m}"),
                error,
            })
            .collect(),
        metrics,
        standardization,
        plots,
    })
}

fn run_sbm(
    config: &ExperimentConfig,
    source: &Source,
    repeat: usize,
    seed: u64,
) -> Result<Partial> {
    let (data, truth) = match (source, &config.data) {
        (Source::Graph(g), _) => (g.clone(), None),
        (
            _,
            DataConfig::Builtin {
                blocks,
                p_in,
                p_out,
                ..
            },
        ) => {
            let (g, labels) = planted_partition(
                builtin_n(config, 40),
                blocks.unwrap_or(2),
                p_in.unwrap_or(0.9),
                p_out.unwrap_or(0.1),
                derive_seed(seed, &[0]),
            )?;
            (g, Some(labels))
        }
        _ => {
            return Err(AvbError::Config(
                "sbm experiments need builtin or edge-list data".into(),
            ))
        }
    };
    let defaults = SbmConfig::default();
    let o = &config.optimizer;
    let cfg = SbmConfig {
        restarts: o.restarts.unwrap_or(defaults.restarts),
        iters: o.max_iters.unwrap_or(defaults.iters),
        tol: o.tol.unwrap_or(defaults.tol),
        b0: config.b0(),
        seed: derive_seed(seed, &[2]),
    };
    let gf = fit_sbm_grid(&data, &config.grid.components, &cfg)?;
    let assembled = assemble(&gf.combined, &gf.collection)?;
    let sel = assembled.selection.selected;
    let state = &gf.combined.components[sel];
    let labels = state.hard_labels();
    let mut metrics = BTreeMap::new();
    put(&mut metrics, "selected_blocks", state.m as f64);
    let expected: f64 = gf
        .combined
        .components
        .iter()
        .zip(&gf.combined.gamma)
        .map(|(s, g)| g * s.m as f64)
        .sum();
    put(&mut metrics, "expected_blocks", expected);
    put(&mut metrics, "nodes", data.n() as f64);
    put(&mut metrics, "edges", data.edge_count() as f64);
    if let Some(t) = &truth {
        match label_accuracy(&labels, t) {
            Ok(acc) => put(&mut metrics, "label_accuracy", acc),
            Err(e) => log::warn!("label accuracy unavailable: {e}"),
        }
    }
    let mut header = vec!["node", "label"];
    if truth.is_some() {
        header.push("true_label");
    }
    let rows = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let mut row = vec![i as f64, l as f64];
            if let Some(t) = &truth {
                row.push(t[i] as f64);
            }
            row
        })
        .collect();
    Ok(Partial {
        assembled,
        failures: gf
            .failures
            .into_iter()
            .map(|(m, error)| FailedModel {
                id: format!("sbm{m}"),
                error,
            })
            .collect(),
        metrics,
        standardization: None,
        plots: vec![PlotTable {
            file: format!("labels_{repeat:03}.csv"),
            header: header.into_iter().map(String::from).collect(),
            rows,
        }],
    })
}

struct ParticleFit {
    space: DiscretizedSpace,
    arch: NetArchitecture,
    state: ParticleState,
    elbo: ElboBreakdown,
}

fn run_particle(config: &ExperimentConfig, seed: u64) -> Result<Partial> {
    let p = &config.particle;
    let noise = regression_noise(config);
    let data = synthetic_regression(
        builtin_n(config, 64),
        relu_ramp,
        noise,
        &mut substream(seed, &[0]),
    )?;
    let adapter = LikelihoodAdapter::gaussian(data.clone());
    let grid = architectures(config, 1, p.bound)?;
    let collection = architecture_collection(&grid, data.len(), config.b0())?;
    let rate = match p.schedule {
        RateSchedule::Constant => LearningRate::Constant(p.lr),
        RateSchedule::InvSqrt => LearningRate::InvSqrt(p.lr),
    };
    let fits: Vec<ParticleFit> = grid
        .par_iter()
        .enumerate()
        .map(|(i, &arch)| {
            let space = DiscretizedSpace::grid(arch.param_count(), p.bound, p.spacing)?;
            let model = NetworkModel {
                arch,
                adapter: &adapter,
            };
            let mut rng = substream(seed, &[2, i as u64]);
            let q = (p.particles as u64).min(space.atom_count()) as usize;
            let init = ParticleState::random(&space, q, &mut UniformUnoccupied, &mut rng)?;
            let run = run_algorithm2(
                &space,
                &model,
                init,
                p.iterations,
                rate,
                &mut rng,
                &mut UniformUnoccupied,
            )?;
            Ok(ParticleFit {
                space,
                arch,
                state: run.state,
                elbo: run.elbo,
            })
        })
        .collect::<Result<_>>()?;
    let combined = combine_posteriors(
        &collection,
        fits.iter().map(|f| (f.arch.model_id(), f, f.elbo)),
    )?;
    let assembled = assemble(&combined, &collection)?;
    let mut metrics = BTreeMap::new();
    let total_atoms: u64 = fits
        .iter()
        .map(|f| f.space.atom_count())
        .fold(0, u64::saturating_add);
    put(&mut metrics, "total_atoms", total_atoms as f64);
    if total_atoms <= p.exact_atom_limit {
        let risks = particle_risks(&combined, &collection, &data, assembled.selection.selected)?;
        for (k, v) in risks {
            put(&mut metrics, k, v);
        }
    }
    Ok(Partial {
        assembled,
        failures: Vec::new(),
        metrics,
        standardization: None,
        plots: Vec::new(),
    })
}

/// Exact risks `E_Xi[n d^2]` and their risk-bound functionals for the
/// averaged and selected particle posteriors, against the exact posterior
/// over the union of all atom sets.
fn particle_risks(
    combined: &CombinedPosterior<&ParticleFit>,
    collection: &ModelCollection,
    data: &RegressionData,
    selected: usize,
) -> Result<Vec<(&'static str, f64)>> {
    let adapter = LikelihoodAdapter::gaussian(data.clone());
    let mut log_post = Vec::new();
    let mut n_d2 = Vec::new();
    let mut xi_avb = Vec::new();
    let mut xi_msvb = Vec::new();
    for (m, fit) in combined.components.iter().enumerate() {
        let pos = collection
            .position(&combined.ids[m])
            .expect("combined models come from the collection");
        let model = NetworkModel {
            arch: fit.arch,
            adapter: &adapter,
        };
        let offset = log_post.len();
        for a in 0..fit.space.atom_count() {
            let theta = fit.space.atom(a);
            log_post.push(
                collection.log_alpha()[pos] + fit.space.log_atom_mass() + model.log_lik(&theta),
            );
            let mut r = 0.0;
            for i in 0..data.len() {
                let x = data.input(i);
                r += (forward(&fit.arch, &theta, x)? - relu_ramp(x[0])).powi(2);
            }
            n_d2.push(r);
        }
        xi_avb.resize(log_post.len(), 0.0);
        xi_msvb.resize(log_post.len(), 0.0);
        for (&c, &w) in fit.state.centers.iter().zip(&fit.state.weights) {
            xi_avb[offset + c as usize] = combined.gamma[m] * w;
            if m == selected {
                xi_msvb[offset + c as usize] = w;
            }
        }
    }
    let (_, post) = normalize_log_weights(&log_post);
    let grid = default_upsilon_grid();
    let avb = risk_bound_functional(&post, &xi_avb, &n_d2, &grid)?;
    let msvb = risk_bound_functional(&post, &xi_msvb, &n_d2, &grid)?;
    Ok(vec![
        ("risk_avb", exact_risk(&xi_avb, &n_d2)?),
        ("risk_msvb", exact_risk(&xi_msvb, &n_d2)?),
        ("risk_bound_avb", avb.value),
        ("risk_bound_msvb", msvb.value),
        ("risk_posterior", exact_risk(&post, &n_d2)?),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn well_formed_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "x,y\n1,2\n2,4\n3,6\n");
        let ds = ingest_csv(
            &p,
            &CsvSchema {
                features: None,
                target: Some("y".into()),
            },
        )
        .unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.target, Some(vec![2.0, 4.0, 6.0]));
        let z: Vec<f64> = ds.features.iter().map(|r| r[0]).collect();
        assert!(z.iter().sum::<f64>().abs() < 1e-12);
        assert!((z.iter().map(|v| v * v).sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ragged_row_reports_its_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "r.csv",
            "a,b\n1,2\n3,4\n5,6\n7,8\n9,10\n11\n13,14\n",
        );
        match ingest_csv(&p, &CsvSchema::default()) {
            Err(AvbError::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("expected a parse error, got {other:?}"),
        }
        let p = write(dir.path(), "n.csv", "a,b\n1,2\n3,x\n");
        assert!(matches!(
            ingest_csv(&p, &CsvSchema::default()),
            Err(AvbError::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn standardization_round_trip() {
        let rows = vec![
            vec![1.5, -3.0, 7.0],
            vec![2.25, 4.0, 7.0],
            vec![-0.5, 10.0, 7.0],
        ];
        let t = Standardization::fit(vec!["a".into(), "b".into(), "c".into()], &rows);
        for r in &rows {
            let back = t.inverse(&t.transform(r));
            for (a, b) in back.iter().zip(r) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn edge_list_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.csv", "i,j\n1,0\n2,1\n");
        let g = read_edge_list(&p, None).unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.edge_count(), 2);
        assert!(read_edge_list(&p, Some(2)).is_err());
        let bad = write(dir.path(), "b.csv", "0,1\n2,2\n");
        assert!(matches!(
            read_edge_list(&bad, None),
            Err(AvbError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn empty_grid_is_rejected() {
        let text = "kind = \"mixture\"\n[grid]\ncomponents = []\n";
        let e = ExperimentConfig::from_toml_str(text, Path::new(".")).unwrap_err();
        assert!(matches!(e, AvbError::Config(_)));
        let text = "kind = \"deep_regression\"\n[grid]\ndepths = [2]\n";
        assert!(ExperimentConfig::from_toml_str(text, Path::new(".")).is_err());
    }

    #[test]
    fn unknown_fields_and_missing_files_are_rejected() {
        let text = "kind = \"sbm\"\n[grid]\ncomponents = [1, 2]\nextra = 1\n";
        assert!(ExperimentConfig::from_toml_str(text, Path::new(".")).is_err());
        let text = "kind = \"sbm\"\n[data]\nsource = \"edge_list\"\npath = \"missing.csv\"\n[grid]\ncomponents = [1]\n";
        assert!(ExperimentConfig::from_toml_str(text, Path::new("/nonexistent")).is_err());
        let text = "kind = \"quasi_regression\"\n[grid]\ndepths = [2]\nwidths = [2]\n";
        assert!(ExperimentConfig::from_toml_str(text, Path::new(".")).is_err());
    }

    #[test]
    fn small_sbm_run_round_trips() {
        let text = "kind = \"sbm\"\n[data]\nsource = \"builtin\"\nn = 20\n[grid]\ncomponents = [1, 2, 3]\n[optimizer]\nrestarts = 2\n[seeds]\nmaster = 3\nrepeats = 2\n";
        let config = ExperimentConfig::from_toml_str(text, Path::new(".")).unwrap();
        let out = run_experiment(&config, Some(2)).unwrap();
        assert_eq!(out.runs.len(), 2);
        for run in &out.runs {
            assert!(run.dominance.holds);
            assert!(replay(run).consistent);
        }
        let dir = tempfile::tempdir().unwrap();
        write_outputs(&out, dir.path()).unwrap();
        let back = read_result(&dir.path().join(result_file_name(1))).unwrap();
        assert_eq!(back, out.runs[1]);
        assert!(replay(&back).consistent);
        assert!(dir.path().join("labels_000.csv").is_file());
        assert!(dir.path().join("summary.json").is_file());
    }

    #[test]
    fn particle_demo_reports_risk_bounds() {
        let text = "kind = \"particle_demo\"\n[data]\nsource = \"builtin\"\nn = 32\n[grid]\ndepths = [2]\nwidths = [1]\n[particle]\nparticles = 8\niterations = 20\n";
        let config = ExperimentConfig::from_toml_str(text, Path::new(".")).unwrap();
        let out = run_experiment(&config, Some(1)).unwrap();
        let m = &out.runs[0].metrics;
        assert!(m["risk_bound_avb"] >= m["risk_avb"] - 1e-9);
        assert!(m["risk_bound_msvb"] >= m["risk_msvb"] - 1e-9);
    }
}
