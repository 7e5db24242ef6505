//! Experiment specs and the sweep runner.
//!
//! A sweep is the grid `method × shuffle × target dimension`. Every cell is
//! independent: its randomness comes from seeds derived by hashing the master
//! seed with the cell coordinates, so results do not depend on scheduling.
//! The split (and any training-set noise) depends only on the shuffle index,
//! so all methods and dimensions of one shuffle see the same data.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evalbench::{
    self, knn1_classify, lpp_fit, lpp_preprojection_dim, pca_fit, DimResult, EvalReport, KappaNormalization,
    LabeledDataset, NoiseSettings,
};
use crate::graph;
use crate::io::{self, DatasetFormat};
use crate::synth::{self, TwoClusterSpec};
use crate::trainer::{self, TrainConfig, TrainTrace};
use crate::ttmap::TtMap;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ttpudr,
    Pca,
    Lpp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ttpudr => "ttpudr",
            Method::Pca => "pca",
            Method::Lpp => "lpp",
        }
    }

    fn code(self) -> u64 {
        match self {
            Method::Ttpudr => 1,
            Method::Pca => 2,
            Method::Lpp => 3,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ttpudr" => Ok(Method::Ttpudr),
            "pca" => Ok(Method::Pca),
            "lpp" => Ok(Method::Lpp),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreProjection {
    /// PCA first whenever the dimension is at least the training-set size.
    #[default]
    Auto,
    Never,
    Always,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Csv,
    Raw,
    PgmDir,
    TwoClusters,
    TwoClassImages,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// File or directory for the on-disk formats.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Sample shape of CSV rows.
    #[serde(default)]
    pub shape: Option<Vec<usize>>,
    /// Tensor shape the samples are refolded to before training.
    #[serde(default)]
    pub reshape: Option<Vec<usize>>,
    /// Generator settings for the synthetic kinds.
    #[serde(default)]
    pub synthetic: Option<TwoClusterSpec>,
    /// Grey-level scale of synthetic images.
    #[serde(default)]
    pub image_scale: Option<f64>,
}

impl DatasetSpec {
    pub fn load(&self) -> Result<LabeledDataset> {
        let need_path = || {
            self.path
                .as_deref()
                .ok_or_else(|| Error::Config(format!("dataset kind {:?} needs a path", self.kind)))
        };
        let data = match self.kind {
            DatasetKind::Csv => {
                let shape = self
                    .shape
                    .clone()
                    .ok_or_else(|| Error::Config("CSV datasets need a sample shape".into()))?;
                io::load_dataset(need_path()?, &DatasetFormat::Csv { shape })?
            }
            DatasetKind::Raw => io::load_dataset(need_path()?, &DatasetFormat::Raw)?,
            DatasetKind::PgmDir => io::load_dataset(need_path()?, &DatasetFormat::PgmDir)?,
            DatasetKind::TwoClusters => synth::two_clusters(&self.synthetic.clone().unwrap_or_default())?,
            DatasetKind::TwoClassImages => {
                let s = self.synthetic.clone().unwrap_or(TwoClusterSpec {
                    shape: vec![16, 16],
                    samples: 300,
                    ..TwoClusterSpec::default()
                });
                synth::two_class_images(&s, self.image_scale.unwrap_or(12.0))?
            }
        };
        match &self.reshape {
            Some(shape) => data.reshaped(shape),
            None => Ok(data),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodSettings {
    /// TTPUDR settings; `neighbors` and `kernel_width` also build the LPP graph.
    pub train: TrainConfig,
    pub lpp_preproject: PreProjection,
    pub kappa: KappaNormalization,
}

impl Default for MethodSettings {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            lpp_preproject: PreProjection::Auto,
            kappa: KappaNormalization::ClassSquared,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub dataset: DatasetSpec,
    pub methods: Vec<Method>,
    pub target_dims: Vec<usize>,
    #[serde(default = "default_shuffles")]
    pub shuffles: usize,
    pub train_fraction: f64,
    #[serde(default = "default_true")]
    pub stratified: bool,
    /// Noise injected into the training portion of each shuffle.
    #[serde(default)]
    pub noise: Option<NoiseSettings>,
    #[serde(default)]
    pub settings: MethodSettings,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_shuffles() -> usize {
    1
}

fn default_true() -> bool {
    true
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("no methods given".into()));
        }
        if self.target_dims.is_empty() || self.target_dims.contains(&0) {
            return Err(Error::Config("target_dims must be a nonempty list of positive sizes".into()));
        }
        if self.shuffles == 0 {
            return Err(Error::Config("shuffles must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train_fraction {} outside (0, 1)", self.train_fraction)));
        }
        if let Some(path) = &self.dataset.path {
            if !path.exists() {
                return Err(Error::Config(format!("dataset path {} does not exist", path.display())));
            }
        }
        Ok(())
    }
}

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a cell, from the master seed and the cell's coordinates.
pub fn derive_seed(master: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(mix(master), |acc, &c| mix(acc ^ mix(c)))
}

/// Result of training and scoring one method at one dimension.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub result: DimResult,
    pub trace: Option<TrainTrace>,
    pub model: Option<TtMap>,
}

/// Fits `method` on `train`, projects both sets, and scores 1NN on `test`.
pub fn evaluate_method(
    train: &LabeledDataset,
    test: &LabeledDataset,
    method: Method,
    target_dim: usize,
    settings: &MethodSettings,
    seed: u64,
) -> Result<CellOutcome> {
    if train.num_classes() != test.num_classes() {
        return Err(Error::invalid("train and test disagree on the number of classes"));
    }
    let d = train.input_dim();
    let (train_feats, test_feats, param_count, trace, model) = match method {
        Method::Ttpudr => {
            let config = TrainConfig {
                target_dim,
                seed,
                ..settings.train.clone()
            };
            let (map, trace) = trainer::fit(train.samples(), &config)?;
            let a = map.apply_batch(train.samples())?;
            let b = map.apply_batch(test.samples())?;
            (a, b, map.param_count(), Some(trace), Some(map))
        }
        Method::Pca => {
            let pca = pca_fit(&train.feature_matrix(), target_dim)?;
            let a = pca.transform(&train.feature_matrix())?;
            let b = pca.transform(&test.feature_matrix())?;
            (a, b, pca.param_count(), None, None)
        }
        Method::Lpp => {
            let x = train.feature_matrix();
            let flat: Vec<&[f64]> = train.samples().iter().map(|s| s.data()).collect();
            let t = match settings.train.kernel_width {
                Some(t) => t,
                None => graph::suggest_kernel_width(&flat, settings.train.neighbors)?,
            };
            let g = graph::build_affinity_flat(&flat, settings.train.neighbors, t)?;
            let pre = match settings.lpp_preproject {
                PreProjection::Never => None,
                PreProjection::Always => Some(lpp_preprojection_dim(train.len(), train.num_classes(), d)),
                PreProjection::Auto if d >= train.len() => Some(lpp_preprojection_dim(train.len(), train.num_classes(), d)),
                PreProjection::Auto => None,
            };
            let lpp = lpp_fit(&x, &g, target_dim, pre)?;
            let a = lpp.transform(&x)?;
            let b = lpp.transform(&test.feature_matrix())?;
            (a, b, lpp.param_count(), None, None)
        }
    };
    let predicted = knn1_classify(&train_feats, train.labels(), &test_feats)?;
    let result = evalbench::score(
        test.labels(),
        &predicted,
        test.num_classes(),
        settings.kappa,
        target_dim,
        param_count,
    )?;
    Ok(CellOutcome { result, trace, model })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub target_dim: usize,
    pub error: String,
    pub numerical: bool,
}

/// One report per (method, shuffle), with failures kept beside the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub shuffle: usize,
    pub report: EvalReport,
    pub failures: Vec<CellFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub target_dim: usize,
    /// `None` when every shuffle failed for this cell.
    pub oa: Option<f64>,
    pub aa: Option<f64>,
    pub kc: Option<f64>,
    pub param_count: Option<usize>,
    pub runs: usize,
    pub failed: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub runs: Vec<RunReport>,
    pub aggregate: Vec<AggregateRow>,
    /// `(method, shuffle, target_dim, trace)` for every TTPUDR cell that trained.
    pub traces: Vec<(Method, usize, usize, TrainTrace)>,
}

struct PreparedShuffle {
    train: LabeledDataset,
    test: LabeledDataset,
}

fn prepare_shuffle(data: &LabeledDataset, spec: &ExperimentSpec, shuffle: usize) -> Result<PreparedShuffle> {
    let split_seed = derive_seed(spec.seed, &[0, shuffle as u64]);
    let s = evalbench::split(data.labels(), data.num_classes(), spec.train_fraction, split_seed, spec.stratified)?;
    let mut train = data.subset(&s.train)?;
    let test = data.subset(&s.test)?;
    if let Some(noise) = &spec.noise {
        let noise_seed = derive_seed(spec.seed, &[1, shuffle as u64]);
        train = evalbench::inject_block_noise(&train, noise, noise_seed)?.0;
    }
    Ok(PreparedShuffle { train, test })
}

/// Runs every cell of the sweep on an already loaded dataset.
pub fn run_on(data: &LabeledDataset, spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let prepared: Vec<PreparedShuffle> = (0..spec.shuffles)
        .map(|s| prepare_shuffle(data, spec, s))
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for &method in &spec.methods {
        for shuffle in 0..spec.shuffles {
            for &dim in &spec.target_dims {
                cells.push((method, shuffle, dim));
            }
        }
    }
    let outcomes: Vec<Result<CellOutcome>> = cells
        .par_iter()
        .map(|&(method, shuffle, dim)| {
            let p = &prepared[shuffle];
            let seed = derive_seed(spec.seed, &[2, method.code(), shuffle as u64, dim as u64]);
            evaluate_method(&p.train, &p.test, method, dim, &spec.settings, seed)
        })
        .collect();

    // where the outputs go is not part of the result, so reports stay identical across locations
    let resolved = serde_json::to_value(ExperimentSpec {
        output_dir: None,
        ..spec.clone()
    })
    .map_err(|e| Error::Config(e.to_string()))?;
    let mut runs = Vec::new();
    let mut traces = Vec::new();
    let mut iter = cells.iter().zip(outcomes);
    for &method in &spec.methods {
        for (shuffle, p) in prepared.iter().enumerate() {
            let mut results = Vec::new();
            let mut failures = Vec::new();
            for _ in &spec.target_dims {
                let (&(_, _, dim), outcome) = iter.next().expect("one outcome per cell");
                match outcome {
                    Ok(o) => {
                        if let Some(trace) = o.trace {
                            traces.push((method, shuffle, dim, trace));
                        }
                        results.push(o.result);
                    }
                    Err(e) => failures.push(CellFailure {
                        target_dim: dim,
                        numerical: e.is_numerical(),
                        error: e.to_string(),
                    }),
                }
            }
            runs.push(RunReport {
                shuffle,
                report: EvalReport {
                    method: method.name().into(),
                    seed: spec.seed,
                    train_fraction: spec.train_fraction,
                    noise_fraction: spec.noise.as_ref().map_or(0.0, |n| n.fraction),
                    kappa: spec.settings.kappa,
                    train_size: p.train.len(),
                    test_size: p.test.len(),
                    input_dim: data.input_dim(),
                    results,
                    spec: resolved.clone(),
                },
                failures,
            });
        }
    }
    let aggregate = aggregate(&runs, spec);
    Ok(ExperimentOutcome { runs, aggregate, traces })
}

fn aggregate(runs: &[RunReport], spec: &ExperimentSpec) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for &method in &spec.methods {
        for &dim in &spec.target_dims {
            let hits: Vec<&DimResult> = runs
                .iter()
                .filter(|r| r.report.method == method.name())
                .flat_map(|r| r.report.results.iter().filter(|d| d.target_dim == dim))
                .collect();
            let failed = runs
                .iter()
                .filter(|r| r.report.method == method.name())
                .flat_map(|r| &r.failures)
                .filter(|f| f.target_dim == dim)
                .count();
            let mean = |f: fn(&DimResult) -> f64| {
                (!hits.is_empty()).then(|| hits.iter().map(|d| f(d)).sum::<f64>() / hits.len() as f64)
            };
            rows.push(AggregateRow {
                method,
                target_dim: dim,
                oa: mean(|d| d.metrics.oa),
                aa: mean(|d| d.metrics.aa),
                kc: mean(|d| d.metrics.kc),
                param_count: hits.first().map(|d| d.param_count),
                runs: hits.len(),
                failed,
            });
        }
    }
    rows
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from("method,target_dim,oa,aa,kc,param_count,runs,failed\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.method.name(),
            r.target_dim,
            fmt_opt(r.oa),
            fmt_opt(r.aa),
            fmt_opt(r.kc),
            fmt_opt(r.param_count),
            r.runs,
            r.failed
        ));
    }
    out
}

/// Target dimension against mean OA, one column per method.
pub fn plot_csv(rows: &[AggregateRow], spec: &ExperimentSpec) -> String {
    let mut out = String::from("target_dim");
    for m in &spec.methods {
        out.push_str(&format!(",{}_oa", m.name()));
    }
    out.push('\n');
    for &dim in &spec.target_dims {
        out.push_str(&dim.to_string());
        for &m in &spec.methods {
            let oa = rows.iter().find(|r| r.method == m && r.target_dim == dim).and_then(|r| r.oa);
            out.push_str(&format!(",{}", fmt_opt(oa)));
        }
        out.push('\n');
    }
    out
}

/// Writes `runs/*.json`, `aggregate.csv`, `plot.csv` and `traces/*.csv` under `dir`.
pub fn write_outputs(outcome: &ExperimentOutcome, spec: &ExperimentSpec, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("runs"))?;
    for run in &outcome.runs {
        let name = format!("{}_shuffle{:03}.json", run.report.method, run.shuffle);
        let json = serde_json::to_string_pretty(run).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(dir.join("runs").join(name), json + "\n")?;
    }
    fs::write(dir.join("aggregate.csv"), aggregate_csv(&outcome.aggregate))?;
    fs::write(dir.join("plot.csv"), plot_csv(&outcome.aggregate, spec))?;
    if !outcome.traces.is_empty() {
        fs::create_dir_all(dir.join("traces"))?;
        for (method, shuffle, dim, trace) in &outcome.traces {
            let name = format!("{}_shuffle{:03}_dim{:03}.csv", method.name(), shuffle, dim);
            fs::write(dir.join("traces").join(name), trace.to_csv())?;
        }
    }
    Ok(())
}

/// Loads the dataset, runs the sweep and writes outputs when `output_dir` is set.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let data = spec.dataset.load()?;
    let outcome = run_on(&data, spec)?;
    if let Some(dir) = &spec.output_dir {
        write_outputs(&outcome, spec, dir)?;
    }
    Ok(outcome)
}
