//! Monte Carlo experiments over the simulation designs: configuration,
//! per-replication data generation, method dispatch, checkpointing and the
//! per-replication and summary tables.
//!
//! Configuration files are TOML with `version = 1`:
//!
//! ```toml
//! version = 1
//!
//! [data]
//! models = ["M1", "M4"]
//! n = 500
//! ks = [25]
//! noise = ["medium"]        # low | medium | high | sigma:<s1>,<s2>,...
//! alpha = [0.4, 0.6]        # one decay exponent per view
//! distance_scale = 0.1
//! replications = 100
//! seed = 1
//!
//! [model]                   # optional, these are the defaults
//! omega_diag = 1.0
//! omega_offdiag = 0.6
//! clip = [-1.0, 1.0]
//! diag_value = 1.0
//!
//! [methods]
//! names = ["mvBSC_q", "mvBSC_SNR", "KA", "singleW"]
//! bandwidth_rule = "simulation"
//! grid_step = 0.05
//!
//! [kmeans]
//! restarts = 25
//! max_iter = 300
//!
//! [output]
//! name = "table1"
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::banding::BandwidthRule;
use crate::baselines::{kernel_addition, spectral_cluster_baseline, SpectralVariant};
use crate::cluster::{KMeansParams, MvbscOptions, PreparedViews};
use crate::error::{Error, Result};
use crate::metrics::{lambda_grid_search, matched_accuracy, nmi, Criterion};
use crate::model::{
    index_distance, membership_m1, omega_simulation, sample_view, DistanceModel, MembershipMatrix, SimilarityView,
    SimulationModel,
};
use crate::seed::{derive_seed, replication_seed, streams};
use crate::weights::WeightRule;

pub const CONFIG_VERSION: u32 = 1;

/// Noise standard deviations per view.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseLevel {
    Low,
    Medium,
    High,
    Custom(Vec<f64>),
}

impl NoiseLevel {
    /// Standard deviations for `m` views; named levels cover two views.
    pub fn sigmas(&self, m: usize) -> Result<Vec<f64>> {
        let s = match self {
            NoiseLevel::Low => vec![0.2, 0.4],
            NoiseLevel::Medium => vec![0.4, 0.6],
            NoiseLevel::High => vec![0.6, 0.8],
            NoiseLevel::Custom(s) => s.clone(),
        };
        if s.len() != m {
            return Err(Error::config(format!(
                "noise level {self} gives {} standard deviations for {m} views",
                s.len()
            )));
        }
        Ok(s)
    }
}

impl fmt::Display for NoiseLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseLevel::Low => f.write_str("low"),
            NoiseLevel::Medium => f.write_str("medium"),
            NoiseLevel::High => f.write_str("high"),
            NoiseLevel::Custom(s) => {
                let parts: Vec<String> = s.iter().map(|v| v.to_string()).collect();
                write!(f, "sigma:{}", parts.join(","))
            }
        }
    }
}

impl FromStr for NoiseLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "low" => Ok(NoiseLevel::Low),
            "medium" => Ok(NoiseLevel::Medium),
            "high" => Ok(NoiseLevel::High),
            other => {
                let list = other.strip_prefix("sigma:").ok_or_else(|| {
                    Error::config(format!("unknown noise level {other:?}; expected low, medium, high or sigma:<list>"))
                })?;
                let s = list
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite() && *v >= 0.0)
                            .ok_or_else(|| Error::config(format!("bad noise sd {t:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(NoiseLevel::Custom(s))
            }
        }
    }
}

impl Serialize for NoiseLevel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for NoiseLevel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Method families; single-view families expand to one row per view plus a
/// row holding the per-replication maximum over views.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    MvbscQ,
    MvbscSnr,
    MvbscUniform,
    Oracle,
    Ka,
    Kal,
    NormKal,
    SingleW,
    SingleL,
    SingleNormL,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::MvbscQ,
        Method::MvbscSnr,
        Method::MvbscUniform,
        Method::Oracle,
        Method::Ka,
        Method::Kal,
        Method::NormKal,
        Method::SingleW,
        Method::SingleL,
        Method::SingleNormL,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::MvbscQ => "mvBSC_q",
            Method::MvbscSnr => "mvBSC_SNR",
            Method::MvbscUniform => "mvBSC_uniform",
            Method::Oracle => "oracle",
            Method::Ka => "KA",
            Method::Kal => "KAL",
            Method::NormKal => "normKAL",
            Method::SingleW => "singleW",
            Method::SingleL => "singleL",
            Method::SingleNormL => "singleNormL",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::config(format!("unknown method {s:?}; known methods: {}", known.join(", ")))
            })
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub models: Vec<SimulationModel>,
    pub n: usize,
    pub ks: Vec<usize>,
    pub noise: Vec<NoiseLevel>,
    #[serde(default = "default_alpha")]
    pub alpha: Vec<f64>,
    #[serde(default = "default_scale")]
    pub distance_scale: f64,
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub delta: DeltaSource,
}

/// Where the simulation radius `δ` comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum DeltaSource {
    /// Radius of the partition the views are generated from.
    #[default]
    Truth,
    /// Radius of the unperturbed contiguous block partition, so perturbed
    /// nodes may fall outside the band.
    Block,
    Fixed(f64),
}

impl fmt::Display for DeltaSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeltaSource::Truth => f.write_str("truth"),
            DeltaSource::Block => f.write_str("block"),
            DeltaSource::Fixed(d) => write!(f, "fixed:{d}"),
        }
    }
}

impl FromStr for DeltaSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "truth" => Ok(DeltaSource::Truth),
            "block" => Ok(DeltaSource::Block),
            other => other
                .strip_prefix("fixed:")
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| v.is_finite() && *v > 0.0)
                .map(DeltaSource::Fixed)
                .ok_or_else(|| Error::config(format!("bad delta source {other:?}; expected truth, block or fixed:<d>"))),
        }
    }
}

impl Serialize for DeltaSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for DeltaSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_alpha() -> Vec<f64> {
    vec![0.4, 0.6]
}

fn default_scale() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub omega_diag: f64,
    pub omega_offdiag: f64,
    pub clip: [f64; 2],
    pub diag_value: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            omega_diag: 1.0,
            omega_offdiag: 0.6,
            clip: [-1.0, 1.0],
            diag_value: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodsConfig {
    pub names: Vec<Method>,
    #[serde(default = "default_bandwidth_rule")]
    pub bandwidth_rule: String,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
}

fn default_bandwidth_rule() -> String {
    "simulation".into()
}

fn default_grid_step() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_name")]
    pub name: String,
}

fn default_name() -> String {
    "experiment".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { name: default_name() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub methods: MethodsConfig,
    #[serde(default)]
    pub kmeans: KMeansParams,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(format!(
                "key `version`: unsupported configuration version {}, expected {CONFIG_VERSION}",
                self.version
            )));
        }
        let d = &self.data;
        let nonempty = |ok: bool, key: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("key `data.{key}` must not be empty")))
            }
        };
        nonempty(!d.models.is_empty(), "models")?;
        nonempty(!d.ks.is_empty(), "ks")?;
        nonempty(!d.noise.is_empty(), "noise")?;
        nonempty(!d.alpha.is_empty(), "alpha")?;
        if d.replications == 0 {
            return Err(Error::config("key `data.replications` must be positive"));
        }
        for nl in &d.noise {
            nl.sigmas(d.alpha.len())
                .map_err(|e| Error::config(format!("key `data.noise`: {e}")))?;
        }
        for &k in &d.ks {
            if k == 0 || d.n < 2 * k {
                return Err(Error::config(format!("key `data.ks`: K = {k} needs n >= 2K (n = {})", d.n)));
            }
        }
        if self.methods.names.is_empty() {
            return Err(Error::config("key `methods.names` must not be empty"));
        }
        self.bandwidth_rule()
            .map_err(|e| Error::config(format!("key `methods.bandwidth_rule`: {e}")))?;
        if self.kmeans.restarts == 0 {
            return Err(Error::config("key `kmeans.restarts` must be positive"));
        }
        if self.output.name.is_empty() || self.output.name.contains(['/', '\\']) {
            return Err(Error::config("key `output.name` must be a plain file stem"));
        }
        Ok(())
    }

    pub fn bandwidth_rule(&self) -> Result<BandwidthRule> {
        self.methods.bandwidth_rule.parse()
    }

    /// Hash of everything that influences results (the output name excluded).
    pub fn hash(&self) -> String {
        let mut keyed = self.clone();
        keyed.output = OutputConfig::default();
        let text = toml::to_string(&keyed).expect("configuration serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Scores of one method on one replication of one design cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub model: SimulationModel,
    pub method: String,
    pub noise: String,
    pub k: usize,
    pub replication: usize,
    pub accuracy: f64,
    pub nmi: f64,
}

/// Mean and sample standard deviation per design cell and method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: SimulationModel,
    pub noise: String,
    pub k: usize,
    pub method: String,
    pub acc_mean: f64,
    pub acc_sd: f64,
    pub nmi_mean: f64,
    pub nmi_sd: f64,
    pub replications: usize,
}

/// Ground truth, distances and views for one replication of one cell.
pub struct SimulatedData {
    pub truth: MembershipMatrix,
    pub dm: DistanceModel,
    pub views: Vec<SimilarityView>,
}

/// Generates the data of replication seed `rep_seed` for a design cell.
pub fn simulate_data(
    data: &DataConfig,
    model_cfg: &ModelConfig,
    model: SimulationModel,
    k: usize,
    sigmas: &[f64],
    rep_seed: u64,
) -> Result<SimulatedData> {
    let size_seed = derive_seed(rep_seed, streams::BLOCK_SIZES);
    let truth = model.membership(data.n, k, size_seed, derive_seed(rep_seed, streams::PERTURB))?;
    let dm = index_distance(data.n, data.distance_scale)?;
    let dm = match data.delta {
        DeltaSource::Truth => dm.with_delta_from_partition(&truth)?,
        DeltaSource::Block => dm.with_delta_from_partition(&membership_m1(data.n, k, size_seed)?)?,
        DeltaSource::Fixed(d) => dm.with_delta(d)?,
    };
    let views = data
        .alpha
        .iter()
        .zip(sigmas)
        .enumerate()
        .map(|(s, (&alpha, &sigma))| {
            let om = omega_simulation(&truth, alpha, model_cfg.omega_diag, model_cfg.omega_offdiag)?;
            sample_view(
                &truth,
                &om,
                sigma,
                (model_cfg.clip[0], model_cfg.clip[1]),
                model_cfg.diag_value,
                derive_seed(rep_seed, streams::VIEW_NOISE + s as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulatedData { truth, dm, views })
}

fn score(labels: &MembershipMatrix, truth: &MembershipMatrix) -> Result<(f64, f64)> {
    Ok((matched_accuracy(labels, truth)?, nmi(labels, truth)?.value))
}

/// Runs `methods` on one simulated dataset; returns `(method name, accuracy, nmi)`.
pub fn run_methods(
    sim: &SimulatedData,
    methods: &[Method],
    k: usize,
    bandwidth_rule: BandwidthRule,
    kmeans: KMeansParams,
    grid_step: f64,
    seed: u64,
) -> Result<Vec<(String, f64, f64)>> {
    let opts = MvbscOptions {
        k,
        weight_rule: WeightRule::Q,
        bandwidth_rule,
        kmeans,
        seed: derive_seed(seed, streams::METHOD),
        n_max: Some(sim.truth.n_max()),
    };
    let needs_prepared = methods
        .iter()
        .any(|m| matches!(m, Method::MvbscQ | Method::MvbscSnr | Method::MvbscUniform | Method::Oracle));
    let prepared = if needs_prepared {
        Some(PreparedViews::new(&sim.views, &sim.dm, &opts)?)
    } else {
        None
    };
    let pilot = if methods.iter().any(|m| matches!(m, Method::MvbscQ | Method::MvbscSnr)) {
        Some(prepared.as_ref().unwrap().pilot()?)
    } else {
        None
    };
    let ka = if methods.iter().any(|m| matches!(m, Method::Ka | Method::Kal | Method::NormKal)) {
        let ws: Vec<_> = sim.views.iter().map(|v| &v.w).collect();
        Some(kernel_addition(&ws)?)
    } else {
        None
    };
    let base_seed = opts.seed;
    let mut out = Vec::new();
    for &m in methods {
        match m {
            Method::MvbscQ | Method::MvbscSnr | Method::MvbscUniform => {
                let rule = match m {
                    Method::MvbscQ => WeightRule::Q,
                    Method::MvbscSnr => WeightRule::Snr,
                    _ => WeightRule::Uniform,
                };
                let r = prepared.as_ref().unwrap().run(&rule, pilot.as_ref())?;
                let (a, n) = score(&r.labels, &sim.truth)?;
                out.push((m.name().to_owned(), a, n));
            }
            Method::Oracle => {
                let g = lambda_grid_search(prepared.as_ref().unwrap(), &sim.truth, grid_step, Criterion::Accuracy)?;
                let labels = match &g.best_result {
                    Some(r) => r.labels.clone(),
                    None => prepared.as_ref().unwrap().run(&WeightRule::Uniform, None)?.labels,
                };
                let (a, n) = score(&labels, &sim.truth)?;
                out.push((m.name().to_owned(), a, n));
            }
            Method::Ka | Method::Kal | Method::NormKal => {
                let variant = match m {
                    Method::Ka => SpectralVariant::Raw,
                    Method::Kal => SpectralVariant::Laplacian,
                    _ => SpectralVariant::NormalizedLaplacian,
                };
                let r = spectral_cluster_baseline(ka.as_ref().unwrap(), k, variant, kmeans, base_seed)?;
                let (a, n) = score(&r.labels, &sim.truth)?;
                out.push((m.name().to_owned(), a, n));
            }
            Method::SingleW | Method::SingleL | Method::SingleNormL => {
                let variant = match m {
                    Method::SingleW => SpectralVariant::Raw,
                    Method::SingleL => SpectralVariant::Laplacian,
                    _ => SpectralVariant::NormalizedLaplacian,
                };
                let (mut best_a, mut best_n) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                for (s, v) in sim.views.iter().enumerate() {
                    let r = spectral_cluster_baseline(&v.w, k, variant, kmeans, derive_seed(base_seed, s as u64))?;
                    let (a, n) = score(&r.labels, &sim.truth)?;
                    best_a = best_a.max(a);
                    best_n = best_n.max(n);
                    out.push((format!("{}_v{}", m.name(), s + 1), a, n));
                }
                out.push((format!("{}_max", m.name()), best_a, best_n));
            }
        }
    }
    Ok(out)
}

/// All rows of replication `rep` over every design cell, in table order.
pub fn run_replication(cfg: &ExperimentConfig, rep: usize) -> Result<Vec<ReplicationRow>> {
    let rule = cfg.bandwidth_rule()?;
    let rep_seed = replication_seed(cfg.data.seed, rep as u64);
    let mut rows = Vec::new();
    for &model in &cfg.data.models {
        for noise in &cfg.data.noise {
            let sigmas = noise.sigmas(cfg.data.alpha.len())?;
            for &k in &cfg.data.ks {
                let sim = simulate_data(&cfg.data, &cfg.model, model, k, &sigmas, rep_seed)?;
                let scores = run_methods(
                    &sim,
                    &cfg.methods.names,
                    k,
                    rule,
                    cfg.kmeans,
                    cfg.methods.grid_step,
                    rep_seed,
                )?;
                rows.extend(scores.into_iter().map(|(method, accuracy, nmi)| ReplicationRow {
                    model,
                    method,
                    noise: noise.to_string(),
                    k,
                    replication: rep,
                    accuracy,
                    nmi,
                }));
            }
        }
    }
    Ok(rows)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates rows per (model, noise, K, method), keeping first-seen order.
pub fn summarize(rows: &[ReplicationRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(SimulationModel, String, usize, String)> = Vec::new();
    let mut groups: HashMap<(SimulationModel, String, usize, String), (Vec<f64>, Vec<f64>)> = HashMap::new();
    for r in rows {
        let key = (r.model, r.noise.clone(), r.k, r.method.clone());
        let e = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (Vec::new(), Vec::new())
        });
        e.0.push(r.accuracy);
        e.1.push(r.nmi);
    }
    order
        .into_iter()
        .map(|key| {
            let (acc, nm) = &groups[&key];
            let (acc_mean, acc_sd) = mean_sd(acc);
            let (nmi_mean, nmi_sd) = mean_sd(nm);
            SummaryRow {
                model: key.0,
                noise: key.1,
                k: key.2,
                method: key.3,
                acc_mean,
                acc_sd,
                nmi_mean,
                nmi_sd,
                replications: acc.len(),
            }
        })
        .collect()
}

/// Execution controls that do not affect results.
#[derive(Clone, Debug, Default)]
pub struct RunControl {
    /// Stop after this many newly completed replications, leaving the
    /// checkpoint in place (used to exercise resumption).
    pub stop_after: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct SimulationOutcome {
    pub complete: bool,
    pub rows: Vec<ReplicationRow>,
    pub summary: Vec<SummaryRow>,
    pub replications_path: PathBuf,
    pub summary_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointEntry {
    replication: usize,
    rows: Vec<ReplicationRow>,
}

fn read_checkpoint(path: &Path, hash: &str) -> Result<HashMap<usize, Vec<ReplicationRow>>> {
    let mut done = HashMap::new();
    let Ok(file) = File::open(path) else {
        return Ok(done);
    };
    let mut lines = BufReader::new(file).lines();
    let header: Option<CheckpointHeader> = lines
        .next()
        .and_then(|l| l.ok())
        .and_then(|l| serde_json::from_str(&l).ok());
    match header {
        Some(h) if h.config_hash == hash => {}
        _ => {
            log::warn!("{}: checkpoint belongs to a different configuration; starting over", path.display());
            return Ok(done);
        }
    }
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        // A torn final line from an interrupted write is ignored.
        if let Ok(entry) = serde_json::from_str::<CheckpointEntry>(&line) {
            done.insert(entry.replication, entry.rows);
        }
    }
    Ok(done)
}

/// Writes `<name>_replications.csv` and `<name>_summary.csv`.
pub fn write_tables(dir: &Path, name: &str, rows: &[ReplicationRow], summary: &[SummaryRow]) -> Result<(PathBuf, PathBuf)> {
    let rep_path = dir.join(format!("{name}_replications.csv"));
    let sum_path = dir.join(format!("{name}_summary.csv"));
    write_csv(&rep_path, rows)?;
    write_csv(&sum_path, summary)?;
    Ok((rep_path, sum_path))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::ingestion(path.display().to_string(), e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs every replication not yet in the checkpoint, in parallel, then
/// writes the tables ordered by replication index and removes the checkpoint.
pub fn simulate(cfg: &ExperimentConfig, out_dir: &Path, control: &RunControl) -> Result<SimulationOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let name = &cfg.output.name;
    let checkpoint_path = out_dir.join(format!("{name}.checkpoint.jsonl"));
    let hash = cfg.hash();
    let mut done = read_checkpoint(&checkpoint_path, &hash)?;
    if done.is_empty() {
        let mut f = File::create(&checkpoint_path).map_err(|e| Error::io(&checkpoint_path, e))?;
        let header = serde_json::to_string(&CheckpointHeader { config_hash: hash.clone() }).unwrap();
        writeln!(f, "{header}").map_err(|e| Error::io(&checkpoint_path, e))?;
    } else {
        log::info!("resuming: {} of {} replications already done", done.len(), cfg.data.replications);
    }

    let mut pending: Vec<usize> = (0..cfg.data.replications).filter(|r| !done.contains_key(r)).collect();
    if let Some(limit) = control.stop_after {
        pending.truncate(limit);
    }
    let writer = Mutex::new(
        OpenOptions::new()
            .append(true)
            .open(&checkpoint_path)
            .map_err(|e| Error::io(&checkpoint_path, e))?,
    );
    let fresh = pending
        .par_iter()
        .map(|&rep| {
            let rows = run_replication(cfg, rep)?;
            let line = serde_json::to_string(&CheckpointEntry { replication: rep, rows: rows.clone() })
                .map_err(|e| Error::Numerical(format!("checkpoint serialization: {e}")))?;
            let mut f = writer.lock().unwrap();
            writeln!(f, "{line}").map_err(|e| Error::io(&checkpoint_path, e))?;
            log::debug!("replication {rep} done");
            Ok((rep, rows))
        })
        .collect::<Result<Vec<_>>>()?;
    drop(writer);
    done.extend(fresh);

    let complete = (0..cfg.data.replications).all(|r| done.contains_key(&r));
    let reps: BTreeSet<usize> = done.keys().copied().collect();
    let rows: Vec<ReplicationRow> = reps.iter().flat_map(|r| done[r].clone()).collect();
    let summary = summarize(&rows);
    let replications_path = out_dir.join(format!("{name}_replications.csv"));
    let summary_path = out_dir.join(format!("{name}_summary.csv"));
    if complete {
        write_tables(out_dir, name, &rows, &summary)?;
        fs::remove_file(&checkpoint_path).map_err(|e| Error::io(&checkpoint_path, e))?;
    }
    Ok(SimulationOutcome {
        complete,
        rows,
        summary,
        replications_path,
        summary_path,
        checkpoint_path,
    })
}
