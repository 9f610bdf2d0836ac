//! Command-line interface: `simulate`, `cluster`, `evaluate` and `select-k`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 ingestion or I/O error,
//! 4 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::banding::BandwidthRule;
use crate::cluster::{mvbsc, KMeansParams, MvbscOptions};
use crate::error::{Error, Result};
use crate::harness::{self, ExperimentConfig, RunControl};
use crate::io::{self, DistanceSpec, RunReport, SimilarityFormat};
use crate::metrics::{matched_accuracy, nmi, select_k};
use crate::model::{DistanceModel, SimilarityView};
use crate::weights::WeightRule;

#[derive(Parser, Debug)]
#[command(name = "mvbsc", version, about = "Multi-view banded spectral clustering")]
pub struct Cli {
    /// Base seed; overrides the seed in a simulation config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to the available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, default_value = ".")]
    pub output_dir: PathBuf,
    /// Format of tables written by simulate, evaluate and select-k.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
    /// Repeat for more logging.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Monte Carlo experiment from a TOML config.
    Simulate(SimulateArgs),
    /// Cluster similarity views into K groups.
    Cluster(ClusterArgs),
    /// Compare a label file with a reference labelling.
    Evaluate(EvaluateArgs),
    /// Scan K around a centre and keep the best NMI against a reference.
    SelectK(SelectKArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Stop after this many replications, keeping the checkpoint.
    #[arg(long, hide = true)]
    pub stop_after: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    /// Similarity view (CSV, or binary for .mvbs/.bin); repeat per view.
    #[arg(long = "view", required = true)]
    pub views: Vec<PathBuf>,
    /// index:<scale>, icd9:<eta> or matrix:<path>.
    #[arg(long, default_value = "index:1")]
    pub distance: String,
    /// Cluster radius on the distance scale.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Decay exponent; one value for all views or one per view.
    #[arg(long)]
    pub alpha: Vec<f64>,
    /// snr, q, uniform or fixed:<l1>,<l2>,...
    #[arg(long, default_value = "q")]
    pub weight_rule: String,
    /// simulation, strict or fixed:<h>.
    #[arg(long, default_value = "simulation")]
    pub bandwidth_rule: String,
    /// Largest cluster size for the bandwidth formula (default ceil(n/K)).
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long, default_value_t = KMeansParams::default().restarts)]
    pub restarts: usize,
    #[arg(long, default_value_t = KMeansParams::default().max_iter)]
    pub max_iter: usize,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    #[arg(long)]
    pub k: usize,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Stem of the written `<name>_report.json` and `<name>_labels.csv`.
    #[arg(long, default_value = "mvbsc")]
    pub name: String,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
}

#[derive(Args, Debug)]
pub struct SelectKArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub k_center: usize,
    #[arg(long, default_value_t = 0.2)]
    pub span: f64,
    #[arg(long, default_value_t = 1)]
    pub step: usize,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::config("--threads must be positive"));
        }
        // A second initialization in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    fs::create_dir_all(&cli.output_dir).map_err(|e| Error::io(&cli.output_dir, e))?;
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Cluster(a) => cluster(cli, a),
        Command::Evaluate(a) => evaluate(cli, a),
        Command::SelectK(a) => select_k_cmd(cli, a),
    }
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(seed) = cli.seed {
        cfg.data.seed = seed;
    }
    let control = RunControl { stop_after: a.stop_after };
    let out = harness::simulate(&cfg, &cli.output_dir, &control)?;
    if !out.complete {
        println!("stopped early; checkpoint at {}", out.checkpoint_path.display());
        return Ok(());
    }
    if cli.format == OutputFormat::Json {
        let name = &cfg.output.name;
        write_json(&cli.output_dir.join(format!("{name}_replications.json")), &out.rows)?;
        write_json(&cli.output_dir.join(format!("{name}_summary.json")), &out.summary)?;
    }
    for s in &out.summary {
        println!(
            "{} {} K={} {:<16} acc {:.3} ({:.4})  nmi {:.3} ({:.4})",
            s.model, s.noise, s.k, s.method, s.acc_mean, s.acc_sd, s.nmi_mean, s.nmi_sd
        );
    }
    Ok(())
}

struct Pipeline {
    ids: Vec<String>,
    views: Vec<SimilarityView>,
    dm: DistanceModel,
    opts: MvbscOptions,
}

fn prepare(cli: &Cli, p: &PipelineArgs, k: usize) -> Result<Pipeline> {
    let weight_rule: WeightRule = p.weight_rule.parse()?;
    let bandwidth_rule: BandwidthRule = p.bandwidth_rule.parse()?;
    let distance: DistanceSpec = p.distance.parse()?;
    let loaded = p
        .views
        .iter()
        .map(|path| io::load_similarity(path, SimilarityFormat::from_path(path)))
        .collect::<Result<Vec<_>>>()?;
    let (ids, mut views) = io::align_views(loaded)?;
    match p.alpha.len() {
        0 => {}
        1 => views.iter_mut().for_each(|v| v.alpha = Some(p.alpha[0])),
        l if l == views.len() => views.iter_mut().zip(&p.alpha).for_each(|(v, &a)| v.alpha = Some(a)),
        l => {
            return Err(Error::config(format!(
                "--alpha given {l} times for {} views; give it once or once per view",
                views.len()
            )))
        }
    }
    if !matches!(bandwidth_rule, BandwidthRule::Fixed(_)) {
        if p.alpha.is_empty() {
            return Err(Error::config(format!(
                "bandwidth rule {bandwidth_rule} needs --alpha (or use --bandwidth-rule fixed:<h>)"
            )));
        }
        if p.delta.is_none() {
            return Err(Error::config(format!(
                "bandwidth rule {bandwidth_rule} needs --delta (or use --bandwidth-rule fixed:<h>)"
            )));
        }
    }
    let mut dm = io::load_distance(&distance, &ids)?;
    if let Some(d) = p.delta {
        dm.set_delta(d)?;
    }
    let opts = MvbscOptions {
        k,
        weight_rule,
        bandwidth_rule,
        kmeans: KMeansParams {
            restarts: p.restarts,
            max_iter: p.max_iter,
        },
        seed: cli.seed.unwrap_or(0),
        n_max: p.n_max,
    };
    Ok(Pipeline { ids, views, dm, opts })
}

fn cluster(cli: &Cli, a: &ClusterArgs) -> Result<()> {
    let p = prepare(cli, &a.pipeline, a.k)?;
    let result = mvbsc(&p.views, &p.dm, &p.opts)?;
    let report = RunReport::from_result(
        &result,
        &p.ids,
        p.opts.seed,
        p.opts.weight_rule.to_string(),
        p.opts.bandwidth_rule.to_string(),
    );
    let report_path = cli.output_dir.join(format!("{}_report.json", a.name));
    let labels_path = cli.output_dir.join(format!("{}_labels.csv", a.name));
    io::write_report(&report_path, &report)?;
    io::write_labels(&labels_path, &p.ids, &result.labels)?;
    println!("lambda = {:?}", report.lambda);
    println!("bandwidths = {:?}", report.bandwidths);
    println!("wrote {} and {}", report_path.display(), labels_path.display());
    Ok(())
}

#[derive(Serialize)]
struct Evaluation {
    nmi: f64,
    accuracy: f64,
}

fn evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let (ids, labels) = io::read_labels(&a.labels)?;
    let (ref_ids, reference) = io::read_labels(&a.reference)?;
    let reference = io::reorder_labels(&ids, &ref_ids, &reference, &a.reference.display().to_string())?;
    let eval = Evaluation {
        nmi: nmi(&labels, &reference)?.value,
        accuracy: matched_accuracy(&labels, &reference)?,
    };
    match cli.format {
        OutputFormat::Csv => write_csv(&cli.output_dir.join("evaluation.csv"), std::slice::from_ref(&eval))?,
        OutputFormat::Json => write_json(&cli.output_dir.join("evaluation.json"), &eval)?,
    }
    println!("nmi = {}", eval.nmi);
    println!("accuracy = {}", eval.accuracy);
    Ok(())
}

#[derive(Serialize)]
struct TraceRow {
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "NMI")]
    nmi: f64,
}

fn select_k_cmd(cli: &Cli, a: &SelectKArgs) -> Result<()> {
    let p = prepare(cli, &a.pipeline, a.k_center)?;
    let (ref_ids, reference) = io::read_labels(&a.reference)?;
    let reference = io::reorder_labels(&p.ids, &ref_ids, &reference, &a.reference.display().to_string())?;
    let out = select_k(&p.views, &p.dm, &reference, a.k_center, a.span, a.step, &p.opts)?;
    let rows: Vec<TraceRow> = out.trace.iter().map(|&(k, nmi)| TraceRow { k, nmi }).collect();
    match cli.format {
        OutputFormat::Csv => write_csv(&cli.output_dir.join("select_k_trace.csv"), &rows)?,
        OutputFormat::Json => write_json(&cli.output_dir.join("select_k_trace.json"), &rows)?,
    }
    println!("chosen K = {}", out.chosen_k);
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::ingestion(path.display().to_string(), format!("{other:?}")),
    })?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::ingestion(path.display().to_string(), e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Numerical(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn global_flags_parse_after_subcommand() {
        let cli = Cli::try_parse_from([
            "mvbsc", "evaluate", "--labels", "a.csv", "--reference", "b.csv", "--format", "json", "--seed", "3",
        ])
        .unwrap();
        assert_eq!(cli.format, OutputFormat::Json);
        assert_eq!(cli.seed, Some(3));
    }
}
