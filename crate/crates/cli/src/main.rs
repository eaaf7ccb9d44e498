//! `cpcal` command-line entry point.
//!
//! Exit codes: 0 success, 1 bad input (including usage errors), 2 internal failure.
//! `CPCAL_WORKERS` sets the worker-thread count.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cpcal::audio::{functionals_600, read_wav, wav_to_logmel, LogMelFrames};
use cpcal::cpc::{extract_cpc_features, train_cpc, CpcModel, CpcTrainConfig};
use cpcal::dimred::{reduce, Reducer, ReducerOptions};
use cpcal::harness::{
    aggregate, budget_to_count, read_report, run_experiment, strategy_contrast, synth_dataset, write_contrast_csv, write_summary_csv,
    ExperimentConfig, GroupKey, MetricChoice, RunOptions, SynthSpec,
};
use cpcal::mal::{affinity, default_k, k_medoids, query_plan, LabelPolicy};
use cpcal::nn::Tensor2;
use cpcal::selfcheck::run_selfcheck;
use cpcal::{Error, FeatureMatrix, Result};

#[derive(Parser, Debug)]
#[command(name = "cpcal", version, about = "Clustering-based active learning over speech features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic four-quadrant dataset as CSV files.
    Synth(SynthArgs),
    /// Extract utterance features from a directory of WAV files.
    Features(FeaturesArgs),
    /// Train a CPC model on a directory of WAV files.
    TrainCpc(TrainCpcArgs),
    /// Apply a dimensionality-reduction pipeline to a feature CSV.
    Reduce(ReduceArgs),
    /// Print the MAL query order for a feature CSV.
    MalPlan(MalPlanArgs),
    /// Run an experiment described by a JSON config.
    Run(RunArgs),
    /// Summarize a report.csv.
    Aggregate(AggregateArgs),
    /// Run the built-in oracle and invariant checks.
    Selfcheck,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON file with a full generator spec; overrides --seed.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FeatureKindArg {
    Logmel600,
    Cpc,
}

#[derive(Args, Debug)]
struct FeaturesArgs {
    #[arg(long)]
    wav_dir: PathBuf,
    #[arg(long, value_enum, default_value = "logmel600")]
    kind: FeatureKindArg,
    /// CPC checkpoint, required for `--kind cpc`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainCpcArgs {
    #[arg(long)]
    wav_dir: PathBuf,
    /// Checkpoint path; the architecture sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// JSON training config; defaults to the full-size model and schedule.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-epoch loss curves as JSON.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReduceArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    reducer: Reducer,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON reducer options (autoencoder schedule, t-SNE settings, z-scoring).
    #[arg(long)]
    options: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum MetricArg {
    Auto,
    Euclidean,
    Cosine,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum PolicyArg {
    MedoidLabels,
    ClusterLabels,
}

#[derive(Args, Debug)]
struct MalPlanArgs {
    #[arg(long)]
    features: PathBuf,
    /// Labeling budget in percent of the rows.
    #[arg(long)]
    budget: f64,
    #[arg(long, value_enum, default_value = "auto")]
    metric: MetricArg,
    #[arg(long, value_enum, default_value = "medoid-labels")]
    policy: PolicyArg,
    /// Number of clusters; defaults to one per three rows.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cluster the features as given instead of z-scoring them first.
    #[arg(long)]
    no_zscore: bool,
    /// Print utterance ids instead of row indices.
    #[arg(long)]
    ids: bool,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Groups run concurrently between report flushes.
    #[arg(long)]
    batch: Option<usize>,
}

#[derive(Args, Debug)]
struct AggregateArgs {
    #[arg(long)]
    report: PathBuf,
    /// Summary CSV; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated grouping keys.
    #[arg(long, default_value = "task,feature,reducer,budget,strategy")]
    group_by: String,
    /// Also write paired MAL − random t-tests here.
    #[arg(long)]
    contrast: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = configure_workers() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 1 } else { 2 })
        }
    }
}

fn configure_workers() -> Result<()> {
    let Ok(value) = std::env::var("CPCAL_WORKERS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Input(format!("CPCAL_WORKERS must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Numeric(format!("cannot start {n} workers: {e}")))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Features(a) => features(a),
        Command::TrainCpc(a) => train(a),
        Command::Reduce(a) => reduce_cmd(a),
        Command::MalPlan(a) => mal_plan(a),
        Command::Run(a) => run(a),
        Command::Aggregate(a) => aggregate_cmd(a),
        Command::Selfcheck => selfcheck(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))
}

fn parse_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        Error::Input(format!("{} at key '{key}': {}", path.display(), e.inner()))
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Numeric(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => parse_json_file::<SynthSpec>(p)?,
        None => SynthSpec::four_quadrant(a.seed),
    };
    let ds = synth_dataset(&spec)?;
    ds.write_csv(&a.out_dir)?;
    write_json(&a.out_dir.join("spec.json"), &spec)?;
    println!("wrote {} rows to {}", ds.len(), a.out_dir.display());
    Ok(())
}

/// WAV files in `dir`, sorted by name; ids are the file stems.
fn wav_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Input(format!("cannot list {}: {e}", dir.display())))?;
    let mut files: Vec<(String, PathBuf)> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .map(|p| (p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), p))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Input(format!("no .wav files in {}", dir.display())));
    }
    Ok(files)
}

fn load_logmel(dir: &Path) -> Result<Vec<(String, LogMelFrames)>> {
    wav_files(dir)?
        .into_iter()
        .map(|(id, p)| {
            let audio = read_wav(&p).map_err(|e| Error::Input(format!("{}: {e}", p.display())))?;
            Ok((id, wav_to_logmel(&audio)?))
        })
        .collect()
}

fn features(a: FeaturesArgs) -> Result<()> {
    let model = match (a.kind, &a.model) {
        (FeatureKindArg::Cpc, Some(p)) => Some(CpcModel::load(p)?),
        (FeatureKindArg::Cpc, None) => return Err(Error::Input("--kind cpc needs --model".into())),
        _ => None,
    };
    let utts = load_logmel(&a.wav_dir)?;
    let mut ids = Vec::with_capacity(utts.len());
    let mut rows = Vec::with_capacity(utts.len());
    for (id, frames) in &utts {
        let f = match &model {
            Some(m) => extract_cpc_features(m, id, frames)?,
            None => functionals_600(id, frames)?,
        };
        ids.push(id.clone());
        rows.push(f.vector);
    }
    FeatureMatrix::new(ids, Tensor2::from_rows(&rows)?)?.write_csv(&a.out)?;
    println!("wrote {} utterances to {}", rows.len(), a.out.display());
    Ok(())
}

fn train(a: TrainCpcArgs) -> Result<()> {
    let config = match &a.config {
        Some(p) => parse_json_file::<CpcTrainConfig>(p)?,
        None => CpcTrainConfig::default(),
    };
    let data: Vec<LogMelFrames> = load_logmel(&a.wav_dir)?.into_iter().map(|(_, f)| f).collect();
    let trained = train_cpc(&data, &config, a.seed)?;
    trained.model.save(&a.out)?;
    if let Some(h) = &a.history {
        write_json(h, &trained.history)?;
    }
    println!(
        "best validation loss {:.4} at epoch {} of {}",
        trained.best_val_loss,
        trained.best_epoch,
        trained.history.len()
    );
    Ok(())
}

fn reduce_cmd(a: ReduceArgs) -> Result<()> {
    let options = match &a.options {
        Some(p) => parse_json_file::<ReducerOptions>(p)?,
        None => ReducerOptions::default(),
    };
    let m = FeatureMatrix::read_csv(&a.features)?;
    let out = reduce(&m.values, a.reducer, &options, a.seed)?;
    m.with_values(out)?.write_csv(&a.out)
}

fn mal_plan(a: MalPlanArgs) -> Result<()> {
    if !(a.budget > 0.0 && a.budget <= 100.0) {
        return Err(Error::Input(format!("--budget {} is outside (0, 100]", a.budget)));
    }
    let m = FeatureMatrix::read_csv(&a.features)?;
    let values = if a.no_zscore {
        m.values.clone()
    } else {
        cpcal::features::ZScore::fit(&m.values)?.apply(&m.values)?
    };
    let metric = match a.metric {
        MetricArg::Auto => MetricChoice::Auto,
        MetricArg::Euclidean => MetricChoice::Euclidean,
        MetricArg::Cosine => MetricChoice::Cosine,
    }
    .resolve(values.cols());
    let policy = match a.policy {
        PolicyArg::MedoidLabels => LabelPolicy::MedoidLabels,
        PolicyArg::ClusterLabels => LabelPolicy::ClusterLabels,
    };
    let k = a.k.unwrap_or_else(|| default_k(m.n_rows()));
    let clusters = k_medoids(&affinity(&values, metric)?, k, a.seed)?;
    let plan = query_plan(&clusters, budget_to_count(m.n_rows(), a.budget), policy, a.seed);
    let mut out = String::new();
    for &i in &plan.indices {
        if a.ids {
            out.push_str(&m.ids[i]);
        } else {
            out.push_str(&i.to_string());
        }
        out.push('\n');
    }
    print!("{out}");
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let config = ExperimentConfig::load(&a.config)?;
    let mut options = RunOptions::new(&a.out_dir);
    if let Some(b) = a.batch {
        options.batch = b.max(1);
    }
    let report = run_experiment(&config, &options)?;
    println!(
        "{} records ({} resumed groups, {} failed cells) in {}",
        report.records.len(),
        report.resumed_groups,
        report.failures.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn aggregate_cmd(a: AggregateArgs) -> Result<()> {
    let keys: Vec<GroupKey> = a.group_by.split(',').map(|k| GroupKey::parse(k.trim())).collect::<Result<_>>()?;
    let records = read_report(&a.report)?;
    let rows = aggregate(&records, &keys)?;
    match &a.out {
        Some(p) => write_summary_csv(p, &keys, &rows)?,
        None => {
            let names: Vec<&str> = keys.iter().map(|k| k.name()).collect();
            println!("{},n,failed,mean,stderr", names.join(","));
            for r in &rows {
                println!("{},{},{},{:.4},{:.4}", r.key.join(","), r.n, r.failed, r.mean, r.stderr);
            }
        }
    }
    if let Some(p) = &a.contrast {
        write_contrast_csv(p, &strategy_contrast(&records)?)?;
    }
    Ok(())
}

fn selfcheck() -> Result<()> {
    let outcomes = run_selfcheck();
    let mut failed = 0;
    for o in &outcomes {
        println!("{} {}: {} ({:.2} s)", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail, o.seconds);
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        return Err(Error::Numeric(format!("{failed} of {} checks failed", outcomes.len())));
    }
    println!("all {} checks passed", outcomes.len());
    Ok(())
}
