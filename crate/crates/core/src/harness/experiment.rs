use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::{load_csv_dataset, synth_dataset, CsvSource, Dataset, SynthSpec, Task, MIN_DATASET_ROWS};
use crate::dimred::{reduce, Reducer, ReducerOptions};
use crate::error::{input_err, Error, Result};
use crate::eval::{grid_search, make_folds, fold_split, mcc_from_predictions, svm_predict, svm_train, GridSpec};
use crate::features::ZScore;
use crate::mal::{affinity, assign_labels, default_k, k_medoids, query_plan, random_plan, LabelPolicy, Metric, QueryPlan};
use crate::nn::{derive_seed, Tensor2};

pub const REPORT_HEADER: &str = "task,feature,reducer,metric,budget,fold,repeat,strategy,policy,mcc,n_labeled,seed,config_hash";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Mal,
    Random,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Mal => "mal",
            Strategy::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricChoice {
    #[default]
    Auto,
    Euclidean,
    Cosine,
}

impl MetricChoice {
    pub fn resolve(self, dim: usize) -> Metric {
        match self {
            MetricChoice::Auto => Metric::auto(dim),
            MetricChoice::Euclidean => Metric::Euclidean,
            MetricChoice::Cosine => Metric::Cosine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synth(SynthSpec),
    Csv(CsvSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub c_values: Vec<f64>,
    /// Multipliers applied to `1/(D·var)` of the classifier features.
    pub gamma_scales: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { c_values: vec![0.1, 1.0, 10.0, 100.0], gamma_scales: vec![0.1, 1.0, 10.0] }
    }
}

fn default_budgets() -> Vec<f64> {
    vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0]
}
fn default_folds() -> usize {
    5
}
fn default_repeats() -> usize {
    5
}
fn default_true() -> bool {
    true
}
fn default_tasks() -> Vec<Task> {
    Task::ALL.to_vec()
}
fn default_strategies() -> Vec<Strategy> {
    vec![Strategy::Mal, Strategy::Random]
}
fn default_policy() -> LabelPolicy {
    LabelPolicy::MedoidLabels
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// Feature-set names from the dataset used as AL spaces.
    pub features: Vec<String>,
    pub reducers: Vec<Reducer>,
    #[serde(default)]
    pub metric: MetricChoice,
    #[serde(default = "default_budgets")]
    pub budgets: Vec<f64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_policy")]
    pub policy: LabelPolicy,
    pub master_seed: u64,
    /// z-score AL features before each reducer stage and before clustering.
    #[serde(default = "default_true")]
    pub zscore: bool,
    #[serde(default = "default_tasks")]
    pub tasks: Vec<Task>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub reducer_options: ReducerOptions,
}

impl ExperimentConfig {
    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        let cfg: Self = Error::parse_json(text, context)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a config file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text, &path.display().to_string())?;
        if let DatasetSource::Csv(src) = &mut cfg.dataset {
            src.resolve_relative(path.parent().unwrap_or(Path::new(".")));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() || self.reducers.is_empty() {
            return Err(input_err!("config key 'features' and 'reducers' must be non-empty"));
        }
        if self.budgets.is_empty() {
            return Err(input_err!("config key 'budgets' must be non-empty"));
        }
        if let Some(b) = self.budgets.iter().find(|b| !(**b > 0.0 && **b <= 100.0)) {
            return Err(input_err!("config key 'budgets': {b} is outside (0, 100]"));
        }
        if self.folds < 2 {
            return Err(input_err!("config key 'folds' must be at least 2"));
        }
        if self.repeats == 0 {
            return Err(input_err!("config key 'repeats' must be at least 1"));
        }
        if self.tasks.is_empty() || self.strategies.is_empty() {
            return Err(input_err!("config keys 'tasks' and 'strategies' must be non-empty"));
        }
        if self.grid.c_values.is_empty() || self.grid.gamma_scales.is_empty() {
            return Err(input_err!("config key 'grid' needs at least one C and one gamma scale"));
        }
        if self.grid.c_values.iter().chain(&self.grid.gamma_scales).any(|v| !(*v > 0.0)) {
            return Err(input_err!("config key 'grid' values must be positive"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, first 16 hex digits.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetSource::Synth(spec) => synth_dataset(spec),
            DatasetSource::Csv(src) => load_csv_dataset("csv", src),
        }
    }
}

/// `max(1, round(n·budget/100))`.
pub fn budget_to_count(n_train: usize, budget_percent: f64) -> usize {
    ((n_train as f64 * budget_percent / 100.0).round() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub task: Task,
    pub feature: String,
    pub reducer: Reducer,
    pub metric: Metric,
    pub budget: f64,
    pub fold: usize,
    pub repeat: usize,
    pub strategy: Strategy,
    pub policy: LabelPolicy,
    /// `None` when the cell failed.
    pub mcc: Option<f64>,
    pub n_labeled: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl ReportRecord {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.task.name(),
            self.feature,
            self.reducer.name(),
            self.metric.name(),
            self.budget,
            self.fold,
            self.repeat,
            self.strategy.name(),
            self.policy.name(),
            self.mcc.map(|v| format!("{v:?}")).unwrap_or_default(),
            self.n_labeled,
            self.seed,
            self.config_hash
        )
    }

    pub fn parse_csv_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 13 {
            return Err(input_err!("report line has {} fields, expected 13: '{line}'", f.len()));
        }
        let bad = |what: &str| input_err!("report line has a bad {what}: '{line}'");
        let task = match f[0] {
            "valence" => Task::Valence,
            "arousal" => Task::Arousal,
            _ => return Err(bad("task")),
        };
        let metric = match f[3] {
            "euclidean" => Metric::Euclidean,
            "cosine" => Metric::Cosine,
            _ => return Err(bad("metric")),
        };
        let strategy = match f[7] {
            "mal" => Strategy::Mal,
            "random" => Strategy::Random,
            _ => return Err(bad("strategy")),
        };
        let policy = match f[8] {
            "medoid_labels" => LabelPolicy::MedoidLabels,
            "cluster_labels" => LabelPolicy::ClusterLabels,
            _ => return Err(bad("policy")),
        };
        Ok(Self {
            task,
            feature: f[1].to_string(),
            reducer: f[2].parse()?,
            metric,
            budget: f[4].parse().map_err(|_| bad("budget"))?,
            fold: f[5].parse().map_err(|_| bad("fold"))?,
            repeat: f[6].parse().map_err(|_| bad("repeat"))?,
            strategy,
            policy,
            mcc: if f[9].is_empty() { None } else { Some(f[9].parse().map_err(|_| bad("mcc"))?) },
            n_labeled: f[10].parse().map_err(|_| bad("n_labeled"))?,
            seed: f[11].parse().map_err(|_| bad("seed"))?,
            config_hash: f[12].to_string(),
        })
    }
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim_end() == REPORT_HEADER => {}
        Some(Err(e)) => return Err(Error::io(path, e)),
        _ => return Err(input_err!("{}: missing report header", path.display())),
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(ReportRecord::parse_csv_line(line.trim_end())?);
        }
    }
    Ok(out)
}

/// One unit of work: AL features, clustering and every budget/task/strategy
/// cell for a single (feature, reducer, repeat, fold).
#[derive(Debug, Clone, PartialEq)]
struct Group {
    feature_idx: usize,
    reducer: Reducer,
    repeat: usize,
    fold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellFailure {
    pub feature: String,
    pub reducer: Reducer,
    pub repeat: usize,
    pub fold: usize,
    pub budget: Option<f64>,
    pub task: Option<Task>,
    pub strategy: Option<Strategy>,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub records: Vec<ReportRecord>,
    pub failures: Vec<CellFailure>,
    pub config_hash: String,
    /// Groups found complete on disk and skipped.
    pub resumed_groups: usize,
}

const TAG_FOLDS: u64 = 0x666f_6c64;
const TAG_REPEAT: u64 = 0x7265_7074;
const TAG_GRID: u64 = 0x6772_6964;
const TAG_RANDOM: u64 = 0x7261_6e64;

fn feature_tag(name: &str) -> u64 {
    let d = Sha256::digest(name.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Everything one group needs, precomputed outside the parallel section.
struct Context<'a> {
    config: &'a ExperimentConfig,
    dataset: &'a Dataset,
    folds: Vec<usize>,
    hash: String,
}

impl Context<'_> {
    fn repeat_seed(&self, repeat: usize) -> u64 {
        derive_seed(derive_seed(self.config.master_seed, TAG_REPEAT), repeat as u64)
    }

    fn group_seed(&self, g: &Group) -> u64 {
        let s = derive_seed(self.repeat_seed(g.repeat), g.fold as u64);
        let s = derive_seed(s, feature_tag(&self.config.features[g.feature_idx]));
        derive_seed(s, g.reducer as u64)
    }

    /// Shared by MAL and random cells so both see identical grid folds.
    fn grid_seed(&self, g: &Group, budget_idx: usize, task: Task) -> u64 {
        let s = derive_seed(derive_seed(self.repeat_seed(g.repeat), TAG_GRID), g.fold as u64);
        derive_seed(derive_seed(s, budget_idx as u64), task as u64)
    }

    /// Independent of feature and reducer, so every AL space shares one baseline.
    fn random_seed(&self, g: &Group, budget_idx: usize) -> u64 {
        let s = derive_seed(derive_seed(self.repeat_seed(g.repeat), TAG_RANDOM), g.fold as u64);
        derive_seed(s, budget_idx as u64)
    }

    fn cells_per_group(&self) -> usize {
        self.config.budgets.len() * self.config.tasks.len() * self.config.strategies.len()
    }

    fn run_group(&self, g: &Group) -> (Vec<ReportRecord>, Vec<CellFailure>) {
        let cfg = self.config;
        let feature = &cfg.features[g.feature_idx];
        let (train, test) = fold_split(&self.folds, g.fold);
        let mut failures = Vec::new();
        let fail = |budget, task, strategy, e: &Error| CellFailure {
            feature: feature.clone(),
            reducer: g.reducer,
            repeat: g.repeat,
            fold: g.fold,
            budget,
            task,
            strategy,
            error: e.to_string(),
        };
        let group_seed = self.group_seed(g);
        let out_dim = self
            .dataset
            .feature_set(feature)
            .map(|m| g.reducer.output_dim(m.cols()))
            .unwrap_or(0);
        let metric = cfg.metric.resolve(out_dim);

        let prepared = (|| -> Result<_> {
            let al = self.dataset.feature_set(feature)?.select_rows(&train);
            let opts = ReducerOptions { zscore: cfg.zscore, ..cfg.reducer_options };
            let mut reduced = reduce(&al, g.reducer, &opts, group_seed)?;
            if cfg.zscore {
                reduced = ZScore::fit(&reduced)?.apply(&reduced)?;
            }
            let a = affinity(&reduced, metric)?;
            let clusters = k_medoids(&a, default_k(train.len()), group_seed)?;
            let zs = ZScore::fit(&self.dataset.classifier.select_rows(&train))?;
            let x_train = zs.apply(&self.dataset.classifier.select_rows(&train))?;
            let x_test = zs.apply(&self.dataset.classifier.select_rows(&test))?;
            Ok((clusters, x_train, x_test))
        })();

        let mut cells = Vec::new();
        for (bi, &budget) in cfg.budgets.iter().enumerate() {
            for &task in &cfg.tasks {
                for &strategy in &cfg.strategies {
                    cells.push((bi, budget, task, strategy));
                }
            }
        }
        let results: Vec<(ReportRecord, Option<CellFailure>)> = cells
            .par_iter()
            .map(|&(bi, budget, task, strategy)| {
                let count = budget_to_count(train.len(), budget);
                let seed = match strategy {
                    Strategy::Mal => group_seed,
                    Strategy::Random => self.random_seed(g, bi),
                };
                let outcome = match &prepared {
                    Ok((clusters, x_train, x_test)) => {
                        self.run_cell(&train, &test, clusters, x_train, x_test, g, bi, count, task, strategy, seed)
                    }
                    Err(e) => Err(input_err!("group setup failed: {e}")),
                };
                let (mcc, n_labeled, failure) = match outcome {
                    Ok((m, n)) => (Some(m), n, None),
                    Err(e) => (None, 0, Some(fail(Some(budget), Some(task), Some(strategy), &e))),
                };
                let rec = ReportRecord {
                    task,
                    feature: feature.clone(),
                    reducer: g.reducer,
                    metric,
                    budget,
                    fold: g.fold,
                    repeat: g.repeat,
                    strategy,
                    policy: cfg.policy,
                    mcc,
                    n_labeled,
                    seed,
                    config_hash: self.hash.clone(),
                };
                (rec, failure)
            })
            .collect();
        let mut records = Vec::with_capacity(results.len());
        for (r, f) in results {
            records.push(r);
            failures.extend(f);
        }
        (records, failures)
    }

    #[allow(clippy::too_many_arguments)]
    fn run_cell(
        &self,
        train: &[usize],
        test: &[usize],
        clusters: &crate::mal::ClusteringResult,
        x_train: &Tensor2,
        x_test: &Tensor2,
        g: &Group,
        budget_idx: usize,
        count: usize,
        task: Task,
        strategy: Strategy,
        seed: u64,
    ) -> Result<(f64, usize)> {
        let truth = self.dataset.labels(task);
        let oracle = |i: usize| train.get(i).map(|&r| truth[r]);
        let plan = match strategy {
            Strategy::Mal => query_plan(clusters, count, self.config.policy, derive_seed(seed, budget_idx as u64)),
            Strategy::Random => QueryPlan {
                indices: random_plan(train.len(), count, seed),
                policy: LabelPolicy::MedoidLabels,
                budget: count,
                medoids_queried: 0,
            },
        };
        let labeled = assign_labels(&plan, clusters, oracle)?;
        let idx: Vec<usize> = labeled.iter().map(|&(i, _)| i).collect();
        let y: Vec<i8> = labeled.iter().map(|&(_, l)| l).collect();
        let x = x_train.select_rows(&idx);
        let g0 = crate::eval::scale_gamma(x_train);
        let grid = GridSpec::new(
            self.config.grid.c_values.clone(),
            self.config.grid.gamma_scales.iter().map(|s| s * g0).collect(),
        )?;
        let (c, gamma) = grid_search(&x, &y, &grid, self.grid_seed(g, budget_idx, task))?;
        let model = svm_train(&x, &y, c, gamma)?;
        let pred = svm_predict(&model, x_test)?;
        let y_test: Vec<i8> = test.iter().map(|&r| truth[r]).collect();
        Ok((mcc_from_predictions(&y_test, &pred)?, labeled.len()))
    }
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a ExperimentConfig,
    config_hash: &'a str,
    dataset_id: &'a str,
    dataset_rows: usize,
    records: usize,
    failures: &'a [CellFailure],
    resumed_groups: usize,
    started_unix: u64,
    finished_unix: u64,
    elapsed_seconds: f64,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Groups executed concurrently between report flushes.
    pub batch: usize,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self { out_dir: out_dir.into(), batch: rayon::current_num_threads().max(1) }
    }
}

/// Number of complete groups already in `report.csv`; truncates any partial tail.
fn resume_point(path: &Path, hash: &str, group_rows: usize) -> Result<usize> {
    if !path.exists() {
        return Ok(0);
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.split_inclusive('\n');
    let header = lines.next().unwrap_or("");
    if header.trim_end() != REPORT_HEADER {
        return Err(input_err!("{} exists but is not a report; refusing to overwrite", path.display()));
    }
    let mut complete_lines = Vec::new();
    for line in lines {
        if !line.ends_with('\n') {
            break;
        }
        let rec = ReportRecord::parse_csv_line(line.trim_end())?;
        if rec.config_hash != hash {
            return Err(input_err!(
                "{} was produced by a different config (hash {}); use a fresh output directory",
                path.display(),
                rec.config_hash
            ));
        }
        complete_lines.push(line);
    }
    let groups = complete_lines.len() / group_rows;
    let mut keep = String::from(header);
    for l in &complete_lines[..groups * group_rows] {
        keep.push_str(l);
    }
    if keep.len() != text.len() {
        std::fs::write(path, keep).map_err(|e| Error::io(path, e))?;
    }
    Ok(groups)
}

/// Runs the full grid, appending to `out_dir/report.csv` group by group and
/// writing `out_dir/manifest.json` at the end. Existing complete groups are kept.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<ExperimentReport> {
    config.validate()?;
    let started = Instant::now();
    let started_unix = unix_now();
    let dataset = config.load_dataset()?;
    if dataset.len() < MIN_DATASET_ROWS {
        return Err(input_err!("dataset has {} rows; at least {MIN_DATASET_ROWS} are required", dataset.len()));
    }
    for f in &config.features {
        dataset.feature_set(f)?;
    }
    let hash = config.hash();
    let ctx = Context {
        config,
        dataset: &dataset,
        folds: make_folds(dataset.len(), config.folds, derive_seed(config.master_seed, TAG_FOLDS))?,
        hash: hash.clone(),
    };

    let mut groups = Vec::new();
    for feature_idx in 0..config.features.len() {
        for &reducer in &config.reducers {
            for repeat in 0..config.repeats {
                for fold in 0..config.folds {
                    groups.push(Group { feature_idx, reducer, repeat, fold });
                }
            }
        }
    }

    std::fs::create_dir_all(&options.out_dir).map_err(|e| Error::io(&options.out_dir, e))?;
    let report_path = options.out_dir.join("report.csv");
    let done = resume_point(&report_path, &hash, ctx.cells_per_group())?;
    let mut records = if done > 0 { read_report(&report_path)? } else { Vec::new() };
    if done == 0 {
        std::fs::write(&report_path, format!("{REPORT_HEADER}\n")).map_err(|e| Error::io(&report_path, e))?;
    }
    let mut file = OpenOptions::new()
        .append(true)
        .open(&report_path)
        .map_err(|e| Error::io(&report_path, e))?;

    let mut failures = Vec::new();
    for chunk in groups[done..].chunks(options.batch.max(1)) {
        let results: Vec<_> = chunk.par_iter().map(|g| ctx.run_group(g)).collect();
        let mut text = String::new();
        for (recs, fails) in results {
            for r in &recs {
                text.push_str(&r.to_csv_line());
                text.push('\n');
            }
            records.extend(recs);
            failures.extend(fails);
        }
        file.write_all(text.as_bytes()).map_err(|e| Error::io(&report_path, e))?;
        file.flush().map_err(|e| Error::io(&report_path, e))?;
    }

    let manifest = Manifest {
        tool: "cpcal",
        version: env!("CARGO_PKG_VERSION"),
        config,
        config_hash: &hash,
        dataset_id: &dataset.id,
        dataset_rows: dataset.len(),
        records: records.len(),
        failures: &failures,
        resumed_groups: done,
        started_unix,
        finished_unix: unix_now(),
        elapsed_seconds: started.elapsed().as_secs_f64(),
    };
    let manifest_path = options.out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json("manifest", e))?;
    std::fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))?;

    Ok(ExperimentReport { records, failures, config_hash: hash, resumed_groups: done })
}
