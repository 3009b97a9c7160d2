//! The experiment harness: emotion statistics, main runs, alpha/strategy
//! sweeps, ablations and preprocessing.
//!
//! One [`ExperimentSpec`] (a JSON file plus command-line overrides) pins an
//! experiment: dataset paths, protocol mode, shot sizes, seed count,
//! emotion variant, fusion knobs and ablation flags. Every grid job runs
//! through [`crate::trainer::run_episode`]; jobs are independent and run
//! concurrently, and the aggregation over completed jobs is
//! order-independent. Each emitted table cell is backed by a
//! [`RunReport`] JSON file, with metric floats fixed at four decimals.
//!
//! The environment variable `AMPLE_SEED_BASE` offsets every seed, so
//! shards of a larger sweep can run on different machines without
//! colliding.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AmpleError, Result};
use crate::fusion::{Ablation, AblationSet, FusionConfig, Pairing, Strategy};
use crate::model::ModelConfig;
use crate::prompt::{PromptTemplate, ToyBackendConfig, SKELETON_LEN};
use crate::sentiment::{
    score_corpus, EmotionVariant, SentimentLexicon, SentimentOverrides,
};
use crate::store::{
    cosine_sim, load_manifest, select_pair, ArticleRecord, EmbeddingRecord, EmbeddingStore, Label,
};
use crate::trainer::{
    aggregate, few_shot_sample, run_episode, split_data_rich, AggregateMetrics, FailureRecord,
    RunReport, SeedMetrics, TrainConfig, TrainExample, TrainMode,
};

/// Name of the environment variable that offsets all seeds.
pub const SEED_BASE_ENV: &str = "AMPLE_SEED_BASE";

/// Full description of one experiment. Serialized as JSON with every field
/// optional (defaults below); command-line flags override file values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    /// Dataset manifest path (JSON lines of articles).
    pub dataset: String,
    /// Embedding store path.
    pub store: String,
    /// Lexicon path; the bundled lexicon when absent.
    pub lexicon: Option<String>,
    /// External sentiment provider file; overrides the analyzer per id.
    pub sentiment_override: Option<String>,
    /// Output directory for reports and tables.
    pub out: Option<String>,
    pub mode: TrainMode,
    pub shots: Vec<usize>,
    /// Number of seeds (0, 1, ..., n-1, plus the `AMPLE_SEED_BASE` offset).
    pub seeds: usize,
    pub emotion: EmotionVariant,
    pub heads: usize,
    pub alpha: f64,
    pub alpha_grid: Vec<f64>,
    pub strategy: Strategy,
    pub pairing: Pairing,
    /// Ablation flags (`EE`, `SA`, `TM`, `IM`, `FM`, `RFM`).
    pub ablate: Vec<String>,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: Option<usize>,
    /// Mix-block hidden width; the feature dimension when absent.
    pub mix_hidden: Option<usize>,
    pub dropout_rate: f64,
    pub backend: ToyBackendConfig,
    pub max_prompt_len: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            dataset: String::new(),
            store: String::new(),
            lexicon: None,
            sentiment_override: None,
            out: None,
            mode: TrainMode::FewShot,
            shots: vec![2, 4, 8, 16, 50],
            seeds: 5,
            emotion: EmotionVariant::Combined,
            heads: 2,
            alpha: 0.5,
            alpha_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            strategy: Strategy::A,
            pairing: Pairing::Modal,
            ablate: Vec::new(),
            learning_rate: 3e-5,
            weight_decay: 1e-3,
            epochs: 20,
            batch_size: None,
            mix_hidden: None,
            dropout_rate: 0.1,
            backend: ToyBackendConfig::default(),
            max_prompt_len: 64,
        }
    }
}

impl ExperimentSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn validate(&self) -> Result<()> {
        for (path, what) in [(&self.dataset, "dataset"), (&self.store, "store")] {
            if path.is_empty() {
                return Err(AmpleError::InvalidConfig(format!("{what} path is required")));
            }
            if !Path::new(path).exists() {
                return Err(AmpleError::InvalidConfig(format!(
                    "{what} file '{path}' does not exist"
                )));
            }
        }
        for path in [&self.lexicon, &self.sentiment_override].into_iter().flatten() {
            if !Path::new(path).exists() {
                return Err(AmpleError::InvalidConfig(format!(
                    "file '{path}' does not exist"
                )));
            }
        }
        if self.alpha_grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(AmpleError::InvalidConfig(
                "alpha grid values must lie in [0, 1]".into(),
            ));
        }
        if self.seeds == 0 {
            return Err(AmpleError::InvalidConfig("at least one seed".into()));
        }
        if self.max_prompt_len < SKELETON_LEN {
            return Err(AmpleError::InvalidConfig(format!(
                "max_prompt_len must be at least {SKELETON_LEN}"
            )));
        }
        self.ablation()?;
        Ok(())
    }

    pub fn ablation(&self) -> Result<AblationSet> {
        let mut set = AblationSet::none();
        for flag in &self.ablate {
            set.insert(Ablation::parse(flag)?);
        }
        Ok(set)
    }

    /// Seeds for this run: `base + 0 .. base + seeds` with the base taken
    /// from `AMPLE_SEED_BASE` (default 0).
    pub fn seed_list(&self) -> Vec<u64> {
        let base = std::env::var(SEED_BASE_ENV)
            .ok()
            .and_then(|v| v.parse::<u64>().ok())
            .unwrap_or(0);
        (0..self.seeds as u64).map(|s| base + s).collect()
    }

    /// Model configuration for a store of dimension `dim`.
    pub fn model_config(&self, dim: usize) -> Result<ModelConfig> {
        let fusion = FusionConfig {
            dim,
            heads: self.heads,
            key_dim: (dim / 2).max(1),
            mix_hidden: self.mix_hidden.unwrap_or(dim),
            dropout_rate: self.dropout_rate,
            out_dim: self.backend.hidden,
            alpha: self.alpha,
            strategy: self.strategy,
            pairing: self.pairing,
            ablation: self.ablation()?,
        };
        let config = ModelConfig {
            fusion,
            backend: self.backend.clone(),
            template: PromptTemplate::new(self.max_prompt_len),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seeds: self.seed_list(),
            shot_sizes: self.shots.clone(),
            mode: self.mode,
        }
    }

    /// Stable hex digest of the protocol-relevant configuration (paths and
    /// output locations excluded, so moving files does not change it).
    pub fn fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct View<'a> {
            mode: TrainMode,
            shots: &'a [usize],
            seeds: usize,
            emotion: EmotionVariant,
            heads: usize,
            alpha: f64,
            alpha_grid: &'a [f64],
            strategy: Strategy,
            pairing: Pairing,
            ablate: &'a [String],
            learning_rate: f64,
            weight_decay: f64,
            epochs: usize,
            batch_size: Option<usize>,
            mix_hidden: Option<usize>,
            dropout_rate: f64,
            backend: &'a ToyBackendConfig,
            max_prompt_len: usize,
        }
        let view = View {
            mode: self.mode,
            shots: &self.shots,
            seeds: self.seeds,
            emotion: self.emotion,
            heads: self.heads,
            alpha: self.alpha,
            alpha_grid: &self.alpha_grid,
            strategy: self.strategy,
            pairing: self.pairing,
            ablate: &self.ablate,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            mix_hidden: self.mix_hidden,
            dropout_rate: self.dropout_rate,
            backend: &self.backend,
            max_prompt_len: self.max_prompt_len,
        };
        let canonical = serde_json::to_string(&view).expect("spec serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Variant label used in tables: `AMPLE` or the joined ablation flags.
    pub fn label(&self) -> String {
        match self.ablation() {
            Ok(set) if set.is_empty() => "AMPLE".to_owned(),
            Ok(set) => set.labels().join(""),
            Err(_) => "invalid".to_owned(),
        }
    }

    fn load_lexicon(&self) -> Result<SentimentLexicon> {
        match &self.lexicon {
            Some(path) => SentimentLexicon::load(path),
            None => Ok(SentimentLexicon::builtin()),
        }
    }

    fn load_overrides(&self) -> Result<Option<SentimentOverrides>> {
        match &self.sentiment_override {
            Some(path) => Ok(Some(SentimentOverrides::load(path)?)),
            None => Ok(None),
        }
    }
}

/// Joins a manifest with an embedding store and attaches sentiment. The
/// store defines the usable corpus; every store record must have a
/// manifest entry (articles without embeddings were dropped upstream).
/// Records whose text or image vector is all zero get similarity 0.
pub fn build_corpus(
    manifest: &[ArticleRecord],
    store: &EmbeddingStore,
    lexicon: &SentimentLexicon,
    overrides: Option<&SentimentOverrides>,
) -> Result<Vec<TrainExample>> {
    let texts: HashMap<&str, &ArticleRecord> =
        manifest.iter().map(|a| (a.id.as_str(), a)).collect();
    let mut corpus = Vec::with_capacity(store.len());
    for record in store.records() {
        let article = texts.get(record.id.as_str()).ok_or_else(|| {
            AmpleError::MalformedStore {
                reason: format!("store id '{}' missing from the dataset manifest", record.id),
            }
        })?;
        let (polarity, subjectivity) = crate::sentiment::article_sentiment(
            &record.id,
            &article.text,
            lexicon,
            overrides,
        );
        let zero = |v: &[f64]| v.iter().all(|&x| x == 0.0);
        let sim = if zero(&record.text_vec) || zero(&record.image_vec) {
            0.0
        } else {
            cosine_sim(&record.text_vec, &record.image_vec)?
        };
        corpus.push(TrainExample {
            id: record.id.clone(),
            text: article.text.clone(),
            text_vec: record.text_vec.clone(),
            image_vec: record.image_vec.clone(),
            label: record.label,
            polarity,
            subjectivity,
            sim,
        });
    }
    Ok(corpus)
}

/// Loads everything an experiment needs from its spec.
pub fn load_corpus(spec: &ExperimentSpec) -> Result<Vec<TrainExample>> {
    let manifest = load_manifest(&spec.dataset)?;
    let store = EmbeddingStore::load(&spec.store)?;
    let lexicon = spec.load_lexicon()?;
    let overrides = spec.load_overrides()?;
    build_corpus(&manifest, &store, &lexicon, overrides.as_ref())
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Runs all seeds for one grid cell and assembles a report. Failures are
/// recorded instead of aborting the grid.
fn run_cell(
    corpus: &[TrainExample],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    spec: &ExperimentSpec,
    shot: Option<usize>,
) -> RunReport {
    let labels: Vec<Label> = corpus.iter().map(|e| e.label).collect();
    let seeds = spec.seed_list();
    type JobOutcome = (u64, std::result::Result<(f64, f64), String>);
    let outcomes: Vec<JobOutcome> = seeds
        .par_iter()
        .map(|&seed| {
            let job = || -> Result<(f64, f64)> {
                let (train_idx, test_idx) = match shot {
                    Some(n) => few_shot_sample(&labels, n, seed)?,
                    None => {
                        let (train, _val, test) = split_data_rich(&labels, seed)?;
                        (train, test)
                    }
                };
                let episode = run_episode(
                    corpus,
                    &train_idx,
                    &test_idx,
                    model_config,
                    train_config,
                    spec.emotion,
                    seed,
                )?;
                Ok((episode.metrics.macro_f1, episode.metrics.accuracy))
            };
            (seed, job().map_err(|e| e.to_string()))
        })
        .collect();

    let mut per_seed = Vec::new();
    let mut failures = Vec::new();
    let mut successes = Vec::new();
    for (seed, outcome) in outcomes {
        match outcome {
            Ok((f1, acc)) => {
                per_seed.push(SeedMetrics {
                    seed,
                    f1: round4(f1),
                    acc: round4(acc),
                });
                successes.push((f1, acc));
            }
            Err(error) => failures.push(FailureRecord { seed, error }),
        }
    }
    let aggregated = aggregate(&successes, spec.mode)
        .ok()
        .map(|(f1, acc)| AggregateMetrics {
            f1: round4(f1),
            acc: round4(acc),
        });
    RunReport {
        mode: spec.mode.to_string(),
        shots: shot,
        seeds,
        per_seed,
        aggregate: aggregated,
        config_fingerprint: spec.fingerprint(),
        label: spec.label(),
        failures,
    }
}

/// Result of a `run`, `sweep` or `ablate` invocation: the reports, the
/// files written, and a rendered table.
#[derive(Debug)]
pub struct RunOutcome {
    pub reports: Vec<RunReport>,
    pub files: Vec<PathBuf>,
    pub table: String,
    pub failures: usize,
}

impl RunOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.failures == 0
    }
}

fn report_filename(prefix: &str, label: &str, shot: Option<usize>) -> String {
    let variant = if label == "AMPLE" {
        "base".to_owned()
    } else {
        label.replace('-', "").to_lowercase()
    };
    match shot {
        Some(n) => format!("{prefix}_{variant}_shot{n}.json"),
        None => format!("{prefix}_{variant}_datarich.json"),
    }
}

fn write_report(dir: &Path, name: &str, report: &RunReport) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(report)? + "\n")?;
    Ok(path)
}

fn write_text(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

fn cell_text(report: &RunReport) -> String {
    match &report.aggregate {
        Some(a) => format!("{:.2}/{:.2}", a.f1, a.acc),
        None => "failed".to_owned(),
    }
}

/// Renders a variant-by-cell table in the two-decimal `F1/Acc` format.
fn render_table(
    title: &str,
    columns: &[String],
    rows: &[(String, Vec<String>)],
) -> String {
    let mut width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(5).max(7);
    width += 2;
    let mut out = String::new();
    out.push_str(title);
    out.push('\n');
    out.push_str(&format!("{:width$}", ""));
    for col in columns {
        out.push_str(&format!("{col:>12}"));
    }
    out.push('\n');
    for (label, cells) in rows {
        out.push_str(&format!("{label:<width$}"));
        for cell in cells {
            out.push_str(&format!("{cell:>12}"));
        }
        out.push('\n');
    }
    out
}

/// The main experiment: the few-shot grid (each shot size by each seed) or
/// the data-rich protocol, one report file per cell plus a rendered table.
pub fn cmd_run(spec: &ExperimentSpec) -> Result<RunOutcome> {
    spec.validate()?;
    let corpus = load_corpus(spec)?;
    let dim = dim_of(&corpus)?;
    let model_config = spec.model_config(dim)?;
    let train_config = spec.train_config();
    train_config.validate()?;

    let cells: Vec<Option<usize>> = match spec.mode {
        TrainMode::FewShot => spec.shots.iter().map(|&n| Some(n)).collect(),
        TrainMode::DataRich => vec![None],
    };
    let mut reports = Vec::new();
    let mut files = Vec::new();
    let mut failures = 0;
    for shot in cells {
        let report = run_cell(&corpus, &model_config, &train_config, spec, shot);
        failures += report.failures.len();
        if let Some(out) = &spec.out {
            let name = report_filename("run", &report.label, shot);
            files.push(write_report(Path::new(out), &name, &report)?);
        }
        reports.push(report);
    }

    let columns: Vec<String> = reports
        .iter()
        .map(|r| match r.shots {
            Some(n) => n.to_string(),
            None => "data-rich".to_owned(),
        })
        .collect();
    let row = (
        spec.label(),
        reports.iter().map(cell_text).collect::<Vec<_>>(),
    );
    let table = render_table(
        &format!("{} (F1/Acc)", spec.mode),
        &columns,
        &[row],
    );
    if let Some(out) = &spec.out {
        files.push(write_text(Path::new(out), "run_table.txt", &table)?);
    }
    Ok(RunOutcome {
        reports,
        files,
        table,
        failures,
    })
}

/// One row of sweep output.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub strategy: Strategy,
    pub alpha: f64,
    pub f1: f64,
    pub acc: f64,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub points: Vec<SweepPoint>,
    pub reports: Vec<RunReport>,
    pub csv: String,
    pub files: Vec<PathBuf>,
    pub failures: usize,
}

impl SweepOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.failures == 0
    }
}

/// Runs one full cycle per `(strategy, alpha)` grid point and emits a CSV
/// of `(strategy, alpha, f1, acc)` plus line-plot data (one series per
/// strategy over the alpha grid).
pub fn cmd_sweep(spec: &ExperimentSpec) -> Result<SweepOutcome> {
    spec.validate()?;
    if spec.alpha_grid.is_empty() {
        return Err(AmpleError::InvalidConfig("alpha grid is empty".into()));
    }
    let corpus = load_corpus(spec)?;
    let dim = dim_of(&corpus)?;

    let mut points = Vec::new();
    let mut reports = Vec::new();
    let mut files = Vec::new();
    let mut failures = 0;
    for strategy in [Strategy::A, Strategy::B] {
        for &alpha in &spec.alpha_grid {
            let mut point_spec = spec.clone();
            point_spec.strategy = strategy;
            point_spec.alpha = alpha;
            let model_config = point_spec.model_config(dim)?;
            let train_config = point_spec.train_config();
            train_config.validate()?;
            let shot = match spec.mode {
                TrainMode::FewShot => Some(*spec.shots.first().ok_or_else(|| {
                    AmpleError::InvalidConfig("sweep in few-shot mode needs a shot size".into())
                })?),
                TrainMode::DataRich => None,
            };
            let report = run_cell(&corpus, &model_config, &train_config, &point_spec, shot);
            failures += report.failures.len();
            let (f1, acc) = report
                .aggregate
                .map(|a| (a.f1, a.acc))
                .unwrap_or((f64::NAN, f64::NAN));
            points.push(SweepPoint {
                strategy,
                alpha,
                f1,
                acc,
            });
            if let Some(out) = &spec.out {
                let name = format!("sweep_{strategy}_a{alpha:.4}.json");
                files.push(write_report(Path::new(out), &name, &report)?);
            }
            reports.push(report);
        }
    }

    let mut csv = String::from("strategy,alpha,f1,acc\n");
    for p in &points {
        csv.push_str(&format!(
            "{},{:.4},{:.4},{:.4}\n",
            p.strategy, p.alpha, p.f1, p.acc
        ));
    }
    if let Some(out) = &spec.out {
        files.push(write_text(Path::new(out), "sweep.csv", &csv)?);
        // Line-plot data: one f1/acc series per strategy over the grid.
        #[derive(Serialize)]
        struct Series {
            strategy: Strategy,
            f1: Vec<f64>,
            acc: Vec<f64>,
        }
        #[derive(Serialize)]
        struct PlotData<'a> {
            alphas: &'a [f64],
            series: Vec<Series>,
        }
        let series = [Strategy::A, Strategy::B]
            .into_iter()
            .map(|s| Series {
                strategy: s,
                f1: points
                    .iter()
                    .filter(|p| p.strategy == s)
                    .map(|p| p.f1)
                    .collect(),
                acc: points
                    .iter()
                    .filter(|p| p.strategy == s)
                    .map(|p| p.acc)
                    .collect(),
            })
            .collect();
        let plot = PlotData {
            alphas: &spec.alpha_grid,
            series,
        };
        files.push(write_text(
            Path::new(out),
            "sweep_plot.json",
            &(serde_json::to_string_pretty(&plot)? + "\n"),
        )?);
    }
    Ok(SweepOutcome {
        points,
        reports,
        csv,
        files,
        failures,
    })
}

#[derive(Debug)]
pub struct AblateOutcome {
    /// Base row plus one row per single ablation, in canonical order.
    pub reports: Vec<Vec<RunReport>>,
    pub labels: Vec<String>,
    pub table: String,
    pub files: Vec<PathBuf>,
    pub failures: usize,
}

impl AblateOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.failures == 0
    }
}

/// Runs the base configuration plus each single-flag ablation and renders
/// the comparison table (7 rows).
pub fn cmd_ablate(spec: &ExperimentSpec) -> Result<AblateOutcome> {
    spec.validate()?;
    let corpus = load_corpus(spec)?;
    let dim = dim_of(&corpus)?;

    let mut variants: Vec<Vec<String>> = vec![Vec::new()];
    variants.extend(
        Ablation::ALL
            .iter()
            .map(|a| vec![a.flag().to_owned()]),
    );

    let cells: Vec<Option<usize>> = match spec.mode {
        TrainMode::FewShot => spec.shots.iter().map(|&n| Some(n)).collect(),
        TrainMode::DataRich => vec![None],
    };

    let mut all_reports = Vec::new();
    let mut labels = Vec::new();
    let mut rows = Vec::new();
    let mut files = Vec::new();
    let mut failures = 0;
    for flags in variants {
        let mut variant_spec = spec.clone();
        variant_spec.ablate = flags;
        let model_config = variant_spec.model_config(dim)?;
        let train_config = variant_spec.train_config();
        train_config.validate()?;
        let label = variant_spec.label();

        let mut variant_reports = Vec::new();
        let mut cells_text = Vec::new();
        for &shot in &cells {
            let report = run_cell(&corpus, &model_config, &train_config, &variant_spec, shot);
            failures += report.failures.len();
            cells_text.push(cell_text(&report));
            if let Some(out) = &spec.out {
                let name = report_filename("ablate", &label, shot);
                files.push(write_report(Path::new(out), &name, &report)?);
            }
            variant_reports.push(report);
        }
        rows.push((label.clone(), cells_text));
        labels.push(label);
        all_reports.push(variant_reports);
    }

    let columns: Vec<String> = cells
        .iter()
        .map(|c| match c {
            Some(n) => n.to_string(),
            None => "data-rich".to_owned(),
        })
        .collect();
    let table = render_table("ablations (F1/Acc)", &columns, &rows);
    if let Some(out) = &spec.out {
        files.push(write_text(Path::new(out), "ablate_table.txt", &table)?);
    }
    Ok(AblateOutcome {
        reports: all_reports,
        labels,
        table,
        files,
        failures,
    })
}

fn dim_of(corpus: &[TrainExample]) -> Result<usize> {
    corpus
        .first()
        .map(|e| e.text_vec.len())
        .ok_or_else(|| AmpleError::InvalidConfig("empty corpus".into()))
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }

    fn cell(&self) -> String {
        format!("{:.3} [{:.3}]", self.mean, self.std)
    }
}

/// Per-label emotion statistics.
#[derive(Debug, Clone, Serialize)]
pub struct LabelStats {
    pub label: Label,
    pub count: usize,
    pub overall: MeanStd,
    pub positive: MeanStd,
    pub negative: MeanStd,
    pub polarity: MeanStd,
}

#[derive(Debug, Serialize)]
pub struct StatsReport {
    pub groups: Vec<LabelStats>,
    pub warnings: Vec<String>,
}

impl StatsReport {
    /// Renders the indicator-by-label table (`mean [std]` cells).
    pub fn table(&self) -> String {
        let mut out = String::from("emotion indicators (mean [std])\n");
        out.push_str(&format!("{:<26}", "indicator"));
        for g in &self.groups {
            out.push_str(&format!("{:>18}", g.label.to_string()));
        }
        out.push('\n');
        out.push_str(&format!("{:<26}", "number of articles"));
        for g in &self.groups {
            out.push_str(&format!("{:>18}", g.count));
        }
        out.push('\n');
        type Field = fn(&LabelStats) -> MeanStd;
        let rows: [(&str, Field); 4] = [
            ("overall emotion score", |g| g.overall),
            ("positive emotion score", |g| g.positive),
            ("negative emotion score", |g| g.negative),
            ("polarity emotion score", |g| g.polarity),
        ];
        for (name, field) in rows {
            out.push_str(&format!("{name:<26}"));
            for g in &self.groups {
                out.push_str(&format!("{:>18}", field(g).cell()));
            }
            out.push('\n');
        }
        out
    }
}

/// Emotion statistics over a labeled corpus: per label, mean and standard
/// deviation of the overall/positive/negative category scores and the
/// dataset-normalized polarity. Labels with no articles are omitted with a
/// warning.
pub fn emotion_stats(
    manifest: &[ArticleRecord],
    lexicon: &SentimentLexicon,
    overrides: Option<&SentimentOverrides>,
) -> StatsReport {
    let articles: Vec<(String, String)> = manifest
        .iter()
        .map(|a| (a.id.clone(), a.text.clone()))
        .collect();
    let scores = score_corpus(&articles, lexicon, overrides, EmotionVariant::Combined);

    let mut groups = Vec::new();
    let mut warnings = Vec::new();
    for label in Label::ALL {
        let indices: Vec<usize> = manifest
            .iter()
            .enumerate()
            .filter(|(_, a)| a.label == label)
            .map(|(i, _)| i)
            .collect();
        if indices.is_empty() {
            warnings.push(format!("label group '{label}' is empty; row omitted"));
            continue;
        }
        let pick = |f: fn(&crate::sentiment::EmotionScores) -> f64| -> Vec<f64> {
            indices.iter().map(|&i| f(&scores[i])).collect()
        };
        groups.push(LabelStats {
            label,
            count: indices.len(),
            overall: MeanStd::of(&pick(|s| s.overall)),
            positive: MeanStd::of(&pick(|s| s.positive)),
            negative: MeanStd::of(&pick(|s| s.negative)),
            polarity: MeanStd::of(&pick(|s| s.normalized_polarity)),
        });
    }
    StatsReport { groups, warnings }
}

/// `stats` entry point: loads the dataset and lexicon named by the spec.
pub fn cmd_stats(spec: &ExperimentSpec) -> Result<StatsReport> {
    if spec.dataset.is_empty() || !Path::new(&spec.dataset).exists() {
        return Err(AmpleError::InvalidConfig(format!(
            "dataset file '{}' does not exist",
            spec.dataset
        )));
    }
    let manifest = load_manifest(&spec.dataset)?;
    let lexicon = spec.load_lexicon()?;
    let overrides = spec.load_overrides()?;
    let report = emotion_stats(&manifest, &lexicon, overrides.as_ref());
    if let Some(out) = &spec.out {
        write_text(
            Path::new(out),
            "stats.json",
            &(serde_json::to_string_pretty(&report)? + "\n"),
        )?;
        write_text(Path::new(out), "stats_table.txt", &report.table())?;
    }
    Ok(report)
}

/// How preprocess encodes articles into vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    /// Deterministic token feature hashing; image vectors are hashed from
    /// the image reference strings and the most text-similar one is kept.
    Hash,
    /// Class-conditioned Gaussian vectors (for synthetic pipelines).
    ClassGaussian,
}

impl EncoderKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hash" => Ok(Self::Hash),
            "class-gaussian" => Ok(Self::ClassGaussian),
            other => Err(AmpleError::InvalidConfig(format!(
                "unknown encoder '{other}' (expected hash or class-gaussian)"
            ))),
        }
    }
}

/// What happens to articles with no images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingImagePolicy {
    Drop,
    Zero,
}

impl MissingImagePolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "drop" => Ok(Self::Drop),
            "zero" => Ok(Self::Zero),
            other => Err(AmpleError::InvalidConfig(format!(
                "unknown missing-image policy '{other}' (expected drop or zero)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PreprocessSummary {
    pub kept: usize,
    pub dropped: usize,
    pub zero_substituted: usize,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

fn hash_text_vec(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for token in crate::text::tokenize(text) {
        let h = fnv1a(token.as_bytes());
        let idx = (h % dim as u64) as usize;
        let sign = if h & (1 << 32) == 0 { 1.0 } else { -1.0 };
        v[idx] += sign;
    }
    normalize(v)
}

fn hash_ref_vec(reference: &str, dim: usize) -> Vec<f64> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(fnv1a(reference.as_bytes()));
    normalize((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Builds an embedding store from a manifest without any external encoder:
/// either hashed features or class-conditioned Gaussians. Hash mode runs
/// the highest-cosine-similarity pair selection over each article's image
/// candidates.
pub fn preprocess(
    manifest: &[ArticleRecord],
    dim: usize,
    encoder: EncoderKind,
    seed: u64,
    missing: MissingImagePolicy,
) -> Result<(EmbeddingStore, PreprocessSummary)> {
    use rand::SeedableRng;
    use rand_distr::Distribution;
    let mut records = Vec::new();
    let mut dropped = 0;
    let mut zero_substituted = 0;
    for article in manifest {
        let (text_vec, image_candidates): (Vec<f64>, Vec<Vec<f64>>) = match encoder {
            EncoderKind::Hash => (
                hash_text_vec(&article.text, dim),
                article
                    .images
                    .iter()
                    .map(|r| hash_ref_vec(r, dim))
                    .collect(),
            ),
            EncoderKind::ClassGaussian => {
                let mean = match article.label {
                    Label::Fake => 1.5,
                    Label::Real => -1.5,
                };
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
                    seed ^ fnv1a(article.id.as_bytes()),
                );
                let noise = rand_distr::Normal::new(0.0, 1.0).expect("unit normal");
                let text_vec: Vec<f64> =
                    (0..dim).map(|_| mean + noise.sample(&mut rng)).collect();
                let images: Vec<Vec<f64>> = article
                    .images
                    .iter()
                    .map(|_| (0..dim).map(|_| mean + noise.sample(&mut rng)).collect())
                    .collect();
                (text_vec, images)
            }
        };
        let image_vec = if image_candidates.is_empty() {
            match missing {
                MissingImagePolicy::Drop => {
                    dropped += 1;
                    continue;
                }
                MissingImagePolicy::Zero => {
                    zero_substituted += 1;
                    vec![0.0; dim]
                }
            }
        } else if text_vec.iter().all(|&x| x == 0.0) {
            // Hash of an empty text is the zero vector; pair selection is
            // undefined there, so keep the first candidate.
            image_candidates[0].clone()
        } else {
            select_pair(&text_vec, &image_candidates)?.1
        };
        records.push(EmbeddingRecord {
            id: article.id.clone(),
            text_vec,
            image_vec,
            label: article.label,
        });
    }
    let kept = records.len();
    let store = EmbeddingStore::new(dim, records)?;
    Ok((
        store,
        PreprocessSummary {
            kept,
            dropped,
            zero_substituted,
        },
    ))
}
