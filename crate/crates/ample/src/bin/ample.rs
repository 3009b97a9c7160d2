//! Command-line front end for the experiment harness.
//!
//! Thin by design: every subcommand parses flags into an
//! [`ExperimentSpec`] (optionally starting from a `--spec` JSON file) and
//! dispatches to the library. Exit code 0 means every job in the grid
//! succeeded.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ample::error::Result;
use ample::experiment::{
    cmd_ablate, cmd_run, cmd_stats, cmd_sweep, preprocess, EncoderKind, ExperimentSpec,
    MissingImagePolicy,
};
use ample::fusion::{Pairing, Strategy};
use ample::sentiment::EmotionVariant;
use ample::store::load_manifest;
use ample::trainer::TrainMode;

#[derive(Parser)]
#[command(
    name = "ample",
    version,
    about = "Emotion-aware multimodal fusion classifier and experiment harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emotion statistics of a dataset (per-label mean [std] table).
    Stats(SpecArgs),
    /// Train and evaluate the main protocol (few-shot grid or data-rich).
    Run(SpecArgs),
    /// Alpha grid by strategy sweep with CSV and plot data output.
    Sweep(SpecArgs),
    /// Base configuration plus each single ablation.
    Ablate(SpecArgs),
    /// Build an embedding store from a dataset manifest.
    Preprocess(PreprocessArgs),
}

#[derive(Args)]
struct SpecArgs {
    /// Experiment spec JSON; flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Dataset manifest (JSON lines).
    #[arg(long)]
    dataset: Option<String>,
    /// Embedding store (JSON lines behind a header).
    #[arg(long)]
    store: Option<String>,
    /// Sentiment lexicon TSV; bundled lexicon if omitted.
    #[arg(long)]
    lexicon: Option<String>,
    /// Per-article sentiment override file (id<TAB>p<TAB>s).
    #[arg(long = "sentiment-override")]
    sentiment_override: Option<String>,
    /// Output directory for reports and tables.
    #[arg(long)]
    out: Option<String>,
    /// Protocol mode: few-shot or data-rich.
    #[arg(long)]
    mode: Option<String>,
    /// Comma-separated per-class shot sizes, e.g. 2,4,8,16,50.
    #[arg(long, value_delimiter = ',')]
    shots: Option<Vec<usize>>,
    /// Number of seeds (offset by AMPLE_SEED_BASE).
    #[arg(long)]
    seeds: Option<usize>,
    /// Emotion variant: p, s or p+s.
    #[arg(long)]
    emotion: Option<String>,
    /// Attention heads (1, 2, 4 or 8).
    #[arg(long)]
    heads: Option<usize>,
    /// Combination weight in [0, 1].
    #[arg(long)]
    alpha: Option<f64>,
    /// Comma-separated alpha grid for sweeps.
    #[arg(long = "alpha-grid", value_delimiter = ',')]
    alpha_grid: Option<Vec<f64>>,
    /// Combination strategy: A or B.
    #[arg(long)]
    strategy: Option<String>,
    /// Feature pairing: modal or mca-split.
    #[arg(long)]
    pairing: Option<String>,
    /// Comma-separated ablation flags: EE,SA,TM,IM,FM,RFM.
    #[arg(long, value_delimiter = ',')]
    ablate: Option<Vec<String>>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "learning-rate")]
    learning_rate: Option<f64>,
    #[arg(long = "weight-decay")]
    weight_decay: Option<f64>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
}

impl SpecArgs {
    fn into_spec(self) -> Result<ExperimentSpec> {
        let mut spec = match &self.spec {
            Some(path) => ExperimentSpec::load(path)?,
            None => ExperimentSpec::default(),
        };
        if let Some(v) = self.dataset {
            spec.dataset = v;
        }
        if let Some(v) = self.store {
            spec.store = v;
        }
        if self.lexicon.is_some() {
            spec.lexicon = self.lexicon;
        }
        if self.sentiment_override.is_some() {
            spec.sentiment_override = self.sentiment_override;
        }
        if self.out.is_some() {
            spec.out = self.out;
        }
        if let Some(v) = self.mode {
            spec.mode = match v.as_str() {
                "few-shot" => TrainMode::FewShot,
                "data-rich" => TrainMode::DataRich,
                other => {
                    return Err(ample::AmpleError::InvalidConfig(format!(
                        "unknown mode '{other}' (expected few-shot or data-rich)"
                    )))
                }
            };
        }
        if let Some(v) = self.shots {
            spec.shots = v;
        }
        if let Some(v) = self.seeds {
            spec.seeds = v;
        }
        if let Some(v) = self.emotion {
            spec.emotion = EmotionVariant::parse(&v)?;
        }
        if let Some(v) = self.heads {
            spec.heads = v;
        }
        if let Some(v) = self.alpha {
            spec.alpha = v;
        }
        if let Some(v) = self.alpha_grid {
            spec.alpha_grid = v;
        }
        if let Some(v) = self.strategy {
            spec.strategy = Strategy::parse(&v)?;
        }
        if let Some(v) = self.pairing {
            spec.pairing = Pairing::parse(&v)?;
        }
        if let Some(v) = self.ablate {
            spec.ablate = v;
        }
        if let Some(v) = self.epochs {
            spec.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            spec.learning_rate = v;
        }
        if let Some(v) = self.weight_decay {
            spec.weight_decay = v;
        }
        if self.batch_size.is_some() {
            spec.batch_size = self.batch_size;
        }
        Ok(spec)
    }
}

#[derive(Args)]
struct PreprocessArgs {
    /// Dataset manifest (JSON lines).
    #[arg(long)]
    dataset: String,
    /// Where to write the embedding store.
    #[arg(long = "out-store")]
    out_store: String,
    /// Feature dimension.
    #[arg(long, default_value_t = 8)]
    dim: usize,
    /// Encoder: hash or class-gaussian.
    #[arg(long, default_value = "hash")]
    encoder: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Articles without images: drop or zero.
    #[arg(long = "missing-image", default_value = "drop")]
    missing_image: String,
}

fn run(command: Command) -> Result<bool> {
    match command {
        Command::Stats(args) => {
            let spec = args.into_spec()?;
            let report = cmd_stats(&spec)?;
            for warning in &report.warnings {
                eprintln!("warning: {warning}");
            }
            print!("{}", report.table());
            Ok(true)
        }
        Command::Run(args) => {
            let spec = args.into_spec()?;
            let outcome = cmd_run(&spec)?;
            print!("{}", outcome.table);
            for file in &outcome.files {
                eprintln!("wrote {}", file.display());
            }
            if !outcome.all_succeeded() {
                eprintln!("{} job(s) failed; see report failure markers", outcome.failures);
            }
            Ok(outcome.all_succeeded())
        }
        Command::Sweep(args) => {
            let spec = args.into_spec()?;
            let outcome = cmd_sweep(&spec)?;
            print!("{}", outcome.csv);
            for file in &outcome.files {
                eprintln!("wrote {}", file.display());
            }
            if !outcome.all_succeeded() {
                eprintln!("{} job(s) failed; see report failure markers", outcome.failures);
            }
            Ok(outcome.all_succeeded())
        }
        Command::Ablate(args) => {
            let spec = args.into_spec()?;
            let outcome = cmd_ablate(&spec)?;
            print!("{}", outcome.table);
            for file in &outcome.files {
                eprintln!("wrote {}", file.display());
            }
            if !outcome.all_succeeded() {
                eprintln!("{} job(s) failed; see report failure markers", outcome.failures);
            }
            Ok(outcome.all_succeeded())
        }
        Command::Preprocess(args) => {
            let manifest = load_manifest(&args.dataset)?;
            let encoder = EncoderKind::parse(&args.encoder)?;
            let missing = MissingImagePolicy::parse(&args.missing_image)?;
            let (store, summary) = preprocess(&manifest, args.dim, encoder, args.seed, missing)?;
            store.save(&args.out_store)?;
            eprintln!(
                "kept {} article(s), dropped {}, zero-substituted {}",
                summary.kept, summary.dropped, summary.zero_substituted
            );
            eprintln!("wrote {}", args.out_store);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
