//! The ablation matrix: the base configuration plus each single removed
//! component, as the `ablate` subcommand runs it.
//!
//! ```text
//! cargo run --release --example ablation_study
//! ```

use ample::experiment::{cmd_ablate, ExperimentSpec};
use ample::prompt::ToyBackendConfig;
use ample::store::save_manifest;
use ample::synthetic::{generate_corpus, SyntheticConfig};
use ample::trainer::TrainMode;

fn main() {
    let dir = std::env::temp_dir().join("ample_ablation_study");
    std::fs::create_dir_all(&dir).unwrap();
    let (articles, store) = generate_corpus(&SyntheticConfig {
        articles: 40,
        dim: 8,
        ..SyntheticConfig::default()
    });
    let dataset = dir.join("manifest.jsonl");
    let store_path = dir.join("store.jsonl");
    save_manifest(&dataset, &articles).unwrap();
    store.save(&store_path).unwrap();

    let spec = ExperimentSpec {
        dataset: dataset.to_string_lossy().into_owned(),
        store: store_path.to_string_lossy().into_owned(),
        out: Some(dir.join("out").to_string_lossy().into_owned()),
        mode: TrainMode::FewShot,
        shots: vec![4],
        seeds: 2,
        epochs: 10,
        learning_rate: 1e-2,
        backend: ToyBackendConfig {
            hidden: 8,
            layers: 1,
            heads: 2,
            ff_hidden: 16,
            positional: true,
        },
        max_prompt_len: 24,
        ..ExperimentSpec::default()
    };

    let outcome = cmd_ablate(&spec).unwrap();
    print!("{}", outcome.table);
    println!("\nrows: {:?}", outcome.labels);
    println!(
        "each cell is backed by a report file ({} written)",
        outcome.files.len()
    );
    std::fs::remove_dir_all(&dir).ok();
}
