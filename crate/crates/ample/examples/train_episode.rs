//! A complete few-shot episode on a synthetic corpus: sample a balanced
//! n-per-class training set, fit the emotion normalization on it, train
//! the full model, evaluate on the remainder and round-trip a checkpoint.
//!
//! ```text
//! cargo run --release --example train_episode
//! ```

use ample::experiment::build_corpus;
use ample::fusion::FusionConfig;
use ample::model::{AmpleModel, ModelConfig};
use ample::prompt::{PromptTemplate, ToyBackendConfig, Vocab};
use ample::sentiment::{EmotionVariant, SentimentLexicon};
use ample::store::Label;
use ample::synthetic::{generate_corpus, SyntheticConfig};
use ample::trainer::{
    evaluate, few_shot_sample, train, EmotionPipeline, TrainConfig, TrainExample,
};

fn main() {
    let (articles, store) = generate_corpus(&SyntheticConfig {
        articles: 60,
        dim: 8,
        ..SyntheticConfig::default()
    });
    let lexicon = SentimentLexicon::builtin();
    let corpus = build_corpus(&articles, &store, &lexicon, None).unwrap();
    let labels: Vec<Label> = corpus.iter().map(|e| e.label).collect();

    // Balanced episode: 8 per class train, the remaining 44 test.
    let (train_idx, test_idx) = few_shot_sample(&labels, 8, 3).unwrap();
    println!("episode: {} train / {} test", train_idx.len(), test_idx.len());
    let train_set: Vec<&TrainExample> = train_idx.iter().map(|&i| &corpus[i]).collect();
    let test_set: Vec<&TrainExample> = test_idx.iter().map(|&i| &corpus[i]).collect();

    let backend = ToyBackendConfig {
        hidden: 16,
        layers: 1,
        heads: 2,
        ff_hidden: 32,
        positional: true,
    };
    let mut fusion = FusionConfig::new(8, 16);
    fusion.heads = 2;
    let model_config = ModelConfig {
        fusion,
        backend,
        template: PromptTemplate::new(32),
    };

    let vocab = Vocab::build(train_set.iter().map(|e| e.text.as_str()));
    let mut model = AmpleModel::new(model_config, vocab, 3).unwrap();
    let pipeline = EmotionPipeline::fit(&train_set, EmotionVariant::Combined);

    let mut config = TrainConfig::few_shot(vec![8]);
    config.learning_rate = 1e-2; // desk-scale training from random parameters
    let losses = train(&mut model, &train_set, &pipeline, &config, 3).unwrap();
    println!(
        "loss per epoch: first {:.4} ... last {:.4}",
        losses.first().unwrap(),
        losses.last().unwrap()
    );

    let metrics = evaluate(&mut model, &test_set, &pipeline, config.effective_batch_size()).unwrap();
    println!("test macro-F1 {:.4}, accuracy {:.4}", metrics.macro_f1, metrics.accuracy);

    // Checkpoints carry every parameter plus batch-norm state, bit-exact.
    let dir = std::env::temp_dir().join("ample_train_episode");
    std::fs::create_dir_all(&dir).unwrap();
    let base = dir.join("episode_ckpt");
    model.save_checkpoint(&base).unwrap();
    let vocab2 = Vocab::build(train_set.iter().map(|e| e.text.as_str()));
    let mut restored = AmpleModel::new(model.config.clone(), vocab2, 999).unwrap();
    restored.load_checkpoint(&base).unwrap();
    let metrics2 =
        evaluate(&mut restored, &test_set, &pipeline, config.effective_batch_size()).unwrap();
    println!(
        "restored checkpoint evaluates identically: {}",
        metrics2 == metrics
    );
    std::fs::remove_dir_all(&dir).ok();
}
