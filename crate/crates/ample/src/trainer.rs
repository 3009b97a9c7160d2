//! Optimization, few-shot episodes, data-rich splits, metrics and
//! multi-seed aggregation.
//!
//! A run is fully determined by `(corpus, configuration, seed)`:
//! parameter initialization, episode sampling, epoch shuffling and dropout
//! masks all derive from seeded generators, so repeated executions produce
//! bit-identical results. Few-shot episodes draw `n` records per class
//! without replacement and test on the remainder; data-rich runs use a
//! stratified 8:1:1 train/validation/test split (the validation part is
//! produced but unused by default). Aggregation over seeds is a plain mean
//! in few-shot mode and a trimmed mean (drop one max and one min per
//! metric) in data-rich mode.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{AmpleError, Result};
use crate::fusion::Mode;
use crate::model::{AmpleModel, Batch, ModelConfig};
use crate::prompt::{PromptBatch, Vocab};
use crate::sentiment::{composite_emotion, EmotionVariant, MinMaxScaler};
use crate::store::Label;

/// Protocol mode: balanced small episodes or a stratified 8:1:1 split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    FewShot,
    DataRich,
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainMode::FewShot => f.write_str("few-shot"),
            TrainMode::DataRich => f.write_str("data-rich"),
        }
    }
}

/// Optimization and protocol settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Mini-batch size; `None` uses 8 in few-shot mode (or the full episode
    /// when smaller) and 32 in data-rich mode.
    pub batch_size: Option<usize>,
    pub seeds: Vec<u64>,
    pub shot_sizes: Vec<usize>,
    pub mode: TrainMode,
}

impl TrainConfig {
    pub fn few_shot(shot_sizes: Vec<usize>) -> Self {
        Self {
            learning_rate: 3e-5,
            weight_decay: 1e-3,
            epochs: 20,
            batch_size: None,
            seeds: vec![0, 1, 2, 3, 4],
            shot_sizes,
            mode: TrainMode::FewShot,
        }
    }

    pub fn data_rich() -> Self {
        Self {
            shot_sizes: Vec::new(),
            mode: TrainMode::DataRich,
            ..Self::few_shot(Vec::new())
        }
    }

    pub fn effective_batch_size(&self) -> usize {
        self.batch_size.unwrap_or(match self.mode {
            TrainMode::FewShot => 8,
            TrainMode::DataRich => 32,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(AmpleError::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(AmpleError::InvalidConfig("epochs must be at least 1".into()));
        }
        if let Some(b) = self.batch_size {
            if b < 2 {
                return Err(AmpleError::InvalidConfig(
                    "batch_size must be at least 2 for batch statistics".into(),
                ));
            }
        }
        if self.mode == TrainMode::FewShot && self.shot_sizes.is_empty() {
            return Err(AmpleError::InvalidConfig(
                "few-shot mode requires shot_sizes".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(AmpleError::InvalidConfig("at least one seed".into()));
        }
        Ok(())
    }
}

/// One article joined with its feature vectors and raw sentiment.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub id: String,
    pub text: String,
    pub text_vec: Vec<f64>,
    pub image_vec: Vec<f64>,
    pub label: Label,
    pub polarity: f64,
    pub subjectivity: f64,
    /// Cosine similarity of the raw text and image vectors.
    pub sim: f64,
}

/// Balanced episode: `n` records per class drawn uniformly without
/// replacement under `seed`; everything else becomes the test set. Both
/// index lists are ascending. Errors name the first class with fewer than
/// `n` records.
pub fn few_shot_sample(
    labels: &[Label],
    n: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(2 * n);
    for class in Label::ALL {
        let mut pool: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == class)
            .map(|(i, _)| i)
            .collect();
        if pool.len() < n {
            return Err(AmpleError::InsufficientData {
                class: class.to_string(),
                needed: n,
                available: pool.len(),
            });
        }
        pool.shuffle(&mut rng);
        train.extend(pool.into_iter().take(n));
    }
    train.sort_unstable();
    let chosen: std::collections::HashSet<usize> = train.iter().copied().collect();
    let test: Vec<usize> = (0..labels.len()).filter(|i| !chosen.contains(i)).collect();
    Ok((train, test))
}

/// Stratified 8:1:1 split: per class, one tenth (rounded down) goes to
/// validation and one tenth to test; the remainder trains. Deterministic
/// per seed; errors when any class cannot fill every part.
pub fn split_data_rich(
    labels: &[Label],
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for class in Label::ALL {
        let mut pool: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == class)
            .map(|(i, _)| i)
            .collect();
        let tenth = pool.len() / 10;
        if tenth == 0 {
            return Err(AmpleError::InsufficientData {
                class: class.to_string(),
                needed: 10,
                available: pool.len(),
            });
        }
        pool.shuffle(&mut rng);
        val.extend(pool.iter().take(tenth).copied());
        test.extend(pool.iter().skip(tenth).take(tenth).copied());
        train.extend(pool.iter().skip(2 * tenth).copied());
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok((train, val, test))
}

/// Decoupled-weight-decay adaptive-moment optimizer. The decay multiplies
/// parameters by `1 - weight_decay` every step independently of the
/// learning rate, so a zero learning rate still shrinks weights.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first_moment: Vec<Array2<f64>>,
    second_moment: Vec<Array2<f64>>,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64, store: &ParamStore) -> Self {
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: store
                .values()
                .iter()
                .map(|v| Array2::zeros(v.raw_dim()))
                .collect(),
            second_moment: store
                .values()
                .iter()
                .map(|v| Array2::zeros(v.raw_dim()))
                .collect(),
        }
    }

    /// One update over all parameters, `grads` aligned to store order.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Array2<f64>]) {
        assert_eq!(grads.len(), store.len(), "one gradient per parameter");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((value, grad), (m, v)) in store
            .values_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            *m = &*m * self.beta1 + grad * (1.0 - self.beta1);
            *v = &*v * self.beta2 + &(grad * grad) * (1.0 - self.beta2);
            let update = Array2::from_shape_fn(value.raw_dim(), |idx| {
                let mh = m[idx] / bc1;
                let vh = v[idx] / bc2;
                self.learning_rate * mh / (vh.sqrt() + self.epsilon)
            });
            *value = &*value * (1.0 - self.weight_decay) - &update;
        }
    }
}

/// Frozen emotion normalization for one run: polarity and composite
/// emotion statistics fit on the training split. The unit pipeline (used
/// by the `-EE` ablation) scales every article by exactly 1.
#[derive(Debug, Clone)]
pub struct EmotionPipeline {
    pub variant: EmotionVariant,
    polarity_scaler: MinMaxScaler,
    emotion_scaler: MinMaxScaler,
}

impl EmotionPipeline {
    pub fn fit(train: &[&TrainExample], variant: EmotionVariant) -> Self {
        assert!(!train.is_empty(), "EmotionPipeline::fit: empty training split");
        let polarities: Vec<f64> = train.iter().map(|e| e.polarity).collect();
        let polarity_scaler = MinMaxScaler::fit(&polarities);
        let emotions: Vec<f64> = train
            .iter()
            .map(|e| {
                composite_emotion(
                    polarity_scaler.scale(e.polarity),
                    e.subjectivity,
                    variant,
                )
            })
            .collect();
        let emotion_scaler = MinMaxScaler::fit(&emotions);
        Self {
            variant,
            polarity_scaler,
            emotion_scaler,
        }
    }

    /// Emotion weighting replaced by the identity.
    pub fn unit(variant: EmotionVariant) -> Self {
        Self {
            variant,
            polarity_scaler: MinMaxScaler::identity(),
            emotion_scaler: MinMaxScaler::identity(),
        }
    }

    /// Final row multiplier for one article (clamped to the training
    /// range).
    pub fn scale_for(&self, example: &TrainExample) -> f64 {
        let p_star = self.polarity_scaler.scale(example.polarity);
        let emotion = composite_emotion(p_star, example.subjectivity, self.variant);
        self.emotion_scaler.scale(emotion)
    }
}

/// Assembles a model batch from examples.
pub fn make_batch(
    model: &AmpleModel,
    examples: &[&TrainExample],
    pipeline: &EmotionPipeline,
) -> Batch {
    assert!(!examples.is_empty(), "make_batch: empty batch");
    let dim = model.config.fusion.dim;
    let n = examples.len();
    let mut text = Array2::zeros((n, dim));
    let mut image = Array2::zeros((n, dim));
    for (i, ex) in examples.iter().enumerate() {
        assert_eq!(ex.text_vec.len(), dim, "text vector width");
        assert_eq!(ex.image_vec.len(), dim, "image vector width");
        for j in 0..dim {
            text[[i, j]] = ex.text_vec[j];
            image[[i, j]] = ex.image_vec[j];
        }
    }
    let prompts = PromptBatch {
        prompts: examples
            .iter()
            .map(|ex| model.config.template.assemble(&ex.text, &model.vocab))
            .collect(),
    };
    Batch {
        text_feats: text,
        image_feats: image,
        emotion_scales: examples.iter().map(|ex| pipeline.scale_for(ex)).collect(),
        sims: examples.iter().map(|ex| ex.sim).collect(),
        prompts,
        labels: examples.iter().map(|ex| ex.label.index()).collect(),
    }
}

/// Splits `0..n` (in the given order) into contiguous chunks of
/// `batch_size`; a trailing single element joins the previous chunk so
/// batch statistics stay defined.
fn chunk_indices(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut chunks: Vec<Vec<usize>> = order
        .chunks(batch_size)
        .map(|c| c.to_vec())
        .collect();
    if chunks.len() > 1 && chunks.last().map(Vec::len) == Some(1) {
        let last = chunks.pop().expect("non-empty");
        chunks.last_mut().expect("previous chunk").extend(last);
    }
    chunks
}

/// Runs the optimization loop. Returns the mean training loss per epoch.
/// Fully deterministic given `seed`; a non-finite loss aborts with the
/// failing step index.
pub fn train(
    model: &mut AmpleModel,
    train_set: &[&TrainExample],
    pipeline: &EmotionPipeline,
    config: &TrainConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    config.validate()?;
    if train_set.len() < 2 {
        return Err(AmpleError::BatchStatistics(train_set.len()));
    }
    let mut optimizer = AdamW::new(config.learning_rate, config.weight_decay, &model.params);
    // A dedicated stream keeps training draws independent of model
    // initialization (which consumed `seed` already).
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1));
    let batch_size = config.effective_batch_size();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let chunks = chunk_indices(&order, batch_size);
        let chunk_count = chunks.len();
        for chunk in chunks {
            let examples: Vec<&TrainExample> = chunk.iter().map(|&i| train_set[i]).collect();
            let batch = make_batch(model, &examples, pipeline);
            let pass = model.forward(&batch, Mode::Train, &mut rng)?;
            let loss = pass.loss_value();
            if !loss.is_finite() {
                return Err(AmpleError::Divergence { step });
            }
            let grads = pass.param_grads(&model.params);
            optimizer.step(&mut model.params, &grads);
            epoch_loss += loss;
            step += 1;
        }
        epoch_losses.push(epoch_loss / chunk_count as f64);
    }
    Ok(epoch_losses)
}

/// Macro-F1 and accuracy of a prediction set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub macro_f1: f64,
    pub accuracy: f64,
}

/// Confusion-count metrics: accuracy plus the unweighted mean of per-class
/// F1 scores, where a class with no predictions and no occurrences
/// contributes zero.
pub fn evaluate_predictions(labels: &[Label], predictions: &[Label]) -> Metrics {
    assert_eq!(labels.len(), predictions.len(), "one prediction per label");
    assert!(!labels.is_empty(), "evaluate: empty test set");
    let mut true_pos = [0usize; 2];
    let mut false_pos = [0usize; 2];
    let mut false_neg = [0usize; 2];
    for (l, p) in labels.iter().zip(predictions) {
        if l == p {
            true_pos[l.index()] += 1;
        } else {
            false_pos[p.index()] += 1;
            false_neg[l.index()] += 1;
        }
    }
    let accuracy = (true_pos[0] + true_pos[1]) as f64 / labels.len() as f64;
    let f1_of = |c: usize| -> f64 {
        let tp = true_pos[c] as f64;
        let precision_den = true_pos[c] + false_pos[c];
        let recall_den = true_pos[c] + false_neg[c];
        if precision_den == 0 || recall_den == 0 {
            return 0.0;
        }
        let precision = tp / precision_den as f64;
        let recall = tp / recall_den as f64;
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    };
    Metrics {
        macro_f1: (f1_of(0) + f1_of(1)) / 2.0,
        accuracy,
    }
}

/// Eval-mode metrics of `model` on a test set, batched in corpus order.
pub fn evaluate(
    model: &mut AmpleModel,
    test_set: &[&TrainExample],
    pipeline: &EmotionPipeline,
    batch_size: usize,
) -> Result<Metrics> {
    if test_set.is_empty() {
        return Err(AmpleError::Protocol("empty test set".into()));
    }
    let order: Vec<usize> = (0..test_set.len()).collect();
    let mut labels = Vec::with_capacity(test_set.len());
    let mut predictions = Vec::with_capacity(test_set.len());
    for chunk in chunk_indices(&order, batch_size) {
        let examples: Vec<&TrainExample> = chunk.iter().map(|&i| test_set[i]).collect();
        let batch = make_batch(model, &examples, pipeline);
        predictions.extend(model.predict(&batch)?);
        labels.extend(examples.iter().map(|ex| ex.label));
    }
    Ok(evaluate_predictions(&labels, &predictions))
}

/// Multi-run reduction: plain mean for few-shot; for data-rich, each
/// metric independently drops exactly one maximum and one minimum
/// occurrence and averages the rest (at least three runs required).
pub fn aggregate(runs: &[(f64, f64)], mode: TrainMode) -> Result<(f64, f64)> {
    if runs.is_empty() {
        return Err(AmpleError::Protocol("aggregate needs at least one run".into()));
    }
    let reduce = |values: Vec<f64>| -> Result<f64> {
        match mode {
            TrainMode::FewShot => Ok(values.iter().sum::<f64>() / values.len() as f64),
            TrainMode::DataRich => {
                if values.len() < 3 {
                    return Err(AmpleError::Protocol(format!(
                        "data-rich aggregation needs at least 3 runs, got {}",
                        values.len()
                    )));
                }
                let mut sorted = values;
                sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite metrics"));
                let trimmed = &sorted[1..sorted.len() - 1];
                Ok(trimmed.iter().sum::<f64>() / trimmed.len() as f64)
            }
        }
    };
    let f1 = reduce(runs.iter().map(|r| r.0).collect())?;
    let acc = reduce(runs.iter().map(|r| r.1).collect())?;
    Ok((f1, acc))
}

/// Per-seed metrics of a report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub f1: f64,
    pub acc: f64,
}

/// Aggregated metrics of a report.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub f1: f64,
    pub acc: f64,
}

/// A grid job that failed; kept in the report so partial grids stay
/// auditable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureRecord {
    pub seed: u64,
    pub error: String,
}

/// Serialized result of one experiment cell (one shot size or one
/// data-rich grid point), aggregated over seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: String,
    pub shots: Option<usize>,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedMetrics>,
    /// Absent when too few jobs succeeded to aggregate.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub aggregate: Option<AggregateMetrics>,
    pub config_fingerprint: String,
    /// Variant label, e.g. `AMPLE` or `-EE`.
    pub label: String,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub failures: Vec<FailureRecord>,
}

/// Result of a single `(split, seed)` job.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub metrics: Metrics,
    pub epoch_losses: Vec<f64>,
}

/// Builds a fresh model for the given training split (vocabulary from its
/// texts), trains it and evaluates on the test split.
pub fn run_episode(
    corpus: &[TrainExample],
    train_idx: &[usize],
    test_idx: &[usize],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    variant: EmotionVariant,
    seed: u64,
) -> Result<EpisodeResult> {
    let train_set: Vec<&TrainExample> = train_idx.iter().map(|&i| &corpus[i]).collect();
    let test_set: Vec<&TrainExample> = test_idx.iter().map(|&i| &corpus[i]).collect();
    let vocab = Vocab::build(train_set.iter().map(|ex| ex.text.as_str()));
    let mut model = AmpleModel::new(model_config.clone(), vocab, seed)?;
    let pipeline = if model_config
        .fusion
        .ablation
        .contains(crate::fusion::Ablation::EmotionElements)
    {
        EmotionPipeline::unit(variant)
    } else {
        EmotionPipeline::fit(&train_set, variant)
    };
    let epoch_losses = train(&mut model, &train_set, &pipeline, train_config, seed)?;
    let metrics = evaluate(
        &mut model,
        &test_set,
        &pipeline,
        train_config.effective_batch_size(),
    )?;
    Ok(EpisodeResult {
        metrics,
        epoch_losses,
    })
}
