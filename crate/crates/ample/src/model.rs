//! The assembled classifier: emotion-weighted text features fused with
//! image features, combined with the prompt mask representation, projected
//! and classified through the verbalizer.
//!
//! One [`AmpleModel`] owns all parameters in a single [`ParamStore`] with
//! `fusion/...` and `prompt/...` keys, plus the fusion batch-norm running
//! statistics. [`AmpleModel::forward`] records the whole computation on an
//! autodiff tape:
//!
//! ```text
//! weighted_text = emotion_scale * text        (identity under -EE)
//! m1, m2        = fusion(weighted_text, image, sims)   (zero under -RFM)
//! v             = backend mask representation
//! x_f           = FC(v + combine(m1, m2))
//! probs         = softmax(x_f . verbalizer^T)
//! loss          = mean NLL
//! ```
//!
//! Checkpoints are a flat key-to-tensor archive: raw little-endian `f64`
//! data in sorted key order plus a JSON sidecar recording dimensions and
//! offsets.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, ParamBinding, ParamStore, Tape};
use crate::error::{AmpleError, Result};
use crate::fusion::{
    build_feature_groups, combine, register_fusion_params, BatchNormState, FusionConfig,
    FusionTrace, Mode,
};
use crate::prompt::{
    class_logits, mask_repr, prompt_fc, register_prompt_params, PromptBatch, PromptTemplate,
    ToyBackend, ToyBackendConfig, Vocab,
};
use crate::store::Label;

/// Everything needed to build a model instance (except the vocabulary,
/// which comes from the training split).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub fusion: FusionConfig,
    pub backend: ToyBackendConfig,
    pub template: PromptTemplate,
}

impl ModelConfig {
    /// Defaults for a given feature dimension: backend per
    /// [`ToyBackendConfig::default`], fusion output sized to match.
    pub fn new(dim: usize) -> Self {
        let backend = ToyBackendConfig::default();
        Self {
            fusion: FusionConfig::new(dim, backend.hidden),
            backend,
            template: PromptTemplate::default(),
        }
    }

    /// A small configuration for tests and examples: hidden size 8, two
    /// heads everywhere, no dropout.
    pub fn desk_scale(dim: usize) -> Self {
        let backend = ToyBackendConfig {
            hidden: 8,
            layers: 1,
            heads: 2,
            ff_hidden: 16,
            positional: true,
        };
        let mut fusion = FusionConfig::new(dim, backend.hidden);
        fusion.heads = 2;
        fusion.dropout_rate = 0.0;
        Self {
            fusion,
            backend,
            template: PromptTemplate::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.fusion.validate()?;
        self.backend.validate()?;
        if self.fusion.out_dim != self.backend.hidden {
            return Err(AmpleError::InvalidConfig(format!(
                "fusion out_dim {} must equal backend hidden size {}",
                self.fusion.out_dim, self.backend.hidden
            )));
        }
        Ok(())
    }
}

/// One classifier batch, fully prepared: feature rows, final emotion
/// multipliers (already normalized, clamped, or all ones under -EE),
/// text/image cosine similarities, assembled prompts and class indices.
#[derive(Debug, Clone)]
pub struct Batch {
    pub text_feats: Array2<f64>,
    pub image_feats: Array2<f64>,
    pub emotion_scales: Vec<f64>,
    pub sims: Vec<f64>,
    pub prompts: PromptBatch,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let n = self.labels.len();
        if self.text_feats.nrows() != n
            || self.image_feats.nrows() != n
            || self.emotion_scales.len() != n
            || self.sims.len() != n
            || self.prompts.prompts.len() != n
        {
            return Err(AmpleError::InvalidConfig(
                "batch components have inconsistent lengths".into(),
            ));
        }
        if self.text_feats.ncols() != dim || self.image_feats.ncols() != dim {
            return Err(AmpleError::InvalidConfig(format!(
                "batch feature width {} does not match model dim {dim}",
                self.text_feats.ncols()
            )));
        }
        Ok(())
    }
}

/// A recorded forward pass. Values are read from the tape; gradients come
/// from [`ForwardPass::param_grads`].
pub struct ForwardPass {
    pub tape: Tape,
    pub binding: ParamBinding,
    pub loss: NodeId,
    pub logits: NodeId,
    pub probs: NodeId,
    /// The fused feature vector `x_f` (after the FC layer).
    pub fused_features: NodeId,
    /// Intermediate fusion values; `None` under `-RFM`.
    pub trace: Option<FusionTrace>,
}

impl ForwardPass {
    pub fn loss_value(&self) -> f64 {
        self.tape.value(self.loss)[[0, 0]]
    }

    pub fn probabilities(&self) -> &Array2<f64> {
        self.tape.value(self.probs)
    }

    /// Argmax class per row; ties resolve to the lower index (fake).
    pub fn predictions(&self) -> Vec<Label> {
        self.probabilities()
            .rows()
            .into_iter()
            .map(|row| {
                if row[0] >= row[1] {
                    Label::Fake
                } else {
                    Label::Real
                }
            })
            .collect()
    }

    /// Gradients of the loss for every parameter, in store order.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Array2<f64>> {
        let grads = self.tape.backward(self.loss);
        self.binding.collect(&grads, store)
    }
}

/// The full classifier with its parameters and mutable state.
#[derive(Clone)]
pub struct AmpleModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub bn: BatchNormState,
    pub vocab: Vocab,
    backend: ToyBackend,
}

impl AmpleModel {
    /// Builds and initializes a model. All randomness derives from `seed`,
    /// so equal seeds give bit-identical parameters.
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let backend = ToyBackend::new(config.backend.clone(), vocab.len())?;
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let mut params = ParamStore::new();
        register_fusion_params(&mut params, &config.fusion, &mut rng);
        register_prompt_params(&mut params, &backend, &vocab, &mut rng);
        let bn = BatchNormState::new(config.fusion.mix_hidden);
        Ok(Self {
            config,
            params,
            bn,
            vocab,
            backend,
        })
    }

    pub fn backend(&self) -> &ToyBackend {
        &self.backend
    }

    /// Records the end-to-end computation for `batch`. Train mode updates
    /// batch-norm running statistics and draws dropout masks from `rng`;
    /// eval mode is side-effect free.
    pub fn forward(&mut self, batch: &Batch, mode: Mode, rng: &mut ChaCha8Rng) -> Result<ForwardPass> {
        batch.validate(self.config.fusion.dim)?;
        if batch.is_empty() {
            return Err(AmpleError::InvalidConfig("empty batch".into()));
        }
        let mut tape = Tape::new();
        let binding = self.params.bind(&mut tape);

        let text = tape.leaf(batch.text_feats.clone());
        let scales = tape.leaf(Array2::from_shape_vec(
            (batch.len(), 1),
            batch.emotion_scales.clone(),
        )
        .expect("column vector"));
        let weighted_text = tape.scale_rows(text, scales);

        let v = mask_repr(&mut tape, &binding, &self.backend, &batch.prompts);

        let rfm = self
            .config
            .fusion
            .ablation
            .contains(crate::fusion::Ablation::AllFusion);
        let (pre_fc, trace) = if rfm {
            (v, None)
        } else {
            let image = tape.leaf(batch.image_feats.clone());
            let (m1, m2, trace) = build_feature_groups(
                &mut tape,
                weighted_text,
                image,
                &batch.sims,
                &binding,
                &mut self.bn,
                &self.config.fusion,
                mode,
                rng,
            )?;
            (combine(&mut tape, v, m1, m2, &self.config.fusion), Some(trace))
        };

        let x_f = prompt_fc(&mut tape, pre_fc, &binding);
        let logits = class_logits(&mut tape, x_f, &binding);
        let probs = tape.softmax_rows(logits);
        let loss = tape.cross_entropy_mean(logits, &batch.labels);

        Ok(ForwardPass {
            tape,
            binding,
            loss,
            logits,
            probs,
            fused_features: x_f,
            trace,
        })
    }

    /// Eval-mode predictions for a prepared batch.
    pub fn predict(&mut self, batch: &Batch) -> Result<Vec<Label>> {
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let pass = self.forward(batch, Mode::Eval, &mut rng)?;
        Ok(pass.predictions())
    }

    /// Serializes parameters and batch-norm state to `<base>.bin` (raw
    /// little-endian `f64` in sorted key order) and `<base>.json` (the
    /// dimension/offset sidecar).
    pub fn save_checkpoint(&self, base: impl AsRef<Path>) -> Result<()> {
        let mut entries: Vec<(String, Array2<f64>)> = self
            .params
            .names()
            .map(|n| (n.to_owned(), self.params.get(n).clone()))
            .collect();
        entries.push((
            "fusion/mix/bn_running_mean".to_owned(),
            self.bn.running_mean.clone().insert_axis(ndarray::Axis(0)),
        ));
        entries.push((
            "fusion/mix/bn_running_var".to_owned(),
            self.bn.running_var.clone().insert_axis(ndarray::Axis(0)),
        ));
        entries.sort_by(|a, b| a.0.cmp(&b.0));

        let base = base.as_ref();
        let mut sidecar = Vec::with_capacity(entries.len());
        let mut blob: Vec<u8> = Vec::new();
        for (key, tensor) in &entries {
            sidecar.push(TensorMeta {
                key: key.clone(),
                rows: tensor.nrows(),
                cols: tensor.ncols(),
                offset: blob.len(),
            });
            for &x in tensor.iter() {
                blob.extend_from_slice(&x.to_le_bytes());
            }
        }
        let archive = CheckpointSidecar {
            format: CHECKPOINT_FORMAT.to_owned(),
            tensors: sidecar,
        };
        std::fs::File::create(base.with_extension("bin"))?.write_all(&blob)?;
        std::fs::write(
            base.with_extension("json"),
            serde_json::to_string_pretty(&archive)?,
        )?;
        Ok(())
    }

    /// Restores parameters and batch-norm state written by
    /// [`AmpleModel::save_checkpoint`]. Keys and shapes must match this
    /// model's configuration.
    pub fn load_checkpoint(&mut self, base: impl AsRef<Path>) -> Result<()> {
        let base = base.as_ref();
        let sidecar: CheckpointSidecar =
            serde_json::from_str(&std::fs::read_to_string(base.with_extension("json"))?)?;
        if sidecar.format != CHECKPOINT_FORMAT {
            return Err(AmpleError::InvalidConfig(format!(
                "unknown checkpoint format '{}'",
                sidecar.format
            )));
        }
        let blob = std::fs::read(base.with_extension("bin"))?;
        for meta in &sidecar.tensors {
            let len = meta.rows * meta.cols;
            let end = meta.offset + len * 8;
            if end > blob.len() {
                return Err(AmpleError::InvalidConfig(format!(
                    "checkpoint tensor '{}' extends past the archive",
                    meta.key
                )));
            }
            let mut data = Vec::with_capacity(len);
            for chunk in blob[meta.offset..end].chunks_exact(8) {
                data.push(f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
            }
            let tensor = Array2::from_shape_vec((meta.rows, meta.cols), data)
                .expect("shape matches length");
            match meta.key.as_str() {
                "fusion/mix/bn_running_mean" => {
                    self.bn.running_mean = tensor.row(0).to_owned();
                }
                "fusion/mix/bn_running_var" => {
                    self.bn.running_var = tensor.row(0).to_owned();
                }
                key => {
                    let target = self.params.get_mut(key);
                    if target.raw_dim() != tensor.raw_dim() {
                        return Err(AmpleError::InvalidConfig(format!(
                            "checkpoint tensor '{key}' has shape {:?}, expected {:?}",
                            tensor.shape(),
                            target.shape()
                        )));
                    }
                    *target = tensor;
                }
            }
        }
        Ok(())
    }
}

const CHECKPOINT_FORMAT: &str = "ample-checkpoint";

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    key: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointSidecar {
    format: String,
    tensors: Vec<TensorMeta>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{Ablation, AblationSet};
    use rand::Rng;
    use rand::SeedableRng;

    fn tiny_vocab() -> Vocab {
        Vocab::build(["market rally continues", "hoax spreads online fast"])
    }

    fn tiny_batch(dim: usize, model: &AmpleModel) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 4;
        let feats = |rng: &mut ChaCha8Rng| {
            Array2::from_shape_fn((n, dim), |_| rng.gen_range(-1.0..1.0))
        };
        let texts = ["market rally", "hoax spreads", "rally online", "fast hoax"];
        Batch {
            text_feats: feats(&mut rng),
            image_feats: feats(&mut rng),
            emotion_scales: vec![0.2, 0.9, 0.5, 1.0],
            sims: vec![0.3, -0.6, 0.1, 0.8],
            prompts: model
                .config
                .template
                .assemble_batch(&texts, &model.vocab),
            labels: vec![0, 1, 1, 0],
        }
    }

    fn make_model(seed: u64, ablation: AblationSet) -> AmpleModel {
        let mut config = ModelConfig::desk_scale(8);
        config.fusion.ablation = ablation;
        AmpleModel::new(config, tiny_vocab(), seed).unwrap()
    }

    #[test]
    fn same_seed_builds_identical_models_and_losses() {
        let mut a = make_model(11, AblationSet::none());
        let mut b = make_model(11, AblationSet::none());
        let batch = tiny_batch(8, &a);
        let mut rng_a = ChaCha8Rng::seed_from_u64(1);
        let mut rng_b = ChaCha8Rng::seed_from_u64(1);
        let pass_a = a.forward(&batch, Mode::Train, &mut rng_a).unwrap();
        let pass_b = b.forward(&batch, Mode::Train, &mut rng_b).unwrap();
        assert_eq!(pass_a.loss_value(), pass_b.loss_value());
        assert_eq!(pass_a.probabilities(), pass_b.probabilities());
    }

    #[test]
    fn probability_rows_sum_to_one() {
        let mut model = make_model(12, AblationSet::none());
        let batch = tiny_batch(8, &model);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pass = model.forward(&batch, Mode::Eval, &mut rng).unwrap();
        for row in pass.probabilities().rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
        assert_eq!(pass.predictions().len(), batch.len());
    }

    #[test]
    fn rfm_output_ignores_features_and_emotions() {
        let mut model = make_model(13, AblationSet::single(Ablation::AllFusion));
        let mut batch = tiny_batch(8, &model);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pass1 = model.forward(&batch, Mode::Eval, &mut rng).unwrap();

        // Scramble everything the ablation is supposed to disconnect.
        batch.image_feats.mapv_inplace(|v| v * -3.5 + 1.0);
        batch.text_feats.mapv_inplace(|v| v * 2.0 - 0.7);
        batch.emotion_scales = vec![0.99, 0.01, 0.42, 0.0];
        batch.sims = vec![0.0, 0.0, 1.0, -1.0];
        let pass2 = model.forward(&batch, Mode::Eval, &mut rng).unwrap();
        assert_eq!(pass1.loss_value(), pass2.loss_value());
        assert_eq!(pass1.probabilities(), pass2.probabilities());
        assert!(pass1.trace.is_none());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut model = make_model(14, AblationSet::none());
        let batch = tiny_batch(8, &model);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // Touch the running stats so they are not the defaults.
        model.forward(&batch, Mode::Train, &mut rng).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("ckpt");
        model.save_checkpoint(&base).unwrap();

        let mut restored = make_model(999, AblationSet::none());
        restored.load_checkpoint(&base).unwrap();
        for name in model.params.names() {
            assert_eq!(model.params.get(name), restored.params.get(name), "{name}");
        }
        assert_eq!(model.bn.running_mean, restored.bn.running_mean);
        assert_eq!(model.bn.running_var, restored.bn.running_var);

        // Sidecar keys are sorted for diffability.
        let sidecar: CheckpointSidecar = serde_json::from_str(
            &std::fs::read_to_string(base.with_extension("json")).unwrap(),
        )
        .unwrap();
        let keys: Vec<&str> = sidecar.tensors.iter().map(|t| t.key.as_str()).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn config_validation_requires_matching_widths() {
        let mut config = ModelConfig::desk_scale(8);
        config.fusion.out_dim = 10;
        assert!(config.validate().is_err());
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let model = make_model(15, AblationSet::none());
        let batch = tiny_batch(8, &model);

        let eval = |model: &AmpleModel| -> (f64, Vec<Array2<f64>>) {
            let mut scratch = model.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let pass = scratch.forward(&batch, Mode::Train, &mut rng).unwrap();
            (pass.loss_value(), pass.param_grads(&scratch.params))
        };
        let (_, grads) = eval(&model);

        let mut dir_rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..3 {
            let direction: Vec<Array2<f64>> = model
                .params
                .values()
                .iter()
                .map(|v| Array2::from_shape_fn(v.raw_dim(), |_| dir_rng.gen_range(-1.0..1.0)))
                .collect();
            let analytic: f64 = grads
                .iter()
                .zip(&direction)
                .map(|(g, d)| (g * d).sum())
                .sum();
            let step = 1e-5;
            let eval_at = |t: f64| -> f64 {
                let mut perturbed = model.clone();
                for (value, d) in perturbed.params.values_mut().iter_mut().zip(&direction) {
                    *value += &(d * t);
                }
                eval(&perturbed).0
            };
            let fd = (eval_at(step) - eval_at(-step)) / (2.0 * step);
            let rel = (analytic - fd).abs() / fd.abs().max(analytic.abs()).max(1e-12);
            assert!(rel <= 1e-4, "relative error {rel}: {analytic} vs {fd}");
        }
    }
}
