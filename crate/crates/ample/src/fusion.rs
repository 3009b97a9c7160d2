//! Multi-head cross-attention fusion of text and image features.
//!
//! Given an emotion-weighted text matrix and an image feature matrix (both
//! `batch x dim`), this module computes:
//!
//! 1. cross-attended representations in both directions ([`mca`]): image
//!    queries over text keys/values and vice versa, per head, concatenated
//!    and projected;
//! 2. residual integration with the original modal features
//!    ([`residual_integrate`]);
//! 3. the [`mix`] block: linear, batch norm, ReLU, dropout, linear down to
//!    the prompt head's hidden size;
//! 4. a per-sample similarity gate ([`similarity_gate`]): the sigmoid of the
//!    batch-standardized text/image cosine similarity scales both fused
//!    streams;
//! 5. [`combine`]: the gated streams are added to the mask representation
//!    under strategy A (convex combination in `alpha`) or strategy B
//!    (uniform scaling by `alpha`).
//!
//! [`build_feature_groups`] wires 1-4 together and applies the ablation
//! masks over the four feature groups (attended text/image, residual
//! text/image). Everything runs on the autodiff [`Tape`], so gradients are
//! exact.

use std::fmt;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, ParamBinding, ParamStore, Tape};
use crate::error::{AmpleError, Result};

/// Forward-pass mode. Train mode uses batch statistics and draws dropout
/// masks; eval mode uses running statistics and no dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// How the gated feature streams are weighted against each other in
/// [`combine`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// `V + alpha * m1 + (1 - alpha) * m2`: a convex trade-off.
    A,
    /// `V + alpha * m1 + alpha * m2`: both streams scaled equally.
    B,
}

impl Strategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Self::A),
            "B" | "b" => Ok(Self::B),
            other => Err(AmpleError::InvalidConfig(format!(
                "unknown strategy '{other}' (expected A or B)"
            ))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::A => f.write_str("A"),
            Self::B => f.write_str("B"),
        }
    }
}

/// Which pair of feature groups feeds the two mix streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    /// Per modality: `f1 = mix(image_attended + image)`,
    /// `f2 = mix(text_attended + text)`.
    Modal,
    /// Attention versus residual: `f1 = mix(image_attended + text_attended)`,
    /// `f2 = mix(image + text)`, so `alpha` trades cross-attended against
    /// plain features.
    McaSplit,
}

impl Pairing {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "modal" => Ok(Self::Modal),
            "mca-split" | "mca_split" => Ok(Self::McaSplit),
            other => Err(AmpleError::InvalidConfig(format!(
                "unknown pairing '{other}' (expected modal or mca-split)"
            ))),
        }
    }
}

impl fmt::Display for Pairing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Modal => f.write_str("modal"),
            Self::McaSplit => f.write_str("mca-split"),
        }
    }
}

/// A component removed from the pipeline for an ablation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    /// `-EE`: emotion weighting replaced by the identity (applied upstream).
    EmotionElements,
    /// `-SA`: similarity gate replaced by the identity.
    SimilarityGate,
    /// `-TM`: the text residual group is zeroed.
    TextResidual,
    /// `-IM`: the image residual group is zeroed.
    ImageResidual,
    /// `-FM`: the cross-attended groups are zeroed.
    McaFusion,
    /// `-RFM`: all fused features are zeroed; only the language-model mask
    /// representation reaches the classifier.
    AllFusion,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::EmotionElements,
        Ablation::SimilarityGate,
        Ablation::TextResidual,
        Ablation::ImageResidual,
        Ablation::McaFusion,
        Ablation::AllFusion,
    ];

    pub fn flag(&self) -> &'static str {
        match self {
            Ablation::EmotionElements => "EE",
            Ablation::SimilarityGate => "SA",
            Ablation::TextResidual => "TM",
            Ablation::ImageResidual => "IM",
            Ablation::McaFusion => "FM",
            Ablation::AllFusion => "RFM",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "EE" => Ok(Ablation::EmotionElements),
            "SA" => Ok(Ablation::SimilarityGate),
            "TM" => Ok(Ablation::TextResidual),
            "IM" => Ok(Ablation::ImageResidual),
            "FM" => Ok(Ablation::McaFusion),
            "RFM" => Ok(Ablation::AllFusion),
            other => Err(AmpleError::InvalidConfig(format!(
                "unknown ablation flag '{other}'"
            ))),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.flag())
    }
}

/// Set of active ablation flags.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationSet {
    pub ee: bool,
    pub sa: bool,
    pub tm: bool,
    pub im: bool,
    pub fm: bool,
    pub rfm: bool,
}

impl AblationSet {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn single(ablation: Ablation) -> Self {
        let mut set = Self::default();
        set.insert(ablation);
        set
    }

    pub fn insert(&mut self, ablation: Ablation) {
        match ablation {
            Ablation::EmotionElements => self.ee = true,
            Ablation::SimilarityGate => self.sa = true,
            Ablation::TextResidual => self.tm = true,
            Ablation::ImageResidual => self.im = true,
            Ablation::McaFusion => self.fm = true,
            Ablation::AllFusion => self.rfm = true,
        }
    }

    pub fn contains(&self, ablation: Ablation) -> bool {
        match ablation {
            Ablation::EmotionElements => self.ee,
            Ablation::SimilarityGate => self.sa,
            Ablation::TextResidual => self.tm,
            Ablation::ImageResidual => self.im,
            Ablation::McaFusion => self.fm,
            Ablation::AllFusion => self.rfm,
        }
    }

    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    /// Parses a comma-separated flag list such as `"EE,FM"`.
    pub fn parse_list(s: &str) -> Result<Self> {
        let mut set = Self::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            set.insert(Ablation::parse(part)?);
        }
        Ok(set)
    }

    /// Active flags as `-EE`-style labels, in canonical order.
    pub fn labels(&self) -> Vec<String> {
        Ablation::ALL
            .iter()
            .filter(|a| self.contains(**a))
            .map(|a| format!("-{a}"))
            .collect()
    }
}

/// Dimensions and knobs of the fusion stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Feature dimension of the text/image vectors.
    pub dim: usize,
    /// Number of attention heads; a power of two so `dim` splits evenly.
    pub heads: usize,
    /// Key dimension used by the softmax scaling denominator, `dim / 2`.
    pub key_dim: usize,
    /// Hidden width of the mix block.
    pub mix_hidden: usize,
    /// Dropout rate inside the mix block, bypassed in eval mode.
    pub dropout_rate: f64,
    /// Output width of the mix block; must equal the prompt head's hidden
    /// size so the combined sum is well-typed.
    pub out_dim: usize,
    /// Weight of the gated image stream in [`combine`].
    pub alpha: f64,
    pub strategy: Strategy,
    pub pairing: Pairing,
    pub ablation: AblationSet,
}

impl FusionConfig {
    /// Defaults for a given feature dimension and prompt hidden size.
    pub fn new(dim: usize, out_dim: usize) -> Self {
        Self {
            dim,
            heads: 2,
            key_dim: (dim / 2).max(1),
            mix_hidden: dim,
            dropout_rate: 0.1,
            out_dim,
            alpha: 0.5,
            strategy: Strategy::A,
            pairing: Pairing::Modal,
            ablation: AblationSet::none(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.heads, 1 | 2 | 4 | 8) {
            return Err(AmpleError::InvalidConfig(format!(
                "heads must be one of 1, 2, 4, 8; got {}",
                self.heads
            )));
        }
        if self.dim == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(AmpleError::InvalidConfig(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.key_dim == 0 {
            return Err(AmpleError::InvalidConfig("key_dim must be positive".into()));
        }
        if self.mix_hidden == 0 || self.out_dim == 0 {
            return Err(AmpleError::InvalidConfig(
                "mix_hidden and out_dim must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(AmpleError::InvalidConfig(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(AmpleError::InvalidConfig(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Running batch-norm statistics of the mix block (state, not parameters).
#[derive(Debug, Clone)]
pub struct BatchNormState {
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(width: usize) -> Self {
        Self {
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    fn update(&mut self, mean: &Array1<f64>, var: &Array1<f64>) {
        self.running_mean = &self.running_mean * (1.0 - self.momentum) + mean * self.momentum;
        self.running_var = &self.running_var * (1.0 - self.momentum) + var * self.momentum;
    }
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Array2::from_shape_vec((rows, cols), data).expect("shape matches data")
}

/// Registers all fusion parameters in `store` under `fusion/...` keys.
/// Matrices are initialized uniformly in `±sqrt(1/fan_in)`; biases start at
/// zero and batch-norm scale/shift at one/zero.
pub fn register_fusion_params(store: &mut ParamStore, config: &FusionConfig, rng: &mut ChaCha8Rng) {
    let d = config.dim;
    let bound = (1.0 / d as f64).sqrt();
    for prefix in ["fusion/mca_img", "fusion/mca_txt"] {
        for name in ["wq", "wk", "wv", "wo"] {
            store.insert(&format!("{prefix}/{name}"), uniform_matrix(rng, d, d, bound));
        }
    }
    store.insert(
        "fusion/mix/w1",
        uniform_matrix(rng, d, config.mix_hidden, bound),
    );
    store.insert("fusion/mix/b1", Array2::zeros((1, config.mix_hidden)));
    store.insert("fusion/mix/bn_gamma", Array2::ones((1, config.mix_hidden)));
    store.insert("fusion/mix/bn_beta", Array2::zeros((1, config.mix_hidden)));
    store.insert(
        "fusion/mix/w2",
        uniform_matrix(
            rng,
            config.mix_hidden,
            config.out_dim,
            (1.0 / config.mix_hidden as f64).sqrt(),
        ),
    );
    store.insert("fusion/mix/b2", Array2::zeros((1, config.out_dim)));
}

/// Multi-head cross-attention: queries from `query_src`, keys and values
/// from `kv_src`. Per head `softmax(Q K^T / sqrt(key_dim)) V`; heads are
/// concatenated and passed through the output projection. Parameters are
/// looked up under `prefix` (`fusion/mca_img` or `fusion/mca_txt`).
pub fn mca(
    tape: &mut Tape,
    query_src: NodeId,
    kv_src: NodeId,
    binding: &ParamBinding,
    prefix: &str,
    config: &FusionConfig,
) -> NodeId {
    assert_eq!(
        tape.value(query_src).ncols(),
        config.dim,
        "mca: query width must equal config.dim"
    );
    assert_eq!(
        tape.value(kv_src).ncols(),
        config.dim,
        "mca: key/value width must equal config.dim"
    );
    let q = {
        let wq = binding.node(&format!("{prefix}/wq"));
        tape.matmul(query_src, wq)
    };
    let k = {
        let wk = binding.node(&format!("{prefix}/wk"));
        tape.matmul(kv_src, wk)
    };
    let v = {
        let wv = binding.node(&format!("{prefix}/wv"));
        tape.matmul(kv_src, wv)
    };

    let head_dim = config.dim / config.heads;
    let scale = 1.0 / (config.key_dim as f64).sqrt();
    let mut heads = Vec::with_capacity(config.heads);
    for h in 0..config.heads {
        let lo = h * head_dim;
        let hi = lo + head_dim;
        let qh = tape.slice_cols(q, lo, hi);
        let kh = tape.slice_cols(k, lo, hi);
        let vh = tape.slice_cols(v, lo, hi);
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt);
        let scaled = tape.scale(scores, scale);
        let attn = tape.softmax_rows(scaled);
        heads.push(tape.matmul(attn, vh));
    }
    let cat = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)
    };
    let wo = binding.node(&format!("{prefix}/wo"));
    tape.matmul(cat, wo)
}

/// Residual connection: elementwise sum of the attention output and the
/// original modal features.
pub fn residual_integrate(tape: &mut Tape, attn_out: NodeId, original: NodeId) -> NodeId {
    tape.add(attn_out, original)
}

/// The mix block: linear, batch norm, ReLU, dropout, linear. Train mode
/// uses batch statistics (at least two rows) and updates `bn`'s running
/// stats; eval mode standardizes with the running stats and skips dropout.
pub fn mix(
    tape: &mut Tape,
    x: NodeId,
    binding: &ParamBinding,
    bn: &mut BatchNormState,
    config: &FusionConfig,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId> {
    let batch = tape.value(x).nrows();
    let w1 = binding.node("fusion/mix/w1");
    let b1 = binding.node("fusion/mix/b1");
    let gamma = binding.node("fusion/mix/bn_gamma");
    let beta = binding.node("fusion/mix/bn_beta");
    let w2 = binding.node("fusion/mix/w2");
    let b2 = binding.node("fusion/mix/b2");

    let lin = tape.matmul(x, w1);
    let pre = tape.add_row(lin, b1);

    let normed = match mode {
        Mode::Train => {
            if batch < 2 {
                return Err(AmpleError::BatchStatistics(batch));
            }
            let (y, mean, var) = tape.batch_norm_train(pre, gamma, beta, bn.eps);
            bn.update(&mean, &var);
            y
        }
        Mode::Eval => {
            let width = config.mix_hidden;
            let neg_mean = Array2::from_shape_fn((batch, width), |(_, j)| -bn.running_mean[j]);
            let inv_std = Array2::from_shape_fn((batch, width), |(_, j)| {
                1.0 / (bn.running_var[j] + bn.eps).sqrt()
            });
            let centered = tape.add_const(pre, neg_mean);
            let standardized = tape.mul_const(centered, inv_std);
            let scaled = tape.mul_row(standardized, gamma);
            tape.add_row(scaled, beta)
        }
    };

    let activated = tape.relu(normed);
    let dropped = if matches!(mode, Mode::Train) && config.dropout_rate > 0.0 {
        let keep = 1.0 - config.dropout_rate;
        let mask = Array2::from_shape_fn((batch, config.mix_hidden), |_| {
            if rng.gen_range(0.0..1.0) < config.dropout_rate {
                0.0
            } else {
                1.0 / keep
            }
        });
        tape.mul_const(activated, mask)
    } else {
        activated
    };

    let out = tape.matmul(dropped, w2);
    Ok(tape.add_row(out, b2))
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Per-sample gate values: sigmoid of the batch-standardized similarity
/// (population standard deviation, `1e-8` guard). A batch of one gates on
/// the raw similarity; a constant batch standardizes to zero, so every
/// gate is exactly 0.5.
pub fn gate_values(sims: &[f64]) -> Vec<f64> {
    assert!(!sims.is_empty(), "gate_values: empty batch");
    if sims.len() == 1 {
        return vec![sigmoid(sims[0])];
    }
    let min = sims.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return vec![0.5; sims.len()];
    }
    let n = sims.len() as f64;
    let mean = sims.iter().sum::<f64>() / n;
    let var = sims.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    sims.iter().map(|s| sigmoid((s - mean) / (std + 1e-8))).collect()
}

/// Scales row `i` of both fused streams by the gate of sample `i`.
/// Gates depend only on the input similarities, so they enter the tape as
/// constants.
pub fn similarity_gate(
    tape: &mut Tape,
    sims: &[f64],
    fused_image: NodeId,
    fused_text: NodeId,
) -> (NodeId, NodeId) {
    assert_eq!(
        sims.len(),
        tape.value(fused_image).nrows(),
        "similarity_gate: one similarity per row"
    );
    let gates = gate_values(sims);
    let col = Array2::from_shape_vec((gates.len(), 1), gates).expect("column vector");
    let gate_node = tape.leaf(col);
    let m1 = tape.scale_rows(fused_image, gate_node);
    let m2 = tape.scale_rows(fused_text, gate_node);
    (m1, m2)
}

/// Adds the gated streams to the mask representation `v` according to the
/// configured strategy. The prompt head applies its fully connected layer
/// to the result.
pub fn combine(
    tape: &mut Tape,
    v: NodeId,
    m1: NodeId,
    m2: NodeId,
    config: &FusionConfig,
) -> NodeId {
    let w1 = config.alpha;
    let w2 = match config.strategy {
        Strategy::A => 1.0 - config.alpha,
        Strategy::B => config.alpha,
    };
    let s1 = tape.scale(m1, w1);
    let s2 = tape.scale(m2, w2);
    let partial = tape.add(v, s1);
    tape.add(partial, s2)
}

/// Values of the intermediate feature groups of one forward pass, for
/// ablation assertions and inspection.
#[derive(Debug, Clone)]
pub struct FusionTrace {
    /// Cross-attended image representation (zeroed under `-FM`/`-RFM`).
    pub image_attended: Array2<f64>,
    /// Cross-attended text representation (zeroed under `-FM`/`-RFM`).
    pub text_attended: Array2<f64>,
    /// Image residual group (zeroed under `-IM`/`-RFM`).
    pub image_residual: Array2<f64>,
    /// Text residual group (zeroed under `-TM`/`-RFM`).
    pub text_residual: Array2<f64>,
    /// Mix output of the first stream (`f1`).
    pub fused_image: Array2<f64>,
    /// Mix output of the second stream (`f2`).
    pub fused_text: Array2<f64>,
    /// Gate value per sample (all ones under `-SA`).
    pub gates: Vec<f64>,
    /// Gated first stream (`m1`).
    pub gated_image: Array2<f64>,
    /// Gated second stream (`m2`).
    pub gated_text: Array2<f64>,
}

impl FusionTrace {
    fn zeros(batch: usize, out_dim: usize, dim: usize) -> Self {
        Self {
            image_attended: Array2::zeros((batch, dim)),
            text_attended: Array2::zeros((batch, dim)),
            image_residual: Array2::zeros((batch, dim)),
            text_residual: Array2::zeros((batch, dim)),
            fused_image: Array2::zeros((batch, out_dim)),
            fused_text: Array2::zeros((batch, out_dim)),
            gates: vec![0.0; batch],
            gated_image: Array2::zeros((batch, out_dim)),
            gated_text: Array2::zeros((batch, out_dim)),
        }
    }
}

/// Runs the fusion stage end to end: cross-attention in both directions,
/// ablation masks over the four feature groups, the configured pairing into
/// the two mix streams, and the similarity gate. Returns the gated streams
/// `(m1, m2)` plus a value trace.
///
/// Under `-RFM` both outputs are zero matrices and nothing else is
/// computed, so the result is invariant to the feature inputs.
#[allow(clippy::too_many_arguments)]
pub fn build_feature_groups(
    tape: &mut Tape,
    weighted_text: NodeId,
    image_feats: NodeId,
    sims: &[f64],
    binding: &ParamBinding,
    bn: &mut BatchNormState,
    config: &FusionConfig,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<(NodeId, NodeId, FusionTrace)> {
    let batch = tape.value(weighted_text).nrows();
    assert_eq!(
        tape.value(image_feats).nrows(),
        batch,
        "build_feature_groups: batch sizes differ"
    );

    let ablation = config.ablation;
    if ablation.contains(Ablation::AllFusion) {
        let m1 = tape.leaf(Array2::zeros((batch, config.out_dim)));
        let m2 = tape.leaf(Array2::zeros((batch, config.out_dim)));
        return Ok((m1, m2, FusionTrace::zeros(batch, config.out_dim, config.dim)));
    }

    // The four feature groups, with ablated groups zeroed.
    let (image_attended, text_attended) = if ablation.contains(Ablation::McaFusion) {
        let z1 = tape.leaf(Array2::zeros((batch, config.dim)));
        let z2 = tape.leaf(Array2::zeros((batch, config.dim)));
        (z1, z2)
    } else {
        let img = mca(tape, image_feats, weighted_text, binding, "fusion/mca_img", config);
        let txt = mca(tape, weighted_text, image_feats, binding, "fusion/mca_txt", config);
        (img, txt)
    };
    let image_residual = if ablation.contains(Ablation::ImageResidual) {
        tape.leaf(Array2::zeros((batch, config.dim)))
    } else {
        image_feats
    };
    let text_residual = if ablation.contains(Ablation::TextResidual) {
        tape.leaf(Array2::zeros((batch, config.dim)))
    } else {
        weighted_text
    };

    let (stream1, stream2) = match config.pairing {
        Pairing::Modal => (
            residual_integrate(tape, image_attended, image_residual),
            residual_integrate(tape, text_attended, text_residual),
        ),
        Pairing::McaSplit => (
            tape.add(image_attended, text_attended),
            tape.add(image_residual, text_residual),
        ),
    };

    let fused_image = mix(tape, stream1, binding, bn, config, mode, rng)?;
    let fused_text = mix(tape, stream2, binding, bn, config, mode, rng)?;

    let (m1, m2, gates) = if ablation.contains(Ablation::SimilarityGate) {
        (fused_image, fused_text, vec![1.0; batch])
    } else {
        let (m1, m2) = similarity_gate(tape, sims, fused_image, fused_text);
        (m1, m2, gate_values(sims))
    };

    let trace = FusionTrace {
        image_attended: tape.value(image_attended).clone(),
        text_attended: tape.value(text_attended).clone(),
        image_residual: tape.value(image_residual).clone(),
        text_residual: tape.value(text_residual).clone(),
        fused_image: tape.value(fused_image).clone(),
        fused_text: tape.value(fused_text).clone(),
        gates,
        gated_image: tape.value(m1).clone(),
        gated_text: tape.value(m2).clone(),
    };
    Ok((m1, m2, trace))
}
