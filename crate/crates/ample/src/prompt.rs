//! Hybrid prompt assembly, masked-LM backends and the verbalizer head.
//!
//! Every article is wrapped in the fixed template
//! `<head> this is a piece of <mask> news <tail>` followed by the article
//! tokens, where `<head>` and `<tail>` are trainable embedding vectors and
//! `<mask>` is an ordinary (trainable) vocabulary slot. A
//! [`MaskedLmBackend`] maps the assembled token sequence to per-position
//! hidden states; the hidden state at the mask position is the sequence
//! representation used downstream.
//!
//! The bundled backend is a small transformer encoder over a whitespace
//! vocabulary ([`ToyBackend`]); adapters for real pretrained models can
//! implement the same trait. Classification projects features onto
//! label-word embeddings (the [`Verbalizer`]) and applies a row softmax;
//! training minimizes the mean negative log-likelihood.

use std::collections::HashSet;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, ParamBinding, ParamStore, Tape};
use crate::error::{AmpleError, Result};
use crate::text::tokenize;

/// Reserved vocabulary slots.
pub const UNK_TOKEN: &str = "<unk>";
pub const MASK_TOKEN: &str = "<mask>";

/// Fixed template words around the mask slot.
const TEMPLATE_PREFIX: [&str; 5] = ["this", "is", "a", "piece", "of"];
const TEMPLATE_SUFFIX: [&str; 1] = ["news"];

/// Number of slots in the article-free prompt skeleton:
/// head + 5 prefix words + mask + "news" + tail.
pub const SKELETON_LEN: usize = 9;

/// Word-to-id mapping with stable ordering: `<unk>`, `<mask>`, the template
/// words, then the sorted unique words of the corpus it was built from.
#[derive(Debug, Clone)]
pub struct Vocab {
    words: Vec<String>,
    index: std::collections::HashMap<String, usize>,
}

impl Vocab {
    /// Builds the vocabulary from training texts. Out-of-vocabulary words
    /// map to the shared `<unk>` slot at lookup time.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words: Vec<String> = vec![UNK_TOKEN.to_owned(), MASK_TOKEN.to_owned()];
        let mut seen: HashSet<String> = words.iter().cloned().collect();
        for word in TEMPLATE_PREFIX.iter().chain(TEMPLATE_SUFFIX.iter()) {
            if seen.insert((*word).to_owned()) {
                words.push((*word).to_owned());
            }
        }
        let mut corpus: Vec<String> = Vec::new();
        for text in texts {
            for token in tokenize(text) {
                if seen.insert(token.clone()) {
                    corpus.push(token);
                }
            }
        }
        corpus.sort();
        words.extend(corpus);
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Self { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Id of `word`, or the `<unk>` id when absent.
    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(0)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn mask_id(&self) -> usize {
        1
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    /// Serializes one word per line in vocabulary order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for word in &self.words {
            out.push_str(word);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let contents = std::fs::read_to_string(path)?;
        let words: Vec<String> = contents.lines().map(str::to_owned).collect();
        if words.first().map(String::as_str) != Some(UNK_TOKEN)
            || words.get(1).map(String::as_str) != Some(MASK_TOKEN)
        {
            return Err(AmpleError::InvalidConfig(
                "vocabulary file must start with <unk> and <mask>".into(),
            ));
        }
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Ok(Self { words, index })
    }
}

/// One position of an assembled prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// The trainable head embedding.
    Head,
    /// The trainable tail embedding.
    Tail,
    /// A vocabulary token (including `<mask>`).
    Token(usize),
}

/// A tokenized article wrapped in the prompt template.
#[derive(Debug, Clone)]
pub struct AssembledPrompt {
    pub slots: Vec<Slot>,
    pub mask_pos: usize,
}

impl AssembledPrompt {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// Prompts for a batch of articles.
#[derive(Debug, Clone, Default)]
pub struct PromptBatch {
    pub prompts: Vec<AssembledPrompt>,
}

/// The fixed prompt layout. Head precedes the fixed pattern, tail follows
/// it, article tokens come after the tail and are truncated so the whole
/// sequence never exceeds `max_len`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub max_len: usize,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self { max_len: 64 }
    }
}

impl PromptTemplate {
    pub fn new(max_len: usize) -> Self {
        assert!(max_len >= SKELETON_LEN, "max_len shorter than the skeleton");
        Self { max_len }
    }

    /// Wraps `text` in the template. The skeleton is always intact and
    /// contains exactly one mask slot; an empty article yields the bare
    /// skeleton.
    pub fn assemble(&self, text: &str, vocab: &Vocab) -> AssembledPrompt {
        let mut slots = Vec::with_capacity(SKELETON_LEN);
        slots.push(Slot::Head);
        for word in TEMPLATE_PREFIX {
            slots.push(Slot::Token(vocab.id(word)));
        }
        let mask_pos = slots.len();
        slots.push(Slot::Token(vocab.mask_id()));
        for word in TEMPLATE_SUFFIX {
            slots.push(Slot::Token(vocab.id(word)));
        }
        slots.push(Slot::Tail);
        debug_assert_eq!(slots.len(), SKELETON_LEN);

        let budget = self.max_len - SKELETON_LEN;
        for token in tokenize(text).into_iter().take(budget) {
            slots.push(Slot::Token(vocab.id(&token)));
        }
        AssembledPrompt { slots, mask_pos }
    }

    pub fn assemble_batch(&self, texts: &[&str], vocab: &Vocab) -> PromptBatch {
        PromptBatch {
            prompts: texts.iter().map(|t| self.assemble(t, vocab)).collect(),
        }
    }
}

/// A masked language model over assembled prompts. Implementations read
/// their parameters (and the shared `prompt/head` / `prompt/tail`
/// embeddings) from the bound parameter store.
pub trait MaskedLmBackend {
    /// Width of the hidden states; must match the fusion `out_dim`.
    fn hidden_size(&self) -> usize;

    /// Per-position hidden states for one prompt, shape
    /// `(prompt.len(), hidden_size)`.
    fn encode(&self, tape: &mut Tape, binding: &ParamBinding, prompt: &AssembledPrompt) -> NodeId;
}

/// Shape of the bundled transformer encoder backend.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyBackendConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    /// Adds fixed sinusoidal position encodings to the input embeddings.
    /// With `layers = 0` and this off, the backend is an embedding lookup.
    pub positional: bool,
}

impl Default for ToyBackendConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 2,
            heads: 4,
            ff_hidden: 128,
            positional: true,
        }
    }
}

impl ToyBackendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(AmpleError::InvalidConfig(format!(
                "backend hidden {} must be a positive multiple of heads {}",
                self.hidden, self.heads
            )));
        }
        if self.layers > 0 && self.ff_hidden == 0 {
            return Err(AmpleError::InvalidConfig(
                "backend ff_hidden must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Small trainable transformer encoder with learned token embeddings over
/// a word vocabulary.
#[derive(Debug, Clone)]
pub struct ToyBackend {
    config: ToyBackendConfig,
    vocab_size: usize,
}

const LN_EPS: f64 = 1e-5;

impl ToyBackend {
    pub fn new(config: ToyBackendConfig, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        if vocab_size < 2 {
            return Err(AmpleError::InvalidConfig(
                "vocabulary must contain at least <unk> and <mask>".into(),
            ));
        }
        Ok(Self { config, vocab_size })
    }

    pub fn config(&self) -> &ToyBackendConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Registers embedding, attention, feed-forward and layer-norm
    /// parameters under `prompt/backend/...`.
    pub fn register_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let h = self.config.hidden;
        store.insert(
            "prompt/backend/embed",
            normal_matrix(rng, self.vocab_size, h, 0.02),
        );
        let bound = (1.0 / h as f64).sqrt();
        for layer in 0..self.config.layers {
            let p = format!("prompt/backend/layer{layer}");
            for name in ["wq", "wk", "wv", "wo"] {
                store.insert(&format!("{p}/attn/{name}"), uniform_matrix(rng, h, h, bound));
            }
            for name in ["bq", "bk", "bv", "bo"] {
                store.insert(&format!("{p}/attn/{name}"), Array2::zeros((1, h)));
            }
            store.insert(&format!("{p}/ln1/gamma"), Array2::ones((1, h)));
            store.insert(&format!("{p}/ln1/beta"), Array2::zeros((1, h)));
            store.insert(
                &format!("{p}/ffn/w1"),
                uniform_matrix(rng, h, self.config.ff_hidden, bound),
            );
            store.insert(&format!("{p}/ffn/b1"), Array2::zeros((1, self.config.ff_hidden)));
            store.insert(
                &format!("{p}/ffn/w2"),
                uniform_matrix(
                    rng,
                    self.config.ff_hidden,
                    h,
                    (1.0 / self.config.ff_hidden as f64).sqrt(),
                ),
            );
            store.insert(&format!("{p}/ffn/b2"), Array2::zeros((1, h)));
            store.insert(&format!("{p}/ln2/gamma"), Array2::ones((1, h)));
            store.insert(&format!("{p}/ln2/beta"), Array2::zeros((1, h)));
        }
    }

    fn self_attention(
        &self,
        tape: &mut Tape,
        binding: &ParamBinding,
        x: NodeId,
        prefix: &str,
    ) -> NodeId {
        let h = self.config.hidden;
        let head_dim = h / self.config.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();

        let project = |tape: &mut Tape, w: &str, b: &str| {
            let wn = binding.node(&format!("{prefix}/attn/{w}"));
            let bn = binding.node(&format!("{prefix}/attn/{b}"));
            let p = tape.matmul(x, wn);
            tape.add_row(p, bn)
        };
        let q = project(tape, "wq", "bq");
        let k = project(tape, "wk", "bk");
        let v = project(tape, "wv", "bv");

        let mut heads = Vec::with_capacity(self.config.heads);
        for i in 0..self.config.heads {
            let lo = i * head_dim;
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
        let wo = binding.node(&format!("{prefix}/attn/wo"));
        let bo = binding.node(&format!("{prefix}/attn/bo"));
        let out = tape.matmul(cat, wo);
        tape.add_row(out, bo)
    }

    fn encoder_layer(
        &self,
        tape: &mut Tape,
        binding: &ParamBinding,
        x: NodeId,
        layer: usize,
    ) -> NodeId {
        let prefix = format!("prompt/backend/layer{layer}");
        let attn = self.self_attention(tape, binding, x, &prefix);
        let res1 = tape.add(x, attn);
        let g1 = binding.node(&format!("{prefix}/ln1/gamma"));
        let b1 = binding.node(&format!("{prefix}/ln1/beta"));
        let norm1 = tape.layer_norm_rows(res1, g1, b1, LN_EPS);

        let w1 = binding.node(&format!("{prefix}/ffn/w1"));
        let fb1 = binding.node(&format!("{prefix}/ffn/b1"));
        let w2 = binding.node(&format!("{prefix}/ffn/w2"));
        let fb2 = binding.node(&format!("{prefix}/ffn/b2"));
        let ff = tape.matmul(norm1, w1);
        let ff = tape.add_row(ff, fb1);
        let ff = tape.relu(ff);
        let ff = tape.matmul(ff, w2);
        let ff = tape.add_row(ff, fb2);

        let res2 = tape.add(norm1, ff);
        let g2 = binding.node(&format!("{prefix}/ln2/gamma"));
        let b2 = binding.node(&format!("{prefix}/ln2/beta"));
        tape.layer_norm_rows(res2, g2, b2, LN_EPS)
    }

    fn sinusoidal(&self, len: usize) -> Array2<f64> {
        let h = self.config.hidden;
        Array2::from_shape_fn((len, h), |(pos, j)| {
            let pair = (j / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / h as f64);
            if j % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
    }
}

impl MaskedLmBackend for ToyBackend {
    fn hidden_size(&self) -> usize {
        self.config.hidden
    }

    fn encode(&self, tape: &mut Tape, binding: &ParamBinding, prompt: &AssembledPrompt) -> NodeId {
        assert!(!prompt.is_empty(), "encode: empty prompt");
        let embed = binding.node("prompt/backend/embed");
        let head = binding.node("prompt/head");
        let tail = binding.node("prompt/tail");

        // Consecutive token slots become one gather; head/tail rows are the
        // parameter leaves themselves.
        let mut segments: Vec<NodeId> = Vec::new();
        let mut run: Vec<usize> = Vec::new();
        for slot in &prompt.slots {
            match slot {
                Slot::Token(id) => run.push(*id),
                special => {
                    if !run.is_empty() {
                        segments.push(tape.gather_rows(embed, std::mem::take(&mut run)));
                    }
                    segments.push(match special {
                        Slot::Head => head,
                        Slot::Tail => tail,
                        Slot::Token(_) => unreachable!(),
                    });
                }
            }
        }
        if !run.is_empty() {
            segments.push(tape.gather_rows(embed, run));
        }
        let mut x = if segments.len() == 1 {
            segments[0]
        } else {
            tape.concat_rows(&segments)
        };
        assert_eq!(
            tape.value(x).nrows(),
            prompt.len(),
            "encode: output length must equal input length"
        );

        if self.config.positional {
            let pos = self.sinusoidal(prompt.len());
            x = tape.add_const(x, pos);
        }
        for layer in 0..self.config.layers {
            x = self.encoder_layer(tape, binding, x, layer);
        }
        x
    }
}

/// Hidden state at the mask position of every prompt, stacked into a
/// `batch x hidden` matrix.
pub fn mask_repr<B: MaskedLmBackend>(
    tape: &mut Tape,
    binding: &ParamBinding,
    backend: &B,
    batch: &PromptBatch,
) -> NodeId {
    assert!(!batch.prompts.is_empty(), "mask_repr: empty batch");
    let mut rows = Vec::with_capacity(batch.prompts.len());
    for prompt in &batch.prompts {
        let hidden = backend.encode(tape, binding, prompt);
        assert_eq!(
            tape.value(hidden).nrows(),
            prompt.len(),
            "mask_repr: backend length mismatch"
        );
        rows.push(tape.gather_rows(hidden, vec![prompt.mask_pos]));
    }
    if rows.len() == 1 {
        rows[0]
    } else {
        tape.concat_rows(&rows)
    }
}

/// Label-word classification head: two class embeddings of the backend's
/// hidden size, stored under `prompt/verbalizer` (row 0 fake, row 1 real).
#[derive(Debug, Clone, Copy)]
pub struct Verbalizer {
    hidden: usize,
}

impl Verbalizer {
    pub const CLASSES: usize = 2;

    pub fn new(hidden: usize) -> Self {
        Self { hidden }
    }

    /// Registers the class embeddings. When the vocabulary knows the words
    /// "fake" and "real", the rows start from those token embeddings
    /// (which must already be registered); otherwise they start random.
    pub fn register_params(
        &self,
        store: &mut ParamStore,
        vocab: &Vocab,
        rng: &mut ChaCha8Rng,
    ) {
        let mut theta = normal_matrix(rng, Self::CLASSES, self.hidden, 0.02);
        if vocab.contains("fake") && vocab.contains("real") {
            let embed = store.get("prompt/backend/embed").clone();
            theta.row_mut(0).assign(&embed.row(vocab.id("fake")));
            theta.row_mut(1).assign(&embed.row(vocab.id("real")));
        }
        store.insert("prompt/verbalizer", theta);
    }
}

/// Class logits: dot products of each feature row with the label-word
/// embeddings.
pub fn class_logits(tape: &mut Tape, features: NodeId, binding: &ParamBinding) -> NodeId {
    let theta = binding.node("prompt/verbalizer");
    let theta_t = tape.transpose(theta);
    tape.matmul(features, theta_t)
}

/// Class probabilities: softmax over the verbalizer logits. Each row sums
/// to one.
pub fn classify(tape: &mut Tape, features: NodeId, binding: &ParamBinding) -> NodeId {
    let logits = class_logits(tape, features, binding);
    tape.softmax_rows(logits)
}

/// The fully connected layer applied to the combined feature vector before
/// classification. Square, so the hidden size is preserved.
pub fn prompt_fc(tape: &mut Tape, x: NodeId, binding: &ParamBinding) -> NodeId {
    let w = binding.node("prompt/fc/weight");
    let b = binding.node("prompt/fc/bias");
    let out = tape.matmul(x, w);
    tape.add_row(out, b)
}

/// Mean negative log-likelihood of the true classes given raw logits.
pub fn loss(tape: &mut Tape, logits: NodeId, labels: &[usize]) -> NodeId {
    tape.cross_entropy_mean(logits, labels)
}

/// Registers head/tail embeddings, the backend, the FC layer and the
/// verbalizer under `prompt/...` keys.
pub fn register_prompt_params(
    store: &mut ParamStore,
    backend: &ToyBackend,
    vocab: &Vocab,
    rng: &mut ChaCha8Rng,
) {
    let h = backend.hidden_size();
    store.insert("prompt/head", normal_matrix(rng, 1, h, 0.02));
    store.insert("prompt/tail", normal_matrix(rng, 1, h, 0.02));
    backend.register_params(store, rng);
    let bound = (1.0 / h as f64).sqrt();
    store.insert("prompt/fc/weight", uniform_matrix(rng, h, h, bound));
    store.insert("prompt/fc/bias", Array2::zeros((1, h)));
    Verbalizer::new(h).register_params(store, vocab, rng);
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Array2::from_shape_vec((rows, cols), data).expect("shape matches data")
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("valid normal");
    let data: Vec<f64> = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Array2::from_shape_vec((rows, cols), data).expect("shape matches data")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    fn tiny_vocab() -> Vocab {
        Vocab::build(["breaking story about the market", "fake claims spread fast"])
    }

    fn tiny_backend(layers: usize, positional: bool, vocab: &Vocab) -> ToyBackend {
        let config = ToyBackendConfig {
            hidden: 8,
            layers,
            heads: 2,
            ff_hidden: 12,
            positional,
        };
        ToyBackend::new(config, vocab.len()).unwrap()
    }

    fn bound_store(backend: &ToyBackend, vocab: &Vocab, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        register_prompt_params(&mut store, backend, vocab, &mut rng);
        store
    }

    #[test]
    fn vocab_has_stable_ordering_and_unk_fallback() {
        let vocab = tiny_vocab();
        assert_eq!(vocab.word(0), UNK_TOKEN);
        assert_eq!(vocab.word(1), MASK_TOKEN);
        assert_eq!(vocab.word(2), "this");
        assert_eq!(vocab.word(7), "news");
        assert_eq!(vocab.id("never-seen"), 0);
        assert!(vocab.contains("market"));
        // Corpus words are sorted after the specials and template words.
        let corpus: Vec<&str> = (SKELETON_LEN - 1..vocab.len()).map(|i| vocab.word(i)).collect();
        let mut sorted = corpus.clone();
        sorted.sort();
        assert_eq!(corpus, sorted);
    }

    #[test]
    fn vocab_save_load_round_trip() {
        let vocab = tiny_vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        vocab.save(&path).unwrap();
        let loaded = Vocab::load(&path).unwrap();
        assert_eq!(loaded.len(), vocab.len());
        for i in 0..vocab.len() {
            assert_eq!(loaded.word(i), vocab.word(i));
        }
    }

    #[test]
    fn empty_article_assembles_the_bare_skeleton() {
        let vocab = tiny_vocab();
        let template = PromptTemplate::default();
        let prompt = template.assemble("", &vocab);
        assert_eq!(prompt.len(), SKELETON_LEN);
        assert_eq!(prompt.mask_pos, 6);
        assert_eq!(prompt.slots[0], Slot::Head);
        assert_eq!(prompt.slots[SKELETON_LEN - 1], Slot::Tail);
        assert_eq!(prompt.slots[6], Slot::Token(vocab.mask_id()));
    }

    #[test]
    fn every_prompt_has_exactly_one_mask() {
        let vocab = tiny_vocab();
        let template = PromptTemplate::default();
        for text in ["", "breaking story", "mask mask mask", "x ".repeat(500).as_str()] {
            let prompt = template.assemble(text, &vocab);
            let masks = prompt
                .slots
                .iter()
                .filter(|s| **s == Slot::Token(vocab.mask_id()))
                .count();
            assert_eq!(masks, 1, "text: {text:?}");
        }
    }

    #[test]
    fn long_articles_truncate_with_skeleton_intact() {
        let vocab = tiny_vocab();
        let template = PromptTemplate::new(16);
        let long_text = "word ".repeat(100);
        let prompt = template.assemble(&long_text, &vocab);
        assert_eq!(prompt.len(), 16);
        assert_eq!(prompt.slots[0], Slot::Head);
        assert_eq!(prompt.slots[8], Slot::Tail);
        assert_eq!(prompt.mask_pos, 6);
    }

    #[test]
    fn identity_backend_returns_the_mask_embedding() {
        let vocab = tiny_vocab();
        let backend = tiny_backend(0, false, &vocab);
        let store = bound_store(&backend, &vocab, 3);
        let template = PromptTemplate::default();
        let batch = template.assemble_batch(&["breaking story"], &vocab);

        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let v = mask_repr(&mut tape, &binding, &backend, &batch);
        let expected = store.get("prompt/backend/embed").row(vocab.mask_id()).to_owned();
        assert_eq!(tape.value(v).row(0).to_owned(), expected);
    }

    #[test]
    fn identical_prompts_give_identical_rows() {
        let vocab = tiny_vocab();
        let backend = tiny_backend(2, true, &vocab);
        let store = bound_store(&backend, &vocab, 4);
        let template = PromptTemplate::default();
        let batch = template.assemble_batch(&["claims spread fast", "claims spread fast"], &vocab);

        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let v = mask_repr(&mut tape, &binding, &backend, &batch);
        assert_eq!(tape.value(v).row(0), tape.value(v).row(1));
    }

    #[test]
    fn changing_a_non_mask_token_changes_the_mask_state() {
        let vocab = tiny_vocab();
        let backend = tiny_backend(2, true, &vocab);
        let store = bound_store(&backend, &vocab, 5);
        let template = PromptTemplate::default();
        let batch = template.assemble_batch(&["claims spread fast", "claims spread story"], &vocab);

        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let v = mask_repr(&mut tape, &binding, &backend, &batch);
        let diff: f64 = tape
            .value(v)
            .row(0)
            .iter()
            .zip(tape.value(v).row(1))
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-9, "attention should mix article positions into the mask");
    }

    #[test]
    fn classify_equal_embeddings_is_uniform() {
        let vocab = tiny_vocab();
        let backend = tiny_backend(0, false, &vocab);
        let mut store = bound_store(&backend, &vocab, 6);
        let h = backend.hidden_size();
        *store.get_mut("prompt/verbalizer") = Array2::from_elem((2, h), 0.3);

        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let features = tape.leaf(Array2::from_shape_fn((3, h), |(i, j)| (i + j) as f64 * 0.1));
        let probs = classify(&mut tape, features, &binding);
        for row in tape.value(probs).rows() {
            assert!((row[0] - 0.5).abs() < 1e-12);
            assert!((row[1] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn classify_unit_logit_gap_matches_two_class_softmax() {
        let vocab = tiny_vocab();
        let backend = tiny_backend(0, false, &vocab);
        let mut store = bound_store(&backend, &vocab, 7);
        let h = backend.hidden_size();
        // theta_fake . x = 1, theta_real . x = 0 for x = e_0.
        let mut theta = Array2::zeros((2, h));
        theta[[0, 0]] = 1.0;
        *store.get_mut("prompt/verbalizer") = theta;

        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let mut x = Array2::zeros((1, h));
        x[[0, 0]] = 1.0;
        let features = tape.leaf(x);
        let probs = classify(&mut tape, features, &binding);
        let e = std::f64::consts::E;
        assert!((tape.value(probs)[[0, 0]] - e / (e + 1.0)).abs() < 1e-12);
        assert!((tape.value(probs)[[0, 1]] - 1.0 / (e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn classify_rows_sum_to_one_and_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let logits_data = uniform_matrix(&mut rng, 5, 2, 3.0);
        let mut tape = Tape::new();
        let logits = tape.leaf(logits_data.clone());
        let probs = tape.softmax_rows(logits);
        let shifted = tape.add_const(logits, Array2::from_elem((5, 2), 17.5));
        let probs_shifted = tape.softmax_rows(shifted);
        for (row, row_shifted) in tape
            .value(probs)
            .rows()
            .into_iter()
            .zip(tape.value(probs_shifted).rows())
        {
            assert!((row.sum() - 1.0).abs() < 1e-9);
            for (a, b) in row.iter().zip(row_shifted.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn argmax_invariant_under_common_feature_rescale() {
        let vocab = tiny_vocab();
        let backend = tiny_backend(0, false, &vocab);
        let store = bound_store(&backend, &vocab, 9);
        let h = backend.hidden_size();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let features_data = uniform_matrix(&mut rng, 6, h, 1.0);

        let argmaxes = |scale: f64| -> Vec<usize> {
            let mut tape = Tape::new();
            let binding = store.bind(&mut tape);
            let features = tape.leaf(&features_data * scale);
            let probs = classify(&mut tape, features, &binding);
            tape.value(probs)
                .rows()
                .into_iter()
                .map(|row| if row[0] >= row[1] { 0 } else { 1 })
                .collect()
        };
        assert_eq!(argmaxes(1.0), argmaxes(3.0));
        assert_eq!(argmaxes(1.0), argmaxes(0.25));

        // Rescaling only one class embedding can flip predictions: with
        // theta_fake = [1, ...0], theta_real = [2, ...0] and x = e_0, the
        // argmax is real; scaling theta_real by 0.1 flips it to fake.
        let mut store2 = bound_store(&backend, &vocab, 11);
        let mut theta = Array2::zeros((2, h));
        theta[[0, 0]] = 1.0;
        theta[[1, 0]] = 2.0;
        *store2.get_mut("prompt/verbalizer") = theta.clone();
        let argmax_of = |store: &ParamStore| {
            let mut tape = Tape::new();
            let binding = store.bind(&mut tape);
            let mut x = Array2::zeros((1, h));
            x[[0, 0]] = 1.0;
            let features = tape.leaf(x);
            let probs = classify(&mut tape, features, &binding);
            if tape.value(probs)[[0, 0]] >= tape.value(probs)[[0, 1]] {
                0
            } else {
                1
            }
        };
        assert_eq!(argmax_of(&store2), 1);
        theta.row_mut(1).mapv_inplace(|v| v * 0.1);
        *store2.get_mut("prompt/verbalizer") = theta;
        assert_eq!(argmax_of(&store2), 0);
    }

    #[test]
    fn loss_known_values() {
        let mut tape = Tape::new();
        // Row 0: overwhelming correct logit -> contributes exactly 0.
        // Row 1: equal logits -> contributes ln 2.
        let logits = tape.leaf(array![[1000.0, 0.0], [3.0, 3.0]]);
        let l = loss(&mut tape, logits, &[0, 1]);
        assert!((tape.value(l)[[0, 0]] - std::f64::consts::LN_2 / 2.0).abs() < 1e-12);

        let mut tape = Tape::new();
        let logits = tape.leaf(array![[0.0, 0.0], [0.0, 0.0]]);
        let l = loss(&mut tape, logits, &[0, 1]);
        assert!((tape.value(l)[[0, 0]] - std::f64::consts::LN_2).abs() < 1e-15);

        let mut tape = Tape::new();
        let logits = tape.leaf(array![[1000.0, 0.0]]);
        let l = loss(&mut tape, logits, &[0]);
        assert_eq!(tape.value(l)[[0, 0]], 0.0);
    }

    #[test]
    fn head_and_tail_receive_nonzero_gradients() {
        let vocab = tiny_vocab();
        let backend = tiny_backend(2, true, &vocab);
        let store = bound_store(&backend, &vocab, 12);
        let template = PromptTemplate::default();
        let batch = template.assemble_batch(&["breaking story", "fake claims"], &vocab);

        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let v = mask_repr(&mut tape, &binding, &backend, &batch);
        let x_f = prompt_fc(&mut tape, v, &binding);
        let logits = class_logits(&mut tape, x_f, &binding);
        let l = loss(&mut tape, logits, &[0, 1]);
        let grads = tape.backward(l);
        for name in ["prompt/head", "prompt/tail"] {
            let g = grads.wrt(binding.node(name)).expect("gradient exists");
            assert!(g.iter().any(|&v| v != 0.0), "{name} gradient is all zero");
        }
    }

    #[test]
    fn prompt_parameter_gradients_match_finite_differences() {
        let vocab = tiny_vocab();
        let backend = tiny_backend(2, true, &vocab);
        let store = bound_store(&backend, &vocab, 13);
        let template = PromptTemplate::default();
        let batch = template.assemble_batch(&["breaking story about market", "fake claims"], &vocab);
        let labels = [1usize, 0usize];

        let eval = |store: &ParamStore| -> (f64, Vec<Array2<f64>>) {
            let mut tape = Tape::new();
            let binding = store.bind(&mut tape);
            let v = mask_repr(&mut tape, &binding, &backend, &batch);
            let x_f = prompt_fc(&mut tape, v, &binding);
            let logits = class_logits(&mut tape, x_f, &binding);
            let l = loss(&mut tape, logits, &labels);
            let value = tape.value(l)[[0, 0]];
            let grads = tape.backward(l);
            (value, binding.collect(&grads, store))
        };
        let (_, grads) = eval(&store);

        let mut dir_rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..5 {
            let direction: Vec<Array2<f64>> = store
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
                let mut perturbed = store.clone();
                for (value, d) in perturbed.values_mut().iter_mut().zip(&direction) {
                    *value += &(d * t);
                }
                eval(&perturbed).0
            };
            let fd = (eval_at(step) - eval_at(-step)) / (2.0 * step);
            let rel = (analytic - fd).abs() / fd.abs().max(analytic.abs()).max(1e-12);
            assert!(rel <= 1e-4, "relative error {rel}: {analytic} vs {fd}");
        }
    }

    #[test]
    fn verbalizer_initializes_from_label_word_embeddings() {
        let vocab = Vocab::build(["the fake story", "the real story"]);
        let backend = tiny_backend(0, false, &vocab);
        let store = bound_store(&backend, &vocab, 14);
        let theta = store.get("prompt/verbalizer");
        let embed = store.get("prompt/backend/embed");
        assert_eq!(theta.row(0), embed.row(vocab.id("fake")));
        assert_eq!(theta.row(1), embed.row(vocab.id("real")));
    }
}
