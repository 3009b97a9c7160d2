//! Lexicon-based sentiment analysis and emotion-weighted embeddings.
//!
//! A [`SentimentLexicon`] maps words to a polarity in `[-1, 1]` and a
//! subjectivity in `[0, 1]`, and assigns each word to at most one of the
//! `positive` / `negative` categories. From a text this module derives:
//!
//! * `polarity` / `subjectivity`: means over matched words ([`analyze`]),
//! * category match fractions ([`category_scores`]),
//! * a normalized polarity and a composite emotion value
//!   ([`normalize_polarity`], [`composite_emotion`]),
//! * an emotion-weighted text embedding, scaling each row of a feature
//!   matrix by its article's min-max-normalized emotion ([`emotion_weight`]).
//!
//! Normalization statistics are fit on a reference batch (the training split
//! in the full pipeline) and frozen in a [`MinMaxScaler`]; out-of-range
//! values at evaluation time are clamped.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{AmpleError, Result};
use crate::text::tokenize;

/// Tab-separated lexicon shipped with the crate.
const DEFAULT_LEXICON: &str = include_str!("../assets/default_lexicon.tsv");

/// Sentiment category of a lexicon word.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Positive,
    Negative,
    None,
}

/// Word-level sentiment dictionary with polarity/subjectivity entries and
/// disjoint positive/negative category sets.
#[derive(Debug, Clone, Default)]
pub struct SentimentLexicon {
    entries: HashMap<String, (f64, f64)>,
    positive: HashSet<String>,
    negative: HashSet<String>,
}

impl SentimentLexicon {
    /// The lexicon bundled with the crate.
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }

    /// Loads a lexicon from a tab-separated file. Each non-comment line is
    /// `word<TAB>polarity<TAB>subjectivity<TAB>category` with `category` in
    /// `{positive, negative, none}`. Lines starting with `#` are comments.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(contents: &str) -> Result<Self> {
        let mut lexicon = SentimentLexicon::default();
        for (lineno, raw) in contents.lines().enumerate() {
            let line = raw.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(AmpleError::MalformedLexicon {
                    line: lineno + 1,
                    reason: format!("expected 4 tab-separated fields, found {}", fields.len()),
                });
            }
            let polarity: f64 = fields[1].parse().map_err(|_| AmpleError::MalformedLexicon {
                line: lineno + 1,
                reason: format!("polarity '{}' is not a number", fields[1]),
            })?;
            let subjectivity: f64 =
                fields[2].parse().map_err(|_| AmpleError::MalformedLexicon {
                    line: lineno + 1,
                    reason: format!("subjectivity '{}' is not a number", fields[2]),
                })?;
            let category = match fields[3] {
                "positive" => Category::Positive,
                "negative" => Category::Negative,
                "none" => Category::None,
                other => {
                    return Err(AmpleError::MalformedLexicon {
                        line: lineno + 1,
                        reason: format!("unknown category '{other}'"),
                    })
                }
            };
            lexicon
                .add(fields[0].to_owned(), polarity, subjectivity, category)
                .map_err(|reason| AmpleError::MalformedLexicon {
                    line: lineno + 1,
                    reason,
                })?;
        }
        Ok(lexicon)
    }

    /// Builds a lexicon from in-memory entries; used by tests and callers
    /// that synthesize dictionaries.
    pub fn from_entries(rows: &[(&str, f64, f64, Category)]) -> Result<Self> {
        let mut lexicon = SentimentLexicon::default();
        for &(word, polarity, subjectivity, category) in rows {
            lexicon
                .add(word.to_owned(), polarity, subjectivity, category)
                .map_err(AmpleError::InvalidConfig)?;
        }
        Ok(lexicon)
    }

    fn add(
        &mut self,
        word: String,
        polarity: f64,
        subjectivity: f64,
        category: Category,
    ) -> std::result::Result<(), String> {
        if !(-1.0..=1.0).contains(&polarity) {
            return Err(format!("polarity {polarity} outside [-1, 1]"));
        }
        if !(0.0..=1.0).contains(&subjectivity) {
            return Err(format!("subjectivity {subjectivity} outside [0, 1]"));
        }
        if self.entries.contains_key(&word) {
            return Err(format!("duplicate word '{word}'"));
        }
        match category {
            Category::Positive => {
                self.positive.insert(word.clone());
            }
            Category::Negative => {
                self.negative.insert(word.clone());
            }
            Category::None => {}
        }
        self.entries.insert(word, (polarity, subjectivity));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, word: &str) -> Option<(f64, f64)> {
        self.entries.get(word).copied()
    }

    pub fn is_positive(&self, word: &str) -> bool {
        self.positive.contains(word)
    }

    pub fn is_negative(&self, word: &str) -> bool {
        self.negative.contains(word)
    }

    #[cfg(test)]
    fn category_sets(&self) -> (&HashSet<String>, &HashSet<String>) {
        (&self.positive, &self.negative)
    }

    #[cfg(test)]
    fn all_entries(&self) -> impl Iterator<Item = (&str, f64, f64)> {
        self.entries.iter().map(|(w, &(p, s))| (w.as_str(), p, s))
    }
}

/// Per-article emotion measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmotionScores {
    /// Mean matched-word polarity in `[-1, 1]`.
    pub polarity: f64,
    /// Mean matched-word subjectivity in `[0, 1]`.
    pub subjectivity: f64,
    /// Min-max-normalized polarity in `[0, 1]`.
    pub normalized_polarity: f64,
    /// Composite emotion value, strictly positive after zero adjustment.
    pub emotion: f64,
    /// Fraction of tokens in either category (`positive + negative`).
    pub overall: f64,
    /// Fraction of tokens in the positive category.
    pub positive: f64,
    /// Fraction of tokens in the negative category.
    pub negative: f64,
}

/// Mean polarity and subjectivity of the words of `text` found in the
/// lexicon. Texts with no matched words score `(0, 0)`.
pub fn analyze(text: &str, lexicon: &SentimentLexicon) -> (f64, f64) {
    let mut polarity_sum = 0.0;
    let mut subjectivity_sum = 0.0;
    let mut matched = 0usize;
    for token in tokenize(text) {
        if let Some((p, s)) = lexicon.lookup(&token) {
            polarity_sum += p;
            subjectivity_sum += s;
            matched += 1;
        }
    }
    if matched == 0 {
        (0.0, 0.0)
    } else {
        (polarity_sum / matched as f64, subjectivity_sum / matched as f64)
    }
}

/// Fractions of tokens matching the positive and negative category sets,
/// plus their sum, as `(overall, positive, negative)`. Empty or
/// unmatchable text scores all zeros.
pub fn category_scores(text: &str, lexicon: &SentimentLexicon) -> (f64, f64, f64) {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let total = tokens.len() as f64;
    let mut pos = 0usize;
    let mut neg = 0usize;
    for token in &tokens {
        if lexicon.is_positive(token) {
            pos += 1;
        } else if lexicon.is_negative(token) {
            neg += 1;
        }
    }
    let positive = pos as f64 / total;
    let negative = neg as f64 / total;
    (positive + negative, positive, negative)
}

/// Frozen min-max normalization statistics. Fitted once (on the training
/// split in the pipeline) and applied with clamping thereafter, so values
/// outside the fitted range map to the nearest endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MinMaxScaler {
    min: f64,
    max: f64,
    unit: bool,
}

impl MinMaxScaler {
    /// Fits on a non-empty batch.
    pub fn fit(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "MinMaxScaler::fit: empty batch");
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self {
            min,
            max,
            unit: false,
        }
    }

    pub fn from_bounds(min: f64, max: f64) -> Self {
        Self {
            min,
            max,
            unit: false,
        }
    }

    /// A scaler that maps every input to 1; used by the emotion-element
    /// ablation, which replaces emotion weighting with the identity.
    pub fn identity() -> Self {
        Self {
            min: 0.0,
            max: 0.0,
            unit: true,
        }
    }

    /// `(x - min) / (max - min)`, clamped to `[0, 1]`. A degenerate range
    /// (`max == min`) maps everything to 0.5, the symmetric midpoint.
    pub fn scale(&self, x: f64) -> f64 {
        if self.unit {
            return 1.0;
        }
        if self.max == self.min {
            return 0.5;
        }
        ((x - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }
}

/// Min-max normalization of a polarity batch. The batch minimum maps to 0
/// and the maximum to 1 exactly; a constant batch maps to all 0.5.
///
/// Panics on an empty batch (contract violation).
pub fn normalize_polarity(batch: &[f64]) -> Vec<f64> {
    assert!(!batch.is_empty(), "normalize_polarity: empty batch");
    let scaler = MinMaxScaler::fit(batch);
    batch.iter().map(|&p| scaler.scale(p)).collect()
}

/// Which emotion element drives the embedding weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub enum EmotionVariant {
    /// Normalized polarity only.
    #[serde(rename = "p")]
    Polarity,
    /// Subjectivity only.
    #[serde(rename = "s")]
    Subjectivity,
    /// Sum of normalized polarity and subjectivity.
    #[serde(rename = "p+s")]
    Combined,
}

impl EmotionVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "p" => Ok(Self::Polarity),
            "s" => Ok(Self::Subjectivity),
            "p+s" => Ok(Self::Combined),
            other => Err(AmpleError::InvalidConfig(format!(
                "unknown emotion variant '{other}' (expected p, s or p+s)"
            ))),
        }
    }
}

impl fmt::Display for EmotionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Polarity => "p",
            Self::Subjectivity => "s",
            Self::Combined => "p+s",
        };
        f.write_str(s)
    }
}

/// Composite emotion element from normalized polarity and subjectivity.
/// An exact zero is adjusted to `1e-2`, so the result is always positive.
pub fn composite_emotion(
    normalized_polarity: f64,
    subjectivity: f64,
    variant: EmotionVariant,
) -> f64 {
    debug_assert!((0.0..=1.0).contains(&normalized_polarity));
    debug_assert!((0.0..=1.0).contains(&subjectivity));
    let e = match variant {
        EmotionVariant::Polarity => normalized_polarity,
        EmotionVariant::Subjectivity => subjectivity,
        EmotionVariant::Combined => normalized_polarity + subjectivity,
    };
    if e == 0.0 {
        1e-2
    } else {
        e
    }
}

/// Scales row `i` of `text_features` by the min-max-normalized emotion of
/// article `i`, with statistics fit on `emotions` itself. A constant batch
/// scales every row by 0.5.
pub fn emotion_weight(emotions: &[f64], text_features: &Array2<f64>) -> Array2<f64> {
    let scaler = MinMaxScaler::fit(emotions);
    emotion_weight_scaled(&scaler, emotions, text_features)
}

/// [`emotion_weight`] under a previously fitted (frozen) scaler; emotions
/// outside the fitted range clamp to the nearest endpoint scale.
pub fn emotion_weight_scaled(
    scaler: &MinMaxScaler,
    emotions: &[f64],
    text_features: &Array2<f64>,
) -> Array2<f64> {
    assert_eq!(
        emotions.len(),
        text_features.nrows(),
        "emotion_weight: one emotion per feature row"
    );
    let mut out = text_features.clone();
    for (mut row, &e) in out.rows_mut().into_iter().zip(emotions) {
        let s = scaler.scale(e);
        row.mapv_inplace(|v| v * s);
    }
    out
}

/// Externally supplied per-article `(polarity, subjectivity)` pairs that
/// take precedence over [`analyze`]. File format: one `id<TAB>p<TAB>s` per
/// line, `#` comments allowed.
#[derive(Debug, Clone, Default)]
pub struct SentimentOverrides {
    by_id: HashMap<String, (f64, f64)>,
}

impl SentimentOverrides {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(contents: &str) -> Result<Self> {
        let mut by_id = HashMap::new();
        for (lineno, raw) in contents.lines().enumerate() {
            let line = raw.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let err = |reason: String| AmpleError::MalformedLexicon {
                line: lineno + 1,
                reason,
            };
            if fields.len() != 3 {
                return Err(err(format!(
                    "expected 3 tab-separated fields, found {}",
                    fields.len()
                )));
            }
            let p: f64 = fields[1]
                .parse()
                .map_err(|_| err(format!("polarity '{}' is not a number", fields[1])))?;
            let s: f64 = fields[2]
                .parse()
                .map_err(|_| err(format!("subjectivity '{}' is not a number", fields[2])))?;
            if !(-1.0..=1.0).contains(&p) {
                return Err(err(format!("polarity {p} outside [-1, 1]")));
            }
            if !(0.0..=1.0).contains(&s) {
                return Err(err(format!("subjectivity {s} outside [0, 1]")));
            }
            if by_id.insert(fields[0].to_owned(), (p, s)).is_some() {
                return Err(err(format!("duplicate article id '{}'", fields[0])));
            }
        }
        Ok(Self { by_id })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, (f64, f64))>) -> Self {
        Self {
            by_id: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, id: &str) -> Option<(f64, f64)> {
        self.by_id.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

/// Polarity and subjectivity for one article: the override when present,
/// otherwise [`analyze`] on the text.
pub fn article_sentiment(
    id: &str,
    text: &str,
    lexicon: &SentimentLexicon,
    overrides: Option<&SentimentOverrides>,
) -> (f64, f64) {
    if let Some(ov) = overrides.and_then(|o| o.get(id)) {
        return ov;
    }
    analyze(text, lexicon)
}

/// Full emotion scores for a batch of `(id, text)` articles. Normalized
/// polarity uses min-max statistics of this batch; the composite emotion
/// follows `variant`.
pub fn score_corpus(
    articles: &[(String, String)],
    lexicon: &SentimentLexicon,
    overrides: Option<&SentimentOverrides>,
    variant: EmotionVariant,
) -> Vec<EmotionScores> {
    if articles.is_empty() {
        return Vec::new();
    }
    let raw: Vec<(f64, f64)> = articles
        .iter()
        .map(|(id, text)| article_sentiment(id, text, lexicon, overrides))
        .collect();
    let polarity_batch: Vec<f64> = raw.iter().map(|&(p, _)| p).collect();
    let normalized = normalize_polarity(&polarity_batch);
    articles
        .iter()
        .zip(raw.iter().zip(normalized))
        .map(|((_, text), (&(polarity, subjectivity), p_star))| {
            let (overall, positive, negative) = category_scores(text, lexicon);
            EmotionScores {
                polarity,
                subjectivity,
                normalized_polarity: p_star,
                emotion: composite_emotion(p_star, subjectivity, variant),
                overall,
                positive,
                negative,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn mini_lexicon() -> SentimentLexicon {
        SentimentLexicon::from_entries(&[
            ("up", 0.5, 0.4, Category::Positive),
            ("down", -0.5, 0.6, Category::Negative),
            ("flat", 0.0, 0.2, Category::None),
        ])
        .unwrap()
    }

    #[test]
    fn analyze_single_shipped_word_returns_its_entry() {
        let lexicon = SentimentLexicon::builtin();
        assert_eq!(lexicon.lookup("great"), Some((0.8, 0.75)));
        let (p, s) = analyze("Great!", &lexicon);
        assert_eq!((p, s), (0.8, 0.75));
    }

    #[test]
    fn analyze_without_matches_is_zero() {
        let lexicon = SentimentLexicon::builtin();
        assert_eq!(analyze("zxqy vvwk", &lexicon), (0.0, 0.0));
        assert_eq!(analyze("", &lexicon), (0.0, 0.0));
    }

    #[test]
    fn analyze_symmetric_polarities_cancel() {
        let (p, s) = analyze("up and down", &mini_lexicon());
        assert_eq!(p, 0.0);
        assert!((s - 0.5).abs() < 1e-15);
    }

    #[test]
    fn category_scores_count_fractions() {
        let lexicon = mini_lexicon();
        // 10 tokens, 2 positive, 1 negative.
        let text = "up up down a b c d e f g";
        let (overall, positive, negative) = category_scores(text, &lexicon);
        assert_eq!((positive, negative), (0.2, 0.1));
        assert_eq!(overall, positive + negative);
        assert!((overall - 0.3).abs() < 1e-15);

        let (overall, positive, negative) = category_scores("up up up", &lexicon);
        assert_eq!((overall, positive, negative), (1.0, 1.0, 0.0));

        assert_eq!(category_scores("", &lexicon), (0.0, 0.0, 0.0));
    }

    #[test]
    fn normalize_polarity_endpoints_and_degenerate() {
        assert_eq!(normalize_polarity(&[-1.0, 0.0, 1.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_polarity(&[0.3, 0.3]), vec![0.5, 0.5]);
        assert_eq!(normalize_polarity(&[0.2, 0.6]), vec![0.0, 1.0]);
    }

    #[test]
    #[should_panic(expected = "empty batch")]
    fn normalize_polarity_rejects_empty_batch() {
        normalize_polarity(&[]);
    }

    #[test]
    fn composite_emotion_variants_and_zero_adjustment() {
        assert_eq!(composite_emotion(0.0, 0.0, EmotionVariant::Combined), 1e-2);
        assert_eq!(composite_emotion(0.3, 0.2, EmotionVariant::Combined), 0.5);
        assert_eq!(
            composite_emotion(0.7, 0.2, EmotionVariant::Subjectivity),
            0.2
        );
        assert_eq!(composite_emotion(0.7, 0.2, EmotionVariant::Polarity), 0.7);
        assert_eq!(composite_emotion(0.0, 0.4, EmotionVariant::Polarity), 1e-2);
    }

    #[test]
    fn emotion_weight_minmax_endpoints() {
        let features = Array2::from_elem((2, 3), 1.0);
        let weighted = emotion_weight(&[0.5, 1.0], &features);
        assert_eq!(weighted.row(0), array![0.0, 0.0, 0.0]);
        assert_eq!(weighted.row(1), array![1.0, 1.0, 1.0]);
    }

    #[test]
    fn emotion_weight_unit_scale_is_identity() {
        let features = array![[0.1, -2.0], [3.5, 0.0]];
        let scaler = MinMaxScaler::from_bounds(0.0, 1.0);
        let weighted = emotion_weight_scaled(&scaler, &[1.0, 1.0], &features);
        assert_eq!(weighted, features);
        let identity = MinMaxScaler::identity();
        let weighted = emotion_weight_scaled(&identity, &[0.123, -4.0], &features);
        assert_eq!(weighted, features);
    }

    #[test]
    fn emotion_weight_clamps_outside_frozen_range() {
        let scaler = MinMaxScaler::from_bounds(0.4, 0.8);
        let features = Array2::from_elem((1, 2), 5.0);
        let weighted = emotion_weight_scaled(&scaler, &[0.1], &features);
        assert_eq!(weighted, Array2::<f64>::zeros((1, 2)));
        let weighted = emotion_weight_scaled(&scaler, &[0.9], &features);
        assert_eq!(weighted, features);
    }

    #[test]
    fn degenerate_scaler_maps_to_midpoint() {
        let scaler = MinMaxScaler::fit(&[0.7]);
        assert_eq!(scaler.scale(0.7), 0.5);
        assert_eq!(scaler.scale(123.0), 0.5);
    }

    #[test]
    fn lexicon_parse_rejects_malformed_lines() {
        assert!(matches!(
            SentimentLexicon::parse("word\t2.0\t0.5\tpositive"),
            Err(AmpleError::MalformedLexicon { line: 1, .. })
        ));
        assert!(matches!(
            SentimentLexicon::parse("word\t0.5\t0.5\tupbeat"),
            Err(AmpleError::MalformedLexicon { line: 1, .. })
        ));
        assert!(matches!(
            SentimentLexicon::parse("word\t0.5\t0.5"),
            Err(AmpleError::MalformedLexicon { line: 1, .. })
        ));
        let dup = "word\t0.5\t0.5\tpositive\nword\t0.1\t0.1\tnegative";
        assert!(matches!(
            SentimentLexicon::parse(dup),
            Err(AmpleError::MalformedLexicon { line: 2, .. })
        ));
        // Comments and blank lines are fine.
        let ok = SentimentLexicon::parse("# header\n\nword\t0.5\t0.5\tnone\n").unwrap();
        assert_eq!(ok.len(), 1);
    }

    #[test]
    fn builtin_lexicon_satisfies_invariants() {
        let lexicon = SentimentLexicon::builtin();
        assert!(lexicon.len() > 100);
        for (word, p, s) in lexicon.all_entries() {
            assert!((-1.0..=1.0).contains(&p), "{word} polarity {p}");
            assert!((0.0..=1.0).contains(&s), "{word} subjectivity {s}");
        }
        let (positive, negative) = lexicon.category_sets();
        assert!(positive.is_disjoint(negative));
    }

    #[test]
    fn overrides_take_precedence() {
        let lexicon = SentimentLexicon::builtin();
        let overrides = SentimentOverrides::parse("# llm output\na1\t-0.25\t0.5\n").unwrap();
        assert_eq!(
            article_sentiment("a1", "great", &lexicon, Some(&overrides)),
            (-0.25, 0.5)
        );
        assert_eq!(
            article_sentiment("a2", "great", &lexicon, Some(&overrides)),
            (0.8, 0.75)
        );
    }

    #[test]
    fn overrides_parse_validates() {
        assert!(SentimentOverrides::parse("a\t1.5\t0.5").is_err());
        assert!(SentimentOverrides::parse("a\t0.5").is_err());
        assert!(SentimentOverrides::parse("a\t0.5\t0.5\na\t0.1\t0.1").is_err());
    }

    #[test]
    fn score_corpus_fills_all_fields() {
        let lexicon = SentimentLexicon::builtin();
        let articles = vec![
            ("a".to_owned(), "great great news".to_owned()),
            ("b".to_owned(), "terrible awful hoax".to_owned()),
        ];
        let scores = score_corpus(&articles, &lexicon, None, EmotionVariant::Combined);
        assert_eq!(scores.len(), 2);
        assert_eq!(scores[0].normalized_polarity, 1.0);
        assert_eq!(scores[1].normalized_polarity, 0.0);
        for s in &scores {
            assert!(s.emotion > 0.0);
            assert_eq!(s.overall, s.positive + s.negative);
        }
    }

    proptest! {
        #[test]
        fn analyze_stays_in_range(words in proptest::collection::vec("[a-z]{1,8}", 0..40)) {
            let lexicon = SentimentLexicon::builtin();
            let text = words.join(" ");
            let (p, s) = analyze(&text, &lexicon);
            prop_assert!((-1.0..=1.0).contains(&p));
            prop_assert!((0.0..=1.0).contains(&s));
            let (overall, positive, negative) = category_scores(&text, &lexicon);
            prop_assert!((0.0..=1.0).contains(&positive));
            prop_assert!((0.0..=1.0).contains(&negative));
            prop_assert_eq!(overall, positive + negative);
        }

        #[test]
        fn normalize_polarity_is_affine_invariant(
            batch in proptest::collection::vec(-1.0f64..1.0, 2..20),
            a in 0.01f64..10.0,
            b in -5.0f64..5.0,
        ) {
            let base = normalize_polarity(&batch);
            let shifted: Vec<f64> = batch.iter().map(|&p| a * p + b).collect();
            let rescaled = normalize_polarity(&shifted);
            for (x, y) in base.iter().zip(&rescaled) {
                prop_assert!((x - y).abs() < 1e-9, "{} vs {}", x, y);
            }
        }

        #[test]
        fn composite_emotion_is_never_zero(
            p_star in 0.0f64..=1.0,
            s in 0.0f64..=1.0,
        ) {
            for variant in [EmotionVariant::Polarity, EmotionVariant::Subjectivity, EmotionVariant::Combined] {
                prop_assert!(composite_emotion(p_star, s, variant) > 0.0);
            }
        }
    }
}
