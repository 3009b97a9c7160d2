//! Deterministic synthetic corpora for smoke tests and examples.
//!
//! Articles get class-conditioned Gaussian feature vectors (the class means
//! sit `separation` standard deviations apart in every dimension) and texts
//! drawn from class-indicative word pools whose sentiment correlates with
//! the label: fabricated articles use negative, subjective vocabulary and
//! genuine ones positive, verifiable vocabulary.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::store::{ArticleRecord, EmbeddingRecord, EmbeddingStore, Label};

/// Word pool for fabricated articles; overlaps with the negative entries
/// of the bundled lexicon so sentiment correlates with the label.
const FAKE_WORDS: [&str; 14] = [
    "fake",
    "hoax",
    "fraud",
    "bogus",
    "fabricated",
    "scandal",
    "debunked",
    "lie",
    "terrible",
    "awful",
    "outrage",
    "shocking",
    "panic",
    "disaster",
];

/// Word pool for genuine articles; overlaps with positive lexicon entries.
const REAL_WORDS: [&str; 14] = [
    "real",
    "verified",
    "official",
    "confirmed",
    "accurate",
    "genuine",
    "thorough",
    "balanced",
    "good",
    "great",
    "reliable",
    "credible",
    "honest",
    "fair",
];

/// Neutral filler shared by both classes.
const FILLER_WORDS: [&str; 10] = [
    "the", "news", "story", "today", "people", "city", "market", "health", "study", "team",
];

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    /// Total number of articles; labels alternate so classes stay balanced.
    pub articles: usize,
    /// Feature dimension of the generated vectors.
    pub dim: usize,
    /// Gap between the class means, per dimension, in units of the noise
    /// standard deviation.
    pub separation: f64,
    /// Class-indicative words per article text.
    pub class_words: usize,
    /// Filler words per article text.
    pub filler_words: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            articles: 200,
            dim: 8,
            separation: 3.0,
            class_words: 6,
            filler_words: 4,
            seed: 0,
        }
    }
}

/// Generates a paired manifest and embedding store. Deterministic for a
/// fixed configuration.
pub fn generate_corpus(config: &SyntheticConfig) -> (Vec<ArticleRecord>, EmbeddingStore) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let half = config.separation / 2.0;

    let mut articles = Vec::with_capacity(config.articles);
    let mut records = Vec::with_capacity(config.articles);
    for i in 0..config.articles {
        let label = if i % 2 == 0 { Label::Fake } else { Label::Real };
        let (pool, mean) = match label {
            Label::Fake => (&FAKE_WORDS[..], half),
            Label::Real => (&REAL_WORDS[..], -half),
        };

        let mut words: Vec<&str> = Vec::with_capacity(config.class_words + config.filler_words);
        for _ in 0..config.class_words {
            words.push(*pool.choose(&mut rng).expect("non-empty pool"));
        }
        for _ in 0..config.filler_words {
            words.push(*FILLER_WORDS.choose(&mut rng).expect("non-empty filler"));
        }
        words.shuffle(&mut rng);
        let text = words.join(" ");

        let gaussian_vec = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..config.dim).map(|_| mean + noise.sample(rng)).collect()
        };
        let text_vec = gaussian_vec(&mut rng);
        let image_vec = gaussian_vec(&mut rng);

        let id = format!("syn{i:04}");
        articles.push(ArticleRecord {
            id: id.clone(),
            text,
            images: vec![format!("synthetic://{id}/0")],
            label,
        });
        records.push(EmbeddingRecord {
            id,
            text_vec,
            image_vec,
            label,
        });
    }
    let store = EmbeddingStore::new(config.dim, records).expect("uniform dimensions");
    (articles, store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_balanced() {
        let config = SyntheticConfig {
            articles: 40,
            ..SyntheticConfig::default()
        };
        let (articles_a, store_a) = generate_corpus(&config);
        let (articles_b, store_b) = generate_corpus(&config);
        assert_eq!(store_a.to_jsonl(), store_b.to_jsonl());
        assert_eq!(articles_a.len(), 40);
        assert_eq!(articles_a[0].text, articles_b[0].text);
        let fake = articles_a.iter().filter(|a| a.label == Label::Fake).count();
        assert_eq!(fake, 20);
    }

    #[test]
    fn class_means_are_separated() {
        let config = SyntheticConfig::default();
        let (_, store) = generate_corpus(&config);
        let mean_of = |label: Label| -> f64 {
            let rows: Vec<&EmbeddingRecord> = store
                .records()
                .iter()
                .filter(|r| r.label == label)
                .collect();
            let total: f64 = rows
                .iter()
                .flat_map(|r| r.text_vec.iter())
                .sum();
            total / (rows.len() * config.dim) as f64
        };
        let gap = mean_of(Label::Fake) - mean_of(Label::Real);
        assert!(
            (gap - config.separation).abs() < 0.5,
            "mean gap {gap} far from {}",
            config.separation
        );
    }

    #[test]
    fn texts_use_class_vocabulary() {
        let (articles, _) = generate_corpus(&SyntheticConfig::default());
        for article in &articles {
            let pool: &[&str] = match article.label {
                Label::Fake => &FAKE_WORDS,
                Label::Real => &REAL_WORDS,
            };
            let hits = article
                .text
                .split(' ')
                .filter(|w| pool.contains(w))
                .count();
            assert!(hits > 0, "article {} has no class words", article.id);
        }
    }
}
