//! Dataset manifests and precomputed embedding stores.
//!
//! Encoders run out of process: this module only manages the feature
//! vectors they produce. A dataset manifest (JSON lines of
//! [`ArticleRecord`]) pairs article text with image references and a label;
//! an embedding store (JSON lines of [`EmbeddingRecord`] behind a header)
//! holds one text vector and one selected image vector per article, all of
//! a single configured dimension.
//!
//! [`select_pair`] implements the text-image pairing rule: among a set of
//! candidate image vectors, keep the one with the highest cosine
//! similarity to the text vector (ties break to the lowest index).

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{AmpleError, Result};

/// Binary veracity label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Fake,
    Real,
}

impl Label {
    /// Class index used by the classifier head: fake on 0, real on 1.
    pub fn index(self) -> usize {
        match self {
            Label::Fake => 0,
            Label::Real => 1,
        }
    }

    pub fn from_index(idx: usize) -> Self {
        match idx {
            0 => Label::Fake,
            1 => Label::Real,
            other => panic!("label index {other} out of range"),
        }
    }

    pub const ALL: [Label; 2] = [Label::Fake, Label::Real];
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Fake => f.write_str("fake"),
            Label::Real => f.write_str("real"),
        }
    }
}

/// One raw dataset entry: text, candidate images, label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArticleRecord {
    pub id: String,
    pub text: String,
    pub images: Vec<String>,
    pub label: Label,
}

/// One article's paired feature vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub text_vec: Vec<f64>,
    pub image_vec: Vec<f64>,
    pub label: Label,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoreHeader {
    format: String,
    dim: usize,
    count: usize,
}

const STORE_FORMAT: &str = "ample-store";

/// Immutable collection of embedding records with a uniform dimension.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    records: Vec<EmbeddingRecord>,
}

impl EmbeddingStore {
    /// Builds a store, validating uniform dimensionality and id uniqueness.
    pub fn new(dim: usize, records: Vec<EmbeddingRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for record in &records {
            if !seen.insert(record.id.clone()) {
                return Err(AmpleError::DuplicateId(record.id.clone()));
            }
            for (len, what) in [
                (record.text_vec.len(), "text"),
                (record.image_vec.len(), "image"),
            ] {
                if len != dim {
                    return Err(AmpleError::DimensionMismatch {
                        id: format!("{} ({what} vector)", record.id),
                        expected: dim,
                        found: len,
                    });
                }
            }
        }
        Ok(Self { dim, records })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Loads a store from its JSON-lines file: a header line
    /// `{"format":"ample-store","dim":d,"count":n}` followed by one record
    /// per line. An empty file is a valid empty store.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(contents: &str) -> Result<Self> {
        let mut lines = contents.lines().filter(|l| !l.trim().is_empty());
        let header_line = match lines.next() {
            Some(line) => line,
            None => return Self::new(0, Vec::new()),
        };
        let header: StoreHeader =
            serde_json::from_str(header_line).map_err(|e| AmpleError::MalformedStore {
                reason: format!("bad header: {e}"),
            })?;
        if header.format != STORE_FORMAT {
            return Err(AmpleError::MalformedStore {
                reason: format!("unknown format '{}'", header.format),
            });
        }
        let mut records = Vec::with_capacity(header.count);
        for line in lines {
            let record: EmbeddingRecord =
                serde_json::from_str(line).map_err(|e| AmpleError::MalformedStore {
                    reason: format!("bad record: {e}"),
                })?;
            records.push(record);
        }
        if records.len() != header.count {
            return Err(AmpleError::MalformedStore {
                reason: format!(
                    "header count {} does not match {} records",
                    header.count,
                    records.len()
                ),
            });
        }
        Self::new(header.dim, records)
    }

    /// Serializes to the canonical JSON-lines form. Loading then saving a
    /// canonical file reproduces it byte for byte.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = StoreHeader {
            format: STORE_FORMAT.to_owned(),
            dim: self.dim,
            count: self.records.len(),
        };
        out.push_str(&serde_json::to_string(&header).expect("header serializes"));
        out.push('\n');
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn text_vector(&self, record: &EmbeddingRecord) -> Array1<f64> {
        Array1::from_vec(record.text_vec.clone())
    }

    pub fn image_vector(&self, record: &EmbeddingRecord) -> Array1<f64> {
        Array1::from_vec(record.image_vec.clone())
    }
}

/// Loads a dataset manifest: one [`ArticleRecord`] JSON object per line.
/// Ids must be unique.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ArticleRecord>> {
    parse_manifest(&std::fs::read_to_string(path)?)
}

pub fn parse_manifest(contents: &str) -> Result<Vec<ArticleRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for line in contents.lines().filter(|l| !l.trim().is_empty()) {
        let record: ArticleRecord =
            serde_json::from_str(line).map_err(|e| AmpleError::MalformedStore {
                reason: format!("bad manifest line: {e}"),
            })?;
        if !seen.insert(record.id.clone()) {
            return Err(AmpleError::DuplicateId(record.id));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn save_manifest(path: impl AsRef<Path>, records: &[ArticleRecord]) -> Result<()> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Cosine similarity of two equal-length vectors. Errors on a zero vector,
/// where the quantity is undefined.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    assert_eq!(a.len(), b.len(), "cosine_sim: length mismatch");
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(AmpleError::ZeroVector);
    }
    Ok(dot / (na * nb))
}

/// Index and contents of the image vector most cosine-similar to
/// `text_vec`. Ties break to the lowest index; an empty candidate list is
/// a [`AmpleError::NoImage`] error (the caller decides whether to drop the
/// article or substitute a zero vector).
pub fn select_pair(text_vec: &[f64], image_vecs: &[Vec<f64>]) -> Result<(usize, Vec<f64>)> {
    if image_vecs.is_empty() {
        return Err(AmpleError::NoImage(String::new()));
    }
    let mut best: Option<(usize, f64)> = None;
    for (idx, candidate) in image_vecs.iter().enumerate() {
        let sim = cosine_sim(text_vec, candidate)?;
        match best {
            Some((_, best_sim)) if sim <= best_sim => {}
            _ => best = Some((idx, sim)),
        }
    }
    let (idx, _) = best.expect("non-empty candidates");
    Ok((idx, image_vecs[idx].clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(id: &str, dim: usize, fill: f64) -> EmbeddingRecord {
        EmbeddingRecord {
            id: id.to_owned(),
            text_vec: vec![fill; dim],
            image_vec: vec![fill * 0.5; dim],
            label: Label::Fake,
        }
    }

    #[test]
    fn store_of_uniform_records_loads() {
        let records = vec![record("a", 512, 1.0), record("b", 512, 2.0), record("c", 512, 3.0)];
        let store = EmbeddingStore::new(512, records).unwrap();
        assert_eq!(store.len(), 3);
        assert_eq!(store.dim(), 512);
        assert!(store.get("b").is_some());
    }

    #[test]
    fn dimension_mismatch_names_offending_id() {
        let records = vec![record("a", 512, 1.0), record("bad", 511, 1.0)];
        match EmbeddingStore::new(512, records) {
            Err(AmpleError::DimensionMismatch { id, expected, found }) => {
                assert!(id.starts_with("bad"), "{id}");
                assert_eq!((expected, found), (512, 511));
            }
            other => panic!("expected dimension mismatch, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let records = vec![record("a", 4, 1.0), record("a", 4, 2.0)];
        assert!(matches!(
            EmbeddingStore::new(4, records),
            Err(AmpleError::DuplicateId(id)) if id == "a"
        ));
    }

    #[test]
    fn empty_file_is_a_valid_empty_store() {
        let store = EmbeddingStore::parse("").unwrap();
        assert!(store.is_empty());
    }

    #[test]
    fn header_count_mismatch_is_malformed() {
        let text = format!(
            "{}\n{}\n",
            r#"{"format":"ample-store","dim":2,"count":2}"#,
            r#"{"id":"a","text_vec":[1.0,0.0],"image_vec":[0.0,1.0],"label":"fake"}"#
        );
        assert!(matches!(
            EmbeddingStore::parse(&text),
            Err(AmpleError::MalformedStore { .. })
        ));
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let records = vec![
            EmbeddingRecord {
                id: "a1".into(),
                text_vec: vec![0.25, -1.5, 3.0],
                image_vec: vec![1.0, 0.125, -0.75],
                label: Label::Real,
            },
            record("a2", 3, 0.1),
        ];
        let store = EmbeddingStore::new(3, records).unwrap();
        let canonical = store.to_jsonl();
        let reloaded = EmbeddingStore::parse(&canonical).unwrap();
        assert_eq!(reloaded.to_jsonl(), canonical);
    }

    #[test]
    fn select_pair_prefers_parallel_over_orthogonal() {
        let text = vec![1.0, 0.0];
        let images = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let (idx, vec) = select_pair(&text, &images).unwrap();
        assert_eq!(idx, 1);
        assert_eq!(vec, vec![1.0, 0.0]);
    }

    #[test]
    fn select_pair_single_and_tie() {
        let text = vec![1.0, 1.0];
        let single = vec![vec![3.0, 0.0]];
        assert_eq!(select_pair(&text, &single).unwrap().0, 0);

        let identical = vec![vec![2.0, 2.0], vec![2.0, 2.0]];
        assert_eq!(select_pair(&text, &identical).unwrap().0, 0);
    }

    #[test]
    fn select_pair_rejects_empty_list() {
        assert!(matches!(
            select_pair(&[1.0], &[]),
            Err(AmpleError::NoImage(_))
        ));
    }

    #[test]
    fn cosine_known_angles() {
        assert!((cosine_sim(&[1.0, 0.0], &[2.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(cosine_sim(&[1.0, 0.0], &[0.0, 5.0]).unwrap().abs() < 1e-15);
        assert!((cosine_sim(&[1.0, 1.0], &[-2.0, -2.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(
            cosine_sim(&[0.0, 0.0], &[1.0, 0.0]),
            Err(AmpleError::ZeroVector)
        ));
    }

    #[test]
    fn manifest_round_trip_and_duplicate_detection() {
        let line = r#"{"id":"n1","text":"hello world","images":["img/a.png"],"label":"real"}"#;
        let records = parse_manifest(&format!("{line}\n")).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].label, Label::Real);

        let dup = format!("{line}\n{line}\n");
        assert!(matches!(
            parse_manifest(&dup),
            Err(AmpleError::DuplicateId(_))
        ));
    }

    fn nonzero_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, len..=len)
            .prop_filter("nonzero", |v| v.iter().any(|&x| x.abs() > 1e-6))
    }

    proptest! {
        #[test]
        fn cosine_is_symmetric_bounded_and_scale_invariant(
            a in nonzero_vec(5),
            b in nonzero_vec(5),
            scale in 0.01f64..100.0,
        ) {
            let ab = cosine_sim(&a, &b).unwrap();
            let ba = cosine_sim(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab.abs() <= 1.0 + 1e-12);
            let scaled: Vec<f64> = a.iter().map(|&x| x * scale).collect();
            let sim_scaled = cosine_sim(&scaled, &b).unwrap();
            prop_assert!((ab - sim_scaled).abs() < 1e-9);
        }

        #[test]
        fn select_pair_matches_brute_force_argmax(
            text in nonzero_vec(4),
            images in proptest::collection::vec(nonzero_vec(4), 1..6),
        ) {
            let (idx, _) = select_pair(&text, &images).unwrap();
            // Brute-force enumeration oracle.
            let sims: Vec<f64> = images
                .iter()
                .map(|img| cosine_sim(&text, img).unwrap())
                .collect();
            let mut best = 0;
            for (i, &s) in sims.iter().enumerate() {
                if s > sims[best] {
                    best = i;
                }
            }
            prop_assert_eq!(idx, best);
        }
    }
}
