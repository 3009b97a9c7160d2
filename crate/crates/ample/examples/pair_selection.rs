//! Embedding stores and text-image pair selection: among each article's
//! candidate image vectors, keep the one most cosine-similar to the text.
//!
//! ```text
//! cargo run --example pair_selection
//! ```

use ample::store::{cosine_sim, select_pair, EmbeddingRecord, EmbeddingStore, Label};

fn main() {
    let text_vec = vec![0.9, 0.1, 0.0, 0.2];
    let candidates = vec![
        vec![0.0, 1.0, 0.3, 0.0],  // off-topic
        vec![1.0, 0.0, 0.1, 0.3],  // close to the text
        vec![-0.9, -0.1, 0.0, -0.2], // opposite
    ];
    for (i, c) in candidates.iter().enumerate() {
        println!(
            "candidate {i}: cosine {:+.4}",
            cosine_sim(&text_vec, c).unwrap()
        );
    }
    let (best, image_vec) = select_pair(&text_vec, &candidates).unwrap();
    println!("selected candidate {best}\n");

    // Stores hold the selected pair per article behind a header line.
    let store = EmbeddingStore::new(
        4,
        vec![EmbeddingRecord {
            id: "a1".into(),
            text_vec,
            image_vec,
            label: Label::Real,
        }],
    )
    .unwrap();
    let dir = std::env::temp_dir().join("ample_pair_selection");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("store.jsonl");
    store.save(&path).unwrap();
    println!("serialized store:\n{}", std::fs::read_to_string(&path).unwrap());

    let reloaded = EmbeddingStore::load(&path).unwrap();
    println!(
        "reloaded {} record(s) of dimension {}; round trip byte-identical: {}",
        reloaded.len(),
        reloaded.dim(),
        reloaded.to_jsonl() == store.to_jsonl()
    );
    std::fs::remove_dir_all(&dir).ok();
}
