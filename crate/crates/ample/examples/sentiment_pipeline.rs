//! Lexicon-based sentiment scoring: polarity/subjectivity analysis,
//! category match fractions, batch normalization, composite emotion and
//! emotion-weighted embeddings.
//!
//! ```text
//! cargo run --example sentiment_pipeline
//! ```

use ndarray::Array2;

use ample::sentiment::{
    analyze, category_scores, composite_emotion, emotion_weight, normalize_polarity,
    EmotionVariant, SentimentLexicon,
};

fn main() {
    let lexicon = SentimentLexicon::builtin();
    println!("bundled lexicon: {} entries\n", lexicon.len());

    let articles = [
        "Officials confirmed the report is accurate and the data verified.",
        "Shocking hoax spreads panic: the fabricated story is a disgusting lie!",
        "The committee met on Tuesday to discuss scheduling.",
    ];

    let mut polarities = Vec::new();
    for text in &articles {
        let (p, s) = analyze(text, &lexicon);
        let (overall, positive, negative) = category_scores(text, &lexicon);
        println!("text: {text}");
        println!("  polarity {p:+.3}  subjectivity {s:.3}");
        println!("  category match: overall {overall:.3} = positive {positive:.3} + negative {negative:.3}\n");
        polarities.push(p);
    }

    // Min-max normalize polarity over the batch, then combine with
    // subjectivity into the composite emotion element (never zero).
    let normalized = normalize_polarity(&polarities);
    println!("normalized polarities: {normalized:.3?}");
    let emotions: Vec<f64> = articles
        .iter()
        .zip(&normalized)
        .map(|(text, &p_star)| {
            let (_, s) = analyze(text, &lexicon);
            composite_emotion(p_star, s, EmotionVariant::Combined)
        })
        .collect();
    println!("composite emotions:    {emotions:.3?}");

    // The emotion element scales each article's text embedding row.
    let features = Array2::from_elem((articles.len(), 4), 1.0);
    let weighted = emotion_weight(&emotions, &features);
    println!("\nrow scales applied to an all-ones 4-dim embedding:");
    for (i, row) in weighted.rows().into_iter().enumerate() {
        println!("  article {i}: {:.3?}", row.to_vec());
    }
}
