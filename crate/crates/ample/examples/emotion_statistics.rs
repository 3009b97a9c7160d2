//! Per-label emotion statistics of a dataset: mean [std] of the
//! overall/positive/negative category scores and the dataset-normalized
//! polarity, as the `stats` subcommand prints them.
//!
//! ```text
//! cargo run --example emotion_statistics
//! ```

use ample::experiment::emotion_stats;
use ample::sentiment::SentimentLexicon;
use ample::synthetic::{generate_corpus, SyntheticConfig};

fn main() {
    let (articles, _) = generate_corpus(&SyntheticConfig {
        articles: 100,
        ..SyntheticConfig::default()
    });
    let lexicon = SentimentLexicon::builtin();
    let report = emotion_stats(&articles, &lexicon, None);
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    print!("{}", report.table());
    println!(
        "\n(the synthetic corpus writes negatively charged vocabulary into the\n\
         fabricated class, so its negative score and polarity gap are visible)"
    );
}
