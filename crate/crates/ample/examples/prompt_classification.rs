//! Hybrid prompts and the verbalizer head: assemble the fixed template
//! around an article, encode it with the toy transformer backend, read the
//! mask-position state and classify through label-word embeddings.
//!
//! ```text
//! cargo run --example prompt_classification
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ample::autodiff::{ParamStore, Tape};
use ample::prompt::{
    class_logits, classify, mask_repr, prompt_fc, register_prompt_params, PromptTemplate, Slot,
    ToyBackend, ToyBackendConfig, Vocab,
};

fn main() {
    let training_texts = [
        "officials confirmed the verified report",
        "shocking hoax spreads fake panic online",
        "the fake story was debunked",
        "real and accurate coverage of the market",
    ];
    let vocab = Vocab::build(training_texts.iter().copied());
    println!("vocabulary: {} words (ids 0/1 reserved for <unk>/<mask>)", vocab.len());

    let template = PromptTemplate::new(24);
    let prompt = template.assemble("shocking fake panic", &vocab);
    print!("assembled prompt ({} slots): ", prompt.len());
    for slot in &prompt.slots {
        match slot {
            Slot::Head => print!("<head> "),
            Slot::Tail => print!("<tail> "),
            Slot::Token(id) => print!("{} ", vocab.word(*id)),
        }
    }
    println!("\nmask position: {}\n", prompt.mask_pos);

    let backend_config = ToyBackendConfig {
        hidden: 16,
        layers: 2,
        heads: 2,
        ff_hidden: 32,
        positional: true,
    };
    let backend = ToyBackend::new(backend_config, vocab.len()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = ParamStore::new();
    register_prompt_params(&mut params, &backend, &vocab, &mut rng);

    let batch = template.assemble_batch(
        &["shocking fake panic", "verified accurate report"],
        &vocab,
    );
    let mut tape = Tape::new();
    let binding = params.bind(&mut tape);
    let mask_states = mask_repr(&mut tape, &binding, &backend, &batch);
    println!(
        "mask representation: {} x {}",
        tape.value(mask_states).nrows(),
        tape.value(mask_states).ncols()
    );

    let features = prompt_fc(&mut tape, mask_states, &binding);
    let probs = classify(&mut tape, features, &binding);
    for (i, row) in tape.value(probs).rows().into_iter().enumerate() {
        println!(
            "article {i}: P(fake) = {:.4}, P(real) = {:.4} (sums to {:.6})",
            row[0],
            row[1],
            row.sum()
        );
    }

    // The loss is the mean negative log-likelihood of the true classes,
    // and head/tail embeddings receive gradient through it.
    let logits = class_logits(&mut tape, features, &binding);
    let loss = ample::prompt::loss(&mut tape, logits, &[0, 1]);
    println!("\nloss: {:.4}", tape.value(loss)[[0, 0]]);
    let grads = tape.backward(loss);
    for name in ["prompt/head", "prompt/tail"] {
        let g = grads.wrt(binding.node(name)).unwrap();
        println!("|grad {name}| = {:.6}", g.mapv(f64::abs).sum());
    }
}
