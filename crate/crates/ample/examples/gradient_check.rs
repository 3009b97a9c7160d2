//! Verifies the end-to-end analytic gradients against central finite
//! differences, the same procedure the acceptance suite gates on.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ample::experiment::build_corpus;
use ample::fusion::Mode;
use ample::model::{AmpleModel, ModelConfig};
use ample::prompt::Vocab;
use ample::sentiment::{EmotionVariant, SentimentLexicon};
use ample::synthetic::{generate_corpus, SyntheticConfig};
use ample::trainer::{make_batch, EmotionPipeline, TrainExample};

fn main() {
    let (articles, store) = generate_corpus(&SyntheticConfig {
        articles: 8,
        dim: 8,
        ..SyntheticConfig::default()
    });
    let lexicon = SentimentLexicon::builtin();
    let corpus = build_corpus(&articles, &store, &lexicon, None).unwrap();
    let refs: Vec<&TrainExample> = corpus.iter().take(4).collect();

    let vocab = Vocab::build(refs.iter().map(|e| e.text.as_str()));
    let model = AmpleModel::new(ModelConfig::desk_scale(8), vocab, 11).unwrap();
    let pipeline = EmotionPipeline::fit(&refs, EmotionVariant::Combined);
    let batch = make_batch(&model, &refs, &pipeline);

    let eval = |model: &AmpleModel| -> (f64, Vec<Array2<f64>>) {
        let mut scratch = model.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pass = scratch.forward(&batch, Mode::Train, &mut rng).unwrap();
        (pass.loss_value(), pass.param_grads(&scratch.params))
    };
    let (loss, grads) = eval(&model);
    let total_params: usize = model.params.values().iter().map(|v| v.len()).sum();
    println!("loss {loss:.6} over {total_params} parameters\n");

    let step = 1e-5;
    let mut dir_rng = ChaCha8Rng::seed_from_u64(42);
    println!("direction   analytic        central diff    rel err");
    for i in 0..8 {
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
        let eval_at = |t: f64| -> f64 {
            let mut perturbed = model.clone();
            for (value, d) in perturbed.params.values_mut().iter_mut().zip(&direction) {
                *value += &(d * t);
            }
            eval(&perturbed).0
        };
        let fd = (eval_at(step) - eval_at(-step)) / (2.0 * step);
        let rel = (analytic - fd).abs() / fd.abs().max(analytic.abs()).max(1e-12);
        println!("{i:>9}   {analytic:+.10}   {fd:+.10}   {rel:.2e}");
        assert!(rel <= 1e-4);
    }
    println!("\nall directions within 1e-4 of the finite-difference oracle");
}
