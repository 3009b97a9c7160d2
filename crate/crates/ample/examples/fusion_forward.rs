//! A walk through the fusion stage: cross-attention in both directions,
//! residual integration, the mix block, the similarity gate and the two
//! combination strategies, with the intermediate trace printed.
//!
//! ```text
//! cargo run --example fusion_forward
//! ```

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ample::autodiff::{ParamStore, Tape};
use ample::fusion::{
    build_feature_groups, combine, gate_values, register_fusion_params, AblationSet,
    BatchNormState, FusionConfig, Mode, Strategy,
};

fn main() {
    let mut config = FusionConfig::new(8, 6);
    config.heads = 2;
    config.dropout_rate = 0.0;
    println!(
        "fusion config: dim {}, {} heads, key_dim {}, mix {} -> {}\n",
        config.dim, config.heads, config.key_dim, config.mix_hidden, config.out_dim
    );

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params = ParamStore::new();
    register_fusion_params(&mut params, &config, &mut rng);

    let batch = 4;
    let text = Array2::from_shape_fn((batch, 8), |_| rng.gen_range(-1.0..1.0));
    let image = Array2::from_shape_fn((batch, 8), |_| rng.gen_range(-1.0..1.0));
    let sims = [0.8, -0.6, 0.1, 0.3];
    println!("similarities {sims:?}");
    println!("gates        {:.4?}\n", gate_values(&sims));

    let mut tape = Tape::new();
    let binding = params.bind(&mut tape);
    let text_node = tape.leaf(text);
    let image_node = tape.leaf(image);
    let mut bn = BatchNormState::new(config.mix_hidden);
    let (m1, m2, trace) = build_feature_groups(
        &mut tape, text_node, image_node, &sims, &binding, &mut bn, &config, Mode::Eval, &mut rng,
    )
    .unwrap();

    println!("attended image row 0:  {:.3?}", trace.image_attended.row(0).to_vec());
    println!("attended text row 0:   {:.3?}", trace.text_attended.row(0).to_vec());
    println!("fused image (f1) row 0: {:.3?}", trace.fused_image.row(0).to_vec());
    println!("gated image (m1) row 0: {:.3?}\n", trace.gated_image.row(0).to_vec());

    // Combine with a stand-in mask representation under both strategies.
    let v = tape.leaf(Array2::from_elem((batch, 6), 0.5));
    for (strategy, alpha) in [(Strategy::A, 0.25), (Strategy::A, 0.5), (Strategy::B, 0.5)] {
        let mut c = config.clone();
        c.strategy = strategy;
        c.alpha = alpha;
        let out = combine(&mut tape, v, m1, m2, &c);
        println!(
            "strategy {strategy} alpha {alpha}: row 0 = {:.3?}",
            tape.value(out).row(0).to_vec()
        );
    }
    println!("(A and B coincide at alpha = 0.5)\n");

    // Ablations zero whole feature groups; -RFM shuts fusion off entirely.
    for flags in ["FM", "TM", "RFM"] {
        let mut ablated = config.clone();
        ablated.ablation = AblationSet::parse_list(flags).unwrap();
        let mut tape = Tape::new();
        let binding = params.bind(&mut tape);
        let t = tape.leaf(Array2::from_elem((2, 8), 0.3));
        let i = tape.leaf(Array2::from_elem((2, 8), -0.2));
        let mut bn = BatchNormState::new(config.mix_hidden);
        let (m1, _, trace) = build_feature_groups(
            &mut tape, t, i, &[0.1, 0.2], &binding, &mut bn, &ablated, Mode::Eval, &mut rng,
        )
        .unwrap();
        println!(
            "-{flags:>3}: |attended image| = {:.3}, |m1| = {:.3}",
            trace.image_attended.mapv(f64::abs).sum(),
            tape.value(m1).mapv(f64::abs).sum()
        );
    }
}
