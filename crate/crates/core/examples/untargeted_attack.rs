//! Push an image off its clean label, in full and top-1 output modes.

use std::sync::Arc;

use nbx::attack::{untargeted_attack, AttackConfig};
use nbx::oracle::{LocalOracle, OutputMode};
use nbx::rng::Rng;
use nbx::synth::{argmax, desk_spec, random_mlp, smooth_image, DESK_CONTRAST};

fn main() {
    let model = Arc::new(random_mlp(&desk_spec(2)));
    let mut rng = Rng::new(9);
    let cfg = AttackConfig {
        epsilon: 0.03,
        ..AttackConfig::default()
    };
    for i in 0..5 {
        let x = smooth_image(model.input_shape(), 4, DESK_CONTRAST, &mut rng);
        let clean = argmax(&model.classify_full(&x).unwrap());
        let full = untargeted_attack(&LocalOracle::full(model.clone()), &x, clean, &cfg).unwrap();
        let top1 = LocalOracle::new(model.clone(), OutputMode::topk(1));
        let scored = untargeted_attack(&top1, &x, clean, &cfg).unwrap();
        let now = argmax(&model.classify_full(&full.adv).unwrap());
        println!(
            "image {i}: label {clean} -> {now}  full: success {} in {} queries  top-1 scores: success {} in {} queries",
            full.success, full.queries, scored.success, scored.queries
        );
    }
}
