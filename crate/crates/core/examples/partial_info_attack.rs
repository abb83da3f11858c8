//! Targeted attack through a top-5 interface: start from an image of the
//! target class and shrink the box around the source image.

use std::sync::Arc;

use nbx::attack::{partial_info_attack_observed, AttackConfig, AttackEvent, PartialPhase};
use nbx::oracle::{LocalOracle, OutputMode};
use nbx::rng::Rng;
use nbx::synth::{argmax, desk_spec, image_of_class, random_mlp, smooth_image, DESK_CONTRAST};

fn main() {
    let model = Arc::new(random_mlp(&desk_spec(3)));
    let mut rng = Rng::new(11);
    let x_i = smooth_image(model.input_shape(), 4, DESK_CONTRAST, &mut rng);
    let clean = argmax(&model.classify_full(&x_i).unwrap());
    let target = (clean + 1) % model.num_classes();
    let x_0 = image_of_class(&model, target, DESK_CONTRAST, &mut rng, 10_000).expect("class reachable");
    println!("source label {clean}, target {target}");

    let cfg = AttackConfig {
        k: Some(5),
        ..AttackConfig::default()
    };
    let oracle = LocalOracle::new(model.clone(), OutputMode::topk(5));
    let result = partial_info_attack_observed(&oracle, &x_i, &x_0, target, &cfg, &mut |e| {
        if let AttackEvent::Partial(p) = e {
            if p.phase == PartialPhase::Search && p.accepted {
                println!(
                    "epsilon {:.4}  rank {}  queries {}",
                    p.state.eps_t, p.state.rank_of_target, p.queries
                );
            }
        }
    })
    .unwrap();
    println!(
        "success {}  weak success {}  queries {}  final epsilon {}",
        result.success, result.weak_success, result.queries, result.epsilon_achieved
    );
}
