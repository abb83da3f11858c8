//! Adversarial example that survives random rotations in [-30, 30] degrees.

use std::sync::Arc;

use nbx::attack::{eot_attack, targeted_attack, AttackConfig};
use nbx::oracle::LocalOracle;
use nbx::rng::Rng;
use nbx::synth::{argmax, random_mlp, rotation_spec, smooth_image, ROTATION_CONTRAST};
use nbx::transform::{adversariality, EotConfig};

fn main() {
    let model = Arc::new(random_mlp(&rotation_spec(1)));
    let oracle = LocalOracle::full(model.clone());
    let x = smooth_image(model.input_shape(), 4, ROTATION_CONTRAST, &mut Rng::new(4));
    let clean = argmax(&model.classify_full(&x).unwrap());
    let target = (clean + 5) % model.num_classes();
    let eot = EotConfig::default();
    let cfg = AttackConfig {
        epsilon: 0.1,
        max_queries: 2_000_000,
        eot: Some(eot.clone()),
        ..AttackConfig::default()
    };

    let plain = targeted_attack(&oracle, &x, target, &cfg).unwrap();
    let robust = eot_attack(&oracle, &x, target, &cfg).unwrap();
    let mut rng = Rng::new(1234);
    let a_plain = adversariality(&oracle, &plain.adv, target, &eot, 1000, &mut rng).unwrap();
    let a_robust = adversariality(&oracle, &robust.adv, target, &eot, 1000, &mut rng).unwrap();
    println!("clean label {clean}, target {target}");
    println!("plain attack: {} queries, rotations on target {a_plain:.3}", plain.queries);
    println!("eot attack:   {} queries, rotations on target {a_robust:.3}", robust.queries);
}
