//! Targeted attack on a random 16x16 classifier with full probability
//! outputs, printing progress every ten steps.

use std::sync::Arc;

use nbx::attack::{targeted_attack_observed, AttackConfig, AttackEvent};
use nbx::oracle::{LocalOracle, Metered, Oracle};
use nbx::rng::Rng;
use nbx::synth::{argmax, desk_spec, random_mlp, smooth_image, DESK_CONTRAST};
use nbx::tensor::linf_dist;

fn main() {
    let model = Arc::new(random_mlp(&desk_spec(1)));
    let x = smooth_image(model.input_shape(), 4, DESK_CONTRAST, &mut Rng::new(5));
    let clean = argmax(&model.classify_full(&x).unwrap());
    let target = (clean + 3) % model.num_classes();
    println!("clean label {clean}, target {target}");

    let oracle = Metered::new(LocalOracle::full(model.clone()), None);
    let cfg = AttackConfig::default();
    let result = targeted_attack_observed(&oracle, &x, target, &cfg, &mut |e| {
        if let AttackEvent::Step { iteration, x, queries } = e {
            if iteration % 10 == 0 {
                let p = model.classify_full(x).unwrap()[target];
                println!("step {iteration:>4}  queries {queries:>6}  P(target) {p:.4}");
            }
        }
    })
    .unwrap();

    let top1 = oracle.classify(&result.adv).unwrap().top1();
    println!(
        "success {}  queries {}  linf {:.4}  top-1 now {:?}",
        result.success,
        result.queries,
        linf_dist(&result.adv, &x).unwrap(),
        top1
    );
}
