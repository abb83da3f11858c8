//! Move an image out of a set of labels named in a sidecar file.

use std::sync::Arc;

use nbx::attack::{label_set_attack, AttackConfig};
use nbx::labels::LabelMap;
use nbx::oracle::LocalOracle;
use nbx::rng::Rng;
use nbx::synth::{argmax, desk_spec, random_mlp, smooth_image, DESK_CONTRAST};

fn main() {
    let names = "cat\ndog\nfox\nowl\nelk\nyak\nemu\nbat\ncod\nant\n";
    let labels = LabelMap::parse(names);
    let model = Arc::new(random_mlp(&desk_spec(4)));
    let x = smooth_image(model.input_shape(), 4, DESK_CONTRAST, &mut Rng::new(3));
    let clean = argmax(&model.classify_full(&x).unwrap());
    let second = (clean + 1) % labels.len();
    let avoid = labels
        .resolve(&[labels.name(clean).unwrap(), labels.name(second).unwrap()])
        .unwrap();
    println!("clean label {}, avoiding {:?}", labels.name(clean).unwrap(), avoid);

    let result = label_set_attack(&LocalOracle::full(model.clone()), &x, &avoid, &AttackConfig::default()).unwrap();
    let now = argmax(&model.classify_full(&result.adv).unwrap());
    println!(
        "success {} in {} queries, now classified {}",
        result.success,
        result.queries,
        labels.name(now).unwrap()
    );
}
