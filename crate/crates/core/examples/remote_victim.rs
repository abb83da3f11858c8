//! Start the victim service in-process and attack it over HTTP under a
//! query budget.

use std::sync::Arc;

use nbx::attack::{targeted_attack, AttackConfig};
use nbx::oracle::wire::WireMode;
use nbx::oracle::HttpOracle;
use nbx::rng::Rng;
use nbx::service::{serve_model, ServiceConfig};
use nbx::synth::{argmax, desk_spec, random_mlp, smooth_image, DESK_CONTRAST};

fn main() {
    let model = Arc::new(random_mlp(&desk_spec(5)));
    let service = serve_model(
        model.clone(),
        &ServiceConfig {
            budget: Some(20_000),
            bind_address: Some("127.0.0.1:0".into()),
            ..ServiceConfig::default()
        },
    )
    .unwrap();
    println!("service at {}", service.url());

    let oracle = HttpOracle::new(&service.url(), WireMode::Full);
    let x = smooth_image(model.input_shape(), 4, DESK_CONTRAST, &mut Rng::new(8));
    let target = (argmax(&model.classify_full(&x).unwrap()) + 2) % model.num_classes();
    let result = targeted_attack(&oracle, &x, target, &AttackConfig::default()).unwrap();
    println!(
        "success {} with {} queries; service counted {}",
        result.success,
        result.queries,
        oracle.stats().unwrap().queries
    );
    service.shutdown().unwrap();
}
