//! Estimate the gradient of a small classifier's log-probability from
//! queries alone and compare it with the exact gradient.

use std::convert::Infallible;

use nbx::nes::{cosine, estimate_gradient, NesConfig};
use nbx::rng::Rng;
use nbx::synth::{random_mlp, smooth_image, MlpSpec};
use nbx::tensor::Shape;

fn main() {
    let model = random_mlp(&MlpSpec {
        input_shape: Shape::new(8, 8, 1),
        hidden: vec![32],
        weight_scale: 4.0,
        seed: 7,
        ..MlpSpec::default()
    });
    let x = smooth_image(model.input_shape(), 4, 0.3, &mut Rng::new(1));
    let y = 3;
    let exact = model.analytic_logprob_grad(&x, y).unwrap();
    let loss = |z: &nbx::tensor::Image| Ok::<_, Infallible>(model.classify_full(z).unwrap()[y].ln());

    println!("{:>6}  {:>8}", "n", "cosine");
    for n in [20, 50, 200, 500, 2000] {
        let cfg = NesConfig {
            n_samples: n,
            sigma: 1e-3,
            seed: 42,
            ..NesConfig::default()
        };
        let est = estimate_gradient(loss, &x, &cfg).unwrap();
        println!("{n:>6}  {:>8.4}", cosine(&est.grad, &exact));
    }
}
