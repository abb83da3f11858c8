#![allow(dead_code)]

use std::sync::Arc;

use nbx::oracle::{Activation, Dense, MlpModel};
use nbx::rng::Rng;
use nbx::tensor::{Image, Shape};

/// Plain Monte Carlo estimate `(1/(nσ)) Σ F(x + σε_j) ε_j` with `n`
/// independent directions drawn vector by vector from `rng`.
pub fn iid_estimate(f: impl Fn(&[f64]) -> f64, x: &[f64], sigma: f64, n: usize, rng: &mut Rng) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    for _ in 0..n {
        let eps = rng.normal_vec(x.len());
        let probe: Vec<f64> = x.iter().zip(&eps).map(|(a, e)| a + sigma * e).collect();
        let v = f(&probe);
        g.iter_mut().zip(&eps).for_each(|(gi, e)| *gi += v * e);
    }
    g.iter_mut().for_each(|gi| *gi /= n as f64 * sigma);
    g
}

/// The first `n/2` antithetic directions as drawn from `Rng::new(seed)`.
pub fn antithetic_half(seed: u64, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = Rng::new(seed);
    (0..n / 2).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect()
}

/// Softmax regression `W x + b` with standard-normal weights times `scale`.
pub fn linear_model(dim: usize, classes: usize, scale: f64, seed: u64) -> Arc<MlpModel> {
    let mut rng = Rng::new(seed);
    let weights = (0..dim * classes).map(|_| scale * rng.normal()).collect();
    let biases = (0..classes).map(|_| rng.normal()).collect();
    Arc::new(
        MlpModel::new(
            Shape::new(dim, 1, 1),
            vec![Dense {
                inputs: dim,
                outputs: classes,
                activation: Activation::Identity,
                weights,
                biases,
            }],
        )
        .unwrap(),
    )
}

pub fn uniform_image(shape: Shape, rng: &mut Rng) -> Image {
    Image::new(shape, (0..shape.len()).map(|_| rng.uniform()).collect()).unwrap()
}

pub fn random_other(label: usize, classes: usize, rng: &mut Rng) -> usize {
    let t = rng.below(classes - 1);
    if t >= label {
        t + 1
    } else {
        t
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        (v[m - 1] + v[m]) / 2.0
    } else {
        v[m]
    }
}
