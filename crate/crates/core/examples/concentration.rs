//! Random Gaussian directions in high dimension are nearly orthogonal, and a
//! few hundred of them preserve a vector's squared norm on average.

use nbx::nes::{gaussian_orthogonality_stat, projection_norm_ratio};
use nbx::rng::Rng;

fn main() {
    let mut rng = Rng::new(0);
    println!("max |cos| among 100 random vectors");
    for dim in [10, 100, 1_000, 10_000] {
        println!("  dim {dim:>6}: {:.4}", gaussian_orthogonality_stat(100, dim, &mut rng));
    }

    let dim = 1000;
    let g = rng.normal_vec(dim);
    println!("projection norm ratio, dim {dim}");
    for m in [10, 50, 200, 1000] {
        let vecs: Vec<Vec<f64>> = (0..m).map(|_| rng.normal_vec(dim)).collect();
        println!("  m {m:>5}: {:.4}", projection_norm_ratio(&vecs, &g).unwrap());
    }
}
