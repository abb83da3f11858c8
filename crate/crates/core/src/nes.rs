//! NES gradient estimation with antithetic Gaussian sampling.
//!
//! For a loss `F` and the isotropic search distribution `x + σ·N(0, I)`, the
//! estimate is
//!
//! ```text
//! g = 1/(σ n) · Σ_{i=1..n} ε_i · F(x + σ ε_i)
//! ```
//!
//! where the second half of the population mirrors the first
//! (`ε_j = -ε_{n-j+1}`). With that pairing the sum is evaluated as
//! `1/(σ n) · Σ_{i ≤ n/2} ε_i · (F(x + σ ε_i) - F(x - σ ε_i))`, accumulated in
//! pair-index order so the result never depends on the order in which the
//! oracle answers.
//!
//! The module also carries the random-basis statistics used to check the
//! finite-difference view of the estimator: pairwise cosines of Gaussian
//! vectors and the norm ratio of a Gaussian projection.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;
use crate::tensor::Image;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NesError {
    #[error("n_samples must be even and at least 2, got {0}")]
    OddSamples(usize),
    #[error("sigma must be finite and positive, got {0}")]
    BadSigma(f64),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("reference vector is zero")]
    ZeroVector,
}

/// A loss evaluation failed partway through an estimate.
#[derive(Debug, Error)]
#[error("loss evaluation failed after {queries_used} successful evaluations: {source}")]
pub struct EstimateError<E: std::error::Error + 'static> {
    #[source]
    pub source: E,
    pub queries_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NesConfig {
    /// Search-distribution scale, in pixel units.
    pub sigma: f64,
    /// Population size; must be even.
    pub n_samples: usize,
    pub seed: u64,
    /// Issue the `n` loss evaluations of one estimate concurrently. The sum is
    /// still taken in index order; turn this off when the oracle itself is
    /// order-sensitive.
    pub parallel: bool,
}

impl Default for NesConfig {
    fn default() -> Self {
        Self {
            sigma: 0.001,
            n_samples: 100,
            seed: 0,
            parallel: false,
        }
    }
}

impl NesConfig {
    pub fn new(sigma: f64, n_samples: usize, seed: u64) -> Result<Self, NesError> {
        let cfg = Self {
            sigma,
            n_samples,
            seed,
            parallel: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), NesError> {
        if self.n_samples < 2 || !self.n_samples.is_multiple_of(2) {
            return Err(NesError::OddSamples(self.n_samples));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(NesError::BadSigma(self.sigma));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub grad: Vec<f64>,
    /// Loss evaluations spent; always `n_samples`.
    pub queries_used: usize,
}

/// `n` antithetic standard-normal vectors: the first `n/2` are i.i.d. draws
/// (vector by vector, component by component from `rng`), the rest mirror
/// them so that vector `j` (1-based, `j > n/2`) is `-vector_{n-j+1}`.
pub fn sample_antithetic(n: usize, dim: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>, NesError> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(NesError::OddSamples(n));
    }
    let half: Vec<Vec<f64>> = (0..n / 2).map(|_| rng.normal_vec(dim)).collect();
    let mirrored: Vec<Vec<f64>> = half
        .iter()
        .rev()
        .map(|v| v.iter().map(|c| -c).collect())
        .collect();
    Ok(half.into_iter().chain(mirrored).collect())
}

/// NES estimate seeded from `cfg.seed`.
pub fn estimate_gradient<F, E>(
    loss: F,
    x: &Image,
    cfg: &NesConfig,
) -> Result<GradientEstimate, EstimateError<E>>
where
    F: Fn(&Image) -> Result<f64, E> + Sync,
    E: std::error::Error + Send + 'static,
{
    let mut rng = Rng::new(cfg.seed);
    estimate_gradient_with_rng(loss, x, cfg, &mut rng)
}

/// NES estimate drawing its perturbations from `rng`, which is advanced
/// exactly as [`sample_antithetic`] would advance it.
///
/// # Panics
///
/// If `cfg` fails [`NesConfig::validate`].
pub fn estimate_gradient_with_rng<F, E>(
    loss: F,
    x: &Image,
    cfg: &NesConfig,
    rng: &mut Rng,
) -> Result<GradientEstimate, EstimateError<E>>
where
    F: Fn(&Image) -> Result<f64, E> + Sync,
    E: std::error::Error + Send + 'static,
{
    estimate_gradient_indexed(|_, p| loss(p), x, cfg, rng)
}

/// Like [`estimate_gradient_with_rng`], but the loss also receives the
/// evaluation index `j` in `0..n` (`j < n/2` is `x + σε_j`, otherwise
/// `x - σε_{n-1-j}`). Stochastic losses can seed themselves from it and stay
/// reproducible under parallel evaluation.
///
/// # Panics
///
/// If `cfg` fails [`NesConfig::validate`].
pub fn estimate_gradient_indexed<F, E>(
    loss: F,
    x: &Image,
    cfg: &NesConfig,
    rng: &mut Rng,
) -> Result<GradientEstimate, EstimateError<E>>
where
    F: Fn(usize, &Image) -> Result<f64, E> + Sync,
    E: std::error::Error + Send + 'static,
{
    cfg.validate().expect("invalid NesConfig");
    let n = cfg.n_samples;
    let half = n / 2;
    let dim = x.len();
    let eps: Vec<Vec<f64>> = (0..half).map(|_| rng.normal_vec(dim)).collect();

    // Evaluation j < n/2 is x + σ ε_j; j ≥ n/2 is x - σ ε_{n-1-j}.
    let point = |j: usize| -> Image {
        if j < half {
            x.offset(&eps[j], cfg.sigma)
        } else {
            x.offset(&eps[n - 1 - j], -cfg.sigma)
        }
    };

    let values: Vec<f64> = if cfg.parallel {
        let done = AtomicUsize::new(0);
        let results: Vec<Result<f64, E>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let r = loss(j, &point(j));
                if r.is_ok() {
                    done.fetch_add(1, Ordering::Relaxed);
                }
                r
            })
            .collect();
        let mut values = Vec::with_capacity(n);
        for r in results {
            match r {
                Ok(v) => values.push(v),
                Err(source) => {
                    return Err(EstimateError {
                        source,
                        queries_used: done.load(Ordering::Relaxed),
                    })
                }
            }
        }
        values
    } else {
        let mut values = Vec::with_capacity(n);
        for j in 0..n {
            match loss(j, &point(j)) {
                Ok(v) => values.push(v),
                Err(source) => {
                    return Err(EstimateError {
                        source,
                        queries_used: j,
                    })
                }
            }
        }
        values
    };

    let scale = 1.0 / (cfg.sigma * n as f64);
    let mut grad = vec![0.0; dim];
    for (i, e) in eps.iter().enumerate() {
        let diff = values[i] - values[n - 1 - i];
        for (g, c) in grad.iter_mut().zip(e) {
            *g += c * diff;
        }
    }
    for g in &mut grad {
        *g *= scale;
    }
    Ok(GradientEstimate {
        grad,
        queries_used: n,
    })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d == 0.0 {
        0.0
    } else {
        dot(a, b) / d
    }
}

/// `max_{i<j} |v_i·v_j| / (‖v_i‖‖v_j‖)`. Zero vectors count as orthogonal
/// to everything.
pub fn max_pairwise_cosine(vecs: &[Vec<f64>]) -> f64 {
    let norms: Vec<f64> = vecs.iter().map(|v| norm(v)).collect();
    let mut worst = 0.0f64;
    for i in 0..vecs.len() {
        for j in i + 1..vecs.len() {
            let d = norms[i] * norms[j];
            if d > 0.0 {
                worst = worst.max((dot(&vecs[i], &vecs[j]) / d).abs());
            }
        }
    }
    worst
}

/// Largest absolute pairwise cosine among `count` fresh standard-normal
/// vectors of dimension `dim`.
///
/// # Panics
///
/// If `count < 2` or `dim == 0`.
pub fn gaussian_orthogonality_stat(count: usize, dim: usize, rng: &mut Rng) -> f64 {
    assert!(count >= 2 && dim >= 1, "need at least two vectors of positive dimension");
    let vecs: Vec<Vec<f64>> = (0..count).map(|_| rng.normal_vec(dim)).collect();
    max_pairwise_cosine(&vecs)
}

/// `‖Θ g‖² / ‖g‖²` for the projection `Θ` whose rows are `vecs_i / √m`:
///
/// ```text
/// ratio = Σ_i (v_i · g)² / (m ‖g‖²)
/// ```
///
/// For standard-normal rows the expectation is exactly 1; for `m = dim` rows
/// forming `√dim` times an orthonormal basis it is exactly 1 by Parseval.
pub fn projection_norm_ratio(vecs: &[Vec<f64>], g: &[f64]) -> Result<f64, NesError> {
    for v in vecs {
        if v.len() != g.len() {
            return Err(NesError::DimMismatch {
                expected: g.len(),
                actual: v.len(),
            });
        }
    }
    let g2 = dot(g, g);
    if g2 == 0.0 {
        return Err(NesError::ZeroVector);
    }
    let m = vecs.len() as f64;
    let proj: f64 = vecs.iter().map(|v| dot(v, g).powi(2)).sum();
    Ok(proj / (m * g2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use std::convert::Infallible;

    fn point(dim: usize, seed: u64) -> Image {
        let mut rng = Rng::new(seed);
        Image::new(Shape::new(1, dim, 1), (0..dim).map(|_| rng.uniform()).collect()).unwrap()
    }

    #[test]
    fn antithetic_pairs() {
        let mut rng = Rng::new(1);
        let v = sample_antithetic(2, 3, &mut rng).unwrap();
        for c in 0..3 {
            assert_eq!(v[0][c], -v[1][c]);
            assert_eq!(v[0][c] + v[1][c], 0.0);
        }
        let v = sample_antithetic(6, 4, &mut rng).unwrap();
        for (a, b) in [(3, 2), (4, 1), (5, 0)] {
            for c in 0..4 {
                assert_eq!(v[a][c], -v[b][c]);
            }
        }
        assert_eq!(sample_antithetic(3, 4, &mut rng), Err(NesError::OddSamples(3)));
        assert_eq!(sample_antithetic(0, 4, &mut rng), Err(NesError::OddSamples(0)));
    }

    #[test]
    fn antithetic_statistics() {
        let mut rng = Rng::new(2);
        let n = 10_000;
        let dim = 10;
        let v = sample_antithetic(n, dim, &mut rng).unwrap();
        for i in 0..n / 2 {
            for c in 0..dim {
                assert_eq!(v[i][c] + v[n - 1 - i][c], 0.0);
            }
        }
        for c in 0..dim {
            let mean = v.iter().map(|e| e[c]).sum::<f64>() / n as f64;
            assert!(mean.abs() < 1e-12);
        }
        for a in 0..dim {
            for b in 0..dim {
                let cov = v.iter().map(|e| e[a] * e[b]).sum::<f64>() / n as f64;
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((cov - expect).abs() < 0.1, "cov[{a}][{b}] = {cov}");
            }
        }
    }

    #[test]
    fn constant_loss_gives_zero() {
        let x = point(16, 0);
        let cfg = NesConfig::new(0.01, 50 * 2, 9).unwrap();
        let est = estimate_gradient(|_| Ok::<_, Infallible>(3.25), &x, &cfg).unwrap();
        assert!(est.grad.iter().all(|&g| g == 0.0));
        assert_eq!(est.queries_used, 100);
    }

    #[test]
    fn quadratic_cosine_with_true_gradient() {
        let x = point(16, 4);
        let cfg = NesConfig::new(1e-3, 200, 17).unwrap();
        let est = estimate_gradient(
            |p: &Image| Ok::<_, Infallible>(0.5 * dot(p.data(), p.data())),
            &x,
            &cfg,
        )
        .unwrap();
        let c = cosine(&est.grad, x.data());
        assert!(c > 0.9, "cosine {c}");
    }

    #[test]
    fn parallel_matches_serial_bitwise() {
        let x = point(32, 5);
        let w: Vec<f64> = point(32, 6).into_data();
        let loss = |p: &Image| Ok::<_, Infallible>(dot(&w, p.data()).sin() + 0.3 * dot(p.data(), p.data()));
        let mut cfg = NesConfig::new(1e-2, 64, 8).unwrap();
        let serial = estimate_gradient(loss, &x, &cfg).unwrap();
        cfg.parallel = true;
        let par = estimate_gradient(loss, &x, &cfg).unwrap();
        assert_eq!(serial, par);
        cfg.parallel = false;
        assert_eq!(serial, estimate_gradient(loss, &x, &cfg).unwrap());
    }

    #[derive(Debug, thiserror::Error)]
    #[error("stop")]
    struct Stop;

    #[test]
    fn failure_reports_queries_so_far() {
        use std::sync::atomic::AtomicUsize;
        let x = point(4, 0);
        let calls = AtomicUsize::new(0);
        let cfg = NesConfig::new(0.1, 10, 0).unwrap();
        let err = estimate_gradient(
            |_| {
                if calls.fetch_add(1, Ordering::SeqCst) >= 7 {
                    Err(Stop)
                } else {
                    Ok(1.0)
                }
            },
            &x,
            &cfg,
        )
        .unwrap_err();
        assert_eq!(err.queries_used, 7);
    }

    #[test]
    fn orthogonality_edge_cases() {
        let mut rng = Rng::new(0);
        assert_eq!(gaussian_orthogonality_stat(2, 1, &mut rng), 1.0);
        let ortho = vec![vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0]];
        assert_eq!(max_pairwise_cosine(&ortho), 0.0);
    }

    #[test]
    fn projection_ratio_cases() {
        // One unit row parallel to g: (u·g)² / (1·‖g‖²) = 1.
        let u = vec![0.6, 0.8, 0.0];
        let g = vec![1.5, 2.0, 0.0];
        assert!((projection_norm_ratio(&[u.clone()], &g).unwrap() - 1.0).abs() < 1e-15);
        // Unit row at 60 degrees to g: cos² = 1/4.
        let g2 = vec![0.5, 3f64.sqrt() / 2.0, 0.0];
        let r = projection_norm_ratio(&[vec![1.0, 0.0, 0.0]], &g2).unwrap();
        assert!((r - 0.25).abs() < 1e-15);

        // √dim-scaled standard basis: Parseval gives exactly 1.
        let dim = 8;
        let basis: Vec<Vec<f64>> = (0..dim)
            .map(|i| {
                let mut e = vec![0.0; dim];
                e[i] = (dim as f64).sqrt();
                e
            })
            .collect();
        let g = vec![1.0, -2.0, 0.5, 4.0, 0.0, 1.0, -1.0, 2.0];
        assert!((projection_norm_ratio(&basis, &g).unwrap() - 1.0).abs() < 1e-14);

        assert_eq!(projection_norm_ratio(&basis, &[0.0; 8]), Err(NesError::ZeroVector));
        assert!(matches!(
            projection_norm_ratio(&basis, &[1.0; 3]),
            Err(NesError::DimMismatch { .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert_eq!(NesConfig::new(0.1, 3, 0), Err(NesError::OddSamples(3)));
        assert_eq!(NesConfig::new(0.0, 4, 0), Err(NesError::BadSigma(0.0)));
        assert!(NesConfig::default().validate().is_ok());
    }
}
