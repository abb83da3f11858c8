//! Rotation transforms and the sampled expectation-over-transformation loss.
//!
//! Convention: positive angles rotate counterclockwise as the image is
//! displayed (row 0 at the top). Rotation is about the continuous center
//! `((w-1)/2, (h-1)/2)` by inverse mapping: each output pixel samples the
//! source at the rotated-back position with bilinear interpolation, and
//! source positions outside the image contribute 0. Results are clipped to
//! `[0, 1]`. An angle of exactly 0 is the identity map.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{Oracle, OracleError};
use crate::rng::Rng;
use crate::tensor::Image;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("theta_min {min} exceeds theta_max {max}")]
    BadRange { min: f64, max: f64 },
    #[error("m_samples and vote_samples must be positive")]
    ZeroSamples,
    #[error("vote threshold must lie in (0, 1], got {0}")]
    BadThreshold(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EotConfig {
    /// Degrees.
    pub theta_min: f64,
    /// Degrees.
    pub theta_max: f64,
    /// Transform draws per loss evaluation.
    pub m_samples: usize,
    /// Transform draws per success vote.
    pub vote_samples: usize,
    /// Fraction of votes that must land on the target.
    pub vote_threshold: f64,
    /// When set, every loss evaluation uses exactly these angles instead of
    /// fresh draws (and `m_samples` is ignored).
    pub fixed_thetas: Option<Vec<f64>>,
}

impl Default for EotConfig {
    fn default() -> Self {
        Self {
            theta_min: -30.0,
            theta_max: 30.0,
            m_samples: 10,
            vote_samples: 100,
            vote_threshold: 0.9,
            fixed_thetas: None,
        }
    }
}

impl EotConfig {
    pub fn point_mass(theta: f64) -> Self {
        Self {
            theta_min: theta,
            theta_max: theta,
            m_samples: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        if !(self.theta_min <= self.theta_max) {
            return Err(TransformError::BadRange {
                min: self.theta_min,
                max: self.theta_max,
            });
        }
        if self.m_samples == 0 || self.vote_samples == 0 {
            return Err(TransformError::ZeroSamples);
        }
        if matches!(&self.fixed_thetas, Some(t) if t.is_empty()) {
            return Err(TransformError::ZeroSamples);
        }
        if !(self.vote_threshold > 0.0 && self.vote_threshold <= 1.0) {
            return Err(TransformError::BadThreshold(self.vote_threshold));
        }
        Ok(())
    }

    /// Oracle queries per loss evaluation.
    pub fn queries_per_loss(&self) -> usize {
        self.fixed_thetas.as_ref().map_or(self.m_samples, Vec::len)
    }
}

/// Rotates `x` by `theta` degrees (counterclockwise on screen).
pub fn rotate(x: &Image, theta: f64) -> Image {
    if theta == 0.0 {
        return x.clone();
    }
    let shape = x.shape();
    let (h, w, c) = (shape.height, shape.width, shape.channels);
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let (sin, cos) = theta.to_radians().sin_cos();
    let src = x.data();
    let mut out = vec![0.0; shape.len()];
    let fetch = |r: isize, col: isize, ch: usize| -> f64 {
        if r < 0 || col < 0 || r >= h as isize || col >= w as isize {
            0.0
        } else {
            src[shape.index(r as usize, col as usize, ch)]
        }
    };
    for row in 0..h {
        for col in 0..w {
            // Output position in a y-up frame centered on the image.
            let u = col as f64 - cx;
            let v = cy - row as f64;
            // Rotate back by -theta to find the source position.
            let su = u * cos + v * sin;
            let sv = -u * sin + v * cos;
            let sx = su + cx;
            let sy = cy - sv;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (x0, y0) = (x0 as isize, y0 as isize);
            for ch in 0..c {
                let top = fetch(y0, x0, ch) * (1.0 - fx) + fetch(y0, x0 + 1, ch) * fx;
                let bottom = fetch(y0 + 1, x0, ch) * (1.0 - fx) + fetch(y0 + 1, x0 + 1, ch) * fx;
                let value = top * (1.0 - fy) + bottom * fy;
                out[shape.index(row, col, ch)] = value.clamp(0.0, 1.0);
            }
        }
    }
    Image::new(shape, out).expect("same shape")
}

/// Uniform draw on `[theta_min, theta_max]`.
pub fn sample_theta(cfg: &EotConfig, rng: &mut Rng) -> f64 {
    rng.uniform_range(cfg.theta_min, cfg.theta_max)
}

fn log_prob(p: f64) -> f64 {
    p.max(f64::MIN_POSITIVE).ln()
}

fn full_probability(oracle: &dyn Oracle, x: &Image, y: usize) -> Result<f64, OracleError> {
    let out = oracle.classify(x)?;
    match out.probabilities() {
        Some(p) => p
            .get(y)
            .copied()
            .ok_or_else(|| OracleError::InvalidInput(format!("label {y} out of range"))),
        None => Err(OracleError::InvalidInput("EOT loss needs full probability outputs".into())),
    }
}

/// `(1/m) Σ_j log P(y | rotate(x, θ_j))` over fresh draws (or the fixed pool).
/// Costs exactly [`EotConfig::queries_per_loss`] queries.
pub fn eot_loss(
    oracle: &dyn Oracle,
    x: &Image,
    y: usize,
    cfg: &EotConfig,
    rng: &mut Rng,
) -> Result<f64, OracleError> {
    let thetas: Vec<f64> = match &cfg.fixed_thetas {
        Some(t) => t.clone(),
        None => (0..cfg.m_samples).map(|_| sample_theta(cfg, rng)).collect(),
    };
    let mut total = 0.0;
    for &theta in &thetas {
        total += log_prob(full_probability(oracle, &rotate(x, theta), y)?);
    }
    Ok(total / thetas.len() as f64)
}

/// Fraction of `samples` fresh rotations whose top-1 label is `y`.
pub fn adversariality(
    oracle: &dyn Oracle,
    x: &Image,
    y: usize,
    cfg: &EotConfig,
    samples: usize,
    rng: &mut Rng,
) -> Result<f64, OracleError> {
    let mut hits = 0usize;
    for _ in 0..samples {
        let theta = sample_theta(cfg, rng);
        if oracle.classify(&rotate(x, theta))?.top1() == Some(y) {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples as f64)
}
