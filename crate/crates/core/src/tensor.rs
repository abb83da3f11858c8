//! Flat-buffer images and the componentwise clamps used by every attack.
//!
//! Pixels are continuous `f64` values with nominal range `[0, 1]`, stored in
//! row-major `(h, w, c)` order. Quantization happens only at export.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: Shape, actual: Shape },
    #[error("buffer of length {len} does not match shape {shape} ({} elements)", shape.len())]
    BadLength { shape: Shape, len: usize },
    #[error("box radius must be finite and non-negative, got {0}")]
    BadRadius(f64),
}

/// Image dimensions, `(height, width, channels)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of pixel `(row, col)` channel `ch`.
    #[inline]
    pub const fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    pub const fn as_array(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

impl std::str::FromStr for Shape {
    type Err = String;

    /// Parses `HxWxC`, e.g. `16x16x1`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('x').collect();
        if parts.len() != 3 {
            return Err(format!("expected HxWxC, got {s:?}"));
        }
        let dims: Result<Vec<usize>, _> = parts.iter().map(|p| p.trim().parse::<usize>()).collect();
        match dims {
            Ok(d) if d.iter().all(|&v| v > 0) => Ok(Shape::new(d[0], d[1], d[2])),
            _ => Err(format!("expected positive integers in {s:?}")),
        }
    }
}

/// A real-valued image: the optimization variable of every attack.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    shape: Shape,
    data: Vec<f64>,
}

impl Image {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self, TensorError> {
        if data.len() != shape.len() {
            return Err(TensorError::BadLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.shape.index(row, col, ch)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same shape, new buffer.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(self.shape, data)
    }

    pub fn check_shape(&self, other: &Image) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                expected: self.shape,
                actual: other.shape,
            });
        }
        Ok(())
    }

    /// `self + scale * direction`, without any projection.
    pub fn offset(&self, direction: &[f64], scale: f64) -> Image {
        assert_eq!(direction.len(), self.data.len(), "direction length");
        let data = self
            .data
            .iter()
            .zip(direction)
            .map(|(x, d)| x + scale * d)
            .collect();
        Image {
            shape: self.shape,
            data,
        }
    }
}

/// The ℓ∞ ball of radius `radius` around `center`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxConstraint {
    center: Image,
    radius: f64,
}

impl BoxConstraint {
    pub fn new(center: Image, radius: f64) -> Result<Self, TensorError> {
        if !(radius.is_finite() && radius >= 0.0) {
            return Err(TensorError::BadRadius(radius));
        }
        Ok(Self { center, radius })
    }

    pub fn center(&self) -> &Image {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Same center, different radius.
    pub fn with_radius(&self, radius: f64) -> Result<Self, TensorError> {
        Self::new(self.center.clone(), radius)
    }
}

/// Componentwise clamp of `x` into `[center - radius, center + radius]`.
///
/// This is the exact ℓ∞ (and ℓ2) nearest point in the box; components already
/// inside are returned untouched.
pub fn project_linf(x: &Image, bx: &BoxConstraint) -> Result<Image, TensorError> {
    bx.center.check_shape(x)?;
    let r = bx.radius;
    let data = x
        .data
        .iter()
        .zip(&bx.center.data)
        .map(|(&v, &c)| v.clamp(c - r, c + r))
        .collect();
    Ok(Image {
        shape: x.shape,
        data,
    })
}

/// Clamp every component into `[0, 1]`. Idempotent.
pub fn clip_valid(x: &Image) -> Image {
    Image {
        shape: x.shape,
        data: x.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    }
}

/// Box projection followed by the valid-range clip. Both are componentwise
/// clamps, so the composition is the projection onto the intersection.
pub fn project_feasible(x: &Image, bx: &BoxConstraint) -> Result<Image, TensorError> {
    project_linf(x, bx).map(|p| clip_valid(&p))
}

/// Maximum componentwise absolute difference.
pub fn linf_dist(a: &Image, b: &Image) -> Result<f64, TensorError> {
    a.check_shape(b)?;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}
