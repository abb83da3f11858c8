//! Seeded generators for victim models and smooth test images.

use serde::{Deserialize, Serialize};

use crate::oracle::{Activation, Dense, MlpModel};
use crate::rng::Rng;
use crate::tensor::{Image, Shape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_shape: Shape,
    pub hidden: Vec<usize>,
    pub classes: usize,
    /// Multiplies the output layer; larger values give more confident predictions.
    pub weight_scale: f64,
    pub first_layer: FirstLayer,
    pub seed: u64,
}

/// How first-layer weights are laid out over the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FirstLayer {
    /// Independent Gaussian weights per pixel.
    Iid,
    /// Each unit's weights are a smooth random field (a `grid x grid`
    /// lattice upsampled bilinearly) restricted to the disk inscribed in the
    /// image. Units then ignore the corners, which rotations about the
    /// center fill with zeros, and respond similarly to slightly rotated
    /// inputs.
    SmoothDisk { grid: usize },
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self {
            input_shape: Shape::new(16, 16, 1),
            hidden: vec![64],
            classes: 10,
            weight_scale: 16.0,
            first_layer: FirstLayer::Iid,
            seed: 0,
        }
    }
}

/// Pixel contrast of the images paired with [`desk_spec`] models.
pub const DESK_CONTRAST: f64 = 0.3;
/// Pixel contrast of the images paired with [`rotation_spec`] models.
pub const ROTATION_CONTRAST: f64 = 0.15;

/// The small victim used throughout the examples and tests: 16x16x1 inputs,
/// one hidden layer of 64 units, 10 classes.
pub fn desk_spec(seed: u64) -> MlpSpec {
    MlpSpec {
        seed,
        ..MlpSpec::default()
    }
}

/// Like [`desk_spec`] but with a [`FirstLayer::SmoothDisk`] input layer, so
/// the clean prediction mostly survives small rotations.
pub fn rotation_spec(seed: u64) -> MlpSpec {
    MlpSpec {
        seed,
        first_layer: FirstLayer::SmoothDisk { grid: 4 },
        ..MlpSpec::default()
    }
}

/// He-style random weights. First-layer biases center each unit on the
/// mid-gray image so pre-activations straddle zero for inputs in `[0, 1]`,
/// and output rows are centered.
pub fn random_mlp(spec: &MlpSpec) -> MlpModel {
    let mut rng = Rng::derive(spec.seed, 0x6d6c70);
    let mut widths = vec![spec.input_shape.len()];
    widths.extend(&spec.hidden);
    widths.push(spec.classes);
    let last = widths.len() - 2;
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(i, pair)| {
            let (inputs, outputs) = (pair[0], pair[1]);
            let gain = if i == last { spec.weight_scale } else { 2f64.sqrt() };
            let weights: Vec<f64> = match spec.first_layer {
                FirstLayer::SmoothDisk { grid } if i == 0 => (0..outputs)
                    .flat_map(|_| disk_field(spec.input_shape, grid, gain, &mut rng))
                    .collect(),
                _ => (0..inputs * outputs)
                    .map(|_| gain * rng.normal() / (inputs as f64).sqrt())
                    .collect(),
            };
            let weights = if i == last { center_rows(weights, inputs) } else { weights };
            let biases = if i == 0 {
                weights
                    .chunks(inputs)
                    .map(|row| -0.5 * row.iter().sum::<f64>())
                    .collect()
            } else {
                vec![0.0; outputs]
            };
            Dense {
                inputs,
                outputs,
                activation: if i == last { Activation::Identity } else { Activation::Relu },
                weights,
                biases,
            }
        })
        .collect();
    MlpModel::new(spec.input_shape, layers).expect("consistent widths")
}

/// Subtracts each row's mean. Hidden units have similar mean activations, so
/// zero-sum output rows keep any class from dominating on average.
fn center_rows(mut weights: Vec<f64>, width: usize) -> Vec<f64> {
    for row in weights.chunks_mut(width) {
        let mean = row.iter().sum::<f64>() / width as f64;
        row.iter_mut().for_each(|w| *w -= mean);
    }
    weights
}

/// A smooth Gaussian field masked to the inscribed disk, scaled to norm `gain`.
fn disk_field(shape: Shape, grid: usize, gain: f64, rng: &mut Rng) -> Vec<f64> {
    let grid = grid.max(2);
    let lattice: Vec<f64> = (0..grid * grid * shape.channels).map(|_| rng.normal()).collect();
    let mut field = upsample(&lattice, grid, shape);
    let cy = (shape.height as f64 - 1.0) / 2.0;
    let cx = (shape.width as f64 - 1.0) / 2.0;
    let radius = cx.min(cy);
    for row in 0..shape.height {
        for col in 0..shape.width {
            let d = ((row as f64 - cy).powi(2) + (col as f64 - cx).powi(2)).sqrt();
            if d > radius {
                for ch in 0..shape.channels {
                    field[shape.index(row, col, ch)] = 0.0;
                }
            }
        }
    }
    let norm = field.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        field.iter_mut().for_each(|v| *v *= gain / norm);
    }
    field
}

/// Bilinear upsampling of a `grid x grid` lattice (channels interleaved) to `shape`.
fn upsample(lattice: &[f64], grid: usize, shape: Shape) -> Vec<f64> {
    let at = |gr: usize, gc: usize, ch: usize| lattice[(gr * grid + gc) * shape.channels + ch];
    let scale = |n: usize| if n > 1 { (grid - 1) as f64 / (n - 1) as f64 } else { 0.0 };
    let (sr, sc) = (scale(shape.height), scale(shape.width));
    let mut data = vec![0.0; shape.len()];
    for row in 0..shape.height {
        let fr = row as f64 * sr;
        let r0 = (fr.floor() as usize).min(grid - 2);
        let tr = fr - r0 as f64;
        for col in 0..shape.width {
            let fc = col as f64 * sc;
            let c0 = (fc.floor() as usize).min(grid - 2);
            let tc = fc - c0 as f64;
            for ch in 0..shape.channels {
                let top = at(r0, c0, ch) * (1.0 - tc) + at(r0, c0 + 1, ch) * tc;
                let bottom = at(r0 + 1, c0, ch) * (1.0 - tc) + at(r0 + 1, c0 + 1, ch) * tc;
                data[shape.index(row, col, ch)] = top * (1.0 - tr) + bottom * tr;
            }
        }
    }
    data
}

/// Bilinear upsampling of a coarse `grid x grid` lattice of values drawn
/// uniformly from `0.5 ± contrast`, one lattice per channel, rounded to
/// `f32`-representable values.
pub fn smooth_image(shape: Shape, grid: usize, contrast: f64, rng: &mut Rng) -> Image {
    let grid = grid.max(2);
    let lattice: Vec<f64> = (0..grid * grid * shape.channels)
        .map(|_| rng.uniform_range(0.5 - contrast, 0.5 + contrast))
        .collect();
    let data = upsample(&lattice, grid, shape)
        .into_iter()
        .map(|v| (v.clamp(0.0, 1.0) as f32) as f64)
        .collect();
    Image::new(shape, data).expect("sized to shape")
}

/// Draws smooth images until one is classified as `label`.
pub fn image_of_class(
    model: &MlpModel,
    label: usize,
    contrast: f64,
    rng: &mut Rng,
    max_tries: usize,
) -> Option<Image> {
    (0..max_tries).find_map(|_| {
        let x = smooth_image(model.input_shape(), 4, contrast, rng);
        let p = model.classify_full(&x).ok()?;
        (argmax(&p) == label).then_some(x)
    })
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_spread_over_classes() {
        let spec = MlpSpec::default();
        let a = random_mlp(&spec);
        assert_eq!(a, random_mlp(&spec));
        let mut rng = Rng::new(1);
        let mut counts = vec![0usize; spec.classes];
        for _ in 0..500 {
            let x = smooth_image(spec.input_shape, 4, 0.5, &mut rng);
            counts[argmax(&a.classify_full(&x).unwrap())] += 1;
        }
        let hit = counts.iter().filter(|&&c| c > 0).count();
        assert!(hit >= spec.classes / 2, "{counts:?}");
    }

    #[test]
    fn smooth_images_are_valid_f32() {
        let mut rng = Rng::new(2);
        let x = smooth_image(Shape::new(9, 7, 3), 4, 0.5, &mut rng);
        assert!(x.data().iter().all(|&v| (0.0..=1.0).contains(&v) && (v as f32) as f64 == v));
        let corner = smooth_image(Shape::new(1, 1, 1), 4, 0.5, &mut Rng::new(3));
        assert_eq!(corner.len(), 1);
    }

    #[test]
    fn argmax_ties_low() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
    }
}
