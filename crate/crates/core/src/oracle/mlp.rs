//! Dense multilayer perceptrons with a softmax head.
//!
//! # Model file format
//!
//! A model is a JSON document:
//!
//! ```json
//! {
//!   "format": "nbx-mlp-v1",
//!   "input_shape": [16, 16, 1],
//!   "layers": [
//!     { "inputs": 256, "outputs": 64, "activation": "relu",
//!       "weights": [ ... 64 * 256 values, row-major (output, input) ... ],
//!       "biases":  [ ... 64 values ... ] },
//!     { "inputs": 64, "outputs": 10, "activation": "identity",
//!       "weights": [ ... ], "biases": [ ... ] }
//!   ]
//! }
//! ```
//!
//! `activation` is `"relu"` or `"identity"`. The first layer's `inputs` must
//! equal `h * w * c`, each later layer's `inputs` the previous `outputs`, and
//! the last layer's `outputs` is the number of classes. The softmax is
//! implicit. Numbers are written in shortest round-trip form, so save/load is
//! bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Image, Shape, TensorError};

pub const MODEL_FORMAT: &str = "nbx-mlp-v1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column} (field `{field}`): {message}")]
    Parse {
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("unsupported model format {0:?}, expected {MODEL_FORMAT:?}")]
    Format(String),
    #[error("layer {layer}: {message}")]
    Dimension { layer: usize, message: String },
    #[error("model has no layers")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn pre_activation(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.biases)
            .map(|(row, b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    input_shape: [usize; 3],
    layers: Vec<Dense>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    input_shape: Shape,
    layers: Vec<Dense>,
}

impl MlpModel {
    pub fn new(input_shape: Shape, layers: Vec<Dense>) -> Result<Self, ModelError> {
        let model = Self {
            input_shape,
            layers,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.layers.is_empty() {
            return Err(ModelError::Empty);
        }
        let mut expected_in = self.input_shape.len();
        for (i, layer) in self.layers.iter().enumerate() {
            let fail = |message: String| ModelError::Dimension { layer: i, message };
            if layer.inputs != expected_in {
                return Err(fail(format!(
                    "expects {} inputs but receives {expected_in}",
                    layer.inputs
                )));
            }
            if layer.outputs == 0 {
                return Err(fail("has zero outputs".into()));
            }
            if layer.weights.len() != layer.inputs * layer.outputs {
                return Err(fail(format!(
                    "weights has {} values, expected {} x {} = {}",
                    layer.weights.len(),
                    layer.outputs,
                    layer.inputs,
                    layer.inputs * layer.outputs
                )));
            }
            if layer.biases.len() != layer.outputs {
                return Err(fail(format!(
                    "biases has {} values, expected {}",
                    layer.biases.len(),
                    layer.outputs
                )));
            }
            if layer.weights.iter().chain(&layer.biases).any(|v| !v.is_finite()) {
                return Err(fail("contains a non-finite parameter".into()));
            }
            expected_in = layer.outputs;
        }
        Ok(())
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    fn check_input(&self, x: &Image) -> Result<(), TensorError> {
        if x.shape() != self.input_shape {
            return Err(TensorError::ShapeMismatch {
                expected: self.input_shape,
                actual: x.shape(),
            });
        }
        Ok(())
    }

    pub fn logits(&self, x: &Image) -> Result<Vec<f64>, TensorError> {
        self.check_input(x)?;
        let mut act = x.data().to_vec();
        for layer in &self.layers {
            act = layer
                .pre_activation(&act)
                .into_iter()
                .map(|v| layer.activation.apply(v))
                .collect();
        }
        Ok(act)
    }

    pub fn classify_full(&self, x: &Image) -> Result<Vec<f64>, TensorError> {
        self.logits(x).map(|l| softmax(&l))
    }

    /// Exact `∇_x log P(y | x)` by reverse accumulation. ReLU derivative at 0 is 0.
    ///
    /// White-box: used to validate black-box estimates, never by attacks.
    pub fn analytic_logprob_grad(&self, x: &Image, y: usize) -> Result<Vec<f64>, TensorError> {
        self.check_input(x)?;
        assert!(y < self.num_classes(), "label {y} out of range");
        let mut pres: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut act = x.data().to_vec();
        for layer in &self.layers {
            let pre = layer.pre_activation(&act);
            act = pre.iter().map(|&v| layer.activation.apply(v)).collect();
            pres.push(pre);
        }
        let probs = softmax(&act);
        // d log p_y / d logits = e_y - p
        let mut delta: Vec<f64> = probs.iter().map(|p| -p).collect();
        delta[y] += 1.0;
        for (li, layer) in self.layers.iter().enumerate().rev() {
            for (d, &pre) in delta.iter_mut().zip(&pres[li]) {
                *d *= layer.activation.derivative(pre);
            }
            let mut back = vec![0.0; layer.inputs];
            for (row, d) in layer.weights.chunks_exact(layer.inputs).zip(&delta) {
                if *d != 0.0 {
                    for (b, w) in back.iter_mut().zip(row) {
                        *b += d * w;
                    }
                }
            }
            delta = back;
        }
        Ok(delta)
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            input_shape: self.input_shape.as_array(),
            layers: self.layers.clone(),
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: ModelFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            ModelError::Parse {
                line: inner.line(),
                column: inner.column(),
                field,
                message: inner.to_string(),
            }
        })?;
        if file.format != MODEL_FORMAT {
            return Err(ModelError::Format(file.format));
        }
        let [h, w, c] = file.input_shape;
        MlpModel::new(Shape::new(h, w, c), file.layers)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Loads and validates a model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel, ModelError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    MlpModel::from_json(&text)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
