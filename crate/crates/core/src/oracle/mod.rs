//! Everything an attacker may query.
//!
//! An [`Oracle`] maps an image to a [`ClassifierOutput`], either the full
//! probability vector or a truncated top-k list. Attacks see nothing else:
//! no logits, no gradients, no weights. Query costs are tracked by
//! [`QueryLedger`], a linearizable counter with an optional hard budget.

mod http;
mod mlp;
pub mod wire;

use std::cmp::Ordering as CmpOrdering;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Image, TensorError};

pub use http::HttpOracle;
pub use mlp::{load_model, softmax, Activation, Dense, MlpModel, ModelError, MODEL_FORMAT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    Shape(#[from] TensorError),
    #[error("query budget exhausted after {count} queries")]
    BudgetExhausted { count: u64 },
    #[error("rate limited, retry after {retry_after_ms} ms")]
    RateLimited { retry_after_ms: u64 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("http {status} ({kind}): {detail}")]
    Status {
        status: u16,
        kind: String,
        detail: String,
    },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl OracleError {
    /// True for errors that end an attack as a budget failure rather than a fault.
    pub fn is_budget(&self) -> bool {
        matches!(self, OracleError::BudgetExhausted { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierOutput {
    /// Probabilities for every class.
    Full(Vec<f64>),
    /// The `min(k, classes)` highest-scoring labels, best first, ties broken by
    /// ascending label id.
    TopK { entries: Vec<LabelScore>, k: usize },
}

impl ClassifierOutput {
    /// Label at rank 0.
    pub fn top1(&self) -> Option<usize> {
        match self {
            ClassifierOutput::Full(p) => ranked_labels(p).first().copied(),
            ClassifierOutput::TopK { entries, .. } => entries.first().map(|e| e.label),
        }
    }

    pub fn score(&self, label: usize) -> Option<f64> {
        match self {
            ClassifierOutput::Full(p) => p.get(label).copied(),
            ClassifierOutput::TopK { entries, .. } => {
                entries.iter().find(|e| e.label == label).map(|e| e.score)
            }
        }
    }

    /// Zero-based position of `label` in descending-score order, or `None`
    /// when the label is not visible.
    pub fn rank(&self, label: usize) -> Option<usize> {
        match self {
            ClassifierOutput::Full(p) => {
                let s = *p.get(label)?;
                Some(
                    p.iter()
                        .enumerate()
                        .filter(|&(j, &q)| q > s || (q == s && j < label))
                        .count(),
                )
            }
            ClassifierOutput::TopK { entries, .. } => entries.iter().position(|e| e.label == label),
        }
    }

    /// Visible `(label, score)` pairs, best first.
    pub fn entries(&self) -> Vec<LabelScore> {
        match self {
            ClassifierOutput::Full(p) => ranked_labels(p)
                .into_iter()
                .map(|label| LabelScore {
                    label,
                    score: p[label],
                })
                .collect(),
            ClassifierOutput::TopK { entries, .. } => entries.clone(),
        }
    }

    pub fn probabilities(&self) -> Option<&[f64]> {
        match self {
            ClassifierOutput::Full(p) => Some(p),
            ClassifierOutput::TopK { .. } => None,
        }
    }
}

fn ranked_labels(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| score_order(scores[a], a, scores[b], b));
    idx
}

fn score_order(sa: f64, a: usize, sb: f64, b: usize) -> CmpOrdering {
    sb.total_cmp(&sa).then(a.cmp(&b))
}

/// A strictly increasing affine map applied to top-k scores, standing in for
/// APIs whose scores are monotone in confidence but not probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTransform {
    pub scale: f64,
    pub offset: f64,
}

impl ScoreTransform {
    pub fn new(scale: f64, offset: f64) -> Result<Self, OracleError> {
        if !(scale.is_finite() && scale > 0.0 && offset.is_finite()) {
            return Err(OracleError::InvalidInput(format!(
                "score transform needs finite scale > 0 and finite offset, got ({scale}, {offset})"
            )));
        }
        Ok(Self { scale, offset })
    }

    pub fn apply(&self, score: f64) -> f64 {
        self.scale * score + self.offset
    }
}

/// The `k` highest probabilities (all of them when `k` exceeds the class
/// count), ties broken by ascending label.
///
/// # Panics
///
/// If `k == 0`.
pub fn truncate_topk(probs: &[f64], k: usize) -> ClassifierOutput {
    assert!(k >= 1, "k must be at least 1");
    let take = k.min(probs.len());
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    if take < idx.len() {
        idx.select_nth_unstable_by(take - 1, |&a, &b| score_order(probs[a], a, probs[b], b));
        idx.truncate(take);
    }
    idx.sort_by(|&a, &b| score_order(probs[a], a, probs[b], b));
    ClassifierOutput::TopK {
        entries: idx
            .into_iter()
            .map(|label| LabelScore {
                label,
                score: probs[label],
            })
            .collect(),
        k,
    }
}

/// Applies `transform` to the scores of a top-k output; full outputs pass through.
pub fn transform_scores(out: ClassifierOutput, transform: Option<ScoreTransform>) -> ClassifierOutput {
    match (out, transform) {
        (ClassifierOutput::TopK { entries, k }, Some(t)) => ClassifierOutput::TopK {
            entries: entries
                .into_iter()
                .map(|e| LabelScore {
                    label: e.label,
                    score: t.apply(e.score),
                })
                .collect(),
            k,
        },
        (out, _) => out,
    }
}

/// What a classifier reveals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum OutputMode {
    Full,
    Topk {
        k: usize,
        #[serde(default)]
        transform: Option<ScoreTransform>,
    },
}

impl OutputMode {
    pub fn topk(k: usize) -> Self {
        OutputMode::Topk { k, transform: None }
    }

    pub fn render(&self, probs: Vec<f64>) -> ClassifierOutput {
        match *self {
            OutputMode::Full => ClassifierOutput::Full(probs),
            OutputMode::Topk { k, transform } => transform_scores(truncate_topk(&probs, k), transform),
        }
    }
}

/// Monotone query counter with an optional hard budget. Charges are atomic:
/// concurrent callers never push the count past the budget.
#[derive(Debug)]
pub struct QueryLedger {
    count: AtomicU64,
    budget: Option<u64>,
}

impl QueryLedger {
    pub fn unlimited() -> Self {
        Self {
            count: AtomicU64::new(0),
            budget: None,
        }
    }

    pub fn with_budget(budget: u64) -> Self {
        assert!(budget > 0, "budget must be positive");
        Self {
            count: AtomicU64::new(0),
            budget: Some(budget),
        }
    }

    pub fn new(budget: Option<u64>) -> Self {
        match budget {
            Some(b) => Self::with_budget(b),
            None => Self::unlimited(),
        }
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::SeqCst)
    }

    pub fn budget(&self) -> Option<u64> {
        self.budget
    }

    pub fn remaining(&self) -> Option<u64> {
        self.budget.map(|b| b - self.count())
    }

    /// Adds `n` to the count if that stays within budget; otherwise leaves the
    /// count unchanged. Returns the new count.
    pub fn charge(&self, n: u64) -> Result<u64, OracleError> {
        assert!(n >= 1, "charge of zero queries");
        let mut current = self.count.load(Ordering::SeqCst);
        loop {
            let next = current + n;
            if let Some(b) = self.budget {
                if next > b {
                    return Err(OracleError::BudgetExhausted { count: current });
                }
            }
            match self
                .count
                .compare_exchange_weak(current, next, Ordering::SeqCst, Ordering::SeqCst)
            {
                Ok(_) => return Ok(next),
                Err(actual) => current = actual,
            }
        }
    }
}

impl QueryLedger {
    /// Returns `n` previously charged queries, for calls that were charged
    /// but never answered.
    pub(crate) fn refund(&self, n: u64) {
        self.count.fetch_sub(n, Ordering::SeqCst);
    }
}

/// Query access to a classifier.
pub trait Oracle: Sync {
    fn classify(&self, x: &Image) -> Result<ClassifierOutput, OracleError>;
}

impl<T: Oracle + ?Sized> Oracle for &T {
    fn classify(&self, x: &Image) -> Result<ClassifierOutput, OracleError> {
        (**self).classify(x)
    }
}

impl<T: Oracle + ?Sized + Send> Oracle for Arc<T> {
    fn classify(&self, x: &Image) -> Result<ClassifierOutput, OracleError> {
        (**self).classify(x)
    }
}

impl<T: Oracle + ?Sized> Oracle for Box<T> {
    fn classify(&self, x: &Image) -> Result<ClassifierOutput, OracleError> {
        (**self).classify(x)
    }
}

/// An in-process model behind the black-box interface.
#[derive(Debug, Clone)]
pub struct LocalOracle {
    model: Arc<MlpModel>,
    mode: OutputMode,
    ledger: Arc<QueryLedger>,
}

impl LocalOracle {
    pub fn new(model: Arc<MlpModel>, mode: OutputMode) -> Self {
        Self::with_ledger(model, mode, Arc::new(QueryLedger::unlimited()))
    }

    pub fn with_ledger(model: Arc<MlpModel>, mode: OutputMode, ledger: Arc<QueryLedger>) -> Self {
        Self {
            model,
            mode,
            ledger,
        }
    }

    pub fn full(model: Arc<MlpModel>) -> Self {
        Self::new(model, OutputMode::Full)
    }

    pub fn ledger(&self) -> &Arc<QueryLedger> {
        &self.ledger
    }

    pub fn mode(&self) -> OutputMode {
        self.mode
    }

    pub fn num_classes(&self) -> usize {
        self.model.num_classes()
    }
}

impl Oracle for LocalOracle {
    fn classify(&self, x: &Image) -> Result<ClassifierOutput, OracleError> {
        if x.shape() != self.model.input_shape() {
            return Err(TensorError::ShapeMismatch {
                expected: self.model.input_shape(),
                actual: x.shape(),
            }
            .into());
        }
        self.ledger.charge(1)?;
        let probs = self.model.classify_full(x)?;
        Ok(self.mode.render(probs))
    }
}

/// Wraps an oracle with a ledger that is charged once per forwarded query.
pub struct Metered<O> {
    inner: O,
    ledger: QueryLedger,
}

impl<O: Oracle> Metered<O> {
    pub fn new(inner: O, budget: Option<u64>) -> Self {
        Self {
            inner,
            ledger: QueryLedger::new(budget),
        }
    }

    pub fn ledger(&self) -> &QueryLedger {
        &self.ledger
    }

    pub fn queries(&self) -> u64 {
        self.ledger.count()
    }
}

impl<O: Oracle> Oracle for Metered<O> {
    fn classify(&self, x: &Image) -> Result<ClassifierOutput, OracleError> {
        self.ledger.charge(1)?;
        self.inner.classify(x)
    }
}

/// One query to a remote classifier; see [`HttpOracle`].
pub fn http_classify(endpoint: &str, x: &Image, mode: wire::WireMode) -> Result<ClassifierOutput, OracleError> {
    HttpOracle::new(endpoint, mode).classify(x)
}
