//! Attack drivers: sign-PGD with momentum on NES gradient estimates.
//!
//! Every driver wraps the caller's oracle in a private ledger capped at
//! `max_queries`, probes the classification once before the first step and
//! again after every step, and reports the ledger's final count. Running out
//! of budget ends the attack with `success == false`; it is not an error.

mod eot;
mod full;
mod partial;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nes::{NesConfig, NesError};
use crate::oracle::{ClassifierOutput, Oracle, OracleError, QueryLedger};
use crate::tensor::{clip_valid, project_linf, BoxConstraint, Image, TensorError};
use crate::transform::{EotConfig, TransformError};

pub use eot::{eot_attack, eot_attack_observed};
pub use full::{
    label_set_attack, label_set_attack_observed, targeted_attack, targeted_attack_observed, untargeted_attack,
    untargeted_attack_observed,
};
pub use partial::{partial_info_attack, partial_info_attack_observed, PartialEvent, PartialInfoState, PartialPhase};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nes(#[from] NesError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("oracle error: {0}")]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepRule {
    /// `x + lr · sign(m)`.
    #[default]
    Sign,
    /// `x + lr · m`.
    Plain,
}

/// Schedule of the partial-information attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartialConfig {
    /// PGD steps between two epsilon searches.
    pub pgd_steps: usize,
    /// Multiplicative epsilon shrink tried first in each search.
    pub shrink: f64,
    /// Rejected shrink attempts per search before going back to PGD. Each
    /// rejection halves the attempted decrease.
    pub max_rollbacks: usize,
}

impl Default for PartialConfig {
    fn default() -> Self {
        Self {
            pgd_steps: 10,
            shrink: 0.9,
            max_rollbacks: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// ℓ∞ radius around the original image.
    pub epsilon: f64,
    pub lr: f64,
    pub momentum: f64,
    pub nes: NesConfig,
    pub max_queries: u64,
    pub step_rule: StepRule,
    /// Truncation level the partial-information attack expects.
    pub k: Option<usize>,
    pub partial: PartialConfig,
    pub eot: Option<EotConfig>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            lr: 0.01,
            momentum: 0.9,
            nes: NesConfig::default(),
            max_queries: 200_000,
            step_rule: StepRule::Sign,
            k: None,
            partial: PartialConfig::default(),
            eot: None,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), AttackError> {
        self.nes.validate()?;
        let bad = |m: String| Err(AttackError::Config(m));
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.max_queries < self.nes.n_samples as u64 {
            return bad(format!(
                "max_queries {} is below one gradient estimate ({} samples)",
                self.max_queries, self.nes.n_samples
            ));
        }
        if self.k == Some(0) {
            return bad("k must be at least 1".into());
        }
        let p = &self.partial;
        if p.pgd_steps == 0 || !(p.shrink > 0.0 && p.shrink < 1.0) {
            return bad("partial schedule needs pgd_steps >= 1 and shrink in (0, 1)".into());
        }
        if let Some(eot) = &self.eot {
            eot.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub adv: Image,
    pub success: bool,
    /// Partial information: the target is in the top-k at the final epsilon
    /// but not necessarily first. Equals `success` for the other attacks.
    pub weak_success: bool,
    /// Oracle calls answered during the attack, probes included.
    pub queries: u64,
    /// Probability (or score) of the attack's reference label at `adv`:
    /// the target for targeted attacks, the true label for untargeted ones,
    /// the label-set maximum for label-set attacks, and the mean target
    /// probability over the final vote for EOT.
    pub final_target_prob: Option<f64>,
    /// Radius of the box around the original that `adv` lies in.
    pub epsilon_achieved: f64,
    /// PGD steps taken.
    pub iterations: usize,
    /// EOT only: fraction of the final vote classified as the target.
    pub adversariality: Option<f64>,
}

/// Progress notifications for tracing and instrumentation.
#[derive(Debug)]
pub enum AttackEvent<'a> {
    /// A PGD iterate was produced and probed.
    Step {
        iteration: usize,
        x: &'a Image,
        queries: u64,
    },
    /// Partial-information attack: a candidate state was probed.
    Partial(&'a PartialEvent),
}

/// Observer that ignores every event.
pub fn no_observer(_: &AttackEvent<'_>) {}

/// One PGD ascent step.
///
/// Updates the momentum accumulator `acc ← μ·acc + (1-μ)·grad`, moves along
/// `sign(acc)` (or `acc` itself with [`StepRule::Plain`]) by `lr`, then
/// projects onto the ε-box and clips to `[0, 1]`. Pass a negated gradient to
/// descend.
///
/// # Panics
///
/// If `x`, `grad`, `acc` and the box center disagree in length.
pub fn pgd_step(x: &Image, grad: &[f64], acc: &[f64], cfg: &AttackConfig, bx: &BoxConstraint) -> (Image, Vec<f64>) {
    assert_eq!(grad.len(), x.len(), "gradient length");
    assert_eq!(acc.len(), x.len(), "accumulator length");
    let mu = cfg.momentum;
    let acc: Vec<f64> = acc.iter().zip(grad).map(|(a, g)| mu * a + (1.0 - mu) * g).collect();
    let step: Vec<f64> = match cfg.step_rule {
        StepRule::Sign => acc.iter().map(|&a| sign(a)).collect(),
        StepRule::Plain => acc.clone(),
    };
    let moved = x.offset(&step, cfg.lr);
    let projected = project_linf(&moved, bx).expect("box matches iterate shape");
    (clip_valid(&projected), acc)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `F*`: the largest score among `targets`. Labels absent from a truncated
/// output contribute nothing; with none present the value is 0.
pub fn label_set_loss(output: &ClassifierOutput, targets: &BTreeSet<usize>) -> f64 {
    output
        .entries()
        .iter()
        .filter(|e| targets.contains(&e.label))
        .map(|e| e.score)
        .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.max(s))))
        .unwrap_or(0.0)
}

/// Value the attacks maximize for label `y`: `ln p_y` for full outputs, the
/// raw score for truncated ones. A label missing from a truncated list is
/// scored as the lowest score shown, an upper bound on its true score.
pub(crate) fn label_value(out: &ClassifierOutput, y: usize) -> f64 {
    match out {
        ClassifierOutput::Full(p) => p.get(y).copied().unwrap_or(0.0).max(f64::MIN_POSITIVE).ln(),
        ClassifierOutput::TopK { entries, .. } => out
            .score(y)
            .or_else(|| entries.last().map(|e| e.score))
            .unwrap_or(0.0),
    }
}

/// The caller's oracle behind the attack's own ledger. Calls the inner
/// oracle fails to answer are not counted.
pub(crate) struct Budgeted<'a> {
    inner: &'a dyn Oracle,
    ledger: QueryLedger,
}

impl<'a> Budgeted<'a> {
    pub(crate) fn new(inner: &'a dyn Oracle, max_queries: u64) -> Self {
        Self {
            inner,
            ledger: QueryLedger::with_budget(max_queries),
        }
    }

    pub(crate) fn queries(&self) -> u64 {
        self.ledger.count()
    }
}

impl Oracle for Budgeted<'_> {
    fn classify(&self, x: &Image) -> Result<ClassifierOutput, OracleError> {
        self.ledger.charge(1)?;
        self.inner.classify(x).inspect_err(|_| self.ledger.refund(1))
    }
}

/// Splits oracle failures into "budget gone, stop quietly" and real errors.
pub(crate) fn budget_or_error(e: OracleError) -> Result<(), AttackError> {
    if e.is_budget() {
        Ok(())
    } else {
        Err(AttackError::Oracle(e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn cfg(momentum: f64, lr: f64) -> AttackConfig {
        AttackConfig {
            momentum,
            lr,
            epsilon: 0.3,
            ..AttackConfig::default()
        }
    }

    #[test]
    fn zero_gradient_leaves_x() {
        let x = Image::new(Shape::new(1, 3, 1), vec![0.2, 0.5, 0.9]).unwrap();
        let bx = BoxConstraint::new(x.clone(), 0.1).unwrap();
        let (next, acc) = pgd_step(&x, &[0.0; 3], &[0.0; 3], &cfg(0.0, 0.01), &bx);
        assert_eq!(next, x);
        assert_eq!(acc, vec![0.0; 3]);
    }

    #[test]
    fn interior_step_is_along_direction() {
        let x = Image::filled(Shape::new(1, 4, 1), 0.5);
        let bx = BoxConstraint::new(x.clone(), 0.1).unwrap();
        let g = [0.3, -2.0, 0.0, 1e-9];
        let (next, _) = pgd_step(&x, &g, &[0.0; 4], &cfg(0.0, 0.01), &bx);
        let d: Vec<f64> = next.data().iter().zip(x.data()).map(|(a, b)| a - b).collect();
        let expect = [1.0, -1.0, 0.0, 1.0];
        for (a, e) in d.iter().zip(expect) {
            assert!((a - 0.01 * e).abs() < 1e-15);
        }
        let mut plain = cfg(0.0, 0.01);
        plain.step_rule = StepRule::Plain;
        let (next, _) = pgd_step(&x, &g, &[0.0; 4], &plain, &bx);
        for ((a, b), gi) in next.data().iter().zip(x.data()).zip(g) {
            assert!((a - b - 0.01 * gi).abs() < 1e-15);
        }
    }

    #[test]
    fn momentum_recurrence_replay() {
        let x = Image::filled(Shape::new(1, 3, 1), 0.5);
        let bx = BoxConstraint::new(x.clone(), 0.3).unwrap();
        let c = cfg(0.9, 0.01);
        let g1 = [1.0, -2.0, 0.5];
        let g2 = [-3.0, 0.1, 0.5];
        let (x1, a1) = pgd_step(&x, &g1, &[0.0; 3], &c, &bx);
        let (x2, a2) = pgd_step(&x1, &g2, &a1, &c, &bx);
        for i in 0..3 {
            let h1 = 0.1 * g1[i];
            let h2 = 0.9 * h1 + 0.1 * g2[i];
            assert!((a1[i] - h1).abs() < 1e-12);
            assert!((a2[i] - h2).abs() < 1e-12);
            let replay = 0.5 + 0.01 * h1.signum() + 0.01 * h2.signum();
            assert!((x2.data()[i] - replay).abs() < 1e-12);
        }
    }

    #[test]
    fn step_respects_box_and_range() {
        let x = Image::new(Shape::new(1, 2, 1), vec![0.99, 0.02]).unwrap();
        let bx = BoxConstraint::new(x.clone(), 0.05).unwrap();
        let (next, _) = pgd_step(&x, &[1.0, -1.0], &[0.0; 2], &cfg(0.0, 0.5), &bx);
        assert_eq!(next.data(), &[1.0, 0.0]);
    }

    #[test]
    fn label_set_loss_cases() {
        let full = ClassifierOutput::Full(vec![0.5, 0.3, 0.2]);
        let set: BTreeSet<usize> = [1, 2].into();
        assert_eq!(label_set_loss(&full, &set), 0.3);
        let top = crate::oracle::truncate_topk(&[0.5, 0.3, 0.2], 1);
        assert_eq!(label_set_loss(&top, &set), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(AttackConfig::default().validate().is_ok());
        let mut c = AttackConfig::default();
        c.momentum = 1.0;
        assert!(c.validate().is_err());
        let mut c = AttackConfig::default();
        c.max_queries = 10;
        assert!(c.validate().is_err());
        let mut c = AttackConfig::default();
        c.epsilon = 0.0;
        assert!(c.validate().is_err());
    }
}
