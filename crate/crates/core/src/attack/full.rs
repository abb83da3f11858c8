//! Full-information attacks and the PGD loop they share with EOT.

use std::collections::BTreeSet;

use super::{
    budget_or_error, label_set_loss, label_value, no_observer, pgd_step, AttackConfig, AttackError, AttackEvent,
    AttackResult, Budgeted,
};
use crate::nes::estimate_gradient_indexed;
use crate::oracle::{ClassifierOutput, Oracle, OracleError};
use crate::rng::Rng;
use crate::tensor::{BoxConstraint, Image};

/// Outcome of one success check.
pub(crate) struct Probe {
    pub success: bool,
    pub prob: Option<f64>,
    pub adversariality: Option<f64>,
}

/// PGD on NES estimates of `loss`, with `probe` run before the first step
/// and after every step. `loss` receives the iteration and evaluation index
/// so stochastic objectives can seed themselves reproducibly.
pub(crate) fn drive<L, P>(
    oracle: &dyn Oracle,
    x: &Image,
    cfg: &AttackConfig,
    loss: L,
    mut probe: P,
    observer: &mut dyn FnMut(&AttackEvent<'_>),
) -> Result<AttackResult, AttackError>
where
    L: Fn(&dyn Oracle, usize, usize, &Image) -> Result<f64, OracleError> + Sync,
    P: FnMut(&dyn Oracle, &Image) -> Result<Probe, OracleError>,
{
    cfg.validate()?;
    let budget = Budgeted::new(oracle, cfg.max_queries);
    let bx = BoxConstraint::new(x.clone(), cfg.epsilon)?;
    let mut rng = Rng::new(cfg.nes.seed);
    let mut cur = x.clone();
    let mut acc = vec![0.0; x.len()];
    let mut iterations = 0;
    let mut last = Probe {
        success: false,
        prob: None,
        adversariality: None,
    };

    match probe(&budget, &cur) {
        Ok(p) => last = p,
        Err(e) => budget_or_error(e)?,
    }
    while !last.success {
        let iter = iterations;
        let est = estimate_gradient_indexed(|j, z| loss(&budget, iter, j, z), &cur, &cfg.nes, &mut rng);
        let grad = match est {
            Ok(g) => g.grad,
            Err(e) => {
                budget_or_error(e.source)?;
                break;
            }
        };
        let (next, next_acc) = pgd_step(&cur, &grad, &acc, cfg, &bx);
        cur = next;
        acc = next_acc;
        iterations += 1;
        match probe(&budget, &cur) {
            Ok(p) => last = p,
            Err(e) => {
                budget_or_error(e)?;
                break;
            }
        }
        observer(&AttackEvent::Step {
            iteration: iterations,
            x: &cur,
            queries: budget.queries(),
        });
    }
    Ok(AttackResult {
        adv: cur,
        success: last.success,
        weak_success: last.success,
        queries: budget.queries(),
        final_target_prob: last.prob,
        epsilon_achieved: cfg.epsilon,
        iterations,
        adversariality: last.adversariality,
    })
}

enum Goal {
    Target(usize),
    Avoid(usize),
    AvoidSet(BTreeSet<usize>),
}

impl Goal {
    /// Quantity to maximize.
    fn value(&self, out: &ClassifierOutput) -> f64 {
        match self {
            Goal::Target(y) => label_value(out, *y),
            Goal::Avoid(y) => -label_value(out, *y),
            Goal::AvoidSet(s) => -label_set_loss(out, s),
        }
    }

    fn probe(&self, out: &ClassifierOutput) -> Probe {
        let top = out.top1();
        let (success, prob) = match self {
            Goal::Target(y) => (top == Some(*y), out.score(*y)),
            Goal::Avoid(y) => (top.is_some_and(|t| t != *y), out.score(*y)),
            Goal::AvoidSet(s) => (top.is_some_and(|t| !s.contains(&t)), Some(label_set_loss(out, s))),
        };
        Probe {
            success,
            prob,
            adversariality: None,
        }
    }
}

fn run_goal(
    oracle: &dyn Oracle,
    x: &Image,
    goal: Goal,
    cfg: &AttackConfig,
    observer: &mut dyn FnMut(&AttackEvent<'_>),
) -> Result<AttackResult, AttackError> {
    drive(
        oracle,
        x,
        cfg,
        |o, _, _, z| o.classify(z).map(|out| goal.value(&out)),
        |o, z| o.classify(z).map(|out| goal.probe(&out)),
        observer,
    )
}

/// Maximizes `log P(y_adv | x')` inside the ε-box until `y_adv` is the top-1
/// label or the query cap is reached.
pub fn targeted_attack(
    oracle: &dyn Oracle,
    x: &Image,
    y_adv: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    targeted_attack_observed(oracle, x, y_adv, cfg, &mut no_observer)
}

pub fn targeted_attack_observed(
    oracle: &dyn Oracle,
    x: &Image,
    y_adv: usize,
    cfg: &AttackConfig,
    observer: &mut dyn FnMut(&AttackEvent<'_>),
) -> Result<AttackResult, AttackError> {
    run_goal(oracle, x, Goal::Target(y_adv), cfg, observer)
}

/// Minimizes `log P(y_true | x')` until the top-1 label differs from `y_true`.
pub fn untargeted_attack(
    oracle: &dyn Oracle,
    x: &Image,
    y_true: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    untargeted_attack_observed(oracle, x, y_true, cfg, &mut no_observer)
}

pub fn untargeted_attack_observed(
    oracle: &dyn Oracle,
    x: &Image,
    y_true: usize,
    cfg: &AttackConfig,
    observer: &mut dyn FnMut(&AttackEvent<'_>),
) -> Result<AttackResult, AttackError> {
    run_goal(oracle, x, Goal::Avoid(y_true), cfg, observer)
}

/// Minimizes the largest score over `labels` until the top-1 label lies
/// outside the set.
pub fn label_set_attack(
    oracle: &dyn Oracle,
    x: &Image,
    labels: &BTreeSet<usize>,
    cfg: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    label_set_attack_observed(oracle, x, labels, cfg, &mut no_observer)
}

pub fn label_set_attack_observed(
    oracle: &dyn Oracle,
    x: &Image,
    labels: &BTreeSet<usize>,
    cfg: &AttackConfig,
    observer: &mut dyn FnMut(&AttackEvent<'_>),
) -> Result<AttackResult, AttackError> {
    if labels.is_empty() {
        return Err(AttackError::Config("label set is empty".into()));
    }
    run_goal(oracle, x, Goal::AvoidSet(labels.clone()), cfg, observer)
}
