//! Targeted attack against a classifier that reveals only its top-k labels.
//!
//! The attack starts from an image `x_0` that the classifier already places
//! the target in the top-k for, and alternates two phases around the
//! original image `x_i`:
//!
//! 1. a few PGD steps maximizing the target's score inside the current
//!    ε-box (steps that push the target out of the top-k are undone);
//! 2. a backtracking search for a smaller ε: project the iterate onto the
//!    box of radius `max(ε_target, δ·ε)` and keep it if the target is still
//!    in the top-k, otherwise halve the attempted decrease and retry, up to a
//!    per-round limit.
//!
//! It succeeds once ε has reached the target radius and the target label is
//! ranked first.

use super::{
    budget_or_error, label_value, no_observer, pgd_step, AttackConfig, AttackError, AttackEvent, AttackResult,
    Budgeted,
};
use crate::nes::estimate_gradient_indexed;
use crate::oracle::{ClassifierOutput, Oracle, OracleError};
use crate::rng::Rng;
use crate::tensor::{clip_valid, linf_dist, project_linf, BoxConstraint, Image};

/// An accepted iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialInfoState {
    pub x_t: Image,
    pub eps_t: f64,
    /// Zero-based rank of the target label at `x_t`; always below `k`.
    pub rank_of_target: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartialPhase {
    /// The starting image was probed.
    Start,
    /// A PGD step within the current ε.
    Pgd,
    /// A candidate ε from the backtracking search.
    Search,
}

/// One probed candidate. `state` is the accepted state after the decision.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialEvent {
    pub phase: PartialPhase,
    pub accepted: bool,
    pub candidate_eps: f64,
    /// Rank of the target at the candidate, `None` when outside the top-k.
    pub candidate_rank: Option<usize>,
    pub state: PartialInfoState,
    pub queries: u64,
}

struct Reading {
    rank: Option<usize>,
    score: Option<f64>,
}

fn read(out: &ClassifierOutput, y: usize, k: usize) -> Reading {
    let rank = out.rank(y).filter(|&r| r < k);
    Reading {
        rank,
        score: rank.and_then(|_| out.score(y)),
    }
}

/// `x_i` is the image to perturb, `x_0` a starting image whose top-k
/// contains `y_adv`.
pub fn partial_info_attack(
    oracle: &dyn Oracle,
    x_i: &Image,
    x_0: &Image,
    y_adv: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    partial_info_attack_observed(oracle, x_i, x_0, y_adv, cfg, &mut no_observer)
}

pub fn partial_info_attack_observed(
    oracle: &dyn Oracle,
    x_i: &Image,
    x_0: &Image,
    y_adv: usize,
    cfg: &AttackConfig,
    observer: &mut dyn FnMut(&AttackEvent<'_>),
) -> Result<AttackResult, AttackError> {
    cfg.validate()?;
    x_i.check_shape(x_0)?;
    let budget = Budgeted::new(oracle, cfg.max_queries);
    let target_eps = cfg.epsilon;
    let failed = |adv: &Image, eps: f64, queries: u64| AttackResult {
        adv: adv.clone(),
        success: false,
        weak_success: false,
        queries,
        final_target_prob: None,
        epsilon_achieved: eps,
        iterations: 0,
        adversariality: None,
    };

    let first = match budget.classify(x_i) {
        Ok(out) => out,
        Err(e) => {
            budget_or_error(e)?;
            return Ok(failed(x_i, 0.0, budget.queries()));
        }
    };
    let k = truncation(&first, cfg)?;
    if first.rank(y_adv) == Some(0) {
        return Ok(AttackResult {
            adv: x_i.clone(),
            success: true,
            weak_success: true,
            queries: budget.queries(),
            final_target_prob: first.score(y_adv),
            epsilon_achieved: target_eps,
            iterations: 0,
            adversariality: None,
        });
    }

    let start = match budget.classify(x_0) {
        Ok(out) => read(&out, y_adv, k),
        Err(e) => {
            budget_or_error(e)?;
            return Ok(failed(x_i, 0.0, budget.queries()));
        }
    };
    let Some(rank) = start.rank else {
        return Err(AttackError::Config(format!(
            "starting image does not have label {y_adv} in its top {k}"
        )));
    };

    let mut eps = linf_dist(x_0, x_i)?.max(target_eps);
    let mut state = PartialInfoState {
        x_t: x_0.clone(),
        eps_t: eps,
        rank_of_target: rank,
    };
    let mut score = start.score;
    let mut acc = vec![0.0; x_i.len()];
    let mut rng = Rng::new(cfg.nes.seed);
    let mut iterations = 0;
    let mut emit = |phase, accepted, candidate_eps, candidate_rank, state: &PartialInfoState, queries| {
        let ev = PartialEvent {
            phase,
            accepted,
            candidate_eps,
            candidate_rank,
            state: state.clone(),
            queries,
        };
        observer(&AttackEvent::Partial(&ev));
    };
    emit(PartialPhase::Start, true, eps, Some(rank), &state, budget.queries());

    let done = |s: &PartialInfoState| s.eps_t == target_eps && s.rank_of_target == 0;
    let loss = |_: usize, z: &Image| -> Result<f64, OracleError> {
        budget.classify(z).map(|out| label_value(&out, y_adv))
    };

    'rounds: while !done(&state) {
        let bx = BoxConstraint::new(x_i.clone(), eps)?;
        for _ in 0..cfg.partial.pgd_steps {
            let grad = match estimate_gradient_indexed(loss, &state.x_t, &cfg.nes, &mut rng) {
                Ok(g) => g.grad,
                Err(e) => {
                    budget_or_error(e.source)?;
                    break 'rounds;
                }
            };
            let (cand, next_acc) = pgd_step(&state.x_t, &grad, &acc, cfg, &bx);
            iterations += 1;
            let reading = match budget.classify(&cand) {
                Ok(out) => read(&out, y_adv, k),
                Err(e) => {
                    budget_or_error(e)?;
                    break 'rounds;
                }
            };
            let accepted = reading.rank.is_some();
            if let Some(r) = reading.rank {
                state.x_t = cand;
                state.rank_of_target = r;
                score = reading.score;
                acc = next_acc;
            } else {
                acc.iter_mut().for_each(|a| *a = 0.0);
            }
            emit(PartialPhase::Pgd, accepted, eps, reading.rank, &state, budget.queries());
            if done(&state) {
                break 'rounds;
            }
        }

        if eps > target_eps {
            let mut decrease = 1.0 - cfg.partial.shrink;
            for _ in 0..=cfg.partial.max_rollbacks {
                let cand_eps = (eps * (1.0 - decrease)).max(target_eps);
                let cand = clip_valid(&project_linf(&state.x_t, &BoxConstraint::new(x_i.clone(), cand_eps)?)?);
                let reading = match budget.classify(&cand) {
                    Ok(out) => read(&out, y_adv, k),
                    Err(e) => {
                        budget_or_error(e)?;
                        break 'rounds;
                    }
                };
                let accepted = reading.rank.is_some();
                if let Some(r) = reading.rank {
                    eps = cand_eps;
                    state = PartialInfoState {
                        x_t: cand,
                        eps_t: eps,
                        rank_of_target: r,
                    };
                    score = reading.score;
                }
                emit(PartialPhase::Search, accepted, cand_eps, reading.rank, &state, budget.queries());
                if accepted {
                    break;
                }
                decrease /= 2.0;
            }
        }
    }

    let at_target = state.eps_t == target_eps;
    Ok(AttackResult {
        success: done(&state),
        weak_success: at_target,
        queries: budget.queries(),
        final_target_prob: score,
        epsilon_achieved: state.eps_t,
        iterations,
        adversariality: None,
        adv: state.x_t,
    })
}

/// Effective `k` of the oracle, checked against the configuration.
fn truncation(out: &ClassifierOutput, cfg: &AttackConfig) -> Result<usize, AttackError> {
    match (out, cfg.k) {
        (ClassifierOutput::TopK { k, .. }, Some(want)) if *k != want => Err(AttackError::Config(format!(
            "oracle returns top-{k} outputs but the attack expects k = {want}"
        ))),
        (ClassifierOutput::TopK { k, .. }, _) => Ok(*k),
        (ClassifierOutput::Full(p), want) => Ok(want.unwrap_or(p.len()).min(p.len())),
    }
}
