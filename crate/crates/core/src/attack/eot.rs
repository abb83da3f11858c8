//! Targeted attack robust to random rotations.

use super::full::{drive, Probe};
use super::{no_observer, AttackConfig, AttackError, AttackEvent, AttackResult};
use crate::oracle::{Oracle, OracleError};
use crate::rng::Rng;
use crate::tensor::Image;
use crate::transform::{eot_loss, rotate, sample_theta, EotConfig};

const THETA_KEY: u64 = 0x9e37_79b9_7f4a_7c15;

/// PGD on NES estimates of `E_θ[log P(y_adv | rotate(x', θ))]`. Success is
/// a vote: at least `vote_threshold` of `vote_samples` fresh rotations of the
/// iterate must be classified `y_adv`. The vote runs before the first step
/// and after every step.
///
/// Randomness: NES perturbations use the same stream as
/// [`targeted_attack`](super::targeted_attack); each loss evaluation draws its
/// angles from a stream keyed by (iteration, antithetic pair); votes use a
/// third stream.
pub fn eot_attack(
    oracle: &dyn Oracle,
    x: &Image,
    y_adv: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    eot_attack_observed(oracle, x, y_adv, cfg, &mut no_observer)
}

pub fn eot_attack_observed(
    oracle: &dyn Oracle,
    x: &Image,
    y_adv: usize,
    cfg: &AttackConfig,
    observer: &mut dyn FnMut(&AttackEvent<'_>),
) -> Result<AttackResult, AttackError> {
    let eot = cfg
        .eot
        .clone()
        .ok_or_else(|| AttackError::Config("eot attack needs an EotConfig".into()))?;
    eot.validate()?;
    let seed = cfg.nes.seed;
    let n = cfg.nes.n_samples;
    let mut vote_rng = Rng::derive(seed, 1);
    drive(
        oracle,
        x,
        cfg,
        |o, iter, j, z| {
            // Both halves of an antithetic pair see the same angles.
            let pair = j.min(n - 1 - j);
            let mut rng = Rng::derive(seed ^ THETA_KEY, ((iter as u64) << 32) | pair as u64);
            eot_loss(o, z, y_adv, &eot, &mut rng)
        },
        |o, z| vote(o, z, y_adv, &eot, &mut vote_rng),
        observer,
    )
}

fn vote(oracle: &dyn Oracle, x: &Image, y: usize, cfg: &EotConfig, rng: &mut Rng) -> Result<Probe, OracleError> {
    let mut hits = 0usize;
    let mut prob = 0.0;
    for _ in 0..cfg.vote_samples {
        let out = oracle.classify(&rotate(x, sample_theta(cfg, rng)))?;
        if out.top1() == Some(y) {
            hits += 1;
        }
        prob += out.score(y).unwrap_or(0.0);
    }
    let n = cfg.vote_samples as f64;
    let frac = hits as f64 / n;
    Ok(Probe {
        success: frac >= cfg.vote_threshold,
        prob: Some(prob / n),
        adversariality: Some(frac),
    })
}
