mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;

use nbx::attack::{
    eot_attack, label_set_attack, partial_info_attack, pgd_step, targeted_attack, untargeted_attack, AttackConfig,
    AttackError,
};
use nbx::nes::NesConfig;
use nbx::oracle::{LocalOracle, Metered, MlpModel, Oracle, OutputMode};
use nbx::rng::Rng;
use nbx::synth::{argmax, desk_spec, image_of_class, random_mlp, smooth_image, DESK_CONTRAST};
use nbx::tensor::{linf_dist, BoxConstraint, Image, Shape};
use nbx::transform::EotConfig;

use common::random_other;

fn desk() -> (Arc<MlpModel>, Image, usize) {
    let model = Arc::new(random_mlp(&desk_spec(1)));
    let x = smooth_image(model.input_shape(), 4, DESK_CONTRAST, &mut Rng::new(21));
    let clean = argmax(&model.classify_full(&x).unwrap());
    (model, x, clean)
}

#[test]
fn already_adversarial_input_costs_one_query() {
    let (model, x, clean) = desk();
    let r = targeted_attack(&LocalOracle::full(model), &x, clean, &AttackConfig::default()).unwrap();
    assert!(r.success);
    assert_eq!(r.queries, 1);
    assert_eq!(r.iterations, 0);
    assert_eq!(r.adv, x);
}

#[test]
fn exhausted_budget_is_a_failed_result() {
    let (model, x, clean) = desk();
    let cfg = AttackConfig {
        max_queries: 150,
        ..AttackConfig::default()
    };
    let oracle = Metered::new(LocalOracle::full(model), None);
    let r = targeted_attack(&oracle, &x, random_other(clean, 10, &mut Rng::new(1)), &cfg).unwrap();
    assert!(!r.success);
    assert!(r.queries <= 150);
    assert_eq!(r.queries, oracle.queries());
    assert!(linf_dist(&r.adv, &x).unwrap() <= cfg.epsilon + 1e-12);
}

#[test]
fn same_seed_same_trajectory() {
    let (model, x, clean) = desk();
    let target = random_other(clean, 10, &mut Rng::new(2));
    let o = LocalOracle::full(model);
    let cfg = AttackConfig::default();
    let a = targeted_attack(&o, &x, target, &cfg).unwrap();
    let b = targeted_attack(&o, &x, target, &cfg).unwrap();
    assert_eq!(a, b);
    let par = AttackConfig {
        nes: NesConfig {
            parallel: true,
            ..cfg.nes
        },
        ..cfg
    };
    assert_eq!(targeted_attack(&o, &x, target, &par).unwrap(), a);
}

/// With every angle fixed at zero the rotation loss is the plain log
/// probability, so the trajectory must match the targeted attack step for
/// step; only the vote costs more.
#[test]
fn eot_at_zero_angle_follows_targeted_attack() {
    let (model, x, clean) = desk();
    let target = random_other(clean, 10, &mut Rng::new(3));
    let o = LocalOracle::full(model);
    let plain = targeted_attack(&o, &x, target, &AttackConfig::default()).unwrap();
    let eot = EotConfig::point_mass(0.0);
    let votes = eot.vote_samples as u64;
    let cfg = AttackConfig {
        eot: Some(eot),
        ..AttackConfig::default()
    };
    let r = eot_attack(&o, &x, target, &cfg).unwrap();
    assert!(plain.success && r.success);
    assert_eq!(r.adv, plain.adv);
    assert_eq!(r.iterations, plain.iterations);
    let n = cfg.nes.n_samples as u64;
    let steps = plain.iterations as u64;
    assert_eq!(plain.queries, steps * n + steps + 1);
    assert_eq!(r.queries, steps * n + (steps + 1) * votes);
    assert_eq!(r.adversariality, Some(1.0));
}

#[test]
fn eot_requires_its_config() {
    let (model, x, clean) = desk();
    let err = eot_attack(&LocalOracle::full(model), &x, clean, &AttackConfig::default()).unwrap_err();
    assert!(matches!(err, AttackError::Config(_)));
}

#[test]
fn untargeted_and_label_set_leave_their_labels() {
    let (model, x, clean) = desk();
    let o = LocalOracle::full(model.clone());
    let cfg = AttackConfig::default();
    let r = untargeted_attack(&o, &x, clean, &cfg).unwrap();
    assert!(r.success);
    assert_ne!(argmax(&model.classify_full(&r.adv).unwrap()), clean);

    let set: BTreeSet<usize> = [clean, (clean + 1) % 10, (clean + 2) % 10].into();
    let r = label_set_attack(&o, &x, &set, &cfg).unwrap();
    assert!(r.success);
    assert!(!set.contains(&argmax(&model.classify_full(&r.adv).unwrap())));
    assert!(linf_dist(&r.adv, &x).unwrap() <= cfg.epsilon + 1e-12);

    let err = label_set_attack(&o, &x, &BTreeSet::new(), &cfg).unwrap_err();
    assert!(matches!(err, AttackError::Config(_)));
}

#[test]
fn untargeted_works_from_top1_scores() {
    let (model, x, clean) = desk();
    let o = LocalOracle::new(model.clone(), OutputMode::topk(1));
    let r = untargeted_attack(&o, &x, clean, &AttackConfig::default()).unwrap();
    assert!(r.success);
    assert_ne!(argmax(&model.classify_full(&r.adv).unwrap()), clean);
}

#[test]
fn partial_info_validates_its_inputs() {
    let (model, x_i, clean) = desk();
    let target = random_other(clean, 10, &mut Rng::new(4));
    let x_0 = image_of_class(&model, target, DESK_CONTRAST, &mut Rng::new(5), 100_000).unwrap();
    let top5 = LocalOracle::new(model.clone(), OutputMode::topk(5));
    let cfg = AttackConfig {
        k: Some(3),
        ..AttackConfig::default()
    };
    assert!(matches!(
        partial_info_attack(&top5, &x_i, &x_0, target, &cfg),
        Err(AttackError::Config(_))
    ));

    let cfg = AttackConfig {
        k: Some(1),
        ..AttackConfig::default()
    };
    let top1 = LocalOracle::new(model.clone(), OutputMode::topk(1));
    assert!(matches!(
        partial_info_attack(&top1, &x_i, &x_i, target, &cfg),
        Err(AttackError::Config(_))
    ));

    // Source already classified as the target: one query, no movement.
    let r = partial_info_attack(&top1, &x_i, &x_0, clean, &cfg).unwrap();
    assert!(r.success);
    assert_eq!(r.queries, 1);
    assert_eq!(r.adv, x_i);
}

#[test]
fn partial_info_ends_inside_the_requested_box() {
    let (model, x_i, clean) = desk();
    let target = random_other(clean, 10, &mut Rng::new(6));
    let x_0 = image_of_class(&model, target, DESK_CONTRAST, &mut Rng::new(7), 100_000).unwrap();
    let cfg = AttackConfig {
        k: Some(5),
        ..AttackConfig::default()
    };
    let o = Metered::new(LocalOracle::new(model.clone(), OutputMode::topk(5)), None);
    let r = partial_info_attack(&o, &x_i, &x_0, target, &cfg).unwrap();
    assert!(r.success && r.weak_success);
    assert_eq!(r.epsilon_achieved, cfg.epsilon);
    assert!(linf_dist(&r.adv, &x_i).unwrap() <= cfg.epsilon + 1e-12);
    assert_eq!(argmax(&model.classify_full(&r.adv).unwrap()), target);
    assert_eq!(r.queries, o.queries());
}

proptest! {
    #[test]
    fn pgd_step_stays_feasible(
        seed in any::<u64>(),
        eps in 0.0f64..0.5,
        lr in 0.0f64..0.3,
        momentum in 0.0f64..1.0,
    ) {
        let mut rng = Rng::new(seed);
        let shape = Shape::new(4, 3, 2);
        let center = common::uniform_image(shape, &mut rng);
        let bx = BoxConstraint::new(center.clone(), eps).unwrap();
        let x = nbx::tensor::project_feasible(&common::uniform_image(shape, &mut rng), &bx).unwrap();
        let grad = rng.normal_vec(shape.len());
        let acc = rng.normal_vec(shape.len());
        let cfg = AttackConfig { lr, momentum, ..AttackConfig::default() };
        let (next, next_acc) = pgd_step(&x, &grad, &acc, &cfg, &bx);
        prop_assert!(linf_dist(&next, &center).unwrap() <= eps + 1e-12);
        prop_assert!(next.data().iter().all(|v| (0.0..=1.0).contains(v)));
        for i in 0..grad.len() {
            let want = momentum * acc[i] + (1.0 - momentum) * grad[i];
            prop_assert!((next_acc[i] - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn reported_queries_match_the_ledger(seed in 0u64..1000, cap in 100u64..600) {
        let (model, x, clean) = desk();
        let target = random_other(clean, 10, &mut Rng::new(seed));
        let cfg = AttackConfig {
            max_queries: cap,
            nes: NesConfig { seed, ..NesConfig::default() },
            ..AttackConfig::default()
        };
        let o = Metered::new(LocalOracle::full(model), None);
        let r = targeted_attack(&o, &x, target, &cfg).unwrap();
        prop_assert_eq!(r.queries, o.queries());
        prop_assert!(r.queries <= cap);
    }
}

#[test]
fn oracle_trait_objects_are_shareable() {
    fn assert_sync<T: Sync + ?Sized>() {}
    assert_sync::<dyn Oracle + Sync>();
}
