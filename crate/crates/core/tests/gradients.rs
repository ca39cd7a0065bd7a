mod common;

use ufo_core::selftest::{kernel_grad_checks_at, COMPOSITE_TOL, FD_STEP, KERNEL_TOL};
use ufo_core::tensor::{grad_check, Rng, Tape};
use ufo_core::trainer::{
    loss_embed_anchor, train_task, Components, ContinualState, ObjectiveProbe, ProbeTarget, TrainConfig,
};

#[test]
fn every_kernel_at_ten_random_points() {
    let mut rng = Rng::new(2025);
    for k in 0..10 {
        let point = rng.normal_tensor(4, 3).map(|v| v + 0.2 * v.signum());
        for c in kernel_grad_checks_at(&point).unwrap() {
            assert!(c.measured <= KERNEL_TOL, "point {k}: {c}");
        }
    }
}

#[test]
fn anchor_gradient_is_twice_the_offset() {
    let mut rng = Rng::new(3);
    let x = rng.normal_tensor(5, 4);
    let prev = rng.normal_tensor(5, 4);
    let tape = Tape::new();
    let xv = tape.param(x.clone());
    let loss = loss_embed_anchor(xv, tape.constant(prev.clone())).unwrap();
    tape.backward(loss).unwrap();
    let expect = x.data().iter().zip(prev.data()).map(|(a, b)| 2.0 * (a - b));
    for (g, e) in xv.grad().unwrap().data().iter().zip(expect) {
        assert!((g - e).abs() <= 1e-12);
    }
    let err = grad_check(
        |tape, x| loss_embed_anchor(x, tape.constant(prev.clone())),
        &x,
        FD_STEP,
    )
    .unwrap();
    assert!(err <= KERNEL_TOL, "{err}");
}

/// Second task of a two-task toy sequence with six nodes per task.
fn toy_probe(target: ProbeTarget) -> ObjectiveProbe {
    let cfg = TrainConfig {
        epochs: 5,
        hidden: 3,
        flow_couplings: 2,
        flow_hidden: 4,
        flow_epochs: 5,
        flow_refit_epochs: 3,
        warmup: 4,
        replay_batch: 4,
        classes_per_task: 2,
        ..TrainConfig::desk()
    };
    let first = common::train_only_task(6, 2, 3, 1);
    let mut second = common::train_only_task(6, 2, 3, 2);
    second.task = 1;
    second.classes = vec![2, 3];
    second.observed[0] = 1;
    second.noisy[0] = true;
    let root = Rng::new(cfg.seed);
    let mut state = ContinualState::new(3, 4, &cfg, &root).unwrap();
    train_task(&mut state, &first, &cfg, Components::FULL, &root).unwrap();
    ObjectiveProbe::new(&state, &second, &cfg, Components::FULL, &root, 2, target).unwrap()
}

#[test]
fn full_objective_on_six_node_toy_task() {
    for target in [
        ProbeTarget::EncoderWeight(0),
        ProbeTarget::HeadWeight(0),
        ProbeTarget::HeadWeight(1),
    ] {
        let probe = toy_probe(target);
        assert_eq!(probe.replay_batches(), 1);
        let err = grad_check(|tape, p| probe.loss(tape, p), &probe.point(), FD_STEP).unwrap();
        assert!(err <= COMPOSITE_TOL, "{target:?}: {err}");
    }
}

#[test]
fn probe_rejects_missing_parameter() {
    let cfg = TrainConfig::desk();
    let tv = common::train_only_task(6, 2, 3, 1);
    let root = Rng::new(0);
    let state = ContinualState::new(3, 2, &cfg, &root).unwrap();
    let err = ObjectiveProbe::new(&state, &tv, &cfg, Components::FULL, &root, 0, ProbeTarget::HeadWeight(3));
    assert!(err.is_err());
}
