mod common;

use proptest::prelude::*;

use ufo_core::encoder::{features_value, EncoderParams};
use ufo_core::eval::{accuracy_avg, forgetting_avg, PerformanceMatrix};
use ufo_core::flow::FlowModel;
use ufo_core::graph::{inject_noise, NoiseKind, Split};
use ufo_core::reliability::{clip_scores, relative_scores, smooth_scores};
use ufo_core::tensor::{kernels, AdamConfig, AdamState, Rng, Tape, Tensor};
use ufo_core::trainer::{loss_distill, loss_embed_anchor};

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 64,
        ..ProptestConfig::default()
    }
}

fn log_ratios() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..30.0, 1..60)
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(&[row.to_vec()]));
    x.softmax_rows().value().into_data()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn softmax_is_shift_invariant(row in prop::collection::vec(-20.0f64..20.0, 1..12), c in -50.0f64..50.0) {
        let shifted: Vec<f64> = row.iter().map(|v| v + c).collect();
        let a = softmax(&row);
        let b = softmax(&shifted);
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn scores_sum_to_pool_and_are_positive(r in log_ratios()) {
        let s = relative_scores(&r).unwrap();
        let b = r.len() as f64;
        prop_assert!((s.scores.iter().sum::<f64>() - b).abs() <= 1e-9 * b.max(1.0));
        prop_assert!(s.scores.iter().all(|&v| v > 0.0));
        prop_assert!(s.scores.iter().all(|&v| v <= b + 1e-9));
    }

    #[test]
    fn scores_shift_invariant(r in log_ratios(), c in -1e3f64..1e3) {
        let shifted: Vec<f64> = r.iter().map(|v| v + c).collect();
        let a = relative_scores(&r).unwrap();
        let b = relative_scores(&shifted).unwrap();
        for (p, q) in a.scores.iter().zip(&b.scores) {
            prop_assert!((p - q).abs() <= 1e-12 * r.len() as f64, "{p} vs {q}");
        }
    }

    #[test]
    fn scores_monotone_in_log_likelihood(r in log_ratios()) {
        let s = relative_scores(&r).unwrap();
        for i in 0..r.len() {
            for j in 0..r.len() {
                if r[i] < r[j] {
                    prop_assert!(s.scores[i] <= s.scores[j]);
                }
            }
        }
    }

    #[test]
    fn clipping_bounds_and_idempotence(r in log_ratios(), alpha in 0.0f64..1.0, width in 0.0f64..10.0) {
        let beta = alpha + width;
        let s = relative_scores(&r).unwrap();
        let c = clip_scores(&s, alpha, beta).unwrap();
        prop_assert!(c.scores.iter().all(|&v| (alpha..=beta).contains(&v)));
        prop_assert_eq!(clip_scores(&c, alpha, beta).unwrap().scores, c.scores);
    }

    #[test]
    fn smoothing_blends_toward_one(r in log_ratios(), epoch in 0usize..40, warmup in 1usize..30) {
        let s = relative_scores(&r).unwrap();
        let m = smooth_scores(&s, epoch, warmup);
        for (orig, blended) in s.scores.iter().zip(&m.scores) {
            let (lo, hi) = if *orig < 1.0 { (*orig, 1.0) } else { (1.0, *orig) };
            prop_assert!(*blended >= lo - 1e-12 && *blended <= hi + 1e-12);
            if epoch >= warmup {
                prop_assert_eq!(blended, orig);
            }
        }
    }

    #[test]
    fn noise_flips_exact_count_and_spares_val_test(
        n in 10usize..120,
        k in 2usize..6,
        ratio in 0.0f64..=1.0,
        pair in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let tv = common::random_task(n, k, 2, 0.1, seed);
        let kind = if pair { NoiseKind::Pair } else { NoiseKind::Symmetric };
        let out = inject_noise(&tv, kind, ratio, &mut Rng::new(seed ^ 1)).unwrap();
        let n_train = tv.train_idx().len();
        let flipped = out.noisy.iter().filter(|&&f| f).count();
        prop_assert_eq!(flipped, (ratio * n_train as f64).round() as usize);
        prop_assert_eq!(&out.clean, &tv.clean);
        for i in 0..n {
            prop_assert_eq!(out.noisy[i], out.observed[i] != out.clean[i]);
            prop_assert!(out.observed[i] < k);
            if tv.split[i] != Split::Train {
                prop_assert_eq!(out.observed[i], tv.clean[i]);
            }
            if pair && out.noisy[i] {
                prop_assert_eq!(out.observed[i], (tv.clean[i] + 1) % k);
            }
        }
    }

    #[test]
    fn flow_round_trips_both_ways(dim in 1usize..8, n in 1usize..20, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let mut flow = FlowModel::new(dim, 3, 3, 6, &mut rng).unwrap();
        flow.scramble(&mut rng);
        let x = rng.normal_tensor(n, dim).map(|v| 3.0 * v);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(3)).collect();
        let (z, _) = flow.forward_value(&x, &labels).unwrap();
        prop_assert!(flow.inverse(&z, &labels).unwrap().max_abs_diff(&x) <= 1e-8);
        let z2 = rng.normal_tensor(n, dim);
        let back = flow.inverse(&z2, &labels).unwrap();
        prop_assert!(flow.forward_value(&back, &labels).unwrap().0.max_abs_diff(&z2) <= 1e-8);
    }

    #[test]
    fn flow_forward_is_pure(dim in 2usize..6, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let mut flow = FlowModel::new(dim, 2, 2, 5, &mut rng).unwrap();
        flow.scramble(&mut rng);
        let x = rng.normal_tensor(7, dim);
        let labels = [0, 1, 1, 0, 0, 1, 0];
        let a = flow.log_prob_value(&x, &labels).unwrap();
        let b = flow.log_prob_value(&x, &labels).unwrap();
        prop_assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn class_relabelling_preserves_log_prob(dim in 2usize..6, seed in any::<u64>()) {
        let n_classes = 4;
        let mut rng = Rng::new(seed);
        let mut flow = FlowModel::new(dim, n_classes, 3, 6, &mut rng).unwrap();
        flow.scramble(&mut rng);
        let relabel = rng.permutation(n_classes);
        let mut renamed = flow.clone();
        let p = flow.passive();
        for (src, dst) in flow.couplings.iter().zip(renamed.couplings.iter_mut()) {
            for c in 0..n_classes {
                dst.w1.row_mut(p + relabel[c]).copy_from_slice(src.w1.row(p + c));
            }
        }
        let x = rng.normal_tensor(12, dim);
        let labels: Vec<usize> = (0..12).map(|i| i % n_classes).collect();
        let moved: Vec<usize> = labels.iter().map(|&y| relabel[y]).collect();
        let a = flow.log_prob_value(&x, &labels).unwrap();
        let b = renamed.log_prob_value(&x, &moved).unwrap();
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn features_are_row_permutation_equivariant(n in 2usize..14, layers in 1usize..3, seed in any::<u64>()) {
        let tv = common::random_task(n, 3, 4, 0.3, seed);
        let params = EncoderParams::new(4, 3, layers, &mut Rng::new(seed ^ 7)).unwrap();
        let perm = Rng::new(seed ^ 9).permutation(n);
        let x = features_value(&tv, &params).unwrap();
        let xp = features_value(&tv.permuted(&perm), &params).unwrap();
        prop_assert!(xp.max_abs_diff(&x.select_rows(&perm)) <= 1e-12);
    }

    #[test]
    fn distillation_is_non_negative(rows in 1usize..6, cols in 2usize..5, tau in 0.1f64..5.0, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let teacher = rng.normal_tensor(rows, cols).map(|v| 4.0 * v);
        let student = rng.normal_tensor(rows, cols).map(|v| 4.0 * v);
        let tape = Tape::new();
        let kl = loss_distill(tape.constant(student), &teacher, tau).unwrap().item();
        prop_assert!(kl >= -1e-12, "{kl}");
        let same = loss_distill(tape.constant(teacher.clone()), &teacher, tau).unwrap().item();
        prop_assert!(same.abs() <= 1e-12);
    }

    #[test]
    fn anchor_is_zero_only_at_the_frozen_point(rows in 1usize..6, cols in 1usize..5, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let x = rng.normal_tensor(rows, cols);
        let tape = Tape::new();
        let zero = loss_embed_anchor(tape.constant(x.clone()), tape.constant(x.clone())).unwrap().item();
        prop_assert_eq!(zero, 0.0);
        let y = x.map(|v| v + 0.5);
        let d = loss_embed_anchor(tape.constant(y), tape.constant(x)).unwrap().item();
        prop_assert!((d - 0.25 * (rows * cols) as f64).abs() <= 1e-12);
    }

    #[test]
    fn parallel_matmul_matches_sequential(m in 1usize..40, k in 1usize..40, n in 1usize..40, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let a = rng.normal_tensor(m, k);
        let b = rng.normal_tensor(k, n);
        let mut p = vec![0.0; m * n];
        let mut s = vec![0.0; m * n];
        kernels::matmul(a.data(), b.data(), m, k, n, &mut p);
        kernels::matmul_sequential(a.data(), b.data(), m, k, n, &mut s);
        prop_assert!(p.iter().zip(&s).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn matrix_csv_round_trip_and_bounds(n in 1usize..6, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..=i).map(|_| rng.uniform()).collect()).collect();
        let m = PerformanceMatrix::from_rows(rows.clone()).unwrap();
        let back = PerformanceMatrix::from_csv(&m.to_csv(), std::path::Path::new("m.csv")).unwrap();
        prop_assert_eq!(back.rows(), m.rows());
        let acc = accuracy_avg(&m).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
        match forgetting_avg(&m) {
            None => prop_assert_eq!(n, 1),
            Some(f) => prop_assert!((-1.0..=1.0).contains(&f)),
        }
    }

    #[test]
    fn adam_counts_steps_and_keeps_shapes(steps in 1usize..20, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let mut p = rng.normal_tensor(3, 2);
        let mut adam = AdamState::new(AdamConfig::with_lr(0.01));
        for k in 1..=steps {
            let g = rng.normal_tensor(3, 2);
            adam.step(&mut [&mut p], &[Some(g)]).unwrap();
            prop_assert_eq!(adam.t, k as u64);
        }
        prop_assert_eq!(adam.m[0].shape(), (3, 2));
        prop_assert_eq!(adam.v[0].shape(), (3, 2));
    }

    #[test]
    fn labelled_forks_are_reproducible(seed in any::<u64>(), label in "[a-z]{1,8}", idx in 0u64..100) {
        let root = Rng::new(seed);
        let mut a = root.fork_indexed(&label, idx);
        let mut b = Rng::new(seed).fork_indexed(&label, idx);
        prop_assert_eq!(a.next_u64(), b.next_u64());
        let mut other = root.fork_indexed(&label, idx + 1);
        prop_assert_ne!(a.next_u64(), other.next_u64());
    }
}
