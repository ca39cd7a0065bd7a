mod common;

use std::f64::consts::PI;

use nalgebra::DMatrix;

use ufo_core::flow::{train_flow, FlowModel, FlowTrainConfig};
use ufo_core::reliability::new_task_raw_scores;
use ufo_core::tensor::{grad_check, Rng, Tensor};
use ufo_core::graph::{generate_sbm, SbmConfig};
use ufo_core::trainer::{prepare_tasks, TrainConfig};

fn scrambled(dim: usize, n_classes: usize, seed: u64) -> FlowModel {
    let mut rng = Rng::new(seed);
    let mut f = FlowModel::new(dim, n_classes, 4, 8, &mut rng).unwrap();
    f.scramble(&mut rng);
    f
}

/// `ln|det J|` of `x -> f(x, y)` from a central-difference Jacobian.
fn fd_logdet(flow: &FlowModel, x: &[f64], y: usize) -> f64 {
    let d = x.len();
    let h = 1e-6;
    let eval = |p: &[f64]| {
        let (z, _) = flow.forward_value(&Tensor::from_rows(&[p.to_vec()]), &[y]).unwrap();
        z.into_data()
    };
    let mut jac = DMatrix::<f64>::zeros(d, d);
    let mut p = x.to_vec();
    for j in 0..d {
        p[j] = x[j] + h;
        let up = eval(&p);
        p[j] = x[j] - h;
        let down = eval(&p);
        p[j] = x[j];
        for i in 0..d {
            jac[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    jac.determinant().abs().ln()
}

#[test]
fn logdet_matches_dense_jacobian() {
    for (dim, seed) in [(4, 1), (6, 2), (4, 3), (6, 4)] {
        let flow = scrambled(dim, 3, seed);
        let mut rng = Rng::new(seed + 100);
        let mut largest: f64 = 0.0;
        for _ in 0..5 {
            let x = rng.normal_tensor(1, dim);
            let y = rng.below(3);
            let (_, ld) = flow.forward_value(&x, &[y]).unwrap();
            let oracle = fd_logdet(&flow, x.row(0), y);
            largest = largest.max(ld[0].abs());
            assert!((ld[0] - oracle).abs() <= 1e-5, "D={dim}: {} vs {oracle}", ld[0]);
        }
        assert!(largest > 0.1, "flow too close to volume preserving");
    }
}

#[test]
fn flow_nll_gradient_wrt_input() {
    let flow = scrambled(2, 2, 11);
    let point = Rng::new(12).normal_tensor(6, 2);
    let labels = [0, 1, 0, 1, 1, 0];
    let err = grad_check(
        |tape, x| flow.nll(&flow.bind(tape, false), x, &labels),
        &point,
        1e-6,
    )
    .unwrap();
    assert!(err <= 1e-5, "{err}");
}

fn fit(flow: &mut FlowModel, x: &Tensor, labels: &[usize], epochs: usize, lr: f64) -> Vec<f64> {
    let cfg = FlowTrainConfig {
        epochs,
        lr,
        replay_batch: 1,
    };
    train_flow(flow, x, labels, None, &cfg, &mut Rng::new(0)).unwrap().losses
}

fn trained_blob_flow() -> FlowModel {
    let (x, labels) = common::two_blobs(200, 2, 5);
    let mut flow = FlowModel::new(2, 2, 4, 16, &mut Rng::new(6)).unwrap();
    fit(&mut flow, &x, &labels, 300, 0.01);
    flow
}

#[test]
fn trained_density_integrates_to_one_per_class() {
    let flow = trained_blob_flow();
    let (lo, hi, step) = (-9.0, 9.0, 0.03);
    let n = ((hi - lo) / step) as usize;
    let mut grid = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            grid.push(vec![lo + (i as f64 + 0.5) * step, lo + (j as f64 + 0.5) * step]);
        }
    }
    let grid = Tensor::from_rows(&grid);
    for class in 0..2 {
        let lp = flow.log_prob_value(&grid, &vec![class; grid.rows()]).unwrap();
        let mass: f64 = lp.iter().map(|v| v.exp()).sum::<f64>() * step * step;
        assert!((mass - 1.0).abs() <= 0.02, "class {class}: {mass}");
    }
}

#[test]
fn correct_label_beats_swapped_label() {
    let flow = trained_blob_flow();
    let (x, labels) = common::two_blobs(200, 2, 77);
    let swapped: Vec<usize> = labels.iter().map(|&y| 1 - y).collect();
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let right = mean(flow.log_prob_value(&x, &labels).unwrap());
    let wrong = mean(flow.log_prob_value(&x, &swapped).unwrap());
    assert!(right > wrong + 1.0, "{right} vs {wrong}");
}

#[test]
fn one_dimensional_fit_matches_gaussian_entropy() {
    let mut rng = Rng::new(21);
    let x = rng.normal_tensor(2000, 1).map(|v| v + 3.0);
    let labels = vec![0; 2000];
    let mut flow = FlowModel::new(1, 1, 2, 8, &mut Rng::new(22)).unwrap();
    fit(&mut flow, &x, &labels, 400, 0.02);
    let held_out = rng.normal_tensor(2000, 1).map(|v| v + 3.0);
    let r = flow.log_prob_value(&held_out, &labels).unwrap();
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    let entropy = -0.5 - 0.5 * (2.0 * PI).ln();
    assert!((mean - entropy).abs() <= 0.1, "{mean} vs {entropy}");
}

#[test]
fn nll_curve_does_not_rise() {
    let x = Rng::new(31).normal_tensor(500, 1);
    let labels = vec![0; 500];
    let mut flow = FlowModel::new(1, 1, 2, 8, &mut Rng::new(32)).unwrap();
    let losses = fit(&mut flow, &x, &labels, 100, 0.005);
    let smoothed: Vec<f64> = losses.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    for w in smoothed.windows(2) {
        assert!(w[1] <= w[0] + 0.05 * w[0].abs(), "{} -> {}", w[0], w[1]);
    }
    assert!(smoothed.last().unwrap() <= &(smoothed[0] + 1e-9));
}

#[test]
fn identity_flow_samples_are_standard_normal() {
    let flow = FlowModel::new(3, 2, 4, 8, &mut Rng::new(41)).unwrap();
    let n = 10_000;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let s = flow.sample(&labels, &mut Rng::new(42)).unwrap();
    let se = (1.0 / n as f64).sqrt();
    for j in 0..3 {
        let mean = (0..n).map(|i| s.get(i, j)).sum::<f64>() / n as f64;
        assert!(mean.abs() <= 3.0 * se, "coordinate {j}: {mean}");
    }
}

#[test]
fn identity_flow_scores_stay_near_one() {
    let flow = FlowModel::new(2, 3, 4, 8, &mut Rng::new(51)).unwrap();
    let x = Rng::new(52).normal_tensor(200, 2).map(|v| 0.3 * v);
    let labels: Vec<usize> = (0..200).map(|i| i % 3).collect();
    let s = new_task_raw_scores(&flow, &x, &labels).unwrap();
    let worst = s.scores.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    assert!(worst < 0.5, "{worst}");
}

#[test]
fn generated_rows_score_through_their_latent() {
    let flow = scrambled(4, 2, 61);
    let mut rng = Rng::new(62);
    let z = rng.normal_tensor(8, 4);
    let labels = [0, 1, 0, 1, 0, 1, 0, 1];
    let x = flow.inverse(&z, &labels).unwrap();
    let (z_back, ld) = flow.forward_value(&x, &labels).unwrap();
    let lp = flow.log_prob_value(&x, &labels).unwrap();
    assert!(z_back.max_abs_diff(&z) <= 1e-10);
    for i in 0..8 {
        let gauss = -0.5 * z.row(i).iter().map(|v| v * v).sum::<f64>() - 2.0 * (2.0 * PI).ln();
        assert!((lp[i] - (gauss + ld[i])).abs() <= 1e-9);
    }
}

#[test]
fn trained_fixture_flow_reproduces_class_means() {
    let sbm = SbmConfig {
        n_tasks: 1,
        nodes_per_class: 300,
        feature_dim: 4,
        ..SbmConfig::default()
    };
    let graph = generate_sbm(&sbm, &mut Rng::new(0).fork("data")).unwrap();
    let cfg = TrainConfig::desk();
    let tv = &prepare_tasks(&graph, &cfg).unwrap()[0];
    let train = tv.train_idx();
    let x = tv.features.select_rows(&train);
    let labels: Vec<usize> = train.iter().map(|&i| tv.classes[tv.observed[i]]).collect();
    let mut flow = FlowModel::new(x.cols(), graph.n_classes(), 4, 16, &mut Rng::new(70)).unwrap();
    fit(&mut flow, &x, &labels, 300, 0.01);

    let n_samples = 4000;
    let mut rng = Rng::new(71);
    for &class in &tv.classes {
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let real = x.select_rows(&rows);
        let fake = flow.sample(&vec![class; n_samples], &mut rng).unwrap();
        for j in 0..x.cols() {
            let stats = |t: &Tensor| {
                let n = t.rows() as f64;
                let m = (0..t.rows()).map(|i| t.get(i, j)).sum::<f64>() / n;
                let var = (0..t.rows()).map(|i| (t.get(i, j) - m).powi(2)).sum::<f64>() / (n - 1.0);
                (m, var / n)
            };
            let (mr, vr) = stats(&real);
            let (mf, vf) = stats(&fake);
            let se = (vr + vf).sqrt();
            assert!((mr - mf).abs() <= 3.0 * se, "class {class} coordinate {j}: {mr} vs {mf} (se {se})");
        }
    }
}
