#![allow(dead_code)]

use ufo_core::graph::{canonical_edges, generate_sbm, Graph, SbmConfig, Split, TaskView};
use ufo_core::tensor::{Rng, Tensor};

/// Single-task view over `n` nodes, all in the training split, labels cycling
/// through `k` classes.
pub fn train_only_task(n: usize, k: usize, dim: usize, seed: u64) -> TaskView {
    let mut rng = Rng::new(seed);
    let clean: Vec<usize> = (0..n).map(|i| i % k).collect();
    let edges = canonical_edges((1..n).map(|i| (i - 1, i)));
    TaskView {
        task: 0,
        classes: (0..k).collect(),
        nodes: (0..n).collect(),
        features: rng.normal_tensor(n, dim),
        edges,
        split: vec![Split::Train; n],
        observed: clean.clone(),
        clean,
        noisy: vec![false; n],
    }
}

/// Random task over `n` nodes with a mixed split and random edges.
pub fn random_task(n: usize, k: usize, dim: usize, p_edge: f64, seed: u64) -> TaskView {
    let mut rng = Rng::new(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.bernoulli(p_edge) {
                edges.push((u, v));
            }
        }
    }
    let split = (0..n)
        .map(|i| match i % 5 {
            0 => Split::Val,
            1 => Split::Test,
            _ => Split::Train,
        })
        .collect();
    let clean: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
    TaskView {
        task: 0,
        classes: (0..k).collect(),
        nodes: (0..n).collect(),
        features: rng.normal_tensor(n, dim),
        edges: canonical_edges(edges),
        split,
        observed: clean.clone(),
        clean,
        noisy: vec![false; n],
    }
}

/// The standard synthetic fixture for seed `seed`.
pub fn fixture(seed: u64) -> Graph {
    generate_sbm(&SbmConfig::default(), &mut Rng::new(seed).fork("data")).unwrap()
}

/// Two well separated Gaussian blobs in `dim` dimensions, `n` rows per class.
pub fn two_blobs(n: usize, dim: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = Rng::new(seed);
    let mut rows = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(2 * n);
    for c in 0..2 {
        let centre = if c == 0 { -1.5 } else { 1.5 };
        for _ in 0..n {
            rows.push((0..dim).map(|j| centre * (j as f64 + 1.0).recip() + 0.5 * rng.normal()).collect());
            labels.push(c);
        }
    }
    (Tensor::from_rows(&rows), labels)
}
