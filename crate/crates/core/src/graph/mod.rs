//! Graph storage, dataset I/O, synthetic generation, task partitioning and
//! label-noise injection.

mod io;
mod noise;
mod sbm;
mod tasks;

pub use io::{load_dataset, write_dataset};
pub use noise::{inject_noise, NoiseKind};
pub use sbm::{generate_sbm, SbmConfig};
pub use tasks::{partition_tasks, Split, TaskView};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Undirected node-labelled graph with dense node features.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    features: Tensor,
    edges: Vec<(usize, usize)>,
    labels: Vec<usize>,
    n_classes: usize,
}

/// Sorts, deduplicates and orients every edge as `(u, v)` with `u < v`.
/// Self-loops are dropped.
pub fn canonical_edges(edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = edges
        .into_iter()
        .filter(|(u, v)| u != v)
        .map(|(u, v)| if u < v { (u, v) } else { (v, u) })
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

impl Graph {
    pub fn new(
        features: Tensor,
        edges: Vec<(usize, usize)>,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n {
            return Err(Error::Contract(format!(
                "{} labels for {n} nodes",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Index {
                op: "graph labels",
                index: bad,
                bound: n_classes,
            });
        }
        if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| u >= n || v >= n) {
            return Err(Error::Index {
                op: "graph edges",
                index: u.max(v),
                bound: n,
            });
        }
        if !features.all_finite() {
            return Err(Error::Numeric("graph features contain non-finite values".into()));
        }
        Ok(Graph {
            features,
            edges: canonical_edges(edges),
            labels,
            n_classes,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}
