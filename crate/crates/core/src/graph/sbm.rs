use super::Graph;
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// Stochastic block model with Gaussian class-mean features.
#[derive(Clone, Debug, PartialEq)]
pub struct SbmConfig {
    pub n_tasks: usize,
    pub classes_per_task: usize,
    pub nodes_per_class: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub mean_scale: f64,
    pub feature_noise: f64,
}

impl Default for SbmConfig {
    /// The standard desk-scale fixture: 3 tasks of 3 classes, 60 nodes per class.
    fn default() -> Self {
        SbmConfig {
            n_tasks: 3,
            classes_per_task: 3,
            nodes_per_class: 60,
            p_in: 0.15,
            p_out: 0.01,
            feature_dim: 16,
            mean_scale: 1.0,
            feature_noise: 1.0,
        }
    }
}

impl SbmConfig {
    pub fn n_classes(&self) -> usize {
        self.n_tasks * self.classes_per_task
    }

    pub fn n_nodes(&self) -> usize {
        self.n_classes() * self.nodes_per_class
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tasks == 0
            || self.classes_per_task == 0
            || self.nodes_per_class == 0
            || self.feature_dim == 0
        {
            return Err(Error::Config("SBM counts must be positive".into()));
        }
        if !(0.0 <= self.p_out && self.p_out < self.p_in && self.p_in <= 1.0) {
            return Err(Error::Config(format!(
                "SBM needs 0 <= p_out < p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            )));
        }
        if !(self.mean_scale >= 0.0 && self.feature_noise >= 0.0) {
            return Err(Error::Config("SBM scales must be non-negative".into()));
        }
        Ok(())
    }
}

/// Samples a graph. Nodes are laid out class by class: node `i` has class
/// `i / nodes_per_class`.
pub fn generate_sbm(cfg: &SbmConfig, rng: &mut Rng) -> Result<Graph> {
    cfg.validate()?;
    let c = cfg.n_classes();
    let n = cfg.n_nodes();
    let d = cfg.feature_dim;

    let mut means = rng.fork("class-means");
    let mu: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..d).map(|_| cfg.mean_scale * means.normal()).collect())
        .collect();

    let labels: Vec<usize> = (0..n).map(|i| i / cfg.nodes_per_class).collect();

    let mut feat = rng.fork("features");
    let mut x = Tensor::zeros(n, d);
    for (i, &y) in labels.iter().enumerate() {
        for (xj, m) in x.row_mut(i).iter_mut().zip(&mu[y]) {
            *xj = m + cfg.feature_noise * feat.normal();
        }
    }

    let mut er = rng.fork("edges");
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if labels[u] == labels[v] { cfg.p_in } else { cfg.p_out };
            if er.bernoulli(p) {
                edges.push((u, v));
            }
        }
    }

    Graph::new(x, edges, labels, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SbmConfig {
        SbmConfig {
            n_tasks: 1,
            classes_per_task: 2,
            nodes_per_class: 2,
            p_in: 1.0,
            p_out: 0.0,
            feature_dim: 3,
            mean_scale: 1.0,
            feature_noise: 0.0,
        }
    }

    #[test]
    fn degenerate_probabilities_give_two_cliques() {
        let g = generate_sbm(&tiny(), &mut Rng::new(1)).unwrap();
        assert_eq!(g.n_nodes(), 4);
        assert_eq!(g.edges(), &[(0, 1), (2, 3)]);
    }

    #[test]
    fn zero_feature_noise_collapses_class_rows() {
        let g = generate_sbm(&tiny(), &mut Rng::new(2)).unwrap();
        assert_eq!(g.features().row(0), g.features().row(1));
        assert_eq!(g.features().row(2), g.features().row(3));
        assert_ne!(g.features().row(0), g.features().row(2));
    }

    #[test]
    fn rejects_inverted_probabilities() {
        let cfg = SbmConfig {
            p_in: 0.1,
            p_out: 0.2,
            ..tiny()
        };
        assert!(matches!(
            generate_sbm(&cfg, &mut Rng::new(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn intra_class_edge_rate_matches_p_in() {
        // Pool 100 seeds; compare the realised rate with p_in using a 3-SE band.
        let cfg = SbmConfig {
            n_tasks: 1,
            classes_per_task: 2,
            nodes_per_class: 10,
            p_in: 0.3,
            p_out: 0.05,
            feature_dim: 2,
            mean_scale: 1.0,
            feature_noise: 1.0,
        };
        let root = Rng::new(99);
        let mut hits = 0usize;
        let mut trials = 0usize;
        for s in 0..100 {
            let g = generate_sbm(&cfg, &mut root.fork_indexed("sbm", s)).unwrap();
            hits += g
                .edges()
                .iter()
                .filter(|&&(u, v)| g.labels()[u] == g.labels()[v])
                .count();
            trials += 2 * (10 * 9 / 2);
        }
        let rate = hits as f64 / trials as f64;
        let se = (0.3 * 0.7 / trials as f64).sqrt();
        assert!((rate - 0.3).abs() <= 3.0 * se, "rate {rate} se {se}");
    }
}
