use super::Graph;
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Induced subgraph of one task.
///
/// Labels are stored as task-local class indices (`0..classes.len()`);
/// `classes[local]` is the global class id.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskView {
    pub task: usize,
    pub classes: Vec<usize>,
    pub nodes: Vec<usize>,
    pub features: Tensor,
    pub edges: Vec<(usize, usize)>,
    pub split: Vec<Split>,
    pub clean: Vec<usize>,
    pub observed: Vec<usize>,
    pub noisy: Vec<bool>,
}

impl TaskView {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        self.split
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == which)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn train_idx(&self) -> Vec<usize> {
        self.indices(Split::Train)
    }

    pub fn test_idx(&self) -> Vec<usize> {
        self.indices(Split::Test)
    }

    /// Both orientations of every edge as `(sources, targets)`, ready for
    /// neighbour aggregation.
    pub fn directed_edges(&self) -> (Vec<usize>, Vec<usize>) {
        let mut src = Vec::with_capacity(2 * self.edges.len());
        let mut dst = Vec::with_capacity(2 * self.edges.len());
        for &(u, v) in &self.edges {
            src.push(u);
            dst.push(v);
            src.push(v);
            dst.push(u);
        }
        (src, dst)
    }

    /// Global class id of a task-local label.
    pub fn global_class(&self, local: usize) -> usize {
        self.classes[local]
    }

    /// Relabels task-local node ids: new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> TaskView {
        let mut inverse = vec![0; perm.len()];
        for (k, &old) in perm.iter().enumerate() {
            inverse[old] = k;
        }
        let pick = |v: &Vec<usize>| perm.iter().map(|&o| v[o]).collect::<Vec<_>>();
        TaskView {
            task: self.task,
            classes: self.classes.clone(),
            nodes: pick(&self.nodes),
            features: self.features.select_rows(perm),
            edges: super::canonical_edges(
                self.edges.iter().map(|&(u, v)| (inverse[u], inverse[v])),
            ),
            split: perm.iter().map(|&o| self.split[o]).collect(),
            clean: pick(&self.clean),
            observed: pick(&self.observed),
            noisy: perm.iter().map(|&o| self.noisy[o]).collect(),
        }
    }
}

/// Class blocks per task: consecutive ascending ids, with a trailing single
/// class merged into the previous block.
pub fn class_blocks(n_classes: usize, classes_per_task: usize) -> Result<Vec<Vec<usize>>> {
    if classes_per_task == 0 {
        return Err(Error::Config("classes_per_task must be positive".into()));
    }
    let mut blocks: Vec<Vec<usize>> = (0..n_classes)
        .collect::<Vec<_>>()
        .chunks(classes_per_task)
        .map(<[usize]>::to_vec)
        .collect();
    if blocks.len() > 1 && blocks.last().is_some_and(|b| b.len() < 2) {
        let tail = blocks.pop().unwrap();
        blocks.last_mut().unwrap().extend(tail);
    }
    Ok(blocks)
}

/// Splits the graph into one induced-subgraph task per class block, with a
/// 60/20/20 train/val/test split drawn per task.
pub fn partition_tasks(g: &Graph, classes_per_task: usize, rng: &Rng) -> Result<Vec<TaskView>> {
    let blocks = class_blocks(g.n_classes(), classes_per_task)?;
    let mut local_of = vec![usize::MAX; g.n_nodes()];
    let mut out = Vec::with_capacity(blocks.len());

    for (t, classes) in blocks.into_iter().enumerate() {
        let mut class_local = vec![usize::MAX; g.n_classes()];
        for (k, &c) in classes.iter().enumerate() {
            class_local[c] = k;
        }
        let nodes: Vec<usize> = (0..g.n_nodes())
            .filter(|&i| class_local[g.labels()[i]] != usize::MAX)
            .collect();
        for (k, &i) in nodes.iter().enumerate() {
            local_of[i] = k;
        }
        let edges: Vec<(usize, usize)> = g
            .edges()
            .iter()
            .filter(|&&(u, v)| {
                class_local[g.labels()[u]] != usize::MAX && class_local[g.labels()[v]] != usize::MAX
            })
            .map(|&(u, v)| (local_of[u], local_of[v]))
            .collect();

        let n = nodes.len();
        let n_train = (0.6 * n as f64).floor() as usize;
        let n_val = (0.2 * n as f64).floor() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        rng.fork_indexed("split", t as u64).shuffle(&mut order);
        let mut split = vec![Split::Test; n];
        for (rank, &i) in order.iter().enumerate() {
            if rank < n_train {
                split[i] = Split::Train;
            } else if rank < n_train + n_val {
                split[i] = Split::Val;
            }
        }

        let clean: Vec<usize> = nodes.iter().map(|&i| class_local[g.labels()[i]]).collect();
        out.push(TaskView {
            task: t,
            classes,
            features: g.features().select_rows(&nodes),
            nodes,
            edges: super::canonical_edges(edges),
            split,
            observed: clean.clone(),
            noisy: vec![false; n],
            clean,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sbm, SbmConfig};

    fn graph() -> Graph {
        let cfg = SbmConfig {
            n_tasks: 2,
            classes_per_task: 3,
            nodes_per_class: 10,
            p_in: 0.4,
            p_out: 0.1,
            ..SbmConfig::default()
        };
        generate_sbm(&cfg, &mut Rng::new(5)).unwrap()
    }

    #[test]
    fn six_classes_three_per_task() {
        let tasks = partition_tasks(&graph(), 3, &Rng::new(0)).unwrap();
        assert_eq!(tasks.len(), 2);
        assert_eq!(tasks[0].classes, vec![0, 1, 2]);
        assert_eq!(tasks[1].classes, vec![3, 4, 5]);
    }

    #[test]
    fn node_sets_partition_the_graph() {
        let g = graph();
        let tasks = partition_tasks(&g, 3, &Rng::new(0)).unwrap();
        let mut all: Vec<usize> = tasks.iter().flat_map(|t| t.nodes.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..g.n_nodes()).collect::<Vec<_>>());
    }

    #[test]
    fn no_cross_task_edges() {
        let g = graph();
        let cross = g
            .edges()
            .iter()
            .filter(|&&(u, v)| g.labels()[u] / 3 != g.labels()[v] / 3)
            .count();
        assert!(cross > 0, "fixture should contain cross-task edges");
        let tasks = partition_tasks(&g, 3, &Rng::new(0)).unwrap();
        let kept: usize = tasks.iter().map(|t| t.edges.len()).sum();
        assert_eq!(kept, g.edges().len() - cross);
        for t in &tasks {
            for &(u, v) in &t.edges {
                let (gu, gv) = (t.nodes[u], t.nodes[v]);
                assert!(g.edges().contains(&(gu.min(gv), gu.max(gv))));
            }
        }
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let tasks = partition_tasks(&graph(), 3, &Rng::new(0)).unwrap();
        for t in &tasks {
            assert_eq!(t.indices(Split::Train).len(), 18);
            assert_eq!(t.indices(Split::Val).len(), 6);
            assert_eq!(t.indices(Split::Test).len(), 6);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let g = graph();
        assert_eq!(
            partition_tasks(&g, 3, &Rng::new(4)).unwrap(),
            partition_tasks(&g, 3, &Rng::new(4)).unwrap()
        );
    }

    #[test]
    fn remainder_rules() {
        assert_eq!(
            class_blocks(7, 3).unwrap(),
            vec![vec![0, 1, 2], vec![3, 4, 5, 6]]
        );
        assert_eq!(
            class_blocks(8, 3).unwrap(),
            vec![vec![0, 1, 2], vec![3, 4, 5], vec![6, 7]]
        );
        assert!(matches!(class_blocks(6, 0), Err(Error::Config(_))));
    }
}
