//! Mean-aggregation SAGE encoder and the growing multi-head classifier.
//!
//! The encoder output for node `v` is `x_v = [h_v, mean_{u in N(v)} h_u]` taken
//! at the last hidden layer, with no trailing weight or activation. That same
//! vector is the classifier input and the data space of the conditional flow;
//! the final SAGE weight is folded into each classifier head.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::TaskView;
use crate::tensor::{glorot, Rng, Tape, Tensor, Var};

/// Directed neighbour lists of one task graph, in aggregation-ready form.
#[derive(Clone, Debug)]
pub struct Neighborhood {
    n_nodes: usize,
    src: Vec<usize>,
    dst: Vec<usize>,
}

impl Neighborhood {
    pub fn of(tv: &TaskView) -> Self {
        let (src, dst) = tv.directed_edges();
        Neighborhood {
            n_nodes: tv.n_nodes(),
            src,
            dst,
        }
    }

    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)]) -> Self {
        let mut src = Vec::new();
        let mut dst = Vec::new();
        for &(u, v) in edges {
            src.extend([u, v]);
            dst.extend([v, u]);
        }
        Neighborhood { n_nodes, src, dst }
    }

    /// Row `v` is the mean of `h` over the neighbours of `v` (zero if isolated).
    pub fn mean<'t>(&self, h: Var<'t>) -> Result<Var<'t>> {
        h.gather_rows(&self.src)?.segment_mean(&self.dst, self.n_nodes)
    }
}

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply<'t>(self, z: Var<'t>) -> Var<'t> {
        match self {
            Activation::Relu => z.relu(),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Stable tag stored in checkpoints.
    pub fn code(self) -> u64 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_code(code: u64) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(Error::Config(format!("unknown activation {s:?} (relu|tanh)"))),
        }
    }
}

/// `act([h, mean_N(h)] W)`.
pub fn sage_layer<'t>(h: Var<'t>, nbrs: &Neighborhood, w: Var<'t>, act: Activation) -> Result<Var<'t>> {
    let agg = nbrs.mean(h)?;
    Ok(act.apply(h.concat_cols(agg)?.matmul(w)?))
}

/// Hidden-layer weights. `weights.len() == n_layers - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub weights: Vec<Tensor>,
    pub activation: Activation,
}

impl EncoderParams {
    /// `n_layers = 1` has no weights: the output is `[x0, mean_N(x0)]`.
    pub fn new(in_dim: usize, hidden: usize, n_layers: usize, rng: &mut Rng) -> Result<Self> {
        if n_layers == 0 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        let mut weights = Vec::with_capacity(n_layers - 1);
        let mut d = in_dim;
        for _ in 1..n_layers {
            weights.push(glorot(2 * d, hidden, rng));
            d = hidden;
        }
        Ok(EncoderParams {
            weights,
            activation: Activation::Relu,
        })
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len() + 1
    }

    /// Width of `x` for inputs of width `in_dim`.
    pub fn output_dim(&self, in_dim: usize) -> usize {
        2 * self.weights.last().map_or(in_dim, Tensor::cols)
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<Var<'t>> {
        self.weights
            .iter()
            .map(|w| tape.leaf(w.clone(), trainable))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights.iter_mut().collect()
    }
}

/// Aggregated features for every node of the task, on the given tape.
pub fn extract_features<'t>(
    tape: &'t Tape,
    tv: &TaskView,
    nbrs: &Neighborhood,
    weights: &[Var<'t>],
    act: Activation,
) -> Result<Var<'t>> {
    let mut h = tape.constant(tv.features.clone());
    for &w in weights {
        h = sage_layer(h, nbrs, w, act)?;
    }
    let agg = nbrs.mean(h)?;
    h.concat_cols(agg)
}

/// Tape-free evaluation of [`extract_features`].
pub fn features_value(tv: &TaskView, params: &EncoderParams) -> Result<Tensor> {
    let tape = Tape::new();
    let w = params.bind(&tape, false);
    Ok(extract_features(&tape, tv, &Neighborhood::of(tv), &w, params.activation)?.value())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// One affine head per task seen so far.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassifierHeads {
    pub heads: Vec<Head>,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadVars<'t> {
    pub weight: Var<'t>,
    pub bias: Var<'t>,
}

impl ClassifierHeads {
    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    /// Appends a Glorot-initialised head with zero bias.
    pub fn add_head(&mut self, in_dim: usize, n_classes: usize, rng: &mut Rng) {
        self.heads.push(Head {
            weight: glorot(in_dim, n_classes, rng),
            bias: Tensor::zeros(1, n_classes),
        });
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<HeadVars<'t>> {
        self.heads
            .iter()
            .map(|h| HeadVars {
                weight: tape.leaf(h.weight.clone(), trainable),
                bias: tape.leaf(h.bias.clone(), trainable),
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.heads
            .iter_mut()
            .flat_map(|h| [&mut h.weight, &mut h.bias])
            .collect()
    }
}

/// Logits of head `task_id`. No softmax.
pub fn classify<'t>(x: Var<'t>, heads: &[HeadVars<'t>], task_id: usize) -> Result<Var<'t>> {
    let head = heads.get(task_id).ok_or(Error::Index {
        op: "classify",
        index: task_id,
        bound: heads.len(),
    })?;
    x.matmul(head.weight)?.add_row(head.bias)
}

/// Deep copy of the encoder and heads at the end of a task.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenSnapshot {
    pub encoder: EncoderParams,
    pub heads: ClassifierHeads,
}

pub fn snapshot(p: &EncoderParams, heads: &ClassifierHeads) -> FrozenSnapshot {
    FrozenSnapshot {
        encoder: p.clone(),
        heads: heads.clone(),
    }
}

impl FrozenSnapshot {
    pub fn bit_eq(&self, other: &FrozenSnapshot) -> bool {
        let enc = self.encoder.weights.len() == other.encoder.weights.len()
            && self
                .encoder
                .weights
                .iter()
                .zip(&other.encoder.weights)
                .all(|(a, b)| a.bit_eq(b));
        let heads = self.heads.len() == other.heads.len()
            && self
                .heads
                .heads
                .iter()
                .zip(&other.heads.heads)
                .all(|(a, b)| a.weight.bit_eq(&b.weight) && a.bias.bit_eq(&b.bias));
        enc && heads
    }
}
