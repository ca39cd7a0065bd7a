//! Class-conditional affine-coupling normalizing flow.
//!
//! The stack is `[permutation, coupling] x K`. Each coupling keeps the first
//! `passive = D / 2` coordinates and transforms the rest:
//!
//! ```text
//! u_b' = u_b * exp(s) + t,   s = gate * tanh(raw_s),   (raw_s, t) = MLP([u_a, onehot(y)])
//! ```
//!
//! so `log|det J| = sum(s)`. The MLP's output layer starts at zero, which makes a
//! fresh flow the identity map. The prior is a shared `N(0, I)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::{glorot, AdamConfig, AdamState, Rng, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Coupling {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub gate: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowModel {
    dim: usize,
    n_classes: usize,
    perms: Vec<Vec<usize>>,
    inv_perms: Vec<Vec<usize>>,
    pub couplings: Vec<Coupling>,
}

#[derive(Clone, Copy, Debug)]
pub struct CouplingVars<'t> {
    pub w1: Var<'t>,
    pub b1: Var<'t>,
    pub w2: Var<'t>,
    pub b2: Var<'t>,
    pub gate: Var<'t>,
}

/// Flow parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct FlowVars<'t> {
    pub couplings: Vec<CouplingVars<'t>>,
}

impl FlowVars<'_> {
    pub fn grads(&self) -> Vec<Option<Tensor>> {
        self.couplings
            .iter()
            .flat_map(|c| [c.w1, c.b1, c.w2, c.b2, c.gate])
            .map(|v| v.grad())
            .collect()
    }
}

pub fn one_hot(labels: &[usize], n_classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(labels.len(), n_classes);
    for (i, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(Error::Index {
                op: "one_hot",
                index: l,
                bound: n_classes,
            });
        }
        t.set(i, l, 1.0);
    }
    Ok(t)
}

fn invert(perm: &[usize]) -> Result<Vec<usize>> {
    let mut inv = vec![usize::MAX; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        if p >= perm.len() || inv[p] != usize::MAX {
            return Err(Error::Contract(format!("{perm:?} is not a permutation")));
        }
        inv[p] = k;
    }
    Ok(inv)
}

/// Input coordinates that sit in the passive half of every coupling.
fn untransformed(perms: &[Vec<usize>], passive: usize) -> Vec<usize> {
    let dim = perms.first().map_or(0, |p| p.len());
    let mut origin: Vec<usize> = (0..dim).collect();
    let mut hit = vec![false; dim];
    for p in perms {
        origin = p.iter().map(|&k| origin[k]).collect();
        for &o in &origin[passive..] {
            hit[o] = true;
        }
    }
    (0..dim).filter(|&i| !hit[i]).collect()
}

impl FlowModel {
    /// Fresh identity-initialised flow with random fixed permutations. With two
    /// or more couplings the permutation set is redrawn until every coordinate
    /// reaches the transformed half at least once.
    pub fn new(
        dim: usize,
        n_classes: usize,
        n_couplings: usize,
        hidden: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let perms = loop {
            let perms: Vec<Vec<usize>> = (0..n_couplings).map(|_| rng.permutation(dim)).collect();
            if n_couplings < 2 || untransformed(&perms, dim / 2).is_empty() {
                break perms;
            }
        };
        Self::with_permutations(dim, n_classes, perms, hidden, rng)
    }

    /// Identity-initialised flow with caller-chosen permutations (one per coupling).
    pub fn with_permutations(
        dim: usize,
        n_classes: usize,
        perms: Vec<Vec<usize>>,
        hidden: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if dim == 0 || n_classes == 0 || hidden == 0 {
            return Err(Error::Config(
                "flow dimension, class count and hidden width must be positive".into(),
            ));
        }
        let mut inv_perms = Vec::with_capacity(perms.len());
        for p in &perms {
            if p.len() != dim {
                return Err(Error::Contract(format!(
                    "permutation of length {} for dimension {dim}",
                    p.len()
                )));
            }
            inv_perms.push(invert(p)?);
        }
        let passive = dim / 2;
        let active = dim - passive;
        let couplings = perms
            .iter()
            .map(|_| Coupling {
                w1: glorot(passive + n_classes, hidden, rng),
                b1: Tensor::zeros(1, hidden),
                w2: Tensor::zeros(hidden, 2 * active),
                b2: Tensor::zeros(1, 2 * active),
                gate: Tensor::scalar(1.0),
            })
            .collect();
        Ok(FlowModel {
            dim,
            n_classes,
            perms,
            inv_perms,
            couplings,
        })
    }

    /// Reassembles a flow from stored parameters, checking every shape.
    pub fn from_parts(
        dim: usize,
        n_classes: usize,
        perms: Vec<Vec<usize>>,
        couplings: Vec<Coupling>,
    ) -> Result<Self> {
        if perms.len() != couplings.len() {
            return Err(Error::Contract(format!(
                "{} permutations for {} couplings",
                perms.len(),
                couplings.len()
            )));
        }
        let mut inv_perms = Vec::with_capacity(perms.len());
        for p in &perms {
            if p.len() != dim {
                return Err(Error::Contract(format!(
                    "permutation of length {} for dimension {dim}",
                    p.len()
                )));
            }
            inv_perms.push(invert(p)?);
        }
        let passive = dim / 2;
        let active = dim - passive;
        for c in &couplings {
            let hidden = c.w1.cols();
            let expect = [
                (c.w1.shape(), (passive + n_classes, hidden)),
                (c.b1.shape(), (1, hidden)),
                (c.w2.shape(), (hidden, 2 * active)),
                (c.b2.shape(), (1, 2 * active)),
                (c.gate.shape(), (1, 1)),
            ];
            for (got, want) in expect {
                if got != want {
                    return Err(Error::Dimension {
                        op: "flow from_parts",
                        lhs: got,
                        rhs: want,
                    });
                }
            }
        }
        Ok(FlowModel {
            dim,
            n_classes,
            perms,
            inv_perms,
            couplings,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn passive(&self) -> usize {
        self.dim / 2
    }

    pub fn n_couplings(&self) -> usize {
        self.couplings.len()
    }

    pub fn hidden(&self) -> usize {
        self.couplings.first().map_or(0, |c| c.w1.cols())
    }

    pub fn permutations(&self) -> &[Vec<usize>] {
        &self.perms
    }

    /// Input coordinates no coupling ever transforms.
    pub fn untransformed(&self) -> Vec<usize> {
        untransformed(&self.perms, self.passive())
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> FlowVars<'t> {
        FlowVars {
            couplings: self
                .couplings
                .iter()
                .map(|c| CouplingVars {
                    w1: tape.leaf(c.w1.clone(), trainable),
                    b1: tape.leaf(c.b1.clone(), trainable),
                    w2: tape.leaf(c.w2.clone(), trainable),
                    b2: tape.leaf(c.b2.clone(), trainable),
                    gate: tape.leaf(c.gate.clone(), trainable),
                })
                .collect(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.couplings
            .iter_mut()
            .flat_map(|c| [&mut c.w1, &mut c.b1, &mut c.w2, &mut c.b2, &mut c.gate])
            .collect()
    }

    fn check_input(&self, rows: usize, cols: usize, labels: &[usize]) -> Result<()> {
        if cols != self.dim || rows != labels.len() {
            return Err(Error::Dimension {
                op: "flow input",
                lhs: (rows, cols),
                rhs: (labels.len(), self.dim),
            });
        }
        Ok(())
    }

    /// `(s, t)` for one coupling given the passive half and the condition.
    fn conditioner<'t>(
        &self,
        cv: &CouplingVars<'t>,
        passive: Var<'t>,
        cond: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let active = self.dim - self.passive();
        let h = passive
            .concat_cols(cond)?
            .matmul(cv.w1)?
            .add_row(cv.b1)?
            .relu();
        let out = h.matmul(cv.w2)?.add_row(cv.b2)?;
        let s = out.slice_cols(0, active)?.tanh().mul_scalar_var(cv.gate)?;
        let t = out.slice_cols(active, 2 * active)?;
        Ok((s, t))
    }

    /// One coupling layer forward; returns the transformed rows and the per-row
    /// log-determinant (`n x 1`).
    pub fn coupling_forward<'t>(
        &self,
        cv: &CouplingVars<'t>,
        u: Var<'t>,
        cond: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let p = self.passive();
        let ua = u.slice_cols(0, p)?;
        let ub = u.slice_cols(p, self.dim)?;
        let (s, t) = self.conditioner(cv, ua, cond)?;
        let ub = ub.mul(s.exp())?.add(t)?;
        Ok((ua.concat_cols(ub)?, s.sum_rows()))
    }

    fn coupling_inverse<'t>(
        &self,
        cv: &CouplingVars<'t>,
        u: Var<'t>,
        cond: Var<'t>,
    ) -> Result<Var<'t>> {
        let p = self.passive();
        let ua = u.slice_cols(0, p)?;
        let ub = u.slice_cols(p, self.dim)?;
        let (s, t) = self.conditioner(cv, ua, cond)?;
        let ub = ub.sub(t)?.mul(s.neg().exp())?;
        ua.concat_cols(ub)
    }

    /// `z = f(x, y)` and the summed log-determinant (`n x 1`).
    pub fn forward<'t>(
        &self,
        vars: &FlowVars<'t>,
        x: Var<'t>,
        labels: &[usize],
    ) -> Result<(Var<'t>, Var<'t>)> {
        let (n, d) = x.shape();
        self.check_input(n, d, labels)?;
        let tape = x.tape();
        let cond = tape.constant(one_hot(labels, self.n_classes)?);
        let mut u = x;
        let mut logdet = tape.constant(Tensor::zeros(n, 1));
        for (k, cv) in vars.couplings.iter().enumerate() {
            u = u.gather_cols(&self.perms[k])?;
            let (next, ld) = self.coupling_forward(cv, u, cond)?;
            u = next;
            logdet = logdet.add(ld)?;
        }
        Ok((u, logdet))
    }

    /// `log p(x | y)` per row (`n x 1`).
    pub fn log_prob<'t>(&self, vars: &FlowVars<'t>, x: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
        let (z, logdet) = self.forward(vars, x, labels)?;
        let norm = 0.5 * self.dim as f64 * (2.0 * PI).ln();
        z.square().sum_rows().scale(-0.5).add_scalar(-norm).add(logdet)
    }

    /// `-sum_i log p(x_i | y_i)` as a scalar.
    pub fn nll<'t>(&self, vars: &FlowVars<'t>, x: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
        Ok(self.log_prob(vars, x, labels)?.sum().neg())
    }

    /// Tape-free forward: `(z, logdet)`.
    pub fn forward_value(&self, x: &Tensor, labels: &[usize]) -> Result<(Tensor, Vec<f64>)> {
        let tape = Tape::new();
        let vars = self.bind(&tape, false);
        let (z, ld) = self.forward(&vars, tape.constant(x.clone()), labels)?;
        Ok((z.value(), ld.value().into_data()))
    }

    /// Tape-free `log p(x | y)` per row.
    pub fn log_prob_value(&self, x: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let vars = self.bind(&tape, false);
        Ok(self
            .log_prob(&vars, tape.constant(x.clone()), labels)?
            .value()
            .into_data())
    }

    /// `x = f^{-1}(z, y)`, computed as constants.
    pub fn inverse(&self, z: &Tensor, labels: &[usize]) -> Result<Tensor> {
        self.check_input(z.rows(), z.cols(), labels)?;
        let tape = Tape::new();
        let vars = self.bind(&tape, false);
        let cond = tape.constant(one_hot(labels, self.n_classes)?);
        let mut u = tape.constant(z.clone());
        for (k, cv) in vars.couplings.iter().enumerate().rev() {
            u = self.coupling_inverse(cv, u, cond)?;
            u = u.gather_cols(&self.inv_perms[k])?;
        }
        Ok(u.value())
    }

    /// Draws `z ~ N(0, I)` per label and maps it back through the flow.
    pub fn sample(&self, labels: &[usize], rng: &mut Rng) -> Result<Tensor> {
        let z = rng.normal_tensor(labels.len(), self.dim);
        self.inverse(&z, labels)
    }

    /// Replaces every output layer with random values, moving each coupling
    /// well away from the identity.
    pub fn scramble(&mut self, rng: &mut Rng) {
        for c in &mut self.couplings {
            c.w2 = rng.normal_tensor(c.w2.rows(), c.w2.cols()).map(|v| 0.5 * v);
            c.b2 = rng.normal_tensor(1, c.b2.cols()).map(|v| 0.3 * v);
            c.b1 = rng.normal_tensor(1, c.b1.cols()).map(|v| 0.1 * v);
            c.gate = Tensor::scalar(0.8);
        }
    }

    /// Frobenius norms of each coupling's weights, for diagnostics.
    pub fn layer_norms(&self) -> Vec<f64> {
        self.couplings
            .iter()
            .map(|c| {
                (c.w1.frobenius_norm().powi(2) + c.w2.frobenius_norm().powi(2)).sqrt()
            })
            .collect()
    }
}

/// Optimisation settings for [`train_flow`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub replay_batch: usize,
}

/// Earlier-task replay source for [`train_flow`]: a frozen flow and the class
/// sets (global ids) of every previous task.
#[derive(Clone, Copy, Debug)]
pub struct FlowReplay<'a> {
    pub flow: &'a FlowModel,
    pub task_classes: &'a [Vec<usize>],
}

/// Per-epoch losses and the final optimizer state of one [`train_flow`] call.
#[derive(Clone, Debug)]
pub struct FlowFit {
    pub losses: Vec<f64>,
    pub optimizer: AdamState,
}

/// Minimises the summed NLL of the current features plus, when `replay` is
/// given, one generated batch per previous task per epoch.
pub fn train_flow(
    flow: &mut FlowModel,
    x: &Tensor,
    labels: &[usize],
    replay: Option<FlowReplay<'_>>,
    cfg: &FlowTrainConfig,
    rng: &mut Rng,
) -> Result<FlowFit> {
    flow.check_input(x.rows(), x.cols(), labels)?;
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let batch = cfg.replay_batch.min(x.rows()).max(1);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let generated = match replay {
            Some(r) => r
                .task_classes
                .iter()
                .map(|classes| {
                    let ys: Vec<usize> =
                        (0..batch).map(|_| classes[rng.below(classes.len())]).collect();
                    r.flow.sample(&ys, rng).map(|xs| (xs, ys))
                })
                .collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };

        let tape = Tape::new();
        let vars = flow.bind(&tape, true);
        let mut loss = flow.nll(&vars, tape.constant(x.clone()), labels)?;
        for (xs, ys) in generated {
            loss = loss.add(flow.nll(&vars, tape.constant(xs), &ys)?)?;
        }
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "flow loss {value} at epoch {epoch}; layer norms {:?}",
                flow.layer_norms()
            )));
        }
        history.push(value);
        tape.backward(loss)?;
        let grads = vars.grads();
        adam.step(&mut flow.params_mut(), &grads)?;
    }
    Ok(FlowFit {
        losses: history,
        optimizer: adam,
    })
}
