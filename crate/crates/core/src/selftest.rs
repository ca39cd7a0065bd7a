//! Built-in numerical checks: gradients of every kernel and of the full
//! training objective, flow invertibility, and score invariants.

use std::fmt;

use crate::error::Result;
use crate::flow::FlowModel;
use crate::graph::{generate_sbm, SbmConfig};
use crate::reliability::{clip_scores, relative_scores};
use crate::tensor::{grad_check, Rng, Tape, Tensor, Var};
use crate::trainer::{
    prepare_tasks, train_task, Components, ContinualState, ObjectiveProbe, ProbeTarget, TrainConfig,
};

pub const FD_STEP: f64 = 1e-6;
pub const KERNEL_TOL: f64 = 1e-6;
pub const COMPOSITE_TOL: f64 = 1e-4;
pub const ROUND_TRIP_TOL: f64 = 1e-8;

/// One measured quantity against its upper limit.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub limit: f64,
}

impl Check {
    pub fn new(name: impl Into<String>, measured: f64, limit: f64) -> Self {
        Check {
            name: name.into(),
            measured,
            limit,
        }
    }

    pub fn passed(&self) -> bool {
        self.measured <= self.limit
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<32} {:.3e} (limit {:.0e})",
            if self.passed() { "ok  " } else { "FAIL" },
            self.name,
            self.measured,
            self.limit
        )
    }
}

type Probe = for<'t> fn(&'t Tape, Var<'t>, &Fixed) -> Result<Var<'t>>;

/// Constant operands shared by the kernel checks.
struct Fixed {
    a: Tensor,
    b: Tensor,
    row: Tensor,
    weights: Tensor,
    square: Tensor,
}

impl Fixed {
    fn new() -> Self {
        let mut rng = Rng::new(2024);
        Fixed {
            a: rng.normal_tensor(4, 3),
            b: rng.normal_tensor(3, 5),
            row: rng.normal_tensor(1, 3),
            weights: rng.normal_tensor(4, 3),
            square: rng.normal_tensor(4, 4),
        }
    }

    /// Weighted sum so every output entry reaches the scalar with its own weight.
    fn reduce<'t>(&self, v: Var<'t>) -> Result<Var<'t>> {
        let (r, c) = v.shape();
        let mut w = Tensor::zeros(r, c);
        for i in 0..r {
            for j in 0..c {
                w.set(i, j, self.weights.get(i % 4, j % 3) + 0.1 * (i * c + j) as f64);
            }
        }
        Ok(v.mul(v.tape().constant(w))?.sum())
    }
}

fn kernel_probes() -> Vec<(&'static str, Probe)> {
    vec![
        ("matmul (left operand)", |t, x, f| f.reduce(x.matmul(t.constant(f.b.clone()))?)),
        ("matmul (right operand)", |t, x, f| {
            f.reduce(t.constant(f.square.clone()).matmul(x)?)
        }),
        ("add", |t, x, f| f.reduce(x.add(t.constant(f.a.clone()))?)),
        ("sub", |t, x, f| f.reduce(t.constant(f.a.clone()).sub(x)?)),
        ("mul", |t, x, f| f.reduce(x.mul(t.constant(f.a.clone()))?)),
        ("mul (same operand)", |_, x, f| f.reduce(x.mul(x)?)),
        ("add_row (matrix)", |t, x, f| f.reduce(x.add_row(t.constant(f.row.clone()))?)),
        ("add_row (bias)", |t, x, f| {
            f.reduce(t.constant(f.a.clone()).add_row(x.slice_cols(0, 3)?.gather_rows(&[1])?)?)
        }),
        ("mul_scalar_var", |t, x, f| {
            f.reduce(t.constant(f.a.clone()).mul_scalar_var(x.gather_rows(&[2])?.slice_cols(1, 2)?)?)
        }),
        ("scale", |_, x, f| f.reduce(x.scale(-1.7))),
        ("neg", |_, x, f| f.reduce(x.neg())),
        ("add_scalar", |_, x, f| f.reduce(x.add_scalar(0.3))),
        ("relu", |_, x, f| f.reduce(x.relu())),
        ("tanh", |_, x, f| f.reduce(x.tanh())),
        ("exp", |_, x, f| f.reduce(x.exp())),
        ("square", |_, x, f| f.reduce(x.square())),
        ("sum", |_, x, _| Ok(x.sum())),
        ("sum_rows", |_, x, f| f.reduce(x.sum_rows())),
        ("softmax_rows", |_, x, f| f.reduce(x.softmax_rows())),
        ("log_softmax_rows", |_, x, f| f.reduce(x.log_softmax_rows())),
        ("pick", |_, x, f| f.reduce(x.pick(&[2, 0, 1, 2])?)),
        ("concat_cols", |t, x, f| f.reduce(x.concat_cols(t.constant(f.a.clone()))?)),
        ("slice_cols", |_, x, f| f.reduce(x.slice_cols(1, 3)?)),
        ("gather_rows", |_, x, f| f.reduce(x.gather_rows(&[3, 0, 3, 1, 2])?)),
        ("gather_cols", |_, x, f| f.reduce(x.gather_cols(&[2, 0, 1])?)),
        ("segment_mean", |_, x, f| f.reduce(x.segment_mean(&[1, 0, 1, 1], 3)?)),
    ]
}

/// Gradient check of every differentiable kernel at a fixed random point.
pub fn kernel_grad_checks() -> Result<Vec<Check>> {
    // Entries bounded away from zero keep relu off its kink.
    kernel_grad_checks_at(&Rng::new(7).normal_tensor(4, 3).map(|v| v + 0.25 * v.signum()))
}

/// Gradient check of every differentiable kernel at `point`, a 4 x 3 matrix.
pub fn kernel_grad_checks_at(point: &Tensor) -> Result<Vec<Check>> {
    let fixed = Fixed::new();
    kernel_probes()
        .into_iter()
        .map(|(name, probe)| {
            let err = grad_check(|tape, x| probe(tape, x, &fixed), point, FD_STEP)?;
            Ok(Check::new(format!("grad {name}"), err, KERNEL_TOL))
        })
        .collect()
}

/// Gradient check of the flow negative log-likelihood against a coupling's
/// first-layer weight.
pub fn flow_grad_check() -> Result<Check> {
    let mut rng = Rng::new(31);
    let mut flow = FlowModel::new(5, 3, 3, 6, &mut rng)?;
    flow.scramble(&mut rng);
    let x = rng.normal_tensor(6, 5);
    let labels = [0, 1, 2, 2, 1, 0];
    let point = flow.couplings[1].w1.clone();
    let err = grad_check(
        |tape, w| {
            let mut vars = flow.bind(tape, false);
            vars.couplings[1].w1 = w;
            flow.nll(&vars, tape.constant(x.clone()), &labels)
        },
        &point,
        FD_STEP,
    )?;
    Ok(Check::new("grad flow nll", err, COMPOSITE_TOL))
}

/// Gradient checks of the complete second-task objective (new-task loss,
/// scored replay, anchoring and distillation) on a small synthetic graph.
pub fn objective_grad_checks() -> Result<Vec<Check>> {
    let sbm = SbmConfig {
        n_tasks: 2,
        classes_per_task: 2,
        nodes_per_class: 10,
        p_in: 0.4,
        p_out: 0.05,
        feature_dim: 4,
        mean_scale: 1.0,
        feature_noise: 1.0,
    };
    let cfg = TrainConfig {
        seed: 5,
        epochs: 4,
        hidden: 3,
        flow_couplings: 2,
        flow_hidden: 4,
        flow_epochs: 4,
        flow_refit_epochs: 2,
        warmup: 3,
        replay_batch: 6,
        classes_per_task: 2,
        noise_ratio: 0.3,
        ..TrainConfig::desk()
    };
    let graph = generate_sbm(&sbm, &mut Rng::new(cfg.seed).fork("data"))?;
    let tasks = prepare_tasks(&graph, &cfg)?;
    let root = Rng::new(cfg.seed);
    let mut state = ContinualState::new(graph.n_features(), graph.n_classes(), &cfg, &root)?;
    train_task(&mut state, &tasks[0], &cfg, Components::FULL, &root)?;
    [
        ("encoder weight", ProbeTarget::EncoderWeight(0)),
        ("old head weight", ProbeTarget::HeadWeight(0)),
        ("new head weight", ProbeTarget::HeadWeight(1)),
    ]
    .into_iter()
    .map(|(name, target)| {
        let probe = ObjectiveProbe::new(&state, &tasks[1], &cfg, Components::FULL, &root, 2, target)?;
        let err = grad_check(|tape, p| probe.loss(tape, p), &probe.point(), FD_STEP)?;
        Ok(Check::new(format!("grad objective / {name}"), err, COMPOSITE_TOL))
    })
    .collect()
}

/// Largest `|f^-1(f(x, y), y) - x|` over `n` random rows of a scrambled flow.
pub fn flow_round_trip(dim: usize, n: usize, seed: u64) -> Result<Check> {
    let mut rng = Rng::new(seed);
    let n_classes = 3;
    let mut flow = FlowModel::new(dim, n_classes, 4, 8, &mut rng)?;
    flow.scramble(&mut rng);
    let x = rng.normal_tensor(n, dim).map(|v| 2.0 * v);
    let labels: Vec<usize> = (0..n).map(|_| rng.below(n_classes)).collect();
    let (z, _) = flow.forward_value(&x, &labels)?;
    let back = flow.inverse(&z, &labels)?;
    Ok(Check::new(
        format!("flow round trip (D={dim}, {n} rows)"),
        back.max_abs_diff(&x),
        ROUND_TRIP_TOL,
    ))
}

/// Sum, shift, clipping, monotonicity and the `[ln 3, 0]` example.
pub fn score_checks() -> Result<Vec<Check>> {
    let mut rng = Rng::new(99);
    let r: Vec<f64> = (0..40).map(|_| 3.0 * rng.normal()).collect();
    let b = r.len() as f64;
    let s = relative_scores(&r)?;
    let sum_err = (s.scores.iter().sum::<f64>() - b).abs();

    let shifted: Vec<f64> = r.iter().map(|v| v + 123.456).collect();
    let s2 = relative_scores(&shifted)?;
    let shift_err = s
        .scores
        .iter()
        .zip(&s2.scores)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let (alpha, beta) = (0.1, 5.0);
    let clipped = clip_scores(&s, alpha, beta)?;
    let outside = clipped
        .scores
        .iter()
        .map(|&v| (alpha - v).max(v - beta).max(0.0))
        .fold(0.0, f64::max);

    let mut order: Vec<usize> = (0..r.len()).collect();
    order.sort_by(|&i, &j| r[i].total_cmp(&r[j]));
    let inversions = order
        .windows(2)
        .filter(|w| s.scores[w[1]] < s.scores[w[0]])
        .count();

    let ex = relative_scores(&[3f64.ln(), 0.0])?;
    let ex_err = (ex.scores[0] - 1.5).abs().max((ex.scores[1] - 0.5).abs());

    Ok(vec![
        Check::new("scores sum to pool size", sum_err, 1e-9),
        Check::new("scores shift invariant", shift_err, 1e-12),
        Check::new("clipped scores in range", outside, 0.0),
        Check::new("scores monotone in r", inversions as f64, 0.0),
        Check::new("scores [ln 3, 0] -> [1.5, 0.5]", ex_err, 1e-12),
    ])
}

/// Every check above, in a stable order.
pub fn run_all() -> Result<Vec<Check>> {
    let mut out = kernel_grad_checks()?;
    out.push(flow_grad_check()?);
    out.extend(objective_grad_checks()?);
    out.push(flow_round_trip(4, 100, 1)?);
    out.push(flow_round_trip(7, 100, 2)?);
    out.extend(score_checks()?);
    Ok(out)
}
