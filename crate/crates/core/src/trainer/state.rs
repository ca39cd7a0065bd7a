use crate::encoder::{
    classify, extract_features, features_value, snapshot, Activation, ClassifierHeads, EncoderParams,
    FrozenSnapshot, HeadVars, Neighborhood,
};
use crate::error::{Error, Result};
use crate::flow::{train_flow, FlowModel, FlowReplay, FlowTrainConfig};
use crate::graph::TaskView;
use crate::reliability::{finalize_new_task, new_task_raw_scores, replay_scores, ScoreVector};
use crate::tensor::{AdamConfig, AdamState, Rng, Tape, Tensor, Var};

use super::config::{Components, TrainConfig};
use super::losses::{loss_distill, loss_embed_anchor, loss_new, loss_replay};

/// End-of-task copy of everything the next task treats as a teacher.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenModel {
    /// Zero-based index of the task after which the copy was taken.
    pub task: usize,
    pub model: FrozenSnapshot,
    pub flow: Option<FlowModel>,
}

#[derive(Clone, Debug)]
pub struct ContinualState {
    pub tasks_done: usize,
    /// Global class count; the flow conditions on all of them.
    pub n_classes: usize,
    pub encoder: EncoderParams,
    pub heads: ClassifierHeads,
    pub flow: Option<FlowModel>,
    pub frozen: Option<FrozenModel>,
    /// Global class ids of every finished task.
    pub task_classes: Vec<Vec<usize>>,
    pub classifier_opt: AdamState,
    pub flow_opt: Option<AdamState>,
    /// Generated batches inside flow training.
    pub flow_rng: Rng,
    /// Generated batches for classifier replay.
    pub replay_rng: Rng,
}

/// One row of the score audit trail.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreRecord {
    pub node: usize,
    pub clean_label: usize,
    pub observed_label: usize,
    pub noisy: bool,
    pub raw_score: f64,
    pub final_score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskLog {
    pub task: usize,
    pub n_train: usize,
    pub flipped: usize,
    pub final_loss: f64,
    pub flow_loss: Option<f64>,
    pub scores: Vec<ScoreRecord>,
}

impl TaskLog {
    /// Mean final score over clean and noisy training nodes.
    pub fn score_separation(&self) -> Option<(f64, f64)> {
        let mean = |noisy: bool| {
            let v: Vec<f64> = self
                .scores
                .iter()
                .filter(|r| r.noisy == noisy)
                .map(|r| r.final_score)
                .collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        Some((mean(false)?, mean(true)?))
    }
}

impl ContinualState {
    pub fn new(in_dim: usize, n_classes: usize, cfg: &TrainConfig, root: &Rng) -> Result<Self> {
        let encoder = EncoderParams::new(in_dim, cfg.hidden, cfg.layers, &mut root.fork("init-encoder"))?.with_activation(cfg.activation);
        Ok(ContinualState {
            tasks_done: 0,
            n_classes,
            encoder,
            heads: ClassifierHeads::default(),
            flow: None,
            frozen: None,
            task_classes: Vec::new(),
            classifier_opt: AdamState::new(AdamConfig::with_lr(cfg.lr)),
            flow_opt: None,
            flow_rng: root.fork("flow-replay"),
            replay_rng: root.fork("classifier-replay"),
        })
    }

    fn check_ready(&self, tv: &TaskView) -> Result<()> {
        let t = self.tasks_done;
        if self.heads.len() != t || self.task_classes.len() != t {
            return Err(Error::State(format!(
                "state at task {t} holds {} heads and {} class sets",
                self.heads.len(),
                self.task_classes.len()
            )));
        }
        if tv.classes.iter().any(|&c| c >= self.n_classes) {
            return Err(Error::State(format!(
                "task {} uses classes {:?} beyond the {} known",
                tv.task, tv.classes, self.n_classes
            )));
        }
        if t > 0 && self.frozen.as_ref().map(|f| f.task) != Some(t - 1) {
            return Err(Error::State(format!("no snapshot of task {} before task {t}", t - 1)));
        }
        Ok(())
    }

    fn take_snapshot(&mut self, task: usize) {
        self.frozen = Some(FrozenModel {
            task,
            model: snapshot(&self.encoder, &self.heads),
            flow: self.flow.clone(),
        });
    }
}

fn grads_or_zero(vars: &[Var<'_>]) -> Vec<Option<Tensor>> {
    vars.iter()
        .map(|v| Some(v.grad().unwrap_or_else(|| Tensor::zeros(v.rows(), v.cols()))))
        .collect()
}

fn step(
    adam: &mut AdamState,
    encoder: &mut EncoderParams,
    heads: &mut ClassifierHeads,
    vars: &[Var<'_>],
) -> Result<()> {
    let grads = grads_or_zero(vars);
    let mut params = encoder.params_mut();
    params.extend(heads.params_mut());
    adam.step(&mut params, &grads)
}

fn head_logits(x: &Tensor, frozen: &ClassifierHeads, j: usize) -> Result<Tensor> {
    let tape = Tape::new();
    let heads = frozen.bind(&tape, false);
    Ok(classify(tape.constant(x.clone()), &heads, j)?.value())
}

fn check_finite(value: f64, task: usize, epoch: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("loss {value} at task {task}, epoch {epoch}")))
    }
}

#[derive(Clone, Debug)]
struct ReplayBatch {
    task: usize,
    x: Tensor,
    labels: Vec<usize>,
    scores: ScoreVector,
}

fn draw_replay(
    flow: &FlowModel,
    task_classes: &[Vec<usize>],
    batch: usize,
    weighted: bool,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<ReplayBatch>> {
    task_classes
        .iter()
        .enumerate()
        .map(|(j, classes)| {
            let local: Vec<usize> = (0..batch).map(|_| rng.below(classes.len())).collect();
            let global: Vec<usize> = local.iter().map(|&c| classes[c]).collect();
            let x = flow.sample(&global, rng)?;
            let scores = if weighted {
                replay_scores(flow, &x, &global, &cfg.score_config())?
            } else {
                ScoreVector::uniform(batch)
            };
            Ok(ReplayBatch {
                task: j,
                x,
                labels: local,
                scores,
            })
        })
        .collect()
}

/// Per-task constants of the combined objective.
#[derive(Clone, Debug)]
struct Objective {
    task: usize,
    parts: Components,
    nbrs: Neighborhood,
    train: Vec<usize>,
    observed: Vec<usize>,
    observed_global: Vec<usize>,
    raw: Option<ScoreVector>,
    x_prev: Option<Tensor>,
    teachers: Vec<Tensor>,
    replay_flow: Option<FlowModel>,
    batch: usize,
    flow_start: Option<FlowModel>,
    flow_loss: Option<f64>,
}

impl Objective {
    /// Flow fit and scoring, the new head, and the frozen-model constants.
    fn begin(state: &mut ContinualState, tv: &TaskView, cfg: &TrainConfig, parts: Components, root: &Rng) -> Result<Self> {
        state.check_ready(tv)?;
        let t = state.tasks_done;
        let train = tv.train_idx();
        if train.is_empty() {
            return Err(Error::State(format!("task {} has no training nodes", tv.task)));
        }
        let n = train.len();
        let observed: Vec<usize> = train.iter().map(|&i| tv.observed[i]).collect();
        let observed_global: Vec<usize> = observed.iter().map(|&c| tv.classes[c]).collect();

        let mut flow_loss = None;
        let mut raw = None;
        let mut flow_start = None;
        if parts.uses_flow() {
            let x = features_value(tv, &state.encoder)?.select_rows(&train);
            if state.flow.is_none() {
                state.flow = Some(FlowModel::new(
                    x.cols(),
                    state.n_classes,
                    cfg.flow_couplings,
                    cfg.flow_hidden,
                    &mut root.fork("init-flow"),
                )?);
            }
            if cfg.flow_refit_epochs > 0 {
                flow_start = state.flow.clone();
            }
            let flow = state.flow.as_mut().expect("flow initialised above");
            let replay = match (&state.frozen, t) {
                (_, 0) => None,
                (Some(FrozenModel { flow: Some(prev), .. }), _) => Some(FlowReplay {
                    flow: prev,
                    task_classes: &state.task_classes,
                }),
                _ => return Err(Error::State(format!("no frozen flow before task {t}"))),
            };
            let fit = train_flow(flow, &x, &observed_global, replay, &cfg.flow_train_config(), &mut state.flow_rng)?;
            flow_loss = fit.losses.last().copied();
            state.flow_opt = Some(fit.optimizer);
            if parts.new_scores {
                raw = Some(new_task_raw_scores(flow, &x, &observed_global)?);
            }
        }

        let in_dim = state.encoder.output_dim(tv.features.cols());
        state
            .heads
            .add_head(in_dim, tv.n_classes(), &mut root.fork_indexed("init-head", t as u64));

        let use_kp = parts.kp && t > 0 && (cfg.alpha_e > 0.0 || cfg.alpha_l > 0.0);
        let use_replay = parts.replay && t > 0 && cfg.lambda_old > 0.0;
        let (x_prev, teachers) = match (&state.frozen, use_kp) {
            (Some(f), true) => {
                let x_prev = features_value(tv, &f.model.encoder)?.select_rows(&train);
                let teachers = (0..t)
                    .map(|j| head_logits(&x_prev, &f.model.heads, j))
                    .collect::<Result<Vec<_>>>()?;
                (Some(x_prev), teachers)
            }
            _ => (None, Vec::new()),
        };
        let replay_flow = match (&state.frozen, use_replay) {
            (Some(FrozenModel { flow: Some(f), .. }), true) => Some(f.clone()),
            (_, true) => return Err(Error::State(format!("replay at task {t} without a frozen flow"))),
            _ => None,
        };
        Ok(Objective {
            task: t,
            parts,
            nbrs: Neighborhood::of(tv),
            train,
            observed,
            observed_global,
            raw,
            x_prev,
            teachers,
            replay_flow,
            batch: cfg.replay_batch.min(n).max(1),
            flow_start,
            flow_loss,
        })
    }

    fn scores(&self, epoch: usize, cfg: &TrainConfig) -> Result<ScoreVector> {
        match &self.raw {
            Some(r) => finalize_new_task(r, epoch, &cfg.score_config()),
            None => Ok(ScoreVector::uniform(self.train.len())),
        }
    }

    fn draw(&self, task_classes: &[Vec<usize>], cfg: &TrainConfig, rng: &mut Rng) -> Result<Vec<ReplayBatch>> {
        match &self.replay_flow {
            Some(f) => draw_replay(f, task_classes, self.batch, self.parts.replay_scores, cfg, rng),
            None => Ok(Vec::new()),
        }
    }

    /// `L_new + lambda_old * L_old + alpha_E * L_E + alpha_L * L_L`; zero-weight
    /// terms are left off the tape.
    fn loss<'t>(
        &self,
        tape: &'t Tape,
        tv: &TaskView,
        enc: &[Var<'t>],
        heads: &[HeadVars<'t>],
        activation: Activation,
        scores: &ScoreVector,
        replay: &[ReplayBatch],
        cfg: &TrainConfig,
    ) -> Result<Var<'t>> {
        let x = extract_features(tape, tv, &self.nbrs, enc, activation)?.gather_rows(&self.train)?;
        let mut loss = loss_new(classify(x, heads, self.task)?, &self.observed, scores)?;

        let mut old: Option<Var<'_>> = None;
        for b in replay {
            let l = loss_replay(classify(tape.constant(b.x.clone()), heads, b.task)?, &b.labels, &b.scores)?;
            old = Some(match old {
                Some(acc) => acc.add(l)?,
                None => l,
            });
        }
        if let Some(old) = old {
            loss = loss.add(old.scale(cfg.lambda_old))?;
        }
        if let Some(xp) = &self.x_prev {
            if cfg.alpha_e > 0.0 {
                let anchor = loss_embed_anchor(x, tape.constant(xp.clone()))?;
                loss = loss.add(anchor.scale(cfg.alpha_e))?;
            }
            if cfg.alpha_l > 0.0 {
                for (j, teacher) in self.teachers.iter().enumerate() {
                    let kl = loss_distill(classify(x, heads, j)?, teacher, cfg.tau)?;
                    loss = loss.add(kl.scale(cfg.alpha_l))?;
                }
            }
        }
        Ok(loss)
    }
}

/// Trains the next task: flow fit, scoring, then `cfg.epochs` full-batch
/// steps on the combined objective, and finally a snapshot.
pub fn train_task(
    state: &mut ContinualState,
    tv: &TaskView,
    cfg: &TrainConfig,
    parts: Components,
    root: &Rng,
) -> Result<TaskLog> {
    let obj = Objective::begin(state, tv, cfg, parts, root)?;
    let t = obj.task;
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let mut final_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        let scores = obj.scores(epoch, cfg)?;
        let replay = obj.draw(&state.task_classes, cfg, &mut state.replay_rng)?;
        let tape = Tape::new();
        let enc = state.encoder.bind(&tape, true);
        let heads = state.heads.bind(&tape, true);
        let loss = obj.loss(&tape, tv, &enc, &heads, state.encoder.activation, &scores, &replay, cfg)?;
        final_loss = loss.item();
        check_finite(final_loss, t, epoch)?;
        tape.backward(loss)?;
        let vars: Vec<Var<'_>> = enc
            .iter()
            .copied()
            .chain(heads.iter().flat_map(|h| [h.weight, h.bias]))
            .collect();
        step(&mut adam, &mut state.encoder, &mut state.heads, &vars)?;
    }

    let mut flow_loss = obj.flow_loss;
    if parts.uses_flow() && cfg.flow_refit_epochs > 0 {
        let x = features_value(tv, &state.encoder)?.select_rows(&obj.train);
        state.flow = obj.flow_start.clone();
        let flow = state.flow.as_mut().expect("flow fitted above");
        let replay = match &state.frozen {
            Some(FrozenModel { flow: Some(prev), .. }) if t > 0 => Some(FlowReplay {
                flow: prev,
                task_classes: &state.task_classes,
            }),
            _ => None,
        };
        let refit = FlowTrainConfig {
            epochs: cfg.flow_refit_epochs,
            ..cfg.flow_train_config()
        };
        let fit = train_flow(flow, &x, &obj.observed_global, replay, &refit, &mut state.flow_rng)?;
        flow_loss = fit.losses.last().copied();
        state.flow_opt = Some(fit.optimizer);
    }

    let scores = match &obj.raw {
        Some(r) => {
            let fin = obj.scores(cfg.epochs.saturating_sub(1), cfg)?;
            obj.train
                .iter()
                .enumerate()
                .map(|(k, &i)| ScoreRecord {
                    node: tv.nodes[i],
                    clean_label: tv.classes[tv.clean[i]],
                    observed_label: obj.observed_global[k],
                    noisy: tv.noisy[i],
                    raw_score: r.scores[k],
                    final_score: fin.scores[k],
                })
                .collect()
        }
        None => Vec::new(),
    };

    state.classifier_opt = adam;
    state.task_classes.push(tv.classes.clone());
    state.take_snapshot(t);
    state.tasks_done += 1;
    Ok(TaskLog {
        task: t,
        n_train: obj.train.len(),
        flipped: obj.train.iter().filter(|&&i| tv.noisy[i]).count(),
        final_loss,
        flow_loss,
        scores,
    })
}

/// Parameter tensor a [`ObjectiveProbe`] differentiates against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeTarget {
    EncoderWeight(usize),
    HeadWeight(usize),
}

/// The full training objective of one step of the next task, frozen at a
/// given epoch and replay draw, as a function of a single parameter tensor.
#[derive(Clone, Debug)]
pub struct ObjectiveProbe {
    objective: Objective,
    tv: TaskView,
    encoder: EncoderParams,
    heads: ClassifierHeads,
    scores: ScoreVector,
    replay: Vec<ReplayBatch>,
    cfg: TrainConfig,
    target: ProbeTarget,
}

impl ObjectiveProbe {
    /// Leaves `state` untouched; the preparation runs on a copy.
    pub fn new(
        state: &ContinualState,
        tv: &TaskView,
        cfg: &TrainConfig,
        parts: Components,
        root: &Rng,
        epoch: usize,
        target: ProbeTarget,
    ) -> Result<Self> {
        let mut s = state.clone();
        let objective = Objective::begin(&mut s, tv, cfg, parts, root)?;
        let scores = objective.scores(epoch, cfg)?;
        let replay = objective.draw(&s.task_classes, cfg, &mut s.replay_rng)?;
        let bound = match target {
            ProbeTarget::EncoderWeight(l) => (l, s.encoder.weights.len()),
            ProbeTarget::HeadWeight(j) => (j, s.heads.len()),
        };
        if bound.0 >= bound.1 {
            return Err(Error::Index {
                op: "objective probe",
                index: bound.0,
                bound: bound.1,
            });
        }
        Ok(ObjectiveProbe {
            objective,
            tv: tv.clone(),
            encoder: s.encoder,
            heads: s.heads,
            scores,
            replay,
            cfg: cfg.clone(),
            target,
        })
    }

    /// Current value of the probed tensor.
    pub fn point(&self) -> Tensor {
        match self.target {
            ProbeTarget::EncoderWeight(l) => self.encoder.weights[l].clone(),
            ProbeTarget::HeadWeight(j) => self.heads.heads[j].weight.clone(),
        }
    }

    /// Objective with the probed tensor replaced by `p`; every other
    /// parameter is a constant.
    pub fn loss<'t>(&self, tape: &'t Tape, p: Var<'t>) -> Result<Var<'t>> {
        let mut enc = self.encoder.bind(tape, false);
        let mut heads = self.heads.bind(tape, false);
        match self.target {
            ProbeTarget::EncoderWeight(l) => enc[l] = p,
            ProbeTarget::HeadWeight(j) => heads[j].weight = p,
        }
        self.objective.loss(
            tape,
            &self.tv,
            &enc,
            &heads,
            self.encoder.activation,
            &self.scores,
            &self.replay,
            &self.cfg,
        )
    }

    /// Number of replay batches in the frozen draw.
    pub fn replay_batches(&self) -> usize {
        self.replay.len()
    }
}

/// Joint reference: retrains a fresh model on the union of tasks `0..=t`.
pub fn train_joint_stage(
    state: &mut ContinualState,
    tasks: &[TaskView],
    cfg: &TrainConfig,
    root: &Rng,
) -> Result<TaskLog> {
    let t = state.tasks_done;
    let current = tasks
        .get(t)
        .ok_or_else(|| Error::State(format!("joint stage {t} beyond {} tasks", tasks.len())))?;
    let seen = &tasks[..=t];
    let in_dim = current.features.cols();
    let mut encoder = EncoderParams::new(in_dim, cfg.hidden, cfg.layers, &mut root.fork("init-encoder"))?.with_activation(cfg.activation);
    let mut heads = ClassifierHeads::default();
    for (j, tv) in seen.iter().enumerate() {
        heads.add_head(
            encoder.output_dim(in_dim),
            tv.n_classes(),
            &mut root.fork_indexed("init-head", j as u64),
        );
    }
    let prepared: Vec<(Neighborhood, Vec<usize>, Vec<usize>)> = seen
        .iter()
        .map(|tv| {
            let train = tv.train_idx();
            let y = train.iter().map(|&i| tv.observed[i]).collect();
            (Neighborhood::of(tv), train, y)
        })
        .collect();

    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let mut final_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        let tape = Tape::new();
        let enc = encoder.bind(&tape, true);
        let hv = heads.bind(&tape, true);
        let mut loss: Option<Var<'_>> = None;
        for (j, (tv, (nbrs, train, y))) in seen.iter().zip(&prepared).enumerate() {
            let x = extract_features(&tape, tv, nbrs, &enc, encoder.activation)?.gather_rows(train)?;
            let l = loss_new(classify(x, &hv, j)?, y, &ScoreVector::uniform(y.len()))?;
            loss = Some(match loss {
                Some(acc) => acc.add(l)?,
                None => l,
            });
        }
        let loss = loss.expect("at least one task");
        final_loss = loss.item();
        check_finite(final_loss, t, epoch)?;
        tape.backward(loss)?;
        let vars: Vec<Var<'_>> = enc
            .iter()
            .copied()
            .chain(hv.iter().flat_map(|h| [h.weight, h.bias]))
            .collect();
        step(&mut adam, &mut encoder, &mut heads, &vars)?;
    }

    state.encoder = encoder;
    state.heads = heads;
    state.classifier_opt = adam;
    state.task_classes.push(current.classes.clone());
    state.take_snapshot(t);
    state.tasks_done += 1;
    let train = current.train_idx();
    Ok(TaskLog {
        task: t,
        n_train: train.len(),
        flipped: train.iter().filter(|&&i| current.noisy[i]).count(),
        final_loss,
        flow_loss: None,
        scores: Vec::new(),
    })
}

/// Test accuracy of head `j` on task `j`'s clean labels, for every task given.
pub fn evaluate(encoder: &EncoderParams, heads: &ClassifierHeads, tasks: &[TaskView]) -> Result<Vec<f64>> {
    tasks
        .iter()
        .enumerate()
        .map(|(j, tv)| {
            let test = tv.test_idx();
            if test.is_empty() {
                return Err(Error::State(format!("task {} has no test nodes", tv.task)));
            }
            let x = features_value(tv, encoder)?.select_rows(&test);
            let logits = head_logits(&x, heads, j)?;
            let correct = test
                .iter()
                .enumerate()
                .filter(|&(k, &i)| argmax(logits.row(k)) == tv.clean[i])
                .count();
            Ok(correct as f64 / test.len() as f64)
        })
        .collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
