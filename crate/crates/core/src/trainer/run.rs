use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::eval::PerformanceMatrix;
use crate::graph::{inject_noise, partition_tasks, Graph, TaskView};
use crate::tensor::Rng;

use super::checkpoint::Checkpoint;
use super::config::{Components, Mode, TrainConfig, Variant};
use super::state::{evaluate, train_joint_stage, train_task, ContinualState, TaskLog};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Continual(Components),
    Joint,
}

impl From<Mode> for Method {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Ufo => Method::Continual(Components::FULL),
            Mode::Bare => Method::Continual(Components::BARE),
            Mode::Joint => Method::Joint,
        }
    }
}

impl Method {
    /// Stable tag stored in checkpoints.
    pub fn code(self) -> u64 {
        match self {
            Method::Joint => 16,
            Method::Continual(c) => {
                c.kp as u64 | (c.new_scores as u64) << 1 | (c.replay as u64) << 2 | (c.replay_scores as u64) << 3
            }
        }
    }

    /// `ufo`, `bare`, `joint`, an ablation label such as `BM+KP`, or a
    /// `kp,ns,r,rs` flag list for other component sets.
    pub fn label(self) -> String {
        match self {
            Method::Joint => "joint".into(),
            Method::Continual(c) if c == Components::FULL => "ufo".into(),
            Method::Continual(c) if c == Components::BARE => "bare".into(),
            Method::Continual(c) => match Variant::CHAIN.iter().find(|v| v.components() == c) {
                Some(v) => v.label().into(),
                None => {
                    let flags = [(c.kp, "kp"), (c.new_scores, "ns"), (c.replay, "r"), (c.replay_scores, "rs")];
                    flags.iter().filter(|f| f.0).map(|f| f.1).collect::<Vec<_>>().join(",")
                }
            },
        }
    }
}

/// Splits the graph into tasks and corrupts each task's training labels.
pub fn prepare_tasks(graph: &Graph, cfg: &TrainConfig) -> Result<Vec<TaskView>> {
    let root = Rng::new(cfg.seed);
    partition_tasks(graph, cfg.classes_per_task, &root)?
        .iter()
        .enumerate()
        .map(|(t, tv)| {
            inject_noise(
                tv,
                cfg.noise_kind,
                cfg.noise_ratio,
                &mut root.fork_indexed("noise", t as u64),
            )
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub matrix: PerformanceMatrix,
    pub logs: Vec<TaskLog>,
    /// Seconds per task of this process; resumed tasks are absent.
    pub wall_times: Vec<f64>,
    pub state: ContinualState,
}

#[derive(Clone, Debug)]
pub struct CheckpointPolicy {
    pub dir: PathBuf,
    /// Save after every `every` finished tasks.
    pub every: usize,
}

impl CheckpointPolicy {
    pub fn path_for(dir: &Path, tasks_done: usize) -> PathBuf {
        dir.join(format!("checkpoint-{tasks_done:03}.ufo"))
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub checkpoint: Option<CheckpointPolicy>,
    pub resume: Option<Checkpoint>,
    /// Stop once this many tasks are done (for interrupted-run tests).
    pub stop_after: Option<usize>,
}

pub fn run_sequence(graph: &Graph, cfg: &TrainConfig, mode: Mode) -> Result<RunOutput> {
    run_method(graph, cfg, mode.into(), RunOptions::default())
}

pub fn run_method(graph: &Graph, cfg: &TrainConfig, method: Method, opts: RunOptions) -> Result<RunOutput> {
    cfg.validate()?;
    let tasks = prepare_tasks(graph, cfg)?;
    let root = Rng::new(cfg.seed);
    let (mut state, mut matrix, mut logs) = match opts.resume {
        Some(ck) => {
            if ck.method != method.code() || ck.seed != cfg.seed {
                return Err(Error::State(format!(
                    "checkpoint from method {} seed {} cannot resume method {} seed {}",
                    ck.method,
                    ck.seed,
                    method.code(),
                    cfg.seed
                )));
            }
            if ck.state.tasks_done > tasks.len() || ck.state.n_classes != graph.n_classes() {
                return Err(Error::State("checkpoint does not match this dataset".into()));
            }
            (ck.state, ck.matrix, ck.logs)
        }
        None => (
            ContinualState::new(graph.n_features(), graph.n_classes(), cfg, &root)?,
            PerformanceMatrix::new(),
            Vec::new(),
        ),
    };

    let mut wall_times = Vec::new();
    let last = opts.stop_after.map_or(tasks.len(), |s| s.min(tasks.len()));
    for t in state.tasks_done..last {
        let started = Instant::now();
        let log = match method {
            Method::Continual(parts) => train_task(&mut state, &tasks[t], cfg, parts, &root)?,
            Method::Joint => train_joint_stage(&mut state, &tasks, cfg, &root)?,
        };
        matrix.push_row(evaluate(&state.encoder, &state.heads, &tasks[..=t])?)?;
        logs.push(log);
        wall_times.push(started.elapsed().as_secs_f64());
        if let Some(p) = &opts.checkpoint {
            if p.every > 0 && state.tasks_done % p.every == 0 {
                std::fs::create_dir_all(&p.dir)?;
                let ck = Checkpoint {
                    method: method.code(),
                    seed: cfg.seed,
                    state: state.clone(),
                    matrix: matrix.clone(),
                    logs: logs.clone(),
                };
                ck.save(&CheckpointPolicy::path_for(&p.dir, state.tasks_done))?;
            }
        }
    }
    Ok(RunOutput {
        matrix,
        logs,
        wall_times,
        state,
    })
}
