//! Task-sequence training: the combined objective, the bare and joint
//! references, and checkpoints.

mod checkpoint;
mod config;
mod losses;
mod run;
mod state;

pub use checkpoint::{Archive, Checkpoint, MAGIC};
pub use config::{Components, Mode, Settings, TrainConfig, Variant};
pub use losses::{loss_distill, loss_embed_anchor, loss_new, loss_replay, weighted_cross_entropy};
pub use run::{prepare_tasks, run_method, run_sequence, CheckpointPolicy, Method, RunOptions, RunOutput};
pub use state::{
    evaluate, train_joint_stage, train_task, ContinualState, FrozenModel, ObjectiveProbe, ProbeTarget, ScoreRecord, TaskLog,
};
