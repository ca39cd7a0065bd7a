//! Instance reliability scores from conditional log-likelihoods.
//!
//! `s = b * softmax(r - max r)` gives scores with mean exactly one over the
//! pool; new-task scores are then blended toward uniform during a warm-up and
//! clipped to `[alpha, beta]`.

use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreStage {
    Raw,
    Smoothed,
    Clipped,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub stage: ScoreStage,
}

impl ScoreVector {
    /// Pool size `b`.
    pub fn pool(&self) -> usize {
        self.scores.len()
    }

    /// All-ones scores, used when instance weighting is switched off.
    pub fn uniform(b: usize) -> Self {
        ScoreVector {
            scores: vec![1.0; b],
            stage: ScoreStage::Clipped,
        }
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::column(&self.scores)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreConfig {
    pub clip_min: f64,
    pub clip_max: f64,
    pub warmup: usize,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            clip_min: 0.1,
            clip_max: 5.0,
            warmup: 20,
        }
    }
}

pub fn relative_scores(r: &[f64]) -> Result<ScoreVector> {
    if let Some(i) = r.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "log-likelihood r[{i}] = {} is not finite",
            r[i]
        )));
    }
    let b = r.len() as f64;
    let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = r.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    Ok(ScoreVector {
        scores: e.iter().map(|v| b * v / total).collect(),
        stage: ScoreStage::Raw,
    })
}

/// Linear blend toward uniform: `lambda * s + (1 - lambda)` with
/// `lambda = min(1, epoch / warmup)`; `warmup == 0` disables smoothing.
pub fn smooth_scores(s: &ScoreVector, epoch: usize, warmup: usize) -> ScoreVector {
    let lambda = if warmup == 0 {
        1.0
    } else {
        (epoch as f64 / warmup as f64).min(1.0)
    };
    ScoreVector {
        scores: s
            .scores
            .iter()
            .map(|&v| lambda * v + (1.0 - lambda))
            .collect(),
        stage: ScoreStage::Smoothed,
    }
}

pub fn clip_scores(s: &ScoreVector, alpha: f64, beta: f64) -> Result<ScoreVector> {
    if alpha > beta || alpha.is_nan() || beta.is_nan() {
        return Err(Error::Config(format!(
            "score clip interval [{alpha}, {beta}] is empty"
        )));
    }
    Ok(ScoreVector {
        scores: s.scores.iter().map(|&v| v.max(alpha).min(beta)).collect(),
        stage: ScoreStage::Clipped,
    })
}

/// Raw scores of the current training pool under the live flow, which the
/// trainer caches and re-smooths every epoch.
pub fn new_task_raw_scores(flow: &FlowModel, x: &Tensor, labels: &[usize]) -> Result<ScoreVector> {
    relative_scores(&flow.log_prob_value(x, labels)?)
}

/// Full new-task pipeline: relative scores, warm-up smoothing, clipping.
pub fn new_task_scores(
    flow: &FlowModel,
    x: &Tensor,
    labels: &[usize],
    epoch: usize,
    cfg: &ScoreConfig,
) -> Result<ScoreVector> {
    let raw = new_task_raw_scores(flow, x, labels)?;
    finalize_new_task(&raw, epoch, cfg)
}

pub fn finalize_new_task(raw: &ScoreVector, epoch: usize, cfg: &ScoreConfig) -> Result<ScoreVector> {
    clip_scores(
        &smooth_scores(raw, epoch, cfg.warmup),
        cfg.clip_min,
        cfg.clip_max,
    )
}

/// Scores of generated replay features under the frozen previous flow. No
/// warm-up: the frozen flow is already trained.
pub fn replay_scores(
    flow_prev: &FlowModel,
    x: &Tensor,
    labels: &[usize],
    cfg: &ScoreConfig,
) -> Result<ScoreVector> {
    let raw = relative_scores(&flow_prev.log_prob_value(x, labels)?)?;
    clip_scores(&raw, cfg.clip_min, cfg.clip_max)
}
