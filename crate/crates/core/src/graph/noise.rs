use std::fmt;
use std::str::FromStr;

use super::tasks::TaskView;
use crate::error::{Error, Result};
use crate::tensor::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    /// Replacement label drawn uniformly from the task's other classes.
    Symmetric,
    /// Each class flips to its cyclic successor in the task's class order.
    Pair,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Symmetric => "symmetric",
            NoiseKind::Pair => "pair",
        })
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(NoiseKind::Symmetric),
            "pair" => Ok(NoiseKind::Pair),
            other => Err(Error::Config(format!("unknown noise kind {other:?}"))),
        }
    }
}

/// Corrupts exactly `round(ratio * |train|)` training labels, chosen uniformly
/// without replacement. Validation and test labels are never touched.
pub fn inject_noise(tv: &TaskView, kind: NoiseKind, ratio: f64, rng: &mut Rng) -> Result<TaskView> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("noise ratio {ratio} outside [0, 1]")));
    }
    let k = tv.n_classes();
    if k < 2 && ratio > 0.0 {
        return Err(Error::Config(format!(
            "task {} has a single class; no wrong label exists",
            tv.task
        )));
    }
    let mut train = tv.train_idx();
    let n_flip = (ratio * train.len() as f64).round() as usize;
    rng.shuffle(&mut train);

    let mut out = tv.clone();
    out.observed = tv.clean.clone();
    for &i in &train[..n_flip] {
        let c = tv.clean[i];
        out.observed[i] = match kind {
            NoiseKind::Pair => (c + 1) % k,
            NoiseKind::Symmetric => {
                let r = rng.below(k - 1);
                if r >= c {
                    r + 1
                } else {
                    r
                }
            }
        };
    }
    out.noisy = out
        .observed
        .iter()
        .zip(&out.clean)
        .map(|(o, c)| o != c)
        .collect();
    Ok(out)
}
