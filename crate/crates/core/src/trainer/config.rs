use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::encoder::Activation;
use crate::error::{Error, Result};
use crate::flow::FlowTrainConfig;
use crate::graph::{NoiseKind, SbmConfig};
use crate::reliability::ScoreConfig;

/// Which method components are active during classifier training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Components {
    /// Embedding anchoring plus distillation against the frozen model.
    pub kp: bool,
    /// Flow-derived scores weight the new-task cross-entropy.
    pub new_scores: bool,
    /// Generative replay of earlier tasks through the frozen flow.
    pub replay: bool,
    /// Frozen-flow scores weight the replay cross-entropy.
    pub replay_scores: bool,
}

impl Components {
    pub const BARE: Components = Components {
        kp: false,
        new_scores: false,
        replay: false,
        replay_scores: false,
    };
    pub const FULL: Components = Components {
        kp: true,
        new_scores: true,
        replay: true,
        replay_scores: true,
    };

    /// Whether a flow has to be fitted at all.
    pub fn uses_flow(&self) -> bool {
        self.new_scores || self.replay
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Ufo,
    Bare,
    Joint,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ufo => "ufo",
            Mode::Bare => "bare",
            Mode::Joint => "joint",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ufo" => Ok(Mode::Ufo),
            "bare" => Ok(Mode::Bare),
            "joint" => Ok(Mode::Joint),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// The ablation chain, from the bare backbone to the full method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Bm,
    BmKp,
    BmKpNs,
    BmKpNsR,
    Ufo,
}

impl Variant {
    pub const CHAIN: [Variant; 5] = [
        Variant::Bm,
        Variant::BmKp,
        Variant::BmKpNs,
        Variant::BmKpNsR,
        Variant::Ufo,
    ];

    pub fn components(self) -> Components {
        let mut c = Components::BARE;
        if self == Variant::Bm {
            return c;
        }
        c.kp = true;
        if self == Variant::BmKp {
            return c;
        }
        c.new_scores = true;
        if self == Variant::BmKpNs {
            return c;
        }
        c.replay = true;
        if self == Variant::BmKpNsR {
            return c;
        }
        c.replay_scores = true;
        c
    }

    /// File-name form of [`Variant::label`].
    pub fn slug(self) -> &'static str {
        match self {
            Variant::Bm => "bm",
            Variant::BmKp => "bm-kp",
            Variant::BmKpNs => "bm-kp-ns",
            Variant::BmKpNsR => "bm-kp-ns-r",
            Variant::Ufo => "ufo",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Bm => "BM",
            Variant::BmKp => "BM+KP",
            Variant::BmKpNs => "BM+KP+NS",
            Variant::BmKpNsR => "BM+KP+NS+R",
            Variant::Ufo => "UFO",
        }
    }
}

/// Every knob of a run. `Default` holds the full-size hyperparameters;
/// [`TrainConfig::desk`] shrinks widths for the synthetic fixture.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub lr: f64,
    pub epochs: usize,
    pub hidden: usize,
    pub layers: usize,
    pub activation: Activation,
    pub flow_couplings: usize,
    pub flow_hidden: usize,
    pub flow_lr: f64,
    pub flow_epochs: usize,
    /// Extra flow epochs on the trained encoder's features before the
    /// snapshot; 0 keeps only the pre-training fit.
    pub flow_refit_epochs: usize,
    pub tau: f64,
    pub alpha_e: f64,
    pub alpha_l: f64,
    pub lambda_old: f64,
    pub score_clip_min: f64,
    pub score_clip_max: f64,
    pub warmup: usize,
    pub replay_batch: usize,
    pub classes_per_task: usize,
    pub noise_kind: NoiseKind,
    pub noise_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            lr: 0.005,
            epochs: 200,
            hidden: 256,
            layers: 2,
            activation: Activation::Relu,
            flow_couplings: 4,
            flow_hidden: 256,
            flow_lr: 0.005,
            flow_epochs: 200,
            flow_refit_epochs: 0,
            tau: 2.71,
            alpha_e: 0.09,
            alpha_l: 0.06,
            lambda_old: 1.0,
            score_clip_min: 0.1,
            score_clip_max: 5.0,
            warmup: 20,
            replay_batch: 512,
            classes_per_task: 3,
            noise_kind: NoiseKind::Symmetric,
            noise_ratio: 0.0,
        }
    }
}

impl TrainConfig {
    /// Preset for the few-hundred-node synthetic fixture: a narrow tanh
    /// encoder keeps the flow's data space low-dimensional and atom-free.
    pub fn desk() -> Self {
        TrainConfig {
            hidden: 4,
            activation: Activation::Tanh,
            flow_hidden: 16,
            flow_epochs: 50,
            flow_refit_epochs: 50,
            ..TrainConfig::default()
        }
    }

    pub fn score_config(&self) -> ScoreConfig {
        ScoreConfig {
            clip_min: self.score_clip_min,
            clip_max: self.score_clip_max,
            warmup: self.warmup,
        }
    }

    pub fn flow_train_config(&self) -> FlowTrainConfig {
        FlowTrainConfig {
            epochs: self.flow_epochs,
            lr: self.flow_lr,
            replay_batch: self.replay_batch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("flow_lr", self.flow_lr),
            ("tau", self.tau),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be positive, got {v}")));
            }
        }
        let counts = [
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("flow_couplings", self.flow_couplings),
            ("flow_hidden", self.flow_hidden),
            ("replay_batch", self.replay_batch),
            ("classes_per_task", self.classes_per_task),
        ];
        for (k, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        for (k, v) in [
            ("alpha_e", self.alpha_e),
            ("alpha_l", self.alpha_l),
            ("lambda_old", self.lambda_old),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be non-negative, got {v}")));
            }
        }
        if !(0.0 <= self.score_clip_min
            && self.score_clip_min <= 1.0
            && 1.0 <= self.score_clip_max)
        {
            return Err(Error::Config(format!(
                "score clip needs 0 <= min <= 1 <= max, got [{}, {}]",
                self.score_clip_min, self.score_clip_max
            )));
        }
        if !(0.0..=1.0).contains(&self.noise_ratio) {
            return Err(Error::Config(format!(
                "noise_ratio {} outside [0, 1]",
                self.noise_ratio
            )));
        }
        Ok(())
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

/// Training plus synthetic-data settings, addressable by `key = value`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    pub train: TrainConfig,
    pub sbm: SbmConfig,
}

impl Settings {
    pub fn desk() -> Self {
        Settings {
            train: TrainConfig::desk(),
            sbm: SbmConfig::default(),
        }
    }

    /// Sets one field by name. SBM fields carry an `sbm_` prefix.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let s = &mut self.sbm;
        match key {
            "seed" => t.seed = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "hidden" => t.hidden = parse(key, value)?,
            "layers" => t.layers = parse(key, value)?,
            "activation" => t.activation = value.parse()?,
            "flow_couplings" => t.flow_couplings = parse(key, value)?,
            "flow_hidden" => t.flow_hidden = parse(key, value)?,
            "flow_lr" => t.flow_lr = parse(key, value)?,
            "flow_epochs" => t.flow_epochs = parse(key, value)?,
            "flow_refit_epochs" => t.flow_refit_epochs = parse(key, value)?,
            "tau" => t.tau = parse(key, value)?,
            "alpha_e" => t.alpha_e = parse(key, value)?,
            "alpha_l" => t.alpha_l = parse(key, value)?,
            "lambda_old" => t.lambda_old = parse(key, value)?,
            "score_clip_min" => t.score_clip_min = parse(key, value)?,
            "score_clip_max" => t.score_clip_max = parse(key, value)?,
            "warmup" => t.warmup = parse(key, value)?,
            "replay_batch" => t.replay_batch = parse(key, value)?,
            "classes_per_task" => t.classes_per_task = parse(key, value)?,
            "noise_kind" => t.noise_kind = value.parse()?,
            "noise_ratio" => t.noise_ratio = parse(key, value)?,
            "sbm_tasks" => s.n_tasks = parse(key, value)?,
            "sbm_classes_per_task" => s.classes_per_task = parse(key, value)?,
            "sbm_nodes_per_class" => s.nodes_per_class = parse(key, value)?,
            "sbm_p_in" => s.p_in = parse(key, value)?,
            "sbm_p_out" => s.p_out = parse(key, value)?,
            "sbm_feature_dim" => s.feature_dim = parse(key, value)?,
            "sbm_mean_scale" => s.mean_scale = parse(key, value)?,
            "sbm_feature_noise" => s.feature_noise = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown setting {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key = value` document; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, i + 1, "expected key = value"))?;
            self.set(k.trim(), v.trim()).map_err(|e| match e {
                Error::Config(msg) => Error::parse(origin, i + 1, msg),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.apply_text(&text, path)
    }

    /// Canonical `key = value` listing of every field; parses back to `self`.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let s = &self.sbm;
        let mut out = String::new();
        let mut kv = |k: &str, v: &dyn fmt::Debug| writeln!(out, "{k} = {v:?}").unwrap();
        kv("seed", &t.seed);
        kv("lr", &t.lr);
        kv("epochs", &t.epochs);
        kv("hidden", &t.hidden);
        kv("layers", &t.layers);
        kv("flow_couplings", &t.flow_couplings);
        kv("flow_hidden", &t.flow_hidden);
        kv("flow_lr", &t.flow_lr);
        kv("flow_epochs", &t.flow_epochs);
        kv("flow_refit_epochs", &t.flow_refit_epochs);
        kv("tau", &t.tau);
        kv("alpha_e", &t.alpha_e);
        kv("alpha_l", &t.alpha_l);
        kv("lambda_old", &t.lambda_old);
        kv("score_clip_min", &t.score_clip_min);
        kv("score_clip_max", &t.score_clip_max);
        kv("warmup", &t.warmup);
        kv("replay_batch", &t.replay_batch);
        kv("classes_per_task", &t.classes_per_task);
        writeln!(out, "activation = {}", t.activation).unwrap();
        writeln!(out, "noise_kind = {}", t.noise_kind).unwrap();
        let mut kv = |k: &str, v: &dyn fmt::Debug| writeln!(out, "{k} = {v:?}").unwrap();
        kv("noise_ratio", &t.noise_ratio);
        kv("sbm_tasks", &s.n_tasks);
        kv("sbm_classes_per_task", &s.classes_per_task);
        kv("sbm_nodes_per_class", &s.nodes_per_class);
        kv("sbm_p_in", &s.p_in);
        kv("sbm_p_out", &s.p_out);
        kv("sbm_feature_dim", &s.feature_dim);
        kv("sbm_mean_scale", &s.mean_scale);
        kv("sbm_feature_noise", &s.feature_noise);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_defaults() {
        let c = TrainConfig::default();
        assert_eq!(c.lr, 0.005);
        assert_eq!(c.epochs, 200);
        assert_eq!(c.hidden, 256);
        assert_eq!(c.flow_couplings, 4);
        assert_eq!(c.tau, 2.71);
        assert_eq!(c.alpha_e, 0.09);
        assert_eq!(c.alpha_l, 0.06);
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut s = Settings::desk();
        s.train.noise_ratio = 0.3;
        s.train.noise_kind = NoiseKind::Pair;
        s.sbm.p_in = 0.125;
        let mut back = Settings::default();
        back.apply_text(&s.to_text(), Path::new("mem")).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn comments_and_errors() {
        let mut s = Settings::default();
        s.apply_text("# header\nepochs = 7  # inline\n\n", Path::new("c.txt"))
            .unwrap();
        assert_eq!(s.train.epochs, 7);
        let err = s
            .apply_text("epochs = 1\nbogus = 2\n", Path::new("c.txt"))
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(s.apply_text("tau = x", Path::new("c.txt")).is_err());
    }

    #[test]
    fn ablation_chain_is_cumulative() {
        let c: Vec<Components> = Variant::CHAIN.iter().map(|v| v.components()).collect();
        assert_eq!(c[0], Components::BARE);
        assert!(c[1].kp && !c[1].uses_flow());
        assert!(c[2].new_scores && !c[2].replay);
        assert!(c[3].replay && !c[3].replay_scores);
        assert_eq!(c[4], Components::FULL);
    }

    #[test]
    fn validation_rejects_bad_clip() {
        let c = TrainConfig {
            score_clip_min: 2.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
