//! TOML configuration. Every table rejects unknown keys; omitted keys take the
//! defaults below.
//!
//! ```toml
//! graph = "skeleton.graph"      # optional, builtin 27-node graph otherwise
//!
//! [model]
//! d_emb = 64
//! heads = 4
//! stages = [
//!     { blocks = 1, sub_sample = 8 },
//!     { blocks = 1, sub_sample = 4 },
//!     { blocks = 2, sub_sample = 2 },
//!     { blocks = 1, sub_sample = 1 },
//! ]
//! ablate = []                   # any of "lgrpe", "ttsa", "factor"
//!
//! [train]
//! epochs = 50
//! [train.optimizer]
//! kind = "adam"
//! lr = 3e-4
//! [train.schedule]
//! kind = "cosine"
//!
//! [augment]
//! mirror_prob = 0.5
//! ```
//!
//! The full key list with defaults is in `docs/config.md`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::bench::BenchConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    /// Drop the graph positional bias.
    Lgrpe,
    /// Replace both temporal attentions with global attention.
    Ttsa,
    /// Drop the post-attention adjacency factor.
    Factor,
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lgrpe" => Ok(Ablation::Lgrpe),
            "ttsa" => Ok(Ablation::Ttsa),
            "factor" => Ok(Ablation::Factor),
            other => Err(Error::Config(format!("unknown ablation {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub blocks: usize,
    pub sub_sample: usize,
    /// Channel width of this stage; defaults to `d_emb`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
}

impl StageConfig {
    pub fn new(blocks: usize, sub_sample: usize) -> Self {
        StageConfig {
            blocks,
            sub_sample,
            width: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub joints: usize,
    pub t_in: usize,
    pub in_channels: usize,
    pub d_emb: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub groups: usize,
    /// Distance clip for the positional encodings; graph diameter when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_max: Option<usize>,
    pub d_pos: usize,
    pub h_meta: usize,
    pub num_classes: usize,
    pub attn_dropout: f64,
    pub mlp_dropout: f64,
    pub stages: Vec<StageConfig>,
    pub ablate: Vec<Ablation>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            joints: 27,
            t_in: 120,
            in_channels: 2,
            d_emb: 64,
            heads: 4,
            mlp_ratio: 4,
            groups: 8,
            d_max: None,
            d_pos: 16,
            h_meta: 64,
            num_classes: 10,
            attn_dropout: 0.0,
            mlp_dropout: 0.0,
            stages: vec![
                StageConfig::new(1, 8),
                StageConfig::new(1, 4),
                StageConfig::new(2, 2),
                StageConfig::new(1, 1),
            ],
            ablate: Vec::new(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Three-joint, 12-frame, one-stage model used by the gradient suite.
    pub fn tiny() -> Self {
        ModelConfig {
            joints: 3,
            t_in: 12,
            d_emb: 8,
            heads: 2,
            mlp_ratio: 2,
            groups: 2,
            d_pos: 4,
            h_meta: 8,
            num_classes: 3,
            stages: vec![StageConfig::new(1, 2)],
            ..ModelConfig::default()
        }
    }

    /// The default widths with one block per stage and a 2x MLP; about a third
    /// faster per step than the default.
    pub fn small() -> Self {
        ModelConfig {
            mlp_ratio: 2,
            stages: vec![
                StageConfig::new(1, 8),
                StageConfig::new(1, 4),
                StageConfig::new(1, 2),
                StageConfig::new(1, 1),
            ],
            ..ModelConfig::default()
        }
    }

    pub fn ablated(&self, a: Ablation) -> bool {
        self.ablate.contains(&a)
    }

    pub fn stage_width(&self, stage: usize) -> usize {
        self.stages[stage].width.unwrap_or(self.d_emb)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.joints == 0 || self.t_in == 0 {
            return fail("joints and t_in must be positive".into());
        }
        if !(2..=3).contains(&self.in_channels) {
            return fail(format!("in_channels must be 2 or 3, got {}", self.in_channels));
        }
        if self.num_classes < 2 {
            return fail("num_classes must be at least 2".into());
        }
        if self.heads == 0 || self.groups == 0 || self.mlp_ratio == 0 || self.d_pos == 0 || self.h_meta == 0 {
            return fail("heads, groups, mlp_ratio, d_pos and h_meta must be positive".into());
        }
        for (name, p) in [("attn_dropout", self.attn_dropout), ("mlp_dropout", self.mlp_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return fail(format!("{name} must be in [0, 1), got {p}"));
            }
        }
        if self.stages.is_empty() {
            return fail("at least one stage is required".into());
        }
        for (s, st) in self.stages.iter().enumerate() {
            let w = self.stage_width(s);
            if st.blocks == 0 || st.sub_sample == 0 {
                return fail(format!("stage {s}: blocks and sub_sample must be positive"));
            }
            if w == 0 || w % self.heads != 0 {
                return fail(format!("stage {s}: width {w} not divisible by {} heads", self.heads));
            }
            if w % self.groups != 0 {
                return fail(format!("stage {s}: width {w} not divisible by {} groups", self.groups));
            }
        }
        let mut seen = self.ablate.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.ablate.len() {
            return fail("ablation listed twice".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    #[serde(rename = "sgd-momentum")]
    SgdMomentum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum: 0.9,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Cosine,
    Step,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    /// Linear warm-up length in optimizer steps.
    pub warmup_steps: usize,
    /// Cosine floor as a fraction of the base rate.
    pub min_lr_ratio: f64,
    /// Step schedule: multiply by `gamma` every `step_epochs` epochs.
    pub step_epochs: usize,
    pub gamma: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            kind: ScheduleKind::Cosine,
            warmup_steps: 0,
            min_lr_ratio: 0.0,
            step_epochs: 10,
            gamma: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub label_smoothing: f64,
    pub seed: u64,
    /// Stop once an epoch's train top-1 reaches this value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_at_train_top1: Option<f64>,
    /// Apply augmentation to training clips.
    pub augment: bool,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 8,
            label_smoothing: 0.1,
            seed: 0,
            stop_at_train_top1: None,
            augment: true,
            optimizer: OptimizerConfig::default(),
            schedule: ScheduleConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return fail("epochs and batch_size must be positive".into());
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", o.lr));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(0.0..1.0).contains(&o.momentum) {
            return fail("beta1, beta2 and momentum must be in [0, 1)".into());
        }
        if o.eps <= 0.0 || o.weight_decay < 0.0 {
            return fail("eps must be positive and weight_decay non-negative".into());
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return fail("label_smoothing must be in [0, 1)".into());
        }
        let s = &self.schedule;
        if !(0.0..=1.0).contains(&s.min_lr_ratio) || !(s.gamma > 0.0 && s.gamma <= 1.0) || s.step_epochs == 0 {
            return fail("schedule: min_lr_ratio in [0, 1], gamma in (0, 1], step_epochs > 0".into());
        }
        if let Some(t) = self.stop_at_train_top1 {
            if !(0.0..=1.0).contains(&t) {
                return fail("stop_at_train_top1 must be in [0, 1]".into());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub mirror_prob: f64,
    pub rotate_max_deg: f64,
    pub scale_range: [f64; 2],
    pub jitter_std: f64,
    pub shift_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            mirror_prob: 0.5,
            rotate_max_deg: 13.0,
            scale_range: [0.9, 1.1],
            jitter_std: 0.01,
            shift_max: 0.1,
        }
    }
}

impl AugmentConfig {
    /// Every transform disabled.
    pub fn off() -> Self {
        AugmentConfig {
            mirror_prob: 0.0,
            rotate_max_deg: 0.0,
            scale_range: [1.0, 1.0],
            jitter_std: 0.0,
            shift_max: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.mirror_prob)
            && self.rotate_max_deg >= 0.0
            && self.scale_range[0] > 0.0
            && self.scale_range[0] <= self.scale_range[1]
            && self.jitter_std >= 0.0
            && self.shift_max >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid augmentation settings {self:?}")))
        }
    }
}

/// A whole configuration file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub bench: BenchConfig,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a file; a relative `graph` path resolves against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Config::parse(&text)?;
        if let (Some(g), Some(dir)) = (&cfg.graph, path.parent()) {
            if g.is_relative() {
                cfg.graph = Some(dir.join(g));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.augment.validate()
    }
}
