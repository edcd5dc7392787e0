use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which ablation is being trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Separate single-speaker autoencoders; no shared encoder.
    Vanilla,
    /// Shared encoder trained with the code-space cycle loss.
    Cycle,
    /// Shared encoder, cycle loss reported but weighted by zero.
    EncoderShareOnly,
    /// Shared encoder with the cycle penalty taken in mel space.
    DataCycle,
}

impl Variant {
    pub const ALL: [Variant; 4] =
        [Variant::Vanilla, Variant::Cycle, Variant::EncoderShareOnly, Variant::DataCycle];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::Cycle => "cycle",
            Variant::EncoderShareOnly => "encoder_share_only",
            Variant::DataCycle => "data_cycle",
        }
    }

    pub fn uses_shared_encoder(self) -> bool {
        self != Variant::Vanilla
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {s:?}")))
    }
}

/// How squared errors are reduced within one term of the losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Mean over cells.
    Mean,
    /// Plain sum of squared entries.
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { kind: OptimizerKind::Adam, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageSteps {
    pub stage1: u64,
    pub stage2: u64,
    pub stage3: u64,
}

impl Default for StageSteps {
    fn default() -> Self {
        Self { stage1: 1_200, stage2: 800, stage3: 600 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the cycle term.
    pub alpha: f64,
    pub learning_rate: f64,
    /// Segments per speaker in every step.
    pub batch_segments: usize,
    /// Frames per training crop; a multiple of the code stride.
    pub crop_frames: usize,
    pub steps: StageSteps,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub variant: Variant,
    pub reduction: Reduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            learning_rate: 1e-3,
            batch_segments: 4,
            crop_frames: 32,
            steps: StageSteps::default(),
            seed: 0,
            optimizer: OptimizerConfig::default(),
            variant: Variant::Cycle,
            reduction: Reduction::Mean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train: {m}")));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and >= 0");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_segments == 0 || self.crop_frames == 0 {
            return bad("batch_segments and crop_frames must be positive");
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.epsilon > 0.0) {
            return bad("optimizer betas must lie in [0, 1) and epsilon be positive");
        }
        Ok(())
    }

    /// The cycle weight actually optimized (zero for `encoder_share_only`).
    pub fn effective_alpha(&self) -> f64 {
        match self.variant {
            Variant::EncoderShareOnly => 0.0,
            _ => self.alpha,
        }
    }
}
