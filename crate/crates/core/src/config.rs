//! The run configuration: one TOML file with a section per module.
//!
//! Every field has a default, so an empty file is a valid configuration.
//! Unknown keys are rejected. `configs/default.toml` in the repository lists
//! every key with its default value.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::frontend::{FrameParams, MelFilterbank, MelFrontend, DEFAULT_ITERATIONS};
use crate::net::{DecoderConfig, EncoderConfig};
use crate::synth::{desk_speakers, unseen_speakers, CorpusSpec};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// How many of the four desk speakers to render (taken in order).
    pub speakers: usize,
    /// How many held-back speakers to render for new-speaker training.
    pub new_speakers: usize,
    pub train_utts: usize,
    pub eval_utts: usize,
    pub seed: u64,
    pub min_utt_ms: u32,
    pub max_utt_ms: u32,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            speakers: 4,
            new_speakers: 2,
            train_utts: 100,
            eval_utts: 50,
            seed: 1,
            min_utt_ms: 1_600,
            max_utt_ms: 2_200,
        }
    }
}

/// Which split of the rendered corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.speakers) {
            return Err(Error::Config("corpus.speakers must be between 1 and 4".into()));
        }
        if self.new_speakers > 2 {
            return Err(Error::Config("corpus.new_speakers must be at most 2".into()));
        }
        if self.train_utts == 0 || self.eval_utts == 0 {
            return Err(Error::Config("corpus utterance counts must be positive".into()));
        }
        Ok(())
    }

    /// Ids of the speakers used for encoder training.
    pub fn training_ids(&self) -> Vec<String> {
        desk_speakers().into_iter().take(self.speakers).map(|s| s.speaker_id).collect()
    }

    /// Ids of the held-back speakers.
    pub fn new_ids(&self) -> Vec<String> {
        unseen_speakers().into_iter().take(self.new_speakers).map(|s| s.speaker_id).collect()
    }

    /// Render spec for one split. The evaluation split uses a different seed,
    /// so its utterances never coincide with training ones.
    pub fn spec(&self, split: Split) -> CorpusSpec {
        let mut speakers: Vec<_> = desk_speakers().into_iter().take(self.speakers).collect();
        speakers.extend(unseen_speakers().into_iter().take(self.new_speakers));
        let (n, seed) = match split {
            Split::Train => (self.train_utts, self.seed),
            Split::Eval => (self.eval_utts, self.seed.wrapping_add(1)),
        };
        let mut spec = CorpusSpec::new(speakers, n, seed);
        spec.min_utt_ms = self.min_utt_ms;
        spec.max_utt_ms = self.max_utt_ms;
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontendConfig {
    pub window: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub griffin_lim_iterations: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        let f = FrameParams::default();
        Self {
            window: f.window,
            hop: f.hop,
            fft_size: f.fft_size,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8_000.0,
            griffin_lim_iterations: DEFAULT_ITERATIONS,
        }
    }
}

impl FrontendConfig {
    pub fn build(&self) -> Result<MelFrontend> {
        let frame = FrameParams { window: self.window, hop: self.hop, fft_size: self.fft_size };
        let fb = MelFilterbank::new(self.n_mels, self.fft_size, self.fmin, self.fmax)?;
        MelFrontend::new(frame, fb)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Rendered corpus (`train/` and `eval/` splits).
    pub corpus: PathBuf,
    /// Checkpoints, loss logs and reports.
    pub runs: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { corpus: PathBuf::from("corpus"), runs: PathBuf::from("runs") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub frontend: FrontendConfig,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            frontend: FrontendConfig::default(),
            encoder: EncoderConfig::desk(),
            decoder: DecoderConfig::desk(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The configuration as JSON, for embedding in checkpoints and reports.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.encoder.validate()?;
        self.decoder.validate()?;
        self.train.validate()?;
        if self.encoder.in_mels != self.frontend.n_mels || self.decoder.out_mels != self.frontend.n_mels {
            return Err(Error::Config("encoder/decoder mel counts must match frontend.n_mels".into()));
        }
        if self.encoder.code_dim != self.decoder.code_dim
            || self.encoder.code_stride != self.decoder.code_stride
        {
            return Err(Error::Config("encoder and decoder disagree on the code shape".into()));
        }
        self.frontend.build()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("[train]\nalpah = 3.0\n").is_err());
        assert!(RunConfig::from_toml("[nonsense]\n").is_err());
    }

    #[test]
    fn partial_section_keeps_other_defaults() {
        let c = RunConfig::from_toml("[train]\nalpha = 2.5\n[corpus]\nspeakers = 2\n").unwrap();
        assert_eq!(c.train.alpha, 2.5);
        assert_eq!(c.train.learning_rate, TrainConfig::default().learning_rate);
        assert_eq!(c.corpus.training_ids(), vec!["spk_a", "spk_b"]);
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn shipped_default_file_matches_defaults() {
        let text = include_str!("../../../configs/default.toml");
        assert_eq!(RunConfig::from_toml(text).unwrap(), RunConfig::default());
    }

    #[test]
    fn mismatched_code_shape_rejected() {
        assert!(RunConfig::from_toml("[decoder]\ncode_dim = 4\n").is_err());
    }
}
