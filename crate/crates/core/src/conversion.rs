//! Any-to-one conversion: source mel in, target-speaker mel (and optionally
//! audio) out.
//!
//! Conversion always runs the content encoder once and then picks the
//! decoder of the requested speaker; the content code is therefore identical
//! whichever target is chosen. Inputs of any length are edge-padded to a
//! multiple of the code stride and trimmed back afterwards.

use std::path::{Path, PathBuf};

use ndarray::{concatenate, s, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::VoiceModel;
use crate::frontend::{
    griffin_lim, load_wav, read_mel, write_mel, write_wav, AudioClip, MelFrontend, MelSpectrogram,
    DEFAULT_ITERATIONS,
};

/// Peak level of emitted audio.
pub const OUTPUT_PEAK: f64 = 0.9;

/// Converts `mel` to speaker `target`. The output has the input's shape.
pub fn convert_mel(model: &dyn VoiceModel, mel: &MelSpectrogram, target: &str) -> Result<MelSpectrogram> {
    check_target(model, target)?;
    if mel.frames() == 0 {
        return Err(Error::InvalidArgument("cannot convert an empty mel".into()));
    }
    let out = model.convert(mel.values(), target)?;
    MelSpectrogram::from_matrix(out, mel.hop())
}

/// Like [`convert_mel`] but processes `chunk_frames` frames at a time to bound
/// memory. Chunks are converted independently, so seams can show small
/// discontinuities.
pub fn convert_mel_chunked(
    model: &dyn VoiceModel,
    mel: &MelSpectrogram,
    target: &str,
    chunk_frames: usize,
) -> Result<MelSpectrogram> {
    check_target(model, target)?;
    if chunk_frames == 0 {
        return Err(Error::InvalidArgument("chunk size must be positive".into()));
    }
    let t = mel.frames();
    if t == 0 {
        return Err(Error::InvalidArgument("cannot convert an empty mel".into()));
    }
    let mut parts = Vec::new();
    let mut start = 0;
    while start < t {
        let end = (start + chunk_frames).min(t);
        let chunk = mel.values().slice(s![.., start..end]).to_owned();
        parts.push(model.convert(&chunk, target)?);
        start = end;
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    let out = concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))?;
    MelSpectrogram::from_matrix(out, mel.hop())
}

fn check_target(model: &dyn VoiceModel, target: &str) -> Result<()> {
    if model.targets().iter().any(|t| t == target) {
        Ok(())
    } else {
        Err(Error::UnknownSpeaker(target.to_string()))
    }
}

/// Where the source comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Audio(AudioClip),
    Mel(MelSpectrogram),
}

impl Source {
    /// Loads a `.wav` as audio and anything else as a mel archive.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let is_wav = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if is_wav {
            Ok(Source::Audio(load_wav(path)?))
        } else {
            Ok(Source::Mel(read_mel(path)?))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversionRequest {
    pub source: Source,
    pub target: String,
    pub emit_audio: bool,
    /// Convert in chunks of this many frames instead of all at once.
    pub chunk_frames: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversionOutput {
    pub mel: MelSpectrogram,
    pub audio: Option<AudioClip>,
}

/// Full pipeline: analysis of audio sources, conversion, and optional
/// Griffin-Lim resynthesis peak-normalized to [`OUTPUT_PEAK`].
pub fn convert_utterance(
    model: &dyn VoiceModel,
    frontend: &MelFrontend,
    request: &ConversionRequest,
) -> Result<ConversionOutput> {
    let owned;
    let mel = match &request.source {
        Source::Audio(clip) => {
            owned = frontend.analyze(clip)?;
            &owned
        }
        Source::Mel(m) => m,
    };
    let mel = match request.chunk_frames {
        Some(n) => convert_mel_chunked(model, mel, &request.target, n)?,
        None => convert_mel(model, mel, &request.target)?,
    };
    let audio = if request.emit_audio {
        let clip = griffin_lim(&mel, frontend.filterbank(), DEFAULT_ITERATIONS)?;
        Some(clip.peak_normalized(OUTPUT_PEAK))
    } else {
        None
    };
    Ok(ConversionOutput { mel, audio })
}

/// Provenance written next to every converted file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub source: String,
    pub target: String,
    pub model_hash: String,
    pub checkpoint: String,
}

/// Paths produced by [`write_outputs`].
#[derive(Debug, Clone, PartialEq)]
pub struct WrittenFiles {
    pub mel: PathBuf,
    pub wav: Option<PathBuf>,
    pub sidecar: PathBuf,
}

/// Writes `<stem>.mel`, `<stem>.wav` (when audio is present) and `<stem>.json`
/// into `out_dir`.
pub fn write_outputs(
    out_dir: impl AsRef<Path>,
    stem: &str,
    output: &ConversionOutput,
    sidecar: &Sidecar,
) -> Result<WrittenFiles> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mel = dir.join(format!("{stem}.mel"));
    write_mel(&mel, &output.mel)?;
    let wav = match &output.audio {
        Some(clip) => {
            let p = dir.join(format!("{stem}.wav"));
            write_wav(&p, clip)?;
            Some(p)
        }
        None => None,
    };
    let side = dir.join(format!("{stem}.json"));
    let json = serde_json::to_string_pretty(sidecar)?;
    std::fs::write(&side, json).map_err(|e| Error::io(&side, e))?;
    Ok(WrittenFiles { mel, wav, sidecar: side })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::InverseStub;
    use crate::frontend::N_MELS;
    use ndarray::Array2;

    fn stub() -> InverseStub {
        let a = Array2::from_shape_fn((N_MELS, N_MELS), |(i, j)| {
            if i == j {
                2.0
            } else if j == i + 1 {
                0.5
            } else {
                0.0
            }
        });
        InverseStub::new(a, &["spk_a", "spk_b"]).unwrap()
    }

    fn ramp(frames: usize) -> MelSpectrogram {
        let v = Array2::from_shape_fn((N_MELS, frames), |(i, t)| ((i * 7 + t * 3) % 11) as f64 - 6.0);
        MelSpectrogram::new(v, 200).unwrap()
    }

    #[test]
    fn unknown_target_rejected() {
        let err = convert_mel(&stub(), &ramp(10), "spk_z").unwrap_err();
        assert!(matches!(err, Error::UnknownSpeaker(_)));
    }

    #[test]
    fn chunked_matches_whole_for_framewise_model() {
        let m = ramp(37);
        let a = convert_mel(&stub(), &m, "spk_a").unwrap();
        let b = convert_mel_chunked(&stub(), &m, "spk_a", 8).unwrap();
        assert_eq!(a.frames(), 37);
        assert!(a.values().iter().zip(b.values().iter()).all(|(x, y)| (x - y).abs() < 1e-9));
    }

    #[test]
    fn sidecar_round_trips() {
        let s = Sidecar {
            source: "in.wav".into(),
            target: "spk_a".into(),
            model_hash: "ab".into(),
            checkpoint: "x.ckpt".into(),
        };
        let back: Sidecar = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
