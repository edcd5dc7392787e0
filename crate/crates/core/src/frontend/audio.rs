use std::path::Path;

use crate::error::{Error, Result};

/// The only sample rate the pipeline accepts.
pub const SAMPLE_RATE: u32 = 16_000;

/// Samples per 1.6 s training segment.
pub const SEGMENT_SAMPLES: usize = 25_600;

/// Mono audio at 16 kHz with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("audio sample {i}")));
        }
        Ok(Self { samples, sample_rate: SAMPLE_RATE })
    }

    /// Builds a clip after clamping every sample into `[-1, 1]`.
    pub fn clipped(mut samples: Vec<f64>) -> Result<Self> {
        for s in &mut samples {
            *s = s.clamp(-1.0, 1.0);
        }
        Self::new(samples)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    /// Scales the clip so that its peak magnitude equals `target`. Silent clips are returned as is.
    pub fn peak_normalized(&self, target: f64) -> Self {
        let peak = self.peak();
        if peak <= 0.0 {
            return self.clone();
        }
        let gain = target / peak;
        Self { samples: self.samples.iter().map(|s| s * gain).collect(), sample_rate: self.sample_rate }
    }
}

/// Splits a clip into consecutive, non-overlapping segments of exactly `seg_samples`.
/// A trailing remainder shorter than a segment is dropped.
pub fn segment(clip: &AudioClip, seg_samples: usize) -> Vec<AudioClip> {
    if seg_samples == 0 {
        return Vec::new();
    }
    clip.samples
        .chunks_exact(seg_samples)
        .map(|c| AudioClip { samples: c.to_vec(), sample_rate: clip.sample_rate })
        .collect()
}

/// Reads a mono 16-bit PCM WAV file at 16 kHz.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path)
        .map_err(|e| Error::Wav(format!("{}: malformed header: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedChannels(spec.channels));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedSampleRate(spec.sample_rate));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{:?} with {} bits per sample (expected PCM16)",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    AudioClip::new(samples)
}

/// Writes a clip as mono PCM16 WAV. Samples are clamped before quantization.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wav_err = |e: hound::Error| Error::Wav(format!("{}: {e}", path.display()));
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &clip.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, rate: u32, channels: u16, samples: &[i16]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn pcm_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("half.wav");
        write_raw(&p, 16_000, 1, &[16384]);
        let clip = load_wav(&p).unwrap();
        assert_eq!(clip.samples(), &[0.5]);
    }

    #[test]
    fn rejects_wrong_rate_and_stereo() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cd.wav");
        write_raw(&p, 44_100, 1, &[0, 1, 2]);
        let err = load_wav(&p).unwrap_err();
        assert!(err.to_string().contains("unsupported sample rate"), "{err}");

        let p = dir.path().join("stereo.wav");
        write_raw(&p, 16_000, 2, &[0, 1, 2, 3]);
        let err = load_wav(&p).unwrap_err();
        assert!(err.to_string().contains("channel"), "{err}");
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.wav");
        std::fs::write(&p, b"definitely not RIFF").unwrap();
        let err = load_wav(&p).unwrap_err();
        assert!(err.to_string().contains("malformed header"), "{err}");
    }

    #[test]
    fn length_preserved_through_wav() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("long.wav");
        let samples: Vec<f64> = (0..25_600).map(|i| ((i % 200) as f64 / 200.0) - 0.5).collect();
        write_wav(&p, &AudioClip::new(samples).unwrap()).unwrap();
        assert_eq!(load_wav(&p).unwrap().len(), 25_600);
    }

    #[test]
    fn segmentation() {
        let clip = |n| AudioClip::new(vec![0.0; n]).unwrap();
        let segs = segment(&clip(51_200), SEGMENT_SAMPLES);
        assert_eq!(segs.len(), 2);
        assert!(segs.iter().all(|s| s.len() == SEGMENT_SAMPLES));
        assert!(segment(&clip(25_599), SEGMENT_SAMPLES).is_empty());
        let segs = segment(&clip(60_000), SEGMENT_SAMPLES);
        assert_eq!(segs.len(), 2);
        assert_eq!(60_000 - segs.len() * SEGMENT_SAMPLES, 8_800);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(AudioClip::new(vec![0.0, f64::NAN]).is_err());
    }
}
