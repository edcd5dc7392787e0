use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::audio::AudioClip;
use crate::error::{Error, Result};

pub const WINDOW: usize = 800;
pub const HOP: usize = 200;
pub const FFT_SIZE: usize = 800;

/// Framing constants of a short-time transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FrameParams {
    pub window: usize,
    pub hop: usize,
    pub fft_size: usize,
}

impl Default for FrameParams {
    fn default() -> Self {
        Self { window: WINDOW, hop: HOP, fft_size: FFT_SIZE }
    }
}

impl FrameParams {
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of frames produced for a signal of `len` samples: `ceil(len / hop)`.
    pub fn frame_count(&self, len: usize) -> usize {
        len.div_ceil(self.hop)
    }

    fn validate(&self) -> Result<()> {
        if self.window == 0 || self.hop == 0 || self.fft_size < self.window {
            return Err(Error::InvalidArgument(format!("invalid frame parameters {self:?}")));
        }
        Ok(())
    }
}

/// Non-negative magnitude spectrogram, `bins x frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    magnitudes: Array2<f64>,
    frame: FrameParams,
}

impl Spectrogram {
    pub fn new(magnitudes: Array2<f64>, frame: FrameParams) -> Result<Self> {
        if magnitudes.nrows() != frame.bins() {
            return Err(Error::Shape(format!(
                "spectrogram has {} rows, fft size {} needs {}",
                magnitudes.nrows(),
                frame.fft_size,
                frame.bins()
            )));
        }
        if magnitudes.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "spectrogram magnitudes must be finite and non-negative".into(),
            ));
        }
        Ok(Self { magnitudes, frame })
    }

    pub fn magnitudes(&self) -> &Array2<f64> {
        &self.magnitudes
    }

    pub fn frame_params(&self) -> FrameParams {
        self.frame
    }

    pub fn frames(&self) -> usize {
        self.magnitudes.ncols()
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Mirror index into `[0, len)` without repeating the edge sample, folding as often as needed.
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= len as isize {
        j = period - j;
    }
    j as usize
}

/// Reusable forward/inverse transform for one set of frame parameters.
pub struct Stft {
    frame: FrameParams,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("frame", &self.frame).finish()
    }
}

impl Stft {
    pub fn new(frame: FrameParams) -> Result<Self> {
        frame.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            frame,
            window: hann(frame.window),
            forward: planner.plan_fft_forward(frame.fft_size),
            inverse: planner.plan_fft_inverse(frame.fft_size),
        })
    }

    pub fn frame_params(&self) -> FrameParams {
        self.frame
    }

    /// Complex STFT of `signal`. Frame `t` is centred on sample `t * hop` of the
    /// reflect-padded signal; the result is `bins x ceil(len / hop)`.
    pub fn complex(&self, signal: &[f64]) -> Array2<Complex64> {
        let FrameParams { window, hop, fft_size } = self.frame;
        let frames = self.frame.frame_count(signal.len());
        let bins = self.frame.bins();
        let mut out = Array2::<Complex64>::zeros((bins, frames));
        if signal.is_empty() {
            return out;
        }
        let half = (window / 2) as isize;
        let offset = (fft_size - window) / 2;
        let mut buf = vec![Complex64::new(0.0, 0.0); fft_size];
        for t in 0..frames {
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            let start = (t * hop) as isize - half;
            for (n, w) in self.window.iter().enumerate() {
                let idx = reflect_index(start + n as isize, signal.len());
                buf[offset + n] = Complex64::new(signal[idx] * w, 0.0);
            }
            self.forward.process(&mut buf);
            for k in 0..bins {
                out[[k, t]] = buf[k];
            }
        }
        out
    }

    pub fn magnitude(&self, clip: &AudioClip) -> Spectrogram {
        let magnitudes = self.complex(clip.samples()).mapv(|c| c.norm());
        Spectrogram { magnitudes, frame: self.frame }
    }

    /// Weighted overlap-add inverse of [`Stft::complex`]; returns `frames * hop` samples.
    pub fn inverse(&self, spec: &Array2<Complex64>) -> Vec<f64> {
        let FrameParams { window, hop, fft_size } = self.frame;
        let frames = spec.ncols();
        let half = window / 2;
        let offset = (fft_size - window) / 2;
        let padded_len = frames * hop + window;
        let mut acc = vec![0.0; padded_len];
        let mut norm = vec![0.0; padded_len];
        let mut buf = vec![Complex64::new(0.0, 0.0); fft_size];
        let bins = self.frame.bins();
        for t in 0..frames {
            for k in 0..bins {
                buf[k] = spec[[k, t]];
            }
            // Hermitian completion for a real signal.
            for k in bins..fft_size {
                buf[k] = spec[[fft_size - k, t]].conj();
            }
            self.inverse.process(&mut buf);
            let start = t * hop;
            for (n, w) in self.window.iter().enumerate() {
                let v = buf[offset + n].re / fft_size as f64;
                acc[start + n] += v * w;
                norm[start + n] += w * w;
            }
        }
        (0..frames * hop)
            .map(|i| {
                let j = i + half;
                if norm[j] > 1e-10 {
                    acc[j] / norm[j]
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Hann-windowed, centre-padded magnitude STFT.
pub fn stft(clip: &AudioClip, frame: FrameParams) -> Result<Spectrogram> {
    if clip.is_empty() {
        return Err(Error::InvalidArgument("stft of an empty clip".into()));
    }
    Ok(Stft::new(frame)?.magnitude(clip))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct O(N^2) DFT of one frame, the independent oracle for the FFT path.
    fn dft_magnitudes(frame: &[f64]) -> Vec<f64> {
        let n = frame.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, x) in frame.iter().enumerate() {
                    let ang = -2.0 * PI * (k * t) as f64 / n as f64;
                    re += x * ang.cos();
                    im += x * ang.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn zero_clip_gives_zero_matrix() {
        let clip = AudioClip::new(vec![0.0; 25_600]).unwrap();
        let spec = stft(&clip, FrameParams::default()).unwrap();
        assert_eq!(spec.magnitudes().dim(), (401, 128));
        assert!(spec.magnitudes().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tone_peaks_at_expected_bin() {
        let samples: Vec<f64> =
            (0..25_600).map(|n| (2.0 * PI * 1000.0 * n as f64 / 16_000.0).sin()).collect();
        let spec = stft(&AudioClip::new(samples.clone()).unwrap(), FrameParams::default()).unwrap();
        // the edge frames see the mirrored (phase-flipped) padding
        for t in 2..spec.frames() - 2 {
            let col = spec.magnitudes().column(t);
            let argmax = (0..col.len()).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
            assert_eq!(argmax, 50, "frame {t}");
        }
        // oracle agreement on an interior frame
        let w = hann(800);
        let t = 40;
        let frame: Vec<f64> = (0..800).map(|n| samples[t * 200 - 400 + n] * w[n]).collect();
        let oracle = dft_magnitudes(&frame);
        assert_eq!((0..oracle.len()).max_by(|&a, &b| oracle[a].total_cmp(&oracle[b])).unwrap(), 50);
    }

    #[test]
    fn matches_direct_dft_on_noise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<f64> = (0..4_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let spec = stft(&AudioClip::new(samples.clone()).unwrap(), FrameParams::default()).unwrap();
        let w = hann(800);
        for t in [2usize, 7, 15] {
            let frame: Vec<f64> = (0..800).map(|n| samples[t * 200 - 400 + n] * w[n]).collect();
            let oracle = dft_magnitudes(&frame);
            let e_fft: f64 = spec.magnitudes().column(t).iter().map(|v| v * v).sum();
            let e_dft: f64 = oracle.iter().map(|v| v * v).sum();
            assert!(((e_fft - e_dft) / e_dft).abs() < 1e-10);
        }
    }

    #[test]
    fn reflect_padding_folds() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(-9, 3), 1);
        assert_eq!(reflect_index(7, 1), 0);
    }

    #[test]
    fn inverse_reconstructs_signal() {
        let samples: Vec<f64> =
            (0..4_000).map(|n| (n as f64 * 0.05).sin() * 0.3 + (n as f64 * 0.31).cos() * 0.2).collect();
        let s = Stft::new(FrameParams::default()).unwrap();
        let back = s.inverse(&s.complex(&samples));
        assert_eq!(back.len(), 4_000);
        for (a, b) in samples.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
