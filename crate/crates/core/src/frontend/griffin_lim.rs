use ndarray::Array2;
use rustfft::num_complex::Complex64;

use super::audio::AudioClip;
use super::mel::{MelFilterbank, MelSpectrogram};
use super::stft::{FrameParams, Stft};
use crate::error::{Error, Result};

pub const DEFAULT_ITERATIONS: usize = 60;

/// In-place Cholesky factorization of a symmetric positive definite matrix (lower triangle).
fn cholesky(a: &mut Array2<f64>) -> Result<()> {
    let n = a.nrows();
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= a[[j, k]] * a[[j, k]];
        }
        if d <= 0.0 {
            return Err(Error::InvalidArgument("filterbank Gram matrix is not positive definite".into()));
        }
        let d = d.sqrt();
        a[[j, j]] = d;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= a[[i, k]] * a[[j, k]];
            }
            a[[i, j]] = s / d;
        }
    }
    Ok(())
}

fn cholesky_solve(l: &Array2<f64>, b: &mut Array2<f64>) {
    let n = l.nrows();
    for c in 0..b.ncols() {
        for i in 0..n {
            let mut s = b[[i, c]];
            for k in 0..i {
                s -= l[[i, k]] * b[[k, c]];
            }
            b[[i, c]] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = b[[i, c]];
            for k in i + 1..n {
                s -= l[[k, i]] * b[[k, c]];
            }
            b[[i, c]] = s / l[[i, i]];
        }
    }
}

/// Least-squares linear magnitudes from log-mel energies via the filterbank
/// pseudo-inverse, clamped at zero.
pub fn mel_to_linear(mel: &MelSpectrogram, fb: &MelFilterbank) -> Result<Array2<f64>> {
    if mel.rows() != fb.n_mels() {
        return Err(Error::Shape(format!(
            "mel has {} rows, filterbank has {} filters",
            mel.rows(),
            fb.n_mels()
        )));
    }
    let w = fb.weights();
    let mut gram = w.dot(&w.t());
    let ridge = 1e-10 * gram.diag().sum() / gram.nrows() as f64;
    for i in 0..gram.nrows() {
        gram[[i, i]] += ridge;
    }
    cholesky(&mut gram)?;
    let mut energies = mel.values().mapv(f64::exp);
    cholesky_solve(&gram, &mut energies);
    Ok(w.t().dot(&energies).mapv(|v| v.max(0.0)))
}

/// Approximate waveform for a log-mel spectrogram: pseudo-inverse mel projection
/// followed by Griffin-Lim phase recovery. Output has `frames * hop` samples in `[-1, 1]`.
pub fn griffin_lim(mel: &MelSpectrogram, fb: &MelFilterbank, iterations: usize) -> Result<AudioClip> {
    let frame = FrameParams { hop: mel.hop(), ..FrameParams::default() };
    if fb.bins() != frame.bins() {
        return Err(Error::Shape("filterbank does not match fft size".into()));
    }
    let stft = Stft::new(frame)?;
    let target = mel_to_linear(mel, fb)?;
    let mut spec: Array2<Complex64> = target.mapv(|m| Complex64::new(m, 0.0));
    let mut signal = stft.inverse(&spec);
    for _ in 0..iterations {
        let rebuilt = stft.complex(&signal);
        for ((s, r), &m) in spec.iter_mut().zip(rebuilt.iter()).zip(target.iter()) {
            let norm = r.norm();
            *s = if norm > 1e-12 { r * (m / norm) } else { Complex64::new(m, 0.0) };
        }
        signal = stft.inverse(&spec);
    }
    AudioClip::clipped(signal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::mel::MelFrontend;
    use std::f64::consts::PI;

    #[test]
    fn silence_stays_quiet() {
        let mel = MelSpectrogram::silence(64);
        let clip = griffin_lim(&mel, &MelFilterbank::standard(), 10).unwrap();
        assert!(clip.rms() < 1e-3, "rms {}", clip.rms());
        assert_eq!(clip.len(), 64 * 200);
    }

    #[test]
    fn tone_round_trip_keeps_frequency() {
        let fe = MelFrontend::default();
        let samples: Vec<f64> =
            (0..25_600).map(|n| 0.5 * (2.0 * PI * 1000.0 * n as f64 / 16_000.0).sin()).collect();
        let mel = fe.analyze(&AudioClip::new(samples).unwrap()).unwrap();
        let out = griffin_lim(&mel, fe.filterbank(), 30).unwrap();
        assert!((out.len() as isize - 25_600).abs() <= 800);
        // analysis oracle: re-run the STFT and locate the dominant bin
        let spec = fe.stft().magnitude(&out);
        let energy: Vec<f64> = (0..spec.magnitudes().nrows())
            .map(|k| spec.magnitudes().row(k).iter().map(|v| v * v).sum())
            .collect();
        let peak = (0..energy.len()).max_by(|&a, &b| energy[a].total_cmp(&energy[b])).unwrap();
        assert!((peak as isize - 50).abs() <= 1, "peak bin {peak}");
    }
}
