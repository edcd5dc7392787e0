use ndarray::{Array2, Axis};

use super::audio::{AudioClip, SAMPLE_RATE};
use super::stft::{FrameParams, Spectrogram, Stft};
use crate::error::{Error, Result};

pub const N_MELS: usize = 80;
pub const MEL_FLOOR: f64 = 1e-5;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters, `n_mels x (fft_size / 2 + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    weights: Array2<f64>,
    fmin: f64,
    fmax: f64,
    centers: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, fft_size: usize, fmin: f64, fmax: f64) -> Result<Self> {
        let nyquist = SAMPLE_RATE as f64 / 2.0;
        if n_mels == 0 {
            return Err(Error::InvalidArgument("n_mels must be at least 1".into()));
        }
        if !(fmin >= 0.0 && fmin < fmax) {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= fmin < fmax, got fmin={fmin} fmax={fmax}"
            )));
        }
        if fmax > nyquist {
            return Err(Error::InvalidArgument(format!(
                "fmax {fmax} Hz exceeds the Nyquist frequency {nyquist} Hz"
            )));
        }
        let bins = fft_size / 2 + 1;
        let bin_hz: Vec<f64> = (0..bins).map(|k| k as f64 * SAMPLE_RATE as f64 / fft_size as f64).collect();
        let (mlo, mhi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let edges: Vec<f64> =
            (0..n_mels + 2).map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (n_mels + 1) as f64)).collect();
        let mut weights = Array2::zeros((n_mels, bins));
        for m in 0..n_mels {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for (k, &f) in bin_hz.iter().enumerate() {
                let up = (f - lo) / (c - lo);
                let down = (hi - f) / (hi - c);
                weights[[m, k]] = up.min(down).max(0.0);
            }
            // A filter narrower than the bin spacing can fall between bins; give it
            // the bin nearest its centre so no mel channel is dead.
            if weights.row(m).iter().all(|&w| w == 0.0) {
                let nearest = (c * fft_size as f64 / SAMPLE_RATE as f64).round() as usize;
                weights[[m, nearest.min(bins - 1)]] = 1.0;
            }
        }
        Ok(Self { weights, fmin, fmax, centers: edges[1..=n_mels].to_vec() })
    }

    /// 80 filters over 0-8000 Hz for an 800-point FFT.
    pub fn standard() -> Self {
        Self::new(N_MELS, super::stft::FFT_SIZE, 0.0, SAMPLE_RATE as f64 / 2.0)
            .expect("standard filterbank parameters are valid")
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn n_mels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn bins(&self) -> usize {
        self.weights.ncols()
    }

    pub fn fmin(&self) -> f64 {
        self.fmin
    }

    pub fn fmax(&self) -> f64 {
        self.fmax
    }

    /// Centre frequency of every filter in Hz.
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }
}

/// Log-compressed mel energies, `80 x frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    values: Array2<f64>,
    hop: usize,
}

impl MelSpectrogram {
    pub fn new(values: Array2<f64>, hop: usize) -> Result<Self> {
        if values.nrows() != N_MELS {
            return Err(Error::Shape(format!(
                "mel spectrogram must have {N_MELS} rows, got {}",
                values.nrows()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mel spectrogram".into()));
        }
        Ok(Self { values, hop })
    }

    /// Like [`MelSpectrogram::new`] but accepts any row count; used by toy examples and tests.
    pub fn from_matrix(values: Array2<f64>, hop: usize) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mel spectrogram".into()));
        }
        Ok(Self { values, hop })
    }

    /// A mel of `frames` frames sitting at the log floor (silence).
    pub fn silence(frames: usize) -> Self {
        Self { values: Array2::from_elem((N_MELS, frames), MEL_FLOOR.ln()), hop: super::stft::HOP }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }
}

/// `log(max(fb . magnitudes, floor))`.
pub fn to_mel(spec: &Spectrogram, fb: &MelFilterbank, floor: f64) -> Result<MelSpectrogram> {
    if fb.bins() != spec.magnitudes().nrows() {
        return Err(Error::Shape(format!(
            "filterbank has {} columns but spectrogram has {} bins",
            fb.bins(),
            spec.magnitudes().nrows()
        )));
    }
    let energies = fb.weights().dot(spec.magnitudes());
    MelSpectrogram::from_matrix(energies.mapv(|e| e.max(floor).ln()), spec.frame_params().hop)
}

/// Mean squared difference over all cells.
pub fn mel_distance(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<f64> {
    if a.values.dim() != b.values.dim() {
        return Err(Error::Shape(format!("mel shapes differ: {:?} vs {:?}", a.values.dim(), b.values.dim())));
    }
    let n = a.values.len() as f64;
    Ok(a.values.iter().zip(b.values.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// STFT plus filterbank with the standard constants.
#[derive(Debug)]
pub struct MelFrontend {
    stft: Stft,
    filterbank: MelFilterbank,
}

impl Default for MelFrontend {
    fn default() -> Self {
        Self::new(FrameParams::default(), MelFilterbank::standard()).expect("standard frontend is valid")
    }
}

impl MelFrontend {
    pub fn new(frame: FrameParams, filterbank: MelFilterbank) -> Result<Self> {
        if filterbank.bins() != frame.bins() {
            return Err(Error::Shape("filterbank does not match fft size".into()));
        }
        Ok(Self { stft: Stft::new(frame)?, filterbank })
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    pub fn analyze(&self, clip: &AudioClip) -> Result<MelSpectrogram> {
        if clip.is_empty() {
            return Err(Error::InvalidArgument("cannot analyze an empty clip".into()));
        }
        to_mel(&self.stft.magnitude(clip), &self.filterbank, MEL_FLOOR)
    }
}

/// Per-bin mean over frames.
pub fn mean_frame(mel: &MelSpectrogram) -> Vec<f64> {
    mel.values.mean_axis(Axis(1)).map(|m| m.to_vec()).unwrap_or_else(|| vec![0.0; mel.rows()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::stft::stft;

    #[test]
    fn filterbank_shape_and_triangles() {
        let fb = MelFilterbank::standard();
        assert_eq!(fb.weights().dim(), (80, 401));
        for m in 0..80 {
            let row = fb.weights().row(m);
            assert!(row.iter().any(|&w| w > 0.0), "row {m} is empty");
            assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
            let nz: Vec<usize> = (0..row.len()).filter(|&k| row[k] > 0.0).collect();
            assert_eq!(nz.last().unwrap() - nz[0] + 1, nz.len(), "row {m} not contiguous");
        }
        assert!(fb.centers().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn filterbank_rejects_above_nyquist() {
        assert!(MelFilterbank::new(80, 800, 0.0, 9_000.0).is_err());
        assert!(MelFilterbank::new(80, 800, 100.0, 50.0).is_err());
    }

    #[test]
    fn zero_spectrogram_hits_floor() {
        let spec = Spectrogram::new(Array2::zeros((401, 128)), FrameParams::default()).unwrap();
        let mel = to_mel(&spec, &MelFilterbank::standard(), MEL_FLOOR).unwrap();
        assert_eq!(mel.values().dim(), (80, 128));
        assert!(mel.values().iter().all(|&v| v == MEL_FLOOR.ln()));
    }

    #[test]
    fn doubling_magnitudes_adds_ln2() {
        let mags = Array2::from_shape_fn((401, 4), |(k, t)| 0.5 + ((k * 7 + t * 3) % 11) as f64);
        let fb = MelFilterbank::standard();
        let a =
            to_mel(&Spectrogram::new(mags.clone(), FrameParams::default()).unwrap(), &fb, MEL_FLOOR).unwrap();
        let b =
            to_mel(&Spectrogram::new(mags * 2.0, FrameParams::default()).unwrap(), &fb, MEL_FLOOR).unwrap();
        for (x, y) in a.values().iter().zip(b.values().iter()) {
            assert!((y - x - 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn to_mel_shape_mismatch() {
        let spec =
            Spectrogram::new(Array2::zeros((201, 3)), FrameParams { window: 400, hop: 100, fft_size: 400 })
                .unwrap();
        assert!(to_mel(&spec, &MelFilterbank::standard(), MEL_FLOOR).is_err());
    }

    #[test]
    fn distance_examples() {
        let m = |v: Vec<f64>, r, c| {
            MelSpectrogram::from_matrix(Array2::from_shape_vec((r, c), v).unwrap(), 200).unwrap()
        };
        let a = m(vec![0.0, 0.0, 0.0, 0.0], 2, 2);
        let b = m(vec![1.0, 2.0, 3.0, 4.0], 2, 2);
        assert_eq!(mel_distance(&a, &b).unwrap(), 7.5);
        assert_eq!(mel_distance(&a, &a).unwrap(), 0.0);
        let c = m(vec![1.0, 1.0, 1.0, 1.0], 2, 2);
        assert_eq!(mel_distance(&a, &c).unwrap(), 1.0);
        assert!(mel_distance(&a, &m(vec![0.0; 6], 2, 3)).is_err());
    }

    #[test]
    fn full_segment_is_80_by_128() {
        let clip = AudioClip::new(vec![0.1; 25_600]).unwrap();
        let spec = stft(&clip, FrameParams::default()).unwrap();
        let mel = to_mel(&spec, &MelFilterbank::standard(), MEL_FLOOR).unwrap();
        assert_eq!(mel.values().dim(), (80, 128));
    }
}
