use super::audio::{AudioClip, SAMPLE_RATE};
use super::stft::{HOP, WINDOW};

const MIN_F0: f64 = 70.0;
const MAX_F0: f64 = 400.0;
const OCTAVE_GUARD: f64 = 0.9;

/// Frame-level pitch by normalized autocorrelation, one estimate per hop over
/// full windows. Frames whose best correlation is below `0.3` are unvoiced (`None`).
/// The period is the first autocorrelation peak within 90% of the best one,
/// refined by parabolic interpolation.
pub fn pitch_track(clip: &AudioClip) -> Vec<Option<f64>> {
    let x = clip.samples();
    let min_lag = (SAMPLE_RATE as f64 / MAX_F0).floor() as usize;
    let max_lag = (SAMPLE_RATE as f64 / MIN_F0).ceil() as usize;
    let mut out = Vec::new();
    let mut start = 0;
    while start + WINDOW + max_lag < x.len() {
        let frame = &x[start..start + WINDOW];
        let e0: f64 = frame.iter().map(|v| v * v).sum();
        let mut r = vec![0.0; max_lag + 2];
        if e0 > 1e-12 {
            for (lag, slot) in r.iter_mut().enumerate().take(max_lag + 1).skip(min_lag) {
                let other = &x[start + lag..start + lag + WINDOW];
                let (mut num, mut e1) = (0.0, 0.0);
                for (a, b) in frame.iter().zip(other) {
                    num += a * b;
                    e1 += b * b;
                }
                *slot = num / (e0 * e1).sqrt().max(1e-12);
            }
        }
        let best = r[min_lag..=max_lag].iter().copied().fold(0.0, f64::max);
        // first peak close to the best one, so non-integer periods don't flip to a subharmonic
        let lag = (min_lag..=max_lag)
            .find(|&l| r[l] >= OCTAVE_GUARD * best && r[l] >= r[l - 1] && r[l] >= r[l + 1]);
        out.push(match lag {
            Some(l) if best >= 0.3 => {
                let (a, b, c) = (r[l - 1], r[l], r[l + 1]);
                let denom = a - 2.0 * b + c;
                let shift = if denom < 0.0 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
                Some(SAMPLE_RATE as f64 / (l as f64 + shift))
            }
            _ => None,
        });
        start += HOP;
    }
    out
}

/// Mean over voiced frames, `None` if nothing is voiced.
pub fn mean_pitch(clip: &AudioClip) -> Option<f64> {
    let voiced: Vec<f64> = pitch_track(clip).into_iter().flatten().collect();
    (!voiced.is_empty()).then(|| voiced.iter().sum::<f64>() / voiced.len() as f64)
}
