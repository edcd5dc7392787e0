//! Source-filter rendering of `(speaker, content)` pairs.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::factors::{canonical_formants, ContentFactor, SpeakerFactor};
use crate::error::Result;
use crate::frontend::{AudioClip, SAMPLE_RATE};

/// Cross-fade between consecutive units, in samples (10 ms).
pub const CROSSFADE: usize = 160;
const WARMUP: usize = 320;
const BANDWIDTHS: [f64; 4] = [70.0, 100.0, 140.0, 200.0];
const F4: f64 = 3600.0;
const TARGET_RMS: f64 = 0.1;
const JITTER: f64 = 0.10;

/// Klatt-style two-pole resonator with unity gain at DC.
#[derive(Debug, Clone, Copy)]
struct Resonator {
    a: f64,
    b: f64,
    c: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bw: f64) -> Self {
        let t = 1.0 / SAMPLE_RATE as f64;
        let c = -(-2.0 * PI * bw * t).exp();
        let b = 2.0 * (-PI * bw * t).exp() * (2.0 * PI * freq * t).cos();
        Self { a: 1.0 - b - c, b, c, y1: 0.0, y2: 0.0 }
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.a * x + self.b * self.y1 + self.c * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Rosenberg glottal flow over one period, `phase` in `[0, 1)`.
fn glottal_flow(phase: f64) -> f64 {
    const OPEN: f64 = 0.4;
    const CLOSE: f64 = 0.16;
    if phase < OPEN {
        0.5 * (1.0 - (PI * phase / OPEN).cos())
    } else if phase < OPEN + CLOSE {
        (PI * (phase - OPEN) / (2.0 * CLOSE)).cos()
    } else {
        0.0
    }
}

/// Glottal excitation (differentiated flow) with a per-unit pitch offset of up to
/// `JITTER`, linearly interpolated between unit centres.
fn excitation(s: &SpeakerFactor, w: &ContentFactor, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let total = w.total_samples();
    let offsets: Vec<f64> = w.units.iter().map(|_| rng.gen_range(-JITTER..=JITTER)).collect();
    let mut centres = Vec::with_capacity(w.units.len());
    let mut acc = 0usize;
    for u in &w.units {
        let len = u.duration_ms as usize * 16;
        centres.push(acc as f64 + len as f64 / 2.0);
        acc += len;
    }
    let pitch_at = |n: f64| -> f64 {
        let k = centres.partition_point(|&c| c <= n);
        let jitter = if k == 0 {
            offsets[0]
        } else if k == centres.len() {
            offsets[k - 1]
        } else {
            let (c0, c1) = (centres[k - 1], centres[k]);
            let a = (n - c0) / (c1 - c0);
            offsets[k - 1] * (1.0 - a) + offsets[k] * a
        };
        s.f0_base * (1.0 + jitter)
    };
    let mut phase = rng.gen_range(0.0..1.0);
    let mut prev = glottal_flow(phase);
    let mut out = Vec::with_capacity(total + CROSSFADE);
    for n in 0..total + CROSSFADE {
        phase += pitch_at(n as f64) / SAMPLE_RATE as f64;
        phase -= phase.floor();
        let g = glottal_flow(phase);
        out.push(g - prev);
        prev = g;
    }
    // faint aspiration keeps upper bands off the log floor
    for x in &mut out {
        *x += rng.gen_range(-1.0..1.0) * 2e-4;
    }
    out
}

/// One-pole low-pass whose slope above the corner approximates `tilt` dB/octave.
fn apply_tilt(signal: &mut [f64], tilt_db: f64) {
    let amount = (-tilt_db / 6.0).clamp(0.0, 1.0);
    if amount == 0.0 {
        return;
    }
    let pole = 0.9 * amount;
    let mut y = 0.0;
    for x in signal.iter_mut() {
        y = (1.0 - pole) * *x + pole * y;
        *x = y;
    }
}

/// Renders `x = f(s, w)`. Deterministic in `(s, w, seed)`; the output has exactly
/// `w.total_samples()` samples.
pub fn generate_utterance(s: &SpeakerFactor, w: &ContentFactor, seed: u64) -> Result<AudioClip> {
    s.validate()?;
    w.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source = excitation(s, w, &mut rng);
    let total = w.total_samples();
    let mut out = vec![0.0; total];
    let mut start = 0usize;
    let last = w.units.len() - 1;
    for (k, unit) in w.units.iter().enumerate() {
        let len = unit.duration_ms as usize * 16;
        let [f1, f2, f3] = canonical_formants(unit.unit_id);
        let mut filters: Vec<Resonator> = [f1, f2, f3, F4]
            .iter()
            .zip(BANDWIDTHS)
            .map(|(&f, bw)| Resonator::new(f * s.formant_scale, bw))
            .collect();
        let fade_in = if k == 0 { 0 } else { CROSSFADE };
        let fade_out = if k == last { 0 } else { CROSSFADE };
        let end = start + len;
        let render_end = (end + fade_out).min(total);
        for n in start.saturating_sub(WARMUP)..render_end {
            let mut y = source[n];
            for f in filters.iter_mut() {
                y = f.tick(y);
            }
            if n < start {
                continue;
            }
            let weight = if n < start + fade_in {
                (n - start) as f64 / fade_in as f64
            } else if n >= end {
                1.0 - (n - end) as f64 / fade_out as f64
            } else {
                1.0
            };
            out[n] += y * weight;
        }
        start += len;
    }
    apply_tilt(&mut out, s.spectral_tilt);
    let rms = (out.iter().map(|x| x * x).sum::<f64>() / total as f64).sqrt();
    if rms > 0.0 {
        let g = TARGET_RMS / rms;
        out.iter_mut().for_each(|x| *x *= g);
    }
    AudioClip::clipped(out)
}
