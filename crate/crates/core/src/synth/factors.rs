use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_UNITS: usize = 32;
pub const MIN_UNIT_MS: u32 = 80;
pub const MAX_UNIT_MS: u32 = 240;

/// Speaker-side synthesis parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerFactor {
    pub speaker_id: String,
    /// Base glottal frequency in Hz, within `[90, 260]`.
    pub f0_base: f64,
    /// Multiplier on every formant frequency, within `[0.8, 1.25]`.
    pub formant_scale: f64,
    /// Spectral slope in dB per octave, within `[-6, 0]`.
    pub spectral_tilt: f64,
}

impl SpeakerFactor {
    pub fn new(
        speaker_id: impl Into<String>,
        f0_base: f64,
        formant_scale: f64,
        spectral_tilt: f64,
    ) -> Result<Self> {
        let s = Self { speaker_id: speaker_id.into(), f0_base, formant_scale, spectral_tilt };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, lo: f64, hi: f64| {
            if v.is_finite() && (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "{name} = {v} outside [{lo}, {hi}] for speaker {:?}",
                    self.speaker_id
                )))
            }
        };
        check("f0_base", self.f0_base, 90.0, 260.0)?;
        check("formant_scale", self.formant_scale, 0.8, 1.25)?;
        check("spectral_tilt", self.spectral_tilt, -6.0, 0.0)?;
        if self.speaker_id.is_empty() || self.speaker_id.contains(['\t', '\n']) {
            return Err(Error::InvalidArgument(format!("invalid speaker id {:?}", self.speaker_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentUnit {
    pub unit_id: u8,
    pub duration_ms: u32,
}

/// Content-side synthesis parameters: a sequence of vowel-like units.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentFactor {
    pub units: Vec<ContentUnit>,
}

impl ContentFactor {
    pub fn new(units: Vec<ContentUnit>) -> Result<Self> {
        let c = Self { units };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.units.is_empty() {
            return Err(Error::InvalidArgument("content factor has no units".into()));
        }
        for u in &self.units {
            if usize::from(u.unit_id) >= NUM_UNITS {
                return Err(Error::InvalidArgument(format!("unit id {} out of range", u.unit_id)));
            }
            if !(MIN_UNIT_MS..=MAX_UNIT_MS).contains(&u.duration_ms) {
                return Err(Error::InvalidArgument(format!(
                    "unit duration {} ms outside [{MIN_UNIT_MS}, {MAX_UNIT_MS}]",
                    u.duration_ms
                )));
            }
        }
        Ok(())
    }

    pub fn total_ms(&self) -> u32 {
        self.units.iter().map(|u| u.duration_ms).sum()
    }

    /// Number of samples this content renders to at 16 kHz.
    pub fn total_samples(&self) -> usize {
        self.units.iter().map(|u| u.duration_ms as usize * 16).sum()
    }

    /// Unit id active at each sample index boundary, one entry per `hop` samples
    /// (the unit under the centre of each analysis frame).
    pub fn frame_units(&self, frames: usize, hop: usize) -> Vec<u8> {
        let mut bounds = Vec::with_capacity(self.units.len());
        let mut acc = 0usize;
        for u in &self.units {
            acc += u.duration_ms as usize * 16;
            bounds.push((acc, u.unit_id));
        }
        (0..frames)
            .map(|t| {
                let centre = t * hop;
                bounds
                    .iter()
                    .find(|(end, _)| centre < *end)
                    .map(|(_, id)| *id)
                    .unwrap_or_else(|| self.units.last().unwrap().unit_id)
            })
            .collect()
    }
}

/// Canonical `(F1, F2, F3)` in Hz for a unit id. Units form a 4 x 8 grid with
/// F1 in 300..=900 Hz and F2 in 1000..=2500 Hz.
pub fn canonical_formants(unit_id: u8) -> [f64; 3] {
    let id = usize::from(unit_id) % NUM_UNITS;
    let (row, col) = (id / 8, id % 8);
    let f1 = 300.0 + 200.0 * row as f64;
    let f2 = 1000.0 + 1500.0 * col as f64 / 7.0;
    let f3 = 2600.0 + 80.0 * ((row + 3 * col) % 8) as f64;
    [f1, f2, f3]
}
