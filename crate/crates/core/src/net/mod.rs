//! Encoder/decoder networks on a small reverse-mode tape.
//!
//! Activations are laid out channel-major with a batch of `B` segments of
//! `T` frames placed side by side, so every tensor is a `C x (B * T)` matrix.

mod config;
mod decoder;
mod encoder;
mod params;
mod tape;

use rand::seq::index::sample;

pub use config::{DecoderConfig, EncoderConfig, MelScaling, Mode, SEGMENT_FRAMES};
pub use decoder::{DecoderGraph, DecoderParams};
pub use encoder::{split_segments, stack_segments, ContentCode, EncoderParams};
pub use params::{Bound, ParamSet};
pub use tape::{Cell, Grads, Mat, NormStats, Tape, Var};

use crate::error::{Error, Result};

/// Evaluates a scalar objective and its gradient with respect to `params`.
pub fn gradient<F>(params: &ParamSet, objective: F) -> Result<(f64, ParamSet)>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let loss = objective(&mut tape, &bound)?;
    let grads = tape.backward(loss)?;
    Ok((tape.scalar(loss), bound.grads(&grads, params)))
}

/// Evaluates a scalar objective without recording gradients.
pub fn evaluate<F>(params: &ParamSet, objective: F) -> Result<f64>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let loss = objective(&mut tape, &bound)?;
    Ok(tape.scalar(loss))
}

/// Central finite-difference check of an analytic gradient.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub coordinates: usize,
    pub epsilon: f64,
    pub seed: u64,
    /// Denominator floor for the relative error. Central differences with
    /// eps = 1e-5 on an O(10) loss carry a few 1e-9 of roundoff, so
    /// gradients below the floor are compared in absolute terms.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self { coordinates: 200, epsilon: 1e-5, seed: 0, floor: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    /// Name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

impl GradCheck {
    /// Computes the analytic gradient and compares it with finite differences.
    pub fn run<F>(&self, params: &ParamSet, objective: F) -> Result<GradCheckReport>
    where
        F: Fn(&mut Tape, &Bound) -> Result<Var>,
    {
        let (_, analytic) = gradient(params, &objective)?;
        self.compare(params, &analytic, objective)
    }

    /// Compares a supplied gradient with finite differences on randomly
    /// chosen coordinates.
    pub fn compare<F>(&self, params: &ParamSet, analytic: &ParamSet, objective: F) -> Result<GradCheckReport>
    where
        F: Fn(&mut Tape, &Bound) -> Result<Var>,
    {
        if !params.same_layout(analytic) {
            return Err(Error::Shape("gradient layout differs from parameters".into()));
        }
        let flat: Vec<(String, usize)> =
            params.iter().flat_map(|(name, a)| (0..a.len()).map(move |i| (name.clone(), i))).collect();
        let mut rng = params::seeded(self.seed, 7);
        let n = self.coordinates.min(flat.len());
        let mut report = GradCheckReport { checked: 0, max_relative_error: 0.0, worst: None };
        let mut probe = params.clone();
        for pick in sample(&mut rng, flat.len(), n) {
            let (name, index) = &flat[pick];
            let original = params.get(name).and_then(|a| a.iter().nth(*index)).copied();
            let original = original.expect("coordinate from these params");
            let mut at = |value: f64| -> Result<f64> {
                *probe.coordinate_mut(name, *index).expect("valid coordinate") = value;
                evaluate(&probe, &objective)
            };
            let plus = at(original + self.epsilon)?;
            let minus = at(original - self.epsilon)?;
            at(original)?;
            let numeric = (plus - minus) / (2.0 * self.epsilon);
            let exact = *analytic.get(name).and_then(|a| a.iter().nth(*index)).expect("same layout");
            let denom = exact.abs().max(numeric.abs()).max(self.floor);
            let err = (exact - numeric).abs() / denom;
            report.checked += 1;
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((name.clone(), *index));
            }
        }
        Ok(report)
    }
}
