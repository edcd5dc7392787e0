use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::config::{Reduction, Variant};
use crate::error::{Error, Result};
use crate::frontend::MelSpectrogram;
use crate::net::{ContentCode, Mat};

/// Losses observed at one optimization step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub variant: Variant,
    pub l_rec: f64,
    pub l_cyc: f64,
    pub l_total: f64,
    /// Matched reconstruction term per speaker.
    pub per_speaker: BTreeMap<String, f64>,
}

pub(crate) fn reduced_sq(a: &Mat, b: &Mat, reduction: Reduction) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    let s: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(match reduction {
        Reduction::Mean => s / a.len().max(1) as f64,
        Reduction::Sum => s,
    })
}

fn paired<'a>(
    a: impl ExactSizeIterator<Item = &'a Mat>,
    b: impl ExactSizeIterator<Item = &'a Mat>,
) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} outputs vs {} targets", a.len(), b.len())));
    }
    a.zip(b).map(|(x, y)| reduced_sq(x, y, Reduction::Mean)).sum()
}

/// Reconstruction loss: the per-pair mean squared error, summed over pairs.
pub fn loss_rec(m_hats: &[MelSpectrogram], ms: &[MelSpectrogram]) -> Result<f64> {
    paired(m_hats.iter().map(|m| m.values()), ms.iter().map(|m| m.values()))
}

/// Cycle loss: the per-pair mean squared distance between re-encoded and
/// original codes, summed over pairs.
pub fn loss_cyc(z_hats: &[ContentCode], zs: &[ContentCode]) -> Result<f64> {
    paired(z_hats.iter().map(|z| z.values()), zs.iter().map(|z| z.values()))
}

pub fn loss_total(l_rec: f64, l_cyc: f64, alpha: f64) -> f64 {
    l_rec + alpha * l_cyc
}
