use serde::{Deserialize, Serialize};

use super::tape::Cell;
use crate::error::{Error, Result};

/// Frames in one 1.6 s training segment.
pub const SEGMENT_FRAMES: usize = 128;

/// Fixed affine map applied to log-mel values before the encoder and undone
/// after the decoder, so the networks see roughly unit-scale data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelScaling {
    pub mean: f64,
    pub std: f64,
}

impl Default for MelScaling {
    fn default() -> Self {
        Self { mean: -4.0, std: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default = "EncoderConfig::desk")]
pub struct EncoderConfig {
    pub in_mels: usize,
    pub conv_layers: usize,
    pub conv_channels: usize,
    pub kernel: usize,
    pub recurrent_layers: usize,
    /// Per-direction width of every bidirectional layer.
    pub recurrent_hidden: usize,
    pub code_dim: usize,
    pub code_stride: usize,
    pub cell: Cell,
    pub scaling: MelScaling,
    pub norm_eps: f64,
}

impl EncoderConfig {
    /// Three 512-channel convolutions and two bidirectional LSTM layers of width 32.
    pub fn full() -> Self {
        Self {
            in_mels: 80,
            conv_layers: 3,
            conv_channels: 512,
            kernel: 5,
            recurrent_layers: 2,
            recurrent_hidden: 32,
            code_dim: 32,
            code_stride: 4,
            cell: Cell::Lstm,
            scaling: MelScaling::default(),
            norm_eps: 1e-8,
        }
    }

    pub fn desk() -> Self {
        Self {
            in_mels: 80,
            conv_layers: 2,
            conv_channels: 48,
            kernel: 5,
            recurrent_layers: 1,
            recurrent_hidden: 8,
            code_dim: 8,
            code_stride: 4,
            cell: Cell::Gru,
            scaling: MelScaling::default(),
            norm_eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("encoder: {m}")));
        if self.kernel.is_multiple_of(2) {
            return bad(format!("kernel {} must be odd", self.kernel));
        }
        if self.code_stride == 0 || !SEGMENT_FRAMES.is_multiple_of(self.code_stride) {
            return bad(format!("code_stride {} must divide {SEGMENT_FRAMES}", self.code_stride));
        }
        if self.in_mels == 0
            || self.conv_channels == 0
            || self.recurrent_layers == 0
            || self.recurrent_hidden == 0
            || self.code_dim == 0
        {
            return bad("all widths and the recurrent depth must be positive".into());
        }
        if !(self.scaling.std > 0.0) || !(self.norm_eps > 0.0) {
            return bad("scaling.std and norm_eps must be positive".into());
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        let mut c_in = self.in_mels;
        for _ in 0..self.conv_layers {
            n += self.conv_channels * c_in * self.kernel + 3 * self.conv_channels;
            c_in = self.conv_channels;
        }
        let g = self.cell.gates();
        let h = self.recurrent_hidden;
        for _ in 0..self.recurrent_layers {
            n += 2 * (g * h * c_in + g * h * h + g * h);
            c_in = 2 * h;
        }
        n + self.code_dim * 2 * h + self.code_dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default = "DecoderConfig::desk")]
pub struct DecoderConfig {
    pub code_dim: usize,
    pub code_stride: usize,
    pub pre_recurrent_channels: usize,
    pub conv_layers: usize,
    pub conv_channels: usize,
    pub kernel: usize,
    pub post_recurrent_channels: usize,
    pub post_recurrent_layers: usize,
    pub out_mels: usize,
    pub cell: Cell,
    pub scaling: MelScaling,
    pub norm_eps: f64,
    pub bn_momentum: f64,
}

impl DecoderConfig {
    /// 512-channel LSTM, three 512-channel convolutions, two 1024-channel LSTMs, linear to 80.
    pub fn full() -> Self {
        Self {
            code_dim: 32,
            code_stride: 4,
            pre_recurrent_channels: 512,
            conv_layers: 3,
            conv_channels: 512,
            kernel: 5,
            post_recurrent_channels: 1024,
            post_recurrent_layers: 2,
            out_mels: 80,
            cell: Cell::Lstm,
            scaling: MelScaling::default(),
            norm_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    /// The full layout with every channel count divided by eight.
    pub fn desk() -> Self {
        Self {
            code_dim: 8,
            pre_recurrent_channels: 64,
            conv_channels: 64,
            post_recurrent_channels: 128,
            cell: Cell::Gru,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("decoder: {m}")));
        if self.kernel.is_multiple_of(2) {
            return bad(format!("kernel {} must be odd", self.kernel));
        }
        if self.code_stride == 0 || !SEGMENT_FRAMES.is_multiple_of(self.code_stride) {
            return bad(format!("code_stride {} must divide {SEGMENT_FRAMES}", self.code_stride));
        }
        if self.code_dim == 0
            || self.pre_recurrent_channels == 0
            || self.conv_channels == 0
            || self.post_recurrent_channels == 0
            || self.out_mels == 0
        {
            return bad("all widths must be positive".into());
        }
        if !(self.scaling.std > 0.0) || !(self.norm_eps > 0.0) {
            return bad("scaling.std and norm_eps must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("bn_momentum must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        let g = self.cell.gates();
        let p = self.pre_recurrent_channels;
        let mut n = g * p * self.code_dim + g * p * p + g * p;
        let mut c_in = p;
        for _ in 0..self.conv_layers {
            n += self.conv_channels * c_in * self.kernel + 3 * self.conv_channels;
            c_in = self.conv_channels;
        }
        let h = self.post_recurrent_channels;
        for _ in 0..self.post_recurrent_layers {
            n += g * h * c_in + g * h * h + g * h;
            c_in = h;
        }
        n + self.out_mels * c_in + self.out_mels
    }
}

/// Whether normalization layers use batch statistics or stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
