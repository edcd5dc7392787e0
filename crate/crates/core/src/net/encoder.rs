use ndarray::{concatenate, Axis};
use serde::{Deserialize, Serialize};

use super::config::EncoderConfig;
use super::params::{orthogonal_blocks, seeded, xavier, Bound, ParamSet};
use super::tape::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::frontend::MelSpectrogram;

/// `code_dim x T'` content code with `T' = T / stride`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentCode {
    values: Mat,
    stride: usize,
}

impl ContentCode {
    pub fn new(values: Mat, stride: usize) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("content code".into()));
        }
        Ok(Self { values, stride })
    }

    pub fn values(&self) -> &Mat {
        &self.values
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }

    /// Mean over time, one value per code dimension.
    pub fn time_average(&self) -> Vec<f64> {
        self.values.mean_axis(Axis(1)).map(|m| m.to_vec()).unwrap_or_default()
    }
}

/// Shared or speaker-specific encoder weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub params: ParamSet,
}

/// Puts equal-length segments side by side: `rows x (B * T)`.
pub fn stack_segments(segments: &[&Mat]) -> Result<(Mat, usize)> {
    let first = segments.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let frames = first.ncols();
    if segments.iter().any(|s| s.dim() != first.dim()) {
        return Err(Error::Shape("batch segments differ in shape".into()));
    }
    let views: Vec<_> = segments.iter().map(|s| s.view()).collect();
    let stacked = concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((stacked, frames))
}

/// Splits a `rows x (B * T)` matrix back into `B` segments.
pub fn split_segments(m: &Mat, frames: usize) -> Vec<Mat> {
    (0..m.ncols() / frames)
        .map(|b| m.slice(ndarray::s![.., b * frames..(b + 1) * frames]).to_owned())
        .collect()
}

impl EncoderParams {
    /// Glorot-uniform convolution/linear weights, orthogonal recurrent weights,
    /// zero biases, unit normalization gains.
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed, 1);
        let mut p = ParamSet::new();
        let k = config.kernel;
        let mut c_in = config.in_mels;
        for i in 0..config.conv_layers {
            let c = config.conv_channels;
            p.insert(format!("conv{i}.weight"), xavier(&mut rng, c, c_in * k, c_in * k, c * k));
            p.insert(format!("conv{i}.bias"), Mat::zeros((c, 1)));
            p.insert(format!("norm{i}.gamma"), Mat::ones((c, 1)));
            p.insert(format!("norm{i}.beta"), Mat::zeros((c, 1)));
            c_in = c;
        }
        let g = config.cell.gates();
        let h = config.recurrent_hidden;
        for l in 0..config.recurrent_layers {
            for dir in ["fw", "bw"] {
                p.insert(format!("rnn{l}.{dir}.w_ih"), xavier(&mut rng, g * h, c_in, c_in, g * h));
                p.insert(format!("rnn{l}.{dir}.w_hh"), orthogonal_blocks(&mut rng, g, h));
                p.insert(format!("rnn{l}.{dir}.bias"), Mat::zeros((g * h, 1)));
            }
            c_in = 2 * h;
        }
        let d = config.code_dim;
        p.insert("proj.weight", xavier(&mut rng, d, c_in, c_in, d));
        p.insert("proj.bias", Mat::zeros((d, 1)));
        Ok(Self { config: config.clone(), params: p })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Records the encoder on `tape`. `x` holds `B` stacked log-mel segments of
    /// `frames` frames each; the result is `code_dim x (B * frames / stride)`.
    pub fn graph(&self, tape: &mut Tape, w: &Bound, x: Var, frames: usize) -> Result<Var> {
        let cfg = &self.config;
        let (rows, n) = tape.value(x).dim();
        if rows != cfg.in_mels {
            return Err(Error::Shape(format!("encoder expects {} mel rows, got {rows}", cfg.in_mels)));
        }
        if frames == 0 || n % frames != 0 || !frames.is_multiple_of(cfg.code_stride) {
            return Err(Error::Shape(format!(
                "segment length {frames} must be a positive multiple of stride {} dividing {n} columns",
                cfg.code_stride
            )));
        }
        let scaled = tape.value(x).mapv(|v| (v - cfg.scaling.mean) / cfg.scaling.std);
        let mut h = tape.constant(scaled);
        // keep the dependency on `x` when it carries gradient (re-encoding path)
        if tape.requires_grad(x) {
            let shifted = tape.scale(x, 1.0 / cfg.scaling.std);
            let offset = tape.constant(Mat::from_elem((rows, 1), -cfg.scaling.mean / cfg.scaling.std));
            h = tape.add_column(shifted, offset)?;
        }
        for i in 0..cfg.conv_layers {
            let cols = tape.im2col(h, cfg.kernel, frames)?;
            let y = tape.matmul(w.var(&format!("conv{i}.weight"))?, cols)?;
            let y = tape.add_column(y, w.var(&format!("conv{i}.bias"))?)?;
            let (y, _) = tape.normalize(y, frames, cfg.norm_eps)?;
            let y =
                tape.scale_shift(y, w.var(&format!("norm{i}.gamma"))?, w.var(&format!("norm{i}.beta"))?)?;
            h = tape.relu(y);
        }
        let mut streams = (h, h);
        for l in 0..cfg.recurrent_layers {
            let run = |tape: &mut Tape, dir: &str, reverse: bool| -> Result<Var> {
                let xp = tape.matmul(w.var(&format!("rnn{l}.{dir}.w_ih"))?, h)?;
                let xp = tape.add_column(xp, w.var(&format!("rnn{l}.{dir}.bias"))?)?;
                tape.recurrent(xp, w.var(&format!("rnn{l}.{dir}.w_hh"))?, cfg.cell, frames, reverse)
            };
            let fw = run(tape, "fw", false)?;
            let bw = run(tape, "bw", true)?;
            streams = (fw, bw);
            h = tape.concat_rows(&[fw, bw])?;
        }
        // forward stream at the end of each stride window, backward at its start
        let s = cfg.code_stride;
        let segments = n / frames;
        let per = frames / s;
        let fw_idx: Vec<usize> =
            (0..segments * per).map(|j| (j / per) * frames + (j % per) * s + s - 1).collect();
        let bw_idx: Vec<usize> = (0..segments * per).map(|j| (j / per) * frames + (j % per) * s).collect();
        let fw = tape.select_cols(streams.0, fw_idx)?;
        let bw = tape.select_cols(streams.1, bw_idx)?;
        let both = tape.concat_rows(&[fw, bw])?;
        let code = tape.matmul(w.var("proj.weight")?, both)?;
        tape.add_column(code, w.var("proj.bias")?)
    }

    /// Encodes one mel spectrogram.
    pub fn forward(&self, mel: &MelSpectrogram) -> Result<ContentCode> {
        let codes = self.forward_batch(&[mel.values()])?;
        Ok(codes.into_iter().next().expect("one segment in, one code out"))
    }

    /// Encodes equal-length segments in one pass.
    pub fn forward_batch(&self, mels: &[&Mat]) -> Result<Vec<ContentCode>> {
        let (x, frames) = stack_segments(mels)?;
        let mut tape = Tape::new();
        let w = self.params.bind(&mut tape, false);
        let x = tape.constant(x);
        let out = self.graph(&mut tape, &w, x, frames)?;
        split_segments(tape.value(out), frames / self.config.code_stride)
            .into_iter()
            .map(|v| ContentCode::new(v, self.config.code_stride))
            .collect()
    }
}
