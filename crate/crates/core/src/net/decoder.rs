use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::config::{DecoderConfig, Mode};
use super::encoder::{split_segments, stack_segments, ContentCode};
use super::params::{orthogonal_blocks, seeded, xavier, Bound, ParamSet};
use super::tape::{Mat, NormStats, Tape, Var};
use crate::error::{Error, Result};
use crate::frontend::MelSpectrogram;

/// Speaker-specific decoder weights plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderParams {
    pub config: DecoderConfig,
    pub params: ParamSet,
    /// `bn{i}.running_mean` / `bn{i}.running_var`; not trained by gradient.
    pub buffers: ParamSet,
}

/// Decoder output node plus the batch statistics seen in training mode.
#[derive(Debug)]
pub struct DecoderGraph {
    pub mel: Var,
    pub batch_stats: Vec<NormStats>,
}

impl DecoderParams {
    pub fn init(config: &DecoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed, 2);
        let g = config.cell.gates();
        let mut p = ParamSet::new();
        let mut b = ParamSet::new();
        let pre = config.pre_recurrent_channels;
        p.insert("pre.w_ih", xavier(&mut rng, g * pre, config.code_dim, config.code_dim, g * pre));
        p.insert("pre.w_hh", orthogonal_blocks(&mut rng, g, pre));
        p.insert("pre.bias", Mat::zeros((g * pre, 1)));
        let k = config.kernel;
        let mut c_in = pre;
        for i in 0..config.conv_layers {
            let c = config.conv_channels;
            p.insert(format!("conv{i}.weight"), xavier(&mut rng, c, c_in * k, c_in * k, c * k));
            p.insert(format!("conv{i}.bias"), Mat::zeros((c, 1)));
            p.insert(format!("bn{i}.gamma"), Mat::ones((c, 1)));
            p.insert(format!("bn{i}.beta"), Mat::zeros((c, 1)));
            b.insert(format!("bn{i}.running_mean"), Mat::zeros((c, 1)));
            b.insert(format!("bn{i}.running_var"), Mat::ones((c, 1)));
            c_in = c;
        }
        let h = config.post_recurrent_channels;
        for l in 0..config.post_recurrent_layers {
            p.insert(format!("post{l}.w_ih"), xavier(&mut rng, g * h, c_in, c_in, g * h));
            p.insert(format!("post{l}.w_hh"), orthogonal_blocks(&mut rng, g, h));
            p.insert(format!("post{l}.bias"), Mat::zeros((g * h, 1)));
            c_in = h;
        }
        p.insert("out.weight", xavier(&mut rng, config.out_mels, c_in, c_in, config.out_mels));
        p.insert("out.bias", Mat::zeros((config.out_mels, 1)));
        Ok(Self { config: config.clone(), params: p, buffers: b })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Records the decoder on `tape`. `z` holds `B` stacked codes of
    /// `code_frames` frames each; the output is `out_mels x (B * code_frames * stride)`.
    pub fn graph(
        &self,
        tape: &mut Tape,
        w: &Bound,
        z: Var,
        code_frames: usize,
        mode: Mode,
    ) -> Result<DecoderGraph> {
        let cfg = &self.config;
        let (rows, n) = tape.value(z).dim();
        if rows != cfg.code_dim {
            return Err(Error::Shape(format!("decoder expects {}-dim codes, got {rows}", cfg.code_dim)));
        }
        if code_frames == 0 || n % code_frames != 0 {
            return Err(Error::Shape(format!("code length {code_frames} does not divide {n} columns")));
        }
        let frames = code_frames * cfg.code_stride;
        let up = tape.repeat_cols(z, cfg.code_stride);
        let xp = tape.matmul(w.var("pre.w_ih")?, up)?;
        let xp = tape.add_column(xp, w.var("pre.bias")?)?;
        let mut h = tape.recurrent(xp, w.var("pre.w_hh")?, cfg.cell, frames, false)?;
        let mut batch_stats = Vec::new();
        for i in 0..cfg.conv_layers {
            let cols = tape.im2col(h, cfg.kernel, frames)?;
            let y = tape.matmul(w.var(&format!("conv{i}.weight"))?, cols)?;
            let y = tape.add_column(y, w.var(&format!("conv{i}.bias"))?)?;
            let y = match mode {
                Mode::Train => {
                    let total = tape.value(y).ncols();
                    let (y, stats) = tape.normalize(y, total, cfg.norm_eps)?;
                    batch_stats.push(stats);
                    y
                }
                Mode::Eval => {
                    let rm = self.buffer(&format!("bn{i}.running_mean"))?;
                    let rv = self.buffer(&format!("bn{i}.running_var"))?;
                    let inv = rv.mapv(|v| 1.0 / (v + cfg.norm_eps).sqrt());
                    let shift = -(rm * &inv);
                    let (inv, shift) = (tape.constant(inv), tape.constant(shift));
                    tape.scale_shift(y, inv, shift)?
                }
            };
            let y = tape.scale_shift(y, w.var(&format!("bn{i}.gamma"))?, w.var(&format!("bn{i}.beta"))?)?;
            h = tape.relu(y);
        }
        for l in 0..cfg.post_recurrent_layers {
            let xp = tape.matmul(w.var(&format!("post{l}.w_ih"))?, h)?;
            let xp = tape.add_column(xp, w.var(&format!("post{l}.bias"))?)?;
            h = tape.recurrent(xp, w.var(&format!("post{l}.w_hh"))?, cfg.cell, frames, false)?;
        }
        let y = tape.matmul(w.var("out.weight")?, h)?;
        let y = tape.add_column(y, w.var("out.bias")?)?;
        let y = tape.scale(y, cfg.scaling.std);
        let offset = tape.constant(Mat::from_elem((cfg.out_mels, 1), cfg.scaling.mean));
        let mel = tape.add_column(y, offset)?;
        Ok(DecoderGraph { mel, batch_stats })
    }

    fn buffer(&self, name: &str) -> Result<&Mat> {
        self.buffers.get(name).ok_or_else(|| Error::InvalidArgument(format!("missing buffer {name:?}")))
    }

    /// Folds training-mode batch statistics into the running estimates
    /// (unbiased variance, exponential moving average).
    pub fn update_running_stats(&mut self, stats: &[NormStats]) {
        let m = self.config.bn_momentum;
        for (i, s) in stats.iter().enumerate() {
            let n = s.group_len as f64;
            let correction = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let mean = s.mean.column(0).to_owned().insert_axis(Axis(1));
            let var = s.var.column(0).mapv(|v| v * correction).insert_axis(Axis(1));
            if let Some(rm) = self.buffers.get_mut(&format!("bn{i}.running_mean")) {
                *rm = &*rm * (1.0 - m) + &mean * m;
            }
            if let Some(rv) = self.buffers.get_mut(&format!("bn{i}.running_var")) {
                *rv = &*rv * (1.0 - m) + &var * m;
            }
        }
    }

    /// Decodes one code in inference mode.
    pub fn forward(&self, z: &ContentCode) -> Result<MelSpectrogram> {
        let mels = self.forward_batch(&[z.values()], Mode::Eval)?;
        Ok(mels.into_iter().next().expect("one code in, one mel out"))
    }

    /// Decodes equal-length codes together. In training mode batch statistics
    /// are used (running statistics are not touched).
    pub fn forward_batch(&self, codes: &[&Mat], mode: Mode) -> Result<Vec<MelSpectrogram>> {
        let (z, code_frames) = stack_segments(codes)?;
        let mut tape = Tape::new();
        let w = self.params.bind(&mut tape, false);
        let z = tape.constant(z);
        let out = self.graph(&mut tape, &w, z, code_frames, mode)?;
        split_segments(tape.value(out.mel), code_frames * self.config.code_stride)
            .into_iter()
            .map(|v| MelSpectrogram::from_matrix(v, crate::frontend::HOP))
            .collect()
    }
}
