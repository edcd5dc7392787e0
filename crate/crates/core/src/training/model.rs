use std::collections::BTreeMap;

use ndarray::{concatenate, s, Axis};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::frontend::{MelSpectrogram, HOP};
use crate::net::{ContentCode, DecoderParams, EncoderParams, Mat};

/// One content encoder feeding one decoder per target speaker. A vanilla
/// exemplar autoencoder is the single-decoder case.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadModel {
    pub encoder: EncoderParams,
    pub decoders: BTreeMap<String, DecoderParams>,
    pub encoder_frozen: bool,
    pub frozen: BTreeMap<String, bool>,
}

/// Edge-replicates the last frame until the frame count is a multiple of `stride`.
pub fn pad_frames(m: &Mat, stride: usize) -> Mat {
    let t = m.ncols();
    let target = t.div_ceil(stride).max(1) * stride;
    if target == t {
        return m.clone();
    }
    let last = if t == 0 { Mat::zeros((m.nrows(), 1)) } else { m.slice(s![.., t - 1..t]).to_owned() };
    let mut parts = vec![m.view()];
    for _ in t..target {
        parts.push(last.view());
    }
    concatenate(Axis(1), &parts).expect("rows agree")
}

impl MultiHeadModel {
    pub fn new(encoder: EncoderParams, decoders: BTreeMap<String, DecoderParams>) -> Result<Self> {
        if decoders.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one decoder".into()));
        }
        for (id, d) in &decoders {
            if d.config.code_dim != encoder.config.code_dim
                || d.config.code_stride != encoder.config.code_stride
            {
                return Err(Error::Config(format!(
                    "decoder {id:?} expects {}-dim codes at stride {}, encoder gives {} at {}",
                    d.config.code_dim,
                    d.config.code_stride,
                    encoder.config.code_dim,
                    encoder.config.code_stride
                )));
            }
        }
        let frozen = decoders.keys().map(|k| (k.clone(), false)).collect();
        Ok(Self { encoder, decoders, encoder_frozen: false, frozen })
    }

    pub fn speaker_ids(&self) -> Vec<String> {
        self.decoders.keys().cloned().collect()
    }

    pub fn stride(&self) -> usize {
        self.encoder.config.code_stride
    }

    pub fn decoder(&self, id: &str) -> Result<&DecoderParams> {
        self.decoders.get(id).ok_or_else(|| Error::UnknownSpeaker(id.to_string()))
    }

    /// Encodes a mel of any length (edge-padded to a stride multiple).
    pub fn encode(&self, mel: &MelSpectrogram) -> Result<ContentCode> {
        self.encode_matrix(mel.values())
    }

    pub fn encode_matrix(&self, m: &Mat) -> Result<ContentCode> {
        let padded = pad_frames(m, self.stride());
        Ok(self.encoder.forward_batch(&[&padded])?.remove(0))
    }

    /// Decodes with speaker `id`'s decoder in inference mode; the result has
    /// `code frames * stride` frames.
    pub fn decode(&self, id: &str, code: &ContentCode) -> Result<Mat> {
        let d = self.decoder(id)?;
        Ok(d.forward(code)?.into_values())
    }

    /// Encodes with the shared encoder and decodes as speaker `id`, trimmed
    /// back to the input length.
    pub fn reconstruct(&self, id: &str, mel: &MelSpectrogram) -> Result<MelSpectrogram> {
        let code = self.encode(mel)?;
        let out = self.decode(id, &code)?;
        let t = mel.frames();
        MelSpectrogram::from_matrix(out.slice(s![.., ..t]).to_owned(), HOP)
    }

    /// SHA-256 over the encoder weights.
    pub fn encoder_digest(&self) -> String {
        self.encoder.params.digest()
    }

    /// SHA-256 over one decoder's weights and running statistics.
    pub fn decoder_digest(&self, id: &str) -> Result<String> {
        let d = self.decoder(id)?;
        let mut h = Sha256::new();
        h.update(d.params.digest());
        h.update(d.buffers.digest());
        Ok(format!("{:x}", h.finalize()))
    }

    /// SHA-256 over every array in the model.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.encoder_digest());
        for id in self.decoders.keys() {
            h.update(id.as_bytes());
            h.update(self.decoder_digest(id).expect("own key"));
        }
        format!("{:x}", h.finalize())
    }

    pub fn is_frozen(&self, id: &str) -> bool {
        self.frozen.get(id).copied().unwrap_or(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pad_replicates_edge() {
        let m = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let p = pad_frames(&m, 4);
        assert_eq!(p, array![[1.0, 2.0, 3.0, 3.0], [4.0, 5.0, 6.0, 6.0]]);
        assert_eq!(pad_frames(&p, 4), p);
        assert_eq!(pad_frames(&m, 1), m);
    }
}
