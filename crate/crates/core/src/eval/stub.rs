use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::metrics::VoiceModel;
use crate::error::{Error, Result};
use crate::net::{ContentCode, Mat};

/// A hand-built linear model: the encoder is a per-frame matrix `A` and each
/// speaker's decoder is a per-frame matrix `B_i`. With `B_i = A^-1` every
/// decoder inverts the encoder exactly, which is the zero point of the cycle
/// loss.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseStub {
    encoder: Mat,
    decoders: BTreeMap<String, Mat>,
}

impl InverseStub {
    /// Encoder `a` with every listed speaker decoding through `a`'s inverse.
    pub fn new(a: Mat, speakers: &[&str]) -> Result<Self> {
        let inv = invert(&a)?;
        Ok(Self { encoder: a, decoders: speakers.iter().map(|s| (s.to_string(), inv.clone())).collect() })
    }

    /// Arbitrary decoder matrices (for non-optimal controls).
    pub fn with_decoders(a: Mat, decoders: BTreeMap<String, Mat>) -> Result<Self> {
        for (id, d) in &decoders {
            if d.dim() != (a.ncols(), a.nrows()) {
                return Err(Error::Shape(format!("decoder {id:?} does not fit the encoder")));
            }
        }
        Ok(Self { encoder: a, decoders })
    }

    fn decoder(&self, id: &str) -> Result<&Mat> {
        self.decoders.get(id).ok_or_else(|| Error::UnknownSpeaker(id.to_string()))
    }
}

/// Gauss-Jordan inverse with partial pivoting.
fn invert(a: &Mat) -> Result<Mat> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Shape("stub encoder must be square".into()));
    }
    let mut m = a.clone();
    let mut inv = Mat::eye(n);
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[[i, c]].abs().total_cmp(&m[[j, c]].abs())).expect("non-empty");
        if m[[p, c]].abs() < 1e-12 {
            return Err(Error::InvalidArgument("stub encoder is singular".into()));
        }
        for k in 0..n {
            m.swap([c, k], [p, k]);
            inv.swap([c, k], [p, k]);
        }
        let d = m[[c, c]];
        for k in 0..n {
            m[[c, k]] /= d;
            inv[[c, k]] /= d;
        }
        for r in (0..n).filter(|&r| r != c) {
            let f = m[[r, c]];
            if f != 0.0 {
                for k in 0..n {
                    m[[r, k]] -= f * m[[c, k]];
                    inv[[r, k]] -= f * inv[[c, k]];
                }
            }
        }
    }
    Ok(inv)
}

impl VoiceModel for InverseStub {
    fn targets(&self) -> Vec<String> {
        self.decoders.keys().cloned().collect()
    }

    fn encoder_count(&self) -> usize {
        1
    }

    fn encode(&self, _k: usize, mel: &Mat) -> Result<ContentCode> {
        if mel.nrows() != self.encoder.ncols() {
            return Err(Error::Shape("mel rows do not fit the stub encoder".into()));
        }
        ContentCode::new(self.encoder.dot(mel), 1)
    }

    fn decode(&self, target: &str, code: &ContentCode) -> Result<Mat> {
        Ok(self.decoder(target)?.dot(code.values()))
    }

    fn convert(&self, mel: &Mat, target: &str) -> Result<Mat> {
        let z = self.encode(0, mel)?;
        self.decode(target, &z)
    }

    fn digest(&self) -> String {
        let mut h = Sha256::new();
        for v in self.encoder.iter() {
            h.update(v.to_le_bytes());
        }
        for (id, d) in &self.decoders {
            h.update(id.as_bytes());
            for v in d.iter() {
                h.update(v.to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn inverse_round_trip() {
        let a = array![[2.0, 1.0, 0.0], [0.0, 1.0, 3.0], [1.0, 0.0, 1.0]];
        let inv = invert(&a).unwrap();
        let id = a.dot(&inv);
        for ((i, j), v) in id.indexed_iter() {
            assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
        assert!(invert(&array![[1.0, 2.0], [2.0, 4.0]]).is_err());
    }
}
