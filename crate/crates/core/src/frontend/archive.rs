//! Flat binary mel files: `"MEL0"`, u32 rows, u32 cols, u32 hop, then row-major f64 LE.

use std::path::Path;

use ndarray::Array2;

use super::mel::MelSpectrogram;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MEL0";
const HEADER_LEN: usize = 16;

pub fn encode_mel(mel: &MelSpectrogram) -> Vec<u8> {
    let v = mel.values();
    let mut out = Vec::with_capacity(HEADER_LEN + v.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(v.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(v.ncols() as u32).to_le_bytes());
    out.extend_from_slice(&(mel.hop() as u32).to_le_bytes());
    for x in v.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_mel(bytes: &[u8]) -> Result<MelSpectrogram> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Archive("missing MEL0 header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (rows, cols, hop) = (word(4), word(8), word(12));
    let expected = HEADER_LEN + rows * cols * 8;
    if bytes.len() != expected {
        return Err(Error::Archive(format!("payload is {} bytes, header implies {expected}", bytes.len())));
    }
    let data =
        bytes[HEADER_LEN..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let values = Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Archive(e.to_string()))?;
    MelSpectrogram::from_matrix(values, hop)
}

pub fn write_mel(path: impl AsRef<Path>, mel: &MelSpectrogram) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_mel(mel)).map_err(|e| Error::io(path, e))
}

pub fn read_mel(path: impl AsRef<Path>) -> Result<MelSpectrogram> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mel(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(cols in 1usize..20, seed in any::<u64>()) {
            let values = Array2::from_shape_fn((80, cols), |(r, c)| {
                ((seed.wrapping_mul(31).wrapping_add((r * 97 + c) as u64)) % 1000) as f64 / 7.0 - 60.0
            });
            let mel = MelSpectrogram::new(values, 200).unwrap();
            let back = decode_mel(&encode_mel(&mel)).unwrap();
            prop_assert_eq!(back, mel);
        }
    }

    #[test]
    fn header_layout() {
        let mel = MelSpectrogram::silence(3);
        let bytes = encode_mel(&mel);
        assert_eq!(&bytes[..4], b"MEL0");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 80);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 200);
        assert_eq!(bytes.len(), 16 + 80 * 3 * 8);
    }

    #[test]
    fn rejects_truncation() {
        let mut bytes = encode_mel(&MelSpectrogram::silence(3));
        bytes.pop();
        assert!(decode_mel(&bytes).is_err());
        assert!(decode_mel(b"MEL1xxxxxxxxxxxx").is_err());
    }
}
