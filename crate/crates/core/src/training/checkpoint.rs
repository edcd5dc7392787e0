use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::config::{TrainConfig, Variant};
use super::model::MultiHeadModel;
use super::stages::{Session, Stage, Trainable};
use crate::error::{Error, Result};
use crate::net::{DecoderConfig, DecoderParams, EncoderConfig, EncoderParams, Mat, ParamSet};

pub const MAGIC: &[u8; 4] = b"CEAE";
pub const FORMAT_VERSION: u32 = 1;

/// A training session plus the run configuration that produced it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub session: Session,
    pub run_config: Option<serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    stage: Stage,
    variant: Variant,
    step: u64,
    rejected_steps: u64,
    config: TrainConfig,
    trainable: Trainable,
    encoder: EncoderConfig,
    decoders: BTreeMap<String, DecoderConfig>,
    encoder_frozen: bool,
    frozen: BTreeMap<String, bool>,
    rng: ChaCha8Rng,
    adam_t: u64,
    run_config: Option<serde_json::Value>,
    arrays: Vec<ArrayEntry>,
}

fn collect<'a>(out: &mut Vec<(String, &'a Mat)>, prefix: &str, p: &'a ParamSet) {
    for (k, v) in p.iter() {
        out.push((format!("{prefix}{k}"), v));
    }
}

/// Serializes a checkpoint to bytes.
pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let s = &ck.session;
    let mut arrays = Vec::new();
    collect(&mut arrays, "enc/", &s.model.encoder.params);
    for (id, d) in &s.model.decoders {
        collect(&mut arrays, &format!("dec/{id}/"), &d.params);
        collect(&mut arrays, &format!("buf/{id}/"), &d.buffers);
    }
    collect(&mut arrays, "adam.m/", &s.optimizer.m);
    collect(&mut arrays, "adam.v/", &s.optimizer.v);
    let header = Header {
        stage: s.stage,
        variant: s.variant,
        step: s.step,
        rejected_steps: s.rejected_steps,
        config: s.config.clone(),
        trainable: s.trainable.clone(),
        encoder: s.model.encoder.config.clone(),
        decoders: s.model.decoders.iter().map(|(k, d)| (k.clone(), d.config.clone())).collect(),
        encoder_frozen: s.model.encoder_frozen,
        frozen: s.model.frozen.clone(),
        rng: s.rng.clone(),
        adam_t: s.optimizer.t,
        run_config: ck.run_config.clone(),
        arrays: arrays
            .iter()
            .map(|(name, a)| ArrayEntry { name: name.clone(), rows: a.nrows(), cols: a.ncols() })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut payload =
        Vec::with_capacity(8 + json.len() + arrays.iter().map(|(_, a)| a.len() * 8).sum::<usize>());
    payload.extend_from_slice(&(json.len() as u64).to_le_bytes());
    payload.extend_from_slice(&json);
    for (_, a) in &arrays {
        for v in a.iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(12 + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = at
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
    let s = &bytes[*at..end];
    *at = end;
    Ok(s)
}

/// Parses bytes written by [`encode_checkpoint`].
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let stored = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    let payload = &bytes[12..];
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut at = 0;
    let len = u64::from_le_bytes(take(payload, &mut at, 8)?.try_into().expect("8 bytes"));
    let header: Header = serde_json::from_slice(take(payload, &mut at, len as usize)?)?;
    let mut arrays = BTreeMap::new();
    for e in &header.arrays {
        let n = e.rows * e.cols;
        let raw = take(payload, &mut at, n * 8)?;
        let values: Vec<f64> =
            raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let m = Mat::from_shape_vec((e.rows, e.cols), values)
            .map_err(|err| Error::Checkpoint(err.to_string()))?;
        arrays.insert(e.name.clone(), m);
    }
    if at != payload.len() {
        return Err(Error::Checkpoint("trailing bytes after the last array".into()));
    }
    let group = |prefix: &str| -> ParamSet {
        let mut p = ParamSet::new();
        for (k, v) in &arrays {
            if let Some(rest) = k.strip_prefix(prefix) {
                p.insert(rest, v.clone());
            }
        }
        p
    };
    let encoder = EncoderParams { config: header.encoder.clone(), params: group("enc/") };
    let mut decoders = BTreeMap::new();
    for (id, cfg) in &header.decoders {
        decoders.insert(
            id.clone(),
            DecoderParams {
                config: cfg.clone(),
                params: group(&format!("dec/{id}/")),
                buffers: group(&format!("buf/{id}/")),
            },
        );
    }
    // shapes must match what the configs would build
    let probe_enc = EncoderParams::init(&encoder.config, 0)?;
    if !probe_enc.params.same_layout(&encoder.params) {
        return Err(Error::Checkpoint("encoder arrays do not match its config".into()));
    }
    for (id, d) in &decoders {
        let probe = DecoderParams::init(&d.config, 0)?;
        if !probe.params.same_layout(&d.params) || !probe.buffers.same_layout(&d.buffers) {
            return Err(Error::Checkpoint(format!("decoder {id:?} arrays do not match its config")));
        }
    }
    let mut model = MultiHeadModel::new(encoder, decoders)?;
    model.encoder_frozen = header.encoder_frozen;
    model.frozen = header.frozen;
    let session = Session {
        stage: header.stage,
        variant: header.variant,
        config: header.config,
        model,
        trainable: header.trainable,
        optimizer: AdamState { t: header.adam_t, m: group("adam.m/"), v: group("adam.v/") },
        rng: header.rng,
        step: header.step,
        rejected_steps: header.rejected_steps,
    };
    if !session.trainable_params().same_layout(&session.optimizer.m) {
        return Err(Error::Checkpoint("optimizer state does not match the trainable arrays".into()));
    }
    Ok(Checkpoint { session, run_config: header.run_config })
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(ck)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
