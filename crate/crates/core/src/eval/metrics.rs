use std::collections::BTreeMap;

use ndarray::{s, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::probe::{train_speaker_probe, ProbeClassifier, Sample};
use crate::error::{Error, Result};
use crate::frontend::{MelFilterbank, HOP};
use crate::net::{ContentCode, EncoderParams, Mat};
use crate::synth::{canonical_formants, ContentFactor};
use crate::training::{pad_frames, MelCorpus, MultiHeadModel};

/// What the evaluation needs from a trained system.
pub trait VoiceModel {
    /// Speakers with a decoder.
    fn targets(&self) -> Vec<String>;
    /// Number of content encoders whose codes are probed (one for a
    /// shared-encoder model, one per speaker for a bank).
    fn encoder_count(&self) -> usize;
    /// Code of `mel` under content encoder `k`.
    fn encode(&self, k: usize, mel: &Mat) -> Result<ContentCode>;
    /// Inference-mode decoding by `target`'s decoder (untrimmed).
    fn decode(&self, target: &str, code: &ContentCode) -> Result<Mat>;
    /// Any-to-one conversion of a mel to `target`, trimmed to the input length.
    fn convert(&self, mel: &Mat, target: &str) -> Result<Mat>;
    fn digest(&self) -> String;
}

fn encode_with(enc: &EncoderParams, mel: &Mat) -> Result<ContentCode> {
    let padded = pad_frames(mel, enc.config.code_stride);
    Ok(enc.forward_batch(&[&padded])?.remove(0))
}

fn trim(m: Mat, frames: usize) -> Mat {
    m.slice(s![.., ..frames.min(m.ncols())]).to_owned()
}

impl VoiceModel for MultiHeadModel {
    fn targets(&self) -> Vec<String> {
        self.speaker_ids()
    }

    fn encoder_count(&self) -> usize {
        1
    }

    fn encode(&self, _k: usize, mel: &Mat) -> Result<ContentCode> {
        encode_with(&self.encoder, mel)
    }

    fn decode(&self, target: &str, code: &ContentCode) -> Result<Mat> {
        MultiHeadModel::decode(self, target, code)
    }

    fn convert(&self, mel: &Mat, target: &str) -> Result<Mat> {
        let code = encode_with(&self.encoder, mel)?;
        Ok(trim(MultiHeadModel::decode(self, target, &code)?, mel.ncols()))
    }

    fn digest(&self) -> String {
        MultiHeadModel::digest(self)
    }
}

/// Independent single-speaker autoencoders; conversion to a target runs the
/// target's own encoder and decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EaeBank {
    pub models: BTreeMap<String, MultiHeadModel>,
}

impl EaeBank {
    pub fn new(models: BTreeMap<String, MultiHeadModel>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::InvalidArgument("empty autoencoder bank".into()));
        }
        for (id, m) in &models {
            if m.decoders.len() != 1 || !m.decoders.contains_key(id) {
                return Err(Error::InvalidArgument(format!(
                    "bank entry {id:?} must hold exactly its own decoder"
                )));
            }
        }
        Ok(Self { models })
    }

    fn entry(&self, id: &str) -> Result<&MultiHeadModel> {
        self.models.get(id).ok_or_else(|| Error::UnknownSpeaker(id.to_string()))
    }
}

impl VoiceModel for EaeBank {
    fn targets(&self) -> Vec<String> {
        self.models.keys().cloned().collect()
    }

    fn encoder_count(&self) -> usize {
        self.models.len()
    }

    fn encode(&self, k: usize, mel: &Mat) -> Result<ContentCode> {
        let m =
            self.models.values().nth(k).ok_or_else(|| Error::InvalidArgument(format!("no encoder {k}")))?;
        encode_with(&m.encoder, mel)
    }

    fn decode(&self, target: &str, code: &ContentCode) -> Result<Mat> {
        self.entry(target)?.decode(target, code)
    }

    fn convert(&self, mel: &Mat, target: &str) -> Result<Mat> {
        VoiceModel::convert(self.entry(target)?, mel, target)
    }

    fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (id, m) in &self.models {
            h.update(id.as_bytes());
            h.update(m.digest());
        }
        format!("{:x}", h.finalize())
    }
}

/// Time-averaged codes of every utterance, one sample set per content encoder.
pub fn code_features(model: &dyn VoiceModel, corpus: &MelCorpus) -> Result<Vec<Vec<Sample>>> {
    (0..model.encoder_count())
        .map(|k| {
            let mut out = Vec::new();
            for id in corpus.speaker_ids() {
                for m in corpus.utterances(&id)? {
                    out.push((model.encode(k, m)?.time_average(), id.clone()));
                }
            }
            Ok(out)
        })
        .collect()
}

fn require_contrast(corpus: &MelCorpus) -> Result<()> {
    if corpus.speaker_ids().len() < 2 {
        return Err(Error::InvalidArgument("speaker probing needs at least 2 speakers".into()));
    }
    Ok(())
}

/// Held-out accuracy of a speaker probe on time-averaged content codes,
/// averaged over the model's content encoders. Lower is better.
pub fn probe_leakage(model: &dyn VoiceModel, corpus: &MelCorpus, seed: u64) -> Result<f64> {
    require_contrast(corpus)?;
    let sets = code_features(model, corpus)?;
    let mut total = 0.0;
    for set in &sets {
        total += train_speaker_probe(set, seed)?.held_out_accuracy();
    }
    Ok(total / sets.len() as f64)
}

/// Per-bin mean and variance over frames (`2 * rows` values).
pub fn mel_statistics(mel: &Mat) -> Vec<f64> {
    let mean = mel.mean_axis(Axis(1)).expect("at least one frame");
    let var = mel.var_axis(Axis(1), 0.0);
    mean.iter().chain(var.iter()).copied().collect()
}

/// A speaker classifier on mel statistics of real utterances.
pub fn train_mel_classifier(reference: &MelCorpus, seed: u64) -> Result<ProbeClassifier> {
    require_contrast(reference)?;
    let mut samples = Vec::new();
    for id in reference.speaker_ids() {
        for m in reference.utterances(&id)? {
            samples.push((mel_statistics(m), id.clone()));
        }
    }
    train_speaker_probe(&samples, seed)
}

/// Fraction of conversions the mel classifier assigns to their intended target.
pub fn sca_proxy(conversions: &[(Mat, String)], classifier: &ProbeClassifier) -> Result<f64> {
    let samples: Vec<Sample> = conversions.iter().map(|(m, t)| (mel_statistics(m), t.clone())).collect();
    classifier.accuracy(&samples)
}

/// Converts every utterance of every source speaker to every other target.
pub fn cross_conversions(
    model: &dyn VoiceModel,
    sources: &MelCorpus,
    targets: &[String],
) -> Result<Vec<(Mat, String)>> {
    let mut out = Vec::new();
    for src in sources.speaker_ids() {
        for m in sources.utterances(&src)? {
            for t in targets.iter().filter(|t| **t != src) {
                out.push((model.convert(m, t)?, t.clone()));
            }
        }
    }
    Ok(out)
}

/// Mean relative distance `|z_hat - z|^2 / |z|^2` between a code and the code
/// of its cross-decoded reconstruction, over `pairs` random (utterance,
/// source i, decoder j != i) draws and every content encoder.
pub fn cycle_residual(model: &dyn VoiceModel, corpus: &MelCorpus, pairs: usize, seed: u64) -> Result<f64> {
    let targets = model.targets();
    let sources: Vec<String> = corpus.speaker_ids().into_iter().filter(|s| targets.contains(s)).collect();
    if targets.len() < 2 || sources.is_empty() || pairs == 0 {
        return Err(Error::InvalidArgument(
            "cycle residual needs 2 decoders and a source speaker among them".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let i = &sources[rng.gen_range(0..sources.len())];
        let utts = corpus.utterances(i)?;
        let u = rng.gen_range(0..utts.len());
        let others: Vec<&String> = targets.iter().filter(|t| *t != i).collect();
        let j = others[rng.gen_range(0..others.len())];
        draws.push((i.clone(), u, j.clone()));
    }
    let mut total = 0.0;
    for k in 0..model.encoder_count() {
        for (i, u, j) in &draws {
            let m = &corpus.utterances(i)?[*u];
            total += pair_residual(model, k, m, j)?;
        }
    }
    Ok(total / (model.encoder_count() * draws.len()) as f64)
}

/// `|z_hat - z|^2 / |z|^2` for one mel cross-decoded by `target` under
/// content encoder `k`.
pub fn pair_residual(model: &dyn VoiceModel, k: usize, mel: &Mat, target: &str) -> Result<f64> {
    let z = model.encode(k, mel)?;
    let cross = model.decode(target, &z)?;
    let z_hat = model.encode(k, &cross)?;
    if z_hat.values().dim() != z.values().dim() {
        return Err(Error::Shape("re-encoded code differs in shape".into()));
    }
    let num: f64 = (z_hat.values() - z.values()).mapv(|v| v * v).sum();
    let den: f64 = z.values().mapv(|v| v * v).sum();
    Ok(num / den.max(f64::MIN_POSITIVE))
}

/// Mean matched-reconstruction error per speaker, averaged over speakers.
pub fn recon_mse(model: &dyn VoiceModel, corpus: &MelCorpus) -> Result<f64> {
    let mut per_speaker = Vec::new();
    for id in corpus.speaker_ids() {
        let mut s = 0.0;
        let utts = corpus.utterances(&id)?;
        for m in utts {
            let y = model.convert(m, &id)?;
            s += (&y - m).mapv(|v| v * v).mean().unwrap_or(0.0);
        }
        per_speaker.push(s / utts.len() as f64);
    }
    Ok(per_speaker.iter().sum::<f64>() / per_speaker.len().max(1) as f64)
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    if n < 2 {
        return None;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for (x, y) in a[..n].iter().zip(&b[..n]) {
        num += (x - ma) * (y - mb);
        da += (x - ma) * (x - ma);
        db += (y - mb) * (y - mb);
    }
    (da > 0.0 && db > 0.0).then(|| num / (da * db).sqrt())
}

/// Band searched for the second formant.
pub const F2_BAND_HZ: (f64, f64) = (900.0, 3000.0);

/// Per-frame power centroid of the mel bins whose centres fall in [`F2_BAND_HZ`].
pub fn f2_track(mel: &Mat, filterbank: &MelFilterbank) -> Vec<f64> {
    let bins: Vec<usize> = filterbank
        .centers()
        .iter()
        .enumerate()
        .filter(|(_, &c)| (F2_BAND_HZ.0..=F2_BAND_HZ.1).contains(&c))
        .map(|(k, _)| k)
        .collect();
    let centers = filterbank.centers();
    (0..mel.ncols())
        .map(|t| {
            let (mut num, mut den) = (0.0, 0.0);
            for &k in &bins {
                let p = mel[[k, t]].exp();
                num += p * centers[k];
                den += p;
            }
            num / den.max(f64::MIN_POSITIVE)
        })
        .collect()
}

/// Canonical F2 of the unit under each frame.
pub fn true_f2_track(content: &ContentFactor, frames: usize) -> Vec<f64> {
    content.frame_units(frames, HOP).into_iter().map(|u| canonical_formants(u)[1]).collect()
}

/// Mean correlation between the F2 track of each converted utterance and the
/// ground-truth F2 of its content, over every (utterance, other target).
pub fn content_correlation(
    model: &dyn VoiceModel,
    sources: &MelCorpus,
    targets: &[String],
    filterbank: &MelFilterbank,
) -> Result<f64> {
    let mut rs = Vec::new();
    for src in sources.speaker_ids() {
        for (idx, m) in sources.utterances(&src)?.iter().enumerate() {
            let content = sources.content(&src, idx).ok_or_else(|| {
                Error::InvalidArgument("content correlation needs ground-truth content".into())
            })?;
            let truth = true_f2_track(content, m.ncols());
            for t in targets.iter().filter(|t| **t != src) {
                let y = model.convert(m, t)?;
                if let Some(r) = pearson(&f2_track(&y, filterbank), &truth) {
                    rs.push(r);
                }
            }
        }
    }
    if rs.is_empty() {
        return Err(Error::InvalidArgument("no utterance with a varying F2 track".into()));
    }
    Ok(rs.iter().sum::<f64>() / rs.len() as f64)
}

/// Desk-scale evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub probe_leakage: f64,
    pub sca_proxy: f64,
    pub recon_mse: f64,
    pub cycle_residual: f64,
    pub chance_level: f64,
    pub seeds: Vec<u64>,
    pub model_hash: String,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.probe_leakage) || !unit(self.sca_proxy) || !unit(self.chance_level) {
            return Err(Error::InvalidArgument("accuracies must lie in [0, 1]".into()));
        }
        if !(self.recon_mse >= 0.0 && self.recon_mse.is_finite())
            || !(self.cycle_residual >= 0.0 && self.cycle_residual.is_finite())
        {
            return Err(Error::NonFinite("report errors".into()));
        }
        Ok(())
    }
}

/// Settings for [`full_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub seed: u64,
    /// Random draws for the cycle residual.
    pub residual_pairs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { seed: 0, residual_pairs: 40 }
    }
}

/// Leakage and reconstruction on `corpus`, conversions between its speakers
/// scored by a classifier trained on `reference`.
pub fn full_report(
    model: &dyn VoiceModel,
    corpus: &MelCorpus,
    reference: &MelCorpus,
    config: &EvalConfig,
) -> Result<EvalReport> {
    let targets = model.targets();
    let probe_leakage = probe_leakage(model, corpus, config.seed)?;
    let classifier = train_mel_classifier(reference, config.seed)?;
    let conversions = cross_conversions(model, corpus, &targets)?;
    let report = EvalReport {
        probe_leakage,
        sca_proxy: sca_proxy(&conversions, &classifier)?,
        recon_mse: recon_mse(model, &corpus.subset(&own_speakers(corpus, &targets))?)?,
        cycle_residual: cycle_residual(model, corpus, config.residual_pairs, config.seed)?,
        chance_level: 1.0 / corpus.speaker_ids().len() as f64,
        seeds: vec![config.seed],
        model_hash: model.digest(),
    };
    report.validate()?;
    Ok(report)
}

fn own_speakers<'a>(corpus: &MelCorpus, targets: &'a [String]) -> Vec<&'a str> {
    let ids = corpus.speaker_ids();
    targets.iter().filter(|t| ids.contains(t)).map(|t| t.as_str()).collect()
}
