use std::collections::BTreeMap;

use ndarray::s;
use rand::Rng;

use crate::error::{Error, Result};
use crate::frontend::MelFrontend;
use crate::net::Mat;
use crate::synth::{ContentFactor, Corpus};

/// Full-utterance log-mels grouped by speaker, with the content ground truth
/// when the mels came from a synthetic corpus.
#[derive(Debug, Clone, Default)]
pub struct MelCorpus {
    speakers: BTreeMap<String, Vec<Mat>>,
    contents: BTreeMap<String, Vec<ContentFactor>>,
}

impl MelCorpus {
    pub fn from_mels(speakers: BTreeMap<String, Vec<Mat>>) -> Result<Self> {
        for (id, mels) in &speakers {
            if mels.is_empty() {
                return Err(Error::InvalidArgument(format!("speaker {id:?} has no utterances")));
            }
        }
        Ok(Self { speakers, contents: BTreeMap::new() })
    }

    /// Analyzes every utterance of `corpus`.
    pub fn from_corpus(corpus: &Corpus, frontend: &MelFrontend) -> Result<Self> {
        let mut speakers: BTreeMap<String, Vec<Mat>> = BTreeMap::new();
        let mut contents: BTreeMap<String, Vec<ContentFactor>> = BTreeMap::new();
        for u in &corpus.utterances {
            let mel = frontend.analyze(&u.clip)?;
            speakers.entry(u.speaker_id.clone()).or_default().push(mel.into_values());
            contents.entry(u.speaker_id.clone()).or_default().push(u.content.clone());
        }
        let mut out = Self::from_mels(speakers)?;
        out.contents = contents;
        Ok(out)
    }

    pub fn speaker_ids(&self) -> Vec<String> {
        self.speakers.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.speakers.values().map(|v| v.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    pub fn utterances(&self, id: &str) -> Result<&[Mat]> {
        self.speakers.get(id).map(|v| v.as_slice()).ok_or_else(|| Error::UnknownSpeaker(id.to_string()))
    }

    /// Ground-truth content of utterance `index` of `id`, if known.
    pub fn content(&self, id: &str, index: usize) -> Option<&ContentFactor> {
        self.contents.get(id).and_then(|c| c.get(index))
    }

    /// Keeps only the listed speakers.
    pub fn subset(&self, ids: &[&str]) -> Result<Self> {
        let mut out = Self::default();
        for id in ids {
            out.speakers.insert(id.to_string(), self.utterances(id)?.to_vec());
            if let Some(c) = self.contents.get(*id) {
                out.contents.insert(id.to_string(), c.clone());
            }
        }
        Ok(out)
    }

    /// The first `n` utterances of every speaker.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            speakers: self
                .speakers
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().take(n).cloned().collect()))
                .collect(),
            contents: self
                .contents
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().take(n).cloned().collect()))
                .collect(),
        }
    }

    /// A random `frames`-long window from a random utterance of `id`.
    pub fn crop<R: Rng>(&self, rng: &mut R, id: &str, frames: usize) -> Result<Mat> {
        let utts = self.utterances(id)?;
        let u = &utts[rng.gen_range(0..utts.len())];
        if u.ncols() < frames {
            return Err(Error::Shape(format!(
                "utterance of {} frames is shorter than the {frames}-frame crop",
                u.ncols()
            )));
        }
        let start = rng.gen_range(0..=u.ncols() - frames);
        Ok(u.slice(s![.., start..start + frames]).to_owned())
    }
}
