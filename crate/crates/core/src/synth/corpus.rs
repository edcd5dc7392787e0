use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::s;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::factors::{ContentFactor, ContentUnit, SpeakerFactor, MAX_UNIT_MS, MIN_UNIT_MS, NUM_UNITS};
use super::generator::generate_utterance;
use crate::error::{Error, Result};
use crate::frontend::{load_wav, mel_distance, write_wav, AudioClip, MelFrontend, MelSpectrogram};
use crate::seeds::{self, mix_seed};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const SPEAKERS_FILE: &str = "speakers.json";

/// What to render: speakers, counts, seed, and the utterance length range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub speakers: Vec<SpeakerFactor>,
    pub utts_per_speaker: usize,
    pub base_seed: u64,
    pub min_utt_ms: u32,
    pub max_utt_ms: u32,
}

impl CorpusSpec {
    pub fn new(speakers: Vec<SpeakerFactor>, utts_per_speaker: usize, base_seed: u64) -> Self {
        Self { speakers, utts_per_speaker, base_seed, min_utt_ms: 1_600, max_utt_ms: 2_200 }
    }

    fn validate(&self) -> Result<()> {
        if self.speakers.is_empty() {
            return Err(Error::InvalidArgument("corpus needs at least one speaker".into()));
        }
        let mut ids = std::collections::BTreeSet::new();
        for s in &self.speakers {
            s.validate()?;
            if !ids.insert(s.speaker_id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate speaker id {:?}", s.speaker_id)));
            }
        }
        if self.min_utt_ms > self.max_utt_ms || self.min_utt_ms < MIN_UNIT_MS {
            return Err(Error::InvalidArgument("invalid utterance length range".into()));
        }
        Ok(())
    }
}

/// Two low-pitched and two high-pitched speakers; `spk_a`/`spk_b` form the
/// cross-register pair used by the two-speaker experiments.
pub fn desk_speakers() -> Vec<SpeakerFactor> {
    vec![
        SpeakerFactor::new("spk_a", 105.0, 0.94, -2.0).unwrap(),
        SpeakerFactor::new("spk_b", 220.0, 1.08, -4.5).unwrap(),
        SpeakerFactor::new("spk_c", 125.0, 0.97, -3.0).unwrap(),
        SpeakerFactor::new("spk_d", 200.0, 1.05, -5.0).unwrap(),
    ]
}

/// Speakers never used for encoder training.
pub fn unseen_speakers() -> Vec<SpeakerFactor> {
    vec![
        SpeakerFactor::new("spk_e", 115.0, 0.96, -1.5).unwrap(),
        SpeakerFactor::new("spk_f", 235.0, 1.10, -5.5).unwrap(),
    ]
}

/// Draws units uniformly until the total duration reaches at least `min_total_ms`.
pub fn sample_content<R: Rng>(rng: &mut R, min_total_ms: u32) -> ContentFactor {
    let mut units = Vec::new();
    let mut total = 0;
    while total < min_total_ms {
        let unit = ContentUnit {
            unit_id: rng.gen_range(0..NUM_UNITS as u8),
            duration_ms: rng.gen_range(MIN_UNIT_MS..=MAX_UNIT_MS),
        };
        total += unit.duration_ms;
        units.push(unit);
    }
    ContentFactor { units }
}

fn content_for_seed(seed: u64, min_ms: u32, max_ms: u32) -> ContentFactor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC047E7);
    let target = rng.gen_range(min_ms..=max_ms);
    sample_content(&mut rng, target)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub speaker_id: String,
    pub index: usize,
    pub content: ContentFactor,
    pub seed: u64,
    pub clip: AudioClip,
}

/// A rendered corpus held in memory, ordered by speaker id then utterance index.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub speakers: Vec<SpeakerFactor>,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn speaker(&self, id: &str) -> Option<&SpeakerFactor> {
        self.speakers.iter().find(|s| s.speaker_id == id)
    }

    pub fn speaker_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.speakers.iter().map(|s| s.speaker_id.clone()).collect();
        ids.sort();
        ids
    }

    pub fn utterances_of<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Utterance> + 'a {
        self.utterances.iter().filter(move |u| u.speaker_id == id)
    }

    /// Keeps only the listed speakers.
    pub fn subset(&self, ids: &[&str]) -> Corpus {
        Corpus {
            speakers: self
                .speakers
                .iter()
                .filter(|s| ids.contains(&s.speaker_id.as_str()))
                .cloned()
                .collect(),
            utterances: self
                .utterances
                .iter()
                .filter(|u| ids.contains(&u.speaker_id.as_str()))
                .cloned()
                .collect(),
        }
    }

    pub fn manifest(&self) -> CorpusManifest {
        CorpusManifest {
            entries: self
                .utterances
                .iter()
                .map(|u| ManifestEntry {
                    path: utterance_path(&u.speaker_id, u.index),
                    speaker_id: u.speaker_id.clone(),
                    content: u.content.clone(),
                    seed: u.seed,
                })
                .collect(),
        }
    }
}

fn utterance_path(speaker_id: &str, index: usize) -> PathBuf {
    PathBuf::from(speaker_id).join(format!("{speaker_id}_{index:04}.wav"))
}

/// Renders every utterance of `spec` in memory.
pub fn render_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut speakers = spec.speakers.clone();
    speakers.sort_by(|a, b| a.speaker_id.cmp(&b.speaker_id));
    let mut utterances = Vec::with_capacity(speakers.len() * spec.utts_per_speaker);
    for s in &speakers {
        // keyed by id so adding speakers never changes another speaker's data
        let key = seeds::key(&s.speaker_id);
        for index in 0..spec.utts_per_speaker {
            let seed = mix_seed(spec.base_seed, key, index as u64);
            let content = content_for_seed(seed, spec.min_utt_ms, spec.max_utt_ms);
            let clip = generate_utterance(s, &content, seed)?;
            utterances.push(Utterance { speaker_id: s.speaker_id.clone(), index, content, seed, clip });
        }
    }
    Ok(Corpus { speakers, utterances })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub speaker_id: String,
    pub content: ContentFactor,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// `path \t speaker_id \t content_json \t seed`, one line per utterance.
pub fn write_manifest(path: impl AsRef<Path>, manifest: &CorpusManifest) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in &manifest.entries {
        let content = serde_json::to_string(&e.content)?;
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            e.path.to_string_lossy().replace('\\', "/"),
            e.speaker_id,
            content,
            e.seed
        )
        .map_err(|err| Error::io(path, err))?;
    }
    w.flush().map_err(|err| Error::io(path, err))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "{}:{}: expected 4 tab-separated fields, got {}",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let content: ContentFactor = serde_json::from_str(fields[2])?;
        content.validate()?;
        let seed = fields[3]
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("{}:{}: bad seed", path.display(), lineno + 1)))?;
        entries.push(ManifestEntry {
            path: PathBuf::from(fields[0]),
            speaker_id: fields[1].to_string(),
            content,
            seed,
        });
    }
    Ok(CorpusManifest { entries })
}

/// Renders the corpus and writes audio, `manifest.tsv` and `speakers.json` under `out_dir`.
pub fn make_corpus(spec: &CorpusSpec, out_dir: impl AsRef<Path>) -> Result<(Corpus, CorpusManifest)> {
    let out_dir = out_dir.as_ref();
    let corpus = render_corpus(spec)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for s in &corpus.speakers {
        let dir = out_dir.join(&s.speaker_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for u in &corpus.utterances {
        write_wav(out_dir.join(utterance_path(&u.speaker_id, u.index)), &u.clip)?;
    }
    let manifest = corpus.manifest();
    write_manifest(out_dir.join(MANIFEST_FILE), &manifest)?;
    let speakers_path = out_dir.join(SPEAKERS_FILE);
    let json = serde_json::to_string_pretty(&corpus.speakers)?;
    fs::write(&speakers_path, json).map_err(|e| Error::io(&speakers_path, e))?;
    Ok((corpus, manifest))
}

/// Loads a corpus written by [`make_corpus`], reading audio from disk.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir.join(MANIFEST_FILE))?;
    let speakers_path = dir.join(SPEAKERS_FILE);
    let text = fs::read_to_string(&speakers_path).map_err(|e| Error::io(&speakers_path, e))?;
    let speakers: Vec<SpeakerFactor> = serde_json::from_str(&text)?;
    let mut counters: BTreeMap<String, usize> = BTreeMap::new();
    let mut utterances = Vec::with_capacity(manifest.len());
    for e in manifest.entries {
        let clip = load_wav(dir.join(&e.path))?;
        let index = counters.entry(e.speaker_id.clone()).or_default();
        utterances.push(Utterance {
            speaker_id: e.speaker_id,
            index: *index,
            content: e.content,
            seed: e.seed,
            clip,
        });
        *index += 1;
    }
    Ok(Corpus { speakers, utterances })
}

/// Mean mel distances behind the content-domination check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominationReport {
    pub same_word_cross_speaker: f64,
    pub cross_word_same_speaker: f64,
    pub ratio: f64,
}

fn truncated_distance(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<f64> {
    let t = a.frames().min(b.frames());
    let cut =
        |m: &MelSpectrogram| MelSpectrogram::from_matrix(m.values().slice(s![.., ..t]).to_owned(), m.hop());
    mel_distance(&cut(a)?, &cut(b)?)
}

/// Evaluates explicit probes `(s1, s2, w0, w, seed)`: the mean distance between
/// `f(s1, w0)` and `f(s2, w0)`, the mean distance between `f(s1, w0)` and
/// `f(s2, w)`, and their ratio. Mel frames are compared over the common prefix.
pub fn domination_report(
    probes: &[(&SpeakerFactor, &SpeakerFactor, &ContentFactor, &ContentFactor, u64)],
    frontend: &MelFrontend,
) -> Result<DominationReport> {
    if probes.is_empty() {
        return Err(Error::InvalidArgument("no probes".into()));
    }
    let (mut same_word, mut cross_word) = (0.0, 0.0);
    for &(s1, s2, w0, w, seed) in probes {
        let a = frontend.analyze(&generate_utterance(s1, w0, seed)?)?;
        let b = frontend.analyze(&generate_utterance(s2, w0, seed)?)?;
        let c = frontend.analyze(&generate_utterance(s2, w, seed)?)?;
        same_word += truncated_distance(&a, &b)?;
        cross_word += truncated_distance(&a, &c)?;
    }
    let n = probes.len() as f64;
    let (same_word, cross_word) = (same_word / n, cross_word / n);
    Ok(DominationReport {
        same_word_cross_speaker: same_word,
        cross_word_same_speaker: cross_word,
        ratio: if cross_word > 0.0 { same_word / cross_word } else { 1.0 },
    })
}

/// Samples `probe_pairs` probes from the corpus: two distinct speakers and two
/// distinct utterance contents each time.
pub fn content_domination_ratio(corpus: &Corpus, probe_pairs: usize, seed: u64) -> Result<DominationReport> {
    if corpus.speakers.len() < 2 {
        return Err(Error::InvalidArgument("content domination needs at least two speakers".into()));
    }
    if corpus.utterances.len() < 2 {
        return Err(Error::InvalidArgument("corpus has fewer than two utterances".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_spk = corpus.speakers.len();
    let n_utt = corpus.utterances.len();
    let mut draws = Vec::with_capacity(probe_pairs);
    for _ in 0..probe_pairs {
        let i = rng.gen_range(0..n_spk);
        let j = (i + rng.gen_range(1..n_spk)) % n_spk;
        let a = rng.gen_range(0..n_utt);
        let b = (a + rng.gen_range(1..n_utt)) % n_utt;
        draws.push((i, j, a, b, rng.gen::<u64>()));
    }
    let probes: Vec<_> = draws
        .iter()
        .map(|&(i, j, a, b, s)| {
            (
                &corpus.speakers[i],
                &corpus.speakers[j],
                &corpus.utterances[a].content,
                &corpus.utterances[b].content,
                s,
            )
        })
        .collect();
    domination_report(&probes, &MelFrontend::default())
}
