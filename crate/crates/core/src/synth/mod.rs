//! A parametric stand-in for real multi-speaker speech.
//!
//! Every utterance is rendered as `x = f(s, w)`: a glottal source whose pitch is
//! set by the speaker, shaped by formant resonators whose frequencies come from
//! the content units and are scaled by the speaker. Because both factors are
//! known exactly, disentanglement can be measured against ground truth.

mod corpus;
mod factors;
mod generator;

pub use corpus::{
    content_domination_ratio, desk_speakers, domination_report, load_corpus, make_corpus, read_manifest,
    render_corpus, sample_content, unseen_speakers, write_manifest, Corpus, CorpusManifest, CorpusSpec,
    DominationReport, ManifestEntry, Utterance, MANIFEST_FILE, SPEAKERS_FILE,
};
pub use factors::{
    canonical_formants, ContentFactor, ContentUnit, SpeakerFactor, MAX_UNIT_MS, MIN_UNIT_MS, NUM_UNITS,
};
pub use generator::{generate_utterance, CROSSFADE};
