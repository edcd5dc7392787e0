//! Desk-scale probes of disentanglement, conversion identity, and cycle
//! consistency.

mod metrics;
mod probe;
mod stub;

pub use metrics::{
    code_features, content_correlation, cross_conversions, cycle_residual, f2_track, full_report,
    mel_statistics, pair_residual, pearson, probe_leakage, recon_mse, sca_proxy, train_mel_classifier,
    true_f2_track, EaeBank, EvalConfig, EvalReport, VoiceModel, F2_BAND_HZ,
};
pub use probe::{
    train_speaker_probe, ProbeClassifier, Sample, MIN_PER_CLASS, PROBE_HIDDEN, PROBE_LEARNING_RATE,
    PROBE_STEPS,
};
pub use stub::InverseStub;
