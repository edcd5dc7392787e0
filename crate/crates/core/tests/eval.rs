use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cycle_eae::eval::{
    code_features, cycle_residual, full_report, pair_residual, probe_leakage, recon_mse, sca_proxy,
    train_mel_classifier, train_speaker_probe, EvalConfig, EvalReport, InverseStub, Sample,
};
use cycle_eae::frontend::MelFrontend;
use cycle_eae::net::{DecoderConfig, EncoderConfig, Mat};
use cycle_eae::synth::{desk_speakers, render_corpus, CorpusSpec};
use cycle_eae::training::{stage1_train, MelCorpus, Session, TrainConfig, Variant};

fn random_mels(rng: &mut ChaCha8Rng, n: usize, frames: usize) -> Vec<Mat> {
    (0..n).map(|_| Array2::from_shape_fn((80, frames), |_| rng.gen_range(-8.0..0.0))).collect()
}

fn random_corpus(ids: &[&str], n: usize, seed: u64) -> MelCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MelCorpus::from_mels(ids.iter().map(|id| (id.to_string(), random_mels(&mut rng, n, 24))).collect())
        .unwrap()
}

fn rendered(ids: &[&str], utts: usize, seed: u64) -> MelCorpus {
    let speakers = desk_speakers().into_iter().filter(|s| ids.contains(&s.speaker_id.as_str())).collect();
    let mut spec = CorpusSpec::new(speakers, utts, seed);
    spec.min_utt_ms = 600;
    spec.max_utt_ms = 900;
    MelCorpus::from_corpus(&render_corpus(&spec).unwrap(), &MelFrontend::default()).unwrap()
}

fn diagonal_dominant(seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((80, 80), |(i, j)| if i == j { 2.0 } else { rng.gen_range(-0.01..0.01) })
}

#[test]
fn residual_is_direction_invariant_for_a_symmetric_stub() {
    // both decoders are the same (non-inverse) map, so i -> j and j -> i agree
    let shared = diagonal_dominant(1).t().to_owned();
    let stub = InverseStub::with_decoders(
        diagonal_dominant(2),
        BTreeMap::from([("spk_a".to_string(), shared.clone()), ("spk_b".to_string(), shared)]),
    )
    .unwrap();
    let corpus = random_corpus(&["spk_a", "spk_b"], 5, 3);
    for m in corpus.utterances("spk_a").unwrap() {
        let ab = pair_residual(&stub, 0, m, "spk_b").unwrap();
        let aa = pair_residual(&stub, 0, m, "spk_a").unwrap();
        assert!(ab > 1e-3);
        assert_eq!(ab, aa);
    }
    let by_seed: Vec<f64> =
        (0..3).map(|s| cycle_residual(&stub, &corpus.subset(&["spk_a"]).unwrap(), 10, s).unwrap()).collect();
    assert!(by_seed.iter().all(|r| r.is_finite() && *r > 0.0));
}

#[test]
fn shuffled_labels_stay_near_chance() {
    let stub = InverseStub::new(diagonal_dominant(4), &["spk_a", "spk_b"]).unwrap();
    let corpus = random_corpus(&["spk_a", "spk_b"], 40, 5);
    let features = code_features(&stub, &corpus).unwrap().remove(0);
    for seed in 0..5 {
        let mut labels: Vec<String> = features.iter().map(|(_, l)| l.clone()).collect();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(100 + seed));
        let shuffled: Vec<Sample> = features.iter().zip(labels).map(|((f, _), l)| (f.clone(), l)).collect();
        let probe = train_speaker_probe(&shuffled, seed).unwrap();
        let acc = probe.held_out_accuracy();
        assert!((acc - probe.chance_level()).abs() <= 0.15, "seed {seed}: accuracy {acc}");
    }
}

#[test]
fn probe_is_deterministic() {
    let stub = InverseStub::new(diagonal_dominant(6), &["spk_a", "spk_b"]).unwrap();
    let corpus = random_corpus(&["spk_a", "spk_b"], 25, 7);
    let a = probe_leakage(&stub, &corpus, 3).unwrap();
    let b = probe_leakage(&stub, &corpus, 3).unwrap();
    assert_eq!(a, b);
    assert!(probe_leakage(&stub, &corpus.subset(&["spk_a"]).unwrap(), 3).is_err());
}

#[test]
fn report_is_complete_and_round_trips_through_json() {
    let stub = InverseStub::new(diagonal_dominant(8), &["spk_a", "spk_b"]).unwrap();
    let corpus = random_corpus(&["spk_a", "spk_b"], 25, 9);
    let report = full_report(&stub, &corpus, &corpus, &EvalConfig::default()).unwrap();
    for v in
        [report.probe_leakage, report.sca_proxy, report.recon_mse, report.cycle_residual, report.chance_level]
    {
        assert!(v.is_finite());
    }
    assert_eq!(report.chance_level, 0.5);
    let json = serde_json::to_string(&report).unwrap();
    let back: EvalReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    let mut keys: Vec<&str> = value.as_object().unwrap().keys().map(|k| k.as_str()).collect();
    keys.sort_unstable();
    assert_eq!(
        keys,
        ["chance_level", "cycle_residual", "model_hash", "probe_leakage", "recon_mse", "sca_proxy", "seeds"]
    );
}

#[test]
fn training_lowers_reconstruction_error() {
    let data = rendered(&["spk_a"], 4, 11);
    let enc = EncoderConfig { conv_channels: 12, ..EncoderConfig::desk() };
    let dec = DecoderConfig {
        pre_recurrent_channels: 16,
        conv_channels: 16,
        post_recurrent_channels: 16,
        ..DecoderConfig::desk()
    };
    let mut c = TrainConfig {
        batch_segments: 2,
        crop_frames: 32,
        variant: Variant::Vanilla,
        ..TrainConfig::default()
    };
    c.steps.stage1 = 150;
    let untrained = Session::stage1("spk_a", &enc, &dec, &c).unwrap().model;
    let (trained, _) = stage1_train(&data, "spk_a", &enc, &dec, &c).unwrap();
    let before = recon_mse(&untrained, &data).unwrap();
    let after = recon_mse(&trained, &data).unwrap();
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn mel_classifier_sanity() {
    let ids = ["spk_a", "spk_b"];
    let reference = rendered(&ids, 30, 21);
    let held_out = rendered(&ids, 15, 22);
    let clf = train_mel_classifier(&reference, 0).unwrap();
    let own: Vec<(Mat, String)> = ids
        .iter()
        .flat_map(|id| held_out.utterances(id).unwrap().iter().map(move |m| (m.clone(), id.to_string())))
        .collect();
    assert!(sca_proxy(&own, &clf).unwrap() > 0.95);
    // unconverted sources labelled with the other speaker as "target"
    let crossed: Vec<(Mat, String)> = own
        .iter()
        .map(|(m, id)| (m.clone(), if id == "spk_a" { "spk_b" } else { "spk_a" }.to_string()))
        .collect();
    assert!(sca_proxy(&crossed, &clf).unwrap() < 0.05);
}
