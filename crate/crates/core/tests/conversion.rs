use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cycle_eae::conversion::{
    convert_mel, convert_utterance, write_outputs, ConversionRequest, Sidecar, Source, OUTPUT_PEAK,
};
use cycle_eae::eval::{EaeBank, VoiceModel};
use cycle_eae::frontend::{load_wav, mel_distance, read_mel, AudioClip, MelFrontend, MelSpectrogram};
use cycle_eae::net::{DecoderConfig, DecoderParams, EncoderConfig, EncoderParams};
use cycle_eae::synth::{desk_speakers, render_corpus, CorpusSpec};
use cycle_eae::training::{stage1_train, MelCorpus, MultiHeadModel, TrainConfig, Variant};
use cycle_eae::Error;

fn enc() -> EncoderConfig {
    EncoderConfig { conv_channels: 12, ..EncoderConfig::desk() }
}

fn dec() -> DecoderConfig {
    DecoderConfig {
        pre_recurrent_channels: 16,
        conv_channels: 16,
        post_recurrent_channels: 16,
        ..DecoderConfig::desk()
    }
}

fn two_head_model() -> MultiHeadModel {
    let decoders = BTreeMap::from([
        ("spk_a".to_string(), DecoderParams::init(&dec(), 1).unwrap()),
        ("spk_b".to_string(), DecoderParams::init(&dec(), 2).unwrap()),
    ]);
    MultiHeadModel::new(EncoderParams::init(&enc(), 0).unwrap(), decoders).unwrap()
}

fn random_mel(frames: usize, seed: u64) -> MelSpectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MelSpectrogram::from_matrix(Array2::from_shape_fn((80, frames), |_| rng.gen_range(-9.0..0.0)), 200)
        .unwrap()
}

#[test]
fn shape_is_preserved_for_any_length() {
    let model = two_head_model();
    for frames in [1, 3, 128, 300, 301] {
        let out = convert_mel(&model, &random_mel(frames, frames as u64), "spk_b").unwrap();
        assert_eq!((out.rows(), out.frames()), (80, frames));
    }
}

#[test]
fn conversion_is_pure() {
    let model = two_head_model();
    let before = model.digest();
    let mel = random_mel(300, 1);
    let a = convert_mel(&model, &mel, "spk_a").unwrap();
    let b = convert_mel(&model, &mel, "spk_a").unwrap();
    assert_eq!(a, b);
    assert_eq!(model.digest(), before);
}

#[test]
fn target_choice_only_changes_the_decoder() {
    let model = two_head_model();
    let mel = random_mel(120, 2);
    let code = VoiceModel::encode(&model, 0, mel.values()).unwrap();
    for target in ["spk_a", "spk_b"] {
        let out = convert_mel(&model, &mel, target).unwrap();
        let direct = VoiceModel::decode(&model, target, &code).unwrap();
        assert_eq!(out.values(), &direct.slice(ndarray::s![.., ..120]).to_owned());
    }
    assert_ne!(convert_mel(&model, &mel, "spk_a").unwrap(), convert_mel(&model, &mel, "spk_b").unwrap());
}

#[test]
fn silence_and_unknown_targets() {
    let model = two_head_model();
    let out = convert_mel(&model, &MelSpectrogram::silence(64), "spk_a").unwrap();
    assert!(out.values().iter().all(|v| v.is_finite()));
    assert!(matches!(convert_mel(&model, &random_mel(8, 3), "spk_z"), Err(Error::UnknownSpeaker(_))));
}

#[test]
fn audio_is_written_only_when_requested() {
    let model = two_head_model();
    let fe = MelFrontend::default();
    let clip = AudioClip::new((0..6_400).map(|n| 0.2 * (n as f64 * 0.05).sin()).collect()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let sidecar = Sidecar {
        source: "tone.wav".into(),
        target: "spk_b".into(),
        model_hash: model.digest(),
        checkpoint: "model.ckpt".into(),
    };
    for emit_audio in [false, true] {
        let request = ConversionRequest {
            source: Source::Audio(clip.clone()),
            target: "spk_b".into(),
            emit_audio,
            chunk_frames: None,
        };
        let out = convert_utterance(&model, &fe, &request).unwrap();
        assert_eq!(out.mel.frames(), 32);
        assert_eq!(out.audio.is_some(), emit_audio);
        let stem = format!("out_{emit_audio}");
        let files = write_outputs(dir.path(), &stem, &out, &sidecar).unwrap();
        assert_eq!(read_mel(&files.mel).unwrap(), out.mel);
        assert_eq!(files.wav.is_some(), emit_audio);
        assert_eq!(dir.path().join(format!("{stem}.wav")).exists(), emit_audio);
        if let Some(wav) = files.wav {
            let audio = load_wav(wav).unwrap();
            assert!(audio.peak() <= OUTPUT_PEAK + 1e-4);
        }
        let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(files.sidecar).unwrap()).unwrap();
        assert_eq!(side, sidecar);
    }
}

#[test]
fn own_decoder_stays_closest_to_the_source() {
    let ids = ["spk_a", "spk_b"];
    let speakers = desk_speakers().into_iter().filter(|s| ids.contains(&s.speaker_id.as_str())).collect();
    let fe = MelFrontend::default();
    let mut spec = CorpusSpec::new(speakers, 30, 5);
    spec.min_utt_ms = 600;
    spec.max_utt_ms = 900;
    let data = MelCorpus::from_corpus(&render_corpus(&spec).unwrap(), &fe).unwrap();
    let mut c = TrainConfig {
        batch_segments: 2,
        crop_frames: 32,
        variant: Variant::Vanilla,
        ..TrainConfig::default()
    };
    c.steps.stage1 = 300;
    let train = data.truncated(10);
    let bank = EaeBank::new(
        ids.iter()
            .map(|id| (id.to_string(), stage1_train(&train, id, &enc(), &dec(), &c).unwrap().0))
            .collect(),
    )
    .unwrap();
    // the last 20 utterances were never used for training
    for (own, other) in [("spk_a", "spk_b"), ("spk_b", "spk_a")] {
        let mut wins = 0;
        for m in &data.utterances(own).unwrap()[10..] {
            let src = MelSpectrogram::from_matrix(m.clone(), 200).unwrap();
            let mine = mel_distance(&convert_mel(&bank, &src, own).unwrap(), &src).unwrap();
            let theirs = mel_distance(&convert_mel(&bank, &src, other).unwrap(), &src).unwrap();
            wins += usize::from(mine < theirs);
        }
        assert_eq!(wins, 20, "{own}: own decoder closer on {wins}/20");
    }
}
