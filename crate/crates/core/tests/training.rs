use std::collections::BTreeMap;

use cycle_eae::frontend::MelFrontend;
use cycle_eae::net::{gradient, DecoderConfig, DecoderParams, EncoderConfig};
use cycle_eae::synth::{desk_speakers, render_corpus, CorpusSpec};
use cycle_eae::training::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, stage1_train, stage2_train,
    stage3_train, Checkpoint, DecoderInit, LossLog, LossReport, MelCorpus, Session, TrainConfig, Variant,
    LOSS_LOG_HEADER,
};
use cycle_eae::Error;

fn corpus(ids: &[&str], utts: usize) -> MelCorpus {
    let speakers = desk_speakers().into_iter().filter(|s| ids.contains(&s.speaker_id.as_str())).collect();
    let mut spec = CorpusSpec::new(speakers, utts, 9);
    spec.min_utt_ms = 600;
    spec.max_utt_ms = 900;
    MelCorpus::from_corpus(&render_corpus(&spec).unwrap(), &MelFrontend::default()).unwrap()
}

// narrow networks: contracts do not depend on width
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

fn cfg(variant: Variant, seed: u64) -> TrainConfig {
    TrainConfig { batch_segments: 1, crop_frames: 16, seed, variant, ..TrainConfig::default() }
}

fn random_decoders(ids: &[&str], seed: u64) -> BTreeMap<String, DecoderParams> {
    ids.iter()
        .enumerate()
        .map(|(k, id)| (id.to_string(), DecoderParams::init(&dec(), seed + k as u64).unwrap()))
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn stage2_never_touches_decoders() {
    let data = corpus(&["spk_a", "spk_b"], 4);
    let decoders = random_decoders(&["spk_a", "spk_b"], 1);
    let before: Vec<String> =
        decoders.values().map(|d| format!("{}{}", d.params.digest(), d.buffers.digest())).collect();
    let mut s = Session::stage2(decoders, &enc(), &cfg(Variant::Cycle, 0)).unwrap();
    let enc_before = s.model.encoder_digest();
    s.run(&data, 1000, |_| Ok(())).unwrap();
    let after: Vec<String> =
        s.model.decoders.values().map(|d| format!("{}{}", d.params.digest(), d.buffers.digest())).collect();
    assert_eq!(before, after);
    assert_ne!(enc_before, s.model.encoder_digest());
}

#[test]
fn stage3_never_touches_the_encoder() {
    let data = corpus(&["spk_a", "spk_b", "spk_c"], 3);
    let (base, _) = stage2_train(
        random_decoders(&["spk_a", "spk_b"], 2),
        &data.subset(&["spk_a", "spk_b"]).unwrap(),
        &enc(),
        &TrainConfig {
            steps: cycle_eae::training::StageSteps { stage1: 0, stage2: 5, stage3: 20 },
            ..cfg(Variant::Cycle, 0)
        },
    )
    .unwrap();
    let c = TrainConfig {
        steps: cycle_eae::training::StageSteps { stage1: 0, stage2: 0, stage3: 20 },
        ..cfg(Variant::Cycle, 0)
    };
    for init in [DecoderInit::Fresh(dec()), DecoderInit::Finetune("spk_a".into())] {
        let (m, reports) = stage3_train(&base, "spk_c", init, &data, &c).unwrap();
        assert_eq!(m.encoder_digest(), base.encoder_digest());
        assert_eq!(m.decoder_digest("spk_a").unwrap(), base.decoder_digest("spk_a").unwrap());
        assert!(reports.iter().all(|r| r.l_cyc == 0.0 && r.per_speaker.keys().eq(["spk_c"])));
    }
    assert!(matches!(
        stage3_train(&base, "spk_c", DecoderInit::Finetune("nobody".into()), &data, &c),
        Err(Error::UnknownSpeaker(_))
    ));
}

#[test]
fn stage1_is_deterministic_and_zero_steps_is_initialization() {
    let data = corpus(&["spk_a"], 3);
    let mut c = cfg(Variant::Vanilla, 4);
    c.steps.stage1 = 15;
    let (m1, r1) = stage1_train(&data, "spk_a", &enc(), &dec(), &c).unwrap();
    let (m2, r2) = stage1_train(&data, "spk_a", &enc(), &dec(), &c).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(m1.digest(), m2.digest());

    c.steps.stage1 = 0;
    let (m0, r0) = stage1_train(&data, "spk_a", &enc(), &dec(), &c).unwrap();
    let fresh = Session::stage1("spk_a", &enc(), &dec(), &c).unwrap();
    assert!(r0.is_empty());
    assert_eq!(m0.digest(), fresh.model.digest());
}

#[test]
fn resume_from_file_continues_the_same_trace() {
    let data = corpus(&["spk_a", "spk_b"], 3);
    let start =
        || Session::stage2(random_decoders(&["spk_a", "spk_b"], 3), &enc(), &cfg(Variant::Cycle, 1)).unwrap();
    let straight = start().run(&data, 150, |_| Ok(())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ckpt");
    let mut head = start();
    head.run(&data, 50, |_| Ok(())).unwrap();
    save_checkpoint(&Checkpoint { session: head, run_config: None }, &path).unwrap();
    let mut resumed = load_checkpoint(&path).unwrap().session;
    assert_eq!(resumed.step, 50);
    let tail = resumed.run(&data, 100, |_| Ok(())).unwrap();
    assert_eq!(&straight[50..], &tail[..]);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let s = Session::stage1("spk_a", &enc(), &dec(), &cfg(Variant::Vanilla, 0)).unwrap();
    let bytes = encode_checkpoint(&Checkpoint { session: s, run_config: None }).unwrap();
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    assert!(matches!(decode_checkpoint(&flipped), Err(Error::Checksum { .. })));
    let mut version = bytes.clone();
    version[4] = version[4].wrapping_add(1);
    assert!(decode_checkpoint(&version).is_err());
    assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    assert!(decode_checkpoint(b"nope").is_err());
}

#[test]
fn cycle_term_sends_gradient_to_the_encoder() {
    let data = corpus(&["spk_a", "spk_b"], 3);
    let decoders = random_decoders(&["spk_a", "spk_b"], 5);
    let mut with = Session::stage2(decoders.clone(), &enc(), &cfg(Variant::Cycle, 2)).unwrap();
    let without = Session::stage2(decoders, &enc(), &cfg(Variant::EncoderShareOnly, 2)).unwrap();
    let batch = with.draw_batch(&data).unwrap();
    let params = with.trainable_params();
    let (_, g_with) = gradient(&params, with.objective_fn(&batch)).unwrap();
    let (_, g_without) = gradient(&params, without.objective_fn(&batch)).unwrap();
    // the difference is alpha times the cycle gradient
    let mut diff = 0.0;
    for ((name, a), (_, b)) in g_with.iter().zip(g_without.iter()) {
        assert!(name.starts_with("enc/"), "{name}");
        diff += (a - b).mapv(|v| v * v).sum();
    }
    assert!(diff > 1e-12, "cycle gradient norm^2 {diff}");
}

#[test]
fn encoder_sharing_alone_logs_but_ignores_the_cycle_term() {
    let data = corpus(&["spk_a", "spk_b"], 3);
    let mut s =
        Session::stage2(random_decoders(&["spk_a", "spk_b"], 6), &enc(), &cfg(Variant::EncoderShareOnly, 0))
            .unwrap();
    for r in s.run(&data, 10, |_| Ok(())).unwrap() {
        assert!(r.l_cyc > 0.0);
        assert_eq!(r.l_total, r.l_rec);
    }
}

#[test]
fn loss_identity_holds_every_step() {
    let data = corpus(&["spk_a", "spk_b"], 3);
    for variant in [Variant::Cycle, Variant::DataCycle] {
        let c = cfg(variant, 0);
        let mut s = Session::stage2(random_decoders(&["spk_a", "spk_b"], 7), &enc(), &c).unwrap();
        for r in s.run(&data, 10, |_| Ok(())).unwrap() {
            let expect = r.l_rec + c.alpha * r.l_cyc;
            assert!((r.l_total - expect).abs() <= 1e-12 * expect.abs(), "{r:?}");
            assert_eq!(r.variant, variant);
        }
    }
}

#[test]
fn loss_does_not_increase_in_expectation() {
    // desk widths: the narrow test networks learn too slowly behind frozen
    // decoders for the medians to separate within a short run
    let n = 100;
    let (e, d) = (EncoderConfig::desk(), DecoderConfig::desk());
    let data = corpus(&["spk_a", "spk_b"], 4);
    let mut warm = TrainConfig { batch_segments: 2, ..cfg(Variant::Vanilla, 9) };
    warm.steps.stage1 = 200;
    let decoders: BTreeMap<String, DecoderParams> = ["spk_a", "spk_b"]
        .iter()
        .map(|id| {
            let (m, _) = stage1_train(&data, id, &e, &d, &warm).unwrap();
            (id.to_string(), m.decoders[*id].clone())
        })
        .collect();
    for seed in 0..3 {
        for variant in [Variant::Vanilla, Variant::Cycle, Variant::EncoderShareOnly, Variant::DataCycle] {
            let c = TrainConfig { batch_segments: 2, ..cfg(variant, seed) };
            let mut s = if variant == Variant::Vanilla {
                Session::stage1("spk_a", &e, &d, &c).unwrap()
            } else {
                Session::stage2(decoders.clone(), &e, &c).unwrap()
            };
            let r = s.run(&data, 2 * n, |_| Ok(())).unwrap();
            let total = |part: &[LossReport]| median(part.iter().map(|x| x.l_total).collect());
            let (early, late) = (total(&r[..n as usize]), total(&r[n as usize..]));
            assert!(late < early, "{variant} seed {seed}: {early} -> {late}");
        }
    }
}

#[test]
fn preconditions() {
    let data = corpus(&["spk_a"], 2);
    assert!(Session::stage2(random_decoders(&["spk_a"], 0), &enc(), &cfg(Variant::Cycle, 0)).is_err());
    let empty = MelCorpus::from_mels(BTreeMap::new());
    if let Ok(empty) = empty {
        let mut c = cfg(Variant::Vanilla, 0);
        c.steps.stage1 = 1;
        assert!(stage1_train(&empty, "spk_a", &enc(), &dec(), &c).is_err());
    }
    let mut s = Session::stage1("spk_b", &enc(), &dec(), &cfg(Variant::Vanilla, 0)).unwrap();
    assert!(s.run(&data, 1, |_| Ok(())).is_err(), "speaker missing from data");
}

#[test]
fn loss_log_is_flushed_per_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    let data = corpus(&["spk_a"], 2);
    let mut s = Session::stage1("spk_a", &enc(), &dec(), &cfg(Variant::Vanilla, 0)).unwrap();
    let mut log = LossLog::create(&path).unwrap();
    s.run(&data, 3, |r| {
        log.record(r)?;
        let rows = std::fs::read_to_string(&path).unwrap().lines().count();
        assert_eq!(rows as u64, r.step + 2);
        Ok(())
    })
    .unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(LOSS_LOG_HEADER));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[0], "0");
    assert_eq!(first[1], "vanilla");
    assert!(first[2].parse::<f64>().unwrap() > 0.0);
}
