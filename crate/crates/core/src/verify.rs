//! The fast self-check suite behind `eae verify`.
//!
//! Every check is cheap (seconds) and independent of any corpus on disk.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::eval::{cycle_residual, InverseStub, VoiceModel};
use crate::frontend::{AudioClip, FrameParams, MelFrontend, MelSpectrogram, SEGMENT_SAMPLES};
use crate::net::{stack_segments, DecoderConfig, DecoderParams, EncoderConfig, GradCheck, Mat, ParamSet};
use crate::training::{
    decode_checkpoint, encode_checkpoint, loss_cyc, loss_rec, loss_total, Checkpoint, MelCorpus, Session,
    TrainConfig, Variant,
};

/// Relative-error bound for the gradient checks.
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &str, outcome: Result<(bool, String)>) -> CheckResult {
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult { name: name.to_string(), passed, detail }
}

fn random_mel(rng: &mut ChaCha8Rng, rows: usize, frames: usize) -> Mat {
    Array2::from_shape_fn((rows, frames), |_| -4.0 + 3.0 * rng.sample::<f64, _>(StandardNormal))
}

/// A batch of `segments` random segments of `frames` frames per speaker.
pub fn random_batch(ids: &[&str], segments: usize, frames: usize, seed: u64) -> BTreeMap<String, Mat> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.iter()
        .map(|id| {
            let segs: Vec<Mat> = (0..segments).map(|_| random_mel(&mut rng, 80, frames)).collect();
            let refs: Vec<&Mat> = segs.iter().collect();
            (id.to_string(), stack_segments(&refs).expect("equal shapes").0)
        })
        .collect()
}

fn small_train_config(variant: Variant) -> TrainConfig {
    TrainConfig { batch_segments: 2, crop_frames: 32, variant, ..TrainConfig::default() }
}

/// The reconstruction-only objective of a fresh desk autoencoder (all
/// parameters trainable, batch norm in training mode).
pub fn rec_path_session(seed: u64) -> Result<Session> {
    let cfg = TrainConfig { seed, ..small_train_config(Variant::Vanilla) };
    Session::stage1("spk_a", &EncoderConfig::desk(), &DecoderConfig::desk(), &cfg)
}

/// The shared-encoder objective with the code cycle: encoder trainable,
/// two frozen desk decoders in inference mode.
pub fn cycle_path_session(seed: u64) -> Result<Session> {
    let cfg = TrainConfig { seed, ..small_train_config(Variant::Cycle) };
    let decoders = ["spk_a", "spk_b"]
        .iter()
        .enumerate()
        .map(|(k, id)| {
            Ok((id.to_string(), DecoderParams::init(&DecoderConfig::desk(), seed + 10 + k as u64)?))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    Session::stage2(decoders, &EncoderConfig::desk(), &cfg)
}

fn corrupt(g: &mut ParamSet) {
    for (_, a) in g.iter_mut() {
        a.mapv_inplace(|v| v * 1.01);
    }
}

fn grad_check(session: &Session, ids: &[&str], inject: bool) -> Result<(bool, String)> {
    let batch = random_batch(ids, 2, 32, 5);
    let tamper: Option<&dyn Fn(&mut ParamSet)> = if inject { Some(&corrupt) } else { None };
    let t = Instant::now();
    let r = session.grad_check(&batch, &GradCheck::default(), tamper)?;
    Ok((
        r.max_relative_error < GRAD_TOLERANCE,
        format!(
            "max rel err {:.2e} over {} coords, worst {} ({:.1?})",
            r.max_relative_error,
            r.checked,
            r.worst.map(|(n, i)| format!("{n}[{i}]")).unwrap_or_default(),
            t.elapsed()
        ),
    ))
}

fn loss_identities() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let rec: f64 = rng.gen_range(0.0..100.0);
        let cyc: f64 = rng.gen_range(0.0..100.0);
        let alpha: f64 = rng.gen_range(0.0..20.0);
        let total = loss_total(rec, cyc, alpha);
        let expect = rec + alpha * cyc;
        worst = worst.max((total - expect).abs() / expect.abs().max(f64::MIN_POSITIVE));
    }
    // worked example: two pairs with mean squared errors 1 and 4
    let mel = |v: Vec<f64>| MelSpectrogram::from_matrix(Array2::from_shape_vec((2, 2), v).unwrap(), 200);
    let rec = loss_rec(
        &[mel(vec![1.0, 1.0, 1.0, 1.0])?, mel(vec![2.0, 2.0, 2.0, 2.0])?],
        &[mel(vec![0.0; 4])?, mel(vec![0.0; 4])?],
    )?;
    let ok = worst <= 1e-12 && rec == 5.0;
    Ok((ok, format!("max rel dev {worst:.1e}, worked example {rec}")))
}

/// Inverse-pair stub and a small two-speaker corpus of random mels.
pub fn stub_fixture() -> Result<(InverseStub, MelCorpus)> {
    let a = Array2::from_shape_fn((80, 80), |(i, j)| match (i as isize) - (j as isize) {
        0 => 2.0,
        -1 => 0.5,
        1 => -0.25,
        _ => 0.0,
    });
    let stub = InverseStub::new(a, &["spk_a", "spk_b"])?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let corpus = MelCorpus::from_mels(
        ["spk_a", "spk_b"]
            .iter()
            .map(|id| (id.to_string(), (0..4).map(|_| random_mel(&mut rng, 80, 64)).collect()))
            .collect(),
    )?;
    Ok((stub, corpus))
}

fn cycle_optimum() -> Result<(bool, String)> {
    let (stub, corpus) = stub_fixture()?;
    let residual = cycle_residual(&stub, &corpus, 40, 0)?;
    let mut worst_cyc = 0.0f64;
    for (i, j) in [("spk_a", "spk_b"), ("spk_b", "spk_a")] {
        let m = &corpus.utterances(i)?[0];
        let z = stub.encode(0, m)?;
        let z_hat = stub.encode(0, &stub.decode(j, &z)?)?;
        worst_cyc = worst_cyc.max(loss_cyc(&[z_hat], &[z])?);
    }
    Ok((residual < 1e-12 && worst_cyc < 1e-20, format!("residual {residual:.1e}, l_cyc {worst_cyc:.1e}")))
}

fn frame_law() -> Result<(bool, String)> {
    let fe = MelFrontend::default();
    let clip = AudioClip::new(vec![0.0; SEGMENT_SAMPLES])?;
    let mel = fe.analyze(&clip)?;
    let mut ok = mel.rows() == 80 && mel.frames() == 128;
    let frame = FrameParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let len = rng.gen_range(1..5000);
        let clip = AudioClip::new(vec![0.01; len])?;
        ok &= fe.analyze(&clip)?.frames() == len.div_ceil(frame.hop);
    }
    Ok((ok, format!("segment -> {}x{}", mel.rows(), mel.frames())))
}

fn checkpoint_round_trip() -> Result<(bool, String)> {
    let session = rec_path_session(2)?;
    let ck = Checkpoint { session, run_config: None };
    let bytes = encode_checkpoint(&ck)?;
    let back = decode_checkpoint(&bytes)?;
    let same = back.session.model.digest() == ck.session.model.digest() && encode_checkpoint(&back)? == bytes;
    let mut flipped = bytes.clone();
    let last = flipped.len() - 1;
    flipped[last] ^= 1;
    let detects = decode_checkpoint(&flipped).is_err();
    Ok((same && detects, format!("{} bytes, corruption detected: {detects}", bytes.len())))
}

/// Runs every check. With `inject_gradient_bug`, the analytic gradients are
/// scaled by 1.01 before comparison, which the gradient checks must catch.
pub fn run_all(inject_gradient_bug: bool) -> Vec<CheckResult> {
    vec![
        result(
            "grad_check_rec",
            rec_path_session(0).and_then(|s| grad_check(&s, &["spk_a"], inject_gradient_bug)),
        ),
        result(
            "grad_check_cyc",
            cycle_path_session(0).and_then(|s| grad_check(&s, &["spk_a", "spk_b"], inject_gradient_bug)),
        ),
        result("loss_identities", loss_identities()),
        result("cycle_optimum", cycle_optimum()),
        result("stft_frame_law", frame_law()),
        result("checkpoint_round_trip", checkpoint_round_trip()),
    ]
}

/// One `PASS`/`FAIL` line per check.
pub fn format_table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for r in results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("{status}  {:width$}  {}\n", r.name, r.detail));
    }
    out
}
