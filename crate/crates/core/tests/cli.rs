use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[corpus]
speakers = 2
new_speakers = 1
train_utts = 20
eval_utts = 22
min_utt_ms = 600
max_utt_ms = 800

[encoder]
conv_channels = 8

[decoder]
pre_recurrent_channels = 8
conv_channels = 8
post_recurrent_channels = 8
post_recurrent_layers = 1

[train]
batch_segments = 1
crop_frames = 16

[train.steps]
stage1 = 4
stage2 = 4
stage3 = 4

[eval]
residual_pairs = 4
"#;

fn eae(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eae")).current_dir(dir).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let o = eae(dir.path(), &["--config", "tiny.toml", "make-corpus"]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

#[test]
fn verify_passes_and_catches_an_injected_bug() {
    let dir = tempfile::tempdir().unwrap();
    let ok = eae(dir.path(), &["verify"]);
    let table = String::from_utf8_lossy(&ok.stdout);
    assert_eq!(ok.status.code(), Some(0), "{table}");
    assert_eq!(table.lines().filter(|l| l.starts_with("PASS")).count(), 6);

    let bad = eae(dir.path(), &["verify", "--inject-gradient-bug"]);
    let table = String::from_utf8_lossy(&bad.stdout);
    assert_eq!(bad.status.code(), Some(1));
    assert!(table.lines().any(|l| l.starts_with("FAIL") && l.contains("grad_check")), "{table}");
}

#[test]
fn make_corpus_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["one", "two"] {
        let o = eae(dir.path(), &["make-corpus", "--speakers", "2", "--out", out]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(String::from_utf8_lossy(&o.stdout).contains("content_domination_ratio"));
    }
    let manifest = |d: &str| std::fs::read(dir.path().join(d).join("train/manifest.tsv")).unwrap();
    assert_eq!(manifest("one"), manifest("two"));
    let speakers = std::fs::read_dir(dir.path().join("one/train"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .count();
    assert_eq!(speakers, 2 + 2, "two desk speakers plus two new speakers");
}

#[test]
fn stage_prerequisites_are_usage_errors() {
    let dir = setup();
    let o = eae(dir.path(), &["--config", "tiny.toml", "train", "--stage", "2", "--variant", "cycle"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stage-1"), "{}", stderr(&o));
    let o = eae(dir.path(), &["--config", "tiny.toml", "train", "--stage", "2", "--variant", "vanilla"]);
    assert_eq!(o.status.code(), Some(2));
    let o = eae(dir.path(), &["train", "--corpus", "nowhere"]);
    assert_eq!(o.status.code(), Some(2));
    let o = eae(dir.path(), &["train", "--stage", "7"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_convert_and_evaluate() {
    let dir = setup();
    let cfg = ["--config", "tiny.toml"];
    let run = |args: &[&str]| {
        let all: Vec<&str> = cfg.iter().chain(args).copied().collect();
        eae(dir.path(), &all)
    };
    let o = run(&["train", "--variant", "cycle"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "stage1/spk_a.ckpt",
        "stage1/spk_b.csv",
        "cycle/stage2.ckpt",
        "cycle/stage2.csv",
        "cycle/stage3.ckpt",
        "cycle/stage3_spk_e.csv",
        "run_config.toml",
    ] {
        assert!(dir.path().join("runs").join(f).exists(), "missing {f}");
    }
    let log = std::fs::read_to_string(dir.path().join("runs/cycle/stage2.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 4);
    assert!(log.lines().skip(1).all(|l| l.contains(",cycle,")));

    // convert one wav, then a directory
    let wav = "corpus/eval/spk_a/spk_a_0000.wav";
    assert!(dir.path().join(wav).exists());
    let o = run(&["convert", "--checkpoint", "runs/cycle/stage3.ckpt", "--target", "spk_z", wav]);
    assert_eq!(o.status.code(), Some(2));
    let o =
        run(&["convert", "--checkpoint", "runs/cycle/stage3.ckpt", "--target", "spk_e", "--out", "a", wav]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("a/spk_a_0000_to_spk_e.mel").exists());
    assert!(dir.path().join("a/spk_a_0000_to_spk_e.json").exists());
    assert!(!dir.path().join("a/spk_a_0000_to_spk_e.wav").exists());
    let o = run(&[
        "convert",
        "--checkpoint",
        "runs/stage1",
        "--target",
        "spk_b",
        "--emit-audio",
        "--out",
        "b",
        "corpus/eval/spk_a",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let wavs = std::fs::read_dir(dir.path().join("b"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "wav"))
        .count();
    assert_eq!(wavs, 22);

    let o = run(&[
        "evaluate",
        "--checkpoint",
        "runs/cycle/stage2.ckpt",
        "--compare",
        "runs/stage1",
        "--seeds",
        "2",
        "--out",
        "report.json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["reports"].as_array().unwrap().len(), 2);
    assert_eq!(report["deltas"].as_array().unwrap().len(), 2);
    assert!(report["summary"]["majority"].is_object());
    assert_eq!(report["run_config"]["corpus"]["speakers"], 2);
}
