//! The `eae` command line: corpus generation, staged training, conversion,
//! evaluation and verification.
//!
//! Progress goes to stderr; machine-readable results (checkpoints, CSV loss
//! logs, JSON reports) go to files. Exit codes: 0 success, 1 verification or
//! assertion failure, 2 usage or precondition error.
//!
//! Run directory layout (under `paths.runs`):
//!
//! ```text
//! run_config.toml
//! stage1/<speaker>.ckpt, stage1/<speaker>.csv      single-speaker autoencoders
//! <variant>/stage2.ckpt, <variant>/stage2.csv      shared encoder + frozen decoders
//! <variant>/stage3.ckpt, <variant>/stage3_<id>.csv new-speaker decoders added
//! vanilla/stage3/<speaker>.ckpt                    fresh autoencoders for new speakers
//! ```
//!
//! A checkpoint argument may be a `.ckpt` file (one model) or a directory of
//! single-speaker checkpoints (a vanilla bank such as `stage1/`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{RunConfig, Split};
use crate::conversion::{convert_utterance, write_outputs, ConversionRequest, Sidecar, Source};
use crate::error::Error;
use crate::eval::{full_report, EaeBank, EvalConfig, EvalReport, VoiceModel};
use crate::frontend::MelFrontend;
use crate::synth::{content_domination_ratio, load_corpus, make_corpus};
use crate::training::{
    load_checkpoint, save_checkpoint, Checkpoint, DecoderInit, LossLog, LossReport, MelCorpus,
    MultiHeadModel, Session, Variant,
};
use crate::verify;

#[derive(Debug, Parser)]
#[command(name = "eae", version, about = "Shared-encoder voice conversion with a cycle-consistency loss")]
pub struct Cli {
    /// Run configuration (TOML). Defaults apply to every missing key.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic corpus (train and eval splits).
    MakeCorpus {
        /// Output directory (overrides paths.corpus).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of desk speakers (overrides corpus.speakers).
        #[arg(long)]
        speakers: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one or all training stages.
    Train {
        #[arg(long, value_enum, default_value = "all")]
        stage: StageArg,
        /// vanilla, cycle, encoder_share_only or data_cycle (overrides train.variant).
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        runs: Option<PathBuf>,
    },
    /// Convert a wav or mel file, or every such file in a directory.
    Convert {
        /// Model checkpoint or directory of single-speaker checkpoints.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long)]
        emit_audio: bool,
        /// Convert this many frames at a time.
        #[arg(long)]
        chunk_frames: Option<usize>,
        #[arg(long, default_value = "converted")]
        out: PathBuf,
        input: PathBuf,
    },
    /// Evaluate a model on the eval split and write a JSON report.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Second model; the report then holds per-metric deltas.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Number of evaluation seeds.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
    /// Fast self-checks: gradients, loss identities, cycle optimum, framing,
    /// checkpoint round trip.
    Verify {
        /// Scale every analytic gradient by 1.01 (negative control).
        #[arg(long, hide = true)]
        inject_gradient_bug: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    All,
}

/// A failed command and its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn check(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::UnknownSpeaker(_)
            | Error::Config(_)
            | Error::InvalidArgument(_)
            | Error::Io { .. }
            | Error::UnsupportedChannels(_)
            | Error::UnsupportedFormat(_)
            | Error::UnsupportedSampleRate(_) => 2,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

pub fn execute(cli: Cli) -> CmdResult {
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::MakeCorpus { out, speakers, seed } => {
            let mut config = config;
            if let Some(n) = speakers {
                config.corpus.speakers = n;
            }
            if let Some(s) = seed {
                config.corpus.seed = s;
            }
            config.validate()?;
            let out = out.unwrap_or_else(|| config.paths.corpus.clone());
            cmd_make_corpus(&config, &out)
        }
        Command::Train { stage, variant, seed, corpus, runs } => {
            let mut config = config;
            if let Some(v) = variant {
                config.train.variant = v;
            }
            if let Some(s) = seed {
                config.train.seed = s;
            }
            if let Some(c) = corpus {
                config.paths.corpus = c;
            }
            if let Some(r) = runs {
                config.paths.runs = r;
            }
            config.validate()?;
            cmd_train(&config, stage)
        }
        Command::Convert { checkpoint, target, emit_audio, chunk_frames, out, input } => {
            cmd_convert(&config, &checkpoint, &input, &target, emit_audio, chunk_frames, &out)
        }
        Command::Evaluate { checkpoint, compare, seeds, corpus, out } => {
            let mut config = config;
            if let Some(c) = corpus {
                config.paths.corpus = c;
            }
            cmd_evaluate(&config, &checkpoint, compare.as_deref(), seeds, &out)
        }
        Command::Verify { inject_gradient_bug } => cmd_verify(inject_gradient_bug),
    }
}

fn write_file(path: &Path, text: &str) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn cmd_make_corpus(config: &RunConfig, out: &Path) -> CmdResult {
    let t = Instant::now();
    let mut train = None;
    for split in [Split::Train, Split::Eval] {
        let spec = config.corpus.spec(split);
        let dir = out.join(split.dir_name());
        let (corpus, manifest) = make_corpus(&spec, &dir)?;
        eprintln!(
            "{}: {} utterances from {} speakers -> {}",
            split.dir_name(),
            manifest.len(),
            corpus.speakers.len(),
            dir.display()
        );
        if split == Split::Train {
            train = Some(corpus);
        }
    }
    write_file(&out.join("run_config.toml"), &config.to_toml()?)?;
    let train = train.expect("train split rendered");
    if train.speakers.len() >= 2 {
        let report = content_domination_ratio(&train, 200, config.corpus.seed)?;
        println!(
            "content_domination_ratio {:.4} (same content, other speaker {:.4}; other content, same speaker {:.4})",
            report.ratio, report.same_word_cross_speaker, report.cross_word_same_speaker
        );
    }
    eprintln!("done in {:.1?}", t.elapsed());
    Ok(())
}

fn load_split(config: &RunConfig, frontend: &MelFrontend, split: Split) -> Result<MelCorpus, Failure> {
    let dir = config.paths.corpus.join(split.dir_name());
    if !dir.join(crate::synth::MANIFEST_FILE).exists() {
        return Err(Failure::usage(format!("no corpus at {} (run make-corpus first)", dir.display())));
    }
    Ok(MelCorpus::from_corpus(&load_corpus(&dir)?, frontend)?)
}

fn progress(label: &str, total: u64) -> impl FnMut(&LossReport) -> crate::Result<()> + '_ {
    let every = (total / 10).max(1);
    move |r: &LossReport| {
        if (r.step + 1).is_multiple_of(every) || r.step + 1 == total {
            eprintln!(
                "{label} step {}/{total}: l_rec {:.4} l_cyc {:.4} l_total {:.4}",
                r.step + 1,
                r.l_rec,
                r.l_cyc,
                r.l_total
            );
        }
        Ok(())
    }
}

fn run_session(session: &mut Session, data: &MelCorpus, steps: u64, log: &Path, label: &str) -> CmdResult {
    let mut csv = LossLog::create(log)?;
    let mut show = progress(label, steps);
    session.run(data, steps, |r| {
        csv.record(r)?;
        show(r)
    })?;
    if session.rejected_steps > 0 {
        eprintln!("{label}: {} steps rejected (non-finite)", session.rejected_steps);
    }
    Ok(())
}

fn save(session: &Session, config: &RunConfig, path: &Path) -> CmdResult {
    let ck = Checkpoint { session: session.clone(), run_config: Some(config.to_json()) };
    save_checkpoint(&ck, path)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn stage1_path(config: &RunConfig, id: &str) -> PathBuf {
    config.paths.runs.join("stage1").join(format!("{id}.ckpt"))
}

fn variant_dir(config: &RunConfig) -> PathBuf {
    config.paths.runs.join(config.train.variant.as_str())
}

fn require(path: &Path, stage: u8) -> std::result::Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::usage(format!(
            "missing stage-{stage} checkpoint {} (run `eae train --stage {stage}` first)",
            path.display()
        )))
    }
}

fn cmd_train(config: &RunConfig, stage: StageArg) -> CmdResult {
    let variant = config.train.variant;
    let wants = |s: StageArg| stage == s || stage == StageArg::All;
    if variant == Variant::Vanilla && stage == StageArg::Two {
        return Err(Failure::usage("the vanilla variant has no shared-encoder stage"));
    }
    let frontend = config.frontend.build()?;
    let train = load_split(config, &frontend, Split::Train)?;
    let ids = config.corpus.training_ids();
    let new_ids = config.corpus.new_ids();
    write_file(&config.paths.runs.join("run_config.toml"), &config.to_toml()?)?;
    let t = Instant::now();
    let steps = &config.train.steps;

    if wants(StageArg::One) {
        for id in &ids {
            let mut s = Session::stage1(id, &config.encoder, &config.decoder, &config.train)?;
            let dir = config.paths.runs.join("stage1");
            run_session(
                &mut s,
                &train,
                steps.stage1,
                &dir.join(format!("{id}.csv")),
                &format!("stage1 {id}"),
            )?;
            save(&s, config, &stage1_path(config, id))?;
        }
    }
    if variant != Variant::Vanilla && wants(StageArg::Two) {
        let mut decoders = BTreeMap::new();
        for id in &ids {
            let p = stage1_path(config, id);
            require(&p, 1)?;
            let mut m = load_checkpoint(&p)?.session.model;
            let d = m
                .decoders
                .remove(id)
                .ok_or_else(|| Failure::usage(format!("{} holds no decoder for {id}", p.display())))?;
            decoders.insert(id.clone(), d);
        }
        let mut s = Session::stage2(decoders, &config.encoder, &config.train)?;
        let dir = variant_dir(config);
        run_session(&mut s, &train, steps.stage2, &dir.join("stage2.csv"), "stage2")?;
        save(&s, config, &dir.join("stage2.ckpt"))?;
    }
    if wants(StageArg::Three) {
        if new_ids.is_empty() {
            eprintln!("stage3: no new speakers configured, nothing to do");
        } else if variant == Variant::Vanilla {
            for id in &new_ids {
                let mut s = Session::stage1(id, &config.encoder, &config.decoder, &config.train)?;
                let dir = variant_dir(config).join("stage3");
                run_session(
                    &mut s,
                    &train,
                    steps.stage3,
                    &dir.join(format!("{id}.csv")),
                    &format!("stage3 {id}"),
                )?;
                save(&s, config, &dir.join(format!("{id}.ckpt")))?;
            }
        } else {
            let dir = variant_dir(config);
            let base_path = dir.join("stage2.ckpt");
            require(&base_path, 2)?;
            let mut model = load_checkpoint(&base_path)?.session.model;
            let mut last = None;
            for id in &new_ids {
                let init = DecoderInit::Fresh(config.decoder.clone());
                let mut s = Session::stage3(&model, id, init, &config.train)?;
                run_session(
                    &mut s,
                    &train,
                    steps.stage3,
                    &dir.join(format!("stage3_{id}.csv")),
                    &format!("stage3 {id}"),
                )?;
                model = s.model.clone();
                last = Some(s);
            }
            save(&last.expect("at least one new speaker"), config, &dir.join("stage3.ckpt"))?;
        }
    }
    eprintln!("training done in {:.1?}", t.elapsed());
    Ok(())
}

/// A checkpoint file or a directory of single-speaker checkpoints.
pub enum LoadedModel {
    Shared(MultiHeadModel),
    Bank(EaeBank),
}

impl LoadedModel {
    pub fn as_voice_model(&self) -> &dyn VoiceModel {
        match self {
            LoadedModel::Shared(m) => m,
            LoadedModel::Bank(b) => b,
        }
    }
}

pub fn load_model(path: &Path) -> Result<LoadedModel, Failure> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
            .collect();
        entries.sort();
        if entries.is_empty() {
            return Err(Failure::usage(format!("no checkpoints in {}", path.display())));
        }
        let mut models = BTreeMap::new();
        for p in entries {
            let m = load_checkpoint(&p)?.session.model;
            let ids = m.speaker_ids();
            if ids.len() != 1 {
                return Err(Failure::usage(format!("{} is not a single-speaker checkpoint", p.display())));
            }
            models.insert(ids[0].clone(), m);
        }
        Ok(LoadedModel::Bank(EaeBank::new(models)?))
    } else if path.exists() {
        Ok(LoadedModel::Shared(load_checkpoint(path)?.session.model))
    } else {
        Err(Failure::usage(format!("no checkpoint at {}", path.display())))
    }
}

fn is_input(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav") || e.eq_ignore_ascii_case("mel"))
}

fn cmd_convert(
    config: &RunConfig,
    checkpoint: &Path,
    input: &Path,
    target: &str,
    emit_audio: bool,
    chunk_frames: Option<usize>,
    out: &Path,
) -> CmdResult {
    let loaded = load_model(checkpoint)?;
    let model = loaded.as_voice_model();
    if !model.targets().iter().any(|t| t == target) {
        return Err(Failure::usage(format!(
            "unknown target {target:?}; the model has decoders for {}",
            model.targets().join(", ")
        )));
    }
    let frontend = config.frontend.build()?;
    let inputs: Vec<PathBuf> = if input.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(input)
            .map_err(|e| Error::io(input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| is_input(p))
            .collect();
        v.sort();
        v
    } else {
        vec![input.to_path_buf()]
    };
    if inputs.is_empty() {
        return Err(Failure::usage(format!("no .wav or .mel inputs in {}", input.display())));
    }
    let hash = model.digest();
    for path in inputs {
        let request = ConversionRequest {
            source: Source::load(&path)?,
            target: target.to_string(),
            emit_audio,
            chunk_frames,
        };
        let output = convert_utterance(model, &frontend, &request)?;
        let stem =
            path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "converted".into());
        let sidecar = Sidecar {
            source: path.display().to_string(),
            target: target.to_string(),
            model_hash: hash.clone(),
            checkpoint: checkpoint.display().to_string(),
        };
        let written = write_outputs(out, &format!("{stem}_to_{target}"), &output, &sidecar)?;
        eprintln!("{} -> {}", path.display(), written.mel.display());
    }
    Ok(())
}

/// Metric differences `first - second`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Deltas {
    pub probe_leakage: f64,
    pub sca_proxy: f64,
    pub recon_mse: f64,
    pub cycle_residual: f64,
}

impl Deltas {
    fn between(a: &EvalReport, b: &EvalReport) -> Self {
        Self {
            probe_leakage: a.probe_leakage - b.probe_leakage,
            sca_proxy: a.sca_proxy - b.sca_proxy,
            recon_mse: a.recon_mse - b.recon_mse,
            cycle_residual: a.cycle_residual - b.cycle_residual,
        }
    }
}

/// Per-metric medians over seeds, and for comparisons the number of seeds in
/// which the first model is better (lower leakage, higher SCA, lower
/// reconstruction error, lower residual).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub seeds: u64,
    pub median: Deltas,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wins: Option<BTreeMap<String, u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub majority: Option<BTreeMap<String, bool>>,
}

#[derive(Debug, Clone, Serialize)]
struct EvaluationOutput {
    checkpoint: String,
    reports: Vec<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    compare: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    compare_reports: Option<Vec<EvalReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    deltas: Option<Vec<Deltas>>,
    summary: Summary,
    run_config: serde_json::Value,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn medians(rows: &[Deltas]) -> Deltas {
    let col = |f: fn(&Deltas) -> f64| median(rows.iter().map(f).collect());
    Deltas {
        probe_leakage: col(|d| d.probe_leakage),
        sca_proxy: col(|d| d.sca_proxy),
        recon_mse: col(|d| d.recon_mse),
        cycle_residual: col(|d| d.cycle_residual),
    }
}

fn as_row(r: &EvalReport) -> Deltas {
    Deltas {
        probe_leakage: r.probe_leakage,
        sca_proxy: r.sca_proxy,
        recon_mse: r.recon_mse,
        cycle_residual: r.cycle_residual,
    }
}

fn evaluate_model(
    model: &dyn VoiceModel,
    eval: &MelCorpus,
    reference: &MelCorpus,
    config: &RunConfig,
    seeds: u64,
) -> Result<Vec<EvalReport>, Failure> {
    let targets = model.targets();
    let ids: Vec<&str> = targets.iter().map(|s| s.as_str()).collect();
    let corpus = eval
        .subset(&ids)
        .map_err(|e| Failure::usage(format!("eval corpus lacks the model's speakers: {e}")))?;
    (0..seeds)
        .map(|k| {
            let cfg = EvalConfig { seed: config.eval.seed + k, ..config.eval.clone() };
            eprintln!("evaluating seed {}", cfg.seed);
            Ok(full_report(model, &corpus, reference, &cfg)?)
        })
        .collect()
}

fn cmd_evaluate(
    config: &RunConfig,
    checkpoint: &Path,
    compare: Option<&Path>,
    seeds: u64,
    out: &Path,
) -> CmdResult {
    if seeds == 0 {
        return Err(Failure::usage("--seeds must be at least 1"));
    }
    let frontend = config.frontend.build()?;
    let eval = load_split(config, &frontend, Split::Eval)?;
    let reference = load_split(config, &frontend, Split::Train)?;
    let first = load_model(checkpoint)?;
    let reports = evaluate_model(first.as_voice_model(), &eval, &reference, config, seeds)?;
    let mut output = EvaluationOutput {
        checkpoint: checkpoint.display().to_string(),
        summary: Summary {
            seeds,
            median: medians(&reports.iter().map(as_row).collect::<Vec<_>>()),
            wins: None,
            majority: None,
        },
        reports,
        compare: None,
        compare_reports: None,
        deltas: None,
        run_config: config.to_json(),
    };
    if let Some(other) = compare {
        let second = load_model(other)?;
        let theirs = evaluate_model(second.as_voice_model(), &eval, &reference, config, seeds)?;
        let deltas: Vec<Deltas> =
            output.reports.iter().zip(&theirs).map(|(a, b)| Deltas::between(a, b)).collect();
        let count = |f: fn(&Deltas) -> bool| deltas.iter().filter(|d| f(d)).count() as u64;
        let wins = BTreeMap::from([
            ("probe_leakage".to_string(), count(|d| d.probe_leakage < 0.0)),
            ("sca_proxy".to_string(), count(|d| d.sca_proxy > 0.0)),
            ("recon_mse".to_string(), count(|d| d.recon_mse < 0.0)),
            ("cycle_residual".to_string(), count(|d| d.cycle_residual < 0.0)),
        ]);
        output.summary.majority = Some(wins.iter().map(|(k, &w)| (k.clone(), 2 * w > seeds)).collect());
        output.summary.wins = Some(wins);
        output.summary.median = medians(&deltas);
        output.compare = Some(other.display().to_string());
        output.compare_reports = Some(theirs);
        output.deltas = Some(deltas);
    }
    let mut text = String::new();
    for (k, r) in output.reports.iter().enumerate() {
        let _ = write!(
            text,
            "seed {}: leakage {:.3} (chance {:.3}) sca {:.3} recon {:.4} residual {:.4}",
            config.eval.seed + k as u64,
            r.probe_leakage,
            r.chance_level,
            r.sca_proxy,
            r.recon_mse,
            r.cycle_residual
        );
        if let Some(d) = output.deltas.as_ref().map(|d| &d[k]) {
            let _ = write!(
                text,
                " | delta leakage {:+.3} sca {:+.3} recon {:+.4} residual {:+.4}",
                d.probe_leakage, d.sca_proxy, d.recon_mse, d.cycle_residual
            );
        }
        text.push('\n');
    }
    eprint!("{text}");
    let json = serde_json::to_string_pretty(&output).map_err(Error::from)?;
    write_file(out, &json)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn cmd_verify(inject_gradient_bug: bool) -> CmdResult {
    let results = verify::run_all(inject_gradient_bug);
    print!("{}", verify::format_table(&results));
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::check(format!("failed checks: {}", failed.join(", "))))
    }
}
