use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{optimizer_step, AdamState};
use super::config::{Reduction, TrainConfig, Variant};
use super::data::MelCorpus;
use super::loss::LossReport;
use super::model::MultiHeadModel;
use crate::error::{Error, Result};
use crate::net::{
    gradient, stack_segments, Bound, DecoderConfig, DecoderParams, EncoderConfig, EncoderParams, GradCheck,
    GradCheckReport, Mat, Mode, NormStats, ParamSet, Tape, Var,
};
use crate::seeds::{key, mix_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    /// Per-speaker autoencoders.
    #[serde(rename = "1")]
    One,
    /// Shared encoder against frozen decoders.
    #[serde(rename = "2")]
    Two,
    /// New or finetuned decoders behind the frozen shared encoder.
    #[serde(rename = "3")]
    Three,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
            Stage::Three => 3,
        }
    }
}

/// The parameters a session updates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trainable {
    All,
    Encoder,
    Decoder(String),
}

/// How a stage-3 decoder starts.
#[derive(Debug, Clone, PartialEq)]
pub enum DecoderInit {
    Fresh(DecoderConfig),
    /// Copy of an existing decoder of the model.
    Finetune(String),
}

const ENC: &str = "enc/";

fn dec_prefix(id: &str) -> String {
    format!("dec/{id}/")
}

/// Mutable training state: everything needed to resume bit-exactly.
#[derive(Debug, Clone)]
pub struct Session {
    pub stage: Stage,
    pub variant: Variant,
    pub config: TrainConfig,
    pub model: MultiHeadModel,
    pub trainable: Trainable,
    pub optimizer: AdamState,
    pub rng: ChaCha8Rng,
    pub step: u64,
    pub rejected_steps: u64,
}

/// Graph nodes of one objective evaluation.
struct Terms {
    rec: BTreeMap<String, Var>,
    rec_total: Var,
    cyc: Option<Var>,
    total: Var,
    bn_stats: BTreeMap<String, Vec<NormStats>>,
}

fn sq_scale(m: &Mat, reduction: Reduction) -> f64 {
    match reduction {
        Reduction::Mean => 1.0 / m.len().max(1) as f64,
        Reduction::Sum => 1.0,
    }
}

fn sum_vars(tape: &mut Tape, vars: &[Var]) -> Result<Var> {
    let mut it = vars.iter().copied();
    let first = it.next().ok_or_else(|| Error::InvalidArgument("nothing to sum".into()))?;
    it.try_fold(first, |acc, v| tape.add(acc, v))
}

/// Records reconstruction and (for shared-encoder variants with two or more
/// decoders in the batch) cycle terms.
#[allow(clippy::too_many_arguments)]
fn objective(
    tape: &mut Tape,
    model: &MultiHeadModel,
    enc_w: &Bound,
    dec_w: &BTreeMap<String, (Bound, Mode)>,
    batch: &BTreeMap<String, Mat>,
    frames: usize,
    variant: Variant,
    alpha: f64,
    reduction: Reduction,
    cycle: bool,
) -> Result<Terms> {
    let stride = model.stride();
    let code_frames = frames / stride;
    let mut rec = BTreeMap::new();
    let mut bn_stats = BTreeMap::new();
    let mut codes = BTreeMap::new();
    let mut inputs = BTreeMap::new();
    for (id, m) in batch {
        let x = tape.constant(m.clone());
        let z = model.encoder.graph(tape, enc_w, x, frames)?;
        let (w, mode) = dec_w.get(id).ok_or_else(|| Error::UnknownSpeaker(id.clone()))?;
        let out = model.decoder(id)?.graph(tape, w, z, code_frames, *mode)?;
        let term = tape.squared_error(out.mel, x, sq_scale(m, reduction))?;
        rec.insert(id.clone(), term);
        if *mode == Mode::Train {
            bn_stats.insert(id.clone(), out.batch_stats);
        }
        codes.insert(id.clone(), z);
        inputs.insert(id.clone(), x);
    }
    let rec_vars: Vec<Var> = rec.values().copied().collect();
    let rec_total = sum_vars(tape, &rec_vars)?;
    let ids: Vec<&String> = batch.keys().collect();
    let cyc = if cycle && ids.len() >= 2 {
        let mut per_source = Vec::new();
        for &i in &ids {
            let z_i = codes[i];
            let mut terms = Vec::new();
            for &j in ids.iter().filter(|&&j| j != i) {
                // cross reconstruction: code of speaker i through decoder j
                let (wj, mode_j) = &dec_w[j];
                let cross = model.decoder(j)?.graph(tape, wj, z_i, code_frames, *mode_j)?;
                let z_hat = model.encoder.graph(tape, enc_w, cross.mel, frames)?;
                let term = match variant {
                    Variant::DataCycle => {
                        let (wi, mode_i) = &dec_w[i];
                        let back = model.decoder(i)?.graph(tape, wi, z_hat, code_frames, *mode_i)?;
                        let scale = sq_scale(&batch[i], reduction);
                        tape.squared_error(back.mel, inputs[i], scale)?
                    }
                    _ => {
                        let scale = sq_scale(tape.value(z_i), reduction);
                        tape.squared_error(z_hat, z_i, scale)?
                    }
                };
                terms.push(term);
            }
            let n = terms.len() as f64;
            let s = sum_vars(tape, &terms)?;
            per_source.push(tape.scale(s, 1.0 / n));
        }
        Some(sum_vars(tape, &per_source)?)
    } else {
        None
    };
    let total = match cyc {
        Some(c) if alpha != 0.0 => {
            let weighted = tape.scale(c, alpha);
            tape.add(rec_total, weighted)?
        }
        _ => rec_total,
    };
    Ok(Terms { rec, rec_total, cyc, total, bn_stats })
}

impl Session {
    /// A fresh single-speaker autoencoder for `id`.
    pub fn stage1(
        id: &str,
        encoder: &EncoderConfig,
        decoder: &DecoderConfig,
        config: &TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let k = key(id);
        let enc = EncoderParams::init(encoder, mix_seed(config.seed, k, 1))?;
        let dec = DecoderParams::init(decoder, mix_seed(config.seed, k, 2))?;
        let model = MultiHeadModel::new(enc, BTreeMap::from([(id.to_string(), dec)]))?;
        Self::start(Stage::One, Variant::Vanilla, config, model, Trainable::All, mix_seed(config.seed, k, 3))
    }

    /// A freshly initialized shared encoder in front of frozen decoders.
    pub fn stage2(
        decoders: BTreeMap<String, DecoderParams>,
        encoder: &EncoderConfig,
        config: &TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        if decoders.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "shared-encoder training needs at least 2 decoders, got {}",
                decoders.len()
            )));
        }
        if !config.variant.uses_shared_encoder() {
            return Err(Error::InvalidArgument("the vanilla variant has no shared-encoder stage".into()));
        }
        let k = key("stage2");
        let enc = EncoderParams::init(encoder, mix_seed(config.seed, k, 1))?;
        let mut model = MultiHeadModel::new(enc, decoders)?;
        model.frozen.values_mut().for_each(|f| *f = true);
        Self::start(
            Stage::Two,
            config.variant,
            config,
            model,
            Trainable::Encoder,
            mix_seed(config.seed, k, 3),
        )
    }

    /// Trains decoder `id` behind the frozen encoder of `base`.
    pub fn stage3(base: &MultiHeadModel, id: &str, init: DecoderInit, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let k = key(id);
        let dec = match init {
            DecoderInit::Fresh(cfg) => DecoderParams::init(&cfg, mix_seed(config.seed, k, 4))?,
            DecoderInit::Finetune(from) => base.decoder(&from)?.clone(),
        };
        let mut decoders = base.decoders.clone();
        decoders.insert(id.to_string(), dec);
        let mut model = MultiHeadModel::new(base.encoder.clone(), decoders)?;
        model.encoder_frozen = true;
        for (name, f) in model.frozen.iter_mut() {
            *f = name != id;
        }
        Self::start(
            Stage::Three,
            config.variant,
            config,
            model,
            Trainable::Decoder(id.to_string()),
            mix_seed(config.seed, k, 5),
        )
    }

    fn start(
        stage: Stage,
        variant: Variant,
        config: &TrainConfig,
        model: MultiHeadModel,
        trainable: Trainable,
        rng_seed: u64,
    ) -> Result<Self> {
        if !config.crop_frames.is_multiple_of(model.stride()) {
            return Err(Error::Config(format!(
                "crop_frames {} is not a multiple of the code stride {}",
                config.crop_frames,
                model.stride()
            )));
        }
        let mut s = Self {
            stage,
            variant,
            config: config.clone(),
            model,
            trainable,
            optimizer: AdamState::new(&ParamSet::new()),
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            step: 0,
            rejected_steps: 0,
        };
        s.optimizer = AdamState::new(&s.trainable_params());
        Ok(s)
    }

    /// Speakers drawn in every batch.
    pub fn batch_speakers(&self) -> Vec<String> {
        match &self.trainable {
            Trainable::Decoder(id) => vec![id.clone()],
            _ => self.model.speaker_ids(),
        }
    }

    fn trains_encoder(&self) -> bool {
        matches!(self.trainable, Trainable::All | Trainable::Encoder)
    }

    fn trains_decoder(&self, id: &str) -> bool {
        match &self.trainable {
            Trainable::All => true,
            Trainable::Encoder => false,
            Trainable::Decoder(d) => d == id,
        }
    }

    /// The updated arrays, keyed `enc/<name>` and `dec/<speaker>/<name>`.
    pub fn trainable_params(&self) -> ParamSet {
        let mut p = ParamSet::new();
        if self.trains_encoder() {
            for (k, v) in self.model.encoder.params.iter() {
                p.insert(format!("{ENC}{k}"), v.clone());
            }
        }
        for (id, d) in &self.model.decoders {
            if self.trains_decoder(id) {
                for (k, v) in d.params.iter() {
                    p.insert(format!("{}{k}", dec_prefix(id)), v.clone());
                }
            }
        }
        p
    }

    fn store_trainable(&mut self, p: &ParamSet) {
        for (name, v) in p.iter() {
            if let Some(k) = name.strip_prefix(ENC) {
                *self.model.encoder.params.get_mut(k).expect("own layout") = v.clone();
            } else if let Some(rest) = name.strip_prefix("dec/") {
                let (id, k) = rest.split_once('/').expect("own layout");
                let d = self.model.decoders.get_mut(id).expect("own layout");
                *d.params.get_mut(k).expect("own layout") = v.clone();
            }
        }
    }

    /// Digests of every part this session must leave untouched.
    pub fn frozen_digests(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        if !self.trains_encoder() {
            out.insert("encoder".to_string(), self.model.encoder_digest());
        }
        for id in self.model.decoders.keys() {
            if !self.trains_decoder(id) {
                let d = self.model.decoder_digest(id).expect("own key");
                out.insert(format!("decoder {id}"), d);
            }
        }
        out
    }

    /// Draws `batch_segments` random crops per batch speaker, stacked side by side.
    pub fn draw_batch(&mut self, data: &MelCorpus) -> Result<BTreeMap<String, Mat>> {
        let mut batch = BTreeMap::new();
        for id in self.batch_speakers() {
            let crops = (0..self.config.batch_segments)
                .map(|_| data.crop(&mut self.rng, &id, self.config.crop_frames))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&Mat> = crops.iter().collect();
            batch.insert(id, stack_segments(&refs)?.0);
        }
        Ok(batch)
    }

    /// Records the session objective on `tape`, binding trainable arrays
    /// through `bound` and everything else as constants.
    fn record(&self, tape: &mut Tape, bound: &Bound, batch: &BTreeMap<String, Mat>) -> Result<Terms> {
        let enc_w = if self.trains_encoder() {
            bound.with_prefix(ENC)
        } else {
            self.model.encoder.params.bind(tape, false)
        };
        let mut dec_w = BTreeMap::new();
        for (id, d) in &self.model.decoders {
            let entry = if self.trains_decoder(id) {
                (bound.with_prefix(&dec_prefix(id)), Mode::Train)
            } else {
                (d.params.bind(tape, false), Mode::Eval)
            };
            dec_w.insert(id.clone(), entry);
        }
        objective(
            tape,
            &self.model,
            &enc_w,
            &dec_w,
            batch,
            self.config.crop_frames,
            self.variant,
            self.config.effective_alpha(),
            self.config.reduction,
            self.stage == Stage::Two,
        )
    }

    /// The training objective on `batch` as a function of
    /// [`Session::trainable_params`], for gradient checks.
    pub fn objective_fn<'a>(
        &'a self,
        batch: &'a BTreeMap<String, Mat>,
    ) -> impl Fn(&mut Tape, &Bound) -> Result<Var> + 'a {
        move |tape, bound| Ok(self.record(tape, bound, batch)?.total)
    }

    /// Checks the analytic gradient of the objective on `batch` against
    /// finite differences. `tamper` may alter the analytic gradient first
    /// (used to confirm the check catches a wrong gradient).
    pub fn grad_check(
        &self,
        batch: &BTreeMap<String, Mat>,
        check: &GradCheck,
        tamper: Option<&dyn Fn(&mut ParamSet)>,
    ) -> Result<GradCheckReport> {
        let params = self.trainable_params();
        let f = self.objective_fn(batch);
        let (_, mut g) = gradient(&params, &f)?;
        if let Some(t) = tamper {
            t(&mut g);
        }
        check.compare(&params, &g, &f)
    }

    /// One optimization step on a freshly drawn batch.
    pub fn step(&mut self, data: &MelCorpus) -> Result<LossReport> {
        let batch = self.draw_batch(data)?;
        let params = self.trainable_params();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, true);
        let terms = self.record(&mut tape, &bound, &batch)?;
        let report = LossReport {
            step: self.step,
            variant: self.variant,
            l_rec: tape.scalar(terms.rec_total),
            l_cyc: terms.cyc.map_or(0.0, |c| tape.scalar(c)),
            l_total: tape.scalar(terms.total),
            per_speaker: terms.rec.iter().map(|(k, v)| (k.clone(), tape.scalar(*v))).collect(),
        };
        let applied = match tape.backward(terms.total) {
            Ok(grads) => {
                let g = bound.grads(&grads, &params);
                let mut updated = params;
                match optimizer_step(
                    &mut updated,
                    &g,
                    &mut self.optimizer,
                    &self.config.optimizer,
                    self.config.learning_rate,
                ) {
                    Ok(()) => {
                        self.store_trainable(&updated);
                        true
                    }
                    Err(Error::NonFinite(_)) => false,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::NonFinite(_)) => false,
            Err(e) => return Err(e),
        };
        if applied {
            for (id, stats) in &terms.bn_stats {
                self.model.decoders.get_mut(id).expect("batch speaker").update_running_stats(stats);
            }
        } else {
            self.rejected_steps += 1;
            eprintln!("step {} rejected: non-finite loss or gradient", self.step);
        }
        self.step += 1;
        Ok(report)
    }

    /// Runs `steps` steps, calling `on_step` after each, and checks that
    /// frozen parts were not modified.
    pub fn run<F>(&mut self, data: &MelCorpus, steps: u64, mut on_step: F) -> Result<Vec<LossReport>>
    where
        F: FnMut(&LossReport) -> Result<()>,
    {
        for id in self.batch_speakers() {
            data.utterances(&id)?;
        }
        let frozen = self.frozen_digests();
        let mut reports = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let r = self.step(data)?;
            on_step(&r)?;
            reports.push(r);
        }
        if self.frozen_digests() != frozen {
            return Err(Error::InvalidArgument("frozen parameters changed during training".into()));
        }
        Ok(reports)
    }
}

/// Stage 1: trains the autoencoder of speaker `id` on its own data.
pub fn stage1_train(
    data: &MelCorpus,
    id: &str,
    encoder: &EncoderConfig,
    decoder: &DecoderConfig,
    config: &TrainConfig,
) -> Result<(MultiHeadModel, Vec<LossReport>)> {
    let mut s = Session::stage1(id, encoder, decoder, config)?;
    let reports = s.run(data, config.steps.stage1, |_| Ok(()))?;
    Ok((s.model, reports))
}

/// Stage 2: trains a fresh shared encoder against the given frozen decoders.
pub fn stage2_train(
    decoders: BTreeMap<String, DecoderParams>,
    data: &MelCorpus,
    encoder: &EncoderConfig,
    config: &TrainConfig,
) -> Result<(MultiHeadModel, Vec<LossReport>)> {
    let mut s = Session::stage2(decoders, encoder, config)?;
    let reports = s.run(data, config.steps.stage2, |_| Ok(()))?;
    Ok((s.model, reports))
}

/// Stage 3: trains decoder `id` behind the frozen shared encoder.
pub fn stage3_train(
    base: &MultiHeadModel,
    id: &str,
    init: DecoderInit,
    data: &MelCorpus,
    config: &TrainConfig,
) -> Result<(MultiHeadModel, Vec<LossReport>)> {
    let mut s = Session::stage3(base, id, init, config)?;
    let reports = s.run(data, config.steps.stage3, |_| Ok(()))?;
    Ok((s.model, reports))
}

/// Shared-encoder losses of `model` on one batch (`speaker -> stacked
/// segments of `frames` frames`), without updating anything. Decoders run in
/// inference mode.
pub fn shared_losses(
    model: &MultiHeadModel,
    batch: &BTreeMap<String, Mat>,
    frames: usize,
    config: &TrainConfig,
) -> Result<LossReport> {
    let mut tape = Tape::new();
    let enc_w = model.encoder.params.bind(&mut tape, false);
    let dec_w = model
        .decoders
        .iter()
        .map(|(id, d)| (id.clone(), (d.params.bind(&mut tape, false), Mode::Eval)))
        .collect();
    let alpha = config.effective_alpha();
    let terms = objective(
        &mut tape,
        model,
        &enc_w,
        &dec_w,
        batch,
        frames,
        config.variant,
        alpha,
        config.reduction,
        true,
    )?;
    Ok(LossReport {
        step: 0,
        variant: config.variant,
        l_rec: tape.scalar(terms.rec_total),
        l_cyc: terms.cyc.map_or(0.0, |c| tape.scalar(c)),
        l_total: tape.scalar(terms.total),
        per_speaker: terms.rec.iter().map(|(k, v)| (k.clone(), tape.scalar(*v))).collect(),
    })
}

/// The mel-space cycle penalty of the data-cycle variant on one batch.
pub fn data_cycle_step(
    model: &MultiHeadModel,
    batch: &BTreeMap<String, Mat>,
    frames: usize,
    config: &TrainConfig,
) -> Result<LossReport> {
    let config = TrainConfig { variant: Variant::DataCycle, ..config.clone() };
    if batch.len() < 2 {
        return Err(Error::InvalidArgument("the data cycle needs at least 2 speakers".into()));
    }
    shared_losses(model, batch, frames, &config)
}
