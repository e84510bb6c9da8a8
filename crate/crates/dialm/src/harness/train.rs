//! Training loops for the three regimes, epoch-level checkpointing, and the
//! model-backed evaluation path.
//!
//! Every random draw comes from a stream keyed by (run seed, purpose, epoch,
//! index), so skipping a disabled component consumes nothing from the
//! others, and a run resumed at an epoch boundary replays the remaining
//! epochs exactly.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    encode, pooled_representation, EncoderConfig, EncoderState,
};
use crate::eval::{evaluate_instances, BucketSpec, CoreMetrics, MetricReport, RankingInstance};
use crate::objectives::{
    dap_total, dm_loss_binary, dm_loss_multichoice, dm_score, mlm_loss, mtf_total, nsp_loss,
    permuted_slot_representations, sbr_loss, uor_logits, uor_loss, DapBatch, HeadConfig,
    HeadState, LossBreakdown, LossWeights, MtfBatch,
};
use crate::optim::{AdamW, AdamWConfig};
use crate::rng::{self, derive_seed};
use crate::tensor::{Tape, TensorId};
use crate::text::{
    apply_mlm_mask, assemble_sequence, make_nsp_pair, nsp_positive, permute_utterances,
    AssembleOptions, DialogueExample, Vocab,
};
use crate::{Error, Result};

use super::checkpoint::{check_architecture, Checkpoint, OptimSnapshot};
use super::config::{Regime, RunConfig, TaskKind};

/// Per-pair stream indexes are `example_position * PAIR_STRIDE + candidate`,
/// so candidate lists are capped at this size.
pub const PAIR_STRIDE: u64 = 1024;

/// One optimizer step: the composite loss and its component breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub loss: LossBreakdown,
}

/// One completed epoch: validation metrics when the regime evaluates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub selection: Option<f64>,
    pub val: Option<CoreMetrics>,
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step(StepLog),
    Epoch(EpochLog),
}

/// Final state of a run. For the fine-tuning regimes `checkpoint` is the
/// best validation epoch; for post-training it is the final state.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    /// Validation report of the best epoch.
    pub report: Option<MetricReport>,
}

/// Receives log lines and epoch checkpoints as they happen, so an aborted
/// run still leaves its last completed epoch on disk.
pub trait RunObserver {
    fn on_step(&mut self, _step: &StepLog) -> Result<()> {
        Ok(())
    }
    fn on_epoch(&mut self, _epoch: &EpochLog, _checkpoint: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

/// Discards everything.
pub struct NoopObserver;

impl RunObserver for NoopObserver {}

/// Streams log lines to `<dir>/log.jsonl` (flushed per line) and keeps
/// `<dir>/last.ckpt` at the most recent completed epoch. Checkpoint saves
/// are atomic renames, so an abort mid-epoch leaves the previous epoch's
/// file intact.
pub struct DirObserver {
    dir: std::path::PathBuf,
    log: std::io::BufWriter<std::fs::File>,
}

impl DirObserver {
    pub fn create(dir: &std::path::Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let log = std::io::BufWriter::new(std::fs::File::create(dir.join("log.jsonl"))?);
        Ok(DirObserver { dir: dir.to_path_buf(), log })
    }

    pub fn dir(&self) -> &std::path::Path {
        &self.dir
    }

    fn write_record(&mut self, record: &LogRecord) -> Result<()> {
        use std::io::Write;
        let line = serde_json::to_string(record)?;
        writeln!(self.log, "{}", line)?;
        self.log.flush()?;
        Ok(())
    }
}

impl RunObserver for DirObserver {
    fn on_step(&mut self, step: &StepLog) -> Result<()> {
        self.write_record(&LogRecord::Step(*step))
    }

    fn on_epoch(&mut self, epoch: &EpochLog, checkpoint: &Checkpoint) -> Result<()> {
        self.write_record(&LogRecord::Epoch(epoch.clone()))?;
        super::checkpoint::save(checkpoint, &self.dir.join("last.ckpt"))
    }
}

// ── corpus validation ───────────────────────────────────────────────────

fn validate_posttrain_corpus(corpus: &[DialogueExample]) -> Result<()> {
    if corpus.len() < 2 {
        return Err(Error::Data(format!(
            "{} dialogues; next-sentence pairing needs at least 2",
            corpus.len()
        )));
    }
    for ex in corpus {
        ex.validate()?;
        if ex.positive_index().is_none() {
            return Err(Error::Data(format!("{}: no positive response", ex.id)));
        }
    }
    Ok(())
}

fn validate_finetune_corpus(corpus: &[DialogueExample], task: TaskKind) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::Data("empty fine-tuning corpus".into()));
    }
    for ex in corpus {
        ex.validate()?;
        if ex.candidates.is_empty() {
            return Err(Error::Data(format!("{}: no candidates", ex.id)));
        }
        if ex.candidates.len() as u64 > PAIR_STRIDE {
            return Err(Error::Capacity(format!(
                "{}: {} candidates exceed the per-example cap {}",
                ex.id,
                ex.candidates.len(),
                PAIR_STRIDE
            )));
        }
        if task == TaskKind::Multichoice {
            if ex.candidates.len() < 2 {
                return Err(Error::Data(format!(
                    "{}: multichoice needs at least 2 candidates",
                    ex.id
                )));
            }
            if ex.positive_index().is_none() {
                return Err(Error::Data(format!("{}: multichoice needs a positive", ex.id)));
            }
        }
    }
    Ok(())
}

fn corpus_texts(corpus: &[DialogueExample]) -> impl Iterator<Item = &str> {
    corpus.iter().flat_map(|ex| {
        ex.context
            .iter()
            .map(|u| u.text.as_str())
            .chain(ex.candidates.iter().map(|c| c.text.as_str()))
    })
}

// ── model construction ──────────────────────────────────────────────────

/// Resolves `vocab_size` 0 against the actual vocabulary and derives the
/// parameter-init seed from the run seed, so distinct run seeds give
/// distinct initializations without a separate knob.
fn resolve_encoder_config(cfg: &RunConfig, vocab: &Vocab) -> Result<EncoderConfig> {
    let mut ec = cfg.encoder;
    if ec.vocab_size == 0 {
        ec.vocab_size = vocab.len();
    } else if ec.vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "encoder vocab_size {} but the vocabulary has {} tokens",
            ec.vocab_size,
            vocab.len()
        )));
    }
    ec.seed = derive_seed(cfg.seed, "encoder-init", 0, 0);
    ec.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(ec)
}

fn fresh_model(cfg: &RunConfig, vocab: &Vocab) -> Result<(EncoderState, HeadState)> {
    let ec = resolve_encoder_config(cfg, vocab)?;
    let enc = EncoderState::init(ec)?;
    let heads = HeadState::init(
        HeadConfig::new(ec.hidden, ec.vocab_size),
        derive_seed(cfg.seed, "head-init", 0, 0),
    )?;
    Ok((enc, heads))
}

fn fresh_optimizer(cfg: &RunConfig) -> AdamW {
    AdamW::new(AdamWConfig {
        lr: cfg.learning_rate,
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    })
}

// ── the step engine ─────────────────────────────────────────────────────

struct Trainer<'a> {
    cfg: &'a RunConfig,
    /// Effective composite weights for this run (the plain fine-tuning
    /// regimes force the structural terms to zero).
    weights: LossWeights,
    opts: AssembleOptions,
    vocab: &'a Vocab,
    enc: EncoderState,
    heads: HeadState,
    opt: AdamW,
    step: u64,
}

impl<'a> Trainer<'a> {
    fn bind(&self, tape: &mut Tape<f32>) -> BTreeMap<String, TensorId> {
        let mut vars = self.enc.bind(tape);
        self.heads.bind_into(tape, &mut vars);
        vars
    }

    /// One optimizer update from the tape's accumulated gradients.
    /// Parameters that never entered the graph are left untouched.
    fn apply(&mut self, tape: &Tape<f32>, vars: &BTreeMap<String, TensorId>) -> Result<()> {
        self.opt.begin_step();
        for (name, &id) in vars {
            let Some(grad) = tape.grad(id) else { continue };
            let theta = match self.enc.param_mut(name) {
                Some(t) => t.data_mut(),
                None => self
                    .heads
                    .param_mut(name)
                    .ok_or_else(|| Error::Contract(format!("unknown parameter {}", name)))?
                    .data_mut(),
            };
            self.opt.update(name, theta, grad)?;
        }
        Ok(())
    }

    fn dropout_rng(&self, epoch: u64) -> Option<rand_chacha::ChaCha8Rng> {
        (self.enc.config.dropout > 0.0)
            .then(|| rng::stream(self.cfg.seed, "dropout", epoch, self.step))
    }

    /// Post-training step over one batch of `(epoch position, example)`
    /// pairs: masked-language and next-sentence terms gated by λ₁, order
    /// restoration by λ₂, backbone regularization by λ₃. A disabled
    /// component draws no randomness.
    fn dap_step(
        &mut self,
        corpus: &[DialogueExample],
        batch: &[(u64, usize)],
        epoch: u64,
    ) -> Result<LossBreakdown> {
        let seed = self.cfg.seed;
        let mut tape = Tape::<f32>::new();
        let vars = self.bind(&mut tape);
        let mut dropout = self.dropout_rng(epoch);
        let mut parts = DapBatch::default();

        for &(pos, idx) in batch {
            let (base, nsp_label) = if self.weights.lambda1 > 0.0 {
                make_nsp_pair(
                    corpus,
                    idx,
                    self.vocab,
                    &self.opts,
                    None,
                    derive_seed(seed, "nsp", epoch, pos),
                )?
            } else {
                nsp_positive(corpus, idx, self.vocab, &self.opts, None)?
            };
            let (seq, order_labels) = if self.weights.lambda2 > 0.0 {
                permute_utterances(&base, self.cfg.delta, derive_seed(seed, "permute", epoch, pos))?
            } else {
                (base, Vec::new())
            };
            let (seq, mlm_labels) = if self.weights.lambda1 > 0.0 && self.cfg.mask_rate > 0.0 {
                apply_mlm_mask(&seq, self.cfg.mask_rate, self.vocab, derive_seed(seed, "mask", epoch, pos))?
            } else {
                let len = seq.ids.len();
                (seq, vec![0u32; len])
            };

            let out = encode(&mut tape, &vars, &self.enc.config, &seq, true, dropout.as_mut())?;
            if self.weights.lambda1 > 0.0 {
                parts.mlm.push(mlm_loss(&mut tape, &vars, out.hidden, &mlm_labels)?);
                let pooled = pooled_representation(&mut tape, &vars, out.hidden)?;
                parts.nsp.push(nsp_loss(&mut tape, &vars, pooled, nsp_label)?);
            }
            if !order_labels.is_empty() {
                let slots =
                    permuted_slot_representations(&mut tape, out.hidden, &seq, order_labels.len())?;
                parts.uor.push(uor_loss(&mut tape, &vars, slots, &order_labels)?);
            }
            if self.weights.lambda3 > 0.0 && !seq.triplets.is_empty() {
                parts.sbr.push(sbr_loss(&mut tape, out.hidden, &seq.triplets, seq.real_len)?);
            }
        }

        let (total, breakdown) = dap_total(&mut tape, &parts, &self.weights)?;
        self.finish_step(tape, total, &vars, breakdown)
    }

    /// Fine-tuning step: one scored pair per candidate, matching loss per
    /// the task shape, structural terms on the permuted context gated by
    /// β₂ and β₃.
    fn ft_step(
        &mut self,
        corpus: &[DialogueExample],
        batch: &[(u64, usize)],
        epoch: u64,
    ) -> Result<LossBreakdown> {
        let seed = self.cfg.seed;
        let mut tape = Tape::<f32>::new();
        let vars = self.bind(&mut tape);
        let mut dropout = self.dropout_rng(epoch);
        let mut parts = MtfBatch::default();

        for &(pos, idx) in batch {
            let ex = &corpus[idx];
            let mut mc_scores = Vec::new();
            for ci in 0..ex.candidates.len() {
                let pair = pos * PAIR_STRIDE + ci as u64;
                let base = assemble_sequence(ex, ci, self.vocab, &self.opts, None)?;
                let (seq, order_labels) = if self.weights.beta2 > 0.0 {
                    permute_utterances(
                        &base,
                        self.cfg.delta,
                        derive_seed(seed, "permute", epoch, pair),
                    )?
                } else {
                    (base, Vec::new())
                };

                let out =
                    encode(&mut tape, &vars, &self.enc.config, &seq, true, dropout.as_mut())?;
                let pooled = pooled_representation(&mut tape, &vars, out.hidden)?;
                match self.cfg.task {
                    TaskKind::Binary => {
                        parts.dm.push(dm_loss_binary(
                            &mut tape,
                            &vars,
                            pooled,
                            ex.candidates[ci].label,
                        )?);
                    }
                    TaskKind::Multichoice => {
                        mc_scores.push(dm_score(&mut tape, &vars, pooled)?);
                    }
                }
                if !order_labels.is_empty() {
                    let slots = permuted_slot_representations(
                        &mut tape,
                        out.hidden,
                        &seq,
                        order_labels.len(),
                    )?;
                    parts.uor.push(uor_loss(&mut tape, &vars, slots, &order_labels)?);
                }
                if self.weights.beta3 > 0.0 && !seq.triplets.is_empty() {
                    parts.sbr.push(sbr_loss(&mut tape, out.hidden, &seq.triplets, seq.real_len)?);
                }
            }
            if self.cfg.task == TaskKind::Multichoice {
                let correct = ex
                    .positive_index()
                    .ok_or_else(|| Error::Data(format!("{}: no positive", ex.id)))?;
                parts.dm.push(dm_loss_multichoice(&mut tape, &mc_scores, correct)?);
            }
        }

        let (total, breakdown) = mtf_total(&mut tape, &parts, &self.weights)?;
        self.finish_step(tape, total, &vars, breakdown)
    }

    fn finish_step(
        &mut self,
        mut tape: Tape<f32>,
        total: TensorId,
        vars: &BTreeMap<String, TensorId>,
        breakdown: LossBreakdown,
    ) -> Result<LossBreakdown> {
        if !breakdown.total.is_finite() {
            return Err(Error::NonFinite(format!(
                "step {}: composite loss {}",
                self.step, breakdown.total
            )));
        }
        tape.backward(total)?;
        self.apply(&tape, vars)?;
        self.step += 1;
        Ok(breakdown)
    }

    fn snapshot(&self, next_epoch: usize) -> Checkpoint {
        Checkpoint {
            encoder: self.enc.clone(),
            heads: self.heads.clone(),
            vocab: self.vocab.clone(),
            weights: self.weights,
            step: self.step,
            next_epoch,
            optimizer: Some(OptimSnapshot::capture(&self.opt)),
        }
    }
}

/// Deterministic epoch ordering of example indexes.
fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, "shuffle", epoch, 0));
    idx
}

// ── regime runners ──────────────────────────────────────────────────────

/// Self-supervised post-training over a dialogue corpus. `resume` continues
/// an earlier run from its next epoch boundary with the optimizer state
/// restored, replaying exactly what the uninterrupted run would have done.
pub fn run_posttrain(
    cfg: &RunConfig,
    corpus: &[DialogueExample],
    resume: Option<Checkpoint>,
    obs: &mut dyn RunObserver,
) -> Result<TrainOutput> {
    cfg.validate()?;
    validate_posttrain_corpus(corpus)?;

    let (vocab, enc, heads, opt, step, start_epoch) = match resume {
        Some(c) => {
            let ec = resolve_encoder_config(cfg, &c.vocab)?;
            check_architecture(&ec, &c.encoder.config)?;
            let opt = c
                .optimizer
                .as_ref()
                .ok_or_else(|| Error::Checkpoint("resume needs optimizer state".into()))?
                .restore();
            (c.vocab, c.encoder, c.heads, opt, c.step, c.next_epoch)
        }
        None => {
            let vocab = Vocab::build(corpus_texts(corpus), cfg.min_count)?;
            let (enc, heads) = fresh_model(cfg, &vocab)?;
            let opt = fresh_optimizer(cfg);
            (vocab, enc, heads, opt, 0, 0)
        }
    };

    let mut trainer = Trainer {
        cfg,
        weights: cfg.weights,
        opts: cfg.assemble_options(),
        vocab: &vocab,
        enc,
        heads,
        opt,
        step,
    };

    let epochs = cfg.resolved_epochs();
    let mut steps = Vec::new();
    let mut epoch_logs = Vec::new();
    for epoch in start_epoch..epochs {
        let order = epoch_order(corpus.len(), cfg.seed, epoch as u64);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(u64, usize)> = chunk
                .iter()
                .enumerate()
                .map(|(j, &idx)| ((bi * cfg.batch_size + j) as u64, idx))
                .collect();
            let step_id = trainer.step;
            let loss = trainer.dap_step(corpus, &batch, epoch as u64)?;
            let s = StepLog { step: step_id, epoch, loss };
            obs.on_step(&s)?;
            steps.push(s);
        }
        let e = EpochLog { epoch, selection: None, val: None };
        obs.on_epoch(&e, &trainer.snapshot(epoch + 1))?;
        epoch_logs.push(e);
    }

    Ok(TrainOutput {
        checkpoint: trainer.snapshot(epochs),
        steps,
        epochs: epoch_logs,
        best_epoch: None,
        report: None,
    })
}

/// Response-selection fine-tuning, from a post-trained checkpoint or from
/// random initialization. Structural terms are off: this is the plain
/// matching objective.
pub fn run_finetune(
    cfg: &RunConfig,
    train: &[DialogueExample],
    valid: &[DialogueExample],
    init: Option<Checkpoint>,
    obs: &mut dyn RunObserver,
) -> Result<TrainOutput> {
    let weights = LossWeights { beta2: 0.0, beta3: 0.0, ..cfg.weights };
    ft_run(cfg, weights, train, valid, init, obs)
}

/// Single-stage multi-task fine-tuning: matching plus order-restoration and
/// backbone terms on permuted contexts, weighted by the β knobs.
pub fn run_mtf(
    cfg: &RunConfig,
    train: &[DialogueExample],
    valid: &[DialogueExample],
    init: Option<Checkpoint>,
    obs: &mut dyn RunObserver,
) -> Result<TrainOutput> {
    ft_run(cfg, cfg.weights, train, valid, init, obs)
}

fn ft_run(
    cfg: &RunConfig,
    weights: LossWeights,
    train: &[DialogueExample],
    valid: &[DialogueExample],
    init: Option<Checkpoint>,
    obs: &mut dyn RunObserver,
) -> Result<TrainOutput> {
    cfg.validate()?;
    validate_finetune_corpus(train, cfg.task)?;
    if valid.is_empty() {
        return Err(Error::InvalidArgument("empty validation set".into()));
    }
    for ex in valid {
        ex.validate()?;
    }

    let (vocab, enc, heads) = match init {
        Some(c) => {
            let ec = resolve_encoder_config(cfg, &c.vocab)?;
            check_architecture(&ec, &c.encoder.config)?;
            let heads = if cfg.load_heads {
                c.heads
            } else {
                HeadState::init(
                    HeadConfig::new(ec.hidden, ec.vocab_size),
                    derive_seed(cfg.seed, "head-init", 0, 0),
                )?
            };
            (c.vocab, c.encoder, heads)
        }
        None => {
            let vocab = Vocab::build(corpus_texts(train), cfg.min_count)?;
            let (enc, heads) = fresh_model(cfg, &vocab)?;
            (vocab, enc, heads)
        }
    };

    let mut trainer = Trainer {
        cfg,
        weights,
        opts: cfg.assemble_options(),
        vocab: &vocab,
        enc,
        heads,
        opt: fresh_optimizer(cfg),
        step: 0,
    };

    let epochs = cfg.resolved_epochs();
    let mut steps = Vec::new();
    let mut epoch_logs = Vec::new();
    let mut best: Option<(usize, f64, Checkpoint, MetricReport)> = None;
    for epoch in 0..epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch as u64);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(u64, usize)> = chunk
                .iter()
                .enumerate()
                .map(|(j, &idx)| ((bi * cfg.batch_size + j) as u64, idx))
                .collect();
            let step_id = trainer.step;
            let loss = trainer.ft_step(train, &batch, epoch as u64)?;
            let s = StepLog { step: step_id, epoch, loss };
            obs.on_step(&s)?;
            steps.push(s);
        }

        let report = evaluate_model(
            &trainer.enc,
            &trainer.heads,
            &vocab,
            &trainer.opts,
            valid,
            &BucketSpec::default(),
            &cfg.recall_pairs,
        )?;
        let selection = match cfg.task {
            TaskKind::Binary => report.overall.p_at_1,
            TaskKind::Multichoice => report.overall.mrr,
        };
        let ckpt = trainer.snapshot(epoch + 1);
        let e = EpochLog { epoch, selection: Some(selection), val: Some(report.overall.clone()) };
        obs.on_epoch(&e, &ckpt)?;
        epoch_logs.push(e);
        if best.as_ref().map_or(true, |(_, s, _, _)| selection > *s) {
            best = Some((epoch, selection, ckpt, report));
        }
    }

    let (best_epoch, checkpoint, report) = match best {
        Some((e, _, c, r)) => (Some(e), c, Some(r)),
        // Zero epochs: the run is an identity on its initial state.
        None => (None, trainer.snapshot(0), None),
    };
    Ok(TrainOutput { checkpoint, steps, epochs: epoch_logs, best_epoch, report })
}

// ── model-backed evaluation ─────────────────────────────────────────────

/// Match scores for every candidate of one example, eval mode (no dropout,
/// no masking, no permutation).
pub fn score_example(
    enc: &EncoderState,
    heads: &HeadState,
    vocab: &Vocab,
    opts: &AssembleOptions,
    ex: &DialogueExample,
) -> Result<Vec<f64>> {
    let mut tape = Tape::<f32>::new();
    let mut vars = enc.bind(&mut tape);
    heads.bind_into(&mut tape, &mut vars);
    let mut scores = Vec::with_capacity(ex.candidates.len());
    for ci in 0..ex.candidates.len() {
        let seq = assemble_sequence(ex, ci, vocab, opts, None)?;
        let out = encode(&mut tape, &vars, &enc.config, &seq, false, None)?;
        let pooled = pooled_representation(&mut tape, &vars, out.hidden)?;
        let s = dm_score(&mut tape, &vars, pooled)?;
        scores.push(tape.value(s).data()[0] as f64);
    }
    Ok(scores)
}

/// Scores a dataset with the model and aggregates ranking metrics, with
/// turn- and length-bucketed sections. Examples are scored independently
/// (in parallel when the `parallel` feature is on) and results are
/// position-stable, so the report does not depend on thread count.
pub fn evaluate_model(
    enc: &EncoderState,
    heads: &HeadState,
    vocab: &Vocab,
    opts: &AssembleOptions,
    dataset: &[DialogueExample],
    spec: &BucketSpec,
    recall_pairs: &[(usize, usize)],
) -> Result<MetricReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation dataset".into()));
    }
    let score_one = |ex: &DialogueExample| -> Result<RankingInstance> {
        ex.validate()?;
        let scores = score_example(enc, heads, vocab, opts, ex)?;
        let words: usize = ex.context.iter().map(|u| u.text.split_whitespace().count()).sum();
        Ok(RankingInstance {
            id: ex.id.clone(),
            scores,
            labels: ex.candidates.iter().map(|c| c.label).collect(),
            turns: Some(ex.context.len() as u32),
            mean_utterance_words: Some(words as f64 / ex.context.len() as f64),
        })
    };

    #[cfg(feature = "parallel")]
    let instances: Result<Vec<RankingInstance>> = {
        use rayon::prelude::*;
        dataset.par_iter().map(score_one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let instances: Result<Vec<RankingInstance>> = dataset.iter().map(score_one).collect();

    evaluate_instances(&instances?, spec, recall_pairs)
}

/// Held-out order-restoration accuracy: permutes each example's context
/// (window fraction `delta`), predicts each permuted slot's original
/// position, and counts per-slot hits. Examples whose window stays shorter
/// than 2 are skipped.
pub fn uor_accuracy(
    enc: &EncoderState,
    heads: &HeadState,
    vocab: &Vocab,
    opts: &AssembleOptions,
    dataset: &[DialogueExample],
    delta: f64,
    seed: u64,
) -> Result<(usize, usize)> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (i, ex) in dataset.iter().enumerate() {
        let (base, _) = nsp_positive(std::slice::from_ref(ex), 0, vocab, opts, None)?;
        let (seq, labels) =
            permute_utterances(&base, delta, derive_seed(seed, "uor-eval", 0, i as u64))?;
        if labels.is_empty() {
            continue;
        }
        let mut tape = Tape::<f32>::new();
        let mut vars = enc.bind(&mut tape);
        heads.bind_into(&mut tape, &mut vars);
        let out = encode(&mut tape, &vars, &enc.config, &seq, false, None)?;
        let slots = permuted_slot_representations(&mut tape, out.hidden, &seq, labels.len())?;
        let logits = uor_logits(&mut tape, &vars, slots)?;
        let active = tape.slice_cols(logits, 0, labels.len())?;
        let t = tape.value(active);
        let (rows, cols) = t.rows_cols();
        for r in 0..rows {
            let row = &t.data()[r * cols..(r + 1) * cols];
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                .map(|(j, _)| j)
                .unwrap();
            if pred as u32 == labels[r] {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok((correct, total))
}

/// Mean backbone cosine over a dataset: `cos(h_subj + h_verb, h_obj)`
/// averaged over every annotated triplet, eval mode. Measures how far the
/// backbone term has pulled fact words together.
pub fn mean_backbone_cosine(
    enc: &EncoderState,
    heads: &HeadState,
    vocab: &Vocab,
    opts: &AssembleOptions,
    dataset: &[DialogueExample],
) -> Result<(f64, usize)> {
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for ex in dataset {
        let (seq, _) = nsp_positive(std::slice::from_ref(ex), 0, vocab, opts, None)?;
        if seq.triplets.is_empty() {
            continue;
        }
        let mut tape = Tape::<f32>::new();
        let mut vars = enc.bind(&mut tape);
        heads.bind_into(&mut tape, &mut vars);
        let out = encode(&mut tape, &vars, &enc.config, &seq, false, None)?;
        let (loss, n) = sbr_loss(&mut tape, out.hidden, &seq.triplets, seq.real_len)?;
        // loss = Σ (1 − cos): recover the mean cosine from the sum.
        let l = tape.value(loss).data()[0] as f64;
        sum += n as f64 - l;
        count += n;
    }
    if count == 0 {
        return Err(Error::Data("no annotated triplets in the dataset".into()));
    }
    Ok((sum / count as f64, count))
}

/// Dispatches a full run per the config's regime. `init` carries the
/// post-trained (or resume) checkpoint where the regime uses one.
pub fn run_regime(
    cfg: &RunConfig,
    train: &[DialogueExample],
    valid: &[DialogueExample],
    init: Option<Checkpoint>,
    obs: &mut dyn RunObserver,
) -> Result<TrainOutput> {
    match cfg.regime {
        Regime::DapPosttrain => run_posttrain(cfg, train, init, obs),
        Regime::DapFinetune => {
            if init.is_none() {
                return Err(Error::Config(
                    "dap-finetune requires init_checkpoint (use baseline-finetune for random init)"
                        .into(),
                ));
            }
            run_finetune(cfg, train, valid, init, obs)
        }
        Regime::BaselineFinetune => run_finetune(cfg, train, valid, init, obs),
        Regime::Mtf => run_mtf(cfg, train, valid, init, obs),
    }
}
