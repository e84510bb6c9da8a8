//! Training losses: masked-token and next-sentence heads, utterance order
//! restoration, subject-verb-object backbone regularization, response
//! matching, and the weighted composites used by the two training regimes.
//!
//! Per-example values live on the tape so gradients flow through the
//! encoder. Batch reductions: masked-token loss averages over all labeled
//! positions in the batch, next-sentence over examples, order and backbone
//! losses are per-example sums averaged over the examples that contributed
//! at least one item, and the binary matching loss sums over examples.
//! Reported breakdowns recompute the weighted total in f64; the tape scalar
//! is what backpropagates.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::{affine, var};
use crate::rng;
use crate::tensor::{Scalar, Tape, Tensor, TensorId};
use crate::text::TokenTriplet;
use crate::{Error, Result};

/// Position classes the order-restoration head can score; permutation
/// windows are never longer than the utterance cap.
pub const UOR_MAX_SLOTS: usize = 20;

const SBR_EPS: f64 = 1e-8;
const HEAD_INIT_STD: f64 = 0.02;

// ── head parameters ─────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub hidden: usize,
    pub vocab_size: usize,
    pub uor_slots: usize,
}

impl HeadConfig {
    pub fn new(hidden: usize, vocab_size: usize) -> Self {
        HeadConfig { hidden, vocab_size, uor_slots: UOR_MAX_SLOTS }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.vocab_size == 0 || self.uor_slots < 2 {
            return Err(Error::Config(format!(
                "head dims hidden={} vocab={} uor_slots={}",
                self.hidden, self.vocab_size, self.uor_slots
            )));
        }
        Ok(())
    }
}

fn head_specs(cfg: &HeadConfig) -> Vec<(String, Vec<usize>, bool)> {
    let d = cfg.hidden;
    vec![
        ("head.dm.b".into(), vec![1], false),
        ("head.dm.w".into(), vec![d, 1], true),
        ("head.mlm.bias".into(), vec![cfg.vocab_size], false),
        ("head.nsp.b".into(), vec![2], false),
        ("head.nsp.w".into(), vec![d, 2], true),
        ("head.uor.b".into(), vec![cfg.uor_slots], false),
        ("head.uor.w".into(), vec![d, cfg.uor_slots], true),
    ]
}

pub fn head_shapes(cfg: &HeadConfig) -> BTreeMap<String, Vec<usize>> {
    head_specs(cfg).into_iter().map(|(n, s, _)| (n, s)).collect()
}

/// Classifier heads layered on top of the encoder. Stored as named tensors
/// so the optimizer and checkpoints treat them like any other parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadState {
    config: HeadConfig,
    params: BTreeMap<String, Tensor<f32>>,
}

impl HeadState {
    pub fn init(config: HeadConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let normal = Normal::new(0.0, HEAD_INIT_STD).expect("valid std");
        let mut params = BTreeMap::new();
        for (i, (name, shape, random)) in head_specs(&config).into_iter().enumerate() {
            let n: usize = shape.iter().product();
            let data = if random {
                let mut r = rng::stream(seed, "head-init", 0, i as u64);
                (0..n).map(|_| normal.sample(&mut r) as f32).collect()
            } else {
                vec![0.0; n]
            };
            params.insert(name, Tensor::new(shape, data)?);
        }
        Ok(HeadState { config, params })
    }

    pub fn from_params(
        config: HeadConfig,
        params: BTreeMap<String, Tensor<f32>>,
    ) -> Result<Self> {
        config.validate()?;
        let expected = head_shapes(&config);
        if params.len() != expected.len() {
            return Err(Error::Contract(format!(
                "{} head tensors supplied, {} expected",
                params.len(),
                expected.len()
            )));
        }
        for (name, shape) in &expected {
            let t = params
                .get(name)
                .ok_or_else(|| Error::Contract(format!("missing tensor {}", name)))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "{}: {:?} supplied, {:?} expected",
                    name,
                    t.shape(),
                    shape
                )));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("parameter {}", name)));
            }
        }
        Ok(HeadState { config, params })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<f32>> {
        &self.params
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.params.get_mut(name)
    }

    /// Pushes every head tensor onto the tape, extending `vars`.
    pub fn bind_into(&self, tape: &mut Tape<f32>, vars: &mut BTreeMap<String, TensorId>) {
        for (name, t) in &self.params {
            vars.insert(name.clone(), tape.param(t.clone()));
        }
    }
}

// ── per-example losses ──────────────────────────────────────────────────

/// Mean cross-entropy over labeled positions against vocabulary logits.
/// Logits tie the output projection to the token embedding table. `labels`
/// runs over all positions; 0 marks an unlabeled position.
pub fn mlm_loss<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &BTreeMap<String, TensorId>,
    hidden: TensorId,
    labels: &[u32],
) -> Result<(TensorId, usize)> {
    let (rows, _) = tape.value(hidden).rows_cols();
    if labels.len() != rows {
        return Err(Error::Shape(format!(
            "{} labels for {} positions",
            labels.len(),
            rows
        )));
    }
    let emb = var::<S>(vars, "emb.tok")?;
    let vocab = tape.value(emb).shape()[0];
    let mut positions = Vec::new();
    let mut targets = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        if l as usize >= vocab {
            return Err(Error::Vocab(format!("label {} outside vocabulary {}", l, vocab)));
        }
        positions.push(i as u32);
        targets.push(l);
    }
    if positions.is_empty() {
        return Ok((tape.scalar_constant(S::zero()), 0));
    }
    let states = tape.gather_rows(hidden, &positions)?;
    let proj = tape.transpose(emb)?;
    let scores = tape.matmul(states, proj)?;
    let logits = tape.add_row(scores, var::<S>(vars, "head.mlm.bias")?)?;
    let ce = tape.cross_entropy_rows(logits, &targets)?;
    let mean = tape.mean_all(ce)?;
    Ok((mean, positions.len()))
}

/// Two-way cross-entropy on an affine readout of the pooled state.
pub fn nsp_loss<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &BTreeMap<String, TensorId>,
    pooled: TensorId,
    label: u8,
) -> Result<TensorId> {
    if label > 1 {
        return Err(Error::InvalidArgument(format!("next-sentence label {}", label)));
    }
    let logits = affine(tape, vars, pooled, "head.nsp.w", "head.nsp.b")?;
    let ce = tape.cross_entropy_rows(logits, &[label as u32])?;
    tape.mean_all(ce)
}

/// Sum over permuted slots of cross-entropy against each slot's original
/// window index. The shared head scores `UOR_MAX_SLOTS` classes; only the
/// first K' columns compete for a K'-slot window. Windows shorter than two
/// slots return a zero constant with count 0.
pub fn uor_loss<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &BTreeMap<String, TensorId>,
    slot_reps: TensorId,
    order_labels: &[u32],
) -> Result<(TensorId, usize)> {
    let k = order_labels.len();
    if k < 2 {
        return Ok((tape.scalar_constant(S::zero()), 0));
    }
    let (rows, _) = tape.value(slot_reps).rows_cols();
    if rows != k {
        return Err(Error::Shape(format!("{} slot rows for {} labels", rows, k)));
    }
    let head_cols = tape.value(var::<S>(vars, "head.uor.w")?).shape()[1];
    if k > head_cols {
        return Err(Error::Capacity(format!(
            "{} permuted slots exceed the {}-class order head",
            k, head_cols
        )));
    }
    let mut seen = vec![false; k];
    for &l in order_labels {
        if l as usize >= k {
            return Err(Error::Contract(format!("order label {} outside window {}", l, k)));
        }
        if seen[l as usize] {
            return Err(Error::Contract(format!("duplicate order label {}", l)));
        }
        seen[l as usize] = true;
    }
    let logits = uor_logits(tape, vars, slot_reps)?;
    let active = tape.slice_cols(logits, 0, k)?;
    let ce = tape.cross_entropy_rows(active, order_labels)?;
    let sum = tape.sum_all(ce)?;
    Ok((sum, k))
}

/// Raw order-head logits for each slot row, all position classes.
pub fn uor_logits<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &BTreeMap<String, TensorId>,
    slot_reps: TensorId,
) -> Result<TensorId> {
    affine(tape, vars, slot_reps, "head.uor.w", "head.uor.b")
}

/// `Σ_k (1 − cos(h_subj + h_verb, h_obj))` over fact triplets, using the
/// hidden state at each word's first token. Sum, not mean.
pub fn sbr_loss<S: Scalar>(
    tape: &mut Tape<S>,
    hidden: TensorId,
    triplets: &[TokenTriplet],
    real_len: usize,
) -> Result<(TensorId, usize)> {
    if triplets.is_empty() {
        return Ok((tape.scalar_constant(S::zero()), 0));
    }
    let (rows, _) = tape.value(hidden).rows_cols();
    if real_len > rows {
        return Err(Error::Shape(format!("real_len {} exceeds {} rows", real_len, rows)));
    }
    let mut subj = Vec::with_capacity(triplets.len());
    let mut verb = Vec::with_capacity(triplets.len());
    let mut obj = Vec::with_capacity(triplets.len());
    for (i, t) in triplets.iter().enumerate() {
        for idx in [t.subj, t.verb, t.obj] {
            if idx >= real_len {
                return Err(Error::Contract(format!(
                    "triplet {} index {} reaches into padding (real_len {})",
                    i, idx, real_len
                )));
            }
        }
        subj.push(t.subj as u32);
        verb.push(t.verb as u32);
        obj.push(t.obj as u32);
    }
    let hs = tape.gather_rows(hidden, &subj)?;
    let hv = tape.gather_rows(hidden, &verb)?;
    let ho = tape.gather_rows(hidden, &obj)?;
    let sum_sv = tape.add(hs, hv)?;
    let cos = tape.cosine_rows(sum_sv, ho, SBR_EPS)?;
    let neg = tape.scale(cos, S::from_f64(-1.0))?;
    let terms = tape.add_const(neg, S::one())?;
    let total = tape.sum_all(terms)?;
    Ok((total, triplets.len()))
}

/// Hidden rows for the last `k_prime` utterance slots, the window the
/// permutation touches. Validates that every marker position holds `[EOU]`.
pub fn permuted_slot_representations<S: Scalar>(
    tape: &mut Tape<S>,
    hidden: TensorId,
    seq: &crate::text::InputSequence,
    k_prime: usize,
) -> Result<TensorId> {
    let all = crate::encoder::utterance_representations(tape, hidden, seq)?;
    let k = seq.eou_positions.len();
    if k_prime > k {
        return Err(Error::Contract(format!(
            "window of {} slots in a {}-utterance context",
            k_prime, k
        )));
    }
    let idx: Vec<u32> = ((k - k_prime) as u32..k as u32).collect();
    tape.gather_rows(all, &idx)
}

/// Raw affine matching score of the pooled state, before any squashing.
pub fn dm_score<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &BTreeMap<String, TensorId>,
    pooled: TensorId,
) -> Result<TensorId> {
    affine(tape, vars, pooled, "head.dm.w", "head.dm.b")
}

/// Binary cross-entropy of `sigmoid(score)` against the match label.
pub fn dm_loss_binary<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &BTreeMap<String, TensorId>,
    pooled: TensorId,
    label: u8,
) -> Result<TensorId> {
    let score = dm_score(tape, vars, pooled)?;
    let g = tape.sigmoid(score)?;
    tape.bce(g, label)
}

/// Softmax cross-entropy over per-candidate scores against the correct
/// candidate. Scores are raw affine readouts, one scalar each.
pub fn dm_loss_multichoice<S: Scalar>(
    tape: &mut Tape<S>,
    scores: &[TensorId],
    correct: usize,
) -> Result<TensorId> {
    if scores.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "{} candidates, need at least 2",
            scores.len()
        )));
    }
    if correct >= scores.len() {
        return Err(Error::Index(format!(
            "correct candidate {} of {}",
            correct,
            scores.len()
        )));
    }
    for &s in scores {
        if tape.value(s).numel() != 1 {
            return Err(Error::Shape("candidate score must be a scalar".into()));
        }
    }
    let row = tape.concat_cols(scores)?;
    let ce = tape.cross_entropy_rows(row, &[correct as u32])?;
    tape.mean_all(ce)
}

// ── weighted composites ─────────────────────────────────────────────────

/// Composite weights. `lambda*` drive post-training, `beta*` drive
/// multi-task fine-tuning. The third fine-tuning weight defaults to 1 by
/// symmetry with its post-training counterpart; it is a config knob, not a
/// published value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda1: 1.0, lambda2: 1.0, lambda3: 1.0, beta1: 1.0, beta2: 1.0, beta3: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda1, self.lambda2, self.lambda3, self.beta1, self.beta2, self.beta3];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {:?}", all)));
        }
        Ok(())
    }
}

/// Component values and counts for one optimization step. `total` is the
/// weighted sum recomputed in f64; components without items are exactly 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mlm: f64,
    pub nsp: f64,
    pub uor: f64,
    pub sbr: f64,
    pub dm: f64,
    pub total: f64,
    pub mlm_positions: usize,
    pub nsp_examples: usize,
    pub uor_slots: usize,
    pub sbr_triplets: usize,
    pub dm_examples: usize,
}

/// Per-example loss nodes collected over one post-training batch.
#[derive(Debug, Default)]
pub struct DapBatch {
    /// (mean over the example's labeled positions, position count).
    pub mlm: Vec<(TensorId, usize)>,
    pub nsp: Vec<TensorId>,
    /// (sum over the example's permuted slots, slot count).
    pub uor: Vec<(TensorId, usize)>,
    /// (sum over the example's triplets, triplet count).
    pub sbr: Vec<(TensorId, usize)>,
}

/// Per-example loss nodes collected over one multi-task fine-tuning batch.
#[derive(Debug, Default)]
pub struct MtfBatch {
    pub dm: Vec<TensorId>,
    pub uor: Vec<(TensorId, usize)>,
    pub sbr: Vec<(TensorId, usize)>,
}

fn add_all<S: Scalar>(tape: &mut Tape<S>, ids: &[TensorId]) -> Result<TensorId> {
    let mut acc = ids[0];
    for &id in &ids[1..] {
        acc = tape.add(acc, id)?;
    }
    Ok(acc)
}

/// Mean over all labeled positions pooled across the batch:
/// `Σ mean_i · count_i / Σ count_i`.
fn reduce_mlm<S: Scalar>(
    tape: &mut Tape<S>,
    entries: &[(TensorId, usize)],
) -> Result<Option<(TensorId, usize)>> {
    let total: usize = entries.iter().map(|(_, c)| c).sum();
    if total == 0 {
        return Ok(None);
    }
    let mut weighted = Vec::new();
    for &(id, count) in entries {
        if count == 0 {
            continue;
        }
        weighted.push(tape.scale(id, S::from_f64(count as f64))?);
    }
    let sum = add_all(tape, &weighted)?;
    let mean = tape.scale(sum, S::from_f64(1.0 / total as f64))?;
    Ok(Some((mean, total)))
}

/// Mean of per-example sums over the examples that contributed items.
fn reduce_mean_of_sums<S: Scalar>(
    tape: &mut Tape<S>,
    entries: &[(TensorId, usize)],
) -> Result<Option<(TensorId, usize)>> {
    let contributing: Vec<TensorId> =
        entries.iter().filter(|(_, c)| *c > 0).map(|(id, _)| *id).collect();
    if contributing.is_empty() {
        return Ok(None);
    }
    let items: usize = entries.iter().map(|(_, c)| c).sum();
    let sum = add_all(tape, &contributing)?;
    let mean = tape.scale(sum, S::from_f64(1.0 / contributing.len() as f64))?;
    Ok(Some((mean, items)))
}

fn weighted_term<S: Scalar>(
    tape: &mut Tape<S>,
    acc: Option<TensorId>,
    component: Option<TensorId>,
    weight: f64,
) -> Result<Option<TensorId>> {
    let Some(c) = component else { return Ok(acc) };
    if weight == 0.0 {
        return Ok(acc);
    }
    let scaled = tape.scale(c, S::from_f64(weight))?;
    Ok(Some(match acc {
        Some(a) => tape.add(a, scaled)?,
        None => scaled,
    }))
}

fn val<S: Scalar>(tape: &Tape<S>, id: Option<(TensorId, usize)>) -> f64 {
    id.map(|(t, _)| tape.value(t).data()[0].to_f64()).unwrap_or(0.0)
}

/// Post-training composite: `λ₁(mlm + nsp) + λ₂·uor + λ₃·sbr`.
pub fn dap_total<S: Scalar>(
    tape: &mut Tape<S>,
    batch: &DapBatch,
    w: &LossWeights,
) -> Result<(TensorId, LossBreakdown)> {
    w.validate()?;
    let mlm = reduce_mlm(tape, &batch.mlm)?;
    let nsp = match batch.nsp.is_empty() {
        true => None,
        false => {
            let sum = add_all(tape, &batch.nsp)?;
            let mean = tape.scale(sum, S::from_f64(1.0 / batch.nsp.len() as f64))?;
            Some((mean, batch.nsp.len()))
        }
    };
    let uor = reduce_mean_of_sums(tape, &batch.uor)?;
    let sbr = reduce_mean_of_sums(tape, &batch.sbr)?;

    let mut acc = weighted_term(tape, None, mlm.map(|(t, _)| t), w.lambda1)?;
    acc = weighted_term(tape, acc, nsp.map(|(t, _)| t), w.lambda1)?;
    acc = weighted_term(tape, acc, uor.map(|(t, _)| t), w.lambda2)?;
    acc = weighted_term(tape, acc, sbr.map(|(t, _)| t), w.lambda3)?;
    let total_id = match acc {
        Some(id) => id,
        None => tape.scalar_constant(S::zero()),
    };

    let mut b = LossBreakdown {
        mlm: val(tape, mlm),
        nsp: val(tape, nsp),
        uor: val(tape, uor),
        sbr: val(tape, sbr),
        dm: 0.0,
        total: 0.0,
        mlm_positions: mlm.map_or(0, |(_, c)| c),
        nsp_examples: nsp.map_or(0, |(_, c)| c),
        uor_slots: uor.map_or(0, |(_, c)| c),
        sbr_triplets: sbr.map_or(0, |(_, c)| c),
        dm_examples: 0,
    };
    b.total = w.lambda1 * (b.mlm + b.nsp) + w.lambda2 * b.uor + w.lambda3 * b.sbr;
    Ok((total_id, b))
}

/// Multi-task fine-tuning composite: `β₁·dm + β₂·uor + β₃·sbr`, with the
/// matching loss summed over the batch.
pub fn mtf_total<S: Scalar>(
    tape: &mut Tape<S>,
    batch: &MtfBatch,
    w: &LossWeights,
) -> Result<(TensorId, LossBreakdown)> {
    w.validate()?;
    let dm = match batch.dm.is_empty() {
        true => None,
        false => Some((add_all(tape, &batch.dm)?, batch.dm.len())),
    };
    let uor = reduce_mean_of_sums(tape, &batch.uor)?;
    let sbr = reduce_mean_of_sums(tape, &batch.sbr)?;

    let mut acc = weighted_term(tape, None, dm.map(|(t, _)| t), w.beta1)?;
    acc = weighted_term(tape, acc, uor.map(|(t, _)| t), w.beta2)?;
    acc = weighted_term(tape, acc, sbr.map(|(t, _)| t), w.beta3)?;
    let total_id = match acc {
        Some(id) => id,
        None => tape.scalar_constant(S::zero()),
    };

    let mut b = LossBreakdown {
        mlm: 0.0,
        nsp: 0.0,
        uor: val(tape, uor),
        sbr: val(tape, sbr),
        dm: val(tape, dm),
        total: 0.0,
        mlm_positions: 0,
        nsp_examples: 0,
        uor_slots: uor.map_or(0, |(_, c)| c),
        sbr_triplets: sbr.map_or(0, |(_, c)| c),
        dm_examples: dm.map_or(0, |(_, c)| c),
    };
    b.total = w.beta1 * b.dm + w.beta2 * b.uor + w.beta3 * b.sbr;
    Ok((total_id, b))
}
