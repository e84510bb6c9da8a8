//! Acceptance gate: every shipped guarantee checked end to end, printing
//! one pass/fail line per criterion. Run with
//! `cargo test --test acceptance -- --nocapture` to see the lines live;
//! on failure the summary is repeated in the panic message.
//!
//! Each criterion is deterministic: every corpus, model, and draw is
//! seeded, so a pass here reproduces bit-for-bit on any run.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use dialm::encoder::{encode, pooled_representation, EncoderConfig, EncoderState};
use dialm::eval::{compute_metrics, RankingInstance};
use dialm::gradcheck::GradCheckConfig;
use dialm::harness::checkpoint::{from_bytes, to_bytes};
use dialm::harness::{
    default_grid, gradient_suite, mean_backbone_cosine, run_finetune, run_mtf, run_posttrain,
    sweep_delta, uor_accuracy, Checkpoint, DirObserver, LogRecord, NoopObserver, Regime,
    RunConfig, TaskKind, TrainOutput,
};
use dialm::objectives::{
    dap_total, dm_loss_binary, mlm_loss, mtf_total, nsp_loss, DapBatch, HeadConfig, HeadState,
    LossBreakdown, LossWeights, MtfBatch,
};
use dialm::optim::{AdamW, AdamWConfig};
use dialm::rng::{derive_seed, stream};
use dialm::synth::{self, GrammarLexicon, SynthConfig};
use dialm::tensor::Tape;
use dialm::text::{
    apply_mlm_mask, assemble_sequence, assemble_with_response, make_nsp_pair, permute_utterances,
    AssembleOptions, DialogueExample, Utterance, Vocab,
};

// ── pinned tolerances and budgets ───────────────────────────────────────

/// Gradient check: relative tolerance in 64-bit, with a small absolute
/// floor absorbing central-difference truncation noise on zero-gradient
/// coordinates.
const GRAD_RTOL: f64 = 1e-4;
const GRAD_ATOL: f64 = 1e-7;
const GRAD_SEEDS: u64 = 20;
const GRAD_BUDGET: Duration = Duration::from_secs(120);

/// Composite losses against a re-derived weighted sum, and gated runs
/// against from-scratch plain-objective loops.
const TOL_COMPOSITE: f64 = 1e-9;
const COMPOSITE_DRAWS: usize = 1000;

const PERMUTATION_DRAWS: usize = 10_000;

/// Ranking metrics against a from-definition recomputation.
const TOL_METRICS: f64 = 1e-9;
const METRIC_DRAWS: usize = 1000;

/// Order-restoration learnability: held-out per-slot accuracy target
/// (chance is 1/K' = 0.25 at K = 10, delta = 0.4).
const UOR_FLOOR: f64 = 0.80;
const UOR_STEP_BUDGET: u64 = 2000;
const UOR_WALL_BUDGET: Duration = Duration::from_secs(600);

/// Backbone regularizer: required rise of the held-out mean cosine over
/// its value at initialization.
const SBR_GAIN_FLOOR: f64 = 0.2;
const SBR_STEP_BUDGET: u64 = 2000;
const SBR_CURVE_BLOCKS: usize = 4;

/// Downstream trend: structural pre/co-training must not trail the plain
/// baseline by more than one standard error of the paired difference, and
/// both structural configurations must clear this absolute score.
const R2_FLOOR: f64 = 0.9;
const TREND_SEEDS: [u64; 5] = [201, 202, 203, 204, 205];

const TOL_RESUME: f64 = 1e-9;
const DETERMINISM_STEPS: usize = 10;

type Verdict = Result<String, String>;

fn err(e: dialm::Error) -> String {
    format!("error: {}", e)
}

// ── shared fixtures ─────────────────────────────────────────────────────

/// Small encoder settings shared by the training criteria. `hidden` must
/// be a multiple of 8.
fn small_cfg(regime: Regime, seed: u64, epochs: usize, hidden: usize, max_len: usize) -> RunConfig {
    RunConfig {
        regime,
        seed,
        epochs: Some(epochs),
        batch_size: 8,
        learning_rate: 3e-3,
        delta: 0.4,
        mask_rate: 0.15,
        encoder: EncoderConfig {
            vocab_size: 0,
            hidden,
            layers: 2,
            heads: hidden / 8,
            ffn: hidden * 3 / 2,
            max_position: max_len,
            dropout: 0.0,
            seed: 0,
        },
        max_len,
        max_utterances: 12,
        ..RunConfig::default()
    }
}

fn gen_corpus(cfg: &SynthConfig) -> Result<Vec<DialogueExample>, String> {
    Ok(synth::generate(cfg).map_err(err)?.0)
}

/// Train/held split of a fresh synthetic corpus.
fn gen_split(
    cfg: &SynthConfig,
    train_fraction: f64,
) -> Result<(Vec<DialogueExample>, Vec<DialogueExample>), String> {
    gen_split_with(cfg, &GrammarLexicon::default(), train_fraction)
}

fn gen_split_with(
    cfg: &SynthConfig,
    lex: &GrammarLexicon,
    train_fraction: f64,
) -> Result<(Vec<DialogueExample>, Vec<DialogueExample>), String> {
    let corpus = synth::generate_with(cfg, lex).map_err(err)?.0;
    let mut parts =
        synth::split(&corpus, &[train_fraction, 1.0 - train_fraction], cfg.seed).map_err(err)?;
    let held = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    Ok((train, held))
}

/// The best validation epoch's R_2@1 cell.
fn r2_at_1(out: &TrainOutput) -> Result<f64, String> {
    let report = out.report.as_ref().ok_or("run produced no validation report")?;
    report
        .overall
        .recall
        .iter()
        .find(|c| c.n == 2 && c.k == 1)
        .and_then(|c| c.value)
        .ok_or_else(|| "report has no R_2@1 cell".to_string())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean of paired differences (sample std / sqrt n).
fn paired_se(diffs: &[f64]) -> f64 {
    let m = mean(diffs);
    let var = diffs.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / (diffs.len() - 1) as f64;
    (var / diffs.len() as f64).sqrt()
}

// ── criterion 1: gradient suite ─────────────────────────────────────────

fn c1_gradients() -> Verdict {
    let defaults = GradCheckConfig::default();
    if defaults.rtol != GRAD_RTOL || defaults.atol != GRAD_ATOL {
        return Err(format!(
            "checker tolerances moved: rtol {} atol {} (pinned {} / {})",
            defaults.rtol, defaults.atol, GRAD_RTOL, GRAD_ATOL
        ));
    }

    let seeds: Vec<u64> = (0..GRAD_SEEDS).collect();
    let t0 = Instant::now();
    let cases = gradient_suite(2, 16, &seeds, 2).map_err(err)?;
    let wall = t0.elapsed();

    let failed: Vec<String> =
        cases.iter().filter(|c| !c.pass).map(|c| format!("{} seed {}", c.loss, c.seed)).collect();
    if !failed.is_empty() {
        return Err(format!("{} of {} cases failed: {}", failed.len(), cases.len(), failed.join(", ")));
    }
    let worst = cases.iter().map(|c| c.max_err_ratio).fold(0.0, f64::max);

    // One seed run serially, scaled up, approximates the one-core cost of
    // the whole suite regardless of how many threads the parallel feature
    // used above.
    let t1 = Instant::now();
    gradient_suite(2, 16, &[1_000_003], 2).map_err(err)?;
    let one_core = t1.elapsed() * GRAD_SEEDS as u32;

    if wall > GRAD_BUDGET || one_core > GRAD_BUDGET {
        return Err(format!(
            "over the {:?} budget: wall {:.1?}, one-core estimate {:.1?}",
            GRAD_BUDGET, wall, one_core
        ));
    }
    Ok(format!(
        "{} cases across 6 losses x {} seeds, worst err ratio {:.2e}, wall {:.1?}, one-core est {:.1?}",
        cases.len(),
        GRAD_SEEDS,
        worst,
        wall,
        one_core
    ))
}

// ── criterion 2: composite-loss identities ──────────────────────────────

struct DapDraw {
    mlm: Vec<(f64, usize)>,
    nsp: Vec<f64>,
    uor: Vec<(f64, usize)>,
    sbr: Vec<(f64, usize)>,
    w: LossWeights,
}

fn draw_weight(r: &mut impl Rng) -> f64 {
    if r.gen_bool(0.25) {
        0.0
    } else {
        r.gen_range(0.0..2.0)
    }
}

fn draw_entries(r: &mut impl Rng, max_items: usize, max_count: usize) -> Vec<(f64, usize)> {
    let n = r.gen_range(0..=max_items);
    (0..n).map(|_| (r.gen_range(0.0..8.0), r.gen_range(0..=max_count))).collect()
}

/// Weighted-sum oracle mirroring the published reductions from their
/// definitions: positions-weighted mean for the masked term, plain means,
/// mean of per-example sums for the structural terms, batch sum for the
/// matching term.
fn oracle_pooled_mean(entries: &[(f64, usize)]) -> f64 {
    let total: usize = entries.iter().map(|&(_, c)| c).sum();
    if total == 0 {
        return 0.0;
    }
    entries.iter().map(|&(v, c)| v * c as f64).sum::<f64>() / total as f64
}

fn oracle_mean_of_sums(entries: &[(f64, usize)]) -> f64 {
    let contributing: Vec<f64> =
        entries.iter().filter(|&&(_, c)| c > 0).map(|&(v, _)| v).collect();
    if contributing.is_empty() {
        return 0.0;
    }
    contributing.iter().sum::<f64>() / contributing.len() as f64
}

fn dap_draw_check(d: &DapDraw) -> Result<f64, String> {
    let mut tape = Tape::<f64>::new();
    let mut batch = DapBatch::default();
    for &(v, c) in &d.mlm {
        batch.mlm.push((tape.scalar_constant(v), c));
    }
    for &v in &d.nsp {
        batch.nsp.push(tape.scalar_constant(v));
    }
    for &(v, c) in &d.uor {
        batch.uor.push((tape.scalar_constant(v), c));
    }
    for &(v, c) in &d.sbr {
        batch.sbr.push((tape.scalar_constant(v), c));
    }
    let (total_id, b) = dap_total(&mut tape, &batch, &d.w).map_err(err)?;

    let nsp_mean =
        if d.nsp.is_empty() { 0.0 } else { d.nsp.iter().sum::<f64>() / d.nsp.len() as f64 };
    let want = d.w.lambda1 * (oracle_pooled_mean(&d.mlm) + nsp_mean)
        + d.w.lambda2 * oracle_mean_of_sums(&d.uor)
        + d.w.lambda3 * oracle_mean_of_sums(&d.sbr);

    let graph = tape.value(total_id).data()[0];
    let e1 = (graph - want).abs();
    let e2 = (b.total - want).abs();
    if e1 > TOL_COMPOSITE || e2 > TOL_COMPOSITE {
        return Err(format!("dap draw off by {:.3e} (graph) / {:.3e} (breakdown)", e1, e2));
    }
    Ok(e1.max(e2))
}

fn mtf_draw_check(d: &DapDraw) -> Result<f64, String> {
    let mut tape = Tape::<f64>::new();
    let mut batch = MtfBatch::default();
    for &v in &d.nsp {
        batch.dm.push(tape.scalar_constant(v));
    }
    for &(v, c) in &d.uor {
        batch.uor.push((tape.scalar_constant(v), c));
    }
    for &(v, c) in &d.sbr {
        batch.sbr.push((tape.scalar_constant(v), c));
    }
    let (total_id, b) = mtf_total(&mut tape, &batch, &d.w).map_err(err)?;

    let dm_sum: f64 = d.nsp.iter().sum();
    let want = d.w.beta1 * dm_sum
        + d.w.beta2 * oracle_mean_of_sums(&d.uor)
        + d.w.beta3 * oracle_mean_of_sums(&d.sbr);

    let graph = tape.value(total_id).data()[0];
    let e1 = (graph - want).abs();
    let e2 = (b.total - want).abs();
    if e1 > TOL_COMPOSITE || e2 > TOL_COMPOSITE {
        return Err(format!("mtf draw off by {:.3e} (graph) / {:.3e} (breakdown)", e1, e2));
    }
    Ok(e1.max(e2))
}

/// Vocabulary built the way the runners build it: every context utterance
/// and candidate text, corpus order.
fn build_vocab(corpus: &[DialogueExample], min_count: usize) -> Result<Vocab, String> {
    let texts = corpus.iter().flat_map(|ex| {
        ex.context
            .iter()
            .map(|u| u.text.as_str())
            .chain(ex.candidates.iter().map(|c| c.text.as_str()))
    });
    Vocab::build(texts, min_count).map_err(err)
}

struct PlainModel {
    vocab: Vocab,
    enc: EncoderState,
    heads: HeadState,
    opt: AdamW,
}

impl PlainModel {
    fn fresh(cfg: &RunConfig, corpus: &[DialogueExample]) -> Result<Self, String> {
        let vocab = build_vocab(corpus, cfg.min_count)?;
        let mut ec = cfg.encoder;
        ec.vocab_size = vocab.len();
        ec.seed = derive_seed(cfg.seed, "encoder-init", 0, 0);
        let enc = EncoderState::init(ec).map_err(err)?;
        let heads = HeadState::init(
            HeadConfig::new(ec.hidden, ec.vocab_size),
            derive_seed(cfg.seed, "head-init", 0, 0),
        )
        .map_err(err)?;
        let opt = AdamW::new(AdamWConfig {
            lr: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        });
        Ok(PlainModel { vocab, enc, heads, opt })
    }

    fn apply(&mut self, tape: &Tape<f32>, vars: &BTreeMap<String, dialm::tensor::TensorId>) -> Result<(), String> {
        self.opt.begin_step();
        for (name, &id) in vars {
            let Some(grad) = tape.grad(id) else { continue };
            let theta = match self.enc.param_mut(name) {
                Some(t) => t.data_mut(),
                None => self
                    .heads
                    .param_mut(name)
                    .ok_or_else(|| format!("unknown parameter {}", name))?
                    .data_mut(),
            };
            self.opt.update(name, theta, grad).map_err(err)?;
        }
        Ok(())
    }
}

/// From-scratch masked-language + next-sentence loop built directly on the
/// primitives: no permutation, no backbone term, ever.
fn plain_dap_loop(
    cfg: &RunConfig,
    corpus: &[DialogueExample],
) -> Result<(Vec<LossBreakdown>, EncoderState), String> {
    let mut m = PlainModel::fresh(cfg, corpus)?;
    let opts = cfg.assemble_options();
    let mut logs = Vec::new();
    for epoch in 0..cfg.resolved_epochs() as u64 {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut stream(cfg.seed, "shuffle", epoch, 0));
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut tape = Tape::<f32>::new();
            let mut vars = m.enc.bind(&mut tape);
            m.heads.bind_into(&mut tape, &mut vars);
            let mut parts = DapBatch::default();
            for (j, &idx) in chunk.iter().enumerate() {
                let pos = (bi * cfg.batch_size + j) as u64;
                let (seq, nsp_label) = make_nsp_pair(
                    corpus,
                    idx,
                    &m.vocab,
                    &opts,
                    None,
                    derive_seed(cfg.seed, "nsp", epoch, pos),
                )
                .map_err(err)?;
                let (seq, mlm_labels) = apply_mlm_mask(
                    &seq,
                    cfg.mask_rate,
                    &m.vocab,
                    derive_seed(cfg.seed, "mask", epoch, pos),
                )
                .map_err(err)?;
                let out = encode(&mut tape, &vars, &m.enc.config, &seq, true, None).map_err(err)?;
                parts.mlm.push(mlm_loss(&mut tape, &vars, out.hidden, &mlm_labels).map_err(err)?);
                let pooled = pooled_representation(&mut tape, &vars, out.hidden).map_err(err)?;
                parts.nsp.push(nsp_loss(&mut tape, &vars, pooled, nsp_label).map_err(err)?);
            }
            let (total, b) = dap_total(&mut tape, &parts, &cfg.weights).map_err(err)?;
            tape.backward(total).map_err(err)?;
            m.apply(&tape, &vars)?;
            logs.push(b);
        }
    }
    Ok((logs, m.enc))
}

/// From-scratch binary matching loop: one scored pair per candidate, no
/// structural terms. The fine-tune regimes keep their best epoch rather
/// than their final state, so this one is compared trajectory-to-trajectory.
fn plain_dm_loop(
    cfg: &RunConfig,
    corpus: &[DialogueExample],
) -> Result<Vec<LossBreakdown>, String> {
    let mut m = PlainModel::fresh(cfg, corpus)?;
    let opts = cfg.assemble_options();
    let weights = LossWeights { beta2: 0.0, beta3: 0.0, ..cfg.weights };
    let mut logs = Vec::new();
    for epoch in 0..cfg.resolved_epochs() as u64 {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut stream(cfg.seed, "shuffle", epoch, 0));
        for chunk in order.chunks(cfg.batch_size) {
            let mut tape = Tape::<f32>::new();
            let mut vars = m.enc.bind(&mut tape);
            m.heads.bind_into(&mut tape, &mut vars);
            let mut parts = MtfBatch::default();
            for &idx in chunk {
                let ex = &corpus[idx];
                for ci in 0..ex.candidates.len() {
                    let seq = assemble_sequence(ex, ci, &m.vocab, &opts, None).map_err(err)?;
                    let out =
                        encode(&mut tape, &vars, &m.enc.config, &seq, true, None).map_err(err)?;
                    let pooled =
                        pooled_representation(&mut tape, &vars, out.hidden).map_err(err)?;
                    parts
                        .dm
                        .push(dm_loss_binary(&mut tape, &vars, pooled, ex.candidates[ci].label).map_err(err)?);
                }
            }
            let (total, b) = mtf_total(&mut tape, &parts, &weights).map_err(err)?;
            tape.backward(total).map_err(err)?;
            m.apply(&tape, &vars)?;
            logs.push(b);
        }
    }
    Ok(logs)
}

fn breakdown_gap(a: &LossBreakdown, b: &LossBreakdown) -> Result<f64, String> {
    if (a.mlm_positions, a.nsp_examples, a.uor_slots, a.sbr_triplets, a.dm_examples)
        != (b.mlm_positions, b.nsp_examples, b.uor_slots, b.sbr_triplets, b.dm_examples)
    {
        return Err("component counts diverge".to_string());
    }
    Ok([a.mlm - b.mlm, a.nsp - b.nsp, a.uor - b.uor, a.sbr - b.sbr, a.dm - b.dm, a.total - b.total]
        .iter()
        .fold(0.0, |acc, d| acc.max(d.abs())))
}

fn param_gap(a: &EncoderState, b: &EncoderState) -> f64 {
    let mut worst = 0.0f64;
    for (name, ta) in a.params() {
        let tb = &b.params()[name];
        for (x, y) in ta.data().iter().zip(tb.data()) {
            worst = worst.max((*x as f64 - *y as f64).abs());
        }
    }
    worst
}

fn c2_composite() -> Verdict {
    // 1000 random component/weight draws per composite, on a 64-bit tape so
    // the 1e-9 bound is about the reduction logic, not f32 rounding.
    let mut r = stream(2, "acceptance-composite", 0, 0);
    let mut worst = 0.0f64;
    for _ in 0..COMPOSITE_DRAWS {
        let draw = DapDraw {
            mlm: draw_entries(&mut r, 4, 40),
            nsp: (0..r.gen_range(0..=4)).map(|_| r.gen_range(0.0..4.0)).collect(),
            uor: draw_entries(&mut r, 4, 6),
            sbr: draw_entries(&mut r, 4, 8),
            w: LossWeights {
                lambda1: draw_weight(&mut r),
                lambda2: draw_weight(&mut r),
                lambda3: draw_weight(&mut r),
                beta1: draw_weight(&mut r),
                beta2: draw_weight(&mut r),
                beta3: draw_weight(&mut r),
            },
        };
        worst = worst.max(dap_draw_check(&draw)?);
        worst = worst.max(mtf_draw_check(&draw)?);
    }

    // Gated runs reduce to plain-objective runs, step for step: the
    // production loops with the structural weights at zero against
    // from-scratch loops that never reference permutation or backbone code.
    let gen = SynthConfig {
        dialogues: 24,
        mean_turns: 4.0,
        turns_jitter: 1.0,
        mean_words: 6.0,
        cue_strength: 0.8,
        svo_density: 0.5,
        candidates: 2,
        negative_pool: 8,
        seed: 21,
    };
    let corpus = gen_corpus(&gen)?;
    let valid = gen_corpus(&SynthConfig { dialogues: 8, seed: 22, ..gen })?;

    let mut dap_cfg = small_cfg(Regime::DapPosttrain, 23, 2, 16, 96);
    dap_cfg.delta = 0.7; // gating, not the window size, must disable the term
    dap_cfg.weights = LossWeights { lambda2: 0.0, lambda3: 0.0, ..LossWeights::default() };
    let run = run_posttrain(&dap_cfg, &corpus, None, &mut NoopObserver).map_err(err)?;
    let (plain, plain_enc) = plain_dap_loop(&dap_cfg, &corpus)?;
    if run.steps.len() != plain.len() {
        return Err(format!("dap: {} steps vs {} plain steps", run.steps.len(), plain.len()));
    }
    let mut dap_gap = 0.0f64;
    for (s, p) in run.steps.iter().zip(&plain) {
        dap_gap = dap_gap.max(breakdown_gap(&s.loss, p)?);
    }
    let dap_params = param_gap(&run.checkpoint.encoder, &plain_enc);

    let mut mtf_cfg = small_cfg(Regime::Mtf, 24, 2, 16, 96);
    mtf_cfg.delta = 0.6;
    mtf_cfg.weights = LossWeights { beta2: 0.0, beta3: 0.0, ..LossWeights::default() };
    let mtf_run = run_mtf(&mtf_cfg, &corpus, &valid, None, &mut NoopObserver).map_err(err)?;
    let plain_dm = plain_dm_loop(&mtf_cfg, &corpus)?;
    if mtf_run.steps.len() != plain_dm.len() {
        return Err(format!("mtf: {} steps vs {} plain steps", mtf_run.steps.len(), plain_dm.len()));
    }
    let mut mtf_gap = 0.0f64;
    for (s, p) in mtf_run.steps.iter().zip(&plain_dm) {
        mtf_gap = mtf_gap.max(breakdown_gap(&s.loss, p)?);
    }
    let bl_run = run_finetune(&mtf_cfg, &corpus, &valid, None, &mut NoopObserver).map_err(err)?;
    let bl_match = serde_json::to_string(&mtf_run.steps).unwrap()
        == serde_json::to_string(&bl_run.steps).unwrap();

    let step_worst = dap_gap.max(mtf_gap);
    if step_worst > TOL_COMPOSITE || dap_params > TOL_COMPOSITE {
        return Err(format!(
            "plain-run gap {:.3e} (steps) / {:.3e} (params) exceeds {:.0e}",
            step_worst, dap_params, TOL_COMPOSITE
        ));
    }
    if !bl_match {
        return Err("zero-beta multi-task run diverged from the plain fine-tune regime".into());
    }
    Ok(format!(
        "{} draws per composite within {:.0e} (worst {:.2e}); gated runs match plain loops (worst step gap {:.2e}, param gap {:.2e})",
        COMPOSITE_DRAWS, TOL_COMPOSITE, worst, step_worst, dap_params
    ))
}

// ── criterion 3: permutation round-trip ─────────────────────────────────

fn c3_permutation() -> Verdict {
    let words: Vec<String> = (0..24).map(|i| format!("w{}", i)).collect();
    let vocab = Vocab::build([words.join(" ")], 1).map_err(err)?;
    let opts = AssembleOptions { max_len: 128, max_utterances: 20 };

    let mut r = stream(3, "acceptance-permutation", 0, 0);
    let mut permuted_windows = 0usize;
    let mut skipped = 0usize;
    for draw in 0..PERMUTATION_DRAWS {
        let k = r.gen_range(1..=20usize);
        // pin the endpoints regularly; otherwise uniform
        let delta = match draw % 97 {
            0 => 0.0,
            1 => 1.0,
            _ => r.gen_range(0.0..=1.0),
        };
        let context: Vec<Utterance> = (0..k)
            .map(|t| {
                let n = r.gen_range(1..=4usize);
                let text = (0..n)
                    .map(|_| words[r.gen_range(0..words.len())].as_str())
                    .collect::<Vec<_>>()
                    .join(" ");
                Utterance {
                    speaker: if t % 2 == 0 { "a".into() } else { "b".into() },
                    text,
                    svo: None,
                }
            })
            .collect();
        let response = words[r.gen_range(0..words.len())].clone();
        let base = assemble_with_response(&format!("d{}", draw), &context, &response, &vocab, &opts, None)
            .map_err(err)?;

        let seed = derive_seed(3, "acceptance-permutation-draw", 0, draw as u64);
        let (perm, labels) = permute_utterances(&base, delta, seed).map_err(err)?;

        let k_prime = (k as f64 * delta).floor() as usize;
        if k_prime < 2 {
            if !labels.is_empty() || perm.ids != base.ids {
                return Err(format!("draw {}: K'={} must be a no-op", draw, k_prime));
            }
            skipped += 1;
            continue;
        }
        if labels.len() != k_prime {
            return Err(format!("draw {}: {} labels, want K'=floor({}*{})={}", draw, labels.len(), k, delta, k_prime));
        }
        let mut seen = vec![false; k_prime];
        for &l in &labels {
            if l as usize >= k_prime || seen[l as usize] {
                return Err(format!("draw {}: labels {:?} are not a permutation", draw, labels));
            }
            seen[l as usize] = true;
        }
        if labels.iter().enumerate().all(|(j, &l)| j as u32 == l) {
            return Err(format!("draw {}: identity permutation emitted", draw));
        }

        let first = k - k_prime;
        let ws = base.utterance_spans[first].0;
        let we = base.utterance_spans[k - 1].1;
        if perm.ids[..ws] != base.ids[..ws] {
            return Err(format!("draw {}: prefix before the window changed", draw));
        }
        if perm.ids[we..] != base.ids[we..] {
            return Err(format!("draw {}: suffix after the window changed", draw));
        }

        // Reorder the permuted blocks by their labels: slot j holds the
        // utterance whose original window position is labels[j].
        let mut rebuilt: Vec<Vec<u32>> = vec![Vec::new(); k_prime];
        for (j, &l) in labels.iter().enumerate() {
            let (s, e) = perm.utterance_spans[first + j];
            rebuilt[l as usize] = perm.ids[s..e].to_vec();
        }
        if rebuilt.concat() != base.ids[ws..we] {
            return Err(format!("draw {}: label-guided reordering failed to rebuild the original", draw));
        }
        permuted_windows += 1;
    }
    Ok(format!(
        "{} draws: {} windows rebuilt exactly, {} correctly skipped (K' < 2)",
        PERMUTATION_DRAWS, permuted_windows, skipped
    ))
}

// ── criterion 4: ranking metric oracle ──────────────────────────────────

/// 1-based rank with ties broken toward the lower index, straight from the
/// definition (count the candidates ordered ahead).
fn rank_of(scores: &[f64], i: usize) -> usize {
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > scores[i] || (s == scores[i] && j < i))
        .count()
}

struct OracleAggregate {
    map: f64,
    mrr: f64,
    p_at_1: f64,
    excluded: usize,
    recall: BTreeMap<(usize, usize), (usize, usize)>,
}

fn oracle_metrics(instances: &[RankingInstance], pairs: &[(usize, usize)]) -> OracleAggregate {
    let mut ap_sum = 0.0;
    let mut rr_sum = 0.0;
    let mut p1_sum = 0.0;
    let mut scored = 0usize;
    let mut recall: BTreeMap<(usize, usize), (usize, usize)> =
        pairs.iter().map(|&p| (p, (0, 0))).collect();
    for inst in instances {
        let ranks: Vec<usize> = (0..inst.scores.len())
            .filter(|&i| inst.labels[i] == 1)
            .map(|i| rank_of(&inst.scores, i))
            .collect();
        for (&(n, k), cell) in recall.iter_mut() {
            if inst.scores.len() == n {
                cell.1 += 1;
                if ranks.iter().any(|&r| r <= k) {
                    cell.0 += 1;
                }
            }
        }
        if ranks.is_empty() {
            continue;
        }
        scored += 1;
        let ap: f64 = ranks
            .iter()
            .map(|&r| ranks.iter().filter(|&&q| q <= r).count() as f64 / r as f64)
            .sum::<f64>()
            / ranks.len() as f64;
        ap_sum += ap;
        rr_sum += 1.0 / *ranks.iter().min().unwrap() as f64;
        p1_sum += ranks.iter().any(|&r| r == 1) as u8 as f64;
    }
    let denom = scored.max(1) as f64;
    OracleAggregate {
        map: ap_sum / denom,
        mrr: rr_sum / denom,
        p_at_1: p1_sum / denom,
        excluded: instances.len() - scored,
        recall,
    }
}

fn c4_metrics() -> Verdict {
    let mut r = stream(4, "acceptance-metrics", 0, 0);
    let mut instances = Vec::with_capacity(METRIC_DRAWS);
    let mut multi_positive = 0usize;
    for i in 0..METRIC_DRAWS {
        let n = r.gen_range(2..=6usize);
        let mut scores: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        if r.gen_bool(0.25) {
            let a = r.gen_range(0..n);
            let b = r.gen_range(0..n);
            scores[a] = scores[b]; // exact ties exercise the index tie-break
        }
        let labels: Vec<u8> = (0..n).map(|_| r.gen_bool(0.4) as u8).collect();
        multi_positive += (labels.iter().filter(|&&l| l == 1).count() > 1) as usize;
        instances.push(RankingInstance {
            id: format!("i{}", i),
            scores,
            labels,
            turns: None,
            mean_utterance_words: None,
        });
    }
    if multi_positive < METRIC_DRAWS / 20 {
        return Err(format!("only {} multi-positive instances generated", multi_positive));
    }

    let pairs = [(2, 1), (3, 2), (4, 1), (6, 3)];
    let got = compute_metrics(&instances, &pairs).map_err(err)?;
    let want = oracle_metrics(&instances, &pairs);

    let mut worst = (got.map - want.map)
        .abs()
        .max((got.mrr - want.mrr).abs())
        .max((got.p_at_1 - want.p_at_1).abs());
    if got.excluded_no_positive != want.excluded {
        return Err(format!(
            "excluded {} instances, oracle says {}",
            got.excluded_no_positive, want.excluded
        ));
    }
    for cell in &got.recall {
        let (hits, total) = want.recall[&(cell.n, cell.k)];
        if cell.instances != total {
            return Err(format!("R_{}@{} counted {} instances, oracle {}", cell.n, cell.k, cell.instances, total));
        }
        match (cell.value, total) {
            (Some(v), t) if t > 0 => worst = worst.max((v - hits as f64 / t as f64).abs()),
            (None, 0) => {}
            _ => return Err(format!("R_{}@{} presence disagrees with its instance count", cell.n, cell.k)),
        }
    }
    if worst > TOL_METRICS {
        return Err(format!("worst deviation {:.3e} exceeds {:.0e}", worst, TOL_METRICS));
    }

    // Hand-worked cases, from the definitions.
    let ap_case = RankingInstance {
        id: "ap".into(),
        scores: vec![0.9, 0.8, 0.7, 0.6],
        labels: vec![1, 0, 1, 0],
        turns: None,
        mean_utterance_words: None,
    };
    let m = compute_metrics(std::slice::from_ref(&ap_case), &[(4, 2)]).map_err(err)?;
    let ap_expect = (1.0 + 2.0 / 3.0) / 2.0;
    if (m.map - ap_expect).abs() > 1e-12 {
        return Err(format!("hand-worked AP {} != {}", m.map, ap_expect));
    }

    let mrr_cases = [
        RankingInstance {
            id: "first".into(),
            scores: vec![0.9, 0.1],
            labels: vec![1, 0],
            turns: None,
            mean_utterance_words: None,
        },
        RankingInstance {
            id: "second".into(),
            scores: vec![0.9, 0.1],
            labels: vec![0, 1],
            turns: None,
            mean_utterance_words: None,
        },
    ];
    let m = compute_metrics(&mrr_cases, &[(2, 1)]).map_err(err)?;
    if m.mrr != 0.75 {
        return Err(format!("hand-worked MRR {} != 0.75", m.mrr));
    }

    Ok(format!(
        "{} instances ({} multi-positive) within {:.0e} of the definitional oracle (worst {:.2e}); hand-worked AP and MRR reproduce",
        METRIC_DRAWS, multi_positive, TOL_METRICS, worst
    ))
}

// ── criterion 5: order-restoration learnability ─────────────────────────

fn c5_uor_learning() -> Verdict {
    let t0 = Instant::now();
    let gen = SynthConfig {
        dialogues: 256,
        mean_turns: 10.0,
        turns_jitter: 0.0, // every context exactly K = 10 turns
        mean_words: 6.0,
        cue_strength: 1.0,
        svo_density: 0.0,
        candidates: 2,
        negative_pool: 8,
        seed: 51,
    };
    let (train, held) = gen_split(&gen, 0.75)?;

    // Order supervision alone from random init sits on a permutation-symmetric
    // saddle: near-identical slot states make the per-slot gradients cancel
    // within each example, and weight decay then collapses the order head to
    // uniform logits. Joint masked-token training differentiates the states;
    // decay stays off so the head keeps what the saddle-escape gradient builds.
    let mut cfg = small_cfg(Regime::DapPosttrain, 52, 0, 64, 128);
    cfg.weight_decay = 0.0;
    cfg.delta = 0.4; // K' = 4 permuted slots, chance accuracy 0.25
    cfg.weights = LossWeights { lambda3: 0.0, ..LossWeights::default() };
    let opts = cfg.assemble_options();

    let steps_per_epoch = train.len().div_ceil(cfg.batch_size) as u64;
    let max_epochs = (UOR_STEP_BUDGET / steps_per_epoch) as usize;

    let mut ckpt: Option<Checkpoint> = None;
    let mut accuracy = 0.0;
    let mut slots = 0usize;
    let mut steps = 0u64;
    for e in (2..=max_epochs).step_by(2) {
        let mut round = cfg.clone();
        round.epochs = Some(e);
        let out = run_posttrain(&round, &train, ckpt.take(), &mut NoopObserver).map_err(err)?;
        steps = out.checkpoint.step;
        let c = out.checkpoint;
        let (hits, total) =
            uor_accuracy(&c.encoder, &c.heads, &c.vocab, &opts, &held, cfg.delta, 53).map_err(err)?;
        accuracy = hits as f64 / total as f64;
        slots = total;
        ckpt = Some(c);
        if accuracy >= UOR_FLOOR || t0.elapsed() > UOR_WALL_BUDGET {
            break;
        }
    }
    let wall = t0.elapsed();
    if wall > UOR_WALL_BUDGET {
        return Err(format!("{:.0?} exceeds the {:?} budget (accuracy reached {:.3})", wall, UOR_WALL_BUDGET, accuracy));
    }
    if accuracy < UOR_FLOOR {
        return Err(format!(
            "held-out slot accuracy {:.3} after {} steps (floor {}, chance 0.25)",
            accuracy, steps, UOR_FLOOR
        ));
    }
    Ok(format!(
        "held-out slot accuracy {:.3} over {} slots after {} steps (chance 0.25, {:.0?})",
        accuracy, slots, steps, wall
    ))
}

// ── criterion 6: backbone regularizer effect ────────────────────────────

fn c6_sbr_effect() -> Verdict {
    let t0 = Instant::now();
    let gen = SynthConfig {
        dialogues: 160,
        mean_turns: 5.0,
        turns_jitter: 2.0,
        mean_words: 7.0,
        cue_strength: 0.5,
        svo_density: 1.0, // every turn carries a gold subject-verb-object
        candidates: 2,
        negative_pool: 8,
        seed: 61,
    };
    let (train, held) = gen_split(&gen, 0.75)?;

    let mut cfg = small_cfg(Regime::DapPosttrain, 62, 0, 32, 96);
    cfg.weights = LossWeights { lambda1: 0.0, lambda2: 0.0, ..LossWeights::default() };
    let opts = cfg.assemble_options();

    // The zero-epoch run is an identity: it hands back the exact
    // initialization the training chunks below will start from.
    let init = run_posttrain(&cfg, &train, None, &mut NoopObserver).map_err(err)?.checkpoint;
    let (cos0, triplets) =
        mean_backbone_cosine(&init.encoder, &init.heads, &init.vocab, &opts, &held).map_err(err)?;

    let steps_per_epoch = train.len().div_ceil(cfg.batch_size) as u64;
    let max_epochs = (SBR_STEP_BUDGET / steps_per_epoch) as usize;
    let min_epochs = 4.min(max_epochs); // enough history for the curve check

    let mut ckpt = init;
    let mut series: Vec<f64> = Vec::new();
    let mut cos = cos0;
    let mut steps = 0u64;
    for e in 1..=max_epochs {
        let mut round = cfg.clone();
        round.epochs = Some(e);
        let out = run_posttrain(&round, &train, Some(ckpt), &mut NoopObserver).map_err(err)?;
        steps = out.checkpoint.step;
        series.extend(out.steps.iter().map(|s| s.loss.sbr));
        ckpt = out.checkpoint;
        let (c, _) =
            mean_backbone_cosine(&ckpt.encoder, &ckpt.heads, &ckpt.vocab, &opts, &held).map_err(err)?;
        cos = c;
        if e >= min_epochs && (cos - cos0 >= SBR_GAIN_FLOOR || t0.elapsed() > UOR_WALL_BUDGET) {
            break;
        }
    }
    let wall = t0.elapsed();

    let gain = cos - cos0;
    if gain < SBR_GAIN_FLOOR {
        return Err(format!(
            "held-out cosine moved {:.3} (from {:.3} to {:.3}) after {} steps; floor {}",
            gain, cos0, cos, steps, SBR_GAIN_FLOOR
        ));
    }

    // Block means of the per-step backbone loss must fall monotonically.
    let block = series.len() / SBR_CURVE_BLOCKS;
    if block == 0 {
        return Err(format!("only {} steps collected; cannot smooth the curve", series.len()));
    }
    let means: Vec<f64> = (0..SBR_CURVE_BLOCKS)
        .map(|b| mean(&series[b * block..(b + 1) * block]))
        .collect();
    if !means.windows(2).all(|w| w[1] < w[0]) {
        return Err(format!("smoothed backbone loss is not decreasing: {:?}", means));
    }

    Ok(format!(
        "held-out cosine {:.3} -> {:.3} (gain {:.3}) over {} triplets after {} steps; smoothed loss {:.3} -> {:.3} ({:.0?})",
        cos0,
        cos,
        gain,
        triplets,
        steps,
        means[0],
        means[SBR_CURVE_BLOCKS - 1],
        wall
    ))
}

// ── criterion 7: downstream trend ───────────────────────────────────────

fn c7_downstream() -> Verdict {
    let t0 = Instant::now();
    let gen = SynthConfig {
        dialogues: 600,
        mean_turns: 4.0,
        turns_jitter: 1.0,
        mean_words: 6.0,
        cue_strength: 1.0,
        svo_density: 1.0,
        candidates: 2,
        negative_pool: 12,
        seed: 71,
    };
    // Eight topic slices keep cross-topic negatives dominant and every turn
    // carries a subject-verb-object skeleton, so hand-crafted marker+overlap
    // scoring separates this corpus at R_2@1 ~ 0.98: the 0.9 floor leaves
    // headroom below what the features support.
    let lex = GrammarLexicon { topics: 8, ..Default::default() };
    let (train, valid) = gen_split_with(&gen, &lex, 0.9)?;

    let cfg_for = |regime: Regime, seed: u64, epochs: usize| {
        let mut cfg = small_cfg(regime, seed, epochs, 64, 96);
        cfg.weight_decay = 0.0;
        cfg.delta = 0.5; // permutation window active from K = 4 up
        cfg.task = TaskKind::Multichoice;
        cfg
    };

    // Desk-scale stand-in for a pretrained LM: masked-token pretraining,
    // shared by both structural regimes the way full-size encoders arrive
    // pretrained once. Binary-style heads barely move at this scale (the
    // pair loss stays near ln 2), so ranking trains as one softmax per
    // candidate set.
    let mut m0_cfg = cfg_for(Regime::DapPosttrain, 71, 24);
    m0_cfg.weights = LossWeights { lambda2: 0.0, lambda3: 0.0, ..LossWeights::default() };
    let m0 = run_posttrain(&m0_cfg, &train, None, &mut NoopObserver).map_err(err)?;

    // Structural post-training stage on top of the LM init, also shared:
    // the paired comparison varies the fine-tuning seed, isolating what the
    // initialization contributes.
    let pt_cfg = cfg_for(Regime::DapPosttrain, 71, 34);
    let pt = run_posttrain(&pt_cfg, &train, Some(m0.checkpoint.clone()), &mut NoopObserver)
        .map_err(err)?;

    let mut base_r2 = Vec::new();
    let mut dap_r2 = Vec::new();
    let mut mtf_r2 = Vec::new();
    for &seed in &TREND_SEEDS {
        let bl_cfg = cfg_for(Regime::BaselineFinetune, seed, 6);
        let bl = run_finetune(&bl_cfg, &train, &valid, None, &mut NoopObserver).map_err(err)?;
        base_r2.push(r2_at_1(&bl)?);

        let dap_cfg = cfg_for(Regime::DapFinetune, seed, 6);
        let dap = run_finetune(
            &dap_cfg,
            &train,
            &valid,
            Some(pt.checkpoint.clone()),
            &mut NoopObserver,
        )
        .map_err(err)?;
        dap_r2.push(r2_at_1(&dap)?);

        let mtf_cfg = cfg_for(Regime::Mtf, seed, 6);
        let mtf = run_mtf(&mtf_cfg, &train, &valid, Some(m0.checkpoint.clone()), &mut NoopObserver)
            .map_err(err)?;
        mtf_r2.push(r2_at_1(&mtf)?);
    }

    let (mb, md, mm) = (mean(&base_r2), mean(&dap_r2), mean(&mtf_r2));
    let dap_diffs: Vec<f64> = dap_r2.iter().zip(&base_r2).map(|(d, b)| d - b).collect();
    let mtf_diffs: Vec<f64> = mtf_r2.iter().zip(&base_r2).map(|(m, b)| m - b).collect();
    let (se_dap, se_mtf) = (paired_se(&dap_diffs), paired_se(&mtf_diffs));

    let mut problems = Vec::new();
    if mean(&dap_diffs) < -se_dap {
        problems.push(format!(
            "post-train init trails the baseline: mean diff {:.4} < -SE {:.4}",
            mean(&dap_diffs),
            se_dap
        ));
    }
    if mean(&mtf_diffs) < -se_mtf {
        problems.push(format!(
            "multi-task trails the baseline: mean diff {:.4} < -SE {:.4}",
            mean(&mtf_diffs),
            se_mtf
        ));
    }
    if md < R2_FLOOR {
        problems.push(format!("post-train init mean R_2@1 {:.3} below {}", md, R2_FLOOR));
    }
    if mm < R2_FLOOR {
        problems.push(format!("multi-task mean R_2@1 {:.3} below {}", mm, R2_FLOOR));
    }
    if !problems.is_empty() {
        return Err(format!(
            "{} [baseline {:.3}, post-train {:.3}, multi-task {:.3} over seeds {:?}]",
            problems.join("; "),
            mb,
            md,
            mm,
            TREND_SEEDS
        ));
    }
    Ok(format!(
        "mean R_2@1 over {} paired seeds: baseline {:.3}, post-train init {:.3} (diff {:+.3} +- {:.3}), multi-task {:.3} (diff {:+.3} +- {:.3}) ({:.0?})",
        TREND_SEEDS.len(),
        mb,
        md,
        mean(&dap_diffs),
        se_dap,
        mm,
        mean(&mtf_diffs),
        se_mtf,
        t0.elapsed()
    ))
}

// ── criterion 8: delta sweep harness ────────────────────────────────────

fn c8_sweep() -> Verdict {
    let gen = SynthConfig {
        dialogues: 72,
        mean_turns: 4.0,
        turns_jitter: 1.0,
        mean_words: 6.0,
        cue_strength: 0.8,
        svo_density: 0.5,
        candidates: 2,
        negative_pool: 8,
        seed: 81,
    };
    let (train, valid) = gen_split(&gen, 2.0 / 3.0)?;

    let cfg = small_cfg(Regime::Mtf, 82, 1, 16, 96);
    let grid = default_grid();
    let sweep = sweep_delta(&cfg, &grid, &train, &valid, None).map_err(err)?;
    if sweep.rows.len() != grid.len() {
        return Err(format!("{} rows for {} grid points", sweep.rows.len(), grid.len()));
    }
    for (row, &d) in sweep.rows.iter().zip(&grid) {
        if row.delta != d || row.steps == 0 {
            return Err(format!("row for delta {} is malformed", d));
        }
    }

    // No-permutation baseline: same run with the order-restoration weight
    // off and an arbitrary nonzero window fraction.
    let mut bl_cfg = cfg.clone();
    bl_cfg.delta = 0.9;
    bl_cfg.weights = LossWeights { beta2: 0.0, ..LossWeights::default() };
    let baseline = run_mtf(&bl_cfg, &train, &valid, None, &mut NoopObserver).map_err(err)?;

    let zero = &sweep.outputs[0];
    let steps_match = serde_json::to_string(&zero.steps).unwrap()
        == serde_json::to_string(&baseline.steps).unwrap();
    if !steps_match {
        return Err("delta-0 row logs differ from the no-permutation baseline".into());
    }
    if param_gap(&zero.checkpoint.encoder, &baseline.checkpoint.encoder) != 0.0 {
        return Err("delta-0 row weights differ from the no-permutation baseline".into());
    }
    if zero.best_epoch != baseline.best_epoch {
        return Err("delta-0 row selected a different best epoch".into());
    }
    Ok(format!(
        "grid {:?} completed ({} steps per row); delta-0 row is bit-identical to the no-permutation baseline",
        grid, sweep.rows[0].steps
    ))
}

// ── criterion 9: determinism and persistence ────────────────────────────

fn step_lines(dir: &std::path::Path) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(dir.join("log.jsonl")).map_err(|e| e.to_string())?;
    Ok(text
        .lines()
        .filter(|l| {
            matches!(serde_json::from_str::<LogRecord>(l), Ok(LogRecord::Step(_)))
        })
        .map(str::to_string)
        .collect())
}

fn c9_determinism() -> Verdict {
    let gen = SynthConfig {
        dialogues: 48,
        mean_turns: 4.0,
        turns_jitter: 1.0,
        mean_words: 6.0,
        cue_strength: 0.8,
        svo_density: 0.5,
        candidates: 2,
        negative_pool: 8,
        seed: 91,
    };
    let corpus = gen_corpus(&gen)?;
    let mut cfg = small_cfg(Regime::DapPosttrain, 92, 2, 16, 96);
    cfg.batch_size = 4; // 12 steps per epoch, enough for the 10-step check

    // Identical configs, identical logs.
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (dir_a, dir_b) = (tmp.path().join("a"), tmp.path().join("b"));
    let mut obs_a = DirObserver::create(&dir_a).map_err(err)?;
    let run_a = run_posttrain(&cfg, &corpus, None, &mut obs_a).map_err(err)?;
    let mut obs_b = DirObserver::create(&dir_b).map_err(err)?;
    let _run_b = run_posttrain(&cfg, &corpus, None, &mut obs_b).map_err(err)?;
    let (lines_a, lines_b) = (step_lines(&dir_a)?, step_lines(&dir_b)?);
    if lines_a.len() < DETERMINISM_STEPS {
        return Err(format!("only {} steps logged", lines_a.len()));
    }
    if lines_a[..DETERMINISM_STEPS] != lines_b[..DETERMINISM_STEPS] {
        return Err("first 10 step lines differ between identical runs".into());
    }

    // Checkpoint bytes survive a decode/encode cycle unchanged.
    let bytes = to_bytes(&run_a.checkpoint).map_err(err)?;
    let reloaded = from_bytes(&bytes).map_err(err)?;
    let again = to_bytes(&reloaded).map_err(err)?;
    if bytes != again {
        return Err("save -> load -> save changed the checkpoint bytes".into());
    }

    // A run resumed from its epoch-1 checkpoint replays the uninterrupted
    // run, with the checkpoint round-tripped through bytes on the way.
    let mut half = cfg.clone();
    half.epochs = Some(1);
    let first = run_posttrain(&half, &corpus, None, &mut NoopObserver).map_err(err)?;
    let revived = from_bytes(&to_bytes(&first.checkpoint).map_err(err)?).map_err(err)?;
    let resumed = run_posttrain(&cfg, &corpus, Some(revived), &mut NoopObserver).map_err(err)?;

    let tail = &run_a.steps[first.steps.len()..];
    if tail.len() != resumed.steps.len() {
        return Err(format!("resume replayed {} steps, want {}", resumed.steps.len(), tail.len()));
    }
    let mut worst = 0.0f64;
    for (s, r) in tail.iter().zip(&resumed.steps) {
        if (s.step, s.epoch) != (r.step, r.epoch) {
            return Err(format!("resume step ids diverge at step {}", r.step));
        }
        worst = worst.max(breakdown_gap(&s.loss, &r.loss)?);
    }
    worst = worst.max(param_gap(&run_a.checkpoint.encoder, &resumed.checkpoint.encoder));
    if worst > TOL_RESUME {
        return Err(format!("resumed run deviates by {:.3e} (tolerance {:.0e})", worst, TOL_RESUME));
    }

    Ok(format!(
        "identical first-{} step logs; checkpoint bytes stable through decode/encode; resume gap {:.1e} <= {:.0e}",
        DETERMINISM_STEPS, worst, TOL_RESUME
    ))
}

// ── the gate ────────────────────────────────────────────────────────────

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("gradient suite", c1_gradients),
        ("composite-loss identities", c2_composite),
        ("permutation round-trip", c3_permutation),
        ("ranking metric oracle", c4_metrics),
        ("order-restoration learnability", c5_uor_learning),
        ("backbone regularizer effect", c6_sbr_effect),
        ("downstream trend", c7_downstream),
        ("delta sweep harness", c8_sweep),
        ("determinism and persistence", c9_determinism),
    ];

    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let line = match run() {
            Ok(detail) => format!("criterion {} ({}): PASS — {}", i + 1, name, detail),
            Err(why) => {
                failures.push(i + 1);
                format!("criterion {} ({}): FAIL — {}", i + 1, name, why)
            }
        };
        println!("{}", line);
        lines.push(line);
    }

    assert!(
        failures.is_empty(),
        "acceptance criteria {:?} failed:\n{}",
        failures,
        lines.join("\n")
    );
}
