//! End-to-end gradient verification: every training loss, differentiated
//! through a full encoder in 64-bit, checked against central differences.
//! Shared by the `gradcheck` subcommand and the acceptance gate.

use std::collections::BTreeMap;

use crate::encoder::{encode, pooled_representation, EncoderConfig, EncoderState};
use crate::gradcheck::{grad_check, GradCheckConfig};
use crate::objectives::{
    dm_loss_binary, dm_loss_multichoice, dm_score, mlm_loss, nsp_loss,
    permuted_slot_representations, sbr_loss, uor_loss, HeadConfig, HeadState,
};
use crate::rng::derive_seed;
use crate::tensor::{Tape, Tensor, TensorId};
use crate::text::{
    apply_mlm_mask, assemble_sequence, permute_utterances, AssembleOptions, Candidate,
    DialogueExample, InputSequence, Utterance, Vocab, RESERVED_TOKENS,
};
use crate::{Error, Result};

/// The losses the suite covers.
pub const SUITE_LOSSES: [&str; 6] = ["mlm", "nsp", "uor", "sbr", "dm-binary", "dm-multichoice"];

#[derive(Debug, Clone)]
pub struct SuiteCase {
    pub loss: &'static str,
    pub seed: u64,
    pub max_err_ratio: f64,
    pub pass: bool,
}

enum Case {
    Mlm { seq: InputSequence, labels: Vec<u32> },
    Nsp { seq: InputSequence, label: u8 },
    Uor { seq: InputSequence, labels: Vec<u32> },
    Sbr { seq: InputSequence },
    DmBinary { seq: InputSequence, label: u8 },
    DmMc { seqs: Vec<InputSequence>, correct: usize },
}

fn toy_vocab() -> Vocab {
    let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
    for i in 0..12 {
        tokens.push(format!("w{}", i));
    }
    Vocab::from_tokens(tokens).expect("reserved prefix is intact")
}

fn toy_example() -> DialogueExample {
    let utt = |speaker: &str, text: &str| Utterance {
        speaker: speaker.into(),
        text: text.into(),
        svo: Some(vec![[0, 1, 2]]),
    };
    DialogueExample {
        id: "gradsuite".into(),
        context: vec![utt("a", "w0 w1 w2"), utt("b", "w3 w4 w5"), utt("a", "w6 w7 w0")],
        candidates: vec![
            Candidate { text: "w8 w9".into(), label: 1 },
            Candidate { text: "w10 w11".into(), label: 0 },
        ],
    }
}

fn params_f64(enc: &EncoderState, heads: &HeadState) -> BTreeMap<String, Tensor<f64>> {
    let mut out = enc.params_f64();
    for (name, t) in heads.params() {
        let data: Vec<f64> = t.data().iter().map(|&v| v as f64).collect();
        out.insert(name.clone(), Tensor::new(t.shape().to_vec(), data).unwrap());
    }
    out
}

fn case_loss(
    tape: &mut Tape<f64>,
    vars: &BTreeMap<String, TensorId>,
    cfg: &EncoderConfig,
    case: &Case,
) -> Result<TensorId> {
    let forward = |tape: &mut Tape<f64>, seq: &InputSequence| -> Result<TensorId> {
        Ok(encode(tape, vars, cfg, seq, false, None)?.hidden)
    };
    match case {
        Case::Mlm { seq, labels } => {
            let h = forward(tape, seq)?;
            let (loss, n) = mlm_loss(tape, vars, h, labels)?;
            if n == 0 {
                return Err(Error::Contract("mlm case masked nothing".into()));
            }
            Ok(loss)
        }
        Case::Nsp { seq, label } => {
            let h = forward(tape, seq)?;
            let pooled = pooled_representation(tape, vars, h)?;
            nsp_loss(tape, vars, pooled, *label)
        }
        Case::Uor { seq, labels } => {
            let h = forward(tape, seq)?;
            let slots = permuted_slot_representations(tape, h, seq, labels.len())?;
            let (loss, n) = uor_loss(tape, vars, slots, labels)?;
            if n == 0 {
                return Err(Error::Contract("uor case permuted nothing".into()));
            }
            Ok(loss)
        }
        Case::Sbr { seq } => {
            let h = forward(tape, seq)?;
            let (loss, n) = sbr_loss(tape, h, &seq.triplets, seq.real_len)?;
            if n == 0 {
                return Err(Error::Contract("sbr case carries no triplets".into()));
            }
            Ok(loss)
        }
        Case::DmBinary { seq, label } => {
            let h = forward(tape, seq)?;
            let pooled = pooled_representation(tape, vars, h)?;
            dm_loss_binary(tape, vars, pooled, *label)
        }
        Case::DmMc { seqs, correct } => {
            let mut scores = Vec::with_capacity(seqs.len());
            for seq in seqs {
                let h = forward(tape, seq)?;
                let pooled = pooled_representation(tape, vars, h)?;
                scores.push(dm_score(tape, vars, pooled)?);
            }
            dm_loss_multichoice(tape, &scores, *correct)
        }
    }
}

fn check_case(
    enc_cfg: &EncoderConfig,
    init: &BTreeMap<String, Tensor<f64>>,
    case: &Case,
    gc: &GradCheckConfig,
) -> Result<(f64, bool)> {
    let mut params = init.clone();
    let mut f = |p: &BTreeMap<String, Tensor<f64>>| -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
        let mut tape = Tape::<f64>::new();
        let mut vars = BTreeMap::new();
        for (name, t) in p {
            vars.insert(name.clone(), tape.param(t.clone()));
        }
        let loss = case_loss(&mut tape, &vars, enc_cfg, case)?;
        let value = tape.value(loss).data()[0];
        tape.backward(loss)?;
        let mut grads = BTreeMap::new();
        for (name, &id) in &vars {
            let g = tape
                .grad(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; p[name].numel()]);
            grads.insert(name.clone(), g);
        }
        Ok((value, grads))
    };
    let report = grad_check(&mut params, &mut f, gc)?;
    Ok((report.max_err_ratio, report.pass))
}

/// Differentiates every loss through a `layers`-deep, `hidden`-wide encoder
/// for each seed and verifies the gradients numerically. Seeds vary both
/// the parameter draw and the corruption draws.
pub fn gradient_suite(
    layers: usize,
    hidden: usize,
    seeds: &[u64],
    max_coords: usize,
) -> Result<Vec<SuiteCase>> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("no seeds".into()));
    }
    let vocab = toy_vocab();
    let example = toy_example();
    let opts = AssembleOptions { max_len: 24, max_utterances: 8 };

    let run_seed = |&seed: &u64| -> Result<Vec<SuiteCase>> {
        let enc_cfg = EncoderConfig {
            vocab_size: vocab.len(),
            hidden,
            layers,
            heads: 2,
            ffn: hidden * 3 / 2,
            max_position: 32,
            dropout: 0.0,
            seed: derive_seed(seed, "suite-enc", 0, 0),
        };
        let enc = EncoderState::init(enc_cfg)?;
        let heads = HeadState::init(
            HeadConfig::new(hidden, vocab.len()),
            derive_seed(seed, "suite-head", 0, 0),
        )?;
        let init = params_f64(&enc, &heads);

        let base = assemble_sequence(&example, 0, &vocab, &opts, None)?;
        let neg = assemble_sequence(&example, 1, &vocab, &opts, None)?;
        let (masked, mlm_labels) =
            apply_mlm_mask(&base, 0.3, &vocab, derive_seed(seed, "suite-mask", 0, 0))?;
        let (permuted, order_labels) =
            permute_utterances(&base, 1.0, derive_seed(seed, "suite-permute", 0, 0))?;

        let cases: Vec<(&'static str, Case)> = vec![
            ("mlm", Case::Mlm { seq: masked, labels: mlm_labels }),
            ("nsp", Case::Nsp { seq: base.clone(), label: (seed % 2) as u8 }),
            ("uor", Case::Uor { seq: permuted, labels: order_labels }),
            ("sbr", Case::Sbr { seq: base.clone() }),
            ("dm-binary", Case::DmBinary { seq: base.clone(), label: ((seed >> 1) % 2) as u8 }),
            ("dm-multichoice", Case::DmMc { seqs: vec![base.clone(), neg], correct: 0 }),
        ];

        let gc = GradCheckConfig { max_coords, seed, ..GradCheckConfig::default() };
        let mut out = Vec::with_capacity(cases.len());
        for (name, case) in &cases {
            let (ratio, pass) = check_case(&enc_cfg, &init, case, &gc)?;
            out.push(SuiteCase { loss: name, seed, max_err_ratio: ratio, pass });
        }
        Ok(out)
    };

    #[cfg(feature = "parallel")]
    let nested: Result<Vec<Vec<SuiteCase>>> = {
        use rayon::prelude::*;
        seeds.par_iter().map(run_seed).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let nested: Result<Vec<Vec<SuiteCase>>> = seeds.iter().map(run_seed).collect();

    Ok(nested?.into_iter().flatten().collect())
}

/// One line per case, plus a summary verdict line.
pub fn format_suite(cases: &[SuiteCase]) -> String {
    let mut s = String::new();
    for c in cases {
        s.push_str(&format!(
            "{:<16} seed={:<4} err_ratio={:.3e} {}\n",
            c.loss,
            c.seed,
            c.max_err_ratio,
            if c.pass { "ok" } else { "FAIL" }
        ));
    }
    let failed = cases.iter().filter(|c| !c.pass).count();
    s.push_str(&format!(
        "{} cases, {} failed: {}\n",
        cases.len(),
        failed,
        if failed == 0 { "PASS" } else { "FAIL" }
    ));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_a_small_encoder() {
        let cases = gradient_suite(1, 8, &[11, 12], 2).unwrap();
        assert_eq!(cases.len(), 2 * SUITE_LOSSES.len());
        for c in &cases {
            assert!(c.pass, "{} seed {} ratio {}", c.loss, c.seed, c.max_err_ratio);
        }
    }

    #[test]
    fn empty_seed_list_is_rejected() {
        assert!(matches!(gradient_suite(1, 8, &[], 2), Err(Error::InvalidArgument(_))));
    }
}
