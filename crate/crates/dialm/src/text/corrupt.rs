//! Seeded corruption of assembled sequences: token masking, utterance
//! permutation, and next-sentence pairing.
//!
//! Every function here is a pure map (input, seed) → output, so identical
//! seeds reproduce identical corruptions regardless of call order or thread
//! count.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::assemble::{assemble_sequence, assemble_with_response, AssembleOptions, InputSequence, TokenTriplet};
use super::corpus::DialogueExample;
use super::svo::SvoLexicon;
use super::vocab::{Vocab, MASK, RESERVED_TOKENS, UNK};
use crate::{Error, Result};

/// One training view of one example: the corrupted sequence plus everything
/// the objectives need to score it.
#[derive(Debug, Clone)]
pub struct CorruptionRecord {
    pub seq: InputSequence,
    /// Original window-relative index of each permuted slot; empty when the
    /// permutation was skipped.
    pub order_labels: Vec<u32>,
    /// Original token id at masked positions, 0 (= `[PAD]`, never maskable)
    /// elsewhere. Same length as `seq.ids`.
    pub mlm_labels: Vec<u32>,
    pub nsp_label: Option<u8>,
}

impl CorruptionRecord {
    pub fn k_prime(&self) -> usize {
        self.order_labels.len()
    }
}

/// Masks a seeded fraction of maskable positions. Of the selected: 80%
/// become `[MASK]`, 10% a random regular token, 10% keep their id. Returns
/// the corrupted sequence and a dense label vector (0 = not scored).
pub fn apply_mlm_mask(
    seq: &InputSequence,
    mask_rate: f64,
    vocab: &Vocab,
    seed: u64,
) -> Result<(InputSequence, Vec<u32>)> {
    if !(0.0..=1.0).contains(&mask_rate) {
        return Err(Error::InvalidArgument(format!("mask_rate {}", mask_rate)));
    }
    let maskable: Vec<usize> = (0..seq.ids.len())
        .filter(|&i| seq.attention_mask[i] == 1 && !Vocab::is_structural(seq.ids[i]))
        .collect();
    let count = ((mask_rate * maskable.len() as f64).round() as usize).min(maskable.len());

    let mut out = seq.clone();
    let mut labels = vec![0u32; seq.ids.len()];
    if count == 0 {
        return Ok((out, labels));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = rand::seq::index::sample(&mut rng, maskable.len(), count)
        .into_iter()
        .map(|i| maskable[i])
        .collect();
    chosen.sort_unstable();

    let reserved = RESERVED_TOKENS.len() as u32;
    for pos in chosen {
        labels[pos] = out.ids[pos];
        let u: f64 = rng.gen();
        if u < 0.8 {
            out.ids[pos] = MASK;
        } else if u < 0.9 {
            out.ids[pos] = if vocab.regular_len() > 0 {
                rng.gen_range(reserved..vocab.len() as u32)
            } else {
                UNK
            };
        }
    }
    Ok((out, labels))
}

/// Reorders the last `K′ = floor(K·delta)` utterances by a uniform
/// non-identity permutation, moving each token block with its `[EOU]`.
/// Returns the new sequence and per-slot order labels (empty when K′ < 2,
/// in which case the sequence is returned unchanged).
pub fn permute_utterances(
    seq: &InputSequence,
    delta: f64,
    seed: u64,
) -> Result<(InputSequence, Vec<u32>)> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidArgument(format!("delta {}", delta)));
    }
    let k = seq.utterance_count();
    let k_prime = (k as f64 * delta).floor() as usize;
    if k_prime < 2 {
        return Ok((seq.clone(), Vec::new()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // perm[j] = window-relative original index of the utterance now in slot j
    let mut perm: Vec<usize> = (0..k_prime).collect();
    loop {
        perm.shuffle(&mut rng);
        if perm.iter().enumerate().any(|(j, &p)| j != p) {
            break;
        }
    }

    let first = k - k_prime;
    let window_start = seq.utterance_spans[first].0;
    let window_end = seq.utterance_spans[k - 1].1;

    let mut out = seq.clone();
    let mut cursor = window_start;
    let mut new_spans = Vec::with_capacity(k_prime);
    for &p in &perm {
        let (s, e) = seq.utterance_spans[first + p];
        out.ids[cursor..cursor + (e - s)].copy_from_slice(&seq.ids[s..e]);
        out.word_alignment[cursor..cursor + (e - s)].clone_from_slice(&seq.word_alignment[s..e]);
        new_spans.push((cursor, cursor + (e - s)));
        cursor += e - s;
    }
    debug_assert_eq!(cursor, window_end);
    for (j, &(s, e)) in new_spans.iter().enumerate() {
        out.utterance_spans[first + j] = (s, e);
        out.eou_positions[first + j] = e - 1;
    }

    // slot_of[p] = window slot now holding original utterance first+p
    let mut slot_of = vec![0usize; k_prime];
    for (j, &p) in perm.iter().enumerate() {
        slot_of[p] = j;
    }
    out.triplets = seq
        .triplets
        .iter()
        .map(|t| {
            if t.utterance < first {
                *t
            } else {
                let p = t.utterance - first;
                let j = slot_of[p];
                let old_start = seq.utterance_spans[first + p].0;
                let new_start = new_spans[j].0;
                TokenTriplet {
                    subj: t.subj - old_start + new_start,
                    verb: t.verb - old_start + new_start,
                    obj: t.obj - old_start + new_start,
                    utterance: first + j,
                }
            }
        })
        .collect();

    let labels: Vec<u32> = perm.iter().map(|&p| p as u32).collect();
    Ok((out, labels))
}

/// Pairs a context with its own response (label 1) or a response drawn from
/// another dialogue (label 0), each with probability one half.
pub fn make_nsp_pair(
    corpus: &[DialogueExample],
    idx: usize,
    vocab: &Vocab,
    opts: &AssembleOptions,
    lexicon: Option<&SvoLexicon>,
    seed: u64,
) -> Result<(InputSequence, u8)> {
    if corpus.len() < 2 {
        return Err(Error::Sampling(format!("{} examples, need at least 2", corpus.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if rng.gen::<f64>() < 0.5 {
        nsp_positive(corpus, idx, vocab, opts, lexicon)
    } else {
        nsp_negative(corpus, idx, vocab, opts, lexicon, rng.gen())
    }
}

/// The label-1 branch: the example's own positive response.
pub fn nsp_positive(
    corpus: &[DialogueExample],
    idx: usize,
    vocab: &Vocab,
    opts: &AssembleOptions,
    lexicon: Option<&SvoLexicon>,
) -> Result<(InputSequence, u8)> {
    let ex = &corpus[idx];
    let pos = ex
        .positive_index()
        .ok_or_else(|| Error::Sampling(format!("{}: no positive candidate", ex.id)))?;
    Ok((assemble_sequence(ex, pos, vocab, opts, lexicon)?, 1))
}

/// The label-0 branch: a uniformly sampled positive response from a
/// different dialogue.
pub fn nsp_negative(
    corpus: &[DialogueExample],
    idx: usize,
    vocab: &Vocab,
    opts: &AssembleOptions,
    lexicon: Option<&SvoLexicon>,
    seed: u64,
) -> Result<(InputSequence, u8)> {
    if corpus.len() < 2 {
        return Err(Error::Sampling(format!("{} examples, need at least 2", corpus.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ex = &corpus[idx];
    for _ in 0..64 {
        let j = rng.gen_range(0..corpus.len());
        if j == idx {
            continue;
        }
        let Some(p) = corpus[j].positive_index() else { continue };
        let response = &corpus[j].candidates[p].text;
        let seq = assemble_with_response(&ex.id, &ex.context, response, vocab, opts, lexicon)?;
        return Ok((seq, 0));
    }
    Err(Error::Sampling("no foreign response found in 64 draws".into()))
}
