//! Fixed-length input assembly.
//!
//! Produces `[CLS] R [SEP] U₁ [EOU] … U_K [EOU] [SEP]` padded to exactly
//! `max_len`. When the context is too long, whole utterances are dropped
//! oldest-first down to `max_utterances`, then single words come off the end
//! of the currently longest utterance until everything fits. The response is
//! never trimmed.

use super::corpus::{DialogueExample, Utterance};
use super::svo::{extract_svo, SvoLexicon};
use super::vocab::{Vocab, CLS, EOU, PAD, SEP};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AssembleOptions {
    pub max_len: usize,
    pub max_utterances: usize,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        AssembleOptions { max_len: 128, max_utterances: 20 }
    }
}

/// Token positions of one subject/verb/object triplet, each pointing at the
/// first (and under word-level tokenization, only) subtoken of its word.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenTriplet {
    pub subj: usize,
    pub verb: usize,
    pub obj: usize,
    /// Index into `utterance_spans` of the owning utterance.
    pub utterance: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputSequence {
    /// Token ids, exactly `max_len` long.
    pub ids: Vec<u32>,
    /// 1 over real tokens, 0 over padding.
    pub attention_mask: Vec<u8>,
    /// 0 over `[CLS] R [SEP]` and padding, 1 over the context region.
    pub segment_ids: Vec<u8>,
    /// Position of each retained utterance's `[EOU]`, oldest first.
    pub eou_positions: Vec<usize>,
    /// Token span `[start, end)` of each retained utterance, `[EOU]`
    /// included, so `end - 1 == eou_positions[i]`.
    pub utterance_spans: Vec<(usize, usize)>,
    /// Per position: index of the word within its response or utterance,
    /// `None` at structural markers and padding.
    pub word_alignment: Vec<Option<u32>>,
    pub triplets: Vec<TokenTriplet>,
    /// First padding position.
    pub real_len: usize,
}

impl InputSequence {
    pub fn utterance_count(&self) -> usize {
        self.eou_positions.len()
    }
}

/// Assembles one (context, candidate response) pair from an example.
pub fn assemble_sequence(
    example: &DialogueExample,
    candidate: usize,
    vocab: &Vocab,
    opts: &AssembleOptions,
    lexicon: Option<&SvoLexicon>,
) -> Result<InputSequence> {
    let cand = example.candidates.get(candidate).ok_or_else(|| {
        Error::Index(format!(
            "{}: candidate {} of {}",
            example.id,
            candidate,
            example.candidates.len()
        ))
    })?;
    assemble_with_response(&example.id, &example.context, &cand.text, vocab, opts, lexicon)
}

/// Assembles a context against an arbitrary response text (used for
/// next-sentence pairs whose response comes from another dialogue).
pub fn assemble_with_response(
    id: &str,
    context: &[Utterance],
    response: &str,
    vocab: &Vocab,
    opts: &AssembleOptions,
    lexicon: Option<&SvoLexicon>,
) -> Result<InputSequence> {
    if opts.max_len < 8 {
        return Err(Error::InvalidArgument(format!("max_len {} < 8", opts.max_len)));
    }
    if context.is_empty() {
        return Err(Error::Data(format!("{}: empty context", id)));
    }
    let r = vocab.tokenize(response);

    let dropped = context.len().saturating_sub(opts.max_utterances);
    let retained = &context[dropped..];
    let k = retained.len();

    let mut words: Vec<Vec<u32>> = Vec::with_capacity(k);
    let mut word_triplets: Vec<Vec<[usize; 3]>> = Vec::with_capacity(k);
    for (i, utt) in retained.iter().enumerate() {
        let tok = vocab.tokenize(&utt.text);
        let triplets = extract_svo(
            &tok.words,
            utt.svo.as_deref(),
            lexicon,
            &format!("{}/u{}", id, dropped + i),
        )?;
        words.push(tok.ids);
        word_triplets.push(triplets);
    }

    // [CLS] + R + [SEP] + one [EOU] per utterance + final [SEP]
    let fixed = 3 + r.ids.len() + k;
    if fixed > opts.max_len {
        if 3 + r.ids.len() > opts.max_len {
            return Err(Error::Capacity(format!(
                "{}: response of {} words cannot fit in max_len {}",
                id,
                r.ids.len(),
                opts.max_len
            )));
        }
        return Err(Error::Capacity(format!(
            "{}: {} utterance markers leave no room in max_len {}",
            id, k, opts.max_len
        )));
    }

    // Longest-first word trimming: pull one word off the end of the longest
    // utterance (ties break toward the oldest) until the budget is met.
    let budget = opts.max_len - fixed;
    let mut lengths: Vec<usize> = words.iter().map(|w| w.len()).collect();
    let mut total: usize = lengths.iter().sum();
    while total > budget {
        let (longest, &len) =
            lengths.iter().enumerate().max_by_key(|&(i, &l)| (l, std::cmp::Reverse(i))).unwrap();
        debug_assert!(len > 0, "trim loop with empty utterances");
        lengths[longest] = len - 1;
        total -= 1;
    }

    let max_len = opts.max_len;
    let mut ids = Vec::with_capacity(max_len);
    let mut alignment: Vec<Option<u32>> = Vec::with_capacity(max_len);
    ids.push(CLS);
    alignment.push(None);
    for (w, &wid) in r.ids.iter().enumerate() {
        ids.push(wid);
        alignment.push(Some(w as u32));
    }
    ids.push(SEP);
    alignment.push(None);
    let seg_boundary = ids.len();

    let mut eou_positions = Vec::with_capacity(k);
    let mut utterance_spans = Vec::with_capacity(k);
    let mut triplets = Vec::new();
    for (i, utt_ids) in words.iter().enumerate() {
        let start = ids.len();
        for (w, &wid) in utt_ids[..lengths[i]].iter().enumerate() {
            ids.push(wid);
            alignment.push(Some(w as u32));
        }
        eou_positions.push(ids.len());
        ids.push(EOU);
        alignment.push(None);
        utterance_spans.push((start, ids.len()));
        for t in &word_triplets[i] {
            if t.iter().all(|&ix| ix < lengths[i]) {
                triplets.push(TokenTriplet {
                    subj: start + t[0],
                    verb: start + t[1],
                    obj: start + t[2],
                    utterance: i,
                });
            }
        }
    }
    ids.push(SEP);
    alignment.push(None);
    let real_len = ids.len();
    debug_assert!(real_len <= max_len);

    let mut attention_mask = vec![1u8; real_len];
    let mut segment_ids = vec![0u8; real_len];
    for s in segment_ids[seg_boundary..].iter_mut() {
        *s = 1;
    }
    ids.resize(max_len, PAD);
    alignment.resize(max_len, None);
    attention_mask.resize(max_len, 0);
    segment_ids.resize(max_len, 0);

    Ok(InputSequence {
        ids,
        attention_mask,
        segment_ids,
        eou_positions,
        utterance_spans,
        word_alignment: alignment,
        triplets,
        real_len,
    })
}
