//! Tokenization, vocabulary, input-sequence assembly, and the corruption
//! procedures that manufacture training signal from clean dialogues.
//!
//! Layout produced here: `[CLS] R [SEP] U₁ [EOU] U₂ [EOU] … U_K [EOU] [SEP]`
//! padded to a fixed length. Every utterance keeps its own end marker so the
//! encoder always yields exactly K utterance representations.

mod assemble;
mod corpus;
mod corrupt;
mod svo;
mod vocab;

pub use assemble::{assemble_sequence, assemble_with_response, AssembleOptions, InputSequence, TokenTriplet};
pub use corpus::{load_jsonl, save_jsonl, Candidate, DialogueExample, Utterance};
pub use corrupt::{apply_mlm_mask, make_nsp_pair, nsp_negative, nsp_positive, permute_utterances, CorruptionRecord};
pub use svo::{extract_svo, SvoLexicon};
pub use vocab::{Tokenized, Vocab, CLS, EOU, MASK, PAD, RESERVED_TOKENS, SEP, UNK};
