//! Subject/verb/object triplet extraction at word level.
//!
//! Gold annotations pass through untouched (after range validation). The
//! heuristic path targets the synthetic grammar: a closed verb lexicon plus
//! a determiner list, matching `(det?) noun VERB (det?) noun` around the
//! first verb in the utterance.

use std::collections::BTreeSet;

use crate::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct SvoLexicon {
    pub verbs: BTreeSet<String>,
    pub determiners: BTreeSet<String>,
}

impl SvoLexicon {
    pub fn new<V, D>(verbs: V, determiners: D) -> Self
    where
        V: IntoIterator<Item = String>,
        D: IntoIterator<Item = String>,
    {
        SvoLexicon {
            verbs: verbs.into_iter().collect(),
            determiners: determiners.into_iter().collect(),
        }
    }
}

/// Returns word-index triplets for one utterance. `gold` wins when present;
/// otherwise the heuristic runs if a lexicon is supplied. At most one
/// triplet comes out of the heuristic (synthetic sentences are one clause).
pub fn extract_svo(
    words: &[String],
    gold: Option<&[[usize; 3]]>,
    lexicon: Option<&SvoLexicon>,
    utterance_id: &str,
) -> Result<Vec<[usize; 3]>> {
    if let Some(gold) = gold {
        for t in gold {
            for &ix in t {
                if ix >= words.len() {
                    return Err(Error::Data(format!(
                        "{}: svo index {} out of range for {} words",
                        utterance_id,
                        ix,
                        words.len()
                    )));
                }
            }
        }
        return Ok(gold.to_vec());
    }
    let Some(lex) = lexicon else {
        return Ok(Vec::new());
    };

    let verb = words.iter().position(|w| lex.verbs.contains(w));
    let Some(v) = verb else {
        return Ok(Vec::new());
    };
    let subj = (0..v)
        .rev()
        .find(|&i| !lex.determiners.contains(&words[i]) && !lex.verbs.contains(&words[i]));
    let obj = (v + 1..words.len())
        .find(|&i| !lex.determiners.contains(&words[i]) && !lex.verbs.contains(&words[i]));
    match (subj, obj) {
        (Some(s), Some(o)) => Ok(vec![[s, v, o]]),
        _ => Ok(Vec::new()),
    }
}
