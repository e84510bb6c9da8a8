//! Dialogue corpus records and their line-delimited JSON serialization.
//!
//! One JSON object per line: `{"id", "context": [{"speaker", "text",
//! "svo"?}], "candidates": [{"text", "label"}]}`. Unknown fields are
//! ignored; malformed lines are skipped with a line-numbered warning in
//! permissive mode and abort the load otherwise.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: String,
    pub text: String,
    /// Gold subject/verb/object word indexes, when annotated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svo: Option<Vec<[usize; 3]>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub label: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DialogueExample {
    pub id: String,
    pub context: Vec<Utterance>,
    pub candidates: Vec<Candidate>,
}

impl DialogueExample {
    /// Structural checks that do not depend on tokenization: at least one
    /// utterance, binary labels, at most one positive per example.
    pub fn validate(&self) -> Result<()> {
        if self.context.is_empty() {
            return Err(Error::Data(format!("{}: empty context", self.id)));
        }
        let mut positives = 0usize;
        for c in &self.candidates {
            if c.label > 1 {
                return Err(Error::Data(format!("{}: label {} is not binary", self.id, c.label)));
            }
            positives += c.label as usize;
        }
        if positives > 1 {
            return Err(Error::Data(format!("{}: {} positive candidates", self.id, positives)));
        }
        Ok(())
    }

    /// Index of the label-1 candidate, if any.
    pub fn positive_index(&self) -> Option<usize> {
        self.candidates.iter().position(|c| c.label == 1)
    }
}

/// Loads a JSONL corpus. In permissive mode bad lines are collected as
/// warnings and skipped; otherwise the first bad line is an error.
pub fn load_jsonl(path: &Path, permissive: bool) -> Result<(Vec<DialogueExample>, Vec<String>)> {
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: std::result::Result<DialogueExample, _> = serde_json::from_str(&line);
        let problem = match parsed {
            Ok(ex) => match ex.validate() {
                Ok(()) => {
                    out.push(ex);
                    continue;
                }
                Err(e) => e.to_string(),
            },
            Err(e) => e.to_string(),
        };
        if permissive {
            warnings.push(format!("line {}: {}", lineno, problem));
        } else {
            return Err(Error::Data(format!("line {}: {}", lineno, problem)));
        }
    }
    Ok((out, warnings))
}

pub fn save_jsonl(path: &Path, examples: &[DialogueExample]) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
