//! Run configuration: one TOML file describes a complete training or
//! evaluation run. Unknown keys are rejected so typos fail loudly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::objectives::LossWeights;
use crate::text::AssembleOptions;
use crate::{Error, Result};

/// Training regime selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Self-supervised post-training: masked language modeling and
    /// next-sentence prediction plus order-restoration and backbone terms.
    DapPosttrain,
    /// Response-selection fine-tuning initialized from a post-trained
    /// checkpoint.
    DapFinetune,
    /// Single-stage multi-task fine-tuning: matching loss plus the
    /// structural terms on permuted contexts.
    Mtf,
    /// Response-selection fine-tuning from random initialization.
    BaselineFinetune,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::DapPosttrain => "dap-posttrain",
            Regime::DapFinetune => "dap-finetune",
            Regime::Mtf => "mtf",
            Regime::BaselineFinetune => "baseline-finetune",
        }
    }
}

/// Fine-tuning task shape: independent binary match per candidate, or one
/// softmax over each example's candidate set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Binary,
    Multichoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub regime: Regime,
    pub seed: u64,
    /// Unset means the published recipe: 3 epochs for post-training, 2 for
    /// the fine-tuning regimes.
    pub epochs: Option<usize>,
    /// Examples per optimizer step (each fine-tuning example expands to one
    /// scored pair per candidate).
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Fraction of the context window subject to order permutation.
    pub delta: f64,
    /// Fraction of maskable tokens hidden for masked-language modeling.
    pub mask_rate: f64,
    pub task: TaskKind,
    pub weights: LossWeights,
    /// `vocab_size` 0 means: size to the vocabulary built from the training
    /// corpus (or carried by the initial checkpoint).
    pub encoder: EncoderConfig,
    pub max_len: usize,
    pub max_utterances: usize,
    /// Minimum corpus frequency for a token to enter the vocabulary.
    pub min_count: usize,
    pub train_corpus: Option<PathBuf>,
    pub valid_corpus: Option<PathBuf>,
    pub test_corpus: Option<PathBuf>,
    pub init_checkpoint: Option<PathBuf>,
    /// Keep the task heads from the initial checkpoint instead of
    /// reinitializing them at fine-tuning time.
    pub load_heads: bool,
    /// Recall cells `(n, k)` reported at evaluation.
    pub recall_pairs: Vec<(usize, usize)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            regime: Regime::Mtf,
            seed: 0,
            epochs: None,
            batch_size: 32,
            learning_rate: 3e-4,
            weight_decay: 0.01,
            delta: 0.4,
            mask_rate: 0.15,
            task: TaskKind::Binary,
            weights: LossWeights::default(),
            encoder: EncoderConfig { vocab_size: 0, ..EncoderConfig::default() },
            max_len: 128,
            max_utterances: 20,
            min_count: 1,
            train_corpus: None,
            valid_corpus: None,
            test_corpus: None,
            init_checkpoint: None,
            load_heads: false,
            recall_pairs: crate::eval::default_recall_pairs(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(s).map_err(|e| Error::Config(format!("{}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_path(path: &Path) -> Result<RunConfig> {
        let s = std::fs::read_to_string(path)?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Epoch count, with the regime's published default when unset.
    pub fn resolved_epochs(&self) -> usize {
        self.epochs.unwrap_or(match self.regime {
            Regime::DapPosttrain => 3,
            _ => 2,
        })
    }

    pub fn assemble_options(&self) -> AssembleOptions {
        AssembleOptions { max_len: self.max_len, max_utterances: self.max_utterances }
    }

    /// Structural checks independent of any corpus or checkpoint.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::Config(format!("delta {} outside [0, 1]", self.delta)));
        }
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return Err(Error::Config(format!("mask_rate {} outside [0, 1]", self.mask_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size 0".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate {}", self.learning_rate)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight_decay {}", self.weight_decay)));
        }
        if self.max_len < 8 {
            return Err(Error::Config(format!("max_len {} < 8", self.max_len)));
        }
        if self.max_utterances == 0 {
            return Err(Error::Config("max_utterances 0".into()));
        }
        if self.max_len > self.encoder.max_position {
            return Err(Error::Config(format!(
                "max_len {} exceeds encoder max_position {}",
                self.max_len, self.encoder.max_position
            )));
        }
        self.weights.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.recall_pairs.is_empty() {
            return Err(Error::Config("recall_pairs empty".into()));
        }
        for &(n, k) in &self.recall_pairs {
            if n < 2 || k == 0 || k > n {
                return Err(Error::Config(format!("recall pair ({}, {})", n, k)));
            }
        }
        // Full encoder validation waits until vocab_size is known; a
        // placeholder size lets the shape fields be judged now.
        let mut enc = self.encoder;
        if enc.vocab_size == 0 {
            enc.vocab_size = 64;
        }
        enc.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}
