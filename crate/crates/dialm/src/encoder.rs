//! Multi-layer bidirectional transformer encoder.
//!
//! Produces contextualized hidden states for a padded input sequence:
//! summed token/position/segment embeddings flow through post-layer-norm
//! transformer blocks (self-attention with K=Q=V, then a GELU feed-forward),
//! with padding excluded from attention by an additive column mask. The
//! forward pass is generic over the scalar type so the identical graph can
//! be gradient-checked in f64.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Scalar, Tape, Tensor, TensorId};
use crate::text::{InputSequence, EOU};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_position: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 0,
            hidden: 64,
            layers: 2,
            heads: 4,
            ffn: 256,
            max_position: 128,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.layers == 0 || self.ffn == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size not set".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {}", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

enum Init {
    Normal,
    Zero,
    One,
}

/// `(name, shape, init)` for every parameter tensor under a config.
fn param_specs(cfg: &EncoderConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.hidden;
    let mut specs: Vec<(String, Vec<usize>, Init)> = vec![
        ("emb.tok".into(), vec![cfg.vocab_size, d], Init::Normal),
        ("emb.pos".into(), vec![cfg.max_position, d], Init::Normal),
        ("emb.seg".into(), vec![2, d], Init::Normal),
        ("emb.ln.gamma".into(), vec![d], Init::One),
        ("emb.ln.beta".into(), vec![d], Init::Zero),
        ("pool.w".into(), vec![d, d], Init::Normal),
        ("pool.b".into(), vec![d], Init::Zero),
    ];
    for l in 0..cfg.layers {
        for mat in ["wq", "wk", "wv", "wo"] {
            specs.push((format!("layer{}.attn.{}", l, mat), vec![d, d], Init::Normal));
        }
        for bias in ["bq", "bk", "bv", "bo"] {
            specs.push((format!("layer{}.attn.{}", l, bias), vec![d], Init::Zero));
        }
        specs.push((format!("layer{}.attn.ln.gamma", l), vec![d], Init::One));
        specs.push((format!("layer{}.attn.ln.beta", l), vec![d], Init::Zero));
        specs.push((format!("layer{}.ffn.w1", l), vec![d, cfg.ffn], Init::Normal));
        specs.push((format!("layer{}.ffn.b1", l), vec![cfg.ffn], Init::Zero));
        specs.push((format!("layer{}.ffn.w2", l), vec![cfg.ffn, d], Init::Normal));
        specs.push((format!("layer{}.ffn.b2", l), vec![d], Init::Zero));
        specs.push((format!("layer{}.ffn.ln.gamma", l), vec![d], Init::One));
        specs.push((format!("layer{}.ffn.ln.beta", l), vec![d], Init::Zero));
    }
    specs.sort_by(|a, b| a.0.cmp(&b.0));
    specs
}

pub fn expected_shapes(cfg: &EncoderConfig) -> BTreeMap<String, Vec<usize>> {
    param_specs(cfg).into_iter().map(|(n, s, _)| (n, s)).collect()
}

/// All trainable tensors of one encoder, keyed by canonical name.
#[derive(Debug, Clone)]
pub struct EncoderState {
    pub config: EncoderConfig,
    params: BTreeMap<String, Tensor<f32>>,
}

const INIT_STD: f64 = 0.02;

impl EncoderState {
    /// Fresh parameters: weights from Normal(0, 0.02), biases zero,
    /// layer-norm at gain 1 bias 0. Fully determined by `config.seed`.
    pub fn init(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut params = BTreeMap::new();
        for (i, (name, shape, init)) in param_specs(&config).into_iter().enumerate() {
            let numel: usize = shape.iter().product();
            let data: Vec<f32> = match init {
                Init::Zero => vec![0.0; numel],
                Init::One => vec![1.0; numel],
                Init::Normal => {
                    let mut rng = crate::rng::stream(config.seed, "init", 0, i as u64);
                    let dist = Normal::new(0.0f32, INIT_STD as f32)
                        .map_err(|e| Error::Config(e.to_string()))?;
                    (0..numel).map(|_| dist.sample(&mut rng)).collect()
                }
            };
            params.insert(name, Tensor::new(shape, data)?);
        }
        Ok(EncoderState { config, params })
    }

    /// Rebuilds a state from named tensors, validating shapes and finiteness.
    pub fn from_params(
        config: EncoderConfig,
        params: BTreeMap<String, Tensor<f32>>,
    ) -> Result<Self> {
        config.validate()?;
        let expected = expected_shapes(&config);
        if params.len() != expected.len() {
            return Err(Error::Contract(format!(
                "{} tensors supplied, {} expected",
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
        Ok(EncoderState { config, params })
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<f32>> {
        &self.params
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.params.get_mut(name)
    }

    pub fn validate_finite(&self) -> Result<()> {
        for (name, t) in &self.params {
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("parameter {}", name)));
            }
        }
        Ok(())
    }

    /// Registers every parameter on a tape as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<f32>) -> BTreeMap<String, TensorId> {
        self.params.iter().map(|(n, t)| (n.clone(), tape.param(t.clone()))).collect()
    }

    /// f64 copy of the parameter map, for gradient checking.
    pub fn params_f64(&self) -> BTreeMap<String, Tensor<f64>> {
        self.params.iter().map(|(n, t)| (n.clone(), t.to_f64())).collect()
    }
}

/// Registers an arbitrary named-parameter map as trainable leaves.
pub fn bind_params<S: Scalar>(
    tape: &mut Tape<S>,
    params: &BTreeMap<String, Tensor<S>>,
) -> BTreeMap<String, TensorId> {
    params.iter().map(|(n, t)| (n.clone(), tape.param(t.clone()))).collect()
}

/// Hidden states plus per-layer, per-head attention probability nodes
/// (each `[n, n]`, layer-major head-minor order).
pub struct EncodeOutput {
    pub hidden: TensorId,
    pub attention: Vec<TensorId>,
}

pub(crate) fn var<S: Scalar>(vars: &BTreeMap<String, TensorId>, name: &str) -> Result<TensorId> {
    let _ = std::marker::PhantomData::<S>;
    vars.get(name).copied().ok_or_else(|| Error::Contract(format!("unbound parameter {}", name)))
}

/// Runs the encoder over one assembled sequence, returning `H` of shape
/// `(n, d)` with `n = seq.ids.len()`. `dropout_rng` is consulted only in
/// train mode with a positive dropout rate; otherwise the pass is
/// deterministic.
pub fn encode<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &BTreeMap<String, TensorId>,
    cfg: &EncoderConfig,
    seq: &InputSequence,
    train_mode: bool,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<EncodeOutput> {
    let n = seq.ids.len();
    if n > cfg.max_position {
        return Err(Error::Capacity(format!(
            "sequence of {} positions exceeds max_position {}",
            n, cfg.max_position
        )));
    }
    for &id in &seq.ids {
        if id as usize >= cfg.vocab_size {
            return Err(Error::Vocab(format!("token id {} outside vocabulary of {}", id, cfg.vocab_size)));
        }
    }
    let dh = cfg.head_dim();

    // embeddings: token + position + segment, then layer norm
    let tok = tape.gather_rows(var::<S>(vars, "emb.tok")?, &seq.ids)?;
    let pos_ids: Vec<u32> = (0..n as u32).collect();
    let pos = tape.gather_rows(var::<S>(vars, "emb.pos")?, &pos_ids)?;
    let seg_ids: Vec<u32> = seq.segment_ids.iter().map(|&s| s as u32).collect();
    let seg = tape.gather_rows(var::<S>(vars, "emb.seg")?, &seg_ids)?;
    let sum = tape.add(tok, pos)?;
    let sum = tape.add(sum, seg)?;
    let mut x = layer_norm(tape, vars, sum, "emb.ln")?;
    x = maybe_dropout(tape, x, cfg, train_mode, &mut dropout_rng)?;

    // additive attention mask: 0 over real columns, -1e9 over padding
    let mut mask_row = vec![S::zero(); n];
    for (j, &m) in seq.attention_mask.iter().enumerate() {
        if m == 0 {
            mask_row[j] = S::from_f64(-1e9);
        }
    }
    let mut mask_data = Vec::with_capacity(n * n);
    for _ in 0..n {
        mask_data.extend_from_slice(&mask_row);
    }
    let mask = tape.constant(Tensor::new(vec![n, n], mask_data)?);

    let scale = S::from_f64(1.0 / (dh as f64).sqrt());
    let mut attention = Vec::with_capacity(cfg.layers * cfg.heads);

    for l in 0..cfg.layers {
        let p = |s: &str| format!("layer{}.{}", l, s);

        let q = affine(tape, vars, x, &p("attn.wq"), &p("attn.bq"))?;
        let k = affine(tape, vars, x, &p("attn.wk"), &p("attn.bk"))?;
        let v = affine(tape, vars, x, &p("attn.wv"), &p("attn.bv"))?;

        let mut heads = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale)?;
            let scores = tape.add(scores, mask)?;
            let probs = tape.softmax_rows(scores)?;
            attention.push(probs);
            heads.push(tape.matmul(probs, vh)?);
        }
        let ctx = tape.concat_cols(&heads)?;
        let proj = affine(tape, vars, ctx, &p("attn.wo"), &p("attn.bo"))?;
        let proj = maybe_dropout(tape, proj, cfg, train_mode, &mut dropout_rng)?;
        let res = tape.add(x, proj)?;
        x = layer_norm(tape, vars, res, &p("attn.ln"))?;

        let h1 = affine(tape, vars, x, &p("ffn.w1"), &p("ffn.b1"))?;
        let h1 = tape.gelu(h1)?;
        let h2 = affine(tape, vars, h1, &p("ffn.w2"), &p("ffn.b2"))?;
        let h2 = maybe_dropout(tape, h2, cfg, train_mode, &mut dropout_rng)?;
        let res = tape.add(x, h2)?;
        x = layer_norm(tape, vars, res, &p("ffn.ln"))?;
    }

    Ok(EncodeOutput { hidden: x, attention })
}

pub(crate) fn affine<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &BTreeMap<String, TensorId>,
    x: TensorId,
    w: &str,
    b: &str,
) -> Result<TensorId> {
    let wx = tape.matmul(x, var::<S>(vars, w)?)?;
    tape.add_row(wx, var::<S>(vars, b)?)
}

const LN_EPS: f64 = 1e-12;

fn layer_norm<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &BTreeMap<String, TensorId>,
    x: TensorId,
    prefix: &str,
) -> Result<TensorId> {
    let gamma = var::<S>(vars, &format!("{}.gamma", prefix))?;
    let beta = var::<S>(vars, &format!("{}.beta", prefix))?;
    tape.layer_norm(x, gamma, beta, LN_EPS)
}

fn maybe_dropout<S: Scalar>(
    tape: &mut Tape<S>,
    x: TensorId,
    cfg: &EncoderConfig,
    train_mode: bool,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<TensorId> {
    if !train_mode || cfg.dropout <= 0.0 {
        return Ok(x);
    }
    let Some(rng) = rng.as_deref_mut() else {
        return Ok(x);
    };
    let keep = 1.0 - cfg.dropout;
    let inv = S::from_f64(1.0 / keep);
    let numel = tape.value(x).numel();
    let shape = tape.value(x).shape().to_vec();
    let data: Vec<S> = (0..numel)
        .map(|_| if rng.gen::<f64>() < keep { inv } else { S::zero() })
        .collect();
    let mask = tape.constant(Tensor::new(shape, data)?);
    tape.mul(x, mask)
}

/// Rows of `H` at the `[EOU]` positions, oldest utterance first.
pub fn utterance_representations<S: Scalar>(
    tape: &mut Tape<S>,
    hidden: TensorId,
    seq: &InputSequence,
) -> Result<TensorId> {
    if seq.eou_positions.is_empty() {
        return Err(Error::Contract("sequence has no utterance markers".into()));
    }
    let mut idx = Vec::with_capacity(seq.eou_positions.len());
    for &pos in &seq.eou_positions {
        if seq.ids.get(pos).copied() != Some(EOU) {
            return Err(Error::Contract(format!(
                "position {} holds id {:?}, not [EOU]",
                pos,
                seq.ids.get(pos)
            )));
        }
        idx.push(pos as u32);
    }
    tape.gather_rows(hidden, &idx)
}

/// `tanh(H[0]·W + b)`: the learned pooled view of the `[CLS]` state.
pub fn pooled_representation<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &BTreeMap<String, TensorId>,
    hidden: TensorId,
) -> Result<TensorId> {
    let cls = tape.gather_rows(hidden, &[0])?;
    let z = affine(tape, vars, cls, "pool.w", "pool.b")?;
    tape.tanh(z)
}
