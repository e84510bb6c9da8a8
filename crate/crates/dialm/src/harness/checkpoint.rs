//! Versioned binary checkpoint: a JSON header (config, vocabulary, run
//! position) followed by named row-major f32 tensors and optional optimizer
//! state. Saving the result of a load reproduces the file byte for byte.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderState};
use crate::objectives::{HeadConfig, HeadState, LossWeights};
use crate::optim::{AdamW, AdamWConfig, Slot};
use crate::tensor::Tensor;
use crate::text::Vocab;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"DIALMCK1";
const FORMAT_VERSION: u32 = 1;

/// Everything needed to continue or deploy a run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub encoder: EncoderState,
    pub heads: HeadState,
    pub vocab: Vocab,
    pub weights: LossWeights,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// First epoch a resumed run should execute.
    pub next_epoch: usize,
    pub optimizer: Option<OptimSnapshot>,
}

#[derive(Debug, Clone)]
pub struct OptimSnapshot {
    pub cfg: AdamWConfig,
    pub t: u64,
    pub slots: BTreeMap<String, Slot>,
}

impl OptimSnapshot {
    pub fn capture(opt: &AdamW) -> Self {
        OptimSnapshot {
            cfg: opt.cfg,
            t: opt.step_count(),
            slots: opt.slots().map(|(n, s)| (n.to_string(), s.clone())).collect(),
        }
    }

    pub fn restore(&self) -> AdamW {
        let mut opt = AdamW::new(self.cfg);
        opt.restore(self.t, self.slots.clone());
        opt
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    encoder: EncoderConfig,
    heads: HeadConfig,
    weights: LossWeights,
    step: u64,
    next_epoch: usize,
    optimizer: Option<AdamWConfig>,
    vocab: Vec<String>,
}

fn ck<T>(what: &str, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::Checkpoint(format!("{}: {}", what, e)))
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    ck("write", w.write_all(&v.to_le_bytes()))
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    ck("write", w.write_all(&v.to_le_bytes()))
}

fn write_name(w: &mut impl Write, name: &str) -> Result<()> {
    let bytes = name.as_bytes();
    if bytes.len() > u16::MAX as usize {
        return Err(Error::Checkpoint(format!("tensor name of {} bytes", bytes.len())));
    }
    ck("write", w.write_all(&(bytes.len() as u16).to_le_bytes()))?;
    ck("write", w.write_all(bytes))
}

fn write_f32s(w: &mut impl Write, data: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    ck("write", w.write_all(&buf))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    ck(what, r.read_exact(buf))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_name(r: &mut impl Read) -> Result<String> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, "tensor name length")?;
    let len = u16::from_le_bytes(b) as usize;
    let mut bytes = vec![0u8; len];
    read_exact(r, &mut bytes, "tensor name")?;
    String::from_utf8(bytes).map_err(|e| Error::Checkpoint(format!("tensor name: {}", e)))
}

fn read_f32s(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    read_exact(r, &mut bytes, what)?;
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

/// Serializes the checkpoint into the versioned container format.
pub fn to_bytes(c: &Checkpoint) -> Result<Vec<u8>> {
    let header = Header {
        format_version: FORMAT_VERSION,
        encoder: c.encoder.config,
        heads: *c.heads.config(),
        weights: c.weights,
        step: c.step,
        next_epoch: c.next_epoch,
        optimizer: c.optimizer.as_ref().map(|o| o.cfg),
        vocab: c.vocab.tokens().to_vec(),
    };
    let header_json = serde_json::to_vec(&header)?;
    if header_json.len() > u32::MAX as usize {
        return Err(Error::Checkpoint("header too large".into()));
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    write_u32(&mut out, header_json.len() as u32)?;
    out.extend_from_slice(&header_json);

    // Encoder and head tensors share one section; head names carry the
    // "head." prefix, so the namespaces cannot collide.
    let tensors: Vec<(&String, &Tensor<f32>)> =
        c.encoder.params().iter().chain(c.heads.params().iter()).collect();
    write_u32(&mut out, tensors.len() as u32)?;
    for (name, t) in tensors {
        write_name(&mut out, name)?;
        let shape = t.shape();
        if shape.len() > u8::MAX as usize {
            return Err(Error::Checkpoint(format!("{}: {} dimensions", name, shape.len())));
        }
        ck("write", out.write_all(&[shape.len() as u8]))?;
        for &d in shape {
            write_u32(&mut out, u32::try_from(d).map_err(|_| {
                Error::Checkpoint(format!("{}: dimension {} exceeds u32", name, d))
            })?)?;
        }
        write_u64(&mut out, t.numel() as u64)?;
        write_f32s(&mut out, t.data())?;
    }

    match &c.optimizer {
        None => ck("write", out.write_all(&[0u8]))?,
        Some(o) => {
            ck("write", out.write_all(&[1u8]))?;
            write_u64(&mut out, o.t)?;
            write_u32(&mut out, o.slots.len() as u32)?;
            for (name, slot) in &o.slots {
                write_name(&mut out, name)?;
                write_u64(&mut out, slot.m.len() as u64)?;
                write_f32s(&mut out, &slot.m)?;
                write_f32s(&mut out, &slot.v)?;
            }
        }
    }
    Ok(out)
}

/// Parses the container format. Trailing bytes, truncation, or a foreign
/// magic number all fail with `Error::Checkpoint`.
pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = bytes;
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let header_len = read_u32(&mut r, "header length")? as usize;
    if header_len > r.len() {
        return Err(Error::Checkpoint(format!(
            "header of {} bytes in a {} byte remainder",
            header_len,
            r.len()
        )));
    }
    let (header_bytes, rest) = r.split_at(header_len);
    r = rest;
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::Checkpoint(format!("header: {}", e)))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} (supported: {})",
            header.format_version, FORMAT_VERSION
        )));
    }

    let n_tensors = read_u32(&mut r, "tensor count")? as usize;
    let mut enc_params = BTreeMap::new();
    let mut head_params = BTreeMap::new();
    for _ in 0..n_tensors {
        let name = read_name(&mut r)?;
        let mut ndim = [0u8; 1];
        read_exact(&mut r, &mut ndim, "rank")?;
        let mut shape = Vec::with_capacity(ndim[0] as usize);
        for _ in 0..ndim[0] {
            shape.push(read_u32(&mut r, "dimension")? as usize);
        }
        let numel = read_u64(&mut r, "element count")? as usize;
        if numel != shape.iter().product::<usize>() {
            return Err(Error::Checkpoint(format!(
                "{}: {} elements for shape {:?}",
                name, numel, shape
            )));
        }
        let data = read_f32s(&mut r, numel, "tensor data")?;
        let t = Tensor::new(shape, data)
            .map_err(|e| Error::Checkpoint(format!("{}: {}", name, e)))?;
        if name.starts_with("head.") {
            head_params.insert(name, t);
        } else {
            enc_params.insert(name, t);
        }
    }

    let mut flag = [0u8; 1];
    read_exact(&mut r, &mut flag, "optimizer flag")?;
    let optimizer = match flag[0] {
        0 => None,
        1 => {
            let cfg = header.optimizer.ok_or_else(|| {
                Error::Checkpoint("optimizer state present but no config in header".into())
            })?;
            let t = read_u64(&mut r, "optimizer step")?;
            let n_slots = read_u32(&mut r, "slot count")? as usize;
            let mut slots = BTreeMap::new();
            for _ in 0..n_slots {
                let name = read_name(&mut r)?;
                let len = read_u64(&mut r, "slot length")? as usize;
                let m = read_f32s(&mut r, len, "slot m")?;
                let v = read_f32s(&mut r, len, "slot v")?;
                slots.insert(name, Slot { m, v });
            }
            Some(OptimSnapshot { cfg, t, slots })
        }
        other => return Err(Error::Checkpoint(format!("optimizer flag {}", other))),
    };
    if !r.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
    }

    let encoder = EncoderState::from_params(header.encoder, enc_params)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let heads = HeadState::from_params(header.heads, head_params)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let vocab =
        Vocab::from_tokens(header.vocab).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if vocab.len() != header.encoder.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocabulary of {} tokens for encoder vocab_size {}",
            vocab.len(),
            header.encoder.vocab_size
        )));
    }
    Ok(Checkpoint {
        encoder,
        heads,
        vocab,
        weights: header.weights,
        step: header.step,
        next_epoch: header.next_epoch,
        optimizer,
    })
}

/// Writes atomically: the bytes land in a sibling temp file first, then
/// rename into place, so an interrupted save never clobbers the target.
pub fn save(c: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = to_bytes(c)?;
    let tmp = path.with_extension("ckpt.tmp");
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    from_bytes(&bytes)
}

/// Structural encoder agreement between a run config and a loaded
/// checkpoint. Dropout and the init seed are runtime knobs; everything that
/// shapes a tensor must match.
pub fn check_architecture(expected: &EncoderConfig, found: &EncoderConfig) -> Result<()> {
    let fields = [
        ("vocab_size", expected.vocab_size, found.vocab_size),
        ("hidden", expected.hidden, found.hidden),
        ("layers", expected.layers, found.layers),
        ("heads", expected.heads, found.heads),
        ("ffn", expected.ffn, found.ffn),
        ("max_position", expected.max_position, found.max_position),
    ];
    for (name, e, f) in fields {
        if e != f {
            return Err(Error::Checkpoint(format!(
                "architecture mismatch: {} is {} in the run config, {} in the checkpoint",
                name, e, f
            )));
        }
    }
    Ok(())
}
