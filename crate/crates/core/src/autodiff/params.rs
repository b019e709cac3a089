use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MPCK0001";

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    /// Dotted path, e.g. `gcn.0.w_graph`.
    pub name: String,
    pub value: Matrix,
    pub trainable: bool,
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Registers a parameter and returns its slot. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter { name, value, trainable: true });
        self.params.len() - 1
    }

    /// Glorot-uniform `rows x cols` weight.
    pub fn add_glorot(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut impl Rng) -> usize {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let m = Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound));
        self.add(name, m)
    }

    pub fn add_normal(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> usize {
        let dist = Normal::new(0.0, std).expect("valid normal");
        let m = Matrix::from_fn(rows, cols, |_, _| dist.sample(rng));
        self.add(name, m)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn get(&self, slot: usize) -> &Parameter {
        &self.params[slot]
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Parameter {
        &mut self.params[slot]
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.slot(name).map(|i| &self.params[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.slot(name).map(move |i| &mut self.params[i])
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.as_slice().len()).sum()
    }

    /// Records every parameter on the tape; trainable ones track gradients.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Vec<Tensor<'t>> {
        self.params
            .iter()
            .map(|p| if p.trainable { tape.param(p.value.clone()) } else { tape.constant(p.value.clone()) })
            .collect()
    }

    /// Replaces values from `other` where names and shapes match; returns how many were copied.
    pub fn copy_matching(&mut self, other: &ParamStore) -> usize {
        let mut copied = 0;
        for p in &mut self.params {
            if let Some(src) = other.by_name(&p.name) {
                if src.value.shape() == p.value.shape() {
                    p.value = src.value.clone();
                    copied += 1;
                }
            }
        }
        copied
    }
}

/// Metadata stored beside the weights of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub val_loss: Option<f64>,
    pub config_hash: String,
    /// Free-form configuration needed to rebuild the model.
    #[serde(default)]
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamStore,
}

/// Layout: magic, u32 metadata length, metadata JSON, u32 parameter count,
/// then per parameter: u32 name length, name, u8 trainable, u32 rank,
/// u64 dims, f64 values. Everything little-endian.
pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let meta = serde_json::to_vec(&ck.meta)?;
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(ck.params.len() as u32).to_le_bytes());
    for p in ck.params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.trainable as u8);
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(p.value.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(p.value.cols() as u64).to_le_bytes());
        for v in p.value.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut pos = 0usize;
    let mut take = |len: usize| -> Result<&[u8]> {
        let end = pos.checked_add(len).filter(|&e| e <= bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    if take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap()) as usize;
    let meta_len = u32_at(take(4)?);
    let meta: CheckpointMeta = serde_json::from_slice(take(meta_len)?)?;
    let count = u32_at(take(4)?);
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = u32_at(take(4)?);
        let name = String::from_utf8(take(name_len)?.to_vec())
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let trainable = take(1)?[0] != 0;
        let rank = u32_at(take(4)?);
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
        }
        let (rows, cols) = match dims[..] {
            [r, c] => (r, c),
            [c] => (1, c),
            _ => return Err(Error::Format(format!("parameter {name} has unsupported rank {rank}"))),
        };
        let len = rows.checked_mul(cols).and_then(|l| l.checked_mul(8));
        let raw = take(len.ok_or_else(|| Error::Format("size overflow".into()))?)?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if params.slot(&name).is_some() {
            return Err(Error::Format(format!("duplicate parameter {name}")));
        }
        let slot = params.add(name, Matrix::from_vec(rows, cols, values)?);
        params.get_mut(slot).trainable = trainable;
    }
    if pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(Checkpoint { meta, params })
}

pub fn write_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    fs::write(path, encode_checkpoint(ck)?)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
