//! Self-describing binary checkpoint.
//!
//! ```text
//! "MMAN"                       magic
//! u32                          format version
//! u32 + bytes                  metadata as TOML (run config, data hashes)
//! u32                          tensor count
//! per tensor:  u32 rank, rank × u32 dims, u64 element count, f64 × count
//! u8                           1 if optimizer state follows, else 0
//! [u64 step, moments1..., moments2...]   same tensor encoding
//! ```
//! Integers and floats are little-endian. Tensors appear in parameter
//! declaration order. Nothing may follow the last field.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::MmanModel;
use crate::tensor::Tensor;
use crate::text::{CategorySet, Vocab};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MMAN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub vocab_hash: String,
    pub category_hash: String,
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSnapshot {
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<Tensor>,
    pub optimizer: Option<OptimizerSnapshot>,
}

impl Checkpoint {
    pub fn capture(
        model: &MmanModel,
        run: &RunConfig,
        vocab: &Vocab,
        cats: &CategorySet,
        adam: Option<&AdamState>,
    ) -> Self {
        let mut run = run.clone();
        run.model = model.config().clone();
        Checkpoint {
            meta: CheckpointMeta {
                vocab_hash: vocab.hash(),
                category_hash: cats.hash().to_string(),
                run,
            },
            tensors: model.params().values().to_vec(),
            optimizer: adam.map(|a| OptimizerSnapshot {
                step: a.step_count(),
                first_moment: a.first_moment().to_vec(),
                second_moment: a.second_moment().to_vec(),
            }),
        }
    }

    /// Rebuilds the model described by the metadata and loads the weights.
    pub fn to_model(&self) -> Result<MmanModel> {
        let mut model = MmanModel::new(self.meta.run.model.clone(), self.meta.run.train.seed)?;
        model.params_mut().load_values(self.tensors.clone())?;
        Ok(model)
    }

    pub fn to_optimizer(&self, model: &MmanModel) -> Result<Option<AdamState>> {
        self.optimizer
            .as_ref()
            .map(|o| {
                AdamState::from_parts(
                    model.params(),
                    &self.meta.run.train,
                    o.step,
                    o.first_moment.clone(),
                    o.second_moment.clone(),
                )
            })
            .transpose()
    }

    /// Checks that `vocab` and `cats` are the ones the model was trained on.
    pub fn validate_against(&self, vocab: &Vocab, cats: &CategorySet) -> Result<()> {
        let model = &self.meta.run.model;
        let mismatch = |field: &str, ck: String, sup: String| Error::CheckpointConfig {
            field: field.into(),
            checkpoint: ck,
            supplied: sup,
        };
        if model.num_categories != cats.len() {
            return Err(mismatch(
                "num_categories",
                model.num_categories.to_string(),
                cats.len().to_string(),
            ));
        }
        if model.vocab_size != vocab.size() {
            return Err(mismatch(
                "vocab_size",
                model.vocab_size.to_string(),
                vocab.size().to_string(),
            ));
        }
        if self.meta.category_hash != cats.hash() {
            return Err(mismatch(
                "category_hash",
                self.meta.category_hash.clone(),
                cats.hash().to_string(),
            ));
        }
        if self.meta.vocab_hash != vocab.hash() {
            return Err(mismatch("vocab_hash", self.meta.vocab_hash.clone(), vocab.hash()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let meta = toml::to_string(&self.meta).expect("checkpoint metadata is TOML-representable");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        write_tensors(&mut out, &self.tensors);
        match &self.optimizer {
            None => out.push(0),
            Some(o) => {
                out.push(1);
                out.extend_from_slice(&o.step.to_le_bytes());
                write_tensors(&mut out, &o.first_moment);
                write_tensors(&mut out, &o.second_moment);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::CheckpointCorrupt("missing MMAN magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let meta_len = r.u32()? as usize;
        let meta_text = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| Error::CheckpointCorrupt("metadata is not UTF-8".into()))?;
        let meta: CheckpointMeta =
            toml::from_str(meta_text).map_err(|e| Error::CheckpointCorrupt(format!("metadata: {e}")))?;
        let tensors = r.tensors()?;
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => Some(OptimizerSnapshot {
                step: r.u64()?,
                first_moment: r.tensors()?,
                second_moment: r.tensors()?,
            }),
            flag => return Err(Error::CheckpointCorrupt(format!("bad optimizer flag {flag}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::CheckpointCorrupt(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            meta,
            tensors,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn write_tensors(out: &mut Vec<u8>, tensors: &[Tensor]) {
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::CheckpointCorrupt(format!(
                    "truncated: needed {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensors(&mut self) -> Result<Vec<Tensor>> {
        let count = self.u32()? as usize;
        let mut out = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let rank = self.u32()? as usize;
            if rank == 0 || rank > 8 {
                return Err(Error::CheckpointCorrupt(format!("implausible tensor rank {rank}")));
            }
            let shape = (0..rank)
                .map(|_| self.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = self.u64()? as usize;
            let expected: usize = shape.iter().product();
            if len != expected {
                return Err(Error::CheckpointCorrupt(format!(
                    "tensor length {len} disagrees with shape {shape:?}"
                )));
            }
            let raw = self.take(
                len.checked_mul(8)
                    .ok_or_else(|| Error::CheckpointCorrupt("tensor too large".into()))?,
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            out.push(Tensor::new(shape, data).map_err(|e| Error::CheckpointCorrupt(e.to_string()))?);
        }
        Ok(out)
    }
}
