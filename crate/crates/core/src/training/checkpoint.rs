//! Checkpoint container.
//!
//! Layout: the 8-byte magic `OPCKPT01`, a little-endian `u64` header length,
//! a JSON header, then every parameter tensor followed by the optimizer
//! moments as raw little-endian `f64`, in header order. Raw floats make the
//! round trip bit-exact.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::{Optimizer, OptimizerConfig, OptimizerState};
use crate::dataset::Vocabulary;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::Params;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"OPCKPT01";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: TrainConfig,
    vocab: Vocabulary,
    vocab_hash: String,
    epoch: usize,
    step: u64,
    dev_bleu4: f64,
    params: Vec<TensorEntry>,
    optimizer: Option<OptimizerHeader>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerHeader {
    config: OptimizerConfig,
    steps: u64,
    first: usize,
    second: usize,
}

/// Everything needed to resume training or to caption.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    /// Epochs completed.
    pub epoch: usize,
    pub step: u64,
    pub dev_bleu4: f64,
    pub model: Model,
    pub optimizer: Option<Optimizer>,
}

fn push_tensor(buf: &mut Vec<u8>, t: &Tensor) {
    buf.reserve(t.len() * 8);
    for v in &t.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn take_tensor(bytes: &mut &[u8], shape: &[usize]) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    if bytes.len() < n * 8 {
        return Err(Error::Checkpoint("tensor data truncated".into()));
    }
    let (head, rest) = bytes.split_at(n * 8);
    *bytes = rest;
    let data = head
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(Tensor::from_vec(shape, data))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            version: VERSION,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            vocab_hash: self.vocab.hash(),
            epoch: self.epoch,
            step: self.step,
            dev_bleu4: self.dev_bleu4,
            params: self
                .model
                .params()
                .into_iter()
                .map(|(name, t)| TensorEntry {
                    name,
                    shape: t.shape.clone(),
                })
                .collect(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                config: o.config,
                steps: o.state.steps,
                first: o.state.first.len(),
                second: o.state.second.len(),
            }),
        };
        let json = serde_json::to_vec(&header)?;
        let mut buf = Vec::with_capacity(16 + json.len() + self.model.num_params() * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for (_, t) in self.model.params() {
            push_tensor(&mut buf, t);
        }
        if let Some(o) = &self.optimizer {
            for t in o.state.first.iter().chain(&o.state.second) {
                push_tensor(&mut buf, t);
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json = bytes
            .get(16..16 + len)
            .ok_or_else(|| Error::Checkpoint("header truncated".into()))?;
        let header: Header = serde_json::from_slice(json)?;
        if header.version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", header.version)));
        }
        let vocab = header.vocab.restore_index();
        if vocab.hash() != header.vocab_hash {
            return Err(Error::VocabularyMismatch {
                expected: header.vocab_hash,
                found: vocab.hash(),
            });
        }
        let mut model = Model::new(header.config.model.clone(), vocab.len(), 0)?;
        let mut rest = &bytes[16 + len..];
        let names: Vec<(String, Vec<usize>)> = model.params().into_iter().map(|(n, t)| (n, t.shape.clone())).collect();
        if names.len() != header.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                header.params.len(),
                names.len()
            )));
        }
        for ((slot, (name, shape)), entry) in model.params_mut().into_iter().zip(&names).zip(&header.params) {
            if *name != entry.name || *shape != entry.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` {:?} does not match model tensor `{name}` {shape:?}",
                    entry.name, entry.shape
                )));
            }
            *slot = take_tensor(&mut rest, shape)?;
        }
        let optimizer = match header.optimizer {
            None => None,
            Some(h) => {
                let mut read = |count: usize| -> Result<Vec<Tensor>> {
                    names.iter().take(count).map(|(_, s)| take_tensor(&mut rest, s)).collect()
                };
                let first = read(h.first)?;
                let second = read(h.second)?;
                Some(Optimizer {
                    config: h.config,
                    state: OptimizerState {
                        steps: h.steps,
                        first,
                        second,
                    },
                })
            }
        };
        if !rest.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        Ok(Checkpoint {
            config: header.config,
            vocab,
            epoch: header.epoch,
            step: header.step,
            dev_bleu4: header.dev_bleu4,
            model,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut f = BufWriter::new(fs::File::create(path)?);
        f.write_all(&self.to_bytes()?)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| Error::Load {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
