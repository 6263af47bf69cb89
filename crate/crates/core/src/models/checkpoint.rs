//! Versioned binary checkpoint: a JSON header followed by raw little-endian
//! f64 parameter data (and optional optimizer moments). Values round-trip
//! bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, SegmentationModel};
use crate::error::{Error, Result};
use crate::ingest::ScenarioSpec;
use crate::nn::{Adam, AdamConfig};
use crate::preprocess::NormalizationStats;

const MAGIC: &[u8; 8] = b"CANOPYCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub scenario: Option<ScenarioSpec>,
    pub normalization: Option<NormalizationStats>,
    pub epoch: Option<usize>,
    pub val_f1: Option<f64>,
    /// Frozen training configuration, kept opaque here.
    pub train_config: Option<serde_json::Value>,
}

impl CheckpointMeta {
    pub fn new(model: ModelConfig) -> Self {
        CheckpointMeta {
            model,
            scenario: None,
            normalization: None,
            epoch: None,
            val_f1: None,
            train_config: None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamConfig,
    step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerHeader>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: SegmentationModel,
    pub optimizer: Option<Adam>,
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn take_f64s(bytes: &mut &[u8], n: usize, path: &Path) -> Result<Vec<f64>> {
    if bytes.len() < n * 8 {
        return Err(Error::format(path, "truncated tensor data"));
    }
    let (head, rest) = bytes.split_at(n * 8);
    *bytes = rest;
    Ok(head
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

impl Checkpoint {
    pub fn new(meta: CheckpointMeta, model: SegmentationModel) -> Self {
        Checkpoint {
            meta,
            model,
            optimizer: None,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let store = self.model.store();
        let header = Header {
            version: FORMAT_VERSION,
            meta: CheckpointMeta {
                model: self.model.config().clone(),
                ..self.meta.clone()
            },
            tensors: store
                .params()
                .iter()
                .map(|p| TensorEntry {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    trainable: p.trainable,
                })
                .collect(),
            optimizer: self.optimizer.as_ref().map(|a| OptimizerHeader {
                config: a.config,
                step: a.step,
            }),
        };
        let json = serde_json::to_vec(&header)
            .map_err(|e| Error::Data(format!("cannot encode checkpoint header: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in store.params() {
            put_f64s(&mut out, &p.data);
        }
        if let Some(adam) = &self.optimizer {
            for (m, v) in adam.m.iter().zip(&adam.v) {
                put_f64s(&mut out, m);
                put_f64s(&mut out, v);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut rest = bytes;
        if rest.len() < 20 || &rest[..8] != MAGIC {
            return Err(Error::format(path, "not a canopy checkpoint"));
        }
        let version = u32::from_le_bytes(rest[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported checkpoint version {version}"),
            ));
        }
        let len = u64::from_le_bytes(rest[12..20].try_into().expect("8 bytes")) as usize;
        rest = &rest[20..];
        if rest.len() < len {
            return Err(Error::format(path, "truncated header"));
        }
        let header: Header = serde_json::from_slice(&rest[..len])
            .map_err(|e| Error::format(path, format!("bad header: {e}")))?;
        rest = &rest[len..];
        let mut model = SegmentationModel::build(header.meta.model.clone())?;
        let store = model.store_mut();
        if store.len() != header.tensors.len() {
            return Err(Error::format(
                path,
                format!(
                    "architecture has {} tensors but checkpoint stores {}",
                    store.len(),
                    header.tensors.len()
                ),
            ));
        }
        let ids: Vec<_> = store.ids().collect();
        for (id, t) in ids.into_iter().zip(&header.tensors) {
            let p = store.param(id);
            if p.name != t.name || p.shape != t.shape {
                return Err(Error::format(
                    path,
                    format!("tensor {} {:?} does not match {} {:?}", t.name, t.shape, p.name, p.shape),
                ));
            }
            let n = p.data.len();
            let data = take_f64s(&mut rest, n, path)?;
            store.get_mut(id).copy_from_slice(&data);
        }
        let optimizer = match header.optimizer {
            Some(h) => {
                let mut adam = Adam::new(h.config, model.store());
                adam.step = h.step;
                for i in 0..adam.m.len() {
                    let n = adam.m[i].len();
                    adam.m[i] = take_f64s(&mut rest, n, path)?;
                    adam.v[i] = take_f64s(&mut rest, n, path)?;
                }
                Some(adam)
            }
            None => None,
        };
        if !rest.is_empty() {
            return Err(Error::format(path, "trailing bytes after checkpoint data"));
        }
        Ok(Checkpoint {
            meta: header.meta,
            model,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
