//! Checkpoint container.
//!
//! ```text
//! magic "SLQACKPT" | u32 LE version | u64 LE manifest length | manifest JSON | f64 LE data
//! ```
//!
//! The manifest lists every array by name, shape and offset (in values) into
//! the data section. Parameters are stored as `param/<name>`, Adam moments as
//! `adam.m/<name>` and `adam.v/<name>`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::RunConfig;
use super::train::{build_model, EpochLog};
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::slicing::QaModel;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SLQACKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: RunConfig,
    pub vocab: Vocab,
    pub epoch: usize,
    pub history: Vec<EpochLog>,
    pub optimizer: OptimizerState,
    pub arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub data: Vec<f64>,
}

fn err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn capture(
        cfg: &RunConfig,
        vocab: &Vocab,
        store: &ParamStore<f64>,
        adam: &Adam<f64>,
        epoch: usize,
        history: &[EpochLog],
    ) -> Result<Self> {
        let mut arrays = Vec::new();
        let mut data = Vec::new();
        let mut push = |name: String, shape: &[usize], values: &[f64]| {
            arrays.push(ArrayEntry {
                name,
                shape: shape.to_vec(),
                offset: data.len(),
            });
            data.extend_from_slice(values);
        };
        for (name, t) in store.iter() {
            push(format!("param/{name}"), t.shape(), t.data());
        }
        for (k, (name, t)) in store.iter().enumerate() {
            push(format!("adam.m/{name}"), t.shape(), &adam.m[k]);
            push(format!("adam.v/{name}"), t.shape(), &adam.v[k]);
        }
        Ok(Checkpoint {
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                config: cfg.clone(),
                vocab: vocab.clone(),
                epoch,
                history: history.to_vec(),
                optimizer: OptimizerState {
                    lr: adam.lr,
                    beta1: adam.beta1,
                    beta2: adam.beta2,
                    eps: adam.eps,
                    step: adam.step,
                },
                arrays,
            },
            data,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest).map_err(|e| err(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + manifest.len() + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(err("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(err(format!("format version {version}, expected {FORMAT_VERSION}")));
        }
        let mlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < mlen || !(body.len() - mlen).is_multiple_of(8) {
            return Err(err("truncated checkpoint"));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..mlen]).map_err(|e| err(e.to_string()))?;
        let data: Vec<f64> = body[mlen..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        for a in &manifest.arrays {
            let n: usize = a.shape.iter().product();
            if a.offset + n > data.len() {
                return Err(err(format!("array {} runs past the data section", a.name)));
            }
        }
        Ok(Checkpoint { manifest, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn array(&self, name: &str) -> Option<(&[usize], &[f64])> {
        self.manifest.arrays.iter().find(|a| a.name == name).map(|a| {
            let n: usize = a.shape.iter().product();
            (a.shape.as_slice(), &self.data[a.offset..a.offset + n])
        })
    }

    /// Rebuilds the model under the checkpoint's own config.
    pub fn restore(&self) -> Result<(QaModel, ParamStore<f64>, Adam<f64>)> {
        self.restore_as(&self.manifest.config)
    }

    /// Builds a model from `cfg` and fills it from the stored arrays; fails
    /// listing every missing or differently shaped tensor.
    pub fn restore_as(&self, cfg: &RunConfig) -> Result<(QaModel, ParamStore<f64>, Adam<f64>)> {
        let (model, mut store) = build_model(cfg)?;
        let mut problems = Vec::new();
        let ids: Vec<_> = store.ids().collect();
        let mut adam = Adam::new(&store, self.manifest.optimizer.lr);
        for (k, id) in ids.into_iter().enumerate() {
            let name = store.name(id).to_string();
            let want = store.get(id).shape().to_vec();
            match self.array(&format!("param/{name}")) {
                None => problems.push(format!("{name}: missing")),
                Some((shape, _)) if shape != want.as_slice() => {
                    problems.push(format!("{name}: shape {shape:?} in checkpoint, {want:?} in model"))
                }
                Some((_, values)) => {
                    *store.get_mut(id) = Tensor::new(want.clone(), values.to_vec())?;
                    if let (Some((_, m)), Some((_, v))) =
                        (self.array(&format!("adam.m/{name}")), self.array(&format!("adam.v/{name}")))
                    {
                        adam.m[k] = m.to_vec();
                        adam.v[k] = v.to_vec();
                    }
                }
            }
        }
        let stored = self.manifest.arrays.iter().filter(|a| a.name.starts_with("param/")).count();
        if stored != store.len() {
            problems.push(format!("checkpoint has {stored} parameter tensors, model has {}", store.len()));
        }
        if !problems.is_empty() {
            return Err(err(format!("incompatible checkpoint: {}", problems.join("; "))));
        }
        let o = &self.manifest.optimizer;
        adam.beta1 = o.beta1;
        adam.beta2 = o.beta2;
        adam.eps = o.eps;
        adam.step = o.step;
        Ok((model, store, adam))
    }
}
