//! Binary checkpoint format.
//!
//! Layout (little-endian): magic `HYSN`, `u16` version, `u32` metadata
//! length + UTF-8 JSON, `u32` tensor count, then per tensor a `u16` name
//! length + UTF-8 name, `u8` dtype code, `u8` rank, `rank x u32` dims and
//! the raw payload.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ModelConfig, ModelKind};
use super::model::{name_matches_prefix, ModelGraph};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"HYSN";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 1;
pub const DTYPE_F64: u8 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelKind,
    pub config: ModelConfig,
    pub config_hash: String,
    pub epoch: u64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl CheckpointMeta {
    pub fn new(model: ModelKind, config: &ModelConfig, epoch: u64, seed: u64) -> Self {
        Self {
            model,
            config: config.clone(),
            config_hash: config_hash(model, config),
            epoch,
            seed,
            extra: BTreeMap::new(),
        }
    }
}

/// Hex SHA-256 prefix of the canonical JSON of `(kind, config)`.
pub fn config_hash(kind: ModelKind, config: &ModelConfig) -> String {
    let json = serde_json::to_vec(&(kind, config)).expect("config serializes");
    let digest = Sha256::digest(&json);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredTensor {
    fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Self {
        if T::NAME == "f64" {
            StoredTensor::F64(t.cast())
        } else {
            StoredTensor::F32(t.cast())
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::F32(t) => t.shape(),
            StoredTensor::F64(t) => t.shape(),
        }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        match self {
            StoredTensor::F32(t) => t.cast(),
            StoredTensor::F64(t) => t.cast(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, StoredTensor)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoadMode {
    /// Every name and shape must agree exactly.
    Strict,
    /// Load what matches, skip and report the rest.
    Transfer,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoadOptions {
    pub mode: LoadMode,
    /// Parameter-name prefixes marked non-trainable after loading.
    pub freeze: Vec<String>,
    /// Prefixes never loaded in transfer mode.
    pub skip: Vec<String>,
}

impl LoadOptions {
    pub fn strict() -> Self {
        Self {
            mode: LoadMode::Strict,
            freeze: Vec::new(),
            skip: Vec::new(),
        }
    }

    /// Transfer load that keeps the target's freshly initialized classifier.
    pub fn transfer(freeze: Vec<String>) -> Self {
        Self {
            mode: LoadMode::Transfer,
            freeze,
            skip: vec!["classifier".into()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SkipReason {
    Excluded,
    ShapeMismatch { stored: Vec<usize>, model: Vec<usize> },
    Missing,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    /// Model tensors left untouched.
    pub skipped: Vec<(String, SkipReason)>,
    /// Stored tensors with no counterpart in the model.
    pub unused: Vec<String>,
    pub frozen: Vec<String>,
}

impl LoadReport {
    pub fn skipped_names(&self) -> Vec<&str> {
        self.skipped.iter().map(|(n, _)| n.as_str()).collect()
    }
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &ModelGraph<T>, meta: CheckpointMeta) -> Self {
        let mut tensors = Vec::new();
        model.visit(&mut |name, _, t| tensors.push((name.to_string(), StoredTensor::from_tensor(t))));
        Self { meta, tensors }
    }

    pub fn get(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta)?;
        out.extend_from_slice(&len_u32(meta.len(), "metadata")?.to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&len_u32(self.tensors.len(), "tensor count")?.to_le_bytes());
        for (name, t) in &self.tensors {
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::Format(format!("tensor name too long: {name}")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let (code, shape) = match t {
                StoredTensor::F32(t) => (DTYPE_F32, t.shape()),
                StoredTensor::F64(t) => (DTYPE_F64, t.shape()),
            };
            out.push(code);
            out.push(
                u8::try_from(shape.len())
                    .map_err(|_| Error::Format(format!("rank too large for {name}")))?,
            );
            for &d in shape {
                out.extend_from_slice(&len_u32(d, "dimension")?.to_le_bytes());
            }
            match t {
                StoredTensor::F32(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                StoredTensor::F64(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic, not a checkpoint file".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::Format(format!("metadata: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let code = r.u8()?;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let bad_shape = |e: Error| Error::Format(format!("tensor {name}: {e}"));
            let tensor = match code {
                DTYPE_F32 => {
                    let raw = r.take(len * 4)?;
                    let data = raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    StoredTensor::F32(Tensor::new(shape, data).map_err(bad_shape)?)
                }
                DTYPE_F64 => {
                    let raw = r.take(len * 8)?;
                    let data = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    StoredTensor::F64(Tensor::new(shape, data).map_err(bad_shape)?)
                }
                other => return Err(Error::Format(format!("tensor {name}: unknown dtype code {other}"))),
            };
            tensors.push((name, tensor));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { meta, tensors })
    }

    /// Writes to a temporary file next to `path` and renames it into place.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(&bytes).map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Copies stored tensors into `model` according to `options`.
    pub fn apply<T: Scalar>(&self, model: &mut ModelGraph<T>, options: &LoadOptions) -> Result<LoadReport> {
        let stored: HashMap<&str, &StoredTensor> =
            self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut model_names = Vec::new();
        let mut plan = Vec::new();
        model.visit(&mut |name, _, t| {
            model_names.push(name.to_string());
            let reason = match stored.get(name) {
                None => Some(SkipReason::Missing),
                Some(s) if s.shape() != t.shape() => Some(SkipReason::ShapeMismatch {
                    stored: s.shape().to_vec(),
                    model: t.shape().to_vec(),
                }),
                Some(_) if options.mode == LoadMode::Transfer
                    && options.skip.iter().any(|p| name_matches_prefix(name, p)) =>
                {
                    Some(SkipReason::Excluded)
                }
                Some(_) => None,
            };
            plan.push((name.to_string(), reason));
        });
        let unused: Vec<String> = self
            .tensors
            .iter()
            .map(|(n, _)| n.clone())
            .filter(|n| !model_names.contains(n))
            .collect();

        if options.mode == LoadMode::Strict {
            let mut offenders: Vec<String> = plan
                .iter()
                .filter_map(|(name, reason)| match reason {
                    Some(SkipReason::Missing) => Some(format!("missing {name}")),
                    Some(SkipReason::ShapeMismatch { stored, model }) => {
                        Some(format!("{name} stored {stored:?} vs model {model:?}"))
                    }
                    _ => None,
                })
                .collect();
            offenders.extend(unused.iter().map(|n| format!("unexpected {n}")));
            if !offenders.is_empty() {
                return Err(Error::Incompatible(offenders));
            }
        }

        let mut report = LoadReport {
            unused,
            ..LoadReport::default()
        };
        let load: HashMap<String, ()> = plan
            .iter()
            .filter(|(_, r)| r.is_none())
            .map(|(n, _)| (n.clone(), ()))
            .collect();
        model.visit_mut(&mut |name, _, t| {
            if load.contains_key(name) {
                *t = stored[name].to_tensor();
            }
        });
        for (name, reason) in plan {
            match reason {
                None => report.loaded.push(name),
                Some(r) => report.skipped.push((name, r)),
            }
        }
        report.frozen = model.freeze(&options.freeze);
        Ok(report)
    }
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} {n} exceeds u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated file: need {n} bytes at offset {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint<T: Scalar>(model: &ModelGraph<T>, path: &Path, epoch: u64, seed: u64) -> Result<()> {
    let meta = CheckpointMeta::new(model.kind(), model.config(), epoch, seed);
    Checkpoint::from_model(model, meta).write(path)
}

pub fn load_checkpoint<T: Scalar>(
    path: &Path,
    model: &mut ModelGraph<T>,
    options: &LoadOptions,
) -> Result<LoadReport> {
    Checkpoint::read(path)?.apply(model, options)
}
