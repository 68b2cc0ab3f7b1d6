//! Binary tensor container used for checkpoints and extractor weights.
//!
//! Layout: the 8-byte magic `GLYPHMAE`, a little-endian `u32` format version,
//! a `u32` header length, a JSON header, then every tensor's `f64` values in
//! little-endian row-major order, in header order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use glyphmae_core::{BackboneConfig, MaskedAutoencoder, Matrix, ParamStore, StyleModel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::BackboneSection;

pub const MAGIC: &[u8; 8] = b"GLYPHMAE";
pub const VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Main,
    Refined,
}

impl Stage {
    /// Sub-folder name under the output directory.
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Main => "main",
            Stage::Refined => "refine",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
    #[serde(default)]
    no_decay: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    #[serde(default)]
    meta: serde_json::Value,
    tensors: Vec<TensorMeta>,
}

/// Named matrices plus free-form JSON metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorFile {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Matrix, bool)>,
}

impl TensorFile {
    pub fn from_store(store: &ParamStore, meta: serde_json::Value) -> Self {
        Self {
            meta,
            tensors: store.iter().map(|(_, p)| (p.name.clone(), p.value.clone(), p.no_decay)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.iter().find(|t| t.0 == name).map(|t| &t.1)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, m, nd)| TensorMeta {
                    name: name.clone(),
                    rows: m.rows(),
                    cols: m.cols(),
                    no_decay: *nd,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let total: usize = self.tensors.iter().map(|t| t.1.len()).sum();
        let mut out = Vec::with_capacity(16 + json.len() + 8 * total);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, m, _) in &self.tensors {
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        ensure!(bytes.len() >= 16 && &bytes[..8] == MAGIC, "not a tensor file");
        let version = u32::from_le_bytes(bytes[8..12].try_into()?);
        ensure!(version == VERSION, "unsupported tensor file version {version}");
        let hlen = u32::from_le_bytes(bytes[12..16].try_into()?) as usize;
        ensure!(bytes.len() >= 16 + hlen, "truncated header");
        let header: Header = serde_json::from_slice(&bytes[16..16 + hlen]).context("bad tensor file header")?;
        let mut pos = 16 + hlen;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for t in header.tensors {
            let n = t.rows * t.cols;
            ensure!(bytes.len() >= pos + 8 * n, "truncated data for `{}`", t.name);
            let data = bytes[pos..pos + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            pos += 8 * n;
            tensors.push((t.name, Matrix::from_vec(t.rows, t.cols, data)?, t.no_decay));
        }
        ensure!(pos == bytes.len(), "trailing bytes after tensor data");
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("decoding {}", path.display()))
    }

    /// Atomic write: temporary file, then rename.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: Stage,
    pub backbone: BackboneSection,
    pub steps: usize,
    #[serde(default)]
    pub parent: Option<String>,
}

/// A stage-tagged set of weights.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub store: ParamStore,
}

pub fn checkpoint_id(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<String> {
        let file = TensorFile::from_store(&self.store, serde_json::to_value(&self.meta)?);
        let bytes = file.to_bytes()?;
        write_atomic(path, &bytes)?;
        Ok(checkpoint_id(&bytes))
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = std::fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        let file = TensorFile::from_bytes(&bytes).with_context(|| format!("decoding {}", path.display()))?;
        let meta: CheckpointMeta = serde_json::from_value(file.meta.clone()).context("checkpoint metadata")?;
        let mut store = ParamStore::new();
        for (name, m, nd) in file.tensors {
            store.add(name, m, nd);
        }
        Ok((Self { meta, store }, checkpoint_id(&bytes)))
    }

    pub fn backbone(&self) -> BackboneConfig {
        self.meta.backbone.to_core()
    }

    /// Rebuilds the masked autoencoder and copies every weight by name.
    pub fn masked_autoencoder(&self) -> Result<(MaskedAutoencoder, ParamStore)> {
        ensure!(self.meta.stage == Stage::Pretrain, "{:?} checkpoint holds no autoencoder", self.meta.stage);
        let (model, mut store) = MaskedAutoencoder::init(&self.backbone(), 0)?;
        copy_all(&mut store, &self.store)?;
        Ok((model, store))
    }

    pub fn style_model(&self) -> Result<(StyleModel, ParamStore)> {
        ensure!(self.meta.stage != Stage::Pretrain, "pretraining checkpoint holds no style model");
        let (model, mut store) = StyleModel::init(&self.backbone(), self.meta.backbone.fusion_depth, 0)?;
        copy_all(&mut store, &self.store)?;
        Ok((model, store))
    }
}

fn copy_all(dst: &mut ParamStore, src: &ParamStore) -> Result<()> {
    let names: BTreeMap<&str, &Matrix> = src.iter().map(|(_, p)| (p.name.as_str(), &p.value)).collect();
    let wanted: Vec<String> = dst.iter().map(|(_, p)| p.name.clone()).collect();
    for name in &wanted {
        let Some(m) = names.get(name.as_str()) else {
            bail!("checkpoint lacks `{name}`");
        };
        dst.assign(name, m)?;
    }
    ensure!(wanted.len() == names.len(), "checkpoint has {} tensors, model expects {}", names.len(), wanted.len());
    Ok(())
}

pub fn checkpoint_path(output_dir: &Path, stage: Stage) -> PathBuf {
    output_dir.join(stage.as_str()).join(CHECKPOINT_FILE)
}
