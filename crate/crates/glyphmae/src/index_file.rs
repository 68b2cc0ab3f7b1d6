//! Style index persistence.
//!
//! Layout (little-endian): magic `GLYPHIDX`, `u32` format version, `u32`
//! style-id byte length and the UTF-8 style id, `u32` dimension, `u32` entry
//! count, `u8` normalized flag, then `count * dim` `f32` values and `count`
//! `u32` code points.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use glyphmae_core::{Charcode, StyleEmbedding, StyleIndex};

use crate::checkpoint::write_atomic;

pub const MAGIC: &[u8; 8] = b"GLYPHIDX";
pub const VERSION: u32 = 1;
pub const EXTENSION: &str = "idx";

pub fn encode_index(index: &StyleIndex) -> Vec<u8> {
    let id = index.style_id().as_bytes();
    let normalized = index.entries().iter().all(|e| e.normalized);
    let mut out = Vec::with_capacity(29 + id.len() + index.len() * (4 * index.dim() + 4));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(id.len() as u32).to_le_bytes());
    out.extend_from_slice(id);
    out.extend_from_slice(&(index.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(index.len() as u32).to_le_bytes());
    out.push(normalized as u8);
    for e in index.entries() {
        for v in &e.vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for e in index.entries() {
        out.extend_from_slice(&e.charcode.0.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        ensure!(self.bytes.len() >= self.pos + n, "index file truncated");
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into()?))
    }
}

pub fn decode_index(bytes: &[u8]) -> Result<StyleIndex> {
    let mut r = Reader { bytes, pos: 0 };
    ensure!(r.take(8)? == MAGIC, "not a style index file");
    let version = r.u32()?;
    ensure!(version == VERSION, "unsupported index version {version}");
    let id_len = r.u32()? as usize;
    let style_id = String::from_utf8(r.take(id_len)?.to_vec()).context("style id is not UTF-8")?;
    let dim = r.u32()? as usize;
    let count = r.u32()? as usize;
    ensure!(dim > 0, "index dimension is zero");
    let normalized = r.take(1)?[0] != 0;
    let raw = r.take(4 * dim * count)?;
    let vectors: Vec<Vec<f32>> = raw
        .chunks_exact(4 * dim)
        .map(|row| row.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
        .collect();
    let mut entries = Vec::with_capacity(count);
    for vector in vectors {
        entries.push(StyleEmbedding {
            vector,
            charcode: Charcode(r.u32()?),
            style_id: style_id.clone(),
            normalized,
        });
    }
    ensure!(r.pos == bytes.len(), "trailing bytes in index file");
    Ok(StyleIndex::from_embeddings(style_id, entries)?)
}

pub fn index_path(dir: &Path, style_id: &str) -> PathBuf {
    dir.join(format!("{style_id}.{EXTENSION}"))
}

pub fn save_index(dir: &Path, index: &StyleIndex) -> Result<PathBuf> {
    let path = index_path(dir, index.style_id());
    write_atomic(&path, &encode_index(index))?;
    Ok(path)
}

pub fn load_index(path: &Path) -> Result<StyleIndex> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_index(&bytes).with_context(|| format!("decoding {}", path.display()))
}

/// Every `*.idx` file in `dir`, keyed by style id.
pub fn load_index_dir(dir: &Path) -> Result<BTreeMap<String, StyleIndex>> {
    let mut out = BTreeMap::new();
    if !dir.exists() {
        return Ok(out);
    }
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(EXTENSION) {
            let idx = load_index(&path)?;
            out.insert(idx.style_id().to_string(), idx);
        }
    }
    Ok(out)
}
