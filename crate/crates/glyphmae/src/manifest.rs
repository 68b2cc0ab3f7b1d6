//! Line-delimited JSON manifest and on-disk glyph lookup.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{Context, Result};
use glyphmae_core::dataset::{Entry, FontRole, GlyphSource, Language, Split};
use glyphmae_core::{Charcode, DatasetManifest, GlyphImage};
use serde::{Deserialize, Serialize};

use crate::imageio::read_glyph;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Lowercase hex without prefix, e.g. `4e00`.
    pub codepoint: String,
    pub style_id: String,
    pub language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    pub path: String,
    #[serde(default = "default_role")]
    pub role: String,
}

fn default_role() -> String {
    FontRole::Style.as_str().to_string()
}

impl From<&Entry> for ManifestRecord {
    fn from(e: &Entry) -> Self {
        Self {
            codepoint: e.charcode.hex(),
            style_id: e.style_id.clone(),
            language: e.language.as_str().to_string(),
            split: e.split.map(|s| s.as_str().to_string()),
            path: e.path.clone(),
            role: e.role.as_str().to_string(),
        }
    }
}

impl TryFrom<ManifestRecord> for Entry {
    type Error = anyhow::Error;

    fn try_from(r: ManifestRecord) -> Result<Self> {
        let charcode = Charcode::parse_hex(&r.codepoint).with_context(|| format!("bad codepoint `{}`", r.codepoint))?;
        Ok(Entry {
            charcode,
            style_id: r.style_id,
            language: r.language.parse::<Language>()?,
            split: r.split.as_deref().map(str::parse::<Split>).transpose()?,
            path: r.path,
            role: r.role.parse::<FontRole>()?,
        })
    }
}

pub fn to_jsonl(manifest: &DatasetManifest) -> Result<String> {
    let mut s = String::new();
    for e in &manifest.entries {
        s.push_str(&serde_json::to_string(&ManifestRecord::from(e))?);
        s.push('\n');
    }
    Ok(s)
}

pub fn parse_jsonl(text: &str) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(line).with_context(|| format!("manifest line {}", i + 1))?;
        entries.push(Entry::try_from(rec)?);
    }
    Ok(DatasetManifest::new(entries)?)
}

/// Writes through a temporary file so readers never see a partial manifest.
pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(to_jsonl(manifest)?.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let f = std::fs::File::open(path).with_context(|| format!("opening manifest {}", path.display()))?;
    let mut text = String::new();
    for line in BufReader::new(f).lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    parse_jsonl(&text)
}

/// Glyph PNGs under a data directory, decoded on demand and cached.
pub struct DiskSource {
    root: PathBuf,
    image_size: usize,
    cache: Mutex<HashMap<String, GlyphImage>>,
}

impl DiskSource {
    pub fn new(root: impl Into<PathBuf>, image_size: usize) -> Self {
        Self {
            root: root.into(),
            image_size,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl GlyphSource for DiskSource {
    fn load(&self, entry: &Entry) -> glyphmae_core::Result<GlyphImage> {
        if let Some(img) = self.cache.lock().expect("cache lock").get(&entry.path) {
            return Ok(img.clone());
        }
        let img = read_glyph(&self.root.join(&entry.path), self.image_size, entry.charcode, &entry.style_id).map_err(|e| {
            log::warn!("{e:#}");
            glyphmae_core::Error::MissingReferenceImage {
                style_id: entry.style_id.clone(),
                charcode: entry.charcode,
            }
        })?;
        self.cache.lock().expect("cache lock").insert(entry.path.clone(), img.clone());
        Ok(img)
    }
}

/// Relative PNG path for a glyph: `<style_id>/<hex>.png`.
pub fn glyph_path(style_id: &str, charcode: Charcode) -> String {
    format!("{style_id}/{}.png", charcode.hex())
}
