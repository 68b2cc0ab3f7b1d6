//! Read-only inference state shared by `generate`, `retrieve` and `serve`.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Result};
use glyphmae_core::dataset::GlyphSource;
use glyphmae_core::retrieval::{generate_with_rag, retrieve_reference, Hit};
use glyphmae_core::{Charcode, DatasetManifest, Error, GlyphImage, ParamStore, StyleIndex, StyleModel};

use crate::checkpoint::{checkpoint_path, Checkpoint, Stage};
use crate::config::RunConfig;
use crate::index_file::load_index_dir;
use crate::manifest::{read_manifest, DiskSource};
use crate::HarnessError;

pub enum StyleChoice {
    Image(GlyphImage),
    Id(String),
}

pub struct Generated {
    pub image: GlyphImage,
    /// Reference glyph used when the style was given by id.
    pub reference: Option<Charcode>,
}

pub struct Engine {
    pub model: StyleModel,
    pub store: ParamStore,
    pub checkpoint_id: String,
    pub indexes: BTreeMap<String, StyleIndex>,
    pub manifest: DatasetManifest,
    pub source: DiskSource,
}

/// The most refined style-model checkpoint present under `output_dir`.
pub fn latest_checkpoint(output_dir: &Path) -> Result<std::path::PathBuf> {
    for stage in [Stage::Refined, Stage::Main] {
        let p = checkpoint_path(output_dir, stage);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(HarnessError::MissingCheckpoint(checkpoint_path(output_dir, Stage::Main)).into())
}

impl Engine {
    pub fn load(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Self> {
        let path = match checkpoint {
            Some(p) => p.to_path_buf(),
            None => latest_checkpoint(&cfg.output_dir)?,
        };
        if !path.exists() {
            return Err(HarnessError::MissingCheckpoint(path).into());
        }
        let (ckpt, checkpoint_id) = Checkpoint::load(&path)?;
        let (model, store) = ckpt.style_model()?;
        let manifest = if cfg.manifest_path().exists() {
            read_manifest(&cfg.manifest_path())?
        } else {
            DatasetManifest::default()
        };
        Ok(Self {
            source: DiskSource::new(&cfg.data.data_dir, model.cfg.image_size),
            indexes: load_index_dir(&cfg.index_dir())?,
            model,
            store,
            checkpoint_id,
            manifest,
        })
    }

    pub fn image_size(&self) -> usize {
        self.model.cfg.image_size
    }

    /// Style ids that can be requested by name.
    pub fn styles(&self) -> Vec<String> {
        let mut s: Vec<String> = self.manifest.styles().into_iter().map(String::from).collect();
        s.extend(self.indexes.keys().cloned());
        s.sort();
        s.dedup();
        s
    }

    pub fn lookup(&self, style_id: &str, c: Charcode) -> Option<GlyphImage> {
        let e = self.manifest.find(style_id, c)?;
        self.source.load(e).ok()
    }

    /// Without retrieval a named style uses its lowest code point glyph.
    fn fixed_reference(&self, style_id: &str) -> Result<GlyphImage> {
        let entry = self
            .manifest
            .entries
            .iter()
            .filter(|e| e.style_id == style_id)
            .min_by_key(|e| e.charcode)
            .ok_or_else(|| Error::UnknownStyle(style_id.into()))?;
        Ok(self.source.load(entry)?)
    }

    pub fn generate(&self, content: &GlyphImage, style: &StyleChoice, use_rag: bool) -> Result<Generated> {
        match (style, use_rag) {
            (StyleChoice::Image(_), true) => bail!("retrieval needs a style id, not a style image"),
            (StyleChoice::Image(img), false) => Ok(Generated {
                image: self.model.generate(&self.store, content, std::slice::from_ref(img))?,
                reference: None,
            }),
            (StyleChoice::Id(id), true) => {
                let out = generate_with_rag(content, id, &self.model, &self.store, &self.indexes, &|s, c| self.lookup(s, c))?;
                Ok(Generated {
                    image: out.image,
                    reference: Some(out.reference),
                })
            }
            (StyleChoice::Id(id), false) => {
                let r = self.fixed_reference(id)?;
                Ok(Generated {
                    image: self.model.generate(&self.store, content, std::slice::from_ref(&r))?,
                    reference: Some(r.charcode),
                })
            }
        }
    }

    pub fn retrieve(&self, content: &GlyphImage, style_id: &str, k: usize) -> Result<Vec<Hit>> {
        let index = self.indexes.get(style_id).ok_or_else(|| Error::UnknownStyle(style_id.into()))?;
        Ok(retrieve_reference(content, index, k, &self.model, &self.store)?)
    }
}
