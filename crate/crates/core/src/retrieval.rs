//! Per-style exact nearest-neighbor indexes over content-encoder embeddings,
//! used to pick the style reference that best matches a requested character.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::glyph::{Charcode, GlyphImage};
use crate::model::StyleModel;
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq)]
pub struct StyleEmbedding {
    pub vector: Vec<f32>,
    pub charcode: Charcode,
    pub style_id: String,
    pub normalized: bool,
}

impl StyleEmbedding {
    /// L2-normalizes `raw` (in f64) and stores it as f32. A zero vector stays
    /// zero and is flagged as not normalized.
    pub fn from_raw(raw: &[f64], charcode: Charcode, style_id: impl Into<String>) -> Self {
        let norm = libm::sqrt(raw.iter().map(|v| v * v).sum::<f64>());
        let normalized = norm > 0.0;
        let vector = raw
            .iter()
            .map(|v| if normalized { (v / norm) as f32 } else { *v as f32 })
            .collect();
        Self {
            vector,
            charcode,
            style_id: style_id.into(),
            normalized,
        }
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.vector.iter().map(|&v| v as f64 * v as f64).sum::<f64>())
    }
}

/// Concatenated content-encoder tokens (CLS first, then patches in raster
/// order), normalized.
pub fn embed_glyph(image: &GlyphImage, model: &StyleModel, store: &ParamStore) -> Result<StyleEmbedding> {
    let tokens = model.encode_content(store, image)?;
    let expected = model.cfg.embedding_len();
    if tokens.flatten().len() != expected {
        return Err(Error::Shape(format!(
            "embedding has {} values, expected {expected}",
            tokens.flatten().len()
        )));
    }
    Ok(StyleEmbedding::from_raw(tokens.flatten(), image.charcode, image.style_id.clone()))
}

/// Euclidean distance accumulated in f64.
pub fn l2_distance(a: &[f32], b: &[f32]) -> f64 {
    libm::sqrt(
        a.iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = x as f64 - y as f64;
                d * d
            })
            .sum::<f64>(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub charcode: Charcode,
    pub distance: f64,
}

/// Exact flat L2 index over the embeddings of one style.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleIndex {
    style_id: String,
    dim: usize,
    entries: Vec<StyleEmbedding>,
}

impl StyleIndex {
    pub fn from_embeddings(style_id: impl Into<String>, entries: Vec<StyleEmbedding>) -> Result<Self> {
        let style_id = style_id.into();
        let first = entries.first().ok_or(Error::EmptyInput)?;
        let dim = first.vector.len();
        for e in &entries {
            if e.style_id != style_id {
                return Err(Error::Data(format!(
                    "embedding of style `{}` in index for `{style_id}`",
                    e.style_id
                )));
            }
            if e.vector.len() != dim {
                return Err(Error::Shape(format!("embedding length {} in a {dim}-d index", e.vector.len())));
            }
        }
        Ok(Self { style_id, dim, entries })
    }

    pub fn build(style_id: &str, glyphs: &[GlyphImage], model: &StyleModel, store: &ParamStore) -> Result<Self> {
        if glyphs.is_empty() {
            return Err(Error::EmptyInput);
        }
        let embeddings = glyphs.iter().map(|g| embed_glyph(g, model, store)).collect::<Result<Vec<_>>>()?;
        Self::from_embeddings(style_id, embeddings)
    }

    pub fn style_id(&self) -> &str {
        &self.style_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[StyleEmbedding] {
        &self.entries
    }

    pub fn charcodes(&self) -> impl Iterator<Item = Charcode> + '_ {
        self.entries.iter().map(|e| e.charcode)
    }

    pub fn contains(&self, c: Charcode) -> bool {
        self.entries.iter().any(|e| e.charcode == c)
    }

    /// Up to `k` nearest entries by ascending distance, ties by ascending
    /// charcode. Entries whose charcode is `exclude` are skipped.
    pub fn search_excluding(&self, query: &[f32], k: usize, exclude: Option<Charcode>) -> Result<Vec<Hit>> {
        if self.entries.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if query.len() != self.dim {
            return Err(Error::Shape(format!("query length {} against a {}-d index", query.len(), self.dim)));
        }
        let mut hits: Vec<Hit> = self
            .entries
            .iter()
            .filter(|e| Some(e.charcode) != exclude)
            .map(|e| Hit {
                charcode: e.charcode,
                distance: l2_distance(query, &e.vector),
            })
            .collect();
        hits.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.charcode.cmp(&b.charcode)));
        hits.truncate(k);
        Ok(hits)
    }

    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<Hit>> {
        self.search_excluding(query, k, None)
    }
}

pub fn retrieve_reference(
    query: &GlyphImage,
    index: &StyleIndex,
    k: usize,
    model: &StyleModel,
    store: &ParamStore,
) -> Result<Vec<Hit>> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let e = embed_glyph(query, model, store)?;
    index.search(&e.vector, k.max(1))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RagOutput {
    pub image: GlyphImage,
    pub reference: Charcode,
    pub distance: f64,
}

/// Generates `content` in `style_id` using the rank-1 retrieved reference.
/// `lookup` returns the stored glyph for an indexed charcode.
pub fn generate_with_rag(
    content: &GlyphImage,
    style_id: &str,
    model: &StyleModel,
    store: &ParamStore,
    indexes: &BTreeMap<String, StyleIndex>,
    lookup: &dyn Fn(&str, Charcode) -> Option<GlyphImage>,
) -> Result<RagOutput> {
    generate_with_rag_excluding(content, style_id, model, store, indexes, lookup, None)
}

/// As [`generate_with_rag`], never choosing `exclude` as the reference.
pub fn generate_with_rag_excluding(
    content: &GlyphImage,
    style_id: &str,
    model: &StyleModel,
    store: &ParamStore,
    indexes: &BTreeMap<String, StyleIndex>,
    lookup: &dyn Fn(&str, Charcode) -> Option<GlyphImage>,
    exclude: Option<Charcode>,
) -> Result<RagOutput> {
    let index = indexes.get(style_id).ok_or_else(|| Error::UnknownStyle(style_id.into()))?;
    let query = embed_glyph(content, model, store)?;
    let best = *index
        .search_excluding(&query.vector, 1, exclude)?
        .first()
        .ok_or_else(|| Error::Exhausted(format!("style `{style_id}` has no admissible reference")))?;
    let reference = lookup(style_id, best.charcode).ok_or_else(|| Error::MissingReferenceImage {
        style_id: style_id.into(),
        charcode: best.charcode,
    })?;
    let image = model.generate(store, content, core::slice::from_ref(&reference))?;
    Ok(RagOutput {
        image,
        reference: best.charcode,
        distance: best.distance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(v: &[f64], c: u32) -> StyleEmbedding {
        StyleEmbedding::from_raw(v, Charcode(c), "s")
    }

    #[test]
    fn ties_resolve_by_charcode() {
        let idx = StyleIndex::from_embeddings("s", alloc::vec![emb(&[0.0, 1.0], 9), emb(&[0.0, 1.0], 3), emb(&[1.0, 0.0], 1)]).unwrap();
        let hits = idx.search(&[0.0, 1.0], 5).unwrap();
        let order: Vec<u32> = hits.iter().map(|h| h.charcode.0).collect();
        assert_eq!(order, alloc::vec![3, 9, 1]);
    }

    #[test]
    fn exclusion_skips_charcode() {
        let idx = StyleIndex::from_embeddings("s", alloc::vec![emb(&[1.0, 0.0], 1), emb(&[0.0, 1.0], 2)]).unwrap();
        let hits = idx.search_excluding(&[1.0, 0.0], 1, Some(Charcode(1))).unwrap();
        assert_eq!(hits[0].charcode, Charcode(2));
    }

    #[test]
    fn mixed_styles_are_rejected() {
        let mut other = emb(&[1.0], 1);
        other.style_id = "t".into();
        assert!(StyleIndex::from_embeddings("s", alloc::vec![other]).is_err());
        assert_eq!(StyleIndex::from_embeddings("s", Vec::new()), Err(Error::EmptyInput));
    }
}
