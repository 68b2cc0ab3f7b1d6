//! Single-sample forward/backward steps for the main and refinement stages,
//! and batch gradient accumulation.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::glyph::GlyphImage;
use crate::graph::{Graph, Var};
use crate::losses::{combined_loss_graph, refine_loss_graph, LossBreakdown, LossWeights, PerceptualTarget};
use crate::model::StyleModel;
use crate::params::{ParamGrads, ParamStore};
use crate::perceptual::FeatureExtractor;

/// Reassembles a patch-matrix node into a `1 x (size*size)` image row,
/// averaging channels.
pub fn patches_to_row(g: &mut Graph, model: &StyleModel, patches: Var) -> Result<Var> {
    let grid = model.cfg.grid();
    let inv = grid.pixel_patch_index();
    let ch = grid.channels;
    let n = inv.len();
    let cols = g.shape(patches).1;
    if g.shape(patches) != (grid.patch_num(), grid.patch_dim()) {
        return Err(Error::shape(alloc::format!("patch matrix {:?}", g.shape(patches))));
    }
    // the single-channel index addresses element k of patch k / (p*p)
    let pp = grid.patch_size * grid.patch_size;
    let flat = |k: usize, c: usize| (k / pp) * cols + (k % pp) * ch + c;
    if ch == 1 {
        return g.gather(patches, inv.iter().map(|&k| flat(k, 0)).collect(), 1, n);
    }
    let mut parts = Vec::with_capacity(ch);
    for c in 0..ch {
        parts.push((g.gather(patches, inv.iter().map(|&k| flat(k, c)).collect(), 1, n)?, 1.0 / ch as f64));
    }
    g.weighted_sum(&parts)
}

/// Unclamped prediction row for a (content, references) pair.
pub fn predict_row<'a>(g: &mut Graph<'a>, model: &'a StyleModel, content: &GlyphImage, styles: &[GlyphImage]) -> Result<Var> {
    let grid = model.cfg.grid();
    let c = g.input(grid.patchify(content)?);
    let mut s = Vec::with_capacity(styles.len());
    for img in styles {
        s.push(g.input(grid.patchify(img)?));
    }
    let patches = model.forward(g, c, &s)?;
    patches_to_row(g, model, patches)
}

/// Combined-loss value and gradients for one triplet.
pub fn main_step(
    model: &StyleModel,
    store: &ParamStore,
    extractor: &FeatureExtractor,
    content: &GlyphImage,
    style_ref: &GlyphImage,
    target: &PerceptualTarget,
    weights: &LossWeights,
) -> Result<(LossBreakdown, ParamGrads)> {
    let mut g = Graph::new(store);
    let pred = predict_row(&mut g, model, content, core::slice::from_ref(style_ref))?;
    let vars = combined_loss_graph(&mut g, extractor, pred, target, weights)?;
    let breakdown = vars.breakdown(&g);
    Ok((breakdown, g.backward(vars.total).into_params()))
}

/// L1 value and gradients for one triplet.
pub fn refine_step(
    model: &StyleModel,
    store: &ParamStore,
    content: &GlyphImage,
    style_ref: &GlyphImage,
    target: &GlyphImage,
) -> Result<(f64, ParamGrads)> {
    let mut g = Graph::new(store);
    let pred = predict_row(&mut g, model, content, core::slice::from_ref(style_ref))?;
    let loss = refine_loss_graph(&mut g, pred, target)?;
    let v = g.value(loss).get(0, 0);
    Ok((v, g.backward(loss).into_params()))
}

/// Running mean of per-sample gradients.
#[derive(Clone, Debug)]
pub struct GradAccumulator {
    sum: ParamGrads,
    count: usize,
}

impl GradAccumulator {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            sum: ParamGrads::new(store.len()),
            count: 0,
        }
    }

    pub fn add(&mut self, grads: &ParamGrads) {
        self.sum.accumulate(grads, 1.0);
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Mean gradient; resets the accumulator.
    pub fn take_mean(&mut self) -> ParamGrads {
        let fresh = ParamGrads::new(self.sum.len());
        let mut out = core::mem::replace(&mut self.sum, fresh);
        if self.count > 0 {
            out.scale(1.0 / self.count as f64);
        }
        self.count = 0;
        out
    }
}
