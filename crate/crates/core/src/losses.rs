//! Training objectives: perceptual content/style terms, the weighted
//! combination with a pixel MSE anchor, and the L1 refinement loss.
//!
//! All reductions are per-element means so the weights do not depend on
//! image resolution or layer width.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::glyph::GlyphImage;
use crate::graph::{Graph, Var};
use crate::perceptual::{FeatureExtractor, FeatureMap, PerceptualTaps};
use crate::tensor::Matrix;

/// Weights of the content, style and pixel terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.4,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    /// Pixel-only ablation.
    pub const MSE_ONLY: LossWeights = LossWeights {
        alpha: 0.0,
        beta: 0.0,
        gamma: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta, self.gamma];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConfig(format!("loss weights must be finite and >= 0: {w:?}")));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidConfig("loss weights are all zero".into()));
        }
        Ok(())
    }

    pub fn uses_perceptual(&self) -> bool {
        self.alpha != 0.0 || self.beta != 0.0
    }
}

/// Unweighted components and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub content: f64,
    pub style: f64,
    pub mse: f64,
    pub total: f64,
}

/// `G[i][j] = sum_hw f_i f_j / (C H W)`.
pub fn gram_matrix(f: &FeatureMap) -> Matrix {
    let norm = (f.channels * f.height * f.width) as f64;
    let mut g = Matrix::matmul(&f.data, false, &f.data, true).expect("square product");
    g.scale_assign(1.0 / norm);
    g
}

fn gram_graph(g: &mut Graph, f: Var, channels: usize, height: usize, width: usize) -> Result<Var> {
    let prod = g.matmul_t(f, false, f, true)?;
    Ok(g.scale(prod, 1.0 / (channels * height * width) as f64))
}

fn mean_sq(a: &Matrix, b: &Matrix) -> f64 {
    let n = a.len().max(1) as f64;
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

/// Mean squared pixel error.
pub fn pixel_mse(pred: &GlyphImage, gt: &GlyphImage) -> Result<f64> {
    pred.same_shape(gt)?;
    let n = pred.pixels().len() as f64;
    Ok(pred.pixels().iter().zip(gt.pixels()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// Mean absolute pixel error, the refinement objective.
pub fn refine_loss(pred: &GlyphImage, gt: &GlyphImage) -> Result<f64> {
    pred.same_shape(gt)?;
    let n = pred.pixels().len() as f64;
    Ok(pred.pixels().iter().zip(gt.pixels()).map(|(a, b)| libm::fabs(a - b)).sum::<f64>() / n)
}

/// Extractor features of the ground truth, computed once and reused for
/// every prediction compared against it.
#[derive(Clone, Debug)]
pub struct PerceptualTarget {
    pub image: GlyphImage,
    content: Vec<(String, Matrix)>,
    style: Vec<(String, Matrix)>,
}

impl PerceptualTarget {
    pub fn new(extractor: &FeatureExtractor, gt: &GlyphImage, taps: &PerceptualTaps) -> Result<Self> {
        taps.validate()?;
        let all = all_taps(taps);
        let maps = extractor.extract(gt, &all)?;
        Ok(Self::from_maps(gt.clone(), &maps, taps))
    }

    fn from_maps(image: GlyphImage, maps: &BTreeMap<String, FeatureMap>, taps: &PerceptualTaps) -> Self {
        Self {
            image,
            content: taps.content_layers.iter().map(|l| (l.clone(), maps[l].data.clone())).collect(),
            style: taps.style_layers.iter().map(|l| (l.clone(), gram_matrix(&maps[l]))).collect(),
        }
    }

    /// Target with no perceptual features; only the pixel term is usable.
    pub fn pixels_only(gt: &GlyphImage) -> Self {
        Self {
            image: gt.clone(),
            content: Vec::new(),
            style: Vec::new(),
        }
    }
}

fn all_taps(taps: &PerceptualTaps) -> Vec<String> {
    let mut all: Vec<String> = taps.content_layers.clone();
    for s in &taps.style_layers {
        if !all.contains(s) {
            all.push(s.clone());
        }
    }
    all
}

fn pred_maps(extractor: &FeatureExtractor, pred: &GlyphImage, gt: &GlyphImage, taps: &PerceptualTaps) -> Result<BTreeMap<String, FeatureMap>> {
    pred.same_shape(gt)?;
    taps.validate()?;
    extractor.extract(pred, &all_taps(taps))
}

/// Mean over content layers of the feature-map MSE.
pub fn content_loss(extractor: &FeatureExtractor, pred: &GlyphImage, gt: &GlyphImage, taps: &PerceptualTaps) -> Result<f64> {
    let p = pred_maps(extractor, pred, gt, taps)?;
    let t = PerceptualTarget::new(extractor, gt, taps)?;
    Ok(content_term(&p, &t))
}

/// Mean over style layers of the Gram-matrix MSE.
pub fn style_loss(extractor: &FeatureExtractor, pred: &GlyphImage, style_gt: &GlyphImage, taps: &PerceptualTaps) -> Result<f64> {
    let p = pred_maps(extractor, pred, style_gt, taps)?;
    let t = PerceptualTarget::new(extractor, style_gt, taps)?;
    Ok(style_term(&p, &t))
}

fn content_term(p: &BTreeMap<String, FeatureMap>, t: &PerceptualTarget) -> f64 {
    if t.content.is_empty() {
        return 0.0;
    }
    t.content.iter().map(|(l, m)| mean_sq(&p[l].data, m)).sum::<f64>() / t.content.len() as f64
}

fn style_term(p: &BTreeMap<String, FeatureMap>, t: &PerceptualTarget) -> f64 {
    if t.style.is_empty() {
        return 0.0;
    }
    t.style.iter().map(|(l, gm)| mean_sq(&gram_matrix(&p[l]), gm)).sum::<f64>() / t.style.len() as f64
}

/// `alpha * content + beta * style + gamma * mse`, all terms against `gt`.
pub fn combined_loss(extractor: &FeatureExtractor, pred: &GlyphImage, gt: &GlyphImage, weights: &LossWeights, taps: &PerceptualTaps) -> Result<LossBreakdown> {
    weights.validate()?;
    let p = pred_maps(extractor, pred, gt, taps)?;
    let t = PerceptualTarget::new(extractor, gt, taps)?;
    let content = content_term(&p, &t);
    let style = style_term(&p, &t);
    let mse = pixel_mse(pred, gt)?;
    Ok(LossBreakdown {
        content,
        style,
        mse,
        total: weights.alpha * content + weights.beta * style + weights.gamma * mse,
    })
}

/// Loss nodes of [`combined_loss_graph`].
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub content: Option<Var>,
    pub style: Option<Var>,
    pub mse: Var,
}

impl LossVars {
    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        let v = |x: Option<Var>| x.map(|x| g.value(x).get(0, 0)).unwrap_or(0.0);
        LossBreakdown {
            content: v(self.content),
            style: v(self.style),
            mse: g.value(self.mse).get(0, 0),
            total: g.value(self.total).get(0, 0),
        }
    }
}

/// Differentiable combined loss for a `1 x (size*size)` prediction node.
/// Perceptual terms are skipped when `target` carries no features.
pub fn combined_loss_graph<'a>(
    g: &mut Graph<'a>,
    extractor: &'a FeatureExtractor,
    pred: Var,
    target: &'a PerceptualTarget,
    weights: &LossWeights,
) -> Result<LossVars> {
    let size = target.image.size();
    if g.shape(pred) != (1, size * size) {
        return Err(Error::shape(format!("prediction {:?} for a {size}x{size} target", g.shape(pred))));
    }
    let gt = g.input(target.image.to_row());
    let diff = g.sub(pred, gt)?;
    let sq = g.square(diff);
    let mse = g.mean(sq);
    let mut terms = alloc::vec![(mse, weights.gamma)];
    let mut content = None;
    let mut style = None;
    if !target.content.is_empty() || !target.style.is_empty() {
        let mut names: Vec<String> = target.content.iter().map(|(l, _)| l.clone()).collect();
        for (l, _) in &target.style {
            if !names.contains(l) {
                names.push(l.clone());
            }
        }
        let feats = extractor.forward(g, pred, size, &names)?;
        if !target.content.is_empty() {
            let mut per = Vec::new();
            for (l, m) in &target.content {
                let f = feats[l].var;
                let c = g.constant(m);
                let d = g.sub(f, c)?;
                let s = g.square(d);
                per.push((g.mean(s), 1.0 / target.content.len() as f64));
            }
            let v = g.weighted_sum(&per)?;
            terms.push((v, weights.alpha));
            content = Some(v);
        }
        if !target.style.is_empty() {
            let mut per = Vec::new();
            for (l, gm) in &target.style {
                let f = feats[l];
                let gp = gram_graph(g, f.var, f.channels, f.height, f.width)?;
                let c = g.constant(gm);
                let d = g.sub(gp, c)?;
                let s = g.square(d);
                per.push((g.mean(s), 1.0 / target.style.len() as f64));
            }
            let v = g.weighted_sum(&per)?;
            terms.push((v, weights.beta));
            style = Some(v);
        }
    }
    let total = g.weighted_sum(&terms)?;
    Ok(LossVars {
        total,
        content,
        style,
        mse,
    })
}

/// Differentiable mean absolute error against `gt`.
pub fn refine_loss_graph(g: &mut Graph, pred: Var, gt: &GlyphImage) -> Result<Var> {
    let size = gt.size();
    if g.shape(pred) != (1, size * size) {
        return Err(Error::shape(format!("prediction {:?} for a {size}x{size} target", g.shape(pred))));
    }
    let t = g.input(gt.to_row());
    let d = g.sub(pred, t)?;
    let a = g.abs(d);
    Ok(g.mean(a))
}
