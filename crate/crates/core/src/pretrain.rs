//! Masked-reconstruction objective used to pretrain the shared backbone.

use crate::backbone::MaskedAutoencoder;
use crate::error::{Error, Result};
use crate::glyph::{GlyphImage, PatchGrid};
use crate::graph::{Graph, Var};
use crate::mask::MaskSpec;
use crate::params::{ParamGrads, ParamStore};
use crate::tensor::Matrix;

/// Mean squared error over the masked patches only. An empty mask gives 0.
pub fn mae_loss(pred: &Matrix, target: &GlyphImage, mask: &MaskSpec, grid: &PatchGrid) -> Result<f64> {
    let target = grid.patchify(target)?;
    check(pred, &target, mask)?;
    if mask.masked().is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for &p in mask.masked() {
        for (a, b) in pred.row(p).iter().zip(target.row(p)) {
            sum += (a - b) * (a - b);
        }
    }
    Ok(sum / (mask.masked().len() * pred.cols()) as f64)
}

fn check(pred: &Matrix, target: &Matrix, mask: &MaskSpec) -> Result<()> {
    if pred.shape() != target.shape() || mask.patch_num() != pred.rows() {
        return Err(Error::shape(alloc::format!(
            "prediction {:?} vs target {:?} under a {}-patch mask",
            pred.shape(),
            target.shape(),
            mask.patch_num()
        )));
    }
    Ok(())
}

/// Graph form of [`mae_loss`]; `target` is the patchified target.
pub fn mae_loss_graph(g: &mut Graph, pred: Var, target: &Matrix, mask: &MaskSpec) -> Result<Var> {
    check(g.value(pred), target, mask)?;
    if mask.masked().is_empty() {
        let zero = g.input(Matrix::zeros(1, 1));
        return Ok(g.mean(zero));
    }
    let picked = g.gather_rows(pred, mask.masked())?;
    let tgt = Matrix::from_fn(mask.masked().len(), target.cols(), |r, c| target.get(mask.masked()[r], c));
    let tgt = g.input(tgt);
    let diff = g.sub(picked, tgt)?;
    let sq = g.square(diff);
    Ok(g.mean(sq))
}

/// One sample's masked-reconstruction loss and parameter gradients.
pub fn mae_step(model: &MaskedAutoencoder, store: &ParamStore, image: &GlyphImage, mask: &MaskSpec) -> Result<(f64, ParamGrads)> {
    let grid = model.cfg.grid();
    let patches = grid.patchify(image)?;
    let mut g = Graph::new(store);
    let input = g.input(patches.clone());
    let pred = model.forward(&mut g, input, mask)?;
    let loss = mae_loss_graph(&mut g, pred, &patches, mask)?;
    let value = g.value(loss).get(0, 0);
    Ok((value, g.backward(loss).into_params()))
}
