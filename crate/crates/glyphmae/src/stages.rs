//! Training loops for the pretraining, main and refinement stages.

use std::collections::HashMap;
use std::rc::Rc;

use anyhow::Result;
use glyphmae_core::dataset::{GlyphKey, TripletPlan};
use glyphmae_core::losses::PerceptualTarget;
use glyphmae_core::mask::random_mask;
use glyphmae_core::optim::{AdamW, LrSchedule};
use glyphmae_core::pretrain::mae_step;
use glyphmae_core::train::{main_step, refine_step, GradAccumulator};
use glyphmae_core::{
    DatasetManifest, FeatureExtractor, GlyphImage, GlyphSource, LossBreakdown, LossWeights, MaskedAutoencoder, ParamStore,
    PerceptualTaps, SeededRng, StyleModel, Triplet,
};
use serde::Serialize;

use crate::config::PretrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PretrainLog {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MainLog {
    pub step: usize,
    pub content: f64,
    pub style: f64,
    pub mse: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefineLog {
    pub step: usize,
    pub l1: f64,
}

#[derive(Clone, Debug, Default)]
pub struct PretrainOutcome {
    /// Mean masked-patch MSE of every epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

pub fn steps_per_epoch(samples: usize, batch_size: usize) -> usize {
    samples.div_ceil(batch_size.max(1)).max(1)
}

/// Masked-autoencoder pretraining over `images` with warmup + cosine.
pub fn pretrain(
    model: &MaskedAutoencoder,
    store: &mut ParamStore,
    images: &[GlyphImage],
    cfg: &PretrainConfig,
    seed: u64,
    log: &mut dyn FnMut(&PretrainLog),
) -> Result<PretrainOutcome> {
    anyhow::ensure!(!images.is_empty(), "no pretraining images");
    let spe = steps_per_epoch(images.len(), cfg.batch_size);
    let total = spe * cfg.epochs;
    let mut opt = AdamW::new(store, LrSchedule::pretrain(cfg.lr, total), cfg.weight_decay);
    let mut rng = SeededRng::derived(seed, 1);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut acc = GradAccumulator::new(store);
    let mut out = PretrainOutcome::default();
    let patch_num = model.cfg.patch_num();
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch_sum = 0.0;
            for &i in chunk {
                let mask = random_mask(patch_num, model.cfg.mask_ratio, &mut rng)?;
                let (loss, grads) = mae_step(model, store, &images[i], &mask)?;
                batch_sum += loss;
                acc.add(&grads);
            }
            let lr = opt.current_lr();
            opt.step(store, &acc.take_mean());
            epoch_sum += batch_sum;
            log(&PretrainLog {
                epoch,
                step: out.steps,
                loss: batch_sum / chunk.len() as f64,
                lr,
            });
            out.steps += 1;
        }
        out.epoch_losses.push(epoch_sum / images.len() as f64);
    }
    Ok(out)
}

/// Where training triplets come from.
pub enum Feed<'a> {
    /// A fixed list visited in a fresh random order every pass.
    Fixed {
        triplets: Vec<Triplet>,
        order: Vec<usize>,
        pos: usize,
    },
    /// Fresh draws from a manifest split.
    Sampled {
        manifest: &'a DatasetManifest,
        plan: TripletPlan,
        source: &'a dyn GlyphSource,
        p_ref_drop: f64,
    },
}

impl<'a> Feed<'a> {
    pub fn fixed(triplets: Vec<Triplet>) -> Self {
        Feed::Fixed {
            order: Vec::new(),
            pos: 0,
            triplets,
        }
    }

    pub fn sampled(manifest: &'a DatasetManifest, split: glyphmae_core::Split, source: &'a dyn GlyphSource, p_ref_drop: f64) -> Result<Self> {
        Ok(Feed::Sampled {
            plan: TripletPlan::new(manifest, split)?,
            manifest,
            source,
            p_ref_drop,
        })
    }

    /// Samples per epoch: the fixed list length, or the number of distinct
    /// targets in the split.
    pub fn epoch_len(&self) -> usize {
        match self {
            Feed::Fixed { triplets, .. } => triplets.len(),
            Feed::Sampled { plan, .. } => plan.target_count(),
        }
    }

    fn next(&mut self, rng: &mut SeededRng) -> Result<Triplet> {
        match self {
            Feed::Fixed { triplets, order, pos } => {
                anyhow::ensure!(!triplets.is_empty(), "empty triplet list");
                if *pos >= order.len() {
                    *order = (0..triplets.len()).collect();
                    rng.shuffle(order);
                    *pos = 0;
                }
                *pos += 1;
                Ok(triplets[order[*pos - 1]].clone())
            }
            Feed::Sampled {
                manifest,
                plan,
                source,
                p_ref_drop,
            } => Ok(plan.sample(manifest, *p_ref_drop, rng)?.load(manifest, *source)?),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub weights: LossWeights,
    pub taps: PerceptualTaps,
}

/// Main-stage training with the combined loss at a constant learning rate.
/// Returns the batch-mean breakdown of every step.
#[allow(clippy::too_many_arguments)]
pub fn train_main(
    model: &StyleModel,
    store: &mut ParamStore,
    extractor: &FeatureExtractor,
    feed: &mut Feed,
    opts: &MainOptions,
    seed: u64,
    log: &mut dyn FnMut(&MainLog),
) -> Result<Vec<LossBreakdown>> {
    opts.weights.validate()?;
    let perceptual = opts.weights.uses_perceptual();
    let mut opt = AdamW::new(store, LrSchedule::Constant(opts.lr), opts.weight_decay);
    let mut rng = SeededRng::derived(seed, 2);
    let mut acc = GradAccumulator::new(store);
    let mut targets: HashMap<GlyphKey, Rc<PerceptualTarget>> = HashMap::new();
    let mut history = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        let mut sum = LossBreakdown::default();
        for _ in 0..opts.batch_size {
            let t = feed.next(&mut rng)?;
            let key = GlyphKey::new(t.target.style_id.clone(), t.target.charcode);
            let target = match targets.get(&key) {
                Some(pt) => pt.clone(),
                None => {
                    let pt = Rc::new(if perceptual {
                        PerceptualTarget::new(extractor, &t.target, &opts.taps)?
                    } else {
                        PerceptualTarget::pixels_only(&t.target)
                    });
                    targets.insert(key, pt.clone());
                    pt
                }
            };
            let (b, grads) = main_step(model, store, extractor, &t.content, &t.style_ref, &target, &opts.weights)?;
            sum.content += b.content;
            sum.style += b.style;
            sum.mse += b.mse;
            sum.total += b.total;
            acc.add(&grads);
        }
        opt.step(store, &acc.take_mean());
        let n = opts.batch_size as f64;
        let mean = LossBreakdown {
            content: sum.content / n,
            style: sum.style / n,
            mse: sum.mse / n,
            total: sum.total / n,
        };
        log(&MainLog {
            step,
            content: mean.content,
            style: mean.style,
            mse: mean.mse,
            total: mean.total,
        });
        history.push(mean);
    }
    Ok(history)
}

/// Number of refinement steps for a fraction of an epoch; zero stays zero.
pub fn refine_steps(fraction: f64, steps_per_epoch: usize) -> usize {
    if fraction <= 0.0 {
        return 0;
    }
    ((fraction * steps_per_epoch as f64).round() as usize).max(1)
}

/// L1 refinement; returns the batch-mean loss of every step.
#[allow(clippy::too_many_arguments)]
pub fn refine(
    model: &StyleModel,
    store: &mut ParamStore,
    feed: &mut Feed,
    steps: usize,
    batch_size: usize,
    lr: f64,
    weight_decay: f64,
    seed: u64,
    log: &mut dyn FnMut(&RefineLog),
) -> Result<Vec<f64>> {
    let mut opt = AdamW::new(store, LrSchedule::Constant(lr), weight_decay);
    let mut rng = SeededRng::derived(seed, 3);
    let mut acc = GradAccumulator::new(store);
    let mut history = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut sum = 0.0;
        for _ in 0..batch_size {
            let t = feed.next(&mut rng)?;
            let (l, grads) = refine_step(model, store, &t.content, &t.style_ref, &t.target)?;
            sum += l;
            acc.add(&grads);
        }
        opt.step(store, &acc.take_mean());
        let l1 = sum / batch_size as f64;
        log(&RefineLog { step, l1 });
        history.push(l1);
    }
    Ok(history)
}
