//! Evaluation over the four unseen partitions.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::dataset::{partition_cases, DatasetManifest, GlyphSource, Split};
use crate::error::{Error, Result};
use crate::glyph::{Charcode, GlyphImage};
use crate::metrics::{fid, lpips, pixel_metrics, ssim};
use crate::model::StyleModel;
use crate::params::ParamStore;
use crate::perceptual::FeatureExtractor;
use crate::retrieval::{embed_glyph, StyleEmbedding, StyleIndex};

/// Anything that turns a (content, style reference) pair into a glyph.
pub trait Generator {
    fn generate(&self, content: &GlyphImage, style_ref: &GlyphImage) -> Result<GlyphImage>;

    /// Retrieval key for an image.
    fn embed(&self, image: &GlyphImage) -> Result<StyleEmbedding>;
}

/// A trained style model with its weights.
#[derive(Clone, Copy, Debug)]
pub struct TrainedModel<'a> {
    pub model: &'a StyleModel,
    pub store: &'a ParamStore,
}

impl Generator for TrainedModel<'_> {
    fn generate(&self, content: &GlyphImage, style_ref: &GlyphImage) -> Result<GlyphImage> {
        self.model.generate(self.store, content, core::slice::from_ref(style_ref))
    }

    fn embed(&self, image: &GlyphImage) -> Result<StyleEmbedding> {
        embed_glyph(image, self.model, self.store)
    }
}

/// Returns the ground-truth glyph for the requested (style, character).
/// Embeddings are the raw pixels.
pub struct OracleGenerator<'a, S: GlyphSource + ?Sized> {
    pub manifest: &'a DatasetManifest,
    pub source: &'a S,
}

impl<S: GlyphSource + ?Sized> Generator for OracleGenerator<'_, S> {
    fn generate(&self, content: &GlyphImage, style_ref: &GlyphImage) -> Result<GlyphImage> {
        let entry = self
            .manifest
            .find(&style_ref.style_id, content.charcode)
            .ok_or_else(|| Error::MissingReferenceImage {
                style_id: style_ref.style_id.clone(),
                charcode: content.charcode,
            })?;
        self.source.load(entry)
    }

    fn embed(&self, image: &GlyphImage) -> Result<StyleEmbedding> {
        Ok(StyleEmbedding::from_raw(image.pixels(), image.charcode, image.style_id.clone()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub partition: Split,
    pub l1: f64,
    pub mse: f64,
    pub rmse: f64,
    pub ssim: f64,
    pub lpips: Option<f64>,
    pub fid: Option<f64>,
    pub sample_count: usize,
}

impl MetricReport {
    pub fn label(&self) -> &'static str {
        self.partition.partition_label().unwrap_or("??")
    }
}

/// Which reference each sample used.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub style_id: String,
    pub target: Charcode,
    pub reference: Charcode,
    pub fixed_reference: Charcode,
}

#[derive(Clone, Debug)]
pub struct PartitionResult {
    pub report: MetricReport,
    pub samples: Vec<SampleRecord>,
}

impl PartitionResult {
    /// Fraction of samples whose reference differs from the fixed one.
    pub fn changed_reference_rate(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let n = self.samples.iter().filter(|s| s.reference != s.fixed_reference).count();
        n as f64 / self.samples.len() as f64
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EvalOptions<'a> {
    pub use_rag: bool,
    /// LPIPS and FID are only reported when an extractor is supplied.
    pub extractor: Option<&'a FeatureExtractor>,
    /// Evaluate only the first `n` cases.
    pub max_samples: Option<usize>,
}

pub fn evaluate_partition(
    generator: &dyn Generator,
    manifest: &DatasetManifest,
    source: &dyn GlyphSource,
    partition: Split,
    opts: &EvalOptions,
) -> Result<PartitionResult> {
    let mut cases = partition_cases(manifest, partition)?;
    if let Some(n) = opts.max_samples {
        cases.truncate(n);
    }
    if cases.is_empty() {
        return Err(Error::EmptyPartition(partition.partition_label().unwrap_or("?").into()));
    }

    // per-style retrieval indexes over each case's reference pool
    let mut indexes: BTreeMap<String, StyleIndex> = BTreeMap::new();
    if opts.use_rag {
        let mut pools: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for case in &cases {
            let style = &manifest.entries[case.target].style_id;
            let pool = pools.entry(style.clone()).or_default();
            pool.push(case.target);
            pool.extend(&case.references);
        }
        for (style, mut pool) in pools {
            pool.sort_unstable();
            pool.dedup();
            // the target itself is only ever excluded, so leave it out when
            // it is not a legitimate reference for any case
            pool.retain(|&i| cases.iter().any(|c| c.references.contains(&i)));
            let mut embeddings = Vec::with_capacity(pool.len());
            for i in pool {
                embeddings.push(generator.embed(&source.load(&manifest.entries[i])?)?);
            }
            indexes.insert(style.clone(), StyleIndex::from_embeddings(style, embeddings)?);
        }
    }

    let mut preds = Vec::with_capacity(cases.len());
    let mut gts = Vec::with_capacity(cases.len());
    let mut samples = Vec::with_capacity(cases.len());
    let (mut l1, mut mse, mut ss, mut lp) = (0.0, 0.0, 0.0, 0.0);
    for case in &cases {
        let content = source.load(&manifest.entries[case.content])?;
        let target_entry = &manifest.entries[case.target];
        let target = source.load(target_entry)?;
        let fixed = case.fixed_reference(manifest);
        let fixed_code = manifest.entries[fixed].charcode;
        let reference = if opts.use_rag {
            let index = &indexes[&target_entry.style_id];
            let key = generator.embed(&content)?;
            let hit = index
                .search_excluding(&key.vector, 1, Some(target_entry.charcode))?
                .into_iter()
                .next()
                .ok_or_else(|| Error::Exhausted(format!("no reference for {}", target_entry.charcode)))?;
            manifest.find(&target_entry.style_id, hit.charcode).ok_or_else(|| Error::MissingReferenceImage {
                style_id: target_entry.style_id.clone(),
                charcode: hit.charcode,
            })?
        } else {
            &manifest.entries[fixed]
        };
        let style_ref = source.load(reference)?;
        let pred = generator.generate(&content, &style_ref)?;
        let px = pixel_metrics(&pred, &target)?;
        l1 += px.l1;
        mse += px.mse;
        ss += ssim(&pred, &target)?;
        if let Some(ex) = opts.extractor {
            lp += lpips(&pred, &target, ex)?;
        }
        samples.push(SampleRecord {
            style_id: target_entry.style_id.clone(),
            target: target_entry.charcode,
            reference: reference.charcode,
            fixed_reference: fixed_code,
        });
        preds.push(pred);
        gts.push(target);
    }
    let n = cases.len() as f64;
    let mse = mse / n;
    let fid_value = match opts.extractor {
        Some(ex) if cases.len() >= 2 => Some(fid(&preds, &gts, ex)?),
        _ => None,
    };
    Ok(PartitionResult {
        report: MetricReport {
            partition,
            l1: l1 / n,
            mse,
            rmse: libm::sqrt(mse),
            ssim: ss / n,
            lpips: opts.extractor.map(|_| lp / n),
            fid: fid_value,
            sample_count: cases.len(),
        },
        samples,
    })
}

/// Evaluates SS, SC, CS and CC in that order.
pub fn evaluate_all(
    generator: &dyn Generator,
    manifest: &DatasetManifest,
    source: &dyn GlyphSource,
    opts: &EvalOptions,
) -> Result<Vec<PartitionResult>> {
    Split::TESTS
        .into_iter()
        .map(|p| evaluate_partition(generator, manifest, source, p, opts))
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| String::from("-"), |x| format!("{x:.4}"))
}

/// Fixed-width text table, one row per partition.
pub fn format_table(reports: &[MetricReport]) -> String {
    let mut s = format!(
        "{:<4} {:>8} {:>8} {:>8} {:>8} {:>8} {:>10} {:>6}\n",
        "", "L1", "MSE", "RMSE", "SSIM", "LPIPS", "FID", "N"
    );
    for r in reports {
        s.push_str(&format!(
            "{:<4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8} {:>10} {:>6}\n",
            r.label(),
            r.l1,
            r.mse,
            r.rmse,
            r.ssim,
            opt(r.lpips),
            opt(r.fid),
            r.sample_count
        ));
    }
    s
}
