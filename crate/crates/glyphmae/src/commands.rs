//! The CLI stages as library functions.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use glyphmae_core::dataset::{build_splits, Entry, GlyphSource, Split};
use glyphmae_core::eval::{evaluate_all, format_table, EvalOptions, MetricReport, PartitionResult, TrainedModel};
use glyphmae_core::{Charcode, DatasetManifest, GlyphImage, MaskedAutoencoder, StyleIndex, StyleModel};
use serde::Serialize;

use crate::checkpoint::{checkpoint_path, Checkpoint, CheckpointMeta, Stage};
use crate::config::{InitMode, RunConfig};
use crate::engine::{latest_checkpoint, Engine, StyleChoice};
use crate::imageio::{read_glyph, write_png};
use crate::index_file::save_index;
use crate::manifest::{glyph_path, read_manifest, write_manifest, DiskSource};
use crate::render::LoadedFont;
use crate::stages::{self, Feed, MainOptions};
use crate::HarnessError;

/// Appends serializable records to a JSONL file.
pub struct JsonlLog {
    file: std::io::BufWriter<std::fs::File>,
}

impl JsonlLog {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(d) = path.parent() {
            std::fs::create_dir_all(d)?;
        }
        Ok(Self {
            file: std::io::BufWriter::new(std::fs::File::create(path)?),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) {
        if let Err(e) = serde_json::to_writer(&mut self.file, record).map_err(anyhow::Error::from).and_then(|_| Ok(self.file.write_all(b"\n")?)) {
            log::warn!("loss log write failed: {e}");
        }
    }
}

#[derive(Debug, Default)]
pub struct RenderSummary {
    pub fonts: usize,
    pub entries: usize,
    pub skipped_existing: bool,
    /// Fonts that could not be parsed, with the reason.
    pub failures: Vec<(PathBuf, String)>,
}

fn font_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(HarnessError::NoFonts(dir.to_path_buf()).into());
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "ttf" | "otf"))
        })
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(HarnessError::NoFonts(dir.to_path_buf()).into());
    }
    Ok(out)
}

/// Renders every font into PNGs, then writes the split manifest. An existing
/// manifest is left alone unless `force` is set.
pub fn cmd_render(cfg: &RunConfig, force: bool) -> Result<RenderSummary> {
    let fonts = font_files(&cfg.data.fonts_dir)?;
    let manifest_path = cfg.manifest_path();
    if manifest_path.exists() && !force {
        let m = read_manifest(&manifest_path)?;
        log::info!("{} exists; pass --force to re-render", manifest_path.display());
        return Ok(RenderSummary {
            fonts: m.styles().len(),
            entries: m.len(),
            skipped_existing: true,
            failures: Vec::new(),
        });
    }
    let wanted = cfg.data.charset()?;
    let size = cfg.backbone.image_size;
    let mut summary = RenderSummary::default();
    let mut entries = Vec::new();
    for path in &fonts {
        let font = match LoadedFont::open(path) {
            Ok(f) => f,
            Err(e) => {
                log::error!("{}: {e}", path.display());
                summary.failures.push((path.clone(), e.to_string()));
                continue;
            }
        };
        let chars = if wanted.is_empty() { font.charset() } else { wanted.clone() };
        let mut rendered = 0;
        for c in chars {
            if !font.has_glyph(c) {
                continue;
            }
            let img = font.render(c, size)?;
            let rel = glyph_path(&font.style_id, img.charcode);
            write_png(&cfg.data.data_dir.join(&rel), &img)?;
            entries.push(Entry::new(img.charcode, font.style_id.clone(), rel));
            rendered += 1;
        }
        log::info!("{}: {rendered} glyphs", font.style_id);
        summary.fonts += 1;
    }
    if entries.is_empty() {
        anyhow::bail!("no glyphs rendered from {}", cfg.data.fonts_dir.display());
    }
    let manifest = build_splits(&DatasetManifest::new(entries)?, &cfg.split.to_core(cfg.seed)?)?;
    summary.entries = manifest.len();
    write_manifest(&manifest_path, &manifest)?;
    Ok(summary)
}

fn load_manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    let p = cfg.manifest_path();
    if !p.exists() {
        anyhow::bail!("no manifest at {}; run `render` first", p.display());
    }
    read_manifest(&p)
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(HarnessError::MissingCheckpoint(path).into())
    }
}

#[derive(Debug)]
pub struct StageResult {
    pub checkpoint: PathBuf,
    pub checkpoint_id: String,
    pub steps: usize,
}

pub fn cmd_pretrain(cfg: &RunConfig) -> Result<(StageResult, stages::PretrainOutcome)> {
    let manifest = load_manifest(cfg)?;
    let source = DiskSource::new(&cfg.data.data_dir, cfg.backbone.image_size);
    let images = manifest.pretrain_entries().into_iter().map(|e| source.load(e)).collect::<glyphmae_core::Result<Vec<_>>>()?;
    let (model, mut store) = MaskedAutoencoder::init(&cfg.backbone.to_core(), cfg.seed)?;
    let dir = cfg.stage_dir(Stage::Pretrain);
    let mut log = JsonlLog::create(&dir.join("loss.jsonl"))?;
    let outcome = stages::pretrain(&model, &mut store, &images, &cfg.pretrain, cfg.seed, &mut |r| log.write(r))?;
    let ckpt = Checkpoint {
        meta: CheckpointMeta {
            stage: Stage::Pretrain,
            backbone: cfg.backbone.clone(),
            steps: outcome.steps,
            parent: None,
        },
        store,
    };
    let path = checkpoint_path(&cfg.output_dir, Stage::Pretrain);
    let id = ckpt.save(&path)?;
    Ok((
        StageResult {
            checkpoint: path,
            checkpoint_id: id,
            steps: outcome.steps,
        },
        outcome,
    ))
}

fn style_model_for(cfg: &RunConfig) -> Result<(StyleModel, glyphmae_core::ParamStore, Option<String>)> {
    let (model, mut store) = StyleModel::init(&cfg.backbone.to_core(), cfg.backbone.fusion_depth, cfg.seed)?;
    match cfg.train.init {
        InitMode::Scratch => Ok((model, store, None)),
        InitMode::Pretrained => {
            let path = require(checkpoint_path(&cfg.output_dir, Stage::Pretrain))?;
            let (ckpt, id) = Checkpoint::load(&path)?;
            anyhow::ensure!(ckpt.meta.backbone.to_core() == cfg.backbone.to_core(), "pretraining checkpoint has a different backbone");
            model.load_pretrained(&mut store, &ckpt.store)?;
            Ok((model, store, Some(id)))
        }
    }
}

fn epoch_steps(cfg: &RunConfig, feed: &Feed) -> usize {
    cfg.train
        .steps_per_epoch
        .unwrap_or_else(|| stages::steps_per_epoch(feed.epoch_len(), cfg.train.batch_size))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<StageResult> {
    let manifest = load_manifest(cfg)?;
    let source = DiskSource::new(&cfg.data.data_dir, cfg.backbone.image_size);
    let (model, mut store, parent) = style_model_for(cfg)?;
    let extractor = cfg.perceptual.extractor()?;
    let mut feed = Feed::sampled(&manifest, Split::Train, &source, cfg.train.p_ref_drop)?;
    let steps = (cfg.train.epochs * epoch_steps(cfg, &feed) as f64).round() as usize;
    let opts = MainOptions {
        steps,
        batch_size: cfg.train.batch_size,
        lr: cfg.train.lr,
        weight_decay: cfg.train.weight_decay,
        weights: cfg.loss.to_core(),
        taps: cfg.perceptual.taps(),
    };
    let dir = cfg.stage_dir(Stage::Main);
    let mut log = JsonlLog::create(&dir.join("loss.jsonl"))?;
    stages::train_main(&model, &mut store, &extractor, &mut feed, &opts, cfg.seed, &mut |r| log.write(r))?;
    save_stage(cfg, Stage::Main, store, steps, parent)
}

fn save_stage(cfg: &RunConfig, stage: Stage, store: glyphmae_core::ParamStore, steps: usize, parent: Option<String>) -> Result<StageResult> {
    let ckpt = Checkpoint {
        meta: CheckpointMeta {
            stage,
            backbone: cfg.backbone.clone(),
            steps,
            parent,
        },
        store,
    };
    let path = checkpoint_path(&cfg.output_dir, stage);
    let id = ckpt.save(&path)?;
    Ok(StageResult {
        checkpoint: path,
        checkpoint_id: id,
        steps,
    })
}

/// L1 refinement of the main-stage checkpoint for `fraction` of an epoch
/// (the configured fraction when `None`).
pub fn cmd_refine(cfg: &RunConfig, fraction: Option<f64>) -> Result<StageResult> {
    let fraction = fraction.unwrap_or(cfg.train.refine_fraction);
    anyhow::ensure!(fraction >= 0.0, "refine fraction must be >= 0");
    let path = require(checkpoint_path(&cfg.output_dir, Stage::Main))?;
    let (ckpt, parent) = Checkpoint::load(&path)?;
    let (model, mut store) = ckpt.style_model()?;
    let manifest = load_manifest(cfg)?;
    let source = DiskSource::new(&cfg.data.data_dir, model.cfg.image_size);
    let mut feed = Feed::sampled(&manifest, Split::Train, &source, cfg.train.p_ref_drop)?;
    let steps = stages::refine_steps(fraction, epoch_steps(cfg, &feed));
    let dir = cfg.stage_dir(Stage::Refined);
    let mut log = JsonlLog::create(&dir.join("loss.jsonl"))?;
    stages::refine(
        &model,
        &mut store,
        &mut feed,
        steps,
        cfg.train.batch_size,
        cfg.train.refine_lr,
        cfg.train.weight_decay,
        cfg.seed,
        &mut |r| log.write(r),
    )?;
    save_stage(cfg, Stage::Refined, store, steps, Some(parent))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RagMode {
    Off,
    On,
    Both,
}

#[derive(Serialize)]
struct ReportRecord<'a> {
    partition: &'a str,
    rag: bool,
    l1: f64,
    mse: f64,
    rmse: f64,
    ssim: f64,
    lpips: Option<f64>,
    fid: Option<f64>,
    sample_count: usize,
    changed_reference_rate: f64,
}

pub fn report_jsonl(results: &[PartitionResult], rag: bool) -> Result<String> {
    let mut s = String::new();
    for r in results {
        let m: &MetricReport = &r.report;
        s.push_str(&serde_json::to_string(&ReportRecord {
            partition: m.label(),
            rag,
            l1: m.l1,
            mse: m.mse,
            rmse: m.rmse,
            ssim: m.ssim,
            lpips: m.lpips,
            fid: m.fid,
            sample_count: m.sample_count,
            changed_reference_rate: r.changed_reference_rate(),
        })?);
        s.push('\n');
    }
    Ok(s)
}

#[derive(Debug)]
pub struct EvalRun {
    pub rag: bool,
    pub results: Vec<PartitionResult>,
    pub table: String,
}

/// Evaluates SS/SC/CS/CC and writes `report[_rag].txt` and `.jsonl` under
/// the eval directory.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>, mode: RagMode) -> Result<Vec<EvalRun>> {
    let path = match checkpoint {
        Some(p) => require(p.to_path_buf())?,
        None => latest_checkpoint(&cfg.output_dir)?,
    };
    let (ckpt, _) = Checkpoint::load(&path)?;
    let (model, store) = ckpt.style_model()?;
    let manifest = load_manifest(cfg)?;
    let source = DiskSource::new(&cfg.data.data_dir, model.cfg.image_size);
    let extractor = if cfg.eval.perceptual_metrics { Some(cfg.perceptual.extractor()?) } else { None };
    let generator = TrainedModel { model: &model, store: &store };
    let flags: &[bool] = match mode {
        RagMode::Off => &[false],
        RagMode::On => &[true],
        RagMode::Both => &[false, true],
    };
    let mut runs = Vec::new();
    for &rag in flags {
        let opts = EvalOptions {
            use_rag: rag,
            extractor: extractor.as_ref(),
            max_samples: cfg.eval.max_samples,
        };
        let results = evaluate_all(&generator, &manifest, &source, &opts)?;
        let reports: Vec<MetricReport> = results.iter().map(|r| r.report.clone()).collect();
        let table = format_table(&reports);
        let stem = if rag { "report_rag" } else { "report" };
        let dir = cfg.eval_dir();
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join(format!("{stem}.txt")), &table)?;
        std::fs::write(dir.join(format!("{stem}.jsonl")), report_jsonl(&results, rag)?)?;
        runs.push(EvalRun { rag, results, table });
    }
    Ok(runs)
}

/// Builds one retrieval index per style from every glyph of that style.
pub fn cmd_index(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Vec<PathBuf>> {
    let path = match checkpoint {
        Some(p) => require(p.to_path_buf())?,
        None => latest_checkpoint(&cfg.output_dir)?,
    };
    let (ckpt, _) = Checkpoint::load(&path)?;
    let (model, store) = ckpt.style_model()?;
    let manifest = load_manifest(cfg)?;
    let source = DiskSource::new(&cfg.data.data_dir, model.cfg.image_size);
    let mut written = Vec::new();
    for style in manifest.styles() {
        let glyphs = manifest
            .entries
            .iter()
            .filter(|e| e.style_id == style)
            .map(|e| source.load(e))
            .collect::<glyphmae_core::Result<Vec<_>>>()?;
        let index = StyleIndex::build(style, &glyphs, &model, &store)?;
        written.push(save_index(&cfg.index_dir(), &index)?);
    }
    Ok(written)
}

pub enum StyleArg {
    Image(PathBuf),
    Id(String),
}

#[derive(Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct Provenance {
    pub checkpoint_id: String,
    pub content: String,
    pub style: String,
    pub rag: bool,
    pub reference_charcode: Option<String>,
}

/// Reads a user-supplied PNG as a made-up glyph.
pub fn read_input(path: &Path, size: usize, style_id: &str) -> Result<GlyphImage> {
    read_glyph(path, size, Charcode::MADE_UP, style_id)
}

pub fn cmd_generate(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    content: &Path,
    style: &StyleArg,
    rag: bool,
    out: &Path,
) -> Result<Provenance> {
    let engine = Engine::load(cfg, checkpoint)?;
    let size = engine.image_size();
    let content_img = read_input(content, size, "input")?;
    let (choice, style_label) = match style {
        StyleArg::Image(p) => (StyleChoice::Image(read_input(p, size, "reference")?), p.display().to_string()),
        StyleArg::Id(id) => (StyleChoice::Id(id.clone()), id.clone()),
    };
    let g = engine.generate(&content_img, &choice, rag)?;
    write_png(out, &g.image)?;
    let prov = Provenance {
        checkpoint_id: engine.checkpoint_id.clone(),
        content: content.display().to_string(),
        style: style_label,
        rag,
        reference_charcode: g.reference.map(|c| c.hex()),
    };
    std::fs::write(out.with_extension("json"), serde_json::to_string_pretty(&prov)?)
        .with_context(|| format!("writing provenance for {}", out.display()))?;
    Ok(prov)
}

#[derive(Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct RetrievedRef {
    pub charcode: String,
    pub distance: f64,
}

pub fn cmd_retrieve(cfg: &RunConfig, checkpoint: Option<&Path>, content: &Path, style_id: &str, k: usize) -> Result<Vec<RetrievedRef>> {
    let engine = Engine::load(cfg, checkpoint)?;
    let img = read_input(content, engine.image_size(), "input")?;
    Ok(engine
        .retrieve(&img, style_id, k)?
        .into_iter()
        .map(|h| RetrievedRef {
            charcode: h.charcode.hex(),
            distance: h.distance,
        })
        .collect())
}
