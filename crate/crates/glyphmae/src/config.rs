//! Run configuration, read from a single TOML file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use glyphmae_core::dataset::SplitConfig;
use glyphmae_core::{BackboneConfig, Charcode, FeatureExtractor, LossWeights, PerceptualTaps};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataSection,
    pub split: SplitSection,
    pub backbone: BackboneSection,
    pub pretrain: PretrainConfig,
    pub train: TrainSection,
    pub loss: LossSection,
    pub perceptual: PerceptualSection,
    pub eval: EvalSection,
    pub serve: ServeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            data: DataSection::default(),
            split: SplitSection::default(),
            backbone: BackboneSection::default(),
            pretrain: PretrainConfig::default(),
            train: TrainSection::default(),
            loss: LossSection::default(),
            perceptual: PerceptualSection::default(),
            eval: EvalSection::default(),
            serve: ServeSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub fonts_dir: PathBuf,
    /// Rendered PNGs and the manifest.
    pub data_dir: PathBuf,
    /// Characters to render, given literally.
    pub chars: String,
    /// Inclusive code point ranges as hex pairs, e.g. `["4e00", "4e63"]`.
    pub ranges: Vec<(String, String)>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            fonts_dir: PathBuf::from("fonts"),
            data_dir: PathBuf::from("data"),
            chars: String::new(),
            ranges: Vec::new(),
        }
    }
}

impl DataSection {
    /// Requested characters, sorted and deduplicated. Empty means "whatever
    /// each font covers".
    pub fn charset(&self) -> Result<Vec<char>> {
        let mut out: Vec<char> = self.chars.chars().filter(|c| !c.is_control()).collect();
        for (a, b) in &self.ranges {
            let lo = Charcode::parse_hex(a).with_context(|| format!("bad range start `{a}`"))?;
            let hi = Charcode::parse_hex(b).with_context(|| format!("bad range end `{b}`"))?;
            if lo > hi {
                bail!("range {a}..{b} is reversed");
            }
            out.extend((lo.0..=hi.0).filter_map(char::from_u32));
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub pretrain: f64,
    pub content_fonts: Option<Vec<String>>,
    /// Per-font reference characters as hex code points.
    pub reference_chars: BTreeMap<String, Vec<String>>,
    pub allow_empty_test: bool,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            pretrain: 0.0,
            content_fonts: None,
            reference_chars: BTreeMap::new(),
            allow_empty_test: false,
        }
    }
}

impl SplitSection {
    pub fn to_core(&self, seed: u64) -> Result<SplitConfig> {
        let mut reference_chars = BTreeMap::new();
        for (font, list) in &self.reference_chars {
            let codes = list
                .iter()
                .map(|s| Charcode::parse_hex(s).with_context(|| format!("bad reference char `{s}`")))
                .collect::<Result<Vec<_>>>()?;
            reference_chars.insert(font.clone(), codes);
        }
        Ok(SplitConfig {
            train: self.train,
            val: self.val,
            test: self.test,
            pretrain: self.pretrain,
            seed,
            content_fonts: self.content_fonts.clone(),
            reference_chars,
            allow_empty_test: self.allow_empty_test,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneSection {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub hidden_size: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub decoder_hidden: usize,
    pub decoder_depth: usize,
    pub decoder_heads: usize,
    pub mask_ratio: f64,
    pub fusion_depth: usize,
}

impl Default for BackboneSection {
    fn default() -> Self {
        Self::from_core(&BackboneConfig::default(), glyphmae_core::StyleModel::DEFAULT_FUSION_DEPTH)
    }
}

impl BackboneSection {
    pub fn from_core(c: &BackboneConfig, fusion_depth: usize) -> Self {
        Self {
            image_size: c.image_size,
            patch_size: c.patch_size,
            channels: c.channels,
            hidden_size: c.hidden_size,
            depth: c.depth,
            heads: c.heads,
            mlp_ratio: c.mlp_ratio,
            decoder_hidden: c.decoder_hidden,
            decoder_depth: c.decoder_depth,
            decoder_heads: c.decoder_heads,
            mask_ratio: c.mask_ratio,
            fusion_depth,
        }
    }

    pub fn to_core(&self) -> BackboneConfig {
        BackboneConfig {
            image_size: self.image_size,
            patch_size: self.patch_size,
            channels: self.channels,
            hidden_size: self.hidden_size,
            depth: self.depth,
            heads: self.heads,
            mlp_ratio: self.mlp_ratio,
            decoder_hidden: self.decoder_hidden,
            decoder_depth: self.decoder_depth,
            decoder_heads: self.decoder_heads,
            mask_ratio: self.mask_ratio,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 8,
            lr: 1.5e-4,
            weight_decay: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    #[default]
    Pretrained,
    Scratch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Epochs of main training with the combined loss.
    pub epochs: f64,
    /// Refinement length as a fraction of one epoch.
    pub refine_fraction: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub refine_lr: f64,
    pub weight_decay: f64,
    pub p_ref_drop: f64,
    /// Steps per epoch; defaults to the number of train targets over the
    /// batch size.
    pub steps_per_epoch: Option<usize>,
    pub init: InitMode,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 10.0,
            refine_fraction: 0.5,
            batch_size: 8,
            lr: 1e-4,
            refine_lr: 1e-4,
            weight_decay: 0.05,
            p_ref_drop: 0.5,
            steps_per_epoch: None,
            init: InitMode::Pretrained,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
        }
    }
}

impl LossSection {
    pub fn to_core(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorMode {
    /// Random-weight network of the same topology.
    #[default]
    Fallback,
    /// Weights loaded from `weights`.
    Pretrained,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptualSection {
    pub mode: ExtractorMode,
    /// Tensor file with `convB_I.weight` / `convB_I.bias` entries.
    pub weights: Option<PathBuf>,
    pub content_layers: Vec<String>,
    pub style_layers: Vec<String>,
    pub fallback_seed: u64,
    pub width_divisor: usize,
}

impl Default for PerceptualSection {
    fn default() -> Self {
        let t = PerceptualTaps::default();
        Self {
            mode: ExtractorMode::Fallback,
            weights: None,
            content_layers: t.content_layers,
            style_layers: t.style_layers,
            fallback_seed: FeatureExtractor::DEFAULT_FALLBACK_SEED,
            width_divisor: FeatureExtractor::DEFAULT_WIDTH_DIVISOR,
        }
    }
}

impl PerceptualSection {
    pub fn taps(&self) -> PerceptualTaps {
        PerceptualTaps {
            content_layers: self.content_layers.clone(),
            style_layers: self.style_layers.clone(),
        }
    }

    pub fn extractor(&self) -> Result<FeatureExtractor> {
        match self.mode {
            ExtractorMode::Fallback => Ok(FeatureExtractor::fallback(self.fallback_seed, self.width_divisor)?),
            ExtractorMode::Pretrained => {
                let Some(path) = &self.weights else {
                    return Err(glyphmae_core::Error::MissingWeights("no weights file configured".into()).into());
                };
                let file = crate::checkpoint::TensorFile::read(path)?;
                Ok(FeatureExtractor::pretrained(|name| file.get(name).cloned())?)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Report LPIPS and FID using the configured extractor. In fallback mode
    /// the numbers are only comparable within this implementation.
    pub perceptual_metrics: bool,
    pub max_samples: Option<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            perceptual_metrics: true,
            max_samples: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub host: String,
    pub port: u16,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        // relative paths are resolved against the config file's directory
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn rebase(&mut self, base: &Path) {
        for p in [&mut self.output_dir, &mut self.data.fonts_dir, &mut self.data.data_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(w) = &mut self.perceptual.weights {
            if w.is_relative() {
                *w = base.join(&*w);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.to_core().validate()?;
        self.loss.to_core().validate()?;
        self.perceptual.taps().validate()?;
        self.split.to_core(self.seed)?.validate()?;
        let t = &self.train;
        if !(t.epochs >= 0.0) {
            bail!("train.epochs must be >= 0");
        }
        if !(t.refine_fraction >= 0.0) {
            bail!("train.refine_fraction must be >= 0");
        }
        if !(0.0..=1.0).contains(&t.p_ref_drop) {
            bail!("train.p_ref_drop must lie in [0, 1]");
        }
        if t.batch_size == 0 || self.pretrain.batch_size == 0 {
            bail!("batch sizes must be positive");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn stage_dir(&self, stage: crate::checkpoint::Stage) -> PathBuf {
        self.output_dir.join(stage.as_str())
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.data.data_dir.join(crate::manifest::MANIFEST_FILE)
    }

    pub fn index_dir(&self) -> PathBuf {
        self.output_dir.join("index")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.output_dir.join("eval")
    }
}
