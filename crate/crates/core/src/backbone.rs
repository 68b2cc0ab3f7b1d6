//! ViT encoder with MAE-style random masking, and the lightweight decoder
//! that predicts every patch from (possibly partial) encoder tokens.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::glyph::{GlyphImage, PatchGrid};
use crate::graph::{Graph, Var};
use crate::mask::MaskSpec;
use crate::nn::{sincos_2d, Block, LayerNorm, Linear};
use crate::params::{ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
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
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            patch_size: 8,
            channels: 1,
            hidden_size: 192,
            depth: 6,
            heads: 3,
            mlp_ratio: 4,
            decoder_hidden: 96,
            decoder_depth: 2,
            decoder_heads: 3,
            mask_ratio: 0.65,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        PatchGrid::new(self.image_size, self.patch_size, self.channels)?;
        for (width, heads, what) in [
            (self.hidden_size, self.heads, "hidden_size"),
            (self.decoder_hidden, self.decoder_heads, "decoder_hidden"),
        ] {
            if heads == 0 || width % heads != 0 {
                return Err(Error::InvalidConfig(format!("{what} {width} not divisible by {heads} heads")));
            }
            if width % 4 != 0 {
                return Err(Error::InvalidConfig(format!("{what} {width} must be a multiple of 4")));
            }
        }
        if self.mlp_ratio == 0 {
            return Err(Error::InvalidConfig("mlp_ratio must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::InvalidConfig(format!("mask ratio {} outside [0, 1)", self.mask_ratio)));
        }
        Ok(())
    }

    pub fn grid(&self) -> PatchGrid {
        PatchGrid {
            image_size: self.image_size,
            patch_size: self.patch_size,
            channels: self.channels,
        }
    }

    pub fn patch_num(&self) -> usize {
        self.grid().patch_num()
    }

    /// Length of a flattened full-visibility token sequence.
    pub fn embedding_len(&self) -> usize {
        self.hidden_size * (self.patch_num() + 1)
    }
}

/// Encoder output: one class token followed by one token per encoded patch.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    tokens: Matrix,
}

impl TokenSequence {
    pub fn new(tokens: Matrix) -> Result<Self> {
        if tokens.rows() == 0 {
            return Err(Error::shape("token sequence needs a class token"));
        }
        Ok(Self { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn width(&self) -> usize {
        self.tokens.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.tokens
    }

    pub fn into_matrix(self) -> Matrix {
        self.tokens
    }

    /// Class token first, then patch tokens, concatenated.
    pub fn flatten(&self) -> &[f64] {
        self.tokens.as_slice()
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub cfg: BackboneConfig,
    patch_embed: Linear,
    cls_token: ParamId,
    blocks: Vec<Block>,
    norm: LayerNorm,
    patch_pos: Matrix,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &BackboneConfig, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid();
        let d = cfg.hidden_size;
        let patch_embed = Linear::new(store, &format!("{prefix}.patch_embed"), grid.patch_dim(), d, rng);
        let cls_token = store.add_normal(format!("{prefix}.cls_token"), 1, d, 0.02, rng);
        let blocks = (0..cfg.depth)
            .map(|i| Block::new(store, &format!("{prefix}.blocks.{i}"), d, cfg.heads, cfg.mlp_ratio, rng))
            .collect::<Result<Vec<_>>>()?;
        let norm = LayerNorm::new(store, &format!("{prefix}.norm"), d);
        let full = sincos_2d(d, grid.per_side())?;
        let patch_pos = Matrix::from_fn(grid.patch_num(), d, |r, c| full.get(r + 1, c));
        Ok(Self {
            cfg: cfg.clone(),
            patch_embed,
            cls_token,
            blocks,
            norm,
            patch_pos,
        })
    }

    /// `patches` is `patch_num x patch_dim`. With `visible`, only those patch
    /// rows are encoded (in the given order).
    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, patches: Var, visible: Option<&[usize]>) -> Result<Var> {
        let grid = self.cfg.grid();
        if g.shape(patches) != (grid.patch_num(), grid.patch_dim()) {
            return Err(Error::shape(format!(
                "encoder expects {}x{} patches, got {:?}",
                grid.patch_num(),
                grid.patch_dim(),
                g.shape(patches)
            )));
        }
        let x = self.patch_embed.forward(g, patches)?;
        let pos = g.constant(&self.patch_pos);
        let mut x = g.add(x, pos)?;
        if let Some(vis) = visible {
            if vis.len() != grid.patch_num() {
                x = g.gather_rows(x, vis)?;
            }
        }
        let cls = g.param(self.cls_token);
        let mut x = g.concat_rows(&[cls, x])?;
        for block in &self.blocks {
            x = block.forward(g, x)?;
        }
        self.norm.forward(g, x)
    }

    /// Inference-only encoding of one image.
    pub fn encode(&self, store: &ParamStore, image: &GlyphImage, mask: Option<&MaskSpec>) -> Result<TokenSequence> {
        let patches = self.cfg.grid().patchify(image)?;
        let mut g = Graph::inference(store);
        let p = g.input(patches);
        let out = self.forward(&mut g, p, mask.map(|m| m.visible()))?;
        TokenSequence::new(g.value(out).clone())
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub cfg: BackboneConfig,
    embed: Linear,
    mask_token: ParamId,
    blocks: Vec<Block>,
    norm: LayerNorm,
    pred: Linear,
    pos: Matrix,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &BackboneConfig, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid();
        let dd = cfg.decoder_hidden;
        Ok(Self {
            cfg: cfg.clone(),
            embed: Linear::new(store, &format!("{prefix}.embed"), cfg.hidden_size, dd, rng),
            mask_token: store.add_normal(format!("{prefix}.mask_token"), 1, dd, 0.02, rng),
            blocks: (0..cfg.decoder_depth)
                .map(|i| Block::new(store, &format!("{prefix}.blocks.{i}"), dd, cfg.decoder_heads, cfg.mlp_ratio, rng))
                .collect::<Result<Vec<_>>>()?,
            norm: LayerNorm::new(store, &format!("{prefix}.norm"), dd),
            pred: Linear::new(store, &format!("{prefix}.pred"), dd, grid.patch_dim(), rng),
            pos: sincos_2d(dd, grid.per_side())?,
        })
    }

    /// Predicts all `patch_num` patches in raster order. `tokens` must hold the
    /// class token plus one row per visible patch of `mask`; masked positions
    /// are filled with the learned mask token.
    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, tokens: Var, mask: &MaskSpec) -> Result<Var> {
        let patch_num = self.cfg.patch_num();
        let (rows, width) = g.shape(tokens);
        if width != self.cfg.hidden_size {
            return Err(Error::shape(format!("decoder expects width {}, got {width}", self.cfg.hidden_size)));
        }
        if mask.patch_num() != patch_num || rows != 1 + mask.visible().len() {
            return Err(Error::shape(format!(
                "{rows} tokens do not match a mask with {} visible of {} patches",
                mask.visible().len(),
                mask.patch_num()
            )));
        }
        let y = self.embed.forward(g, tokens)?;
        let y = if mask.is_unmasked() {
            y
        } else {
            let mask_row = rows;
            let mt = g.param(self.mask_token);
            let stacked = g.concat_rows(&[y, mt])?;
            let mut slot = alloc::vec![mask_row; patch_num];
            for (j, &p) in mask.visible().iter().enumerate() {
                slot[p] = 1 + j;
            }
            let mut idx = Vec::with_capacity(1 + patch_num);
            idx.push(0);
            idx.extend(slot);
            g.gather_rows(stacked, &idx)?
        };
        let pos = g.constant(&self.pos);
        let mut y = g.add(y, pos)?;
        for block in &self.blocks {
            y = block.forward(g, y)?;
        }
        let y = self.norm.forward(g, y)?;
        let y = self.pred.forward(g, y)?;
        let body: Vec<usize> = (1..=patch_num).collect();
        g.gather_rows(y, &body)
    }

    /// Inference-only reconstruction.
    pub fn decode(&self, store: &ParamStore, tokens: &TokenSequence, mask: &MaskSpec) -> Result<Matrix> {
        let mut g = Graph::inference(store);
        let t = g.input(tokens.matrix().clone());
        let out = self.forward(&mut g, t, mask)?;
        Ok(g.value(out).clone())
    }
}

/// Encoder + decoder pair trained with the masked-reconstruction objective.
#[derive(Clone, Debug)]
pub struct MaskedAutoencoder {
    pub cfg: BackboneConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl MaskedAutoencoder {
    pub const ENCODER_PREFIX: &'static str = "encoder";
    pub const DECODER_PREFIX: &'static str = "decoder";

    pub fn new(store: &mut ParamStore, cfg: &BackboneConfig, rng: &mut SeededRng) -> Result<Self> {
        Ok(Self {
            cfg: cfg.clone(),
            encoder: Encoder::new(store, Self::ENCODER_PREFIX, cfg, rng)?,
            decoder: Decoder::new(store, Self::DECODER_PREFIX, cfg, rng)?,
        })
    }

    /// Fresh parameters from `seed`.
    pub fn init(cfg: &BackboneConfig, seed: u64) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let mut rng = SeededRng::new(seed);
        let model = Self::new(&mut store, cfg, &mut rng)?;
        Ok((model, store))
    }

    /// Predicted patch matrix for `image` under `mask`.
    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, patches: Var, mask: &MaskSpec) -> Result<Var> {
        let latent = self.encoder.forward(g, patches, Some(mask.visible()))?;
        self.decoder.forward(g, latent, mask)
    }

    pub fn reconstruct(&self, store: &ParamStore, image: &GlyphImage, mask: &MaskSpec) -> Result<Matrix> {
        let tokens = self.encoder.encode(store, image, Some(mask))?;
        self.decoder.decode(store, &tokens, mask)
    }
}
