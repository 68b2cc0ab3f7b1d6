//! The bi-encoder style-transfer network: a content encoder and a style
//! encoder, cross-attention fusion (content queries, style keys/values), and
//! the MAE decoder that turns fused tokens back into a glyph.

use alloc::format;
use alloc::vec::Vec;

use crate::backbone::{BackboneConfig, Decoder, Encoder, MaskedAutoencoder, TokenSequence};
use crate::error::{Error, Result};
use crate::glyph::GlyphImage;
use crate::graph::{Graph, Var};
use crate::mask::MaskSpec;
use crate::nn::{Attention, LayerNorm, Linear, Mlp};
use crate::params::ParamStore;
use crate::rng::SeededRng;
use crate::tensor::Matrix;

/// Pre-norm cross-attention block with residual connections:
/// `x = c + Attn(LN(c), LN(s))`, then `x + MLP(LN(x))`.
#[derive(Clone, Debug)]
pub struct CrossBlock {
    pub norm_query: LayerNorm,
    pub norm_context: LayerNorm,
    pub attn: Attention,
    pub norm_mlp: LayerNorm,
    pub mlp: Mlp,
}

fn shrink(store: &mut ParamStore, layer: &Linear, factor: f64) {
    store.value_mut(layer.weight).scale_assign(factor);
    store.value_mut(layer.bias).scale_assign(factor);
}

impl CrossBlock {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, mlp_ratio: usize, rng: &mut SeededRng) -> Result<Self> {
        let block = Self {
            norm_query: LayerNorm::new(store, &format!("{name}.norm_query"), width),
            norm_context: LayerNorm::new(store, &format!("{name}.norm_context"), width),
            attn: Attention::new(store, &format!("{name}.attn"), width, heads, rng)?,
            norm_mlp: LayerNorm::new(store, &format!("{name}.norm_mlp"), width),
            mlp: Mlp::new(store, &format!("{name}.mlp"), width, width * mlp_ratio, rng),
        };
        // start at the content-identity point
        shrink(store, &block.attn.output, 1e-3);
        shrink(store, &block.mlp.fc2, 1e-3);
        Ok(block)
    }

    pub fn forward(&self, g: &mut Graph, content: Var, style: Var) -> Result<Var> {
        let q = self.norm_query.forward(g, content)?;
        let kv = self.norm_context.forward(g, style)?;
        let a = self.attn.forward(g, q, kv)?;
        let x = g.add(content, a)?;
        let h = self.norm_mlp.forward(g, x)?;
        let m = self.mlp.forward(g, h)?;
        g.add(x, m)
    }

    /// Zeroes the value and output projections and the MLP output layer,
    /// which turns the block into the identity on its content input.
    pub fn zero_residual_branches(&self, store: &mut ParamStore) {
        for layer in [&self.attn.value, &self.attn.output, &self.mlp.fc2] {
            shrink(store, layer, 0.0);
        }
    }
}

#[derive(Clone, Debug)]
pub struct StyleModel {
    pub cfg: BackboneConfig,
    pub content_encoder: Encoder,
    pub style_encoder: Encoder,
    pub fusion: Vec<CrossBlock>,
    pub decoder: Decoder,
}

impl StyleModel {
    pub const CONTENT_PREFIX: &'static str = "content_encoder";
    pub const STYLE_PREFIX: &'static str = "style_encoder";
    pub const FUSION_PREFIX: &'static str = "fusion";
    pub const DECODER_PREFIX: &'static str = "decoder";
    pub const DEFAULT_FUSION_DEPTH: usize = 2;

    pub fn new(store: &mut ParamStore, cfg: &BackboneConfig, fusion_depth: usize, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        let content_encoder = Encoder::new(store, Self::CONTENT_PREFIX, cfg, rng)?;
        let style_encoder = Encoder::new(store, Self::STYLE_PREFIX, cfg, rng)?;
        let fusion = (0..fusion_depth)
            .map(|i| {
                CrossBlock::new(
                    store,
                    &format!("{}.blocks.{i}", Self::FUSION_PREFIX),
                    cfg.hidden_size,
                    cfg.heads,
                    cfg.mlp_ratio,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let decoder = Decoder::new(store, Self::DECODER_PREFIX, cfg, rng)?;
        Ok(Self {
            cfg: cfg.clone(),
            content_encoder,
            style_encoder,
            fusion,
            decoder,
        })
    }

    pub fn init(cfg: &BackboneConfig, fusion_depth: usize, seed: u64) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let mut rng = SeededRng::new(seed);
        let model = Self::new(&mut store, cfg, fusion_depth, &mut rng)?;
        Ok((model, store))
    }

    pub fn fusion_depth(&self) -> usize {
        self.fusion.len()
    }

    /// Initializes both encoders and the decoder from pretrained
    /// masked-autoencoder weights. Fusion weights are left as they are.
    pub fn load_pretrained(&self, store: &mut ParamStore, pretrained: &ParamStore) -> Result<()> {
        let enc = format!("{}.", MaskedAutoencoder::ENCODER_PREFIX);
        let dec = format!("{}.", MaskedAutoencoder::DECODER_PREFIX);
        let n1 = store.copy_prefixed(pretrained, &enc, &format!("{}.", Self::CONTENT_PREFIX))?;
        let n2 = store.copy_prefixed(pretrained, &enc, &format!("{}.", Self::STYLE_PREFIX))?;
        let n3 = store.copy_prefixed(pretrained, &dec, &format!("{}.", Self::DECODER_PREFIX))?;
        if n1 == 0 || n2 == 0 || n3 == 0 {
            return Err(Error::Data("pretrained store lacks encoder or decoder weights".into()));
        }
        Ok(())
    }

    /// Style tokens for one or more reference patch matrices, averaged
    /// element-wise when there are several.
    pub fn style_tokens<'a>(&'a self, g: &mut Graph<'a>, styles: &[Var]) -> Result<Var> {
        let mut encoded = Vec::with_capacity(styles.len());
        for &s in styles {
            encoded.push(self.style_encoder.forward(g, s, None)?);
        }
        match encoded.len() {
            0 => Err(Error::EmptyInput),
            1 => Ok(encoded[0]),
            n => {
                let mut acc = encoded[0];
                for &e in &encoded[1..] {
                    acc = g.add(acc, e)?;
                }
                Ok(g.scale(acc, 1.0 / n as f64))
            }
        }
    }

    pub fn fuse(&self, g: &mut Graph, content: Var, style: Var) -> Result<Var> {
        let (cw, sw) = (g.shape(content).1, g.shape(style).1);
        if cw != self.cfg.hidden_size || sw != self.cfg.hidden_size {
            return Err(Error::shape(format!(
                "cross-attention expects width {}, got content {cw} and style {sw}",
                self.cfg.hidden_size
            )));
        }
        let mut x = content;
        for block in &self.fusion {
            x = block.forward(g, x, style)?;
        }
        Ok(x)
    }

    /// Predicted patch matrix (unclamped) for a content patch matrix and one
    /// or more style patch matrices.
    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, content: Var, styles: &[Var]) -> Result<Var> {
        let c = self.content_encoder.forward(g, content, None)?;
        let s = self.style_tokens(g, styles)?;
        let fused = self.fuse(g, c, s)?;
        let full = MaskSpec::none(self.cfg.patch_num());
        self.decoder.forward(g, fused, &full)
    }

    pub fn encode_content(&self, store: &ParamStore, image: &GlyphImage) -> Result<TokenSequence> {
        self.content_encoder.encode(store, image, None)
    }

    pub fn encode_style(&self, store: &ParamStore, image: &GlyphImage) -> Result<TokenSequence> {
        self.style_encoder.encode(store, image, None)
    }

    /// Element-wise mean of the style encodings of every reference.
    pub fn encode_style_multi(&self, store: &ParamStore, images: &[GlyphImage]) -> Result<TokenSequence> {
        if images.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut acc: Option<Matrix> = None;
        for img in images {
            let t = self.encode_style(store, img)?.into_matrix();
            match &mut acc {
                None => acc = Some(t),
                Some(a) => a.add_assign(&t),
            }
        }
        let mut mean = acc.expect("non-empty");
        mean.scale_assign(1.0 / images.len() as f64);
        TokenSequence::new(mean)
    }

    pub fn cross_attend(&self, store: &ParamStore, content: &TokenSequence, style: &TokenSequence) -> Result<TokenSequence> {
        let mut g = Graph::inference(store);
        let c = g.input(content.matrix().clone());
        let s = g.input(style.matrix().clone());
        let out = self.fuse(&mut g, c, s)?;
        TokenSequence::new(g.value(out).clone())
    }

    /// Raw (unclamped) patch predictions.
    pub fn predict_patches(&self, store: &ParamStore, content: &GlyphImage, styles: &[GlyphImage]) -> Result<Matrix> {
        let grid = self.cfg.grid();
        let mut g = Graph::inference(store);
        let c = g.input(grid.patchify(content)?);
        let mut s = Vec::with_capacity(styles.len());
        for img in styles {
            s.push(g.input(grid.patchify(img)?));
        }
        let out = self.forward(&mut g, c, &s)?;
        Ok(g.value(out).clone())
    }

    /// Full pipeline ending in a clamped glyph of the content's size.
    pub fn generate(&self, store: &ParamStore, content: &GlyphImage, styles: &[GlyphImage]) -> Result<GlyphImage> {
        let style_id = styles.first().map(|s| s.style_id.clone()).ok_or(Error::EmptyInput)?;
        let patches = self.predict_patches(store, content, styles)?;
        self.cfg.grid().unpatchify(&patches, content.charcode, &style_id)
    }
}
