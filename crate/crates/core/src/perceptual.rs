//! Frozen convolutional feature extractor with VGG19 topology and named
//! `reluB_I` activation taps.
//!
//! Two weight sources share one code path: pretrained VGG19 weights loaded
//! by the caller, or a seed-deterministic random network with the same
//! layer layout (narrower by `width_divisor`) for offline use.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::glyph::GlyphImage;
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::rng::SeededRng;
use crate::tensor::Matrix;

/// Convolutions per block and their output widths, VGG19 layout.
pub const VGG19_BLOCKS: [(usize, usize); 5] = [(2, 64), (2, 128), (4, 256), (4, 512), (4, 512)];

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Every tap name, in network order.
pub fn layer_names() -> Vec<String> {
    let mut names = Vec::new();
    for (b, (convs, _)) in VGG19_BLOCKS.iter().enumerate() {
        for i in 0..*convs {
            names.push(format!("relu{}_{}", b + 1, i + 1));
        }
    }
    names
}

/// Layers tapped by the perceptual losses.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PerceptualTaps {
    pub content_layers: Vec<String>,
    pub style_layers: Vec<String>,
}

impl Default for PerceptualTaps {
    fn default() -> Self {
        Self {
            content_layers: alloc::vec!["relu2_2".to_string()],
            style_layers: ["relu1_1", "relu2_1", "relu3_1", "relu4_1", "relu5_1"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

impl PerceptualTaps {
    pub fn validate(&self) -> Result<()> {
        let known = layer_names();
        for name in self.content_layers.iter().chain(&self.style_layers) {
            if !known.contains(name) {
                return Err(Error::InvalidConfig(format!("unknown extractor layer `{name}`")));
            }
        }
        if self.content_layers.is_empty() && self.style_layers.is_empty() {
            return Err(Error::InvalidConfig("no perceptual layers selected".into()));
        }
        Ok(())
    }
}

/// Activations of one tap: `channels x (height*width)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Matrix,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Matrix) -> Result<Self> {
        if data.shape() != (channels, height * width) {
            return Err(Error::shape(format!(
                "feature data {:?} for {channels}x{height}x{width}",
                data.shape()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.is_finite()
    }
}

/// A tapped activation on a graph.
#[derive(Clone, Copy, Debug)]
pub struct FeatureVar {
    pub var: Var,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug)]
struct ConvLayer {
    name: String,
    tap: String,
    /// `out x (in*9)`, rows in PyTorch `[out][in][ky][kx]` order.
    weight: Matrix,
    bias: Matrix,
    ends_block: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExtractorKind {
    Pretrained,
    Fallback { seed: u64, width_divisor: usize },
}

#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    kind: ExtractorKind,
    layers: Vec<ConvLayer>,
    scales: [f64; 3],
    shifts: [f64; 3],
    empty: ParamStore,
}

fn conv_names() -> Vec<(String, String, usize, bool)> {
    let mut out = Vec::new();
    for (b, (convs, width)) in VGG19_BLOCKS.iter().enumerate() {
        for i in 0..*convs {
            out.push((
                format!("conv{}_{}", b + 1, i + 1),
                format!("relu{}_{}", b + 1, i + 1),
                *width,
                i + 1 == *convs,
            ));
        }
    }
    out
}

impl FeatureExtractor {
    pub const DEFAULT_FALLBACK_SEED: u64 = 0x5EED_F00D;
    pub const DEFAULT_WIDTH_DIVISOR: usize = 8;

    /// Seed-deterministic random extractor (He-normal weights, zero bias).
    pub fn fallback(seed: u64, width_divisor: usize) -> Result<Self> {
        if width_divisor == 0 {
            return Err(Error::InvalidConfig("width divisor must be positive".into()));
        }
        let mut rng = SeededRng::new(seed);
        let mut layers = Vec::new();
        let mut cin = 3;
        for (name, tap, width, ends_block) in conv_names() {
            let cout = (width / width_divisor).max(1);
            let std = libm::sqrt(2.0 / (cin * 9) as f64);
            let weight = Matrix::from_fn(cout, cin * 9, |_, _| rng.normal() * std);
            layers.push(ConvLayer {
                name,
                tap,
                weight,
                bias: Matrix::zeros(cout, 1),
                ends_block,
            });
            cin = cout;
        }
        Ok(Self::assemble(ExtractorKind::Fallback { seed, width_divisor }, layers))
    }

    pub fn default_fallback() -> Self {
        Self::fallback(Self::DEFAULT_FALLBACK_SEED, Self::DEFAULT_WIDTH_DIVISOR).expect("valid defaults")
    }

    /// Pretrained weights looked up by `convB_I.weight` (`out x in*9`) and
    /// `convB_I.bias` (`out x 1` or `1 x out`).
    pub fn pretrained(mut lookup: impl FnMut(&str) -> Option<Matrix>) -> Result<Self> {
        let mut layers = Vec::new();
        let mut cin = 3;
        for (name, tap, width, ends_block) in conv_names() {
            let wname = format!("{name}.weight");
            let weight = lookup(&wname).ok_or_else(|| Error::MissingWeights(wname.clone()))?;
            if weight.shape() != (width, cin * 9) {
                return Err(Error::shape(format!(
                    "`{wname}` is {:?}, expected {}x{}",
                    weight.shape(),
                    width,
                    cin * 9
                )));
            }
            let bname = format!("{name}.bias");
            let bias = lookup(&bname).ok_or_else(|| Error::MissingWeights(bname.clone()))?;
            if bias.len() != width {
                return Err(Error::shape(format!("`{bname}` has {} values, expected {width}", bias.len())));
            }
            let bias = bias.reshape(width, 1)?;
            layers.push(ConvLayer {
                name,
                tap,
                weight,
                bias,
                ends_block,
            });
            cin = width;
        }
        Ok(Self::assemble(ExtractorKind::Pretrained, layers))
    }

    fn assemble(kind: ExtractorKind, layers: Vec<ConvLayer>) -> Self {
        let mut scales = [0.0; 3];
        let mut shifts = [0.0; 3];
        for c in 0..3 {
            scales[c] = 1.0 / IMAGENET_STD[c];
            shifts[c] = -IMAGENET_MEAN[c] / IMAGENET_STD[c];
        }
        Self {
            kind,
            layers,
            scales,
            shifts,
            empty: ParamStore::new(),
        }
    }

    pub fn kind(&self) -> &ExtractorKind {
        &self.kind
    }

    pub fn is_pretrained(&self) -> bool {
        self.kind == ExtractorKind::Pretrained
    }

    /// Output channels of a tap.
    pub fn channels_of(&self, tap: &str) -> Option<usize> {
        self.layers.iter().find(|l| l.tap == tap).map(|l| l.weight.rows())
    }

    /// Name/weight pairs, e.g. for serialization.
    pub fn named_weights(&self) -> Vec<(String, &Matrix, &Matrix)> {
        self.layers.iter().map(|l| (l.name.clone(), &l.weight, &l.bias)).collect()
    }

    /// Runs the network on a `1 x (size*size)` image node, stopping at the
    /// deepest requested tap.
    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, image: Var, size: usize, taps: &[String]) -> Result<BTreeMap<String, FeatureVar>> {
        for t in taps {
            if !self.layers.iter().any(|l| &l.tap == t) {
                return Err(Error::InvalidConfig(format!("unknown extractor layer `{t}`")));
            }
        }
        if g.shape(image) != (1, size * size) {
            return Err(Error::shape(format!("extractor input {:?} for size {size}", g.shape(image))));
        }
        let last = self
            .layers
            .iter()
            .rposition(|l| taps.contains(&l.tap))
            .ok_or(Error::EmptyInput)?;
        let mut x = g.channel_affine(image, &self.scales, &self.shifts)?;
        let (mut h, mut w) = (size, size);
        let mut out = BTreeMap::new();
        for (i, layer) in self.layers[..=last].iter().enumerate() {
            let cols = g.im2col3(x, h, w)?;
            let weight = g.constant(&layer.weight);
            let y = g.matmul(weight, cols)?;
            let bias = g.constant(&layer.bias);
            let y = g.add_col(y, bias)?;
            x = g.relu(y);
            if taps.contains(&layer.tap) {
                out.insert(
                    layer.tap.clone(),
                    FeatureVar {
                        var: x,
                        channels: layer.weight.rows(),
                        height: h,
                        width: w,
                    },
                );
            }
            if layer.ends_block && i < last {
                let (p, nh, nw) = g.max_pool2(x, h, w)?;
                x = p;
                h = nh;
                w = nw;
            }
        }
        Ok(out)
    }

    /// Feature maps of one image at the requested taps.
    pub fn extract(&self, image: &GlyphImage, taps: &[String]) -> Result<BTreeMap<String, FeatureMap>> {
        let mut g = Graph::inference(&self.empty);
        let x = g.input(image.to_row());
        let vars = self.forward(&mut g, x, image.size(), taps)?;
        vars.into_iter()
            .map(|(k, f)| Ok((k, FeatureMap::new(f.channels, f.height, f.width, g.value(f.var).clone())?)))
            .collect()
    }

    /// Global-average-pooled activations of `tap`.
    pub fn pooled(&self, image: &GlyphImage, tap: &str) -> Result<Vec<f64>> {
        let maps = self.extract(image, &[tap.to_string()])?;
        let f = &maps[tap];
        let n = (f.height * f.width) as f64;
        Ok((0..f.channels).map(|c| f.data.row(c).iter().sum::<f64>() / n).collect())
    }

    /// Deepest tap, used for pooled statistics.
    pub fn last_tap(&self) -> &str {
        &self.layers.last().expect("layers").tap
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glyph::Charcode;

    fn img(size: usize, f: impl Fn(usize, usize) -> f64) -> GlyphImage {
        let px = (0..size * size).map(|i| f(i / size, i % size)).collect();
        GlyphImage::new(size, px, Charcode(1), "s").unwrap()
    }

    #[test]
    fn one_tap_one_map() {
        let ex = FeatureExtractor::default_fallback();
        let maps = ex.extract(&img(16, |y, x| ((y + x) % 2) as f64), &["relu2_2".to_string()]).unwrap();
        assert_eq!(maps.len(), 1);
        let f = &maps["relu2_2"];
        assert_eq!((f.channels, f.height, f.width), (16, 8, 8));
    }

    #[test]
    fn deep_taps_survive_tiny_inputs() {
        let ex = FeatureExtractor::default_fallback();
        let taps = PerceptualTaps::default();
        let maps = ex.extract(&img(8, |y, _| y as f64 / 8.0), &taps.style_layers).unwrap();
        assert_eq!(maps["relu5_1"].height, 1);
        assert!(maps.values().all(|m| m.is_finite()));
    }

    #[test]
    fn unknown_layer_rejected() {
        let taps = PerceptualTaps {
            content_layers: alloc::vec!["relu9_9".to_string()],
            style_layers: Vec::new(),
        };
        assert!(taps.validate().is_err());
    }

    #[test]
    fn pretrained_requires_every_layer() {
        let err = FeatureExtractor::pretrained(|_| None).unwrap_err();
        assert!(matches!(err, Error::MissingWeights(_)));
    }
}
