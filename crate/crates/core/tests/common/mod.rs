#![allow(dead_code)]

use glyphmae_core::glyph::Charcode;
use glyphmae_core::perceptual::FeatureExtractor;
use glyphmae_core::{GlyphImage, SeededRng};

pub fn random_image(rng: &mut SeededRng, size: usize) -> GlyphImage {
    let px = (0..size * size).map(|_| rng.unit()).collect();
    GlyphImage::new(size, px, Charcode(0x4e00), "rand").unwrap()
}

/// Mostly white with a few dark strokes, closer to real glyphs.
pub fn stroke_image(rng: &mut SeededRng, size: usize) -> GlyphImage {
    let mut px = vec![1.0; size * size];
    for _ in 0..3 {
        let horizontal = rng.bernoulli(0.5);
        let at = rng.below(size);
        let (from, to) = (rng.below(size / 2), size / 2 + rng.below(size / 2));
        for t in from..to {
            let (y, x) = if horizontal { (at, t) } else { (t, at) };
            px[y * size + x] = rng.uniform(0.0, 0.3);
        }
    }
    GlyphImage::new(size, px, Charcode(0x4e01), "stroke").unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

const MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Activations as `[channel][y][x]`.
pub type Act = Vec<Vec<Vec<f64>>>;

/// Plain nested-loop VGG forward used as the reference for anything built
/// on the extractor. Returns every tap, keyed in network order.
pub fn naive_vgg(ex: &FeatureExtractor, image: &GlyphImage) -> Vec<(String, Act)> {
    let n = image.size();
    let mut x: Act = (0..3)
        .map(|c| (0..n).map(|y| (0..n).map(|xx| (image.get(y, xx) - MEAN[c]) / STD[c]).collect()).collect())
        .collect();
    let weights = ex.named_weights();
    let blocks = [2usize, 2, 4, 4, 4];
    let mut out = Vec::new();
    let mut k = 0;
    for (b, &convs) in blocks.iter().enumerate() {
        for i in 0..convs {
            let (_, w, bias) = &weights[k];
            k += 1;
            let (h, wd) = (x[0].len(), x[0][0].len());
            let cin = x.len();
            let mut y = vec![vec![vec![0.0; wd]; h]; w.rows()];
            for (o, plane) in y.iter_mut().enumerate() {
                for yy in 0..h {
                    for xx in 0..wd {
                        let mut s = bias.get(o, 0);
                        for c in 0..cin {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let sy = yy as isize + ky as isize - 1;
                                    let sx = xx as isize + kx as isize - 1;
                                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                                        s += w.get(o, c * 9 + ky * 3 + kx) * x[c][sy as usize][sx as usize];
                                    }
                                }
                            }
                        }
                        plane[yy][xx] = s.max(0.0);
                    }
                }
            }
            out.push((format!("relu{}_{}", b + 1, i + 1), y.clone()));
            x = y;
        }
        if b < blocks.len() - 1 {
            // 2x2 max pool; odd edges keep a clipped window
            let (h, wd) = (x[0].len(), x[0][0].len());
            let (oh, ow) = (h.div_ceil(2), wd.div_ceil(2));
            x = x
                .iter()
                .map(|plane| {
                    (0..oh)
                        .map(|oy| {
                            (0..ow)
                                .map(|ox| {
                                    let mut m = f64::NEG_INFINITY;
                                    for yy in 2 * oy..(2 * oy + 2).min(h) {
                                        for xx in 2 * ox..(2 * ox + 2).min(wd) {
                                            m = m.max(plane[yy][xx]);
                                        }
                                    }
                                    m
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect();
        }
    }
    out
}

pub fn tap<'a>(acts: &'a [(String, Act)], name: &str) -> &'a Act {
    &acts.iter().find(|(n, _)| n == name).unwrap().1
}

pub fn naive_gram(f: &Act) -> Vec<Vec<f64>> {
    let c = f.len();
    let (h, w) = (f[0].len(), f[0][0].len());
    let norm = (c * h * w) as f64;
    let mut g = vec![vec![0.0; c]; c];
    for i in 0..c {
        for j in 0..c {
            let mut s = 0.0;
            for y in 0..h {
                for x in 0..w {
                    s += f[i][y][x] * f[j][y][x];
                }
            }
            g[i][j] = s / norm;
        }
    }
    g
}

/// Registers public check functions as tests.
#[allow(unused_macros)]
macro_rules! run_as_tests {
    ($($name:ident),* $(,)?) => {
        mod as_tests {
            $(
                #[test]
                fn $name() {
                    super::$name()
                }
            )*
        }
    };
}
