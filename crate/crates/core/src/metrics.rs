//! Image-quality metrics: pixel errors, SSIM, LPIPS-style perceptual
//! distance and Fréchet distance over pooled extractor features.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::glyph::GlyphImage;
use crate::linalg::{sqrt_psd, symmetric_eigen};
use crate::perceptual::{FeatureExtractor, FeatureMap};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelMetrics {
    pub l1: f64,
    pub mse: f64,
    pub rmse: f64,
}

pub fn pixel_metrics(pred: &GlyphImage, gt: &GlyphImage) -> Result<PixelMetrics> {
    pred.same_shape(gt)?;
    let n = pred.pixels().len() as f64;
    let (mut l1, mut sq) = (0.0, 0.0);
    for (a, b) in pred.pixels().iter().zip(gt.pixels()) {
        let d = a - b;
        l1 += libm::fabs(d);
        sq += d * d;
    }
    let mse = sq / n;
    Ok(PixelMetrics {
        l1: l1 / n,
        mse,
        rmse: libm::sqrt(mse),
    })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(len: usize, sigma: f64) -> Vec<f64> {
    let c = (len as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..len)
        .map(|i| {
            let d = i as f64 - c;
            libm::exp(-d * d / (2.0 * sigma * sigma))
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `n x n` image.
fn filter_valid(img: &[f64], n: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let m = n + 1 - k;
    let mut rows = vec![0.0; n * m];
    for y in 0..n {
        for x in 0..m {
            rows[y * m + x] = taps.iter().enumerate().map(|(i, t)| t * img[y * n + x + i]).sum();
        }
    }
    let mut out = vec![0.0; m * m];
    for y in 0..m {
        for x in 0..m {
            out[y * m + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * m + x]).sum();
        }
    }
    out
}

/// Mean local SSIM over every window position that fits inside the image.
pub fn ssim(pred: &GlyphImage, gt: &GlyphImage) -> Result<f64> {
    pred.same_shape(gt)?;
    let n = pred.size();
    if n < SSIM_WINDOW {
        return Err(Error::shape(alloc::format!(
            "{n}x{n} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let x = pred.pixels();
    let y = gt.pixels();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mx = filter_valid(x, n, &taps);
    let my = filter_valid(y, n, &taps);
    let sxx = filter_valid(&xx, n, &taps);
    let syy = filter_valid(&yy, n, &taps);
    let sxy = filter_valid(&xy, n, &taps);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cov = sxy[i] - ux * uy;
        total += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
    }
    Ok(total / mx.len() as f64)
}

pub fn lpips_taps() -> Vec<String> {
    ["relu1_2", "relu2_2", "relu3_3", "relu4_3", "relu5_3"].iter().map(|s| s.to_string()).collect()
}

fn unit_channels(f: &FeatureMap) -> Matrix {
    let (c, hw) = f.data.shape();
    let mut out = f.data.clone();
    for p in 0..hw {
        let norm = libm::sqrt((0..c).map(|ch| f.data.get(ch, p) * f.data.get(ch, p)).sum::<f64>());
        let inv = 1.0 / (norm + 1e-10);
        for ch in 0..c {
            out.set(ch, p, f.data.get(ch, p) * inv);
        }
    }
    out
}

/// Distance between two sets of feature maps: channel vectors are
/// unit-normalized per position, squared differences summed over channels,
/// averaged over positions, then averaged over layers.
pub fn lpips_from_features(a: &[FeatureMap], b: &[FeatureMap]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape("lpips needs matching, non-empty layer lists"));
    }
    let mut total = 0.0;
    for (fa, fb) in a.iter().zip(b) {
        if fa.data.shape() != fb.data.shape() {
            return Err(Error::shape("lpips layer shapes differ"));
        }
        let (na, nb) = (unit_channels(fa), unit_channels(fb));
        let hw = fa.data.cols() as f64;
        let sq: f64 = na.as_slice().iter().zip(nb.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum();
        total += sq / hw;
    }
    Ok(total / a.len() as f64)
}

pub fn lpips(pred: &GlyphImage, gt: &GlyphImage, extractor: &FeatureExtractor) -> Result<f64> {
    pred.same_shape(gt)?;
    let taps = lpips_taps();
    let fa = extractor.extract(pred, &taps)?;
    let fb = extractor.extract(gt, &taps)?;
    let a: Vec<FeatureMap> = taps.iter().map(|t| fa[t].clone()).collect();
    let b: Vec<FeatureMap> = taps.iter().map(|t| fb[t].clone()).collect();
    lpips_from_features(&a, &b)
}

/// Mean vector and unbiased covariance of a set of feature rows.
pub fn mean_cov(features: &[Vec<f64>]) -> Result<(Vec<f64>, Matrix)> {
    if features.len() < 2 {
        return Err(Error::DegenerateSet(alloc::format!(
            "{} feature vectors, at least 2 needed",
            features.len()
        )));
    }
    let d = features[0].len();
    if d == 0 || features.iter().any(|f| f.len() != d) {
        return Err(Error::shape("feature vectors must share a non-zero length"));
    }
    let n = features.len() as f64;
    let mut mean = vec![0.0; d];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v / n;
        }
    }
    let centered = Matrix::from_fn(features.len(), d, |i, j| features[i][j] - mean[j]);
    let mut cov = Matrix::matmul(&centered, true, &centered, false)?;
    cov.scale_assign(1.0 / (n - 1.0));
    Ok((mean, cov))
}

/// Fréchet distance between Gaussians fitted to two feature sets.
/// `Tr((Σa Σb)^{1/2})` is computed as `Tr((Σa^{1/2} Σb Σa^{1/2})^{1/2})`,
/// which has the same eigenvalues and stays symmetric.
pub fn fid_from_features(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (ma, ca) = mean_cov(a)?;
    let (mb, cb) = mean_cov(b)?;
    if ma.len() != mb.len() {
        return Err(Error::shape("feature sets have different dimensions"));
    }
    let diff: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y) * (x - y)).sum();
    let ra = sqrt_psd(&ca);
    let inner = Matrix::matmul(&Matrix::matmul(&ra, false, &cb, false)?, false, &ra, false)?;
    let sym = Matrix::from_fn(inner.rows(), inner.cols(), |i, j| 0.5 * (inner.get(i, j) + inner.get(j, i)));
    let (vals, _) = symmetric_eigen(&sym);
    let tr_sqrt: f64 = vals.iter().map(|v| libm::sqrt(v.max(0.0))).sum();
    let tr_a: f64 = (0..ca.rows()).map(|i| ca.get(i, i)).sum();
    let tr_b: f64 = (0..cb.rows()).map(|i| cb.get(i, i)).sum();
    // round-off can push identical sets a hair below zero
    Ok((diff + tr_a + tr_b - 2.0 * tr_sqrt).max(0.0))
}

pub fn pooled_features(images: &[GlyphImage], extractor: &FeatureExtractor) -> Result<Vec<Vec<f64>>> {
    let tap = extractor.last_tap().to_string();
    images.iter().map(|img| extractor.pooled(img, &tap)).collect()
}

pub fn fid(set_a: &[GlyphImage], set_b: &[GlyphImage], extractor: &FeatureExtractor) -> Result<f64> {
    if set_a.len() < 2 || set_b.len() < 2 {
        return Err(Error::DegenerateSet("fid needs at least 2 images per set".into()));
    }
    fid_from_features(&pooled_features(set_a, extractor)?, &pooled_features(set_b, extractor)?)
}
