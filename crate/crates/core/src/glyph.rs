//! Glyph rasters and the patch grid that the transformer consumes.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// A Unicode scalar value, or the made-up sentinel for user-drawn input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Charcode(pub u32);

impl Charcode {
    /// Marks glyphs that do not correspond to any Unicode character.
    pub const MADE_UP: Charcode = Charcode(u32::MAX);

    pub fn from_char(c: char) -> Self {
        Charcode(c as u32)
    }

    pub fn is_made_up(self) -> bool {
        self == Self::MADE_UP
    }

    pub fn to_char(self) -> Option<char> {
        char::from_u32(self.0)
    }

    /// Lowercase hex without prefix, as used in file names and manifests.
    pub fn hex(self) -> String {
        alloc::format!("{:x}", self.0)
    }

    pub fn parse_hex(s: &str) -> Option<Self> {
        let s = s.trim();
        let s = s
            .strip_prefix("U+")
            .or_else(|| s.strip_prefix("u+"))
            .or_else(|| s.strip_prefix("0x"))
            .unwrap_or(s);
        u32::from_str_radix(s, 16).ok().map(Charcode)
    }
}

impl fmt::Display for Charcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_made_up() {
            f.write_str("MADE_UP")
        } else {
            write!(f, "U+{:04X}", self.0)
        }
    }
}

/// Square grayscale raster, 1.0 = background, 0.0 = ink.
#[derive(Clone, Debug, PartialEq)]
pub struct GlyphImage {
    size: usize,
    pixels: Vec<f64>,
    pub charcode: Charcode,
    pub style_id: String,
}

impl GlyphImage {
    pub fn new(size: usize, pixels: Vec<f64>, charcode: Charcode, style_id: impl Into<String>) -> Result<Self> {
        if size == 0 || pixels.len() != size * size {
            return Err(Error::shape(alloc::format!(
                "{} pixels do not form a {size}x{size} glyph",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::shape(alloc::format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            size,
            pixels,
            charcode,
            style_id: style_id.into(),
        })
    }

    /// All-background image.
    pub fn blank(size: usize, charcode: Charcode, style_id: impl Into<String>) -> Self {
        Self {
            size,
            pixels: alloc::vec![1.0; size * size],
            charcode,
            style_id: style_id.into(),
        }
    }

    /// Builds an image from arbitrary reals, clamping into [0, 1].
    pub fn from_clamped(size: usize, values: &[f64], charcode: Charcode, style_id: impl Into<String>) -> Result<Self> {
        let pixels = values
            .iter()
            .map(|v| if v.is_nan() { 1.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Self::new(size, pixels, charcode, style_id)
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.size + x]
    }

    /// Pixels as a `1 x (size*size)` row.
    pub fn to_row(&self) -> Matrix {
        Matrix::from_vec(1, self.pixels.len(), self.pixels.clone()).expect("square buffer")
    }

    pub fn ink_pixels(&self, threshold: f64) -> usize {
        self.pixels.iter().filter(|p| **p < threshold).count()
    }

    pub fn same_shape(&self, other: &GlyphImage) -> Result<()> {
        if self.size != other.size {
            return Err(Error::shape(alloc::format!(
                "image sizes differ: {} vs {}",
                self.size,
                other.size
            )));
        }
        Ok(())
    }
}

/// Patch-grid geometry for a square image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
}

impl PatchGrid {
    pub fn new(image_size: usize, patch_size: usize, channels: usize) -> Result<Self> {
        if patch_size == 0 || image_size == 0 || image_size % patch_size != 0 {
            return Err(Error::shape(alloc::format!(
                "image size {image_size} is not divisible by patch size {patch_size}"
            )));
        }
        if channels == 0 {
            return Err(Error::shape("channel count must be positive"));
        }
        Ok(Self {
            image_size,
            patch_size,
            channels,
        })
    }

    pub fn per_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn patch_num(&self) -> usize {
        self.per_side() * self.per_side()
    }

    /// Values per patch row: `patch_size^2 * channels`.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    /// For each element of the patch matrix, the pixel it reads from.
    /// Channels are interleaved innermost, so every channel copies the same
    /// grayscale value.
    pub fn patch_pixel_index(&self) -> Vec<usize> {
        let (p, side, ch) = (self.patch_size, self.per_side(), self.channels);
        let mut idx = Vec::with_capacity(self.patch_num() * self.patch_dim());
        for pr in 0..side {
            for pc in 0..side {
                for y in 0..p {
                    for x in 0..p {
                        let pix = (pr * p + y) * self.image_size + pc * p + x;
                        for _ in 0..ch {
                            idx.push(pix);
                        }
                    }
                }
            }
        }
        idx
    }

    /// Inverse of the single-channel patch layout: for each pixel, its
    /// position in the flattened patch matrix.
    pub fn pixel_patch_index(&self) -> Vec<usize> {
        let single = PatchGrid {
            channels: 1,
            ..*self
        };
        let fwd = single.patch_pixel_index();
        let mut inv = alloc::vec![0; fwd.len()];
        for (k, &pix) in fwd.iter().enumerate() {
            inv[pix] = k;
        }
        inv
    }

    fn check(&self, image: &GlyphImage) -> Result<()> {
        if image.size() != self.image_size {
            return Err(Error::shape(alloc::format!(
                "image is {0}x{0}, expected {1}x{1}",
                image.size(),
                self.image_size
            )));
        }
        Ok(())
    }

    /// Row `k` is the row-major flattening of the `k`-th patch in raster order.
    pub fn patchify(&self, image: &GlyphImage) -> Result<Matrix> {
        self.check(image)?;
        let src = image.pixels();
        let data = self.patch_pixel_index().into_iter().map(|i| src[i]).collect();
        Matrix::from_vec(self.patch_num(), self.patch_dim(), data)
    }

    /// Reassembles a raw pixel buffer (row-major) from a patch matrix,
    /// averaging channels. Values are not clamped.
    pub fn unpatchify_raw(&self, patches: &Matrix) -> Result<Vec<f64>> {
        if patches.shape() != (self.patch_num(), self.patch_dim()) {
            return Err(Error::shape(alloc::format!(
                "patch matrix {:?}, expected {}x{}",
                patches.shape(),
                self.patch_num(),
                self.patch_dim()
            )));
        }
        let ch = self.channels;
        let src = patches.as_slice();
        let out = self
            .pixel_patch_index()
            .into_iter()
            .map(|k| (0..ch).map(|c| src[k * ch + c]).sum::<f64>() / ch as f64)
            .collect();
        Ok(out)
    }

    /// Exact inverse of [`PatchGrid::patchify`] for in-range values; out of
    /// range values are clamped.
    pub fn unpatchify(&self, patches: &Matrix, charcode: Charcode, style_id: &str) -> Result<GlyphImage> {
        let raw = self.unpatchify_raw(patches)?;
        GlyphImage::from_clamped(self.image_size, &raw, charcode, style_id)
    }
}

/// Convenience wrapper: single-channel patchify.
pub fn patchify(image: &GlyphImage, patch_size: usize) -> Result<Matrix> {
    PatchGrid::new(image.size(), patch_size, 1)?.patchify(image)
}

/// Convenience wrapper: single-channel unpatchify.
pub fn unpatchify(patches: &Matrix, image_size: usize, patch_size: usize) -> Result<GlyphImage> {
    PatchGrid::new(image_size, patch_size, 1)?.unpatchify(patches, Charcode::MADE_UP, "")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_image_patchifies_to_zero_rows() {
        let img = GlyphImage::new(64, alloc::vec![0.0; 4096], Charcode(65), "s").unwrap();
        let p = patchify(&img, 8).unwrap();
        assert_eq!(p.shape(), (64, 64));
        assert!(p.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn patch_count_arithmetic() {
        let img = GlyphImage::blank(32, Charcode(65), "s");
        assert_eq!(patchify(&img, 16).unwrap().shape(), (4, 256));
    }

    #[test]
    fn patch_rows_are_raster_ordered() {
        let px: Vec<f64> = (0..16).map(|i| i as f64 / 15.0).collect();
        let img = GlyphImage::new(4, px.clone(), Charcode(1), "s").unwrap();
        let p = patchify(&img, 2).unwrap();
        // second patch covers columns 2..4 of rows 0..2
        assert_eq!(p.row(1), &[px[2], px[3], px[6], px[7]]);
        assert_eq!(p.row(2), &[px[8], px[9], px[12], px[13]]);
    }

    #[test]
    fn non_divisible_sizes_fail() {
        let img = GlyphImage::blank(30, Charcode(1), "s");
        assert!(matches!(patchify(&img, 8), Err(Error::Shape(_))));
    }

    #[test]
    fn out_of_range_pixels_rejected() {
        assert!(GlyphImage::new(2, alloc::vec![0.0, 1.5, 0.0, 0.0], Charcode(1), "s").is_err());
    }

    #[test]
    fn multichannel_roundtrip_averages_back() {
        let px: Vec<f64> = (0..64).map(|i| (i % 7) as f64 / 7.0).collect();
        let img = GlyphImage::new(8, px, Charcode(1), "s").unwrap();
        let grid = PatchGrid::new(8, 4, 3).unwrap();
        let p = grid.patchify(&img).unwrap();
        assert_eq!(p.shape(), (4, 48));
        let back = grid.unpatchify(&p, img.charcode, "s").unwrap();
        assert_eq!(back.pixels(), img.pixels());
    }

    #[test]
    fn hex_roundtrip() {
        let c = Charcode(0x6c34);
        assert_eq!(c.hex(), "6c34");
        assert_eq!(Charcode::parse_hex("U+6C34"), Some(c));
        assert_eq!(Charcode::parse_hex("6c34"), Some(c));
    }
}
