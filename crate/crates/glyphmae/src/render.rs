//! Rasterizes font glyphs into fixed-size grayscale glyph images.

use std::path::Path;

use ab_glyph::{point, Font, FontVec, Glyph, PxScale};
use glyphmae_core::{Charcode, GlyphImage};

/// Fraction of the canvas left empty on each side.
pub const MARGIN: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("font `{0}` cannot be parsed")]
    BadFont(String),
    #[error("font `{font}` has no glyph for {charcode}")]
    MissingGlyph { font: String, charcode: Charcode },
    #[error("image size must be positive")]
    ZeroSize,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A parsed font together with the style id it renders under.
pub struct LoadedFont {
    pub style_id: String,
    font: FontVec,
}

impl LoadedFont {
    pub fn from_bytes(style_id: impl Into<String>, bytes: Vec<u8>) -> Result<Self, RenderError> {
        let style_id = style_id.into();
        let font = FontVec::try_from_vec(bytes).map_err(|_| RenderError::BadFont(style_id.clone()))?;
        Ok(Self { style_id, font })
    }

    /// Loads a font file; the style id is the file stem.
    pub fn open(path: &Path) -> Result<Self, RenderError> {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("font").to_string();
        Self::from_bytes(stem, std::fs::read(path)?)
    }

    pub fn has_glyph(&self, c: char) -> bool {
        self.font.glyph_id(c).0 != 0
    }

    /// Code points the font maps to a real glyph.
    pub fn charset(&self) -> Vec<char> {
        let mut v: Vec<char> = self.font.codepoint_ids().filter(|(id, _)| id.0 != 0).map(|(_, c)| c).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Renders `c` centered and scaled to fit inside the margins, dark ink on
    /// a white background, contrast-normalized so the darkest pixel is 0.
    pub fn render(&self, c: char, image_size: usize) -> Result<GlyphImage, RenderError> {
        if image_size == 0 {
            return Err(RenderError::ZeroSize);
        }
        let charcode = Charcode::from_char(c);
        let id = self.font.glyph_id(c);
        if id.0 == 0 {
            return Err(RenderError::MissingGlyph {
                font: self.style_id.clone(),
                charcode,
            });
        }
        let n = image_size;
        let blank = || GlyphImage::blank(n, charcode, self.style_id.clone());
        let Some(outline) = self.font.outline(id) else {
            return Ok(blank());
        };
        let b = outline.bounds;
        let (w, h) = ((b.max.x - b.min.x).abs() as f64, (b.max.y - b.min.y).abs() as f64);
        if w <= 0.0 && h <= 0.0 {
            return Ok(blank());
        }
        let avail = n as f64 * (1.0 - 2.0 * MARGIN);
        let s = avail / w.max(h);
        let cx = (b.min.x + b.max.x) as f64 / 2.0;
        let cy = (b.min.y + b.max.y) as f64 / 2.0;
        let half = n as f64 / 2.0;
        let position = point((half - s * cx) as f32, (half + s * cy) as f32);
        let glyph = Glyph {
            id,
            scale: PxScale::from((s * self.font.height_unscaled() as f64) as f32),
            position,
        };
        let Some(outlined) = self.font.outline_glyph(glyph) else {
            return Ok(blank());
        };
        let origin = outlined.px_bounds().min;
        let mut coverage = vec![0.0f64; n * n];
        outlined.draw(|x, y, c| {
            let px = origin.x as i64 + x as i64;
            let py = origin.y as i64 + y as i64;
            if (0..n as i64).contains(&px) && (0..n as i64).contains(&py) {
                let cell = &mut coverage[py as usize * n + px as usize];
                *cell = (*cell + c as f64).min(1.0);
            }
        });
        let peak = coverage.iter().cloned().fold(0.0, f64::max);
        if peak <= 0.0 {
            return Ok(blank());
        }
        let pixels = coverage.iter().map(|c| 1.0 - c / peak).collect();
        Ok(GlyphImage::new(n, pixels, charcode, self.style_id.clone()).expect("pixels in range"))
    }
}

pub fn render_glyph(font_file: &Path, c: char, image_size: usize) -> Result<GlyphImage, RenderError> {
    LoadedFont::open(font_file)?.render(c, image_size)
}
