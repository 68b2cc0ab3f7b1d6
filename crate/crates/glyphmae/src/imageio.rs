//! 8-bit grayscale PNG encoding and decoding of glyph images.

use std::io::Cursor;
use std::path::Path;

use anyhow::{bail, Context, Result};
use glyphmae_core::{Charcode, GlyphImage};

pub fn encode_png(image: &GlyphImage) -> Result<Vec<u8>> {
    let n = image.size() as u32;
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, n, n);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header()?;
        let data: Vec<u8> = image.pixels().iter().map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8).collect();
        w.write_image_data(&data)?;
    }
    Ok(out)
}

pub fn write_png(path: &Path, image: &GlyphImage) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, encode_png(image)?).with_context(|| format!("writing {}", path.display()))
}

/// Decoded luminance in [0, 1], row-major, with its dimensions.
pub struct GrayRaster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

pub fn decode_gray(bytes: &[u8]) -> Result<GrayRaster> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().context("not a PNG image")?;
    let mut buf = vec![0; reader.output_buffer_size().context("PNG too large")?];
    let info = reader.next_frame(&mut buf)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let channels = info.color_type.samples();
    let mut pixels = Vec::with_capacity(w * h);
    for px in data.chunks(channels).take(w * h) {
        let v = match channels {
            1 => px[0] as f64 / 255.0,
            // alpha composited over white
            2 => {
                let a = px[1] as f64 / 255.0;
                a * px[0] as f64 / 255.0 + (1.0 - a)
            }
            3 => (0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64) / 255.0,
            4 => {
                let a = px[3] as f64 / 255.0;
                let l = (0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64) / 255.0;
                a * l + (1.0 - a)
            }
            _ => bail!("unsupported PNG layout"),
        };
        pixels.push(v);
    }
    if pixels.len() != w * h {
        bail!("truncated PNG data");
    }
    Ok(GrayRaster { width: w, height: h, pixels })
}

/// Area-average resampling onto a `size x size` grid.
pub fn resample(r: &GrayRaster, size: usize) -> Vec<f64> {
    if r.width == size && r.height == size {
        return r.pixels.clone();
    }
    let (sx, sy) = (r.width as f64 / size as f64, r.height as f64 / size as f64);
    let mut out = vec![0.0; size * size];
    for oy in 0..size {
        let (y0, y1) = (oy as f64 * sy, (oy + 1) as f64 * sy);
        for ox in 0..size {
            let (x0, x1) = (ox as f64 * sx, (ox + 1) as f64 * sx);
            let (mut acc, mut area) = (0.0, 0.0);
            let mut y = y0.floor() as usize;
            while (y as f64) < y1 && y < r.height {
                let wy = (y1.min(y as f64 + 1.0) - y0.max(y as f64)).max(0.0);
                let mut x = x0.floor() as usize;
                while (x as f64) < x1 && x < r.width {
                    let wx = (x1.min(x as f64 + 1.0) - x0.max(x as f64)).max(0.0);
                    acc += wx * wy * r.pixels[y * r.width + x];
                    area += wx * wy;
                    x += 1;
                }
                y += 1;
            }
            out[oy * size + ox] = if area > 0.0 { acc / area } else { 1.0 };
        }
    }
    out
}

/// Decodes a PNG into a glyph of `size`, resampling if needed.
pub fn decode_glyph(bytes: &[u8], size: usize, charcode: Charcode, style_id: &str) -> Result<GlyphImage> {
    let r = decode_gray(bytes)?;
    if r.width == 0 || r.height == 0 {
        bail!("empty PNG image");
    }
    Ok(GlyphImage::from_clamped(size, &resample(&r, size), charcode, style_id)?)
}

pub fn read_glyph(path: &Path, size: usize, charcode: Charcode, style_id: &str) -> Result<GlyphImage> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_glyph(&bytes, size, charcode, style_id).with_context(|| format!("decoding {}", path.display()))
}
