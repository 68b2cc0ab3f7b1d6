//! Procedural TrueType fonts.
//!
//! Glyphs are built from straight strokes: CJK-range characters get a left
//! radical (one of six shapes, chosen by code point) plus a hashed right-hand
//! component, everything else gets a hashed stroke set. Per-font style
//! parameters change weight, slant, contrast, serifs and width, so several
//! generated fonts render as visibly different styles of the same characters.

use std::io;
use std::path::Path;

pub const UNITS_PER_EM: u16 = 1000;
const ASCENDER: i16 = 800;
const DESCENDER: i16 = -200;

/// Closed contour in font units, y up.
pub type Contour = Vec<(i32, i32)>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StyleParams {
    /// Stroke half-width as a fraction of the design cell.
    pub weight: f64,
    pub slant: f64,
    /// 0 keeps every stroke at full weight; 1 makes horizontals hairlines.
    pub contrast: f64,
    /// Serif half-length as a fraction of the cell, 0 for sans.
    pub serif: f64,
    /// Horizontal compression of the design cell.
    pub squash: f64,
}

impl Default for StyleParams {
    fn default() -> Self {
        Self {
            weight: 0.035,
            slant: 0.0,
            contrast: 0.0,
            serif: 0.0,
            squash: 1.0,
        }
    }
}

impl StyleParams {
    /// Spread of styles indexed by `seed`.
    pub fn from_seed(seed: u64) -> Self {
        let mut h = SplitMix(seed ^ 0xA5A5_5A5A_1234_5678);
        Self {
            weight: 0.02 + 0.045 * h.unit(),
            slant: -0.15 + 0.3 * h.unit(),
            contrast: 0.7 * h.unit(),
            serif: if h.unit() < 0.5 { 0.0 } else { 0.02 + 0.03 * h.unit() },
            squash: 0.78 + 0.22 * h.unit(),
        }
    }
}

struct SplitMix(u64);

impl SplitMix {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    fn unit(&mut self) -> f64 {
        (self.next() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn pick(&mut self, n: usize) -> usize {
        (self.next() % n as u64) as usize
    }
}

type Stroke = ((f64, f64), (f64, f64));

pub const RADICAL_COUNT: u32 = 6;

fn is_cjk(c: char) -> bool {
    matches!(c as u32, 0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF)
}

/// Radical index of a CJK-range character, `None` for single-component ones.
pub fn radical_of(c: char) -> Option<u32> {
    let cp = c as u32;
    (is_cjk(c) && cp % 7 != 6).then_some(cp % RADICAL_COUNT)
}

fn radical(kind: u32) -> Vec<Stroke> {
    match kind {
        // three dots and a rising tick
        0 => vec![
            ((0.10, 0.88), (0.20, 0.80)),
            ((0.07, 0.62), (0.18, 0.54)),
            ((0.06, 0.14), (0.24, 0.38)),
        ],
        1 => vec![((0.30, 0.95), (0.08, 0.55)), ((0.20, 0.72), (0.20, 0.05))],
        2 => vec![
            ((0.05, 0.70), (0.35, 0.70)),
            ((0.20, 0.95), (0.20, 0.05)),
            ((0.20, 0.65), (0.05, 0.30)),
            ((0.20, 0.60), (0.33, 0.42)),
        ],
        3 => vec![
            ((0.07, 0.65), (0.33, 0.65)),
            ((0.07, 0.65), (0.07, 0.30)),
            ((0.33, 0.65), (0.33, 0.30)),
            ((0.07, 0.30), (0.33, 0.30)),
        ],
        4 => vec![
            ((0.07, 0.85), (0.33, 0.85)),
            ((0.07, 0.85), (0.07, 0.12)),
            ((0.33, 0.85), (0.33, 0.12)),
            ((0.07, 0.48), (0.33, 0.48)),
            ((0.07, 0.12), (0.33, 0.12)),
        ],
        _ => vec![
            ((0.05, 0.70), (0.35, 0.70)),
            ((0.22, 0.95), (0.22, 0.10)),
            ((0.05, 0.28), (0.35, 0.48)),
        ],
    }
}

fn hashed_component(seed: u64, u0: f64, u1: f64) -> Vec<Stroke> {
    let mut h = SplitMix(seed);
    let n = 3 + h.pick(4);
    let lerp = |t: f64| u0 + (u1 - u0) * t;
    let levels = [0.1, 0.3, 0.5, 0.7, 0.9];
    let cols = [0.1, 0.35, 0.65, 0.9];
    let mut out = Vec::with_capacity(n);
    // one stroke per line: coincident contours double-count edge coverage
    let mut used = Vec::with_capacity(n);
    for _ in 0..n {
        let kind = h.pick(4);
        let (line, stroke) = match kind {
            0 => {
                let i = h.pick(levels.len());
                let v = levels[i];
                (i, ((lerp(0.0), v), (lerp(1.0), v)))
            }
            1 => {
                let i = h.pick(cols.len());
                let u = lerp(cols[i]);
                let a = levels[h.pick(2)];
                let b = levels[3 + h.pick(2)];
                (i, ((u, b), (u, a)))
            }
            2 => {
                let (a, b) = (h.pick(2), 3 + h.pick(2));
                (a * 8 + b, ((lerp(0.5), levels[b]), (lerp(0.0), levels[a])))
            }
            _ => {
                let (a, b) = (h.pick(2), 3 + h.pick(2));
                (a * 8 + b, ((lerp(0.5), levels[b]), (lerp(1.0), levels[a])))
            }
        };
        if !used.contains(&(kind, line)) {
            used.push((kind, line));
            out.push(stroke);
        }
    }
    out
}

fn strokes_for(c: char) -> Vec<Stroke> {
    let cp = c as u32;
    if c.is_whitespace() {
        return Vec::new();
    }
    if c == 'X' {
        return vec![((0.1, 0.95), (0.9, 0.05)), ((0.9, 0.95), (0.1, 0.05))];
    }
    match radical_of(c) {
        Some(r) => {
            let mut s = radical(r);
            s.extend(hashed_component(cp as u64, 0.45, 0.95));
            s
        }
        None => hashed_component(cp as u64 ^ 0x51, 0.1, 0.9),
    }
}

fn signed_area(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len();
    (0..n)
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        / 2.0
}

fn quad(a: (f64, f64), b: (f64, f64), half: f64) -> Vec<(f64, f64)> {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len = (dx * dx + dy * dy).sqrt().max(1e-9);
    let (ux, uy) = (dx / len, dy / len);
    let (nx, ny) = (-uy * half, ux * half);
    let a = (a.0 - ux * half, a.1 - uy * half);
    let b = (b.0 + ux * half, b.1 + uy * half);
    let mut q = vec![(a.0 + nx, a.1 + ny), (b.0 + nx, b.1 + ny), (b.0 - nx, b.1 - ny), (a.0 - nx, a.1 - ny)];
    // TrueType outer contours run clockwise
    if signed_area(&q) > 0.0 {
        q.reverse();
    }
    q
}

/// Outline of `c` in this style, in font units.
pub fn glyph_contours(c: char, style: &StyleParams) -> Vec<Contour> {
    let cell = 800.0;
    let to_units = |(u, v): (f64, f64)| -> (f64, f64) {
        let x = 100.0 + cell * (0.5 + (u - 0.5) * style.squash) + style.slant * cell * (v - 0.5);
        let y = -50.0 + cell * v;
        (x, y)
    };
    let mut out = Vec::new();
    for (p0, p1) in strokes_for(c) {
        let (a, b) = (to_units(p0), to_units(p1));
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len = (dx * dx + dy * dy).sqrt().max(1e-9);
        let horizontal = (dx / len).abs();
        let half = cell * style.weight * (1.0 - style.contrast * horizontal * horizontal).max(0.25);
        out.push(quad(a, b, half));
        if style.serif > 0.0 && horizontal < 0.5 {
            let s = cell * style.serif;
            let thin = (cell * style.weight * 0.5).max(8.0);
            for p in [a, b] {
                out.push(quad((p.0 - s, p.1), (p.0 + s, p.1), thin));
            }
        }
    }
    out.into_iter()
        .map(|q| q.into_iter().map(|(x, y)| (x.round() as i32, y.round() as i32)).collect())
        .collect()
}

struct Writer(Vec<u8>);

impl Writer {
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn i16(&mut self, v: i16) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
}

fn glyph_record(contours: &[Contour]) -> (Vec<u8>, (i16, i16, i16, i16), usize) {
    if contours.is_empty() {
        return (Vec::new(), (0, 0, 0, 0), 0);
    }
    let pts: Vec<(i32, i32)> = contours.iter().flatten().copied().collect();
    let bbox = (
        pts.iter().map(|p| p.0).min().unwrap() as i16,
        pts.iter().map(|p| p.1).min().unwrap() as i16,
        pts.iter().map(|p| p.0).max().unwrap() as i16,
        pts.iter().map(|p| p.1).max().unwrap() as i16,
    );
    let mut w = Writer(Vec::new());
    w.i16(contours.len() as i16);
    w.i16(bbox.0);
    w.i16(bbox.1);
    w.i16(bbox.2);
    w.i16(bbox.3);
    let mut end = 0usize;
    for c in contours {
        end += c.len();
        w.u16((end - 1) as u16);
    }
    w.u16(0);
    // on-curve, full 16-bit deltas
    w.0.extend(std::iter::repeat(0x01u8).take(pts.len()));
    let mut prev = 0i32;
    for p in &pts {
        w.i16((p.0 - prev) as i16);
        prev = p.0;
    }
    prev = 0;
    for p in &pts {
        w.i16((p.1 - prev) as i16);
        prev = p.1;
    }
    while w.0.len() % 4 != 0 {
        w.0.push(0);
    }
    (w.0, bbox, pts.len())
}

fn checksum(data: &[u8]) -> u32 {
    data.chunks(4).fold(0u32, |acc, chunk| {
        let mut b = [0u8; 4];
        b[..chunk.len()].copy_from_slice(chunk);
        acc.wrapping_add(u32::from_be_bytes(b))
    })
}

/// Serializes a font covering `chars` (sorted and deduplicated internally).
pub fn build_font(chars: &[char], style: &StyleParams) -> Vec<u8> {
    let mut chars: Vec<char> = chars.to_vec();
    chars.sort_unstable();
    chars.dedup();

    // glyph 0 is .notdef: a plain box
    let notdef: Vec<Contour> = vec![vec![(100, 0), (100, 700), (600, 700), (600, 0)], vec![(150, 50), (550, 50), (550, 650), (150, 650)]];
    let mut glyphs = vec![glyph_record(&notdef)];
    for &c in &chars {
        glyphs.push(glyph_record(&glyph_contours(c, style)));
    }
    let num_glyphs = glyphs.len() as u16;
    let max_points = glyphs.iter().map(|g| g.2).max().unwrap_or(0) as u16;
    let max_contours = std::iter::once(notdef.len())
        .chain(chars.iter().map(|&c| glyph_contours(c, style).len()))
        .max()
        .unwrap_or(0) as u16;
    let (mut xmin, mut ymin, mut xmax, mut ymax) = (i16::MAX, i16::MAX, i16::MIN, i16::MIN);
    for (data, b, _) in &glyphs {
        if !data.is_empty() {
            xmin = xmin.min(b.0);
            ymin = ymin.min(b.1);
            xmax = xmax.max(b.2);
            ymax = ymax.max(b.3);
        }
    }

    let mut glyf = Vec::new();
    let mut loca = Writer(Vec::new());
    for (data, _, _) in &glyphs {
        loca.u32(glyf.len() as u32);
        glyf.extend_from_slice(data);
    }
    loca.u32(glyf.len() as u32);

    let mut head = Writer(Vec::new());
    head.u32(0x0001_0000);
    head.u32(0x0001_0000);
    head.u32(0);
    head.u32(0x5F0F_3CF5);
    head.u16(0x000B);
    head.u16(UNITS_PER_EM);
    head.i64(0);
    head.i64(0);
    head.i16(xmin);
    head.i16(ymin);
    head.i16(xmax);
    head.i16(ymax);
    head.u16(0);
    head.u16(8);
    head.i16(2);
    head.i16(1);
    head.i16(0);

    let mut hhea = Writer(Vec::new());
    hhea.u32(0x0001_0000);
    hhea.i16(ASCENDER);
    hhea.i16(DESCENDER);
    hhea.i16(0);
    hhea.u16(UNITS_PER_EM);
    hhea.i16(xmin.min(0));
    hhea.i16(0);
    hhea.i16(xmax);
    hhea.i16(1);
    hhea.i16(0);
    hhea.i16(0);
    for _ in 0..4 {
        hhea.i16(0);
    }
    hhea.i16(0);
    hhea.u16(num_glyphs);

    let mut maxp = Writer(Vec::new());
    maxp.u32(0x0001_0000);
    maxp.u16(num_glyphs);
    maxp.u16(max_points);
    maxp.u16(max_contours);
    maxp.u16(0);
    maxp.u16(0);
    maxp.u16(2);
    for _ in 0..8 {
        maxp.u16(0);
    }

    let mut hmtx = Writer(Vec::new());
    for (data, b, _) in &glyphs {
        hmtx.u16(UNITS_PER_EM);
        hmtx.i16(if data.is_empty() { 0 } else { b.0 });
    }

    // format 12 with one group per run of consecutive code points
    let mut groups: Vec<(u32, u32, u32)> = Vec::new();
    for (i, &c) in chars.iter().enumerate() {
        let (cp, gid) = (c as u32, i as u32 + 1);
        match groups.last_mut() {
            Some(g) if g.1 + 1 == cp && g.2 + (g.1 - g.0) + 1 == gid => g.1 = cp,
            _ => groups.push((cp, cp, gid)),
        }
    }
    let mut cmap = Writer(Vec::new());
    cmap.u16(0);
    cmap.u16(1);
    cmap.u16(3);
    cmap.u16(10);
    cmap.u32(12);
    cmap.u16(12);
    cmap.u16(0);
    cmap.u32(16 + 12 * groups.len() as u32);
    cmap.u32(0);
    cmap.u32(groups.len() as u32);
    for (s, e, g) in &groups {
        cmap.u32(*s);
        cmap.u32(*e);
        cmap.u32(*g);
    }

    let mut post = Writer(Vec::new());
    post.u32(0x0003_0000);
    post.u32(0);
    post.i16(-100);
    post.i16(50);
    for _ in 0..5 {
        post.u32(0);
    }

    let mut tables: Vec<(&[u8; 4], Vec<u8>)> = vec![
        (b"cmap", cmap.0),
        (b"glyf", glyf),
        (b"head", head.0),
        (b"hhea", hhea.0),
        (b"hmtx", hmtx.0),
        (b"loca", loca.0),
        (b"maxp", maxp.0),
        (b"post", post.0),
    ];
    tables.sort_by_key(|t| *t.0);

    let n = tables.len() as u16;
    let entry_selector = 15 - n.leading_zeros() as u16;
    let search_range = (1u16 << entry_selector) * 16;
    let mut out = Writer(Vec::new());
    out.u32(0x0001_0000);
    out.u16(n);
    out.u16(search_range);
    out.u16(entry_selector);
    out.u16(n * 16 - search_range);
    let mut offset = 12 + 16 * tables.len();
    let mut body = Vec::new();
    for (tag, data) in &tables {
        out.0.extend_from_slice(*tag);
        out.u32(checksum(data));
        out.u32(offset as u32);
        out.u32(data.len() as u32);
        let mut padded = data.clone();
        while padded.len() % 4 != 0 {
            padded.push(0);
        }
        offset += padded.len();
        body.extend(padded);
    }
    out.0.extend(body);
    out.0
}

pub fn write_font(path: &Path, chars: &[char], style: &StyleParams) -> io::Result<()> {
    std::fs::write(path, build_font(chars, style))
}

/// `count` consecutive CJK ideographs starting at U+4E00.
pub fn cjk_chars(count: usize) -> Vec<char> {
    (0..count as u32).filter_map(|i| char::from_u32(0x4E00 + i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contours_run_clockwise() {
        for c in cjk_chars(40) {
            for q in glyph_contours(c, &StyleParams::from_seed(3)) {
                let f: Vec<(f64, f64)> = q.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
                assert!(signed_area(&f) <= 0.0);
            }
        }
    }

    #[test]
    fn space_has_no_outline() {
        assert!(glyph_contours(' ', &StyleParams::default()).is_empty());
    }

    #[test]
    fn shared_radicals_share_strokes() {
        let a = char::from_u32(0x4E00 + 12).unwrap();
        let b = char::from_u32(0x4E00 + 18).unwrap();
        assert_eq!(radical_of(a), radical_of(b));
        let s = StyleParams::default();
        assert_eq!(glyph_contours(a, &s)[..2], glyph_contours(b, &s)[..2]);
    }
}
