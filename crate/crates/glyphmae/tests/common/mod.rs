#![allow(dead_code)]

use std::path::Path;

use glyphmae::config::RunConfig;
use glyphmae::fontgen::{cjk_chars, write_font, StyleParams};
use tempfile::TempDir;

/// A run directory with `fonts` synthetic fonts of `chars` glyphs and a
/// tiny 16px model configuration.
pub fn workspace(fonts: usize, chars: usize) -> (TempDir, RunConfig) {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.seed = 5;
    cfg.output_dir = dir.path().join("run");
    cfg.data.fonts_dir = dir.path().join("fonts");
    cfg.data.data_dir = dir.path().join("data");
    let b = &mut cfg.backbone;
    b.image_size = 16;
    b.patch_size = 4;
    b.hidden_size = 8;
    b.depth = 1;
    b.heads = 2;
    b.mlp_ratio = 2;
    b.decoder_hidden = 8;
    b.decoder_depth = 1;
    b.decoder_heads = 2;
    b.fusion_depth = 1;
    cfg.pretrain.epochs = 1;
    cfg.pretrain.batch_size = 16;
    cfg.train.epochs = 1.0;
    cfg.train.steps_per_epoch = Some(4);
    cfg.train.batch_size = 2;
    cfg.eval.max_samples = Some(6);
    std::fs::create_dir_all(&cfg.data.fonts_dir).unwrap();
    let set = cjk_chars(chars);
    for i in 0..fonts {
        write_font(&cfg.data.fonts_dir.join(format!("f{i:02}.ttf")), &set, &StyleParams::from_seed(i as u64)).unwrap();
    }
    std::fs::write(dir.path().join("glyphmae.toml"), cfg.to_toml().unwrap()).unwrap();
    (dir, cfg)
}

/// Renders, pretrains and trains the workspace so a main checkpoint exists.
pub fn trained(fonts: usize, chars: usize) -> (TempDir, RunConfig) {
    let (dir, cfg) = workspace(fonts, chars);
    glyphmae::commands::cmd_render(&cfg, false).unwrap();
    glyphmae::commands::cmd_pretrain(&cfg).unwrap();
    glyphmae::commands::cmd_train(&cfg).unwrap();
    (dir, cfg)
}

pub fn config_path(dir: &Path) -> std::path::PathBuf {
    dir.join("glyphmae.toml")
}

/// A filled ellipse with a tail, drawn at an arbitrary resolution as RGBA.
pub fn blob_png(path: &Path, side: u32) {
    let mut data = Vec::with_capacity((side * side * 4) as usize);
    let c = side as f64 / 2.0;
    for y in 0..side {
        for x in 0..side {
            let (dx, dy) = ((x as f64 - c) / (0.35 * side as f64), (y as f64 - c) / (0.2 * side as f64));
            let tail = (x as f64 - y as f64).abs() < side as f64 * 0.05 && y > side / 2;
            let ink = dx * dx + dy * dy <= 1.0 || tail;
            let v = if ink { 20 } else { 255 };
            data.extend_from_slice(&[v, v, v, 255]);
        }
    }
    let file = std::fs::File::create(path).unwrap();
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), side, side);
    enc.set_color(png::ColorType::Rgba);
    enc.set_depth(png::BitDepth::Eight);
    enc.write_header().unwrap().write_image_data(&data).unwrap();
}
