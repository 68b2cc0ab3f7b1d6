//! Shape laws and properties. The checks are public so the acceptance run
//! can execute them too.

#[macro_use]
mod common;

use common::*;
use glyphmae_core::backbone::{BackboneConfig, MaskedAutoencoder, TokenSequence};
use glyphmae_core::dataset::apportion;
use glyphmae_core::mask::{masked_count, random_mask, MaskSpec};
use glyphmae_core::metrics::{lpips, pixel_metrics, ssim};
use glyphmae_core::perceptual::FeatureExtractor;
use glyphmae_core::retrieval::embed_glyph;
use glyphmae_core::{Charcode, GlyphImage, Matrix, PatchGrid, SeededRng, StyleModel};
use proptest::prelude::*;
use proptest::test_runner::{TestCaseError, TestRunner};

fn small_cfg() -> BackboneConfig {
    BackboneConfig {
        image_size: 16,
        patch_size: 4,
        channels: 1,
        hidden_size: 16,
        depth: 2,
        heads: 2,
        mlp_ratio: 2,
        decoder_hidden: 8,
        decoder_depth: 1,
        decoder_heads: 2,
        mask_ratio: 0.65,
    }
}

fn image_from(size: usize, seed: u64) -> GlyphImage {
    random_image(&mut SeededRng::new(seed), size)
}

pub fn mask_count_law_examples() {
    assert_eq!(masked_count(64, 0.65), 42);
    assert_eq!(masked_count(64, 0.75), 48);
    assert_eq!(masked_count(16, 0.5), 8);
    assert_eq!(masked_count(64, 0.0), 0);
}

pub fn default_embedding_length() {
    let cfg = BackboneConfig::default();
    assert_eq!(cfg.patch_num(), 64);
    assert_eq!(cfg.embedding_len(), 192 * 65);
    assert_eq!(cfg.embedding_len(), 12480);
    let (model, store) = StyleModel::init(&cfg, 1, 0).unwrap();
    let img = GlyphImage::blank(64, Charcode(0x4e00), "s");
    assert_eq!(embed_glyph(&img, &model, &store).unwrap().vector.len(), 12480);
}

pub fn zeroed_fusion_is_identity_on_content() {
    let cfg = small_cfg();
    let (model, mut store) = StyleModel::init(&cfg, 3, 1).unwrap();
    for b in &model.fusion {
        b.zero_residual_branches(&mut store);
    }
    let mut rng = SeededRng::new(2);
    let tokens = cfg.patch_num() + 1;
    for _ in 0..10 {
        let c = Matrix::from_fn(tokens, cfg.hidden_size, |_, _| rng.normal());
        let s = Matrix::from_fn(tokens, cfg.hidden_size, |_, _| rng.normal());
        let out = model.cross_attend(&store, &TokenSequence::new(c.clone()).unwrap(), &TokenSequence::new(s).unwrap()).unwrap();
        assert_eq!(out.matrix(), &c);
    }
}

pub fn identical_images_score_perfectly() {
    let ex = FeatureExtractor::default_fallback();
    let mut rng = SeededRng::new(3);
    for _ in 0..5 {
        let img = stroke_image(&mut rng, 32);
        assert_eq!(pixel_metrics(&img, &img).unwrap().l1, 0.0);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
        assert!(lpips(&img, &img, &ex).unwrap().abs() < 1e-12);
    }
}

/// Patchify then unpatchify restores the image; every pixel appears once per
/// channel.
pub fn patchify_bijection((side, patch, channels, seed): (usize, usize, usize, u64)) -> Result<(), TestCaseError> {
    let size = side * patch;
    let grid = PatchGrid::new(size, patch, channels).unwrap();
    let img = image_from(size, seed);
    let m = grid.patchify(&img).unwrap();
    prop_assert_eq!(m.shape(), (side * side, patch * patch * channels));
    let back = grid.unpatchify(&m, img.charcode, &img.style_id).unwrap();
    // the channel mean is exact only for a single channel
    if channels == 1 {
        prop_assert_eq!(back.pixels(), img.pixels());
    } else {
        prop_assert!(back.pixels().iter().zip(img.pixels()).all(|(a, b)| (a - b).abs() <= 1e-15));
    }
    let mut a: Vec<f64> = m.as_slice().to_vec();
    let mut b: Vec<f64> = img.pixels().iter().flat_map(|&p| std::iter::repeat_n(p, channels)).collect();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    prop_assert_eq!(a, b);
    Ok(())
}

pub fn mask_partition((n, ratio, seed): (usize, f64, u64)) -> Result<(), TestCaseError> {
    let m = random_mask(n, ratio, &mut SeededRng::new(seed)).unwrap();
    prop_assert_eq!(m.masked().len(), (ratio * n as f64 + 0.5).floor() as usize);
    prop_assert_eq!(m.masked().len() + m.visible().len(), n);
    let mut all: Vec<usize> = m.masked().iter().chain(m.visible()).copied().collect();
    all.sort_unstable();
    prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    Ok(())
}

pub fn token_count((ratio, seed): (f64, u64)) -> Result<(), TestCaseError> {
    let cfg = small_cfg();
    let (model, store) = MaskedAutoencoder::init(&cfg, 7).unwrap();
    let mut rng = SeededRng::new(seed);
    let img = random_image(&mut rng, cfg.image_size);
    let mask = random_mask(cfg.patch_num(), ratio, &mut rng).unwrap();
    let tokens = model.encoder.encode(&store, &img, Some(&mask)).unwrap();
    prop_assert_eq!(tokens.len(), mask.visible().len() + 1);
    prop_assert_eq!(tokens.width(), cfg.hidden_size);
    let full = model.encoder.encode(&store, &img, None).unwrap();
    prop_assert_eq!(full.len(), cfg.patch_num() + 1);
    let recon = model.reconstruct(&store, &img, &mask).unwrap();
    prop_assert_eq!(recon.shape(), (cfg.patch_num(), cfg.grid().patch_dim()));
    Ok(())
}

pub fn rmse_is_sqrt_mse((size, s1, s2): (usize, u64, u64)) -> Result<(), TestCaseError> {
    let m = pixel_metrics(&image_from(size, s1), &image_from(size, s2)).unwrap();
    prop_assert_eq!(m.rmse, m.mse.sqrt());
    prop_assert!(m.mse <= m.l1 + 1e-15);
    Ok(())
}

pub fn ssim_symmetric((size, s1, s2): (usize, u64, u64)) -> Result<(), TestCaseError> {
    let (a, b) = (image_from(size, s1), image_from(size, s2));
    let ab = ssim(&a, &b).unwrap();
    prop_assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-12);
    prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&ab));
    Ok(())
}

pub fn apportion_exact((total, w): (usize, Vec<usize>)) -> Result<(), TestCaseError> {
    let parts = apportion(total, &w);
    let sum: usize = w.iter().sum();
    if sum == 0 {
        prop_assert!(parts.iter().all(|&p| p == 0));
    } else {
        prop_assert_eq!(parts.iter().sum::<usize>(), total);
        for (p, wi) in parts.iter().zip(&w) {
            let exact = total as f64 * *wi as f64 / sum as f64;
            prop_assert!((*p as f64 - exact).abs() < 1.0);
        }
    }
    Ok(())
}

pub fn mask_from_indices((n, idx): (usize, Vec<usize>)) -> Result<(), TestCaseError> {
    let idx: Vec<usize> = idx.into_iter().filter(|&i| i < n).collect();
    let mut rev = idx.clone();
    rev.reverse();
    rev.extend(idx.iter().copied());
    prop_assert_eq!(MaskSpec::from_masked(n, &idx).unwrap(), MaskSpec::from_masked(n, &rev).unwrap());
    Ok(())
}

fn check<S: Strategy>(cases: u32, strategy: S, f: fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    let config = ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    };
    TestRunner::new(config).run(&strategy, f).map_err(|e| e.to_string())
}

/// Every property, each run on `cases` random inputs.
pub fn run_properties(cases: u32) -> Vec<(&'static str, Result<(), String>)> {
    vec![
        ("patchify bijection", check(cases, (1usize..6, 1usize..6, 1usize..4, any::<u64>()), patchify_bijection)),
        ("random mask partition", check(cases, (1usize..200, 0.0f64..0.99, any::<u64>()), mask_partition)),
        ("token count", check(cases, (0.0f64..0.95, any::<u64>()), token_count)),
        ("rmse == sqrt(mse)", check(cases, (1usize..24, any::<u64>(), any::<u64>()), rmse_is_sqrt_mse)),
        ("ssim symmetric", check(cases, (11usize..20, any::<u64>(), any::<u64>()), ssim_symmetric)),
        ("apportion", check(cases, (0usize..5000, proptest::collection::vec(0usize..100, 1..6)), apportion_exact)),
        ("mask from indices", check(cases, (1usize..64, proptest::collection::vec(0usize..64, 0..80)), mask_from_indices)),
    ]
}

#[test]
fn properties_hold() {
    for (name, result) in run_properties(64) {
        if let Err(e) = result {
            panic!("{name}: {e}");
        }
    }
}

run_as_tests!(
    mask_count_law_examples,
    default_embedding_length,
    zeroed_fusion_is_identity_on_content,
    identical_images_score_perfectly,
);
