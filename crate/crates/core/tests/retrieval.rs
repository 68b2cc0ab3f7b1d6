//! Exact retrieval against linear scans. Public so the acceptance run can
//! call the checks.

#[macro_use]
mod common;

use std::collections::BTreeMap;

use common::*;
use glyphmae_core::backbone::BackboneConfig;
use glyphmae_core::retrieval::{embed_glyph, generate_with_rag, retrieve_reference, StyleEmbedding, StyleIndex};
use glyphmae_core::{Charcode, GlyphImage, SeededRng, StyleModel};

/// Linear scan in f64 over the stored vectors; ties by charcode.
fn scan(index: &StyleIndex, query: &[f32]) -> Vec<(u32, f64)> {
    let mut all: Vec<(u32, f64)> = index
        .entries()
        .iter()
        .map(|e| {
            let d: f64 = e.vector.iter().zip(query).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
            (e.charcode.0, d.sqrt())
        })
        .collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    all
}

pub fn flat_search_equals_linear_scan() {
    let mut rng = SeededRng::new(31);
    for &(n, dim) in &[(1usize, 4usize), (17, 3), (250, 16), (1000, 64)] {
        let entries: Vec<StyleEmbedding> = (0..n)
            .map(|i| {
                let raw: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
                StyleEmbedding::from_raw(&raw, Charcode(i as u32), "s")
            })
            .collect();
        let index = StyleIndex::from_embeddings("s", entries).unwrap();
        for q in 0..100 {
            let raw: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let query = StyleEmbedding::from_raw(&raw, Charcode::MADE_UP, "s").vector;
            let k = [1, 3, 10, n][q % 4];
            let got: Vec<(u32, f64)> = index.search(&query, k).unwrap().iter().map(|h| (h.charcode.0, h.distance)).collect();
            let want: Vec<(u32, f64)> = scan(&index, &query).into_iter().take(k).collect();
            assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(&want) {
                assert_eq!(g.0, w.0, "n={n} query {q}");
                assert!((g.1 - w.1).abs() <= 1e-12);
            }
        }
    }
}

fn tiny_model() -> (StyleModel, glyphmae_core::ParamStore) {
    let cfg = BackboneConfig {
        image_size: 16,
        patch_size: 4,
        channels: 1,
        hidden_size: 16,
        depth: 1,
        heads: 2,
        mlp_ratio: 2,
        decoder_hidden: 8,
        decoder_depth: 1,
        decoder_heads: 2,
        mask_ratio: 0.5,
    };
    StyleModel::init(&cfg, 1, 4).unwrap()
}

fn glyph(rng: &mut SeededRng, c: u32) -> GlyphImage {
    let mut g = stroke_image(rng, 16);
    g.charcode = Charcode(c);
    g.style_id = "s".into();
    g
}

pub fn retrieve_reference_matches_scan_and_finds_itself() {
    let (model, store) = tiny_model();
    let mut rng = SeededRng::new(32);
    let glyphs: Vec<GlyphImage> = (0..1000).map(|i| glyph(&mut rng, 0x4e00 + i)).collect();
    let index = StyleIndex::build("s", &glyphs, &model, &store).unwrap();
    assert_eq!(index.len(), 1000);
    assert_eq!(index.dim(), model.cfg.embedding_len());

    for q in 0..100 {
        let query = glyph(&mut rng, 1);
        // oracle embedding straight from the encoder tokens
        let tokens = model.encode_content(&store, &query).unwrap();
        let raw = tokens.flatten();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let emb: Vec<f32> = raw.iter().map(|v| (v / norm) as f32).collect();
        let want: Vec<u32> = scan(&index, &emb).into_iter().take(5).map(|h| h.0).collect();
        let got: Vec<u32> = retrieve_reference(&query, &index, 5, &model, &store).unwrap().iter().map(|h| h.charcode.0).collect();
        assert_eq!(got, want, "query {q}");
    }
    for g in glyphs.iter().step_by(7) {
        let hit = retrieve_reference(g, &index, 1, &model, &store).unwrap()[0];
        assert!(hit.distance <= 1e-6, "self distance {}", hit.distance);
        let own = embed_glyph(g, &model, &store).unwrap();
        // duplicates would tie at zero; the winner must embed identically
        let winner = index.entries().iter().find(|e| e.charcode == hit.charcode).unwrap();
        assert!(winner.vector.iter().zip(&own.vector).all(|(a, b)| (a - b).abs() <= 1e-6));
    }
}

pub fn rag_provenance_names_an_indexed_glyph() {
    let (model, store) = tiny_model();
    let mut rng = SeededRng::new(33);
    let glyphs: Vec<GlyphImage> = (0..30).map(|i| glyph(&mut rng, 0x4e00 + i)).collect();
    let mut indexes = BTreeMap::new();
    indexes.insert("s".to_string(), StyleIndex::build("s", &glyphs, &model, &store).unwrap());
    let lookup = |s: &str, c: Charcode| glyphs.iter().find(|g| g.style_id == s && g.charcode == c).cloned();
    for _ in 0..20 {
        let content = glyph(&mut rng, 0x5000);
        let out = generate_with_rag(&content, "s", &model, &store, &indexes, &lookup).unwrap();
        assert!(indexes["s"].contains(out.reference));
        assert_eq!(out.image.size(), 16);
    }
    let content = glyph(&mut rng, 0x5000);
    assert!(generate_with_rag(&content, "missing", &model, &store, &indexes, &lookup).is_err());
}

run_as_tests!(
    flat_search_equals_linear_scan,
    retrieve_reference_matches_scan_and_finds_itself,
    rag_provenance_names_an_indexed_glyph,
);
