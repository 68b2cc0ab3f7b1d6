//! Round-trips and rejection of damaged inputs for every on-disk format.

use std::path::{Path, PathBuf};

use glyphmae::checkpoint::{checkpoint_id, Checkpoint, CheckpointMeta, Stage, TensorFile};
use glyphmae::config::{BackboneSection, RunConfig};
use glyphmae::imageio::{decode_glyph, encode_png};
use glyphmae::index_file::{decode_index, encode_index, load_index_dir, save_index};
use glyphmae::manifest::{parse_jsonl, read_manifest, to_jsonl, write_manifest};
use glyphmae_core::dataset::{build_splits, Entry, SplitConfig};
use glyphmae_core::retrieval::{StyleEmbedding, StyleIndex};
use glyphmae_core::{BackboneConfig, Charcode, DatasetManifest, GlyphImage, SeededRng, StyleModel};

fn manifest() -> DatasetManifest {
    let mut entries = Vec::new();
    for f in 0..10 {
        for c in 0..20u32 {
            let cc = Charcode(0x4e00 + c);
            entries.push(Entry::new(cc, format!("font{f}"), format!("font{f}/{}.png", cc.hex())));
        }
    }
    let base = DatasetManifest::new(entries).unwrap();
    build_splits(&base, &SplitConfig::with_fractions(0.8, 0.1, 0.1, 4)).unwrap()
}

#[test]
fn manifest_round_trips_through_jsonl() {
    let m = manifest();
    let text = to_jsonl(&m).unwrap();
    assert_eq!(text.lines().count(), m.len());
    assert_eq!(parse_jsonl(&text).unwrap(), m);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.jsonl");
    write_manifest(&path, &m).unwrap();
    assert_eq!(read_manifest(&path).unwrap(), m);
    let first = text.lines().next().unwrap();
    let rec: serde_json::Value = serde_json::from_str(first).unwrap();
    assert_eq!(rec["codepoint"], "4e00");
    assert_eq!(rec["language"], "zh");
}

#[test]
fn manifest_rejects_bad_lines() {
    assert!(parse_jsonl("{not json}\n").is_err());
    let bad_code = r#"{"codepoint":"zzzz","style_id":"a","language":"zh","path":"a/x.png"}"#;
    assert!(parse_jsonl(bad_code).is_err());
    let bad_split = r#"{"codepoint":"4e00","style_id":"a","language":"zh","split":"nowhere","path":"a/x.png"}"#;
    assert!(parse_jsonl(bad_split).is_err());
    // records written before roles existed still load
    let legacy = r#"{"codepoint":"4e00","style_id":"a","language":"zh","path":"a/x.png"}"#;
    assert_eq!(parse_jsonl(legacy).unwrap().len(), 1);
}

fn tiny_backbone() -> BackboneConfig {
    BackboneConfig {
        image_size: 16,
        patch_size: 4,
        channels: 1,
        hidden_size: 8,
        depth: 1,
        heads: 2,
        mlp_ratio: 2,
        decoder_hidden: 8,
        decoder_depth: 1,
        decoder_heads: 2,
        mask_ratio: 0.5,
    }
}

fn checkpoint(seed: u64) -> Checkpoint {
    let cfg = tiny_backbone();
    let (_, store) = StyleModel::init(&cfg, 1, seed).unwrap();
    Checkpoint {
        meta: CheckpointMeta {
            stage: Stage::Main,
            backbone: BackboneSection::from_core(&cfg, 1),
            steps: 7,
            parent: Some("abc".into()),
        },
        store,
    }
}

#[test]
fn checkpoint_round_trips_with_stable_id() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("main/checkpoint.bin");
    let ck = checkpoint(3);
    let id = ck.save(&path).unwrap();
    assert_eq!(id.len(), 16);
    let (back, id2) = Checkpoint::load(&path).unwrap();
    assert_eq!(id, id2);
    assert_eq!(back.meta, ck.meta);
    assert_eq!(back.store.len(), ck.store.len());
    for (a, b) in back.store.params().iter().zip(ck.store.params()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.value, b.value);
        assert_eq!(a.no_decay, b.no_decay);
    }
    // same weights give the same id; different weights do not
    assert_eq!(checkpoint(3).save(&dir.path().join("again.bin")).unwrap(), id);
    assert_ne!(checkpoint(4).save(&dir.path().join("other.bin")).unwrap(), id);
    let (model, store) = back.style_model().unwrap();
    assert_eq!(model.cfg, tiny_backbone());
    assert_eq!(store.numel(), ck.store.numel());
    assert!(back.masked_autoencoder().is_err());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let bytes = TensorFile::from_store(&checkpoint(1).store, serde_json::json!({})).to_bytes().unwrap();
    assert!(TensorFile::from_bytes(&bytes).is_ok());
    assert!(TensorFile::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(TensorFile::from_bytes(&extra).is_err());
    let mut magic = bytes.clone();
    magic[0] ^= 0xff;
    assert!(TensorFile::from_bytes(&magic).is_err());
    let mut version = bytes;
    version[8] = 99;
    assert!(TensorFile::from_bytes(&version).is_err());
    assert_ne!(checkpoint_id(b"a"), checkpoint_id(b"b"));
}

fn index(n: usize, dim: usize, seed: u64) -> StyleIndex {
    let mut rng = SeededRng::new(seed);
    let entries = (0..n)
        .map(|i| {
            let raw: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            StyleEmbedding::from_raw(&raw, Charcode(0x4e00 + i as u32), "font7")
        })
        .collect();
    StyleIndex::from_embeddings("font7", entries).unwrap()
}

#[test]
fn index_round_trips_bit_exactly() {
    let idx = index(50, 12, 2);
    let bytes = encode_index(&idx);
    let back = decode_index(&bytes).unwrap();
    assert_eq!(back.style_id(), "font7");
    assert_eq!(back.entries(), idx.entries());
    assert_eq!(encode_index(&back), bytes);

    let dir = tempfile::tempdir().unwrap();
    save_index(dir.path(), &idx).unwrap();
    save_index(dir.path(), &index(5, 12, 3)).unwrap();
    let all = load_index_dir(dir.path()).unwrap();
    assert_eq!(all.len(), 1, "same style id overwrites");
    assert_eq!(all["font7"].len(), 5);
    assert!(load_index_dir(&dir.path().join("missing")).unwrap().is_empty());
}

#[test]
fn damaged_indexes_are_rejected() {
    let bytes = encode_index(&index(4, 3, 5));
    assert!(decode_index(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.extend_from_slice(&[0; 4]);
    assert!(decode_index(&extra).is_err());
    let mut magic = bytes;
    magic[3] = b'?';
    assert!(decode_index(&magic).is_err());
}

#[test]
fn png_round_trip_is_within_quantization() {
    let mut rng = SeededRng::new(8);
    let pixels: Vec<f64> = (0..24 * 24).map(|_| rng.uniform(0.0, 1.0)).collect();
    let img = GlyphImage::new(24, pixels, Charcode(0x4e00), "s").unwrap();
    let png = encode_png(&img).unwrap();
    let back = decode_glyph(&png, 24, Charcode(0x4e00), "s").unwrap();
    for (a, b) in img.pixels().iter().zip(back.pixels()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
    }
    // a 2x downsample averages 2x2 blocks
    let half = decode_glyph(&png, 12, Charcode(0x4e00), "s").unwrap();
    let q: Vec<f64> = back.pixels().to_vec();
    let want = (q[0] + q[1] + q[24] + q[25]) / 4.0;
    assert!((half.pixels()[0] - want).abs() < 1e-12);
    assert!(decode_glyph(b"\x89PNG garbage", 24, Charcode(0), "s").is_err());
}

#[test]
fn config_round_trips_and_rebases() {
    let cfg = RunConfig::default();
    let text = cfg.to_toml().unwrap();
    let back: RunConfig = toml::from_str(&text).unwrap();
    assert_eq!(back, cfg);
    cfg.validate().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, &text).unwrap();
    let loaded = RunConfig::load(&path).unwrap();
    assert_eq!(loaded.output_dir, dir.path().join("runs/default"));
    assert!(loaded.data.fonts_dir.starts_with(dir.path()));

    let mut abs = cfg.clone();
    abs.output_dir = PathBuf::from("/abs/out");
    abs.rebase(Path::new("/elsewhere"));
    assert_eq!(abs.output_dir, Path::new("/abs/out"));

    std::fs::write(&path, "seed = 1\nunknown_key = 3\n").unwrap();
    assert!(RunConfig::load(&path).is_err());
    std::fs::write(&path, "[loss]\nalpha = -1.0\n").unwrap();
    assert!(RunConfig::load(&path).is_err());
}
