//! The evaluation harness driven by an oracle generator. Public so the
//! acceptance run can call the checks.

#[macro_use]
mod common;

use common::*;
use glyphmae_core::dataset::{build_splits, Entry, MemorySource, SplitConfig};
use glyphmae_core::eval::{evaluate_all, evaluate_partition, format_table, EvalOptions, OracleGenerator};
use glyphmae_core::perceptual::FeatureExtractor;
use glyphmae_core::{Charcode, DatasetManifest, Error, SeededRng, Split};

fn dataset(fonts: usize, chars: u32, size: usize) -> (DatasetManifest, MemorySource) {
    let mut rng = SeededRng::new(41);
    let mut entries = Vec::new();
    let mut source = MemorySource::new();
    for f in 0..fonts {
        let id = format!("f{f}");
        for c in 0..chars {
            let cc = Charcode(0x4e00 + c);
            let mut img = stroke_image(&mut rng, size);
            img.charcode = cc;
            img.style_id = id.clone();
            source.insert(img);
            entries.push(Entry::new(cc, id.clone(), format!("{id}/{}.png", cc.hex())));
        }
    }
    let m = build_splits(&DatasetManifest::new(entries).unwrap(), &SplitConfig::with_fractions(0.8, 0.1, 0.1, 5)).unwrap();
    (m, source)
}

pub fn oracle_generator_scores_ideal_metrics() {
    let (m, source) = dataset(10, 40, 16);
    let ex = FeatureExtractor::default_fallback();
    let gen = OracleGenerator { manifest: &m, source: &source };
    for use_rag in [false, true] {
        let opts = EvalOptions {
            use_rag,
            extractor: Some(&ex),
            max_samples: None,
        };
        let results = evaluate_all(&gen, &m, &source, &opts).unwrap();
        let labels: Vec<&str> = results.iter().map(|r| r.report.label()).collect();
        assert_eq!(labels, ["SS", "SC", "CS", "CC"]);
        for r in &results {
            let rep = &r.report;
            assert_eq!(rep.l1, 0.0);
            assert_eq!(rep.mse, 0.0);
            assert_eq!(rep.rmse, 0.0);
            assert!((rep.ssim - 1.0).abs() < 1e-12);
            assert!(rep.lpips.unwrap().abs() < 1e-12);
            assert!(rep.fid.unwrap().abs() < 1e-6, "{} fid {:?}", rep.label(), rep.fid);
            assert!(rep.sample_count > 0);
            for s in &r.samples {
                assert_ne!(s.reference, s.target);
                assert_ne!(s.fixed_reference, s.target);
            }
        }
        let table = format_table(&results.iter().map(|r| r.report.clone()).collect::<Vec<_>>());
        assert_eq!(table.lines().count(), 5);
    }
}

pub fn perceptual_metrics_are_absent_without_extractor() {
    let (m, source) = dataset(10, 30, 16);
    let gen = OracleGenerator { manifest: &m, source: &source };
    let r = evaluate_partition(&gen, &m, &source, Split::TestSS, &EvalOptions::default()).unwrap();
    assert!(r.report.lpips.is_none() && r.report.fid.is_none());
    assert!(format_table(&[r.report]).contains(" -"));
}

pub fn empty_partition_is_named() {
    let (mut m, source) = dataset(10, 30, 16);
    for e in &mut m.entries {
        if e.split == Some(Split::TestCC) {
            e.split = Some(Split::Train);
        }
    }
    let gen = OracleGenerator { manifest: &m, source: &source };
    let err = evaluate_partition(&gen, &m, &source, Split::TestCC, &EvalOptions::default()).unwrap_err();
    assert_eq!(err, Error::EmptyPartition("CC".into()));
    assert!(err.to_string().contains("CC"));
}

run_as_tests!(
    oracle_generator_scores_ideal_metrics,
    perceptual_metrics_are_absent_without_extractor,
    empty_partition_is_named,
);
