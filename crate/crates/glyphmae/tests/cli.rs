mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::*;
use glyphmae::checkpoint::{checkpoint_path, Checkpoint, Stage};
use glyphmae::commands::{cmd_eval, cmd_generate, cmd_index, cmd_refine, cmd_render, cmd_train, Provenance, RagMode, RetrievedRef, StyleArg};
use glyphmae::imageio::decode_gray;
use glyphmae::manifest::{read_manifest, write_manifest};
use glyphmae::HarnessError;
use glyphmae_core::{Error, Split};

fn glyphmae(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glyphmae"))
        .arg("-c")
        .arg(config_path(dir))
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn empty_fonts_dir_exits_nonzero() {
    let (dir, _) = workspace(0, 0);
    let out = glyphmae(dir.path(), &["render"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("no .ttf/.otf fonts"), "{}", stderr(&out));
}

#[test]
fn two_fonts_of_fifty_chars_give_a_hundred_entries() {
    let (dir, mut cfg) = workspace(2, 50);
    // two fonts cannot fill font-disjoint test partitions
    cfg.split.allow_empty_test = true;
    cfg.split.train = 0.9;
    cfg.split.test = 0.0;
    std::fs::write(config_path(dir.path()), cfg.to_toml().unwrap()).unwrap();
    let s = cmd_render(&cfg, false).unwrap();
    assert_eq!((s.fonts, s.entries), (2, 100));
    assert_eq!(read_manifest(&cfg.manifest_path()).unwrap().len(), 100);
}

#[test]
fn render_rerun_is_a_no_op() {
    let (dir, cfg) = workspace(6, 30);
    let out = glyphmae(dir.path(), &["render"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let before = std::fs::read(cfg.manifest_path()).unwrap();
    let mtime = std::fs::metadata(cfg.manifest_path()).unwrap().modified().unwrap();
    let again = glyphmae(dir.path(), &["render"]);
    assert!(again.status.success());
    assert!(String::from_utf8_lossy(&again.stdout).contains("manifest exists"));
    assert_eq!(std::fs::read(cfg.manifest_path()).unwrap(), before);
    assert_eq!(std::fs::metadata(cfg.manifest_path()).unwrap().modified().unwrap(), mtime);
    // --force renders again with the same seed and gets the same manifest
    assert!(glyphmae(dir.path(), &["render", "--force"]).status.success());
    assert_eq!(std::fs::read(cfg.manifest_path()).unwrap(), before);
}

#[test]
fn unreadable_fonts_are_reported_and_skipped() {
    let (dir, cfg) = workspace(6, 30);
    std::fs::write(cfg.data.fonts_dir.join("broken.ttf"), b"not a font").unwrap();
    let s = cmd_render(&cfg, false).unwrap();
    assert_eq!(s.fonts, 6);
    assert_eq!(s.failures.len(), 1);
    assert!(s.failures[0].0.ends_with("broken.ttf"));
    let out = glyphmae(dir.path(), &["render", "--force"]);
    assert!(out.status.success());
    assert!(stderr(&out).contains("broken.ttf"));
}

#[test]
fn stages_without_their_parent_checkpoint_fail() {
    let (_dir, cfg) = workspace(6, 30);
    cmd_render(&cfg, false).unwrap();
    let err = cmd_train(&cfg).unwrap_err();
    assert!(matches!(err.downcast_ref::<HarnessError>(), Some(HarnessError::MissingCheckpoint(p)) if p.ends_with("pretrain/checkpoint.bin")));
    let err = cmd_refine(&cfg, None).unwrap_err();
    assert!(matches!(err.downcast_ref::<HarnessError>(), Some(HarnessError::MissingCheckpoint(_))));
}

#[test]
fn training_pipeline_logs_and_reproduces() {
    let (dir, cfg) = trained(6, 30);
    let main = checkpoint_path(&cfg.output_dir, Stage::Main);
    let (ck, id) = Checkpoint::load(&main).unwrap();
    assert_eq!(ck.meta.stage, Stage::Main);
    assert_eq!(ck.meta.steps, 4);
    assert!(ck.meta.parent.is_some(), "initialized from the pretrain checkpoint");

    let log = std::fs::read_to_string(cfg.stage_dir(Stage::Main).join("loss.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for k in ["content", "style", "mse", "total"] {
            assert!(v[k].as_f64().unwrap().is_finite(), "{k} in {line}");
        }
    }
    // rerunning the stage with the same config reproduces the checkpoint
    assert_eq!(cmd_train(&cfg).unwrap().checkpoint_id, id);

    // refinement for zero steps leaves the weights untouched
    let r = cmd_refine(&cfg, Some(0.0)).unwrap();
    assert_eq!(r.steps, 0);
    let (refined, _) = Checkpoint::load(&r.checkpoint).unwrap();
    assert_eq!(refined.meta.parent.as_deref(), Some(id.as_str()));
    for (a, b) in refined.store.params().iter().zip(ck.store.params()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
    let out = glyphmae(dir.path(), &["refine"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let refine_log = std::fs::read_to_string(cfg.stage_dir(Stage::Refined).join("loss.jsonl")).unwrap();
    assert_eq!(refine_log.lines().count(), 2, "half of a 4-step epoch");
}

#[test]
fn eval_writes_plain_and_rag_reports() {
    let (_dir, cfg) = trained(8, 30);
    cmd_index(&cfg, None).unwrap();
    let runs = cmd_eval(&cfg, None, RagMode::Both).unwrap();
    assert_eq!(runs.len(), 2);
    for (run, stem) in runs.iter().zip(["report", "report_rag"]) {
        let table = std::fs::read_to_string(cfg.eval_dir().join(format!("{stem}.txt"))).unwrap();
        assert_eq!(table, run.table);
        for label in ["SS", "SC", "CS", "CC"] {
            assert!(table.lines().any(|l| l.starts_with(label)), "{label} row in {stem}");
        }
        let jsonl = std::fs::read_to_string(cfg.eval_dir().join(format!("{stem}.jsonl"))).unwrap();
        assert_eq!(jsonl.lines().count(), 4);
    }

    // an emptied partition is reported by name
    let mut m = read_manifest(&cfg.manifest_path()).unwrap();
    for e in &mut m.entries {
        if e.split == Some(Split::TestSC) {
            e.split = Some(Split::Train);
        }
    }
    write_manifest(&cfg.manifest_path(), &m).unwrap();
    let err = cmd_eval(&cfg, None, RagMode::Off).unwrap_err();
    assert_eq!(err.downcast_ref::<Error>(), Some(&Error::EmptyPartition("SC".into())));
}

#[test]
fn generate_writes_image_and_provenance() {
    let (dir, cfg) = trained(6, 30);
    cmd_index(&cfg, None).unwrap();
    let glyph = cfg.data.data_dir.join("f00/4e01.png");
    let out = dir.path().join("out/same.png");
    let prov = cmd_generate(&cfg, None, &glyph, &StyleArg::Image(glyph.clone()), false, &out).unwrap();
    let img = decode_gray(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!((img.width, img.height), (16, 16));
    assert!(prov.reference_charcode.is_none());
    let sidecar: Provenance = serde_json::from_str(&std::fs::read_to_string(out.with_extension("json")).unwrap()).unwrap();
    assert_eq!(sidecar, prov);
    assert_eq!(sidecar.checkpoint_id.len(), 16);

    // a hand-drawn blob at another resolution is just another input
    let blob = dir.path().join("blob.png");
    blob_png(&blob, 50);
    let o = dir.path().join("out/blob.png");
    let res = glyphmae(dir.path(), &["generate", "--content", blob.to_str().unwrap(), "--style-id", "f03", "--rag", "-o", o.to_str().unwrap()]);
    assert!(res.status.success(), "{}", stderr(&res));
    let img = decode_gray(&std::fs::read(&o).unwrap()).unwrap();
    assert_eq!((img.width, img.height), (16, 16));
    let p: Provenance = serde_json::from_str(&std::fs::read_to_string(o.with_extension("json")).unwrap()).unwrap();
    assert!(p.rag);
    let code = p.reference_charcode.expect("retrieval names its reference");
    assert!(cfg.data.data_dir.join("f03").join(format!("{code}.png")).exists());
}

#[test]
fn rag_with_unknown_style_fails() {
    let (dir, cfg) = trained(6, 30);
    cmd_index(&cfg, None).unwrap();
    let glyph = cfg.data.data_dir.join("f00/4e01.png");
    let out = dir.path().join("x.png");
    let err = cmd_generate(&cfg, None, &glyph, &StyleArg::Id("nope".into()), true, &out).unwrap_err();
    assert_eq!(err.downcast_ref::<Error>(), Some(&Error::UnknownStyle("nope".into())));
    let res = glyphmae(dir.path(), &["generate", "--content", glyph.to_str().unwrap(), "--style-id", "nope", "--rag", "-o", out.to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(stderr(&res).contains("nope"));
    assert!(!out.exists());
}

#[test]
fn retrieve_verb_prints_ranked_references() {
    let (dir, cfg) = trained(6, 30);
    cmd_index(&cfg, None).unwrap();
    let glyph = cfg.data.data_dir.join("f02/4e05.png");
    let res = glyphmae(dir.path(), &["retrieve", "--content", glyph.to_str().unwrap(), "--style-id", "f02", "-k", "3"]);
    assert!(res.status.success(), "{}", stderr(&res));
    let refs: Vec<RetrievedRef> = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(refs.len(), 3);
    // the glyph itself is indexed, so it comes back first
    assert_eq!(refs[0].charcode, "4e05");
    assert!(refs[0].distance <= 1e-6);
    assert!(refs.windows(2).all(|w| w[0].distance <= w[1].distance));
}
