//! End-to-end runs of the `defect-forge` binary on tiny datasets.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use defect_forge::data::{load_checkpoint, rle_decode, rle_encode};
use defect_forge::geometry::{slice_image, SliceConfig};
use serde_json::Value;

const TINY_SPEC: &str = "width = 64\nheight = 64\nseed = 3\nshapes = rectangle\narea_fraction = 0.08\n";
const TINY_CONFIG: &str = "working_size = 64\nscales = 64\nepochs = 1\nstage1.patches_per_image = 2\nstage2.patches_per_image = 1\n";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_defect-forge"))
        .args(args)
        .env("DEFECT_FORGE_THREADS", "1")
        .output()
        .expect("spawn defect-forge")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::write(root.join("spec.txt"), TINY_SPEC).unwrap();
        fs::write(root.join("cfg.txt"), TINY_CONFIG).unwrap();
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn synth(&self, name: &str, count: usize) -> PathBuf {
        let out = self.path(name);
        ok(&["synth", "--spec", s(&self.path("spec.txt")), "--count", &count.to_string(), "--out", s(&out)]);
        out
    }

    fn train(&self, data: &Path, stage: &str, out: &str) -> (PathBuf, String) {
        let ck = self.path(out);
        let log = ok(&[
            "train", "--data", s(data), "--config", s(&self.path("cfg.txt")), "--stage", stage, "--out", s(&ck),
        ]);
        (ck, log)
    }
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "images", "masks"] {
        let d = dir.join(sub);
        let mut names: Vec<PathBuf> = fs::read_dir(&d).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_file()).collect();
        names.sort();
        for p in names {
            out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn synth_with_zero_count_writes_an_empty_manifest() {
    let f = Fixture::new();
    let out = f.synth("empty", 0);
    let m: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["count"], 0);
    assert_eq!(m["records"].as_array().unwrap().len(), 0);
}

#[test]
fn synth_is_deterministic_and_honours_seed() {
    let f = Fixture::new();
    let a = f.synth("a", 6);
    let b = f.synth("b", 6);
    assert_eq!(tree(&a), tree(&b));
    let c = f.path("c");
    ok(&["--seed", "99", "synth", "--spec", s(&f.path("spec.txt")), "--count", "6", "--out", s(&c)]);
    assert_ne!(tree(&a), tree(&c));
}

#[test]
fn synth_manifest_statistics_follow_the_area_target() {
    let f = Fixture::new();
    fs::write(f.path("spec10.txt"), "width = 80\nheight = 80\narea_fraction = 0.1\ndefect_free_fraction = 0\n").unwrap();
    let out = f.path("ten");
    ok(&["synth", "--spec", s(&f.path("spec10.txt")), "--count", "20", "--out", s(&out)]);
    let m: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let mean = m["stats"]["mean_defect_fraction"].as_f64().unwrap();
    assert!((0.08..=0.12).contains(&mean), "{mean}");
    assert_eq!(m["stats"]["defective"], 20);
}

#[test]
fn train_inspect_and_eval_round_trip() {
    let f = Fixture::new();
    let data = f.synth("data", 10);
    let (ck, log) = f.train(&data, "both", "both.ckpt");
    let lines: Vec<&str> = log.lines().filter(|l| l.contains("epoch")).collect();
    assert_eq!(lines.len(), 2, "{log}");
    for l in &lines {
        let total: f64 = l.rsplit("total=").next().unwrap().trim().parse().unwrap();
        assert!(total.is_finite() && total >= 0.0, "{l}");
    }

    // Same seed, same checkpoint bytes.
    let (again, _) = f.train(&data, "both", "again.ckpt");
    assert_eq!(fs::read(&ck).unwrap(), fs::read(&again).unwrap());

    let image = data.join("images/syn_00000.png");
    let out = f.path("inspect");
    ok(&["inspect", "--image", s(&image), "--checkpoint", s(&ck), "--skip-stage1", "--out", s(&out)]);
    let j: Value = serde_json::from_str(&fs::read_to_string(out.join("syn_00000.json")).unwrap()).unwrap();
    assert!(out.join("syn_00000_overlay.png").is_file());
    let grid = slice_image((64, 64), &SliceConfig { scales: vec![64], ..SliceConfig::default() }).unwrap();
    let verdicts = j["verdicts"].as_array().unwrap();
    assert_eq!(verdicts.len(), grid.len());
    assert!(verdicts.iter().all(|v| v["selected"] == true));
    let rle = j["mask_rle"].as_str().unwrap();
    let mask = rle_decode(rle, 64, 64).unwrap();
    assert_eq!(rle_encode(&mask), rle);
    assert_eq!(mask.count() as u64, j["defect_pixels"].as_u64().unwrap());

    let ev = f.path("eval");
    let text = ok(&["eval", "--data", s(&data), "--checkpoint", s(&ck), "--out", s(&ev)]);
    assert!(text.contains("ACC"), "{text}");
    let r: Value = serde_json::from_str(&fs::read_to_string(ev.join("report.json")).unwrap()).unwrap();
    let acc = r["mean_acc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let c = &r["confusion"];
    let total = ["tp", "fp", "tn", "fn"].iter().map(|k| c[*k].as_u64().unwrap()).sum::<u64>();
    assert_eq!(total, 64 * 64 * r["images"].as_array().unwrap().len() as u64);
}

#[test]
fn stage_one_only_checkpoint_has_only_stage_one_parameters() {
    let f = Fixture::new();
    let data = f.synth("data", 4);
    let (ck, log) = f.train(&data, "1", "s1.ckpt");
    assert!(log.lines().all(|l| !l.starts_with("stage 2")));
    let c = load_checkpoint(&ck).unwrap();
    let params: Vec<&str> = c.names().filter(|n| !n.ends_with(".arch") && *n != "pipeline.config").collect();
    assert!(!params.is_empty());
    assert!(params.iter().all(|n| n.starts_with("stage1.")), "{params:?}");
    assert!(c.get("stage2.arch").is_none());

    // Stage 2 is missing, so inspection must refuse rather than guess.
    let out = run(&["inspect", "--image", s(&data.join("images/syn_00000.png")), "--checkpoint", s(&ck), "--out", s(&f.path("x"))]);
    assert!(!out.status.success());
}

#[test]
fn invalid_config_key_is_reported_by_name() {
    let f = Fixture::new();
    let data = f.synth("data", 2);
    fs::write(f.path("bad.txt"), "working_size = 64\nlearning_rat = 0.1\n").unwrap();
    let out = run(&["train", "--data", s(&data), "--config", s(&f.path("bad.txt")), "--out", s(&f.path("x.ckpt"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("learning_rat"), "{err}");
    assert!(!f.path("x.ckpt").exists());
}

#[test]
fn missing_inputs_exit_nonzero() {
    let f = Fixture::new();
    let out = run(&["inspect", "--image", "/nonexistent.png", "--checkpoint", "/nonexistent.ckpt", "--out", s(&f.path("o"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let out = run(&["synth", "--count", "x", "--out", s(&f.path("o"))]);
    assert!(!out.status.success());
}
