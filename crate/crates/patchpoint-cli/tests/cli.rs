//! End-to-end tests of the `patchpoint` binary: spawn the real executable,
//! check files and exit codes. Everything runs on deliberately tiny sizes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use patchpoint_core::model::save_checkpoint;
use patchpoint_core::{ModelConfig, SuperPointNet};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_patchpoint"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary should spawn")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stderr:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Small synthesis config shared by the dataset-driven tests.
fn write_tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.json");
    std::fs::write(
        &path,
        r#"{
            "seed": 1,
            "dataset": {"count": 6, "procedural_backgrounds": 3},
            "synth": {
                "width": 96,
                "height": 72,
                "max_patches": 2,
                "radius_range": [8.0, 12.0],
                "source_radius_px": 32
            }
        }"#,
    )
    .unwrap();
    path
}

fn write_checkpoint(path: &Path) -> SuperPointNet {
    let net = SuperPointNet::new(ModelConfig::default(), 1).unwrap();
    save_checkpoint(path, &net, 0, 1).unwrap();
    net
}

#[test]
fn render_writes_previews_and_design_document() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin()
        .arg("render")
        .args(["--radius", "48"])
        .arg("--out")
        .arg(dir.path()));
    assert_exit(&out, 0);

    let mut bytes = Vec::new();
    for t in 0..4 {
        let path = dir.path().join(format!("design-{t}.png"));
        bytes.push(std::fs::read(&path).unwrap());
    }
    for a in 0..4 {
        for b in a + 1..4 {
            assert_ne!(bytes[a], bytes[b], "designs {a} and {b} render identically");
        }
    }
    let doc: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("designs.json")).unwrap()).unwrap();
    assert_eq!(doc["radius_px"], 48);
    assert_eq!(doc["designs"].as_array().unwrap().len(), 4);
}

#[test]
fn render_rejects_radius_below_minimum() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin()
        .arg("render")
        .args(["--radius", "4"])
        .arg("--out")
        .arg(dir.path()));
    assert_exit(&out, 2);
}

#[test]
fn invalid_worker_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin()
        .env("PATCHPOINT_WORKERS", "zero")
        .arg("render")
        .arg("--out")
        .arg(dir.path()));
    assert_exit(&out, 2);
}

#[test]
fn generate_is_deterministic_and_resumes_without_rewriting() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));

    for root in [&a, &b] {
        let out = run(bin()
            .arg("generate")
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(root)
            .args(["--count", "6", "--seed", "9"]));
        assert_exit(&out, 0);
    }
    for i in 0..6 {
        for sub in ["images", "labels"] {
            let ext = if sub == "images" { "png" } else { "json" };
            let rel = format!("{sub}/{i:08}.{ext}");
            assert_eq!(
                std::fs::read(a.join(&rel)).unwrap(),
                std::fs::read(b.join(&rel)).unwrap(),
                "{rel} differs between identically seeded runs"
            );
        }
    }

    // Resume: a corrupted-but-present record is left alone, missing ones are
    // regenerated bit-identically.
    std::fs::write(b.join("images/00000002.png"), b"junk").unwrap();
    for i in [4u32, 5] {
        std::fs::remove_file(b.join(format!("images/{i:08}.png"))).unwrap();
        std::fs::remove_file(b.join(format!("labels/{i:08}.json"))).unwrap();
    }
    let out = run(bin()
        .arg("generate")
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&b)
        .args(["--count", "6", "--seed", "9"]));
    assert_exit(&out, 0);
    assert_eq!(std::fs::read(b.join("images/00000002.png")).unwrap(), b"junk");
    for i in [4u32, 5] {
        let rel = format!("images/{i:08}.png");
        assert_eq!(
            std::fs::read(a.join(&rel)).unwrap(),
            std::fs::read(b.join(&rel)).unwrap()
        );
    }

    // A different count is a different dataset, not a resume.
    let out = run(bin()
        .arg("generate")
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&b)
        .args(["--count", "7", "--seed", "9"]));
    assert_exit(&out, 2);
}

#[test]
fn generate_rejects_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin()
        .arg("generate")
        .arg("--config")
        .arg(dir.path().join("nope.json"))
        .arg("--out")
        .arg(dir.path().join("d")));
    assert_exit(&out, 2);

    let config = dir.path().join("typo.json");
    std::fs::write(&config, r#"{"sed": 1}"#).unwrap();
    let out = run(bin()
        .arg("generate")
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("d")));
    assert_exit(&out, 2);
}

#[test]
fn generate_with_empty_background_dir_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("bg");
    std::fs::create_dir(&empty).unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        format!(
            r#"{{"dataset": {{"count": 2, "background_dir": {:?}}}}}"#,
            empty.to_str().unwrap()
        ),
    )
    .unwrap();
    let out = run(bin()
        .arg("generate")
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("d")));
    assert_exit(&out, 3);
}

#[test]
fn infer_writes_detection_json() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("net.ckpt");
    write_checkpoint(&ckpt);

    let shots = dir.path().join("shots");
    std::fs::create_dir(&shots).unwrap();
    for (name, w) in [("one.png", 64u32), ("two.png", 72)] {
        let img = image::RgbImage::from_fn(w, 48, |x, y| {
            image::Rgb([(x * 3) as u8, (y * 5) as u8, 128])
        });
        img.save(shots.join(name)).unwrap();
    }

    let out_path = dir.path().join("detections.json");
    let out = run(bin()
        .arg("infer")
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--images")
        .arg(format!("{}/*.png", shots.display()))
        .arg("--out")
        .arg(&out_path)
        .args(["--threshold", "0.9999"]));
    assert_exit(&out, 0);

    let doc: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&out_path).unwrap()).unwrap();
    let records = doc.as_array().unwrap();
    assert_eq!(records.len(), 2);
    for rec in records {
        assert!(rec["image"].is_string());
        assert!(rec["detections"].is_array());
    }
}

#[test]
fn infer_missing_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin()
        .arg("infer")
        .arg("--checkpoint")
        .arg(dir.path().join("nope.ckpt"))
        .args(["--images", "x.png"])
        .arg("--out")
        .arg(dir.path().join("out.json")));
    assert_exit(&out, 3);

    let ckpt = dir.path().join("net.ckpt");
    write_checkpoint(&ckpt);
    let out = run(bin()
        .arg("infer")
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--images")
        .arg(format!("{}/*.png", dir.path().display()))
        .arg("--out")
        .arg(dir.path().join("out.json")));
    assert_exit(&out, 3);
}

#[test]
fn validate_reports_both_conditions() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let data = dir.path().join("data");
    let out = run(bin()
        .arg("generate")
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&data)
        .args(["--count", "3"]));
    assert_exit(&out, 0);

    let ckpt = dir.path().join("net.ckpt");
    write_checkpoint(&ckpt);
    let out = run(bin()
        .arg("validate")
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--data")
        .arg(&data)
        .args(["--limit", "2"]));
    assert_exit(&out, 0);

    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["clean", "deteriorated"] {
        assert_eq!(doc[key]["condition"], key);
        assert_eq!(doc[key]["n_images"], 2);
        let d = doc[key]["detection_score"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&d));
    }
}

#[test]
fn sweep_writes_reports_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("net.ckpt");
    write_checkpoint(&ckpt);
    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        r#"{
            "seed": 3,
            "sweep": {
                "axis": "pitch",
                "levels": [0.0],
                "images_per_level": 1,
                "image_size": [160, 120]
            }
        }"#,
    )
    .unwrap();

    let out_dir = dir.path().join("sweep");
    let out = run(bin()
        .arg("sweep")
        .arg("--checkpoint")
        .arg(&ckpt)
        .args(["--axis", "pitch"])
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&out_dir));
    assert_exit(&out, 0);

    let reports: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("reports.json")).unwrap()).unwrap();
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0]["condition"], "pitch=0deg");
    assert_eq!(reports[0]["n_images"], 1);

    let csv = std::fs::read_to_string(out_dir.join("table.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("metric,"));
    assert!(out_dir.join("config.json").exists());
}
