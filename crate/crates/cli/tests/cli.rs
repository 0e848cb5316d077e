use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bistream_core::colorspace::{lab_to_rgb, LabImage};
use bistream_core::pipeline::clip::write_rgb;
use bistream_core::{DType, Tensor};

fn bistream(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bistream"))
        .args(args)
        .env_remove("BISTREAM_THREADS")
        .output()
        .unwrap()
}

fn frame(h: usize, w: usize, phase: f64, colour: bool) -> Tensor {
    let mut l = Vec::new();
    let mut ab = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            l.push(50.0 + 30.0 * (0.4 * xf + phase).sin() * (0.3 * yf).cos());
            let s = if colour { 1.0 } else { 0.0 };
            ab.extend([s * 30.0 * (0.2 * yf + phase).sin(), s * -25.0 * (0.15 * xf).cos()]);
        }
    }
    let lab = LabImage::new(
        Tensor::new(&[h, w, 1], l, DType::F32).unwrap(),
        Tensor::new(&[h, w, 2], ab, DType::F32).unwrap(),
    )
    .unwrap();
    lab_to_rgb(&lab)
}

fn write_clip(dir: &Path, n: usize, colour: bool) {
    fs::create_dir_all(dir).unwrap();
    for t in 0..n {
        write_rgb(&dir.join(format!("{t:04}.png")), &frame(16, 16, 0.2 * t as f64, colour)).unwrap();
    }
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(bistream(&[]).status.code(), Some(2));
    assert_eq!(bistream(&["colorize", "--frames", "x"]).status.code(), Some(2));
    assert_eq!(bistream(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(bistream(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = bistream(&[
        "colorize",
        "--frames",
        path(&missing),
        "--ref-first",
        path(&missing.join("r.png")),
        "--out",
        path(&dir.path().join("out")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "temperature = 0.01\nno_such_key = 3\n").unwrap();
    let out = bistream(&[
        "train",
        "--data",
        path(dir.path()),
        "--out",
        path(&missing),
        "--config",
        path(&cfg),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
}

#[test]
fn train_colorize_eval_round() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_clip(&data, 3, true);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# tiny run\nmsrb.base_channels = 8\nepochs = 1\nbatch_size = 3\n").unwrap();
    let run = dir.path().join("run");
    let out = bistream(&[
        "train",
        "--data",
        path(&data),
        "--out",
        path(&run),
        "--config",
        path(&cfg),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("loss_curve.csv").exists());
    assert!(run.join("checkpoint/manifest.txt").exists());

    let gray = dir.path().join("gray");
    write_clip(&gray, 5, false);
    let pred = dir.path().join("pred");
    let out = bistream(&[
        "colorize",
        "--frames",
        path(&gray),
        "--ref-first",
        path(&data.join("0000.png")),
        "--ref-last",
        path(&data.join("0002.png")),
        "--out",
        path(&pred),
        "--config",
        path(&cfg),
        "--ckpt",
        path(&run.join("checkpoint")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_dir(&pred).unwrap().count(), 5);

    let report = dir.path().join("report.json");
    let out = bistream(&[
        "eval",
        "--pred",
        path(&pred),
        "--gt",
        path(&gray),
        "--report",
        path(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["frame_count"], 5);
    assert!(json["psnr_mean"].as_f64().is_some());
    assert!(json["ssim_mean"].as_f64().unwrap() <= 1.0);
    assert!(json["cdc"].as_f64().unwrap() >= 0.0);
    assert_eq!(json["frames"].as_array().unwrap().len(), 5);
}

#[test]
fn checkpoint_of_other_width_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_clip(&data, 2, true);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "msrb.base_channels = 8\nepochs = 0\n").unwrap();
    let run = dir.path().join("run");
    assert!(bistream(&[
        "train",
        "--data",
        path(&data),
        "--out",
        path(&run),
        "--config",
        path(&cfg)
    ])
    .status
    .success());
    let out = bistream(&[
        "colorize",
        "--frames",
        path(&data),
        "--ref-first",
        path(&data.join("0000.png")),
        "--out",
        path(&dir.path().join("pred")),
        "--ckpt",
        path(&run.join("checkpoint")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gradcheck_passes() {
    let out = bistream(&["gradcheck"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().count() > 20);
    assert!(!text.contains("FAIL"));
}
