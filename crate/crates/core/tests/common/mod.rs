#![allow(dead_code)]

use std::path::Path;

use bistream_core::colorspace::{lab_to_rgb, LabImage};
use bistream_core::pipeline::clip::write_rgb;
use bistream_core::{DType, Tensor};

pub fn textured_l(h: usize, w: usize, phase: f64) -> Tensor {
    let mut l = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            l.push(50.0 + 25.0 * (0.37 * xf + phase).sin() * (0.23 * yf - phase).cos() + 10.0 * (0.11 * xf * yf).sin());
        }
    }
    Tensor::new(&[h, w, 1], l, DType::F32).unwrap()
}

/// Chroma varying smoothly across the frame.
pub fn smooth_ab(h: usize, w: usize, phase: f64) -> Tensor {
    let mut ab = Vec::with_capacity(h * w * 2);
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64 / w as f64, y as f64 / h as f64);
            ab.push(40.0 * (3.0 * xf + phase).sin());
            ab.push(35.0 * (2.5 * yf - phase).cos());
        }
    }
    Tensor::new(&[h, w, 2], ab, DType::F32).unwrap()
}

pub fn lab(h: usize, w: usize, phase: f64) -> LabImage {
    LabImage::new(textured_l(h, w, phase), smooth_ab(h, w, phase)).unwrap()
}

/// `n` colour frames `f000.png…` in `dir`.
pub fn write_colour_clip(dir: &Path, h: usize, w: usize, n: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for t in 0..n {
        write_rgb(
            &dir.join(format!("f{t:03}.png")),
            &lab_to_rgb(&lab(h, w, 0.15 * t as f64)),
        )
        .unwrap();
    }
}

/// `n` grayscale frames in `dir/frames` plus `dir/ref_first.png` and
/// `dir/ref_last.png`.
pub fn write_gray_clip(dir: &Path, h: usize, w: usize, n: usize) {
    let frames = dir.join("frames");
    std::fs::create_dir_all(&frames).unwrap();
    for t in 0..n {
        let gray = LabImage::new(textured_l(h, w, 0.15 * t as f64), Tensor::zeros(&[h, w, 2], DType::F32)).unwrap();
        write_rgb(&frames.join(format!("f{t:03}.png")), &lab_to_rgb(&gray)).unwrap();
    }
    write_rgb(&dir.join("ref_first.png"), &lab_to_rgb(&lab(h, w, 0.0))).unwrap();
    write_rgb(
        &dir.join("ref_last.png"),
        &lab_to_rgb(&lab(h, w, 0.15 * (n - 1) as f64)),
    )
    .unwrap();
}
