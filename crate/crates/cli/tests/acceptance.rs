//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use bistream_core::autograd::Tape;
use bistream_core::btfb::{fuse, temporal_weights};
use bistream_core::colorspace::{lab_to_rgb, lab_to_srgb_pixel, render_rgb, rgb_to_lab, srgb_to_lab_pixel, LabImage};
use bistream_core::correspondence::{build_correspondence, warp_colors};
use bistream_core::features::FeatureExtractor;
use bistream_core::gradsuite;
use bistream_core::losses::{
    content_loss, edge_loss, flow_path, hem_loss, perceptual_loss, temporal_loss, total_loss, LossInputs, LossWeights,
};
use bistream_core::metrics::{cdc, evaluate, psnr, ssim, ssim_rgb, CdcConfig};
use bistream_core::msrb::MsrbModel;
use bistream_core::pipeline::clip::write_rgb;
use bistream_core::pipeline::train::{prepare_clip, Trainer};
use bistream_core::pipeline::{Clip, Colorizer, RunConfig, Sources};
use bistream_core::tensor::{btsr, DType, Tensor};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

/// splitmix64; the suite only needs reproducible noise.
struct Rng(u64);

impl Rng {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * (self.next() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next() % (hi - lo + 1) as u64) as usize
    }

    fn tensor(&mut self, shape: &[usize], lo: f64, hi: f64, dtype: DType) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| self.uniform(lo, hi)).collect(), dtype).unwrap()
    }
}

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn gradient_suite() -> Outcome {
    let results = gradsuite::run_suite(0).map_err(err)?;
    let worst = results
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .unwrap();
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name.as_str())
        .collect();
    check(failed.is_empty(), || format!("failing checks: {failed:?}"))?;
    Ok(format!(
        "{} checks, worst {} at {:.2e} (limit {:.0e})",
        results.len(),
        worst.name,
        worst.max_rel_err,
        gradsuite::TOLERANCE
    ))
}

fn correspondence_invariants() -> Outcome {
    let mut rng = Rng(11);
    let mut worst_sum = 0.0f64;
    let mut worst_hull = 0.0f64;
    let mut identity_rows = 0;
    for pair in 0..200 {
        let c = rng.range(4, 32);
        let (sh, sw) = (rng.range(2, 6), rng.range(2, 6));
        let (rh, rw) = (rng.range(2, 6), rng.range(2, 6));
        let temperature = [0.01, 0.1, 1e-3, 1.0][pair % 4];
        let fx = rng.tensor(&[sh, sw, c], -1.0, 1.0, DType::F32);
        let fr = rng.tensor(&[rh, rw, c], -1.0, 1.0, DType::F32);
        let m = build_correspondence(&fx, &fr, temperature).map_err(err)?;
        for row in m.rows() {
            worst_sum = worst_sum.max((row.iter().sum::<f64>() - 1.0).abs());
        }

        let ab = rng.tensor(&[rh, rw, 2], -1.1, 1.1, DType::F32);
        let warped = warp_colors(&m, &ab).map_err(err)?;
        for ch in 0..2 {
            let vals: Vec<f64> = ab.data().iter().skip(ch).step_by(2).copied().collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for &v in warped.data().iter().skip(ch).step_by(2) {
                worst_hull = worst_hull.max(lo - v).max(v - hi);
            }
        }

        let self_match = build_correspondence(&fx, &fx, 1e-4).map_err(err)?;
        let rows: Vec<&[f64]> = fx.data().chunks(c).collect();
        for (i, &j) in self_match.argmax_rows().iter().enumerate() {
            if rows.iter().enumerate().any(|(k, r)| k != i && *r == rows[i]) {
                continue;
            }
            check(i == j, || {
                format!("pair {pair}: row {i} matched {j} at temperature 1e-4")
            })?;
            identity_rows += 1;
        }
    }
    check(worst_sum <= 1e-5, || format!("row sum off by {worst_sum:.2e}"))?;
    check(worst_hull <= 1e-6, || {
        format!("warp leaves the convex hull by {worst_hull:.2e}")
    })?;
    Ok(format!(
        "200 pairs, max |row sum - 1| {worst_sum:.1e}, hull excess {worst_hull:.1e}, {identity_rows} identity rows"
    ))
}

fn btfb_properties() -> Outcome {
    let mut rng = Rng(12);
    let mut worst_swap = 0.0f64;
    for trial in 0..50 {
        let n = 2 + trial % 9;
        let (h, w) = (rng.range(1, 8), rng.range(1, 8));
        let w_f = rng.tensor(&[h, w, 2], -1.1, 1.1, DType::F32);
        let w_b = rng.tensor(&[h, w, 2], -1.1, 1.1, DType::F32);
        let mut prev_alpha = f64::INFINITY;
        for t in 0..n {
            let wt = temporal_weights(t, n).map_err(err)?;
            check(wt.alpha_f <= prev_alpha, || {
                format!("weight on w^f rises at t={t}, N={n}")
            })?;
            prev_alpha = wt.alpha_f;
            let p = fuse(&w_f, &w_b, &wt).map_err(err)?;
            if t == 0 {
                check(p.bit_eq(&w_f), || format!("p_0 != w^f (N={n})"))?;
            }
            if t == n - 1 {
                check(p.bit_eq(&w_b), || format!("p_N-1 != w^b (N={n})"))?;
            }
            for ((&v, &a), &b) in p.data().iter().zip(w_f.data()).zip(w_b.data()) {
                let slack = 1e-6;
                check(v >= a.min(b) - slack && v <= a.max(b) + slack, || {
                    format!("pixel value {v} outside [{a}, {b}] at t={t}, N={n}")
                })?;
            }
            let swapped = fuse(&w_b, &w_f, &temporal_weights(n - 1 - t, n).map_err(err)?).map_err(err)?;
            worst_swap = worst_swap.max(p.max_abs_diff(&swapped).map_err(err)?);
        }
    }
    check(worst_swap <= 1e-6, || format!("swap symmetry off by {worst_swap:.2e}"))?;
    Ok(format!("50 clips N in 2..=10, swap symmetry within {worst_swap:.1e}"))
}

fn loss_identities() -> Outcome {
    let mut rng = Rng(13);
    let tape = Tape::new();
    let extractor = FeatureExtractor::seeded(0);
    let (h, w) = (8, 8);
    let x_l = tape.param(rng.tensor(&[h, w, 1], -1.0, 1.0, DType::F64));
    let z_l = tape.param(rng.tensor(&[h, w, 1], -1.0, 1.0, DType::F64));
    let z_ab = tape.param(rng.tensor(&[h, w, 2], -1.0, 1.0, DType::F64));
    let y_ab = tape.param(rng.tensor(&[h, w, 2], -1.0, 1.0, DType::F64));
    let z_prev = tape.param(rng.tensor(&[h, w, 2], -1.0, 1.0, DType::F64));
    let flow = rng.tensor(&[h, w, 2], -1.5, 1.5, DType::F64);
    let val = |v: bistream_core::Result<bistream_core::autograd::Var<'_>>| -> Result<f64, String> {
        v.map_err(err)?.value().item().map_err(err)
    };

    let rgb = render_rgb(&z_l, &z_ab).map_err(err)?;
    let weights = LossWeights::default();
    let same = LossInputs {
        x_l: &x_l,
        z_l: &x_l,
        z_ab: &z_ab,
        y_ab: &z_ab,
        prev: Some((&z_ab, None)),
    };
    let zeros = [
        ("edge", val(edge_loss(&x_l, &x_l))?),
        ("hem", val(hem_loss(&z_ab, &z_ab, 0.5))?),
        ("content", val(content_loss(&z_ab, &z_ab))?),
        ("perceptual", val(perceptual_loss(&rgb, &rgb, &extractor))?),
        ("temporal", val(temporal_loss(&z_ab, &z_ab, None))?),
        ("total", total_loss(&same, &weights, &extractor).map_err(err)?.1.total),
    ];
    for (name, v) in zeros {
        check(v == 0.0, || format!("{name} loss is {v:e} on identical inputs"))?;
    }

    let r: Vec<f64> = z_ab
        .value()
        .data()
        .chunks(2)
        .zip(y_ab.value().data().chunks(2))
        .map(|(a, b)| (a[0] - b[0]).abs() + (a[1] - b[1]).abs())
        .collect();
    let mean_l1 = r.iter().sum::<f64>() / r.len() as f64;
    let hem_full = val(hem_loss(&z_ab, &y_ab, 1.0))?;
    check((hem_full - mean_l1).abs() <= 1e-7, || {
        format!("hem(1) {hem_full} vs mean L1 {mean_l1}")
    })?;

    let mut last = f64::INFINITY;
    for i in 1..=10 {
        let v = val(hem_loss(&z_ab, &y_ab, i as f64 / 10.0))?;
        check(v <= last, || format!("hem rises at fraction {}", i as f64 / 10.0))?;
        last = v;
    }

    check(
        (weights.lambda_edge, weights.lambda_hem, weights.lambda_c) == (2.0, 2.0, 1.0),
        || "default loss weights are not (2, 2, 1)".into(),
    )?;
    let inputs = LossInputs {
        x_l: &x_l,
        z_l: &z_l,
        z_ab: &z_ab,
        y_ab: &y_ab,
        prev: Some((&z_prev, Some(&flow))),
    };
    let (total, _) = total_loss(&inputs, &weights, &extractor).map_err(err)?;
    let edge = val(edge_loss(&x_l, &z_l))?;
    let hem = val(hem_loss(&z_ab, &y_ab, weights.hem_fraction))?;
    let content = val(content_loss(&z_ab, &y_ab))?;
    let perceptual = val(perceptual_loss(
        &render_rgb(&z_l, &z_ab).map_err(err)?,
        &render_rgb(&x_l, &y_ab).map_err(err)?,
        &extractor,
    ))?;
    let temporal = val(temporal_loss(&z_ab, &z_prev, Some(&flow)))?;
    let hand = 2.0 * edge
        + 2.0 * hem
        + 1.0 * (content + weights.lambda_percep * perceptual + weights.lambda_temporal * temporal);
    let got = total.value().item().map_err(err)?;
    check((got - hand).abs() <= 1e-7, || {
        format!("total {got} vs hand-weighted {hand}")
    })?;
    Ok(format!(
        "six losses zero on identical inputs, hem(1) off by {:.1e}, total off by {:.1e}",
        (hem_full - mean_l1).abs(),
        (got - hand).abs()
    ))
}

fn colorspace_round_trip() -> Outcome {
    let mut worst = 0.0f64;
    for r in 0..17 {
        for g in 0..17 {
            for b in 0..17 {
                let rgb = [r as f64 / 16.0, g as f64 / 16.0, b as f64 / 16.0];
                let back = lab_to_srgb_pixel(srgb_to_lab_pixel(rgb));
                for k in 0..3 {
                    worst = worst.max((back[k] - rgb[k]).abs());
                }
            }
        }
    }
    check(worst < 1e-4, || format!("round trip error {worst:e}"))?;
    let white = srgb_to_lab_pixel([1.0, 1.0, 1.0]);
    let off = (white[0] - 100.0).abs().max(white[1].abs()).max(white[2].abs());
    check(off <= 1e-6, || format!("white maps to {white:?}"))?;
    Ok(format!("17^3 lattice max error {worst:.1e}, white off by {off:.1e}"))
}

fn metric_identities() -> Outcome {
    let mut rng = Rng(14);
    let a = rng.tensor(&[24, 24, 1], 0.0, 1.0, DType::F64);
    let s = ssim(&a, &a).map_err(err)?;
    check(s == 1.0, || format!("ssim(a, a) = {s}"))?;
    let c = rng.tensor(&[24, 24, 3], 0.0, 1.0, DType::F64);
    let s = ssim_rgb(&c, &c).map_err(err)?;
    check(s == 1.0, || format!("ssim_rgb(a, a) = {s}"))?;

    let offset = 16.0 / 255.0;
    let gt = rng.tensor(&[24, 24, 3], 0.0, 1.0 - offset, DType::F64);
    let pred = gt.map(|v| v + offset);
    let db = psnr(&pred, &gt)
        .map_err(err)?
        .db()
        .ok_or("psnr reported identical frames")?;
    let closed_form = 20.0 * (255.0f64 / 16.0).log10();
    check((db - closed_form).abs() <= 0.01, || {
        format!("psnr {db} vs closed form {closed_form}")
    })?;

    let cfg = CdcConfig::default();
    let constant: Vec<Tensor> = (0..6).map(|_| Tensor::full(&[8, 8, 3], 0.4, DType::F64)).collect();
    let v = cdc(&constant, &cfg).map_err(err)?;
    check(v == 0.0, || format!("cdc of a constant clip = {v:e}"))?;

    let alternating: Vec<Tensor> = (0..6)
        .map(|t| Tensor::full(&[8, 8, 3], (t % 2) as f64, DType::F64))
        .collect();
    let got = cdc(&alternating, &cfg).map_err(err)?;
    let oracle = brute_force_cdc(&alternating, &cfg.strides);
    check((got - oracle).abs() <= 1e-10, || {
        format!("alternating cdc {got} vs oracle {oracle}")
    })?;
    Ok(format!(
        "psnr {db:.4} dB (closed form {closed_form:.4}), alternating cdc {got:.12}"
    ))
}

/// Histograms by counting 8-bit codes, JSD with natural log.
fn brute_force_cdc(frames: &[Tensor], strides: &[usize]) -> f64 {
    let hist = |f: &Tensor, ch: usize| -> Vec<f64> {
        let mut h = vec![0.0; 256];
        let px: Vec<f64> = f.data().iter().skip(ch).step_by(3).copied().collect();
        for v in &px {
            h[(v * 255.0).round() as usize] += 1.0;
        }
        h.iter().map(|c| c / px.len() as f64).collect()
    };
    let kl = |p: &[f64], m: &[f64]| -> f64 {
        p.iter()
            .zip(m)
            .filter(|(a, _)| **a > 0.0)
            .map(|(a, b)| a * (a / b).ln())
            .sum()
    };
    let mut per_stride = Vec::new();
    for &s in strides {
        let mut vals = Vec::new();
        for t in 0..frames.len() - s {
            let mut chans = 0.0;
            for ch in 0..3 {
                let (p, q) = (hist(&frames[t], ch), hist(&frames[t + s], ch));
                let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| (a + b) / 2.0).collect();
                chans += 0.5 * kl(&p, &m) + 0.5 * kl(&q, &m);
            }
            vals.push(chans / 3.0);
        }
        per_stride.push(vals.iter().sum::<f64>() / vals.len() as f64);
    }
    per_stride.iter().sum::<f64>() / per_stride.len() as f64
}

/// Two anti-aliased discs over a graded background, translating one pixel
/// per frame.
fn overfit_scene(x: f64, y: f64) -> [f64; 3] {
    let soft = 0.7;
    let d1 = ((x - 5.0).powi(2) + (y - 6.0).powi(2)).sqrt();
    let d2 = ((x - 11.0).powi(2) + (y - 10.0).powi(2)).sqrt();
    let s1 = 1.0 / (1.0 + ((d1 - 3.5) / soft).exp());
    let s2 = 1.0 / (1.0 + ((d2 - 3.5) / soft).exp());
    let bg = [55.0 + 0.8 * y, -25.0, 20.0];
    let (c1, c2) = ([75.0, 45.0, 30.0], [35.0, 10.0, -45.0]);
    let mut out = [0.0; 3];
    for k in 0..3 {
        out[k] = bg[k] * (1.0 - s1 - s2).max(0.0) + c1[k] * s1 + c2[k] * s2;
    }
    out
}

fn overfit_convergence() -> Outcome {
    let (h, w, n) = (16, 16, 4);
    let dir = tempfile::tempdir().map_err(err)?;
    let mut rgb = Vec::new();
    let mut ids = Vec::new();
    for t in 0..n {
        let (mut l, mut ab) = (Vec::new(), Vec::new());
        for y in 0..h {
            for x in 0..w {
                let [lv, a, b] = overfit_scene(x as f64 - t as f64, y as f64);
                l.push(lv);
                ab.extend([a, b]);
            }
        }
        let lab = LabImage::new(
            Tensor::new(&[h, w, 1], l, DType::F64).map_err(err)?,
            Tensor::new(&[h, w, 2], ab, DType::F64).map_err(err)?,
        )
        .map_err(err)?;
        rgb.push(lab_to_rgb(&lab).to_dtype(DType::F32));
        let id = format!("{t:03}");
        if t > 0 {
            let flow =
                Tensor::new(&[h, w, 2], (0..h * w).flat_map(|_| [-1.0, 0.0]).collect(), DType::F32).map_err(err)?;
            btsr::write(&flow_path(dir.path(), &id), &flow).map_err(err)?;
        }
        ids.push(id);
    }

    let config = RunConfig::default();
    let model = MsrbModel::init(config.msrb_config(), config.seed).map_err(err)?;
    let colorizer = Colorizer::new(model.clone(), config.clone()).map_err(err)?;
    let clip = prepare_clip(&colorizer, ids.clone(), &rgb, Some(dir.path())).map_err(err)?;
    let mut trainer = Trainer::new(model, &config).map_err(err)?;
    let initial = trainer.evaluate(&clip, 0).map_err(err)?.total;
    for _ in 0..300 {
        trainer.step(&clip, 0).map_err(err)?;
    }
    let last = trainer.evaluate(&clip, 0).map_err(err)?.total;
    let ratio = last / initial;

    let labs = rgb
        .iter()
        .map(rgb_to_lab)
        .collect::<bistream_core::Result<Vec<_>>>()
        .map_err(err)?;
    let frames = labs.iter().map(|l| l.l().clone()).collect();
    let eval_clip = Clip::new(frames, ids.clone(), labs[0].clone(), labs.last().cloned()).map_err(err)?;
    let trained = Colorizer::new(trainer.model.clone(), config.clone()).map_err(err)?;
    let sources = Sources {
        features_dir: None,
        priors_dir: Some(dir.path()),
    };
    let out: Vec<Tensor> = trained
        .colorize_clip(&eval_clip, &sources)
        .map_err(err)?
        .into_iter()
        .map(|r| r.rgb)
        .collect();
    let report = evaluate(
        &ids,
        &out,
        &rgb,
        &CdcConfig {
            bins: 256,
            strides: vec![1],
        },
    )
    .map_err(err)?;
    let db = report.psnr_mean.db().unwrap_or(f64::INFINITY);
    check(ratio < 0.1, || {
        format!("loss {initial:.4} -> {last:.4}, ratio {ratio:.4}")
    })?;
    check(db > 25.0, || format!("clip psnr {db:.2} dB"))?;
    Ok(format!(
        "loss {initial:.4} -> {last:.4} (ratio {ratio:.4}), clip psnr {db:.2} dB"
    ))
}

fn textured_l(h: usize, w: usize, phase: f64) -> Tensor {
    let mut l = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            l.push(50.0 + 25.0 * (0.37 * xf + phase).sin() * (0.23 * yf - phase).cos() + 10.0 * (0.11 * xf * yf).sin());
        }
    }
    Tensor::new(&[h, w, 1], l, DType::F32).unwrap()
}

fn constant_ab(h: usize, w: usize, a: f64, b: f64) -> Tensor {
    Tensor::new(&[h, w, 2], (0..h * w).flat_map(|_| [a, b]).collect(), DType::F32).unwrap()
}

fn identity_scenario() -> Outcome {
    let (h, w, n) = (48, 64, 4);
    let (a, b) = (30.0, -20.0);
    let r_f = LabImage::new(textured_l(h, w, 0.0), constant_ab(h, w, a, b)).map_err(err)?;
    let r_l = LabImage::new(textured_l(h, w, 1.3), constant_ab(h, w, -40.0, 50.0)).map_err(err)?;
    let frames = vec![r_f.l().clone(); n];
    let ids = (0..n).map(|t| format!("{t:03}")).collect();
    let clip = Clip::new(frames, ids, r_f, Some(r_l)).map_err(err)?;
    let config = RunConfig {
        temperature: 1e-4,
        ..RunConfig::default()
    };
    let colorizer = Colorizer::new(MsrbModel::zeros(config.msrb_config()).map_err(err)?, config).map_err(err)?;
    let out = colorizer.colorize_clip(&clip, &Sources::default()).map_err(err)?;
    let target = constant_ab(h, w, a, b);
    let off = out[0].lab.ab().max_abs_diff(&target).map_err(err)?;
    check(off <= 1e-3, || format!("ab at t=0 off by {off:e}"))?;
    Ok(format!("{h}x{w}, {n} frames, ab at t=0 within {off:.1e}"))
}

/// Frames and references for the CLI runs.
fn write_cli_clip(root: &Path) -> Result<(), String> {
    let (h, w, n) = (32, 32, 5);
    let frames = root.join("frames");
    fs::create_dir_all(&frames).map_err(err)?;
    for t in 0..n {
        let l = textured_l(h, w, 0.2 * t as f64);
        let lab = LabImage::new(l, Tensor::zeros(&[h, w, 2], DType::F32)).map_err(err)?;
        write_rgb(&frames.join(format!("f{t:03}.png")), &lab_to_rgb(&lab)).map_err(err)?;
    }
    let mut rng = Rng(15);
    for (name, phase) in [("ref_first.png", 0.0), ("ref_last.png", 0.8)] {
        let ab = rng.tensor(&[h, w, 2], -40.0, 40.0, DType::F32);
        let lab = LabImage::new(textured_l(h, w, phase), ab).map_err(err)?;
        write_rgb(&root.join(name), &lab_to_rgb(&lab)).map_err(err)?;
    }
    let config = RunConfig::default();
    let model = MsrbModel::init(config.msrb_config(), 7).map_err(err)?;
    model.weights().save(&root.join("ckpt")).map_err(err)
}

fn run_colorize(root: &Path, out: &str, ref_last: bool, threads: Option<&str>) -> Result<(), String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bistream"));
    cmd.arg("colorize")
        .arg("--frames")
        .arg(root.join("frames"))
        .arg("--ref-first")
        .arg(root.join("ref_first.png"))
        .arg("--ckpt")
        .arg(root.join("ckpt"))
        .arg("--out")
        .arg(root.join(out));
    if ref_last {
        cmd.arg("--ref-last").arg(root.join("ref_last.png"));
    }
    match threads {
        Some(n) => cmd.env("BISTREAM_THREADS", n),
        None => cmd.env_remove("BISTREAM_THREADS"),
    };
    let output = cmd.output().map_err(err)?;
    check(output.status.success(), || {
        format!("colorize failed: {}", String::from_utf8_lossy(&output.stderr))
    })
}

fn png_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(err)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .map_err(err)?;
    files.sort();
    files
        .into_iter()
        .map(|p| {
            Ok((
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).map_err(err)?,
            ))
        })
        .collect()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    write_cli_clip(dir.path())?;
    run_colorize(dir.path(), "run_a", true, None)?;
    run_colorize(dir.path(), "run_b", true, None)?;
    run_colorize(dir.path(), "run_c", true, Some("1"))?;
    let a = png_bytes(&dir.path().join("run_a"))?;
    check(a.len() == 5, || format!("expected 5 PNGs, found {}", a.len()))?;
    for other in ["run_b", "run_c"] {
        let b = png_bytes(&dir.path().join(other))?;
        check(a == b, || format!("{other} differs from run_a"))?;
    }
    Ok("3 runs (one single-threaded), 5 PNGs bitwise identical".into())
}

fn single_reference() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    write_cli_clip(dir.path())?;
    run_colorize(dir.path(), "single", false, None)?;
    let written = png_bytes(&dir.path().join("single"))?.len();
    check(written == 5, || format!("single-reference run wrote {written} PNGs"))?;

    let clip = bistream_core::pipeline::load_clip(
        &dir.path().join("frames"),
        &dir.path().join("ref_first.png"),
        None,
        None,
    )
    .map_err(err)?;
    let config = RunConfig::default();
    let model = MsrbModel::init(config.msrb_config(), 7).map_err(err)?;
    let out = Colorizer::new(model, config)
        .map_err(err)?
        .colorize_clip(&clip, &Sources::default())
        .map_err(err)?;
    for r in &out {
        check(r.warp.w_b.is_none() && r.warp.p.bit_eq(&r.warp.w_f), || {
            format!("frame {}: p differs from w^f", r.id)
        })?;
    }
    Ok(format!(
        "CLI run wrote {written} frames, p == w^f bitwise on all {}",
        out.len()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient suite", gradient_suite, Duration::from_secs(120)),
        (
            "correspondence invariants",
            correspondence_invariants,
            Duration::from_secs(60),
        ),
        ("btfb", btfb_properties, Duration::from_secs(10)),
        ("loss identities", loss_identities, Duration::from_secs(60)),
        ("colorspace", colorspace_round_trip, Duration::from_secs(60)),
        ("metrics", metric_identities, Duration::from_secs(60)),
        ("overfit convergence", overfit_convergence, Duration::from_secs(300)),
        ("identity scenario", identity_scenario, Duration::from_secs(10)),
        ("determinism", determinism, Duration::from_secs(120)),
        ("single reference", single_reference, Duration::from_secs(120)),
    ];
    let mut failures = 0;
    for (name, run, limit) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if elapsed <= limit {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {elapsed:.1?}, limit {limit:?}"))
            }
        });
        match outcome {
            Ok(detail) => println!("PASS  {name:28} {elapsed:>9.2?}  {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {name:28} {elapsed:>9.2?}  {detail}");
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
