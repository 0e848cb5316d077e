//! PSNR, SSIM and the CDC temporal-consistency index on RGB in `[0, 1]`.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// PSNR in dB, or `Identical` when the images match exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Identical,
    Db(f64),
}

impl Psnr {
    pub fn db(&self) -> Option<f64> {
        match self {
            Psnr::Identical => None,
            Psnr::Db(v) => Some(*v),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Identical => s.serialize_str("identical"),
            Psnr::Db(v) => s.serialize_f64(*v),
        }
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// `10·log10(1/MSE)` over every value.
pub fn psnr(pred: &Tensor, gt: &Tensor) -> Result<Psnr> {
    check_same("psnr", pred, gt)?;
    let n = pred.numel() as f64;
    let mse = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(Psnr::Identical);
    }
    Ok(Psnr::Db(-10.0 * mse.log10()))
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable Gaussian filtering over the valid region of an `h×w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x0 in 0..ow {
            rows[y * ow + x0] = (0..SSIM_WINDOW).map(|k| g[k] * x[y * w + x0 + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = (0..SSIM_WINDOW).map(|k| g[k] * rows[(y0 + k) * ow + x0]).sum();
        }
    }
    out
}

/// Mean SSIM of two single-channel planes given as `H×W` or `H×W×1`.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same("ssim", a, b)?;
    let (h, w) = match a.shape() {
        [h, w] | [h, w, 1] => (*h, *w),
        s => {
            return Err(Error::invalid(format!(
                "ssim expects a single-channel plane, got {s:?}"
            )))
        }
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels, got {h}×{w}"
        )));
    }
    let g = gaussian_window();
    let (x, y) = (a.data(), b.data());
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
    let mx = filter_valid(x, h, w, &g);
    let my = filter_valid(y, h, w, &g);
    let exx = filter_valid(&prod(x, x), h, w, &g);
    let eyy = filter_valid(&prod(y, y), h, w, &g);
    let exy = filter_valid(&prod(x, y), h, w, &g);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let n = mx.len();
    let mut total = 0.0;
    for i in 0..n {
        let vx = exx[i] - mx[i] * mx[i];
        let vy = eyy[i] - my[i] * my[i];
        let cxy = exy[i] - mx[i] * my[i];
        let num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2);
        let den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
        total += num / den;
    }
    Ok(total / n as f64)
}

/// SSIM of two `H×W×C` images, averaged over channels.
pub fn ssim_rgb(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same("ssim", a, b)?;
    let c = a.channels();
    let mut total = 0.0;
    for ch in 0..c {
        let pa = crate::tensor::kernels::narrow(a, 2, ch, 1)?;
        let pb = crate::tensor::kernels::narrow(b, 2, ch, 1)?;
        total += ssim(&pa, &pb)?;
    }
    Ok(total / c as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdcConfig {
    pub bins: usize,
    pub strides: Vec<usize>,
}

impl Default for CdcConfig {
    fn default() -> Self {
        CdcConfig {
            bins: 256,
            strides: vec![1, 2, 4],
        }
    }
}

pub const CDC_MIN_FRAMES: usize = 5;

fn histograms(frame: &Tensor, bins: usize) -> Vec<Vec<f64>> {
    let c = frame.channels();
    let mut h = vec![vec![0.0; bins]; c];
    let top = (bins - 1) as f64;
    for px in frame.data().chunks_exact(c) {
        for (ch, &v) in px.iter().enumerate() {
            let bin = (v.clamp(0.0, 1.0) * top).round() as usize;
            h[ch][bin] += 1.0;
        }
    }
    let n = (frame.numel() / c) as f64;
    for hist in &mut h {
        hist.iter_mut().for_each(|v| *v /= n);
    }
    h
}

/// Jensen–Shannon divergence, natural log.
pub fn jsd(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            total += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            total += 0.5 * b * (b / m).ln();
        }
    }
    total.max(0.0)
}

/// Mean over strides of the mean channel-averaged JSD between the colour
/// histograms of frames `t` and `t+s`.
pub fn cdc(frames: &[Tensor], config: &CdcConfig) -> Result<f64> {
    if frames.len() < CDC_MIN_FRAMES {
        return Err(Error::invalid(format!(
            "cdc needs at least {CDC_MIN_FRAMES} frames, got {}",
            frames.len()
        )));
    }
    if config.bins < 2 || config.strides.is_empty() || config.strides.iter().any(|&s| s == 0 || s >= frames.len()) {
        return Err(Error::invalid(format!("invalid cdc settings {config:?}")));
    }
    for f in &frames[1..] {
        check_same("cdc", &frames[0], f)?;
    }
    let hists: Vec<_> = frames.iter().map(|f| histograms(f, config.bins)).collect();
    let mut total = 0.0;
    for &s in &config.strides {
        let mut per_stride = 0.0;
        for t in 0..frames.len() - s {
            let (a, b) = (&hists[t], &hists[t + s]);
            let c = a.len() as f64;
            per_stride += a.iter().zip(b).map(|(p, q)| jsd(p, q)).sum::<f64>() / c;
        }
        total += per_stride / (frames.len() - s) as f64;
    }
    Ok(total / config.strides.len() as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameMetrics {
    pub id: String,
    pub psnr: Psnr,
    pub ssim: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    /// Mean over frames with a finite PSNR; `identical` if there are none.
    pub psnr_mean: Psnr,
    pub ssim_mean: f64,
    /// `null` for clips shorter than the CDC minimum.
    pub cdc: Option<f64>,
    pub frame_count: usize,
    pub frames: Vec<FrameMetrics>,
}

/// Metrics of predicted frames against ground truth; CDC is taken over the
/// predictions.
pub fn evaluate(ids: &[String], pred: &[Tensor], gt: &[Tensor], config: &CdcConfig) -> Result<EvalReport> {
    if pred.len() != gt.len() || ids.len() != pred.len() {
        return Err(Error::invalid(format!(
            "{} predicted frames but {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("no frames to evaluate"));
    }
    let mut frames = Vec::with_capacity(pred.len());
    for ((id, p), g) in ids.iter().zip(pred).zip(gt) {
        frames.push(FrameMetrics {
            id: id.clone(),
            psnr: psnr(p, g)?,
            ssim: ssim_rgb(p, g)?,
        });
    }
    let finite: Vec<f64> = frames.iter().filter_map(|f| f.psnr.db()).collect();
    let psnr_mean = if finite.is_empty() {
        Psnr::Identical
    } else {
        Psnr::Db(finite.iter().sum::<f64>() / finite.len() as f64)
    };
    let ssim_mean = frames.iter().map(|f| f.ssim).sum::<f64>() / frames.len() as f64;
    let cdc = if pred.len() >= CDC_MIN_FRAMES {
        Some(cdc(pred, config)?)
    } else {
        None
    };
    Ok(EvalReport {
        psnr_mean,
        ssim_mean,
        cdc,
        frame_count: frames.len(),
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DType;

    fn plane(h: usize, w: usize, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = (0..h * w).map(|i| f((i / w) as f64, (i % w) as f64)).collect();
        Tensor::new(&[h, w, 1], data, DType::F64).unwrap()
    }

    fn pattern(i: f64, j: f64) -> f64 {
        0.5 + 0.4 * (0.7 * i).sin() * (0.3 * j).cos()
    }

    #[test]
    fn psnr_cases() {
        let a = Tensor::full(&[4, 4, 3], 0.25, DType::F64);
        assert_eq!(psnr(&a, &a).unwrap(), Psnr::Identical);
        let zero = Tensor::zeros(&[4, 4, 3], DType::F64);
        let one = Tensor::full(&[4, 4, 3], 1.0, DType::F64);
        assert_eq!(psnr(&zero, &one).unwrap(), Psnr::Db(0.0));
        let off = a.map(|v| v + 16.0 / 255.0);
        let db = psnr(&off, &a).unwrap().db().unwrap();
        assert!((db - 20.0 * (255.0f64 / 16.0).log10()).abs() < 1e-9, "{db}");
        assert!(psnr(&a, &Tensor::zeros(&[4, 3, 3], DType::F64)).is_err());
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let x = plane(24, 20, pattern);
        assert_eq!(ssim(&x, &x).unwrap(), 1.0);
        let y = plane(24, 20, |i, j| {
            0.5 + 0.3 * (0.45 * i + 0.2 * j).cos() + 0.1 * (1.3 * j).sin()
        });
        assert_eq!(ssim(&x, &y).unwrap(), ssim(&y, &x).unwrap());
        assert!(ssim(&plane(10, 20, pattern), &plane(10, 20, pattern)).is_err());
    }

    // Reference values from scikit-image's structural_similarity with
    // gaussian_weights, sigma 1.5, population covariance, data_range 1.
    #[test]
    fn ssim_matches_reference_implementation() {
        let x = plane(24, 20, pattern);
        let neg = x.map(|v| 1.0 - v);
        let got = ssim(&x, &neg).unwrap();
        assert!((got - -0.887_421_104_110_195_6).abs() < 1e-9, "{got}");
        let y = plane(24, 20, |i, j| {
            0.5 + 0.3 * (0.45 * i + 0.2 * j).cos() + 0.1 * (1.3 * j).sin()
        });
        let got = ssim(&x, &y).unwrap();
        assert!((got - -0.169_307_063_060_213_06).abs() < 1e-9, "{got}");
    }

    #[test]
    fn ssim_of_constants_is_the_luminance_term() {
        let (a, b) = (0.2, 0.7);
        let c1 = K1 * K1;
        let hand = (2.0 * a * b + c1) / (a * a + b * b + c1);
        let got = ssim(&plane(16, 16, |_, _| a), &plane(16, 16, |_, _| b)).unwrap();
        assert!((got - hand).abs() < 1e-12, "{got} vs {hand}");
        assert!((got - 0.528_390_869_647_203_8).abs() < 1e-12);
    }

    #[test]
    fn jsd_of_disjoint_deltas_is_ln2() {
        assert!((jsd(&[1.0, 0.0], &[0.0, 1.0]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(jsd(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
    }

    #[test]
    fn cdc_cases() {
        let cfg = CdcConfig::default();
        let constant: Vec<Tensor> = (0..6).map(|_| Tensor::full(&[4, 4, 3], 0.3, DType::F64)).collect();
        assert_eq!(cdc(&constant, &cfg).unwrap(), 0.0);
        assert!(cdc(&constant[..4], &cfg).is_err());

        let alternating: Vec<Tensor> = (0..6)
            .map(|t| Tensor::full(&[4, 4, 3], (t % 2) as f64, DType::F64))
            .collect();
        let got = cdc(&alternating, &cfg).unwrap();
        assert!((got - std::f64::consts::LN_2 / 3.0).abs() < 1e-12);

        let mut reversed = alternating.clone();
        reversed.reverse();
        assert_eq!(cdc(&reversed, &cfg).unwrap(), got);
    }

    #[test]
    fn report_serializes_sentinel() {
        let a = Tensor::full(&[12, 12, 3], 0.5, DType::F64);
        let r = evaluate(
            &["f0".into()],
            std::slice::from_ref(&a),
            std::slice::from_ref(&a),
            &CdcConfig::default(),
        )
        .unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["psnr_mean"], "identical");
        assert_eq!(json["ssim_mean"], 1.0);
        assert!(json["cdc"].is_null());
        assert_eq!(json["frames"][0]["id"], "f0");
    }
}
