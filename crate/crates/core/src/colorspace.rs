//! sRGB (D65) ↔ CIE 1976 L*a*b*.
//!
//! The reference white is the XYZ image of RGB (1, 1, 1) under the sRGB
//! primaries, so white maps to exactly `(100, 0, 0)`.

use std::sync::LazyLock;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

static XYZ_TO_RGB: LazyLock<[[f64; 3]; 3]> = LazyLock::new(|| invert3(&RGB_TO_XYZ));

static WHITE: LazyLock<[f64; 3]> = LazyLock::new(|| {
    let row = |r: [f64; 3]| r[0] + r[1] + r[2];
    [row(RGB_TO_XYZ[0]), row(RGB_TO_XYZ[1]), row(RGB_TO_XYZ[2])]
});

const DELTA: f64 = 6.0 / 29.0;

pub const L_MAX: f64 = 100.0;
pub const AB_MIN: f64 = -128.0;
pub const AB_MAX: f64 = 127.0;

/// Network-facing scale: `L/50 − 1` and `ab/110`.
pub const L_HALF_RANGE: f64 = 50.0;
pub const AB_SCALE: f64 = 110.0;

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            // cofactor of (j, i)
            let (r0, r1) = match j {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let (c0, c1) = match i {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let minor = m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            *v = sign * minor / det;
        }
    }
    inv
}

fn srgb_decode(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn srgb_encode(c: f64) -> f64 {
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

fn mat3(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// One sRGB pixel in `[0, 1]` to `(L, a, b)`.
pub fn srgb_to_lab_pixel(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_decode);
    let xyz = mat3(&RGB_TO_XYZ, lin);
    let w = *WHITE;
    let fx = lab_f(xyz[0] / w[0]);
    let fy = lab_f(xyz[1] / w[1]);
    let fz = lab_f(xyz[2] / w[2]);
    [
        (116.0 * fy - 16.0).clamp(0.0, L_MAX),
        500.0 * (fx - fy),
        200.0 * (fy - fz),
    ]
}

/// One `(L, a, b)` pixel to sRGB, clamped to `[0, 1]` after conversion.
pub fn lab_to_srgb_pixel(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let w = *WHITE;
    let xyz = [w[0] * lab_f_inv(fx), w[1] * lab_f_inv(fy), w[2] * lab_f_inv(fz)];
    mat3(&XYZ_TO_RGB, xyz).map(|c| srgb_encode(c.max(0.0)).clamp(0.0, 1.0))
}

/// A LAB image split into lightness (`H×W×1`, `[0,100]`) and chroma
/// (`H×W×2`, `[-128,127]`).
#[derive(Debug, Clone)]
pub struct LabImage {
    l: Tensor,
    ab: Tensor,
}

impl LabImage {
    pub fn new(l: Tensor, ab: Tensor) -> Result<Self> {
        let (h, w) = l.hw()?;
        if l.channels() != 1 || ab.shape() != [h, w, 2] {
            return Err(Error::shape("LabImage", l.shape(), ab.shape()));
        }
        if l.data().iter().any(|v| !(0.0..=L_MAX).contains(v)) {
            return Err(Error::invalid("L channel outside [0, 100]"));
        }
        if ab.data().iter().any(|v| !(AB_MIN..=AB_MAX).contains(v)) {
            return Err(Error::invalid("ab channels outside [-128, 127]"));
        }
        Ok(LabImage { l, ab })
    }

    pub fn l(&self) -> &Tensor {
        &self.l
    }

    pub fn ab(&self) -> &Tensor {
        &self.ab
    }

    pub fn hw(&self) -> (usize, usize) {
        self.l.hw().expect("validated on construction")
    }

    /// `(L/50 − 1, ab/110)`.
    pub fn normalized(&self) -> (Tensor, Tensor) {
        (normalize_l(&self.l), normalize_ab(&self.ab))
    }
}

pub fn normalize_l(l: &Tensor) -> Tensor {
    l.map(|v| v / L_HALF_RANGE - 1.0)
}

pub fn normalize_ab(ab: &Tensor) -> Tensor {
    ab.map(|v| v / AB_SCALE)
}

pub fn denormalize_ab(ab: &Tensor) -> Tensor {
    ab.map(|v| (v * AB_SCALE).clamp(AB_MIN, AB_MAX))
}

/// Valid normalized ab interval.
pub fn normalized_ab_range() -> (f64, f64) {
    (AB_MIN / AB_SCALE, AB_MAX / AB_SCALE)
}

fn check_rgb(rgb: &Tensor) -> Result<(usize, usize)> {
    let (h, w) = rgb.hw()?;
    if rgb.channels() != 3 {
        return Err(Error::invalid(format!(
            "expected an H×W×3 RGB image, got {:?}",
            rgb.shape()
        )));
    }
    if let Some(bad) = rgb.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("RGB value {bad} outside [0, 1]")));
    }
    Ok((h, w))
}

pub fn rgb_to_lab(rgb: &Tensor) -> Result<LabImage> {
    let (h, w) = check_rgb(rgb)?;
    let mut l = Vec::with_capacity(h * w);
    let mut ab = Vec::with_capacity(h * w * 2);
    for px in rgb.data().chunks_exact(3) {
        let [lv, a, b] = srgb_to_lab_pixel([px[0], px[1], px[2]]);
        l.push(lv);
        ab.push(a);
        ab.push(b);
    }
    let dtype = rgb.dtype();
    LabImage::new(
        Tensor::from_parts(vec![h, w, 1], l, dtype),
        Tensor::from_parts(vec![h, w, 2], ab, dtype),
    )
}

pub fn lab_to_rgb(lab: &LabImage) -> Tensor {
    let (h, w) = lab.hw();
    let mut out = Vec::with_capacity(h * w * 3);
    for (lv, ab) in lab.l.data().iter().zip(lab.ab.data().chunks_exact(2)) {
        out.extend_from_slice(&lab_to_srgb_pixel([*lv, ab[0], ab[1]]));
    }
    Tensor::from_parts(vec![h, w, 3], out, lab.l.dtype())
}

/// The L channel of `rgb` (`H×W×1`), the grayscale used throughout.
pub fn luminance_of(rgb: &Tensor) -> Result<Tensor> {
    Ok(rgb_to_lab(rgb)?.l)
}

/// Compose lightness with chroma, clamping chroma into range.
pub fn compose(l: &Tensor, ab: &Tensor) -> Result<LabImage> {
    let ab = ab.map(|v| v.clamp(AB_MIN, AB_MAX));
    let l = l.map(|v| v.clamp(0.0, L_MAX));
    LabImage::new(l, ab)
}

/// Differentiable sRGB rendering of network-normalized lightness
/// (`H×W×1`) and chroma (`H×W×2`). Agrees with [`lab_to_rgb`] up to rounding.
pub fn render_rgb<'t>(l_norm: &Var<'t>, ab_norm: &Var<'t>) -> Result<Var<'t>> {
    let dtype = l_norm.dtype();
    let tape = l_norm.tape();
    let lab = Var::concat(&[l_norm, ab_norm], 2)?;
    // (l, a, b) normalized -> (fx, fy, fz); weights are [cin][cout]
    let fy_l = L_HALF_RANGE / 116.0;
    let to_f = [
        [fy_l, fy_l, fy_l],
        [AB_SCALE / 500.0, 0.0, 0.0],
        [0.0, 0.0, -AB_SCALE / 200.0],
    ];
    let f_bias = (L_HALF_RANGE + 16.0) / 116.0;
    let w = *WHITE;
    let m = *XYZ_TO_RGB;
    let mut to_rgb = [[0.0; 3]; 3];
    for (j, row) in to_rgb.iter_mut().enumerate() {
        for (i, v) in row.iter_mut().enumerate() {
            *v = m[i][j] * w[j];
        }
    }
    let conv1 = |m: [[f64; 3]; 3]| tape.constant(Tensor::from_parts(vec![1, 1, 3, 3], m.concat(), dtype));
    let f = lab.conv2d(&conv1(to_f), None, 1, 0)?.add_scalar(f_bias);
    let xyz = f.pointwise("lab_f_inv", lab_f_inv, |t| {
        if t > DELTA {
            3.0 * t * t
        } else {
            3.0 * DELTA * DELTA
        }
    });
    let lin = xyz.conv2d(&conv1(to_rgb), None, 1, 0)?.clamp(0.0, 1.0);
    Ok(lin.pointwise("srgb_encode", srgb_encode, |c| {
        if c <= 0.0031308 {
            12.92
        } else {
            1.055 / 2.4 * c.powf(1.0 / 2.4 - 1.0)
        }
    }))
}
