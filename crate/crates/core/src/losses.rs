//! Training objective.
//!
//! All chroma terms work on network-normalized ab (`ab/110`), lightness terms
//! on `L/50 − 1`.

use std::path::{Path, PathBuf};

use crate::autograd::Var;
use crate::colorspace::render_rgb;
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::priors::sobel_magnitude;
use crate::tensor::{btsr, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_edge: f64,
    pub lambda_hem: f64,
    pub lambda_c: f64,
    pub hem_fraction: f64,
    pub lambda_percep: f64,
    pub lambda_temporal: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_edge: 2.0,
            lambda_hem: 2.0,
            lambda_c: 1.0,
            hem_fraction: 0.5,
            lambda_percep: 0.1,
            lambda_temporal: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_edge", self.lambda_edge),
            ("lambda_hem", self.lambda_hem),
            ("lambda_c", self.lambda_c),
            ("lambda_percep", self.lambda_percep),
            ("lambda_temporal", self.lambda_temporal),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        check_fraction(self.hem_fraction).map_err(|e| Error::Config(e.to_string()))
    }
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "hem fraction must lie in (0, 1], got {fraction}"
        )));
    }
    Ok(())
}

fn check_pair(op: &'static str, a: &Var<'_>, b: &Var<'_>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// `sqrt(mean((S(x) − S(z))²))` with `S` the Sobel magnitude of `H×W×1`
/// luminance maps.
pub fn edge_loss<'t>(x_l: &Var<'t>, z_l: &Var<'t>) -> Result<Var<'t>> {
    check_pair("edge_loss", x_l, z_l)?;
    let d = sobel_magnitude(x_l)?.sub(&sobel_magnitude(z_l)?)?;
    d.square().mean().sqrt()
}

/// Flat pixel indices of the `k` largest values, ties kept in index order.
fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order.truncate(k);
    order
}

/// Per-pixel channel-summed L1 residual (`H×W×1`).
fn residual_map<'t>(z: &Var<'t>, y: &Var<'t>) -> Result<Var<'t>> {
    let d = z.sub(y)?.abs();
    let c = *d.shape().last().unwrap_or(&1);
    let mut r = d.narrow(2, 0, 1)?;
    for ch in 1..c {
        r = r.add(&d.narrow(2, ch, 1)?)?;
    }
    Ok(r)
}

/// Mean of the largest `ceil(fraction·H·W)` per-pixel residuals.
pub fn hem_loss<'t>(z: &Var<'t>, y: &Var<'t>, fraction: f64) -> Result<Var<'t>> {
    check_pair("hem_loss", z, y)?;
    check_fraction(fraction)?;
    let r = residual_map(z, y)?;
    let n = r.value().numel();
    let k = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut mask = vec![0.0; n];
    for i in top_k(r.value().data(), k) {
        mask[i] = 1.0;
    }
    let mask = r.tape().constant(Tensor::new(r.shape(), mask, r.dtype())?);
    Ok(r.mul(&mask)?.sum().scale(1.0 / k as f64))
}

/// Mean absolute error.
pub fn content_loss<'t>(z: &Var<'t>, y: &Var<'t>) -> Result<Var<'t>> {
    check_pair("content_loss", z, y)?;
    Ok(z.sub(y)?.abs().mean())
}

/// Mean L1 distance between extractor features of two `H×W×3` renderings,
/// averaged over RGB channels and pyramid levels.
pub fn perceptual_loss<'t>(z_rgb: &Var<'t>, y_rgb: &Var<'t>, extractor: &FeatureExtractor) -> Result<Var<'t>> {
    check_pair("perceptual_loss", z_rgb, y_rgb)?;
    let c = *z_rgb.shape().last().unwrap_or(&1);
    let mut terms = Vec::new();
    for ch in 0..c {
        let fz = extractor.forward(&z_rgb.narrow(2, ch, 1)?)?;
        let fy = extractor.forward(&y_rgb.narrow(2, ch, 1)?)?;
        for (a, b) in fz.iter().zip(&fy) {
            terms.push(a.sub(b)?.abs().mean());
        }
    }
    let n = terms.len() as f64;
    let mut total = terms[0].clone();
    for t in &terms[1..] {
        total = total.add(t)?;
    }
    Ok(total.scale(1.0 / n))
}

/// Mean L1 between `z_t` and `z_{t−1}` warped by `flow`, over in-frame
/// samples. `flow` maps pixels of frame `t` to their position in frame
/// `t−1` (`H×W×2`, `(dx, dy)` in pixels). Without flow the identity is used.
pub fn temporal_loss<'t>(z_t: &Var<'t>, z_prev: &Var<'t>, flow: Option<&Tensor>) -> Result<Var<'t>> {
    check_pair("temporal_loss", z_t, z_prev)?;
    let (h, w) = z_t.value().hw()?;
    let zero;
    let flow = match flow {
        Some(f) => f,
        None => {
            zero = Tensor::zeros(&[h, w, 2], z_t.dtype());
            &zero
        }
    };
    let (warped, mask) = z_prev.flow_warp(flow)?;
    let count: f64 = mask.data().iter().sum();
    let masked = z_t.sub(&warped)?.abs().mul(&z_t.tape().constant(mask))?;
    Ok(masked.sum().scale(if count > 0.0 { 1.0 / count } else { 0.0 }))
}

pub fn flow_path(dir: &Path, frame_id: &str) -> PathBuf {
    dir.join(format!("{frame_id}_flow.btsr"))
}

/// Read `<frame-id>_flow.btsr` from `dir` if it exists.
pub fn load_flow(dir: &Path, frame_id: &str, hw: (usize, usize)) -> Result<Option<Tensor>> {
    let path = flow_path(dir, frame_id);
    if !path.exists() {
        return Ok(None);
    }
    let flow = btsr::read(&path)?;
    if flow.shape() != [hw.0, hw.1, 2] {
        return Err(Error::DimensionMismatch {
            what: format!("flow file {}", path.display()),
            expected: vec![hw.0, hw.1, 2],
            found: flow.shape().to_vec(),
        });
    }
    Ok(Some(flow))
}

/// Everything the objective needs for one frame.
pub struct LossInputs<'a, 't> {
    /// Input lightness, normalized (`H×W×1`).
    pub x_l: &'a Var<'t>,
    /// Lightness of the composed output (`H×W×1`).
    pub z_l: &'a Var<'t>,
    /// Predicted and ground-truth normalized ab (`H×W×2`).
    pub z_ab: &'a Var<'t>,
    pub y_ab: &'a Var<'t>,
    /// Previous frame prediction and optional flow into it.
    pub prev: Option<(&'a Var<'t>, Option<&'a Tensor>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct LossReport {
    pub total: f64,
    pub edge: f64,
    pub hem: f64,
    pub content: f64,
    pub perceptual: f64,
    pub temporal: f64,
}

impl LossReport {
    /// `λ_edge·edge + λ_hem·hem + λ_c·(content + λ_p·perceptual + λ_t·temporal)`.
    pub fn weighted(edge: f64, hem: f64, content: f64, perceptual: f64, temporal: f64, w: &LossWeights) -> f64 {
        let l_c = content + w.lambda_percep * perceptual + w.lambda_temporal * temporal;
        w.lambda_edge * edge + w.lambda_hem * hem + w.lambda_c * l_c
    }
}

pub fn total_loss<'t>(
    inputs: &LossInputs<'_, 't>,
    weights: &LossWeights,
    extractor: &FeatureExtractor,
) -> Result<(Var<'t>, LossReport)> {
    weights.validate()?;
    let edge = edge_loss(inputs.x_l, inputs.z_l)?;
    let hem = hem_loss(inputs.z_ab, inputs.y_ab, weights.hem_fraction)?;
    let content = content_loss(inputs.z_ab, inputs.y_ab)?;
    let perceptual = perceptual_loss(
        &render_rgb(inputs.z_l, inputs.z_ab)?,
        &render_rgb(inputs.x_l, inputs.y_ab)?,
        extractor,
    )?;
    let temporal = match inputs.prev {
        Some((prev, flow)) => Some(temporal_loss(inputs.z_ab, prev, flow)?),
        None => None,
    };

    let mut l_c = content.add(&perceptual.scale(weights.lambda_percep))?;
    if let Some(t) = &temporal {
        l_c = l_c.add(&t.scale(weights.lambda_temporal))?;
    }
    let total = edge
        .scale(weights.lambda_edge)
        .add(&hem.scale(weights.lambda_hem))?
        .add(&l_c.scale(weights.lambda_c))?;
    let report = LossReport {
        total: total.value().item()?,
        edge: edge.value().item()?,
        hem: hem.value().item()?,
        content: content.value().item()?,
        perceptual: perceptual.value().item()?,
        temporal: match &temporal {
            Some(t) => t.value().item()?,
            None => 0.0,
        },
    };
    Ok((total, report))
}
