//! Segmentation and edge priors for each frame.
//!
//! Masks come from exported BTSR files when available. Without a
//! segmentation file every label is equally likely; without an edge file the
//! normalized Sobel magnitude of the frame stands in.

use std::path::{Path, PathBuf};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::{btsr, DType, Tensor};

pub const DEFAULT_C_SEG: usize = 19;
const SEG_TOLERANCE: f64 = 1e-2;

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];

/// `3×3×1×2` kernel holding the horizontal and vertical Sobel filters.
pub fn sobel_kernel(dtype: DType) -> Tensor {
    let mut data = Vec::with_capacity(18);
    for (ky, row) in SOBEL_X.iter().enumerate() {
        for (kx, &gx) in row.iter().enumerate() {
            data.push(gx);
            data.push(SOBEL_X[kx][ky]);
        }
    }
    Tensor::from_parts(vec![3, 3, 1, 2], data, dtype)
}

/// Differentiable Sobel gradient magnitude of an `H×W×1` map, zero padded.
pub fn sobel_magnitude<'t>(x: &Var<'t>) -> Result<Var<'t>> {
    let k = x.tape().constant(sobel_kernel(x.dtype()));
    let g = x.conv2d(&k, None, 1, 1)?;
    let gx = g.narrow(2, 0, 1)?;
    let gy = g.narrow(2, 1, 1)?;
    gx.square().add(&gy.square())?.sqrt()
}

/// Sobel magnitude scaled into `[0, 1]` by its frame maximum.
pub fn sobel_edge_map(x: &Tensor) -> Result<Tensor> {
    let tape = crate::autograd::Tape::new();
    let mag = sobel_magnitude(&tape.constant(x.clone()))?.into_value();
    let max = mag.max_value();
    if max < 1e-8 {
        return Ok(Tensor::zeros(mag.shape(), mag.dtype()));
    }
    Ok(mag.map(|v| (v / max).min(1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegSource {
    Imported,
    UniformFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeSource {
    Imported,
    BuiltinSobel,
}

#[derive(Debug, Clone)]
pub struct PriorMasks {
    /// `H×W×C_seg` label probabilities.
    pub seg: Tensor,
    /// `H×W×1` edge strength in `[0, 1]`.
    pub edge: Tensor,
    pub seg_source: SegSource,
    pub edge_source: EdgeSource,
}

pub fn seg_path(dir: &Path, frame_id: &str) -> PathBuf {
    dir.join(format!("{frame_id}_seg.btsr"))
}

pub fn edge_path(dir: &Path, frame_id: &str) -> PathBuf {
    dir.join(format!("{frame_id}_edge.btsr"))
}

fn check_hw(what: &Path, t: &Tensor, h: usize, w: usize, c: usize) -> Result<()> {
    if t.shape() != [h, w, c] {
        return Err(Error::DimensionMismatch {
            what: format!("prior file {}", what.display()),
            expected: vec![h, w, c],
            found: t.shape().to_vec(),
        });
    }
    Ok(())
}

fn load_seg(path: &Path, h: usize, w: usize, c_seg: usize) -> Result<Tensor> {
    let t = btsr::read(path)?;
    check_hw(path, &t, h, w, c_seg)?;
    let mut out = Vec::with_capacity(t.numel());
    for (i, px) in t.data().chunks(c_seg).enumerate() {
        if px.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!(
                "{}: pixel {i} has a probability outside [0, 1]",
                path.display()
            )));
        }
        let total: f64 = px.iter().sum();
        if (total - 1.0).abs() >= SEG_TOLERANCE {
            return Err(Error::invalid(format!(
                "{}: pixel {i} probabilities sum to {total}",
                path.display()
            )));
        }
        out.extend(px.iter().map(|v| v / total));
    }
    Ok(Tensor::from_parts(t.shape().to_vec(), out, DType::F32))
}

fn load_edge(path: &Path, h: usize, w: usize) -> Result<Tensor> {
    let t = btsr::read(path)?;
    check_hw(path, &t, h, w, 1)?;
    if t.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid(format!(
            "{}: edge values outside [0, 1]",
            path.display()
        )));
    }
    Ok(t.to_dtype(DType::F32))
}

/// Masks for a frame with lightness `frame_l` (`H×W×1`).
pub fn load_masks(
    seg_file: Option<&Path>,
    edge_file: Option<&Path>,
    frame_l: &Tensor,
    c_seg: usize,
) -> Result<PriorMasks> {
    let (h, w) = frame_l.hw()?;
    if c_seg == 0 {
        return Err(Error::invalid("c_seg must be positive"));
    }
    let (seg, seg_source) = match seg_file {
        Some(p) => (load_seg(p, h, w, c_seg)?, SegSource::Imported),
        None => (
            Tensor::full(&[h, w, c_seg], 1.0 / c_seg as f64, DType::F32),
            SegSource::UniformFallback,
        ),
    };
    let (edge, edge_source) = match edge_file {
        Some(p) => (load_edge(p, h, w)?, EdgeSource::Imported),
        None => (sobel_edge_map(frame_l)?.to_dtype(DType::F32), EdgeSource::BuiltinSobel),
    };
    Ok(PriorMasks {
        seg,
        edge,
        seg_source,
        edge_source,
    })
}

/// Masks for `frame_id`, taking whichever sidecar files exist in `dir`.
pub fn masks_for(dir: Option<&Path>, frame_id: &str, frame_l: &Tensor, c_seg: usize) -> Result<PriorMasks> {
    let existing = |p: PathBuf| p.exists().then_some(p);
    let seg = dir.and_then(|d| existing(seg_path(d, frame_id)));
    let edge = dir.and_then(|d| existing(edge_path(d, frame_id)));
    load_masks(seg.as_deref(), edge.as_deref(), frame_l, c_seg)
}
