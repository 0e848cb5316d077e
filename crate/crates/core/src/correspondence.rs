//! Semantic correspondence between a frame and a reference, and the
//! warping of reference chroma through it.
//!
//! Feature vectors are mean-subtracted per channel, L2-normalized, and
//! compared by cosine similarity. Each row of the resulting matrix is a
//! softmax over `similarity / temperature`, so every frame position holds a
//! convex weighting of reference positions.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{kernels, DType, Tensor};

pub const DEFAULT_TEMPERATURE: f64 = 0.01;
pub const DEFAULT_TILE_ROWS: usize = 256;
const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct CorrespondenceMatrix {
    weights: Tensor,
    src_hw: (usize, usize),
    ref_hw: (usize, usize),
    temperature: f64,
}

impl CorrespondenceMatrix {
    /// `(h·w) × (h'·w')` row-stochastic weights.
    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn src_hw(&self) -> (usize, usize) {
        self.src_hw
    }

    pub fn ref_hw(&self) -> (usize, usize) {
        self.ref_hw
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.weights.shape()[1];
        &self.weights.data()[i * n..(i + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.data().chunks(self.weights.shape()[1])
    }

    /// Index of the largest entry in each row (first one on ties).
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.rows()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |best, (j, &v)| if v > best.1 { (j, v) } else { best },
                    )
                    .0
            })
            .collect()
    }
}

/// Per-channel mean-subtracted, L2-normalized `(h·w) × C` feature rows.
pub fn normalize_features(features: &Tensor) -> Result<Tensor> {
    let (h, w) = features.hw()?;
    let c = features.channels();
    let n = h * w;
    let mut mean = vec![0.0; c];
    for px in features.data().chunks(c) {
        for (m, &v) in mean.iter_mut().zip(px) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut out = Vec::with_capacity(n * c);
    for px in features.data().chunks(c) {
        let centred: Vec<f64> = px.iter().zip(&mean).map(|(v, m)| v - m).collect();
        let norm = centred.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
        out.extend(centred.iter().map(|v| v / norm));
    }
    // kept in f64: these rows only feed the similarity product
    Tensor::new(&[n, c], out, DType::F64)
}

pub fn build_correspondence(
    frame_features: &Tensor,
    ref_features: &Tensor,
    temperature: f64,
) -> Result<CorrespondenceMatrix> {
    build_correspondence_tiled(frame_features, ref_features, temperature, DEFAULT_TILE_ROWS)
}

/// As [`build_correspondence`], computing `tile_rows` rows at a time.
pub fn build_correspondence_tiled(
    frame_features: &Tensor,
    ref_features: &Tensor,
    temperature: f64,
    tile_rows: usize,
) -> Result<CorrespondenceMatrix> {
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if tile_rows == 0 {
        return Err(Error::invalid("tile_rows must be positive"));
    }
    let src_hw = frame_features.hw()?;
    let ref_hw = ref_features.hw()?;
    if frame_features.channels() != ref_features.channels() {
        return Err(Error::shape(
            "build_correspondence",
            frame_features.shape(),
            ref_features.shape(),
        ));
    }
    let c = frame_features.channels();
    let fx = normalize_features(frame_features)?;
    let fr = normalize_features(ref_features)?;
    let (rows, cols) = (src_hw.0 * src_hw.1, ref_hw.0 * ref_hw.1);
    let (fxd, frd) = (fx.data(), fr.data());

    let mut weights = vec![0.0; rows * cols];
    weights
        .par_chunks_mut(tile_rows * cols)
        .enumerate()
        .for_each(|(tile, block)| {
            for (k, row) in block.chunks_mut(cols).enumerate() {
                let i = tile * tile_rows + k;
                let a = &fxd[i * c..(i + 1) * c];
                for (j, out) in row.iter_mut().enumerate() {
                    let b = &frd[j * c..(j + 1) * c];
                    *out = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / temperature;
                }
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    total += *v;
                }
                row.iter_mut().for_each(|v| *v /= total);
            }
        });
    Ok(CorrespondenceMatrix {
        weights: Tensor::from_parts(vec![rows, cols], weights, frame_features.dtype()),
        src_hw,
        ref_hw,
        temperature,
    })
}

/// `C · r` per ab channel, reshaped to the frame's feature grid.
pub fn warp_colors(c: &CorrespondenceMatrix, ref_ab: &Tensor) -> Result<Tensor> {
    let (h, w) = ref_ab.hw()?;
    if (h, w) != c.ref_hw || ref_ab.channels() != 2 {
        return Err(Error::shape(
            "warp_colors",
            &[c.ref_hw.0, c.ref_hw.1, 2],
            ref_ab.shape(),
        ));
    }
    let weights = c.weights.to_dtype(ref_ab.dtype());
    let flat = ref_ab.reshape(&[h * w, 2])?;
    kernels::matmul(&weights, &flat)?.reshape(&[c.src_hw.0, c.src_hw.1, 2])
}

/// Bilinear resize of a feature-resolution warp to frame resolution.
pub fn upsample_warp(warped: &Tensor, target_hw: (usize, usize)) -> Result<Tensor> {
    kernels::bilinear_resample(warped, target_hw.0, target_hw.1)
}
