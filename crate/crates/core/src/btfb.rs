//! Bidirectional temporal fusion of the forward and backward warps.
//!
//! A frame close to the first reference leans on the forward warp and a
//! frame close to the last reference on the backward warp:
//! `α_f = (N−1−t)/(N−1)`, `α_b = 1 − α_f`.

use crate::error::{Error, Result};
use crate::tensor::{kernels, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionWeights {
    pub alpha_f: f64,
    pub alpha_b: f64,
    pub t: usize,
    pub n: usize,
}

/// Orientation of the distance weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightOrientation {
    /// Nearer reference gets more weight.
    #[default]
    Proximity,
    /// Forward warp weighted by `t/(N−1)`, i.e. by distance from the first
    /// reference. Kept for A/B comparisons only.
    EquationLiteral,
}

pub fn temporal_weights(t: usize, n: usize) -> Result<FusionWeights> {
    temporal_weights_oriented(t, n, WeightOrientation::Proximity)
}

pub fn temporal_weights_oriented(t: usize, n: usize, orientation: WeightOrientation) -> Result<FusionWeights> {
    if n < 2 {
        return Err(Error::invalid(format!("clip length must be at least 2, got {n}")));
    }
    if t >= n {
        return Err(Error::invalid(format!("frame index {t} out of range for clip of {n}")));
    }
    let span = (n - 1) as f64;
    let alpha_f = match orientation {
        WeightOrientation::Proximity => (n - 1 - t) as f64 / span,
        WeightOrientation::EquationLiteral => t as f64 / span,
    };
    Ok(FusionWeights {
        alpha_f,
        alpha_b: 1.0 - alpha_f,
        t,
        n,
    })
}

/// Weights for single-reference operation: the forward warp only.
pub fn forward_only(t: usize, n: usize) -> FusionWeights {
    FusionWeights {
        alpha_f: 1.0,
        alpha_b: 0.0,
        t,
        n,
    }
}

/// `α_f·w_f + α_b·w_b`. A zero weight returns the other map bit for bit.
pub fn fuse(w_f: &Tensor, w_b: &Tensor, weights: &FusionWeights) -> Result<Tensor> {
    if w_f.shape() != w_b.shape() {
        return Err(Error::shape("fuse", w_f.shape(), w_b.shape()));
    }
    if weights.alpha_b == 0.0 {
        return Ok(w_f.clone());
    }
    if weights.alpha_f == 0.0 {
        return Ok(w_b.clone());
    }
    let (af, ab) = (weights.alpha_f, weights.alpha_b);
    kernels::add(&w_f.map(|v| af * v), &w_b.map(|v| ab * v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DType;

    #[test]
    fn endpoints_and_midpoint() {
        let w = temporal_weights(0, 90).unwrap();
        assert_eq!((w.alpha_f, w.alpha_b), (1.0, 0.0));
        let w = temporal_weights(89, 90).unwrap();
        assert_eq!((w.alpha_f, w.alpha_b), (0.0, 1.0));
        let w = temporal_weights(4, 9).unwrap();
        assert_eq!((w.alpha_f, w.alpha_b), (0.5, 0.5));
    }

    #[test]
    fn literal_orientation_is_reversed() {
        let w = temporal_weights_oriented(0, 5, WeightOrientation::EquationLiteral).unwrap();
        assert_eq!((w.alpha_f, w.alpha_b), (0.0, 1.0));
    }

    #[test]
    fn invalid_arguments() {
        assert!(temporal_weights(0, 1).is_err());
        assert!(temporal_weights(5, 5).is_err());
    }

    #[test]
    fn hand_arithmetic() {
        let f = Tensor::full(&[2, 2, 2], 4.0, DType::F32);
        let b = Tensor::full(&[2, 2, 2], 8.0, DType::F32);
        let w = FusionWeights {
            alpha_f: 0.25,
            alpha_b: 0.75,
            t: 0,
            n: 2,
        };
        assert!(fuse(&f, &b, &w).unwrap().data().iter().all(|&v| v == 7.0));
        assert!(fuse(&f, &Tensor::zeros(&[2, 2, 1], DType::F32), &w).is_err());
    }

    #[test]
    fn zero_weight_returns_other_map_bitwise() {
        let f = Tensor::new(&[1, 1, 2], vec![-0.0, 0.3], DType::F32).unwrap();
        let b = Tensor::new(&[1, 1, 2], vec![0.9, -0.1], DType::F32).unwrap();
        assert!(fuse(&f, &b, &temporal_weights(0, 3).unwrap()).unwrap().bit_eq(&f));
        assert!(fuse(&f, &b, &temporal_weights(2, 3).unwrap()).unwrap().bit_eq(&b));
        assert!(fuse(&f, &b, &forward_only(2, 3)).unwrap().bit_eq(&f));
    }
}
