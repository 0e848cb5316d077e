//! Small building blocks shared by the feature extractor and the MSRB.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

/// Checkpoint tensors placed on a tape, either as tracked leaves or constants.
pub struct ParamVars<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> ParamVars<'t> {
    pub fn new(tape: &'t Tape, ckpt: &Checkpoint, trainable: bool) -> Self {
        let vars = ckpt
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        ParamVars { vars }
    }

    pub fn get(&self, name: &str) -> Result<&Var<'t>> {
        self.vars
            .get(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var<'t>)> {
        self.vars.iter()
    }

    /// Replace one entry, e.g. to track a single tensor in a gradient check.
    pub fn set(&mut self, name: &str, var: Var<'t>) {
        self.vars.insert(name.to_string(), var);
    }
}

/// `prefix.weight` / `prefix.bias` convolution.
pub fn conv<'t>(x: &Var<'t>, p: &ParamVars<'t>, prefix: &str, stride: usize, pad: usize) -> Result<Var<'t>> {
    let w = p.get(&format!("{prefix}.weight"))?;
    let b = p.get(&format!("{prefix}.bias"))?;
    x.conv2d(w, Some(b), stride, pad)
}

pub fn conv_shapes(k: usize, cin: usize, cout: usize) -> [Vec<usize>; 2] {
    [vec![k, k, cin, cout], vec![cout]]
}

/// Gaussian weights with standard deviation `gain·sqrt(2/fan_in)`; biases
/// drawn at `bias_std`.
pub fn init_conv<R: Rng>(
    ckpt: &mut Checkpoint,
    rng: &mut R,
    prefix: &str,
    (k, cin, cout): (usize, usize, usize),
    gain: f64,
    bias_std: f64,
) {
    let [ws, bs] = conv_shapes(k, cin, cout);
    let std = gain * (2.0 / (k * k * cin) as f64).sqrt();
    ckpt.insert(format!("{prefix}.weight"), gaussian(rng, &ws, std));
    ckpt.insert(format!("{prefix}.bias"), gaussian(rng, &bs, bias_std));
}

pub fn gaussian<R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = if std > 0.0 {
        let dist = Normal::new(0.0, std).expect("positive std");
        (0..n).map(|_| dist.sample(rng)).collect()
    } else {
        vec![0.0; n]
    };
    Tensor::from_parts(shape.to_vec(), data, DType::F32)
}

pub fn check_conv(ckpt: &Checkpoint, prefix: &str, (k, cin, cout): (usize, usize, usize)) -> Result<()> {
    let [ws, bs] = conv_shapes(k, cin, cout);
    ckpt.expect(&format!("{prefix}.weight"), &ws)?;
    ckpt.expect(&format!("{prefix}.bias"), &bs)?;
    Ok(())
}
