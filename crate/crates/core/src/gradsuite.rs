//! The full finite-difference suite: every primitive op, every loss term,
//! and the MSRB forward pass composed with the total loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::Var;
use crate::colorspace::render_rgb;
use crate::error::Result;
use crate::features::FeatureExtractor;
use crate::gradcheck::{finite_difference_check, finite_difference_check_at};
use crate::losses::{self, LossInputs, LossWeights};
use crate::msrb::{MsrbConfig, MsrbModel};
use crate::nn::ParamVars;
use crate::tensor::{DType, Tensor};

pub const EPS: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

struct Gen(ChaCha8Rng);

impl Gen {
    fn uniform(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| self.0.random_range(lo..hi)).collect(), DType::F64).expect("finite")
    }

    /// Values with magnitude in `[0.1, 1]` and random sign, clear of the
    /// kinks of relu / abs.
    fn away_from_zero(&mut self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let m = self.0.random_range(0.1..1.0);
                if self.0.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect();
        Tensor::new(shape, data, DType::F64).expect("finite")
    }
}

/// `Σ y ⊙ r` for a fixed random `r`, turning any output into a scalar with a
/// non-trivial gradient.
fn project<'t>(y: &Var<'t>, r: &Tensor) -> Result<Var<'t>> {
    y.mul(&y.tape().constant(r.reshape(y.shape())?)).map(|v| v.sum())
}

fn weights_for(g: &mut Gen, shape: &[usize]) -> Tensor {
    g.uniform(&[shape.iter().product()], -1.0, 1.0)
}

pub fn run_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut g = Gen(ChaCha8Rng::seed_from_u64(seed));
    let mut out = Vec::new();
    let mut record = |name: &str, err: Result<f64>| -> Result<()> {
        out.push(CheckResult {
            name: name.to_string(),
            max_rel_err: err?,
        });
        Ok(())
    };

    // primitive ops
    let x = g.uniform(&[8, 8, 3], -1.0, 1.0);
    let w = g.uniform(&[3, 3, 3, 4], -0.5, 0.5);
    let b = g.uniform(&[4], -0.5, 0.5);
    let r8 = weights_for(&mut g, &[8, 8, 4]);
    let r4 = weights_for(&mut g, &[4, 4, 4]);
    record(
        "conv2d/input",
        finite_difference_check(
            |v| {
                let t = v.tape();
                project(
                    &v.conv2d(&t.constant(w.clone()), Some(&t.constant(b.clone())), 1, 1)?,
                    &r8,
                )
            },
            &x,
            EPS,
        ),
    )?;
    record(
        "conv2d/weight",
        finite_difference_check(
            |v| {
                let t = v.tape();
                project(
                    &t.constant(x.clone()).conv2d(v, Some(&t.constant(b.clone())), 1, 1)?,
                    &r8,
                )
            },
            &w,
            EPS,
        ),
    )?;
    record(
        "conv2d/bias",
        finite_difference_check(
            |v| {
                let t = v.tape();
                project(
                    &t.constant(x.clone()).conv2d(&t.constant(w.clone()), Some(v), 1, 1)?,
                    &r8,
                )
            },
            &b,
            EPS,
        ),
    )?;
    record(
        "conv2d/stride2",
        finite_difference_check(
            |v| {
                let t = v.tape();
                project(&v.conv2d(&t.constant(w.clone()), None, 2, 1)?, &r4)
            },
            &x,
            EPS,
        ),
    )?;

    let xs = g.away_from_zero(&[8, 8, 2]);
    let r = weights_for(&mut g, &[8, 8, 2]);
    record("relu", finite_difference_check(|v| project(&v.relu(), &r), &xs, EPS))?;
    record("abs", finite_difference_check(|v| project(&v.abs(), &r), &xs, EPS))?;
    record(
        "square",
        finite_difference_check(|v| project(&v.square(), &r), &xs, EPS),
    )?;
    let pos = g.uniform(&[8, 8, 2], 0.2, 2.0);
    record("sqrt", finite_difference_check(|v| project(&v.sqrt()?, &r), &pos, EPS))?;
    record(
        "clamp",
        finite_difference_check(|v| project(&v.clamp(-0.5, 0.5), &r), &xs, EPS),
    )?;
    record(
        "scale",
        finite_difference_check(|v| project(&v.scale(-1.7), &r), &xs, EPS),
    )?;
    record(
        "add_scalar",
        finite_difference_check(|v| project(&v.add_scalar(0.3), &r), &xs, EPS),
    )?;
    record("sum", finite_difference_check(|v| Ok(v.sum().square()), &xs, EPS))?;
    record("mean", finite_difference_check(|v| Ok(v.mean().square()), &xs, EPS))?;
    let other = g.uniform(&[8, 8, 2], -1.0, 1.0);
    record(
        "add",
        finite_difference_check(
            |v| project(&v.add(&v.tape().constant(other.clone()))?.square(), &r),
            &xs,
            EPS,
        ),
    )?;
    record(
        "sub",
        finite_difference_check(
            |v| project(&v.tape().constant(other.clone()).sub(v)?.square(), &r),
            &xs,
            EPS,
        ),
    )?;
    record("mul", finite_difference_check(|v| project(&v.mul(v)?, &r), &xs, EPS))?;
    record(
        "reshape",
        finite_difference_check(|v| project(&v.reshape(&[16, 8])?.square(), &r), &xs, EPS),
    )?;
    let rn = weights_for(&mut g, &[8, 3, 2]);
    record(
        "narrow",
        finite_difference_check(|v| project(&v.narrow(1, 2, 3)?.square(), &rn), &xs, EPS),
    )?;
    let rc = weights_for(&mut g, &[8, 8, 5]);
    record(
        "concat",
        finite_difference_check(
            |v| {
                let c = v.tape().constant(x.clone());
                project(&Var::concat(&[v, &c], 2)?.square(), &rc)
            },
            &xs,
            EPS,
        ),
    )?;

    let m = g.uniform(&[8, 8], -2.0, 2.0);
    let rm = weights_for(&mut g, &[8, 8]);
    record(
        "softmax_rows",
        finite_difference_check(|v| project(&v.softmax_rows()?, &rm), &m, EPS),
    )?;
    let rhs = g.uniform(&[8, 5], -1.0, 1.0);
    let rmm = weights_for(&mut g, &[8, 5]);
    record(
        "matmul/lhs",
        finite_difference_check(|v| project(&v.matmul(&v.tape().constant(rhs.clone()))?, &rmm), &m, EPS),
    )?;
    record(
        "matmul/rhs",
        finite_difference_check(|v| project(&v.tape().constant(m.clone()).matmul(v)?, &rmm), &rhs, EPS),
    )?;

    let rd = weights_for(&mut g, &[3, 5, 2]);
    let ru = weights_for(&mut g, &[13, 11, 2]);
    record(
        "resample/down",
        finite_difference_check(|v| project(&v.resample(3, 5)?, &rd), &xs, EPS),
    )?;
    record(
        "resample/up",
        finite_difference_check(|v| project(&v.resample(13, 11)?, &ru), &xs, EPS),
    )?;

    // fractional flow keeps samples off the integer grid
    let flow = {
        let u = g.uniform(&[8, 8, 2], -1.5, 1.5);
        u.map(|v| v + if v.fract().abs() < 0.1 { 0.25 } else { 0.0 })
    };
    record(
        "flow_warp",
        finite_difference_check(|v| project(&v.flow_warp(&flow)?.0, &r), &xs, EPS),
    )?;

    let l_norm = g.uniform(&[8, 8, 1], -0.8, 0.8);
    let ab_norm = g.uniform(&[8, 8, 2], -0.3, 0.3);
    let rr = weights_for(&mut g, &[8, 8, 3]);
    record(
        "pointwise/render_rgb",
        finite_difference_check(
            |v| project(&render_rgb(&v.tape().constant(l_norm.clone()), v)?, &rr),
            &ab_norm,
            EPS,
        ),
    )?;

    // loss terms
    let extractor = FeatureExtractor::seeded(seed);
    let x_l = g.uniform(&[8, 8, 1], -0.9, 0.9);
    let z_l = g.uniform(&[8, 8, 1], -0.9, 0.9);
    record(
        "loss/edge",
        finite_difference_check(|v| losses::edge_loss(&v.tape().constant(x_l.clone()), v), &z_l, EPS),
    )?;
    let z_ab = g.uniform(&[8, 8, 2], -0.5, 0.5);
    let y_ab = g.uniform(&[8, 8, 2], -0.5, 0.5);
    let prev_ab = g.uniform(&[8, 8, 2], -0.5, 0.5);
    record(
        "loss/hem",
        finite_difference_check(
            |v| losses::hem_loss(v, &v.tape().constant(y_ab.clone()), 0.5),
            &z_ab,
            EPS,
        ),
    )?;
    record(
        "loss/content",
        finite_difference_check(
            |v| losses::content_loss(v, &v.tape().constant(y_ab.clone())),
            &z_ab,
            EPS,
        ),
    )?;
    let z_rgb = g.uniform(&[8, 8, 3], 0.05, 0.95);
    let y_rgb = g.uniform(&[8, 8, 3], 0.05, 0.95);
    record(
        "loss/perceptual",
        finite_difference_check(
            |v| losses::perceptual_loss(v, &v.tape().constant(y_rgb.clone()), &extractor),
            &z_rgb,
            EPS,
        ),
    )?;
    record(
        "loss/temporal",
        finite_difference_check(
            |v| losses::temporal_loss(v, &v.tape().constant(prev_ab.clone()), Some(&flow)),
            &z_ab,
            EPS,
        ),
    )?;
    record(
        "loss/temporal/previous",
        finite_difference_check(
            |v| losses::temporal_loss(&v.tape().constant(z_ab.clone()), v, Some(&flow)),
            &prev_ab,
            EPS,
        ),
    )?;
    let weights = LossWeights::default();
    record(
        "loss/total",
        finite_difference_check(
            |v| {
                let t = v.tape();
                let (xl, y, p) = (
                    t.constant(x_l.clone()),
                    t.constant(y_ab.clone()),
                    t.constant(prev_ab.clone()),
                );
                let inputs = LossInputs {
                    x_l: &xl,
                    z_l: &xl,
                    z_ab: v,
                    y_ab: &y,
                    prev: Some((&p, Some(&flow))),
                };
                Ok(losses::total_loss(&inputs, &weights, &extractor)?.0)
            },
            &z_ab,
            EPS,
        ),
    )?;

    // whole pipeline: MSRB forward + total loss, w.r.t. sampled parameters
    let cfg = MsrbConfig {
        base_channels: 8,
        unet_depth: 2,
        c_seg: 3,
        share_level_weights: false,
    };
    let model = MsrbModel::init(cfg, seed)?.to_dtype(DType::F64);
    let input = g.uniform(&[8, 8, cfg.input_channels()], -0.4, 0.4);
    let target = g.uniform(&[8, 8, 2], -0.4, 0.4);
    let l_in = input.reshape(&[64, cfg.input_channels()])?;
    let x_l_in = Tensor::new(
        &[8, 8, 1],
        l_in.data().chunks(cfg.input_channels()).map(|p| p[0]).collect(),
        DType::F64,
    )?;
    for name in [
        "level1.out.weight",
        "level1.inc.a.weight",
        "level2.up1.b.bias",
        "level3.inc.b.weight",
    ] {
        let param = model.weights().get(name).expect("parameter exists").clone();
        let coords: Vec<usize> = (0..12).map(|_| g.0.random_range(0..param.numel())).collect();
        record(
            &format!("msrb+total/{name}"),
            finite_difference_check_at(
                |v| {
                    let t = v.tape();
                    let mut params = ParamVars::new(t, model.weights(), false);
                    params.set(name, v.clone());
                    let z = model.forward(&params, &t.constant(input.clone()))?.z_full;
                    let (xl, y) = (t.constant(x_l_in.clone()), t.constant(target.clone()));
                    let inputs = LossInputs {
                        x_l: &xl,
                        z_l: &xl,
                        z_ab: &z,
                        y_ab: &y,
                        prev: None,
                    };
                    Ok(losses::total_loss(&inputs, &weights, &extractor)?.0)
                },
                &param,
                EPS,
                &coords,
            ),
        )?;
    }
    Ok(out)
}
