//! Multi-scale recurrent block: three UNets refining chroma coarse to fine.
//!
//! Level 3 sees the input at 1/4 resolution, level 2 at 1/2 plus the
//! upsampled level-3 prediction, and level 1 at full resolution plus the
//! upsampled level-2 prediction. Each level predicts an ab residual over the
//! fused warp `p_t` at its own resolution; the sum is clamped to the valid
//! chroma range.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::colorspace::{normalize_l, normalized_ab_range};
use crate::error::{Error, Result};
use crate::nn::{self, ParamVars};
use crate::priors::PriorMasks;
use crate::tensor::{kernels, DType, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MsrbConfig {
    pub base_channels: usize,
    pub unet_depth: usize,
    pub c_seg: usize,
    pub share_level_weights: bool,
}

impl Default for MsrbConfig {
    fn default() -> Self {
        MsrbConfig {
            base_channels: 32,
            unet_depth: 3,
            c_seg: crate::priors::DEFAULT_C_SEG,
            share_level_weights: false,
        }
    }
}

impl MsrbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 8 {
            return Err(Error::Config(format!(
                "msrb.base_channels must be at least 8, got {}",
                self.base_channels
            )));
        }
        if self.unet_depth < 2 {
            return Err(Error::Config(format!(
                "msrb.unet_depth must be at least 2, got {}",
                self.unet_depth
            )));
        }
        if self.c_seg == 0 {
            return Err(Error::Config("c_seg must be positive".into()));
        }
        Ok(())
    }

    /// Channels of `I_t`: L, ab, segmentation, edge.
    pub fn input_channels(&self) -> usize {
        4 + self.c_seg
    }

    /// Channels entering a UNet (input plus upsampled coarser prediction).
    pub fn unet_in_channels(&self) -> usize {
        self.input_channels() + 2
    }

    fn width(&self, stage: usize) -> usize {
        self.base_channels << stage.min(2)
    }

    fn level_prefixes(&self) -> [String; 3] {
        if self.share_level_weights {
            ["shared".into(), "shared".into(), "shared".into()]
        } else {
            ["level1".into(), "level2".into(), "level3".into()]
        }
    }

    /// `(name suffix, (k, cin, cout))` for every conv of one UNet.
    fn unet_convs(&self, cin: usize) -> Vec<(String, (usize, usize, usize))> {
        let mut convs = vec![
            ("inc.a".to_string(), (3, cin, self.width(0))),
            ("inc.b".to_string(), (3, self.width(0), self.width(0))),
        ];
        for i in 1..=self.unet_depth {
            convs.push((format!("down{i}.a"), (3, self.width(i - 1), self.width(i))));
            convs.push((format!("down{i}.b"), (3, self.width(i), self.width(i))));
        }
        for i in (1..=self.unet_depth).rev() {
            convs.push((format!("up{i}.a"), (3, self.width(i), self.width(i - 1))));
            convs.push((format!("up{i}.b"), (3, 2 * self.width(i - 1), self.width(i - 1))));
        }
        convs.push(("out".to_string(), (1, self.width(0), 2)));
        convs
    }

    /// Every conv of the model as `(prefix, (k, cin, cout))`.
    pub fn convs(&self) -> Vec<(String, (usize, usize, usize))> {
        let mut prefixes = self.level_prefixes().to_vec();
        prefixes.dedup();
        prefixes
            .iter()
            .flat_map(|level| {
                self.unet_convs(self.unet_in_channels())
                    .into_iter()
                    .map(move |(name, dims)| (format!("{level}.{name}"), dims))
            })
            .collect()
    }
}

/// Outputs of one forward pass, normalized ab at 1/4, 1/2 and full size.
pub struct MsrbOutput<'t> {
    pub z_quarter: Var<'t>,
    pub z_half: Var<'t>,
    pub z_full: Var<'t>,
}

#[derive(Debug, Clone)]
pub struct MsrbModel {
    config: MsrbConfig,
    weights: Checkpoint,
}

impl MsrbModel {
    /// Random initialization; the output convs start small so the initial
    /// prediction stays close to `p_t`.
    pub fn init(config: MsrbConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Checkpoint::new();
        for (prefix, dims) in config.convs() {
            let gain = if prefix.ends_with(".out") { 0.1 } else { 1.0 };
            nn::init_conv(&mut weights, &mut rng, &prefix, dims, gain, 0.0);
        }
        Ok(MsrbModel { config, weights })
    }

    /// Every parameter zero: the residual vanishes.
    pub fn zeros(config: MsrbConfig) -> Result<Self> {
        config.validate()?;
        let mut weights = Checkpoint::new();
        for (prefix, (k, cin, cout)) in config.convs() {
            let [ws, bs] = nn::conv_shapes(k, cin, cout);
            weights.insert(format!("{prefix}.weight"), Tensor::zeros(&ws, DType::F32));
            weights.insert(format!("{prefix}.bias"), Tensor::zeros(&bs, DType::F32));
        }
        Ok(MsrbModel { config, weights })
    }

    pub fn from_checkpoint(config: MsrbConfig, ckpt: &Checkpoint) -> Result<Self> {
        config.validate()?;
        let mut weights = Checkpoint::new();
        for (prefix, dims) in config.convs() {
            nn::check_conv(ckpt, &prefix, dims)?;
            for suffix in ["weight", "bias"] {
                let name = format!("{prefix}.{suffix}");
                let t = ckpt.get(&name).expect("checked above");
                if t.data().iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(format!("parameter {name} is not finite")));
                }
                weights.insert(name, t.clone());
            }
        }
        Ok(MsrbModel { config, weights })
    }

    pub fn config(&self) -> &MsrbConfig {
        &self.config
    }

    pub fn weights(&self) -> &Checkpoint {
        &self.weights
    }

    pub fn with_weights(&self, weights: Checkpoint) -> Result<Self> {
        Self::from_checkpoint(self.config, &weights)
    }

    pub fn to_dtype(&self, dtype: DType) -> Self {
        MsrbModel {
            config: self.config,
            weights: self.weights.to_dtype(dtype),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|(_, t)| t.numel()).sum()
    }

    fn unet<'t>(&self, x: &Var<'t>, p: &ParamVars<'t>, prefix: &str) -> Result<Var<'t>> {
        let conv = |h: &Var<'t>, name: &str, stride: usize| -> Result<Var<'t>> {
            Ok(nn::conv(h, p, &format!("{prefix}.{name}"), stride, 1)?.relu())
        };
        let mut h = conv(x, "inc.a", 1)?;
        h = conv(&h, "inc.b", 1)?;
        let mut skips = vec![h.clone()];
        for i in 1..=self.config.unet_depth {
            h = conv(&h, &format!("down{i}.a"), 2)?;
            h = conv(&h, &format!("down{i}.b"), 1)?;
            skips.push(h.clone());
        }
        for i in (1..=self.config.unet_depth).rev() {
            let skip = &skips[i - 1];
            let (sh, sw) = skip.value().hw()?;
            h = conv(&h.resample(sh, sw)?, &format!("up{i}.a"), 1)?;
            h = conv(&Var::concat(&[&h, skip], 2)?, &format!("up{i}.b"), 1)?;
        }
        nn::conv(&h, p, &format!("{prefix}.out"), 1, 0)
    }

    /// Forward pass on an assembled `H×W×(4+C_seg)` input with `H`, `W`
    /// multiples of 4.
    pub fn forward<'t>(&self, params: &ParamVars<'t>, input: &Var<'t>) -> Result<MsrbOutput<'t>> {
        let (h, w) = input.value().hw()?;
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::invalid(format!(
                "MSRB input must have sides divisible by 4, got {h}×{w}"
            )));
        }
        if input.value().channels() != self.config.input_channels() {
            return Err(Error::shape(
                "msrb forward",
                input.shape(),
                &[h, w, self.config.input_channels()],
            ));
        }
        let (lo, hi) = normalized_ab_range();
        let [l1, l2, l3] = self.config.level_prefixes();
        let tape = input.tape();

        let refine = |level_input: &Var<'t>, coarse: Var<'t>, prefix: &str| -> Result<Var<'t>> {
            let p_t = level_input.narrow(2, 1, 2)?;
            let x = Var::concat(&[level_input, &coarse], 2)?;
            Ok(p_t.add(&self.unet(&x, params, prefix)?)?.clamp(lo, hi))
        };

        let quarter = input.resample(h / 4, w / 4)?;
        let no_prediction = tape.constant(Tensor::zeros(&[h / 4, w / 4, 2], input.dtype()));
        let z_quarter = refine(&quarter, no_prediction, &l3)?;

        let half = input.resample(h / 2, w / 2)?;
        let z_half = refine(&half, z_quarter.resample(h / 2, w / 2)?, &l2)?;

        let z_full = refine(input, z_half.resample(h, w)?, &l1)?;
        Ok(MsrbOutput {
            z_quarter,
            z_half,
            z_full,
        })
    }

    /// Inference without gradient tracking.
    pub fn infer(&self, input: &Tensor) -> Result<[Tensor; 3]> {
        let tape = Tape::new();
        let weights = if input.dtype() == DType::F32 {
            self.weights.clone()
        } else {
            self.weights.to_dtype(input.dtype())
        };
        let params = ParamVars::new(&tape, &weights, false);
        let out = self.forward(&params, &tape.constant(input.clone()))?;
        Ok([
            out.z_quarter.into_value(),
            out.z_half.into_value(),
            out.z_full.into_value(),
        ])
    }

    /// Full-resolution prediction for any frame size: replicate-pads to a
    /// multiple of 4 and crops back.
    pub fn infer_padded(&self, input: &Tensor) -> Result<Tensor> {
        let (h, w) = input.hw()?;
        let (ph, pw) = (h.next_multiple_of(4), w.next_multiple_of(4));
        let padded = kernels::pad_replicate(input, ph, pw)?;
        let [_, _, z] = self.infer(&padded)?;
        kernels::crop(&z, h, w)
    }
}

/// `I_t` with channel order `[L, ab, seg…, edge]`, all network-normalized.
///
/// `frame_l` is raw lightness (`H×W×1`), `p_ab` the normalized fused warp.
pub fn assemble_input(frame_l: &Tensor, p_ab: &Tensor, masks: &PriorMasks) -> Result<Tensor> {
    let (h, w) = frame_l.hw()?;
    for (name, t, c) in [
        ("p_t", p_ab, 2),
        ("seg", &masks.seg, masks.seg.channels()),
        ("edge", &masks.edge, 1),
    ] {
        if t.shape() != [h, w, c] {
            return Err(Error::DimensionMismatch {
                what: format!("assemble_input {name}"),
                expected: vec![h, w, c],
                found: t.shape().to_vec(),
            });
        }
    }
    let dtype = frame_l.dtype();
    let l = normalize_l(frame_l);
    let parts = [
        l,
        p_ab.to_dtype(dtype),
        masks.seg.to_dtype(dtype),
        masks.edge.to_dtype(dtype),
    ];
    let refs: Vec<&Tensor> = parts.iter().collect();
    kernels::concat(&refs, 2)
}
