//! Training: Adam on the total loss over batches of consecutive frames.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::autograd::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::colorspace::{normalize_ab, normalize_l, rgb_to_lab};
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::losses::{load_flow, total_loss, LossInputs, LossReport, LossWeights};
use crate::msrb::MsrbModel;
use crate::nn::ParamVars;
use crate::pipeline::clip::{list_frames, read_frames, Clip};
use crate::pipeline::colorize::{Colorizer, Sources};
use crate::pipeline::config::{RunConfig, STANDARD_FRAME_SIZE};
use crate::tensor::{kernels, DType, Tensor};

const ADAM_PREFIX: &str = "adam.";

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of every parameter that has a gradient.
    pub fn update(&mut self, weights: &mut Checkpoint, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        self.step += 1;
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        for (name, g) in grads {
            let w = weights
                .get(name)
                .ok_or_else(|| Error::invalid(format!("gradient for unknown parameter {name}")))?;
            if w.shape() != g.shape() {
                return Err(Error::shape("adam", w.shape(), g.shape()));
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.numel()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.numel()]);
            let mut out = w.to_vec();
            for (i, &gi) in g.data().iter().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / b1t;
                let vhat = v[i] / b2t;
                out[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            weights.insert(name.clone(), Tensor::new(w.shape(), out, w.dtype())?);
        }
        Ok(())
    }

    /// Moments and step count as `adam.m.<name>`, `adam.v.<name>`,
    /// `adam.step`.
    pub fn store(&self, ckpt: &mut Checkpoint, shapes: &Checkpoint) -> Result<()> {
        for (name, m) in &self.m {
            let shape = shapes.get(name).map(|t| t.shape().to_vec()).unwrap_or(vec![m.len()]);
            ckpt.insert(
                format!("{ADAM_PREFIX}m.{name}"),
                Tensor::new(&shape, m.clone(), DType::F64)?,
            );
            ckpt.insert(
                format!("{ADAM_PREFIX}v.{name}"),
                Tensor::new(&shape, self.v[name].clone(), DType::F64)?,
            );
        }
        ckpt.insert(
            format!("{ADAM_PREFIX}step"),
            Tensor::scalar(self.step as f64, DType::F64),
        );
        Ok(())
    }

    pub fn restore(lr: f64, ckpt: &Checkpoint) -> Self {
        let mut adam = Adam::new(lr);
        for (name, t) in ckpt.iter() {
            if let Some(p) = name.strip_prefix("adam.m.") {
                adam.m.insert(p.to_string(), t.to_vec());
            } else if let Some(p) = name.strip_prefix("adam.v.") {
                adam.v.insert(p.to_string(), t.to_vec());
            } else if name == "adam.step" {
                adam.step = t.data()[0] as u64;
            }
        }
        adam
    }
}

/// One clip with everything the loss needs precomputed.
#[derive(Debug, Clone)]
pub struct TrainClip {
    pub ids: Vec<String>,
    /// Normalized lightness (`H×W×1`).
    pub x_l: Vec<Tensor>,
    /// Normalized ground-truth ab (`H×W×2`).
    pub gt_ab: Vec<Tensor>,
    /// Assembled MSRB inputs, replicate-padded to multiples of 4.
    pub inputs: Vec<Tensor>,
    /// Flow from frame `t` into frame `t−1`.
    pub flows: Vec<Option<Tensor>>,
    pub hw: (usize, usize),
}

impl TrainClip {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Build a training clip from ground-truth RGB frames; the first and last
/// frames serve as references. Sidecar files are looked up in `sidecars`.
pub fn prepare_clip(
    colorizer: &Colorizer,
    ids: Vec<String>,
    gt_rgb: &[Tensor],
    sidecars: Option<&Path>,
) -> Result<TrainClip> {
    if gt_rgb.len() < 2 {
        return Err(Error::invalid("a training clip needs at least 2 frames"));
    }
    let labs = gt_rgb.iter().map(rgb_to_lab).collect::<Result<Vec<_>>>()?;
    let frames: Vec<Tensor> = labs.iter().map(|l| l.l().clone()).collect();
    let last = labs.last().cloned();
    let clip = Clip::new(frames, ids, labs[0].clone(), last)?;
    let sources = Sources {
        features_dir: None,
        priors_dir: sidecars,
    };
    let refs = colorizer.references(&clip, &sources)?;
    let (h, w) = clip.hw();
    let (ph, pw) = (h.next_multiple_of(4), w.next_multiple_of(4));
    let mut inputs = Vec::with_capacity(clip.len());
    let mut flows = Vec::with_capacity(clip.len());
    for t in 0..clip.len() {
        let id = &clip.ids[t];
        let warp = colorizer
            .frame_warp(&clip, t, &refs, &sources)
            .map_err(|e| e.in_frame(id))?;
        let (input, _) = colorizer
            .frame_input(&clip, t, &warp, &sources)
            .map_err(|e| e.in_frame(id))?;
        inputs.push(kernels::pad_replicate(&input, ph, pw)?);
        flows.push(match sidecars {
            Some(dir) if t > 0 => load_flow(dir, id, (h, w))?,
            _ => None,
        });
    }
    Ok(TrainClip {
        x_l: clip.frames.iter().map(normalize_l).collect(),
        gt_ab: labs.iter().map(|l| normalize_ab(l.ab())).collect(),
        ids: clip.ids,
        inputs,
        flows,
        hw: (h, w),
    })
}

pub struct Trainer {
    pub model: MsrbModel,
    pub adam: Adam,
    pub extractor: FeatureExtractor,
    pub losses: LossWeights,
    pub batch_size: usize,
}

impl Trainer {
    pub fn new(model: MsrbModel, config: &RunConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            model,
            adam: Adam::new(config.learning_rate),
            extractor: FeatureExtractor::seeded(config.extractor_seed),
            losses: config.losses,
            batch_size: config.batch_size,
        })
    }

    fn batch<'t>(
        &self,
        tape: &'t Tape,
        params: &ParamVars<'t>,
        clip: &TrainClip,
        start: usize,
    ) -> Result<(Var<'t>, LossReport)> {
        let end = (start + self.batch_size).min(clip.len());
        if start >= end {
            return Err(Error::invalid(format!(
                "batch start {start} beyond clip of {}",
                clip.len()
            )));
        }
        let (h, w) = clip.hw;
        let mut total: Option<Var<'t>> = None;
        let mut report = LossReport::default();
        let mut prev: Option<Var<'t>> = None;
        for t in start..end {
            let out = self.model.forward(params, &tape.constant(clip.inputs[t].clone()))?;
            let z_ab = out.z_full.narrow(0, 0, h)?.narrow(1, 0, w)?;
            let x_l = tape.constant(clip.x_l[t].clone());
            let y_ab = tape.constant(clip.gt_ab[t].clone());
            let inputs = LossInputs {
                x_l: &x_l,
                z_l: &x_l,
                z_ab: &z_ab,
                y_ab: &y_ab,
                prev: prev.as_ref().map(|p| (p, clip.flows[t].as_ref())),
            };
            let (loss, r) = total_loss(&inputs, &self.losses, &self.extractor).map_err(|e| e.in_frame(&clip.ids[t]))?;
            total = Some(match total {
                None => loss,
                Some(acc) => acc.add(&loss)?,
            });
            for (acc, v) in [
                (&mut report.total, r.total),
                (&mut report.edge, r.edge),
                (&mut report.hem, r.hem),
                (&mut report.content, r.content),
                (&mut report.perceptual, r.perceptual),
                (&mut report.temporal, r.temporal),
            ] {
                *acc += v;
            }
            prev = Some(z_ab);
        }
        let n = (end - start) as f64;
        for v in [
            &mut report.total,
            &mut report.edge,
            &mut report.hem,
            &mut report.content,
            &mut report.perceptual,
            &mut report.temporal,
        ] {
            *v /= n;
        }
        Ok((total.expect("non-empty batch").scale(1.0 / n), report))
    }

    /// Loss of the batch starting at `start` without updating.
    pub fn evaluate(&self, clip: &TrainClip, start: usize) -> Result<LossReport> {
        let tape = Tape::new();
        let params = ParamVars::new(&tape, self.model.weights(), false);
        Ok(self.batch(&tape, &params, clip, start)?.1)
    }

    /// One Adam step on the batch starting at `start`. Reports the loss
    /// before the update.
    pub fn step(&mut self, clip: &TrainClip, start: usize) -> Result<LossReport> {
        let step = self.adam.steps() as usize;
        let mut weights = self.model.weights().clone();
        let grads = {
            let tape = Tape::new();
            let params = ParamVars::new(&tape, &weights, true);
            let (loss, report) = self.batch(&tape, &params, clip, start)?;
            if !report.total.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            let g = tape.backward(&loss)?;
            let mut grads = BTreeMap::new();
            for (name, var) in params.iter() {
                if let Some(t) = g.get(var) {
                    if t.data().iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFiniteLoss { step });
                    }
                    grads.insert(name.clone(), t.clone());
                }
            }
            (grads, report)
        };
        self.adam.update(&mut weights, &grads.0)?;
        self.model = self.model.with_weights(weights)?;
        Ok(grads.1)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = self.model.weights().clone();
        self.adam.store(&mut ckpt, self.model.weights())?;
        Ok(ckpt)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub report: LossReport,
}

pub const CURVE_HEADER: &str = "step,epoch,total,edge,hem,content,perceptual,temporal";

pub fn curve_line(r: &StepRecord) -> String {
    let l = &r.report;
    format!(
        "{},{},{},{},{},{},{},{}",
        r.step, r.epoch, l.total, l.edge, l.hem, l.content, l.perceptual, l.temporal
    )
}

/// Clip directories under `root`: `root` itself if it holds PNG frames,
/// otherwise each subdirectory that does.
pub fn discover_clips(root: &Path) -> Result<Vec<PathBuf>> {
    if list_frames(root).is_ok() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && list_frames(p).is_ok())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::invalid(format!(
            "no clips with PNG frames under {}",
            root.display()
        )));
    }
    Ok(dirs)
}

#[derive(Debug)]
pub struct TrainSummary {
    pub steps: usize,
    pub first: Option<LossReport>,
    pub last: Option<LossReport>,
    pub checkpoint_dir: PathBuf,
    pub curve: PathBuf,
}

/// Train on every clip under `data_root`, writing `loss_curve.csv`,
/// `checkpoint/` and `config.txt` into `out_dir`.
pub fn train(data_root: &Path, out_dir: &Path, config: &RunConfig) -> Result<TrainSummary> {
    config.validate()?;
    let resize = config.resize_frames.then_some(STANDARD_FRAME_SIZE);
    let model = MsrbModel::init(config.msrb_config(), config.seed)?;
    let colorizer = Colorizer::new(model.clone(), config.clone())?;
    let mut clips = Vec::new();
    for dir in discover_clips(data_root)? {
        let (ids, rgb) = read_frames(&dir, resize)?;
        log::info!("clip {} with {} frames", dir.display(), ids.len());
        clips.push(prepare_clip(&colorizer, ids, &rgb, Some(&dir))?);
    }

    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.txt"), config.to_text())?;
    let ckpt_dir = out_dir.join("checkpoint");
    let curve_path = out_dir.join("loss_curve.csv");
    let mut curve = format!("{CURVE_HEADER}\n");
    std::fs::write(&curve_path, &curve)?;

    let mut trainer = Trainer::new(model, config)?;
    trainer.checkpoint()?.save(&ckpt_dir)?;
    let (mut first, mut last, mut steps) = (None, None, 0);
    for epoch in 0..config.epochs {
        for clip in &clips {
            for start in (0..clip.len()).step_by(config.batch_size) {
                let report = trainer.step(clip, start)?;
                let rec = StepRecord {
                    step: steps,
                    epoch,
                    report,
                };
                writeln!(curve, "{}", curve_line(&rec)).expect("write to String");
                first.get_or_insert(report);
                last = Some(report);
                steps += 1;
            }
        }
        std::fs::write(&curve_path, &curve)?;
        trainer.checkpoint()?.save(&ckpt_dir)?;
        if let Some(r) = last {
            log::info!("epoch {epoch}: total {:.6}", r.total);
        }
    }
    Ok(TrainSummary {
        steps,
        first,
        last,
        checkpoint_dir: ckpt_dir,
        curve: curve_path,
    })
}
