//! Inference: correspondence → warp → fusion → priors → MSRB → RGB.

use std::path::Path;

use rayon::prelude::*;

use crate::btfb::{self, FusionWeights};
use crate::colorspace::{compose, denormalize_ab, lab_to_rgb, normalize_ab, LabImage};
use crate::correspondence::{build_correspondence_tiled, upsample_warp, warp_colors};
use crate::error::{Error, Result};
use crate::features::{self, FeatureExtractor, MATCH_LEVEL};
use crate::msrb::{assemble_input, MsrbModel};
use crate::pipeline::clip::Clip;
use crate::pipeline::config::RunConfig;
use crate::priors::{masks_for, PriorMasks};
use crate::tensor::{kernels, Tensor};

/// Optional directories of exported sidecar files.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sources<'a> {
    /// `<id>_L3.btsr` for every frame and both references.
    pub features_dir: Option<&'a Path>,
    /// `<id>_seg.btsr` / `<id>_edge.btsr`.
    pub priors_dir: Option<&'a Path>,
}

/// Matching features and chroma of one reference at feature resolution.
#[derive(Debug, Clone)]
pub struct RefContext {
    pub features: Tensor,
    pub ab_low: Tensor,
}

/// Intermediate maps of one frame, ab in network normalization.
#[derive(Debug, Clone)]
pub struct FrameWarp {
    pub weights: FusionWeights,
    pub w_f: Tensor,
    pub w_b: Option<Tensor>,
    pub p: Tensor,
}

#[derive(Debug, Clone)]
pub struct FrameResult {
    pub id: String,
    pub warp: FrameWarp,
    pub masks: PriorMasks,
    /// Normalized predicted ab (`H×W×2`).
    pub z_ab: Tensor,
    pub lab: LabImage,
    pub rgb: Tensor,
}

#[derive(Debug, Clone)]
pub struct Colorizer {
    pub model: MsrbModel,
    pub extractor: FeatureExtractor,
    pub config: RunConfig,
}

impl Colorizer {
    pub fn new(model: MsrbModel, config: RunConfig) -> Result<Self> {
        config.validate()?;
        if *model.config() != config.msrb_config() {
            return Err(Error::Config(format!(
                "model settings {:?} disagree with the run configuration {:?}",
                model.config(),
                config.msrb_config()
            )));
        }
        let extractor = FeatureExtractor::seeded(config.extractor_seed);
        Ok(Colorizer {
            model,
            extractor,
            config,
        })
    }

    fn features(&self, l: &Tensor, id: &str, sources: &Sources<'_>) -> Result<Tensor> {
        match sources.features_dir {
            Some(dir) => {
                let hw = l.hw()?;
                let pyramid = features::import_if_present(dir, id, hw, MATCH_LEVEL)?.ok_or_else(|| {
                    Error::invalid(format!(
                        "missing {}",
                        features::level_path(dir, id, MATCH_LEVEL).display()
                    ))
                })?;
                Ok(pyramid.level(MATCH_LEVEL)?.clone())
            }
            None => Ok(self.extractor.extract(l)?.level(MATCH_LEVEL)?.clone()),
        }
    }

    pub fn reference(&self, r: &LabImage, id: &str, sources: &Sources<'_>) -> Result<RefContext> {
        let features = self.features(r.l(), id, sources)?;
        let (h, w) = features.hw()?;
        let ab_low = kernels::bilinear_resample(&normalize_ab(r.ab()), h, w)?;
        Ok(RefContext { features, ab_low })
    }

    /// Reference contexts, computed once per clip.
    pub fn references(&self, clip: &Clip, sources: &Sources<'_>) -> Result<(RefContext, Option<RefContext>)> {
        let first = self.reference(&clip.ref_first, &clip.ref_ids.0, sources)?;
        let last = match (&clip.ref_last, &clip.ref_ids.1) {
            (Some(r), Some(id)) => Some(self.reference(r, id, sources)?),
            _ => None,
        };
        Ok((first, last))
    }

    fn warp_from(&self, frame_features: &Tensor, r: &RefContext, hw: (usize, usize)) -> Result<Tensor> {
        let c = build_correspondence_tiled(
            frame_features,
            &r.features,
            self.config.temperature,
            self.config.tile_rows,
        )?;
        upsample_warp(&warp_colors(&c, &r.ab_low)?, hw)
    }

    pub fn frame_warp(
        &self,
        clip: &Clip,
        t: usize,
        refs: &(RefContext, Option<RefContext>),
        sources: &Sources<'_>,
    ) -> Result<FrameWarp> {
        let hw = clip.hw();
        let fx = self.features(&clip.frames[t], &clip.ids[t], sources)?;
        let w_f = self.warp_from(&fx, &refs.0, hw)?;
        match &refs.1 {
            None => Ok(FrameWarp {
                weights: btfb::forward_only(t, clip.len()),
                p: w_f.clone(),
                w_f,
                w_b: None,
            }),
            Some(last) => {
                let w_b = self.warp_from(&fx, last, hw)?;
                let weights = btfb::temporal_weights_oriented(t, clip.len(), self.config.orientation())?;
                let p = btfb::fuse(&w_f, &w_b, &weights)?;
                Ok(FrameWarp {
                    weights,
                    w_f,
                    w_b: Some(w_b),
                    p,
                })
            }
        }
    }

    /// MSRB input for frame `t`.
    pub fn frame_input(
        &self,
        clip: &Clip,
        t: usize,
        warp: &FrameWarp,
        sources: &Sources<'_>,
    ) -> Result<(Tensor, PriorMasks)> {
        let masks = masks_for(sources.priors_dir, &clip.ids[t], &clip.frames[t], self.config.c_seg)?;
        Ok((assemble_input(&clip.frames[t], &warp.p, &masks)?, masks))
    }

    pub fn colorize_frame(
        &self,
        clip: &Clip,
        t: usize,
        refs: &(RefContext, Option<RefContext>),
        sources: &Sources<'_>,
    ) -> Result<FrameResult> {
        let run = || -> Result<FrameResult> {
            let warp = self.frame_warp(clip, t, refs, sources)?;
            let (input, masks) = self.frame_input(clip, t, &warp, sources)?;
            let z_ab = self.model.infer_padded(&input)?;
            let lab = compose(&clip.frames[t], &denormalize_ab(&z_ab))?;
            let rgb = lab_to_rgb(&lab);
            Ok(FrameResult {
                id: clip.ids[t].clone(),
                warp,
                masks,
                z_ab,
                lab,
                rgb,
            })
        };
        run().map_err(|e| e.in_frame(&clip.ids[t]))
    }

    /// Every frame of the clip; frames run in parallel and share the
    /// reference contexts.
    pub fn colorize_clip(&self, clip: &Clip, sources: &Sources<'_>) -> Result<Vec<FrameResult>> {
        let refs = self.references(clip, sources)?;
        (0..clip.len())
            .into_par_iter()
            .map(|t| self.colorize_frame(clip, t, &refs, sources))
            .collect()
    }
}

/// Write `<id>.png` for every frame.
pub fn write_frames(dir: &Path, results: &[FrameResult]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for r in results {
        crate::pipeline::clip::write_rgb(&dir.join(format!("{}.png", r.id)), &r.rgb)?;
    }
    Ok(())
}
