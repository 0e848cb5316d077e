//! Deep features for correspondence matching.
//!
//! The built-in extractor is a fixed four-stage conv+relu pyramid
//! (16 → 32 → 64 → 64 channels) over a single-channel map. Its stage-3 and
//! stage-4 outputs form the 1/4 and 1/8 levels. Externally computed
//! features (e.g. VGG activations) can be imported from BTSR files named
//! `<frame-id>_L<k>.btsr`, where the level lives at scale `1/2^k`.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::colorspace::L_MAX;
use crate::error::{Error, Result};
use crate::nn::{self, ParamVars};
use crate::tensor::{btsr, Tensor};

/// `(in, out, stride)` per stage.
pub const STAGES: [(usize, usize, usize); 4] = [(1, 16, 1), (16, 32, 2), (32, 64, 2), (64, 64, 2)];

/// Pyramid levels as `log2` of the downsampling factor.
pub const LEVELS: [u32; 2] = [2, 3];

/// Level used for matching by default (1/8).
pub const MATCH_LEVEL: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    Builtin,
    Imported,
}

#[derive(Debug, Clone)]
pub struct FeatureLevel {
    pub log2_scale: u32,
    pub map: Tensor,
}

#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub levels: Vec<FeatureLevel>,
    pub source: FeatureSource,
}

impl FeaturePyramid {
    pub fn level(&self, log2_scale: u32) -> Result<&Tensor> {
        self.levels
            .iter()
            .find(|l| l.log2_scale == log2_scale)
            .map(|l| &l.map)
            .ok_or_else(|| Error::invalid(format!("pyramid has no level L{log2_scale}")))
    }
}

/// Spatial size of level `log2_scale` for an `h×w` frame.
pub fn level_hw(h: usize, w: usize, log2_scale: u32) -> (usize, usize) {
    let f = 1usize << log2_scale;
    (h.div_ceil(f), w.div_ceil(f))
}

fn stage_name(i: usize) -> String {
    format!("extractor.stage{}", i + 1)
}

#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    weights: Checkpoint,
}

impl FeatureExtractor {
    /// Fixed pseudo-random weights drawn from `seed`.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Checkpoint::new();
        for (i, &(cin, cout, _)) in STAGES.iter().enumerate() {
            nn::init_conv(&mut weights, &mut rng, &stage_name(i), (3, cin, cout), 1.0, 0.0);
        }
        FeatureExtractor { weights }
    }

    pub fn from_checkpoint(weights: Checkpoint) -> Result<Self> {
        for (i, &(cin, cout, _)) in STAGES.iter().enumerate() {
            nn::check_conv(&weights, &stage_name(i), (3, cin, cout))?;
        }
        Ok(FeatureExtractor { weights })
    }

    pub fn weights(&self) -> &Checkpoint {
        &self.weights
    }

    /// Run the stages on a single-channel `H×W×1` map. Returns the 1/4 and
    /// 1/8 level outputs.
    pub fn forward<'t>(&self, x: &Var<'t>) -> Result<Vec<Var<'t>>> {
        if x.value().channels() != 1 || x.value().ndim() != 3 {
            return Err(Error::invalid(format!(
                "extractor expects an H×W×1 map, got {:?}",
                x.shape()
            )));
        }
        let params = ParamVars::new(x.tape(), &self.weights_as(x), false);
        let mut h = x.clone();
        let mut outs = Vec::with_capacity(2);
        for (i, &(_, _, stride)) in STAGES.iter().enumerate() {
            h = nn::conv(&h, &params, &stage_name(i), stride, 1)?.relu();
            if i >= 2 {
                outs.push(h.clone());
            }
        }
        Ok(outs)
    }

    fn weights_as(&self, x: &Var<'_>) -> Checkpoint {
        if self.weights.iter().all(|(_, t)| t.dtype() == x.dtype()) {
            self.weights.clone()
        } else {
            self.weights.to_dtype(x.dtype())
        }
    }

    /// Features of a lightness map (`H×W×1`, L in `[0,100]`).
    pub fn extract(&self, frame_l: &Tensor) -> Result<FeaturePyramid> {
        let tape = Tape::new();
        let x = tape.constant(frame_l.map(|v| v / L_MAX));
        let outs = self.forward(&x)?;
        Ok(FeaturePyramid {
            levels: LEVELS
                .iter()
                .zip(outs)
                .map(|(&log2_scale, v)| FeatureLevel {
                    log2_scale,
                    map: v.into_value(),
                })
                .collect(),
            source: FeatureSource::Builtin,
        })
    }
}

/// Path of an imported level file.
pub fn level_path(dir: &Path, frame_id: &str, log2_scale: u32) -> PathBuf {
    dir.join(format!("{frame_id}_L{log2_scale}.btsr"))
}

fn parse_level(path: &Path) -> Result<u32> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.rsplit_once("_L"))
        .and_then(|(_, k)| k.parse::<u32>().ok())
        .ok_or_else(|| Error::MalformedFile {
            path: path.to_path_buf(),
            reason: "file name does not follow <frame-id>_L<level>.btsr".into(),
        })
}

/// Load exported feature maps for a frame of size `frame_hw`.
pub fn import_pyramid(files: &[PathBuf], frame_hw: (usize, usize)) -> Result<FeaturePyramid> {
    if files.is_empty() {
        return Err(Error::invalid("no feature files given"));
    }
    let mut levels = Vec::with_capacity(files.len());
    let mut channels = None;
    for path in files {
        let log2_scale = parse_level(path)?;
        let map = btsr::read(path)?;
        let (h, w) = level_hw(frame_hw.0, frame_hw.1, log2_scale);
        let c = map.channels();
        if map.ndim() != 3 || map.shape()[..2] != [h, w] {
            return Err(Error::DimensionMismatch {
                what: format!("feature file {}", path.display()),
                expected: vec![h, w, c],
                found: map.shape().to_vec(),
            });
        }
        if *channels.get_or_insert(c) != c {
            return Err(Error::invalid(format!(
                "feature file {} has {c} channels, other levels differ",
                path.display()
            )));
        }
        levels.push(FeatureLevel { log2_scale, map });
    }
    levels.sort_by_key(|l| l.log2_scale);
    Ok(FeaturePyramid {
        levels,
        source: FeatureSource::Imported,
    })
}

/// Import the matching level for `frame_id` from `dir`, if present.
pub fn import_if_present(
    dir: &Path,
    frame_id: &str,
    frame_hw: (usize, usize),
    log2_scale: u32,
) -> Result<Option<FeaturePyramid>> {
    let path = level_path(dir, frame_id, log2_scale);
    if !path.exists() {
        return Ok(None);
    }
    import_pyramid(&[path], frame_hw).map(Some)
}
