//! Run configuration: flat `key = value` text with `#` comments.

use std::collections::BTreeSet;
use std::path::Path;

use crate::btfb::WeightOrientation;
use crate::correspondence::{DEFAULT_TEMPERATURE, DEFAULT_TILE_ROWS};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::metrics::CdcConfig;
use crate::msrb::MsrbConfig;
use crate::priors::DEFAULT_C_SEG;

/// Training-scale frame size (width × height), applied when `resize_frames` is set.
pub const STANDARD_FRAME_SIZE: (u32, u32) = (384, 224);

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub temperature: f64,
    pub tile_rows: usize,
    pub c_seg: usize,
    pub btfb_equation_literal: bool,
    pub msrb: MsrbConfig,
    pub losses: LossWeights,
    pub seed: u64,
    pub extractor_seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub deterministic: bool,
    pub resize_frames: bool,
    pub cdc: CdcConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            temperature: DEFAULT_TEMPERATURE,
            tile_rows: DEFAULT_TILE_ROWS,
            c_seg: DEFAULT_C_SEG,
            btfb_equation_literal: false,
            msrb: MsrbConfig::default(),
            losses: LossWeights::default(),
            seed: 0,
            extractor_seed: 0,
            epochs: 50,
            learning_rate: 2e-4,
            batch_size: 8,
            deterministic: true,
            resize_frames: false,
            cdc: CdcConfig::default(),
        }
    }
}

const KEYS: &[&str] = &[
    "temperature",
    "correspondence.tile_rows",
    "c_seg",
    "btfb.equation_literal",
    "msrb.base_channels",
    "msrb.unet_depth",
    "msrb.share_level_weights",
    "loss.lambda_edge",
    "loss.lambda_hem",
    "loss.lambda_c",
    "loss.hem_fraction",
    "loss.lambda_percep",
    "loss.lambda_temporal",
    "seed",
    "extractor.seed",
    "epochs",
    "learning_rate",
    "batch_size",
    "deterministic",
    "resize_frames",
    "cdc.bins",
    "cdc.strides",
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: cannot parse {key} = {value:?}")))
}

impl RunConfig {
    /// The MSRB settings with `c_seg` applied.
    pub fn msrb_config(&self) -> MsrbConfig {
        MsrbConfig {
            c_seg: self.c_seg,
            ..self.msrb
        }
    }

    pub fn orientation(&self) -> WeightOrientation {
        if self.btfb_equation_literal {
            WeightOrientation::EquationLiteral
        } else {
            WeightOrientation::Proximity
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.tile_rows == 0 {
            return Err(Error::Config(
                "batch_size and correspondence.tile_rows must be positive".into(),
            ));
        }
        if self.cdc.bins < 2 || self.cdc.strides.is_empty() || self.cdc.strides.contains(&0) {
            return Err(Error::Config(format!("invalid cdc settings {:?}", self.cdc)));
        }
        self.msrb_config().validate()?;
        self.losses.validate()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected key = value, got {content:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("line {line}: unknown key {key:?}")));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {line}: duplicate key {key:?}")));
            }
            cfg.set(key, value, line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str, line: usize) -> Result<()> {
        match key {
            "temperature" => self.temperature = parse_value(key, v, line)?,
            "correspondence.tile_rows" => self.tile_rows = parse_value(key, v, line)?,
            "c_seg" => self.c_seg = parse_value(key, v, line)?,
            "btfb.equation_literal" => self.btfb_equation_literal = parse_value(key, v, line)?,
            "msrb.base_channels" => self.msrb.base_channels = parse_value(key, v, line)?,
            "msrb.unet_depth" => self.msrb.unet_depth = parse_value(key, v, line)?,
            "msrb.share_level_weights" => self.msrb.share_level_weights = parse_value(key, v, line)?,
            "loss.lambda_edge" => self.losses.lambda_edge = parse_value(key, v, line)?,
            "loss.lambda_hem" => self.losses.lambda_hem = parse_value(key, v, line)?,
            "loss.lambda_c" => self.losses.lambda_c = parse_value(key, v, line)?,
            "loss.hem_fraction" => self.losses.hem_fraction = parse_value(key, v, line)?,
            "loss.lambda_percep" => self.losses.lambda_percep = parse_value(key, v, line)?,
            "loss.lambda_temporal" => self.losses.lambda_temporal = parse_value(key, v, line)?,
            "seed" => self.seed = parse_value(key, v, line)?,
            "extractor.seed" => self.extractor_seed = parse_value(key, v, line)?,
            "epochs" => self.epochs = parse_value(key, v, line)?,
            "learning_rate" => self.learning_rate = parse_value(key, v, line)?,
            "batch_size" => self.batch_size = parse_value(key, v, line)?,
            "deterministic" => self.deterministic = parse_value(key, v, line)?,
            "resize_frames" => self.resize_frames = parse_value(key, v, line)?,
            "cdc.bins" => self.cdc.bins = parse_value(key, v, line)?,
            "cdc.strides" => {
                self.cdc.strides = v
                    .split(',')
                    .map(|s| parse_value(key, s.trim(), line))
                    .collect::<Result<_>>()?
            }
            _ => unreachable!("key list checked by caller"),
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Text form that [`RunConfig::parse`] reads back to the same value.
    pub fn to_text(&self) -> String {
        let strides: Vec<String> = self.cdc.strides.iter().map(|s| s.to_string()).collect();
        let m = &self.msrb;
        let l = &self.losses;
        format!(
            "temperature = {}\ncorrespondence.tile_rows = {}\nc_seg = {}\nbtfb.equation_literal = {}\n\
             msrb.base_channels = {}\nmsrb.unet_depth = {}\nmsrb.share_level_weights = {}\n\
             loss.lambda_edge = {}\nloss.lambda_hem = {}\nloss.lambda_c = {}\nloss.hem_fraction = {}\n\
             loss.lambda_percep = {}\nloss.lambda_temporal = {}\nseed = {}\nextractor.seed = {}\n\
             epochs = {}\nlearning_rate = {}\nbatch_size = {}\ndeterministic = {}\nresize_frames = {}\n\
             cdc.bins = {}\ncdc.strides = {}\n",
            self.temperature,
            self.tile_rows,
            self.c_seg,
            self.btfb_equation_literal,
            m.base_channels,
            m.unet_depth,
            m.share_level_weights,
            l.lambda_edge,
            l.lambda_hem,
            l.lambda_c,
            l.hem_fraction,
            l.lambda_percep,
            l.lambda_temporal,
            self.seed,
            self.extractor_seed,
            self.epochs,
            self.learning_rate,
            self.batch_size,
            self.deterministic,
            self.resize_frames,
            self.cdc.bins,
            strides.join(","),
        )
    }
}
