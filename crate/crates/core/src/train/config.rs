//! Run configuration: training hyperparameters plus the flat `key = value`
//! file format that addresses every model, training, augmentation and
//! synthetic-data field.

use std::path::Path;

use crate::data::augment::{AugmentConfig, NormStats};
use crate::data::synth::{CueMode, SynthSpec};
use crate::loss::FocalLossConfig;
use crate::model::{AcnetConfig, BlockKind, Variant};
use crate::train::sgd::SgdConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub lr_decay_factor: f64,
    /// Epochs between learning-rate decays.
    pub lr_decay_every: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Save a checkpoint every this many epochs; 0 saves only the final one.
    pub checkpoint_every: usize,
    /// Random scale/crop/flip/color augmentation; off means normalize only.
    pub augment: bool,
    pub focal: FocalLossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.002,
            momentum: 0.9,
            weight_decay: 0.004,
            batch_size: 4,
            lr_decay_factor: 0.8,
            lr_decay_every: 100,
            epochs: 300,
            seed: 0,
            checkpoint_every: 0,
            augment: true,
            focal: FocalLossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::config(format!("lr {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.weight_decay >= 0.0) || !(self.lr_decay_factor > 0.0) || self.lr_decay_every == 0 {
            return Err(Error::config("weight_decay >= 0, lr_decay_factor > 0 and lr_decay_every >= 1 required"));
        }
        self.focal.validate()
    }

    pub fn sgd(&self, epoch: usize) -> SgdConfig {
        SgdConfig {
            lr: lr_schedule(epoch, self),
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

/// `lr · factor^⌊epoch / every⌋`, with `epoch` counted from 0.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let steps = (epoch / cfg.lr_decay_every.max(1)) as i32;
    cfg.lr * cfg.lr_decay_factor.powi(steps)
}

/// Optional overrides of the normalization statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NormOverride {
    pub rgb_mean: Option<[f64; 3]>,
    pub rgb_std: Option<[f64; 3]>,
    pub depth_mean: Option<f64>,
    pub depth_std: Option<f64>,
}

impl NormOverride {
    pub fn apply(&self, mut stats: NormStats) -> NormStats {
        if let Some(v) = self.rgb_mean {
            stats.rgb_mean = v;
        }
        if let Some(v) = self.rgb_std {
            stats.rgb_std = v;
        }
        if let Some(v) = self.depth_mean {
            stats.depth_mean = v;
        }
        if let Some(v) = self.depth_std {
            stats.depth_std = v;
        }
        stats
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: AcnetConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub synth: SynthSpec,
    pub norm: NormOverride,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = AcnetConfig::desk(6);
        let augment = AugmentConfig {
            crop: model.input_size,
            ..AugmentConfig::default()
        };
        Self {
            model,
            train: TrainConfig::default(),
            augment,
            synth: SynthSpec::default(),
            norm: NormOverride::default(),
        }
    }
}

fn parse_num<N: std::str::FromStr>(key: &str, value: &str) -> Result<N> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_triple(key: &str, value: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = value
        .split(',')
        .map(|p| parse_num(key, p.trim()))
        .collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| Error::config(format!("{key}: expected three comma-separated numbers")))
}

/// Splits `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", lineno + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Applies one synthetic-data key (without the `synth.` prefix). Returns
/// false when the key is not a synthetic-data field.
pub fn apply_synth_key(spec: &mut SynthSpec, key: &str, value: &str) -> Result<bool> {
    match key {
        "count" => spec.count = parse_num(key, value)?,
        "height" => spec.height = parse_num(key, value)?,
        "width" => spec.width = parse_num(key, value)?,
        "num_classes" => spec.num_classes = parse_num(key, value)?,
        "shapes_min" => spec.shapes_min = parse_num(key, value)?,
        "shapes_max" => spec.shapes_max = parse_num(key, value)?,
        "cue_mode" => spec.cue_mode = CueMode::parse(value)?,
        "seed" => spec.seed = parse_num(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Parses a standalone synthetic-data spec file (bare keys).
pub fn parse_synth_spec(text: &str) -> Result<SynthSpec> {
    let mut spec = SynthSpec::default();
    for (k, v) in parse_pairs(text)? {
        if !apply_synth_key(&mut spec, &k, &v)? {
            return Err(Error::config(format!("unknown synthetic-data key {k:?}")));
        }
    }
    spec.validate()?;
    Ok(spec)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let mut cfg = RunConfig::default();
        // Presets replace the whole model shape, so they go first.
        for (k, v) in &pairs {
            if k == "preset" {
                let classes = cfg.model.num_classes;
                cfg.model = match v.as_str() {
                    "desk" => AcnetConfig::desk(classes),
                    "resnet50" => AcnetConfig::resnet50(classes),
                    _ => return Err(Error::config(format!("unknown preset {v:?} (desk, resnet50)"))),
                };
            }
        }
        for (k, v) in &pairs {
            if k != "preset" {
                cfg.apply(k, v)?;
            }
        }
        cfg.augment.crop = cfg.model.input_size;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.augment.validate()?;
        Ok(())
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(rest) = key.strip_prefix("synth.") {
            if apply_synth_key(&mut self.synth, rest, value)? {
                return Ok(());
            }
            return Err(Error::config(format!("unknown key {key:?}")));
        }
        if let Some(rest) = key.strip_prefix("stage") {
            return self.apply_stage(key, rest, value);
        }
        let (m, t, a) = (&mut self.model, &mut self.train, &mut self.augment);
        match key {
            "num_classes" => m.num_classes = parse_num(key, value)?,
            "stem_channels" => m.stem_channels = parse_num(key, value)?,
            "decoder_min_channels" => m.decoder_min_channels = parse_num(key, value)?,
            "block_kind" => {
                let kind = BlockKind::parse(value)?;
                m.stages.iter_mut().for_each(|s| s.block_kind = kind);
            }
            "variant" => m.variant = Variant::parse(value)?,
            "input_height" => m.input_size.0 = parse_num(key, value)?,
            "input_width" => m.input_size.1 = parse_num(key, value)?,
            "lr" => t.lr = parse_num(key, value)?,
            "momentum" => t.momentum = parse_num(key, value)?,
            "weight_decay" => t.weight_decay = parse_num(key, value)?,
            "batch_size" => t.batch_size = parse_num(key, value)?,
            "lr_decay_factor" => t.lr_decay_factor = parse_num(key, value)?,
            "lr_decay_every" => t.lr_decay_every = parse_num(key, value)?,
            "epochs" => t.epochs = parse_num(key, value)?,
            "seed" => t.seed = parse_num(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse_num(key, value)?,
            "augment" => t.augment = parse_bool(key, value)?,
            "focal_gamma" => t.focal.gamma = parse_num(key, value)?,
            "ignore_index" => t.focal.ignore_index = parse_num(key, value)?,
            "scale_min" => a.scale_min = parse_num(key, value)?,
            "scale_max" => a.scale_max = parse_num(key, value)?,
            "hflip_prob" => a.hflip_prob = parse_num(key, value)?,
            "hue_jitter" => a.hue_jitter = parse_num(key, value)?,
            "sat_min" => a.sat_range.0 = parse_num(key, value)?,
            "sat_max" => a.sat_range.1 = parse_num(key, value)?,
            "val_min" => a.val_range.0 = parse_num(key, value)?,
            "val_max" => a.val_range.1 = parse_num(key, value)?,
            "rgb_mean" => self.norm.rgb_mean = Some(parse_triple(key, value)?),
            "rgb_std" => self.norm.rgb_std = Some(parse_triple(key, value)?),
            "depth_mean" => self.norm.depth_mean = Some(parse_num(key, value)?),
            "depth_std" => self.norm.depth_std = Some(parse_num(key, value)?),
            _ => return Err(Error::config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// `stage<N>_blocks`, `stage<N>_channels`, `stage<N>_stride`, `stage<N>_kind`.
    fn apply_stage(&mut self, key: &str, rest: &str, value: &str) -> Result<()> {
        let unknown = || Error::config(format!("unknown key {key:?}"));
        let (idx, field) = rest.split_once('_').ok_or_else(unknown)?;
        let idx: usize = idx.parse().map_err(|_| unknown())?;
        if !(1..=4).contains(&idx) {
            return Err(unknown());
        }
        let stage = &mut self.model.stages[idx - 1];
        match field {
            "blocks" => stage.blocks = parse_num(key, value)?,
            "channels" => stage.channels = parse_num(key, value)?,
            "stride" => stage.stride = parse_num(key, value)?,
            "kind" => stage.block_kind = BlockKind::parse(value)?,
            _ => return Err(unknown()),
        }
        Ok(())
    }
}
