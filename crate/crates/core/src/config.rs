//! Experiment configuration: hyperparameters, named presets and the
//! learning-rate schedule.
//!
//! Configs are immutable after load and safe to share across threads.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nets::scales_for_crop;

/// The four image pairs a constraint loss can be attached to.
///
/// `afb` = (original a, fake b_f), `bfa` = (original b, fake a_f),
/// `farb` = (fake b_f, reconstruction a_r), `fbra` = (fake a_f,
/// reconstruction b_r).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum PairTag {
    Afb,
    Bfa,
    Farb,
    Fbra,
}

impl PairTag {
    pub const ALL: [PairTag; 4] = [PairTag::Afb, PairTag::Bfa, PairTag::Farb, PairTag::Fbra];

    pub fn as_str(&self) -> &'static str {
        match self {
            PairTag::Afb => "afb",
            PairTag::Bfa => "bfa",
            PairTag::Farb => "farb",
            PairTag::Fbra => "fbra",
        }
    }
}

impl fmt::Display for PairTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PairTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "afb" => Ok(PairTag::Afb),
            "bfa" => Ok(PairTag::Bfa),
            "farb" => Ok(PairTag::Farb),
            "fbra" => Ok(PairTag::Fbra),
            other => Err(Error::Config(format!("unknown pair tag `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum GeneratorArch {
    ResnetBlocks,
    FcDenseNet,
}

impl GeneratorArch {
    pub fn as_str(&self) -> &'static str {
        match self {
            GeneratorArch::ResnetBlocks => "resnet-blocks",
            GeneratorArch::FcDenseNet => "fcdensenet",
        }
    }
}

impl FromStr for GeneratorArch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resnet-blocks" => Ok(GeneratorArch::ResnetBlocks),
            "fcdensenet" => Ok(GeneratorArch::FcDenseNet),
            other => Err(Error::Config(format!("unknown generator_arch `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PerceptualExtractorKind {
    MultiLayer,
    LastLayer,
    AnalyticStub,
}

impl PerceptualExtractorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PerceptualExtractorKind::MultiLayer => "multi-layer",
            PerceptualExtractorKind::LastLayer => "last-layer",
            PerceptualExtractorKind::AnalyticStub => "analytic-stub",
        }
    }
}

impl FromStr for PerceptualExtractorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi-layer" => Ok(PerceptualExtractorKind::MultiLayer),
            "last-layer" => Ok(PerceptualExtractorKind::LastLayer),
            "analytic-stub" => Ok(PerceptualExtractorKind::AnalyticStub),
            other => Err(Error::Config(format!("unknown perceptual_extractor `{other}`"))),
        }
    }
}

/// Linear decay-to-zero schedule: `base_lr` for the first `n_iter` epochs,
/// then a straight ramp down to zero over `n_iter_decay` epochs.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LrSchedule {
    pub n_iter: usize,
    pub n_iter_decay: usize,
    pub base_lr: f64,
}

impl LrSchedule {
    pub fn rate_at(&self, epoch: usize) -> f64 {
        if epoch < self.n_iter {
            self.base_lr
        } else {
            let into_decay = (epoch - self.n_iter) as f64;
            (self.base_lr * (1.0 - into_decay / self.n_iter_decay as f64)).max(0.0)
        }
    }
}

/// Every tunable of a training run. Built from a preset, a config file or
/// both (file keys override the preset).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub lambda_cyc_a: f64,
    pub lambda_cyc_b: f64,
    pub lambda_p: BTreeMap<PairTag, f64>,
    pub lambda_ep: BTreeMap<PairTag, f64>,
    pub lambda_ei: BTreeMap<PairTag, f64>,
    pub n_iter: usize,
    pub n_iter_decay: usize,
    pub base_lr: f64,
    pub beta1: f64,
    pub pool_size: usize,
    /// (width, height)
    pub load_size: (usize, usize),
    /// (width, height)
    pub crop_size: (usize, usize),
    pub generator_arch: GeneratorArch,
    pub n_scales: usize,
    pub use_seg_discriminator: bool,
    pub seg_classes: usize,
    pub perceptual_extractor: PerceptualExtractorKind,
    // Architecture widths. The desk-scale defaults keep CPU runs cheap.
    pub growth_rate: usize,
    pub layers_per_block: usize,
    pub first_conv_channels: usize,
    pub resnet_blocks: usize,
    pub resnet_channels: usize,
    pub disc_channels: usize,
}

impl ExperimentConfig {
    /// Constants shared by all presets plus neutral defaults for
    /// everything the constants table does not mention.
    fn constants() -> Self {
        ExperimentConfig {
            name: "custom".to_string(),
            lambda_cyc_a: 0.0,
            lambda_cyc_b: 0.0,
            lambda_p: BTreeMap::new(),
            lambda_ep: BTreeMap::new(),
            lambda_ei: BTreeMap::new(),
            n_iter: 100,
            n_iter_decay: 100,
            base_lr: 0.0002,
            beta1: 0.5,
            pool_size: 50,
            load_size: (256, 256),
            crop_size: (192, 192),
            generator_arch: GeneratorArch::ResnetBlocks,
            n_scales: 2,
            use_seg_discriminator: false,
            seg_classes: 5,
            perceptual_extractor: PerceptualExtractorKind::AnalyticStub,
            growth_rate: 12,
            layers_per_block: 4,
            first_conv_channels: 48,
            resnet_blocks: 6,
            resnet_channels: 32,
            disc_channels: 64,
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            n_iter: self.n_iter,
            n_iter_decay: self.n_iter_decay,
            base_lr: self.base_lr,
        }
    }

    pub fn lambda_p(&self, tag: PairTag) -> f64 {
        *self.lambda_p.get(&tag).unwrap_or(&0.0)
    }

    pub fn lambda_ep(&self, tag: PairTag) -> f64 {
        *self.lambda_ep.get(&tag).unwrap_or(&0.0)
    }

    pub fn lambda_ei(&self, tag: PairTag) -> f64 {
        *self.lambda_ei.get(&tag).unwrap_or(&0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let check_nonneg = |key: &str, v: f64| {
            if v < 0.0 || !v.is_finite() {
                Err(Error::Config(format!("{key} must be nonnegative, got {v}")))
            } else {
                Ok(())
            }
        };
        check_nonneg("lambda_cyc_a", self.lambda_cyc_a)?;
        check_nonneg("lambda_cyc_b", self.lambda_cyc_b)?;
        for (prefix, map) in [
            ("lambda_p", &self.lambda_p),
            ("lambda_ep", &self.lambda_ep),
            ("lambda_ei", &self.lambda_ei),
        ] {
            for (tag, v) in map {
                check_nonneg(&format!("{prefix}_{tag}"), *v)?;
            }
        }
        if self.n_iter == 0 {
            return Err(Error::Config("n_iter must be positive".into()));
        }
        if self.n_iter_decay == 0 {
            return Err(Error::Config("n_iter_decay must be positive".into()));
        }
        if !(self.base_lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.base_lr)));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) {
            return Err(Error::Config(format!("beta1 must lie in (0,1), got {}", self.beta1)));
        }
        if self.crop_size.0 > self.load_size.0 || self.crop_size.1 > self.load_size.1 {
            return Err(Error::Config(format!(
                "crop_size {}x{} exceeds load_size {}x{}",
                self.crop_size.0, self.crop_size.1, self.load_size.0, self.load_size.1
            )));
        }
        if self.n_scales == 0 {
            return Err(Error::Config("n_scales must be positive".into()));
        }
        if self.generator_arch == GeneratorArch::FcDenseNet {
            let div = 1usize << self.n_scales;
            for (axis, side) in [("width", self.crop_size.0), ("height", self.crop_size.1)] {
                if side % div != 0 || side / div == 0 {
                    return Err(Error::Config(format!(
                        "crop {axis} {side} is not divisible into {} scales (needs a positive multiple of {div})",
                        self.n_scales
                    )));
                }
            }
        }
        if self.seg_classes == 0 {
            return Err(Error::Config("seg_classes must be positive".into()));
        }
        Ok(())
    }

    /// Serializes to the flat `key = value` file format accepted by
    /// [`load_experiment_config`].
    pub fn to_key_value_string(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        push("name", self.name.clone());
        push("lambda_cyc_a", fmt_f64(self.lambda_cyc_a));
        push("lambda_cyc_b", fmt_f64(self.lambda_cyc_b));
        for (prefix, map) in [
            ("lambda_p", &self.lambda_p),
            ("lambda_ep", &self.lambda_ep),
            ("lambda_ei", &self.lambda_ei),
        ] {
            for (tag, v) in map {
                push(&format!("{prefix}_{tag}"), fmt_f64(*v));
            }
        }
        push("n_iter", self.n_iter.to_string());
        push("n_iter_decay", self.n_iter_decay.to_string());
        push("lr", fmt_f64(self.base_lr));
        push("beta1", fmt_f64(self.beta1));
        push("pool_size", self.pool_size.to_string());
        push("load_size", format!("{}x{}", self.load_size.0, self.load_size.1));
        push("crop_size", format!("{}x{}", self.crop_size.0, self.crop_size.1));
        push("generator_arch", self.generator_arch.as_str().to_string());
        push("n_scales", self.n_scales.to_string());
        push("use_seg_discriminator", self.use_seg_discriminator.to_string());
        push("seg_classes", self.seg_classes.to_string());
        push("perceptual_extractor", self.perceptual_extractor.as_str().to_string());
        push("growth_rate", self.growth_rate.to_string());
        push("layers_per_block", self.layers_per_block.to_string());
        push("first_conv_channels", self.first_conv_channels.to_string());
        push("resnet_blocks", self.resnet_blocks.to_string());
        push("resnet_channels", self.resnet_channels.to_string());
        push("disc_channels", self.disc_channels.to_string());
        out
    }
}

fn fmt_f64(v: f64) -> String {
    // Keep full precision so round-trips are exact.
    let s = format!("{v}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

/// Returns the named preset with the published table values merged over
/// the constants table. All unlisted weights are zero.
pub fn builtin_config(name: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::constants();
    cfg.name = name.to_string();
    match name {
        "cycle" => {
            cfg.lambda_cyc_a = 10.0;
            cfg.lambda_cyc_b = 10.0;
            cfg.generator_arch = GeneratorArch::ResnetBlocks;
        }
        "cycle+pdist" => {
            cfg.lambda_cyc_a = 10.0;
            cfg.lambda_cyc_b = 10.0;
            for tag in PairTag::ALL {
                cfg.lambda_p.insert(tag, 0.25);
            }
            cfg.generator_arch = GeneratorArch::FcDenseNet;
            cfg.n_scales = scales_for_crop(cfg.crop_size.0.min(cfg.crop_size.1))?;
        }
        "cycle+edge" => {
            cfg.lambda_cyc_a = 10.0;
            cfg.lambda_cyc_b = 5.0;
            cfg.lambda_ep.insert(PairTag::Afb, 100.0);
            cfg.lambda_ep.insert(PairTag::Farb, 100.0);
            cfg.lambda_ei.insert(PairTag::Bfa, 10.0);
            cfg.lambda_ei.insert(PairTag::Fbra, 10.0);
            cfg.generator_arch = GeneratorArch::FcDenseNet;
            cfg.n_scales = scales_for_crop(cfg.crop_size.0.min(cfg.crop_size.1))?;
        }
        other => return Err(Error::UnknownPreset(other.to_string())),
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses the flat `key = value` config format, resolving `preset` first
/// and applying the remaining keys as overrides.
pub fn parse_experiment_config(text: &str) -> Result<ExperimentConfig> {
    let mut preset: Option<String> = None;
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected `key = value`, got `{}`",
                lineno + 1,
                line
            )));
        };
        let key = k.trim().to_string();
        let val = v.trim().to_string();
        if key == "preset" {
            preset = Some(val);
        } else {
            pairs.push((key, val));
        }
    }

    let mut cfg = match preset {
        Some(p) => builtin_config(&p)?,
        None => ExperimentConfig::constants(),
    };
    let mut n_scales_set = false;
    let mut crop_set = false;

    for (key, val) in &pairs {
        apply_key(&mut cfg, key, val)?;
        if key == "n_scales" {
            n_scales_set = true;
        }
        if key == "crop_size" {
            crop_set = true;
        }
    }

    // An fcdensenet config that changes the crop without pinning the scale
    // count gets the matching scale count for the new crop.
    if cfg.generator_arch == GeneratorArch::FcDenseNet && !n_scales_set {
        cfg.n_scales = scales_for_crop(cfg.crop_size.0.min(cfg.crop_size.1))?;
    }
    let _ = crop_set;
    cfg.validate()?;
    Ok(cfg)
}

fn apply_key(cfg: &mut ExperimentConfig, key: &str, val: &str) -> Result<()> {
    let parse_f64 = |key: &str, val: &str| -> Result<f64> {
        val.parse::<f64>()
            .map_err(|_| Error::Config(format!("key `{key}`: `{val}` is not a number")))
    };
    let parse_usize = |key: &str, val: &str| -> Result<usize> {
        val.parse::<usize>()
            .map_err(|_| Error::Config(format!("key `{key}`: `{val}` is not a nonnegative integer")))
    };
    let parse_size = |key: &str, val: &str| -> Result<(usize, usize)> {
        let err = || Error::Config(format!("key `{key}`: `{val}` is not WIDTHxHEIGHT"));
        let (w, h) = val.split_once(['x', 'X']).ok_or_else(err)?;
        Ok((w.trim().parse().map_err(|_| err())?, h.trim().parse().map_err(|_| err())?))
    };
    let parse_bool = |key: &str, val: &str| -> Result<bool> {
        match val {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(Error::Config(format!("key `{key}`: `{val}` is not a boolean"))),
        }
    };

    if let Some(rest) = key.strip_prefix("lambda_") {
        match rest {
            "cyc_a" => cfg.lambda_cyc_a = parse_f64(key, val)?,
            "cyc_b" => cfg.lambda_cyc_b = parse_f64(key, val)?,
            _ => {
                let (kind, tag) = rest
                    .split_once('_')
                    .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
                let tag: PairTag = tag.parse()?;
                let v = parse_f64(key, val)?;
                match kind {
                    "p" => cfg.lambda_p.insert(tag, v),
                    "ep" => cfg.lambda_ep.insert(tag, v),
                    "ei" => cfg.lambda_ei.insert(tag, v),
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                };
            }
        }
        return Ok(());
    }

    match key {
        "name" => cfg.name = val.to_string(),
        "n_iter" => cfg.n_iter = parse_usize(key, val)?,
        "n_iter_decay" => cfg.n_iter_decay = parse_usize(key, val)?,
        "lr" | "base_lr" => cfg.base_lr = parse_f64(key, val)?,
        "beta1" => cfg.beta1 = parse_f64(key, val)?,
        "pool_size" => cfg.pool_size = parse_usize(key, val)?,
        "load_size" => cfg.load_size = parse_size(key, val)?,
        "crop_size" => cfg.crop_size = parse_size(key, val)?,
        "generator_arch" => cfg.generator_arch = val.parse()?,
        "n_scales" => cfg.n_scales = parse_usize(key, val)?,
        "use_seg_discriminator" => cfg.use_seg_discriminator = parse_bool(key, val)?,
        "seg_classes" => cfg.seg_classes = parse_usize(key, val)?,
        "perceptual_extractor" => cfg.perceptual_extractor = val.parse()?,
        "growth_rate" => cfg.growth_rate = parse_usize(key, val)?,
        "layers_per_block" => cfg.layers_per_block = parse_usize(key, val)?,
        "first_conv_channels" => cfg.first_conv_channels = parse_usize(key, val)?,
        "resnet_blocks" => cfg.resnet_blocks = parse_usize(key, val)?,
        "resnet_channels" => cfg.resnet_channels = parse_usize(key, val)?,
        "disc_channels" => cfg.disc_channels = parse_usize(key, val)?,
        _ => return Err(Error::Config(format!("unknown key `{key}`"))),
    }
    Ok(())
}

/// Loads and validates a config file in the flat `key = value` format.
pub fn load_experiment_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("reading config {}: {e}", path.display())))?;
    parse_experiment_config(&text)
}
