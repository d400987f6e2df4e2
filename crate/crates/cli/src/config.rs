//! Line-oriented `key = value` configuration.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, so an
//! empty file is a valid config. [`Config::emit`] writes every key in a fixed
//! order with shortest round-trip number formatting, so parsing the emitted
//! text gives back the same config and emitting it again gives the same text.

use std::fmt::Write as _;
use std::path::Path;

use dsu_core::disentangle::Consistency;
use dsu_core::synth::{CorruptionOp, Shape, SynthSpec};
use dsu_core::trainer::{TrainConfig, UpdateMode, Weighting};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub train: TrainConfig,
    /// Side length every image is resized to before training and inference.
    pub input_size: usize,
    /// CRF-filter supplied pseudo-labels in `init-labels`.
    pub init_crf: bool,
    /// Use `1 − depth` (for disparity-style maps where near is dark).
    pub depth_invert: bool,
    pub synth: SynthSpec,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            input_size: 64,
            init_crf: false,
            depth_invert: false,
            synth: SynthSpec::default(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "seed",
    "input.size",
    "tau",
    "rounds",
    "batch",
    "lr",
    "channels",
    "weighting",
    "update",
    "flip",
    "ha.enabled",
    "ha.size",
    "ha.sigma",
    "lambda",
    "consistency",
    "crf.w_app",
    "crf.theta_alpha",
    "crf.theta_beta",
    "crf.w_smooth",
    "crf.theta_gamma",
    "crf.iterations",
    "crf.window",
    "crf.binarize",
    "init.crf",
    "depth.invert",
    "synth.samples",
    "synth.eval",
    "synth.size",
    "synth.objects_min",
    "synth.objects_max",
    "synth.shapes",
    "synth.separation",
    "synth.corruption",
    "synth.ops",
    "synth.max_radius",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value for {key}: {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(CliError::Usage(format!(
            "invalid value for {key}: {value:?} (true|false)"
        ))),
    }
}

fn parse_list<T>(key: &str, value: &str, item: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|s| {
            item(s.trim()).ok_or_else(|| CliError::Usage(format!("invalid value for {key}: {s:?}")))
        })
        .collect()
}

fn weighting_name(w: Weighting) -> &'static str {
    match w {
        Weighting::Ats => "ats",
        Weighting::Uniform => "uniform",
        Weighting::Attentive => "attentive",
    }
}

fn update_name(u: UpdateMode) -> &'static str {
    match u {
        UpdateMode::Dsu => "dsu",
        UpdateMode::CrfOnly => "crf",
        UpdateMode::None => "none",
    }
}

fn shape_name(s: Shape) -> &'static str {
    match s {
        Shape::Ellipse => "ellipse",
        Shape::Rectangle => "rectangle",
    }
}

fn op_name(op: CorruptionOp) -> &'static str {
    match op {
        CorruptionOp::Dilate => "dilate",
        CorruptionOp::Erode => "erode",
        CorruptionOp::Hole => "hole",
        CorruptionOp::BackgroundBlob => "background-blob",
    }
}

impl Config {
    /// Defaults, then the file (if any), then `key=value` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Config::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            cfg.apply_text(&text)?;
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("expected key=value, got {o:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(a, _)| a).trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let s = &mut self.synth;
        match key {
            "seed" => {
                t.seed = parse(key, value)?;
                s.seed = t.seed;
            }
            "input.size" => self.input_size = parse(key, value)?,
            "tau" => t.tau = parse(key, value)?,
            "rounds" => t.rounds = parse(key, value)?,
            "batch" => t.batch = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "channels" => t.channels = parse(key, value)?,
            "weighting" => {
                t.weighting = match value {
                    "ats" => Weighting::Ats,
                    "uniform" => Weighting::Uniform,
                    "attentive" => Weighting::Attentive,
                    _ => {
                        return Err(CliError::Usage(format!(
                            "invalid value for {key}: {value:?} (ats|uniform|attentive)"
                        )))
                    }
                }
            }
            "update" => {
                t.update = match value {
                    "dsu" => UpdateMode::Dsu,
                    "crf" => UpdateMode::CrfOnly,
                    "none" => UpdateMode::None,
                    _ => {
                        return Err(CliError::Usage(format!(
                            "invalid value for {key}: {value:?} (dsu|crf|none)"
                        )))
                    }
                }
            }
            "flip" => t.flip = parse_bool(key, value)?,
            "ha.enabled" => t.objective.holistic_attention = parse_bool(key, value)?,
            "ha.size" => t.kernel.size = parse(key, value)?,
            "ha.sigma" => t.kernel.sigma = parse(key, value)?,
            "lambda" => t.objective.lambda = parse(key, value)?,
            "consistency" => {
                t.objective.consistency = match value {
                    "l1" => Consistency::L1,
                    "l2" => Consistency::L2,
                    _ => {
                        return Err(CliError::Usage(format!(
                            "invalid value for {key}: {value:?} (l1|l2)"
                        )))
                    }
                }
            }
            "crf.w_app" => t.label.crf.w_app = parse(key, value)?,
            "crf.theta_alpha" => t.label.crf.theta_alpha = parse(key, value)?,
            "crf.theta_beta" => t.label.crf.theta_beta = parse(key, value)?,
            "crf.w_smooth" => t.label.crf.w_smooth = parse(key, value)?,
            "crf.theta_gamma" => t.label.crf.theta_gamma = parse(key, value)?,
            "crf.iterations" => t.label.crf.iterations = parse(key, value)?,
            "crf.window" => {
                t.label.crf.window = if value == "none" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "crf.binarize" => t.label.binarize = parse_bool(key, value)?,
            "init.crf" => self.init_crf = parse_bool(key, value)?,
            "depth.invert" => self.depth_invert = parse_bool(key, value)?,
            "synth.samples" => s.samples = parse(key, value)?,
            "synth.eval" => s.eval_samples = parse(key, value)?,
            "synth.size" => {
                s.width = parse(key, value)?;
                s.height = s.width;
            }
            "synth.objects_min" => s.objects.0 = parse(key, value)?,
            "synth.objects_max" => s.objects.1 = parse(key, value)?,
            "synth.shapes" => {
                s.shapes = parse_list(key, value, |v| match v {
                    "ellipse" => Some(Shape::Ellipse),
                    "rectangle" => Some(Shape::Rectangle),
                    _ => None,
                })?
            }
            "synth.separation" => s.depth_separation = parse(key, value)?,
            "synth.corruption" => s.corruption.target_mae = parse(key, value)?,
            "synth.ops" => {
                s.corruption.ops = parse_list(key, value, |v| match v {
                    "dilate" => Some(CorruptionOp::Dilate),
                    "erode" => Some(CorruptionOp::Erode),
                    "hole" => Some(CorruptionOp::Hole),
                    "background-blob" => Some(CorruptionOp::BackgroundBlob),
                    _ => None,
                })?
            }
            "synth.max_radius" => s.corruption.max_radius = parse(key, value)?,
            _ => return Err(CliError::Usage(format!("unknown config key: {key}"))),
        }
        Ok(())
    }

    /// Every key, one per line, in [`KEYS`] order.
    pub fn emit(&self) -> String {
        let t = &self.train;
        let s = &self.synth;
        let join = |v: Vec<&str>| v.join(",");
        let mut out = String::new();
        for key in KEYS {
            let value = match *key {
                "seed" => t.seed.to_string(),
                "input.size" => self.input_size.to_string(),
                "tau" => t.tau.to_string(),
                "rounds" => t.rounds.to_string(),
                "batch" => t.batch.to_string(),
                "lr" => t.lr.to_string(),
                "channels" => t.channels.to_string(),
                "weighting" => weighting_name(t.weighting).into(),
                "update" => update_name(t.update).into(),
                "flip" => t.flip.to_string(),
                "ha.enabled" => t.objective.holistic_attention.to_string(),
                "ha.size" => t.kernel.size.to_string(),
                "ha.sigma" => t.kernel.sigma.to_string(),
                "lambda" => t.objective.lambda.to_string(),
                "consistency" => match t.objective.consistency {
                    Consistency::L1 => "l1".into(),
                    Consistency::L2 => "l2".into(),
                },
                "crf.w_app" => t.label.crf.w_app.to_string(),
                "crf.theta_alpha" => t.label.crf.theta_alpha.to_string(),
                "crf.theta_beta" => t.label.crf.theta_beta.to_string(),
                "crf.w_smooth" => t.label.crf.w_smooth.to_string(),
                "crf.theta_gamma" => t.label.crf.theta_gamma.to_string(),
                "crf.iterations" => t.label.crf.iterations.to_string(),
                "crf.window" => t.label.crf.window.map_or("none".into(), |w| w.to_string()),
                "crf.binarize" => t.label.binarize.to_string(),
                "init.crf" => self.init_crf.to_string(),
                "depth.invert" => self.depth_invert.to_string(),
                "synth.samples" => s.samples.to_string(),
                "synth.eval" => s.eval_samples.to_string(),
                "synth.size" => s.width.to_string(),
                "synth.objects_min" => s.objects.0.to_string(),
                "synth.objects_max" => s.objects.1.to_string(),
                "synth.shapes" => join(s.shapes.iter().map(|&x| shape_name(x)).collect()),
                "synth.separation" => s.depth_separation.to_string(),
                "synth.corruption" => s.corruption.target_mae.to_string(),
                "synth.ops" => join(s.corruption.ops.iter().map(|&x| op_name(x)).collect()),
                "synth.max_radius" => s.corruption.max_radius.to_string(),
                other => unreachable!("key {other} has no emitter"),
            };
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size < 4 {
            return Err(CliError::Usage("input.size must be at least 4".into()));
        }
        if self.synth.width != self.synth.height {
            return Err(CliError::Usage("synthetic images must be square".into()));
        }
        self.train.validate()?;
        Ok(())
    }
}
