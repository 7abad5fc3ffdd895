//! Run configuration: defaults, overridden by a `key = value` file,
//! overridden by command-line flags.
//!
//! File format: one `key = value` pair per line; `#` starts a comment;
//! blank lines are ignored; keys may appear at most once. Noise levels
//! (`sigma_min`, `sigma_max`) are given in 8-bit units.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::invertible::TransformKind;
use crate::model::ModelConfig;
use crate::training::{Norm, TrainConfig};

pub const WORKERS_ENV: &str = "INVDN_WORKERS";
pub const DEFAULT_ITERS: u64 = 20_000;

pub const MODEL_KEYS: &[&str] =
    &["num_downscale_blocks", "blocks_per_scale", "hidden_channels", "input_channels", "transform"];

pub const TRAIN_KEYS: &[&str] = &[
    "iters",
    "lr",
    "beta1",
    "beta2",
    "batch_size",
    "patch",
    "lr_halve_every",
    "loss_forw",
    "loss_back",
    "weight_forw",
    "weight_back",
    "grad_clip",
    "sigma_min",
    "sigma_max",
    "signal_gain",
    "seed",
    "checkpoint_every",
    "log_every",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Default,
    File,
    Cli,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Default => "default",
            Provenance::File => "file",
            Provenance::Cli => "cli",
        })
    }
}

/// Parse `key = value` lines into ordered pairs.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", i + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
}

fn parse_norm(key: &str, v: &str) -> Result<Norm> {
    match v.to_ascii_lowercase().as_str() {
        "l1" | "1" => Ok(Norm::L1),
        "l2" | "2" => Ok(Norm::L2),
        _ => Err(Error::Config(format!("`{key}` must be l1 or l2, got `{v}`"))),
    }
}

fn norm_name(n: Norm) -> &'static str {
    match n {
        Norm::L1 => "l1",
        Norm::L2 => "l2",
    }
}

/// Set one model key. Returns `false` if `key` is not a model key.
pub fn set_model_key(cfg: &mut ModelConfig, key: &str, v: &str) -> Result<bool> {
    match key {
        "num_downscale_blocks" => cfg.num_downscale_blocks = parse(key, v)?,
        "blocks_per_scale" => cfg.blocks_per_scale = parse(key, v)?,
        "hidden_channels" => cfg.hidden_channels = parse(key, v)?,
        "input_channels" => cfg.input_channels = parse(key, v)?,
        "transform" => cfg.transform = TransformKind::from_str(v).map_err(Error::Config)?,
        _ => return Ok(false),
    }
    Ok(true)
}

pub fn model_key_value(cfg: &ModelConfig, key: &str) -> Option<String> {
    Some(match key {
        "num_downscale_blocks" => cfg.num_downscale_blocks.to_string(),
        "blocks_per_scale" => cfg.blocks_per_scale.to_string(),
        "hidden_channels" => cfg.hidden_channels.to_string(),
        "input_channels" => cfg.input_channels.to_string(),
        "transform" => cfg.transform.name().to_string(),
        _ => return None,
    })
}

/// `key=value` lines describing a model configuration.
pub fn model_config_text(cfg: &ModelConfig) -> String {
    MODEL_KEYS
        .iter()
        .map(|k| format!("{k}={}\n", model_key_value(cfg, k).expect("model key")))
        .collect()
}

pub fn model_config_from_text(text: &str) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::default();
    for (k, v) in parse_pairs(text)? {
        if !set_model_key(&mut cfg, &k, &v)? {
            return Err(Error::Config(format!("unknown model key `{k}`")));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Fully resolved settings for a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub iters: u64,
    provenance: BTreeMap<String, Provenance>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let provenance = MODEL_KEYS
            .iter()
            .chain(TRAIN_KEYS)
            .map(|k| (k.to_string(), Provenance::Default))
            .collect();
        Self { model: ModelConfig::default(), train: TrainConfig::default(), iters: DEFAULT_ITERS, provenance }
    }
}

impl RunConfig {
    /// Defaults, then `file_text` (if any), then `cli` pairs.
    pub fn resolve(file_text: Option<&str>, cli: &[(String, String)]) -> Result<Self> {
        let mut rc = Self::default();
        if let Some(text) = file_text {
            for (k, v) in parse_pairs(text)? {
                rc.set(&k, &v, Provenance::File)?;
            }
        }
        for (k, v) in cli {
            rc.set(k, v, Provenance::Cli)?;
        }
        rc.model.validate()?;
        rc.train.validate(rc.model.scale_factor())?;
        Ok(rc)
    }

    pub fn from_file(path: &Path, cli: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::resolve(Some(&text), cli)
    }

    pub fn set(&mut self, key: &str, v: &str, from: Provenance) -> Result<()> {
        if !set_model_key(&mut self.model, key, v)? {
            let t = &mut self.train;
            match key {
                "iters" => self.iters = parse(key, v)?,
                "lr" => t.lr0 = parse(key, v)?,
                "beta1" => t.betas.0 = parse(key, v)?,
                "beta2" => t.betas.1 = parse(key, v)?,
                "batch_size" => t.batch_size = parse(key, v)?,
                "patch" => t.patch = parse(key, v)?,
                "lr_halve_every" => t.lr_halve_every = parse(key, v)?,
                "loss_forw" => t.m_forw = parse_norm(key, v)?,
                "loss_back" => t.m_back = parse_norm(key, v)?,
                "weight_forw" => t.loss_weights.0 = parse(key, v)?,
                "weight_back" => t.loss_weights.1 = parse(key, v)?,
                "grad_clip" => t.grad_clip = parse(key, v)?,
                "sigma_min" => t.noise.sigma_min = parse::<f32>(key, v)? / 255.0,
                "sigma_max" => t.noise.sigma_max = parse::<f32>(key, v)? / 255.0,
                "signal_gain" => t.noise.signal_gain = parse(key, v)?,
                "seed" => t.seed = parse(key, v)?,
                "checkpoint_every" => t.checkpoint_every = parse(key, v)?,
                "log_every" => t.log_every = parse(key, v)?,
                _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
            }
        }
        self.provenance.insert(key.to_string(), from);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        if let Some(v) = model_key_value(&self.model, key) {
            return Some(v);
        }
        let t = &self.train;
        Some(match key {
            "iters" => self.iters.to_string(),
            "lr" => t.lr0.to_string(),
            "beta1" => t.betas.0.to_string(),
            "beta2" => t.betas.1.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "patch" => t.patch.to_string(),
            "lr_halve_every" => t.lr_halve_every.to_string(),
            "loss_forw" => norm_name(t.m_forw).to_string(),
            "loss_back" => norm_name(t.m_back).to_string(),
            "weight_forw" => t.loss_weights.0.to_string(),
            "weight_back" => t.loss_weights.1.to_string(),
            "grad_clip" => t.grad_clip.to_string(),
            "sigma_min" => (t.noise.sigma_min * 255.0).to_string(),
            "sigma_max" => (t.noise.sigma_max * 255.0).to_string(),
            "signal_gain" => t.noise.signal_gain.to_string(),
            "seed" => t.seed.to_string(),
            "checkpoint_every" => t.checkpoint_every.to_string(),
            "log_every" => t.log_every.to_string(),
            _ => return None,
        })
    }

    pub fn provenance(&self, key: &str) -> Option<Provenance> {
        self.provenance.get(key).copied()
    }

    /// Every key with its value and where it came from.
    pub fn describe(&self) -> String {
        MODEL_KEYS
            .iter()
            .chain(TRAIN_KEYS)
            .map(|k| format!("{k} = {}  # {}\n", self.get(k).expect("known key"), self.provenance[*k]))
            .collect()
    }
}

/// Worker count for directory jobs: `INVDN_WORKERS` if set, otherwise the
/// available parallelism.
pub fn worker_count() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}
