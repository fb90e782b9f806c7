//! Run configuration: defaults, a flat `key = value` file, then flags.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use avsd_core::generation::{DecodeConfig, Method};
use avsd_core::trainer::{AdamConfig, AssemblyOptions, TrainConfig};
use avsd_core::{ModelConfig, Task};

use crate::error::{CliError, CliResult};

/// Environment variable naming the default data directory.
pub const DATA_ENV: &str = "AVSD_DATA";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Setting {
    TextOnly,
    TextVideo,
    TextVideoNoCaption,
}

impl FromStr for Setting {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "text-only" => Ok(Setting::TextOnly),
            "text+video" => Ok(Setting::TextVideo),
            "text+video-no-caption" => Ok(Setting::TextVideoNoCaption),
            _ => Err(CliError::Config(format!(
                "unknown setting `{s}` (text-only, text+video, text+video-no-caption)"
            ))),
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::TextOnly => "text-only",
            Setting::TextVideo => "text+video",
            Setting::TextVideoNoCaption => "text+video-no-caption",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "f32" | "32" => Ok(Precision::F32),
            "f64" | "64" => Ok(Precision::F64),
            _ => Err(CliError::Config(format!("unknown precision `{s}` (f32, f64)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub max_positions: usize,
    pub dropout: f32,
    pub d_v: usize,
    pub d_a: usize,
    pub setting: Setting,
    pub recaption: bool,
    pub weights: [f64; 3],
    pub max_history: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub clip: Option<f64>,
    pub task_sampling: bool,
    pub checkpoint_dir: PathBuf,
    pub checkpoint_every: u64,
    pub val_every: u64,
    pub val_limit: usize,
    pub decode: DecodeConfig,
    pub caption_max_length: usize,
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            layers: 2,
            hidden: 64,
            heads: 4,
            max_positions: 256,
            dropout: 0.1,
            d_v: 16,
            d_a: 8,
            setting: Setting::TextVideo,
            recaption: false,
            weights: [1.0; 3],
            max_history: 3,
            lr: AdamConfig::TOY_LR,
            batch_size: 16,
            steps: 1000,
            seed: 0,
            clip: Some(1.0),
            task_sampling: false,
            checkpoint_dir: PathBuf::from("runs/default"),
            checkpoint_every: 0,
            val_every: 0,
            val_limit: 50,
            decode: DecodeConfig::default(),
            caption_max_length: 20,
            precision: Precision::F32,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> CliResult<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(CliError::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

/// Parses a comma-separated task list into λ weights of 1 (listed) or 0.
pub fn parse_tasks(value: &str) -> CliResult<[f64; 3]> {
    let mut w = [0.0; 3];
    for name in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let t: Task = name.parse().map_err(|e: avsd_core::Error| CliError::Config(e.to_string()))?;
        w[t.index()] = 1.0;
    }
    Ok(w)
}

/// Reads a flat `key = value` file; `#` starts a comment.
pub fn read_config_file(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("{}:{}: expected `key = value`", path.display(), i + 1))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Sets one option by its config-file key.
    pub fn apply(&mut self, key: &str, value: &str) -> CliResult<()> {
        let k = key.replace('-', "_");
        match k.as_str() {
            "data" | "data_dir" => self.data_dir = PathBuf::from(value),
            "layers" => self.layers = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "max_positions" => self.max_positions = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "d_v" => self.d_v = parse(key, value)?,
            "d_a" => self.d_a = parse(key, value)?,
            "setting" => self.setting = value.parse()?,
            "recaption" => self.recaption = parse_bool(key, value)?,
            "tasks" => self.weights = parse_tasks(value)?,
            "weight_rlm" | "lambda_rlm" => self.weights[0] = parse(key, value)?,
            "weight_vasm" | "lambda_vasm" => self.weights[1] = parse(key, value)?,
            "weight_clm" | "lambda_clm" => self.weights[2] = parse(key, value)?,
            "max_history" => self.max_history = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "clip" => {
                self.clip = match value {
                    "none" | "off" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "task_sampling" => self.task_sampling = parse_bool(key, value)?,
            "checkpoint_dir" => self.checkpoint_dir = PathBuf::from(value),
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "val_every" => self.val_every = parse(key, value)?,
            "val_limit" => self.val_limit = parse(key, value)?,
            "decode" => self.decode.method = value.parse::<Method>().map_err(|e| CliError::Config(e.to_string()))?,
            "beam_size" => self.decode.beam_size = parse(key, value)?,
            "max_length" => self.decode.max_length = parse(key, value)?,
            "length_penalty" => self.decode.length_penalty = parse(key, value)?,
            "nucleus_p" => self.decode.nucleus_p = parse(key, value)?,
            "decode_seed" => self.decode.seed = parse(key, value)?,
            "caption_max_length" => self.caption_max_length = parse(key, value)?,
            "precision" => self.precision = value.parse()?,
            _ => return Err(CliError::Config(format!("unknown option `{key}`"))),
        }
        Ok(())
    }

    /// Defaults, then the environment's data root, then `file`, then
    /// `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> CliResult<Self> {
        let mut cfg = Self::default();
        if let Some(root) = std::env::var_os(DATA_ENV) {
            cfg.data_dir = PathBuf::from(root);
        }
        if let Some(path) = file {
            for (k, v) in read_config_file(path)? {
                cfg.apply(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            cfg.apply(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.recaption && self.setting != Setting::TextVideoNoCaption {
            return Err(CliError::Config(
                "recaption requires the text+video-no-caption setting".into(),
            ));
        }
        self.decode.validate()?;
        Ok(())
    }

    pub fn assembly(&self) -> AssemblyOptions {
        AssemblyOptions {
            max_history: self.max_history,
            include_video: self.setting != Setting::TextOnly,
            include_caption: self.setting != Setting::TextVideoNoCaption,
        }
    }

    /// λ weights after applying the setting: text-only trains RLM alone.
    pub fn effective_weights(&self) -> [f64; 3] {
        match self.setting {
            Setting::TextOnly => [self.weights[0], 0.0, 0.0],
            _ => self.weights,
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            n_layers: self.layers,
            hidden: self.hidden,
            n_heads: self.heads,
            vocab_size,
            max_positions: self.max_positions,
            d_v: self.d_v,
            d_a: self.d_a,
            dropout: self.dropout,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            seed: self.seed,
            weights: self.effective_weights(),
            clip: self.clip,
            adam: AdamConfig::with_lr(self.lr),
            assembly: self.assembly(),
            task_sampling: self.task_sampling,
            dropout: self.dropout > 0.0,
        }
    }

    pub fn caption_decode(&self) -> DecodeConfig {
        DecodeConfig {
            max_length: self.caption_max_length,
            ..self.decode.clone()
        }
    }

    /// Every option as `key = value`, readable by [`read_config_file`].
    pub fn to_file_string(&self) -> String {
        let mut m = BTreeMap::new();
        let d = &self.decode;
        let tasks: Vec<&str> = Task::ALL
            .iter()
            .filter(|t| self.weights[t.index()] > 0.0)
            .map(|t| t.name())
            .collect();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("data", self.data_dir.display().to_string());
        put("layers", self.layers.to_string());
        put("hidden", self.hidden.to_string());
        put("heads", self.heads.to_string());
        put("max_positions", self.max_positions.to_string());
        put("dropout", self.dropout.to_string());
        put("d_v", self.d_v.to_string());
        put("d_a", self.d_a.to_string());
        put("setting", self.setting.to_string());
        put("recaption", self.recaption.to_string());
        put("tasks", tasks.join(","));
        put("weight_rlm", self.weights[0].to_string());
        put("weight_vasm", self.weights[1].to_string());
        put("weight_clm", self.weights[2].to_string());
        put("max_history", self.max_history.to_string());
        put("lr", self.lr.to_string());
        put("batch_size", self.batch_size.to_string());
        put("steps", self.steps.to_string());
        put("seed", self.seed.to_string());
        put("clip", self.clip.map_or("none".into(), |c| c.to_string()));
        put("task_sampling", self.task_sampling.to_string());
        put("checkpoint_dir", self.checkpoint_dir.display().to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("val_every", self.val_every.to_string());
        put("val_limit", self.val_limit.to_string());
        put("decode", d.method.name().to_string());
        put("beam_size", d.beam_size.to_string());
        put("max_length", d.max_length.to_string());
        put("length_penalty", d.length_penalty.to_string());
        put("nucleus_p", d.nucleus_p.to_string());
        put("decode_seed", d.seed.to_string());
        put("caption_max_length", self.caption_max_length.to_string());
        put(
            "precision",
            match self.precision {
                Precision::F32 => "f32",
                Precision::F64 => "f64",
            }
            .to_string(),
        );
        m.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
