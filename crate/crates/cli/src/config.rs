//! `key = value` run configuration: profile defaults, then file values, then flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use docnmt::corpus::ContextMode;
use docnmt::decoder::DecodeConfig;
use docnmt::model::{Activation, ModelConfig};
use docnmt::trainer::TrainConfig;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}:{line}: {msg}")]
    Line { path: String, line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Paper,
    Desk,
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            _ => Err(format!("unknown profile `{s}` (expected paper or desk)")),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    /// `vocab_size` here is the BPE training target; checkpoints record the learned size.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub seed: u64,
    pub context_mode: ContextMode,
    pub context_size: usize,
    pub parallel: bool,
    pub train_data: Option<PathBuf>,
    pub valid_data: Option<PathBuf>,
}

pub const KEYS: &[&str] = &[
    "profile",
    "seed",
    "context_mode",
    "context_size",
    "adapt_loss",
    "n_layers",
    "n_heads",
    "d_model",
    "d_ff",
    "max_len",
    "dropout",
    "activation",
    "vocab_size",
    "base_lr",
    "warmup_steps",
    "warmup",
    "batch_size",
    "patience",
    "max_epochs",
    "shard_size",
    "beam_size",
    "length_penalty",
    "max_decode_len",
    "parallel",
    "train_data",
    "valid_data",
];

impl RunConfig {
    pub fn profile(profile: Profile) -> Self {
        let (model, train, vocab) = match profile {
            Profile::Paper => (ModelConfig::paper(40000), TrainConfig::paper(1), 40000),
            Profile::Desk => (ModelConfig::desk(1000), TrainConfig::desk(1), 1000),
        };
        RunConfig {
            profile,
            model: ModelConfig { vocab_size: vocab, ..model },
            train,
            decode: DecodeConfig::default(),
            seed: 1,
            context_mode: ContextMode::Prev,
            context_size: 2,
            parallel: true,
            train_data: None,
            valid_data: None,
        }
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("`{key}`: cannot parse `{v}`"))
        }
        fn flag(key: &str, v: &str) -> Result<bool, String> {
            match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(format!("`{key}`: expected true or false, got `{v}`")),
            }
        }
        match key {
            "profile" => self.profile = value.parse()?,
            "seed" => self.seed = num(key, value)?,
            "context_mode" => {
                self.context_mode = value.parse::<ContextMode>().map_err(|e| e.to_string())?;
                if self.context_mode == ContextMode::SelfSource {
                    return Err("`context_mode`: training regimes are prev, random or mix".into());
                }
            }
            "context_size" => self.context_size = num(key, value)?,
            "adapt_loss" => self.train.adapt_loss = flag(key, value)?,
            "n_layers" => self.model.n_layers = num(key, value)?,
            "n_heads" => self.model.n_heads = num(key, value)?,
            "d_model" => self.model.d_model = num(key, value)?,
            "d_ff" => self.model.d_ff = num(key, value)?,
            "max_len" => self.model.max_len = num(key, value)?,
            "dropout" => self.model.dropout = num(key, value)?,
            "activation" => self.model.activation = value.parse::<Activation>().map_err(|e| e.to_string())?,
            "vocab_size" => self.model.vocab_size = num(key, value)?,
            "base_lr" => self.train.base_lr = num(key, value)?,
            "warmup_steps" | "warmup" => self.train.warmup_steps = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "patience" => self.train.patience = num(key, value)?,
            "max_epochs" => self.train.max_epochs = num(key, value)?,
            "shard_size" => self.train.shard_size = num(key, value)?,
            "beam_size" => self.decode.beam_size = num(key, value)?,
            "length_penalty" => self.decode.length_penalty_alpha = num(key, value)?,
            "max_decode_len" => self.decode.max_decode_len = num(key, value)?,
            "parallel" => self.parallel = flag(key, value)?,
            "train_data" => self.train_data = Some(PathBuf::from(value)),
            "valid_data" => self.valid_data = Some(PathBuf::from(value)),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.model.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        self.decode.validate().map_err(|e| e.to_string())?;
        if self.context_size == 0 {
            return Err("context_size must be at least 1".into());
        }
        Ok(())
    }

    /// `key = value` lines that reproduce this configuration.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let d = &self.decode;
        let mut lines = vec![
            format!("profile = {}", self.profile),
            format!("seed = {}", self.seed),
            format!("context_mode = {}", self.context_mode),
            format!("context_size = {}", self.context_size),
            format!("adapt_loss = {}", t.adapt_loss),
            format!("n_layers = {}", m.n_layers),
            format!("n_heads = {}", m.n_heads),
            format!("d_model = {}", m.d_model),
            format!("d_ff = {}", m.d_ff),
            format!("max_len = {}", m.max_len),
            format!("dropout = {}", m.dropout),
            format!("activation = {}", m.activation),
            format!("vocab_size = {}", m.vocab_size),
            format!("base_lr = {}", t.base_lr),
            format!("warmup_steps = {}", t.warmup_steps),
            format!("batch_size = {}", t.batch_size),
            format!("patience = {}", t.patience),
            format!("max_epochs = {}", t.max_epochs),
            format!("shard_size = {}", t.shard_size),
            format!("beam_size = {}", d.beam_size),
            format!("length_penalty = {}", d.length_penalty_alpha),
            format!("max_decode_len = {}", d.max_decode_len),
            format!("parallel = {}", self.parallel),
        ];
        if let Some(p) = &self.train_data {
            lines.push(format!("train_data = {}", p.display()));
        }
        if let Some(p) = &self.valid_data {
            lines.push(format!("valid_data = {}", p.display()));
        }
        lines.join("\n") + "\n"
    }
}

/// Splits `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str, origin: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| ConfigError::Line {
            path: origin.to_string(),
            line: i + 1,
            msg,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(err("missing key".into()));
        }
        if !KEYS.contains(&k) {
            return Err(err(format!("unknown key `{k}`")));
        }
        out.push((i + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Defaults < file < `overrides`. A `profile` key anywhere selects the base defaults.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig, ConfigError> {
    // (key, value, file line)
    let mut pairs: Vec<(String, String, Option<usize>)> = Vec::new();
    let origin = path.map(|p| p.display().to_string()).unwrap_or_default();
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Invalid(format!("{origin}: {e}")))?;
        for (line, k, v) in parse_pairs(&text, &origin)? {
            pairs.push((k, v, Some(line)));
        }
    }
    for (k, v) in overrides {
        if !KEYS.contains(&k.as_str()) {
            return Err(ConfigError::Invalid(format!("unknown key `{k}`")));
        }
        pairs.push((k.clone(), v.clone(), None));
    }
    let profile = match pairs.iter().rev().find(|(k, ..)| k == "profile") {
        Some((_, v, _)) => v.parse().map_err(ConfigError::Invalid)?,
        None => Profile::Paper,
    };
    let mut cfg = RunConfig::profile(profile);
    for (k, v, line) in &pairs {
        cfg.set(k, v).map_err(|msg| match line {
            Some(line) => ConfigError::Line {
                path: origin.clone(),
                line: *line,
                msg,
            },
            None => ConfigError::Invalid(msg),
        })?;
    }
    cfg.train.seed = cfg.seed;
    cfg.validate().map_err(ConfigError::Invalid)?;
    Ok(cfg)
}
