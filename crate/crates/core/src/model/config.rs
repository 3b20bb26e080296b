use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::N_SPECIAL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    #[default]
    Gelu,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            _ => Err(Error::invalid(format!("unknown activation `{s}` (expected relu or gelu)"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Gelu => "gelu",
        })
    }
}

/// Architecture hyperparameters shared by both encoders and the decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    /// Feed-forward nonlinearity.
    pub activation: Activation,
}

impl ModelConfig {
    /// 6 layers, 8 heads, 512/2048, dropout 0.3, max length 140.
    pub fn paper(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 6,
            n_heads: 8,
            d_model: 512,
            d_ff: 2048,
            max_len: 140,
            vocab_size,
            dropout: 0.3,
            activation: Activation::Gelu,
        }
    }

    /// 2 layers, 4 heads, 64/256, max length 64.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 2,
            n_heads: 4,
            d_model: 64,
            d_ff: 256,
            max_len: 64,
            vocab_size,
            dropout: 0.1,
            activation: Activation::Gelu,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("max_len", self.max_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("model config: {name} must be at least 1")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::invalid(format!(
                "model config: d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size <= N_SPECIAL {
            return Err(Error::invalid(format!(
                "model config: vocab_size {} leaves no room beyond the {N_SPECIAL} specials",
                self.vocab_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("model config: dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// `key = value` lines, stable field order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_layers = {}", self.n_layers);
        let _ = writeln!(s, "n_heads = {}", self.n_heads);
        let _ = writeln!(s, "d_model = {}", self.d_model);
        let _ = writeln!(s, "d_ff = {}", self.d_ff);
        let _ = writeln!(s, "max_len = {}", self.max_len);
        let _ = writeln!(s, "vocab_size = {}", self.vocab_size);
        let _ = writeln!(s, "dropout = {}", self.dropout);
        let _ = writeln!(s, "activation = {}", self.activation);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::desk(N_SPECIAL + 1);
        let mut seen = 0;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| Error::invalid(format!("model config line {}: {msg}", i + 1));
            let (k, v) = line.split_once('=').ok_or_else(|| bad("expected `key = value`".into()))?;
            let (k, v) = (k.trim(), v.trim());
            let int = || v.parse::<usize>().map_err(|_| bad(format!("bad integer `{v}`")));
            match k {
                "n_layers" => cfg.n_layers = int()?,
                "n_heads" => cfg.n_heads = int()?,
                "d_model" => cfg.d_model = int()?,
                "d_ff" => cfg.d_ff = int()?,
                "max_len" => cfg.max_len = int()?,
                "vocab_size" => cfg.vocab_size = int()?,
                "dropout" => cfg.dropout = v.parse().map_err(|_| bad(format!("bad float `{v}`")))?,
                "activation" => cfg.activation = v.parse()?,
                _ => return Err(bad(format!("unknown key `{k}`"))),
            }
            seen += 1;
        }
        if seen != 8 {
            return Err(Error::invalid(format!("model config: expected 8 fields, found {seen}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
