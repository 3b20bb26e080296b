//! Batch loss with optional label-fraction scaling, the Noam schedule, and the
//! early-stopped training loop.

mod loss;
mod train_loop;

pub use loss::{
    batch_gradients, compute_batch_loss, label_fraction, shard_loss, validate_perplexity, BatchGradients, BatchLoss,
};
pub use train_loop::{train_loop, EarlyStopping, LogRow, Patience, TrainLog, TrainOutcome};

use crate::corpus::ContextExample;
use crate::error::{Error, Result};
use crate::tokenizer::{BpeModel, BOS, EOS};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Noam multiplier.
    pub base_lr: f64,
    pub warmup_steps: usize,
    /// Sentences per batch.
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    /// Scale each batch loss by its fraction of true-context examples.
    pub adapt_loss: bool,
    pub seed: u64,
    /// Sentences per gradient shard. Fixed independently of thread count so
    /// results do not depend on the parallelism available.
    pub shard_size: usize,
}

impl TrainConfig {
    pub fn paper(seed: u64) -> Self {
        TrainConfig {
            base_lr: 0.2,
            warmup_steps: 16_000,
            batch_size: 30,
            patience: 7,
            max_epochs: 100,
            adapt_loss: false,
            seed,
            shard_size: 8,
        }
    }

    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            warmup_steps: 400,
            batch_size: 32,
            max_epochs: 30,
            ..TrainConfig::paper(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::invalid(format!("train config: base_lr {} must be positive", self.base_lr)));
        }
        for (name, v) in [
            ("warmup_steps", self.warmup_steps),
            ("batch_size", self.batch_size),
            ("patience", self.patience),
            ("max_epochs", self.max_epochs),
            ("shard_size", self.shard_size),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("train config: {name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// `base_lr · d_model^-0.5 · min(step^-0.5, step · warmup^-1.5)`.
pub fn lr_at(step: usize, d_model: usize, warmup: usize, base_lr: f64) -> Result<f64> {
    if step == 0 {
        return Err(Error::invalid("lr_at: steps are numbered from 1"));
    }
    if warmup == 0 || d_model == 0 {
        return Err(Error::invalid("lr_at: warmup and d_model must be positive"));
    }
    let s = step as f64;
    let decay = s.powf(-0.5);
    let ramp = s * (warmup as f64).powf(-1.5);
    Ok(base_lr * (d_model as f64).powf(-0.5) * decay.min(ramp))
}

/// A tokenized, truncated training example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub context: Vec<usize>,
    pub source: Vec<usize>,
    /// BOS followed by the target tokens.
    pub target_in: Vec<usize>,
    /// The target tokens followed by EOS.
    pub target_out: Vec<usize>,
    pub label: u8,
}

impl Encoded {
    /// Truncates to `max_len`: the context keeps its last tokens, the source its
    /// first, and the target its first `max_len - 1` (room for BOS/EOS).
    pub fn new(context: Vec<usize>, source: Vec<usize>, target: &[usize], label: u8, max_len: usize) -> Self {
        let context = if context.len() > max_len {
            context[context.len() - max_len..].to_vec()
        } else {
            context
        };
        let mut source = source;
        source.truncate(max_len);
        let y = &target[..target.len().min(max_len.saturating_sub(1))];
        let mut target_in = Vec::with_capacity(y.len() + 1);
        target_in.push(BOS);
        target_in.extend_from_slice(y);
        let mut target_out = y.to_vec();
        target_out.push(EOS);
        Encoded {
            context,
            source,
            target_in,
            target_out,
            label,
        }
    }
}

pub fn encode_examples(bpe: &BpeModel, examples: &[ContextExample], max_len: usize) -> Vec<Encoded> {
    examples
        .iter()
        .map(|e| {
            Encoded::new(
                bpe.encode(&e.context),
                bpe.encode(&e.source),
                &bpe.encode(&e.target),
                e.label,
                max_len,
            )
        })
        .collect()
}
