use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{batch_gradients, lr_at, validate_perplexity, Encoded, TrainConfig};
use crate::error::{Error, Result};
use crate::exec::{mix_index, sub_seed, Execution};
use crate::model::ModelParams;
use crate::tensor::{adam_step, AdamConfig, AdamState, Float};

#[derive(Debug, Clone, PartialEq)]
pub enum LogRow {
    Step { step: usize, lr: f64, loss: f64, alpha: f64 },
    Epoch { epoch: usize, step: usize, perplexity: f64 },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    /// Header `step lr loss alpha`; epoch rows read `epoch <n> perplexity <p>`.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("step\tlr\tloss\talpha\n");
        for r in &self.rows {
            let _ = match r {
                LogRow::Step { step, lr, loss, alpha } => writeln!(s, "{step}\t{lr:e}\t{loss}\t{alpha}"),
                LogRow::Epoch { epoch, perplexity, .. } => writeln!(s, "epoch\t{epoch}\tperplexity\t{perplexity}"),
            };
        }
        s
    }

    pub fn loss_at(&self, step: usize) -> Option<f64> {
        self.rows.iter().find_map(|r| match r {
            LogRow::Step { step: s, loss, .. } if *s == step => Some(*loss),
            _ => None,
        })
    }

    pub fn perplexities(&self) -> Vec<f64> {
        self.rows
            .iter()
            .filter_map(|r| match r {
                LogRow::Epoch { perplexity, .. } => Some(*perplexity),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Patience {
    Improved,
    /// Consecutive evaluations without improvement so far.
    Waiting(usize),
    Stop,
}

/// Stops after `patience` consecutive evaluations that fail to beat the best perplexity.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    bad: usize,
    epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience: patience.max(1),
            best: None,
            best_epoch: 0,
            bad: 0,
            epochs: 0,
        }
    }

    pub fn observe(&mut self, perplexity: f64) -> Patience {
        self.epochs += 1;
        if self.best.map_or(true, |b| perplexity < b) {
            self.best = Some(perplexity);
            self.best_epoch = self.epochs;
            self.bad = 0;
            return Patience::Improved;
        }
        self.bad += 1;
        if self.bad >= self.patience {
            Patience::Stop
        } else {
            Patience::Waiting(self.bad)
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best.map(|b| (self.best_epoch, b))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Float> {
    /// Lowest-perplexity checkpoint (or the last good one after an abort before any evaluation).
    pub best: ModelParams<T>,
    pub best_epoch: usize,
    pub best_perplexity: Option<f64>,
    pub epochs: usize,
    pub steps: usize,
    pub log: TrainLog,
    /// Optimizer state at the end of training.
    pub adam: AdamState<T>,
    /// Set when training stopped on a non-finite loss or gradient.
    pub aborted: Option<String>,
}

/// Adam with the Noam schedule, seeded per-epoch shuffling, per-epoch validation
/// and early stopping on validation perplexity.
pub fn train_loop<T: Float>(
    cfg: &TrainConfig,
    mut params: ModelParams<T>,
    train: &[Encoded],
    valid: &[Encoded],
    exec: Execution,
    mut on_log: impl FnMut(&LogRow),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("train_loop: no training examples"));
    }
    if valid.is_empty() {
        return Err(Error::invalid("train_loop: no validation examples"));
    }
    let d_model = params.config().d_model;
    let shuffle_seed = sub_seed(cfg.seed, "shuffle");
    let dropout_seed = sub_seed(cfg.seed, "dropout");
    let mut adam = AdamState::new(AdamConfig::default());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut log = TrainLog::default();
    let mut best = params.clone();
    let mut step = 0usize;
    let mut epochs = 0usize;
    let mut aborted = None;
    let mut push = |log: &mut TrainLog, row: LogRow| {
        on_log(&row);
        log.rows.push(row);
    };

    'epochs: for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_index(shuffle_seed, epoch as u64)));
        for idx in order.chunks(cfg.batch_size) {
            step += 1;
            let batch: Vec<Encoded> = idx.iter().map(|&i| train[i].clone()).collect();
            let lr = lr_at(step, d_model, cfg.warmup_steps, cfg.base_lr)?;
            let g = batch_gradients(
                &params,
                &batch,
                cfg.adapt_loss,
                true,
                mix_index(dropout_seed, step as u64),
                cfg.shard_size,
                exec,
            )?;
            if !g.loss.is_finite() {
                aborted = Some(format!("non-finite loss {} at step {step}", g.loss));
                break 'epochs;
            }
            let mut values = params.values_mut();
            match adam_step(&mut values, &g.grads, &mut adam, lr) {
                Ok(()) => {}
                Err(e @ Error::NonFiniteGradient(_)) => {
                    aborted = Some(format!("{e} at step {step}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            push(
                &mut log,
                LogRow::Step {
                    step,
                    lr,
                    loss: g.loss,
                    alpha: g.alpha,
                },
            );
        }
        epochs = epoch;
        let perplexity = validate_perplexity(&params, valid, cfg.batch_size, exec)?;
        push(&mut log, LogRow::Epoch { epoch, step, perplexity });
        match stopper.observe(perplexity) {
            Patience::Improved => best = params.clone(),
            Patience::Waiting(_) => {}
            Patience::Stop => break,
        }
    }
    let (best_epoch, best_perplexity) = match stopper.best() {
        Some((e, p)) => (e, Some(p)),
        None => {
            best = params;
            (0, None)
        }
    };
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_perplexity,
        epochs,
        steps: step,
        log,
        adam,
        aborted,
    })
}
