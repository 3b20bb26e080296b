use super::Encoded;
use crate::error::{Error, Result};
use crate::exec::{mix_index, Execution};
use crate::model::{Dropout, ModelParams, ModelVars, Padded};
use crate::tensor::{Float, Tensor};
use crate::tokenizer::PAD;

/// Fraction of examples whose context is the true preceding context.
pub fn label_fraction(batch: &[Encoded]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    batch.iter().filter(|e| e.label == 1).count() as f64 / batch.len() as f64
}

fn target_tokens(batch: &[Encoded]) -> usize {
    batch.iter().map(|e| e.target_out.iter().filter(|&&t| t != PAD).count()).sum()
}

struct PaddedBatch {
    context: Padded,
    source: Padded,
    target_in: Padded,
    target_out: Vec<usize>,
}

fn pad_batch(batch: &[Encoded]) -> Result<PaddedBatch> {
    let context = Padded::new(&batch.iter().map(|e| &e.context[..]).collect::<Vec<_>>())?;
    let source = Padded::new(&batch.iter().map(|e| &e.source[..]).collect::<Vec<_>>())?;
    let target_in = Padded::new(&batch.iter().map(|e| &e.target_in[..]).collect::<Vec<_>>())?;
    let mut target_out = Vec::with_capacity(target_in.ids.len());
    for e in batch {
        if e.target_out.len() != e.target_in.len() {
            return Err(Error::invalid("target input and output lengths differ"));
        }
        target_out.extend_from_slice(&e.target_out);
        target_out.extend(std::iter::repeat(PAD).take(target_in.len - e.target_out.len()));
    }
    Ok(PaddedBatch {
        context,
        source,
        target_in,
        target_out,
    })
}

/// `scale · Σ token cross-entropy / denom` over one shard's non-PAD target tokens.
pub fn shard_loss<T: Float>(
    vars: &ModelVars<T>,
    shard: &[Encoded],
    denom: f64,
    scale: f64,
    drop: &mut Dropout,
) -> Result<Tensor<T>> {
    let b = pad_batch(shard)?;
    let h = vars.encode(&b.context, &b.source, drop)?;
    let logits = vars.decode(&h, &b.source, &b.target_in, drop)?.logits;
    let ce = logits.cross_entropy(&b.target_out, Some(PAD), Some(denom))?;
    if scale == 1.0 {
        Ok(ce)
    } else {
        ce.scale(T::lit(scale))
    }
}

/// A differentiable batch loss together with the leaves it was built from.
pub struct BatchLoss<T: Float> {
    pub loss: Tensor<T>,
    pub alpha: f64,
    pub vars: ModelVars<T>,
}

/// Mean token cross-entropy `L`, or `α·L` with `adapt_loss`.
pub fn compute_batch_loss<T: Float>(
    params: &ModelParams<T>,
    batch: &[Encoded],
    adapt_loss: bool,
    train: bool,
    seed: u64,
) -> Result<BatchLoss<T>> {
    if batch.is_empty() {
        return Err(Error::invalid("compute_batch_loss: empty batch"));
    }
    let tokens = target_tokens(batch);
    if tokens == 0 {
        return Err(Error::invalid("compute_batch_loss: batch has no target tokens"));
    }
    let alpha = if adapt_loss { label_fraction(batch) } else { 1.0 };
    let vars = params.bind(true)?;
    let mut drop = Dropout::new(params.config().dropout, train, mix_index(seed, 0));
    let loss = shard_loss(&vars, batch, tokens as f64, alpha, &mut drop)?;
    Ok(BatchLoss { loss, alpha, vars })
}

#[derive(Debug, Clone)]
pub struct BatchGradients<T> {
    pub loss: f64,
    pub alpha: f64,
    pub tokens: usize,
    /// In parameter order.
    pub grads: Vec<Vec<T>>,
}

/// Loss and gradients of a batch computed shard by shard and summed in shard order.
///
/// Each shard contributes `α · CE_sum(shard) / tokens(batch)`, so the total is the
/// same function as [`compute_batch_loss`]; with `shard_size >= batch.len()` the two coincide.
pub fn batch_gradients<T: Float>(
    params: &ModelParams<T>,
    batch: &[Encoded],
    adapt_loss: bool,
    train: bool,
    seed: u64,
    shard_size: usize,
    exec: Execution,
) -> Result<BatchGradients<T>> {
    if batch.is_empty() || shard_size == 0 {
        return Err(Error::invalid("batch_gradients: empty batch or zero shard size"));
    }
    let tokens = target_tokens(batch);
    if tokens == 0 {
        return Err(Error::invalid("batch_gradients: batch has no target tokens"));
    }
    let alpha = if adapt_loss { label_fraction(batch) } else { 1.0 };
    let shards: Vec<&[Encoded]> = batch.chunks(shard_size).collect();
    let p = params.config().dropout;
    let results = exec.map_range(shards.len(), |i| -> Result<(f64, Vec<Vec<T>>)> {
        let vars = params.bind(true)?;
        let mut drop = Dropout::new(p, train, mix_index(seed, i as u64));
        let loss = shard_loss(&vars, shards[i], tokens as f64, alpha, &mut drop)?;
        loss.backward()?;
        Ok((loss.item()?.as_f64(), vars.gradients()))
    });
    let mut total = 0.0;
    let mut grads: Option<Vec<Vec<T>>> = None;
    for r in results {
        let (l, g) = r?;
        total += l;
        match grads.as_mut() {
            None => grads = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x = *x + *y;
                    }
                }
            }
        }
    }
    Ok(BatchGradients {
        loss: total,
        alpha,
        tokens,
        grads: grads.unwrap_or_default(),
    })
}

/// `exp(Σ token cross-entropy / #tokens)` with dropout off.
pub fn validate_perplexity<T: Float>(
    params: &ModelParams<T>,
    examples: &[Encoded],
    batch_size: usize,
    exec: Execution,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("validate_perplexity: empty validation set"));
    }
    let batches: Vec<&[Encoded]> = examples.chunks(batch_size.max(1)).collect();
    let sums = exec.map(&batches, |b| -> Result<(f64, usize)> {
        let vars = params.bind(false)?;
        let loss = shard_loss(&vars, b, 1.0, 1.0, &mut Dropout::eval())?;
        Ok((loss.item()?.as_f64(), target_tokens(b)))
    });
    let (mut ce, mut n) = (0.0, 0usize);
    for s in sums {
        let (c, t) = s?;
        ce += c;
        n += t;
    }
    if n == 0 {
        return Err(Error::invalid("validate_perplexity: no target tokens"));
    }
    Ok((ce / n as f64).exp())
}
