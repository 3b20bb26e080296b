//! Beam search with the GNMT length penalty; greedy decoding is the `beam_size = 1` case.

use std::cmp::Ordering;

use crate::corpus::ContextExample;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{Dropout, ModelParams, ModelVars, Padded};
use crate::tensor::{log_softmax, Float, Tensor};
use crate::tokenizer::{BpeModel, BOS, EOS};

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub length_penalty_alpha: f64,
    /// Generated tokens, EOS included. Also capped by the model's `max_len`.
    pub max_decode_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 4,
            length_penalty_alpha: 0.6,
            max_decode_len: 140,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::invalid("decode config: beam_size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.length_penalty_alpha) {
            return Err(Error::invalid(format!(
                "decode config: length penalty {} outside [0, 1]",
                self.length_penalty_alpha
            )));
        }
        if self.max_decode_len == 0 {
            return Err(Error::invalid("decode config: max_decode_len must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// BOS-initiated.
    pub tokens: Vec<usize>,
    pub logprob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Number of generated tokens (BOS excluded, EOS included).
    pub fn len(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Generated tokens without BOS and the closing EOS.
    pub fn output(&self) -> &[usize] {
        let t = &self.tokens[1..];
        t.strip_suffix(&[EOS]).unwrap_or(t)
    }

    pub fn score(&self, alpha: f64) -> f64 {
        self.logprob / length_penalty(self.len(), alpha)
    }
}

/// `((5 + len) / 6)^alpha`.
pub fn length_penalty(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

/// Encoder output for one sentence, reused across decoding steps.
struct Encoded<T: Float> {
    vars: ModelVars<T>,
    h: Tensor<T>,
    source: Padded,
    max_steps: usize,
}

impl<T: Float> Encoded<T> {
    fn new(params: &ModelParams<T>, context: &[usize], source: &[usize], max_decode_len: usize) -> Result<Self> {
        let vars = params.bind(false)?;
        let source = Padded::single(source);
        let h = vars.encode(&Padded::single(context), &source, &mut Dropout::eval())?;
        Ok(Encoded {
            max_steps: max_decode_len.min(params.config().max_len),
            vars,
            h,
            source,
        })
    }

    /// Next-token log-probabilities for equal-length prefixes.
    fn next_logprobs(&self, prefixes: &[&[usize]]) -> Result<Vec<Vec<f64>>> {
        let n = prefixes.len();
        let h_row = self.h.data();
        let mut h = Vec::with_capacity(n * h_row.len());
        let mut src = Vec::with_capacity(n * self.source.len);
        for _ in 0..n {
            h.extend_from_slice(h_row);
            src.extend_from_slice(&self.source.ids);
        }
        let mut shape = self.h.shape().to_vec();
        shape[0] = n;
        let h = Tensor::from_vec(h, &shape)?;
        let source = Padded {
            ids: src,
            batch: n,
            len: self.source.len,
        };
        let target = Padded::new(prefixes)?;
        let logits = self.vars.decode(&h, &source, &target, &mut Dropout::eval())?.logits;
        let v = logits.shape()[2];
        let lt = target.len;
        Ok((0..n)
            .map(|b| {
                let off = (b * lt + lt - 1) * v;
                log_softmax(&logits.data()[off..off + v]).iter().map(|x| x.as_f64()).collect()
            })
            .collect())
    }
}

/// Descending by value, ascending by index on ties.
fn ranked(lp: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..lp.len()).collect();
    idx.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
    idx
}

/// Every hypothesis that reached EOS or the length limit, in completion order.
pub fn beam_search_pool<T: Float>(
    params: &ModelParams<T>,
    context: &[usize],
    source: &[usize],
    cfg: &DecodeConfig,
) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    let enc = Encoded::new(params, context, source, cfg.max_decode_len)?;
    let alpha = cfg.length_penalty_alpha;
    let bound_lp = length_penalty(enc.max_steps, alpha);
    let mut live = vec![Hypothesis {
        tokens: vec![BOS],
        logprob: 0.0,
        finished: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for step in 1..=enc.max_steps {
        let prefixes: Vec<&[usize]> = live.iter().map(|h| &h.tokens[..]).collect();
        let lps = enc.next_logprobs(&prefixes)?;
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (b, lp) in lps.iter().enumerate() {
            for &tok in ranked(lp).iter().take(cfg.beam_size) {
                cands.push((live[b].logprob + lp[tok], b, tok));
            }
        }
        cands.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        cands.truncate(cfg.beam_size);
        let mut next = Vec::with_capacity(cands.len());
        for (logprob, b, tok) in cands {
            let mut tokens = live[b].tokens.clone();
            tokens.push(tok);
            let done = tok == EOS || step == enc.max_steps;
            let h = Hypothesis {
                tokens,
                logprob,
                finished: done,
            };
            if done {
                finished.push(h);
            } else {
                next.push(h);
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
        let best_done = finished.iter().map(|h| h.score(alpha)).fold(f64::NEG_INFINITY, f64::max);
        let best_live = live.iter().map(|h| h.logprob / bound_lp).fold(f64::NEG_INFINITY, f64::max);
        if best_done >= best_live {
            break;
        }
    }
    Ok(finished)
}

/// The highest-scoring finished hypothesis (earliest on ties).
pub fn beam_search<T: Float>(params: &ModelParams<T>, context: &[usize], source: &[usize], cfg: &DecodeConfig) -> Result<Hypothesis> {
    let alpha = cfg.length_penalty_alpha;
    beam_search_pool(params, context, source, cfg)?
        .into_iter()
        .reduce(|best, h| {
            if h.score(alpha).total_cmp(&best.score(alpha)) == Ordering::Greater {
                h
            } else {
                best
            }
        })
        .ok_or_else(|| Error::invalid("beam search produced no hypothesis"))
}

/// Argmax decoding (lowest id on ties) until EOS or the length limit.
pub fn greedy<T: Float>(params: &ModelParams<T>, context: &[usize], source: &[usize], max_decode_len: usize) -> Result<Hypothesis> {
    if max_decode_len == 0 {
        return Err(Error::invalid("greedy: max_decode_len must be at least 1"));
    }
    let enc = Encoded::new(params, context, source, max_decode_len)?;
    let mut h = Hypothesis {
        tokens: vec![BOS],
        logprob: 0.0,
        finished: false,
    };
    while !h.finished {
        let lp = enc.next_logprobs(&[&h.tokens])?.remove(0);
        let tok = ranked(&lp)[0];
        h.tokens.push(tok);
        h.logprob += lp[tok];
        h.finished = tok == EOS || h.len() == enc.max_steps;
    }
    Ok(h)
}

/// Context ids keep their last `max_len` tokens, source ids their first.
pub fn encode_inputs(bpe: &BpeModel, context: &str, source: &str, max_len: usize) -> (Vec<usize>, Vec<usize>) {
    let c = bpe.encode(context);
    let c = c[c.len().saturating_sub(max_len)..].to_vec();
    let mut s = bpe.encode(source);
    s.truncate(max_len);
    (c, s)
}

/// Translates every example in order; failures name the sentence index.
pub fn translate_corpus<T: Float>(
    params: &ModelParams<T>,
    bpe: &BpeModel,
    examples: &[ContextExample],
    cfg: &DecodeConfig,
    exec: Execution,
) -> Result<Vec<String>> {
    cfg.validate()?;
    let max_len = params.config().max_len;
    exec.map_range(examples.len(), |i| {
        let e = &examples[i];
        let (c, s) = encode_inputs(bpe, &e.context, &e.source, max_len);
        beam_search(params, &c, &s, cfg)
            .and_then(|h| bpe.decode(h.output()))
            .map_err(|err| err.at(format!("sentence {i}")))
    })
    .into_iter()
    .collect()
}
