use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::Activation;
use super::params::{Attn, Encoder, Ffn, ModelParams, ModelVars, Norm};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};
use crate::tokenizer::{BOS, PAD};

const LN_EPS: f64 = 1e-6;
const MASKED: f64 = -1e9;

/// A batch of id sequences right-padded with PAD to a common width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Padded {
    pub ids: Vec<usize>,
    pub batch: usize,
    pub len: usize,
}

impl Padded {
    /// Width is the longest sequence (at least 1, so empty rows become a single PAD).
    pub fn new<S: AsRef<[usize]>>(seqs: &[S]) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let len = seqs.iter().map(|s| s.as_ref().len()).max().unwrap_or(0).max(1);
        let mut ids = Vec::with_capacity(seqs.len() * len);
        for s in seqs {
            let s = s.as_ref();
            ids.extend_from_slice(s);
            ids.extend(std::iter::repeat(PAD).take(len - s.len()));
        }
        Ok(Padded {
            ids,
            batch: seqs.len(),
            len,
        })
    }

    pub fn single(ids: &[usize]) -> Self {
        Padded::new(&[ids]).expect("one row")
    }

    pub fn pad_mask(&self) -> Vec<bool> {
        self.ids.iter().map(|&i| i == PAD).collect()
    }

    pub fn row(&self, b: usize) -> &[usize] {
        &self.ids[b * self.len..(b + 1) * self.len]
    }
}

/// Seeded dropout source threaded through one forward pass.
pub struct Dropout {
    p: f64,
    train: bool,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(p: f64, train: bool, seed: u64) -> Self {
        Dropout {
            p,
            train,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Dropout off.
    pub fn eval() -> Self {
        Dropout::new(0.0, false, 0)
    }

    fn apply<T: Float>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.dropout(self.p, self.train, &mut self.rng)
    }
}

/// Outputs of the two encoders and the fusion attention.
pub struct Fused<T: Float> {
    /// Source encoder output `[B, Ls, d]`.
    pub h_src: Tensor<T>,
    /// Fusion attention output `[B, Ls, d]`.
    pub attn: Tensor<T>,
    /// `h_src + attn`.
    pub h: Tensor<T>,
}

pub struct Decoded<T: Float> {
    /// Final decoder layer output after its layer norm, `[B, Lt, d]`.
    pub hidden: Tensor<T>,
    /// `[B, Lt, vocab]`.
    pub logits: Tensor<T>,
}

/// `[B, H, Lq, Lk]` mask: true where the key is PAD or lies in the future.
pub(crate) fn attention_mask(batch: usize, heads: usize, lq: usize, lk: usize, key_pad: &[bool], causal: bool) -> Arc<Vec<bool>> {
    let mut m = Vec::with_capacity(batch * heads * lq * lk);
    for b in 0..batch {
        let pad = &key_pad[b * lk..(b + 1) * lk];
        for _ in 0..heads {
            for i in 0..lq {
                m.extend((0..lk).map(|j| pad[j] || (causal && j > i)));
            }
        }
    }
    Arc::new(m)
}

fn layer_norm<T: Float>(x: &Tensor<T>, n: &Norm<T>) -> Result<Tensor<T>> {
    x.layer_norm(&n.gamma, &n.beta, LN_EPS)
}

fn attention<T: Float>(a: &Attn<T>, q_in: &Tensor<T>, kv_in: &Tensor<T>, mask: &Arc<Vec<bool>>, heads: usize) -> Result<Tensor<T>> {
    let (b, lq, d) = (q_in.shape()[0], q_in.shape()[1], q_in.shape()[2]);
    let lk = kv_in.shape()[1];
    let dh = d / heads;
    let q = q_in.matmul(&a.wq)?.reshape(&[b, lq, heads, dh])?.transpose(&[0, 2, 1, 3])?;
    let k = kv_in.matmul(&a.wk)?.reshape(&[b, lk, heads, dh])?.transpose(&[0, 2, 3, 1])?;
    let v = kv_in.matmul(&a.wv)?.reshape(&[b, lk, heads, dh])?.transpose(&[0, 2, 1, 3])?;
    let scores = q
        .matmul(&k)?
        .scale(T::lit(1.0 / (dh as f64).sqrt()))?
        .mask_fill(mask.clone(), MASKED)?;
    scores
        .softmax(3)?
        .matmul(&v)?
        .transpose(&[0, 2, 1, 3])?
        .reshape(&[b, lq, d])?
        .matmul(&a.wo)
}

impl<T: Float> ModelVars<T> {
    fn check_len(&self, x: &Padded, what: &str) -> Result<()> {
        if x.len > self.config.max_len {
            return Err(Error::TooLong {
                len: x.len,
                max: self.config.max_len,
            }
            .at(what));
        }
        Ok(())
    }

    fn ffn(&self, f: &Ffn<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = x.matmul(&f.w1)?.add(&f.b1)?;
        let h = match self.config.activation {
            Activation::Relu => h.relu()?,
            Activation::Gelu => h.gelu()?,
        };
        h.matmul(&f.w2)?.add(&f.b2)
    }

    fn embed(tok: &Tensor<T>, pos: &Tensor<T>, x: &Padded) -> Result<Tensor<T>> {
        let positions: Vec<usize> = (0..x.len).collect();
        let p = pos.embedding(&positions, &[x.len])?;
        tok.embedding(&x.ids, &[x.batch, x.len])?.add(&p)
    }

    fn encoder(&self, e: &Encoder<T>, x: &Padded, drop: &mut Dropout) -> Result<Tensor<T>> {
        let heads = self.config.n_heads;
        let mut h = drop.apply(&Self::embed(&e.tok_emb, &e.pos_emb, x)?)?;
        let mask = attention_mask(x.batch, heads, x.len, x.len, &x.pad_mask(), false);
        for l in &e.layers {
            let n = layer_norm(&h, &l.ln1)?;
            h = h.add(&drop.apply(&attention(&l.attn, &n, &n, &mask, heads)?)?)?;
            let n = layer_norm(&h, &l.ln2)?;
            h = h.add(&drop.apply(&self.ffn(&l.ffn, &n)?)?)?;
        }
        layer_norm(&h, &e.ln_f)
    }

    /// Runs both encoders and fuses them: queries from the source, keys and values from the context.
    pub fn encode_parts(&self, context: &Padded, source: &Padded, drop: &mut Dropout) -> Result<Fused<T>> {
        self.check_len(context, "context")?;
        self.check_len(source, "source")?;
        if context.batch != source.batch {
            return Err(Error::invalid(format!(
                "context batch {} != source batch {}",
                context.batch, source.batch
            )));
        }
        let h_src = self.encoder(&self.src, source, drop)?;
        let h_ctx = self.encoder(&self.ctx, context, drop)?;
        let mask = attention_mask(
            source.batch,
            self.config.n_heads,
            source.len,
            context.len,
            &context.pad_mask(),
            false,
        );
        let attn = attention(&self.fusion, &h_src, &h_ctx, &mask, self.config.n_heads)?;
        let h = h_src.add(&attn)?;
        Ok(Fused { h_src, attn, h })
    }

    pub fn encode(&self, context: &Padded, source: &Padded, drop: &mut Dropout) -> Result<Tensor<T>> {
        Ok(self.encode_parts(context, source, drop)?.h)
    }

    /// Teacher-forced decoder over `target` (BOS-initiated rows) attending to `h`.
    pub fn decode(&self, h: &Tensor<T>, source: &Padded, target: &Padded, drop: &mut Dropout) -> Result<Decoded<T>> {
        self.check_len(target, "target")?;
        let want = [source.batch, source.len, self.config.d_model];
        if h.shape() != want {
            return Err(Error::shape("decode", h.shape(), &want));
        }
        let heads = self.config.n_heads;
        let d = &self.dec;
        let mut x = drop.apply(&Self::embed(&d.tok_emb, &d.pos_emb, target)?)?;
        let self_mask = attention_mask(target.batch, heads, target.len, target.len, &target.pad_mask(), true);
        let cross_mask = attention_mask(target.batch, heads, target.len, source.len, &source.pad_mask(), false);
        for l in &d.layers {
            let n = layer_norm(&x, &l.ln1)?;
            x = x.add(&drop.apply(&attention(&l.self_attn, &n, &n, &self_mask, heads)?)?)?;
            let n = layer_norm(&x, &l.ln2)?;
            x = x.add(&drop.apply(&attention(&l.cross_attn, &n, h, &cross_mask, heads)?)?)?;
            let n = layer_norm(&x, &l.ln3)?;
            x = x.add(&drop.apply(&self.ffn(&l.ffn, &n)?)?)?;
        }
        let hidden = layer_norm(&x, &d.ln_f)?;
        let logits = hidden.matmul(&d.out_w)?.add(&d.out_b)?;
        Ok(Decoded { hidden, logits })
    }
}

/// Fused source representation `[len(source), d_model]` for one sentence.
pub fn encode_fuse<T: Float>(params: &ModelParams<T>, context: &[usize], source: &[usize], train: bool, seed: u64) -> Result<Tensor<T>> {
    let vars = params.bind(false)?;
    let mut drop = Dropout::new(params.config().dropout, train, seed);
    let src = Padded::single(source);
    let h = vars.encode(&Padded::single(context), &src, &mut drop)?;
    h.reshape(&[src.len, params.config().d_model])
}

/// Logits `[len(prefix), vocab]` for one BOS-initiated target prefix given `h` from [`encode_fuse`].
pub fn decode_logits<T: Float>(params: &ModelParams<T>, h: &Tensor<T>, target_prefix: &[usize], train: bool, seed: u64) -> Result<Tensor<T>> {
    if target_prefix.first() != Some(&BOS) {
        return Err(Error::invalid("decode_logits: target prefix must begin with BOS"));
    }
    let d = params.config().d_model;
    if h.ndim() != 2 || h.shape()[1] != d {
        return Err(Error::shape("decode_logits", h.shape(), &[0, d]));
    }
    let ls = h.shape()[0];
    let vars = params.bind(false)?;
    let mut drop = Dropout::new(params.config().dropout, train, seed);
    let src = Padded {
        ids: vec![BOS; ls],
        batch: 1,
        len: ls,
    };
    let tgt = Padded::single(target_prefix);
    let out = vars.decode(&h.reshape(&[1, ls, d])?, &src, &tgt, &mut drop)?;
    out.logits.reshape(&[tgt.len, params.config().vocab_size])
}
