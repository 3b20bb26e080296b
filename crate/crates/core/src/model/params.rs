use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// One named learnable array.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Arc<Vec<T>>,
}

/// All learnable arrays of the model in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    config: ModelConfig,
    params: Vec<Param<T>>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    /// Xavier-uniform over `[fan_in, fan_out]`.
    Weight,
    Embedding,
    Zeros,
    Ones,
}

pub(crate) struct Attn<T: Float> {
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
}

pub(crate) struct Norm<T: Float> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub(crate) struct Ffn<T: Float> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

pub(crate) struct EncLayer<T: Float> {
    pub ln1: Norm<T>,
    pub attn: Attn<T>,
    pub ln2: Norm<T>,
    pub ffn: Ffn<T>,
}

pub(crate) struct DecLayer<T: Float> {
    pub ln1: Norm<T>,
    pub self_attn: Attn<T>,
    pub ln2: Norm<T>,
    pub cross_attn: Attn<T>,
    pub ln3: Norm<T>,
    pub ffn: Ffn<T>,
}

pub(crate) struct Encoder<T: Float> {
    pub tok_emb: Tensor<T>,
    pub pos_emb: Tensor<T>,
    pub layers: Vec<EncLayer<T>>,
    pub ln_f: Norm<T>,
}

pub(crate) struct Decoder<T: Float> {
    pub tok_emb: Tensor<T>,
    pub pos_emb: Tensor<T>,
    pub layers: Vec<DecLayer<T>>,
    pub ln_f: Norm<T>,
    pub out_w: Tensor<T>,
    pub out_b: Tensor<T>,
}

/// Parameters bound as graph leaves for one forward pass.
pub struct ModelVars<T: Float> {
    pub(crate) config: ModelConfig,
    pub(crate) src: Encoder<T>,
    pub(crate) ctx: Encoder<T>,
    pub(crate) fusion: Attn<T>,
    pub(crate) dec: Decoder<T>,
    leaves: Vec<Tensor<T>>,
}

type Make<'a, T> = dyn FnMut(String, &[usize], Init) -> Result<Tensor<T>> + 'a;

fn attn<T: Float>(mk: &mut Make<T>, p: &str, d: usize) -> Result<Attn<T>> {
    Ok(Attn {
        wq: mk(format!("{p}.wq"), &[d, d], Init::Weight)?,
        wk: mk(format!("{p}.wk"), &[d, d], Init::Weight)?,
        wv: mk(format!("{p}.wv"), &[d, d], Init::Weight)?,
        wo: mk(format!("{p}.wo"), &[d, d], Init::Weight)?,
    })
}

fn norm<T: Float>(mk: &mut Make<T>, p: &str, d: usize) -> Result<Norm<T>> {
    Ok(Norm {
        gamma: mk(format!("{p}.gamma"), &[d], Init::Ones)?,
        beta: mk(format!("{p}.beta"), &[d], Init::Zeros)?,
    })
}

fn ffn<T: Float>(mk: &mut Make<T>, p: &str, d: usize, d_ff: usize) -> Result<Ffn<T>> {
    Ok(Ffn {
        w1: mk(format!("{p}.w1"), &[d, d_ff], Init::Weight)?,
        b1: mk(format!("{p}.b1"), &[d_ff], Init::Zeros)?,
        w2: mk(format!("{p}.w2"), &[d_ff, d], Init::Weight)?,
        b2: mk(format!("{p}.b2"), &[d], Init::Zeros)?,
    })
}

fn encoder<T: Float>(mk: &mut Make<T>, p: &str, c: &ModelConfig) -> Result<Encoder<T>> {
    let d = c.d_model;
    let tok_emb = mk(format!("{p}.tok_emb"), &[c.vocab_size, d], Init::Embedding)?;
    let pos_emb = mk(format!("{p}.pos_emb"), &[c.max_len, d], Init::Embedding)?;
    let mut layers = Vec::with_capacity(c.n_layers);
    for i in 0..c.n_layers {
        let q = format!("{p}.layer{i}");
        layers.push(EncLayer {
            ln1: norm(mk, &format!("{q}.ln1"), d)?,
            attn: attn(mk, &format!("{q}.attn"), d)?,
            ln2: norm(mk, &format!("{q}.ln2"), d)?,
            ffn: ffn(mk, &format!("{q}.ffn"), d, c.d_ff)?,
        });
    }
    Ok(Encoder {
        tok_emb,
        pos_emb,
        layers,
        ln_f: norm(mk, &format!("{p}.ln_f"), d)?,
    })
}

fn decoder<T: Float>(mk: &mut Make<T>, c: &ModelConfig) -> Result<Decoder<T>> {
    let d = c.d_model;
    let tok_emb = mk("dec.tok_emb".into(), &[c.vocab_size, d], Init::Embedding)?;
    let pos_emb = mk("dec.pos_emb".into(), &[c.max_len, d], Init::Embedding)?;
    let mut layers = Vec::with_capacity(c.n_layers);
    for i in 0..c.n_layers {
        let q = format!("dec.layer{i}");
        layers.push(DecLayer {
            ln1: norm(mk, &format!("{q}.ln1"), d)?,
            self_attn: attn(mk, &format!("{q}.self_attn"), d)?,
            ln2: norm(mk, &format!("{q}.ln2"), d)?,
            cross_attn: attn(mk, &format!("{q}.cross_attn"), d)?,
            ln3: norm(mk, &format!("{q}.ln3"), d)?,
            ffn: ffn(mk, &format!("{q}.ffn"), d, c.d_ff)?,
        });
    }
    Ok(Decoder {
        tok_emb,
        pos_emb,
        layers,
        ln_f: norm(mk, "dec.ln_f", d)?,
        out_w: mk("dec.out.w".into(), &[d, c.vocab_size], Init::Weight)?,
        out_b: mk("dec.out.b".into(), &[c.vocab_size], Init::Zeros)?,
    })
}

type Parts<T> = (Encoder<T>, Encoder<T>, Attn<T>, Decoder<T>);

/// The single place that fixes parameter names, shapes and order.
fn assemble<T: Float>(c: &ModelConfig, mk: &mut Make<T>) -> Result<Parts<T>> {
    let src = encoder(mk, "src", c)?;
    let ctx = encoder(mk, "ctx", c)?;
    let fusion = attn(mk, "fusion", c.d_model)?;
    let dec = decoder(mk, c)?;
    Ok((src, ctx, fusion, dec))
}

fn init_bound(shape: &[usize], init: Init) -> f64 {
    let b = match init {
        Init::Weight => (6.0 / (shape[0] + shape[1]) as f64).sqrt(),
        Init::Embedding => (3.0 / shape[1] as f64).sqrt(),
        Init::Zeros | Init::Ones => 0.0,
    };
    b.min(0.9)
}

/// Deterministic initialization: Xavier-uniform projections, uniform embeddings
/// with variance `1/d_model`, layer-norm gains 1, biases 0.
pub fn init_parameters<T: Float>(config: &ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    let mut mk = |name: String, shape: &[usize], init: Init| -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        let data: Vec<T> = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Weight | Init::Embedding => {
                let b = init_bound(shape, init);
                (0..n).map(|_| T::lit(rng.gen_range(-b..b))).collect()
            }
        };
        let data = Arc::new(data);
        let t = Tensor::shared(data.clone(), shape, false)?;
        params.push(Param {
            name,
            shape: shape.to_vec(),
            data,
        });
        Ok(t)
    };
    assemble(config, &mut mk)?;
    Ok(ModelParams {
        config: config.clone(),
        params,
    })
}

impl<T: Float> ModelParams<T> {
    /// Assembles parameters from named arrays, checking names, order and shapes.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Vec<usize>, Vec<T>)>) -> Result<Self> {
        config.validate()?;
        let mut expected = Vec::new();
        let mut mk = |name: String, shape: &[usize], _: Init| -> Result<Tensor<T>> {
            expected.push((name, shape.to_vec()));
            Tensor::zeros(&[1])
        };
        assemble(&config, &mut mk)?;
        if expected.len() != named.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter arrays, found {}",
                expected.len(),
                named.len()
            )));
        }
        let mut params = Vec::with_capacity(named.len());
        for ((want_name, want_shape), (name, shape, data)) in expected.into_iter().zip(named) {
            if want_name != name || want_shape != shape {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` {shape:?} where `{want_name}` {want_shape:?} was expected"
                )));
            }
            if data.len() != shape.iter().product::<usize>() {
                return Err(Error::Checkpoint(format!("parameter `{name}` has {} values", data.len())));
            }
            params.push(Param {
                name,
                shape,
                data: Arc::new(data),
            });
        }
        Ok(ModelParams { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Replaces one array's values.
    pub fn set(&mut self, name: &str, data: Vec<T>) -> Result<()> {
        let p = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::invalid(format!("no parameter named `{name}`")))?;
        if data.len() != p.data.len() {
            return Err(Error::invalid(format!(
                "parameter `{name}` holds {} values, got {}",
                p.data.len(),
                data.len()
            )));
        }
        p.data = Arc::new(data);
        Ok(())
    }

    /// `(name, values)` pairs for an optimizer step. Buffers still shared with a graph are copied first.
    pub fn values_mut(&mut self) -> Vec<(&str, &mut [T])> {
        self.params
            .iter_mut()
            .map(|p| (p.name.as_str(), Arc::make_mut(&mut p.data).as_mut_slice()))
            .collect()
    }

    pub fn cast<U: Float>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: Arc::new(p.data.iter().map(|v| U::lit(v.as_f64())).collect()),
                })
                .collect(),
        }
    }

    /// Wraps every array as a graph leaf without copying.
    pub fn bind(&self, requires_grad: bool) -> Result<ModelVars<T>> {
        let mut it = self.params.iter();
        let mut leaves = Vec::with_capacity(self.params.len());
        let mut mk = |name: String, shape: &[usize], _: Init| -> Result<Tensor<T>> {
            let p = it
                .next()
                .filter(|p| p.name == name && p.shape == shape)
                .ok_or_else(|| Error::invalid(format!("parameter list does not match layout at `{name}`")))?;
            let t = Tensor::shared(p.data.clone(), shape, requires_grad)?;
            leaves.push(t.clone());
            Ok(t)
        };
        let (src, ctx, fusion, dec) = assemble(&self.config, &mut mk)?;
        Ok(ModelVars {
            config: self.config.clone(),
            src,
            ctx,
            fusion,
            dec,
            leaves,
        })
    }
}

impl<T: Float> ModelVars<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Leaves in parameter order.
    pub fn leaves(&self) -> &[Tensor<T>] {
        &self.leaves
    }

    /// Accumulated gradients in parameter order; zeros where none reached.
    pub fn gradients(&self) -> Vec<Vec<T>> {
        self.leaves
            .iter()
            .map(|t| t.grad().unwrap_or_else(|| vec![T::zero(); t.numel()]))
            .collect()
    }
}
