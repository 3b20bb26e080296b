//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `DCTX1`, `u32` version, length-prefixed model
//! config text, BPE model text and metadata text, `u32` parameter count, then per
//! parameter a length-prefixed UTF-8 name, `u32` rank, `u32` dims and `f32`
//! payload. A trailing `u8` flags an optional Adam snapshot (`u64` step, three
//! `f64` hyperparameters, then first and second moments per parameter).

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::{AdamConfig, AdamState};
use crate::tokenizer::BpeModel;

pub const MAGIC: &[u8; 5] = b"DCTX1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub bpe: BpeModel,
    /// Free-form `key = value` lines (training regime, seed, epoch).
    pub meta: String,
    pub adam: Option<AdamState<f32>>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} does not fit in u32")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn text(&mut self, s: &str) -> Result<()> {
        self.u32(s.len())?;
        self.0.extend_from_slice(s.as_bytes());
        Ok(())
    }

    fn floats(&mut self, xs: &[f32]) {
        for x in xs {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn text(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 text".into()))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("array too large".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer(MAGIC.to_vec());
        w.u32(VERSION as usize)?;
        w.text(&self.params.config().to_text())?;
        w.text(&self.bpe.to_text())?;
        w.text(&self.meta)?;
        w.u32(self.params.params().len())?;
        for p in self.params.params() {
            w.text(&p.name)?;
            w.u32(p.shape.len())?;
            for &d in &p.shape {
                w.u32(d)?;
            }
            w.floats(&p.data);
        }
        match &self.adam {
            None => w.0.push(0),
            Some(s) => {
                w.0.push(1);
                w.0.extend_from_slice(&s.t.to_le_bytes());
                for v in [s.config.beta1, s.config.beta2, s.config.eps] {
                    w.0.extend_from_slice(&v.to_bits().to_le_bytes());
                }
                let n = self.params.params().len();
                if s.t > 0 && (s.first.len() != n || s.second.len() != n) {
                    return Err(Error::Checkpoint("optimizer moments do not match the parameters".into()));
                }
                w.0.push(u8::from(!s.first.is_empty()));
                for (m, v) in s.first.iter().zip(&s.second) {
                    w.floats(m);
                    w.floats(v);
                }
            }
        }
        Ok(w.0)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
            return Err(Error::Checkpoint("not a DCTX1 checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (this build reads {VERSION})"
            )));
        }
        let config = ModelConfig::from_text(&r.text()?)?;
        let bpe = BpeModel::from_text(&r.text()?)?;
        if bpe.vocab_size() != config.vocab_size {
            return Err(Error::Checkpoint(format!(
                "BPE vocabulary {} differs from model vocabulary {}",
                bpe.vocab_size(),
                config.vocab_size
            )));
        }
        let meta = r.text()?;
        let n = r.u32()?;
        let mut named = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.text()?;
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let count = count.ok_or_else(|| Error::Checkpoint(format!("parameter `{name}` is too large")))?;
            let data = r.floats(count)?;
            named.push((name, shape, data));
        }
        let params = ModelParams::from_named(config, named)?;
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let t = r.u64()?;
                let config = AdamConfig {
                    beta1: r.f64()?,
                    beta2: r.f64()?,
                    eps: r.f64()?,
                };
                let mut state = AdamState::new(config);
                state.t = t;
                if r.u8()? == 1 {
                    for p in params.params() {
                        state.first.push(r.floats(p.data.len())?);
                        state.second.push(r.floats(p.data.len())?);
                    }
                }
                Some(state)
            }
            f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
        };
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Checkpoint { params, bpe, meta, adam })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?).map_err(|e| e.at(path.display().to_string()))
    }
}
