//! Per-sentence source and target representations, mean-pooled over non-PAD positions.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{build_context, ContextExample, ContextMode, Document};
use crate::decoder::encode_inputs;
use crate::error::{Error, Result};
use crate::exec::sub_seed;
use crate::model::{Dropout, ModelParams, Padded};
use crate::tensor::{Float, Tensor};
use crate::tokenizer::{BpeModel, BOS, PAD};

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEmbedding {
    pub model_tag: String,
    pub context_mode: String,
    pub sentence_index: usize,
    pub vector: Vec<f64>,
}

/// Context examples for one document: `prev` from the document itself, `random`
/// drawn with replacement from the sources of `pool`.
pub fn document_contexts(doc: &Document, pool: &[Document], mode: ContextMode, k: usize, seed: u64) -> Result<Vec<ContextExample>> {
    let mut ex = build_context(std::slice::from_ref(doc), ContextMode::Prev, k, seed)?;
    match mode {
        ContextMode::Prev => {}
        ContextMode::Random => {
            let sources: Vec<&str> = pool.iter().flat_map(|d| d.sources()).collect();
            if sources.is_empty() {
                return Err(Error::invalid("random contexts need a non-empty pool"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "repr-random"));
            for e in &mut ex {
                e.context = (0..k)
                    .map(|_| sources[rng.gen_range(0..sources.len())])
                    .collect::<Vec<_>>()
                    .join(" ");
                e.label = 0;
            }
        }
        other => {
            return Err(Error::invalid(format!(
                "representations are extracted with prev or random contexts, not {other}"
            )))
        }
    }
    Ok(ex)
}

/// Mean of the rows of `x` (`[B, L, d]`) whose id in `ids` is not PAD.
fn pool_rows<T: Float>(x: &Tensor<T>, ids: &Padded) -> Vec<Vec<f64>> {
    let d = x.shape()[2];
    let data = x.data();
    (0..ids.batch)
        .map(|b| {
            let mut acc = vec![0.0f64; d];
            let mut n = 0usize;
            for (t, &id) in ids.row(b).iter().enumerate() {
                if id == PAD {
                    continue;
                }
                n += 1;
                let off = (b * ids.len + t) * d;
                for (a, v) in acc.iter_mut().zip(&data[off..off + d]) {
                    *a += v.as_f64();
                }
            }
            let n = n.max(1) as f64;
            acc.iter().map(|a| a / n).collect()
        })
        .collect()
}

fn inputs(bpe: &BpeModel, examples: &[ContextExample], max_len: usize) -> Result<(Padded, Padded)> {
    let (c, s): (Vec<Vec<usize>>, Vec<Vec<usize>>) = examples
        .iter()
        .map(|e| encode_inputs(bpe, &e.context, &e.source, max_len))
        .unzip();
    Ok((Padded::new(&c)?, Padded::new(&s)?))
}

fn tagged(vectors: Vec<Vec<f64>>, model_tag: &str, context_mode: &str) -> Vec<SentenceEmbedding> {
    vectors
        .into_iter()
        .enumerate()
        .map(|(i, vector)| SentenceEmbedding {
            model_tag: model_tag.to_string(),
            context_mode: context_mode.to_string(),
            sentence_index: i,
            vector,
        })
        .collect()
}

/// Fused encoder output per sentence, dropout off.
pub fn extract_source_repr<T: Float>(
    params: &ModelParams<T>,
    bpe: &BpeModel,
    examples: &[ContextExample],
    model_tag: &str,
    context_mode: &str,
) -> Result<Vec<SentenceEmbedding>> {
    if examples.is_empty() {
        return Err(Error::invalid("extract_source_repr: empty document"));
    }
    let vars = params.bind(false)?;
    let (ctx, src) = inputs(bpe, examples, params.config().max_len)?;
    let h = vars.encode(&ctx, &src, &mut Dropout::eval())?;
    Ok(tagged(pool_rows(&h, &src), model_tag, context_mode))
}

/// Final decoder layer output under teacher forcing on the reference target.
pub fn extract_target_repr<T: Float>(
    params: &ModelParams<T>,
    bpe: &BpeModel,
    examples: &[ContextExample],
    model_tag: &str,
    context_mode: &str,
) -> Result<Vec<SentenceEmbedding>> {
    if examples.is_empty() {
        return Err(Error::invalid("extract_target_repr: empty document"));
    }
    let max_len = params.config().max_len;
    let mut targets = Vec::with_capacity(examples.len());
    for (i, e) in examples.iter().enumerate() {
        let y = bpe.encode(&e.target);
        if y.is_empty() {
            return Err(Error::invalid("empty reference target").at(format!("sentence {i}")));
        }
        let mut t = vec![BOS];
        t.extend_from_slice(&y[..y.len().min(max_len - 1)]);
        targets.push(t);
    }
    let vars = params.bind(false)?;
    let (ctx, src) = inputs(bpe, examples, max_len)?;
    let h = vars.encode(&ctx, &src, &mut Dropout::eval())?;
    let tgt = Padded::new(&targets)?;
    let hidden = vars.decode(&h, &src, &tgt, &mut Dropout::eval())?.hidden;
    Ok(tagged(pool_rows(&hidden, &tgt), model_tag, context_mode))
}

/// Header `model_tag context_mode sentence_index v0 .. v{d-1}`; values in shortest round-trip form.
pub fn format_embeddings(embeddings: &[SentenceEmbedding]) -> Result<String> {
    let d = embeddings
        .first()
        .ok_or_else(|| Error::invalid("write_embeddings: no embeddings"))?
        .vector
        .len();
    let mut s = String::from("model_tag\tcontext_mode\tsentence_index");
    for i in 0..d {
        let _ = write!(s, "\tv{i}");
    }
    s.push('\n');
    for (row, e) in embeddings.iter().enumerate() {
        if e.vector.len() != d {
            return Err(Error::invalid(format!(
                "write_embeddings: row {row} has {} values, expected {d}",
                e.vector.len()
            )));
        }
        if e.model_tag.contains(['\t', '\n']) || e.context_mode.contains(['\t', '\n']) {
            return Err(Error::invalid(format!("write_embeddings: row {row} has a tab or newline in a tag")));
        }
        let _ = write!(s, "{}\t{}\t{}", e.model_tag, e.context_mode, e.sentence_index);
        for v in &e.vector {
            let _ = write!(s, "\t{v}");
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn write_embeddings(embeddings: &[SentenceEmbedding], path: &Path) -> Result<()> {
    std::fs::write(path, format_embeddings(embeddings)?)?;
    Ok(())
}

pub fn parse_embeddings(text: &str, path: &Path) -> Result<Vec<SentenceEmbedding>> {
    let bad = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad(1, "missing header".into()))?;
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.len() < 3 || cols[..3] != ["model_tag", "context_mode", "sentence_index"] {
        return Err(bad(1, "header must start with model_tag, context_mode, sentence_index".into()));
    }
    let d = cols.len() - 3;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != cols.len() {
            return Err(bad(i + 2, format!("expected {} columns, got {}", cols.len(), f.len())));
        }
        let vector = f[3..]
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(i + 2, e.to_string()))?;
        debug_assert_eq!(vector.len(), d);
        out.push(SentenceEmbedding {
            model_tag: f[0].to_string(),
            context_mode: f[1].to_string(),
            sentence_index: f[2].parse().map_err(|_| bad(i + 2, format!("bad index `{}`", f[2])))?,
            vector,
        });
    }
    Ok(out)
}

pub fn read_embeddings(path: &Path) -> Result<Vec<SentenceEmbedding>> {
    parse_embeddings(&std::fs::read_to_string(path)?, path)
}
