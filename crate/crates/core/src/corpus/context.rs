use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Document;
use crate::error::{Error, Result};
use crate::exec::sub_seed;

/// How the context-encoder input is chosen for each sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    /// The `k` preceding source sentences.
    Prev,
    /// `k` source sentences drawn uniformly from the whole corpus.
    Random,
    /// A fair per-example coin between `Prev` and `Random`.
    Mix,
    /// The source sentence itself (probe only).
    #[serde(rename = "self")]
    SelfSource,
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContextMode::Prev => "prev",
            ContextMode::Random => "random",
            ContextMode::Mix => "mix",
            ContextMode::SelfSource => "self",
        })
    }
}

impl FromStr for ContextMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prev" => Ok(ContextMode::Prev),
            "random" => Ok(ContextMode::Random),
            "mix" => Ok(ContextMode::Mix),
            "self" => Ok(ContextMode::SelfSource),
            _ => Err(Error::invalid(format!(
                "unknown context mode `{s}` (expected prev, random, mix or self)"
            ))),
        }
    }
}

/// One training/evaluation record. `label` is 1 when the context is the true preceding context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextExample {
    pub context: String,
    pub source: String,
    pub target: String,
    pub label: u8,
}

impl ContextExample {
    pub fn to_tsv(&self) -> String {
        format!("{}\t{}\t{}\t{}", self.context, self.source, self.target, self.label)
    }

    pub fn from_tsv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        match f.as_slice() {
            [c, s, t, l] => Ok(ContextExample {
                context: c.to_string(),
                source: s.to_string(),
                target: t.to_string(),
                label: l.trim().parse().map_err(|_| Error::invalid(format!("bad label `{l}`")))?,
            }),
            _ => Err(Error::invalid(format!("expected 4 tab-separated fields, got {}", f.len()))),
        }
    }
}

/// Space-joined previous-`k` context of `current`, given the sentences that precede it
/// (oldest first). Missing slots before the document start are filled with `current`.
pub fn prev_context(preceding: &[&str], current: &str, k: usize) -> String {
    let have = preceding.len().min(k);
    let mut parts: Vec<&str> = vec![current; k - have];
    parts.extend_from_slice(&preceding[preceding.len() - have..]);
    parts.join(" ")
}

/// Pairs every sentence of `docs` (document order) with a context chosen by `mode`.
pub fn build_context(docs: &[Document], mode: ContextMode, k: usize, seed: u64) -> Result<Vec<ContextExample>> {
    if k == 0 {
        return Err(Error::invalid("build_context: k must be at least 1"));
    }
    if docs.is_empty() {
        return Err(Error::invalid("build_context: no documents"));
    }
    let pool: Vec<&str> = docs.iter().flat_map(|d| d.sources()).collect();
    let mut random_rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "context-random"));
    let mut coin_rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "context-mix"));
    let draw_random = |rng: &mut ChaCha8Rng| -> String {
        (0..k).map(|_| pool[rng.gen_range(0..pool.len())]).collect::<Vec<_>>().join(" ")
    };

    let mut out = Vec::with_capacity(pool.len());
    for doc in docs {
        let sources: Vec<&str> = doc.sources().collect();
        for (i, pair) in doc.sentences.iter().enumerate() {
            let prev = || prev_context(&sources[..i], &pair.source, k);
            let (context, label) = match mode {
                ContextMode::Prev => (prev(), 1),
                ContextMode::Random => (draw_random(&mut random_rng), 0),
                ContextMode::Mix => {
                    if coin_rng.gen_bool(0.5) {
                        (prev(), 1)
                    } else {
                        (draw_random(&mut random_rng), 0)
                    }
                }
                ContextMode::SelfSource => (pair.source.clone(), 1),
            };
            out.push(ContextExample {
                context,
                source: pair.source.clone(),
                target: pair.target.clone(),
                label,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SentencePair;

    fn doc(n: usize) -> Document {
        Document {
            doc_id: "d".into(),
            sentences: (0..n)
                .map(|i| SentencePair {
                    source: format!("s{i}"),
                    target: format!("t{i}"),
                })
                .collect(),
        }
    }

    #[test]
    fn prev_uses_two_preceding_sentences() {
        let ex = build_context(&[doc(3)], ContextMode::Prev, 2, 0).unwrap();
        assert_eq!(ex[2].context, "s0 s1");
        assert_eq!(ex[2].label, 1);
    }

    #[test]
    fn prev_pads_document_start_with_current_sentence() {
        let ex = build_context(&[doc(3)], ContextMode::Prev, 2, 0).unwrap();
        assert_eq!(ex[0].context, "s0 s0");
        assert_eq!(ex[1].context, "s1 s0");
    }

    #[test]
    fn self_mode_repeats_source() {
        for e in build_context(&[doc(4)], ContextMode::SelfSource, 2, 0).unwrap() {
            assert_eq!(e.context, e.source);
        }
    }

    #[test]
    fn random_draws_from_corpus_with_label_zero() {
        let docs = [doc(5), doc(5)];
        let ex = build_context(&docs, ContextMode::Random, 2, 3).unwrap();
        assert_eq!(ex.len(), 10);
        for e in &ex {
            assert_eq!(e.label, 0);
            let parts: Vec<&str> = e.context.split(' ').collect();
            assert_eq!(parts.len(), 2);
            assert!(parts.iter().all(|p| p.starts_with('s')));
        }
        assert_eq!(ex, build_context(&docs, ContextMode::Random, 2, 3).unwrap());
        assert_ne!(ex, build_context(&docs, ContextMode::Random, 2, 4).unwrap());
    }

    #[test]
    fn mix_labels_are_a_fair_coin() {
        let docs: Vec<Document> = (0..200).map(|_| doc(10)).collect();
        let ex = build_context(&docs, ContextMode::Mix, 2, 11).unwrap();
        let n = ex.len() as f64;
        let frac = ex.iter().filter(|e| e.label == 1).count() as f64 / n;
        assert!((frac - 0.5).abs() <= 3.0 * (0.25 / n).sqrt(), "{frac}");
        for (i, e) in ex.iter().enumerate() {
            if e.label == 1 {
                let j = i % 10;
                let want = prev_context(
                    &(0..j).map(|x| format!("s{x}")).collect::<Vec<_>>().iter().map(|s| s.as_str()).collect::<Vec<_>>(),
                    &e.source,
                    2,
                );
                assert_eq!(e.context, want);
            }
        }
    }

    #[test]
    fn rejects_bad_k_and_empty_docs() {
        assert!(build_context(&[doc(2)], ContextMode::Prev, 0, 0).is_err());
        assert!(build_context(&[], ContextMode::Prev, 2, 0).is_err());
    }

    #[test]
    fn mode_parsing() {
        for m in [ContextMode::Prev, ContextMode::Random, ContextMode::Mix, ContextMode::SelfSource] {
            assert_eq!(m.to_string().parse::<ContextMode>().unwrap(), m);
        }
        assert!("next".parse::<ContextMode>().is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let e = ContextExample {
            context: "a b".into(),
            source: "c".into(),
            target: "d".into(),
            label: 1,
        };
        assert_eq!(ContextExample::from_tsv(&e.to_tsv()).unwrap(), e);
    }
}
