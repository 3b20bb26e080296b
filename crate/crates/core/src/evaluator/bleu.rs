use std::collections::HashMap;
use std::ops::{Add, AddAssign};
use std::sync::OnceLock;

use regex::Regex;

use crate::error::{Error, Result};

const MAX_ORDER: usize = 4;

fn rules() -> &'static [(Regex, &'static str); 4] {
    static RULES: OnceLock<[(Regex, &'static str); 4]> = OnceLock::new();
    RULES.get_or_init(|| {
        [
            (Regex::new(r"([{-~\[-` -&(-+:-@/])").unwrap(), " $1 "),
            (Regex::new(r"([^0-9])([.,])").unwrap(), "$1 $2 "),
            (Regex::new(r"([.,])([^0-9])").unwrap(), " $1 $2"),
            (Regex::new(r"([0-9])(-)").unwrap(), "$1 $2 "),
        ]
    })
}

/// The 13a (mteval-v13a) tokenization.
pub fn tokenize_13a(text: &str) -> Vec<String> {
    let mut line = text.replace("<skipped>", "").replace("-\n", "").replace('\n', " ");
    if line.contains('&') {
        line = line
            .replace("&quot;", "\"")
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">");
    }
    let mut line = format!(" {line} ");
    for (re, rep) in rules() {
        line = re.replace_all(&line, *rep).into_owned();
    }
    line.split_whitespace().map(str::to_string).collect()
}

/// Clipped n-gram matches and totals for orders 1..=4 plus lengths; sums across segments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub sys_len: u64,
    pub ref_len: u64,
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_default() += 1;
        }
    }
    m
}

impl BleuStats {
    pub fn from_tokens(candidate: &[String], reference: &[String]) -> Self {
        let mut s = BleuStats {
            sys_len: candidate.len() as u64,
            ref_len: reference.len() as u64,
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            let refs = ngrams(reference, n);
            let cand = ngrams(candidate, n);
            s.totals[n - 1] = candidate.len().saturating_sub(n - 1) as u64;
            s.matches[n - 1] = cand
                .iter()
                .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
                .sum();
        }
        s
    }

    pub fn from_pair(candidate: &str, reference: &str) -> Self {
        Self::from_tokens(&tokenize_13a(candidate), &tokenize_13a(reference))
    }

    /// Corpus BLEU in `[0, 100]` with exponential smoothing of zero-match orders.
    pub fn score(&self) -> f64 {
        if self.sys_len == 0 {
            return 0.0;
        }
        let mut precisions = [0.0f64; MAX_ORDER];
        let mut smooth = 1.0;
        for n in 0..MAX_ORDER {
            if self.totals[n] == 0 {
                break;
            }
            precisions[n] = if self.matches[n] == 0 {
                smooth *= 2.0;
                1.0 / (smooth * self.totals[n] as f64)
            } else {
                self.matches[n] as f64 / self.totals[n] as f64
            };
        }
        if precisions.iter().any(|&p| p == 0.0) {
            return 0.0;
        }
        let bp = if self.sys_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.sys_len as f64).exp()
        } else {
            1.0
        };
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * bp * log_mean.exp()
    }
}

impl Add for BleuStats {
    type Output = BleuStats;

    fn add(mut self, o: BleuStats) -> BleuStats {
        self += o;
        self
    }
}

impl AddAssign for BleuStats {
    fn add_assign(&mut self, o: BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.sys_len += o.sys_len;
        self.ref_len += o.ref_len;
    }
}

impl std::iter::Sum for BleuStats {
    fn sum<I: Iterator<Item = BleuStats>>(iter: I) -> Self {
        iter.fold(BleuStats::default(), Add::add)
    }
}

pub fn corpus_stats<S: AsRef<str>, R: AsRef<str>>(candidates: &[S], references: &[R]) -> Result<BleuStats> {
    if candidates.len() != references.len() {
        return Err(Error::invalid(format!(
            "bleu: {} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    Ok(candidates
        .iter()
        .zip(references)
        .map(|(c, r)| BleuStats::from_pair(c.as_ref(), r.as_ref()))
        .sum())
}

/// Sentence-level corpus BLEU (s-BLEU).
pub fn bleu<S: AsRef<str>, R: AsRef<str>>(candidates: &[S], references: &[R]) -> Result<f64> {
    Ok(corpus_stats(candidates, references)?.score())
}

/// Document-level BLEU: each document's sentences are joined into one segment.
pub fn d_bleu<S: AsRef<str>, R: AsRef<str>>(candidate_docs: &[Vec<S>], reference_docs: &[Vec<R>]) -> Result<f64> {
    if candidate_docs.len() != reference_docs.len() {
        return Err(Error::invalid(format!(
            "d-bleu: {} candidate documents but {} reference documents",
            candidate_docs.len(),
            reference_docs.len()
        )));
    }
    let join = |d: &[S]| d.iter().map(|s| s.as_ref()).collect::<Vec<_>>().join(" ");
    let join_r = |d: &[R]| d.iter().map(|s| s.as_ref()).collect::<Vec<_>>().join(" ");
    let c: Vec<String> = candidate_docs.iter().map(|d| join(d)).collect();
    let r: Vec<String> = reference_docs.iter().map(|d| join_r(d)).collect();
    bleu(&c, &r)
}
