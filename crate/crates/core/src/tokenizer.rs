//! Joint byte-pair-encoding vocabulary over whitespace-split words.
//!
//! Each word starts as its characters with an end-of-word marker attached
//! to the last one (`"cat"` → `c a t</w>`). Training repeatedly merges the most
//! frequent adjacent pair; ties go to the lexicographically smallest pair.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const N_SPECIAL: usize = 4;

const SPECIALS: [&str; N_SPECIAL] = ["<pad>", "<s>", "</s>", "<unk>"];
const END_OF_WORD: &str = "</w>";
const HEADER: &str = "BPE v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    vocab: HashMap<String, usize>,
    tokens: Vec<String>,
    ranks: HashMap<(String, String), usize>,
}

fn initial_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let last = chars.len().saturating_sub(1);
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i == last {
                format!("{c}{END_OF_WORD}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

fn merge_pair(symbols: &mut Vec<String>, a: &str, b: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == a && symbols[i + 1] == b {
            let right = symbols.remove(i + 1);
            symbols[i].push_str(&right);
        }
        i += 1;
    }
}

/// Learns merges from `lines` until the vocabulary holds `target_vocab_size`
/// entries (specials included) or no pair occurs at least twice.
pub fn train_bpe<S: AsRef<str>>(lines: &[S], target_vocab_size: usize) -> Result<BpeModel> {
    let mut word_freq: HashMap<&str, usize> = HashMap::new();
    for line in lines {
        for w in line.as_ref().split_whitespace() {
            *word_freq.entry(w).or_default() += 1;
        }
    }
    if word_freq.is_empty() {
        return Err(Error::invalid("train_bpe: corpus has no words"));
    }
    let mut words: Vec<(Vec<String>, usize)> = word_freq
        .into_iter()
        .map(|(w, f)| (initial_symbols(w), f))
        .collect();
    words.sort();

    let alphabet: BTreeSet<String> = words.iter().flat_map(|(s, _)| s.iter().cloned()).collect();
    if target_vocab_size < N_SPECIAL + alphabet.len() {
        return Err(Error::invalid(format!(
            "train_bpe: vocabulary size {target_vocab_size} is below the {} specials and initial symbols",
            N_SPECIAL + alphabet.len()
        )));
    }
    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(alphabet);
    let mut known: BTreeSet<String> = tokens.iter().cloned().collect();

    let mut merges = Vec::new();
    while tokens.len() < target_vocab_size {
        let mut counts: HashMap<(&str, &str), usize> = HashMap::new();
        for (syms, f) in &words {
            for pair in syms.windows(2) {
                *counts.entry((pair[0].as_str(), pair[1].as_str())).or_default() += f;
            }
        }
        let best = counts
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
        let Some(((a, b), count)) = best else { break };
        if count < 2 {
            break;
        }
        let (a, b) = (a.to_string(), b.to_string());
        for (syms, _) in words.iter_mut() {
            merge_pair(syms, &a, &b);
        }
        let merged = format!("{a}{b}");
        if known.insert(merged.clone()) {
            tokens.push(merged);
        }
        merges.push((a, b));
    }
    Ok(BpeModel::from_parts(merges, tokens))
}

impl BpeModel {
    fn from_parts(merges: Vec<(String, String)>, tokens: Vec<String>) -> Self {
        let vocab = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let ranks = merges.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        BpeModel {
            merges,
            vocab,
            tokens,
            ranks,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.vocab.get(token).copied()
    }

    fn encode_word(&self, word: &str, out: &mut Vec<usize>) {
        let mut syms = initial_symbols(word);
        loop {
            let best = syms
                .windows(2)
                .enumerate()
                .filter_map(|(i, p)| self.ranks.get(&(p[0].clone(), p[1].clone())).map(|&r| (r, i)))
                .min();
            let Some((rank, _)) = best else { break };
            let (a, b) = &self.merges[rank];
            merge_pair(&mut syms, a, b);
        }
        out.extend(syms.iter().map(|s| self.id(s).unwrap_or(UNK)));
    }

    /// Subword ids for `text`; unseen symbols become [`UNK`].
    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut out = Vec::new();
        for w in text.split_whitespace() {
            self.encode_word(w, &mut out);
        }
        out
    }

    /// Joins subwords, turning end-of-word markers back into spaces. PAD/BOS/EOS are dropped.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut s = String::new();
        for &id in ids {
            match id {
                PAD | BOS | EOS => continue,
                _ => {
                    let tok = self.token(id).ok_or_else(|| {
                        Error::invalid(format!("decode: id {id} outside vocabulary of {}", self.vocab_size()))
                    })?;
                    if id == UNK {
                        s.push_str(tok);
                        s.push(' ');
                    } else if let Some(stem) = tok.strip_suffix(END_OF_WORD) {
                        s.push_str(stem);
                        s.push(' ');
                    } else {
                        s.push_str(tok);
                    }
                }
            }
        }
        Ok(s.trim_end().to_string())
    }

    /// Text form: header, vocab size, merges (`a b`), then `token<TAB>id` entries.
    pub fn to_text(&self) -> String {
        let mut s = format!("{HEADER}\n{}\n", self.vocab_size());
        for (a, b) in &self.merges {
            let _ = writeln!(s, "{a} {b}");
        }
        for (i, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(s, "{t}\t{i}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Parse {
            path: "<bpe model>".into(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, HEADER)) => {}
            _ => return Err(bad(1, "missing `BPE v1` header")),
        }
        let size: usize = lines
            .next()
            .and_then(|(_, l)| l.trim().parse().ok())
            .ok_or_else(|| bad(2, "expected vocabulary size"))?;
        let mut merges = Vec::new();
        let mut tokens = vec![String::new(); size];
        let mut filled = vec![false; size];
        for (i, line) in lines {
            if let Some((tok, id)) = line.rsplit_once('\t') {
                let id: usize = id.parse().map_err(|_| bad(i + 1, "bad token id"))?;
                if id >= size || filled[id] {
                    return Err(bad(i + 1, "token id out of range or repeated"));
                }
                tokens[id] = tok.to_string();
                filled[id] = true;
            } else {
                let (a, b) = line.split_once(' ').ok_or_else(|| bad(i + 1, "expected merge `a b`"))?;
                merges.push((a.to_string(), b.to_string()));
            }
        }
        if filled.iter().any(|f| !f) {
            return Err(bad(0, "vocabulary has missing ids"));
        }
        if tokens[..N_SPECIAL].iter().zip(SPECIALS).any(|(t, s)| t != s) {
            return Err(bad(0, "special tokens must occupy ids 0..4"));
        }
        Ok(BpeModel::from_parts(merges, tokens))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
