//! A toy English→German discourse corpus in which every `it` must be translated
//! as `es`, `er` or `sie` according to the grammatical gender of the most
//! recently mentioned noun, so pronoun translation requires context whenever
//! that noun lies in an earlier sentence.
//!
//! Sentence templates:
//!
//! | kind    | source                          | target                                  |
//! |---------|---------------------------------|-----------------------------------------|
//! | noun    | `the N V .`                     | `ART N' V' .`                           |
//! | pronoun | `it V .`                        | `PRON V' .`                             |
//! | intra   | `the N V and it V2 .`           | `ART N' V' und PRON V2' .`              |

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Document, SentencePair};
use crate::error::{Error, Result};
use crate::exec::sub_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Es,
    Er,
    Sie,
}

impl Gender {
    pub const ALL: [Gender; 3] = [Gender::Es, Gender::Er, Gender::Sie];

    pub fn pronoun(self) -> &'static str {
        match self {
            Gender::Es => "es",
            Gender::Er => "er",
            Gender::Sie => "sie",
        }
    }

    pub fn article(self) -> &'static str {
        match self {
            Gender::Es => "das",
            Gender::Er => "der",
            Gender::Sie => "die",
        }
    }

    pub fn from_pronoun(s: &str) -> Option<Gender> {
        Gender::ALL.into_iter().find(|g| g.pronoun() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Noun {
    pub en: String,
    pub de: String,
    pub gender: Gender,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verb {
    pub en: String,
    pub de: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrammarParams {
    pub nouns: Vec<Noun>,
    pub verbs: Vec<Verb>,
    /// Relative weights of the three sentence kinds after the first sentence.
    pub weight_noun: f64,
    pub weight_pronoun: f64,
    pub weight_intra: f64,
}

const NOUNS: &[(&str, &str, Gender)] = &[
    ("house", "Haus", Gender::Es),
    ("book", "Buch", Gender::Es),
    ("car", "Auto", Gender::Es),
    ("child", "Kind", Gender::Es),
    ("horse", "Pferd", Gender::Es),
    ("window", "Fenster", Gender::Es),
    ("bed", "Bett", Gender::Es),
    ("boat", "Boot", Gender::Es),
    ("dog", "Hund", Gender::Er),
    ("table", "Tisch", Gender::Er),
    ("tree", "Baum", Gender::Er),
    ("garden", "Garten", Gender::Er),
    ("chair", "Stuhl", Gender::Er),
    ("train", "Zug", Gender::Er),
    ("key", "Schlüssel", Gender::Er),
    ("river", "Fluss", Gender::Er),
    ("cat", "Katze", Gender::Sie),
    ("door", "Tür", Gender::Sie),
    ("lamp", "Lampe", Gender::Sie),
    ("street", "Straße", Gender::Sie),
    ("city", "Stadt", Gender::Sie),
    ("flower", "Blume", Gender::Sie),
    ("bottle", "Flasche", Gender::Sie),
    ("clock", "Uhr", Gender::Sie),
];

const VERBS: &[(&str, &str)] = &[
    ("sleeps", "schläft"),
    ("falls", "fällt"),
    ("waits", "wartet"),
    ("shines", "glänzt"),
    ("stays", "bleibt"),
    ("turns", "dreht"),
    ("breaks", "bricht"),
    ("shakes", "wackelt"),
    ("rests", "ruht"),
    ("grows", "wächst"),
    ("stands", "steht"),
    ("lies", "liegt"),
    ("vanishes", "verschwindet"),
    ("glows", "glüht"),
    ("sinks", "sinkt"),
    ("works", "funktioniert"),
];

impl Default for GrammarParams {
    fn default() -> Self {
        GrammarParams {
            nouns: NOUNS
                .iter()
                .map(|&(en, de, gender)| Noun {
                    en: en.into(),
                    de: de.into(),
                    gender,
                })
                .collect(),
            verbs: VERBS
                .iter()
                .map(|&(en, de)| Verb {
                    en: en.into(),
                    de: de.into(),
                })
                .collect(),
            weight_noun: 0.35,
            weight_pronoun: 0.5,
            weight_intra: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentenceKind {
    Noun,
    Pronoun,
    Intra,
}

/// Generator annotations for one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceMeta {
    pub kind: SentenceKind,
    /// Gender of the pronoun in this sentence, if it has one.
    pub pronoun: Option<Gender>,
    /// Sentences between the pronoun and its antecedent noun (0 = same sentence).
    pub antecedent_distance: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticDocument {
    pub doc: Document,
    pub meta: Vec<SentenceMeta>,
}

fn validate(params: &GrammarParams) -> Result<()> {
    if params.nouns.is_empty() {
        return Err(Error::invalid("synthetic grammar needs at least one noun"));
    }
    if params.verbs.is_empty() {
        return Err(Error::invalid("synthetic grammar needs at least one verb"));
    }
    let w = [params.weight_noun, params.weight_pronoun, params.weight_intra];
    if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) || params.weight_noun + params.weight_intra <= 0.0 {
        return Err(Error::invalid("synthetic grammar weights must be non-negative with some noun-bearing kind"));
    }
    Ok(())
}

fn pick_kind(rng: &mut ChaCha8Rng, params: &GrammarParams, first: bool) -> SentenceKind {
    let wp = if first { 0.0 } else { params.weight_pronoun };
    let total = params.weight_noun + wp + params.weight_intra;
    let x = rng.gen::<f64>() * total;
    if x < params.weight_noun {
        SentenceKind::Noun
    } else if x < params.weight_noun + wp {
        SentenceKind::Pronoun
    } else {
        SentenceKind::Intra
    }
}

fn generate_document(rng: &mut ChaCha8Rng, doc_id: String, doc_len: usize, params: &GrammarParams) -> SyntheticDocument {
    let mut sentences = Vec::with_capacity(doc_len);
    let mut meta = Vec::with_capacity(doc_len);
    // (sentence index, gender) of the latest noun
    let mut last_noun: Option<(usize, Gender)> = None;
    for i in 0..doc_len {
        let kind = pick_kind(rng, params, last_noun.is_none());
        let verb = &params.verbs[rng.gen_range(0..params.verbs.len())];
        let (source, target, m) = match kind {
            SentenceKind::Noun | SentenceKind::Intra => {
                let noun = &params.nouns[rng.gen_range(0..params.nouns.len())];
                last_noun = Some((i, noun.gender));
                let src = format!("the {} {}", noun.en, verb.en);
                let tgt = format!("{} {} {}", noun.gender.article(), noun.de, verb.de);
                if kind == SentenceKind::Noun {
                    (
                        format!("{src} ."),
                        format!("{tgt} ."),
                        SentenceMeta {
                            kind,
                            pronoun: None,
                            antecedent_distance: None,
                        },
                    )
                } else {
                    let verb2 = &params.verbs[rng.gen_range(0..params.verbs.len())];
                    (
                        format!("{src} and it {} .", verb2.en),
                        format!("{tgt} und {} {} .", noun.gender.pronoun(), verb2.de),
                        SentenceMeta {
                            kind,
                            pronoun: Some(noun.gender),
                            antecedent_distance: Some(0),
                        },
                    )
                }
            }
            SentenceKind::Pronoun => {
                let (j, g) = last_noun.expect("pronoun sentences follow a noun");
                (
                    format!("it {} .", verb.en),
                    format!("{} {} .", g.pronoun(), verb.de),
                    SentenceMeta {
                        kind,
                        pronoun: Some(g),
                        antecedent_distance: Some(i - j),
                    },
                )
            }
        };
        sentences.push(SentencePair { source, target });
        meta.push(m);
    }
    SyntheticDocument {
        doc: Document { doc_id, sentences },
        meta,
    }
}

/// `n_docs` documents of `doc_len` sentences from the named seed stream `split`.
pub fn make_synthetic_split(
    n_docs: usize,
    doc_len: usize,
    seed: u64,
    params: &GrammarParams,
    split: &str,
) -> Result<Vec<SyntheticDocument>> {
    if n_docs == 0 || doc_len == 0 {
        return Err(Error::invalid("synthetic corpus needs n_docs ≥ 1 and doc_len ≥ 1"));
    }
    validate(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, &format!("synth-{split}")));
    Ok((0..n_docs)
        .map(|i| generate_document(&mut rng, format!("{split}-{i}"), doc_len, params))
        .collect())
}

/// Training documents plus a validation split of `max(1, n_docs / 10)` documents.
pub fn make_synthetic_corpus(
    n_docs: usize,
    doc_len: usize,
    seed: u64,
    params: &GrammarParams,
) -> Result<(Vec<SyntheticDocument>, Vec<SyntheticDocument>)> {
    let train = make_synthetic_split(n_docs, doc_len, seed, params, "train")?;
    let valid = make_synthetic_split((n_docs / 10).max(1), doc_len, seed, params, "valid")?;
    Ok((train, valid))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gender_of(params: &GrammarParams, word: &str) -> Option<Gender> {
        params.nouns.iter().find(|n| n.en == word).map(|n| n.gender)
    }

    #[test]
    fn pronouns_follow_latest_noun() {
        let params = GrammarParams::default();
        let (train, _) = make_synthetic_corpus(50, 10, 1, &params).unwrap();
        for d in &train {
            let mut latest: Option<(usize, Gender)> = None;
            for (i, (s, m)) in d.doc.sentences.iter().zip(&d.meta).enumerate() {
                let words: Vec<&str> = s.source.split(' ').collect();
                if words[0] == "the" {
                    latest = Some((i, gender_of(&params, words[1]).unwrap()));
                }
                if let Some(g) = m.pronoun {
                    let (j, want) = latest.unwrap();
                    assert_eq!(g, want);
                    assert_eq!(m.antecedent_distance, Some(i - j));
                    assert!(s.target.split(' ').any(|w| w == g.pronoun()));
                }
            }
        }
    }

    #[test]
    fn er_noun_then_pronoun() {
        let params = GrammarParams {
            nouns: vec![Noun {
                en: "dog".into(),
                de: "Hund".into(),
                gender: Gender::Er,
            }],
            weight_noun: 1.0,
            weight_pronoun: 1.0,
            weight_intra: 0.0,
            ..GrammarParams::default()
        };
        let docs = make_synthetic_split(20, 6, 2, &params, "t").unwrap();
        let mut seen_d1 = false;
        for d in &docs {
            for (s, m) in d.doc.sentences.iter().zip(&d.meta) {
                if m.antecedent_distance == Some(1) {
                    seen_d1 = true;
                    assert!(s.target.starts_with("er "));
                }
            }
        }
        assert!(seen_d1);
    }

    #[test]
    fn intra_sentences_have_distance_zero() {
        let params = GrammarParams {
            weight_noun: 0.0,
            weight_pronoun: 0.0,
            weight_intra: 1.0,
            ..GrammarParams::default()
        };
        let docs = make_synthetic_split(3, 4, 5, &params, "t").unwrap();
        for m in docs.iter().flat_map(|d| &d.meta) {
            assert_eq!(m.kind, SentenceKind::Intra);
            assert_eq!(m.antecedent_distance, Some(0));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let p = GrammarParams::default();
        assert_eq!(make_synthetic_corpus(5, 5, 9, &p).unwrap(), make_synthetic_corpus(5, 5, 9, &p).unwrap());
        assert_ne!(make_synthetic_corpus(5, 5, 9, &p).unwrap(), make_synthetic_corpus(5, 5, 10, &p).unwrap());
    }

    #[test]
    fn rejects_empty_grammar_and_sizes() {
        let p = GrammarParams {
            nouns: vec![],
            ..GrammarParams::default()
        };
        assert!(make_synthetic_corpus(5, 5, 0, &p).is_err());
        assert!(make_synthetic_corpus(0, 5, 0, &GrammarParams::default()).is_err());
        assert!(make_synthetic_corpus(5, 0, 0, &GrammarParams::default()).is_err());
    }
}
