use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Gender, SyntheticDocument};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AntecedentLocation {
    Intrasegmental,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub target: String,
    pub correct: bool,
    pub pronoun: Gender,
}

/// One pronoun test item: a correct translation and minimally edited contrastive variants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastiveInstance {
    /// Preceding source sentences, oldest first.
    pub context: Vec<String>,
    pub source: String,
    pub candidates: Vec<Candidate>,
    pub antecedent_location: AntecedentLocation,
    pub antecedent_distance: usize,
}

impl ContrastiveInstance {
    pub fn validate(&self) -> Result<()> {
        if self.candidates.len() < 2 {
            return Err(Error::invalid("contrastive instance needs at least two candidates"));
        }
        if self.candidates.iter().filter(|c| c.correct).count() != 1 {
            return Err(Error::invalid("contrastive instance needs exactly one correct candidate"));
        }
        let intra = self.antecedent_location == AntecedentLocation::Intrasegmental;
        if intra != (self.antecedent_distance == 0) {
            return Err(Error::invalid(
                "antecedent distance 0 must coincide with an intrasegmental location",
            ));
        }
        Ok(())
    }

    pub fn correct_index(&self) -> usize {
        self.candidates.iter().position(|c| c.correct).unwrap_or(0)
    }

    /// The reference pronoun (that of the correct candidate).
    pub fn pronoun(&self) -> Gender {
        self.candidates[self.correct_index()].pronoun
    }
}

fn swap_pronoun(target: &str, from: Gender, to: Gender) -> String {
    target
        .split(' ')
        .map(|w| if w == from.pronoun() { to.pronoun() } else { w })
        .collect::<Vec<_>>()
        .join(" ")
}

/// One instance per pronoun-bearing sentence; candidates are the three pronoun
/// variants in `es, er, sie` order and the context is the `k` preceding sources.
pub fn make_contrastive_set(docs: &[SyntheticDocument], k: usize) -> Vec<ContrastiveInstance> {
    let mut out = Vec::new();
    for d in docs {
        for (i, (pair, meta)) in d.doc.sentences.iter().zip(&d.meta).enumerate() {
            let (Some(g), Some(distance)) = (meta.pronoun, meta.antecedent_distance) else {
                continue;
            };
            let candidates = Gender::ALL
                .iter()
                .map(|&alt| Candidate {
                    target: swap_pronoun(&pair.target, g, alt),
                    correct: alt == g,
                    pronoun: alt,
                })
                .collect();
            let start = i.saturating_sub(k);
            out.push(ContrastiveInstance {
                context: d.doc.sentences[start..i].iter().map(|p| p.source.clone()).collect(),
                source: pair.source.clone(),
                candidates,
                antecedent_location: if distance == 0 {
                    AntecedentLocation::Intrasegmental
                } else {
                    AntecedentLocation::External
                },
                antecedent_distance: distance,
            });
        }
    }
    out
}

/// One JSON object per line.
pub fn write_contrastive_set(set: &[ContrastiveInstance], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for inst in set {
        serde_json::to_writer(&mut f, inst)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_contrastive_set(path: &Path) -> Result<Vec<ContrastiveInstance>> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let inst: ContrastiveInstance = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        inst.validate().map_err(|e| parse_err(e.to_string()))?;
        out.push(inst);
    }
    Ok(out)
}
