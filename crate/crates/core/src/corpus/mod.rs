//! Parallel documents, context construction, and the synthetic discourse task.

mod context;
mod contrastive;
mod synthetic;

pub use context::{build_context, prev_context, ContextExample, ContextMode};
pub use contrastive::{
    make_contrastive_set, read_contrastive_set, write_contrastive_set, AntecedentLocation, Candidate,
    ContrastiveInstance,
};
pub use synthetic::{
    make_synthetic_corpus, make_synthetic_split, Gender, GrammarParams, Noun, SentenceKind, SentenceMeta,
    SyntheticDocument, Verb,
};

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<SentencePair>,
}

impl Document {
    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().map(|s| s.source.as_str())
    }

    pub fn targets(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().map(|s| s.target.as_str())
    }
}

/// Reads `source<TAB>target` lines grouped into blank-line separated documents.
pub fn load_documents(path: &Path) -> Result<Vec<Document>> {
    let text = std::fs::read_to_string(path)?;
    parse_documents(&text, path)
}

pub fn parse_documents(text: &str, path: &Path) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut current = Vec::new();
    let flush = |current: &mut Vec<SentencePair>, docs: &mut Vec<Document>| {
        if !current.is_empty() {
            docs.push(Document {
                doc_id: format!("doc{}", docs.len()),
                sentences: std::mem::take(current),
            });
        }
    };
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            flush(&mut current, &mut docs);
            continue;
        }
        let (source, target) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: "expected `source<TAB>target`".into(),
        })?;
        current.push(SentencePair {
            source: source.trim().to_string(),
            target: target.trim().to_string(),
        });
    }
    flush(&mut current, &mut docs);
    if docs.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "no documents".into(),
        });
    }
    Ok(docs)
}

pub fn format_documents(docs: &[Document]) -> String {
    let mut s = String::new();
    for (i, d) in docs.iter().enumerate() {
        if i > 0 {
            s.push('\n');
        }
        for p in &d.sentences {
            let _ = writeln!(s, "{}\t{}", p.source, p.target);
        }
    }
    s
}

pub fn write_documents(docs: &[Document], path: &Path) -> Result<()> {
    std::fs::write(path, format_documents(docs))?;
    Ok(())
}

/// Plain text, one sentence per line, documents separated by a blank line.
pub fn format_plain_documents(docs: &[Vec<String>]) -> String {
    docs.iter()
        .map(|d| d.iter().map(|s| format!("{s}\n")).collect::<String>())
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn parse_plain_documents(text: &str) -> Vec<Vec<String>> {
    let mut docs = Vec::new();
    let mut cur = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !cur.is_empty() {
                docs.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push(line.trim().to_string());
        }
    }
    if !cur.is_empty() {
        docs.push(cur);
    }
    docs
}
