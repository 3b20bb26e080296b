use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{prev_context, AntecedentLocation, ContrastiveInstance, Gender};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{Dropout, ModelParams, Padded};
use crate::tensor::{log_softmax, Float, Tensor};
use crate::tokenizer::{BpeModel, BOS, EOS};

/// Which context the scorer shows the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextProbe {
    /// The `k` preceding sentences, padded at the document start like training.
    Prev(usize),
    /// The source sentence itself.
    SelfSource,
}

impl ContextProbe {
    pub fn context_text(&self, inst: &ContrastiveInstance) -> String {
        match *self {
            ContextProbe::Prev(k) => {
                let prev: Vec<&str> = inst.context.iter().map(String::as_str).collect();
                prev_context(&prev, &inst.source, k)
            }
            ContextProbe::SelfSource => inst.source.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceScore {
    /// Index of the unique best candidate; `None` on a tie for the top score.
    pub chosen: Option<usize>,
    pub scores: Vec<f64>,
    pub correct: bool,
}

/// Strict argmax; a tie for the maximum counts as incorrect.
pub fn judge(scores: &[f64], correct_index: usize) -> InstanceScore {
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let winners: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] == best).collect();
    let chosen = (winners.len() == 1).then(|| winners[0]);
    InstanceScore {
        chosen,
        scores: scores.to_vec(),
        correct: chosen == Some(correct_index),
    }
}

/// Sum of teacher-forced target-token log-probabilities (EOS included) of each
/// candidate given one context and source, dropout off.
pub fn candidate_logprobs<T: Float>(
    params: &ModelParams<T>,
    context: &[usize],
    source: &[usize],
    candidates: &[Vec<usize>],
) -> Result<Vec<f64>> {
    let max_len = params.config().max_len;
    if let Some(c) = candidates.iter().find(|c| c.len() + 1 > max_len) {
        return Err(Error::TooLong {
            len: c.len() + 1,
            max: max_len,
        });
    }
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let vars = params.bind(false)?;
    let src = Padded::single(source);
    let h = vars.encode(&Padded::single(context), &src, &mut Dropout::eval())?;
    let n = candidates.len();
    let mut h_rep = Vec::with_capacity(n * h.numel());
    let mut src_rep = Vec::with_capacity(n * src.len);
    for _ in 0..n {
        h_rep.extend_from_slice(h.data());
        src_rep.extend_from_slice(&src.ids);
    }
    let mut shape = h.shape().to_vec();
    shape[0] = n;
    let h = Tensor::from_vec(h_rep, &shape)?;
    let src = Padded {
        ids: src_rep,
        batch: n,
        len: src.len,
    };
    let inputs: Vec<Vec<usize>> = candidates
        .iter()
        .map(|c| std::iter::once(BOS).chain(c.iter().copied()).collect())
        .collect();
    let tgt = Padded::new(&inputs)?;
    let logits = vars.decode(&h, &src, &tgt, &mut Dropout::eval())?.logits;
    let v = params.config().vocab_size;
    let data = logits.data();
    Ok(candidates
        .iter()
        .enumerate()
        .map(|(b, c)| {
            c.iter()
                .copied()
                .chain(std::iter::once(EOS))
                .enumerate()
                .map(|(t, y)| {
                    let off = (b * tgt.len + t) * v;
                    log_softmax(&data[off..off + v])[y].as_f64()
                })
                .sum()
        })
        .collect())
}

/// Scores every candidate of `inst` and judges the instance.
pub fn score_contrastive_instance<T: Float>(
    params: &ModelParams<T>,
    bpe: &BpeModel,
    inst: &ContrastiveInstance,
    probe: ContextProbe,
) -> Result<InstanceScore> {
    inst.validate()?;
    let max_len = params.config().max_len;
    let (context, source) = crate::decoder::encode_inputs(bpe, &probe.context_text(inst), &inst.source, max_len);
    let cands: Vec<Vec<usize>> = inst.candidates.iter().map(|c| bpe.encode(&c.target)).collect();
    let scores = candidate_logprobs(params, &context, &source, &cands)?;
    Ok(judge(&scores, inst.correct_index()))
}

/// One judged instance with the attributes the report breaks down by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveResult {
    pub pronoun: Gender,
    pub location: AntecedentLocation,
    pub distance: usize,
    pub correct: bool,
}

impl ContrastiveResult {
    pub fn new(inst: &ContrastiveInstance, correct: bool) -> Self {
        ContrastiveResult {
            pronoun: inst.pronoun(),
            location: inst.antecedent_location,
            distance: inst.antecedent_distance,
            correct,
        }
    }
}

pub fn score_contrastive_set<T: Float>(
    params: &ModelParams<T>,
    bpe: &BpeModel,
    set: &[ContrastiveInstance],
    probe: ContextProbe,
    exec: Execution,
) -> Result<Vec<ContrastiveResult>> {
    exec.map_range(set.len(), |i| {
        score_contrastive_instance(params, bpe, &set[i], probe)
            .map(|s| ContrastiveResult::new(&set[i], s.correct))
            .map_err(|e| e.at(format!("instance {i}")))
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub label: String,
    pub correct: usize,
    pub count: usize,
    /// `None` for an empty cell.
    pub accuracy: Option<f64>,
}

impl Cell {
    fn new(label: &str) -> Self {
        Cell {
            label: label.to_string(),
            correct: 0,
            count: 0,
            accuracy: None,
        }
    }

    fn add(&mut self, correct: bool) {
        self.count += 1;
        self.correct += usize::from(correct);
        self.accuracy = Some(self.correct as f64 / self.count as f64);
    }
}

pub const DISTANCE_BUCKETS: [&str; 5] = ["0", "1", "2", "3", ">3"];

pub fn distance_bucket(distance: usize) -> usize {
    distance.min(4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveReport {
    pub total: Cell,
    pub by_pronoun: Vec<Cell>,
    pub by_location: Vec<Cell>,
    pub by_distance: Vec<Cell>,
}

pub fn aggregate_contrastive(results: &[ContrastiveResult]) -> Result<ContrastiveReport> {
    if results.is_empty() {
        return Err(Error::invalid("aggregate_contrastive: no results"));
    }
    let mut total = Cell::new("total");
    let mut by_pronoun: Vec<Cell> = Gender::ALL.iter().map(|g| Cell::new(g.pronoun())).collect();
    let mut by_location = vec![Cell::new("intrasegmental"), Cell::new("external")];
    let mut by_distance: Vec<Cell> = DISTANCE_BUCKETS.iter().map(|b| Cell::new(b)).collect();
    for r in results {
        total.add(r.correct);
        let g = Gender::ALL.iter().position(|&g| g == r.pronoun).unwrap_or(0);
        by_pronoun[g].add(r.correct);
        let loc = usize::from(r.location == AntecedentLocation::External);
        by_location[loc].add(r.correct);
        by_distance[distance_bucket(r.distance)].add(r.correct);
    }
    Ok(ContrastiveReport {
        total,
        by_pronoun,
        by_location,
        by_distance,
    })
}

impl ContrastiveReport {
    pub fn cell(&self, label: &str) -> Option<&Cell> {
        std::iter::once(&self.total)
            .chain(&self.by_pronoun)
            .chain(&self.by_location)
            .chain(&self.by_distance)
            .find(|c| c.label == label)
    }

    /// Accuracy over the union of distance buckets `lo..=hi` (bucket indices).
    pub fn accuracy_over_buckets(&self, lo: usize, hi: usize) -> Option<f64> {
        let cells = &self.by_distance[lo..=hi];
        let n: usize = cells.iter().map(|c| c.count).sum();
        let k: usize = cells.iter().map(|c| c.correct).sum();
        (n > 0).then(|| k as f64 / n as f64)
    }

    /// Accuracy by pronoun, location and distance bucket, one column per cell.
    pub fn to_table(&self) -> String {
        let cells: Vec<&Cell> = std::iter::once(&self.total)
            .chain(&self.by_pronoun)
            .chain(&self.by_location)
            .chain(&self.by_distance)
            .collect();
        let label = |c: &Cell| match c.label.as_str() {
            "intrasegmental" => "intra".to_string(),
            "external" => "extra".to_string(),
            l => l.to_string(),
        };
        let mut s = format!("{:<10}", "");
        for c in &cells {
            let _ = write!(s, "{:>8}", label(c));
        }
        s.push('\n');
        let _ = write!(s, "{:<10}", "accuracy");
        for c in &cells {
            match c.accuracy {
                Some(a) => {
                    let _ = write!(s, "{:>8.1}", 100.0 * a);
                }
                None => {
                    let _ = write!(s, "{:>8}", "-");
                }
            }
        }
        s.push('\n');
        let _ = write!(s, "{:<10}", "count");
        for c in &cells {
            let _ = write!(s, "{:>8}", c.count);
        }
        s.push('\n');
        s
    }
}
