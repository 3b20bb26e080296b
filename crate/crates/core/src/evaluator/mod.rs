//! s-BLEU and d-BLEU (13a tokenization, exponential smoothing) and the
//! contrastive pronoun-accuracy harness.

mod bleu;
mod contrastive;

pub use bleu::{bleu, corpus_stats, d_bleu, tokenize_13a, BleuStats};
pub use contrastive::{
    aggregate_contrastive, candidate_logprobs, distance_bucket, judge, score_contrastive_instance,
    score_contrastive_set, Cell, ContextProbe, ContrastiveReport, ContrastiveResult, InstanceScore, DISTANCE_BUCKETS,
};
