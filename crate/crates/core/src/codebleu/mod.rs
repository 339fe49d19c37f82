//! Parser-backed CodeBLEU for Java and C#: a weighted combination of
//! n-gram match, keyword-weighted n-gram match, AST subtree match, and
//! dataflow match.
//!
//! Conventions are locked by the parity fixture file shipped with the
//! tests (`codebleu_parity.jsonl`):
//!
//! - n-gram match is corpus BLEU over whitespace tokens (add-one smoothing
//!   for n >= 2, case-sensitive, brevity penalty included), identical to
//!   the plain BLEU preset.
//! - weighted n-gram match applies token weights to every n-gram
//!   occurrence: weight 1.0 when the n-gram's first token is a language
//!   keyword, 0.2 otherwise. Numerators and denominators are weighted
//!   sums; smoothing and brevity penalty mirror the unweighted component.
//! - AST match is the fraction of the reference's internal, error-free
//!   subtree serializations that occur in the candidate's multiset
//!   (reference occurrences count individually; 1.0 when the reference has
//!   none).
//! - dataflow match is the fraction of reference def-use edges matched in
//!   the candidate under multiset removal (1.0 when the reference has
//!   none).

mod dataflow;
mod keywords;
mod parser;

pub use dataflow::{dataflow_edges, DataflowEdge};
pub use keywords::{is_keyword, keywords};
pub use parser::{parse, Language, ParseMode, SyntaxTree};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::Score;

#[derive(Debug, Error, PartialEq)]
pub enum CodeBleuError {
    #[error("component weights must be non-negative and sum to 1, got {0:?}")]
    BadWeights([f64; 4]),
    #[error("max_n must be positive")]
    BadMaxN,
    #[error("answer and reference lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
}

/// Weights and language for [`codebleu`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeBleuConfig {
    pub language: Language,
    /// (ngram, weighted_ngram, ast, dataflow); non-negative, summing to 1.
    pub weights: [f64; 4],
    pub max_n: usize,
}

impl CodeBleuConfig {
    /// Uniform quarter weights, 4-grams.
    pub fn new(language: Language) -> Self {
        CodeBleuConfig {
            language,
            weights: [0.25; 4],
            max_n: 4,
        }
    }

    pub fn validate(&self) -> Result<(), CodeBleuError> {
        if self.max_n == 0 {
            return Err(CodeBleuError::BadMaxN);
        }
        let sum: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| *w < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(CodeBleuError::BadWeights(self.weights));
        }
        Ok(())
    }
}

/// Combined score with its component breakdown, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodeBleuScore {
    pub ngram: f64,
    pub weighted_ngram: f64,
    pub ast: f64,
    pub dataflow: f64,
    pub total: f64,
}

impl CodeBleuScore {
    pub fn score(&self) -> Score {
        Score::new(self.total)
    }
}

/// CodeBLEU for a single candidate/reference pair.
pub fn codebleu(
    candidate: &str,
    reference: &str,
    config: &CodeBleuConfig,
) -> Result<CodeBleuScore, CodeBleuError> {
    corpus_codebleu(&[candidate], &[reference], config)
}

/// Corpus-level CodeBLEU: n-gram counts, subtree matches, and dataflow
/// matches are summed over all pairs before the component ratios are
/// formed.
pub fn corpus_codebleu(
    candidates: &[&str],
    references: &[&str],
    config: &CodeBleuConfig,
) -> Result<CodeBleuScore, CodeBleuError> {
    config.validate()?;
    if candidates.len() != references.len() {
        return Err(CodeBleuError::LengthMismatch(
            candidates.len(),
            references.len(),
        ));
    }
    if candidates.is_empty() {
        return Err(CodeBleuError::EmptyInput);
    }

    let mut plain = NgramAccumulator::new(config.max_n, None);
    let mut weighted = NgramAccumulator::new(config.max_n, Some(config.language));
    let mut ast_matched = 0u64;
    let mut ast_total = 0u64;
    let mut flow_matched = 0u64;
    let mut flow_total = 0u64;

    for (candidate, reference) in candidates.iter().zip(references) {
        plain.accumulate(candidate, reference);
        weighted.accumulate(candidate, reference);

        let cand_tree = parse(candidate, config.language);
        let ref_tree = parse(reference, config.language);

        let cand_subtrees = cand_tree.subtree_serializations();
        let ref_subtrees = ref_tree.subtree_serializations();
        ast_total += ref_subtrees.len() as u64;
        // Each reference occurrence matches when the serialization occurs
        // anywhere in the candidate (candidate occurrences are reusable).
        let cand_set: std::collections::HashSet<&str> =
            cand_subtrees.iter().map(String::as_str).collect();
        ast_matched += ref_subtrees
            .iter()
            .filter(|s| cand_set.contains(s.as_str()))
            .count() as u64;

        let mut cand_edges = dataflow_edges(&cand_tree);
        let ref_edges = dataflow_edges(&ref_tree);
        flow_total += ref_edges.len() as u64;
        for edge in &ref_edges {
            if let Some(pos) = cand_edges.iter().position(|c| c == edge) {
                cand_edges.swap_remove(pos);
                flow_matched += 1;
            }
        }
    }

    let ngram = plain.score();
    let weighted_ngram = weighted.score();
    let ast = ratio_or_one(ast_matched, ast_total);
    let dataflow = ratio_or_one(flow_matched, flow_total);
    let [w1, w2, w3, w4] = config.weights;
    let total = w1 * ngram + w2 * weighted_ngram + w3 * ast + w4 * dataflow;
    Ok(CodeBleuScore {
        ngram,
        weighted_ngram,
        ast,
        dataflow,
        total,
    })
}

fn ratio_or_one(matched: u64, total: u64) -> f64 {
    if total == 0 {
        1.0
    } else {
        matched as f64 / total as f64
    }
}

/// Corpus BLEU counts, optionally keyword-weighted. Weighted sums stay
/// deterministic because n-grams iterate in first-occurrence order.
struct NgramAccumulator {
    max_n: usize,
    language: Option<Language>,
    /// (weighted matches, weighted totals) per order.
    per_order: Vec<(f64, f64)>,
    candidate_len: u64,
    reference_len: u64,
}

impl NgramAccumulator {
    fn new(max_n: usize, language: Option<Language>) -> Self {
        NgramAccumulator {
            max_n,
            language,
            per_order: vec![(0.0, 0.0); max_n],
            candidate_len: 0,
            reference_len: 0,
        }
    }

    fn weight_of(&self, first_token: &str) -> f64 {
        match self.language {
            Some(language) if is_keyword(language, first_token) => 1.0,
            Some(_) => 0.2,
            None => 1.0,
        }
    }

    fn accumulate(&mut self, candidate: &str, reference: &str) {
        let cand_tokens: Vec<&str> = candidate.split_whitespace().collect();
        let ref_tokens: Vec<&str> = reference.split_whitespace().collect();
        self.candidate_len += cand_tokens.len() as u64;
        self.reference_len += ref_tokens.len() as u64;
        for n in 1..=self.max_n {
            let cand_counts = count_ngrams(&cand_tokens, n);
            let ref_counts = count_ngrams(&ref_tokens, n);
            let mut matches = 0.0;
            let mut total = 0.0;
            for (gram, &count) in &cand_counts {
                let weight = self.weight_of(gram[0]);
                total += weight * count as f64;
                if let Some(&ref_count) = ref_counts.get(gram) {
                    matches += weight * count.min(ref_count) as f64;
                }
            }
            let entry = &mut self.per_order[n - 1];
            entry.0 += matches;
            entry.1 += total;
        }
    }

    /// BLEU preset scoring: raw unigram precision, add-one smoothing for
    /// n >= 2, geometric mean, brevity penalty on summed lengths.
    fn score(&self) -> f64 {
        if self.candidate_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for (i, &(matches, total)) in self.per_order.iter().enumerate() {
            let precision = if i == 0 {
                if total == 0.0 || matches == 0.0 {
                    return 0.0;
                }
                matches / total
            } else {
                (matches + 1.0) / (total + 1.0)
            };
            log_sum += precision.ln();
        }
        let geo_mean = (log_sum / self.max_n as f64).exp();
        let bp = if self.candidate_len >= self.reference_len {
            1.0
        } else {
            (1.0 - self.reference_len as f64 / self.candidate_len as f64).exp()
        };
        bp * geo_mean
    }
}

fn count_ngrams<'a>(tokens: &[&'a str], n: usize) -> IndexMap<Vec<&'a str>, u64> {
    let mut counts = IndexMap::new();
    if tokens.len() >= n && n > 0 {
        for window in tokens.windows(n) {
            *counts.entry(window.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}
