//! Text-level grading metrics: Exact Match, the BLEU family, and
//! Levenshtein distance.
//!
//! All metrics compare a candidate string (the model's answer) against a
//! single reference string and grade on a 0..1 scale; Levenshtein is the
//! odd one out, returning a raw edit count. Tokenization is whitespace
//! splitting throughout, matching corpora that ship as single-line,
//! space-separated code fragments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A grade in `[0, 1]`, higher is better.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Score(f64);

impl Score {
    /// Wraps a value, clamping fp noise at the boundaries. Values outside
    /// `[0, 1]` beyond rounding error indicate a metric bug.
    pub(crate) fn new(value: f64) -> Score {
        debug_assert!(
            (-1e-12..=1.0 + 1e-12).contains(&value),
            "score out of range: {value}"
        );
        Score(value.clamp(0.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<Score> for f64 {
    fn from(s: Score) -> f64 {
        s.0
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("answer and reference lists differ in length ({answers} vs {references})")]
    LengthMismatch { answers: usize, references: usize },
    #[error("empty input: at least one answer/reference pair is required")]
    EmptyInput,
}

/// Smoothing applied to modified n-gram precisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// No smoothing: any zero precision forces a zero score.
    None,
    /// Add-one smoothing on orders n >= 2: (matches+1)/(total+1).
    /// Unigram precision stays raw.
    LinOchAddOne,
}

/// Token stream fed to the n-gram counters. Only whitespace splitting is
/// supported; the corpora come pre-tokenized with single spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenizer {
    Whitespace,
}

/// Configuration for [`bleu`] and [`corpus_bleu`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuConfig {
    /// Highest n-gram order counted (inclusive).
    pub max_n: usize,
    pub smoothing: Smoothing,
    /// Lowercase both strings before tokenization.
    pub lowercase: bool,
    pub tokenizer: Tokenizer,
}

impl BleuConfig {
    /// Plain BLEU: 4-grams, add-one smoothing, case-sensitive.
    pub fn bleu() -> Self {
        BleuConfig {
            max_n: 4,
            smoothing: Smoothing::LinOchAddOne,
            lowercase: false,
            tokenizer: Tokenizer::Whitespace,
        }
    }

    /// B-Norm: BLEU over lowercased inputs.
    pub fn b_norm() -> Self {
        BleuConfig {
            lowercase: true,
            ..Self::bleu()
        }
    }

    /// B-Moses: no smoothing, case-sensitive.
    pub fn b_moses() -> Self {
        BleuConfig {
            smoothing: Smoothing::None,
            ..Self::bleu()
        }
    }
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self::bleu()
    }
}

/// Proportion of answers byte-identical to their references.
///
/// No normalization is applied; `"orang"` vs `"orange"` scores the same as
/// any other miss.
pub fn exact_match(answers: &[&str], references: &[&str]) -> Result<Score, MetricError> {
    check_pairs(answers, references)?;
    let hits = answers
        .iter()
        .zip(references)
        .filter(|(a, r)| a == r)
        .count();
    Ok(Score::new(hits as f64 / answers.len() as f64))
}

/// Sentence-level BLEU for one candidate/reference pair.
pub fn bleu(candidate: &str, reference: &str, config: &BleuConfig) -> Score {
    let mut counts = NgramCounts::new(config.max_n);
    counts.accumulate(candidate, reference, config);
    counts.score(config)
}

/// Corpus-level BLEU: clipped match/total counts and lengths are summed
/// over all pairs before precisions and the brevity penalty are computed.
/// This is not a mean of sentence scores.
pub fn corpus_bleu(
    answers: &[&str],
    references: &[&str],
    config: &BleuConfig,
) -> Result<Score, MetricError> {
    check_pairs(answers, references)?;
    let mut counts = NgramCounts::new(config.max_n);
    for (candidate, reference) in answers.iter().zip(references) {
        counts.accumulate(candidate, reference, config);
    }
    Ok(counts.score(config))
}

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }

    // Two-row DP over the shorter string.
    let (long, short) = if a.len() >= b.len() { (&a, &b) } else { (&b, &a) };
    let mut row: Vec<usize> = (0..=short.len()).collect();
    for (i, &cl) in long.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, &cs) in short.iter().enumerate() {
            let cost = if cl == cs { 0 } else { 1 };
            let next = (diag + cost).min(row[j] + 1).min(row[j + 1] + 1);
            diag = row[j + 1];
            row[j + 1] = next;
        }
    }
    row[short.len()]
}

fn check_pairs(answers: &[&str], references: &[&str]) -> Result<(), MetricError> {
    if answers.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            answers: answers.len(),
            references: references.len(),
        });
    }
    if answers.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    Ok(())
}

/// Clipped n-gram match and total counts plus candidate/reference lengths,
/// accumulated over one or more pairs. Integer counts keep aggregation
/// deterministic regardless of pair order.
pub(crate) struct NgramCounts {
    max_n: usize,
    /// (clipped matches, candidate n-gram total) per order, index 0 = unigrams.
    pub(crate) per_order: Vec<(u64, u64)>,
    pub(crate) candidate_len: u64,
    pub(crate) reference_len: u64,
}

impl NgramCounts {
    pub(crate) fn new(max_n: usize) -> Self {
        NgramCounts {
            max_n,
            per_order: vec![(0, 0); max_n],
            candidate_len: 0,
            reference_len: 0,
        }
    }

    pub(crate) fn accumulate(&mut self, candidate: &str, reference: &str, config: &BleuConfig) {
        if reference.split_whitespace().next().is_none() {
            log::warn!("empty reference scored against candidate {candidate:?}; pair grades 0");
        }
        let (cand, refr) = lowercased(candidate, reference, config);
        let cand_tokens: Vec<&str> = cand.split_whitespace().collect();
        let ref_tokens: Vec<&str> = refr.split_whitespace().collect();
        self.candidate_len += cand_tokens.len() as u64;
        self.reference_len += ref_tokens.len() as u64;
        for n in 1..=self.max_n {
            let (matches, total) = clipped_matches(&cand_tokens, &ref_tokens, n);
            let entry = &mut self.per_order[n - 1];
            entry.0 += matches;
            entry.1 += total;
        }
    }

    pub(crate) fn score(&self, config: &BleuConfig) -> Score {
        if self.candidate_len == 0 {
            return Score::new(0.0);
        }
        let mut log_sum = 0.0;
        for (i, &(matches, total)) in self.per_order.iter().enumerate() {
            let n = i + 1;
            let precision = match config.smoothing {
                Smoothing::LinOchAddOne if n >= 2 => {
                    (matches as f64 + 1.0) / (total as f64 + 1.0)
                }
                _ => {
                    if total == 0 || matches == 0 {
                        return Score::new(0.0);
                    }
                    matches as f64 / total as f64
                }
            };
            if precision <= 0.0 {
                return Score::new(0.0);
            }
            log_sum += precision.ln();
        }
        let geo_mean = (log_sum / self.max_n as f64).exp();
        Score::new(self.brevity_penalty() * geo_mean)
    }

    pub(crate) fn brevity_penalty(&self) -> f64 {
        if self.candidate_len >= self.reference_len {
            1.0
        } else {
            (1.0 - self.reference_len as f64 / self.candidate_len as f64).exp()
        }
    }
}

fn lowercased(candidate: &str, reference: &str, config: &BleuConfig) -> (String, String) {
    if config.lowercase {
        (candidate.to_lowercase(), reference.to_lowercase())
    } else {
        (candidate.to_string(), reference.to_string())
    }
}

/// Clipped match count and candidate total for one n-gram order.
fn clipped_matches(cand_tokens: &[&str], ref_tokens: &[&str], n: usize) -> (u64, u64) {
    let cand_counts = ngram_counts(cand_tokens, n);
    let ref_counts = ngram_counts(ref_tokens, n);
    let mut matches = 0u64;
    let mut total = 0u64;
    for (gram, &count) in &cand_counts {
        total += count;
        if let Some(&ref_count) = ref_counts.get(gram) {
            matches += count.min(ref_count);
        }
    }
    (matches, total)
}

fn ngram_counts<'a>(tokens: &[&'a str], n: usize) -> indexmap::IndexMap<Vec<&'a str>, u64> {
    let mut counts = indexmap::IndexMap::new();
    if tokens.len() >= n && n > 0 {
        for window in tokens.windows(n) {
            *counts.entry(window.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}
