//! Detects emergent capabilities in families of code-generation models that
//! differ only by scale.
//!
//! The library grades recorded model answers on software-engineering tasks
//! with code-aware metrics (Exact Match, the BLEU family, CodeBLEU), fits a
//! linear growth model of grade versus scale, and classifies each
//! (metric, prompt) pair as Predictable or Emergent by comparing
//! regression-deviation values against a pre-registered threshold.
//!
//! Modules map onto pipeline stages:
//!
//! - [`corpus`] — tasks, model families, prompts, and recorded answers,
//!   plus the on-disk JSONL/JSON formats.
//! - [`metrics`] — Exact Match, BLEU/B-Norm/B-Moses, Levenshtein.
//! - [`codebleu`] — parser-backed CodeBLEU for Java and C#.
//! - [`regression`] — least-squares fit, RMSD/MAE deviation values, verdicts.
//! - [`bootstrap`] — seeded subsample resampling for score spread.
//! - [`perturb`] — placeholder-substitution perturbations and robustness
//!   scatter analysis.
//! - [`calibrate`] — synthetic curve suites and threshold selection.
//! - [`collect`] — prompt rendering, answer extraction, and (behind the
//!   `collect` feature) an HTTP completion client.
//! - [`pipeline`] — grading orchestration and report emission.

pub mod bootstrap;
pub mod calibrate;
pub mod codebleu;
pub mod collect;
pub mod corpus;
pub mod metrics;
pub mod perturb;
pub mod pipeline;
pub mod regression;
pub mod report;

/// Tool version embedded into every emitted report header.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
