//! Placeholder-substitution perturbations and robustness analysis.
//!
//! Corpus fragments use normalized placeholders (`TYPE_1`, `VAR_2`,
//! `STRING_0`, ...). A perturbation rule swaps every occurrence of a
//! matched placeholder class for concrete lexemes drawn from a word pool,
//! consistently within a case and in both the source and the reference.
//! Robustness is then the relationship between the edit distance of the
//! perturbation and the per-case score change.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::TestCase;
use crate::metrics::levenshtein;

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("invalid placeholder pattern {pattern:?}: {message}")]
    BadPattern { pattern: String, message: String },
    #[error(
        "pool for pattern {pattern:?} has {pool} entries but case {case:?} needs {needed} distinct replacements"
    )]
    PoolExhausted {
        pattern: String,
        pool: usize,
        needed: usize,
        case: String,
    },
    #[error("no perturbation pairs to analyze")]
    EmptyInput,
    #[error("io error on pool file {path}: {source}")]
    PoolIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One placeholder class: a whole-token pattern plus the replacement pool
/// it draws from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbationRule {
    /// Regex matched against entire whitespace tokens, e.g. `STRING_\d+`.
    pub placeholder_pattern: String,
    /// Concrete lexemes, each syntactically valid for the class (string
    /// literals quoted, identifiers lexically valid).
    pub replacement_pool: Vec<String>,
    pub seed: u64,
}

impl PerturbationRule {
    /// Rule for a standard placeholder class (`TYPE`, `VAR`, `METHOD`,
    /// `STRING`, `INT`), matching tokens like `VAR_3`.
    pub fn for_class(class: &str, replacement_pool: Vec<String>, seed: u64) -> Self {
        PerturbationRule {
            placeholder_pattern: format!("{class}_\\d+"),
            replacement_pool,
            seed,
        }
    }

    fn compile(&self) -> Result<Regex, PerturbError> {
        Regex::new(&format!("^(?:{})$", self.placeholder_pattern)).map_err(|e| {
            PerturbError::BadPattern {
                pattern: self.placeholder_pattern.clone(),
                message: e.to_string(),
            }
        })
    }
}

/// A perturbed case paired with what changed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerturbOutcome {
    pub case: TestCase,
    /// Distinct placeholders replaced. Zero means the case came through
    /// unchanged.
    pub substitutions: usize,
}

/// Replaces every matched placeholder consistently in both source and
/// reference: the same placeholder always maps to the same replacement,
/// distinct placeholders of one class never collide, and the mapping is
/// deterministic per (rule seed, case id). A case without placeholders is
/// returned unchanged with a warning.
pub fn perturb_case(
    case: &TestCase,
    rules: &[PerturbationRule],
) -> Result<PerturbOutcome, PerturbError> {
    let mut source_tokens: Vec<String> =
        case.source.split_whitespace().map(str::to_string).collect();
    let mut reference_tokens: Vec<String> =
        case.reference.split_whitespace().map(str::to_string).collect();
    let mut substitutions = 0;

    for rule in rules {
        // An empty pool makes the rule a no-op: the case passes through
        // untouched for that class.
        if rule.replacement_pool.is_empty() {
            continue;
        }
        let pattern = rule.compile()?;
        // Distinct placeholders in first-occurrence order, source first so
        // the mapping is stable however the reference overlaps.
        let mut placeholders: IndexMap<String, ()> = IndexMap::new();
        for token in source_tokens.iter().chain(reference_tokens.iter()) {
            if pattern.is_match(token) {
                placeholders.entry(token.clone()).or_insert(());
            }
        }
        if placeholders.is_empty() {
            continue;
        }
        if placeholders.len() > rule.replacement_pool.len() {
            return Err(PerturbError::PoolExhausted {
                pattern: rule.placeholder_pattern.clone(),
                pool: rule.replacement_pool.len(),
                needed: placeholders.len(),
                case: case.id.clone(),
            });
        }

        let mut pool = rule.replacement_pool.clone();
        shuffle(&mut pool, rule.seed, &case.id, &rule.placeholder_pattern);
        let mapping: BTreeMap<&str, &str> = placeholders
            .keys()
            .zip(&pool)
            .map(|(ph, repl)| (ph.as_str(), repl.as_str()))
            .collect();
        substitutions += mapping.len();
        for token in source_tokens.iter_mut().chain(reference_tokens.iter_mut()) {
            if let Some(replacement) = mapping.get(token.as_str()) {
                *token = replacement.to_string();
            }
        }
    }

    if substitutions == 0 {
        log::warn!("case {:?}: no placeholders found; emitted unchanged", case.id);
        return Ok(PerturbOutcome {
            case: TestCase {
                perturbation_of: Some(case.id.clone()),
                ..case.clone()
            },
            substitutions: 0,
        });
    }

    Ok(PerturbOutcome {
        case: TestCase {
            id: case.id.clone(),
            source: source_tokens.join(" "),
            reference: reference_tokens.join(" "),
            perturbation_of: Some(case.id.clone()),
        },
        substitutions,
    })
}

/// Fisher-Yates driven by ChaCha20 keyed on sha256(seed, case id, pattern),
/// so each (rule, case) pair shuffles independently and reproducibly.
fn shuffle(pool: &mut [String], seed: u64, case_id: &str, pattern: &str) {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(case_id.as_bytes());
    hasher.update([0u8]);
    hasher.update(pattern.as_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha20Rng::from_seed(key);
    for i in (1..pool.len()).rev() {
        let j = rand::Rng::random_range(&mut rng, 0..=i);
        pool.swap(i, j);
    }
}

/// The standard placeholder classes and their pool file names.
const POOL_FILES: [(&str, &str); 5] = [
    ("TYPE", "types.txt"),
    ("VAR", "variables.txt"),
    ("METHOD", "methods.txt"),
    ("STRING", "strings.txt"),
    ("INT", "integers.txt"),
];

fn parse_pool(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// Rules for the standard classes backed by the built-in word pools.
pub fn default_rules(seed: u64) -> Vec<PerturbationRule> {
    let builtin: [(&str, &str); 5] = [
        ("TYPE", include_str!("../../../data/pools/types.txt")),
        ("VAR", include_str!("../../../data/pools/variables.txt")),
        ("METHOD", include_str!("../../../data/pools/methods.txt")),
        ("STRING", include_str!("../../../data/pools/strings.txt")),
        ("INT", include_str!("../../../data/pools/integers.txt")),
    ];
    builtin
        .iter()
        .map(|(class, text)| PerturbationRule::for_class(class, parse_pool(text), seed))
        .collect()
}

/// Rules for the standard classes loaded from editable pool files in a
/// directory (`types.txt`, `variables.txt`, `methods.txt`, `strings.txt`,
/// `integers.txt`). A missing file skips its class.
pub fn load_pools(dir: &std::path::Path, seed: u64) -> Result<Vec<PerturbationRule>, PerturbError> {
    let mut rules = Vec::new();
    for (class, file) in POOL_FILES {
        let path = dir.join(file);
        if !path.exists() {
            log::warn!("pool file {} missing; class {class} left unperturbed", path.display());
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| PerturbError::PoolIo {
            path: path.display().to_string(),
            source: e,
        })?;
        rules.push(PerturbationRule::for_class(class, parse_pool(&text), seed));
    }
    Ok(rules)
}

/// An original case, its perturbed variant, and the per-metric score delta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationPair {
    pub original_id: String,
    pub perturbed_id: String,
    /// Levenshtein distance between the original and perturbed sources.
    pub distance: usize,
    /// Metric name to (perturbed score - original score), per case.
    pub deltas: BTreeMap<String, f64>,
}

impl PerturbationPair {
    pub fn new(
        original: &TestCase,
        perturbed: &TestCase,
        deltas: BTreeMap<String, f64>,
    ) -> Self {
        PerturbationPair {
            original_id: original.id.clone(),
            perturbed_id: perturbed.id.clone(),
            distance: levenshtein(&original.source, &perturbed.source),
            deltas,
        }
    }
}

/// Pearson correlation between perturbation distance and score delta, or a
/// zero-variance flag when it is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Correlation {
    Defined { r: f64 },
    ZeroVariance,
}

/// Scatter points and correlation for one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSeries {
    /// (distance, delta) per pair, in input order.
    pub points: Vec<(usize, f64)>,
    pub correlation: Correlation,
}

/// Scatter dataset per metric: the relationship between edit distance and
/// performance change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub per_metric: BTreeMap<String, RobustnessSeries>,
}

pub fn robustness_analysis(pairs: &[PerturbationPair]) -> Result<RobustnessReport, PerturbError> {
    if pairs.is_empty() {
        return Err(PerturbError::EmptyInput);
    }
    let mut per_metric: BTreeMap<String, RobustnessSeries> = BTreeMap::new();
    let metric_names: Vec<&String> = pairs
        .iter()
        .flat_map(|p| p.deltas.keys())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    for metric in metric_names {
        let points: Vec<(usize, f64)> = pairs
            .iter()
            .filter_map(|p| p.deltas.get(metric).map(|&d| (p.distance, d)))
            .collect();
        let correlation = pearson(&points);
        per_metric.insert(metric.clone(), RobustnessSeries { points, correlation });
    }
    Ok(RobustnessReport { per_metric })
}

fn pearson(points: &[(usize, f64)]) -> Correlation {
    let n = points.len() as f64;
    let x_mean = points.iter().map(|&(d, _)| d as f64).sum::<f64>() / n;
    let y_mean = points.iter().map(|&(_, v)| v).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for &(d, v) in points {
        let dx = d as f64 - x_mean;
        let dy = v - y_mean;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        Correlation::ZeroVariance
    } else {
        Correlation::Defined {
            r: sxy / (sxx.sqrt() * syy.sqrt()),
        }
    }
}
