//! Threshold calibration: generates synthetic smooth and emergent scale
//! series and selects the regression threshold `t` that separates the two
//! classes.
//!
//! Calibration is pre-registered: the chosen threshold is written to a
//! JSON artifact (with the suite, per-series deviation values, and a suite
//! hash), and assessment refuses a different threshold unless the caller
//! explicitly acknowledges a post-hoc choice.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regression::{assess, AssessConventions, RegressionError, ScaleSeries, REFERENCE_SCALES};

#[derive(Debug, Error)]
pub enum CalibrateError {
    #[error("invalid curve spec: {0}")]
    InvalidSpec(String),
    #[error("both calibration classes need at least one series")]
    EmptyClass,
    #[error("regression failed on a calibration series: {0}")]
    Regression(#[from] RegressionError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed calibration artifact: {0}")]
    Malformed(String),
}

/// Shape of one synthetic curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurveKind {
    /// y = intercept + slope * x + Gaussian noise, clipped to [0, 1].
    SmoothLinear {
        intercept: f64,
        slope: f64,
        noise_sd: f64,
    },
    /// y = low below the breakpoint scale, high at or above it.
    EmergentStep { low: f64, high: f64, breakpoint: f64 },
    /// Logistic ramp from low to high centered at the breakpoint.
    EmergentSigmoid {
        low: f64,
        high: f64,
        breakpoint: f64,
        steepness: f64,
    },
}

/// A seeded synthetic curve over a set of scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    pub kind: CurveKind,
    pub scales: Vec<f64>,
    pub seed: u64,
}

/// Generates the series for a spec. Deterministic per seed; all values are
/// clipped to [0, 1].
pub fn generate(spec: &CurveSpec) -> Result<ScaleSeries, CalibrateError> {
    if spec.scales.len() < 2 {
        return Err(CalibrateError::InvalidSpec(
            "at least 2 scales required".into(),
        ));
    }
    let y: Vec<f64> = match &spec.kind {
        CurveKind::SmoothLinear {
            intercept,
            slope,
            noise_sd,
        } => {
            if *noise_sd < 0.0 {
                return Err(CalibrateError::InvalidSpec(
                    "noise standard deviation must be >= 0".into(),
                ));
            }
            let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
            let noise = Normal::new(0.0, noise_sd.max(f64::MIN_POSITIVE))
                .map_err(|e| CalibrateError::InvalidSpec(e.to_string()))?;
            spec.scales
                .iter()
                .map(|x| {
                    let eps = if *noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    (intercept + slope * x + eps).clamp(0.0, 1.0)
                })
                .collect()
        }
        CurveKind::EmergentStep { low, high, breakpoint } => spec
            .scales
            .iter()
            .map(|x| if x < breakpoint { *low } else { *high }.clamp(0.0, 1.0))
            .collect(),
        CurveKind::EmergentSigmoid {
            low,
            high,
            breakpoint,
            steepness,
        } => {
            if *steepness <= 0.0 {
                return Err(CalibrateError::InvalidSpec(
                    "sigmoid steepness must be positive".into(),
                ));
            }
            spec.scales
                .iter()
                .map(|x| {
                    let logistic = 1.0 / (1.0 + (-steepness * (x - breakpoint)).exp());
                    (low + (high - low) * logistic).clamp(0.0, 1.0)
                })
                .collect()
        }
    };
    ScaleSeries::new(spec.scales.clone(), y).map_err(CalibrateError::from)
}

/// Deviation value used for calibration and classification: the larger of
/// the two regression deviations, matching the decision rule (emergent
/// when either exceeds the threshold).
pub fn deviation(series: &ScaleSeries, conventions: AssessConventions) -> Result<f64, CalibrateError> {
    // The threshold is irrelevant to the p values; any valid placeholder works.
    let report = assess(series, 0.5, conventions)?;
    Ok(report.p_rmsd.max(report.p_mae))
}

/// Outcome of threshold selection over the two classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub threshold: f64,
    /// Deviation values for the smooth class, input order.
    pub smooth_p: Vec<f64>,
    /// Deviation values for the emergent class, input order.
    pub emergent_p: Vec<f64>,
    pub misclassified: usize,
    pub separable: bool,
}

/// Chooses `t` separating smooth from emergent deviation values: the
/// midpoint between the classes when they separate cleanly, otherwise the
/// misclassification-minimizing candidate (midpoints between adjacent
/// pooled values, ties broken toward the larger t).
pub fn select_threshold(
    smooth: &[ScaleSeries],
    emergent: &[ScaleSeries],
    conventions: AssessConventions,
) -> Result<SeparationReport, CalibrateError> {
    if smooth.is_empty() || emergent.is_empty() {
        return Err(CalibrateError::EmptyClass);
    }
    let smooth_p: Vec<f64> = smooth
        .iter()
        .map(|s| deviation(s, conventions))
        .collect::<Result<_, _>>()?;
    let emergent_p: Vec<f64> = emergent
        .iter()
        .map(|s| deviation(s, conventions))
        .collect::<Result<_, _>>()?;

    let max_smooth = smooth_p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_emergent = emergent_p.iter().cloned().fold(f64::INFINITY, f64::min);

    let (threshold, misclassified, separable) = if max_smooth < min_emergent {
        ((max_smooth + min_emergent) / 2.0, 0, true)
    } else {
        // Sweep candidate thresholds at midpoints of adjacent distinct
        // pooled values; a series is misclassified when a smooth p exceeds
        // t or an emergent p fails to.
        let mut pooled: Vec<f64> = smooth_p.iter().chain(&emergent_p).cloned().collect();
        pooled.sort_by(f64::total_cmp);
        pooled.dedup();
        let candidates: Vec<f64> = pooled.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
        let count = |t: f64| {
            smooth_p.iter().filter(|&&p| p > t).count()
                + emergent_p.iter().filter(|&&p| p <= t).count()
        };
        let mut best_t = candidates[0];
        let mut best_count = count(best_t);
        for &candidate in &candidates[1..] {
            let c = count(candidate);
            // Ties break toward the larger threshold.
            if c <= best_count {
                best_t = candidate;
                best_count = c;
            }
        }
        (best_t, best_count, false)
    };

    Ok(SeparationReport {
        threshold,
        smooth_p,
        emergent_p,
        misclassified,
        separable,
    })
}

/// The frozen default calibration suite: 20 smooth and 20 emergent seeded
/// curves over the four reference scales. Smooth curves are shallow lines
/// with light noise; emergent curves are steps and steep sigmoids with
/// jumps of 0.5 or more.
pub fn default_suite() -> (Vec<CurveSpec>, Vec<CurveSpec>) {
    let scales = REFERENCE_SCALES.to_vec();
    let mut smooth = Vec::with_capacity(20);
    for i in 0..20u64 {
        let slope = 0.004 + 0.002 * (i % 10) as f64; // 0.004 .. 0.022
        let intercept = 0.08 + 0.01 * (i % 5) as f64; // 0.08 .. 0.12
        let noise_sd = match i % 4 {
            0 => 0.0,
            1 => 0.005,
            2 => 0.010,
            _ => 0.015,
        };
        smooth.push(CurveSpec {
            kind: CurveKind::SmoothLinear { intercept, slope, noise_sd },
            scales: scales.clone(),
            seed: 1000 + i,
        });
    }

    let mut emergent = Vec::with_capacity(20);
    for i in 0..20u64 {
        let jump = 0.5 + 0.02 * (i % 10) as f64; // 0.5 .. 0.68
        let low = 0.05 + 0.01 * (i % 3) as f64;
        let spec = if i % 2 == 0 {
            // Breakpoints alternate between the two upper gaps; later
            // breakpoints concentrate the jump in the last point, so they
            // get the larger jumps.
            let breakpoint = if i % 4 == 0 { 4.0 } else { 10.0 };
            let jump = if breakpoint > 6.0 { jump + 0.2 } else { jump };
            CurveKind::EmergentStep { low, high: low + jump, breakpoint }
        } else {
            // Late-breakpoint sigmoids concentrate their rise in the last
            // point, so they carry larger jumps, like the late steps.
            let (breakpoint, extra) = if i % 4 == 1 { (4.5, 0.15) } else { (9.0, 0.25) };
            CurveKind::EmergentSigmoid {
                low,
                high: low + jump + extra,
                breakpoint,
                steepness: 2.0 + (i % 3) as f64,
            }
        };
        emergent.push(CurveSpec {
            kind: spec,
            scales: scales.clone(),
            seed: 2000 + i,
        });
    }
    (smooth, emergent)
}

/// Pre-registered calibration result: suite, per-series deviations, chosen
/// threshold, conventions, and a hash binding them together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationArtifact {
    pub tool_version: String,
    pub conventions: AssessConventions,
    pub smooth_specs: Vec<CurveSpec>,
    pub emergent_specs: Vec<CurveSpec>,
    pub report: SeparationReport,
    /// sha256 over the canonical JSON of both spec lists and conventions.
    pub suite_hash: String,
}

/// Runs threshold selection over a suite and packages the artifact.
pub fn calibrate(
    smooth_specs: Vec<CurveSpec>,
    emergent_specs: Vec<CurveSpec>,
    conventions: AssessConventions,
) -> Result<CalibrationArtifact, CalibrateError> {
    let smooth: Vec<ScaleSeries> = smooth_specs
        .iter()
        .map(generate)
        .collect::<Result<_, _>>()?;
    let emergent: Vec<ScaleSeries> = emergent_specs
        .iter()
        .map(generate)
        .collect::<Result<_, _>>()?;
    let report = select_threshold(&smooth, &emergent, conventions)?;
    let suite_hash = suite_hash(&smooth_specs, &emergent_specs, &conventions);
    Ok(CalibrationArtifact {
        tool_version: crate::VERSION.to_string(),
        conventions,
        smooth_specs,
        emergent_specs,
        report,
        suite_hash,
    })
}

fn suite_hash(
    smooth: &[CurveSpec],
    emergent: &[CurveSpec],
    conventions: &AssessConventions,
) -> String {
    use sha2::{Digest, Sha256};
    let canonical = serde_json::to_string(&(smooth, emergent, conventions))
        .expect("specs serialize");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_artifact(path: impl AsRef<Path>, artifact: &CalibrationArtifact) -> Result<(), CalibrateError> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(artifact).expect("artifact serializes");
    fs::write(path, json + "\n").map_err(|e| CalibrateError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_artifact(path: impl AsRef<Path>) -> Result<CalibrationArtifact, CalibrateError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CalibrateError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| CalibrateError::Malformed(e.to_string()))
}
