//! Least-squares growth model over a scale series and the
//! Predictable/Emergent verdict.
//!
//! A [`ScaleSeries`] pairs model scales (billions of parameters, ascending)
//! with per-scale grades in `[0, 1]`. [`fit_linear`] fits ordinary least
//! squares via the closed-form normal equations; [`rmsd`] and [`mae`] turn
//! the residuals into single deviation values `p`; [`assess`] compares both
//! against a threshold `t` and renders the verdict.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RegressionError {
    #[error("scale series needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("scales must be positive and strictly ascending")]
    BadScales,
    #[error("grade {0} outside [0, 1]")]
    GradeOutOfRange(f64),
    #[error("all scale values are equal; slope is undefined")]
    DegenerateX,
    #[error("y and y_hat differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("threshold must lie in (0, 1), got {0}")]
    BadThreshold(f64),
}

/// Per-scale grades for one (metric, prompt) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSeries {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl ScaleSeries {
    /// Validates length >= 2, strictly ascending positive scales, and
    /// grades within `[0, 1]`.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, RegressionError> {
        if x.len() != y.len() {
            return Err(RegressionError::LengthMismatch(y.len(), x.len()));
        }
        if x.len() < 2 {
            return Err(RegressionError::TooFewPoints(x.len()));
        }
        if x[0] <= 0.0 || x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(RegressionError::BadScales);
        }
        if let Some(&bad) = y.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(RegressionError::GradeOutOfRange(bad));
        }
        Ok(ScaleSeries { x, y })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Ordinary least-squares line with its per-point predictions and residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    /// Predicted grades, aligned with the series scales.
    pub predicted: Vec<f64>,
    /// Observed minus predicted, aligned with the series scales.
    pub residuals: Vec<f64>,
}

/// How the RMSD deviation value is computed from residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmsdConvention {
    /// sqrt(mean(residual^2)). Consistent with every published RMSD/MAE
    /// report pair this tool mirrors, and the default.
    #[default]
    Standard,
    /// sqrt(sum(residual^2)) / n, i.e. the 1/n factor applied outside the
    /// square root. Selectable for strict replication of the formula as
    /// typeset; always <= MAE, so it renders stricter thresholds moot.
    AsPrintedEq1,
}

/// Two-state verdict from the decision rule (either deviation exceeds t).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Predictable,
    Emergent,
}

/// Three-state summary: Inconclusive when exactly one of the two deviation
/// values exceeds the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Predictable,
    Inconclusive,
    Emergent,
}

/// Direction of an emergent deviation, keyed off the residual at the
/// largest scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Positive,
    Negative,
    NotApplicable,
}

/// Conventions applied by [`assess`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AssessConventions {
    pub rmsd: RmsdConvention,
    /// Fit against ln(scale) instead of raw scale. Off by default; the
    /// growth model is linear in parameter count.
    #[serde(default)]
    pub log_x: bool,
}

/// Everything [`assess`] derives from one scale series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub fit: LinearFit,
    pub p_rmsd: f64,
    pub p_mae: f64,
    pub threshold: f64,
    pub verdict: Verdict,
    pub outcome: Outcome,
    pub direction: Direction,
    pub rmsd_convention: RmsdConvention,
}

/// Closed-form ordinary least squares of grade against scale.
pub fn fit_linear(series: &ScaleSeries) -> Result<LinearFit, RegressionError> {
    fit_linear_xy(series.x(), series.y())
}

fn fit_linear_xy(x: &[f64], y: &[f64]) -> Result<LinearFit, RegressionError> {
    let n = x.len() as f64;
    let x_mean = x.iter().sum::<f64>() / n;
    let y_mean = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - x_mean).powi(2)).sum();
    if sxx == 0.0 {
        return Err(RegressionError::DegenerateX);
    }
    let sxy: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - x_mean) * (b - y_mean))
        .sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let predicted: Vec<f64> = x.iter().map(|v| intercept + slope * v).collect();
    let residuals: Vec<f64> = y.iter().zip(&predicted).map(|(o, p)| o - p).collect();
    Ok(LinearFit {
        intercept,
        slope,
        predicted,
        residuals,
    })
}

/// Root-mean-square deviation of observations from predictions, under the
/// chosen convention.
pub fn rmsd(y: &[f64], y_hat: &[f64], convention: RmsdConvention) -> Result<f64, RegressionError> {
    if y.len() != y_hat.len() {
        return Err(RegressionError::LengthMismatch(y.len(), y_hat.len()));
    }
    if y.is_empty() {
        return Err(RegressionError::TooFewPoints(0));
    }
    let n = y.len() as f64;
    let sum_sq: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(match convention {
        RmsdConvention::Standard => (sum_sq / n).sqrt(),
        RmsdConvention::AsPrintedEq1 => sum_sq.sqrt() / n,
    })
}

/// Mean absolute error of observations from predictions.
pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64, RegressionError> {
    if y.len() != y_hat.len() {
        return Err(RegressionError::LengthMismatch(y.len(), y_hat.len()));
    }
    if y.is_empty() {
        return Err(RegressionError::TooFewPoints(0));
    }
    let sum: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / y.len() as f64)
}

/// Fits the growth model, computes both deviation values, and applies the
/// decision rule: Emergent when either p exceeds `t`.
///
/// Direction is Negative when the observed grade at the largest scale falls
/// below its predicted value (a decline at scale), Positive otherwise, and
/// NotApplicable for Predictable verdicts.
pub fn assess(
    series: &ScaleSeries,
    threshold: f64,
    conventions: AssessConventions,
) -> Result<RegressionReport, RegressionError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(RegressionError::BadThreshold(threshold));
    }
    let fit = if conventions.log_x {
        let ln_x: Vec<f64> = series.x().iter().map(|v| v.ln()).collect();
        fit_linear_xy(&ln_x, series.y())?
    } else {
        fit_linear(series)?
    };
    let p_rmsd = rmsd(series.y(), &fit.predicted, conventions.rmsd)?;
    let p_mae = mae(series.y(), &fit.predicted)?;

    let rmsd_exceeds = p_rmsd > threshold;
    let mae_exceeds = p_mae > threshold;
    let verdict = if rmsd_exceeds || mae_exceeds {
        Verdict::Emergent
    } else {
        Verdict::Predictable
    };
    let outcome = match (rmsd_exceeds, mae_exceeds) {
        (true, true) => Outcome::Emergent,
        (false, false) => Outcome::Predictable,
        _ => Outcome::Inconclusive,
    };
    let direction = match verdict {
        Verdict::Predictable => Direction::NotApplicable,
        Verdict::Emergent => {
            if *fit.residuals.last().expect("non-empty series") < 0.0 {
                Direction::Negative
            } else {
                Direction::Positive
            }
        }
    };
    Ok(RegressionReport {
        fit,
        p_rmsd,
        p_mae,
        threshold,
        verdict,
        outcome,
        direction,
        rmsd_convention: conventions.rmsd,
    })
}

/// The four scales of the worked bug-fixing example, in billions of
/// parameters. Used by the calibration suite and tests.
pub const REFERENCE_SCALES: [f64; 4] = [0.35, 2.7, 6.1, 16.1];
