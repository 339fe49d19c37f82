//! End-to-end orchestration: grading, assessment, bootstrap, perturbation
//! analysis, and report bundle emission.
//!
//! Stages communicate only through the declared file formats, so each CLI
//! subcommand can re-run one stage independently. A full [`run_pipeline`]
//! invocation writes, under the output directory:
//!
//! - `reports.csv` — one row per (metric, prompt) with RMSD, MAE, and
//!   verdicts, values to four decimals, threshold exceedances flagged;
//! - `summary.json` — every configuration choice, seed, convention, grade
//!   series, and verdict, keyed by a content hash of the inputs;
//! - `grades.csv` — the per-scale grade series feeding the regressions;
//! - `plot_<metric>_<prompt>.svg` — grade-versus-scale line plots;
//! - `bootstrap.csv`, `perturbation.csv` — when those stages are enabled.
//!
//! Identical inputs and seeds produce byte-identical CSV/JSON regardless
//! of thread count. Partial outputs are removed when any stage fails.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bootstrap::{bootstrap_scores, BootstrapConfig, BootstrapError, GENERATOR_NAME};
use crate::calibrate::{load_artifact, CalibrateError};
use crate::codebleu::{codebleu, corpus_codebleu, CodeBleuConfig, CodeBleuError, Language};
use crate::corpus::{
    load_family, load_prompts, load_runs, load_task, CorpusError, ModelFamily, RunSet, Task,
    TargetLanguage,
};
use crate::metrics::{bleu, corpus_bleu, exact_match, BleuConfig, MetricError};
use crate::perturb::{
    robustness_analysis, Correlation, PerturbError, PerturbationPair, RobustnessReport,
};
use crate::regression::{
    assess, AssessConventions, Direction, Outcome, RegressionError, RegressionReport, ScaleSeries,
    Verdict,
};
use crate::report::{
    slug, svg_line_plot, write_csv, FileHeader, OutputTracker, PlotSeries,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("corpus stage: {0}")]
    Corpus(#[from] CorpusError),
    #[error("metrics stage: {0}")]
    Metric(#[from] MetricError),
    #[error("codebleu stage: {0}")]
    CodeBleu(#[from] CodeBleuError),
    #[error("regression stage: {0}")]
    Regression(#[from] RegressionError),
    #[error("bootstrap stage: {0}")]
    Bootstrap(#[from] BootstrapError),
    #[error("perturbation stage: {0}")]
    Perturb(#[from] PerturbError),
    #[error("calibration stage: {0}")]
    Calibrate(#[from] CalibrateError),
    #[error("config: {0}")]
    Config(String),
    #[error("report stage: io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("metric {metric} is not applicable to a task targeting {target:?}")]
    MetricNotApplicable {
        metric: &'static str,
        target: TargetLanguage,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Grading metric selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    #[serde(rename = "em")]
    ExactMatch,
    Bleu,
    BNorm,
    BMoses,
    Codebleu,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        MetricKind::ExactMatch,
        MetricKind::Bleu,
        MetricKind::BNorm,
        MetricKind::BMoses,
        MetricKind::Codebleu,
    ];

    /// Display name used in report tables.
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::ExactMatch => "EM",
            MetricKind::Bleu => "BLEU",
            MetricKind::BNorm => "B-Norm",
            MetricKind::BMoses => "B-Moses",
            MetricKind::Codebleu => "CodeBLEU",
        }
    }

    /// Display name qualified by the task's target language, mirroring
    /// table captions like "CodeBLEU (Java)".
    pub fn display_name(self, target: TargetLanguage) -> String {
        match self {
            MetricKind::Codebleu => match target {
                TargetLanguage::Java => "CodeBLEU (Java)".to_string(),
                TargetLanguage::CSharp => "CodeBLEU (C#)".to_string(),
                TargetLanguage::Text => "CodeBLEU".to_string(),
            },
            other => other.name().to_string(),
        }
    }

    pub fn parse(raw: &str) -> Option<MetricKind> {
        match raw.to_ascii_lowercase().as_str() {
            "em" | "exact-match" | "exact_match" => Some(MetricKind::ExactMatch),
            "bleu" => Some(MetricKind::Bleu),
            "b-norm" | "bnorm" => Some(MetricKind::BNorm),
            "b-moses" | "bmoses" => Some(MetricKind::BMoses),
            "codebleu" => Some(MetricKind::Codebleu),
            _ => None,
        }
    }

    fn codebleu_language(target: TargetLanguage) -> Result<Language, PipelineError> {
        match target {
            TargetLanguage::Java => Ok(Language::Java),
            TargetLanguage::CSharp => Ok(Language::CSharp),
            TargetLanguage::Text => Err(PipelineError::MetricNotApplicable {
                metric: "CodeBLEU",
                target: TargetLanguage::Text,
            }),
        }
    }
}

/// Corpus-level grade for one (metric, answers) slice.
pub fn corpus_score(
    metric: MetricKind,
    answers: &[&str],
    references: &[&str],
    target: TargetLanguage,
) -> Result<f64, PipelineError> {
    Ok(match metric {
        MetricKind::ExactMatch => exact_match(answers, references)?.value(),
        MetricKind::Bleu => corpus_bleu(answers, references, &BleuConfig::bleu())?.value(),
        MetricKind::BNorm => corpus_bleu(answers, references, &BleuConfig::b_norm())?.value(),
        MetricKind::BMoses => corpus_bleu(answers, references, &BleuConfig::b_moses())?.value(),
        MetricKind::Codebleu => {
            let language = MetricKind::codebleu_language(target)?;
            let config = CodeBleuConfig::new(language);
            corpus_codebleu(answers, references, &config)?.total
        }
    })
}

/// Per-case grades (sentence-level scores; EM per case is 0 or 1),
/// aligned with the input order.
pub fn case_scores(
    metric: MetricKind,
    answers: &[&str],
    references: &[&str],
    target: TargetLanguage,
) -> Result<Vec<f64>, PipelineError> {
    if answers.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            answers: answers.len(),
            references: references.len(),
        }
        .into());
    }
    let score_one = |pair: (&&str, &&str)| -> Result<f64, PipelineError> {
        let (answer, reference) = pair;
        Ok(match metric {
            MetricKind::ExactMatch => (answer == reference) as u8 as f64,
            MetricKind::Bleu => bleu(answer, reference, &BleuConfig::bleu()).value(),
            MetricKind::BNorm => bleu(answer, reference, &BleuConfig::b_norm()).value(),
            MetricKind::BMoses => bleu(answer, reference, &BleuConfig::b_moses()).value(),
            MetricKind::Codebleu => {
                let language = MetricKind::codebleu_language(target)?;
                codebleu(answer, reference, &CodeBleuConfig::new(language))?.total
            }
        })
    };
    answers
        .par_iter()
        .zip(references.par_iter())
        .map(score_one)
        .collect()
}

/// Grade series over all family scales for one (metric, prompt).
pub fn grade_series(
    task: &Task,
    family: &ModelFamily,
    runs: &RunSet,
    metric: MetricKind,
    prompt_id: &str,
) -> Result<ScaleSeries, PipelineError> {
    let references = task.references();
    let mut x = Vec::with_capacity(family.scales.len());
    let mut y = Vec::with_capacity(family.scales.len());
    for scale in &family.scales {
        // A scale absent from the runs file entirely is an incomplete
        // matrix the same way a partially covered one is.
        let answers = runs.answers(task, &scale.label, prompt_id).ok_or_else(|| {
            CorpusError::IncompleteMatrix {
                scale: scale.label.clone(),
                prompt: prompt_id.to_string(),
                missing: task.cases().len(),
            }
        })?;
        x.push(scale.parameters_billions);
        y.push(corpus_score(metric, &answers, &references, task.target_language)?);
    }
    Ok(ScaleSeries::new(x, y)?)
}

/// Perturbation analysis inputs: a perturbed task with its own runs file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbStage {
    pub perturbed_task: PathBuf,
    pub perturbed_runs: PathBuf,
}

/// Full pipeline configuration; loadable from a JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub task: PathBuf,
    pub family: PathBuf,
    #[serde(default)]
    pub prompts: Vec<PathBuf>,
    pub runs: PathBuf,
    pub metrics: Vec<MetricKind>,
    /// Explicit regression threshold; mutually exclusive with
    /// `calibration` unless they agree or `allow_posthoc_threshold` is set.
    #[serde(default)]
    pub threshold: Option<f64>,
    /// Path to a pre-registered calibration artifact supplying t.
    #[serde(default)]
    pub calibration: Option<PathBuf>,
    #[serde(default)]
    pub allow_posthoc_threshold: bool,
    #[serde(default)]
    pub conventions: AssessConventions,
    #[serde(default)]
    pub bootstrap: Option<BootstrapConfig>,
    #[serde(default)]
    pub perturb: Option<PerturbStage>,
    pub out_dir: PathBuf,
    /// Worker threads for scoring stages; 0 uses the process default.
    /// Never affects output bytes.
    #[serde(default)]
    pub threads: usize,
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        if config.metrics.is_empty() {
            return Err(PipelineError::Config("at least one metric required".into()));
        }
        Ok(config)
    }
}

/// Where the effective threshold came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    Explicit,
    Calibration,
    /// Explicit value overriding a disagreeing calibration artifact; the
    /// post-hoc choice is acknowledged and echoed here.
    PosthocOverride,
}

/// One row of the regression report table.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub metric: String,
    pub prompt: String,
    pub rmsd: f64,
    pub mae: f64,
    pub rmsd_exceeds: bool,
    pub mae_exceeds: bool,
    pub verdict: Verdict,
    pub outcome: Outcome,
    pub direction: Direction,
    pub grades: Vec<f64>,
    pub intercept: f64,
    pub slope: f64,
}

/// Robustness correlation summary per metric.
#[derive(Debug, Clone, Serialize)]
pub struct RobustnessSummary {
    pub metric: String,
    pub pairs: usize,
    pub correlation: Correlation,
}

/// Machine-readable run summary; the `summary.json` payload.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineSummary {
    pub tool_version: String,
    /// sha256 over input file contents and every scientific setting.
    pub config_hash: String,
    pub task: String,
    pub family: String,
    pub scales: Vec<f64>,
    pub metrics: Vec<String>,
    pub prompts: Vec<String>,
    pub threshold: f64,
    pub threshold_source: ThresholdSource,
    pub conventions: AssessConventions,
    pub bootstrap: Option<BootstrapConfig>,
    pub bootstrap_generator: Option<String>,
    pub perturbation_pairs: usize,
    pub robustness: Vec<RobustnessSummary>,
    pub rows: Vec<ReportRow>,
    /// Worst row outcome: drives the process exit code.
    pub overall: Outcome,
    pub warnings: Vec<String>,
}

/// Runs every configured stage and writes the report bundle.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineSummary, PipelineError> {
    if config.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
        pool.install(|| run_pipeline_inner(config))
    } else {
        run_pipeline_inner(config)
    }
}

fn run_pipeline_inner(config: &PipelineConfig) -> Result<PipelineSummary, PipelineError> {
    let mut tracker = OutputTracker::default();
    let result = run_stages(config, &mut tracker);
    if result.is_err() {
        tracker.remove_all();
    }
    result
}

fn run_stages(
    config: &PipelineConfig,
    tracker: &mut OutputTracker,
) -> Result<PipelineSummary, PipelineError> {
    let mut warnings = Vec::new();

    let task = load_task(&config.task)?;
    let family = load_family(&config.family)?;
    let prompts = load_prompts(&config.prompts)?;
    let runs = load_runs(&config.runs, &task, &family)?;

    let prompt_ids: Vec<String> = runs.prompt_ids().iter().map(|s| s.to_string()).collect();
    if !prompts.is_empty() {
        let known: BTreeSet<&str> = prompts.iter().map(|p| p.id.as_str()).collect();
        for id in &prompt_ids {
            if !known.contains(id.as_str()) {
                warnings.push(format!(
                    "runs reference prompt {id:?} with no matching prompt definition"
                ));
            }
        }
    }

    let (threshold, threshold_source) = resolve_threshold(config)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(PipelineError::Config(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    if threshold_source == ThresholdSource::PosthocOverride {
        warnings.push(format!(
            "threshold {threshold} overrides the calibration artifact; post-hoc choice acknowledged"
        ));
    }

    let config_hash = fingerprint(config)?;
    let header = FileHeader {
        tool_version: crate::VERSION.to_string(),
        config_hash: config_hash.clone(),
        conventions: convention_lines(config, threshold, threshold_source),
    };

    std::fs::create_dir_all(&config.out_dir).map_err(|e| io_err(&config.out_dir, e))?;

    // Regression rows per (metric, prompt); metrics keep config order,
    // prompts sort ascending.
    let mut rows = Vec::new();
    let mut plots = Vec::new();
    for &metric in &config.metrics {
        for prompt_id in &prompt_ids {
            let series = grade_series(&task, &family, &runs, metric, prompt_id)?;
            let report = assess(&series, threshold, config.conventions)?;
            plots.push((metric, prompt_id.clone(), series.clone(), report.clone()));
            rows.push(build_row(metric, prompt_id, &task, &series, &report));
        }
    }

    write_reports_csv(&config.out_dir.join("reports.csv"), &header, &rows, tracker)?;
    write_grades_csv(
        &config.out_dir.join("grades.csv"),
        &header,
        &family,
        &plots,
        tracker,
    )?;
    for (metric, prompt_id, series, report) in &plots {
        let name = format!(
            "plot_{}_{}.svg",
            slug(&metric.display_name(task.target_language)),
            slug(prompt_id)
        );
        let path = tracker.record(config.out_dir.join(name));
        let observed = PlotSeries {
            label: format!("{} / {}", metric.display_name(task.target_language), prompt_id),
            points: series.x().iter().cloned().zip(series.y().iter().cloned()).collect(),
            dashed: false,
        };
        let fitted = PlotSeries {
            label: "fit".to_string(),
            points: series
                .x()
                .iter()
                .cloned()
                .zip(report.fit.predicted.iter().cloned())
                .collect(),
            dashed: true,
        };
        svg_line_plot(
            &path,
            &header,
            &format!(
                "{} vs scale ({})",
                metric.display_name(task.target_language),
                prompt_id
            ),
            &[observed, fitted],
        )
        .map_err(|e| io_err(&path, e))?;
    }

    let bootstrap_generator = if let Some(bootstrap_config) = &config.bootstrap {
        write_bootstrap_csv(
            config,
            &task,
            &family,
            &runs,
            &prompt_ids,
            bootstrap_config,
            &header,
            tracker,
        )?;
        Some(GENERATOR_NAME.to_string())
    } else {
        None
    };

    let (perturbation_pairs, robustness) = if let Some(stage) = &config.perturb {
        let (pairs, report) =
            perturbation_stage(config, &task, &family, &runs, &prompt_ids, stage)?;
        write_perturbation_csv(
            &config.out_dir.join("perturbation.csv"),
            &header,
            config,
            &pairs,
            tracker,
        )?;
        let summary = report
            .per_metric
            .iter()
            .map(|(metric, series)| RobustnessSummary {
                metric: metric.clone(),
                pairs: series.points.len(),
                correlation: series.correlation,
            })
            .collect();
        (pairs.len(), summary)
    } else {
        (0, Vec::new())
    };

    let overall = rows
        .iter()
        .map(|r| r.outcome)
        .max_by_key(|o| match o {
            Outcome::Predictable => 0,
            Outcome::Inconclusive => 1,
            Outcome::Emergent => 2,
        })
        .unwrap_or(Outcome::Predictable);

    let summary = PipelineSummary {
        tool_version: crate::VERSION.to_string(),
        config_hash,
        task: task.name.clone(),
        family: family.name.clone(),
        scales: family.scales.iter().map(|s| s.parameters_billions).collect(),
        metrics: config
            .metrics
            .iter()
            .map(|m| m.display_name(task.target_language))
            .collect(),
        prompts: prompt_ids,
        threshold,
        threshold_source,
        conventions: config.conventions,
        bootstrap: config.bootstrap,
        bootstrap_generator,
        perturbation_pairs,
        robustness,
        rows,
        overall,
        warnings,
    };
    let summary_path = tracker.record(config.out_dir.join("summary.json"));
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&summary_path, json + "\n").map_err(|e| io_err(&summary_path, e))?;
    Ok(summary)
}

fn resolve_threshold(config: &PipelineConfig) -> Result<(f64, ThresholdSource), PipelineError> {
    match (config.threshold, &config.calibration) {
        (Some(t), None) => Ok((t, ThresholdSource::Explicit)),
        (None, Some(path)) => {
            let artifact = load_artifact(path)?;
            Ok((artifact.report.threshold, ThresholdSource::Calibration))
        }
        (Some(t), Some(path)) => {
            let artifact = load_artifact(path)?;
            let calibrated = artifact.report.threshold;
            if (t - calibrated).abs() < 1e-12 {
                Ok((calibrated, ThresholdSource::Calibration))
            } else if config.allow_posthoc_threshold {
                Ok((t, ThresholdSource::PosthocOverride))
            } else {
                Err(PipelineError::Config(format!(
                    "threshold {t} disagrees with calibrated {calibrated}; pass the post-hoc \
                     override flag to acknowledge a non-pre-registered threshold"
                )))
            }
        }
        (None, None) => Err(PipelineError::Config(
            "either an explicit threshold or a calibration artifact is required".into(),
        )),
    }
}

/// Content hash binding outputs to inputs: file bytes of task, family,
/// prompts, runs (and perturbation inputs), plus all scientific settings.
/// Execution knobs (threads, output directory) are deliberately excluded.
fn fingerprint(config: &PipelineConfig) -> Result<String, PipelineError> {
    let mut files = vec![config.task.clone(), config.family.clone()];
    files.extend(config.prompts.iter().cloned());
    files.push(config.runs.clone());
    if let Some(stage) = &config.perturb {
        files.push(stage.perturbed_task.clone());
        files.push(stage.perturbed_runs.clone());
    }
    let knobs = serde_json::to_string(&(
        &config.metrics,
        &config.threshold,
        &config.conventions,
        &config.bootstrap,
        config.allow_posthoc_threshold,
    ))
    .expect("knobs serialize");
    crate::report::content_fingerprint(&files, &knobs)
        .map_err(|e| io_err(&config.task, e))
}

fn convention_lines(
    config: &PipelineConfig,
    threshold: f64,
    source: ThresholdSource,
) -> Vec<String> {
    let mut lines = vec![
        format!(
            "conventions: rmsd={} log_x={} grade=corpus-level",
            match config.conventions.rmsd {
                crate::regression::RmsdConvention::Standard => "standard",
                crate::regression::RmsdConvention::AsPrintedEq1 => "as_printed_eq1",
            },
            config.conventions.log_x
        ),
        format!(
            "threshold: {threshold} (source: {})",
            match source {
                ThresholdSource::Explicit => "explicit",
                ThresholdSource::Calibration => "calibration",
                ThresholdSource::PosthocOverride => "posthoc_override",
            }
        ),
    ];
    if let Some(bootstrap) = &config.bootstrap {
        lines.push(format!(
            "bootstrap: S={} N={} replacement={} seed={} generator={}",
            bootstrap.subsample_size,
            bootstrap.iterations,
            bootstrap.replacement,
            bootstrap.seed,
            GENERATOR_NAME
        ));
    }
    if config.perturb.is_some() {
        lines.push(
            "perturbation: delta=perturbed-minus-original per case, pooled over (scale, prompt)"
                .to_string(),
        );
    }
    lines
}

fn build_row(
    metric: MetricKind,
    prompt_id: &str,
    task: &Task,
    series: &ScaleSeries,
    report: &RegressionReport,
) -> ReportRow {
    ReportRow {
        metric: metric.display_name(task.target_language),
        prompt: prompt_id.to_string(),
        rmsd: report.p_rmsd,
        mae: report.p_mae,
        rmsd_exceeds: report.p_rmsd > report.threshold,
        mae_exceeds: report.p_mae > report.threshold,
        verdict: report.verdict,
        outcome: report.outcome,
        direction: report.direction,
        grades: series.y().to_vec(),
        intercept: report.fit.intercept,
        slope: report.fit.slope,
    }
}

fn write_reports_csv(
    path: &Path,
    header: &FileHeader,
    rows: &[ReportRow],
    tracker: &mut OutputTracker,
) -> Result<(), PipelineError> {
    let path = tracker.record(path.to_path_buf());
    let columns = [
        "metric",
        "prompt",
        "rmsd",
        "mae",
        "rmsd_exceeds",
        "mae_exceeds",
        "verdict",
        "outcome",
        "direction",
    ];
    let data: Vec<Vec<String>> = rows
        .iter()
        .map(|row| {
            vec![
                row.metric.clone(),
                row.prompt.clone(),
                format!("{:.4}", row.rmsd),
                format!("{:.4}", row.mae),
                flag(row.rmsd_exceeds),
                flag(row.mae_exceeds),
                format!("{:?}", row.verdict),
                format!("{:?}", row.outcome),
                format!("{:?}", row.direction),
            ]
        })
        .collect();
    write_csv(&path, header, &columns, &data).map_err(|e| io_err(&path, e))
}

/// Exceedance flag mirroring the bolding of p > t entries in report tables.
fn flag(exceeds: bool) -> String {
    if exceeds { "*".to_string() } else { String::new() }
}

fn write_grades_csv(
    path: &Path,
    header: &FileHeader,
    family: &ModelFamily,
    plots: &[(MetricKind, String, ScaleSeries, RegressionReport)],
    tracker: &mut OutputTracker,
) -> Result<(), PipelineError> {
    let path = tracker.record(path.to_path_buf());
    let columns = ["metric", "prompt", "scale", "parameters_billions", "grade"];
    let mut data = Vec::new();
    for (metric, prompt_id, series, _) in plots {
        for (scale, (&x, &y)) in family
            .scales
            .iter()
            .zip(series.x().iter().zip(series.y()))
        {
            data.push(vec![
                metric.name().to_string(),
                prompt_id.clone(),
                scale.label.clone(),
                format!("{x}"),
                format!("{y}"),
            ]);
        }
    }
    write_csv(&path, header, &columns, &data).map_err(|e| io_err(&path, e))
}

#[allow(clippy::too_many_arguments)]
fn write_bootstrap_csv(
    config: &PipelineConfig,
    task: &Task,
    family: &ModelFamily,
    runs: &RunSet,
    prompt_ids: &[String],
    bootstrap_config: &BootstrapConfig,
    header: &FileHeader,
    tracker: &mut OutputTracker,
) -> Result<(), PipelineError> {
    let path = tracker.record(config.out_dir.join("bootstrap.csv"));
    let references = task.references();
    let columns = ["scale", "metric", "prompt", "iteration", "score"];
    let mut data = Vec::new();
    for &metric in &config.metrics {
        for prompt_id in prompt_ids {
            for scale in &family.scales {
                let answers = runs
                    .answers(task, &scale.label, prompt_id)
                    .expect("validated matrix");
                let target = task.target_language;
                let scorer = move |a: &[&str], r: &[&str]| -> f64 {
                    corpus_score(metric, a, r, target).unwrap_or(0.0)
                };
                let cloud = bootstrap_scores(
                    &answers,
                    &references,
                    scorer,
                    bootstrap_config,
                    &scale.label,
                    metric.name(),
                    prompt_id,
                )?;
                for (iteration, score) in cloud.scores.iter().enumerate() {
                    data.push(vec![
                        scale.label.clone(),
                        metric.display_name(task.target_language),
                        prompt_id.clone(),
                        iteration.to_string(),
                        format!("{score}"),
                    ]);
                }
            }
        }
    }
    write_csv(&path, header, &columns, &data).map_err(|e| io_err(&path, e))
}

/// Builds perturbation pairs for every (case, scale, prompt) slice shared
/// by the base and perturbed run sets, with per-case score deltas for each
/// configured metric.
fn perturbation_stage(
    config: &PipelineConfig,
    task: &Task,
    family: &ModelFamily,
    runs: &RunSet,
    prompt_ids: &[String],
    stage: &PerturbStage,
) -> Result<(Vec<PerturbationPair>, RobustnessReport), PipelineError> {
    let perturbed_task = load_task(&stage.perturbed_task)?;
    let perturbed_runs = load_runs(&stage.perturbed_runs, &perturbed_task, family)?;

    // Pair each perturbed case with its base case.
    let mut case_pairs = Vec::new();
    for perturbed in perturbed_task.cases() {
        let Some(original_id) = &perturbed.perturbation_of else {
            return Err(PipelineError::Config(format!(
                "perturbed case {:?} lacks perturbation_of",
                perturbed.id
            )));
        };
        let Some(original) = task.cases().iter().find(|c| &c.id == original_id) else {
            return Err(PipelineError::Config(format!(
                "perturbed case {:?} references unknown base case {original_id:?}",
                perturbed.id
            )));
        };
        case_pairs.push((original, perturbed));
    }

    let perturbed_prompt_ids: BTreeSet<&str> =
        perturbed_runs.prompt_ids().into_iter().collect();
    let mut pairs = Vec::new();
    for prompt_id in prompt_ids {
        if !perturbed_prompt_ids.contains(prompt_id.as_str()) {
            continue;
        }
        for scale in &family.scales {
            let missing = |task: &Task| CorpusError::IncompleteMatrix {
                scale: scale.label.clone(),
                prompt: prompt_id.to_string(),
                missing: task.cases().len(),
            };
            let base_answers = runs
                .answers(task, &scale.label, prompt_id)
                .ok_or_else(|| missing(task))?;
            let pert_answers = perturbed_runs
                .answers(&perturbed_task, &scale.label, prompt_id)
                .ok_or_else(|| missing(&perturbed_task))?;
            let base_refs = task.references();
            let pert_refs = perturbed_task.references();

            // Index answers by case id so base/perturbed orders may differ.
            let base_index: std::collections::HashMap<&str, usize> = task
                .case_ids()
                .enumerate()
                .map(|(i, id)| (id, i))
                .collect();

            for (metric_scores_base, metric_scores_pert, metric) in config
                .metrics
                .iter()
                .map(|&metric| -> Result<_, PipelineError> {
                    let base = case_scores(metric, &base_answers, &base_refs, task.target_language)?;
                    let pert = case_scores(
                        metric,
                        &pert_answers,
                        &pert_refs,
                        perturbed_task.target_language,
                    )?;
                    Ok((base, pert, metric))
                })
                .collect::<Result<Vec<_>, _>>()?
            {
                for (pert_idx, (original, perturbed)) in case_pairs.iter().enumerate() {
                    let base_idx = base_index[original.id.as_str()];
                    let delta = metric_scores_pert[pert_idx] - metric_scores_base[base_idx];
                    pairs.push((
                        prompt_id.clone(),
                        scale.label.clone(),
                        original,
                        perturbed,
                        metric.display_name(task.target_language),
                        delta,
                    ));
                }
            }
        }
    }

    // Collapse the flat rows into PerturbationPair values keyed by
    // (prompt, scale, case), preserving emission order.
    let mut ordered: Vec<PerturbationPair> = Vec::new();
    let mut index: std::collections::HashMap<(String, String, String), usize> =
        std::collections::HashMap::new();
    for (prompt_id, scale_label, original, perturbed, metric_name, delta) in pairs {
        let key = (prompt_id, scale_label, original.id.clone());
        let slot = *index.entry(key).or_insert_with(|| {
            ordered.push(PerturbationPair::new(original, perturbed, Default::default()));
            ordered.len() - 1
        });
        ordered[slot].deltas.insert(metric_name, delta);
    }

    let report = robustness_analysis(&ordered)?;
    Ok((ordered, report))
}

fn write_perturbation_csv(
    path: &Path,
    header: &FileHeader,
    config: &PipelineConfig,
    pairs: &[PerturbationPair],
    tracker: &mut OutputTracker,
) -> Result<(), PipelineError> {
    let _ = config;
    let path = tracker.record(path.to_path_buf());
    let columns = ["case_id", "metric", "distance", "delta"];
    let mut data = Vec::new();
    for pair in pairs {
        for (metric, delta) in &pair.deltas {
            data.push(vec![
                pair.original_id.clone(),
                metric.clone(),
                pair.distance.to_string(),
                format!("{delta}"),
            ]);
        }
    }
    write_csv(&path, header, &columns, &data).map_err(|e| io_err(&path, e))
}

/// Maps a summary to the documented process exit code: 0 when every row is
/// Predictable, 3 when any is Inconclusive, 2 when any is Emergent
/// (operational errors exit 1 at the CLI boundary).
pub fn exit_code(summary: &PipelineSummary) -> i32 {
    match summary.overall {
        Outcome::Predictable => 0,
        Outcome::Inconclusive => 3,
        Outcome::Emergent => 2,
    }
}
