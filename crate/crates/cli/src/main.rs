//! Command-line front end for the scalegrade pipeline.
//!
//! Exit codes: 0 = every assessed (metric, prompt) pair is Predictable,
//! 2 = at least one Emergent verdict, 3 = at least one Inconclusive
//! (exactly one deviation formula exceeded the threshold), 1 = operational
//! error. The codes let CI gate a model release on the assessment.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use scalegrade::bootstrap::BootstrapConfig;
use scalegrade::calibrate::{self, CurveSpec};
use scalegrade::corpus;
use scalegrade::perturb::{default_rules, load_pools, perturb_case};
use scalegrade::pipeline::{
    self, run_pipeline, MetricKind, PerturbStage, PipelineConfig,
};
use scalegrade::regression::{AssessConventions, RmsdConvention};
use scalegrade::report::{content_fingerprint, write_csv, FileHeader};

#[derive(Parser)]
#[command(
    name = "scalegrade",
    version,
    about = "Grades code-generation model families across scales and flags emergent capability jumps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Query a completion endpoint for every missing (case, scale, prompt)
    /// answer and append them to a runs file (resumable).
    Collect(CollectArgs),
    /// Grade a runs file per (metric, prompt, scale) and write grades.csv.
    Score(ScoreArgs),
    /// Generate placeholder-substituted task variants or analyze their
    /// robustness scatter.
    #[command(subcommand)]
    Perturb(PerturbCommand),
    /// Resample subsets of the answers to expose score spread per scale.
    Bootstrap(BootstrapArgs),
    /// Select the regression threshold from synthetic smooth/emergent
    /// curves and write the pre-registered calibration artifact.
    Calibrate(CalibrateArgs),
    /// Fit the growth model and render Predictable/Emergent verdicts.
    Assess(AssessArgs),
    /// Run the full pipeline from a JSON config and write the report
    /// bundle.
    Report(ReportArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Task file (JSONL: header line, then one case per line).
    #[arg(long)]
    task: PathBuf,
    /// Model family definition (JSON).
    #[arg(long)]
    family: PathBuf,
    /// Runs file (JSONL answer matrix).
    #[arg(long)]
    runs: PathBuf,
    /// Metrics to grade with: em, bleu, b-norm, b-moses, codebleu.
    /// Repeatable.
    #[arg(long = "metric", required = true)]
    metrics: Vec<String>,
    /// Prompt definition files (JSON); optional, used for validation.
    #[arg(long = "prompt-file")]
    prompt_files: Vec<PathBuf>,
}

impl InputArgs {
    fn metric_kinds(&self) -> Result<Vec<MetricKind>> {
        self.metrics
            .iter()
            .map(|raw| {
                MetricKind::parse(raw)
                    .with_context(|| format!("unknown metric {raw:?} (expected one of: em, bleu, b-norm, b-moses, codebleu)"))
            })
            .collect()
    }
}

#[derive(Args)]
struct CollectArgs {
    #[arg(long)]
    task: PathBuf,
    #[arg(long)]
    family: PathBuf,
    /// Prompt definition files (JSON), one per prompt strategy.
    #[arg(long = "prompt", required = true)]
    prompts: Vec<PathBuf>,
    /// Runs file to create or resume.
    #[arg(long)]
    runs_out: PathBuf,
    /// Full URL of the completion route.
    #[arg(long)]
    endpoint: String,
    /// Model name; a {{scale}} placeholder selects the family member.
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 4)]
    max_parallel: usize,
    #[arg(long, default_value_t = 2)]
    retry_budget: usize,
    #[arg(long, default_value_t = 60)]
    timeout_secs: u64,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Output CSV of per-scale grades.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV of per-case scores (used for perturbation deltas).
    #[arg(long)]
    per_case: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PerturbCommand {
    /// Apply placeholder substitution to every case of a task.
    Generate(PerturbGenerateArgs),
    /// Compare a perturbed task's runs against the base task's runs.
    Analyze(PerturbAnalyzeArgs),
}

#[derive(Args)]
struct PerturbGenerateArgs {
    #[arg(long)]
    task: PathBuf,
    /// Output task file (JSONL).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Directory of replacement word pools (types.txt, variables.txt,
    /// methods.txt, strings.txt, integers.txt). Defaults to the built-in
    /// pools.
    #[arg(long)]
    pools: Option<PathBuf>,
}

#[derive(Args)]
struct PerturbAnalyzeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    perturbed_task: PathBuf,
    #[arg(long)]
    perturbed_runs: PathBuf,
    /// Output scatter CSV (case_id, metric, distance, delta).
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON summary with per-metric correlations.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long, default_value_t = 0.10)]
    threshold: f64,
}

#[derive(Args)]
struct BootstrapArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    subsample_size: usize,
    #[arg(long, default_value_t = 500)]
    iterations: usize,
    /// Resample with replacement (classical bootstrap).
    #[arg(long)]
    replacement: bool,
    /// Output cloud CSV (scale, metric, prompt, iteration, score).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Output calibration artifact (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Custom suite file (JSON: {"smooth": [...], "emergent": [...]});
    /// defaults to the built-in 20+20 suite.
    #[arg(long)]
    suite: Option<PathBuf>,
    #[arg(long, value_parser = parse_rmsd, default_value = "standard")]
    rmsd_convention: RmsdConvention,
    /// Regress against ln(scale) instead of raw scale.
    #[arg(long)]
    log_x: bool,
}

#[derive(Args)]
struct AssessArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Explicit regression threshold in (0, 1).
    #[arg(long)]
    threshold: Option<f64>,
    /// Pre-registered calibration artifact supplying the threshold.
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Acknowledge an explicit threshold that disagrees with the
    /// calibration artifact (echoed into the report).
    #[arg(long)]
    allow_posthoc_threshold: bool,
    #[arg(long, value_parser = parse_rmsd, default_value = "standard")]
    rmsd_convention: RmsdConvention,
    #[arg(long)]
    log_x: bool,
    /// Output directory for reports.csv, grades.csv, plots, summary.json.
    #[arg(long)]
    out_dir: PathBuf,
    /// Worker threads (0 = process default). Never affects output bytes.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: PathBuf,
}

fn parse_rmsd(raw: &str) -> Result<RmsdConvention, String> {
    match raw {
        "standard" => Ok(RmsdConvention::Standard),
        "as-printed-eq1" => Ok(RmsdConvention::AsPrintedEq1),
        other => Err(format!(
            "unknown RMSD convention {other:?} (expected standard or as-printed-eq1)"
        )),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap's own error exit code collides with the verdict codes, so
    // parsing failures are mapped onto the operational-error code.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let is_help = matches!(
                err.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = err.print();
            return if is_help { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Collect(args) => cmd_collect(args),
        Command::Score(args) => cmd_score(args),
        Command::Perturb(PerturbCommand::Generate(args)) => cmd_perturb_generate(args),
        Command::Perturb(PerturbCommand::Analyze(args)) => cmd_perturb_analyze(args),
        Command::Bootstrap(args) => cmd_bootstrap(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Assess(args) => cmd_assess(args),
        Command::Report(args) => cmd_report(args),
    }
}

#[cfg(feature = "collect")]
fn cmd_collect(args: CollectArgs) -> Result<ExitCode> {
    use scalegrade::collect::{collect_runs, EndpointConfig};

    let task = corpus::load_task(&args.task)?;
    let family = corpus::load_family(&args.family)?;
    let prompts = corpus::load_prompts(&args.prompts)?;
    let endpoint = EndpointConfig {
        base_url: args.endpoint,
        model_name: args.model,
        temperature: args.temperature,
        timeout_secs: args.timeout_secs,
        max_parallel: args.max_parallel,
        retry_budget: args.retry_budget,
    };
    endpoint
        .validate()
        .map_err(|message| anyhow::anyhow!("invalid endpoint config: {message}"))?;
    let runtime = tokio::runtime::Runtime::new().context("tokio runtime")?;
    let stats = runtime.block_on(collect_runs(
        &endpoint,
        &task,
        &family,
        &prompts,
        &args.runs_out,
    ))?;
    println!(
        "collected {} answer(s); skipped {} existing; {} over-length; {} failed",
        stats.collected, stats.skipped, stats.context_length_exceeded, stats.failed
    );
    Ok(ExitCode::SUCCESS)
}

#[cfg(not(feature = "collect"))]
fn cmd_collect(_args: CollectArgs) -> Result<ExitCode> {
    anyhow::bail!("this build does not include the collect module (rebuild with --features collect)");
}

fn cmd_score(args: ScoreArgs) -> Result<ExitCode> {
    let metrics = args.input.metric_kinds()?;
    let task = corpus::load_task(&args.input.task)?;
    let family = corpus::load_family(&args.input.family)?;
    let runs = corpus::load_runs(&args.input.runs, &task, &family)?;
    let header = stage_header(&args.input, &metrics, &[])?;

    let prompt_ids: Vec<String> = runs.prompt_ids().iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    let mut per_case_rows = Vec::new();
    for &metric in &metrics {
        for prompt_id in &prompt_ids {
            let series = pipeline::grade_series(&task, &family, &runs, metric, prompt_id)?;
            for (scale, (&x, &y)) in family.scales.iter().zip(series.x().iter().zip(series.y())) {
                rows.push(vec![
                    metric.display_name(task.target_language),
                    prompt_id.clone(),
                    scale.label.clone(),
                    format!("{x}"),
                    format!("{y}"),
                ]);
            }
            if args.per_case.is_some() {
                let references = task.references();
                for scale in &family.scales {
                    let answers = runs
                        .answers(&task, &scale.label, prompt_id)
                        .expect("grade_series validated coverage");
                    let scores = pipeline::case_scores(
                        metric,
                        &answers,
                        &references,
                        task.target_language,
                    )?;
                    for (case_id, score) in task.case_ids().zip(scores) {
                        per_case_rows.push(vec![
                            metric.display_name(task.target_language),
                            prompt_id.clone(),
                            scale.label.clone(),
                            case_id.to_string(),
                            format!("{score}"),
                        ]);
                    }
                }
            }
        }
    }
    write_csv(
        &args.out,
        &header,
        &["metric", "prompt", "scale", "parameters_billions", "grade"],
        &rows,
    )?;
    if let Some(per_case_path) = &args.per_case {
        write_csv(
            per_case_path,
            &header,
            &["metric", "prompt", "scale", "case_id", "score"],
            &per_case_rows,
        )?;
    }
    println!("wrote {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_perturb_generate(args: PerturbGenerateArgs) -> Result<ExitCode> {
    let task = corpus::load_task(&args.task)?;
    let rules = match &args.pools {
        Some(dir) => load_pools(dir, args.seed)?,
        None => default_rules(args.seed),
    };
    let mut cases = Vec::with_capacity(task.cases().len());
    let mut unchanged = 0usize;
    for case in task.cases() {
        let outcome = perturb_case(case, &rules)?;
        if outcome.substitutions == 0 {
            unchanged += 1;
        }
        cases.push(outcome.case);
    }
    let perturbed = corpus::Task::new(
        format!("{}-perturbed", task.name),
        task.kind,
        task.source_language,
        task.target_language,
        cases,
    )?;
    corpus::save_task(&args.out, &perturbed)?;
    println!(
        "wrote {} ({} case(s), {} without placeholders)",
        args.out.display(),
        perturbed.cases().len(),
        unchanged
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_perturb_analyze(args: PerturbAnalyzeArgs) -> Result<ExitCode> {
    let metrics = args.input.metric_kinds()?;
    let parent = args
        .out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| std::path::Path::new("."))
        .to_path_buf();
    let staging = parent.join(format!(".scalegrade-perturb-{}", std::process::id()));
    std::fs::create_dir_all(&staging).context("staging directory")?;
    let config = PipelineConfig {
        task: args.input.task.clone(),
        family: args.input.family.clone(),
        prompts: args.input.prompt_files.clone(),
        runs: args.input.runs.clone(),
        metrics,
        threshold: Some(args.threshold),
        calibration: None,
        allow_posthoc_threshold: false,
        conventions: AssessConventions::default(),
        bootstrap: None,
        perturb: Some(PerturbStage {
            perturbed_task: args.perturbed_task.clone(),
            perturbed_runs: args.perturbed_runs.clone(),
        }),
        out_dir: staging.clone(),
        threads: 0,
    };
    let result = run_pipeline(&config);
    let outcome = result.and_then(|summary| {
        std::fs::copy(staging.join("perturbation.csv"), &args.out).map_err(|e| {
            scalegrade::pipeline::PipelineError::Config(format!(
                "writing {}: {e}",
                args.out.display()
            ))
        })?;
        Ok(summary)
    });
    let _ = std::fs::remove_dir_all(&staging);
    let summary = outcome?;
    if let Some(summary_path) = &args.summary {
        let robustness = serde_json::to_string_pretty(&summary.robustness)?;
        std::fs::write(summary_path, robustness + "\n")
            .with_context(|| format!("writing {}", summary_path.display()))?;
    }
    println!("wrote {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_bootstrap(args: BootstrapArgs) -> Result<ExitCode> {
    let metrics = args.input.metric_kinds()?;
    let task = corpus::load_task(&args.input.task)?;
    let family = corpus::load_family(&args.input.family)?;
    let runs = corpus::load_runs(&args.input.runs, &task, &family)?;
    let bootstrap_config = BootstrapConfig {
        subsample_size: args.subsample_size,
        iterations: args.iterations,
        replacement: args.replacement,
        seed: args.seed,
    };
    let knobs = serde_json::to_string(&bootstrap_config)?;
    let mut header = stage_header(&args.input, &metrics, &[])?;
    header.conventions.push(format!(
        "bootstrap: S={} N={} replacement={} seed={} generator={}",
        bootstrap_config.subsample_size,
        bootstrap_config.iterations,
        bootstrap_config.replacement,
        bootstrap_config.seed,
        scalegrade::bootstrap::GENERATOR_NAME
    ));
    header.conventions.push(format!("bootstrap_knobs: {knobs}"));

    let references = task.references();
    let prompt_ids: Vec<String> = runs.prompt_ids().iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for &metric in &metrics {
        for prompt_id in &prompt_ids {
            for scale in &family.scales {
                let answers = runs
                    .answers(&task, &scale.label, prompt_id)
                    .with_context(|| {
                        format!(
                            "runs file missing slice for scale {:?} prompt {prompt_id:?}",
                            scale.label
                        )
                    })?;
                let target = task.target_language;
                let scorer = move |a: &[&str], r: &[&str]| -> f64 {
                    pipeline::corpus_score(metric, a, r, target).unwrap_or(0.0)
                };
                let cloud = scalegrade::bootstrap::bootstrap_scores(
                    &answers,
                    &references,
                    scorer,
                    &bootstrap_config,
                    &scale.label,
                    metric.name(),
                    prompt_id,
                )?;
                for (iteration, score) in cloud.scores.iter().enumerate() {
                    rows.push(vec![
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
    write_csv(
        &args.out,
        &header,
        &["scale", "metric", "prompt", "iteration", "score"],
        &rows,
    )?;
    println!("wrote {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<ExitCode> {
    let conventions = AssessConventions {
        rmsd: args.rmsd_convention,
        log_x: args.log_x,
    };
    let (smooth, emergent) = match &args.suite {
        Some(path) => {
            #[derive(serde::Deserialize)]
            struct Suite {
                smooth: Vec<CurveSpec>,
                emergent: Vec<CurveSpec>,
            }
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let suite: Suite = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            (suite.smooth, suite.emergent)
        }
        None => calibrate::default_suite(),
    };
    let artifact = calibrate::calibrate(smooth, emergent, conventions)?;
    calibrate::save_artifact(&args.out, &artifact)?;
    println!(
        "calibrated t = {:.4} ({} misclassified of {}); wrote {}",
        artifact.report.threshold,
        artifact.report.misclassified,
        artifact.report.smooth_p.len() + artifact.report.emergent_p.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_assess(args: AssessArgs) -> Result<ExitCode> {
    let metrics = args.input.metric_kinds()?;
    let config = PipelineConfig {
        task: args.input.task.clone(),
        family: args.input.family.clone(),
        prompts: args.input.prompt_files.clone(),
        runs: args.input.runs.clone(),
        metrics,
        threshold: args.threshold,
        calibration: args.calibration.clone(),
        allow_posthoc_threshold: args.allow_posthoc_threshold,
        conventions: AssessConventions {
            rmsd: args.rmsd_convention,
            log_x: args.log_x,
        },
        bootstrap: None,
        perturb: None,
        out_dir: args.out_dir.clone(),
        threads: args.threads,
    };
    let summary = run_pipeline(&config)?;
    print_verdicts(&summary);
    Ok(ExitCode::from(pipeline::exit_code(&summary) as u8))
}

fn cmd_report(args: ReportArgs) -> Result<ExitCode> {
    let config = PipelineConfig::load(&args.config)?;
    let summary = run_pipeline(&config)?;
    print_verdicts(&summary);
    println!("report bundle in {}", config.out_dir.display());
    Ok(ExitCode::from(pipeline::exit_code(&summary) as u8))
}

fn print_verdicts(summary: &scalegrade::pipeline::PipelineSummary) {
    for row in &summary.rows {
        println!(
            "{:<18} {:<10} rmsd={:.4}{} mae={:.4}{} -> {:?} ({:?}, {:?})",
            row.metric,
            row.prompt,
            row.rmsd,
            if row.rmsd_exceeds { "*" } else { " " },
            row.mae,
            if row.mae_exceeds { "*" } else { " " },
            row.verdict,
            row.outcome,
            row.direction
        );
    }
    println!("overall: {:?} (threshold {})", summary.overall, summary.threshold);
}

/// Header for standalone stage outputs: content hash over the stage's
/// inputs plus its metric list.
fn stage_header(
    input: &InputArgs,
    metrics: &[MetricKind],
    extra_files: &[PathBuf],
) -> Result<FileHeader> {
    let mut files = vec![input.task.clone(), input.family.clone(), input.runs.clone()];
    files.extend(input.prompt_files.iter().cloned());
    files.extend(extra_files.iter().cloned());
    let knobs = serde_json::to_string(metrics)?;
    let hash = content_fingerprint(&files, &knobs)?;
    Ok(FileHeader {
        tool_version: scalegrade::VERSION.to_string(),
        config_hash: hash,
        conventions: vec!["conventions: grade=corpus-level tokenizer=whitespace".to_string()],
    })
}
