use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use evalforge::aggregate::{
    external_baseline_join, row_from_report, single_vs_two_judge_ablation, BenchmarkRow, Metric,
};
use evalforge::error::{EvalError, Result};
use evalforge::gt::validate_gt;
use evalforge::model::EvaluationReport;
use evalforge::orchestrator::{
    execute, plan, resolve_config, FileConfig, RunConfig, StageFilter,
};
use evalforge::report::{
    combined_summaries, emit_ablation_csv, emit_agreement_csv, emit_baseline_delta_csv,
    emit_combined_csv, emit_run_report_md, emit_significance_csv, emit_telemetry_csv,
    parse_external_baseline_csv, summarize_telemetry, ReportPaths,
};
use evalforge::significance::{significance_from_counts, significance_table, SignTestResult};

#[derive(Parser)]
#[command(name = "evalforge", version, about = "File-backed evaluation pipeline for generated meeting summaries")]
struct Cli {
    /// TOML config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker pool size
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    /// Comma-separated model report labels
    #[arg(long, global = true, value_delimiter = ',')]
    models: Option<Vec<String>>,
    /// Comma-separated dataset-type filter
    #[arg(long, global = true, value_delimiter = ',')]
    dataset_types: Option<Vec<String>>,
    /// Reuse valid artifacts already on disk
    #[arg(long, global = true)]
    resume: bool,
    /// Mock-mode RNG seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Backend name (mock or http)
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Fixed artifact timestamp, YYYYMMDD or YYYYMMDD_HHMMSS
    #[arg(long, global = true)]
    stamp: Option<String>,
    /// Score pairs whose ground truth has zero evaluable items
    #[arg(long, global = true)]
    include_degenerate: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build ground truths for all manifest meetings
    GenGt,
    /// Generate candidate summaries
    GenCandidates,
    /// Run offline evaluation for existing GTs and candidates
    Evaluate,
    /// Emit the combined comparison CSV from persisted reports
    Aggregate,
    /// Pairwise sign tests with Holm correction
    Significance {
        /// Read win/tie/loss counts from a CSV instead of the store
        /// (header: metric,model_a,model_b,a_wins,ties,b_wins)
        #[arg(long)]
        from_csv: Option<PathBuf>,
    },
    /// Single- vs two-judge winner ablation
    Ablation,
    /// Emit all report artifacts from persisted state
    Report {
        /// External holistic baseline CSV to join
        /// (header: meeting_id,model,holistic_accuracy,holistic_coverage)
        #[arg(long)]
        external_baseline: Option<PathBuf>,
    },
    /// Full pipeline: GT, candidates, evaluation, aggregation, reports
    RunAll,
    /// Validate persisted artifacts and print warnings
    Validate,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let mut config = resolve_config(file)?;
    if let Some(concurrency) = cli.concurrency {
        config.concurrency = concurrency;
    }
    if let Some(models) = &cli.models {
        config.models = models
            .iter()
            .map(|m| evalforge::model::ModelLabel::simple(m.clone()))
            .collect::<Result<_>>()?;
    }
    if let Some(datasets) = &cli.dataset_types {
        config.dataset_types = Some(
            datasets
                .iter()
                .map(|d| evalforge::model::DatasetType::from(d.clone()))
                .collect(),
        );
    }
    if cli.resume {
        config.resume = true;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(backend) = &cli.backend {
        config.backend = backend.clone();
    }
    if let Some(stamp) = &cli.stamp {
        config.stamp = Some(stamp.clone());
    }
    if cli.include_degenerate {
        config.include_degenerate = true;
    }
    config.validate()?;
    Ok(config)
}

/// Load every readable evaluation report for the configured universe.
fn collect_reports(config: &RunConfig) -> Result<Vec<EvaluationReport>> {
    let store = config.store();
    let manifest = store.read_manifest()?;
    let mut reports = Vec::new();
    for meeting in manifest.keys() {
        for variant in &config.variants {
            for model in &config.models {
                if let Ok(report) = store.read_report(meeting, variant, model) {
                    reports.push(report);
                }
            }
        }
    }
    if reports.is_empty() {
        return Err(EvalError::EmptySlice("no evaluation reports in store".into()));
    }
    Ok(reports)
}

fn collect_rows(config: &RunConfig, reports: &[EvaluationReport]) -> Result<Vec<BenchmarkRow>> {
    reports
        .iter()
        .map(|r| row_from_report(r, &config.judges[0]))
        .collect()
}

fn run_stages(config: &RunConfig, filter: StageFilter) -> Result<bool> {
    let task_plan = plan(config, filter)?;
    let result = execute(config, &task_plan)?;
    let report = &result.report;
    println!(
        "planned {} reused {} executed {} failed {} exceptions {} missing {}",
        report.planned, report.reused, report.executed, report.failed, report.exceptions,
        report.missing_reports
    );
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    if filter == StageFilter::All {
        emit_all_reports(config, Some(&result))?;
    }
    Ok(report.is_clean())
}

fn significance_results(config: &RunConfig) -> Result<Vec<SignTestResult>> {
    let reports = collect_reports(config)?;
    let rows = collect_rows(config, &reports)?;
    significance_table(&rows, &config.models, &Metric::ALL)
}

fn print_significance(results: &[SignTestResult]) {
    for r in results {
        println!(
            "{} {} vs {}: wins {}/{} ties {} p_raw {} p_holm {} significant {}",
            r.metric,
            r.model_a,
            r.model_b,
            r.a_wins,
            r.b_wins,
            r.ties,
            evalforge::report::format_p(r.p_raw),
            evalforge::report::format_p(r.p_holm),
            r.significant_at_05
        );
    }
}

fn read_counts_csv(path: &PathBuf) -> Result<Vec<(Metric, String, String, u64, u64, u64)>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| EvalError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| EvalError::Config(format!("bad counts row: {e}")))?;
        let get = |i: usize| record.get(i).unwrap_or_default().to_string();
        let num = |i: usize| -> Result<u64> {
            record
                .get(i)
                .unwrap_or_default()
                .parse()
                .map_err(|e| EvalError::Config(format!("bad count in column {i}: {e}")))
        };
        let metric = match get(0).as_str() {
            "accuracy" => Metric::Accuracy,
            "completeness" => Metric::Completeness,
            "coverage" => Metric::Coverage,
            other => return Err(EvalError::Config(format!("unknown metric `{other}`"))),
        };
        out.push((metric, get(1), get(2), num(3)?, num(4)?, num(5)?));
    }
    Ok(out)
}

/// Emit the full report set. Execution side outputs (telemetry, run report)
/// are only available right after a run.
fn emit_all_reports(
    config: &RunConfig,
    execution: Option<&evalforge::orchestrator::ExecutionResult>,
) -> Result<()> {
    std::fs::create_dir_all(&config.reports_dir)
        .map_err(|e| EvalError::io(&config.reports_dir, e))?;
    let paths = ReportPaths::new(&config.reports_dir, config.stamp.as_deref());
    let reports = collect_reports(config)?;
    let rows = collect_rows(config, &reports)?;

    emit_combined_csv(&paths.combined, &rows, &combined_summaries(&rows)?)?;
    emit_significance_csv(
        &paths.significance,
        &significance_table(&rows, &config.models, &Metric::ALL)?,
    )?;
    emit_ablation_csv(&paths.ablation, &single_vs_two_judge_ablation(&rows))?;
    if let Some(result) = execution {
        emit_agreement_csv(&paths.agreement, &result.agreement)?;
        emit_telemetry_csv(&paths.telemetry, &summarize_telemetry(&result.telemetry))?;
        emit_run_report_md(&paths.run_report, &result.report)?;
    } else {
        let store = config.store();
        let manifest = store.read_manifest()?;
        let stats: Vec<_> = manifest
            .keys()
            .map(|m| evalforge::gt::recover_agreement_stats(&store, m))
            .collect();
        emit_agreement_csv(&paths.agreement, &stats)?;
    }
    Ok(())
}

fn cmd_validate(config: &RunConfig) -> Result<()> {
    let store = config.store();
    let manifest = store.read_manifest()?;
    let mut warning_count = 0usize;
    for meeting in manifest.keys() {
        match store.read_ground_truth(meeting) {
            Ok(gt) => {
                for warning in validate_gt(&gt) {
                    println!("{meeting}: {warning}");
                    warning_count += 1;
                }
            }
            Err(e) => {
                println!("{meeting}: ground truth unreadable: {e}");
                warning_count += 1;
            }
        }
        for variant in &config.variants {
            for model in &config.models {
                let path = store.path_for(
                    evalforge::store::ArtifactKind::EvaluationReport,
                    meeting,
                    Some(variant),
                    Some(model),
                )?;
                if path.exists() {
                    if let Err(e) = store.read_report(meeting, variant, model) {
                        println!("{meeting}/{variant}/{model}: invalid report: {e}");
                        warning_count += 1;
                    }
                }
            }
        }
    }
    println!("validate: {warning_count} warning(s)");
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::GenGt => run_stages(&config, StageFilter::GtOnly),
        Command::GenCandidates => run_stages(&config, StageFilter::CandidatesOnly),
        Command::Evaluate => run_stages(&config, StageFilter::EvaluateOnly),
        Command::RunAll => run_stages(&config, StageFilter::All),
        Command::Aggregate => {
            std::fs::create_dir_all(&config.reports_dir)
                .map_err(|e| EvalError::io(&config.reports_dir, e))?;
            let paths = ReportPaths::new(&config.reports_dir, config.stamp.as_deref());
            let reports = collect_reports(&config)?;
            let rows = collect_rows(&config, &reports)?;
            emit_combined_csv(&paths.combined, &rows, &combined_summaries(&rows)?)?;
            println!("wrote {}", paths.combined.display());
            Ok(true)
        }
        Command::Significance { from_csv } => {
            let results = match from_csv {
                Some(path) => significance_from_counts(&read_counts_csv(path)?),
                None => significance_results(&config)?,
            };
            print_significance(&results);
            std::fs::create_dir_all(&config.reports_dir)
                .map_err(|e| EvalError::io(&config.reports_dir, e))?;
            let paths = ReportPaths::new(&config.reports_dir, config.stamp.as_deref());
            emit_significance_csv(&paths.significance, &results)?;
            Ok(true)
        }
        Command::Ablation => {
            let reports = collect_reports(&config)?;
            let rows = collect_rows(&config, &reports)?;
            std::fs::create_dir_all(&config.reports_dir)
                .map_err(|e| EvalError::io(&config.reports_dir, e))?;
            let paths = ReportPaths::new(&config.reports_dir, config.stamp.as_deref());
            emit_ablation_csv(&paths.ablation, &single_vs_two_judge_ablation(&rows))?;
            println!("wrote {}", paths.ablation.display());
            Ok(true)
        }
        Command::Report { external_baseline } => {
            emit_all_reports(&config, None)?;
            if let Some(path) = external_baseline {
                let reports = collect_reports(&config)?;
                let rows = collect_rows(&config, &reports)?;
                let external = parse_external_baseline_csv(path)?;
                let join = external_baseline_join(&rows, &external);
                for unmatched in &join.unmatched {
                    eprintln!("warning: {unmatched}");
                }
                let paths = ReportPaths::new(&config.reports_dir, config.stamp.as_deref());
                emit_baseline_delta_csv(&paths.baseline_delta, &join.rows)?;
            }
            println!("wrote reports to {}", config.reports_dir.display());
            Ok(true)
        }
        Command::Validate => {
            cmd_validate(&config)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::from(0),
        Ok(false) => ExitCode::from(1),
        Err(e @ (EvalError::Config(_) | EvalError::Argument(_) | EvalError::PlanError(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
