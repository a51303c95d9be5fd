//! Emission of every persisted report artifact: combined comparison CSV,
//! significance CSV, agreement CSV, ablation CSV, telemetry CSV, baseline
//! delta CSV, and the run-report Markdown.
//!
//! All emitters are deterministic: fixed sort orders and fixed numeric
//! formatting, so reruns are byte-comparable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::aggregate::{round3, AblationRow, BaselineDeltaRow, BenchmarkRow, ModelMeans};
use crate::error::{EvalError, Result};
use crate::gt::AgreementStats;
use crate::model::{DatasetType, MeetingId};
use crate::significance::SignTestResult;
use crate::store::atomic_write;

pub const COMBINED_HEADER: &str = "row_kind,meeting_id,dataset_type,model,accuracy_avg,completeness_avg,coverage_avg,acc_judge_a,acc_judge_b,comp_judge_a,comp_judge_b,cov_judge_a,cov_judge_b,total_claims,inaccurate_claims,gt_points,uncovered_points";
pub const SIGNIFICANCE_HEADER: &str =
    "metric,model_a,model_b,mean_diff,a_wins,ties,b_wins,p_raw,p_holm,significant";
pub const AGREEMENT_HEADER: &str = "meeting_id,status,fully_aligned,single_aligned,sent_to_review,final_items,single_kept,single_modified,single_dropped,uncertain_merged,uncertain_excluded";
pub const ABLATION_HEADER: &str =
    "dataset_type,metric,winner_judge_a,winner_judge_b,winner_two_judge";
pub const TELEMETRY_HEADER: &str = "stage,samples,avg_total_time,median,p90,avg_total_tokens";
pub const BASELINE_HEADER: &str = "scope,model,pairs,system_accuracy,external_accuracy,accuracy_delta,system_coverage,external_coverage,coverage_delta";

/// Outcome accounting for one orchestrated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub started_epoch_secs: u64,
    pub finished_epoch_secs: u64,
    pub wall_duration_secs: f64,
    pub concurrency: usize,
    pub planned: u64,
    pub reused: u64,
    pub executed: u64,
    pub failed: u64,
    pub exceptions: u64,
    pub missing_reports: u64,
    #[serde(default)]
    pub failed_task_ids: Vec<String>,
    #[serde(default)]
    pub skipped_dependency: u64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn is_clean(&self) -> bool {
        self.failed == 0 && self.exceptions == 0 && self.missing_reports == 0
    }
}

/// Per-stage latency/token summary row for the telemetry CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TelemetrySummary {
    pub stage: String,
    pub samples: u64,
    pub avg_total_time: f64,
    pub median: f64,
    pub p90: f64,
    /// None renders as `n/a` for stages without token data.
    pub avg_total_tokens: Option<f64>,
}

/// One raw telemetry record, keyed by its telemetry stage name.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryRecord {
    pub stage: String,
    pub duration_secs: f64,
    pub total_tokens: Option<u64>,
}

/// Nearest-rank percentile: smallest element with cumulative rank >= q.
fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Summarize raw records per stage; stages appear in first-seen order.
pub fn summarize_telemetry(records: &[TelemetryRecord]) -> Vec<TelemetrySummary> {
    let mut order: Vec<&str> = Vec::new();
    let mut by_stage: BTreeMap<&str, Vec<&TelemetryRecord>> = BTreeMap::new();
    for record in records {
        if !by_stage.contains_key(record.stage.as_str()) {
            order.push(&record.stage);
        }
        by_stage.entry(&record.stage).or_default().push(record);
    }
    order
        .into_iter()
        .map(|stage| {
            let records = &by_stage[stage];
            let mut durations: Vec<f64> = records.iter().map(|r| r.duration_secs).collect();
            durations.sort_by(f64::total_cmp);
            let tokens: Vec<f64> = records
                .iter()
                .filter_map(|r| r.total_tokens.map(|t| t as f64))
                .collect();
            TelemetrySummary {
                stage: stage.to_string(),
                samples: records.len() as u64,
                avg_total_time: durations.iter().sum::<f64>() / durations.len() as f64,
                median: median(&durations),
                p90: nearest_rank(&durations, 0.90),
                avg_total_tokens: if tokens.is_empty() {
                    None
                } else {
                    Some(tokens.iter().sum::<f64>() / tokens.len() as f64)
                },
            }
        })
        .collect()
}

/// `{:.2e}` for p < 10^-3, else 6 decimals; matches the mixed formatting of
/// published significance tables.
pub fn format_p(p: f64) -> String {
    if p < 1e-3 {
        format!("{p:.2e}")
    } else {
        format!("{p:.6}")
    }
}

fn fmt3(x: f64) -> String {
    format!("{:.3}", round3(x))
}

fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

fn fmt_opt6(x: Option<f64>) -> String {
    x.map(fmt6).unwrap_or_default()
}

/// Timestamped artifact name: `<base>_<scope>_<stamp>.<ext>`. The stamp is
/// `YYYYMMDD` (UTC) unless overridden for reproducible output.
pub fn stamped_name(base: &str, scope: &str, stamp: Option<&str>, ext: &str) -> String {
    let stamp = match stamp {
        Some(s) => s.to_string(),
        None => utc_date_stamp(),
    };
    if scope.is_empty() {
        format!("{base}_{stamp}.{ext}")
    } else {
        format!("{base}_{scope}_{stamp}.{ext}")
    }
}

/// Civil date from days since the Unix epoch (Howard Hinnant's algorithm).
fn utc_date_stamp() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let days = (secs / 86_400) as i64;
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36524 - doe / 146_096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    let y = if m <= 2 { y + 1 } else { y };
    format!("{y:04}{m:02}{d:02}")
}

/// Slice-level summary row of the combined CSV. `dataset_type` of `all`
/// aggregates every slice.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedSummaryRow {
    pub dataset_type: String,
    pub model: String,
    pub meetings: u64,
    pub accuracy: f64,
    pub completeness: f64,
    pub coverage: f64,
}

/// Build the summary block from detail rows: one row per (slice, model) plus
/// merged `all` rows.
pub fn combined_summaries(rows: &[BenchmarkRow]) -> Result<Vec<CombinedSummaryRow>> {
    let mut slices: Vec<DatasetType> = Vec::new();
    for row in rows {
        if !slices.contains(&row.dataset_type) {
            slices.push(row.dataset_type.clone());
        }
    }
    slices.sort_by(|a, b| a.as_str().cmp(b.as_str()));
    let mut out = Vec::new();
    let mut push_all = |scope: &str, means: Vec<ModelMeans>| {
        for m in means {
            out.push(CombinedSummaryRow {
                dataset_type: scope.to_string(),
                model: m.model,
                meetings: m.meetings,
                accuracy: m.accuracy,
                completeness: m.completeness,
                coverage: m.coverage,
            });
        }
    };
    push_all("all", crate::aggregate::model_means(rows, None)?);
    for slice in &slices {
        push_all(slice.as_str(), crate::aggregate::model_means(rows, Some(slice))?);
    }
    Ok(out)
}

/// Write the combined comparison CSV: summary rows first, then detail rows
/// sorted by (dataset_type, meeting_id, model). Summary scores carry 3
/// decimals; detail scores carry 6 so re-averaging reproduces summaries.
pub fn emit_combined_csv(
    path: &Path,
    rows: &[BenchmarkRow],
    summaries: &[CombinedSummaryRow],
) -> Result<()> {
    let mut out = String::from(COMBINED_HEADER);
    out.push('\n');
    for s in summaries {
        out.push_str(&format!(
            "summary,all,{},{},{},{},{},,,,,,,{},,,\n",
            s.dataset_type,
            s.model,
            fmt3(s.accuracy),
            fmt3(s.completeness),
            fmt3(s.coverage),
            s.meetings,
        ));
    }
    let mut sorted: Vec<&BenchmarkRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (a.dataset_type.as_str(), a.meeting_id.as_str(), &a.model).cmp(&(
            b.dataset_type.as_str(),
            b.meeting_id.as_str(),
            &b.model,
        ))
    });
    for r in sorted {
        out.push_str(&format!(
            "meeting_model,{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.meeting_id,
            r.dataset_type,
            r.model,
            fmt6(r.accuracy_avg),
            fmt6(r.completeness_avg),
            fmt6(r.coverage_avg),
            fmt_opt6(r.acc_judge_a),
            fmt_opt6(r.acc_judge_b),
            fmt_opt6(r.comp_judge_a),
            fmt_opt6(r.comp_judge_b),
            fmt_opt6(r.cov_judge_a),
            fmt_opt6(r.cov_judge_b),
            r.total_claims,
            fmt6(r.inaccurate_claims),
            r.gt_points,
            fmt6(r.uncovered_points),
        ));
    }
    atomic_write(path, out.as_bytes())
}

/// Parsed-back view of a combined CSV, for consistency checks and re-use.
#[derive(Debug, Clone)]
pub struct ParsedCombined {
    pub summaries: Vec<CombinedSummaryRow>,
    pub details: Vec<BenchmarkRow>,
}

pub fn parse_combined_csv(path: &Path) -> Result<ParsedCombined> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| EvalError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut summaries = Vec::new();
    let mut details = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| EvalError::Config(format!("bad combined row: {e}")))?;
        let get = |i: usize| record.get(i).unwrap_or_default().to_string();
        let num = |i: usize| -> Result<f64> {
            record
                .get(i)
                .unwrap_or_default()
                .parse()
                .map_err(|e| EvalError::Config(format!("bad number in column {i}: {e}")))
        };
        let opt_num = |i: usize| -> Result<Option<f64>> {
            let field = record.get(i).unwrap_or_default();
            if field.is_empty() {
                Ok(None)
            } else {
                field
                    .parse()
                    .map(Some)
                    .map_err(|e| EvalError::Config(format!("bad number in column {i}: {e}")))
            }
        };
        match get(0).as_str() {
            "summary" => summaries.push(CombinedSummaryRow {
                dataset_type: get(2),
                model: get(3),
                meetings: num(13)? as u64,
                accuracy: num(4)?,
                completeness: num(5)?,
                coverage: num(6)?,
            }),
            "meeting_model" => details.push(BenchmarkRow {
                meeting_id: MeetingId::new(get(1))?,
                dataset_type: DatasetType::from(get(2)),
                model: get(3),
                accuracy_avg: num(4)?,
                completeness_avg: num(5)?,
                coverage_avg: num(6)?,
                acc_judge_a: opt_num(7)?,
                acc_judge_b: opt_num(8)?,
                comp_judge_a: opt_num(9)?,
                comp_judge_b: opt_num(10)?,
                cov_judge_a: opt_num(11)?,
                cov_judge_b: opt_num(12)?,
                total_claims: num(13)? as u64,
                inaccurate_claims: num(14)?,
                gt_points: num(15)? as u64,
                uncovered_points: num(16)?,
                judge_runs: 2,
            }),
            other => {
                return Err(EvalError::Config(format!("unknown row_kind `{other}`")));
            }
        }
    }
    Ok(ParsedCombined { summaries, details })
}

pub fn emit_significance_csv(path: &Path, results: &[SignTestResult]) -> Result<()> {
    let mut out = String::from(SIGNIFICANCE_HEADER);
    out.push('\n');
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.metric,
            r.model_a,
            r.model_b,
            fmt6(r.mean_diff),
            r.a_wins,
            r.ties,
            r.b_wins,
            format_p(r.p_raw),
            format_p(r.p_holm),
            r.significant_at_05,
        ));
    }
    atomic_write(path, out.as_bytes())
}

pub fn emit_agreement_csv(path: &Path, stats: &[AgreementStats]) -> Result<()> {
    let mut out = String::from(AGREEMENT_HEADER);
    out.push('\n');
    for s in stats {
        match &s.counts {
            Some(c) => out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                s.meeting_id,
                s.status.as_str(),
                c.fully_aligned,
                c.single_aligned,
                c.sent_to_review,
                c.final_items,
                c.single_kept,
                c.single_modified,
                c.single_dropped,
                c.uncertain_merged,
                c.uncertain_excluded,
            )),
            None => out.push_str(&format!(
                "{},{},,,,,,,,,\n",
                s.meeting_id,
                s.status.as_str()
            )),
        }
    }
    atomic_write(path, out.as_bytes())
}

pub fn emit_ablation_csv(path: &Path, table: &[AblationRow]) -> Result<()> {
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    for r in table {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.dataset_type, r.metric, r.winner_judge_a, r.winner_judge_b, r.winner_two_judge,
        ));
    }
    atomic_write(path, out.as_bytes())
}

pub fn emit_telemetry_csv(path: &Path, summaries: &[TelemetrySummary]) -> Result<()> {
    let mut out = String::from(TELEMETRY_HEADER);
    out.push('\n');
    for s in summaries {
        out.push_str(&format!(
            "{},{},{:.2},{:.2},{:.2},{}\n",
            s.stage,
            s.samples,
            s.avg_total_time,
            s.median,
            s.p90,
            s.avg_total_tokens
                .map(|t| format!("{t:.1}"))
                .unwrap_or_else(|| "n/a".into()),
        ));
    }
    atomic_write(path, out.as_bytes())
}

pub fn emit_baseline_delta_csv(path: &Path, rows: &[BaselineDeltaRow]) -> Result<()> {
    let mut out = String::from(BASELINE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.scope,
            r.model,
            r.pairs,
            fmt6(r.system_accuracy),
            fmt6(r.external_accuracy),
            fmt6(r.accuracy_delta),
            fmt6(r.system_coverage),
            fmt6(r.external_coverage),
            fmt6(r.coverage_delta),
        ));
    }
    atomic_write(path, out.as_bytes())
}

fn format_duration(secs: f64) -> String {
    let total = secs.round() as u64;
    let (h, m, s) = (total / 3600, (total % 3600) / 60, total % 60);
    if h > 0 {
        format!("{h}h {m}m {s}s")
    } else if m > 0 {
        format!("{m}m {s}s")
    } else {
        format!("{s}s")
    }
}

/// Human-facing run report with machine-greppable `key: value` lines.
pub fn emit_run_report_md(path: &Path, report: &RunReport) -> Result<()> {
    let mut out = String::from("# Run report\n\n");
    out.push_str(&format!(
        "wall_duration: {}\n",
        format_duration(report.wall_duration_secs)
    ));
    out.push_str(&format!("concurrency: {}\n", report.concurrency));
    out.push_str(&format!("planned: {}\n", report.planned));
    out.push_str(&format!("reused: {}\n", report.reused));
    out.push_str(&format!("executed: {}\n", report.executed));
    out.push_str(&format!("failed: {}\n", report.failed));
    out.push_str(&format!("exceptions: {}\n", report.exceptions));
    out.push_str(&format!("skipped_dependency: {}\n", report.skipped_dependency));
    out.push_str(&format!("missing_reports: {}\n", report.missing_reports));
    if !report.failed_task_ids.is_empty() {
        out.push_str("\n## Failed tasks\n\n");
        for id in &report.failed_task_ids {
            out.push_str(&format!("- {id}\n"));
        }
    }
    if !report.warnings.is_empty() {
        out.push_str("\n## Warnings\n\n");
        for w in &report.warnings {
            out.push_str(&format!("- {w}\n"));
        }
    }
    atomic_write(path, out.as_bytes())
}

/// Read external holistic scores (`meeting_id,model,holistic_accuracy,holistic_coverage`).
pub fn parse_external_baseline_csv(path: &Path) -> Result<Vec<crate::aggregate::ExternalScore>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| EvalError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| EvalError::Config(format!("bad external row: {e}")))?;
        out.push(crate::aggregate::ExternalScore {
            meeting_id: MeetingId::new(record.get(0).unwrap_or_default())?,
            model: record.get(1).unwrap_or_default().to_string(),
            holistic_accuracy: record
                .get(2)
                .unwrap_or_default()
                .parse()
                .map_err(|e| EvalError::Config(format!("bad holistic_accuracy: {e}")))?,
            holistic_coverage: record
                .get(3)
                .unwrap_or_default()
                .parse()
                .map_err(|e| EvalError::Config(format!("bad holistic_coverage: {e}")))?,
        });
    }
    Ok(out)
}

/// Default artifact file names within a reports directory.
pub struct ReportPaths {
    pub combined: PathBuf,
    pub significance: PathBuf,
    pub agreement: PathBuf,
    pub ablation: PathBuf,
    pub telemetry: PathBuf,
    pub baseline_delta: PathBuf,
    pub run_report: PathBuf,
}

impl ReportPaths {
    pub fn new(dir: &Path, stamp: Option<&str>) -> Self {
        ReportPaths {
            combined: dir.join(stamped_name("meeting_notes_model_comparison_combined", "", stamp, "csv")),
            significance: dir.join(stamped_name(
                "meeting_notes_model_comparison_combined_significance",
                "",
                stamp,
                "csv",
            )),
            agreement: dir.join(stamped_name("gt_agreement_stats", "all", stamp, "csv")),
            ablation: dir.join(stamped_name("single_vs_two_judge_ablation", "all", stamp, "csv")),
            telemetry: dir.join(stamped_name("stage_telemetry", "all", stamp, "csv")),
            baseline_delta: dir.join(stamped_name(
                "deepeval_typed_empirical_comparison",
                "all",
                stamp,
                "csv",
            )),
            run_report: dir.join(stamped_name("run_report", "", stamp, "md")),
        }
    }
}
