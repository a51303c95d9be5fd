//! Turns persisted evaluation reports into benchmark tables: model means,
//! pairwise diffs, win matrices, judge disagreement, ablations, issue
//! histograms, diagnostics, robustness exclusions, and external-score joins.
//!
//! All computation runs on unrounded values; rounding is display-only.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};
use crate::model::{
    CoverageState, DatasetType, EvaluationReport, JudgeRunStatus, MeetingId, ModelLabel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Completeness,
    Coverage,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Accuracy, Metric::Completeness, Metric::Coverage];

    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Completeness => "completeness",
            Metric::Coverage => "coverage",
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Flattened meeting-model record feeding aggregation and significance.
/// Judge slots follow the configured judge order (a = first judge).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub meeting_id: MeetingId,
    pub dataset_type: DatasetType,
    pub model: String,
    pub accuracy_avg: f64,
    pub completeness_avg: f64,
    pub coverage_avg: f64,
    pub acc_judge_a: Option<f64>,
    pub acc_judge_b: Option<f64>,
    pub comp_judge_a: Option<f64>,
    pub comp_judge_b: Option<f64>,
    pub cov_judge_a: Option<f64>,
    pub cov_judge_b: Option<f64>,
    pub total_claims: u64,
    /// Mean over accuracy-bearing judge runs.
    pub inaccurate_claims: f64,
    pub gt_points: u64,
    /// Mean over coverage-bearing judge runs.
    pub uncovered_points: f64,
    /// Judge runs stored for this pair, regardless of status.
    pub judge_runs: u64,
}

impl BenchmarkRow {
    pub fn avg(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Accuracy => self.accuracy_avg,
            Metric::Completeness => self.completeness_avg,
            Metric::Coverage => self.coverage_avg,
        }
    }

    pub fn judge_score(&self, metric: Metric, judge_a: bool) -> Option<f64> {
        match (metric, judge_a) {
            (Metric::Accuracy, true) => self.acc_judge_a,
            (Metric::Accuracy, false) => self.acc_judge_b,
            (Metric::Completeness, true) => self.comp_judge_a,
            (Metric::Completeness, false) => self.comp_judge_b,
            (Metric::Coverage, true) => self.cov_judge_a,
            (Metric::Coverage, false) => self.cov_judge_b,
        }
    }
}

/// Flatten one persisted report into a benchmark row. `judge_a` fixes which
/// stored run fills the `_judge_a` columns.
pub fn row_from_report(report: &EvaluationReport, judge_a: &ModelLabel) -> Result<BenchmarkRow> {
    let a = report
        .judge_runs
        .iter()
        .find(|r| &r.judge == judge_a)
        .ok_or_else(|| EvalError::schema("judge_runs", "configured judge_a not present"))?;
    let b = report
        .judge_runs
        .iter()
        .find(|r| &r.judge != judge_a)
        .ok_or_else(|| EvalError::schema("judge_runs", "second judge not present"))?;

    let mean_over = |vals: Vec<Option<f64>>| -> f64 {
        let present: Vec<f64> = vals.into_iter().flatten().collect();
        if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    };
    let inaccurate = |run: &crate::model::JudgeRun| -> Option<f64> {
        if run.accuracy.is_some() {
            Some(
                run.claim_assessments
                    .iter()
                    .filter(|c| c.verdict == crate::model::Verdict::Inaccurate)
                    .count() as f64,
            )
        } else {
            None
        }
    };
    let uncovered = |run: &crate::model::JudgeRun| -> Option<f64> {
        if run.coverage.is_some() {
            Some(
                run.gt_assessments
                    .iter()
                    .filter(|g| g.coverage_state == CoverageState::Uncovered)
                    .count() as f64,
            )
        } else {
            None
        }
    };
    let gt_points = report
        .judge_runs
        .iter()
        .map(|r| r.gt_assessments.len() as u64)
        .max()
        .unwrap_or(0);

    Ok(BenchmarkRow {
        meeting_id: report.meeting_id.clone(),
        dataset_type: report.dataset_type.clone(),
        model: report.model.report_label.clone(),
        accuracy_avg: report.accuracy_avg,
        completeness_avg: report.completeness_avg,
        coverage_avg: report.coverage_avg,
        acc_judge_a: a.accuracy,
        acc_judge_b: b.accuracy,
        comp_judge_a: a.completeness,
        comp_judge_b: b.completeness,
        cov_judge_a: a.coverage,
        cov_judge_b: b.coverage,
        total_claims: report.claims.len() as u64,
        inaccurate_claims: mean_over(vec![inaccurate(a), inaccurate(b)]),
        gt_points,
        uncovered_points: mean_over(vec![uncovered(a), uncovered(b)]),
        judge_runs: report.judge_runs.len() as u64,
    })
}

/// Round half away from zero at 3 decimals. Display only; never feed the
/// result back into computation.
pub fn round3(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    sign * ((x.abs() * 1000.0) + 0.5).floor() / 1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelMeans {
    pub model: String,
    pub meetings: u64,
    pub evaluator_runs: u64,
    pub accuracy: f64,
    pub completeness: f64,
    pub coverage: f64,
}

/// Unweighted mean over meeting-level averaged scores per model, optionally
/// filtered to one dataset type. Values are unrounded; round for display.
pub fn model_means(
    rows: &[BenchmarkRow],
    filter: Option<&DatasetType>,
) -> Result<Vec<ModelMeans>> {
    let selected: Vec<&BenchmarkRow> = rows
        .iter()
        .filter(|r| filter.map_or(true, |d| &r.dataset_type == d))
        .collect();
    if selected.is_empty() {
        return Err(EvalError::EmptySlice(format!(
            "no rows for dataset filter {:?}",
            filter.map(|d| d.as_str())
        )));
    }
    let mut by_model: BTreeMap<&str, Vec<&BenchmarkRow>> = BTreeMap::new();
    for row in selected {
        by_model.entry(&row.model).or_default().push(row);
    }
    Ok(by_model
        .into_iter()
        .map(|(model, rows)| {
            let n = rows.len() as f64;
            ModelMeans {
                model: model.to_string(),
                meetings: rows.len() as u64,
                evaluator_runs: rows.iter().map(|r| r.judge_runs).sum(),
                accuracy: rows.iter().map(|r| r.accuracy_avg).sum::<f64>() / n,
                completeness: rows.iter().map(|r| r.completeness_avg).sum::<f64>() / n,
                coverage: rows.iter().map(|r| r.coverage_avg).sum::<f64>() / n,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseDiffs {
    pub mean_diff: f64,
    pub a_wins: u64,
    pub ties: u64,
    pub b_wins: u64,
    pub universe: u64,
}

/// Per-meeting paired comparison of two models on one metric, restricted to
/// meetings where both rows exist. Ties are exact floating equality of the
/// per-meeting averaged scores.
pub fn pairwise_meeting_diffs(
    rows: &[BenchmarkRow],
    metric: Metric,
    model_a: &ModelLabel,
    model_b: &ModelLabel,
) -> Result<PairwiseDiffs> {
    let mut scores_a: BTreeMap<&MeetingId, f64> = BTreeMap::new();
    let mut scores_b: BTreeMap<&MeetingId, f64> = BTreeMap::new();
    for row in rows {
        if row.model == model_a.report_label {
            scores_a.insert(&row.meeting_id, row.avg(metric));
        } else if row.model == model_b.report_label {
            scores_b.insert(&row.meeting_id, row.avg(metric));
        }
    }
    let mut diffs = Vec::new();
    let (mut a_wins, mut ties, mut b_wins) = (0u64, 0u64, 0u64);
    for (meeting, &sa) in &scores_a {
        if let Some(&sb) = scores_b.get(meeting) {
            diffs.push(sa - sb);
            if sa > sb {
                a_wins += 1;
            } else if sa < sb {
                b_wins += 1;
            } else {
                ties += 1;
            }
        }
    }
    if diffs.is_empty() {
        return Err(EvalError::EmptySlice(format!(
            "no shared meetings for {} vs {}",
            model_a.report_label, model_b.report_label
        )));
    }
    Ok(PairwiseDiffs {
        mean_diff: diffs.iter().sum::<f64>() / diffs.len() as f64,
        a_wins,
        ties,
        b_wins,
        universe: diffs.len() as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WinMatrix {
    pub metric: Metric,
    /// Per-model strict-unique-argmax win counts, in the caller's model order.
    pub wins: Vec<(String, u64)>,
    pub ties: u64,
    /// Meetings where all compared models are present.
    pub universe: u64,
}

/// Strict unique argmax wins over meetings where all models are present; any
/// shared maximum makes the meeting a tie.
pub fn win_matrix(rows: &[BenchmarkRow], metric: Metric, models: &[ModelLabel]) -> Result<WinMatrix> {
    let mut per_meeting: BTreeMap<&MeetingId, BTreeMap<&str, f64>> = BTreeMap::new();
    for row in rows {
        per_meeting
            .entry(&row.meeting_id)
            .or_default()
            .insert(&row.model, row.avg(metric));
    }
    let mut wins: BTreeMap<&str, u64> = models
        .iter()
        .map(|m| (m.report_label.as_str(), 0))
        .collect();
    let mut ties = 0u64;
    let mut universe = 0u64;
    for scores in per_meeting.values() {
        if !models.iter().all(|m| scores.contains_key(m.report_label.as_str())) {
            continue;
        }
        universe += 1;
        let max = models
            .iter()
            .map(|m| scores[m.report_label.as_str()])
            .fold(f64::NEG_INFINITY, f64::max);
        let winners: Vec<&str> = models
            .iter()
            .map(|m| m.report_label.as_str())
            .filter(|label| scores[label] == max)
            .collect();
        if winners.len() == 1 {
            *wins.get_mut(winners[0]).unwrap() += 1;
        } else {
            ties += 1;
        }
    }
    if universe == 0 {
        return Err(EvalError::EmptySlice("no meetings with all models present".into()));
    }
    Ok(WinMatrix {
        metric,
        wins: models
            .iter()
            .map(|m| (m.report_label.clone(), wins[m.report_label.as_str()]))
            .collect(),
        ties,
        universe,
    })
}

/// Mean absolute per-pair judge difference, per model and metric. Rows without
/// both judge scores for a metric are skipped for that metric.
pub fn judge_disagreement(rows: &[BenchmarkRow]) -> Vec<(String, BTreeMap<Metric, f64>)> {
    let mut by_model: BTreeMap<&str, Vec<&BenchmarkRow>> = BTreeMap::new();
    for row in rows {
        by_model.entry(&row.model).or_default().push(row);
    }
    by_model
        .into_iter()
        .map(|(model, rows)| {
            let mut per_metric = BTreeMap::new();
            for metric in Metric::ALL {
                let diffs: Vec<f64> = rows
                    .iter()
                    .filter_map(|r| {
                        Some((r.judge_score(metric, true)? - r.judge_score(metric, false)?).abs())
                    })
                    .collect();
                if !diffs.is_empty() {
                    per_metric.insert(metric, diffs.iter().sum::<f64>() / diffs.len() as f64);
                }
            }
            (model.to_string(), per_metric)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeRegime {
    JudgeAOnly,
    JudgeBOnly,
    TwoJudgeAverage,
}

impl JudgeRegime {
    pub const ALL: [JudgeRegime; 3] = [
        JudgeRegime::JudgeAOnly,
        JudgeRegime::JudgeBOnly,
        JudgeRegime::TwoJudgeAverage,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub dataset_type: DatasetType,
    pub metric: Metric,
    /// Winner under each regime, `"tie"` when the slice-mean argmax is shared.
    pub winner_judge_a: String,
    pub winner_judge_b: String,
    pub winner_two_judge: String,
}

fn slice_winner(
    rows: &[&BenchmarkRow],
    metric: Metric,
    regime: JudgeRegime,
) -> String {
    let mut means: BTreeMap<&str, (f64, u64)> = BTreeMap::new();
    for row in rows {
        let score = match regime {
            JudgeRegime::JudgeAOnly => row.judge_score(metric, true),
            JudgeRegime::JudgeBOnly => row.judge_score(metric, false),
            JudgeRegime::TwoJudgeAverage => Some(row.avg(metric)),
        };
        if let Some(s) = score {
            let entry = means.entry(&row.model).or_insert((0.0, 0));
            entry.0 += s;
            entry.1 += 1;
        }
    }
    let means: Vec<(&str, f64)> = means
        .into_iter()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(m, (sum, n))| (m, sum / n as f64))
        .collect();
    let max = means.iter().map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
    let winners: Vec<&str> = means
        .iter()
        .filter(|(_, v)| *v == max)
        .map(|(m, _)| *m)
        .collect();
    if winners.len() == 1 {
        winners[0].to_string()
    } else {
        "tie".to_string()
    }
}

/// Per-slice winner under judge-A-only, judge-B-only, and two-judge average,
/// for every metric.
pub fn single_vs_two_judge_ablation(rows: &[BenchmarkRow]) -> Vec<AblationRow> {
    let mut slices: BTreeMap<&DatasetType, Vec<&BenchmarkRow>> = BTreeMap::new();
    for row in rows {
        slices.entry(&row.dataset_type).or_default().push(row);
    }
    let mut out = Vec::new();
    for (dataset, slice_rows) in slices {
        for metric in Metric::ALL {
            out.push(AblationRow {
                dataset_type: dataset.clone(),
                metric,
                winner_judge_a: slice_winner(&slice_rows, metric, JudgeRegime::JudgeAOnly),
                winner_judge_b: slice_winner(&slice_rows, metric, JudgeRegime::JudgeBOnly),
                winner_two_judge: slice_winner(&slice_rows, metric, JudgeRegime::TwoJudgeAverage),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueSide {
    Accuracy,
    Coverage,
}

/// Total issue-label counts across judge runs (not averaged). The accuracy
/// side uses only runs with an accuracy payload, so evaluation_error runs
/// contribute nothing there; the coverage side uses all runs with a coverage
/// payload and counts one `missing` per uncovered item.
pub fn issue_histogram(reports: &[EvaluationReport], side: IssueSide) -> BTreeMap<String, u64> {
    let mut histogram: BTreeMap<String, u64> = BTreeMap::new();
    for report in reports {
        for run in &report.judge_runs {
            match side {
                IssueSide::Accuracy => {
                    if run.accuracy.is_none() || run.status == JudgeRunStatus::EvaluationError {
                        continue;
                    }
                    for claim in &run.claim_assessments {
                        if let Some(issue) = claim.issue_type {
                            *histogram.entry(issue.as_str().to_string()).or_insert(0) += 1;
                        }
                    }
                }
                IssueSide::Coverage => {
                    if run.coverage.is_none() {
                        continue;
                    }
                    let missing = run
                        .gt_assessments
                        .iter()
                        .filter(|g| g.coverage_state == CoverageState::Uncovered)
                        .count() as u64;
                    if missing > 0 {
                        *histogram.entry("missing".to_string()).or_insert(0) += missing;
                    }
                }
            }
        }
    }
    histogram
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClaimDiagnostics {
    pub model: String,
    pub avg_inaccurate_claims: f64,
    pub avg_total_claims: f64,
    pub avg_uncovered_gt: f64,
    pub avg_gt_points: f64,
}

/// Simple per-model means over benchmark rows.
pub fn claim_diagnostics(rows: &[BenchmarkRow]) -> Vec<ClaimDiagnostics> {
    let mut by_model: BTreeMap<&str, Vec<&BenchmarkRow>> = BTreeMap::new();
    for row in rows {
        by_model.entry(&row.model).or_default().push(row);
    }
    by_model
        .into_iter()
        .map(|(model, rows)| {
            let n = rows.len() as f64;
            ClaimDiagnostics {
                model: model.to_string(),
                avg_inaccurate_claims: rows.iter().map(|r| r.inaccurate_claims).sum::<f64>() / n,
                avg_total_claims: rows.iter().map(|r| r.total_claims as f64).sum::<f64>() / n,
                avg_uncovered_gt: rows.iter().map(|r| r.uncovered_points).sum::<f64>() / n,
                avg_gt_points: rows.iter().map(|r| r.gt_points as f64).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Recompute model means with the given meetings excluded.
pub fn robustness_exclude(
    rows: &[BenchmarkRow],
    excluded_meetings: &BTreeSet<MeetingId>,
) -> Result<Vec<ModelMeans>> {
    let remaining: Vec<BenchmarkRow> = rows
        .iter()
        .filter(|r| !excluded_meetings.contains(&r.meeting_id))
        .cloned()
        .collect();
    model_means(&remaining, None)
}

/// One (meeting, model) holistic score pair from an ingested external CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalScore {
    pub meeting_id: MeetingId,
    pub model: String,
    pub holistic_accuracy: f64,
    pub holistic_coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineDeltaRow {
    /// `"overall"` for the pair-weighted aggregate rows.
    pub scope: String,
    pub model: String,
    pub pairs: u64,
    pub system_accuracy: f64,
    pub external_accuracy: f64,
    pub accuracy_delta: f64,
    pub system_coverage: f64,
    pub external_coverage: f64,
    pub coverage_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineJoin {
    pub rows: Vec<BaselineDeltaRow>,
    /// External keys without a matching benchmark row, and vice versa.
    pub unmatched: Vec<String>,
}

/// Join external holistic scores onto benchmark rows: per-slice per-model
/// means and deltas (external minus system), plus overall rows weighted by
/// pair counts rather than mean-of-slice-means.
pub fn external_baseline_join(rows: &[BenchmarkRow], external: &[ExternalScore]) -> BaselineJoin {
    let mut ext_by_key: BTreeMap<(String, String), &ExternalScore> = BTreeMap::new();
    for e in external {
        ext_by_key.insert((e.meeting_id.as_str().to_string(), e.model.clone()), e);
    }
    let mut unmatched = Vec::new();
    // (scope, model) -> accumulators: pairs, sys_acc, ext_acc, sys_cov, ext_cov
    let mut acc: BTreeMap<(String, String), (u64, f64, f64, f64, f64)> = BTreeMap::new();
    let mut matched_keys: BTreeSet<(String, String)> = BTreeSet::new();
    for row in rows {
        let key = (row.meeting_id.as_str().to_string(), row.model.clone());
        match ext_by_key.get(&key) {
            Some(e) => {
                matched_keys.insert(key);
                for scope in [row.dataset_type.as_str().to_string(), "overall".to_string()] {
                    let entry = acc
                        .entry((scope, row.model.clone()))
                        .or_insert((0, 0.0, 0.0, 0.0, 0.0));
                    entry.0 += 1;
                    entry.1 += row.accuracy_avg;
                    entry.2 += e.holistic_accuracy;
                    entry.3 += row.coverage_avg;
                    entry.4 += e.holistic_coverage;
                }
            }
            None => unmatched.push(format!("system row without external score: {}/{}", key.0, key.1)),
        }
    }
    for key in ext_by_key.keys() {
        if !matched_keys.contains(key) {
            unmatched.push(format!("external score without system row: {}/{}", key.0, key.1));
        }
    }
    let rows = acc
        .into_iter()
        .map(|((scope, model), (n, sa, ea, sc, ec))| {
            let n_f = n as f64;
            BaselineDeltaRow {
                scope,
                model,
                pairs: n,
                system_accuracy: sa / n_f,
                external_accuracy: ea / n_f,
                accuracy_delta: (ea - sa) / n_f,
                system_coverage: sc / n_f,
                external_coverage: ec / n_f,
                coverage_delta: (ec - sc) / n_f,
            }
        })
        .collect();
    BaselineJoin { rows, unmatched }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(s: &str) -> ModelLabel {
        ModelLabel::simple(s).unwrap()
    }

    pub(crate) fn row(meeting: &str, dataset: &str, model: &str, scores: (f64, f64, f64)) -> BenchmarkRow {
        BenchmarkRow {
            meeting_id: MeetingId::new(meeting).unwrap(),
            dataset_type: DatasetType::from(dataset.to_string()),
            model: model.to_string(),
            accuracy_avg: scores.0,
            completeness_avg: scores.1,
            coverage_avg: scores.2,
            acc_judge_a: Some(scores.0),
            acc_judge_b: Some(scores.0),
            comp_judge_a: Some(scores.1),
            comp_judge_b: Some(scores.1),
            cov_judge_a: Some(scores.2),
            cov_judge_b: Some(scores.2),
            total_claims: 10,
            inaccurate_claims: 2.0,
            gt_points: 20,
            uncovered_points: 3.0,
            judge_runs: 2,
        }
    }

    #[test]
    fn round3_half_away_from_zero() {
        assert_eq!(round3(0.58349), 0.583);
        assert_eq!(round3(0.5835), 0.584);
        assert_eq!(round3(-0.5835), -0.584);
        assert_eq!(round3(0.0005), 0.001);
    }

    #[test]
    fn model_means_single_row_identity() {
        let rows = vec![row("m1", "city_council", "x", (0.5, 0.6, 0.7))];
        let means = model_means(&rows, None).unwrap();
        assert_eq!(means.len(), 1);
        assert_eq!(means[0].accuracy, 0.5);
        assert_eq!(means[0].completeness, 0.6);
        assert_eq!(means[0].coverage, 0.7);
        assert_eq!(means[0].evaluator_runs, 2);
    }

    #[test]
    fn model_means_empty_filter_is_error() {
        let rows = vec![row("m1", "city_council", "x", (0.5, 0.6, 0.7))];
        assert!(matches!(
            model_means(&rows, Some(&DatasetType::PrivateData)),
            Err(EvalError::EmptySlice(_))
        ));
    }

    #[test]
    fn pairwise_identical_vectors_all_ties() {
        let mut rows = Vec::new();
        for m in ["m1", "m2", "m3"] {
            rows.push(row(m, "city_council", "a", (0.5, 0.5, 0.5)));
            rows.push(row(m, "city_council", "b", (0.5, 0.5, 0.5)));
        }
        let d = pairwise_meeting_diffs(&rows, Metric::Accuracy, &label("a"), &label("b")).unwrap();
        assert_eq!((d.a_wins, d.ties, d.b_wins), (0, 3, 0));
        assert_eq!(d.mean_diff, 0.0);
    }

    #[test]
    fn pairwise_constant_offset() {
        let mut rows = Vec::new();
        for (i, m) in ["m1", "m2", "m3", "m4"].iter().enumerate() {
            let base = 0.3 + i as f64 * 0.1;
            rows.push(row(m, "city_council", "a", (base + 0.1, 0.5, 0.5)));
            rows.push(row(m, "city_council", "b", (base, 0.5, 0.5)));
        }
        let d = pairwise_meeting_diffs(&rows, Metric::Accuracy, &label("a"), &label("b")).unwrap();
        assert_eq!(d.a_wins, d.universe);
        assert!((d.mean_diff - 0.1).abs() < 1e-12);
    }

    #[test]
    fn win_matrix_strict_argmax_and_ties() {
        let rows = vec![
            row("m1", "city_council", "a", (0.5, 0.5, 0.5)),
            row("m1", "city_council", "b", (0.6, 0.5, 0.5)),
            row("m1", "city_council", "c", (0.7, 0.5, 0.5)),
            row("m2", "city_council", "a", (0.9, 0.5, 0.5)),
            row("m2", "city_council", "b", (0.9, 0.5, 0.5)),
            row("m2", "city_council", "c", (0.1, 0.5, 0.5)),
            // m3 lacks model c and must not enter the universe
            row("m3", "city_council", "a", (0.9, 0.5, 0.5)),
            row("m3", "city_council", "b", (0.1, 0.5, 0.5)),
        ];
        let models = [label("a"), label("b"), label("c")];
        let w = win_matrix(&rows, Metric::Accuracy, &models).unwrap();
        assert_eq!(w.universe, 2);
        assert_eq!(w.ties, 1);
        assert_eq!(w.wins, vec![("a".into(), 0), ("b".into(), 0), ("c".into(), 1)]);
    }

    #[test]
    fn disagreement_mean_abs() {
        let mut r1 = row("m1", "city_council", "a", (0.7, 0.5, 0.5));
        r1.acc_judge_a = Some(0.6);
        r1.acc_judge_b = Some(0.8);
        let mut r2 = row("m2", "city_council", "a", (0.5, 0.5, 0.5));
        r2.acc_judge_a = Some(0.5);
        r2.acc_judge_b = Some(0.5);
        let table = judge_disagreement(&[r1, r2]);
        let (_, per_metric) = &table[0];
        assert!((per_metric[&Metric::Accuracy] - 0.1).abs() < 1e-12);
        assert_eq!(per_metric[&Metric::Coverage], 0.0);
    }

    #[test]
    fn ablation_judges_can_disagree_on_winner() {
        // judge A favors x, judge B favors y, average favors x
        let mk = |meeting: &str, model: &str, a: f64, b: f64| {
            let mut r = row(meeting, "city_council", model, ((a + b) / 2.0, 0.5, 0.5));
            r.acc_judge_a = Some(a);
            r.acc_judge_b = Some(b);
            r
        };
        let rows = vec![
            mk("m1", "x", 0.9, 0.5),
            mk("m1", "y", 0.4, 0.6),
        ];
        let table = single_vs_two_judge_ablation(&rows);
        let acc_row = table
            .iter()
            .find(|r| r.metric == Metric::Accuracy)
            .unwrap();
        assert_eq!(acc_row.winner_judge_a, "x");
        assert_eq!(acc_row.winner_judge_b, "y");
        assert_eq!(acc_row.winner_two_judge, "x");
    }

    #[test]
    fn argmax_invariant_under_monotone_transform() {
        let rows = vec![
            row("m1", "city_council", "a", (0.2, 0.5, 0.5)),
            row("m1", "city_council", "b", (0.8, 0.5, 0.5)),
            row("m2", "city_council", "a", (0.6, 0.5, 0.5)),
            row("m2", "city_council", "b", (0.3, 0.5, 0.5)),
        ];
        let transformed: Vec<BenchmarkRow> = rows
            .iter()
            .map(|r| {
                let mut t = r.clone();
                t.accuracy_avg = r.accuracy_avg.sqrt(); // strictly increasing on [0,1]
                t.acc_judge_a = r.acc_judge_a.map(f64::sqrt);
                t.acc_judge_b = r.acc_judge_b.map(f64::sqrt);
                t
            })
            .collect();
        let models = [label("a"), label("b")];
        let w1 = win_matrix(&rows, Metric::Accuracy, &models).unwrap();
        let w2 = win_matrix(&transformed, Metric::Accuracy, &models).unwrap();
        assert_eq!(w1.wins, w2.wins);
        assert_eq!(w1.ties, w2.ties);
    }

    #[test]
    fn diagnostics_single_row_passthrough() {
        let mut r = row("m1", "city_council", "a", (0.5, 0.5, 0.5));
        r.inaccurate_claims = 12.0;
        r.total_claims = 28;
        r.uncovered_points = 5.0;
        r.gt_points = 26;
        let d = claim_diagnostics(&[r]);
        assert_eq!(d[0].avg_inaccurate_claims, 12.0);
        assert_eq!(d[0].avg_total_claims, 28.0);
        assert_eq!(d[0].avg_uncovered_gt, 5.0);
        assert_eq!(d[0].avg_gt_points, 26.0);
    }

    #[test]
    fn robustness_exclude_nothing_is_identity() {
        let rows = vec![
            row("m1", "city_council", "a", (0.5, 0.6, 0.7)),
            row("m2", "city_council", "a", (0.7, 0.8, 0.9)),
        ];
        let base = model_means(&rows, None).unwrap();
        let excluded = robustness_exclude(&rows, &BTreeSet::new()).unwrap();
        assert_eq!(base, excluded);
        let mut one = BTreeSet::new();
        one.insert(MeetingId::new("m1").unwrap());
        let without = robustness_exclude(&rows, &one).unwrap();
        // m1 was below the mean, so the mean weakly increases
        assert!(without[0].accuracy >= base[0].accuracy);
    }

    #[test]
    fn baseline_join_zero_and_constant_deltas() {
        let rows = vec![
            row("m1", "city_council", "a", (0.5, 0.6, 0.7)),
            row("m2", "private_data", "a", (0.7, 0.8, 0.9)),
        ];
        let equal: Vec<ExternalScore> = rows
            .iter()
            .map(|r| ExternalScore {
                meeting_id: r.meeting_id.clone(),
                model: r.model.clone(),
                holistic_accuracy: r.accuracy_avg,
                holistic_coverage: r.coverage_avg,
            })
            .collect();
        let join = external_baseline_join(&rows, &equal);
        assert!(join.unmatched.is_empty());
        for d in &join.rows {
            assert!(d.accuracy_delta.abs() < 1e-12);
            assert!(d.coverage_delta.abs() < 1e-12);
        }
        let shifted: Vec<ExternalScore> = equal
            .iter()
            .map(|e| ExternalScore {
                holistic_accuracy: e.holistic_accuracy + 0.1,
                holistic_coverage: e.holistic_coverage + 0.1,
                ..e.clone()
            })
            .collect();
        let join = external_baseline_join(&rows, &shifted);
        for d in &join.rows {
            assert!((d.accuracy_delta - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn baseline_join_lists_unmatched_keys() {
        let rows = vec![row("m1", "city_council", "a", (0.5, 0.6, 0.7))];
        let external = vec![ExternalScore {
            meeting_id: MeetingId::new("m9").unwrap(),
            model: "a".into(),
            holistic_accuracy: 0.9,
            holistic_coverage: 0.9,
        }];
        let join = external_baseline_join(&rows, &external);
        assert_eq!(join.unmatched.len(), 2);
    }

    #[test]
    fn baseline_join_overall_is_pair_weighted() {
        // slices of different sizes; overall delta must be pair-weighted
        let mut rows = Vec::new();
        let mut external = Vec::new();
        let slices = [("city_council", 4, 0.1), ("private_data", 1, 0.6)];
        for (slice, count, delta) in slices {
            for i in 0..count {
                let m = format!("{slice}_{i}");
                let r = row(&m, slice, "a", (0.5, 0.5, 0.5));
                external.push(ExternalScore {
                    meeting_id: r.meeting_id.clone(),
                    model: "a".into(),
                    holistic_accuracy: 0.5 + delta,
                    holistic_coverage: 0.5,
                });
                rows.push(r);
            }
        }
        let join = external_baseline_join(&rows, &external);
        let overall = join.rows.iter().find(|r| r.scope == "overall").unwrap();
        // pair-weighted: (4*0.1 + 1*0.6)/5 = 0.2, not mean-of-slices 0.35
        assert!((overall.accuracy_delta - 0.2).abs() < 1e-12);
    }
}
