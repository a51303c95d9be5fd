//! Offline evaluation for one (GT, candidate) pair: claim extraction, three
//! metric calls per judge, judge averaging, and report persistence.

use std::collections::BTreeMap;

use serde_json::json;

use crate::backend::payloads::{
    AccuracyJudgePayload, ClaimExtractPayload, CompletenessJudgePayload, CoverageJudgePayload,
};
use crate::backend::{invoke_validated, Backend, BackendRequest, RetryPolicy, Stage, Telemetry};
use crate::error::{EvalError, Result};
use crate::model::{
    compute_accuracy, compute_completeness, compute_coverage, CandidateSummary, CoverageState,
    EvaluationReport, GroundTruth, GtItemAssessment, JudgeRun, JudgeRunStatus, ModelLabel,
};
use crate::store::StoreRoot;

/// One meeting-model pair to evaluate. Judges must be distinct; a degenerate
/// GT is rejected unless explicitly included.
pub struct EvaluationTask {
    pub gt: GroundTruth,
    pub candidate: CandidateSummary,
    pub judges: [ModelLabel; 2],
    pub extractor: ModelLabel,
    pub include_degenerate: bool,
}

impl EvaluationTask {
    pub fn validate(&self) -> Result<()> {
        if self.judges[0] == self.judges[1] {
            return Err(EvalError::Argument("judges must be distinct".into()));
        }
        if self.gt.meeting_id != self.candidate.meeting_id {
            return Err(EvalError::Argument(
                "gt and candidate refer to different meetings".into(),
            ));
        }
        if self.gt.is_degenerate() && !self.include_degenerate {
            return Err(EvalError::DegenerateGroundTruth);
        }
        self.candidate.validate()
    }
}

/// Telemetry record for one backend call, consumed by the run report.
#[derive(Debug, Clone)]
pub struct CallRecord {
    pub stage: Stage,
    pub telemetry: Telemetry,
}

/// Extract ordered claim texts from the candidate body.
pub fn extract_claims(
    backend: &dyn Backend,
    task: &EvaluationTask,
    retry: &RetryPolicy,
    calls: &mut Vec<CallRecord>,
) -> Result<Vec<String>> {
    let request = BackendRequest::new(
        Stage::ClaimExtract,
        &task.extractor,
        &task.gt.meeting_id,
        json!({ "candidate_body": task.candidate.body }),
    );
    let response = invoke_validated(backend, &request, retry)?;
    calls.push(CallRecord {
        stage: Stage::ClaimExtract,
        telemetry: response.telemetry,
    });
    let payload: ClaimExtractPayload = serde_json::from_value(response.payload)
        .map_err(|e| EvalError::schema("claim_extract", e.to_string()))?;
    if payload.claims.is_empty() {
        return Err(EvalError::DegenerateCandidate);
    }
    Ok(payload.claims)
}

/// Run one judge's three metric calls. A failed metric call flips the run to
/// evaluation_error and leaves that score absent; earlier scores persist.
fn run_judge(
    backend: &dyn Backend,
    task: &EvaluationTask,
    judge: &ModelLabel,
    claims: &[String],
    retry: &RetryPolicy,
    calls: &mut Vec<CallRecord>,
) -> JudgeRun {
    let meeting = &task.gt.meeting_id;
    let gt_item_ids: Vec<String> = task
        .gt
        .evaluable_items()
        .iter()
        .map(|(id, _)| id.to_string())
        .collect();
    let gt_items_payload: Vec<serde_json::Value> = task
        .gt
        .evaluable_items()
        .iter()
        .map(|(id, text)| json!({ "id": id, "text": text }))
        .collect();

    let mut run = JudgeRun {
        judge: judge.clone(),
        status: JudgeRunStatus::Ok,
        accuracy: None,
        completeness: None,
        coverage: None,
        claim_assessments: vec![],
        gt_assessments: vec![],
        explanations: BTreeMap::new(),
    };

    // accuracy
    let accuracy_request = BackendRequest::new(
        Stage::JudgeAccuracy,
        judge,
        meeting,
        json!({
            "claims": claims,
            "gt_item_ids": gt_item_ids,
            "gt_items": gt_items_payload,
        }),
    );
    match invoke_validated(backend, &accuracy_request, retry).and_then(|response| {
        calls.push(CallRecord {
            stage: Stage::JudgeAccuracy,
            telemetry: response.telemetry,
        });
        let payload: AccuracyJudgePayload = serde_json::from_value(response.payload)
            .map_err(|e| EvalError::schema("judge_accuracy", e.to_string()))?;
        if payload.assessments.len() != claims.len() {
            return Err(EvalError::schema(
                "judge_accuracy.assessments",
                format!("{} assessments for {} claims", payload.assessments.len(), claims.len()),
            ));
        }
        let accuracy = compute_accuracy(&payload.assessments)?;
        Ok((payload, accuracy))
    }) {
        Ok((payload, accuracy)) => {
            run.accuracy = Some(accuracy);
            run.claim_assessments = payload.assessments;
            run.explanations
                .insert("accuracy_explanation".into(), payload.explanation);
        }
        Err(e) => {
            run.status = JudgeRunStatus::EvaluationError;
            run.explanations
                .insert("accuracy_error".into(), e.to_string());
        }
    }

    // coverage, then completeness over this judge's covered set
    let coverage_request = BackendRequest::new(
        Stage::JudgeCoverage,
        judge,
        meeting,
        json!({
            "gt_item_ids": gt_item_ids,
            "gt_items": gt_items_payload,
            "candidate_body": task.candidate.body,
        }),
    );
    let coverage = invoke_validated(backend, &coverage_request, retry).and_then(|response| {
        calls.push(CallRecord {
            stage: Stage::JudgeCoverage,
            telemetry: response.telemetry,
        });
        let payload: CoverageJudgePayload = serde_json::from_value(response.payload)
            .map_err(|e| EvalError::schema("judge_coverage", e.to_string()))?;
        if payload.states.len() != gt_item_ids.len() {
            return Err(EvalError::schema(
                "judge_coverage.states",
                format!("{} states for {} gt items", payload.states.len(), gt_item_ids.len()),
            ));
        }
        Ok(payload)
    });
    match coverage {
        Ok(payload) => {
            run.gt_assessments = payload
                .states
                .iter()
                .map(|s| GtItemAssessment {
                    gt_item_id: s.gt_item_id.clone(),
                    coverage_state: if s.covered {
                        CoverageState::Covered
                    } else {
                        CoverageState::Uncovered
                    },
                    detail_score: None,
                    detail_level: None,
                })
                .collect();
            run.explanations
                .insert("coverage_explanation".into(), payload.explanation);
            match compute_coverage(&run.gt_assessments) {
                Ok(coverage) => run.coverage = Some(coverage),
                Err(e) => {
                    run.status = JudgeRunStatus::EvaluationError;
                    run.explanations
                        .insert("coverage_error".into(), e.to_string());
                }
            }

            let covered_ids: Vec<String> = run
                .gt_assessments
                .iter()
                .filter(|a| a.coverage_state == CoverageState::Covered)
                .map(|a| a.gt_item_id.clone())
                .collect();
            if covered_ids.is_empty() {
                // nothing covered: completeness is 0 by definition, no call
                run.completeness = Some(0.0);
            } else {
                let completeness_request = BackendRequest::new(
                    Stage::JudgeCompleteness,
                    judge,
                    meeting,
                    json!({
                        "covered_item_ids": covered_ids,
                        "candidate_body": task.candidate.body,
                    }),
                );
                match invoke_validated(backend, &completeness_request, retry).and_then(|response| {
                    calls.push(CallRecord {
                        stage: Stage::JudgeCompleteness,
                        telemetry: response.telemetry,
                    });
                    let payload: CompletenessJudgePayload =
                        serde_json::from_value(response.payload)
                            .map_err(|e| EvalError::schema("judge_completeness", e.to_string()))?;
                    let by_id: BTreeMap<&str, &crate::backend::payloads::DetailJudgement> =
                        payload.details.iter().map(|d| (d.gt_item_id.as_str(), d)).collect();
                    for assessment in &mut run.gt_assessments {
                        if assessment.coverage_state == CoverageState::Covered {
                            let detail = by_id.get(assessment.gt_item_id.as_str()).ok_or_else(|| {
                                EvalError::schema(
                                    &assessment.gt_item_id,
                                    "covered item missing from completeness response",
                                )
                            })?;
                            assessment.detail_score = Some(detail.detail_score);
                            assessment.detail_level = Some(detail.detail_level);
                        }
                    }
                    let completeness = compute_completeness(&run.gt_assessments)?;
                    Ok((completeness, payload.explanation))
                }) {
                    Ok((completeness, explanation)) => {
                        run.completeness = Some(completeness);
                        run.explanations
                            .insert("completeness_explanation".into(), explanation);
                    }
                    Err(e) => {
                        run.status = JudgeRunStatus::EvaluationError;
                        run.explanations
                            .insert("completeness_error".into(), e.to_string());
                        // detail may be partially attached; strip it so the
                        // stored run still validates
                        for assessment in &mut run.gt_assessments {
                            assessment.detail_score = None;
                            assessment.detail_level = None;
                        }
                    }
                }
            }
        }
        Err(e) => {
            run.status = JudgeRunStatus::EvaluationError;
            run.explanations
                .insert("coverage_error".into(), e.to_string());
        }
    }

    run
}

/// Evaluate one pair end to end and persist the report. Both judges failing
/// every metric is a task failure; a single failed judge degrades the
/// averages to the valid judge.
pub fn judge_pair(
    store: &StoreRoot,
    backend: &dyn Backend,
    task: &EvaluationTask,
    retry: &RetryPolicy,
    calls: &mut Vec<CallRecord>,
) -> Result<EvaluationReport> {
    task.validate()?;
    let claims = extract_claims(backend, task, retry, calls)?;

    let run_a = run_judge(backend, task, &task.judges[0], &claims, retry, calls);
    let run_b = run_judge(backend, task, &task.judges[1], &claims, retry, calls);

    let mut report = EvaluationReport {
        meeting_id: task.gt.meeting_id.clone(),
        dataset_type: task.gt.dataset_type.clone(),
        model: task.candidate.model.clone(),
        variant: task.candidate.variant.clone(),
        claims,
        judge_runs: vec![run_a, run_b],
        accuracy_avg: 0.0,
        completeness_avg: 0.0,
        coverage_avg: 0.0,
    };
    let (accuracy, completeness, coverage) = report.recompute_averages().ok_or_else(|| {
        EvalError::BackendSchemaError(format!(
            "both judges failed for {}/{}",
            report.meeting_id, report.model
        ))
    })?;
    report.accuracy_avg = accuracy;
    report.completeness_avg = completeness;
    report.coverage_avg = coverage;
    store.write_report(&report)?;
    Ok(report)
}
