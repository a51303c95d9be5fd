//! Pure metric mathematics over claim and GT-item assessments.
//!
//! Each metric accumulates integer counts (or a sum) and divides exactly once
//! at the end, so results are deterministic across platforms.

use crate::error::{EvalError, Result};
use crate::model::types::{
    ClaimAssessment, CoverageState, DetailLevel, GtItemAssessment, Verdict,
};

/// Fraction of claims judged accurate.
pub fn compute_accuracy(claims: &[ClaimAssessment]) -> Result<f64> {
    if claims.is_empty() {
        return Err(EvalError::DegenerateCandidate);
    }
    let accurate = claims
        .iter()
        .filter(|c| c.verdict == Verdict::Accurate)
        .count();
    Ok(accurate as f64 / claims.len() as f64)
}

/// Mean detail score over covered GT items; 0 when nothing is covered.
pub fn compute_completeness(items: &[GtItemAssessment]) -> Result<f64> {
    let mut sum = 0.0;
    let mut covered = 0usize;
    for item in items {
        if item.coverage_state == CoverageState::Covered {
            let score = item.detail_score.ok_or_else(|| {
                EvalError::schema(&item.gt_item_id, "covered item missing detail_score")
            })?;
            sum += score;
            covered += 1;
        }
    }
    if covered == 0 {
        Ok(0.0)
    } else {
        Ok(sum / covered as f64)
    }
}

/// Fraction of GT items judged covered.
pub fn compute_coverage(items: &[GtItemAssessment]) -> Result<f64> {
    if items.is_empty() {
        return Err(EvalError::DegenerateGroundTruth);
    }
    let covered = items
        .iter()
        .filter(|i| i.coverage_state == CoverageState::Covered)
        .count();
    Ok(covered as f64 / items.len() as f64)
}

/// Three-way capture reading of one GT-item assessment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptureClass {
    FullyCaptured,
    PartiallyCaptured,
    Missing,
}

pub fn classify_capture(item: &GtItemAssessment) -> CaptureClass {
    match item.coverage_state {
        CoverageState::Uncovered => CaptureClass::Missing,
        CoverageState::Covered => match item.detail_level {
            Some(DetailLevel::Rich) | Some(DetailLevel::Adequate) => CaptureClass::FullyCaptured,
            _ => CaptureClass::PartiallyCaptured,
        },
    }
}
