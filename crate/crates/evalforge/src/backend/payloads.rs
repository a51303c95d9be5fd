//! Typed response schemas per backend stage, and the validation gate every
//! payload passes before downstream use.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::Stage;
use crate::error::{EvalError, Result};
use crate::model::{ClaimAssessment, DetailLevel, Participant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftTopic {
    pub title: String,
    pub points: Vec<String>,
}

/// A draft GT: semantic structure only, identifiers assigned later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftGtPayload {
    pub meeting_context: String,
    #[serde(default)]
    pub participants: Vec<Participant>,
    pub topics: Vec<DraftTopic>,
    pub decisions: Vec<String>,
}

impl DraftGtPayload {
    pub fn items(&self) -> Vec<DraftItem> {
        let mut items = Vec::new();
        for t in &self.topics {
            for p in &t.points {
                items.push(DraftItem {
                    kind: ItemKind::Point,
                    topic: t.title.clone(),
                    text: p.clone(),
                });
            }
        }
        for d in &self.decisions {
            items.push(DraftItem {
                kind: ItemKind::Decision,
                topic: String::new(),
                text: d.clone(),
            });
        }
        items
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Point,
    Decision,
}

/// One draft GT item at alignment granularity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftItem {
    pub kind: ItemKind,
    /// Topic title; empty for decisions.
    #[serde(default)]
    pub topic: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainPair {
    pub a: DraftItem,
    pub b: DraftItem,
}

/// Stage-2 alignment buckets. Every draft item lands in exactly one bucket;
/// the engine enforces the partition count identity, not matching semantics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignPayload {
    pub fully_aligned: Vec<DraftItem>,
    pub single_aligned: Vec<DraftItem>,
    pub uncertain: Vec<UncertainPair>,
}

/// Stage-3 review outcome over single-aligned items and uncertain pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewPayload {
    pub kept: Vec<DraftItem>,
    pub modified: Vec<DraftItem>,
    pub dropped: u64,
    pub merged: Vec<DraftItem>,
    pub excluded: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePayload {
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimExtractPayload {
    pub claims: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyJudgePayload {
    pub assessments: Vec<ClaimAssessment>,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageJudgement {
    pub gt_item_id: String,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageJudgePayload {
    pub states: Vec<CoverageJudgement>,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetailJudgement {
    pub gt_item_id: String,
    pub detail_score: f64,
    pub detail_level: DetailLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletenessJudgePayload {
    pub details: Vec<DetailJudgement>,
    pub explanation: String,
}

fn parse<T: serde::de::DeserializeOwned>(stage: Stage, payload: &Value) -> Result<T> {
    serde_json::from_value(payload.clone()).map_err(|e| {
        EvalError::schema(
            stage.as_str(),
            format!("payload does not match stage schema: {e}"),
        )
    })
}

/// Validate a backend payload against its stage schema and invariants.
pub fn validate_stage_payload(stage: Stage, payload: &Value) -> Result<()> {
    match stage {
        Stage::GtDraft => {
            parse::<DraftGtPayload>(stage, payload)?;
        }
        Stage::GtAlign => {
            parse::<AlignPayload>(stage, payload)?;
        }
        Stage::GtReview => {
            parse::<ReviewPayload>(stage, payload)?;
        }
        Stage::Candidate => {
            let p: CandidatePayload = parse(stage, payload)?;
            if p.body.is_empty() {
                return Err(EvalError::schema("candidate.body", "empty candidate body"));
            }
        }
        Stage::ClaimExtract => {
            let p: ClaimExtractPayload = parse(stage, payload)?;
            if p.claims.iter().any(String::is_empty) {
                return Err(EvalError::schema("claims", "empty claim text"));
            }
        }
        Stage::JudgeAccuracy => {
            let p: AccuracyJudgePayload = parse(stage, payload)?;
            for assessment in &p.assessments {
                assessment.validate()?;
            }
        }
        Stage::JudgeCoverage => {
            parse::<CoverageJudgePayload>(stage, payload)?;
        }
        Stage::JudgeCompleteness => {
            let p: CompletenessJudgePayload = parse(stage, payload)?;
            for d in &p.details {
                if !(0.0..=1.0).contains(&d.detail_score) {
                    return Err(EvalError::schema(
                        &d.gt_item_id,
                        format!("detail_score {} outside [0,1]", d.detail_score),
                    ));
                }
            }
        }
    }
    Ok(())
}
