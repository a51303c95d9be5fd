//! Domain types shared across the pipeline.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};

/// Opaque meeting identifier, usable as a single path segment.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeetingId(String);

impl MeetingId {
    pub fn new(value: impl Into<String>) -> Result<Self> {
        let value = value.into();
        if value.is_empty() {
            return Err(EvalError::Argument("meeting id must be non-empty".into()));
        }
        if value
            .chars()
            .any(|c| c.is_whitespace() || c == '/' || c == '\\')
        {
            return Err(EvalError::Argument(format!(
                "meeting id `{value}` must not contain separators or whitespace"
            )));
        }
        Ok(MeetingId(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for MeetingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Benchmark slice a meeting belongs to. Open to new slices beyond the three
/// shipped dataset types.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum DatasetType {
    CityCouncil,
    PrivateData,
    WhitehousePressBriefings,
    Other(String),
}

impl DatasetType {
    pub fn as_str(&self) -> &str {
        match self {
            DatasetType::CityCouncil => "city_council",
            DatasetType::PrivateData => "private_data",
            DatasetType::WhitehousePressBriefings => "whitehouse_press_briefings",
            DatasetType::Other(s) => s,
        }
    }
}

impl From<String> for DatasetType {
    fn from(s: String) -> Self {
        match s.as_str() {
            "city_council" => DatasetType::CityCouncil,
            "private_data" => DatasetType::PrivateData,
            "whitehouse_press_briefings" => DatasetType::WhitehousePressBriefings,
            _ => DatasetType::Other(s),
        }
    }
}

impl From<DatasetType> for String {
    fn from(d: DatasetType) -> String {
        d.as_str().to_string()
    }
}

impl fmt::Display for DatasetType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Compact report label plus the canonical model name it maps to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModelLabel {
    pub report_label: String,
    pub canonical_name: String,
}

impl ModelLabel {
    pub fn new(report_label: impl Into<String>, canonical_name: impl Into<String>) -> Result<Self> {
        let report_label = report_label.into();
        if report_label.is_empty()
            || report_label
                .chars()
                .any(|c| c.is_whitespace() || c == '/' || c == '\\')
        {
            return Err(EvalError::Argument(format!(
                "report label `{report_label}` must be filename-safe"
            )));
        }
        Ok(ModelLabel {
            report_label,
            canonical_name: canonical_name.into(),
        })
    }

    /// Label where report label and canonical name coincide.
    pub fn simple(label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        ModelLabel::new(label.clone(), label)
    }
}

impl fmt::Display for ModelLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.report_label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Point {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub topic_id: String,
    pub title: String,
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtMetadata {
    pub num_topics: u64,
    pub num_points: u64,
    pub num_decisions: u64,
}

/// Typed meeting reference the candidates are scored against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub meeting_id: MeetingId,
    pub dataset_type: DatasetType,
    pub meeting_context: String,
    pub participants: Vec<Participant>,
    pub topics: Vec<Topic>,
    pub decisions: Vec<Decision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<GtMetadata>,
}

impl GroundTruth {
    /// Traversal counts: (topics, points, decisions).
    pub fn traversal_counts(&self) -> (u64, u64, u64) {
        let points: usize = self.topics.iter().map(|t| t.points.len()).sum();
        (
            self.topics.len() as u64,
            points as u64,
            self.decisions.len() as u64,
        )
    }

    /// All evaluable items (points then decisions) as (id, text).
    pub fn evaluable_items(&self) -> Vec<(&str, &str)> {
        let mut items: Vec<(&str, &str)> = Vec::new();
        for t in &self.topics {
            for p in &t.points {
                items.push((p.id.as_str(), p.text.as_str()));
            }
        }
        for d in &self.decisions {
            items.push((d.id.as_str(), d.text.as_str()));
        }
        items
    }

    pub fn evaluable_count(&self) -> u64 {
        let (_, points, decisions) = self.traversal_counts();
        points + decisions
    }

    /// A GT with zero evaluable points/decisions is never silently scored.
    pub fn is_degenerate(&self) -> bool {
        self.evaluable_count() == 0
    }

    /// Hard invariants; softer audit warnings live in the GT pipeline.
    pub fn validate(&self) -> Result<()> {
        let (topics, points, decisions) = self.traversal_counts();
        if let Some(meta) = &self.metadata {
            if meta.num_topics != topics {
                return Err(EvalError::schema(
                    "metadata.num_topics",
                    format!("counter {} != traversal count {topics}", meta.num_topics),
                ));
            }
            if meta.num_points != points {
                return Err(EvalError::schema(
                    "metadata.num_points",
                    format!("counter {} != traversal count {points}", meta.num_points),
                ));
            }
            if meta.num_decisions != decisions {
                return Err(EvalError::schema(
                    "metadata.num_decisions",
                    format!("counter {} != traversal count {decisions}", meta.num_decisions),
                ));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for (id, text) in self.evaluable_items() {
            if text.is_empty() {
                return Err(EvalError::schema(id, "empty item text"));
            }
            if !seen.insert(id.to_string()) {
                return Err(EvalError::schema(id, "duplicate item id"));
            }
        }
        for t in &self.topics {
            for p in &t.points {
                if !p.id.starts_with(&format!("{}_", t.topic_id)) {
                    return Err(EvalError::schema(
                        &p.id,
                        format!("point id does not embed parent topic id `{}`", t.topic_id),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// One application-generated summary under evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub meeting_id: MeetingId,
    pub variant: String,
    pub model: ModelLabel,
    pub body: String,
}

impl CandidateSummary {
    pub fn validate(&self) -> Result<()> {
        if self.body.is_empty() {
            return Err(EvalError::schema("body", "candidate body must be non-empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accurate,
    Inaccurate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueType {
    UnsupportedByGt,
    FabricatedFacts,
    FactualError,
    ChangedCertainty,
    ContradictsGt,
    ChangedNature,
}

impl IssueType {
    pub fn as_str(&self) -> &'static str {
        match self {
            IssueType::UnsupportedByGt => "unsupported_by_gt",
            IssueType::FabricatedFacts => "fabricated_facts",
            IssueType::FactualError => "factual_error",
            IssueType::ChangedCertainty => "changed_certainty",
            IssueType::ContradictsGt => "contradicts_gt",
            IssueType::ChangedNature => "changed_nature",
        }
    }
}

/// Per-claim verdict with optional issue label and GT alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimAssessment {
    pub claim_id: u64,
    pub text: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issue_type: Option<IssueType>,
    #[serde(default)]
    pub aligned_gt_ids: Vec<String>,
}

impl ClaimAssessment {
    pub fn validate(&self) -> Result<()> {
        match (self.verdict, self.issue_type.is_some()) {
            (Verdict::Inaccurate, false) => Err(EvalError::schema(
                "issue_type",
                "inaccurate verdict requires an issue label",
            )),
            (Verdict::Accurate, true) => Err(EvalError::schema(
                "issue_type",
                "accurate verdict must not carry an issue label",
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageState {
    Covered,
    Uncovered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetailLevel {
    Rich,
    Adequate,
    Sparse,
    Barebone,
}

/// Per-GT-item coverage state with detail score/level for covered items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtItemAssessment {
    pub gt_item_id: String,
    pub coverage_state: CoverageState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail_level: Option<DetailLevel>,
}

impl GtItemAssessment {
    /// `strict` requires detail on covered items; error runs may persist
    /// coverage states without detail when the completeness call failed.
    pub fn validate(&self, strict: bool) -> Result<()> {
        match self.coverage_state {
            CoverageState::Covered => {
                if strict && (self.detail_score.is_none() || self.detail_level.is_none()) {
                    return Err(EvalError::schema(
                        &self.gt_item_id,
                        "covered item missing detail_score/detail_level",
                    ));
                }
                if let Some(s) = self.detail_score {
                    if !(0.0..=1.0).contains(&s) {
                        return Err(EvalError::schema(
                            &self.gt_item_id,
                            format!("detail_score {s} outside [0,1]"),
                        ));
                    }
                }
            }
            CoverageState::Uncovered => {
                if self.detail_score.is_some() || self.detail_level.is_some() {
                    return Err(EvalError::schema(
                        &self.gt_item_id,
                        "uncovered item must not carry detail",
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeRunStatus {
    Ok,
    EvaluationError,
}

/// One judge's structured output for a meeting-model pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRun {
    pub judge: ModelLabel,
    pub status: JudgeRunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completeness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    #[serde(default)]
    pub claim_assessments: Vec<ClaimAssessment>,
    #[serde(default)]
    pub gt_assessments: Vec<GtItemAssessment>,
    #[serde(default)]
    pub explanations: BTreeMap<String, String>,
}

impl JudgeRun {
    pub fn validate(&self) -> Result<()> {
        let strict = self.status == JudgeRunStatus::Ok;
        if strict
            && (self.accuracy.is_none() || self.completeness.is_none() || self.coverage.is_none())
        {
            return Err(EvalError::schema(
                "judge_run",
                "ok status requires all three metric scores",
            ));
        }
        for (name, score) in [
            ("accuracy", self.accuracy),
            ("completeness", self.completeness),
            ("coverage", self.coverage),
        ] {
            if let Some(s) = score {
                if !(0.0..=1.0).contains(&s) {
                    return Err(EvalError::schema(name, format!("score {s} outside [0,1]")));
                }
            }
        }
        for c in &self.claim_assessments {
            c.validate()?;
        }
        for g in &self.gt_assessments {
            g.validate(strict)?;
        }
        Ok(())
    }
}

/// Persisted result for one meeting-model pair: two judge runs plus averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub meeting_id: MeetingId,
    pub dataset_type: DatasetType,
    pub model: ModelLabel,
    pub variant: String,
    pub claims: Vec<String>,
    pub judge_runs: Vec<JudgeRun>,
    pub accuracy_avg: f64,
    pub completeness_avg: f64,
    pub coverage_avg: f64,
}

fn mean_present(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    if present.is_empty() {
        None
    } else {
        Some(present.iter().sum::<f64>() / present.len() as f64)
    }
}

impl EvaluationReport {
    /// Recompute the `*_avg` fields from the stored judge runs.
    pub fn recompute_averages(&self) -> Option<(f64, f64, f64)> {
        Some((
            mean_present(self.judge_runs.iter().map(|r| r.accuracy))?,
            mean_present(self.judge_runs.iter().map(|r| r.completeness))?,
            mean_present(self.judge_runs.iter().map(|r| r.coverage))?,
        ))
    }

    pub fn validate(&self) -> Result<()> {
        if self.judge_runs.len() != 2 {
            return Err(EvalError::schema(
                "judge_runs",
                format!("expected exactly 2 judge runs, got {}", self.judge_runs.len()),
            ));
        }
        if self.judge_runs[0].judge == self.judge_runs[1].judge {
            return Err(EvalError::schema("judge_runs", "judges must be distinct"));
        }
        for run in &self.judge_runs {
            run.validate()?;
        }
        let (acc, comp, cov) = self
            .recompute_averages()
            .ok_or_else(|| EvalError::schema("judge_runs", "no scorable judge run"))?;
        for (name, stored, derived) in [
            ("accuracy_avg", self.accuracy_avg, acc),
            ("completeness_avg", self.completeness_avg, comp),
            ("coverage_avg", self.coverage_avg, cov),
        ] {
            if (stored - derived).abs() > 1e-9 {
                return Err(EvalError::schema(
                    name,
                    format!("stored {stored} does not match judge runs ({derived})"),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meeting_id_rejects_separators() {
        assert!(MeetingId::new("a/b").is_err());
        assert!(MeetingId::new("").is_err());
        assert!(MeetingId::new("a b").is_err());
        assert!(MeetingId::new("whpb_20240110_press").is_ok());
    }

    #[test]
    fn dataset_type_round_trips_open_extension() {
        let d: DatasetType = "board_meetings".to_string().into();
        assert_eq!(d, DatasetType::Other("board_meetings".into()));
        assert_eq!(String::from(d), "board_meetings");
        let c: DatasetType = "city_council".to_string().into();
        assert_eq!(c, DatasetType::CityCouncil);
    }

    #[test]
    fn claim_assessment_issue_iff_inaccurate() {
        let mut c = ClaimAssessment {
            claim_id: 1,
            text: "x".into(),
            verdict: Verdict::Inaccurate,
            issue_type: None,
            aligned_gt_ids: vec![],
        };
        assert!(c.validate().is_err());
        c.issue_type = Some(IssueType::UnsupportedByGt);
        assert!(c.validate().is_ok());
        c.verdict = Verdict::Accurate;
        assert!(c.validate().is_err());
    }

    #[test]
    fn gt_metadata_counter_mismatch_rejected() {
        let gt = GroundTruth {
            meeting_id: MeetingId::new("m1").unwrap(),
            dataset_type: DatasetType::CityCouncil,
            meeting_context: "ctx".into(),
            participants: vec![],
            topics: vec![Topic {
                topic_id: "t_001".into(),
                title: "T".into(),
                points: vec![Point {
                    id: "t_001_p_001".into(),
                    text: "p".into(),
                }],
            }],
            decisions: vec![],
            metadata: Some(GtMetadata {
                num_topics: 1,
                num_points: 2,
                num_decisions: 0,
            }),
        };
        let err = gt.validate().unwrap_err();
        assert!(err.to_string().contains("num_points"));
    }

    #[test]
    fn report_averages_must_match_runs() {
        let judge = |label: &str| ModelLabel::simple(label).unwrap();
        let run = |j: &str, acc: f64| JudgeRun {
            judge: judge(j),
            status: JudgeRunStatus::Ok,
            accuracy: Some(acc),
            completeness: Some(0.5),
            coverage: Some(0.5),
            claim_assessments: vec![],
            gt_assessments: vec![],
            explanations: BTreeMap::new(),
        };
        let mut report = EvaluationReport {
            meeting_id: MeetingId::new("m1").unwrap(),
            dataset_type: DatasetType::PrivateData,
            model: judge("gpt-41-mini"),
            variant: "standard".into(),
            claims: vec![],
            judge_runs: vec![run("a", 0.6), run("b", 0.8)],
            accuracy_avg: 0.7,
            completeness_avg: 0.5,
            coverage_avg: 0.5,
        };
        assert!(report.validate().is_ok());
        report.accuracy_avg = 0.75;
        assert!(report.validate().is_err());
    }
}
