//! File-backed artifact store: bit-exact path templates, schema-validated
//! atomic reads/writes, the dataset-type sidecar manifest, and completion
//! scanning for resumable runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Serialize};

use crate::error::{EvalError, Result};
use crate::model::{CandidateSummary, DatasetType, EvaluationReport, GroundTruth, MeetingId, ModelLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    Transcript,
    GroundTruth,
    Candidate,
    EvaluationReport,
}

/// Root of the artifact tree plus the source label used in path templates.
#[derive(Debug, Clone)]
pub struct StoreRoot {
    pub base_dir: PathBuf,
    pub source_label: String,
}

/// Triples for which a schema-valid evaluation report exists on disk.
#[derive(Debug, Clone, Default)]
pub struct CompletionIndex {
    pub completed: BTreeSet<(MeetingId, String, String)>,
}

impl CompletionIndex {
    pub fn contains(&self, meeting: &MeetingId, variant: &str, model: &ModelLabel) -> bool {
        self.completed
            .contains(&(meeting.clone(), variant.to_string(), model.report_label.clone()))
    }

    pub fn len(&self) -> usize {
        self.completed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.completed.is_empty()
    }
}

impl StoreRoot {
    pub fn new(base_dir: impl Into<PathBuf>, source_label: impl Into<String>) -> Self {
        StoreRoot {
            base_dir: base_dir.into(),
            source_label: source_label.into(),
        }
    }

    /// Default `internal` source label.
    pub fn internal(base_dir: impl Into<PathBuf>) -> Self {
        StoreRoot::new(base_dir, "internal")
    }

    /// Bit-exact template expansion for each artifact kind.
    pub fn path_for(
        &self,
        kind: ArtifactKind,
        meeting_id: &MeetingId,
        variant: Option<&str>,
        model: Option<&ModelLabel>,
    ) -> Result<PathBuf> {
        let source = &self.source_label;
        let rel = match kind {
            ArtifactKind::Transcript => format!(
                "assets/transcripts/{source}/{meeting_id}/original_transcript.txt"
            ),
            ArtifactKind::GroundTruth => format!(
                "views/meeting_notes/ground_truth/{source}/{meeting_id}/meetingsummary/ground_truth.json"
            ),
            ArtifactKind::Candidate => {
                let variant = variant.ok_or_else(|| {
                    EvalError::Argument("candidate path requires a variant".into())
                })?;
                let model = model.ok_or_else(|| {
                    EvalError::Argument("candidate path requires a model".into())
                })?;
                format!(
                    "views/meeting_notes/candidate/{source}/{meeting_id}/{variant}/{}/baseline.md",
                    model.report_label
                )
            }
            ArtifactKind::EvaluationReport => {
                let variant = variant.ok_or_else(|| {
                    EvalError::Argument("evaluation report path requires a variant".into())
                })?;
                let model = model.ok_or_else(|| {
                    EvalError::Argument("evaluation report path requires a model".into())
                })?;
                format!(
                    "views/meeting_notes/evaluation/{source}/{meeting_id}/offline/evaluation_report_{variant}_{}.json",
                    model.report_label
                )
            }
        };
        Ok(self.base_dir.join(rel))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.base_dir.join("views/meeting_notes/manifest.csv")
    }

    /// Temp-stage GT artifacts live next to the final GT for later agreement
    /// recomputation.
    pub fn gt_tmp_dir(&self, meeting_id: &MeetingId) -> PathBuf {
        self.base_dir.join(format!(
            "views/meeting_notes/ground_truth/{}/{meeting_id}/meetingsummary/tmp",
            self.source_label
        ))
    }

    pub fn write_transcript(&self, meeting_id: &MeetingId, text: &str) -> Result<PathBuf> {
        let path = self.path_for(ArtifactKind::Transcript, meeting_id, None, None)?;
        atomic_write(&path, text.as_bytes())?;
        Ok(path)
    }

    pub fn read_transcript(&self, meeting_id: &MeetingId) -> Result<String> {
        let path = self.path_for(ArtifactKind::Transcript, meeting_id, None, None)?;
        fs::read_to_string(&path).map_err(|e| EvalError::io(path, e))
    }

    pub fn write_ground_truth(&self, gt: &GroundTruth) -> Result<PathBuf> {
        gt.validate()?;
        let path = self.path_for(ArtifactKind::GroundTruth, &gt.meeting_id, None, None)?;
        write_canonical_json(&path, gt)?;
        Ok(path)
    }

    pub fn read_ground_truth(&self, meeting_id: &MeetingId) -> Result<GroundTruth> {
        let path = self.path_for(ArtifactKind::GroundTruth, meeting_id, None, None)?;
        let gt: GroundTruth = read_json(&path)?;
        gt.validate()?;
        Ok(gt)
    }

    pub fn has_ground_truth(&self, meeting_id: &MeetingId) -> bool {
        self.path_for(ArtifactKind::GroundTruth, meeting_id, None, None)
            .map(|p| p.exists())
            .unwrap_or(false)
    }

    pub fn write_candidate(&self, candidate: &CandidateSummary) -> Result<PathBuf> {
        candidate.validate()?;
        let path = self.path_for(
            ArtifactKind::Candidate,
            &candidate.meeting_id,
            Some(&candidate.variant),
            Some(&candidate.model),
        )?;
        atomic_write(&path, candidate.body.as_bytes())?;
        Ok(path)
    }

    pub fn read_candidate(
        &self,
        meeting_id: &MeetingId,
        variant: &str,
        model: &ModelLabel,
    ) -> Result<CandidateSummary> {
        let path = self.path_for(ArtifactKind::Candidate, meeting_id, Some(variant), Some(model))?;
        let body = fs::read_to_string(&path).map_err(|e| EvalError::io(path, e))?;
        let candidate = CandidateSummary {
            meeting_id: meeting_id.clone(),
            variant: variant.to_string(),
            model: model.clone(),
            body,
        };
        candidate.validate()?;
        Ok(candidate)
    }

    pub fn has_candidate(&self, meeting_id: &MeetingId, variant: &str, model: &ModelLabel) -> bool {
        self.path_for(ArtifactKind::Candidate, meeting_id, Some(variant), Some(model))
            .map(|p| p.exists())
            .unwrap_or(false)
    }

    pub fn write_report(&self, report: &EvaluationReport) -> Result<PathBuf> {
        report.validate()?;
        let path = self.path_for(
            ArtifactKind::EvaluationReport,
            &report.meeting_id,
            Some(&report.variant),
            Some(&report.model),
        )?;
        write_canonical_json(&path, report)?;
        Ok(path)
    }

    pub fn read_report(
        &self,
        meeting_id: &MeetingId,
        variant: &str,
        model: &ModelLabel,
    ) -> Result<EvaluationReport> {
        let path = self.path_for(
            ArtifactKind::EvaluationReport,
            meeting_id,
            Some(variant),
            Some(model),
        )?;
        let report: EvaluationReport = read_json(&path)?;
        report.validate()?;
        Ok(report)
    }

    /// Write the sidecar manifest mapping meeting_id -> dataset_type.
    pub fn write_manifest(&self, entries: &BTreeMap<MeetingId, DatasetType>) -> Result<PathBuf> {
        let path = self.manifest_path();
        let mut out = String::from("meeting_id,dataset_type\n");
        for (meeting, dataset) in entries {
            out.push_str(&format!("{meeting},{dataset}\n"));
        }
        atomic_write(&path, out.as_bytes())?;
        Ok(path)
    }

    pub fn read_manifest(&self) -> Result<BTreeMap<MeetingId, DatasetType>> {
        let path = self.manifest_path();
        let mut reader = csv::Reader::from_path(&path)
            .map_err(|e| EvalError::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        let mut entries = BTreeMap::new();
        for record in reader.records() {
            let record = record
                .map_err(|e| EvalError::Config(format!("bad manifest row: {e}")))?;
            let meeting = MeetingId::new(record.get(0).unwrap_or_default())?;
            let dataset = DatasetType::from(record.get(1).unwrap_or_default().to_string());
            entries.insert(meeting, dataset);
        }
        Ok(entries)
    }

    /// Scan for schema-valid evaluation reports among the planned triples.
    /// Invalid files are reported as warnings, never silently skipped.
    pub fn scan_completed(
        &self,
        meetings: &[MeetingId],
        variants: &[String],
        models: &[ModelLabel],
    ) -> Result<(CompletionIndex, Vec<String>)> {
        let mut index = CompletionIndex::default();
        let mut warnings = Vec::new();
        for meeting in meetings {
            for variant in variants {
                for model in models {
                    let path = self.path_for(
                        ArtifactKind::EvaluationReport,
                        meeting,
                        Some(variant),
                        Some(model),
                    )?;
                    if !path.exists() {
                        continue;
                    }
                    match self.read_report(meeting, variant, model) {
                        Ok(_) => {
                            index.completed.insert((
                                meeting.clone(),
                                variant.clone(),
                                model.report_label.clone(),
                            ));
                        }
                        Err(e) => warnings.push(format!(
                            "invalid evaluation report {}: {e}",
                            path.display()
                        )),
                    }
                }
            }
        }
        Ok((index, warnings))
    }

    /// Generic JSON helpers for temp-stage artifacts.
    pub fn write_json_at<T: Serialize>(&self, path: &Path, value: &T) -> Result<()> {
        write_canonical_json(path, value)
    }

    pub fn read_json_at<T: DeserializeOwned>(&self, path: &Path) -> Result<T> {
        read_json(path)
    }
}

/// Atomic write: temp file in the target directory, then rename. A partial
/// file from an interrupted run is never visible under the final name.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .ok_or_else(|| EvalError::Argument(format!("path {} has no parent", path.display())))?;
    fs::create_dir_all(dir).map_err(|e| EvalError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| EvalError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| EvalError::io(path, e))?;
    tmp.flush().map_err(|e| EvalError::io(path, e))?;
    tmp.persist(path)
        .map_err(|e| EvalError::io(path, e.error))?;
    Ok(())
}

/// UTF-8 JSON with sorted keys and a trailing newline, so reruns are
/// byte-comparable. Routing through `serde_json::Value` sorts object keys.
pub fn write_canonical_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let value = serde_json::to_value(value).map_err(|e| EvalError::json(path, e))?;
    let mut text = serde_json::to_string_pretty(&value).map_err(|e| EvalError::json(path, e))?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| EvalError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| EvalError::json(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GtMetadata, Point, Topic};

    fn sample_gt(meeting: &str) -> GroundTruth {
        GroundTruth {
            meeting_id: MeetingId::new(meeting).unwrap(),
            dataset_type: DatasetType::CityCouncil,
            meeting_context: "ctx".into(),
            participants: vec![],
            topics: vec![Topic {
                topic_id: "t_001".into(),
                title: "Budget".into(),
                points: vec![Point {
                    id: "t_001_p_001".into(),
                    text: "approved".into(),
                }],
            }],
            decisions: vec![],
            metadata: Some(GtMetadata {
                num_topics: 1,
                num_points: 1,
                num_decisions: 0,
            }),
        }
    }

    #[test]
    fn path_templates_are_bit_exact() {
        let store = StoreRoot::internal("/data");
        let m = MeetingId::new("m1").unwrap();
        let model = ModelLabel::simple("gpt-41-mini").unwrap();
        assert_eq!(
            store
                .path_for(ArtifactKind::Transcript, &m, None, None)
                .unwrap(),
            PathBuf::from("/data/assets/transcripts/internal/m1/original_transcript.txt")
        );
        assert_eq!(
            store
                .path_for(ArtifactKind::GroundTruth, &m, None, None)
                .unwrap(),
            PathBuf::from(
                "/data/views/meeting_notes/ground_truth/internal/m1/meetingsummary/ground_truth.json"
            )
        );
        assert_eq!(
            store
                .path_for(ArtifactKind::Candidate, &m, Some("standard"), Some(&model))
                .unwrap(),
            PathBuf::from(
                "/data/views/meeting_notes/candidate/internal/m1/standard/gpt-41-mini/baseline.md"
            )
        );
        let gpt51 = ModelLabel::simple("gpt-51").unwrap();
        let report_path = store
            .path_for(ArtifactKind::EvaluationReport, &m, Some("standard"), Some(&gpt51))
            .unwrap();
        assert_eq!(
            report_path.file_name().unwrap().to_str().unwrap(),
            "evaluation_report_standard_gpt-51.json"
        );
    }

    #[test]
    fn missing_required_segment_is_argument_error() {
        let store = StoreRoot::internal("/data");
        let m = MeetingId::new("m1").unwrap();
        assert!(matches!(
            store.path_for(ArtifactKind::Candidate, &m, None, None),
            Err(EvalError::Argument(_))
        ));
    }

    #[test]
    fn path_templates_injective_over_sample() {
        let store = StoreRoot::internal("/data");
        let models = [
            ModelLabel::simple("a").unwrap(),
            ModelLabel::simple("b").unwrap(),
        ];
        let mut seen = BTreeSet::new();
        for m in ["m1", "m2"] {
            let m = MeetingId::new(m).unwrap();
            for kind in [ArtifactKind::Transcript, ArtifactKind::GroundTruth] {
                assert!(seen.insert(store.path_for(kind, &m, None, None).unwrap()));
            }
            for v in ["standard", "brief"] {
                for model in &models {
                    for kind in [ArtifactKind::Candidate, ArtifactKind::EvaluationReport] {
                        assert!(seen.insert(store.path_for(kind, &m, Some(v), Some(model)).unwrap()));
                    }
                }
            }
        }
    }

    #[test]
    fn gt_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = StoreRoot::internal(dir.path());
        let gt = sample_gt("m1");
        store.write_ground_truth(&gt).unwrap();
        let read = store.read_ground_truth(&gt.meeting_id).unwrap();
        assert_eq!(gt, read);
    }

    #[test]
    fn mismatched_counter_on_disk_is_schema_violation() {
        let dir = tempfile::tempdir().unwrap();
        let store = StoreRoot::internal(dir.path());
        let gt = sample_gt("m1");
        store.write_ground_truth(&gt).unwrap();
        // corrupt the stored counter directly
        let path = store
            .path_for(ArtifactKind::GroundTruth, &gt.meeting_id, None, None)
            .unwrap();
        let mut value: serde_json::Value = read_json(&path).unwrap();
        value["metadata"]["num_points"] = serde_json::json!(9);
        fs::write(&path, serde_json::to_string(&value).unwrap()).unwrap();
        let err = store.read_ground_truth(&gt.meeting_id).unwrap_err();
        assert!(err.to_string().contains("num_points"), "{err}");
    }

    #[test]
    fn canonical_json_is_sorted_and_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        write_canonical_json(&path, &serde_json::json!({"b": 1, "a": 2})).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.find("\"a\"").unwrap() < text.find("\"b\"").unwrap());
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn scan_excludes_corrupt_report_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let store = StoreRoot::internal(dir.path());
        let m = MeetingId::new("m1").unwrap();
        let model = ModelLabel::simple("a").unwrap();
        let path = store
            .path_for(ArtifactKind::EvaluationReport, &m, Some("standard"), Some(&model))
            .unwrap();
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, b"{ truncated").unwrap();
        let (index, warnings) = store
            .scan_completed(&[m], &["standard".into()], &[model])
            .unwrap();
        assert!(index.is_empty());
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("evaluation_report_standard_a.json"));
    }

    #[test]
    fn scan_empty_store_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let store = StoreRoot::internal(dir.path());
        let (index, warnings) = store
            .scan_completed(
                &[MeetingId::new("m1").unwrap()],
                &["standard".into()],
                &[ModelLabel::simple("a").unwrap()],
            )
            .unwrap();
        assert!(index.is_empty());
        assert!(warnings.is_empty());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = StoreRoot::internal(dir.path());
        let mut entries = BTreeMap::new();
        entries.insert(MeetingId::new("m1").unwrap(), DatasetType::CityCouncil);
        entries.insert(
            MeetingId::new("m2").unwrap(),
            DatasetType::WhitehousePressBriefings,
        );
        store.write_manifest(&entries).unwrap();
        assert_eq!(store.read_manifest().unwrap(), entries);
    }

    #[test]
    fn concurrent_writers_distinct_paths_both_intact() {
        let dir = tempfile::tempdir().unwrap();
        let store = std::sync::Arc::new(StoreRoot::internal(dir.path()));
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let store = store.clone();
                std::thread::spawn(move || {
                    let gt = sample_gt(&format!("m{i}"));
                    store.write_ground_truth(&gt).unwrap();
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        for i in 0..8 {
            let m = MeetingId::new(format!("m{i}")).unwrap();
            store.read_ground_truth(&m).unwrap();
        }
    }
}
