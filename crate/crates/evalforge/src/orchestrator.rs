//! Run planning and execution: bounded worker pool, per-meeting dependency
//! order, resume-by-scan, failure accounting, and the event log.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Deserialize;
use serde_json::json;

use crate::backend::{
    invoke_validated, Backend, BackendRegistry, BackendRequest, BackendSettings, RetryPolicy, Stage,
};
use crate::error::{EvalError, Result};
use crate::gt::{build_ground_truth, recover_agreement_stats, AgreementStats, GtConfig};
use crate::model::{CandidateSummary, DatasetType, MeetingId, ModelLabel};
use crate::report::{RunReport, TelemetryRecord};
use crate::scoring::{judge_pair, CallRecord, EvaluationTask};
use crate::store::StoreRoot;

/// Fully resolved run configuration. Precedence: CLI flags over environment
/// over config file over defaults.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub store_dir: PathBuf,
    pub source_label: String,
    pub reports_dir: PathBuf,
    pub models: Vec<ModelLabel>,
    pub variants: Vec<String>,
    pub judges: [ModelLabel; 2],
    pub extractor: ModelLabel,
    pub gt_drafter_a: ModelLabel,
    pub gt_drafter_b: ModelLabel,
    pub gt_reviewer: ModelLabel,
    pub concurrency: usize,
    pub resume: bool,
    pub seed: u64,
    pub backend: String,
    pub include_degenerate: bool,
    pub retries: u32,
    pub dataset_types: Option<Vec<DatasetType>>,
    /// (meeting_id, model report label) pairs excluded from the benchmark.
    pub exclude_pairs: Vec<(String, String)>,
    pub stamp: Option<String>,
    pub script_path: Option<PathBuf>,
    pub api_base: Option<String>,
    pub api_key: Option<String>,
    pub model_ids: BTreeMap<String, String>,
    pub retain_gt_temp: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.judges[0] == self.judges[1] {
            return Err(EvalError::Config("judges must be distinct".into()));
        }
        if self.concurrency == 0 {
            return Err(EvalError::Config("concurrency must be >= 1".into()));
        }
        if self.models.is_empty() {
            return Err(EvalError::Config("at least one model required".into()));
        }
        Ok(())
    }

    pub fn store(&self) -> StoreRoot {
        StoreRoot::new(&self.store_dir, &self.source_label)
    }

    pub fn backend_settings(&self) -> BackendSettings {
        BackendSettings {
            seed: self.seed,
            script_path: self.script_path.clone(),
            api_base: self.api_base.clone(),
            api_key: self.api_key.clone(),
            model_ids: self.model_ids.clone(),
            mock_latency: std::time::Duration::ZERO,
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        if self.backend == "mock" {
            RetryPolicy::immediate(self.retries.max(1))
        } else {
            RetryPolicy {
                transport_attempts: self.retries.max(1),
                ..RetryPolicy::default()
            }
        }
    }
}

/// Serde view of the TOML config file; every field optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub store_dir: Option<PathBuf>,
    pub source_label: Option<String>,
    pub reports_dir: Option<PathBuf>,
    pub models: Option<Vec<String>>,
    pub variants: Option<Vec<String>>,
    pub judges: Option<Vec<String>>,
    pub extractor: Option<String>,
    pub gt_drafter_a: Option<String>,
    pub gt_drafter_b: Option<String>,
    pub gt_reviewer: Option<String>,
    pub concurrency: Option<usize>,
    pub resume: Option<bool>,
    pub seed: Option<u64>,
    pub backend: Option<String>,
    pub include_degenerate: Option<bool>,
    pub retries: Option<u32>,
    pub dataset_types: Option<Vec<String>>,
    pub exclude_pairs: Option<Vec<[String; 2]>>,
    pub stamp: Option<String>,
    pub script_path: Option<PathBuf>,
    pub model_ids: Option<BTreeMap<String, String>>,
    pub retain_gt_temp: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
        toml::from_str(&text).map_err(|e| EvalError::Config(format!("bad config file: {e}")))
    }
}

fn labels(names: &[String]) -> Result<Vec<ModelLabel>> {
    names.iter().map(|n| ModelLabel::simple(n.clone())).collect()
}

/// Merge file config, environment, and defaults into a RunConfig. CLI-level
/// overrides are applied by the caller afterwards.
pub fn resolve_config(file: FileConfig) -> Result<RunConfig> {
    let judges = match &file.judges {
        Some(pair) if pair.len() == 2 => [
            ModelLabel::simple(pair[0].clone())?,
            ModelLabel::simple(pair[1].clone())?,
        ],
        Some(_) => return Err(EvalError::Config("judges must list exactly 2 models".into())),
        None => [
            ModelLabel::simple("judge-a")?,
            ModelLabel::simple("judge-b")?,
        ],
    };
    let config = RunConfig {
        store_dir: file.store_dir.unwrap_or_else(|| PathBuf::from("store")),
        source_label: file.source_label.unwrap_or_else(|| "internal".into()),
        reports_dir: file.reports_dir.unwrap_or_else(|| PathBuf::from("reports")),
        models: labels(&file.models.unwrap_or_else(|| {
            vec!["model-a".into(), "model-b".into(), "model-c".into()]
        }))?,
        variants: file.variants.unwrap_or_else(|| vec!["standard".into()]),
        judges,
        extractor: ModelLabel::simple(file.extractor.unwrap_or_else(|| "extractor".into()))?,
        gt_drafter_a: ModelLabel::simple(file.gt_drafter_a.unwrap_or_else(|| "drafter-a".into()))?,
        gt_drafter_b: ModelLabel::simple(file.gt_drafter_b.unwrap_or_else(|| "drafter-b".into()))?,
        gt_reviewer: ModelLabel::simple(file.gt_reviewer.unwrap_or_else(|| "reviewer".into()))?,
        concurrency: file.concurrency.unwrap_or(2),
        resume: file.resume.unwrap_or(false),
        seed: file.seed.unwrap_or(0),
        backend: file.backend.unwrap_or_else(|| "mock".into()),
        include_degenerate: file.include_degenerate.unwrap_or(false),
        retries: file.retries.unwrap_or(3),
        dataset_types: file
            .dataset_types
            .map(|ds| ds.into_iter().map(DatasetType::from).collect()),
        exclude_pairs: file
            .exclude_pairs
            .unwrap_or_default()
            .into_iter()
            .map(|[m, model]| (m, model))
            .collect(),
        stamp: file.stamp,
        script_path: file.script_path,
        api_base: std::env::var("EVALFORGE_API_BASE").ok(),
        api_key: std::env::var("EVALFORGE_API_KEY").ok(),
        model_ids: file.model_ids.unwrap_or_default(),
        retain_gt_temp: file.retain_gt_temp.unwrap_or(true),
    };
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    GtBuild,
    CandidateGen,
    Evaluate,
}

impl TaskKind {
    fn as_str(&self) -> &'static str {
        match self {
            TaskKind::GtBuild => "gt_build",
            TaskKind::CandidateGen => "candidate_gen",
            TaskKind::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlannedTask {
    pub kind: TaskKind,
    pub meeting_id: MeetingId,
    pub dataset_type: DatasetType,
    /// Empty for gt_build.
    pub variant: String,
    /// None for gt_build.
    pub model: Option<ModelLabel>,
    /// Resume found this task's artifact already valid on disk.
    pub reused: bool,
}

impl PlannedTask {
    pub fn task_id(&self) -> String {
        match &self.model {
            Some(model) => format!(
                "{}/{}/{}/{}",
                self.kind.as_str(),
                self.meeting_id,
                self.variant,
                model.report_label
            ),
            None => format!("{}/{}", self.kind.as_str(), self.meeting_id),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TaskPlan {
    /// Per-meeting task lists in dependency order.
    pub meetings: Vec<(MeetingId, Vec<PlannedTask>)>,
}

impl TaskPlan {
    pub fn planned(&self) -> u64 {
        self.meetings.iter().map(|(_, t)| t.len() as u64).sum()
    }

    pub fn reused(&self) -> u64 {
        self.meetings
            .iter()
            .flat_map(|(_, t)| t)
            .filter(|t| t.reused)
            .count() as u64
    }

    pub fn evaluation_tasks(&self) -> impl Iterator<Item = &PlannedTask> {
        self.meetings
            .iter()
            .flat_map(|(_, t)| t)
            .filter(|t| t.kind == TaskKind::Evaluate)
    }
}

/// Stage filter for the stage-specific subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageFilter {
    All,
    GtOnly,
    CandidatesOnly,
    EvaluateOnly,
}

/// Build a stage-ordered plan from the manifest. Resume marks tasks with
/// valid artifacts as reused; stage filters still include upstream stages so
/// dependency checks stay explicit.
pub fn plan(config: &RunConfig, filter: StageFilter) -> Result<TaskPlan> {
    let store = config.store();
    let manifest = store.read_manifest()?;
    let mut offenders = Vec::new();
    let excluded: BTreeSet<(&str, &str)> = config
        .exclude_pairs
        .iter()
        .map(|(m, model)| (m.as_str(), model.as_str()))
        .collect();

    let selected: Vec<(&MeetingId, &DatasetType)> = manifest
        .iter()
        .filter(|(_, dataset)| {
            config
                .dataset_types
                .as_ref()
                .map_or(true, |allowed| allowed.contains(dataset))
        })
        .collect();
    if selected.is_empty() {
        return Err(EvalError::PlanError("manifest selects no meetings".into()));
    }
    for (meeting, _) in &selected {
        let path = store.path_for(crate::store::ArtifactKind::Transcript, meeting, None, None)?;
        if !path.exists() {
            offenders.push(format!("{meeting}: transcript missing at {}", path.display()));
        }
    }
    if !offenders.is_empty() {
        return Err(EvalError::PlanError(format!(
            "manifest/store inconsistency: {}",
            offenders.join("; ")
        )));
    }

    let meeting_ids: Vec<MeetingId> = selected.iter().map(|(m, _)| (*m).clone()).collect();
    let (completed, _warnings) =
        store.scan_completed(&meeting_ids, &config.variants, &config.models)?;

    let mut meetings = Vec::new();
    for (meeting, dataset) in selected {
        let mut tasks = Vec::new();
        let want_gt = matches!(filter, StageFilter::All | StageFilter::GtOnly);
        let want_candidates = matches!(filter, StageFilter::All | StageFilter::CandidatesOnly);
        let want_eval = matches!(filter, StageFilter::All | StageFilter::EvaluateOnly);
        if want_gt {
            tasks.push(PlannedTask {
                kind: TaskKind::GtBuild,
                meeting_id: meeting.clone(),
                dataset_type: dataset.clone(),
                variant: String::new(),
                model: None,
                reused: config.resume && store.has_ground_truth(meeting),
            });
        }
        for variant in &config.variants {
            for model in &config.models {
                if excluded.contains(&(meeting.as_str(), model.report_label.as_str())) {
                    continue;
                }
                if want_candidates {
                    tasks.push(PlannedTask {
                        kind: TaskKind::CandidateGen,
                        meeting_id: meeting.clone(),
                        dataset_type: dataset.clone(),
                        variant: variant.clone(),
                        model: Some(model.clone()),
                        reused: config.resume && store.has_candidate(meeting, variant, model),
                    });
                }
                if want_eval {
                    tasks.push(PlannedTask {
                        kind: TaskKind::Evaluate,
                        meeting_id: meeting.clone(),
                        dataset_type: dataset.clone(),
                        variant: variant.clone(),
                        model: Some(model.clone()),
                        reused: config.resume && completed.contains(meeting, variant, model),
                    });
                }
            }
        }
        meetings.push((meeting.clone(), tasks));
    }
    Ok(TaskPlan { meetings })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Succeeded,
    Reused,
    Failed,
    Exception,
    SkippedDependency,
    SkippedDegenerate,
}

impl Outcome {
    fn as_str(&self) -> &'static str {
        match self {
            Outcome::Succeeded => "succeeded",
            Outcome::Reused => "reused",
            Outcome::Failed => "failed",
            Outcome::Exception => "exception",
            Outcome::SkippedDependency => "skipped_dependency",
            Outcome::SkippedDegenerate => "skipped_degenerate",
        }
    }
}

/// Shared mutable state across workers.
struct RunState {
    outcomes: Mutex<Vec<(String, Outcome)>>,
    telemetry: Mutex<Vec<TelemetryRecord>>,
    agreement: Mutex<Vec<AgreementStats>>,
    warnings: Mutex<Vec<String>>,
    event_log: Mutex<Box<dyn Write + Send>>,
}

impl RunState {
    fn record(&self, task_id: &str, stage: &str, outcome: Outcome, duration_secs: f64) {
        self.outcomes
            .lock()
            .unwrap()
            .push((task_id.to_string(), outcome));
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut log = self.event_log.lock().unwrap();
        let _ = writeln!(
            log,
            "{timestamp},{task_id},{stage},{},{duration_secs:.3}",
            outcome.as_str()
        );
    }

    fn warn(&self, message: String) {
        self.warnings.lock().unwrap().push(message);
    }

    fn push_telemetry(&self, calls: &[CallRecord]) {
        let mut telemetry = self.telemetry.lock().unwrap();
        for call in calls {
            telemetry.push(TelemetryRecord {
                stage: call.stage.telemetry_name().to_string(),
                duration_secs: call.telemetry.duration_secs,
                total_tokens: Some(call.telemetry.prompt_tokens + call.telemetry.completion_tokens),
            });
        }
    }
}

fn classify_error(err: &EvalError) -> Outcome {
    match err {
        // typed backend/validation errors are failures; anything else is an
        // exception
        EvalError::BackendUnavailable(_)
        | EvalError::BackendSchemaError(_)
        | EvalError::SchemaViolation { .. }
        | EvalError::GtConstruction { .. }
        | EvalError::MockScriptMiss(_)
        | EvalError::DegenerateCandidate => Outcome::Failed,
        _ => Outcome::Exception,
    }
}

fn run_meeting(
    config: &RunConfig,
    store: &StoreRoot,
    backend: &dyn Backend,
    tasks: &[PlannedTask],
    state: &RunState,
) {
    let retry = config.retry_policy();
    let mut dependency_broken = false;
    for task in tasks {
        let task_id = task.task_id();
        if task.reused {
            state.record(&task_id, task.kind.as_str(), Outcome::Reused, 0.0);
            continue;
        }
        if dependency_broken {
            state.record(&task_id, task.kind.as_str(), Outcome::SkippedDependency, 0.0);
            continue;
        }
        let started = Instant::now();
        let result: Result<Option<Outcome>> = match task.kind {
            TaskKind::GtBuild => (|| {
                let transcript = store.read_transcript(&task.meeting_id)?;
                let gt_config = GtConfig {
                    backend,
                    drafter_a: config.gt_drafter_a.clone(),
                    drafter_b: config.gt_drafter_b.clone(),
                    reviewer: config.gt_reviewer.clone(),
                    retry,
                    retain_temp_artifacts: config.retain_gt_temp,
                };
                let (_, stats) = build_ground_truth(
                    store,
                    &task.meeting_id,
                    task.dataset_type.clone(),
                    &transcript,
                    &gt_config,
                )?;
                state.agreement.lock().unwrap().push(stats);
                Ok(None)
            })(),
            TaskKind::CandidateGen => (|| {
                let model = task.model.as_ref().unwrap();
                let transcript = store.read_transcript(&task.meeting_id)?;
                let request = BackendRequest::new(
                    Stage::Candidate,
                    model,
                    &task.meeting_id,
                    json!({ "transcript": transcript, "variant": task.variant }),
                );
                let response = invoke_validated(backend, &request, &retry)?;
                state.push_telemetry(&[CallRecord {
                    stage: Stage::Candidate,
                    telemetry: response.telemetry,
                }]);
                let body = response.payload["body"]
                    .as_str()
                    .ok_or_else(|| EvalError::schema("candidate.body", "not a string"))?
                    .to_string();
                store.write_candidate(&CandidateSummary {
                    meeting_id: task.meeting_id.clone(),
                    variant: task.variant.clone(),
                    model: model.clone(),
                    body,
                })?;
                Ok(None)
            })(),
            TaskKind::Evaluate => (|| {
                let model = task.model.as_ref().unwrap();
                let gt = store.read_ground_truth(&task.meeting_id)?;
                if gt.is_degenerate() && !config.include_degenerate {
                    state.warn(format!(
                        "{}: degenerate ground truth, evaluation skipped",
                        task.meeting_id
                    ));
                    return Ok(Some(Outcome::SkippedDegenerate));
                }
                let candidate = store.read_candidate(&task.meeting_id, &task.variant, model)?;
                let eval_task = EvaluationTask {
                    gt,
                    candidate,
                    judges: config.judges.clone(),
                    extractor: config.extractor.clone(),
                    include_degenerate: config.include_degenerate,
                };
                let mut calls = Vec::new();
                let result = judge_pair(store, backend, &eval_task, &retry, &mut calls);
                state.push_telemetry(&calls);
                result.map(|_| None)
            })(),
        };
        let duration = started.elapsed().as_secs_f64();
        match result {
            Ok(Some(outcome)) => state.record(&task_id, task.kind.as_str(), outcome, duration),
            Ok(None) => state.record(&task_id, task.kind.as_str(), Outcome::Succeeded, duration),
            Err(err) => {
                let outcome = classify_error(&err);
                state.warn(format!("{task_id}: {err}"));
                state.record(&task_id, task.kind.as_str(), outcome, duration);
                // downstream tasks for this meeting depend on this artifact
                dependency_broken = true;
            }
        }
    }
}

/// Execution result: the run report plus side outputs needed by reporting.
pub struct ExecutionResult {
    pub report: RunReport,
    pub telemetry: Vec<TelemetryRecord>,
    pub agreement: Vec<AgreementStats>,
}

/// Execute a plan with at most `config.concurrency` meetings in flight.
/// Individual task failures never abort the batch.
pub fn execute(config: &RunConfig, task_plan: &TaskPlan) -> Result<ExecutionResult> {
    let store = config.store();
    let registry = BackendRegistry::builtin();
    let backend = registry.create(&config.backend, &config.backend_settings())?;

    std::fs::create_dir_all(&config.reports_dir)
        .map_err(|e| EvalError::io(&config.reports_dir, e))?;
    let log_path = config.reports_dir.join("events.log");
    let log_file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| EvalError::io(&log_path, e))?;

    let state = RunState {
        outcomes: Mutex::new(Vec::new()),
        telemetry: Mutex::new(Vec::new()),
        agreement: Mutex::new(Vec::new()),
        warnings: Mutex::new(Vec::new()),
        event_log: Mutex::new(Box::new(log_file)),
    };

    let started = Instant::now();
    let started_epoch = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);

    let next = AtomicUsize::new(0);
    let workers = config.concurrency.min(task_plan.meetings.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                let Some((_, tasks)) = task_plan.meetings.get(index) else {
                    break;
                };
                run_meeting(config, &store, backend.as_ref(), tasks, &state);
            });
        }
    });

    // agreement stats for meetings whose GT build was reused this run
    {
        let mut agreement = state.agreement.lock().unwrap();
        let built: BTreeSet<MeetingId> =
            agreement.iter().map(|s| s.meeting_id.clone()).collect();
        for (meeting, _) in &task_plan.meetings {
            if !built.contains(meeting) {
                agreement.push(recover_agreement_stats(&store, meeting));
            }
        }
        agreement.sort_by(|a, b| a.meeting_id.cmp(&b.meeting_id));
    }

    let outcomes = state.outcomes.into_inner().unwrap();
    let count = |o: Outcome| outcomes.iter().filter(|(_, x)| *x == o).count() as u64;
    let reused = count(Outcome::Reused);
    let failed = count(Outcome::Failed);
    let exceptions = count(Outcome::Exception);
    let skipped_dependency = count(Outcome::SkippedDependency);
    let skipped_degenerate = count(Outcome::SkippedDegenerate);
    let succeeded = count(Outcome::Succeeded);
    let failed_task_ids: Vec<String> = outcomes
        .iter()
        .filter(|(_, o)| matches!(o, Outcome::Failed | Outcome::Exception))
        .map(|(id, _)| id.clone())
        .collect();

    // post-run scan for missing evaluation reports, degenerate skips excepted
    let degenerate_skipped: BTreeSet<&str> = outcomes
        .iter()
        .filter(|(_, o)| *o == Outcome::SkippedDegenerate)
        .map(|(id, _)| id.as_str())
        .collect();
    let mut missing_reports = 0u64;
    for task in task_plan.evaluation_tasks() {
        if degenerate_skipped.contains(task.task_id().as_str()) {
            continue;
        }
        let model = task.model.as_ref().unwrap();
        if store
            .read_report(&task.meeting_id, &task.variant, model)
            .is_err()
        {
            missing_reports += 1;
        }
    }

    let finished_epoch = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let report = RunReport {
        started_epoch_secs: started_epoch,
        finished_epoch_secs: finished_epoch,
        wall_duration_secs: started.elapsed().as_secs_f64(),
        concurrency: config.concurrency,
        planned: task_plan.planned(),
        reused,
        // every non-reused task was attempted, whatever the outcome
        executed: succeeded + failed + exceptions + skipped_dependency + skipped_degenerate,
        failed,
        exceptions,
        missing_reports,
        failed_task_ids,
        skipped_dependency,
        warnings: state.warnings.into_inner().unwrap(),
    };
    Ok(ExecutionResult {
        report,
        telemetry: state.telemetry.into_inner().unwrap(),
        agreement: state.agreement.into_inner().unwrap(),
    })
}
