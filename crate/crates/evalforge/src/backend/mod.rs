//! Pluggable boundary for all model calls. Each backend implements the
//! [`Backend`] trait and is registered by name; the orchestrator selects one
//! at runtime from config/CLI.

pub mod http;
pub mod mock;
pub mod payloads;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{EvalError, Result};
use crate::model::{MeetingId, ModelLabel};

/// Pipeline stage a backend call belongs to. The stage fixes the expected
/// response schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    GtDraft,
    GtAlign,
    GtReview,
    Candidate,
    ClaimExtract,
    JudgeAccuracy,
    JudgeCoverage,
    JudgeCompleteness,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::GtDraft => "gt_draft",
            Stage::GtAlign => "gt_align",
            Stage::GtReview => "gt_review",
            Stage::Candidate => "candidate",
            Stage::ClaimExtract => "claim_extract",
            Stage::JudgeAccuracy => "judge_accuracy",
            Stage::JudgeCoverage => "judge_coverage",
            Stage::JudgeCompleteness => "judge_completeness",
        }
    }

    /// Stage name used in telemetry exports.
    pub fn telemetry_name(&self) -> &'static str {
        match self {
            Stage::GtDraft => "gt_draft",
            Stage::GtAlign => "gt_align",
            Stage::GtReview => "gt_review",
            Stage::Candidate => "candidate_generation",
            Stage::ClaimExtract => "claim_extraction",
            Stage::JudgeAccuracy => "accuracy_evaluation",
            Stage::JudgeCoverage => "coverage_evaluation",
            Stage::JudgeCompleteness => "completeness_evaluation",
        }
    }

    /// Default versioned prompt-family tag. Contents are config-supplied and
    /// opaque to the engine.
    pub fn default_prompt_family(&self) -> &'static str {
        match self {
            Stage::Candidate => "standard_v1+format_v1",
            Stage::ClaimExtract => "claims_v2",
            _ => "gt_v1",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendRequest {
    pub stage: Stage,
    pub model: ModelLabel,
    pub meeting_id: MeetingId,
    pub input_payload: Value,
    pub prompt_family: String,
}

impl BackendRequest {
    pub fn new(stage: Stage, model: &ModelLabel, meeting_id: &MeetingId, input: Value) -> Self {
        BackendRequest {
            stage,
            model: model.clone(),
            meeting_id: meeting_id.clone(),
            input_payload: input,
            prompt_family: stage.default_prompt_family().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Telemetry {
    pub duration_secs: f64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendResponse {
    pub payload: Value,
    pub telemetry: Telemetry,
}

/// A model-call backend. Implementations must be safe for concurrent invoke.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn invoke(&self, request: &BackendRequest) -> Result<BackendResponse>;
}

/// Transport retries with bounded exponential backoff, plus one schema-repair
/// re-prompt. Schema-invalid output after the repair attempt surfaces as
/// `BackendSchemaError`, which marks the judge run `evaluation_error` rather
/// than aborting the batch.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub transport_attempts: u32,
    pub backoff_base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            transport_attempts: 3,
            backoff_base: Duration::from_millis(50),
        }
    }
}

impl RetryPolicy {
    /// Zero backoff, for mock-mode and tests.
    pub fn immediate(transport_attempts: u32) -> Self {
        RetryPolicy {
            transport_attempts,
            backoff_base: Duration::ZERO,
        }
    }
}

fn invoke_transport(
    backend: &dyn Backend,
    request: &BackendRequest,
    policy: &RetryPolicy,
) -> Result<BackendResponse> {
    let mut last = None;
    for attempt in 0..policy.transport_attempts.max(1) {
        match backend.invoke(request) {
            Err(EvalError::BackendUnavailable(msg)) => {
                last = Some(msg);
                if !policy.backoff_base.is_zero() {
                    std::thread::sleep(policy.backoff_base * 2u32.pow(attempt));
                }
            }
            other => return other,
        }
    }
    Err(EvalError::BackendUnavailable(
        last.unwrap_or_else(|| "transport failed".into()),
    ))
}

/// Invoke with retries and validate the payload against the stage schema.
/// Unvalidated payloads never reach scoring or aggregation.
pub fn invoke_validated(
    backend: &dyn Backend,
    request: &BackendRequest,
    policy: &RetryPolicy,
) -> Result<BackendResponse> {
    let response = invoke_transport(backend, request, policy)?;
    match payloads::validate_stage_payload(request.stage, &response.payload) {
        Ok(()) => Ok(response),
        Err(first_err) => {
            // one repair re-prompt, then fail the run
            let mut repair = request.clone();
            if let Value::Object(map) = &mut repair.input_payload {
                map.insert("repair".to_string(), Value::Bool(true));
            }
            let response = invoke_transport(backend, &repair, policy)?;
            payloads::validate_stage_payload(request.stage, &response.payload).map_err(|e| {
                EvalError::BackendSchemaError(format!(
                    "{} payload invalid after repair: {e} (first failure: {first_err})",
                    request.stage
                ))
            })?;
            Ok(response)
        }
    }
}

/// Settings a backend factory may consume; unused fields are ignored.
#[derive(Debug, Clone, Default)]
pub struct BackendSettings {
    pub seed: u64,
    pub script_path: Option<std::path::PathBuf>,
    pub api_base: Option<String>,
    pub api_key: Option<String>,
    /// Remote model id per report label, for the HTTP backend.
    pub model_ids: BTreeMap<String, String>,
    /// Artificial per-call latency for the mock, used by scheduling tests.
    pub mock_latency: Duration,
}

type BackendFactory = Box<dyn Fn(&BackendSettings) -> Result<Arc<dyn Backend>> + Send + Sync>;

/// Name-keyed registry of backend constructors.
pub struct BackendRegistry {
    factories: BTreeMap<String, BackendFactory>,
}

impl BackendRegistry {
    pub fn empty() -> Self {
        BackendRegistry {
            factories: BTreeMap::new(),
        }
    }

    /// Registry with the built-in `mock` and `http` backends.
    pub fn builtin() -> Self {
        let mut registry = BackendRegistry::empty();
        registry.register("mock", |settings| {
            Ok(Arc::new(mock::MockBackend::from_settings(settings)?) as Arc<dyn Backend>)
        });
        registry.register("http", |settings| {
            Ok(Arc::new(http::HttpBackend::from_settings(settings)?) as Arc<dyn Backend>)
        });
        registry
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        factory: impl Fn(&BackendSettings) -> Result<Arc<dyn Backend>> + Send + Sync + 'static,
    ) {
        self.factories.insert(name.into(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn create(&self, name: &str, settings: &BackendSettings) -> Result<Arc<dyn Backend>> {
        let factory = self.factories.get(name).ok_or_else(|| {
            EvalError::Config(format!(
                "unknown backend `{name}`; available: {}",
                self.names().join(", ")
            ))
        })?;
        factory(settings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct DownBackend;

    impl Backend for DownBackend {
        fn name(&self) -> &str {
            "down"
        }

        fn invoke(&self, _request: &BackendRequest) -> Result<BackendResponse> {
            Err(EvalError::BackendUnavailable("down".into()))
        }
    }

    #[test]
    fn transport_failure_exhausts_retries() {
        let backend = DownBackend;
        let request = BackendRequest::new(
            Stage::Candidate,
            &ModelLabel::simple("m").unwrap(),
            &MeetingId::new("x").unwrap(),
            serde_json::json!({}),
        );
        let err = invoke_validated(&backend, &request, &RetryPolicy::immediate(3)).unwrap_err();
        assert!(matches!(err, EvalError::BackendUnavailable(_)));
    }

    #[test]
    fn registry_knows_builtins_and_rejects_unknown() {
        let registry = BackendRegistry::builtin();
        assert_eq!(registry.names(), vec!["http", "mock"]);
        match registry.create("carrier-pigeon", &BackendSettings::default()) {
            Err(EvalError::Config(msg)) => assert!(msg.contains("http, mock")),
            _ => panic!("expected config error"),
        }
    }
}
