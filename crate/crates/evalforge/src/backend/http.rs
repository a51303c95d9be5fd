//! OpenAI-compatible HTTP backend over blocking reqwest. The remote model is
//! asked for a single JSON object; transport and HTTP errors surface as
//! `BackendUnavailable` so the retry policy applies.

use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::{json, Value};

use crate::backend::{Backend, BackendRequest, BackendResponse, BackendSettings, Telemetry};
use crate::error::{EvalError, Result};

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    api_base: String,
    api_key: String,
    /// report label to remote model id; labels absent here pass through as-is
    model_ids: std::collections::BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

#[derive(Deserialize, Default)]
struct ChatUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl HttpBackend {
    pub fn from_settings(settings: &BackendSettings) -> Result<Self> {
        let api_base = settings
            .api_base
            .clone()
            .ok_or_else(|| EvalError::Config("http backend requires an API base URL".into()))?;
        let api_key = settings
            .api_key
            .clone()
            .ok_or_else(|| EvalError::Config("http backend requires an API key".into()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| EvalError::Config(format!("http client init failed: {e}")))?;
        Ok(HttpBackend {
            client,
            api_base,
            api_key,
            model_ids: settings.model_ids.clone(),
        })
    }

    fn remote_model_id<'a>(&'a self, report_label: &'a str) -> &'a str {
        self.model_ids
            .get(report_label)
            .map(String::as_str)
            .unwrap_or(report_label)
    }
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn invoke(&self, request: &BackendRequest) -> Result<BackendResponse> {
        let url = format!("{}/chat/completions", self.api_base.trim_end_matches('/'));
        let body = json!({
            "model": self.remote_model_id(&request.model.report_label),
            "response_format": { "type": "json_object" },
            "messages": [
                {
                    "role": "system",
                    "content": format!(
                        "You are one stage of a summary evaluation pipeline. \
                         Stage: {}. Prompt family: {}. Respond with a single JSON object.",
                        request.stage, request.prompt_family
                    )
                },
                {
                    "role": "user",
                    "content": serde_json::to_string(&request.input_payload)
                        .map_err(|e| EvalError::Config(format!("unserializable input: {e}")))?
                }
            ]
        });

        let started = Instant::now();
        let response = self
            .client
            .post(&url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| EvalError::BackendUnavailable(format!("request to {url} failed: {e}")))?;
        if !response.status().is_success() {
            return Err(EvalError::BackendUnavailable(format!(
                "{url} returned {}",
                response.status()
            )));
        }
        let chat: ChatResponse = response
            .json()
            .map_err(|e| EvalError::BackendUnavailable(format!("bad response envelope: {e}")))?;
        let duration_secs = started.elapsed().as_secs_f64();

        let content = chat
            .choices
            .first()
            .map(|c| c.message.content.as_str())
            .ok_or_else(|| EvalError::BackendUnavailable("response had no choices".into()))?;
        // content that is not JSON is a schema failure, not a transport one,
        // so the repair re-prompt path handles it
        let payload: Value = serde_json::from_str(content).unwrap_or(Value::Null);
        let usage = chat.usage.unwrap_or_default();
        Ok(BackendResponse {
            payload,
            telemetry: Telemetry {
                duration_secs,
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn requires_base_and_key() {
        let mut settings = BackendSettings::default();
        assert!(HttpBackend::from_settings(&settings).is_err());
        settings.api_base = Some("http://localhost:9".into());
        assert!(HttpBackend::from_settings(&settings).is_err());
        settings.api_key = Some("k".into());
        assert!(HttpBackend::from_settings(&settings).is_ok());
    }

    #[test]
    fn unreachable_host_is_backend_unavailable() {
        let settings = BackendSettings {
            api_base: Some("http://127.0.0.1:9/v1".into()),
            api_key: Some("k".into()),
            ..Default::default()
        };
        let backend = HttpBackend::from_settings(&settings).unwrap();
        let request = BackendRequest::new(
            crate::backend::Stage::Candidate,
            &crate::model::ModelLabel::simple("m").unwrap(),
            &crate::model::MeetingId::new("x").unwrap(),
            json!({}),
        );
        assert!(matches!(
            backend.invoke(&request),
            Err(EvalError::BackendUnavailable(_))
        ));
    }

    #[test]
    fn model_id_mapping_falls_back_to_label() {
        let settings = BackendSettings {
            api_base: Some("http://localhost/v1".into()),
            api_key: Some("k".into()),
            model_ids: [("gpt-51".to_string(), "gpt-5.1-2025".to_string())]
                .into_iter()
                .collect(),
            ..Default::default()
        };
        let backend = HttpBackend::from_settings(&settings).unwrap();
        assert_eq!(backend.remote_model_id("gpt-51"), "gpt-5.1-2025");
        assert_eq!(backend.remote_model_id("unmapped"), "unmapped");
    }
}
