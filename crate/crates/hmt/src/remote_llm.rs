//! Chat-completions client for an OpenAI-compatible endpoint.

use std::time::Duration;

use hmt_core::llm::{LanguageModel, LlmError, Prompt};
use serde_json::{json, Value};

pub const ENDPOINT_VAR: &str = "LLM_ENDPOINT";
pub const API_KEY_VAR: &str = "LLM_API_KEY";
pub const MODEL_VAR: &str = "LLM_MODEL";
const DEFAULT_MODEL: &str = "gpt-4o-mini";

#[derive(Debug)]
pub struct RemoteLlm {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    http: reqwest::blocking::Client,
}

impl RemoteLlm {
    /// `endpoint` is the full chat-completions URL.
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, model: impl Into<String>) -> Self {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .expect("http client builds");
        Self {
            endpoint: endpoint.into(),
            api_key,
            model: model.into(),
            http,
        }
    }

    /// Reads `LLM_ENDPOINT`, `LLM_API_KEY` and `LLM_MODEL`.
    pub fn from_env() -> Result<Self, LlmError> {
        let endpoint = std::env::var(ENDPOINT_VAR)
            .map_err(|_| LlmError::Unavailable(format!("{ENDPOINT_VAR} is not set")))?;
        let key = std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty());
        let model = std::env::var(MODEL_VAR).unwrap_or_else(|_| DEFAULT_MODEL.to_string());
        Ok(Self::new(endpoint, key, model))
    }

    fn body(&self, prompt: &Prompt) -> Value {
        json!({
            "model": self.model,
            "temperature": 0,
            "messages": prompt.messages,
        })
    }
}

impl LanguageModel for RemoteLlm {
    fn complete(&self, prompt: &Prompt) -> Result<String, LlmError> {
        let mut req = self.http.post(&self.endpoint).json(&self.body(prompt));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let down = |e: reqwest::Error| LlmError::Unavailable(e.to_string());
        let resp = req.send().map_err(down)?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(LlmError::Unavailable(format!("{status}: {}", text.chars().take(200).collect::<String>())));
        }
        let value: Value = resp.json().map_err(down)?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| LlmError::Unavailable("response has no choices[0].message.content".into()))
    }
}
