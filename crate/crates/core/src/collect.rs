//! Answer collection: prompt rendering, single-answer extraction, and an
//! HTTP completion client.
//!
//! Rendering and extraction are pure and always available. The network
//! client (querying a JSON-over-HTTP completion endpoint, resumable
//! collection into a runs file) sits behind the `collect` cargo feature so
//! the grading pipeline builds and runs without it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{PromptTemplate, TestCase, SOURCE_PLACEHOLDER};

/// How a single answer is carved out of a raw completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMode {
    /// Text up to the first newline, trimmed. Suits single-line corpora;
    /// note that a model answering with a comment line keeps that comment
    /// (it is scored as-is and penalized by the metrics).
    FirstLine,
    /// Text up to the earliest stop sequence occurrence, trimmed.
    UntilStopSequence,
    /// The raw completion, trimmed.
    WholeCompletion,
}

/// Per-prompt answer extraction policy, stored alongside the template so a
/// harness choice is always explicit in the inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionPolicy {
    pub mode: ExtractionMode,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    /// Drop a leading echo of the prompt before extraction.
    #[serde(default)]
    pub strip_prompt_echo: bool,
    /// Completion budget passed through to the endpoint.
    pub max_tokens: usize,
}

impl ExtractionPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.mode == ExtractionMode::UntilStopSequence && self.stop_sequences.is_empty() {
            return Err("until_stop_sequence requires at least one stop sequence".into());
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CollectError {
    #[error("prompt template {0:?} is missing the {SOURCE_PLACEHOLDER} placeholder")]
    MissingPlaceholder(String),
    #[cfg(feature = "collect")]
    #[error("corpus error: {0}")]
    Corpus(#[from] crate::corpus::CorpusError),
    #[cfg(feature = "collect")]
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Substitutes the case source into the template. No other substitutions
/// are performed.
pub fn render_prompt(template: &PromptTemplate, case: &TestCase) -> Result<String, CollectError> {
    if !template.template.contains(SOURCE_PLACEHOLDER) {
        return Err(CollectError::MissingPlaceholder(template.id.clone()));
    }
    Ok(template
        .template
        .replacen(SOURCE_PLACEHOLDER, &case.source, 1))
}

/// Applies the extraction policy to a raw completion. Idempotent for
/// `FirstLine` and `UntilStopSequence`: re-extracting an extracted answer
/// returns it unchanged.
pub fn extract_answer(raw: &str, policy: &ExtractionPolicy) -> String {
    match policy.mode {
        ExtractionMode::FirstLine => raw.split('\n').next().unwrap_or("").trim().to_string(),
        ExtractionMode::UntilStopSequence => {
            let cut = policy
                .stop_sequences
                .iter()
                .filter_map(|stop| raw.find(stop.as_str()))
                .min()
                .unwrap_or(raw.len());
            raw[..cut].trim().to_string()
        }
        ExtractionMode::WholeCompletion => raw.trim().to_string(),
    }
}

#[cfg(feature = "collect")]
pub use net::{collect_runs, query_model, CollectStats, EndpointConfig, QueryError};

#[cfg(feature = "collect")]
mod net {
    use std::collections::HashSet;
    use std::fs::OpenOptions;
    use std::io::Write;
    use std::path::Path;
    use std::time::Duration;

    use futures::stream::{FuturesUnordered, StreamExt};
    use serde::{Deserialize, Serialize};
    use serde_json::json;
    use thiserror::Error;

    use super::{extract_answer, render_prompt, CollectError};
    use crate::corpus::{
        read_run_records, ModelFamily, PromptTemplate, RunRecord, Task,
    };

    /// Environment variable holding the bearer token sent with each request,
    /// when set.
    pub const API_KEY_ENV: &str = "SCALEGRADE_API_KEY";

    /// Connection settings for a completion endpoint.
    #[derive(Debug, Clone, Serialize, Deserialize)]
    pub struct EndpointConfig {
        /// Full URL of the completion route.
        pub base_url: String,
        /// Model name sent with each request; a `{{scale}}` placeholder is
        /// replaced with the scale label, selecting one family member per
        /// scale.
        pub model_name: String,
        /// Sampling temperature; 0 (greedy) by default for reproducibility.
        #[serde(default)]
        pub temperature: f64,
        #[serde(default = "default_timeout_secs")]
        pub timeout_secs: u64,
        #[serde(default = "default_parallel")]
        pub max_parallel: usize,
        /// Transient-failure retries per request, with exponential backoff.
        #[serde(default = "default_retries")]
        pub retry_budget: usize,
    }

    fn default_timeout_secs() -> u64 {
        60
    }

    fn default_parallel() -> usize {
        4
    }

    fn default_retries() -> usize {
        2
    }

    impl EndpointConfig {
        pub fn validate(&self) -> Result<(), String> {
            if self.timeout_secs == 0 {
                return Err("timeout must be positive".into());
            }
            if self.max_parallel == 0 {
                return Err("max_parallel must be at least 1".into());
            }
            if self.temperature < 0.0 {
                return Err("temperature must be non-negative".into());
            }
            Ok(())
        }

        fn model_for(&self, scale_label: &str) -> String {
            self.model_name.replace("{{scale}}", scale_label)
        }
    }

    #[derive(Debug, Error)]
    pub enum QueryError {
        #[error("request timed out after retries")]
        Timeout,
        #[error("endpoint returned HTTP {0}")]
        HttpStatus(u16),
        #[error("prompt exceeds the model's context length")]
        ContextLengthExceeded,
        #[error("transport error: {0}")]
        Transport(String),
        #[error("malformed completion response: {0}")]
        BadResponse(String),
    }

    /// Sends one completion request: JSON body with model, prompt,
    /// max_tokens, temperature, and stop. Transient failures (timeouts,
    /// 429, 5xx) are retried up to the budget with exponential backoff;
    /// over-length rejections map to [`QueryError::ContextLengthExceeded`]
    /// and are not retried.
    pub async fn query_model(
        endpoint: &EndpointConfig,
        model: &str,
        prompt: &str,
        max_tokens: usize,
        stop: &[String],
    ) -> Result<String, QueryError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(endpoint.timeout_secs))
            .build()
            .map_err(|e| QueryError::Transport(e.to_string()))?;
        let body = json!({
            "model": model,
            "prompt": prompt,
            "max_tokens": max_tokens,
            "temperature": endpoint.temperature,
            "stop": stop,
        });

        let mut attempt = 0;
        loop {
            let mut request = client.post(&endpoint.base_url).json(&body);
            if let Ok(key) = std::env::var(API_KEY_ENV) {
                request = request.bearer_auth(key);
            }
            let outcome = match request.send().await {
                Ok(response) => {
                    let status = response.status().as_u16();
                    let text = response.text().await.unwrap_or_default();
                    if status == 200 {
                        return parse_completion(&text);
                    }
                    if is_context_length_error(status, &text) {
                        return Err(QueryError::ContextLengthExceeded);
                    }
                    if status == 429 || status >= 500 {
                        Err(QueryError::HttpStatus(status))
                    } else {
                        return Err(QueryError::HttpStatus(status));
                    }
                }
                Err(err) if err.is_timeout() => Err(QueryError::Timeout),
                Err(err) => Err(QueryError::Transport(err.to_string())),
            };
            match outcome {
                Ok(text) => return Ok(text),
                Err(err) => {
                    if attempt >= endpoint.retry_budget {
                        return Err(err);
                    }
                    let backoff = Duration::from_millis(250 * (1 << attempt.min(6)));
                    tokio::time::sleep(backoff).await;
                    attempt += 1;
                }
            }
        }
    }

    /// Over-length detection: explicit error code, or a 4xx whose body
    /// mentions context length.
    fn is_context_length_error(status: u16, body: &str) -> bool {
        if !(400..500).contains(&status) {
            return false;
        }
        if let Ok(value) = serde_json::from_str::<serde_json::Value>(body) {
            if value
                .pointer("/error/code")
                .and_then(|v| v.as_str())
                .is_some_and(|code| code == "context_length_exceeded")
            {
                return true;
            }
        }
        let lower = body.to_lowercase();
        lower.contains("context length") || lower.contains("context window")
    }

    /// Accepts both the de-facto `{"choices":[{"text":...}]}` shape and a
    /// plain `{"text": ...}` object.
    fn parse_completion(body: &str) -> Result<String, QueryError> {
        let value: serde_json::Value =
            serde_json::from_str(body).map_err(|e| QueryError::BadResponse(e.to_string()))?;
        if let Some(text) = value.pointer("/choices/0/text").and_then(|v| v.as_str()) {
            return Ok(text.to_string());
        }
        if let Some(text) = value.get("text").and_then(|v| v.as_str()) {
            return Ok(text.to_string());
        }
        Err(QueryError::BadResponse(
            "no completion text at choices[0].text or text".into(),
        ))
    }

    /// Summary of one collection pass.
    #[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
    pub struct CollectStats {
        /// (case, scale, prompt) triples already present and left untouched.
        pub skipped: usize,
        pub collected: usize,
        /// Requests rejected for prompt length; recorded with empty answers.
        pub context_length_exceeded: usize,
        /// Requests that failed after retries; recorded with empty answers.
        pub failed: usize,
    }

    /// Collects answers for every (case, scale, prompt) triple missing from
    /// the runs file, appending records as they complete. Existing records
    /// are never mutated, so a crashed run resumes where it left off. At
    /// most `max_parallel` requests are in flight; a single writer appends.
    pub async fn collect_runs(
        endpoint: &EndpointConfig,
        task: &Task,
        family: &ModelFamily,
        prompts: &[PromptTemplate],
        runs_path: &Path,
    ) -> Result<CollectStats, CollectError> {
        let existing: HashSet<(String, String, String)> = if runs_path.exists() {
            read_run_records(runs_path)?
                .into_iter()
                .map(|r| (r.case_id, r.scale_label, r.prompt_id))
                .collect()
        } else {
            HashSet::new()
        };

        let mut jobs = Vec::new();
        let mut stats = CollectStats::default();
        for scale in &family.scales {
            for prompt in prompts {
                for case in task.cases() {
                    let key = (case.id.clone(), scale.label.clone(), prompt.id.clone());
                    if existing.contains(&key) {
                        stats.skipped += 1;
                    } else {
                        jobs.push((case, scale.label.clone(), prompt));
                    }
                }
            }
        }

        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(runs_path)?;
        let (tx, mut rx) = tokio::sync::mpsc::unbounded_channel::<RunRecord>();
        let writer = tokio::task::spawn_blocking(move || -> std::io::Result<()> {
            let mut file = file;
            while let Some(record) = rx.blocking_recv() {
                let line = serde_json::to_string(&record).expect("record serializes");
                file.write_all(line.as_bytes())?;
                file.write_all(b"\n")?;
                file.flush()?;
            }
            Ok(())
        });

        let mut in_flight = FuturesUnordered::new();
        let mut queue = jobs.into_iter();
        loop {
            while in_flight.len() < endpoint.max_parallel {
                let Some((case, scale_label, prompt)) = queue.next() else {
                    break;
                };
                let rendered = render_prompt(prompt, case)?;
                let model = endpoint.model_for(&scale_label);
                let policy = prompt.answer_extraction.clone();
                let prompt_id = prompt.id.clone();
                let case_id = case.id.clone();
                let endpoint = endpoint.clone();
                in_flight.push(async move {
                    let result = query_model(
                        &endpoint,
                        &model,
                        &rendered,
                        policy.max_tokens,
                        &policy.stop_sequences,
                    )
                    .await;
                    (case_id, scale_label, prompt_id, rendered, policy, result)
                });
            }
            let Some((case_id, scale_label, prompt_id, rendered, policy, result)) =
                in_flight.next().await
            else {
                break;
            };
            let (raw_output, answer) = match result {
                Ok(raw) => {
                    let trimmed = if policy.strip_prompt_echo {
                        raw.strip_prefix(rendered.as_str()).unwrap_or(&raw).to_string()
                    } else {
                        raw.clone()
                    };
                    let answer = extract_answer(&trimmed, &policy);
                    stats.collected += 1;
                    (raw, answer)
                }
                Err(QueryError::ContextLengthExceeded) => {
                    log::warn!(
                        "case {case_id} scale {scale_label} prompt {prompt_id}: context length exceeded; storing empty answer"
                    );
                    stats.context_length_exceeded += 1;
                    (String::new(), String::new())
                }
                Err(err) => {
                    log::warn!(
                        "case {case_id} scale {scale_label} prompt {prompt_id}: {err}; storing empty answer"
                    );
                    stats.failed += 1;
                    (String::new(), String::new())
                }
            };
            let record = RunRecord {
                case_id,
                scale_label,
                prompt_id,
                raw_output,
                answer,
            };
            tx.send(record).expect("writer alive");
        }
        drop(tx);
        writer.await.expect("writer task")?;
        Ok(stats)
    }
}
