//! OpenAI-compatible streaming chat-completions backend.
//!
//! Distribution peeking over a network API works because all runs use greedy
//! decoding: the next stream delta *is* the argmax, so peeking is buffering
//! one undelivered delta. Injection is realized as cancel-stream, rebuild the
//! context with the injected text, and issue a fresh streaming continuation
//! request whose final assistant message is the generation so far.

use std::io::{BufRead, BufReader, Read};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::decode::{
    Backend, BackendError, DistributionPeek, GenContext, SampledToken, SamplingParams,
};

pub const DEFAULT_API_KEY_ENV: &str = "TOMLAB_API_KEY";

/// Connection settings for an OpenAI-compatible endpoint.
///
/// Only the *name* of the auth variable is stored; the key itself is read
/// from the environment at request time and never appears in run outputs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RemoteEndpoint {
    pub base_url: String,
    pub model_name: String,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout_secs")]
    pub request_timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
}

fn default_api_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}
fn default_timeout_secs() -> u64 {
    120
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    1000
}

impl RemoteEndpoint {
    fn completions_url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/v1") {
            format!("{base}/chat/completions")
        } else {
            format!("{base}/v1/chat/completions")
        }
    }

    fn api_key(&self) -> Result<String, BackendError> {
        match std::env::var(&self.api_key_env) {
            Ok(key) if !key.is_empty() => Ok(key),
            _ => Err(BackendError::AuthFailure(format!(
                "environment variable {} is not set",
                self.api_key_env
            ))),
        }
    }
}

struct SseSession {
    reader: BufReader<Box<dyn Read + Send + Sync + 'static>>,
}

impl SseSession {
    /// Next content delta, or `None` when the stream finished.
    fn next_delta(&mut self) -> Result<Option<String>, BackendError> {
        let mut line = String::new();
        loop {
            line.clear();
            let n = self
                .reader
                .read_line(&mut line)
                .map_err(|e| BackendError::Unavailable(format!("stream read failed: {e}")))?;
            if n == 0 {
                return Ok(None); // server closed without [DONE]
            }
            let Some(data) = line.trim_end().strip_prefix("data:") else {
                continue;
            };
            let data = data.trim();
            if data.is_empty() {
                continue;
            }
            if data == "[DONE]" {
                return Ok(None);
            }
            let value: Value = serde_json::from_str(data)
                .map_err(|e| BackendError::Unavailable(format!("bad stream chunk: {e}")))?;
            let delta = &value["choices"][0]["delta"];
            if let Some(content) = delta["content"].as_str() {
                if !content.is_empty() {
                    return Ok(Some(content.to_string()));
                }
            }
            if value["choices"][0]["finish_reason"].is_string() {
                return Ok(None);
            }
        }
    }
}

/// One generation's view of a remote endpoint: a stream session plus the
/// one-token peek buffer. Per-generation; the endpoint config is shareable.
pub struct RemoteBackend {
    agent: ureq::Agent,
    endpoint: RemoteEndpoint,
    params: SamplingParams,
    session: Option<SseSession>,
    buffered: Option<SampledToken>,
    exhausted: bool,
}

impl RemoteBackend {
    pub fn new(endpoint: RemoteEndpoint, params: SamplingParams) -> Self {
        let timeout = Duration::from_secs(endpoint.request_timeout_secs);
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_connect(Some(timeout))
            .timeout_recv_response(Some(timeout))
            .build();
        Self {
            agent: config.into(),
            endpoint,
            params,
            session: None,
            buffered: None,
            exhausted: false,
        }
    }

    fn request_body(&self, ctx: &GenContext) -> String {
        let mut messages = Vec::new();
        if !ctx.prompt.system.is_empty() {
            messages.push(json!({"role": "system", "content": ctx.prompt.system}));
        }
        messages.push(json!({"role": "user", "content": ctx.prompt.user}));
        let generated = ctx.generated_text();
        if !generated.is_empty() {
            // Continuation: servers that support assistant-prefix completion
            // resume generation from this partial message.
            messages.push(json!({"role": "assistant", "content": generated}));
        }
        let mut body = json!({
            "model": self.endpoint.model_name,
            "messages": messages,
            "temperature": self.params.temperature,
            "top_p": self.params.top_p,
            "max_tokens": self.params.max_tokens,
            "stream": true,
        });
        if let Some(effort) = self.params.reasoning_effort {
            body["reasoning_effort"] = json!(effort.as_str());
        }
        body.to_string()
    }

    fn start_session(&mut self, ctx: &GenContext) -> Result<SseSession, BackendError> {
        let key = self.endpoint.api_key()?;
        let url = self.endpoint.completions_url();
        let body = self.request_body(ctx);
        let mut attempt = 0u32;
        loop {
            let result = self
                .agent
                .post(&url)
                .header("authorization", format!("Bearer {key}"))
                .header("content-type", "application/json")
                .header("accept", "text/event-stream")
                .send(body.as_str());
            let retryable_err = match result {
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    match status {
                        200 => {
                            let reader: Box<dyn Read + Send + Sync + 'static> =
                                Box::new(resp.into_body().into_reader());
                            return Ok(SseSession {
                                reader: BufReader::new(reader),
                            });
                        }
                        401 | 403 => {
                            return Err(BackendError::AuthFailure(format!(
                                "endpoint returned status {status}"
                            )))
                        }
                        413 => {
                            return Err(BackendError::ContextTooLong(format!(
                                "endpoint returned status {status}"
                            )))
                        }
                        400 => {
                            let text = resp.into_body().read_to_string().unwrap_or_default();
                            let lowered = text.to_lowercase();
                            if lowered.contains("context length")
                                || lowered.contains("context_length")
                                || lowered.contains("too long")
                                || lowered.contains("maximum context")
                            {
                                return Err(BackendError::ContextTooLong(text));
                            }
                            return Err(BackendError::Unavailable(format!(
                                "endpoint returned status 400: {text}"
                            )));
                        }
                        408 | 429 | 500..=599 => {
                            format!("endpoint returned status {status}")
                        }
                        other => {
                            return Err(BackendError::Unavailable(format!(
                                "endpoint returned status {other}"
                            )))
                        }
                    }
                }
                Err(e) => format!("transport error: {e}"),
            };
            if attempt >= self.endpoint.max_retries {
                return Err(BackendError::Unavailable(format!(
                    "{retryable_err} (after {attempt} retries)"
                )));
            }
            let backoff = self
                .endpoint
                .retry_backoff_ms
                .saturating_mul(1u64 << attempt.min(16));
            std::thread::sleep(Duration::from_millis(backoff));
            attempt += 1;
        }
    }

    fn pull_next(&mut self, ctx: &GenContext) -> Result<SampledToken, BackendError> {
        if self.exhausted {
            return Ok(SampledToken::eos());
        }
        if self.session.is_none() {
            let session = self.start_session(ctx)?;
            self.session = Some(session);
        }
        match self.session.as_mut().unwrap().next_delta()? {
            Some(text) => Ok(SampledToken::text(text)),
            None => {
                self.exhausted = true;
                self.session = None;
                Ok(SampledToken::eos())
            }
        }
    }
}

impl Backend for RemoteBackend {
    fn peek(&mut self, ctx: &GenContext) -> Result<DistributionPeek, BackendError> {
        if self.buffered.is_none() {
            self.buffered = Some(self.pull_next(ctx)?);
        }
        let tok = self.buffered.as_ref().unwrap();
        Ok(DistributionPeek {
            argmax_text: tok.text.clone(),
            is_eos: tok.is_eos,
        })
    }

    fn sample(&mut self, ctx: &GenContext) -> Result<SampledToken, BackendError> {
        match self.buffered.take() {
            Some(tok) => Ok(tok),
            None => self.pull_next(ctx),
        }
    }

    fn cancel(&mut self) {
        // Drop the connection and the undelivered peeked token; the next
        // peek/sample issues a fresh request over the rebuilt context.
        self.session = None;
        self.buffered = None;
        self.exhausted = false;
    }
}
