//! Remote chat transport: a chat-completion style HTTP client with bounded
//! retries, exponential backoff, and a process-wide in-flight limit.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::models::{ModelError, ModelRef, SamplingParams};

/// Anything that can serve a raw completion for a remote model reference.
#[async_trait]
pub trait ChatBackend: Send + Sync {
    async fn chat(
        &self,
        model: &ModelRef,
        prompt: &str,
        params: &SamplingParams,
    ) -> Result<String, ModelError>;
}

/// Backend for scripted-only runs: any remote call is a configuration bug
/// and fails immediately.
pub struct NoRemoteBackend;

#[async_trait]
impl ChatBackend for NoRemoteBackend {
    async fn chat(
        &self,
        model: &ModelRef,
        _prompt: &str,
        _params: &SamplingParams,
    ) -> Result<String, ModelError> {
        Err(ModelError::NoRemoteBackend(format!(
            "run is scripted-only but model `{}` routed to {}",
            model.name, model.endpoint
        )))
    }
}

/// Retry contract: `max_attempts` tries total, exponential backoff starting
/// at `base_backoff`, retrying only transient transport failures (timeouts,
/// connection errors, 429, 5xx).
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_backoff: Duration::from_secs(1) }
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    top_p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireContent,
}

#[derive(Deserialize)]
struct WireContent {
    content: Option<String>,
}

enum AttemptError {
    Retryable(String),
    Fatal { status: String, detail: String },
}

/// HTTP chat gateway. One instance per run; the semaphore bounds in-flight
/// requests across all concurrent rollouts and judges.
pub struct HttpGateway {
    client: reqwest::Client,
    limiter: Arc<Semaphore>,
    retry: RetryPolicy,
}

impl HttpGateway {
    pub fn new(max_in_flight: usize, retry: RetryPolicy) -> Self {
        Self {
            client: reqwest::Client::new(),
            limiter: Arc::new(Semaphore::new(max_in_flight.max(1))),
            retry,
        }
    }

    async fn attempt(
        &self,
        model: &ModelRef,
        prompt: &str,
        params: &SamplingParams,
        token: Option<&str>,
    ) -> Result<String, AttemptError> {
        let body = WireRequest {
            model: &model.name,
            messages: vec![WireMessage { role: "user", content: prompt }],
            temperature: params.temperature,
            top_p: params.top_p,
            seed: Some(params.seed),
        };
        let mut request = self.client.post(&model.endpoint).json(&body);
        if let Some(token) = token {
            request = request.bearer_auth(token);
        }

        let response = request.send().await.map_err(|err| {
            if err.is_timeout() || err.is_connect() || err.is_request() {
                AttemptError::Retryable(err.to_string())
            } else {
                AttemptError::Fatal { status: "transport".into(), detail: err.to_string() }
            }
        })?;

        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptError::Retryable(format!("status {status}")));
        }
        if !status.is_success() {
            let detail = response.text().await.unwrap_or_default();
            return Err(AttemptError::Fatal { status: status.to_string(), detail });
        }

        let payload: WireResponse = response
            .json()
            .await
            .map_err(|err| AttemptError::Fatal { status: "decode".into(), detail: err.to_string() })?;
        payload
            .choices
            .first()
            .and_then(|c| c.message.content.clone())
            .ok_or_else(|| AttemptError::Fatal {
                status: "decode".into(),
                detail: "response carried no choices[0].message.content".into(),
            })
    }
}

#[async_trait]
impl ChatBackend for HttpGateway {
    async fn chat(
        &self,
        model: &ModelRef,
        prompt: &str,
        params: &SamplingParams,
    ) -> Result<String, ModelError> {
        let token = model.resolve_credentials()?;
        let _permit = self
            .limiter
            .acquire()
            .await
            .expect("gateway semaphore is never closed");

        let mut last = String::new();
        for attempt in 0..self.retry.max_attempts {
            if attempt > 0 {
                let backoff = self.retry.base_backoff * 2u32.saturating_pow(attempt - 1);
                tokio::time::sleep(backoff).await;
            }
            match self.attempt(model, prompt, params, token.as_deref()).await {
                Ok(text) => return Ok(text),
                Err(AttemptError::Retryable(detail)) => last = detail,
                Err(AttemptError::Fatal { status, detail }) => {
                    return Err(ModelError::NonRetryable {
                        endpoint: model.endpoint.clone(),
                        status,
                        detail,
                    })
                }
            }
        }
        Err(ModelError::Exhausted {
            endpoint: model.endpoint.clone(),
            attempts: self.retry.max_attempts,
            last,
        })
    }
}
