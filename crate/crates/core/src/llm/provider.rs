//! Provider contract, retrying client, and transcript capture.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{approx_tokens, PromptBundle, TemplateId};

/// A single completion backend failure.
#[derive(Debug, Clone, Error)]
pub enum ProviderFault {
    /// Transport-level failure worth retrying (timeouts, 5xx, scripted faults).
    #[error("transient provider fault: {0}")]
    Transient(String),
    /// Failure that retrying cannot fix (bad credential, 4xx).
    #[error("provider fault: {0}")]
    Fatal(String),
    /// The scripted mock was asked for a call its script does not contain.
    #[error("script exhausted: {0}")]
    ScriptExhausted(String),
}

#[derive(Debug, Clone, Error)]
pub enum LlmError {
    #[error("provider error after {attempts} call(s): {cause}")]
    Provider { attempts: u32, cause: String },
    #[error("script exhausted: {0}")]
    ScriptExhausted(String),
}

/// A chat-completion backend. One implementation is live HTTPS, the other
/// a deterministic scripted mock; both must tolerate concurrent callers.
#[async_trait]
pub trait Provider: Send + Sync {
    fn name(&self) -> &str;

    /// Issue exactly one completion call; retrying is the client's job.
    async fn complete_once(
        &self,
        bundle: &PromptBundle,
        attempt: u32,
        ordinal: u32,
    ) -> Result<String, ProviderFault>;

    /// True when call latency is not meaningful (the scripted mock), so
    /// transcripts stay byte-identical across runs.
    fn deterministic(&self) -> bool {
        false
    }
}

/// Retry settings for transient transport failures.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    /// Additional tries after the first call.
    pub max_retries: u32,
    /// Base backoff; doubles per retry. Zero disables waiting.
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay_ms: 500,
        }
    }
}

impl RetryPolicy {
    pub fn no_backoff(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_delay_ms: 0,
        }
    }
}

/// One physical provider call. Every call — including failed tries —
/// appends exactly one record to the run transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub template_id: TemplateId,
    pub attempt: u32,
    pub ordinal: u32,
    pub request_chars: usize,
    pub response_text: String,
    pub latency_ms: u64,
    pub provider_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Per-run client: owns the transcript (single writer) and the retry loop.
/// Safe to share across the concurrent calls of one run.
pub struct LlmClient {
    provider: Arc<dyn Provider>,
    retry: RetryPolicy,
    transcript: Mutex<Vec<CompletionRecord>>,
    ordinals: Mutex<HashMap<(TemplateId, u32), u32>>,
    request_chars: AtomicUsize,
}

impl LlmClient {
    pub fn new(provider: Arc<dyn Provider>) -> Self {
        Self::with_retry(provider, RetryPolicy::default())
    }

    pub fn with_retry(provider: Arc<dyn Provider>, retry: RetryPolicy) -> Self {
        LlmClient {
            provider,
            retry,
            transcript: Mutex::new(Vec::new()),
            ordinals: Mutex::new(HashMap::new()),
            request_chars: AtomicUsize::new(0),
        }
    }

    pub fn provider(&self) -> Arc<dyn Provider> {
        Arc::clone(&self.provider)
    }

    /// Complete with an automatically assigned ordinal: the next unused
    /// ordinal for this (template, attempt).
    pub async fn complete(
        &self,
        bundle: &PromptBundle,
        attempt: u32,
    ) -> Result<String, LlmError> {
        let ordinal = {
            let mut ordinals = self.ordinals.lock().expect("ordinal lock");
            let slot = ordinals.entry((bundle.template_id, attempt)).or_insert(0);
            *slot += 1;
            *slot
        };
        self.complete_at(bundle, attempt, ordinal).await
    }

    /// Complete at an explicit (attempt, ordinal) position. Used where the
    /// caller pre-assigns ordinals so concurrent calls stay reproducible.
    pub async fn complete_at(
        &self,
        bundle: &PromptBundle,
        attempt: u32,
        ordinal: u32,
    ) -> Result<String, LlmError> {
        {
            let mut ordinals = self.ordinals.lock().expect("ordinal lock");
            let slot = ordinals.entry((bundle.template_id, attempt)).or_insert(0);
            *slot = (*slot).max(ordinal);
        }
        let request_chars = bundle.system_text.chars().count() + bundle.user_text.chars().count();
        self.request_chars.fetch_add(request_chars, Ordering::Relaxed);

        let mut calls = 0u32;
        let mut last_cause = String::new();
        while calls <= self.retry.max_retries {
            calls += 1;
            let started = Instant::now();
            let result = self.provider.complete_once(bundle, attempt, ordinal).await;
            let latency_ms = if self.provider.deterministic() {
                0
            } else {
                started.elapsed().as_millis() as u64
            };
            let mut record = CompletionRecord {
                template_id: bundle.template_id,
                attempt,
                ordinal,
                request_chars,
                response_text: String::new(),
                latency_ms,
                provider_name: self.provider.name().to_string(),
                error: None,
            };
            match result {
                Ok(text) => {
                    record.response_text = text.clone();
                    self.push_record(record);
                    return Ok(text);
                }
                Err(ProviderFault::Transient(cause)) => {
                    record.error = Some(cause.clone());
                    self.push_record(record);
                    last_cause = cause;
                    if calls <= self.retry.max_retries && self.retry.base_delay_ms > 0 {
                        let backoff = self.retry.base_delay_ms << (calls - 1).min(8);
                        tokio::time::sleep(Duration::from_millis(backoff)).await;
                    }
                }
                Err(ProviderFault::Fatal(cause)) => {
                    record.error = Some(cause.clone());
                    self.push_record(record);
                    return Err(LlmError::Provider {
                        attempts: calls,
                        cause,
                    });
                }
                Err(ProviderFault::ScriptExhausted(cause)) => {
                    record.error = Some(cause.clone());
                    self.push_record(record);
                    return Err(LlmError::ScriptExhausted(cause));
                }
            }
        }
        Err(LlmError::Provider {
            attempts: calls,
            cause: last_cause,
        })
    }

    fn push_record(&self, record: CompletionRecord) {
        self.transcript.lock().expect("transcript lock").push(record);
    }

    pub fn transcript(&self) -> Vec<CompletionRecord> {
        self.transcript.lock().expect("transcript lock").clone()
    }

    pub fn take_transcript(&self) -> Vec<CompletionRecord> {
        std::mem::take(&mut *self.transcript.lock().expect("transcript lock"))
    }

    /// Rough token spend of this run, chars/4.
    pub fn approx_request_tokens(&self) -> usize {
        approx_tokens(self.request_chars.load(Ordering::Relaxed))
    }
}
