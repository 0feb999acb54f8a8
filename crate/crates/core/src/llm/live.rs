//! Live HTTPS chat-completion provider.
//!
//! Speaks the common `POST <url>` chat-completions JSON shape: the request
//! carries `model` and a system+user message pair, the response carries
//! `choices[0].message.content`. Credential comes from `RFA_API_KEY`,
//! endpoint from `RFA_API_URL`.

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{PromptBundle, Provider, ProviderFault};

pub const API_KEY_ENV: &str = "RFA_API_KEY";
pub const API_URL_ENV: &str = "RFA_API_URL";

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub url: String,
    pub api_key: String,
    pub model: String,
    /// Sampling settings are provider configuration; `None` defers to the
    /// provider's defaults.
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub timeout_secs: u64,
}

impl LiveConfig {
    pub fn from_env(model: &str) -> Result<Self, String> {
        let url = std::env::var(API_URL_ENV)
            .map_err(|_| format!("{API_URL_ENV} is not set"))?;
        let api_key = std::env::var(API_KEY_ENV)
            .map_err(|_| format!("{API_KEY_ENV} is not set"))?;
        Ok(LiveConfig {
            url,
            api_key,
            model: model.to_string(),
            temperature: None,
            max_tokens: None,
            timeout_secs: 300,
        })
    }
}

pub struct LiveProvider {
    config: LiveConfig,
    client: reqwest::Client,
}

impl LiveProvider {
    pub fn new(config: LiveConfig) -> Result<Self, String> {
        let client = reqwest::Client::builder()
            .timeout(std::time::Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| format!("http client: {e}"))?;
        Ok(LiveProvider { config, client })
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

#[async_trait]
impl Provider for LiveProvider {
    fn name(&self) -> &str {
        "live"
    }

    async fn complete_once(
        &self,
        bundle: &PromptBundle,
        _attempt: u32,
        _ordinal: u32,
    ) -> Result<String, ProviderFault> {
        let mut messages = Vec::with_capacity(2);
        if !bundle.system_text.is_empty() {
            messages.push(ChatMessage {
                role: "system",
                content: &bundle.system_text,
            });
        }
        messages.push(ChatMessage {
            role: "user",
            content: &bundle.user_text,
        });
        let request = ChatRequest {
            model: &self.config.model,
            messages,
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        };
        let response = self
            .client
            .post(&self.config.url)
            .bearer_auth(&self.config.api_key)
            .json(&request)
            .send()
            .await
            .map_err(|e| ProviderFault::Transient(format!("transport: {e}")))?;
        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(ProviderFault::Transient(format!("http {status}")));
        }
        if !status.is_success() {
            return Err(ProviderFault::Fatal(format!("http {status}")));
        }
        let body: ChatResponse = response
            .json()
            .await
            .map_err(|e| ProviderFault::Transient(format!("bad response body: {e}")))?;
        body.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| ProviderFault::Fatal("response carried no choices".into()))
    }
}
