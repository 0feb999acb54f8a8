//! Deterministic scripted provider for tests and offline runs.
//!
//! Scripts are keyed by (template_id, attempt, ordinal within attempt) so
//! retry paths replay exactly. Several entries under one key form a queue,
//! which is how transport-fault injection and judge re-asks are scripted.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{PromptBundle, Provider, ProviderFault, TemplateId};

/// One line of a mock script file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub template_id: TemplateId,
    #[serde(default = "default_one")]
    pub attempt: u32,
    #[serde(default = "default_one")]
    pub ordinal: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    /// When set, the call fails with a transient transport fault instead
    /// of responding.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn default_one() -> u32 {
    1
}

#[derive(Debug, Clone)]
enum Step {
    Respond(String),
    Fault(String),
}

#[derive(Default)]
pub struct MockProvider {
    script: Mutex<HashMap<(TemplateId, u32, u32), VecDeque<Step>>>,
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }

    /// Load a script from a JSONL file of [`ScriptEntry`] lines.
    pub fn from_script_file(path: &Path) -> Result<Self, std::io::Error> {
        let raw = fs::read_to_string(path)?;
        Self::from_script_str(&raw)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn from_script_str(raw: &str) -> Result<Self, serde_json::Error> {
        let mock = MockProvider::new();
        for line in raw.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(line)?;
            mock.push_entry(entry);
        }
        Ok(mock)
    }

    pub fn push_entry(&self, entry: ScriptEntry) {
        let step = match entry.error {
            Some(cause) => Step::Fault(cause),
            None => Step::Respond(entry.response.unwrap_or_default()),
        };
        self.script
            .lock()
            .expect("script lock")
            .entry((entry.template_id, entry.attempt, entry.ordinal))
            .or_default()
            .push_back(step);
    }

    pub fn respond(&self, template_id: TemplateId, attempt: u32, ordinal: u32, text: &str) {
        self.push_entry(ScriptEntry {
            template_id,
            attempt,
            ordinal,
            response: Some(text.to_string()),
            error: None,
        });
    }

    pub fn fault(&self, template_id: TemplateId, attempt: u32, ordinal: u32, cause: &str) {
        self.push_entry(ScriptEntry {
            template_id,
            attempt,
            ordinal,
            response: None,
            error: Some(cause.to_string()),
        });
    }

    /// Number of script entries not yet consumed.
    pub fn remaining(&self) -> usize {
        self.script
            .lock()
            .expect("script lock")
            .values()
            .map(VecDeque::len)
            .sum()
    }
}

#[async_trait]
impl Provider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn deterministic(&self) -> bool {
        true
    }

    async fn complete_once(
        &self,
        bundle: &PromptBundle,
        attempt: u32,
        ordinal: u32,
    ) -> Result<String, ProviderFault> {
        let step = self
            .script
            .lock()
            .expect("script lock")
            .get_mut(&(bundle.template_id, attempt, ordinal))
            .and_then(VecDeque::pop_front);
        match step {
            Some(Step::Respond(text)) => Ok(text),
            Some(Step::Fault(cause)) => Err(ProviderFault::Transient(cause)),
            None => Err(ProviderFault::ScriptExhausted(format!(
                "no script entry for ({}, attempt {attempt}, ordinal {ordinal})",
                bundle.template_id
            ))),
        }
    }
}
