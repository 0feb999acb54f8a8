//! Provider abstraction for chat-style completions: prompt templates,
//! transcript capture, retrying client, and a deterministic scripted mock.

mod live;
mod mock;
mod provider;

pub use live::{LiveConfig, LiveProvider};
pub use mock::{MockProvider, ScriptEntry};
pub use provider::{
    CompletionRecord, LlmClient, LlmError, Provider, ProviderFault, RetryPolicy,
};

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Marker line separating the system text from the user text inside a
/// template file.
const USER_SPLIT_MARKER: &str = "<<<USER>>>";

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("unknown template: {0}")]
    UnknownTemplate(String),
    #[error("template {template}: unbound placeholder {{{placeholder}}}")]
    UnboundPlaceholder {
        template: String,
        placeholder: String,
    },
    #[error("template directory missing file for '{0}'")]
    MissingTemplate(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Identifier of a prompt template; also the template's file name.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Actor,
    Aggregator,
    Critic,
    Formatter,
    IncorporationJudge,
    CategoryJudge,
    ReliabilityJudge,
    ClusterPropose,
    ClusterSelect,
    ClusterAssign,
}

impl TemplateId {
    pub const ALL: [TemplateId; 10] = [
        TemplateId::Actor,
        TemplateId::Aggregator,
        TemplateId::Critic,
        TemplateId::Formatter,
        TemplateId::IncorporationJudge,
        TemplateId::CategoryJudge,
        TemplateId::ReliabilityJudge,
        TemplateId::ClusterPropose,
        TemplateId::ClusterSelect,
        TemplateId::ClusterAssign,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateId::Actor => "actor",
            TemplateId::Aggregator => "aggregator",
            TemplateId::Critic => "critic",
            TemplateId::Formatter => "formatter",
            TemplateId::IncorporationJudge => "incorporation_judge",
            TemplateId::CategoryJudge => "category_judge",
            TemplateId::ReliabilityJudge => "reliability_judge",
            TemplateId::ClusterPropose => "cluster_propose",
            TemplateId::ClusterSelect => "cluster_select",
            TemplateId::ClusterAssign => "cluster_assign",
        }
    }

    pub fn parse(name: &str) -> Result<Self, TemplateError> {
        Self::ALL
            .iter()
            .copied()
            .find(|id| id.as_str() == name)
            .ok_or_else(|| TemplateError::UnknownTemplate(name.to_string()))
    }

    /// Generation stages of the agent pipeline, as opposed to judge and
    /// clustering calls.
    pub fn is_generation_stage(&self) -> bool {
        matches!(
            self,
            TemplateId::Actor
                | TemplateId::Aggregator
                | TemplateId::Critic
                | TemplateId::Formatter
        )
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A rendered prompt ready to send: no unbound `{placeholder}` tokens
/// remain in either text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub template_id: TemplateId,
    pub system_text: String,
    pub user_text: String,
    pub bindings: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Template {
    system: String,
    user: String,
}

fn split_template(raw: &str) -> Template {
    match raw.split_once(&format!("{USER_SPLIT_MARKER}\n")) {
        Some((system, user)) => Template {
            system: system.trim_end_matches('\n').to_string(),
            user: user.trim_end_matches('\n').to_string(),
        },
        // No marker: the whole file is the user prompt.
        None => Template {
            system: String::new(),
            user: raw.trim_end_matches('\n').to_string(),
        },
    }
}

/// Loads and renders the prompt templates, one UTF-8 file per template id.
#[derive(Debug, Clone)]
pub struct TemplateStore {
    templates: BTreeMap<TemplateId, Template>,
}

impl TemplateStore {
    /// The templates shipped with the crate (see the `templates/` directory).
    pub fn builtin() -> Self {
        let mut templates = BTreeMap::new();
        templates.insert(
            TemplateId::Actor,
            split_template(include_str!("../../templates/actor.txt")),
        );
        templates.insert(
            TemplateId::Aggregator,
            split_template(include_str!("../../templates/aggregator.txt")),
        );
        templates.insert(
            TemplateId::Critic,
            split_template(include_str!("../../templates/critic.txt")),
        );
        templates.insert(
            TemplateId::Formatter,
            split_template(include_str!("../../templates/formatter.txt")),
        );
        templates.insert(
            TemplateId::IncorporationJudge,
            split_template(include_str!("../../templates/incorporation_judge.txt")),
        );
        templates.insert(
            TemplateId::CategoryJudge,
            split_template(include_str!("../../templates/category_judge.txt")),
        );
        templates.insert(
            TemplateId::ReliabilityJudge,
            split_template(include_str!("../../templates/reliability_judge.txt")),
        );
        templates.insert(
            TemplateId::ClusterPropose,
            split_template(include_str!("../../templates/cluster_propose.txt")),
        );
        templates.insert(
            TemplateId::ClusterSelect,
            split_template(include_str!("../../templates/cluster_select.txt")),
        );
        templates.insert(
            TemplateId::ClusterAssign,
            split_template(include_str!("../../templates/cluster_assign.txt")),
        );
        TemplateStore { templates }
    }

    /// Load all templates from a directory of `<template_id>.txt` files.
    pub fn from_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut templates = BTreeMap::new();
        for id in TemplateId::ALL {
            let path = dir.join(format!("{}.txt", id.as_str()));
            if !path.exists() {
                return Err(TemplateError::MissingTemplate(id.as_str().to_string()));
            }
            let raw = fs::read_to_string(&path)?;
            templates.insert(id, split_template(&raw));
        }
        Ok(TemplateStore { templates })
    }

    fn get(&self, id: TemplateId) -> Result<&Template, TemplateError> {
        self.templates
            .get(&id)
            .ok_or_else(|| TemplateError::UnknownTemplate(id.as_str().to_string()))
    }

    /// Render a template. Placeholders are single-word `{name}` tokens;
    /// `{ACTOR_SYSTEM_PROMPT}` is bound automatically to the actor's
    /// system text. Bound values are substituted verbatim and never
    /// re-scanned, so braces inside paper or review text are inert.
    pub fn render(
        &self,
        id: TemplateId,
        bindings: &BTreeMap<String, String>,
    ) -> Result<PromptBundle, TemplateError> {
        let template = self.get(id)?;
        let mut all = bindings.clone();
        if !all.contains_key("ACTOR_SYSTEM_PROMPT") {
            let actor_system = self.get(TemplateId::Actor)?.system.clone();
            all.insert("ACTOR_SYSTEM_PROMPT".to_string(), actor_system);
        }
        let system_text = substitute(id, &template.system, &all)?;
        let user_text = substitute(id, &template.user, &all)?;
        Ok(PromptBundle {
            template_id: id,
            system_text,
            user_text,
            bindings: bindings.clone(),
        })
    }
}

/// Replace each `{name}` token (name = letters and underscores only) with
/// its binding. A token with no binding is an error; anything that does
/// not match the token shape — including `{{double braces}}` and brace
/// content with spaces — is left untouched.
fn substitute(
    id: TemplateId,
    text: &str,
    bindings: &BTreeMap<String, String>,
) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(text.len());
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_alphabetic() || bytes[j] == b'_') {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b'}' {
                let name = &text[i + 1..j];
                match bindings.get(name) {
                    Some(value) => out.push_str(value),
                    None => {
                        return Err(TemplateError::UnboundPlaceholder {
                            template: id.as_str().to_string(),
                            placeholder: name.to_string(),
                        })
                    }
                }
                i = j + 1;
                continue;
            }
        }
        let ch = text[i..].chars().next().expect("in-bounds char");
        out.push(ch);
        i += ch.len_utf8();
    }
    Ok(out)
}

/// Convenience for building binding maps.
pub fn bindings<const N: usize>(pairs: [(&str, &str); N]) -> BTreeMap<String, String> {
    pairs
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// Character-count based token estimate; the artifact carries no tokenizer.
pub fn approx_tokens(chars: usize) -> usize {
    chars / 4
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn actor_render_matches_wire_format() {
        let store = TemplateStore::builtin();
        let bundle = store
            .render(TemplateId::Actor, &bindings([("paper", "P"), ("review", "R")]))
            .unwrap();
        assert_eq!(
            bundle.user_text,
            "Here is the paper: <PAPER> P </PAPER>. Here is the peer review: <REVIEW> R </REVIEW>."
        );
        assert!(bundle.system_text.starts_with("You are given a peer review"));
    }

    #[test]
    fn no_placeholder_template_is_identity() {
        let store = TemplateStore::builtin();
        // The formatter system text has no single-word placeholders.
        let bundle = store
            .render(TemplateId::Formatter, &bindings([("feedback", "F")]))
            .unwrap();
        assert!(bundle.system_text.contains("Thanks for your hard work!"));
        assert_eq!(bundle.user_text, "Here is the feedback for you to format: F");
    }

    #[test]
    fn unbound_placeholder_errors() {
        let store = TemplateStore::builtin();
        let err = store
            .render(TemplateId::Aggregator, &bindings([("paper", "P")]))
            .unwrap_err();
        match err {
            TemplateError::UnboundPlaceholder { placeholder, .. } => {
                assert_eq!(placeholder, "feedbacks");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn double_braces_are_not_placeholders() {
        let store = TemplateStore::builtin();
        let bundle = store
            .render(TemplateId::Formatter, &bindings([("feedback", "F")]))
            .unwrap();
        assert!(bundle.system_text.contains("{{a comment}}"));
    }

    #[test]
    fn aggregator_embeds_actor_system_prompt() {
        let store = TemplateStore::builtin();
        let bundle = store
            .render(
                TemplateId::Aggregator,
                &bindings([("paper", "P"), ("feedbacks", "F"), ("review", "R")]),
            )
            .unwrap();
        assert!(bundle
            .system_text
            .contains("You are given a peer review of a machine learning paper"));
        assert!(!bundle.system_text.contains("{ACTOR_SYSTEM_PROMPT}"));
    }

    #[test]
    fn rendering_is_pure() {
        let store = TemplateStore::builtin();
        let b = bindings([("paper", "P"), ("review", "R")]);
        let one = store.render(TemplateId::Actor, &b).unwrap();
        let two = store.render(TemplateId::Actor, &b).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn bound_values_are_not_rescanned() {
        let store = TemplateStore::builtin();
        let bundle = store
            .render(
                TemplateId::Actor,
                &bindings([("paper", "text with {review} inside"), ("review", "R")]),
            )
            .unwrap();
        assert!(bundle.user_text.contains("text with {review} inside"));
    }

    #[test]
    fn template_id_parse_roundtrip() {
        for id in TemplateId::ALL {
            assert_eq!(TemplateId::parse(id.as_str()).unwrap(), id);
        }
        assert!(TemplateId::parse("nope").is_err());
    }

    #[test]
    fn from_dir_matches_builtin() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("templates");
        let store = TemplateStore::from_dir(&dir).unwrap();
        let builtin = TemplateStore::builtin();
        let b = bindings([("paper", "P"), ("review", "R")]);
        assert_eq!(
            store.render(TemplateId::Actor, &b).unwrap(),
            builtin.render(TemplateId::Actor, &b).unwrap()
        );
    }
}
