//! The feedback agent pipeline: two actors, aggregator, critic, formatter,
//! a reliability gate after each attempt, and one whole-pipeline retry.
//!
//! A run always produces a terminal [`FeedbackBundle`]; provider failures
//! become `status: Failed` with the cause recorded rather than panics or
//! escaped errors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::guard::{self, GateVerdict};
use crate::ingest::{PaperDoc, Review};
use crate::llm::{
    bindings, CompletionRecord, LlmClient, LlmError, TemplateError, TemplateId, TemplateStore,
};

/// Exact formatter output meaning "no feedback needed".
pub const NO_FEEDBACK_SENTINEL: &str = "Thanks for your hard work!";
pub const COMMENT_MARKER: &str = "**Reviewer comment:**";
pub const FEEDBACK_MARKER: &str = "**Feedback to the reviewer:**";

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("non-sentinel text contains no '{COMMENT_MARKER}' markers")]
    NoMarkers,
    #[error("pair {pair}: comment marker has no following '{FEEDBACK_MARKER}' marker")]
    MissingFeedbackMarker { pair: usize },
    #[error("pair {pair}: empty {field}")]
    EmptyField { pair: usize, field: &'static str },
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error("'{0}' is not a generation stage")]
    InvalidStage(TemplateId),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Provider(#[from] LlmError),
}

/// The three feedback categories used by the incorporation analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeedbackCategory {
    #[serde(rename = "ACTIONABLE_VAGUE")]
    ActionableVague,
    #[serde(rename = "CONTENT_CLARIFY")]
    ContentClarify,
    #[serde(rename = "ADDRESS_UNPROFESSIONAL")]
    AddressUnprofessional,
}

impl FeedbackCategory {
    pub const ALL: [FeedbackCategory; 3] = [
        FeedbackCategory::ActionableVague,
        FeedbackCategory::ContentClarify,
        FeedbackCategory::AddressUnprofessional,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FeedbackCategory::ActionableVague => "ACTIONABLE_VAGUE",
            FeedbackCategory::ContentClarify => "CONTENT_CLARIFY",
            FeedbackCategory::AddressUnprofessional => "ADDRESS_UNPROFESSIONAL",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.as_str() == text)
    }
}

/// One (reviewer comment, feedback) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackItem {
    pub comment: String,
    pub feedback: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<FeedbackCategory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incorporated: Option<bool>,
    /// Diagnostic: whether `comment` appears verbatim in the review after
    /// whitespace normalization. Not a gate condition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment_verbatim: Option<bool>,
}

impl FeedbackItem {
    pub fn new(comment: impl Into<String>, feedback: impl Into<String>) -> Self {
        FeedbackItem {
            comment: comment.into(),
            feedback: feedback.into(),
            category: None,
            cluster: None,
            incorporated: None,
            comment_verbatim: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BundleStatus {
    Posted,
    NoFeedbackNeeded,
    Failed,
}

/// Raw stage texts of one pipeline attempt, in generation order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTexts {
    pub actor_a: String,
    pub actor_b: String,
    pub combined: String,
    pub filtered: String,
    pub formatted: String,
}

/// Terminal result of one pipeline run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedbackBundle {
    pub review_id: String,
    pub attempt_outputs: Vec<StageTexts>,
    pub items: Vec<FeedbackItem>,
    pub gate_results: Vec<GateVerdict>,
    pub attempts_used: u32,
    pub status: BundleStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_cause: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transcript: Vec<CompletionRecord>,
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    /// Whole-pipeline attempts before giving up.
    pub max_attempts: u32,
    /// Posted bundles above this many items trigger a soft warning; the
    /// bound is observational, not enforced.
    pub item_warning_threshold: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            max_attempts: 2,
            item_warning_threshold: 17,
        }
    }
}

/// Collapse all whitespace runs to single spaces.
pub fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Render items into the postable body: pairs in the bit-exact marker
/// format separated by one blank line. An empty list renders the sentinel.
pub fn render_feedback_items(items: &[FeedbackItem]) -> String {
    if items.is_empty() {
        return NO_FEEDBACK_SENTINEL.to_string();
    }
    items
        .iter()
        .map(|item| {
            format!(
                "{COMMENT_MARKER} {}\n\n{FEEDBACK_MARKER} {}",
                item.comment, item.feedback
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Strip list glyphs that the formatter puts in front of marker lines.
fn strip_marker_bullets(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for (idx, line) in text.lines().enumerate() {
        if idx > 0 {
            out.push('\n');
        }
        let stripped = line.trim_start();
        let unbulleted = stripped
            .trim_start_matches(['-', '*', '•'])
            .trim_start();
        if (stripped.starts_with('-') || stripped.starts_with('*') || stripped.starts_with('•'))
            && (unbulleted.starts_with(COMMENT_MARKER) || unbulleted.starts_with(FEEDBACK_MARKER))
        {
            out.push_str(unbulleted);
        } else {
            out.push_str(line);
        }
    }
    out
}

/// Parsed pairs plus whatever prose preceded the first comment marker.
/// The strict format check rejects nonempty leading prose; plain parsing
/// ignores it.
pub(crate) fn parse_with_prefix(text: &str) -> Result<(Vec<FeedbackItem>, String), FormatError> {
    if text.trim() == NO_FEEDBACK_SENTINEL {
        return Ok((Vec::new(), String::new()));
    }
    let text = strip_marker_bullets(text);
    let starts: Vec<usize> = {
        let mut starts = Vec::new();
        let mut from = 0;
        while let Some(pos) = text[from..].find(COMMENT_MARKER) {
            starts.push(from + pos);
            from += pos + COMMENT_MARKER.len();
        }
        starts
    };
    if starts.is_empty() {
        return Err(FormatError::NoMarkers);
    }
    let prefix = text[..starts[0]].trim().to_string();
    let mut items = Vec::with_capacity(starts.len());
    for (pair, window) in starts.windows(2).map(|w| (w[0], Some(w[1]))).chain(
        std::iter::once((*starts.last().expect("nonempty"), None)),
    ) {
        let span_start = pair + COMMENT_MARKER.len();
        let span_end = window.unwrap_or(text.len());
        let span = &text[span_start..span_end];
        let index = items.len() + 1;
        let Some(fb_pos) = span.find(FEEDBACK_MARKER) else {
            return Err(FormatError::MissingFeedbackMarker { pair: index });
        };
        let comment = span[..fb_pos].trim();
        let feedback = span[fb_pos + FEEDBACK_MARKER.len()..].trim();
        if comment.is_empty() {
            return Err(FormatError::EmptyField {
                pair: index,
                field: "comment",
            });
        }
        if feedback.is_empty() {
            return Err(FormatError::EmptyField {
                pair: index,
                field: "feedback",
            });
        }
        items.push(FeedbackItem::new(comment, feedback));
    }
    Ok((items, prefix))
}

/// Extract (comment, feedback) pairs from formatter output. The sentinel
/// parses to an empty list; any other marker-free text is a format error.
pub fn parse_formatted_feedback(text: &str) -> Result<Vec<FeedbackItem>, FormatError> {
    parse_with_prefix(text).map(|(items, _)| items)
}

/// Route one generation stage: render its template and complete once.
pub async fn run_stage(
    stage: TemplateId,
    inputs: &BTreeMap<String, String>,
    client: &LlmClient,
    templates: &TemplateStore,
    attempt: u32,
) -> Result<String, StageError> {
    if !stage.is_generation_stage() {
        return Err(StageError::InvalidStage(stage));
    }
    let bundle = templates.render(stage, inputs)?;
    Ok(client.complete(&bundle, attempt).await?)
}

/// Expected per-attempt generation order. Returns the position at which a
/// transcript diverges, if any. The two actor calls may overlap in time
/// but their records still carry ordinals 1 and 2.
pub fn verify_generation_order(transcript: &[CompletionRecord]) -> Result<(), usize> {
    const ORDER: [(TemplateId, u32); 5] = [
        (TemplateId::Actor, 1),
        (TemplateId::Actor, 2),
        (TemplateId::Aggregator, 1),
        (TemplateId::Critic, 1),
        (TemplateId::Formatter, 1),
    ];
    let generation: Vec<&CompletionRecord> = transcript
        .iter()
        .filter(|r| r.template_id.is_generation_stage() && r.error.is_none())
        .collect();
    for (idx, record) in generation.iter().enumerate() {
        let (expected_template, expected_ordinal) = ORDER[idx % ORDER.len()];
        let expected_attempt = (idx / ORDER.len()) as u32 + 1;
        let mut key = (record.template_id, record.ordinal, record.attempt);
        // The two actors may complete in either order.
        if key.0 == TemplateId::Actor && key.1 <= 2 && expected_template == TemplateId::Actor {
            key.1 = expected_ordinal;
        }
        if key != (expected_template, expected_ordinal, expected_attempt) {
            return Err(idx);
        }
    }
    Ok(())
}

/// Run the whole feedback pipeline for one review.
///
/// Per attempt: exactly five generation calls in the order actor, actor,
/// aggregator, critic, formatter (the actor pair runs concurrently),
/// followed by the reliability gate. A gate pass terminates the run; a
/// fail re-runs the whole pipeline with fresh sampling, nothing reused.
/// After `max_attempts` gate failures the bundle is `Failed` and carries
/// no postable text.
pub async fn run_agent(
    paper: &PaperDoc,
    review: &Review,
    client: &LlmClient,
    templates: &TemplateStore,
    config: &AgentConfig,
) -> FeedbackBundle {
    let mut bundle = FeedbackBundle {
        review_id: review.review_id.clone(),
        attempt_outputs: Vec::new(),
        items: Vec::new(),
        gate_results: Vec::new(),
        attempts_used: 0,
        status: BundleStatus::Failed,
        failure_cause: None,
        warnings: Vec::new(),
        transcript: Vec::new(),
    };
    let review_text = review.prompt_text();

    for attempt in 1..=config.max_attempts.max(1) {
        bundle.attempts_used = attempt;
        match run_attempt(paper, &review_text, client, templates, attempt).await {
            Err(err) => {
                bundle.failure_cause = Some(err.to_string());
                bundle.status = BundleStatus::Failed;
                break;
            }
            Ok(stages) => {
                let (verdict, mut items) =
                    guard::gate(&stages.formatted, &review_text, client, templates, attempt)
                        .await;
                bundle.attempt_outputs.push(stages);
                let passed = verdict.passed;
                bundle.gate_results.push(verdict);
                if passed {
                    let review_norm = normalize_ws(&review_text);
                    for item in &mut items {
                        item.comment_verbatim =
                            Some(review_norm.contains(&normalize_ws(&item.comment)));
                    }
                    if items.len() > config.item_warning_threshold {
                        let warning = format!(
                            "{} feedback items exceeds the soft bound of {}",
                            items.len(),
                            config.item_warning_threshold
                        );
                        tracing::warn!(review_id = %review.review_id, "{warning}");
                        bundle.warnings.push(warning);
                    }
                    bundle.status = if items.is_empty() {
                        BundleStatus::NoFeedbackNeeded
                    } else {
                        BundleStatus::Posted
                    };
                    bundle.items = items;
                    break;
                }
            }
        }
    }

    bundle.transcript = client.transcript();
    if verify_generation_order(&bundle.transcript).is_err() {
        tracing::warn!(
            review_id = %review.review_id,
            "generation calls out of pipeline order"
        );
    }
    bundle
}

async fn run_attempt(
    paper: &PaperDoc,
    review_text: &str,
    client: &LlmClient,
    templates: &TemplateStore,
    attempt: u32,
) -> Result<StageTexts, StageError> {
    let actor = templates.render(
        TemplateId::Actor,
        &bindings([("paper", paper.text.as_str()), ("review", review_text)]),
    )?;
    let (first, second) = tokio::join!(
        client.complete_at(&actor, attempt, 1),
        client.complete_at(&actor, attempt, 2)
    );
    let actor_a = first?;
    let actor_b = second?;

    let feedback_lists = format!("Feedback list 1: {actor_a}\n\nFeedback list 2: {actor_b}");
    let aggregator = templates.render(
        TemplateId::Aggregator,
        &bindings([
            ("paper", paper.text.as_str()),
            ("feedbacks", feedback_lists.as_str()),
            ("review", review_text),
        ]),
    )?;
    let combined = client.complete(&aggregator, attempt).await?;

    let critic = templates.render(
        TemplateId::Critic,
        &bindings([
            ("paper", paper.text.as_str()),
            ("feedback", combined.as_str()),
            ("review", review_text),
        ]),
    )?;
    let filtered = client.complete(&critic, attempt).await?;

    let formatter = templates.render(
        TemplateId::Formatter,
        &bindings([("feedback", filtered.as_str())]),
    )?;
    let formatted = client.complete(&formatter, attempt).await?;

    Ok(StageTexts {
        actor_a,
        actor_b,
        combined,
        filtered,
        formatted,
    })
}
