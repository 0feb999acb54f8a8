//! Model-judged incorporation analysis.
//!
//! For each feedback item on an updated review, a judge call decides
//! whether the suggestion made it into the modified review and assigns
//! the item one of the three feedback categories. A deterministic
//! short-circuit handles the case the prompt itself pins down: a comment
//! still present verbatim in the modified review was not incorporated,
//! so only the category is judged.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{bindings, LlmClient, LlmError, TemplateError, TemplateId, TemplateStore};
use crate::pipeline::{normalize_ws, FeedbackCategory, FeedbackItem};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum JudgeParseError {
    #[error("no <OUTPUT>...</OUTPUT> span in judge response")]
    MissingTags,
    #[error("expected two comma-separated values, got {0}")]
    WrongArity(usize),
    #[error("boolean must be uppercase TRUE or FALSE, got {0:?}")]
    BadBoolean(String),
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
}

#[derive(Debug, Error)]
pub enum IncorporationError {
    #[error("judge output unparseable after re-ask: {0}")]
    JudgeParse(#[from] JudgeParseError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Provider(#[from] LlmError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncorporationVerdict {
    pub review_id: String,
    pub item_index: usize,
    pub incorporated: bool,
    pub category: FeedbackCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub reasoning: String,
}

fn output_span(text: &str) -> Result<&str, JudgeParseError> {
    let start = text.find("<OUTPUT>").ok_or(JudgeParseError::MissingTags)?;
    let rest = &text[start + "<OUTPUT>".len()..];
    let end = rest.find("</OUTPUT>").ok_or(JudgeParseError::MissingTags)?;
    Ok(&rest[..end])
}

/// Extract `(incorporated, category)` from the first `<OUTPUT>…</OUTPUT>`
/// span. Booleans must be uppercase TRUE/FALSE; reasoning prose around the
/// span is ignored.
pub fn parse_judge_output(text: &str) -> Result<(bool, FeedbackCategory), JudgeParseError> {
    let span = output_span(text)?;
    let parts: Vec<&str> = span.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(JudgeParseError::WrongArity(parts.len()));
    }
    let incorporated = match parts[0] {
        "TRUE" => true,
        "FALSE" => false,
        other => return Err(JudgeParseError::BadBoolean(other.to_string())),
    };
    let category = FeedbackCategory::parse(parts[1])
        .ok_or_else(|| JudgeParseError::UnknownCategory(parts[1].to_string()))?;
    Ok((incorporated, category))
}

/// Extract a category from a category-only judge response.
pub fn parse_category_output(text: &str) -> Result<FeedbackCategory, JudgeParseError> {
    let span = output_span(text)?;
    let value = span.trim();
    FeedbackCategory::parse(value)
        .ok_or_else(|| JudgeParseError::UnknownCategory(value.to_string()))
}

/// Judge one feedback item against the original and modified review texts.
///
/// When the item's comment still appears verbatim (whitespace-normalized)
/// in the modified review, incorporation is FALSE without an
/// incorporation-judge call and only the category is judged. Malformed
/// judge output is re-asked once.
pub async fn judge_incorporation(
    review_id: &str,
    item_index: usize,
    original_review: &str,
    modified_review: &str,
    item: &FeedbackItem,
    client: &LlmClient,
    templates: &TemplateStore,
) -> Result<IncorporationVerdict, IncorporationError> {
    let modified_norm = normalize_ws(modified_review);
    let comment_norm = normalize_ws(&item.comment);

    if !comment_norm.is_empty() && modified_norm.contains(&comment_norm) {
        let bundle = templates.render(
            TemplateId::CategoryJudge,
            &bindings([("feedback", item.feedback.as_str())]),
        )?;
        let mut last_err = JudgeParseError::MissingTags;
        for _ in 0..2 {
            let response = client.complete(&bundle, 1).await?;
            match parse_category_output(&response) {
                Ok(category) => {
                    return Ok(IncorporationVerdict {
                        review_id: review_id.to_string(),
                        item_index,
                        incorporated: false,
                        category,
                        cluster: None,
                        reasoning: "comment appears verbatim in the modified review".into(),
                    })
                }
                Err(err) => last_err = err,
            }
        }
        return Err(IncorporationError::JudgeParse(last_err));
    }

    let bundle = templates.render(
        TemplateId::IncorporationJudge,
        &bindings([
            ("original_review", original_review),
            ("modified_review", modified_review),
            ("comment", item.comment.as_str()),
            ("feedback", item.feedback.as_str()),
        ]),
    )?;
    let mut last_err = JudgeParseError::MissingTags;
    for _ in 0..2 {
        let response = client.complete(&bundle, 1).await?;
        match parse_judge_output(&response) {
            Ok((incorporated, category)) => {
                return Ok(IncorporationVerdict {
                    review_id: review_id.to_string(),
                    item_index,
                    incorporated,
                    category,
                    cluster: None,
                    reasoning: response
                        .split("<OUTPUT>")
                        .next()
                        .unwrap_or_default()
                        .trim()
                        .to_string(),
                })
            }
            Err(err) => last_err = err,
        }
    }
    Err(IncorporationError::JudgeParse(last_err))
}
