//! Shared fixtures for integration tests.
#![allow(dead_code)]

use rfa_core::llm::MockProvider;
use rfa_core::{PaperDoc, RawReview, Review, SourceKind, TemplateId};

pub fn sample_paper() -> PaperDoc {
    PaperDoc {
        paper_id: "p1".into(),
        text: "We propose a widget. Table 3 reports results on Llama 2-7B.".into(),
        source_kind: SourceKind::PlainText,
        char_count: 60,
        truncated: false,
    }
}

pub fn sample_raw_review(review_id: &str) -> RawReview {
    RawReview {
        review_id: review_id.into(),
        paper_id: "p1".into(),
        reviewer: "~Reviewer_One1".into(),
        summary: "The paper proposes a widget.".into(),
        strengths: "Clear presentation.".into(),
        weaknesses: "The experimental setup should be described in more detail.".into(),
        questions: "How is the performance on Llama?".into(),
        soundness: Some(3),
        presentation: Some(2),
        contribution: Some(3),
        rating: Some(5),
        confidence: Some(4),
        submitted_at: 1_000,
    }
}

pub fn sample_review(review_id: &str) -> Review {
    rfa_core::ingest::parse_review(&sample_raw_review(review_id), "test-salt").unwrap()
}

pub const ONE_PAIR: &str = "**Reviewer comment:** The experimental setup should be described in more detail.\n\n**Feedback to the reviewer:** It would help to name the specific missing details, for example hardware, frameworks, or hyperparameters.";

/// Script the five generation calls of one pipeline attempt.
pub fn script_generation(mock: &MockProvider, attempt: u32, formatter_output: &str) {
    mock.respond(TemplateId::Actor, attempt, 1, "Comment: setup\nFeedback: name the missing details");
    mock.respond(TemplateId::Actor, attempt, 2, "Comment: setup\nFeedback: specify hardware");
    mock.respond(TemplateId::Aggregator, attempt, 1, "**Comment:** setup\n**Feedback:** merged feedback");
    mock.respond(TemplateId::Critic, attempt, 1, "**Comment:** setup\n**Feedback:** sharpened feedback");
    mock.respond(TemplateId::Formatter, attempt, 1, formatter_output);
}

/// Script the three judged reliability tests for one attempt.
pub fn script_judges(mock: &MockProvider, attempt: u32, praise: bool, addressee: bool, restating: bool) {
    let verdict = |ok: bool| {
        if ok {
            "VERDICT: PASS\nok".to_string()
        } else {
            "VERDICT: FAIL\nbad".to_string()
        }
    };
    mock.respond(TemplateId::ReliabilityJudge, attempt, 1, &verdict(praise));
    mock.respond(TemplateId::ReliabilityJudge, attempt, 2, &verdict(addressee));
    mock.respond(TemplateId::ReliabilityJudge, attempt, 3, &verdict(restating));
}
