//! End-to-end pipeline conformance against scripted providers.

mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use common::*;
use rfa_core::llm::{LlmClient, MockProvider};
use rfa_core::pipeline::{run_stage, verify_generation_order, StageError};
use rfa_core::{run_agent, AgentConfig, BundleStatus, TemplateId, TemplateStore};

fn generation_calls(bundle: &rfa_core::FeedbackBundle) -> usize {
    bundle
        .transcript
        .iter()
        .filter(|r| r.template_id.is_generation_stage())
        .count()
}

#[tokio::test]
async fn pass_first_attempt_is_five_generation_calls() {
    let mock = MockProvider::new();
    script_generation(&mock, 1, ONE_PAIR);
    script_judges(&mock, 1, true, true, true);
    let client = LlmClient::new(Arc::new(mock));
    let templates = TemplateStore::builtin();
    let bundle = run_agent(
        &sample_paper(),
        &sample_review("r1"),
        &client,
        &templates,
        &AgentConfig::default(),
    )
    .await;

    assert_eq!(bundle.status, BundleStatus::Posted);
    assert_eq!(bundle.attempts_used, 1);
    assert_eq!(generation_calls(&bundle), 5);
    assert_eq!(bundle.items.len(), 1);
    assert!(bundle.gate_results[0].passed);
    assert!(verify_generation_order(&bundle.transcript).is_ok());
}

#[tokio::test]
async fn sentinel_formatter_is_no_feedback_needed() {
    let mock = MockProvider::new();
    script_generation(&mock, 1, "Thanks for your hard work!");
    let client = LlmClient::new(Arc::new(mock));
    let templates = TemplateStore::builtin();
    let bundle = run_agent(
        &sample_paper(),
        &sample_review("r1"),
        &client,
        &templates,
        &AgentConfig::default(),
    )
    .await;

    assert_eq!(bundle.status, BundleStatus::NoFeedbackNeeded);
    assert!(bundle.items.is_empty());
    assert_eq!(bundle.attempts_used, 1);
    // Sentinel output has nothing to judge; only the 5 generation calls ran.
    assert_eq!(bundle.transcript.len(), 5);
}

#[tokio::test]
async fn praise_failure_retries_whole_pipeline() {
    let mock = MockProvider::new();
    script_generation(&mock, 1, ONE_PAIR);
    script_judges(&mock, 1, false, true, true);
    script_generation(&mock, 2, ONE_PAIR);
    script_judges(&mock, 2, true, true, true);
    let client = LlmClient::new(Arc::new(mock));
    let templates = TemplateStore::builtin();
    let bundle = run_agent(
        &sample_paper(),
        &sample_review("r1"),
        &client,
        &templates,
        &AgentConfig::default(),
    )
    .await;

    assert_eq!(bundle.status, BundleStatus::Posted);
    assert_eq!(bundle.attempts_used, 2);
    assert_eq!(generation_calls(&bundle), 10);
    assert!(!bundle.gate_results[0].passed);
    assert!(bundle.gate_results[1].passed);
    assert!(verify_generation_order(&bundle.transcript).is_ok());
}

#[tokio::test]
async fn two_gate_failures_is_failed_with_no_postable_text() {
    let mock = MockProvider::new();
    script_generation(&mock, 1, ONE_PAIR);
    script_judges(&mock, 1, true, false, true);
    script_generation(&mock, 2, ONE_PAIR);
    script_judges(&mock, 2, true, true, false);
    let client = LlmClient::new(Arc::new(mock));
    let templates = TemplateStore::builtin();
    let bundle = run_agent(
        &sample_paper(),
        &sample_review("r1"),
        &client,
        &templates,
        &AgentConfig::default(),
    )
    .await;

    assert_eq!(bundle.status, BundleStatus::Failed);
    assert_eq!(bundle.attempts_used, 2);
    assert!(bundle.items.is_empty());
    assert_eq!(bundle.gate_results.len(), 2);
    assert!(bundle.gate_results.iter().all(|g| !g.passed));
}

#[tokio::test]
async fn provider_error_becomes_failed_bundle() {
    let mock = MockProvider::new();
    // Script only the actors; the aggregator call exhausts the script.
    mock.respond(TemplateId::Actor, 1, 1, "a");
    mock.respond(TemplateId::Actor, 1, 2, "b");
    let client = LlmClient::new(Arc::new(mock));
    let templates = TemplateStore::builtin();
    let bundle = run_agent(
        &sample_paper(),
        &sample_review("r1"),
        &client,
        &templates,
        &AgentConfig::default(),
    )
    .await;

    assert_eq!(bundle.status, BundleStatus::Failed);
    let cause = bundle.failure_cause.expect("cause recorded");
    assert!(cause.contains("script exhausted"), "cause: {cause}");
}

#[tokio::test]
async fn more_than_seventeen_items_warns_but_posts() {
    let pairs: Vec<String> = (0..18)
        .map(|i| {
            format!(
                "**Reviewer comment:** comment {i}\n\n**Feedback to the reviewer:** feedback {i}"
            )
        })
        .collect();
    let mock = MockProvider::new();
    script_generation(&mock, 1, &pairs.join("\n\n"));
    script_judges(&mock, 1, true, true, true);
    let client = LlmClient::new(Arc::new(mock));
    let templates = TemplateStore::builtin();
    let bundle = run_agent(
        &sample_paper(),
        &sample_review("r1"),
        &client,
        &templates,
        &AgentConfig::default(),
    )
    .await;

    assert_eq!(bundle.status, BundleStatus::Posted);
    assert_eq!(bundle.items.len(), 18);
    assert_eq!(bundle.warnings.len(), 1);
}

#[tokio::test]
async fn verbatim_comment_diagnostic_is_recorded() {
    let text = "**Reviewer comment:** The experimental setup should be described in more detail.\n\n**Feedback to the reviewer:** Name the missing details.\n\n**Reviewer comment:** totally invented comment\n\n**Feedback to the reviewer:** Some feedback.";
    let mock = MockProvider::new();
    script_generation(&mock, 1, text);
    script_judges(&mock, 1, true, true, true);
    let client = LlmClient::new(Arc::new(mock));
    let templates = TemplateStore::builtin();
    let bundle = run_agent(
        &sample_paper(),
        &sample_review("r1"),
        &client,
        &templates,
        &AgentConfig::default(),
    )
    .await;

    assert_eq!(bundle.items[0].comment_verbatim, Some(true));
    assert_eq!(bundle.items[1].comment_verbatim, Some(false));
}

#[tokio::test]
async fn prompts_never_carry_scores() {
    let templates = TemplateStore::builtin();
    let review = sample_review("r1");
    let review_text = review.prompt_text();
    let paper = sample_paper();

    let rendered = [
        templates
            .render(
                TemplateId::Actor,
                &rfa_core::llm::bindings([
                    ("paper", paper.text.as_str()),
                    ("review", review_text.as_str()),
                ]),
            )
            .unwrap(),
        templates
            .render(
                TemplateId::Aggregator,
                &rfa_core::llm::bindings([
                    ("paper", paper.text.as_str()),
                    ("feedbacks", "Feedback list 1: x\n\nFeedback list 2: y"),
                    ("review", review_text.as_str()),
                ]),
            )
            .unwrap(),
        templates
            .render(
                TemplateId::Critic,
                &rfa_core::llm::bindings([
                    ("paper", paper.text.as_str()),
                    ("feedback", "f"),
                    ("review", review_text.as_str()),
                ]),
            )
            .unwrap(),
    ];
    for bundle in rendered {
        let text = format!("{}\n{}", bundle.system_text, bundle.user_text).to_lowercase();
        for leaked in [
            "soundness:",
            "presentation:",
            "contribution:",
            "rating:",
            "confidence:",
        ] {
            assert!(
                !text.contains(leaked),
                "{leaked} leaked into {} prompt",
                bundle.template_id
            );
        }
    }
}

#[tokio::test]
async fn run_stage_routes_aggregator() {
    let mock = MockProvider::new();
    mock.respond(TemplateId::Aggregator, 1, 1, "merged list");
    let client = LlmClient::new(Arc::new(mock));
    let templates = TemplateStore::builtin();
    let mut inputs = BTreeMap::new();
    inputs.insert("paper".to_string(), "P".to_string());
    inputs.insert("feedbacks".to_string(), "Feedback list 1: a\n\nFeedback list 2: b".to_string());
    inputs.insert("review".to_string(), "R".to_string());
    let out = run_stage(TemplateId::Aggregator, &inputs, &client, &templates, 1)
        .await
        .unwrap();
    assert_eq!(out, "merged list");
}

#[tokio::test]
async fn run_stage_passes_sentinel_through() {
    let mock = MockProvider::new();
    mock.respond(TemplateId::Formatter, 1, 1, "Thanks for your hard work!");
    let client = LlmClient::new(Arc::new(mock));
    let templates = TemplateStore::builtin();
    let mut inputs = BTreeMap::new();
    inputs.insert("feedback".to_string(), String::new());
    let out = run_stage(TemplateId::Formatter, &inputs, &client, &templates, 1)
        .await
        .unwrap();
    assert_eq!(out, "Thanks for your hard work!");
}

#[tokio::test]
async fn run_stage_rejects_judge_templates() {
    let client = LlmClient::new(Arc::new(MockProvider::new()));
    let templates = TemplateStore::builtin();
    let err = run_stage(
        TemplateId::ReliabilityJudge,
        &BTreeMap::new(),
        &client,
        &templates,
        1,
    )
    .await
    .unwrap_err();
    assert!(matches!(err, StageError::InvalidStage(_)));
}

/// The stage router allows any order, but a transcript with the critic
/// before the aggregator is flagged by the order check.
#[tokio::test]
async fn out_of_order_stages_are_flagged() {
    let mock = MockProvider::new();
    mock.respond(TemplateId::Actor, 1, 1, "a");
    mock.respond(TemplateId::Actor, 1, 2, "b");
    mock.respond(TemplateId::Critic, 1, 1, "critic first");
    mock.respond(TemplateId::Aggregator, 1, 1, "aggregator second");
    let client = LlmClient::new(Arc::new(mock));
    let templates = TemplateStore::builtin();

    let mut inputs = BTreeMap::new();
    inputs.insert("paper".to_string(), "P".to_string());
    inputs.insert("review".to_string(), "R".to_string());
    run_stage(TemplateId::Actor, &inputs, &client, &templates, 1)
        .await
        .unwrap();
    run_stage(TemplateId::Actor, &inputs, &client, &templates, 1)
        .await
        .unwrap();
    inputs.insert("feedback".to_string(), "f".to_string());
    run_stage(TemplateId::Critic, &inputs, &client, &templates, 1)
        .await
        .unwrap();
    inputs.insert("feedbacks".to_string(), "f".to_string());
    run_stage(TemplateId::Aggregator, &inputs, &client, &templates, 1)
        .await
        .unwrap();

    assert_eq!(verify_generation_order(&client.transcript()), Err(2));
}
