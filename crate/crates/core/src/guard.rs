//! Reliability tests and the all-pass gate.
//!
//! Four tests guard every candidate feedback body: one deterministic
//! format check and three model-judged checks (praise-only, addressed to
//! the wrong party, restating the review). Feedback is postable only when
//! all four pass.

use serde::{Deserialize, Serialize};

use crate::llm::{bindings, LlmClient, TemplateId, TemplateStore};
use crate::pipeline::{
    parse_with_prefix, render_feedback_items, FeedbackItem, NO_FEEDBACK_SENTINEL,
};

/// First line of a judge response, bit-exact.
pub const VERDICT_PASS: &str = "VERDICT: PASS";
pub const VERDICT_FAIL: &str = "VERDICT: FAIL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReliabilityTest {
    NoPraiseOnly,
    AddressesReviewer,
    NotRestating,
    FormatCorrect,
}

impl ReliabilityTest {
    pub const ALL: [ReliabilityTest; 4] = [
        ReliabilityTest::FormatCorrect,
        ReliabilityTest::NoPraiseOnly,
        ReliabilityTest::AddressesReviewer,
        ReliabilityTest::NotRestating,
    ];

    pub const JUDGED: [ReliabilityTest; 3] = [
        ReliabilityTest::NoPraiseOnly,
        ReliabilityTest::AddressesReviewer,
        ReliabilityTest::NotRestating,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ReliabilityTest::NoPraiseOnly => "no_praise_only",
            ReliabilityTest::AddressesReviewer => "addresses_reviewer",
            ReliabilityTest::NotRestating => "not_restating",
            ReliabilityTest::FormatCorrect => "format_correct",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|t| t.as_str() == name)
    }

    /// Judge ordinal within one gate evaluation, fixed so mock scripts and
    /// transcripts are stable: praise=1, addressee=2, restating=3.
    pub fn judge_ordinal(&self) -> u32 {
        match self {
            ReliabilityTest::NoPraiseOnly => 1,
            ReliabilityTest::AddressesReviewer => 2,
            ReliabilityTest::NotRestating => 3,
            ReliabilityTest::FormatCorrect => 0,
        }
    }

    /// Instruction block handed to the judge, written from the test
    /// definitions with their failing examples as in-context cases.
    pub fn judge_instruction(&self) -> &'static str {
        match self {
            ReliabilityTest::NoPraiseOnly => {
                "Make sure the feedback does not simply praise what the reviewer wrote \
                 without providing critical suggestions to improve their comment. Feedback \
                 that only agrees with or compliments the reviewer fails this test; feedback \
                 that asks the reviewer to change something about their comment passes.\n\n\
                 Example feedback that fails this test:\n\
                 \"This is a good question that challenges a key assumption of the paper.\""
            }
            ReliabilityTest::AddressesReviewer => {
                "Certify that the feedback is addressed to the reviewer with suggestions to \
                 make their review better, rather than addressed to the author of the paper \
                 with suggestions on how they can improve their paper. Feedback that tells \
                 the authors what to do with the paper fails this test.\n\n\
                 Example feedback that fails this test:\n\
                 \"To strengthen your paper, consider discussing the relationship between \
                 FrugalGPT and traditional ensembling techniques. Highlight both similarities \
                 and differences and explain how this relates to the observed quality \
                 improvements. This would provide more context for your results and situate \
                 your work within the broader field of machine learning.\""
            }
            ReliabilityTest::NotRestating => {
                "Does the feedback simply restate what the review comment says without \
                 providing any new meaningful and unique suggestions? Feedback that only \
                 rephrases the reviewer's own words fails this test.\n\n\
                 Example reviewer comment: Can examples or further clarification be given \
                 for the 3.1 sentence \"enhancing the accountability of the output\"? This \
                 isn't clear, at least to me.\n\
                 Example feedback that fails this test: This is a good point that could lead \
                 to improved clarity in the paper. To make your comment more actionable, you \
                 could ask the authors to provide examples or further clarification for the \
                 sentence \"enhancing the accountability of the output\"."
            }
            ReliabilityTest::FormatCorrect => {
                "Ensure that all feedback pairs are in the correct format, protecting \
                 against any errors in the pipeline that could have led to malformed \
                 feedback."
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgedBy {
    Deterministic,
    Model,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestVerdict {
    pub test_id: ReliabilityTest,
    pub passed: bool,
    pub reason: String,
    pub judged_by: JudgedBy,
}

/// Conjunction of the four test verdicts; `passed` iff all four passed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateVerdict {
    pub verdicts: Vec<TestVerdict>,
    pub passed: bool,
}

impl GateVerdict {
    fn conjoin(verdicts: Vec<TestVerdict>) -> Self {
        debug_assert_eq!(verdicts.len(), 4);
        let passed = verdicts.iter().all(|v| v.passed);
        GateVerdict { verdicts, passed }
    }

    pub fn verdict_for(&self, test: ReliabilityTest) -> Option<&TestVerdict> {
        self.verdicts.iter().find(|v| v.test_id == test)
    }
}

/// Deterministic format test: passes iff the text is the sentinel, or it
/// parses to at least one pair with no stray prose outside the pairs.
pub fn check_format(final_text: &str) -> (TestVerdict, Option<Vec<FeedbackItem>>) {
    let verdict = |passed: bool, reason: String| TestVerdict {
        test_id: ReliabilityTest::FormatCorrect,
        passed,
        reason,
        judged_by: JudgedBy::Deterministic,
    };
    match parse_with_prefix(final_text) {
        Ok((items, prefix)) => {
            if !prefix.is_empty() {
                return (
                    verdict(
                        false,
                        format!("stray prose before the first pair: {prefix:.40?}"),
                    ),
                    None,
                );
            }
            if items.is_empty() {
                (
                    verdict(true, format!("sentinel {NO_FEEDBACK_SENTINEL:?}")),
                    Some(items),
                )
            } else {
                (
                    verdict(true, format!("{} well-formed pair(s)", items.len())),
                    Some(items),
                )
            }
        }
        Err(err) => (verdict(false, err.to_string()), None),
    }
}

fn parse_judge_verdict(response: &str) -> Option<(bool, String)> {
    let mut lines = response.trim().lines();
    let first = lines.next()?.trim();
    let passed = match first {
        VERDICT_PASS => true,
        VERDICT_FAIL => false,
        _ => return None,
    };
    let reason = lines.collect::<Vec<_>>().join("\n").trim().to_string();
    Some((passed, reason))
}

/// Run one model-judged reliability test over a whole bundle (one judge
/// call covering all items). Malformed judge output is re-asked once and
/// then treated as FAIL; provider errors also land as FAIL with the cause
/// recorded.
pub async fn run_judged_test(
    test: ReliabilityTest,
    review_text: &str,
    items: &[FeedbackItem],
    client: &LlmClient,
    templates: &TemplateStore,
    attempt: u32,
) -> TestVerdict {
    debug_assert!(!items.is_empty(), "judged tests need items");
    let rendered_items = render_feedback_items(items);
    let bundle = match templates.render(
        TemplateId::ReliabilityJudge,
        &bindings([
            ("test_name", test.as_str()),
            ("test_instruction", test.judge_instruction()),
            ("review", review_text),
            ("feedback_items", rendered_items.as_str()),
        ]),
    ) {
        Ok(bundle) => bundle,
        Err(err) => {
            return TestVerdict {
                test_id: test,
                passed: false,
                reason: format!("judge prompt failed to render: {err}"),
                judged_by: JudgedBy::Model,
            }
        }
    };

    for ask in 0..2 {
        match client
            .complete_at(&bundle, attempt, test.judge_ordinal())
            .await
        {
            Err(err) => {
                return TestVerdict {
                    test_id: test,
                    passed: false,
                    reason: format!("provider error: {err}"),
                    judged_by: JudgedBy::Model,
                }
            }
            Ok(response) => match parse_judge_verdict(&response) {
                Some((passed, reason)) => {
                    return TestVerdict {
                        test_id: test,
                        passed,
                        reason,
                        judged_by: JudgedBy::Model,
                    }
                }
                None if ask == 0 => continue,
                None => break,
            },
        }
    }
    TestVerdict {
        test_id: test,
        passed: false,
        reason: "judge unparseable".into(),
        judged_by: JudgedBy::Model,
    }
}

/// Evaluate the full gate. The format check runs first; when it fails the
/// three judged tests are skipped and recorded as not-run failures. The
/// sentinel has no items to judge and always passes.
pub async fn gate(
    final_text: &str,
    review_text: &str,
    client: &LlmClient,
    templates: &TemplateStore,
    attempt: u32,
) -> (GateVerdict, Vec<FeedbackItem>) {
    let (format_verdict, items) = check_format(final_text);
    let Some(items) = items else {
        let mut verdicts = vec![format_verdict];
        for test in ReliabilityTest::JUDGED {
            verdicts.push(TestVerdict {
                test_id: test,
                passed: false,
                reason: "not run: format check failed".into(),
                judged_by: JudgedBy::Deterministic,
            });
        }
        return (GateVerdict::conjoin(verdicts), Vec::new());
    };

    if items.is_empty() {
        let mut verdicts = vec![format_verdict];
        for test in ReliabilityTest::JUDGED {
            verdicts.push(TestVerdict {
                test_id: test,
                passed: true,
                reason: "no feedback items to judge".into(),
                judged_by: JudgedBy::Deterministic,
            });
        }
        return (GateVerdict::conjoin(verdicts), items);
    }

    let (praise, addressee, restating) = tokio::join!(
        run_judged_test(
            ReliabilityTest::NoPraiseOnly,
            review_text,
            &items,
            client,
            templates,
            attempt
        ),
        run_judged_test(
            ReliabilityTest::AddressesReviewer,
            review_text,
            &items,
            client,
            templates,
            attempt
        ),
        run_judged_test(
            ReliabilityTest::NotRestating,
            review_text,
            &items,
            client,
            templates,
            attempt
        ),
    );
    (
        GateVerdict::conjoin(vec![format_verdict, praise, addressee, restating]),
        items,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::MockProvider;
    use crate::pipeline::{COMMENT_MARKER, FEEDBACK_MARKER};
    use std::sync::Arc;

    fn two_pairs() -> String {
        render_feedback_items(&[
            FeedbackItem::new("First comment.", "First feedback."),
            FeedbackItem::new("Second comment.", "Second feedback."),
        ])
    }

    #[test]
    fn well_formed_pairs_pass_format() {
        let (verdict, items) = check_format(&two_pairs());
        assert!(verdict.passed);
        assert_eq!(verdict.judged_by, JudgedBy::Deterministic);
        assert_eq!(items.unwrap().len(), 2);
    }

    #[test]
    fn missing_feedback_marker_fails_format_and_names_it() {
        let text = format!("{COMMENT_MARKER} Only a comment, no feedback line.");
        let (verdict, items) = check_format(&text);
        assert!(!verdict.passed);
        assert!(items.is_none());
        assert!(verdict.reason.contains(FEEDBACK_MARKER));
    }

    #[test]
    fn sentinel_passes_format() {
        let (verdict, items) = check_format("Thanks for your hard work!");
        assert!(verdict.passed);
        assert_eq!(items.unwrap().len(), 0);
    }

    #[test]
    fn leading_prose_fails_format() {
        let text = format!("Here is my feedback:\n\n{}", two_pairs());
        let (verdict, _) = check_format(&text);
        assert!(!verdict.passed);
        assert!(verdict.reason.contains("stray prose"));
    }

    #[tokio::test]
    async fn scripted_judge_pass() {
        let mock = MockProvider::new();
        mock.respond(
            TemplateId::ReliabilityJudge,
            1,
            1,
            "VERDICT: PASS\nConstructive suggestions present.",
        );
        let client = LlmClient::new(Arc::new(mock));
        let templates = TemplateStore::builtin();
        let items = [FeedbackItem::new("C", "F")];
        let verdict = run_judged_test(
            ReliabilityTest::NoPraiseOnly,
            "review",
            &items,
            &client,
            &templates,
            1,
        )
        .await;
        assert!(verdict.passed);
        assert_eq!(verdict.judged_by, JudgedBy::Model);
    }

    #[tokio::test]
    async fn malformed_judge_retried_once_then_fails() {
        let mock = MockProvider::new();
        mock.respond(TemplateId::ReliabilityJudge, 1, 3, "maybe?");
        mock.respond(TemplateId::ReliabilityJudge, 1, 3, "still not a verdict");
        let client = LlmClient::new(Arc::new(mock));
        let templates = TemplateStore::builtin();
        let items = [FeedbackItem::new("C", "F")];
        let verdict = run_judged_test(
            ReliabilityTest::NotRestating,
            "review",
            &items,
            &client,
            &templates,
            1,
        )
        .await;
        assert!(!verdict.passed);
        assert_eq!(verdict.reason, "judge unparseable");
    }

    #[tokio::test]
    async fn malformed_then_valid_judge_recovers() {
        let mock = MockProvider::new();
        mock.respond(TemplateId::ReliabilityJudge, 1, 2, "???");
        mock.respond(TemplateId::ReliabilityJudge, 1, 2, "VERDICT: FAIL\nAddressed to authors.");
        let client = LlmClient::new(Arc::new(mock));
        let templates = TemplateStore::builtin();
        let items = [FeedbackItem::new("C", "F")];
        let verdict = run_judged_test(
            ReliabilityTest::AddressesReviewer,
            "review",
            &items,
            &client,
            &templates,
            1,
        )
        .await;
        assert!(!verdict.passed);
        assert_eq!(verdict.reason, "Addressed to authors.");
    }

    #[tokio::test]
    async fn provider_error_records_cause_as_fail() {
        let client = LlmClient::new(Arc::new(MockProvider::new()));
        let templates = TemplateStore::builtin();
        let items = [FeedbackItem::new("C", "F")];
        let verdict = run_judged_test(
            ReliabilityTest::NoPraiseOnly,
            "review",
            &items,
            &client,
            &templates,
            1,
        )
        .await;
        assert!(!verdict.passed);
        assert!(verdict.reason.contains("provider error"));
    }

    #[tokio::test]
    async fn gate_skips_judges_on_format_failure() {
        let client = LlmClient::new(Arc::new(MockProvider::new()));
        let templates = TemplateStore::builtin();
        let (verdict, items) = gate("no markers here", "review", &client, &templates, 1).await;
        assert!(!verdict.passed);
        assert!(items.is_empty());
        assert_eq!(verdict.verdicts.len(), 4);
        for test in ReliabilityTest::JUDGED {
            let v = verdict.verdict_for(test).unwrap();
            assert!(!v.passed);
            assert!(v.reason.contains("not run"));
        }
    }

    #[tokio::test]
    async fn gate_passes_sentinel_without_judge_calls() {
        let client = LlmClient::new(Arc::new(MockProvider::new()));
        let templates = TemplateStore::builtin();
        let (verdict, items) =
            gate("Thanks for your hard work!", "review", &client, &templates, 1).await;
        assert!(verdict.passed);
        assert!(items.is_empty());
        assert!(client.transcript().is_empty());
    }

    #[tokio::test]
    async fn gate_is_conjunction() {
        let gate_with = |praise: bool, addressee: bool, restating: bool| async move {
            let mock = MockProvider::new();
            let label = |ok: bool| if ok { "VERDICT: PASS\nok" } else { "VERDICT: FAIL\nbad" };
            mock.respond(TemplateId::ReliabilityJudge, 1, 1, label(praise));
            mock.respond(TemplateId::ReliabilityJudge, 1, 2, label(addressee));
            mock.respond(TemplateId::ReliabilityJudge, 1, 3, label(restating));
            let client = LlmClient::new(Arc::new(mock));
            let templates = TemplateStore::builtin();
            let (verdict, _) = gate(&two_pairs(), "review", &client, &templates, 1).await;
            verdict.passed
        };
        assert!(gate_with(true, true, true).await);
        assert!(!gate_with(false, true, true).await);
        assert!(!gate_with(true, false, true).await);
        assert!(!gate_with(true, true, false).await);
    }
}
