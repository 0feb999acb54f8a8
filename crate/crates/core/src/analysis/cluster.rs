//! Model-driven clustering of feedback items.
//!
//! Three stages: propose candidate cluster names over seeded samples
//! (repeated for robustness), select a non-overlapping subset, then
//! assign every item to exactly one selected label.

use std::collections::BTreeMap;

use rand::seq::index::sample as index_sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{bindings, LlmClient, LlmError, TemplateError, TemplateId, TemplateStore};
use crate::pipeline::FeedbackItem;

/// Items the assigner could not place after one re-ask carry this label.
pub const UNASSIGNED_LABEL: &str = "unassigned";

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("no feedback items to cluster")]
    NoItems,
    #[error("cluster proposal returned {got} names, wanted {want}")]
    ProposalParse { want: usize, got: usize },
    #[error("cluster selection returned {got} names, wanted {want}")]
    SelectionParse { want: usize, got: usize },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Provider(#[from] LlmError),
}

#[derive(Debug, Clone)]
pub struct ClusterConfig {
    /// Number of clusters.
    pub k: usize,
    /// Sample size per proposal repetition (clamped to the corpus size).
    pub sample: usize,
    /// Proposal repetitions; candidates total `k * repetitions`.
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k: 5,
            sample: 1_000,
            repetitions: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterOutcome {
    /// The selected cluster labels, in selection order.
    pub labels: Vec<String>,
    /// Per-item label, parallel to the input items. Every item carries
    /// exactly one label; unplaceable items carry [`UNASSIGNED_LABEL`].
    pub assignments: Vec<String>,
    /// Label → item count; sums to the corpus size.
    pub counts: BTreeMap<String, usize>,
    pub unassigned: usize,
    /// Candidate names produced by the proposal repetitions.
    pub candidates: Vec<String>,
}

fn parse_label_lines(text: &str) -> Vec<String> {
    text.lines()
        .map(|line| {
            line.trim()
                .trim_start_matches(|c: char| {
                    c.is_ascii_digit() || c == '.' || c == ')' || c == '-' || c == '*'
                })
                .trim()
                .to_string()
        })
        .filter(|line| !line.is_empty())
        .collect()
}

fn render_items_block(items: &[&FeedbackItem]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(idx, item)| format!("{}. {}", idx + 1, item.feedback))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Cluster the corpus: propose `k` names per repetition over seeded
/// samples, select `k` non-overlapping labels from the candidates, then
/// label every item. Counts are tallied per label; items the assigner
/// cannot place after one re-ask are labeled "unassigned" and reported.
pub async fn cluster_feedback(
    items: &[FeedbackItem],
    config: &ClusterConfig,
    client: &LlmClient,
    templates: &TemplateStore,
) -> Result<ClusterOutcome, ClusterError> {
    if items.is_empty() {
        return Err(ClusterError::NoItems);
    }
    let k_text = config.k.to_string();

    // Stage 1: propose candidates over seeded samples.
    let mut candidates = Vec::with_capacity(config.k * config.repetitions);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..config.repetitions.max(1) {
        let take = config.sample.min(items.len());
        let sampled: Vec<&FeedbackItem> = index_sample(&mut rng, items.len(), take)
            .into_iter()
            .map(|idx| &items[idx])
            .collect();
        let block = render_items_block(&sampled);
        let bundle = templates.render(
            TemplateId::ClusterPropose,
            &bindings([("k", k_text.as_str()), ("feedback_items", block.as_str())]),
        )?;
        let response = client.complete(&bundle, 1).await?;
        let names = parse_label_lines(&response);
        if names.len() != config.k {
            return Err(ClusterError::ProposalParse {
                want: config.k,
                got: names.len(),
            });
        }
        candidates.extend(names);
    }

    // Stage 2: select k non-overlapping labels.
    let candidate_block = candidates.join("\n");
    let bundle = templates.render(
        TemplateId::ClusterSelect,
        &bindings([("k", k_text.as_str()), ("candidates", candidate_block.as_str())]),
    )?;
    let response = client.complete(&bundle, 1).await?;
    let labels = parse_label_lines(&response);
    if labels.len() != config.k {
        return Err(ClusterError::SelectionParse {
            want: config.k,
            got: labels.len(),
        });
    }

    // Stage 3: assign every item to exactly one label.
    let label_block = labels.join("\n");
    let mut assignments = Vec::with_capacity(items.len());
    let mut counts: BTreeMap<String, usize> =
        labels.iter().map(|l| (l.clone(), 0)).collect();
    let mut unassigned = 0usize;
    for item in items {
        let bundle = templates.render(
            TemplateId::ClusterAssign,
            &bindings([("labels", label_block.as_str()), ("feedback", item.feedback.as_str())]),
        )?;
        let mut label = None;
        for _ in 0..2 {
            let response = client.complete(&bundle, 1).await?;
            let choice = response.trim();
            if let Some(found) = labels.iter().find(|l| l.as_str() == choice) {
                label = Some(found.clone());
                break;
            }
        }
        let label = label.unwrap_or_else(|| {
            unassigned += 1;
            UNASSIGNED_LABEL.to_string()
        });
        *counts.entry(label.clone()).or_insert(0) += 1;
        assignments.push(label);
    }

    Ok(ClusterOutcome {
        labels,
        assignments,
        counts,
        unassigned,
        candidates,
    })
}
