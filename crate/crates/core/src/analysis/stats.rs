//! Statistical report over the experiment event log.
//!
//! Group comparisons use Welch's two-sample t-test for means and the
//! pooled two-proportion z-test for rates, both two-sided, with the
//! star convention * p<=0.05, ** p<=0.01, *** p<=0.001. A comparison
//! against an empty group is reported as not computable rather than
//! crashing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use super::update::{classify_update, word_delta, UpdateBasis, UpdateClass, UpdateClassification};
use crate::experiment::events::{replay, ExperimentEvent, FeedbackOutcome, ReviewState};
use crate::experiment::ExperimentAssignment;
use crate::ingest::Sections;

/// A rate kept as numerator/denominator so every reported value can be
/// recomputed exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rate {
    pub num: u64,
    pub den: u64,
}

impl Rate {
    pub fn new(num: u64, den: u64) -> Self {
        Rate { num, den }
    }

    pub fn value(&self) -> f64 {
        if self.den == 0 {
            0.0
        } else {
            self.num as f64 / self.den as f64
        }
    }

    pub fn pct(&self) -> f64 {
        self.value() * 100.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStat {
    pub n: u64,
    pub mean: f64,
    /// Sample standard deviation (n-1 denominator); 0 when n < 2.
    pub sd: f64,
}

impl MeanStat {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as u64;
        if samples.is_empty() {
            return MeanStat {
                n: 0,
                mean: 0.0,
                sd: 0.0,
            };
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let sd = if samples.len() > 1 {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
                / (samples.len() - 1) as f64;
            var.sqrt()
        } else {
            0.0
        };
        MeanStat { n, mean, sd }
    }
}

/// Result of a two-sided hypothesis test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
    pub stars: String,
}

pub fn stars(p_value: f64) -> &'static str {
    if p_value <= 0.001 {
        "***"
    } else if p_value <= 0.01 {
        "**"
    } else if p_value <= 0.05 {
        "*"
    } else {
        ""
    }
}

fn outcome(statistic: f64, p_value: f64) -> TestOutcome {
    TestOutcome {
        statistic,
        p_value,
        stars: stars(p_value).to_string(),
    }
}

/// Welch's two-sample t-test (unequal variances), two-sided. Returns
/// `None` when either sample has fewer than two observations or the
/// standard error degenerates with unequal means.
pub fn welch_t_test(sample_a: &[f64], sample_b: &[f64]) -> Option<TestOutcome> {
    if sample_a.len() < 2 || sample_b.len() < 2 {
        return None;
    }
    let a = MeanStat::from_samples(sample_a);
    let b = MeanStat::from_samples(sample_b);
    let na = sample_a.len() as f64;
    let nb = sample_b.len() as f64;
    let sea = a.sd * a.sd / na;
    let seb = b.sd * b.sd / nb;
    let se = (sea + seb).sqrt();
    if se == 0.0 {
        return if a.mean == b.mean {
            Some(outcome(0.0, 1.0))
        } else {
            None
        };
    }
    let t = (a.mean - b.mean) / se;
    let df = (sea + seb).powi(2)
        / (sea.powi(2) / (na - 1.0) + seb.powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Some(outcome(t, p.clamp(0.0, 1.0)))
}

/// Pooled two-proportion z-test, two-sided. Returns `None` when either
/// group is empty or the pooled variance degenerates with unequal
/// proportions.
pub fn two_proportion_z_test(x1: u64, n1: u64, x2: u64, n2: u64) -> Option<TestOutcome> {
    if n1 == 0 || n2 == 0 {
        return None;
    }
    let p1 = x1 as f64 / n1 as f64;
    let p2 = x2 as f64 / n2 as f64;
    let pooled = (x1 + x2) as f64 / (n1 + n2) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    if se == 0.0 {
        return if p1 == p2 {
            Some(outcome(0.0, 1.0))
        } else {
            None
        };
    }
    let z = (p1 - p2) / se;
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p = 2.0 * (1.0 - normal.cdf(z.abs()));
    Some(outcome(z, p.clamp(0.0, 1.0)))
}

/// Verdict-file line: one judged (or bookkept) feedback item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub review_id: String,
    pub item_index: usize,
    pub incorporated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<crate::pipeline::FeedbackCategory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<String>,
}

impl From<super::incorporation::IncorporationVerdict> for VerdictRecord {
    fn from(v: super::incorporation::IncorporationVerdict) -> Self {
        VerdictRecord {
            review_id: v.review_id,
            item_index: v.item_index,
            incorporated: v.incorporated,
            category: Some(v.category),
            cluster: v.cluster,
        }
    }
}

/// Read verdict records from a JSONL file, one object per line.
pub fn read_verdicts_jsonl(path: &std::path::Path) -> std::io::Result<Vec<VerdictRecord>> {
    let raw = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in raw.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let record: VerdictRecord = serde_json::from_str(line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_verdicts_jsonl(
    path: &std::path::Path,
    verdicts: &[VerdictRecord],
) -> std::io::Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for verdict in verdicts {
        writeln!(
            out,
            "{}",
            serde_json::to_string(verdict).expect("verdict serializes")
        )?;
    }
    out.flush()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StatsConfig {
    /// End of the review period; edits and score changes after it belong
    /// to the rebuttal period. `None` treats everything as review period.
    pub review_period_end: Option<i64>,
    pub rebuttal_period_end: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub papers_per_arm: BTreeMap<String, u64>,
    pub reviews_total: u64,
    pub selected_reviews: u64,
    pub control_reviews: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeStats {
    pub posted: u64,
    pub not_needed: u64,
    pub failed: u64,
    /// Posted feedback over all reviews (selected + control).
    pub posted_rate_of_all: Rate,
    pub posted_rate_of_selected: Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Updated among reviews that successfully received feedback.
    pub received_updated: Rate,
    /// Updated among control reviews.
    pub control_updated: Rate,
    pub difference_test: Option<TestOutcome>,
}

/// Means for the four reporting groups plus the two headline contrasts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMeans {
    pub control: MeanStat,
    pub feedback: MeanStat,
    pub not_updated: MeanStat,
    pub updated: MeanStat,
    pub control_vs_feedback: Option<TestOutcome>,
    pub not_updated_vs_updated: Option<TestOutcome>,
}

impl GroupMeans {
    fn from_groups(groups: &GroupSamples) -> Self {
        GroupMeans {
            control: MeanStat::from_samples(&groups.control),
            feedback: MeanStat::from_samples(&groups.feedback),
            not_updated: MeanStat::from_samples(&groups.not_updated),
            updated: MeanStat::from_samples(&groups.updated),
            control_vs_feedback: welch_t_test(&groups.control, &groups.feedback),
            not_updated_vs_updated: welch_t_test(&groups.not_updated, &groups.updated),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub feedback: Rate,
    pub control: Rate,
    pub test: Option<TestOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncorporationStats {
    pub items_total: u64,
    pub incorporated_total: u64,
    /// Incorporated over every feedback item given.
    pub corpus_rate: Rate,
    /// Incorporated over items on updated reviews (pooled micro-average).
    pub micro_rate_updated: Rate,
    /// Mean over updated reviews of their own incorporation fraction
    /// (macro-average); `None` without updated reviews.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_mean_updated: Option<f64>,
    /// Updated reviews with at least one incorporated item.
    pub with_any_of_updated: Rate,
    /// Same, over all reviews that received feedback.
    pub with_any_of_received: Rate,
    pub per_cluster: BTreeMap<String, Rate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub arms: ArmStats,
    pub outcomes: OutcomeStats,
    pub updates: UpdateStats,
    pub review_word_delta: GroupMeans,
    pub rebuttal_length: GroupMeans,
    pub reply_length: GroupMeans,
    pub score_edit_rates: BTreeMap<String, GroupRates>,
    /// period -> score field -> group means of the score delta.
    pub score_deltas: BTreeMap<String, BTreeMap<String, GroupMeans>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incorporation: Option<IncorporationStats>,
}

#[derive(Default)]
struct GroupSamples {
    control: Vec<f64>,
    feedback: Vec<f64>,
    not_updated: Vec<f64>,
    updated: Vec<f64>,
}

impl GroupSamples {
    fn push(&mut self, group: Group, updated: Option<bool>, value: f64) {
        match group {
            Group::Control => self.control.push(value),
            Group::Feedback => {
                self.feedback.push(value);
                match updated {
                    Some(true) => self.updated.push(value),
                    Some(false) => self.not_updated.push(value),
                    None => {}
                }
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Group {
    Control,
    Feedback,
}

/// Classify one replayed review per the reporting rules. Returns the
/// review's group and, for received reviews, its update classification.
fn classify_review(state: &ReviewState, config: &StatsConfig) -> (Group, Option<UpdateClass>) {
    let group = if state.selected {
        Group::Feedback
    } else {
        Group::Control
    };
    let period_end = config.review_period_end.unwrap_or(i64::MAX);
    let initial = state.initial_sections().unwrap_or_default();
    let final_sections = state.sections_at(period_end).unwrap_or_default();
    let edit_times: Vec<i64> = state
        .edit_times()
        .into_iter()
        .filter(|t| *t <= period_end)
        .collect();

    let update = match group {
        Group::Feedback => {
            if state.outcome == Some(FeedbackOutcome::Posted) {
                let reference = state.feedback_time.unwrap_or(i64::MAX);
                Some(classify(
                    state,
                    &initial,
                    &final_sections,
                    UpdateBasis::FeedbackArm,
                    &edit_times,
                    reference,
                ))
            } else {
                None
            }
        }
        Group::Control => {
            let reference = state.submit_time.unwrap_or(0);
            Some(classify(
                state,
                &initial,
                &final_sections,
                UpdateBasis::ControlArm,
                &edit_times,
                reference,
            ))
        }
    };
    (group, update)
}

fn classify(
    state: &ReviewState,
    initial: &Sections,
    final_sections: &Sections,
    basis: UpdateBasis,
    edit_times: &[i64],
    reference: i64,
) -> UpdateClass {
    let review_id = state
        .raw
        .as_ref()
        .map(|r| r.review_id.clone())
        .unwrap_or_default();
    classify_update(
        &review_id,
        initial,
        final_sections,
        basis,
        edit_times,
        reference,
    )
}

/// Update classification for every review the report classifies:
/// feedback-arm classification for reviews that received feedback,
/// control classification for unselected reviews. Selected reviews that
/// never received feedback stay in the intent-to-treat group but carry
/// no updated/not-updated label, so they are omitted here.
pub fn update_classes(events: &[ExperimentEvent], config: &StatsConfig) -> Vec<UpdateClass> {
    let state = replay(events);
    state
        .reviews
        .values()
        .filter_map(|review| classify_review(review, config).1)
        .collect()
}

/// Compute the full statistics report from the replayed event log, the
/// arm assignment, and the incorporation verdict records.
pub fn compute_stats(
    events: &[ExperimentEvent],
    assignment: &ExperimentAssignment,
    verdicts: &[VerdictRecord],
    config: &StatsConfig,
) -> StatsReport {
    let state = replay(events);
    let review_period_end = config.review_period_end.unwrap_or(i64::MAX);
    let rebuttal_period_end = config.rebuttal_period_end.unwrap_or(i64::MAX);

    let mut papers_per_arm: BTreeMap<String, u64> = BTreeMap::new();
    for arm in assignment.paper_arm.values() {
        *papers_per_arm.entry(arm.as_str().to_string()).or_insert(0) += 1;
    }

    let mut selected = 0u64;
    let mut control = 0u64;
    let mut posted = 0u64;
    let mut not_needed = 0u64;
    let mut failed = 0u64;
    let mut received_updated = 0u64;
    let mut control_updated = 0u64;

    let mut word_deltas = GroupSamples::default();
    let mut rebuttal_lengths = GroupSamples::default();
    let mut reply_lengths = GroupSamples::default();
    let mut score_edit_counts: BTreeMap<String, (u64, u64, u64, u64)> = BTreeMap::new();
    // period -> field -> samples
    let mut score_delta_samples: BTreeMap<String, BTreeMap<String, GroupSamples>> =
        BTreeMap::new();

    // Update classification per received review, for the incorporation join.
    let mut updated_reviews: BTreeMap<&str, bool> = BTreeMap::new();
    let mut items_per_review: BTreeMap<&str, u64> = BTreeMap::new();
    let mut items_total = 0u64;

    for (review_id, review) in &state.reviews {
        let (group, update) = classify_review(review, config);
        match group {
            Group::Control => control += 1,
            Group::Feedback => selected += 1,
        }
        match review.outcome {
            Some(FeedbackOutcome::Posted) => {
                posted += 1;
                items_total += review.items.len() as u64;
                items_per_review.insert(review_id, review.items.len() as u64);
            }
            Some(FeedbackOutcome::NotNeeded) => not_needed += 1,
            Some(FeedbackOutcome::Failed) => failed += 1,
            None => {}
        }

        let updated = update
            .as_ref()
            .map(|u| u.classification == UpdateClassification::Updated);
        if let Some(is_updated) = updated {
            match group {
                Group::Feedback => {
                    if review.outcome == Some(FeedbackOutcome::Posted) {
                        updated_reviews.insert(review_id, is_updated);
                        if is_updated {
                            received_updated += 1;
                        }
                    }
                }
                Group::Control => {
                    if is_updated {
                        control_updated += 1;
                    }
                }
            }
        }
        // For the received reviews the not-updated/updated split applies;
        // other feedback-arm reviews only join the intent-to-treat mean.
        let split = match group {
            Group::Feedback if review.outcome == Some(FeedbackOutcome::Posted) => updated,
            _ => None,
        };

        let initial = review.initial_sections().unwrap_or_default();
        let final_sections = review.sections_at(review_period_end).unwrap_or_default();
        word_deltas.push(group, split, word_delta(&initial, &final_sections) as f64);

        for (_, body) in &review.rebuttals {
            rebuttal_lengths.push(group, split, body.split_whitespace().count() as f64);
        }
        for (_, body) in &review.replies {
            reply_lengths.push(group, split, body.split_whitespace().count() as f64);
        }

        // Score edits split into review and rebuttal periods.
        let mut edited_review_period = false;
        let mut edited_rebuttal_period = false;
        let mut deltas: BTreeMap<(&str, &str), i64> = BTreeMap::new();
        for (time, field, old, new) in &review.score_edits {
            let period = if *time <= review_period_end {
                edited_review_period = true;
                "review_period"
            } else if *time <= rebuttal_period_end {
                edited_rebuttal_period = true;
                "rebuttal_period"
            } else {
                continue;
            };
            if let (Some(old), Some(new)) = (old, new) {
                *deltas.entry((period, field.as_str())).or_insert(0) += new - old;
            }
        }
        for period in ["review_period", "rebuttal_period"] {
            let slot = score_edit_counts.entry(period.to_string()).or_insert((0, 0, 0, 0));
            let edited = match period {
                "review_period" => edited_review_period,
                _ => edited_rebuttal_period,
            };
            match group {
                Group::Feedback => {
                    slot.1 += 1;
                    if edited {
                        slot.0 += 1;
                    }
                }
                Group::Control => {
                    slot.3 += 1;
                    if edited {
                        slot.2 += 1;
                    }
                }
            }
            for field in ["soundness", "presentation", "contribution", "rating", "confidence"] {
                let delta = deltas.get(&(period, field)).copied().unwrap_or(0) as f64;
                score_delta_samples
                    .entry(period.to_string())
                    .or_default()
                    .entry(field.to_string())
                    .or_default()
                    .push(group, split, delta);
            }
        }
    }

    let reviews_total = selected + control;

    // Incorporation verdicts joined against the update classification.
    let incorporation = if verdicts.is_empty() {
        None
    } else {
        let incorporated_total = verdicts.iter().filter(|v| v.incorporated).count() as u64;
        let verdict_lines = verdicts.len() as u64;
        let corpus_den = items_total.max(verdict_lines);

        let mut per_review: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
        let mut per_cluster: BTreeMap<String, Rate> = BTreeMap::new();
        for verdict in verdicts {
            let slot = per_review.entry(verdict.review_id.as_str()).or_insert((0, 0));
            slot.1 += 1;
            if verdict.incorporated {
                slot.0 += 1;
            }
            if let Some(cluster) = &verdict.cluster {
                let rate = per_cluster
                    .entry(cluster.clone())
                    .or_insert(Rate::new(0, 0));
                rate.den += 1;
                if verdict.incorporated {
                    rate.num += 1;
                }
            }
        }

        let updated_ids: Vec<&str> = updated_reviews
            .iter()
            .filter(|(_, updated)| **updated)
            .map(|(id, _)| *id)
            .collect();
        let mut micro_num = 0u64;
        let mut micro_den = 0u64;
        let mut macro_fracs = Vec::new();
        let mut with_any_updated = 0u64;
        for id in &updated_ids {
            let (inc, judged) = per_review.get(id).copied().unwrap_or((0, 0));
            let given = items_per_review.get(id).copied().unwrap_or(judged);
            micro_num += inc;
            micro_den += given.max(judged);
            if given.max(judged) > 0 {
                macro_fracs.push(inc as f64 / given.max(judged) as f64);
            }
            if inc > 0 {
                with_any_updated += 1;
            }
        }
        let with_any_received = per_review
            .values()
            .filter(|(inc, _)| *inc > 0)
            .count() as u64;

        Some(IncorporationStats {
            items_total: corpus_den,
            incorporated_total,
            corpus_rate: Rate::new(incorporated_total, corpus_den),
            micro_rate_updated: Rate::new(micro_num, micro_den),
            macro_mean_updated: if macro_fracs.is_empty() {
                None
            } else {
                Some(macro_fracs.iter().sum::<f64>() / macro_fracs.len() as f64)
            },
            with_any_of_updated: Rate::new(with_any_updated, updated_ids.len() as u64),
            with_any_of_received: Rate::new(with_any_received, posted),
            per_cluster,
        })
    };

    let score_edit_rates = score_edit_counts
        .into_iter()
        .map(|(period, (fx, fn_, cx, cn))| {
            let test = two_proportion_z_test(fx, fn_, cx, cn);
            (
                period,
                GroupRates {
                    feedback: Rate::new(fx, fn_),
                    control: Rate::new(cx, cn),
                    test,
                },
            )
        })
        .collect();

    let score_deltas = score_delta_samples
        .into_iter()
        .map(|(period, fields)| {
            (
                period,
                fields
                    .into_iter()
                    .map(|(field, samples)| (field, GroupMeans::from_groups(&samples)))
                    .collect(),
            )
        })
        .collect();

    StatsReport {
        arms: ArmStats {
            papers_per_arm,
            reviews_total,
            selected_reviews: selected,
            control_reviews: control,
        },
        outcomes: OutcomeStats {
            posted,
            not_needed,
            failed,
            posted_rate_of_all: Rate::new(posted, reviews_total),
            posted_rate_of_selected: Rate::new(posted, selected),
        },
        updates: UpdateStats {
            received_updated: Rate::new(received_updated, posted),
            control_updated: Rate::new(control_updated, control),
            difference_test: two_proportion_z_test(
                received_updated,
                posted,
                control_updated,
                control,
            ),
        },
        review_word_delta: GroupMeans::from_groups(&word_deltas),
        rebuttal_length: GroupMeans::from_groups(&rebuttal_lengths),
        reply_length: GroupMeans::from_groups(&reply_lengths),
        score_edit_rates,
        score_deltas,
        incorporation,
    }
}

impl StatsReport {
    /// Internal consistency: every rate's value must equal num/den and the
    /// headline counts must agree with each other.
    pub fn verify(&self) -> Result<(), String> {
        let check = |name: &str, rate: &Rate, num: u64, den: u64| {
            if rate.num != num || rate.den != den {
                Err(format!(
                    "{name}: rate {}/{} disagrees with recomputation {num}/{den}",
                    rate.num, rate.den
                ))
            } else {
                Ok(())
            }
        };
        check(
            "posted_rate_of_all",
            &self.outcomes.posted_rate_of_all,
            self.outcomes.posted,
            self.arms.reviews_total,
        )?;
        check(
            "posted_rate_of_selected",
            &self.outcomes.posted_rate_of_selected,
            self.outcomes.posted,
            self.arms.selected_reviews,
        )?;
        if self.updates.received_updated.den != self.outcomes.posted {
            return Err("received_updated denominator is not the posted count".into());
        }
        if self.updates.control_updated.den != self.arms.control_reviews {
            return Err("control_updated denominator is not the control count".into());
        }
        if self.arms.reviews_total != self.arms.selected_reviews + self.arms.control_reviews {
            return Err("reviews_total is not selected + control".into());
        }
        if let Some(inc) = &self.incorporation {
            if inc.corpus_rate.num != inc.incorporated_total {
                return Err("corpus_rate numerator disagrees".into());
            }
            for (cluster, rate) in &inc.per_cluster {
                if rate.num > rate.den {
                    return Err(format!("cluster {cluster}: num > den"));
                }
            }
        }
        Ok(())
    }
}
