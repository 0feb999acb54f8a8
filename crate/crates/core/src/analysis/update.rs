//! Update classification and review length deltas.
//!
//! A review counts as updated when a qualifying edit exists and the
//! word-level edit distance between the initial and final sections is
//! strictly greater than 5; distances of exactly 5 are not updates.
//! What qualifies an edit depends on the arm: feedback-arm edits must
//! come after the feedback time, control-arm edits at least one hour
//! after the reference point.

use serde::{Deserialize, Serialize};

use super::distance::{section_tokens, section_word_distance};
use crate::ingest::Sections;

/// Distance must exceed this for a review to count as updated.
pub const UPDATE_DISTANCE_THRESHOLD: usize = 5;
/// Control-arm edits qualify only this long after the reference time,
/// mirroring the hour the feedback arm waits for its feedback.
pub const CONTROL_GRACE_SECS: i64 = 3_600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateBasis {
    FeedbackArm,
    ControlArm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateClassification {
    Updated,
    NotUpdated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateClass {
    pub review_id: String,
    pub classification: UpdateClassification,
    pub distance: usize,
    pub basis: UpdateBasis,
}

/// Classify whether a review was updated.
///
/// `edit_times` are the timestamps of all edits; `reference_time` is the
/// feedback posting time for the feedback arm and the review posting time
/// for the control arm.
pub fn classify_update(
    review_id: &str,
    initial: &Sections,
    final_sections: &Sections,
    basis: UpdateBasis,
    edit_times: &[i64],
    reference_time: i64,
) -> UpdateClass {
    let cutoff = match basis {
        UpdateBasis::FeedbackArm => reference_time,
        UpdateBasis::ControlArm => reference_time + CONTROL_GRACE_SECS,
    };
    let has_qualifying_edit = edit_times.iter().any(|t| match basis {
        UpdateBasis::FeedbackArm => *t > cutoff,
        UpdateBasis::ControlArm => *t >= cutoff,
    });
    let distance = section_word_distance(initial, final_sections);
    let classification =
        if has_qualifying_edit && distance > UPDATE_DISTANCE_THRESHOLD {
            UpdateClassification::Updated
        } else {
            UpdateClassification::NotUpdated
        };
    UpdateClass {
        review_id: review_id.to_string(),
        classification,
        distance,
        basis,
    }
}

/// Signed change in review length, counted in whitespace tokens over the
/// four sections only; score fields never contribute.
pub fn word_delta(initial: &Sections, final_sections: &Sections) -> i64 {
    section_tokens(final_sections).len() as i64 - section_tokens(initial).len() as i64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sections(weaknesses: &str) -> Sections {
        Sections {
            summary: "The paper studies widgets.".into(),
            weaknesses: weaknesses.into(),
            ..Default::default()
        }
    }

    #[test]
    fn identical_texts_not_updated() {
        let s = sections("a b c");
        let class = classify_update("r1", &s, &s, UpdateBasis::FeedbackArm, &[5000], 4000);
        assert_eq!(class.distance, 0);
        assert_eq!(class.classification, UpdateClassification::NotUpdated);
    }

    #[test]
    fn six_insertions_is_updated() {
        let initial = sections("a b c d e f");
        let modified = sections("a b c d e f g h i j k l");
        let class =
            classify_update("r1", &initial, &modified, UpdateBasis::FeedbackArm, &[5000], 4000);
        assert_eq!(class.distance, 6);
        assert_eq!(class.classification, UpdateClassification::Updated);
    }

    #[test]
    fn distance_exactly_five_is_not_updated() {
        let initial = sections("a b c d e f");
        let modified = sections("a b c d e f g h i j k");
        let class =
            classify_update("r1", &initial, &modified, UpdateBasis::FeedbackArm, &[5000], 4000);
        assert_eq!(class.distance, 5);
        assert_eq!(class.classification, UpdateClassification::NotUpdated);
    }

    #[test]
    fn feedback_arm_requires_edit_after_feedback_time() {
        let initial = sections("a b c d e f");
        let modified = sections("a b c d e f g h i j k l");
        let class =
            classify_update("r1", &initial, &modified, UpdateBasis::FeedbackArm, &[3000], 4000);
        assert_eq!(class.classification, UpdateClassification::NotUpdated);
    }

    #[test]
    fn control_arm_requires_one_hour_grace() {
        let initial = sections("a b c d e f");
        let modified = sections("a b c d e f g h i j k l");
        let early =
            classify_update("r1", &initial, &modified, UpdateBasis::ControlArm, &[1500], 1000);
        assert_eq!(early.classification, UpdateClassification::NotUpdated);
        let on_time =
            classify_update("r1", &initial, &modified, UpdateBasis::ControlArm, &[4600], 1000);
        assert_eq!(on_time.classification, UpdateClassification::Updated);
    }

    #[test]
    fn word_delta_counts_sections_only() {
        let initial = sections("short text");
        let modified = sections("short text plus three words");
        assert_eq!(word_delta(&initial, &modified), 3);
        assert_eq!(word_delta(&initial, &initial), 0);
    }

    #[test]
    fn eighty_words_appended_is_plus_eighty() {
        let initial = sections("base");
        let appended = (0..80).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let modified = sections(&format!("base {appended}"));
        assert_eq!(word_delta(&initial, &modified), 80);
    }
}
