//! Append-only experiment event log.
//!
//! One JSONL line per event, `seq` assigned by the single writer, each
//! line flushed whole so a killed process never leaves a torn write.
//! Replaying a log reconstructs review, task, and posting state.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{RawReview, Scores, Sections};
use crate::pipeline::FeedbackItem;

#[derive(Debug, Error)]
pub enum EventLogError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed event at line {line}: {source}")]
    Malformed {
        line: usize,
        source: serde_json::Error,
    },
    #[error("event seq not strictly increasing at line {line}")]
    OutOfOrder { line: usize },
}

/// Kind-specific payload of an experiment event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventBody {
    ReviewSubmitted {
        review: RawReview,
    },
    ReviewEdited {
        review_id: String,
        edit_time: i64,
        sections: Sections,
        scores: Scores,
    },
    FeedbackScheduled {
        review_id: String,
        submit_time: i64,
        due_time: i64,
    },
    FeedbackPosted {
        review_id: String,
        comment_id: String,
        body: String,
        items: Vec<FeedbackItem>,
        /// Timestamp of the review version the pipeline consumed.
        input_version_time: i64,
    },
    FeedbackNotNeeded {
        review_id: String,
        input_version_time: i64,
    },
    FeedbackFailed {
        review_id: String,
        cause: String,
        input_version_time: i64,
    },
    RebuttalPosted {
        review_id: String,
        body: String,
    },
    ReplyPosted {
        review_id: String,
        body: String,
    },
    ScoreEdited {
        review_id: String,
        field: String,
        old: Option<i64>,
        new: Option<i64>,
    },
}

impl EventBody {
    pub fn review_id(&self) -> &str {
        match self {
            EventBody::ReviewSubmitted { review } => &review.review_id,
            EventBody::ReviewEdited { review_id, .. }
            | EventBody::FeedbackScheduled { review_id, .. }
            | EventBody::FeedbackPosted { review_id, .. }
            | EventBody::FeedbackNotNeeded { review_id, .. }
            | EventBody::FeedbackFailed { review_id, .. }
            | EventBody::RebuttalPosted { review_id, .. }
            | EventBody::ReplyPosted { review_id, .. }
            | EventBody::ScoreEdited { review_id, .. } => review_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentEvent {
    pub seq: u64,
    pub time: i64,
    #[serde(flatten)]
    pub body: EventBody,
}

/// Single writer over an append-only JSONL file. Each append writes one
/// complete line and flushes it.
pub struct EventLogWriter {
    out: BufWriter<File>,
    next_seq: u64,
}

impl EventLogWriter {
    /// Open (or create) a log for appending, resuming `seq` after the last
    /// event already present.
    pub fn open(path: &Path) -> Result<Self, EventLogError> {
        let next_seq = if path.exists() {
            read_event_log(path)?
                .last()
                .map(|ev| ev.seq + 1)
                .unwrap_or(1)
        } else {
            1
        };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(EventLogWriter {
            out: BufWriter::new(file),
            next_seq,
        })
    }

    pub fn append(&mut self, time: i64, body: EventBody) -> Result<ExperimentEvent, EventLogError> {
        let event = ExperimentEvent {
            seq: self.next_seq,
            time,
            body,
        };
        let line = serde_json::to_string(&event).expect("event serializes");
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        self.next_seq += 1;
        Ok(event)
    }

    /// Number of events this writer has appended in its lifetime plus any
    /// it resumed past; equivalently, the last assigned seq.
    pub fn append_count(&self) -> u64 {
        self.next_seq - 1
    }
}

pub fn read_event_log(path: &Path) -> Result<Vec<ExperimentEvent>, EventLogError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut events = Vec::new();
    let mut last_seq = 0u64;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event: ExperimentEvent = serde_json::from_str(&line)
            .map_err(|source| EventLogError::Malformed {
                line: idx + 1,
                source,
            })?;
        if event.seq <= last_seq {
            return Err(EventLogError::OutOfOrder { line: idx + 1 });
        }
        last_seq = event.seq;
        events.push(event);
    }
    Ok(events)
}

/// Feedback outcome of a selected review, as recorded in the log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeedbackOutcome {
    Posted,
    NotNeeded,
    Failed,
}

/// Replayed per-review state.
#[derive(Debug, Clone, Default)]
pub struct ReviewState {
    pub raw: Option<RawReview>,
    pub submit_time: Option<i64>,
    /// (edit_time, sections, scores) snapshots after the initial one.
    pub edits: Vec<(i64, Sections, Scores)>,
    pub selected: bool,
    pub scheduled_due: Option<i64>,
    pub outcome: Option<FeedbackOutcome>,
    pub feedback_time: Option<i64>,
    pub items: Vec<FeedbackItem>,
    pub rebuttals: Vec<(i64, String)>,
    pub replies: Vec<(i64, String)>,
    /// (time, field, old, new) score edits.
    pub score_edits: Vec<(i64, String, Option<i64>, Option<i64>)>,
}

impl ReviewState {
    pub fn initial_sections(&self) -> Option<Sections> {
        self.raw.as_ref().map(RawReview::sections)
    }

    pub fn final_sections(&self) -> Option<Sections> {
        self.edits
            .last()
            .map(|(_, sections, _)| sections.clone())
            .or_else(|| self.initial_sections())
    }

    /// Sections as of `cutoff` (inclusive).
    pub fn sections_at(&self, cutoff: i64) -> Option<Sections> {
        let mut current = self.initial_sections()?;
        for (time, sections, _) in &self.edits {
            if *time <= cutoff {
                current = sections.clone();
            }
        }
        Some(current)
    }

    pub fn edit_times(&self) -> Vec<i64> {
        self.edits.iter().map(|(t, _, _)| *t).collect()
    }
}

/// Full replayed state of an experiment log.
#[derive(Debug, Clone, Default)]
pub struct ReplayState {
    pub reviews: BTreeMap<String, ReviewState>,
    pub last_seq: u64,
    pub event_count: usize,
}

pub fn replay(events: &[ExperimentEvent]) -> ReplayState {
    let mut state = ReplayState::default();
    for event in events {
        state.last_seq = event.seq;
        state.event_count += 1;
        let review = state
            .reviews
            .entry(event.body.review_id().to_string())
            .or_default();
        match &event.body {
            EventBody::ReviewSubmitted { review: raw } => {
                review.submit_time = Some(raw.submitted_at);
                review.raw = Some(raw.clone());
            }
            EventBody::ReviewEdited {
                edit_time,
                sections,
                scores,
                ..
            } => review
                .edits
                .push((*edit_time, sections.clone(), *scores)),
            EventBody::FeedbackScheduled { due_time, .. } => {
                review.selected = true;
                review.scheduled_due = Some(*due_time);
            }
            EventBody::FeedbackPosted { items, .. } => {
                review.outcome = Some(FeedbackOutcome::Posted);
                review.feedback_time = Some(event.time);
                review.items = items.clone();
            }
            EventBody::FeedbackNotNeeded { .. } => {
                review.outcome = Some(FeedbackOutcome::NotNeeded);
                review.feedback_time = Some(event.time);
            }
            EventBody::FeedbackFailed { .. } => {
                review.outcome = Some(FeedbackOutcome::Failed);
                review.feedback_time = Some(event.time);
            }
            EventBody::RebuttalPosted { body, .. } => {
                review.rebuttals.push((event.time, body.clone()));
            }
            EventBody::ReplyPosted { body, .. } => {
                review.replies.push((event.time, body.clone()));
            }
            EventBody::ScoreEdited {
                field, old, new, ..
            } => review
                .score_edits
                .push((event.time, field.clone(), *old, *new)),
        }
    }
    state
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_review(id: &str) -> RawReview {
        RawReview {
            review_id: id.into(),
            paper_id: "p1".into(),
            reviewer: "rev".into(),
            summary: "sum".into(),
            weaknesses: "weak".into(),
            submitted_at: 100,
            ..Default::default()
        }
    }

    #[test]
    fn append_assigns_monotone_seq_and_replays() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        {
            let mut writer = EventLogWriter::open(&path).unwrap();
            writer
                .append(
                    100,
                    EventBody::ReviewSubmitted {
                        review: sample_review("r1"),
                    },
                )
                .unwrap();
            writer
                .append(
                    200,
                    EventBody::FeedbackScheduled {
                        review_id: "r1".into(),
                        submit_time: 100,
                        due_time: 3700,
                    },
                )
                .unwrap();
        }
        // Reopen appends after the last seq.
        {
            let mut writer = EventLogWriter::open(&path).unwrap();
            writer
                .append(
                    3700,
                    EventBody::FeedbackNotNeeded {
                        review_id: "r1".into(),
                        input_version_time: 100,
                    },
                )
                .unwrap();
        }
        let events = read_event_log(&path).unwrap();
        assert_eq!(
            events.iter().map(|e| e.seq).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
        let state = replay(&events);
        let review = &state.reviews["r1"];
        assert!(review.selected);
        assert_eq!(review.scheduled_due, Some(3700));
        assert_eq!(review.outcome, Some(FeedbackOutcome::NotNeeded));
    }

    #[test]
    fn replay_reconstructs_versions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let mut writer = EventLogWriter::open(&path).unwrap();
        writer
            .append(
                100,
                EventBody::ReviewSubmitted {
                    review: sample_review("r1"),
                },
            )
            .unwrap();
        writer
            .append(
                500,
                EventBody::ReviewEdited {
                    review_id: "r1".into(),
                    edit_time: 500,
                    sections: Sections {
                        summary: "edited".into(),
                        ..Default::default()
                    },
                    scores: Scores::default(),
                },
            )
            .unwrap();
        drop(writer);
        let state = replay(&read_event_log(&path).unwrap());
        let review = &state.reviews["r1"];
        assert_eq!(review.sections_at(400).unwrap().summary, "sum");
        assert_eq!(review.sections_at(500).unwrap().summary, "edited");
        assert_eq!(review.final_sections().unwrap().summary, "edited");
    }

    #[test]
    fn out_of_order_seq_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"seq":2,"time":1,"kind":"feedback_not_needed","review_id":"r","input_version_time":0}"#,
                "\n",
                r#"{"seq":1,"time":2,"kind":"feedback_not_needed","review_id":"r","input_version_time":0}"#,
                "\n",
            ),
        )
        .unwrap();
        assert!(matches!(
            read_event_log(&path).unwrap_err(),
            EventLogError::OutOfOrder { line: 2 }
        ));
    }
}
