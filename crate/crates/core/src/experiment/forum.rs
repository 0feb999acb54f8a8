//! Minimal forum-client abstraction and its file-backed mock.
//!
//! The interface matches the interaction pattern the harness needs from
//! any review forum: discover new reviews, fetch a review thread with its
//! version history, and post a visibility-restricted reply. The mock keeps
//! one JSON file per review thread so tests and offline runs are
//! bit-compatible with the real interface.

use std::fs;
use std::path::PathBuf;
use std::sync::Mutex;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{RawReview, Scores, Sections};

pub const PRINCIPAL_REVIEWER: &str = "reviewer";
pub const PRINCIPAL_CHAIRS: &str = "program_chairs";

/// Visibility of posted feedback: the reviewer and the program chairs.
pub fn feedback_visibility() -> Vec<String> {
    vec![PRINCIPAL_REVIEWER.to_string(), PRINCIPAL_CHAIRS.to_string()]
}

#[derive(Debug, Error)]
pub enum ForumError {
    #[error("review not found: {0}")]
    NotFound(String),
    #[error("post failed: {0}")]
    PostFailed(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed thread file {path}: {source}")]
    Malformed {
        path: String,
        source: serde_json::Error,
    },
}

/// One content snapshot in a review thread.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadVersion {
    pub time: i64,
    #[serde(flatten)]
    pub sections: Sections,
    #[serde(flatten)]
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadComment {
    pub id: String,
    pub time: i64,
    pub body: String,
    pub visibility: Vec<String>,
    /// "author", "reviewer", or "feedback_agent".
    pub author_role: String,
}

/// A review thread: identity, content versions (oldest first), comments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewThread {
    pub review_id: String,
    pub paper_id: String,
    pub reviewer: String,
    pub submitted_at: i64,
    pub versions: Vec<ThreadVersion>,
    #[serde(default)]
    pub comments: Vec<ThreadComment>,
}

impl ReviewThread {
    pub fn latest_version(&self) -> &ThreadVersion {
        self.versions.last().expect("threads carry >=1 version")
    }

    /// Flatten a version into the ingestion record shape.
    pub fn to_raw_review(&self, version: &ThreadVersion) -> RawReview {
        RawReview {
            review_id: self.review_id.clone(),
            paper_id: self.paper_id.clone(),
            reviewer: self.reviewer.clone(),
            summary: version.sections.summary.clone(),
            strengths: version.sections.strengths.clone(),
            weaknesses: version.sections.weaknesses.clone(),
            questions: version.sections.questions.clone(),
            soundness: version.scores.soundness,
            presentation: version.scores.presentation,
            contribution: version.scores.contribution,
            rating: version.scores.rating,
            confidence: version.scores.confidence,
            submitted_at: self.submitted_at,
        }
    }
}

/// Summary row returned by discovery.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewSummary {
    pub review_id: String,
    pub paper_id: String,
    pub submitted_at: i64,
}

#[async_trait]
pub trait ForumClient: Send + Sync {
    /// Reviews submitted strictly after `since`, oldest first.
    async fn list_new_reviews(&self, since: i64) -> Result<Vec<ReviewSummary>, ForumError>;

    async fn get_review(&self, review_id: &str) -> Result<ReviewThread, ForumError>;

    /// Post a reply comment under a review; returns the comment id.
    async fn post_comment(
        &self,
        review_id: &str,
        body: &str,
        visibility: &[String],
    ) -> Result<String, ForumError>;

    async fn list_thread(&self, review_id: &str) -> Result<Vec<ThreadComment>, ForumError>;
}

/// File-backed forum store: one `<review_id>.json` per thread.
pub struct FileForum {
    dir: PathBuf,
    comment_counter: Mutex<u64>,
}

impl FileForum {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ForumError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(FileForum {
            dir,
            comment_counter: Mutex::new(0),
        })
    }

    fn thread_path(&self, review_id: &str) -> PathBuf {
        // Review ids are opaque; keep file names safe.
        let safe: String = review_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        self.dir.join(format!("{safe}.json"))
    }

    pub fn load_thread(&self, review_id: &str) -> Result<ReviewThread, ForumError> {
        let path = self.thread_path(review_id);
        if !path.exists() {
            return Err(ForumError::NotFound(review_id.to_string()));
        }
        let raw = fs::read_to_string(&path)?;
        serde_json::from_str(&raw).map_err(|source| ForumError::Malformed {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn store_thread(&self, thread: &ReviewThread) -> Result<(), ForumError> {
        let path = self.thread_path(&thread.review_id);
        let json = serde_json::to_string_pretty(thread).expect("thread serializes");
        fs::write(path, json)?;
        Ok(())
    }

    /// Seed a brand-new review thread (test and demo helper).
    pub fn seed_review(&self, raw: &RawReview) -> Result<(), ForumError> {
        let thread = ReviewThread {
            review_id: raw.review_id.clone(),
            paper_id: raw.paper_id.clone(),
            reviewer: raw.reviewer.clone(),
            submitted_at: raw.submitted_at,
            versions: vec![ThreadVersion {
                time: raw.submitted_at,
                sections: raw.sections(),
                scores: raw.scores(),
            }],
            comments: Vec::new(),
        };
        self.store_thread(&thread)
    }

    /// Append an edited version to an existing thread.
    pub fn edit_review(
        &self,
        review_id: &str,
        time: i64,
        sections: Sections,
        scores: Scores,
    ) -> Result<(), ForumError> {
        let mut thread = self.load_thread(review_id)?;
        thread.versions.push(ThreadVersion {
            time,
            sections,
            scores,
        });
        self.store_thread(&thread)
    }

    pub fn add_comment(
        &self,
        review_id: &str,
        time: i64,
        body: &str,
        author_role: &str,
        visibility: Vec<String>,
    ) -> Result<String, ForumError> {
        let mut thread = self.load_thread(review_id)?;
        let id = {
            let mut counter = self.comment_counter.lock().expect("counter lock");
            *counter += 1;
            format!("c{counter}")
        };
        thread.comments.push(ThreadComment {
            id: id.clone(),
            time,
            body: body.to_string(),
            visibility,
            author_role: author_role.to_string(),
        });
        self.store_thread(&thread)?;
        Ok(id)
    }

    fn all_threads(&self) -> Result<Vec<ReviewThread>, ForumError> {
        let mut threads = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let raw = fs::read_to_string(&path)?;
            let thread: ReviewThread =
                serde_json::from_str(&raw).map_err(|source| ForumError::Malformed {
                    path: path.display().to_string(),
                    source,
                })?;
            threads.push(thread);
        }
        threads.sort_by(|a, b| {
            (a.submitted_at, &a.review_id).cmp(&(b.submitted_at, &b.review_id))
        });
        Ok(threads)
    }
}

#[async_trait]
impl ForumClient for FileForum {
    async fn list_new_reviews(&self, since: i64) -> Result<Vec<ReviewSummary>, ForumError> {
        Ok(self
            .all_threads()?
            .into_iter()
            .filter(|t| t.submitted_at > since)
            .map(|t| ReviewSummary {
                review_id: t.review_id,
                paper_id: t.paper_id,
                submitted_at: t.submitted_at,
            })
            .collect())
    }

    async fn get_review(&self, review_id: &str) -> Result<ReviewThread, ForumError> {
        self.load_thread(review_id)
    }

    async fn post_comment(
        &self,
        review_id: &str,
        body: &str,
        visibility: &[String],
    ) -> Result<String, ForumError> {
        let time = self
            .load_thread(review_id)?
            .comments
            .iter()
            .map(|c| c.time)
            .max()
            .unwrap_or(0);
        self.add_comment(review_id, time, body, "feedback_agent", visibility.to_vec())
    }

    async fn list_thread(&self, review_id: &str) -> Result<Vec<ThreadComment>, ForumError> {
        Ok(self.load_thread(review_id)?.comments)
    }
}

/// Wrapper that fails the first `failures` post_comment calls; used to
/// exercise posting retry paths.
pub struct FlakyForum<C> {
    inner: C,
    failures: Mutex<u32>,
}

impl<C> FlakyForum<C> {
    pub fn new(inner: C, failures: u32) -> Self {
        FlakyForum {
            inner,
            failures: Mutex::new(failures),
        }
    }
}

#[async_trait]
impl<C: ForumClient> ForumClient for FlakyForum<C> {
    async fn list_new_reviews(&self, since: i64) -> Result<Vec<ReviewSummary>, ForumError> {
        self.inner.list_new_reviews(since).await
    }

    async fn get_review(&self, review_id: &str) -> Result<ReviewThread, ForumError> {
        self.inner.get_review(review_id).await
    }

    async fn post_comment(
        &self,
        review_id: &str,
        body: &str,
        visibility: &[String],
    ) -> Result<String, ForumError> {
        {
            let mut failures = self.failures.lock().expect("failures lock");
            if *failures > 0 {
                *failures -= 1;
                return Err(ForumError::PostFailed("scripted failure".into()));
            }
        }
        self.inner.post_comment(review_id, body, visibility).await
    }

    async fn list_thread(&self, review_id: &str) -> Result<Vec<ThreadComment>, ForumError> {
        self.inner.list_thread(review_id).await
    }
}
