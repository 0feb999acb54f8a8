//! Delayed feedback scheduling and the serve loop.
//!
//! One scheduler task owns the clock and the event-log writer. Pipeline
//! runs execute on a bounded worker pool and their results come back to
//! the single writer. The clock is injectable so timing is testable.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{watch, Semaphore};
use tokio::task::JoinSet;

use crate::experiment::events::{EventBody, EventLogError, EventLogWriter};
use crate::experiment::forum::{feedback_visibility, ForumClient, ReviewThread};
use crate::experiment::{select_review_for_feedback, ExperimentAssignment};
use crate::ingest::{self, PaperSource, SourceKind};
use crate::llm::{LlmClient, Provider, RetryPolicy};
use crate::pipeline::{render_feedback_items, run_agent, AgentConfig, BundleStatus, FeedbackBundle};

/// Default feedback delay after review submission: one hour.
pub const DEFAULT_DELAY_SECS: i64 = 3_600;
pub const DEFAULT_POLL_INTERVAL_SECS: i64 = 60;
pub const DEFAULT_WORKERS: usize = 8;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    EventLog(#[from] EventLogError),
    #[error("forum error: {0}")]
    Forum(#[from] crate::experiment::forum::ForumError),
}

/// Injectable time source. `sleep_secs` is where a simulated clock
/// advances instead of waiting.
#[async_trait]
pub trait Clock: Send + Sync {
    fn now(&self) -> i64;
    async fn sleep_secs(&self, secs: i64);
}

pub struct SystemClock;

#[async_trait]
impl Clock for SystemClock {
    fn now(&self) -> i64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs() as i64)
            .unwrap_or(0)
    }

    async fn sleep_secs(&self, secs: i64) {
        tokio::time::sleep(std::time::Duration::from_secs(secs.max(0) as u64)).await;
    }
}

/// Simulated clock: `sleep_secs` jumps time forward immediately.
pub struct SimClock {
    now: Mutex<i64>,
}

impl SimClock {
    pub fn new(start: i64) -> Self {
        SimClock {
            now: Mutex::new(start),
        }
    }

    pub fn advance(&self, secs: i64) {
        *self.now.lock().expect("clock lock") += secs.max(0);
    }
}

#[async_trait]
impl Clock for SimClock {
    fn now(&self) -> i64 {
        *self.now.lock().expect("clock lock")
    }

    async fn sleep_secs(&self, secs: i64) {
        self.advance(secs);
        tokio::task::yield_now().await;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskState {
    Pending,
    Running,
    Done,
    Cancelled,
}

/// A delayed feedback-generation task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledTask {
    pub review_id: String,
    pub submit_time: i64,
    pub due_time: i64,
    pub state: TaskState,
}

/// Due time is submission time plus the configured delay; the delay gives
/// reviewers room for immediate small edits, and the pipeline reads the
/// review version current at firing time.
pub fn schedule_feedback_task(review_id: &str, submit_time: i64, delay_secs: i64) -> ScheduledTask {
    ScheduledTask {
        review_id: review_id.to_string(),
        submit_time,
        due_time: submit_time + delay_secs.max(0),
        state: TaskState::Pending,
    }
}

/// Post a terminal bundle through the forum client and describe the
/// outcome as an event body. Posting failures are data, never panics.
pub async fn post_feedback(
    bundle: &FeedbackBundle,
    forum: &dyn ForumClient,
    post_retry_budget: u32,
    input_version_time: i64,
) -> EventBody {
    match bundle.status {
        BundleStatus::NoFeedbackNeeded => EventBody::FeedbackNotNeeded {
            review_id: bundle.review_id.clone(),
            input_version_time,
        },
        BundleStatus::Failed => EventBody::FeedbackFailed {
            review_id: bundle.review_id.clone(),
            cause: bundle
                .failure_cause
                .clone()
                .unwrap_or_else(|| "gate failed on every attempt".into()),
            input_version_time,
        },
        BundleStatus::Posted => {
            let body = render_feedback_items(&bundle.items);
            let visibility = feedback_visibility();
            let mut last_error = String::new();
            for _ in 0..=post_retry_budget {
                match forum
                    .post_comment(&bundle.review_id, &body, &visibility)
                    .await
                {
                    Ok(comment_id) => {
                        return EventBody::FeedbackPosted {
                            review_id: bundle.review_id.clone(),
                            comment_id,
                            body,
                            items: bundle.items.clone(),
                            input_version_time,
                        }
                    }
                    Err(err) => last_error = err.to_string(),
                }
            }
            EventBody::FeedbackFailed {
                review_id: bundle.review_id.clone(),
                cause: format!(
                    "post failed after {} attempt(s): {last_error}",
                    post_retry_budget + 1
                ),
                input_version_time,
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub delay_secs: i64,
    pub poll_interval_secs: i64,
    pub workers: usize,
    pub max_attempts: u32,
    pub post_retry_budget: u32,
    /// Stop once every discovered review reached a terminal state and a
    /// poll found nothing new. Batch/smoke mode; live serving runs until
    /// shutdown.
    pub run_until_idle: bool,
    /// Directory of `<paper_id>.txt` or `<paper_id>.pdf` sources.
    pub papers_dir: Option<PathBuf>,
    pub salt: String,
    pub retry: RetryPolicy,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            delay_secs: DEFAULT_DELAY_SECS,
            poll_interval_secs: DEFAULT_POLL_INTERVAL_SECS,
            workers: DEFAULT_WORKERS,
            max_attempts: 2,
            post_retry_budget: 2,
            run_until_idle: false,
            papers_dir: None,
            salt: "rfa".into(),
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServeSummary {
    pub reviews_seen: usize,
    pub selected: usize,
    pub posted: usize,
    pub not_needed: usize,
    pub failed: usize,
    pub events_written: u64,
}

struct Tracked {
    versions_seen: usize,
    comments_seen: usize,
}

type WorkerResult = (String, i64, FeedbackBundle);

/// Poll the forum, select reviews per the assignment, generate feedback
/// after the configured delay, post it, and log every event durably.
pub async fn serve(
    forum: Arc<dyn ForumClient>,
    provider: Arc<dyn Provider>,
    templates: Arc<crate::llm::TemplateStore>,
    mut assignment: ExperimentAssignment,
    mut log: EventLogWriter,
    clock: Arc<dyn Clock>,
    config: ServeConfig,
    mut shutdown: watch::Receiver<bool>,
) -> Result<ServeSummary, ServeError> {
    let mut summary = ServeSummary::default();
    let mut tracked: BTreeMap<String, Tracked> = BTreeMap::new();
    let mut tasks: Vec<ScheduledTask> = Vec::new();
    let mut workers: JoinSet<WorkerResult> = JoinSet::new();
    let semaphore = Arc::new(Semaphore::new(config.workers.max(1)));
    let mut next_poll = clock.now();
    let mut last_poll_clean = false;

    loop {
        // Drain finished pipeline runs; the loop is the single log writer.
        while let Some(result) = workers.try_join_next() {
            if let Ok((review_id, version_time, bundle)) = result {
                handle_completion(
                    &mut log,
                    forum.as_ref(),
                    &config,
                    clock.now(),
                    &review_id,
                    version_time,
                    bundle,
                    &mut summary,
                    &mut tasks,
                )
                .await?;
            }
        }

        let now = clock.now();
        if now >= next_poll {
            let found = poll_forum(
                forum.as_ref(),
                &mut assignment,
                &mut tracked,
                &mut tasks,
                &mut log,
                &config,
                now,
                &mut summary,
            )
            .await?;
            last_poll_clean = !found;
            next_poll = now + config.poll_interval_secs.max(1);
        }

        // Fire tasks that are due, reading the latest review version.
        let now = clock.now();
        for task in tasks.iter_mut() {
            if task.state != TaskState::Pending || task.due_time > now {
                continue;
            }
            task.state = TaskState::Running;
            let thread = match forum.get_review(&task.review_id).await {
                Ok(thread) => thread,
                Err(err) => {
                    log.append(
                        now,
                        EventBody::FeedbackFailed {
                            review_id: task.review_id.clone(),
                            cause: format!("review fetch failed: {err}"),
                            input_version_time: 0,
                        },
                    )?;
                    summary.failed += 1;
                    task.state = TaskState::Done;
                    continue;
                }
            };
            spawn_run(
                &mut workers,
                &semaphore,
                &provider,
                &templates,
                &config,
                thread,
            );
        }

        let in_flight = !workers.is_empty();
        let pending = tasks.iter().filter(|t| t.state == TaskState::Pending).count();

        if *shutdown.borrow() && !in_flight {
            break;
        }
        if config.run_until_idle && !in_flight && pending == 0 && last_poll_clean {
            break;
        }

        let now = clock.now();
        let next_due = tasks
            .iter()
            .filter(|t| t.state == TaskState::Pending)
            .map(|t| t.due_time)
            .min();
        let wake = next_due.map_or(next_poll, |due| due.min(next_poll));
        let wait = (wake - now).max(1);

        if in_flight {
            tokio::select! {
                result = workers.join_next() => {
                    if let Some(Ok((review_id, version_time, bundle))) = result {
                        handle_completion(
                            &mut log,
                            forum.as_ref(),
                            &config,
                            clock.now(),
                            &review_id,
                            version_time,
                            bundle,
                            &mut summary,
                            &mut tasks,
                        )
                        .await?;
                    }
                }
                _ = shutdown.changed() => {}
            }
        } else {
            tokio::select! {
                _ = clock.sleep_secs(wait) => {}
                _ = shutdown.changed() => {}
            }
        }
    }

    summary.events_written = log.append_count();
    Ok(summary)
}

fn spawn_run(
    workers: &mut JoinSet<WorkerResult>,
    semaphore: &Arc<Semaphore>,
    provider: &Arc<dyn Provider>,
    templates: &Arc<crate::llm::TemplateStore>,
    config: &ServeConfig,
    thread: ReviewThread,
) {
    let semaphore = Arc::clone(semaphore);
    let provider = Arc::clone(provider);
    let templates = Arc::clone(templates);
    let salt = config.salt.clone();
    let papers_dir = config.papers_dir.clone();
    let retry = config.retry;
    let agent_config = AgentConfig {
        max_attempts: config.max_attempts,
        ..AgentConfig::default()
    };

    workers.spawn(async move {
        let _permit = semaphore.acquire_owned().await.expect("semaphore open");
        let version = thread.latest_version().clone();
        let version_time = version.time;
        let review_id = thread.review_id.clone();

        fn failed_bundle(review_id: &str, cause: String) -> FeedbackBundle {
            FeedbackBundle {
                review_id: review_id.to_string(),
                attempt_outputs: Vec::new(),
                items: Vec::new(),
                gate_results: Vec::new(),
                attempts_used: 0,
                status: BundleStatus::Failed,
                failure_cause: Some(cause),
                warnings: Vec::new(),
                transcript: Vec::new(),
            }
        }

        let review = match ingest::parse_review(&thread.to_raw_review(&version), &salt) {
            Ok(review) => review,
            Err(err) => {
                let bundle = failed_bundle(&review_id, err.to_string());
                return (review_id, version_time, bundle);
            }
        };
        let paper = match load_paper(papers_dir.as_deref(), &thread.paper_id) {
            Ok(paper) => paper,
            Err(cause) => {
                let bundle = failed_bundle(&review_id, cause);
                return (review_id, version_time, bundle);
            }
        };

        let client = LlmClient::with_retry(provider, retry);
        let bundle = run_agent(&paper, &review, &client, &templates, &agent_config).await;
        (review_id, version_time, bundle)
    });
}

fn load_paper(
    papers_dir: Option<&std::path::Path>,
    paper_id: &str,
) -> Result<crate::ingest::PaperDoc, String> {
    let Some(dir) = papers_dir else {
        return Err("no papers directory configured".into());
    };
    let txt = dir.join(format!("{paper_id}.txt"));
    let pdf = dir.join(format!("{paper_id}.pdf"));
    let (path, kind) = if txt.exists() {
        (txt, SourceKind::PlainText)
    } else if pdf.exists() {
        (pdf, SourceKind::Pdf)
    } else {
        return Err(format!("paper text unavailable for {paper_id}"));
    };
    ingest::load_paper_text(paper_id, PaperSource::Path(&path), kind)
        .map_err(|e| format!("paper load failed: {e}"))
}

#[allow(clippy::too_many_arguments)]
async fn handle_completion(
    log: &mut EventLogWriter,
    forum: &dyn ForumClient,
    config: &ServeConfig,
    now: i64,
    review_id: &str,
    version_time: i64,
    bundle: FeedbackBundle,
    summary: &mut ServeSummary,
    tasks: &mut [ScheduledTask],
) -> Result<(), ServeError> {
    let body = post_feedback(&bundle, forum, config.post_retry_budget, version_time).await;
    match &body {
        EventBody::FeedbackPosted { .. } => summary.posted += 1,
        EventBody::FeedbackNotNeeded { .. } => summary.not_needed += 1,
        EventBody::FeedbackFailed { .. } => summary.failed += 1,
        _ => {}
    }
    log.append(now, body)?;
    if let Some(task) = tasks.iter_mut().find(|t| t.review_id == review_id) {
        task.state = TaskState::Done;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
async fn poll_forum(
    forum: &dyn ForumClient,
    assignment: &mut ExperimentAssignment,
    tracked: &mut BTreeMap<String, Tracked>,
    tasks: &mut Vec<ScheduledTask>,
    log: &mut EventLogWriter,
    config: &ServeConfig,
    now: i64,
    summary: &mut ServeSummary,
) -> Result<bool, ServeError> {
    let mut found = false;

    for item in forum.list_new_reviews(-1).await? {
        if tracked.contains_key(&item.review_id) {
            continue;
        }
        found = true;
        summary.reviews_seen += 1;
        let thread = forum.get_review(&item.review_id).await?;
        let raw = thread.to_raw_review(&thread.versions[0]);
        log.append(now, EventBody::ReviewSubmitted { review: raw })?;
        tracked.insert(
            item.review_id.clone(),
            Tracked {
                versions_seen: 1,
                comments_seen: 0,
            },
        );

        let selected =
            match select_review_for_feedback(assignment, &item.paper_id, &item.review_id) {
                Ok(selected) => selected,
                Err(err) => {
                    tracing::warn!(review_id = %item.review_id, "selection skipped: {err}");
                    false
                }
            };
        if selected {
            summary.selected += 1;
            let task =
                schedule_feedback_task(&item.review_id, item.submitted_at, config.delay_secs);
            log.append(
                now,
                EventBody::FeedbackScheduled {
                    review_id: task.review_id.clone(),
                    submit_time: task.submit_time,
                    due_time: task.due_time,
                },
            )?;
            tasks.push(task);
        }
    }

    // Detect edits and discussion activity on known threads.
    for (review_id, state) in tracked.iter_mut() {
        let thread = match forum.get_review(review_id).await {
            Ok(thread) => thread,
            Err(_) => continue,
        };
        if thread.versions.len() > state.versions_seen {
            found = true;
            for idx in state.versions_seen..thread.versions.len() {
                let version = &thread.versions[idx];
                log.append(
                    now,
                    EventBody::ReviewEdited {
                        review_id: review_id.clone(),
                        edit_time: version.time,
                        sections: version.sections.clone(),
                        scores: version.scores,
                    },
                )?;
                let previous = &thread.versions[idx - 1];
                for ((field, old), (_, new)) in previous
                    .scores
                    .ordered()
                    .into_iter()
                    .zip(version.scores.ordered())
                {
                    if old != new {
                        log.append(
                            now,
                            EventBody::ScoreEdited {
                                review_id: review_id.clone(),
                                field: field.to_string(),
                                old,
                                new,
                            },
                        )?;
                    }
                }
            }
            state.versions_seen = thread.versions.len();
        }
        if thread.comments.len() > state.comments_seen {
            for comment in &thread.comments[state.comments_seen..] {
                match comment.author_role.as_str() {
                    "author" => {
                        found = true;
                        log.append(
                            now,
                            EventBody::RebuttalPosted {
                                review_id: review_id.clone(),
                                body: comment.body.clone(),
                            },
                        )?;
                    }
                    "reviewer" => {
                        found = true;
                        log.append(
                            now,
                            EventBody::ReplyPosted {
                                review_id: review_id.clone(),
                                body: comment.body.clone(),
                            },
                        )?;
                    }
                    _ => {}
                }
            }
            state.comments_seen = thread.comments.len();
        }
    }

    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn due_time_is_submit_plus_delay() {
        let task = schedule_feedback_task("r1", 1_000, DEFAULT_DELAY_SECS);
        assert_eq!(task.due_time, 4_600);
        assert_eq!(task.state, TaskState::Pending);
    }

    #[test]
    fn zero_delay_is_due_at_submit() {
        let task = schedule_feedback_task("r1", 1_000, 0);
        assert_eq!(task.due_time, 1_000);
    }

    #[test]
    fn sim_clock_advances_on_sleep() {
        let clock = SimClock::new(100);
        assert_eq!(clock.now(), 100);
        clock.advance(50);
        assert_eq!(clock.now(), 150);
    }
}
