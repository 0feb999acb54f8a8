//! Command implementations.

use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context};

use rfa_core::analysis::{
    cluster_feedback, compute_stats, judge_incorporation, read_verdicts_jsonl,
    render_report_table, stats::update_classes, write_verdicts_jsonl, ClusterConfig, StatsConfig,
    VerdictRecord,
};
use rfa_core::experiment::events::{read_event_log, replay, EventLogWriter, FeedbackOutcome};
use rfa_core::experiment::forum::FileForum;
use rfa_core::experiment::scheduler::{serve as serve_loop, ServeConfig, SimClock, SystemClock};
use rfa_core::experiment::{assign_paper_groups, read_assignment_file, write_assignment_file};
use rfa_core::ingest::{load_paper_text, parse_review, PaperSource, RawReview, SourceKind};
use rfa_core::llm::{LiveConfig, LiveProvider, LlmClient, Provider, RetryPolicy};
use rfa_core::{render_feedback_items, run_agent, AgentConfig, MockProvider, TemplateStore};

use crate::config::FileConfig;
use crate::{
    AssignArgs, ClustersArgs, IncorporationArgs, ProviderArgs, ReportArgs, RunArgs, ServeArgs,
    UpdatesArgs,
};

fn build_templates(args: &ProviderArgs, config: &FileConfig) -> anyhow::Result<TemplateStore> {
    let dir = args
        .templates
        .clone()
        .or_else(|| config.get("templates").map(Into::into));
    match dir {
        Some(dir) => TemplateStore::from_dir(&dir)
            .with_context(|| format!("loading templates from {}", dir.display())),
        None => Ok(TemplateStore::builtin()),
    }
}

fn build_provider(
    args: &ProviderArgs,
    config: &FileConfig,
) -> anyhow::Result<Arc<dyn Provider>> {
    let kind = args
        .provider
        .clone()
        .or_else(|| config.get("provider").map(str::to_string))
        .unwrap_or_else(|| "mock".to_string());
    match kind.as_str() {
        "mock" => {
            let script = args
                .script
                .clone()
                .or_else(|| config.get("script").map(Into::into))
                .context("--script is required with --provider mock")?;
            let mock = MockProvider::from_script_file(&script)
                .with_context(|| format!("loading mock script {}", script.display()))?;
            Ok(Arc::new(mock))
        }
        "live" => {
            let model = args
                .model
                .clone()
                .or_else(|| config.get("model").map(str::to_string))
                .context("--model is required with --provider live")?;
            let live_config = LiveConfig::from_env(&model).map_err(|e| anyhow::anyhow!(e))?;
            Ok(Arc::new(
                LiveProvider::new(live_config).map_err(|e| anyhow::anyhow!(e))?,
            ))
        }
        other => bail!("unknown provider {other:?} (expected mock or live)"),
    }
}

fn write_or_print(path: Option<&Path>, content: &str) -> anyhow::Result<()> {
    match path {
        Some(path) => {
            std::fs::write(path, content)
                .with_context(|| format!("writing {}", path.display()))?;
        }
        None => println!("{content}"),
    }
    Ok(())
}

pub fn assign(args: AssignArgs, config: &FileConfig) -> anyhow::Result<()> {
    let seed = config.resolve(args.seed, "seed", 0u64)?;
    let raw = std::fs::read_to_string(&args.papers)
        .with_context(|| format!("reading {}", args.papers.display()))?;
    let mut paper_ids = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .with_context(|| format!("papers line {}", idx + 1))?;
        let id = value
            .get("paper_id")
            .and_then(|v| v.as_str())
            .with_context(|| format!("papers line {}: missing paper_id", idx + 1))?;
        paper_ids.push(id.to_string());
    }
    let assignment = assign_paper_groups(&paper_ids, seed)?;
    write_assignment_file(&assignment, &args.out)?;
    let sizes = assignment.arm_sizes();
    eprintln!(
        "assigned {} papers (seed {seed}): {:?}",
        paper_ids.len(),
        sizes
    );
    Ok(())
}

pub async fn run(args: RunArgs, config: &FileConfig) -> anyhow::Result<()> {
    let templates = build_templates(&args.provider, config)?;
    let provider = build_provider(&args.provider, config)?;
    let salt = config.resolve(args.salt.clone(), "salt", "rfa".to_string())?;
    let max_attempts = config.resolve(args.max_attempts, "max-attempts", 2u32)?;

    let kind = match args.paper.extension().and_then(|e| e.to_str()) {
        Some("pdf") => SourceKind::Pdf,
        _ => SourceKind::PlainText,
    };
    let paper_id = args
        .paper
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("paper")
        .to_string();
    let paper = load_paper_text(&paper_id, PaperSource::Path(&args.paper), kind)?;

    let review_raw = std::fs::read_to_string(&args.review)
        .with_context(|| format!("reading {}", args.review.display()))?;
    let record: RawReview = serde_json::from_str(review_raw.trim())
        .context("review file must hold one JSON review record")?;
    let review = parse_review(&record, &salt)?;

    let client = LlmClient::with_retry(provider, RetryPolicy::no_backoff(3));
    let agent_config = AgentConfig {
        max_attempts,
        ..AgentConfig::default()
    };
    let bundle = run_agent(&paper, &review, &client, &templates, &agent_config).await;

    let json = serde_json::to_string_pretty(&bundle).expect("bundle serializes");
    write_or_print(args.out.as_deref(), &json)?;
    eprintln!(
        "status: {:?} (attempts {}, {} item(s))",
        bundle.status,
        bundle.attempts_used,
        bundle.items.len()
    );
    if args.print_body && bundle.status == rfa_core::BundleStatus::Posted {
        println!("{}", render_feedback_items(&bundle.items));
    }
    Ok(())
}

pub async fn serve(args: ServeArgs, config: &FileConfig) -> anyhow::Result<()> {
    let templates = Arc::new(build_templates(&args.provider, config)?);
    let provider = build_provider(&args.provider, config)?;
    let assignment = read_assignment_file(&args.assignments)?;
    let forum = Arc::new(FileForum::open(&args.forum_dir)?);
    let log = EventLogWriter::open(&args.events)?;

    let serve_config = ServeConfig {
        delay_secs: config.resolve(args.delay, "delay", 3_600)?,
        poll_interval_secs: config.resolve(args.poll_interval, "poll-interval", 60)?,
        workers: config.resolve(args.workers, "workers", 8)?,
        max_attempts: config.resolve(args.max_attempts, "max-attempts", 2)?,
        post_retry_budget: 2,
        run_until_idle: args.run_until_idle,
        papers_dir: Some(args.papers_dir.clone()),
        salt: config.resolve(args.salt.clone(), "salt", "rfa".to_string())?,
        retry: RetryPolicy::default(),
    };

    let (shutdown_tx, shutdown_rx) = tokio::sync::watch::channel(false);
    tokio::spawn(async move {
        if tokio::signal::ctrl_c().await.is_ok() {
            let _ = shutdown_tx.send(true);
        }
    });

    let clock: Arc<dyn rfa_core::experiment::scheduler::Clock> = match args.sim_clock_start {
        Some(start) => Arc::new(SimClock::new(start)),
        None => Arc::new(SystemClock),
    };

    let summary = serve_loop(
        forum,
        provider,
        templates,
        assignment,
        log,
        clock,
        serve_config,
        shutdown_rx,
    )
    .await?;
    eprintln!(
        "serve done: {} review(s) seen, {} selected, {} posted, {} not-needed, {} failed, {} event(s)",
        summary.reviews_seen,
        summary.selected,
        summary.posted,
        summary.not_needed,
        summary.failed,
        summary.events_written
    );
    Ok(())
}

pub fn analyze_updates(args: UpdatesArgs) -> anyhow::Result<()> {
    let events = read_event_log(&args.events)?;
    // The assignment file is read for validation only; selection state is
    // replayed from the log itself.
    let _ = read_assignment_file(&args.assignments)?;
    let stats_config = StatsConfig {
        review_period_end: args.review_period_end,
        rebuttal_period_end: None,
    };
    let classes = update_classes(&events, &stats_config);
    let mut out = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    for class in &classes {
        writeln!(out, "{}", serde_json::to_string(class)?)?;
    }
    out.flush()?;
    eprintln!("classified {} review(s)", classes.len());
    Ok(())
}

pub async fn analyze_incorporation(
    args: IncorporationArgs,
    config: &FileConfig,
) -> anyhow::Result<()> {
    let templates = build_templates(&args.provider, config)?;
    let provider = build_provider(&args.provider, config)?;
    let events = read_event_log(&args.events)?;
    let state = replay(&events);
    let stats_config = StatsConfig {
        review_period_end: args.review_period_end,
        rebuttal_period_end: None,
    };
    let updated: std::collections::BTreeSet<String> = update_classes(&events, &stats_config)
        .into_iter()
        .filter(|c| {
            c.classification == rfa_core::analysis::UpdateClassification::Updated
                && c.basis == rfa_core::analysis::UpdateBasis::FeedbackArm
        })
        .map(|c| c.review_id)
        .collect();

    let client = LlmClient::with_retry(provider, RetryPolicy::no_backoff(3));
    let period_end = args.review_period_end.unwrap_or(i64::MAX);
    let mut verdicts: Vec<VerdictRecord> = Vec::new();
    let mut judge_failures = 0usize;
    for (review_id, review) in &state.reviews {
        if !updated.contains(review_id) || review.items.is_empty() {
            continue;
        }
        let original = review.initial_sections().unwrap_or_default().prompt_text();
        let modified = review
            .sections_at(period_end)
            .unwrap_or_default()
            .prompt_text();
        for (idx, item) in review.items.iter().enumerate() {
            match judge_incorporation(
                review_id, idx, &original, &modified, item, &client, &templates,
            )
            .await
            {
                Ok(verdict) => verdicts.push(verdict.into()),
                Err(err) => {
                    judge_failures += 1;
                    tracing::warn!(review_id, item = idx, "incorporation judge failed: {err}");
                }
            }
        }
    }
    write_verdicts_jsonl(&args.out, &verdicts)?;
    eprintln!(
        "judged {} item(s) on {} updated review(s); {} unjudgeable",
        verdicts.len(),
        updated.len(),
        judge_failures
    );
    Ok(())
}

pub async fn analyze_clusters(args: ClustersArgs, config: &FileConfig) -> anyhow::Result<()> {
    let templates = build_templates(&args.provider, config)?;
    let provider = build_provider(&args.provider, config)?;
    let events = read_event_log(&args.events)?;
    let state = replay(&events);

    // Every item ever posted, in deterministic (review, index) order.
    let mut keys = Vec::new();
    let mut items = Vec::new();
    for (review_id, review) in &state.reviews {
        for (idx, item) in review.items.iter().enumerate() {
            keys.push((review_id.clone(), idx));
            items.push(item.clone());
        }
    }
    if items.is_empty() {
        bail!("event log contains no posted feedback items");
    }

    let cluster_config = ClusterConfig {
        k: config.resolve(args.k, "k", 5)?,
        sample: config.resolve(args.sample, "sample", 1_000)?,
        repetitions: config.resolve(args.repetitions, "repetitions", 2)?,
        seed: config.resolve(args.seed, "seed", 0)?,
    };
    let client = LlmClient::with_retry(provider, RetryPolicy::no_backoff(3));
    let outcome = cluster_feedback(&items, &cluster_config, &client, &templates).await?;

    #[derive(serde::Serialize)]
    struct AssignmentRow<'a> {
        review_id: &'a str,
        item_index: usize,
        cluster: &'a str,
    }
    #[derive(serde::Serialize)]
    struct ClusterDump<'a> {
        labels: &'a [String],
        counts: &'a std::collections::BTreeMap<String, usize>,
        unassigned: usize,
        assignments: Vec<AssignmentRow<'a>>,
    }
    let dump = ClusterDump {
        labels: &outcome.labels,
        counts: &outcome.counts,
        unassigned: outcome.unassigned,
        assignments: keys
            .iter()
            .zip(&outcome.assignments)
            .map(|((review_id, idx), cluster)| AssignmentRow {
                review_id,
                item_index: *idx,
                cluster,
            })
            .collect(),
    };
    std::fs::write(&args.out, serde_json::to_string_pretty(&dump)?)?;

    if let Some(verdicts_path) = &args.verdicts {
        let mut existing = if verdicts_path.exists() {
            read_verdicts_jsonl(verdicts_path)?
        } else {
            Vec::new()
        };
        let mut by_key: std::collections::BTreeMap<(String, usize), usize> = existing
            .iter()
            .enumerate()
            .map(|(pos, v)| ((v.review_id.clone(), v.item_index), pos))
            .collect();
        for ((review_id, idx), cluster) in keys.iter().zip(&outcome.assignments) {
            match by_key.get(&(review_id.clone(), *idx)) {
                Some(pos) => existing[*pos].cluster = Some(cluster.clone()),
                None => {
                    existing.push(VerdictRecord {
                        review_id: review_id.clone(),
                        item_index: *idx,
                        incorporated: false,
                        category: None,
                        cluster: Some(cluster.clone()),
                    });
                    by_key.insert((review_id.clone(), *idx), existing.len() - 1);
                }
            }
        }
        existing.sort_by(|a, b| (&a.review_id, a.item_index).cmp(&(&b.review_id, b.item_index)));
        write_verdicts_jsonl(verdicts_path, &existing)?;
    }

    eprintln!(
        "clustered {} item(s) into {} label(s); {} unassigned",
        items.len(),
        outcome.labels.len(),
        outcome.unassigned
    );
    Ok(())
}

pub fn analyze_report(args: ReportArgs) -> anyhow::Result<()> {
    let events = read_event_log(&args.events)?;
    let assignment = read_assignment_file(&args.assignments)?;
    let verdicts = match &args.verdicts {
        Some(path) => read_verdicts_jsonl(path)?,
        None => Vec::new(),
    };
    let stats_config = StatsConfig {
        review_period_end: args.review_period_end,
        rebuttal_period_end: args.rebuttal_period_end,
    };
    let report = compute_stats(&events, &assignment, &verdicts, &stats_config);
    report
        .verify()
        .map_err(|e| anyhow::anyhow!("report failed self-consistency: {e}"))?;
    std::fs::write(&args.out, serde_json::to_string_pretty(&report)?)?;
    let table = render_report_table(&report);
    match &args.table {
        Some(path) => std::fs::write(path, &table)?,
        None => print!("{table}"),
    }
    // Sanity counts that must re-derive from the raw log.
    let state = replay(&events);
    let posted = state
        .reviews
        .values()
        .filter(|r| r.outcome == Some(FeedbackOutcome::Posted))
        .count() as u64;
    anyhow::ensure!(
        posted == report.outcomes.posted,
        "posted count mismatch between log and report"
    );
    Ok(())
}
