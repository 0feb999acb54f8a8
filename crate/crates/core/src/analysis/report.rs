//! Human-readable table dump of a statistics report.

use std::fmt::Write as _;

use super::stats::{GroupMeans, Rate, StatsReport, TestOutcome};

fn pct(rate: &Rate) -> String {
    format!("{} / {} ({:.1}%)", rate.num, rate.den, rate.pct())
}

fn test_suffix(test: &Option<TestOutcome>) -> String {
    match test {
        Some(t) => format!("  (stat {:+.3}, p {:.4}{})", t.statistic, t.p_value, t.stars),
        None => "  (not computable)".into(),
    }
}

fn means_row(out: &mut String, label: &str, means: &GroupMeans) {
    let _ = writeln!(
        out,
        "{label:<28} {:>10.1} {:>10.1}{:<28} {:>10.1} {:>10.1}{}",
        means.control.mean,
        means.feedback.mean,
        test_suffix(&means.control_vs_feedback),
        means.not_updated.mean,
        means.updated.mean,
        test_suffix(&means.not_updated_vs_updated),
    );
}

/// Render the report as an aligned text table: feedback statistics, update
/// rates, length deltas, rebuttal engagement, score edits, incorporation
/// and cluster breakdowns.
pub fn render_report_table(report: &StatsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "== Feedback statistics ==");
    let _ = writeln!(
        out,
        "papers per arm              {:?}",
        report.arms.papers_per_arm
    );
    let _ = writeln!(out, "reviews total               {}", report.arms.reviews_total);
    let _ = writeln!(
        out,
        "selected for feedback       {}",
        report.arms.selected_reviews
    );
    let _ = writeln!(out, "control                     {}", report.arms.control_reviews);
    let _ = writeln!(
        out,
        "received feedback           {}",
        pct(&report.outcomes.posted_rate_of_all)
    );
    let _ = writeln!(out, "no feedback needed          {}", report.outcomes.not_needed);
    let _ = writeln!(out, "failed reliability tests    {}", report.outcomes.failed);

    let _ = writeln!(out, "\n== Update rates ==");
    let _ = writeln!(
        out,
        "updated (received feedback) {}{}",
        pct(&report.updates.received_updated),
        test_suffix(&report.updates.difference_test)
    );
    let _ = writeln!(
        out,
        "updated (control)           {}",
        pct(&report.updates.control_updated)
    );

    let _ = writeln!(
        out,
        "\n== Mean word deltas (control / feedback | not-updated / updated) =="
    );
    means_row(&mut out, "review length change", &report.review_word_delta);
    means_row(&mut out, "rebuttal length", &report.rebuttal_length);
    means_row(&mut out, "reviewer reply length", &report.reply_length);

    let _ = writeln!(out, "\n== Score-edit rates ==");
    for (period, rates) in &report.score_edit_rates {
        let _ = writeln!(
            out,
            "{period:<18} feedback {}  control {}{}",
            pct(&rates.feedback),
            pct(&rates.control),
            test_suffix(&rates.test)
        );
    }

    let _ = writeln!(out, "\n== Score deltas (mean change per review) ==");
    for (period, fields) in &report.score_deltas {
        for (field, means) in fields {
            let _ = writeln!(
                out,
                "{period:<16} {field:<13} control {:+.3}  feedback {:+.3}{}  not-updated {:+.3}  updated {:+.3}{}",
                means.control.mean,
                means.feedback.mean,
                test_suffix(&means.control_vs_feedback),
                means.not_updated.mean,
                means.updated.mean,
                test_suffix(&means.not_updated_vs_updated),
            );
        }
    }

    if let Some(inc) = &report.incorporation {
        let _ = writeln!(out, "\n== Incorporation ==");
        let _ = writeln!(out, "items given                 {}", inc.items_total);
        let _ = writeln!(out, "items incorporated          {}", inc.incorporated_total);
        let _ = writeln!(out, "corpus rate                 {}", pct(&inc.corpus_rate));
        let _ = writeln!(
            out,
            "micro rate (updated)        {}",
            pct(&inc.micro_rate_updated)
        );
        if let Some(macro_mean) = inc.macro_mean_updated {
            let _ = writeln!(
                out,
                "macro mean (updated)        {:.1}%",
                macro_mean * 100.0
            );
        }
        let _ = writeln!(
            out,
            "reviews w/ any (updated)    {}",
            pct(&inc.with_any_of_updated)
        );
        let _ = writeln!(
            out,
            "reviews w/ any (received)   {}",
            pct(&inc.with_any_of_received)
        );
        if !inc.per_cluster.is_empty() {
            let _ = writeln!(out, "\n== Incorporation by cluster ==");
            for (cluster, rate) in &inc.per_cluster {
                let _ = writeln!(out, "{cluster:<56} {}", pct(rate));
            }
        }
    }
    out
}
