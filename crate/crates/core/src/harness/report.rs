//! Plain-text tables for run results.

use std::fmt::Write;

use crate::harness::metrics::MetricsReport;
use crate::harness::pipeline::{CostSummary, CurvePoint};

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

pub fn metrics_table(m: &MetricsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<10} {:>7} {:>9} {:>9} {:>7} {:>7}", "class", "support", "precision", "recall", "f1", "pred");
    for (name, c) in &m.per_class {
        let _ = writeln!(
            out,
            "{:<10} {:>7} {:>9} {:>9} {:>7} {:>7}",
            name,
            c.support,
            opt(c.precision),
            opt(c.recall),
            opt(c.f1),
            c.predicted
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "instances          {}", m.instances);
    let _ = writeln!(out, "micro-avg F1       {:.4}", m.micro_avg_f1);
    let _ = writeln!(out, "accuracy           {:.4}", m.accuracy);
    let _ = writeln!(out, "balanced accuracy  {:.4}", m.balanced_accuracy);
    let _ = writeln!(out, "coverage           {:.4}", m.coverage);
    let _ = writeln!(out, "unknown rate       {:.4}", m.unknown_rate);
    out
}

pub fn curve_table(points: &[CurvePoint]) -> String {
    let mut out = format!("{:>8} {:>12} {:>9}\n", "factors", "unknown_rate", "micro_f1");
    for p in points {
        let _ = writeln!(out, "{:>8} {:>12.4} {:>9.4}", p.n_factors, p.unknown_rate, p.micro_f1);
    }
    out
}

/// Per-tag usage, plus ratios against `baseline` when given.
pub fn cost_table(cost: &CostSummary, baseline: Option<&CostSummary>) -> String {
    let mut out = format!("{:<16} {:>7} {:>10} {:>10}\n", "stage", "calls", "tokens_in", "tokens_out");
    for (tag, c) in &cost.ledger.chat {
        let _ = writeln!(out, "{:<16} {:>7} {:>10} {:>10}", tag.to_string(), c.calls, c.tokens_in, c.tokens_out);
    }
    let _ = writeln!(
        out,
        "{:<16} {:>7} {:>10} {:>10}",
        "embed", cost.ledger.embed_calls, cost.ledger.embed_tokens, 0
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "scenarios          {}", cost.scenarios);
    let _ = writeln!(out, "total calls        {}", cost.ledger.total_calls());
    let _ = writeln!(out, "total tokens       {}", cost.ledger.total_tokens());
    let _ = writeln!(out, "tokens / scenario  {:.1}", cost.tokens_per_scenario());
    let _ = writeln!(out, "seconds / scenario {:.3}", cost.secs_per_scenario());
    if let Some(base) = baseline {
        let ratio = |a: f64, b: f64| if b > 0.0 { format!("{:.2}x", a / b) } else { "-".into() };
        let _ = writeln!(
            out,
            "token ratio        {}",
            ratio(cost.tokens_per_scenario(), base.tokens_per_scenario())
        );
        let _ = writeln!(
            out,
            "time ratio         {}",
            ratio(cost.secs_per_scenario(), base.secs_per_scenario())
        );
    }
    out
}
