use std::fmt::Write;

use super::metrics::MetricsReport;
use crate::config::RunConfig;

pub const MACRO_CONVENTION: &str = "macro-F1 = unweighted mean of per-category F1 (not the F1 of macro-P and macro-R)";

fn header(out: &mut String, report: &MetricsReport, config: &RunConfig) {
    let _ = writeln!(out, "# threshold: {}", report.threshold);
    let _ = writeln!(out, "# examples: {}", report.examples);
    let _ = writeln!(out, "# macro convention: {MACRO_CONVENTION}");
    let _ = writeln!(out, "# decision: label predicted iff sigmoid(logit) >= threshold");
    let _ = writeln!(out, "# config:");
    for line in config.to_toml().lines() {
        let _ = writeln!(out, "#   {line}");
    }
}

/// Aligned text report: header, headline table, per-category table.
pub fn render_text(report: &MetricsReport, config: &RunConfig, category_names: &[String]) -> String {
    let mut out = String::new();
    header(&mut out, report, config);
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<8} {:>9} {:>9} {:>9}", "scope", "precision", "recall", "f1");
    for (scope, prf) in [("micro", report.micro), ("macro", report.macro_)] {
        let _ = writeln!(
            out,
            "{scope:<8} {:>9.4} {:>9.4} {:>9.4}",
            prf.precision, prf.recall, prf.f1
        );
    }
    let _ = writeln!(out);
    let width = category_names
        .iter()
        .map(|n| n.chars().count())
        .max()
        .unwrap_or(0)
        .max(8);
    let _ = writeln!(
        out,
        "{:>4} {:<width$} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9}",
        "id", "category", "tp", "fp", "fn", "precision", "recall", "f1"
    );
    for (i, c) in report.per_category.iter().enumerate() {
        let name = category_names.get(i).map_or("-", String::as_str);
        let pad = width.saturating_sub(name.chars().count());
        let _ = writeln!(
            out,
            "{i:>4} {name}{:pad$} {:>6} {:>6} {:>6} {:>9.4} {:>9.4} {:>9.4}",
            "", c.tp, c.fp, c.fn_, c.scores.precision, c.scores.recall, c.scores.f1
        );
    }
    out
}

/// One metric per line: `scope\tcategory_or_-\tmetric\tvalue`, preceded by
/// `#` header lines.
pub fn render_records(report: &MetricsReport, config: &RunConfig) -> String {
    let mut out = String::new();
    header(&mut out, report, config);
    for (scope, prf) in [("micro", report.micro), ("macro", report.macro_)] {
        for (metric, v) in [("precision", prf.precision), ("recall", prf.recall), ("f1", prf.f1)] {
            let _ = writeln!(out, "{scope}\t-\t{metric}\t{v}");
        }
    }
    for (i, c) in report.per_category.iter().enumerate() {
        for (metric, v) in [("tp", c.tp as f64), ("fp", c.fp as f64), ("fn", c.fn_ as f64)] {
            let _ = writeln!(out, "category\t{i}\t{metric}\t{v}");
        }
        for (metric, v) in [
            ("precision", c.scores.precision),
            ("recall", c.scores.recall),
            ("f1", c.scores.f1),
        ] {
            let _ = writeln!(out, "category\t{i}\t{metric}\t{v}");
        }
    }
    out
}
