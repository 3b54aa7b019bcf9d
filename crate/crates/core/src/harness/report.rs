use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::agents::ExitStatus;
use crate::challenge::Category;

use super::metrics::BenchmarkReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    TableText,
    Structured,
}

pub fn fmt_pct(v: f64) -> String {
    format!("{v:.1}")
}

pub fn fmt_dollars(v: Option<f64>) -> String {
    v.map(|c| format!("{c:.2}")).unwrap_or_else(|| "n/a".into())
}

fn fmt_opt_pct(v: Option<f64>) -> String {
    v.map(fmt_pct).unwrap_or_else(|| "n/a".into())
}

fn row(cells: &[String], widths: &[usize]) -> String {
    let padded: Vec<String> = cells.iter().zip(widths).map(|(c, w)| format!("{c:>w$}")).collect();
    format!("| {} |", padded.join(" | "))
}

/// Overall % solved and $ per solved, then % solved per category. A report
/// without records renders the header only.
pub fn table_text(report: &BenchmarkReport) -> String {
    let mut header = vec!["% solved".to_string(), "$ cost".to_string()];
    header.extend(Category::ALL.iter().map(|c| c.to_string()));
    let widths: Vec<usize> = header.iter().map(|h| h.len().max(6)).collect();
    let mut out = String::new();
    writeln!(out, "{}", row(&header, &widths)).unwrap();
    writeln!(
        out,
        "|{}|",
        widths.iter().map(|w| "-".repeat(w + 2)).collect::<Vec<_>>().join("|")
    )
    .unwrap();
    if report.overall.total == 0 {
        return out;
    }
    let mut cells = vec![fmt_pct(report.pct_solved), fmt_dollars(report.cost_per_solved)];
    cells.extend(Category::ALL.iter().map(|c| match report.categories.get(c) {
        Some(t) if t.total > 0 => fmt_pct(t.pct_solved()),
        _ => "-".to_string(),
    }));
    writeln!(out, "{}", row(&cells, &widths)).unwrap();

    writeln!(out).unwrap();
    writeln!(
        out,
        "solved {}/{}  total cost ${:.2}  cost per attempt ${}",
        report.overall.solved,
        report.overall.total,
        report.total_cost,
        fmt_dollars(report.cost_per_attempt)
    )
    .unwrap();
    let exits: Vec<String> = ExitStatus::ALL
        .iter()
        .map(|e| format!("{}: {}", e, report.exits.get(e).copied().unwrap_or(0)))
        .collect();
    writeln!(out, "exits  {}", exits.join("  ")).unwrap();
    if let Some(t) = &report.transitions {
        writeln!(
            out,
            "retrieval  relevance pass {}%  hallucination fail {}%  solved pass {}%  retry contribution {}%",
            fmt_opt_pct(t.relevance_pass_rate),
            fmt_opt_pct(t.hallucination_fail_rate),
            fmt_opt_pct(t.solved_pass_rate),
            fmt_opt_pct(t.retry_contribution)
        )
        .unwrap();
    }
    out
}

pub fn emit_report(report: &BenchmarkReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::TableText => table_text(report),
        ReportFormat::Structured => serde_json::to_string_pretty(report).expect("reports serialize"),
    }
}

pub fn parse_structured(text: &str) -> serde_json::Result<BenchmarkReport> {
    serde_json::from_str(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::Tally;

    #[test]
    fn empty_report_is_header_only() {
        let t = table_text(&BenchmarkReport::default());
        assert_eq!(t.lines().count(), 2);
        assert!(t.starts_with("| % solved |"));
    }

    #[test]
    fn full_row_has_eight_numeric_cells() {
        let mut r = BenchmarkReport {
            overall: Tally { total: 6, solved: 3 },
            pct_solved: 50.0,
            total_cost: 3.0,
            cost_per_solved: Some(1.0),
            cost_per_attempt: Some(0.5),
            ..Default::default()
        };
        for (i, c) in Category::ALL.into_iter().enumerate() {
            r.categories.insert(c, Tally { total: 1, solved: i % 2 });
        }
        let t = table_text(&r);
        let row = t.lines().nth(2).unwrap();
        let cells: Vec<&str> = row.trim_matches('|').split('|').map(str::trim).collect();
        assert_eq!(cells.len(), 8);
        assert!(cells.iter().all(|c| c.parse::<f64>().is_ok()));
    }
}
