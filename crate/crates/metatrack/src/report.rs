//! Evaluation report rendering: an aligned table for people and
//! `key=value` lines for scripts.

use std::fmt::Write as _;

use metatrack_core::metrics::{EvalReport, MetricCounts};

const TOTAL: &str = "OVERALL";

fn rows(report: &EvalReport) -> Vec<(&str, &MetricCounts)> {
    let mut out: Vec<(&str, &MetricCounts)> = report.sequences.iter().map(|s| (s.name.as_str(), &s.counts)).collect();
    out.push((TOTAL, &report.total));
    out
}

pub fn render_table(report: &EvalReport) -> String {
    let header = ["sequence", "MOTA", "IDF1", "IDP", "IDR", "FP", "FN", "IDSW", "GT"];
    let mut cells: Vec<[String; 9]> = vec![header.map(String::from)];
    for (name, m) in rows(report) {
        let c = &m.clear;
        cells.push([
            name.to_string(),
            format!("{:.3}", m.mota()),
            format!("{:.3}", m.idf1()),
            format!("{:.3}", m.idp()),
            format!("{:.3}", m.idr()),
            c.false_positives.to_string(),
            c.false_negatives.to_string(),
            c.id_switches.to_string(),
            c.num_gt.to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..9).map(|i| cells.iter().map(|r| r[i].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in &cells {
        let _ = write!(out, "{:<w$}", r[0], w = widths[0]);
        for i in 1..9 {
            let _ = write!(out, "  {:>w$}", r[i], w = widths[i]);
        }
        out.push('\n');
    }
    out
}

pub fn render_key_values(report: &EvalReport) -> String {
    let mut out = String::new();
    for (name, m) in rows(report) {
        let c = &m.clear;
        let _ = writeln!(
            out,
            "sequence={name} mota={} idf1={} idp={} idr={} fp={} fn={} idsw={} gt={} idtp={} idfp={} idfn={}",
            m.mota(),
            m.idf1(),
            m.idp(),
            m.idr(),
            c.false_positives,
            c.false_negatives,
            c.id_switches,
            c.num_gt,
            m.id.idtp,
            m.id.idfp,
            m.id.idfn
        );
    }
    out
}

/// Table, blank line, then the machine-readable lines.
pub fn render(report: &EvalReport) -> String {
    format!("{}\n{}", render_table(report), render_key_values(report))
}
