//! Evaluation and ablation reports plus their plain-text and SVG renderings.
//! Renderers read only the report structs, never the model.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifier::Metrics;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectRow {
    pub subject: String,
    pub count: usize,
    pub accuracy: f64,
    /// Support-weighted F1.
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub split: String,
    pub class_names: Vec<String>,
    pub overall: Metrics,
    pub per_subject: Vec<SubjectRow>,
}

impl EvalReport {
    pub fn mean_subject_accuracy(&self) -> f64 {
        mean(self.per_subject.iter().map(|r| r.accuracy))
    }

    pub fn mean_subject_f1(&self) -> f64 {
        mean(self.per_subject.iter().map(|r| r.f1))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Percent with two decimals, the format every table uses.
pub fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

/// Averages rows that share a subject across several reports.
pub fn merge_subject_rows(reports: &[EvalReport]) -> Vec<SubjectRow> {
    let mut acc: BTreeMap<&str, (usize, f64, f64, usize)> = BTreeMap::new();
    for r in reports {
        for row in &r.per_subject {
            let e = acc.entry(&row.subject).or_default();
            e.0 += row.count;
            e.1 += row.accuracy;
            e.2 += row.f1;
            e.3 += 1;
        }
    }
    acc.into_iter()
        .map(|(s, (count, a, f, k))| SubjectRow {
            subject: s.to_string(),
            count,
            accuracy: a / k as f64,
            f1: f / k as f64,
        })
        .collect()
}

/// `Subject | Acc | F1` with a closing average row.
pub fn subject_table(rows: &[SubjectRow]) -> String {
    let width = rows.iter().map(|r| r.subject.len()).max().unwrap_or(0).max("Subject".len()).max("Average".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$} | {:>6} | {:>6}", "Subject", "Acc", "F1");
    let _ = writeln!(out, "{}-|-{}-|-{}", "-".repeat(width), "-".repeat(6), "-".repeat(6));
    for r in rows {
        let _ = writeln!(out, "{:<width$} | {:>6} | {:>6}", r.subject, pct(r.accuracy), pct(r.f1));
    }
    let (a, f) = (mean(rows.iter().map(|r| r.accuracy)), mean(rows.iter().map(|r| r.f1)));
    let _ = writeln!(out, "{:<width$} | {:>6} | {:>6}", "Average", pct(a), pct(f));
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub accuracy: f64,
    pub f1: f64,
    pub macro_f1: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let width = rows.iter().map(|r| r.variant.len()).max().unwrap_or(0).max("Variant".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$} | {:>6} | {:>6}", "Variant", "Acc", "F1");
    let _ = writeln!(out, "{}-|-{}-|-{}", "-".repeat(width), "-".repeat(6), "-".repeat(6));
    for r in rows {
        let _ = writeln!(out, "{:<width$} | {:>6} | {:>6}", r.variant, pct(r.accuracy), pct(r.f1));
    }
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Row-normalized confusion matrix as an SVG heatmap with counts.
pub fn confusion_svg(report: &EvalReport) -> Result<String> {
    let m = &report.overall.confusion;
    let k = m.len();
    if k == 0 || report.class_names.len() != k {
        return Err(Error::Shape(format!("{k}×{k} confusion with {} class names", report.class_names.len())));
    }
    let cell = 56;
    let margin = 110;
    let size = margin + cell * k + 20;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (t, row) in m.iter().enumerate() {
        let total: usize = row.iter().sum();
        for (p, &count) in row.iter().enumerate() {
            let frac = if total == 0 { 0.0 } else { count as f64 / total as f64 };
            let shade = (255.0 * (1.0 - frac)).round() as u8;
            let (x, y) = (margin + p * cell, margin + t * cell);
            let _ = writeln!(
                svg,
                r##"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="#999"/>"##
            );
            let color = if frac > 0.5 { "white" } else { "black" };
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{color}">{count}</text>"#,
                x + cell / 2,
                y + cell / 2 + 4
            );
        }
    }
    for (i, name) in report.class_names.iter().enumerate() {
        let name = xml_escape(name);
        let c = margin + i * cell + cell / 2;
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{name}</text>"#, margin - 6, c + 4);
        let _ = writeln!(
            svg,
            r#"<text x="{c}" y="{}" text-anchor="start" transform="rotate(-45 {c} {})">{name}</text>"#,
            margin - 8,
            margin - 8
        );
    }
    let _ = writeln!(svg, r#"<text x="10" y="20">true \ predicted</text>"#);
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> EvalReport {
        let overall = Metrics::from_confusion(vec![vec![3, 1], vec![0, 4]]).unwrap();
        EvalReport {
            dataset: "x".into(),
            split: "all:0.3".into(),
            class_names: vec!["a<b".into(), "c".into()],
            overall,
            per_subject: vec![
                SubjectRow { subject: "s00".into(), count: 4, accuracy: 0.75, f1: 0.7334 },
                SubjectRow { subject: "s01".into(), count: 4, accuracy: 1.0, f1: 1.0 },
            ],
        }
    }

    #[test]
    fn table_rows_and_average() {
        let t = subject_table(&report().per_subject);
        assert!(t.lines().next().unwrap().starts_with("Subject | "));
        assert!(t.contains("s00     |  75.00 |  73.34"), "{t}");
        assert!(t.contains("Average |  87.50 |  86.67"));
    }

    #[test]
    fn equal_counts_average_matches_overall() {
        let r = report();
        assert!((r.mean_subject_accuracy() - r.overall.accuracy).abs() < 1e-12);
    }

    #[test]
    fn merge_averages_repeated_subjects() {
        let (a, mut b) = (report(), report());
        b.per_subject[0].accuracy = 0.25;
        let rows = merge_subject_rows(&[a, b]);
        assert_eq!(rows[0].accuracy, 0.5);
        assert_eq!(rows[0].count, 8);
    }

    #[test]
    fn svg_escapes_names() {
        let svg = confusion_svg(&report()).unwrap();
        assert!(svg.contains("a&lt;b") && svg.ends_with("</svg>\n"));
    }
}
