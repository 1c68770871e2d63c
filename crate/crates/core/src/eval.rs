//! Confusion counts and the four task metrics, with `machine` as the positive class.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(pred: &[Label], gold: &[Label]) -> Result<ConfusionMatrix> {
    if pred.len() != gold.len() {
        return Err(Error::Shape { expected: gold.len(), found: pred.len(), context: "confusion matrix" });
    }
    if gold.is_empty() {
        return Err(Error::Usage("cannot score an empty prediction set".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &g) in pred.iter().zip(gold) {
        match (p, g) {
            (Label::Machine, Label::Machine) => cm.tp += 1,
            (Label::Machine, Label::Human) => cm.fp += 1,
            (Label::Human, Label::Human) => cm.tn += 1,
            (Label::Human, Label::Machine) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    MetricsReport {
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        precision,
        recall,
        f1: f1_score(precision, recall),
    }
}

/// Formats a fraction as a percentage with two decimals, rounding halves up.
pub fn percent(value: f64) -> String {
    // The epsilon absorbs binary representation error in values such as 0.97905.
    let hundredths = (value * 10_000.0 + 0.5 + 1e-9).floor() as i64;
    let sign = if hundredths < 0 { "-" } else { "" };
    let abs = hundredths.abs();
    format!("{sign}{}.{:02}", abs / 100, abs % 100)
}

/// Fixed-width comparison table with Acc/F1/Prec/Rec columns in percent.
pub fn render_table(reports: &[(String, MetricsReport)]) -> String {
    let name_width = reports.iter().map(|(n, _)| n.chars().count()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(out, "{:<name_width$} {:>6} {:>6} {:>6} {:>6}", "System", "Acc", "F1", "Prec", "Rec");
    for (name, r) in reports {
        let _ = writeln!(
            out,
            "{:<name_width$} {:>6} {:>6} {:>6} {:>6}",
            name,
            percent(r.accuracy),
            percent(r.f1),
            percent(r.precision),
            percent(r.recall)
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRecord {
    pub system: String,
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// One JSON object per line, in input order.
pub fn render_records(reports: &[(String, MetricsReport)]) -> String {
    let mut out = String::new();
    for (name, r) in reports {
        let record = SystemRecord {
            system: name.clone(),
            accuracy: r.accuracy,
            f1: r.f1,
            precision: r.precision,
            recall: r.recall,
        };
        out.push_str(&serde_json::to_string(&record).expect("plain struct serializes"));
        out.push('\n');
    }
    out
}
