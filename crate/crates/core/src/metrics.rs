//! Confusion-matrix metrics: accuracy, precision, recall, F1 and false
//! positive rate, all reported in percent.
//!
//! Headline precision/recall/F1 are support-weighted averages over the
//! three classes; macro averages are reported alongside. `fpr_binary`
//! treats Benign as the negative class and any attack as positive.
//! Ratios with a zero denominator are 0 and the class is flagged.

use std::io::Write;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::data::CLASS_NAMES;
use crate::error::{Error, Result};
use crate::NUM_CLASSES;

pub const BENIGN: usize = 0;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        (0..NUM_CLASSES).map(|r| self.counts[r][class]).sum()
    }
}

impl Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, rhs: Self) {
        for (a, b) in self.counts.iter_mut().flatten().zip(rhs.counts.iter().flatten()) {
            *a += b;
        }
    }
}

pub fn confusion(y_true: &[usize], y_pred: &[usize]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Evaluation(format!(
            "{} true labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (i, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
        if t >= NUM_CLASSES || p >= NUM_CLASSES {
            return Err(Error::Label(format!(
                "label out of range at index {i}: true {t}, predicted {p}"
            )));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// One-vs-rest false positive rate.
    pub fpr: f64,
    /// Set when a ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub fpr_binary: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Evaluation("empty confusion matrix".into()));
    }
    let mut per_class = Vec::with_capacity(NUM_CLASSES);
    for (c, name) in CLASS_NAMES.iter().enumerate() {
        let tp = cm.counts[c][c];
        let support = cm.support(c);
        let fp = cm.predicted(c) - tp;
        let negatives = total - support;
        let (precision, d1) = ratio(tp, tp + fp);
        let (recall, d2) = ratio(tp, support);
        let (fpr, d3) = ratio(fp, negatives);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassMetrics {
            class: name.to_string(),
            support,
            precision: 100.0 * precision,
            recall: 100.0 * recall,
            f1: 100.0 * f1,
            fpr: 100.0 * fpr,
            degenerate: d1 || d2 || d3,
        });
    }
    let weighted = |f: fn(&ClassMetrics) -> f64| -> f64 {
        per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
    };
    let macro_avg = |f: fn(&ClassMetrics) -> f64| -> f64 { per_class.iter().map(f).sum::<f64>() / NUM_CLASSES as f64 };
    let benign = cm.support(BENIGN);
    let benign_flagged = benign - cm.counts[BENIGN][BENIGN];
    Ok(MetricsReport {
        samples: total,
        accuracy: 100.0 * cm.trace() as f64 / total as f64,
        precision: weighted(|m| m.precision),
        recall: weighted(|m| m.recall),
        f1: weighted(|m| m.f1),
        precision_macro: macro_avg(|m| m.precision),
        recall_macro: macro_avg(|m| m.recall),
        f1_macro: macro_avg(|m| m.f1),
        fpr_binary: 100.0 * ratio(benign_flagged, benign).0,
        per_class,
    })
}

/// A report tagged with where it was measured ("global", "client-3", ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopedMetrics {
    pub arm: String,
    pub scope: String,
    pub confusion: ConfusionMatrix,
    pub report: MetricsReport,
}

pub const CSV_COLUMNS: [&str; 12] = [
    "arm",
    "scope",
    "samples",
    "accuracy",
    "precision",
    "recall",
    "f1",
    "precision_macro",
    "recall_macro",
    "f1_macro",
    "fpr_binary",
    "degenerate_classes",
];

/// One row per scope; percentages with two decimals.
pub fn write_metrics_csv(rows: &[ScopedMetrics], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_COLUMNS)?;
    for row in rows {
        let r = &row.report;
        let degenerate: Vec<&str> = r
            .per_class
            .iter()
            .filter(|c| c.degenerate)
            .map(|c| c.class.as_str())
            .collect();
        let pct = |v: f64| format!("{v:.2}");
        out.write_record([
            row.arm.clone(),
            row.scope.clone(),
            r.samples.to_string(),
            pct(r.accuracy),
            pct(r.precision),
            pct(r.recall),
            pct(r.f1),
            pct(r.precision_macro),
            pct(r.recall_macro),
            pct(r.f1_macro),
            pct(r.fpr_binary),
            degenerate.join(";"),
        ])?;
    }
    out.flush().map_err(|e| Error::io("metrics.csv", e))?;
    Ok(())
}
