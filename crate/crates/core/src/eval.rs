//! Confusion matrices and precision / recall / fall-out / F1.
//!
//! A metric whose denominator is zero is `None` rather than 0 or NaN.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("label {label} at position {index} is outside 0..{n_classes}")]
    LabelOutOfRange { index: usize, label: usize, n_classes: usize },
    #[error("{truths} truths but {predictions} predictions")]
    LengthMismatch { truths: usize, predictions: usize },
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    pub counts: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix {
            n_classes,
            counts: vec![vec![0; n_classes]; n_classes],
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// One-vs-rest reduction with `positive` as the positive class.
    pub fn collapse(&self, positive: usize) -> BinaryCounts {
        let tp = self.counts[positive][positive];
        let row: u64 = self.counts[positive].iter().sum();
        let col: u64 = self.counts.iter().map(|r| r[positive]).sum();
        let fn_ = row - tp;
        let fp = col - tp;
        BinaryCounts {
            tp,
            fp,
            fn_,
            tn: self.total() - tp - fn_ - fp,
        }
    }
}

pub fn confusion(truths: &[usize], predictions: &[usize], n_classes: usize) -> Result<ConfusionMatrix, EvalError> {
    if truths.len() != predictions.len() {
        return Err(EvalError::LengthMismatch {
            truths: truths.len(),
            predictions: predictions.len(),
        });
    }
    let mut cm = ConfusionMatrix::new(n_classes);
    for (index, (&t, &p)) in truths.iter().zip(predictions).enumerate() {
        for label in [t, p] {
            if label >= n_classes {
                return Err(EvalError::LabelOutOfRange { index, label, n_classes });
            }
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub fall_out: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den != 0).then(|| num as f64 / den as f64)
}

impl Metrics {
    pub fn from_counts(c: BinaryCounts) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let fall_out = ratio(c.fp, c.fp + c.tn);
        let f1 = match (precision, recall) {
            (Some(pr), Some(rc)) if pr + rc > 0.0 => Some(2.0 * pr * rc / (pr + rc)),
            _ => None,
        };
        Metrics {
            precision,
            recall,
            fall_out,
            f1,
        }
    }

    fn all_defined(&self) -> bool {
        self.precision.is_some() && self.recall.is_some() && self.fall_out.is_some() && self.f1.is_some()
    }
}

pub fn metrics(cm: &ConfusionMatrix, positive: usize) -> Metrics {
    Metrics::from_counts(cm.collapse(positive))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub class: usize,
    pub name: String,
    pub support: u64,
    #[serde(flatten)]
    pub counts: BinaryCounts,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Averages {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub fall_out: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub counts: ConfusionMatrix,
    /// Binary view with class 1 ("attack") positive; present when `n_classes == 2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub binary: Option<ClassReport>,
    pub per_class: Vec<ClassReport>,
    /// Unweighted mean over classes where the metric is defined.
    #[serde(rename = "macro")]
    pub macro_avg: Averages,
    /// Support-weighted mean over classes where the metric is defined.
    pub weighted: Averages,
    /// Classes with at least one undefined metric (zero denominator).
    pub undefined_classes: Vec<usize>,
    /// Zero-denominator metrics are reported as null, never as 0.
    pub undefined_as: &'static str,
}

fn average(per_class: &[ClassReport], pick: impl Fn(&Metrics) -> Option<f64>, weighted: bool) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for c in per_class {
        if let Some(v) = pick(&c.metrics) {
            let w = if weighted { c.support as f64 } else { 1.0 };
            num += w * v;
            den += w;
        }
    }
    (den > 0.0).then(|| num / den)
}

fn averages(per_class: &[ClassReport], weighted: bool) -> Averages {
    Averages {
        precision: average(per_class, |m| m.precision, weighted),
        recall: average(per_class, |m| m.recall, weighted),
        fall_out: average(per_class, |m| m.fall_out, weighted),
        f1: average(per_class, |m| m.f1, weighted),
    }
}

fn class_report(cm: &ConfusionMatrix, class: usize, names: &[&str]) -> ClassReport {
    let counts = cm.collapse(class);
    ClassReport {
        class,
        name: names.get(class).map_or_else(|| format!("class-{class}"), |s| s.to_string()),
        support: counts.tp + counts.fn_,
        counts,
        metrics: Metrics::from_counts(counts),
    }
}

pub fn multiclass_report(cm: &ConfusionMatrix, names: &[&str]) -> Report {
    let per_class: Vec<ClassReport> = (0..cm.n_classes).map(|c| class_report(cm, c, names)).collect();
    let undefined_classes = per_class
        .iter()
        .filter(|c| !c.metrics.all_defined())
        .map(|c| c.class)
        .collect();
    Report {
        counts: cm.clone(),
        binary: (cm.n_classes == 2).then(|| class_report(cm, 1, names)),
        macro_avg: averages(&per_class, false),
        weighted: averages(&per_class, true),
        per_class,
        undefined_classes,
        undefined_as: "null",
    }
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `class,name,support,tp,fp,tn,fn,precision,recall,fall_out,f1`; undefined cells are empty.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        let mut s = String::from("class,name,support,tp,fp,tn,fn,precision,recall,fall_out,f1\n");
        for c in &self.per_class {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                c.class,
                c.name,
                c.support,
                c.counts.tp,
                c.counts.fp,
                c.counts.tn,
                c.counts.fn_,
                cell(c.metrics.precision),
                cell(c.metrics.recall),
                cell(c.metrics.fall_out),
                cell(c.metrics.f1)
            );
        }
        for (label, a) in [("macro", &self.macro_avg), ("weighted", &self.weighted)] {
            let _ = writeln!(
                s,
                ",{label},,,,,,{},{},{},{}",
                cell(a.precision),
                cell(a.recall),
                cell(a.fall_out),
                cell(a.f1)
            );
        }
        s
    }
}
