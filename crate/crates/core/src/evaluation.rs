//! Confusion matrices, threshold metrics, ROC/AUC and the sales impact of
//! false negatives.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tn: u64, fp: u64, fn_: u64, tp: u64) -> ConfusionMatrix {
        ConfusionMatrix { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(labels: &[u8], predictions: &[u8]) -> Result<ConfusionMatrix> {
    if labels.len() != predictions.len() {
        return Err(Error::LengthMismatch(labels.len(), predictions.len()));
    }
    if labels.is_empty() {
        return Err(Error::Validation("confusion matrix of zero rows".into()));
    }
    let mut c = ConfusionMatrix::default();
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y != 0, p != 0) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Threshold metrics; `None` marks a metric whose denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub fpr: Option<f64>,
    pub misclassification: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: &ConfusionMatrix) -> Metrics {
    let total = c.total();
    Metrics {
        accuracy: ratio(c.tp + c.tn, total),
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
        fpr: ratio(c.fp, c.fp + c.tn),
        misclassification: ratio(c.fp + c.fn_, total),
    }
}

/// Errors over correct predictions, (fp + fn) / (tp + tn); reported as a
/// footnote next to the total-denominator rate.
pub fn misclassification_over_correct(c: &ConfusionMatrix) -> Option<f64> {
    ratio(c.fp + c.fn_, c.tp + c.tn)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Rows with score >= threshold are predicted positive.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    pub auc: f64,
    pub points: Vec<RocPoint>,
}

/// ROC points at every distinct score (descending) and the trapezoid AUC.
/// The area is accumulated in integer counts, so it equals the share of
/// positive-negative pairs ordered correctly, ties counting one half.
pub fn roc_auc(labels: &[u8], scores: &[f64]) -> Result<Roc> {
    if labels.len() != scores.len() {
        return Err(Error::LengthMismatch(labels.len(), scores.len()));
    }
    let p = labels.iter().filter(|&&y| y != 0).count() as u64;
    let n = labels.len() as u64 - p;
    if p == 0 || n == 0 {
        return Err(Error::OneClassOnly);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Validation("scores contain NaN".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    // Twice the area in units of one pair.
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        let (tp0, fp0) = (tp, fp);
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += (fp - fp0) as u128 * (tp + tp0) as u128;
        points.push(RocPoint {
            threshold: s,
            fpr: fp as f64 / n as f64,
            tpr: tp as f64 / p as f64,
        });
    }
    let auc = area2 as f64 / (2.0 * p as f64 * n as f64);
    Ok(Roc { auc, points })
}

/// Pair-counting AUC: P(positive score > negative score) + P(tie) / 2.
pub fn pairwise_auc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::LengthMismatch(labels.len(), scores.len()));
    }
    let pos: Vec<f64> = (0..labels.len()).filter(|&k| labels[k] != 0).map(|k| scores[k]).collect();
    let neg: Vec<f64> = (0..labels.len()).filter(|&k| labels[k] == 0).map(|k| scores[k]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::OneClassOnly);
    }
    let mut twice = 0u128;
    for &a in &pos {
        for &b in &neg {
            twice += if a > b {
                2
            } else if a == b {
                1
            } else {
                0
            };
        }
    }
    Ok(twice as f64 / (2.0 * pos.len() as f64 * neg.len() as f64))
}

/// One scored row with what is needed to price a missed selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowOutcome {
    pub label: u8,
    pub predicted: u8,
    /// Actual adjusted demand of the row's own season, in units.
    pub units: f64,
    pub grid: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Impact {
    pub false_negatives: u64,
    pub false_positives: u64,
    pub units: f64,
    pub revenue: f64,
}

/// Units and revenue of demand on false-negative rows; false positives are
/// counted only.
pub fn impact_report(rows: &[RowOutcome], prices: &BTreeMap<String, f64>) -> Result<Impact> {
    let mut out = Impact::default();
    for r in rows {
        match (r.label != 0, r.predicted != 0) {
            (true, false) => {
                let price = *prices.get(&r.grid).ok_or_else(|| Error::MissingPrice(r.grid.clone()))?;
                out.false_negatives += 1;
                out.units += r.units;
                out.revenue += r.units * price;
            }
            (false, true) => out.false_positives += 1,
            _ => {}
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: String,
    pub confusion: ConfusionMatrix,
    pub auc: f64,
    pub metrics: Metrics,
    pub impact: Option<Impact>,
}

impl EvaluationReport {
    pub fn new(model: &str, labels: &[u8], scores: &[f64], threshold: f64) -> Result<EvaluationReport> {
        let predicted: Vec<u8> = scores.iter().map(|&s| (s >= threshold) as u8).collect();
        let confusion = confusion(labels, &predicted)?;
        Ok(EvaluationReport {
            model: model.to_string(),
            confusion,
            auc: roc_auc(labels, scores)?.auc,
            metrics: metrics(&confusion),
            impact: None,
        })
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"))
}

type Row = (&'static str, fn(&EvaluationReport) -> String);

const TABLE_ROWS: [Row; 13] = [
    ("AUC", |r| format!("{:.4}", r.auc)),
    ("Accuracy", |r| fmt_opt(r.metrics.accuracy)),
    ("Precision", |r| fmt_opt(r.metrics.precision)),
    ("Recall", |r| fmt_opt(r.metrics.recall)),
    ("Specificity", |r| fmt_opt(r.metrics.specificity)),
    ("False positive rate", |r| fmt_opt(r.metrics.fpr)),
    ("Misclassification rate", |r| fmt_opt(r.metrics.misclassification)),
    ("TP", |r| r.confusion.tp.to_string()),
    ("FP", |r| r.confusion.fp.to_string()),
    ("TN", |r| r.confusion.tn.to_string()),
    ("FN", |r| r.confusion.fn_.to_string()),
    ("FN demand (units)", |r| r.impact.map_or_else(|| "-".into(), |i| format!("{:.0}", i.units))),
    ("FN revenue (EUR)", |r| r.impact.map_or_else(|| "-".into(), |i| format!("{:.2}", i.revenue))),
];

/// Metrics as rows and models as columns, as plain text.
pub fn render_comparison(title: &str, reports: &[EvaluationReport]) -> String {
    let label_w = TABLE_ROWS.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
    let cells: Vec<Vec<String>> = TABLE_ROWS
        .iter()
        .map(|(_, f)| reports.iter().map(f).collect())
        .collect();
    let col_w: Vec<usize> = (0..reports.len())
        .map(|m| {
            cells
                .iter()
                .map(|row| row[m].len())
                .chain([reports[m].model.len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let _ = write!(out, "{:<label_w$}", "Metric");
    for (r, w) in reports.iter().zip(&col_w) {
        let _ = write!(out, "  {:>w$}", r.model);
    }
    out.push('\n');
    for ((label, _), row) in TABLE_ROWS.iter().zip(&cells) {
        let _ = write!(out, "{label:<label_w$}");
        for (v, w) in row.iter().zip(&col_w) {
            let _ = write!(out, "  {v:>w$}");
        }
        out.push('\n');
    }
    out.push_str(
        "Misclassification rate = (FP + FN) / total; (FP + FN) / (TP + TN) is listed per model in the CSV.\n",
    );
    out
}

/// Same table as CSV, one line per model.
pub fn comparison_csv(stage: &str, reports: &[EvaluationReport]) -> String {
    let mut out = String::from(
        "stage,model,auc,accuracy,precision,recall,specificity,fpr,misclassification,\
         misclassification_over_correct,tp,fp,tn,fn,fn_units,fn_revenue\n",
    );
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
    for r in reports {
        let c = &r.confusion;
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{stage},{},{:.6},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.model,
            r.auc,
            opt(m.accuracy),
            opt(m.precision),
            opt(m.recall),
            opt(m.specificity),
            opt(m.fpr),
            opt(m.misclassification),
            opt(misclassification_over_correct(c)),
            c.tp,
            c.fp,
            c.tn,
            c.fn_,
            r.impact.map_or_else(String::new, |i| format!("{:.0}", i.units)),
            r.impact.map_or_else(String::new, |i| format!("{:.2}", i.revenue)),
        );
    }
    out
}

/// ROC points as CSV (`model,threshold,fpr,tpr`).
pub fn roc_csv(curves: &[(String, Roc)]) -> String {
    let mut out = String::from("model,threshold,fpr,tpr\n");
    for (model, roc) in curves {
        for p in &roc.points {
            let _ = writeln!(out, "{model},{},{:.6},{:.6}", p.threshold, p.fpr, p.tpr);
        }
    }
    out
}
