//! Per-descriptor ranking and confusion metrics, and the evaluation report.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    order
}

/// Area under the ROC curve via midranks (Mann–Whitney).
///
/// `None` when either class is absent.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order = descending(scores);
    order.reverse();
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: precision summed over recall increments at each
/// distinct score threshold, highest first.
///
/// `None` when there are no positives.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return None;
    }
    let order = descending(scores);
    let (mut tp, mut seen, mut area) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let new_tp = order[i..=j].iter().filter(|&&k| labels[k]).count();
        tp += new_tp;
        seen += j - i + 1;
        area += (new_tp as f64 / pos as f64) * (tp as f64 / seen as f64);
        i = j + 1;
    }
    Some(area)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    /// Balanced accuracy, `(recall + specificity) / 2`.
    pub accuracy: f64,
}

/// Counts at `score >= threshold`. Ratios with an empty denominator are 0.
pub fn confusion_counts(scores: &[f64], labels: &[bool], threshold: f64) -> [usize; 4] {
    let mut c = [0usize; 4];
    for (&s, &l) in scores.iter().zip(labels) {
        let idx = match (s >= threshold, l) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        c[idx] += 1;
    }
    c
}

pub fn confusion_from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Confusion {
    let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
    let recall = ratio(tp, fn_);
    let specificity = ratio(tn, fp);
    Confusion { precision: ratio(tp, fp), recall, specificity, accuracy: (recall + specificity) / 2.0 }
}

pub fn confusion_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> Confusion {
    let [tp, fp, fn_, tn] = confusion_counts(scores, labels, threshold);
    confusion_from_counts(tp, fp, fn_, tn)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auroc: f64,
    pub auprc: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub accuracy: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 6] = ["auroc", "auprc", "precision", "recall", "specificity", "accuracy"];

    pub fn values(&self) -> [f64; 6] {
        [self.auroc, self.auprc, self.precision, self.recall, self.specificity, self.accuracy]
    }

    fn from_values(v: [f64; 6]) -> Self {
        Metrics { auroc: v[0], auprc: v[1], precision: v[2], recall: v[3], specificity: v[4], accuracy: v[5] }
    }

    /// All six metrics, or `None` when the labels hold a single class.
    pub fn compute(scores: &[f64], labels: &[bool], threshold: f64) -> Option<Metrics> {
        let auroc = roc_auc(scores, labels)?;
        let auprc = pr_auc(scores, labels)?;
        let c = confusion_metrics(scores, labels, threshold);
        Some(Metrics {
            auroc,
            auprc,
            precision: c.precision,
            recall: c.recall,
            specificity: c.specificity,
            accuracy: c.accuracy,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorReport {
    pub descriptor: String,
    pub positives: usize,
    pub negatives: usize,
    /// `None` when the evaluated molecules hold only one class.
    pub metrics: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub descriptors: Vec<DescriptorReport>,
    /// Unweighted mean over descriptors with defined metrics.
    pub macro_avg: Option<Metrics>,
    pub threshold: f64,
    pub molecules: usize,
}

impl EvalReport {
    /// `scores[i][k]` and `labels[i][k]` for molecule `i`, descriptor `k`.
    pub fn from_scores(
        descriptors: &[String],
        scores: &[Vec<f64>],
        labels: &[Vec<bool>],
        threshold: f64,
    ) -> Result<EvalReport> {
        if scores.is_empty() {
            return Err(Error::Data("cannot evaluate an empty split".into()));
        }
        if scores.len() != labels.len() {
            return Err(Error::Shape(format!("{} score rows for {} label rows", scores.len(), labels.len())));
        }
        let o = descriptors.len();
        if scores.iter().any(|r| r.len() != o) || labels.iter().any(|r| r.len() != o) {
            return Err(Error::Shape(format!("every row must hold {o} descriptors")));
        }
        let mut rows = Vec::with_capacity(o);
        for (k, name) in descriptors.iter().enumerate() {
            let s: Vec<f64> = scores.iter().map(|r| r[k]).collect();
            let l: Vec<bool> = labels.iter().map(|r| r[k]).collect();
            let positives = l.iter().filter(|&&x| x).count();
            rows.push(DescriptorReport {
                descriptor: name.clone(),
                positives,
                negatives: l.len() - positives,
                metrics: Metrics::compute(&s, &l, threshold),
            });
        }
        let defined: Vec<Metrics> = rows.iter().filter_map(|r| r.metrics).collect();
        let macro_avg = (!defined.is_empty()).then(|| {
            let mut acc = [0.0; 6];
            for m in &defined {
                for (a, v) in acc.iter_mut().zip(m.values()) {
                    *a += v;
                }
            }
            Metrics::from_values(acc.map(|a| a / defined.len() as f64))
        });
        Ok(EvalReport { descriptors: rows, macro_avg, threshold, molecules: scores.len() })
    }

    pub fn macro_auroc(&self) -> Option<f64> {
        self.macro_avg.map(|m| m.auroc)
    }

    /// JSON object keyed by descriptor, plus `macro`, `threshold` and `config_hash`.
    pub fn to_json(&self, config_hash: &str) -> Result<Value> {
        let mut obj = Map::new();
        for r in &self.descriptors {
            if matches!(r.descriptor.as_str(), "macro" | "threshold" | "config_hash" | "molecules") {
                return Err(Error::Format(format!("descriptor name {:?} collides with a report field", r.descriptor)));
            }
            obj.insert(r.descriptor.clone(), serde_json::to_value(r.metrics)?);
        }
        obj.insert("macro".into(), serde_json::to_value(self.macro_avg)?);
        obj.insert("threshold".into(), json!(self.threshold));
        obj.insert("molecules".into(), json!(self.molecules));
        obj.insert("config_hash".into(), json!(config_hash));
        Ok(Value::Object(obj))
    }

    /// One row per descriptor followed by a `macro` row; undefined cells are empty.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["descriptor", "positives", "negatives"].into_iter().chain(Metrics::NAMES))?;
        let cells = |m: Option<Metrics>| match m {
            Some(m) => m.values().map(|v| v.to_string()),
            None => Default::default(),
        };
        for r in &self.descriptors {
            let head = [r.descriptor.clone(), r.positives.to_string(), r.negatives.to_string()];
            w.write_record(head.into_iter().chain(cells(r.metrics)))?;
        }
        let (p, n) = self.descriptors.iter().fold((0, 0), |(p, n), r| (p + r.positives, n + r.negatives));
        w.write_record(["macro".to_string(), p.to_string(), n.to_string()].into_iter().chain(cells(self.macro_avg)))?;
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn by_descriptor(&self) -> BTreeMap<&str, &DescriptorReport> {
        self.descriptors.iter().map(|r| (r.descriptor.as_str(), r)).collect()
    }
}
