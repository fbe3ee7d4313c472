//! Confusion matrix, per-class IoU, overall accuracy and mean IoU.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::pccore::{ClassId, IGNORE_LABEL, NUM_CLASSES};
use crate::{Error, Result};

/// `C × C` counts, rows are ground truth and columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl Default for ConfusionMatrix {
    fn default() -> Self {
        Self::new(NUM_CLASSES)
    }
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = counts.len();
        if counts.iter().any(|r| r.len() != c) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Adds one count per point; points whose truth is the ignore label are skipped.
    pub fn accumulate(&mut self, predicted: &[u8], truth: &[u8]) -> Result<()> {
        if predicted.len() != truth.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} ground-truth labels",
                predicted.len(),
                truth.len()
            )));
        }
        let c = self.num_classes();
        // Validate first so a bad label leaves the matrix untouched.
        for (i, (&p, &t)) in predicted.iter().zip(truth).enumerate() {
            if t == IGNORE_LABEL {
                continue;
            }
            if t as usize >= c || p as usize >= c {
                return Err(Error::Data(format!(
                    "label out of range at point {i}: truth {t}, prediction {p} ({c} classes)"
                )));
            }
        }
        for (&p, &t) in predicted.iter().zip(truth) {
            if t != IGNORE_LABEL {
                self.counts[t as usize][p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes() != self.num_classes() {
            return Err(Error::Shape(format!(
                "cannot merge {}-class and {}-class matrices",
                self.num_classes(),
                other.num_classes()
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Per-class IoU; `None` when the class is absent from both truth and prediction.
    pub iou: Vec<Option<f64>>,
    pub oa: f64,
    pub miou: f64,
    pub confusion: ConfusionMatrix,
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Data("metrics of an empty confusion matrix".into()));
    }
    let c = cm.num_classes();
    let mut iou = Vec::with_capacity(c);
    let mut diag = 0u64;
    for k in 0..c {
        let tp = cm.get(k, k);
        let fp: u64 = (0..c).filter(|&t| t != k).map(|t| cm.get(t, k)).sum();
        let fn_: u64 = (0..c).filter(|&p| p != k).map(|p| cm.get(k, p)).sum();
        let denom = tp + fp + fn_;
        iou.push((denom > 0).then(|| tp as f64 / denom as f64));
        diag += tp;
    }
    let defined: Vec<f64> = iou.iter().flatten().copied().collect();
    let miou = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(MetricsReport {
        iou,
        oa: diag as f64 / total as f64,
        miou,
        confusion: cm.clone(),
    })
}

fn class_name(k: usize) -> String {
    if k < NUM_CLASSES {
        ClassId(k as u8).name().to_string()
    } else {
        format!("class{k}")
    }
}

impl MetricsReport {
    /// `{"oa":…, "miou":…, "iou":{"natural":…,…}, "confusion":[[…]]}`; absent classes map to null.
    pub fn to_json(&self) -> serde_json::Value {
        let iou: serde_json::Map<String, serde_json::Value> = self
            .iou
            .iter()
            .enumerate()
            .map(|(k, v)| (class_name(k), serde_json::json!(v)))
            .collect();
        serde_json::json!({
            "oa": self.oa,
            "miou": self.miou,
            "iou": iou,
            "confusion": self.confusion.counts(),
        })
    }

    /// One header line and one row in percent: method, OA, mIoU, then per-class IoU.
    pub fn table(&self, method: &str) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<20} {:>7} {:>7}", "Method", "OA", "mIoU");
        for k in 0..self.iou.len() {
            let _ = write!(out, " {:>9}", class_name(k));
        }
        out.push('\n');
        let _ = write!(
            out,
            "{:<20} {:>7.2} {:>7.2}",
            method,
            100.0 * self.oa,
            100.0 * self.miou
        );
        for v in &self.iou {
            match v {
                Some(x) => {
                    let _ = write!(out, " {:>9.2}", 100.0 * x);
                }
                None => {
                    let _ = write!(out, " {:>9}", "-");
                }
            }
        }
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn diagonal_and_ignore() {
        let mut cm = ConfusionMatrix::default();
        cm.accumulate(&[2; 10], &[2; 10]).unwrap();
        assert_eq!(cm.get(2, 2), 10);
        assert_eq!(cm.total(), 10);
        let before = cm.clone();
        cm.accumulate(&[1, 2, 3], &[255; 3]).unwrap();
        assert_eq!(cm, before);
    }

    #[test]
    fn bad_label_leaves_matrix_unchanged() {
        let mut cm = ConfusionMatrix::default();
        assert!(cm.accumulate(&[0, 7], &[0, 1]).is_err());
        assert!(cm.accumulate(&[0, 1], &[0, 6]).is_err());
        assert_eq!(cm.total(), 0);
        assert!(cm.accumulate(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn iou_arithmetic() {
        let mut counts = vec![vec![0u64; 2]; 2];
        counts[0][0] = 50;
        counts[1][0] = 10;
        counts[0][1] = 5;
        let r = compute_metrics(&ConfusionMatrix::from_counts(counts).unwrap()).unwrap();
        assert!((r.iou[0].unwrap() - 50.0 / 65.0).abs() < 1e-15);
    }

    #[test]
    fn four_point_toy() {
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&[0, 1, 1, 1], &[0, 0, 1, 1]).unwrap();
        let r = compute_metrics(&cm).unwrap();
        assert_eq!(r.oa, 0.75);
        assert_eq!(r.iou, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert!((r.miou - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_absent_classes() {
        let mut cm = ConfusionMatrix::default();
        cm.accumulate(&[0, 1, 1, 4], &[0, 1, 1, 4]).unwrap();
        let r = compute_metrics(&cm).unwrap();
        assert_eq!(r.oa, 1.0);
        assert_eq!(r.miou, 1.0);
        assert_eq!(r.iou.iter().filter(|v| v.is_none()).count(), 3);
        assert!(compute_metrics(&ConfusionMatrix::default()).is_err());
    }

    #[test]
    fn json_and_table_shape() {
        let mut cm = ConfusionMatrix::default();
        cm.accumulate(&[0, 1, 2], &[0, 1, 1]).unwrap();
        let r = compute_metrics(&cm).unwrap();
        let j = r.to_json();
        assert_eq!(j["oa"], serde_json::json!(2.0 / 3.0));
        assert_eq!(j["iou"]["bridge"], serde_json::json!(0.5));
        assert!(j["iou"]["car"].is_null());
        assert_eq!(j["confusion"][1][2], 1);
        let t = r.table("ours");
        assert_eq!(t.lines().count(), 2);
        assert!(t.lines().next().unwrap().contains("guardrail"));
    }

    proptest! {
        #[test]
        fn chunked_equals_whole(labels in prop::collection::vec((0u8..6, prop_oneof![0u8..6, Just(255u8)]), 0..200), cut in 0usize..200) {
            let (pred, truth): (Vec<u8>, Vec<u8>) = labels.iter().copied().unzip();
            let cut = cut.min(pred.len());
            let mut whole = ConfusionMatrix::default();
            whole.accumulate(&pred, &truth).unwrap();
            let mut a = ConfusionMatrix::default();
            a.accumulate(&pred[..cut], &truth[..cut]).unwrap();
            let mut b = ConfusionMatrix::default();
            b.accumulate(&pred[cut..], &truth[cut..]).unwrap();
            a.merge(&b).unwrap();
            prop_assert_eq!(a, whole);
        }

        #[test]
        fn order_does_not_matter(labels in prop::collection::vec((0u8..6, 0u8..6), 1..100)) {
            let (pred, truth): (Vec<u8>, Vec<u8>) = labels.iter().copied().unzip();
            let mut cm = ConfusionMatrix::default();
            cm.accumulate(&pred, &truth).unwrap();
            let mut rev = ConfusionMatrix::default();
            let (rp, rt): (Vec<u8>, Vec<u8>) = labels.iter().rev().copied().unzip();
            rev.accumulate(&rp, &rt).unwrap();
            let (x, y) = (compute_metrics(&cm).unwrap(), compute_metrics(&rev).unwrap());
            prop_assert_eq!(x, y.clone());
            prop_assert!((0.0..=1.0).contains(&y.oa) && (0.0..=1.0).contains(&y.miou));
        }
    }
}
