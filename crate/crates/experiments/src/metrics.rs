//! Accuracy and confusion counts over class indices.

use bdlm_core::FaultLabel;
use serde::{Deserialize, Serialize};

use crate::error::{ExperimentError, Result};

/// Rows are true classes and columns predictions, both in
/// [`FaultLabel::CLASS_ORDER`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<FaultLabel>,
    pub counts: Vec<Vec<u64>>,
}

impl Default for ConfusionMatrix {
    fn default() -> Self {
        let n = FaultLabel::CLASS_ORDER.len();
        ConfusionMatrix { labels: FaultLabel::CLASS_ORDER.to_vec(), counts: vec![vec![0; n]; n] }
    }
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Per-class test counts.
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// `trace / total`, or 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

pub fn compute_metrics(predictions: &[usize], labels: &[usize]) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(ExperimentError::LengthMismatch { predictions: predictions.len(), labels: labels.len() });
    }
    let mut cm = ConfusionMatrix::default();
    let n = cm.labels.len();
    for (&p, &t) in predictions.iter().zip(labels) {
        if p >= n || t >= n {
            return Err(ExperimentError::LabelSpaceMismatch(format!("class index {} outside 0..{n}", p.max(t))));
        }
        cm.counts[t][p] += 1;
    }
    let hits = predictions.iter().zip(labels).filter(|(p, t)| p == t).count();
    let accuracy = if labels.is_empty() { 0.0 } else { hits as f64 / labels.len() as f64 };
    Ok(Metrics { accuracy, confusion: cm })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_right_and_all_wrong() {
        let t = [0, 1, 2, 3, 3, 2];
        let m = compute_metrics(&t, &t).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.confusion.trace(), 6);
        assert_eq!(m.confusion.row_sums(), vec![1, 1, 2, 2]);
        let wrong: Vec<usize> = t.iter().map(|c| (c + 1) % 4).collect();
        let m = compute_metrics(&wrong, &t).unwrap();
        assert_eq!(m.accuracy, 0.0);
        assert_eq!(m.confusion.trace(), 0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            compute_metrics(&[0, 1], &[0]),
            Err(ExperimentError::LengthMismatch { predictions: 2, labels: 1 })
        ));
        assert!(compute_metrics(&[4], &[0]).is_err());
        assert_eq!(compute_metrics(&[], &[]).unwrap().accuracy, 0.0);
    }
}
