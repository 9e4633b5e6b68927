//! Confusion-matrix accumulation and the accuracy / precision / recall / F1
//! figures derived from it.

use serde::Serialize;

use crate::error::{Error, Result};

/// `K x K` counts; rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// `num / den`, with `0 / 0` taken as 0.
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_pairs(k: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut cm = Self::new(k);
        for (t, p) in pairs {
            cm.update(t, p)?;
        }
        Ok(cm)
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn update(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.k || predicted >= self.k {
            return Err(Error::Contract(format!(
                "label pair ({truth}, {predicted}) out of range for {} classes",
                self.k
            )));
        }
        self.counts[truth * self.k + predicted] += 1;
        Ok(())
    }

    /// Cellwise addition.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Contract(format!(
                "cannot merge {}-class and {}-class matrices",
                self.k, other.k
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.k..(truth + 1) * self.k].iter().sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, predicted)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    /// Per-class and macro metrics. Macro F1 is the unweighted mean of the
    /// per-class F1 scores.
    pub fn summarize(&self) -> Summary {
        let mut precision = Vec::with_capacity(self.k);
        let mut recall = Vec::with_capacity(self.k);
        let mut f1 = Vec::with_capacity(self.k);
        for c in 0..self.k {
            let tp = self.get(c, c) as f64;
            let p = ratio(tp, self.col_sum(c) as f64);
            let r = ratio(tp, self.row_sum(c) as f64);
            precision.push(p);
            recall.push(r);
            f1.push(ratio(2.0 * p * r, p + r));
        }
        let mean = |xs: &[f64]| ratio(xs.iter().sum(), xs.len() as f64);
        Summary {
            accuracy: ratio(self.trace() as f64, self.total() as f64),
            macro_precision: mean(&precision),
            macro_recall: mean(&recall),
            macro_f1: mean(&f1),
            precision,
            recall,
            f1,
        }
    }

    /// CSV with a header row and a leading column of class labels.
    pub fn to_csv(&self, labels: &[String]) -> Result<String> {
        if labels.len() != self.k {
            return Err(Error::Contract(format!(
                "{} labels for a {}-class matrix",
                labels.len(),
                self.k
            )));
        }
        let mut out = String::from("true\\predicted");
        for l in labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (t, l) in labels.iter().enumerate() {
            out.push_str(l);
            for p in 0..self.k {
                out.push_str(&format!(",{}", self.get(t, p)));
            }
            out.push('\n');
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn update_touches_one_cell() {
        let mut cm = ConfusionMatrix::new(3);
        cm.update(2, 2).unwrap();
        assert_eq!(cm.get(2, 2), 1);
        assert_eq!(cm.total(), 1);
        cm.update(0, 1).unwrap();
        assert_eq!(cm.total(), 2);
        assert!(matches!(cm.update(3, 0), Err(Error::Contract(_))));
        assert_eq!(cm.total(), 2);
    }

    #[test]
    fn perfect_classifier() {
        let cm = ConfusionMatrix::from_pairs(4, (0..4).flat_map(|c| [(c, c), (c, c)])).unwrap();
        let s = cm.summarize();
        assert_eq!(s.accuracy, 1.0);
        assert_eq!(s.macro_f1, 1.0);
    }

    #[test]
    fn always_predicting_class_zero_on_balanced_pair() {
        let cm = ConfusionMatrix::from_pairs(2, [(0, 0), (0, 0), (1, 0), (1, 0)]).unwrap();
        let s = cm.summarize();
        assert_eq!(s.accuracy, 0.5);
        // precision 0.5, recall 1: F1 = 2 * 0.5 / 1.5.
        assert!((s.f1[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.f1[1], 0.0);
        assert!((s.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_scores_zero() {
        let cm = ConfusionMatrix::from_pairs(3, [(0, 0), (1, 1)]).unwrap();
        let s = cm.summarize();
        assert_eq!(s.precision[2], 0.0);
        assert_eq!(s.recall[2], 0.0);
        assert_eq!(s.f1[2], 0.0);
        assert!((s.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn csv_layout() {
        let cm = ConfusionMatrix::from_pairs(2, [(0, 0), (1, 0), (1, 1)]).unwrap();
        let labels = vec!["Jogging".to_string(), "Walking".to_string()];
        assert_eq!(
            cm.to_csv(&labels).unwrap(),
            "true\\predicted,Jogging,Walking\nJogging,1,0\nWalking,1,1\n"
        );
        assert!(cm.to_csv(&labels[..1]).is_err());
    }

    proptest! {
        #[test]
        fn updates_commute(pairs in proptest::collection::vec((0usize..4, 0usize..4), 0..60)) {
            let a = ConfusionMatrix::from_pairs(4, pairs.iter().copied()).unwrap();
            let b = ConfusionMatrix::from_pairs(4, pairs.iter().rev().copied()).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn merge_equals_concatenation(
            xs in proptest::collection::vec((0usize..3, 0usize..3), 0..40),
            ys in proptest::collection::vec((0usize..3, 0usize..3), 0..40),
        ) {
            let mut a = ConfusionMatrix::from_pairs(3, xs.iter().copied()).unwrap();
            a.merge(&ConfusionMatrix::from_pairs(3, ys.iter().copied()).unwrap()).unwrap();
            let b = ConfusionMatrix::from_pairs(3, xs.iter().chain(&ys).copied()).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn metrics_in_unit_interval_and_relabel_invariant(
            pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..200),
            shift in 0usize..5,
        ) {
            let cm = ConfusionMatrix::from_pairs(5, pairs.iter().copied()).unwrap();
            let s = cm.summarize();
            for v in [s.accuracy, s.macro_precision, s.macro_recall, s.macro_f1]
                .into_iter()
                .chain(s.f1.iter().copied())
            {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let relabeled = ConfusionMatrix::from_pairs(
                5,
                pairs.iter().map(|&(t, p)| ((t + shift) % 5, (p + shift) % 5)),
            )
            .unwrap();
            prop_assert!((relabeled.summarize().macro_f1 - s.macro_f1).abs() < 1e-12);
        }
    }
}
