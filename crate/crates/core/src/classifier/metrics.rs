//! Confusion counts and the five binary evaluation metrics.

use std::fmt;

use serde::Serialize;

use super::image::ImageTensor;
use super::{ClassifierError, Predictor};

/// Index of the positive (PVP) class in binary models.
pub const POSITIVE_CLASS: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Adds one observation.
    pub fn record(&mut self, actual_positive: bool, predicted_positive: bool) {
        match (actual_positive, predicted_positive) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
        }
    }
}

/// Predicted positive iff the positive-class probability exceeds `threshold`.
pub fn confusion<P: Predictor + ?Sized>(
    model: &P,
    test_set: &[(ImageTensor, usize)],
    threshold: f64,
) -> Result<ConfusionCounts, ClassifierError> {
    if model.classes() != 2 {
        return Err(ClassifierError::NotBinary(model.classes()));
    }
    let mut counts = ConfusionCounts::default();
    for (input, label) in test_set {
        if *label > 1 {
            return Err(ClassifierError::LabelOutOfRange {
                label: *label,
                classes: 2,
            });
        }
        let probs = model.predict_probs(input)?;
        counts.record(*label == POSITIVE_CLASS, probs[POSITIVE_CLASS] > threshold);
    }
    Ok(counts)
}

/// A ratio that is `None` when its denominator is zero.
pub type Ratio = Option<f64>;

fn ratio(num: u64, den: u64) -> Ratio {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn f1_score(precision: Ratio, recall: Ratio) -> Ratio {
    match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: Ratio,
    pub precision: Ratio,
    pub recall: Ratio,
    pub specificity: Ratio,
    pub f1: Ratio,
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    Metrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision,
        recall,
        specificity: ratio(c.tn, c.tn + c.fp),
        f1: f1_score(precision, recall),
    }
}

impl Metrics {
    pub fn named(&self) -> [(&'static str, Ratio); 5] {
        [
            ("accuracy", self.accuracy),
            ("precision", self.precision),
            ("recall", self.recall),
            ("specificity", self.specificity),
            ("f1", self.f1),
        ]
    }
}

pub fn format_ratio(r: Ratio) -> String {
    r.map_or_else(|| "undefined".to_owned(), |v| format!("{v:.6}"))
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, value) in self.named() {
            writeln!(f, "{name}\t{}", format_ratio(value))?;
        }
        Ok(())
    }
}
