//! Per-class precision, recall and F1 with macro, weighted and micro
//! aggregates.
//!
//! Zero denominators yield 0: precision is 0 when nothing was predicted for
//! a class, recall is 0 when the class never occurs, and F1 is 0 when
//! `P + R = 0`. Each such fallback is recorded in [`EvalReport::warnings`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{contract_err, Result};
use crate::label::{Sentiment, NUM_CLASSES};

/// Rows are true labels, columns predicted labels, both in [`Sentiment::ALL`]
/// order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, truth: Sentiment, predicted: Sentiment) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    /// Builds a matrix from raw class indices, rejecting anything outside the
    /// three-class set.
    pub fn from_indices(truth: &[usize], predicted: &[usize]) -> Result<Self> {
        check_lengths(truth.len(), predicted.len())?;
        let mut m = Self::new();
        for (i, (&t, &p)) in truth.iter().zip(predicted).enumerate() {
            let (Some(t), Some(p)) = (Sentiment::from_index(t), Sentiment::from_index(p)) else {
                return Err(contract_err(format!("record {i}: label index outside the class set")));
            };
            m.record(t, p);
        }
        Ok(m)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, c: Sentiment) -> u64 {
        self.counts[c.index()][c.index()]
    }

    pub fn false_positives(&self, c: Sentiment) -> u64 {
        let k = c.index();
        (0..NUM_CLASSES).filter(|&r| r != k).map(|r| self.counts[r][k]).sum()
    }

    pub fn false_negatives(&self, c: Sentiment) -> u64 {
        let k = c.index();
        (0..NUM_CLASSES).filter(|&j| j != k).map(|j| self.counts[k][j]).sum()
    }

    pub fn support(&self, c: Sentiment) -> u64 {
        self.counts[c.index()].iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..NUM_CLASSES).map(|k| self.counts[k][k]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Aggregate {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Model or ensemble identifier.
    pub name: String,
    pub per_class: [ClassMetrics; NUM_CLASSES],
    pub macro_avg: Aggregate,
    pub weighted_avg: Aggregate,
    pub micro_avg: Aggregate,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn class(&self, c: Sentiment) -> &ClassMetrics {
        &self.per_class[c.index()]
    }

    pub fn macro_f1(&self) -> f64 {
        self.macro_avg.f1
    }
}

/// `num / den`, or 0 when `den` is 0.
fn ratio(num: u64, den: u64) -> Option<f64> {
    (den != 0).then(|| num as f64 / den as f64)
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * recall * precision / (recall + precision)
    }
}

fn check_lengths(truth: usize, predicted: usize) -> Result<()> {
    if truth != predicted {
        return Err(contract_err(format!(
            "{truth} true labels but {predicted} predictions"
        )));
    }
    if truth == 0 {
        return Err(contract_err("no examples to evaluate"));
    }
    Ok(())
}

pub fn compute_metrics(name: &str, truth: &[Sentiment], predicted: &[Sentiment]) -> Result<EvalReport> {
    check_lengths(truth.len(), predicted.len())?;
    let mut m = ConfusionMatrix::new();
    for (&t, &p) in truth.iter().zip(predicted) {
        m.record(t, p);
    }
    Ok(report_from_confusion(name, m))
}

pub fn report_from_confusion(name: &str, confusion: ConfusionMatrix) -> EvalReport {
    let mut warnings = Vec::new();
    let mut per_class = [ClassMetrics::default(); NUM_CLASSES];
    for c in Sentiment::ALL {
        let tp = confusion.true_positives(c);
        let precision = ratio(tp, tp + confusion.false_positives(c)).unwrap_or_else(|| {
            warnings.push(format!("precision for {c} is undefined (no predictions); reported as 0"));
            0.0
        });
        let recall = ratio(tp, tp + confusion.false_negatives(c)).unwrap_or_else(|| {
            warnings.push(format!("recall for {c} is undefined (no true examples); reported as 0"));
            0.0
        });
        per_class[c.index()] = ClassMetrics {
            precision,
            recall,
            f1: f1_score(precision, recall),
            support: confusion.support(c),
        };
    }
    let n = NUM_CLASSES as f64;
    let macro_avg = Aggregate {
        precision: per_class.iter().map(|m| m.precision).sum::<f64>() / n,
        recall: per_class.iter().map(|m| m.recall).sum::<f64>() / n,
        f1: per_class.iter().map(|m| m.f1).sum::<f64>() / n,
    };
    let total = confusion.total() as f64;
    let weighted = |f: fn(&ClassMetrics) -> f64| -> f64 {
        if total == 0.0 {
            0.0
        } else {
            per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total
        }
    };
    let weighted_avg = Aggregate {
        precision: weighted(|m| m.precision),
        recall: weighted(|m| m.recall),
        f1: weighted(|m| m.f1),
    };
    // Pooled over classes: every error is one FP and one FN, so micro P = R.
    let tp: u64 = Sentiment::ALL.iter().map(|&c| confusion.true_positives(c)).sum();
    let fp: u64 = Sentiment::ALL.iter().map(|&c| confusion.false_positives(c)).sum();
    let fnn: u64 = Sentiment::ALL.iter().map(|&c| confusion.false_negatives(c)).sum();
    let micro_p = ratio(tp, tp + fp).unwrap_or(0.0);
    let micro_r = ratio(tp, tp + fnn).unwrap_or(0.0);
    let micro_avg = Aggregate {
        precision: micro_p,
        recall: micro_r,
        f1: f1_score(micro_p, micro_r),
    };
    let accuracy = ratio(confusion.correct(), confusion.total()).unwrap_or(0.0);
    EvalReport {
        name: name.into(),
        per_class,
        macro_avg,
        weighted_avg,
        micro_avg,
        accuracy,
        confusion,
        warnings,
    }
}

/// Rounds to two decimals, the precision used in rendered tables.
pub fn round2(x: f64) -> f64 {
    libm::round(x * 100.0) / 100.0
}
