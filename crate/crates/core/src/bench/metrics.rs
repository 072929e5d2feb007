use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::contract("confusion matrix must be square"));
        }
        Ok(ConfusionMatrix { classes: c, counts: rows.concat() })
    }

    pub fn from_predictions(truth: &[usize], pred: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::contract("truth and prediction lengths differ"));
        }
        let mut cm = ConfusionMatrix::new(classes);
        for (&t, &p) in truth.iter().zip(pred) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.classes || pred >= self.classes {
            return Err(Error::contract(format!("class ({truth}, {pred}) outside 0..{}", self.classes)));
        }
        self.counts[truth * self.classes + pred] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class * self.classes..(class + 1) * self.classes].iter().sum()
    }

    /// Mean recall over the classes that have at least one true sample.
    pub fn balanced_accuracy(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for c in 0..self.classes {
            let s = self.support(c);
            if s > 0 {
                sum += self.get(c, c) as f64 / s as f64;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

pub fn balanced_accuracy(cm: &ConfusionMatrix) -> f64 {
    cm.balanced_accuracy()
}

/// Balanced accuracy straight from label vectors.
pub fn balanced_accuracy_of(truth: &[usize], pred: &[usize], classes: usize) -> Result<f64> {
    Ok(ConfusionMatrix::from_predictions(truth, pred, classes)?.balanced_accuracy())
}

/// Mean and normal-approximation 95% half-width `1.96 * sd / sqrt(n)` with the
/// sample standard deviation. A single value yields a zero half-width.
pub fn mean_ci95(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n == 0 {
        return Err(Error::data("mean_ci95 of an empty sample"));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        log::warn!("confidence interval from a single value; reporting half-width 0");
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    Ok((mean, 1.96 * var.sqrt() / (n as f64).sqrt()))
}
