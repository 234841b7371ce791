//! Evaluation metrics.
//!
//! Binary counts follow the convention that **normal is the positive
//! class**: a true positive is a normal window flagged normal, and recall is
//! the fraction of normal windows that were not flagged.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

/// A ratio whose denominator may be zero. `None` marks an undefined value.
pub type Ratio = Option<f64>;

fn ratio(num: u64, den: u64) -> Ratio {
    (den > 0).then(|| num as f64 / den as f64)
}

impl BinaryCounts {
    /// Tallies `(actual_normal, predicted_normal)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = BinaryCounts::default();
        for pair in pairs {
            c.add(pair.0, pair.1);
        }
        c
    }

    pub fn add(&mut self, actual_normal: bool, predicted_normal: bool) {
        match (actual_normal, predicted_normal) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn merge(&mut self, other: &BinaryCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> Ratio {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> Ratio {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Ratio {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall; undefined if either is, or if
    /// both are zero.
    pub fn f1(&self) -> Ratio {
        let (p, r) = (self.precision()?, self.recall()?);
        (p + r > 0.0).then(|| 2.0 * p * r / (p + r))
    }

    pub fn summary(&self) -> ClassificationMetrics {
        ClassificationMetrics {
            accuracy: self.accuracy(),
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: Ratio,
    pub precision: Ratio,
    pub recall: Ratio,
    pub f1: Ratio,
}

fn check_pair(actual: &[f64], predicted: &[f64]) -> Result<()> {
    if actual.len() != predicted.len() {
        return Err(Error::shape(actual.len(), predicted.len()));
    }
    if actual.is_empty() {
        return Err(Error::Data("empty vectors".into()));
    }
    Ok(())
}

pub fn mae(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(actual, predicted)?;
    Ok(actual.iter().zip(predicted).map(|(a, p)| (a - p).abs()).sum::<f64>() / actual.len() as f64)
}

pub fn mse(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(actual, predicted)?;
    Ok(actual.iter().zip(predicted).map(|(a, p)| (a - p).powi(2)).sum::<f64>() / actual.len() as f64)
}

pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    Ok(mse(actual, predicted)?.sqrt())
}

/// Mean absolute percentage error as a fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    /// `None` when every actual value was zero.
    pub value: Option<f64>,
    pub used: usize,
    pub skipped_zero: usize,
}

pub fn mape(actual: &[f64], predicted: &[f64]) -> Result<Mape> {
    check_pair(actual, predicted)?;
    let mut sum = 0.0;
    let mut used = 0;
    for (a, p) in actual.iter().zip(predicted) {
        if *a != 0.0 {
            sum += ((a - p) / a).abs();
            used += 1;
        }
    }
    Ok(Mape {
        value: (used > 0).then(|| sum / used as f64),
        used,
        skipped_zero: actual.len() - used,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub n: usize,
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    pub mape: Mape,
}

pub fn regression_metrics(actual: &[f64], predicted: &[f64]) -> Result<RegressionMetrics> {
    let mse = mse(actual, predicted)?;
    Ok(RegressionMetrics {
        n: actual.len(),
        mae: mae(actual, predicted)?,
        mse,
        rmse: mse.sqrt(),
        mape: mape(actual, predicted)?,
    })
}

/// Summary of detection lags in days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagStats {
    pub detected: usize,
    pub undetected: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub max: Option<u32>,
    /// `(lag, count)` pairs in increasing lag order.
    pub histogram: Vec<(u32, usize)>,
}

/// `None` entries are replications where the disruption was never flagged.
pub fn lag_stats(lags: &[Option<u32>]) -> LagStats {
    let mut detected: Vec<u32> = lags.iter().flatten().copied().collect();
    detected.sort_unstable();
    let n = detected.len();
    let mut histogram: Vec<(u32, usize)> = Vec::new();
    for &l in &detected {
        match histogram.last_mut() {
            Some((v, c)) if *v == l => *c += 1,
            _ => histogram.push((l, 1)),
        }
    }
    let median = match n {
        0 => None,
        _ if n % 2 == 1 => Some(f64::from(detected[n / 2])),
        _ => Some((f64::from(detected[n / 2 - 1]) + f64::from(detected[n / 2])) / 2.0),
    };
    LagStats {
        detected: n,
        undetected: lags.len() - n,
        mean: (n > 0).then(|| detected.iter().map(|&l| f64::from(l)).sum::<f64>() / n as f64),
        median,
        max: detected.last().copied(),
        histogram,
    }
}

/// Square confusion matrix; rows are actual classes, columns predicted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_labels(classes: usize, actual: &[usize], predicted: &[usize]) -> Result<Self> {
        if actual.len() != predicted.len() {
            return Err(Error::shape(actual.len(), predicted.len()));
        }
        let mut m = Self::new(classes);
        for (&a, &p) in actual.iter().zip(predicted) {
            if a >= classes || p >= classes {
                return Err(Error::Data(format!("class id out of range: {a} or {p}")));
            }
            m.counts[a][p] += 1;
        }
        Ok(m)
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    /// One-vs-rest counts with class `c` as the positive class.
    pub fn one_vs_rest(&self, c: usize) -> BinaryCounts {
        let total: u64 = (0..self.classes()).map(|k| self.row_sum(k)).sum();
        let tp = self.counts[c][c];
        let fp = self.col_sum(c) - tp;
        let fn_ = self.row_sum(c) - tp;
        BinaryCounts {
            tp,
            fp,
            fn_,
            tn: total - tp - fp - fn_,
        }
    }

    pub fn per_class(&self) -> Vec<ClassificationMetrics> {
        (0..self.classes()).map(|c| self.one_vs_rest(c).summary()).collect()
    }

    pub fn accuracy(&self) -> Ratio {
        let total: u64 = (0..self.classes()).map(|k| self.row_sum(k)).sum();
        ratio((0..self.classes()).map(|k| self.counts[k][k]).sum(), total)
    }

    /// Largest off-diagonal cell as `(actual, predicted, count)`.
    pub fn largest_confusion(&self) -> Option<(usize, usize, u64)> {
        let mut best: Option<(usize, usize, u64)> = None;
        for (a, row) in self.counts.iter().enumerate() {
            for (p, &v) in row.iter().enumerate() {
                if a != p && v > 0 && best.map_or(true, |b| v > b.2) {
                    best = Some((a, p, v));
                }
            }
        }
        best
    }
}

/// Evaluation report written as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub dataset: String,
    pub model: String,
    pub counts: Option<BinaryCounts>,
    pub metrics: Option<ClassificationMetrics>,
    pub lag_stats: Option<LagStats>,
}
