use super::tensor::Tensor;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Floor applied to probabilities before taking logs.
pub const PROB_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mae,
    CategoricalCrossEntropy,
}

fn check_same(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape(target.len(), pred.len()));
    }
    Ok(())
}

/// Mean absolute error over all elements.
pub fn mae_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_same(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Categorical cross-entropy summed over classes and averaged over rows.
pub fn cce_loss(prob: &[f64], one_hot: &[f64], classes: usize) -> Result<f64> {
    check_same(prob, one_hot)?;
    if classes == 0 || prob.len() % classes != 0 {
        return Err(Error::shape(format!("multiple of {classes}"), prob.len()));
    }
    let rows = prob.len() / classes;
    let total: f64 = prob
        .iter()
        .zip(one_hot)
        .filter(|(_, &y)| y != 0.0)
        .map(|(&p, &y)| -y * p.max(PROB_EPSILON).ln())
        .sum();
    Ok(total / rows as f64)
}

impl Loss {
    /// Loss value and its gradient with respect to `pred`.
    pub fn value_and_grad(&self, pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
        let (p, t) = (pred.data(), target.data());
        check_same(p, t)?;
        let grad = match self {
            Loss::Mae => {
                let n = p.len() as f64;
                p.iter()
                    .zip(t)
                    .map(|(a, b)| {
                        let d = a - b;
                        if d > 0.0 {
                            1.0 / n
                        } else if d < 0.0 {
                            -1.0 / n
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
            Loss::CategoricalCrossEntropy => {
                let rows = pred.batch() as f64;
                p.iter()
                    .zip(t)
                    .map(|(&pv, &y)| if pv > PROB_EPSILON { -y / (pv * rows) } else { 0.0 })
                    .collect()
            }
        };
        let value = match self {
            Loss::Mae => mae_loss(p, t)?,
            Loss::CategoricalCrossEntropy => cce_loss(p, t, pred.item_len())?,
        };
        Ok((value, Tensor::new(pred.shape().to_vec(), grad)?))
    }
}
