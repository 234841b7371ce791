use super::ocsvm::{ocsvm_fit_with, SmoConfig};
use super::{split_by_series, DetectionSummary};
use crate::data::WindowSet;
use crate::error::Result;
use crate::metrics::lag_stats;
use serde::{Deserialize, Serialize};
use std::io::Write;

pub const DEFAULT_NU_GRID: [f64; 9] = [0.01, 0.025, 0.05, 0.075, 0.1, 0.2, 0.3, 0.4, 0.5];
pub const DEFAULT_GAMMA_GRID: [f64; 6] = [0.01, 0.1, 1.0, 10.0, 100.0, 1000.0];

/// Detection quality for one `(ν, γ)` pair. Metrics are `None` when
/// undefined or when the fit failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub nu: f64,
    pub gamma: f64,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub mean_lag: Option<f64>,
    pub max_lag: Option<u32>,
    pub false_alarm_pct: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub nus: Vec<f64>,
    pub gammas: Vec<f64>,
    /// Row-major by ν, then γ.
    pub cells: Vec<GridCell>,
}

/// Fits one detector per grid point on `fit_scores` and evaluates it on the
/// precomputed scores of `eval`. Failed fits are recorded and skipped.
pub fn grid_search(
    nus: &[f64],
    gammas: &[f64],
    fit_scores: &[f64],
    eval: &WindowSet,
    eval_scores: &[f64],
    smo: &SmoConfig,
) -> GridSearch {
    let mut cells = Vec::with_capacity(nus.len() * gammas.len());
    for &nu in nus {
        for &gamma in gammas {
            let cell = match ocsvm_fit_with(fit_scores, nu, gamma, smo) {
                Ok(model) => {
                    let det = split_by_series(eval, eval_scores, |s| !model.is_normal(s));
                    let summary = DetectionSummary::new(&det);
                    let lags = lag_stats(&summary.lags);
                    let m = summary.counts.summary();
                    GridCell {
                        nu,
                        gamma,
                        accuracy: m.accuracy,
                        f1: m.f1,
                        mean_lag: lags.mean,
                        max_lag: lags.max,
                        false_alarm_pct: summary.false_alarm_fraction().map(|f| 100.0 * f),
                        error: None,
                    }
                }
                Err(e) => {
                    log::warn!("grid cell nu={nu} gamma={gamma} failed: {e}");
                    GridCell {
                        nu,
                        gamma,
                        accuracy: None,
                        f1: None,
                        mean_lag: None,
                        max_lag: None,
                        false_alarm_pct: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            log::info!("grid nu={nu} gamma={gamma}: {cell:?}");
            cells.push(cell);
        }
    }
    GridSearch {
        nus: nus.to_vec(),
        gammas: gammas.to_vec(),
        cells,
    }
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |x| x.to_string())
}

impl GridSearch {
    pub fn cell(&self, nu_idx: usize, gamma_idx: usize) -> &GridCell {
        &self.cells[nu_idx * self.gammas.len() + gamma_idx]
    }

    /// Cell with the highest value of `key`; ties keep the first cell.
    pub fn best_by(&self, key: impl Fn(&GridCell) -> Option<f64>) -> Option<&GridCell> {
        let mut best: Option<(&GridCell, f64)> = None;
        for c in &self.cells {
            if let Some(v) = key(c) {
                if best.map_or(true, |(_, b)| v > b) {
                    best = Some((c, v));
                }
            }
        }
        best.map(|(c, _)| c)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "nu,gamma,accuracy,f1,mean_lag,max_lag,false_alarm_pct")?;
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.nu,
                c.gamma,
                fmt(c.accuracy),
                fmt(c.f1),
                fmt(c.mean_lag),
                fmt(c.max_lag.map(f64::from)),
                fmt(c.false_alarm_pct)
            )?;
        }
        Ok(())
    }
}
