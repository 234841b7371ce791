//! Closed-form check of the simulator on a saturated zero-buffer line.

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::sim::{run_saturated, SimParams};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Status {
    Starved,
    Working,
    Blocked,
}

/// Stationary output rate of a saturated serial line with no intermediate
/// buffers and blocking after service, from an exact solve of its
/// continuous-time Markov chain over stage statuses.
pub fn ctmc_throughput(rates: &[f64]) -> Result<f64> {
    let n = rates.len();
    if n == 0 {
        return Err(Error::Param("at least one stage is required".into()));
    }
    if rates.iter().any(|&r| !(r.is_finite() && r > 0.0)) {
        return Err(Error::Param(format!("all rates must be positive, got {rates:?}")));
    }
    let states = enumerate_states(n);
    let index: HashMap<&Vec<Status>, usize> = states.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let m = states.len();
    let mut q = DMatrix::<f64>::zeros(m, m);
    for (from, s) in states.iter().enumerate() {
        for i in 0..n {
            if s[i] != Status::Working {
                continue;
            }
            let to = index[&complete(s, i)];
            q[(from, to)] += rates[i];
            q[(from, from)] -= rates[i];
        }
    }
    // πQ = 0 with Σπ = 1: transpose and replace the last balance equation.
    let mut a = q.transpose();
    let mut b = DVector::<f64>::zeros(m);
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    b[m - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numerical("singular balance equations".into()))?;
    let busy: f64 = states
        .iter()
        .zip(pi.iter())
        .filter(|(s, _)| s[n - 1] == Status::Working)
        .map(|(_, p)| p)
        .sum();
    Ok(rates[n - 1] * busy)
}

fn enumerate_states(n: usize) -> Vec<Vec<Status>> {
    let mut out = vec![Vec::new()];
    for i in 0..n {
        let mut next = Vec::new();
        for prefix in &out {
            for st in [Status::Starved, Status::Working, Status::Blocked] {
                if i == 0 && st == Status::Starved {
                    continue;
                }
                if i == n - 1 && st == Status::Blocked {
                    continue;
                }
                // A blocked stage needs an occupied successor.
                if i > 0 && prefix[i - 1] == Status::Blocked && st == Status::Starved {
                    continue;
                }
                let mut s = prefix.clone();
                s.push(st);
                next.push(s);
            }
        }
        out = next;
    }
    out
}

/// State after stage `i` finishes its unit.
fn complete(s: &[Status], i: usize) -> Vec<Status> {
    let n = s.len();
    let mut s = s.to_vec();
    if i + 1 < n && s[i + 1] != Status::Starved {
        s[i] = Status::Blocked;
        return s;
    }
    if i + 1 < n {
        s[i + 1] = Status::Working;
    }
    // Stage i is free: pull blocked units down the line.
    let mut k = i;
    loop {
        if k == 0 {
            s[0] = Status::Working;
            break;
        }
        if s[k - 1] == Status::Blocked {
            s[k] = Status::Working;
            k -= 1;
        } else {
            s[k] = Status::Starved;
            break;
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZTest {
    pub z: f64,
    pub critical: f64,
    pub reject: bool,
}

/// Two-sided one-sample z-test of `mean` against `mu0`.
pub fn z_test(mean: f64, sd: f64, n: usize, mu0: f64, alpha: f64) -> Result<ZTest> {
    if n <= 30 {
        return Err(Error::Param(format!("z-test needs n > 30, got {n}")));
    }
    if !(sd > 0.0) {
        return Err(Error::Degenerate(format!("sample standard deviation {sd}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Param(format!("alpha {alpha} outside (0, 1)")));
    }
    let z = (mean - mu0) / (sd / (n as f64).sqrt());
    let critical = normal_quantile(1.0 - alpha / 2.0);
    Ok(ZTest {
        z,
        critical,
        reject: z.abs() > critical,
    })
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub service_rates: [f64; 3],
    pub oracle_throughput: f64,
    pub simulated_mean: f64,
    pub simulated_sd: f64,
    pub half_width: f64,
    pub confidence: f64,
    pub ci_contains_oracle: bool,
    pub z: f64,
    pub critical: f64,
    pub alpha: f64,
    pub reject: bool,
    pub replications: usize,
    pub warmup_days: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub replications: usize,
    pub alpha: f64,
    /// Discarded lead-in before each observed day, in days.
    pub warmup_days: f64,
    pub horizon_days: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            replications: 916,
            alpha: 0.01,
            warmup_days: 1.0,
            horizon_days: 1.0,
        }
    }
}

/// Runs independent one-day replications of the saturated zero-buffer line
/// and compares their mean output with [`ctmc_throughput`].
pub fn validate_simulator(params: &SimParams, cfg: &ValidationConfig) -> Result<ValidationReport> {
    let oracle = ctmc_throughput(&params.service_rates)?;
    let line = SimParams {
        buffer_caps: [None, Some(0), Some(0)],
        ..params.clone()
    };
    let outputs = (0..cfg.replications)
        .map(|r| {
            let rng = rng::stream(params.base_seed, Purpose::Validation, &[r as u64]);
            run_saturated(&line, cfg.warmup_days, cfg.horizon_days, rng)
                .map(|run| run.output as f64 / cfg.horizon_days)
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = outputs.len() as f64;
    let mean = outputs.iter().sum::<f64>() / n;
    let var = outputs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    let test = z_test(mean, sd, outputs.len(), oracle, cfg.alpha)?;
    let half_width = test.critical * sd / n.sqrt();
    Ok(ValidationReport {
        service_rates: params.service_rates,
        oracle_throughput: oracle,
        simulated_mean: mean,
        simulated_sd: sd,
        half_width,
        confidence: 1.0 - cfg.alpha,
        ci_contains_oracle: (mean - oracle).abs() <= half_width,
        z: test.z,
        critical: test.critical,
        alpha: cfg.alpha,
        reject: test.reject,
        replications: outputs.len(),
        warmup_days: cfg.warmup_days,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_line_matches_published_rate() {
        let th = ctmc_throughput(&[18.0, 19.0, 20.0]).unwrap();
        assert!((th - 10.69).abs() < 0.005, "{th}");
    }

    #[test]
    fn balanced_three_stage_line() {
        // Known exact value 22/39 for three identical unit-rate stages.
        let th = ctmc_throughput(&[1.0, 1.0, 1.0]).unwrap();
        assert!((th - 22.0 / 39.0).abs() < 1e-12, "{th}");
    }

    #[test]
    fn two_stage_closed_form() {
        // Two identical stages with no buffer: 2μ/3.
        let th = ctmc_throughput(&[3.0, 3.0]).unwrap();
        assert!((th - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fast_downstream_approaches_first_rate() {
        let th = ctmc_throughput(&[5.0, 1e7, 1e7]).unwrap();
        assert!((th - 5.0).abs() < 1e-3, "{th}");
    }

    #[test]
    fn oracle_below_bottleneck_and_reversible() {
        for rates in [[18.0, 19.0, 20.0], [2.0, 7.0, 3.5], [1.0, 4.0, 9.0]] {
            let th = ctmc_throughput(&rates).unwrap();
            let min = rates.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(th < min);
            let rev = ctmc_throughput(&[rates[2], rates[1], rates[0]]).unwrap();
            assert!((th - rev).abs() < 1e-9, "{th} vs {rev}");
        }
    }

    #[test]
    fn rejects_bad_rates() {
        assert!(ctmc_throughput(&[1.0, 0.0, 1.0]).is_err());
        assert!(ctmc_throughput(&[]).is_err());
    }

    #[test]
    fn z_test_cases() {
        let t = z_test(10.0, 1.0, 100, 10.0, 0.01).unwrap();
        assert_eq!(t.z, 0.0);
        assert!(!t.reject);
        let t = z_test(10.0, 1.0, 100, 10.5, 0.01).unwrap();
        assert!((t.z + 5.0).abs() < 1e-12);
        assert!(t.reject);
        assert!((t.critical - 2.5758293035489).abs() < 1e-9);
        assert!(matches!(z_test(1.0, 0.0, 100, 1.0, 0.01), Err(Error::Degenerate(_))));
        assert!(z_test(1.0, 1.0, 30, 1.0, 0.01).is_err());
    }

    #[test]
    fn published_estimate_is_not_significant() {
        // 10.48 ± 0.221 at 99% over 916 days.
        let crit = normal_quantile(0.995);
        let sd = 0.221 * (916f64).sqrt() / crit;
        let t = z_test(10.48, sd, 916, 10.69, 0.01).unwrap();
        assert!(!t.reject, "{t:?}");
    }
}
