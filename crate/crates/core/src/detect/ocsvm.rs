use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Smallest curvature used in a pair update.
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoConfig {
    /// Stopping tolerance on the maximal violating pair.
    pub tolerance: f64,
    /// Iteration cap per training point.
    pub max_iter_per_point: usize,
}

impl Default for SmoConfig {
    fn default() -> Self {
        SmoConfig {
            tolerance: 1e-6,
            max_iter_per_point: 100_000,
        }
    }
}

/// ν-one-class SVM with an RBF kernel over scalar inputs.
///
/// The dual is kept in normalized form: `0 ≤ αᵢ ≤ 1/(νn)`, `Σαᵢ = 1`, and
/// `f(x) = Σ αᵢ K(xᵢ, x) − ρ`. A point is normal iff `f(x) ≥ 0`, where
/// values within the solver tolerance below zero count as on the boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcsvmModel {
    pub nu: f64,
    pub gamma: f64,
    pub support_vectors: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub rho: f64,
    pub training_size: usize,
    pub iterations: usize,
    pub gap: f64,
    /// Normalized stopping tolerance; margin support vectors lie within it
    /// of the boundary.
    pub boundary_tolerance: f64,
}

pub fn rbf(gamma: f64, a: f64, b: f64) -> f64 {
    let d = a - b;
    (-gamma * d * d).exp()
}

/// Full solution of the dual, before support vectors are extracted.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    /// Normalized coefficients, one per training point.
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
    pub gap: f64,
}

struct Problem<'a> {
    x: &'a [f64],
    gamma: f64,
}

impl Problem<'_> {
    fn column(&self, i: usize, out: &mut [f64]) {
        let xi = self.x[i];
        for (o, &xj) in out.iter_mut().zip(self.x) {
            *o = rbf(self.gamma, xi, xj);
        }
    }
}

fn check_inputs(x: &[f64], nu: f64, gamma: f64) -> Result<()> {
    if x.len() < 2 {
        return Err(Error::Data(format!("need at least 2 training points, got {}", x.len())));
    }
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::Param(format!("nu must be in (0, 1], got {nu}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Param(format!("gamma must be > 0, got {gamma}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("OCSVM training scores".into()));
    }
    Ok(())
}

/// Solves the dual by SMO with second-order working-set selection.
///
/// Internally works in the scaled form `0 ≤ aᵢ ≤ 1`, `Σaᵢ = νn` and divides
/// by `νn` at the end.
pub fn solve_dual(x: &[f64], nu: f64, gamma: f64, cfg: &SmoConfig) -> Result<DualSolution> {
    check_inputs(x, nu, gamma)?;
    let n = x.len();
    let prob = Problem { x, gamma };
    let total = nu * n as f64;
    let mut a = vec![0.0; n];
    let full = (total.floor() as usize).min(n);
    for v in a.iter_mut().take(full) {
        *v = 1.0;
    }
    if full < n {
        a[full] = total - full as f64;
    }
    let mut g = vec![0.0; n];
    let mut qi = vec![0.0; n];
    let mut qj = vec![0.0; n];
    for i in 0..n {
        if a[i] > 0.0 {
            prob.column(i, &mut qi);
            for k in 0..n {
                g[k] += a[i] * qi[k];
            }
        }
    }
    let cap = cfg.max_iter_per_point.saturating_mul(n).max(1);
    let mut iter = 0;
    let mut gap;
    loop {
        // i: most violating index that can increase; ties to the lowest index.
        let mut i = usize::MAX;
        let mut gmax = f64::NEG_INFINITY;
        let mut gmin = f64::INFINITY;
        for t in 0..n {
            if a[t] < 1.0 && -g[t] > gmax {
                gmax = -g[t];
                i = t;
            }
            if a[t] > 0.0 && -g[t] < gmin {
                gmin = -g[t];
            }
        }
        gap = gmax - gmin;
        if i == usize::MAX || gap < cfg.tolerance {
            break;
        }
        if iter >= cap {
            return Err(Error::NotConverged { iterations: iter, gap });
        }
        prob.column(i, &mut qi);
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if a[t] > 0.0 {
                let b = gmax + g[t];
                if b > 0.0 {
                    let quad = (2.0 - 2.0 * qi[t]).max(TAU);
                    let obj = -(b * b) / quad;
                    if obj < best {
                        best = obj;
                        j = t;
                    }
                }
            }
        }
        if j == usize::MAX {
            break;
        }
        prob.column(j, &mut qj);
        let (old_i, old_j) = (a[i], a[j]);
        let quad = (2.0 - 2.0 * qi[j]).max(TAU);
        let delta = (g[i] - g[j]) / quad;
        let sum = old_i + old_j;
        let mut ai = old_i - delta;
        let mut aj = old_j + delta;
        if sum > 1.0 {
            if ai > 1.0 {
                ai = 1.0;
                aj = sum - 1.0;
            }
        } else if aj < 0.0 {
            aj = 0.0;
            ai = sum;
        }
        if sum > 1.0 {
            if aj > 1.0 {
                aj = 1.0;
                ai = sum - 1.0;
            }
        } else if ai < 0.0 {
            ai = 0.0;
            aj = sum;
        }
        a[i] = ai;
        a[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        for k in 0..n {
            g[k] += qi[k] * di + qj[k] * dj;
        }
        iter += 1;
    }
    let rho = compute_rho(&a, &g);
    Ok(DualSolution {
        alpha: a.iter().map(|v| v / total).collect(),
        rho: rho / total,
        iterations: iter,
        gap: gap.max(0.0) / total,
    })
}

fn compute_rho(a: &[f64], g: &[f64]) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for (&ai, &gi) in a.iter().zip(g) {
        if ai >= 1.0 {
            lb = lb.max(gi);
        } else if ai <= 0.0 {
            ub = ub.min(gi);
        } else {
            sum_free += gi;
            n_free += 1;
        }
    }
    if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    }
}

pub fn ocsvm_fit(x: &[f64], nu: f64, gamma: f64) -> Result<OcsvmModel> {
    ocsvm_fit_with(x, nu, gamma, &SmoConfig::default())
}

pub fn ocsvm_fit_with(x: &[f64], nu: f64, gamma: f64, cfg: &SmoConfig) -> Result<OcsvmModel> {
    let sol = solve_dual(x, nu, gamma, cfg)?;
    let (support_vectors, coefficients) = x
        .iter()
        .zip(&sol.alpha)
        .filter(|(_, &a)| a > 0.0)
        .map(|(&x, &a)| (x, a))
        .unzip();
    Ok(OcsvmModel {
        nu,
        gamma,
        support_vectors,
        coefficients,
        rho: sol.rho,
        training_size: x.len(),
        iterations: sol.iterations,
        gap: sol.gap,
        boundary_tolerance: cfg.tolerance / (nu * x.len() as f64),
    })
}

impl OcsvmModel {
    pub fn decision(&self, x: f64) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.coefficients)
            .map(|(&s, &a)| a * rbf(self.gamma, s, x))
            .sum::<f64>()
            - self.rho
    }

    pub fn is_normal(&self, x: f64) -> bool {
        self.decision(x) >= -self.boundary_tolerance
    }

    /// Upper bound on each coefficient.
    pub fn upper_bound(&self) -> f64 {
        1.0 / (self.nu * self.training_size as f64)
    }
}

/// Largest violation of the optimality conditions of a normalized dual
/// solution: bounds, the equality constraint and complementary slackness.
pub fn kkt_violation(x: &[f64], nu: f64, gamma: f64, alpha: &[f64], rho: f64) -> f64 {
    let n = x.len();
    let c = 1.0 / (nu * n as f64);
    let mut worst: f64 = (alpha.iter().sum::<f64>() - 1.0).abs();
    for i in 0..n {
        let gi: f64 = (0..n).map(|j| alpha[j] * rbf(gamma, x[i], x[j])).sum();
        let ai = alpha[i];
        worst = worst.max((-ai).max(0.0)).max((ai - c).max(0.0));
        let slack = gi - rho;
        let v = if ai <= 0.0 {
            (-slack).max(0.0)
        } else if ai >= c {
            slack.max(0.0)
        } else {
            slack.abs()
        };
        // Express the violation relative to the upper bound so that it is
        // comparable across problem sizes.
        worst = worst.max(v / (c * n as f64).max(1.0));
    }
    worst
}
