//! Dense quadratic-program oracle for the one-class SVM dual: projected
//! gradient descent followed by an exact active-set solve.

#![allow(dead_code)]

use chaintwin::detect::ocsvm::{kkt_violation, ocsvm_fit, rbf, solve_dual, SmoConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};

pub fn kernel(x: &[f64], gamma: f64) -> DMatrix<f64> {
    DMatrix::from_fn(x.len(), x.len(), |i, j| rbf(gamma, x[i], x[j]))
}

/// Euclidean projection onto `{0 ≤ a ≤ c, Σa = 1}`.
pub fn project(v: &DVector<f64>, c: f64) -> DVector<f64> {
    let mass = |tau: f64| v.iter().map(|x| (x - tau).clamp(0.0, c)).sum::<f64>();
    let (mut lo, mut hi) = (v.min() - c - 1.0, v.max() + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    v.map(|x| (x - tau).clamp(0.0, c))
}

/// Returns the normalized dual solution and ρ.
pub fn qp_oracle(x: &[f64], nu: f64, gamma: f64) -> (Vec<f64>, f64) {
    let n = x.len();
    let c = 1.0 / (nu * n as f64);
    let q = kernel(x, gamma);
    let lip = q.symmetric_eigenvalues().max();
    let mut a = project(&DVector::from_element(n, 1.0 / n as f64), c);
    for _ in 0..50_000 {
        let g = &q * &a;
        a = project(&(&a - g / lip), c);
    }
    // Polish on the identified active set.
    let eps = 1e-7 * c;
    let free: Vec<usize> = (0..n).filter(|&i| a[i] > eps && a[i] < c - eps).collect();
    let at_c: Vec<usize> = (0..n).filter(|&i| a[i] >= c - eps).collect();
    let m = free.len();
    if m == 0 {
        // Every coefficient is at a bound; ρ lies anywhere between the
        // gradient bounds and the midpoint is taken.
        let alpha: Vec<f64> = (0..n).map(|i| if at_c.contains(&i) { c } else { 0.0 }).collect();
        let g = &q * DVector::from_column_slice(&alpha);
        let lb = at_c.iter().map(|&i| g[i]).fold(f64::NEG_INFINITY, f64::max);
        let ub = (0..n).filter(|i| !at_c.contains(i)).map(|i| g[i]).fold(f64::INFINITY, f64::min);
        return (alpha, 0.5 * (lb + ub));
    }
    let mut sys = DMatrix::zeros(m + 1, m + 1);
    let mut rhs = DVector::zeros(m + 1);
    for (r, &i) in free.iter().enumerate() {
        for (s, &j) in free.iter().enumerate() {
            sys[(r, s)] = q[(i, j)];
        }
        sys[(r, m)] = -1.0;
        rhs[r] = -at_c.iter().map(|&j| q[(i, j)] * c).sum::<f64>();
        sys[(m, r)] = 1.0;
    }
    rhs[m] = 1.0 - at_c.len() as f64 * c;
    let sol = sys.lu().solve(&rhs).expect("nonsingular active-set system");
    let mut alpha = vec![0.0; n];
    for &i in &at_c {
        alpha[i] = c;
    }
    for (r, &i) in free.iter().enumerate() {
        alpha[i] = sol[r];
    }
    let rho = sol[m];
    assert!(kkt_violation(x, nu, gamma, &alpha, rho) < 1e-10, "oracle polish failed");
    (alpha, rho)
}

pub fn decision(x: &[f64], gamma: f64, alpha: &[f64], rho: f64, p: f64) -> f64 {
    x.iter().zip(alpha).map(|(&s, &a)| a * rbf(gamma, s, p)).sum::<f64>() - rho
}

pub fn sample(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| if i % 7 == 6 { rng.gen_range(1.5..3.0) } else { rng.gen_range(-0.6..0.4) })
        .collect()
}

/// Evenly spread points: the kernel matrix is well conditioned, so the dual
/// solution is unique.
pub fn spread(n: usize) -> Vec<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    (0..n).map(|i| -3.0 + 6.0 * i as f64 / n as f64 + rng.gen_range(0.0..0.1)).collect()
}

/// Coefficient agreement is checked with a tight stopping rule; the default
/// tolerance bounds the gradient gap, not the coefficient error.
pub const TIGHT: SmoConfig = SmoConfig {
    tolerance: 1e-10,
    max_iter_per_point: 100_000,
};

pub fn compare(x: &[f64], nu: f64, gamma: f64, unique: bool) {
    let smo = solve_dual(x, nu, gamma, &TIGHT).unwrap();
    let (alpha, rho) = qp_oracle(x, nu, gamma);
    if unique {
        assert!(kernel(x, gamma).symmetric_eigenvalues().min() > 1e-3);
        for (i, (s, o)) in smo.alpha.iter().zip(&alpha).enumerate() {
            assert!((s - o).abs() < 1e-6, "alpha {i}: smo {s} oracle {o}");
        }
        assert!((smo.rho - rho).abs() < 1e-6, "rho {} vs {rho}", smo.rho);
    }
    let model = ocsvm_fit(x, nu, gamma).unwrap();
    let band = model.boundary_tolerance;
    let probes: Vec<f64> = x.iter().copied().chain((0..400).map(|k| -4.0 + 0.02 * k as f64)).collect();
    let mut compared = 0;
    for p in probes {
        let fo = decision(x, gamma, &alpha, rho, p);
        // Margin support vectors sit on the boundary itself.
        if fo.abs() <= band {
            continue;
        }
        compared += 1;
        assert_eq!(model.is_normal(p), fo >= 0.0, "decision differs at {p}: smo {} oracle {fo}", model.decision(p));
    }
    assert!(compared > 300);
}
