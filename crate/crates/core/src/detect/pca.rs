use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

const POWER_TOL: f64 = 1e-15;
const POWER_MAX_ITER: usize = 100_000;

/// First principal component of a set of vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Unit-norm axis; its largest-magnitude component is positive.
    pub axis: Vec<f64>,
    pub eigenvalue: f64,
    pub explained_variance_ratio: f64,
}

/// Sample covariance (divisor n − 1) and the mean.
pub fn covariance(rows: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 vectors for PCA, got {n}")));
    }
    let d = rows[0].len();
    if d == 0 {
        return Err(Error::Data("zero-dimensional vectors".into()));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::shape(d, r.len()));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PCA input".into()));
    }
    let mut mean = DVector::zeros(d);
    for r in rows {
        for j in 0..d {
            mean[j] += r[j];
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    let mut c = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            c[j] = r[j] - mean[j];
        }
        for a in 0..d {
            for b in a..d {
                cov[(a, b)] += c[a] * c[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / (n - 1) as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok((mean, cov))
}

/// Dominant eigenpair by power iteration. `None` if it did not settle.
pub fn power_iteration(m: &DMatrix<f64>) -> Option<(f64, DVector<f64>)> {
    let d = m.nrows();
    // Deterministic start with no symmetry that could be orthogonal to the
    // dominant axis for structured inputs.
    let mut v = DVector::from_fn(d, |i, _| 1.0 + (i as f64 + 1.0).sqrt() * 1e-3);
    v.normalize_mut();
    for _ in 0..POWER_MAX_ITER {
        let mut w = m * &v;
        let norm = w.norm();
        if norm == 0.0 || !norm.is_finite() {
            return None;
        }
        w /= norm;
        if w.dot(&v) < 0.0 {
            w.neg_mut();
        }
        let delta = (&w - &v).norm();
        v = w;
        if delta < POWER_TOL * d as f64 {
            break;
        }
    }
    let lambda = v.dot(&(m * &v));
    let resid = (m * &v - &v * lambda).norm();
    (resid <= 1e-9 * lambda.abs().max(1.0)).then_some((lambda, v))
}

/// Dominant eigenpair from a full symmetric eigendecomposition.
pub fn full_eigen(m: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let k = eig.eigenvalues.imax();
    (eig.eigenvalues[k], eig.eigenvectors.column(k).into_owned())
}

fn orient(v: &mut DVector<f64>) {
    let k = v.iamax();
    if v[k] < 0.0 {
        v.neg_mut();
    }
}

pub fn fit_pca1(rows: &[Vec<f64>]) -> Result<PcaModel> {
    let (mean, cov) = covariance(rows)?;
    let trace = cov.trace();
    if trace <= 0.0 {
        return Err(Error::Degenerate("zero covariance in PCA input".into()));
    }
    let (lambda, mut axis) = power_iteration(&cov).unwrap_or_else(|| {
        log::debug!("power iteration did not settle; using full eigendecomposition");
        full_eigen(&cov)
    });
    axis.normalize_mut();
    orient(&mut axis);
    Ok(PcaModel {
        mean: mean.iter().copied().collect(),
        axis: axis.iter().copied().collect(),
        eigenvalue: lambda,
        explained_variance_ratio: (lambda / trace).clamp(0.0, 1.0),
    })
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.axis.len()
    }

    pub fn project(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.mean)
            .zip(&self.axis)
            .map(|((x, m), a)| (x - m) * a)
            .sum()
    }
}
