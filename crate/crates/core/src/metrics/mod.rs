//! Fréchet distance between Gaussian fits and the Inception Score
//! functional, evaluated on caller-supplied features and class
//! probabilities.

pub mod linalg;

use crate::error::{Error, Result};
pub use linalg::{sym_eigen, Matrix, SymEigen};

/// Eigenvalues down to `-PSD_TOL * max(1, |C|max)` count as zero.
pub const PSD_TOL: f64 = 1e-10;
/// Allowed `|c_ij - c_ji|`, relative to `max(1, |C|max)`.
pub const SYM_TOL: f64 = 1e-9;
/// Allowed deviation of a probability row sum from 1.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Distances in `[-DIST_CLAMP, 0)` are reported as 0.
pub const DIST_CLAMP: f64 = 1e-9;

/// Mean and unbiased covariance of a feature sample.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianFit {
    pub mu: Vec<f64>,
    pub cov: Matrix,
}

impl GaussianFit {
    pub fn new(mu: Vec<f64>, cov: Matrix) -> Result<Self> {
        if mu.len() != cov.dim() {
            return Err(Error::Data(format!(
                "mean has {} entries but covariance is {}x{}",
                mu.len(),
                cov.dim(),
                cov.dim()
            )));
        }
        Ok(GaussianFit { mu, cov })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Checks symmetry and positive semidefiniteness of the covariance.
    pub fn validate(&self) -> Result<()> {
        let scale = self.cov.max_abs().max(1.0);
        if self
            .mu
            .iter()
            .chain(self.cov.data())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("gaussian fit".into()));
        }
        let asym = self.cov.asymmetry();
        if asym > SYM_TOL * scale {
            return Err(Error::Data(format!(
                "covariance is not symmetric (|c_ij - c_ji| = {asym:e})"
            )));
        }
        let min = sym_eigen(&self.cov)?
            .values
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if min < -PSD_TOL * scale {
            return Err(Error::Data(format!(
                "covariance is indefinite (smallest eigenvalue {min:e})"
            )));
        }
        Ok(())
    }
}

/// Sample mean and `1/(N-1)` covariance of `N` feature rows.
pub fn fit_gaussian(features: &[Vec<f64>]) -> Result<GaussianFit> {
    let n = features.len();
    if n < 2 {
        return Err(Error::Data(format!(
            "need at least 2 samples to fit a gaussian, got {n}"
        )));
    }
    let d = features[0].len();
    if d == 0 {
        return Err(Error::Data("features have zero dimensions".into()));
    }
    if let Some(i) = features.iter().position(|r| r.len() != d) {
        return Err(Error::Data(format!(
            "row {i} has {} features, expected {d}",
            features[i].len()
        )));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature table".into()));
    }
    let mut mu = vec![0.0; d];
    for row in features {
        for (m, &x) in mu.iter_mut().zip(row) {
            *m += x;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = Matrix::zeros(d);
    for row in features {
        for i in 0..d {
            let di = row[i] - mu[i];
            for j in 0..=i {
                cov[(i, j)] += di * (row[j] - mu[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let v = cov[(i, j)] / (n - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    GaussianFit::new(mu, cov.symmetrized())
}

/// Symmetric square root of a PSD matrix; small negative eigenvalues are
/// treated as zero.
pub fn sqrt_psd(m: &Matrix) -> Result<Matrix> {
    let e = sym_eigen(m)?;
    Ok(e.reconstruct(|l| l.max(0.0).sqrt()))
}

/// `‖μp − μq‖² + tr(Cp + Cq − 2 (Cp Cq)^½)`.
///
/// The trace of `(Cp Cq)^½` is taken as the sum of square roots of the
/// eigenvalues of the symmetric matrix `Cp^½ Cq Cp^½`, which has the same
/// spectrum.
pub fn frechet_distance(p: &GaussianFit, q: &GaussianFit) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Data(format!(
            "fits have different dimensions ({} vs {})",
            p.dim(),
            q.dim()
        )));
    }
    p.validate()?;
    q.validate()?;
    let mean_term: f64 = p.mu.iter().zip(&q.mu).map(|(a, b)| (a - b) * (a - b)).sum();
    let sp = sqrt_psd(&p.cov)?;
    let inner = sp.matmul(&q.cov).matmul(&sp).symmetrized();
    let scale = inner.max_abs().max(1.0);
    let mut trace_sqrt = 0.0;
    for l in sym_eigen(&inner)?.values {
        if l < -PSD_TOL * scale {
            return Err(Error::Data(format!(
                "Cp^1/2 Cq Cp^1/2 has eigenvalue {l:e}; inputs are not PSD"
            )));
        }
        trace_sqrt += l.max(0.0).sqrt();
    }
    let dist = mean_term + p.cov.trace() + q.cov.trace() - 2.0 * trace_sqrt;
    if dist < -DIST_CLAMP {
        return Err(Error::NonFinite(format!(
            "negative fréchet distance {dist:e}"
        )));
    }
    Ok(dist.max(0.0))
}

/// Per-sample class probability vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassProbTable {
    rows: Vec<Vec<f64>>,
}

impl ClassProbTable {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || k == 0 {
            return Err(Error::Data("probability table is empty".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != k {
                return Err(Error::Data(format!(
                    "row {i} has {} classes, expected {k}",
                    r.len()
                )));
            }
            if r.iter().any(|&p| !p.is_finite() || p < 0.0) {
                return Err(Error::Data(format!(
                    "row {i} has a negative or non-finite entry"
                )));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Data(format!("row {i} sums to {s}, not 1")));
            }
        }
        Ok(ClassProbTable { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn classes(&self) -> usize {
        self.rows[0].len()
    }

    /// Mean of the rows.
    pub fn marginal(&self) -> Vec<f64> {
        let n = self.rows.len() as f64;
        let mut m = vec![0.0; self.classes()];
        for r in &self.rows {
            for (a, &p) in m.iter_mut().zip(r) {
                *a += p;
            }
        }
        m.iter_mut().for_each(|a| *a /= n);
        m
    }
}

/// `Σ p log(p/q)` with `0 log 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).ln())
        .sum()
}

/// `exp(E[KL(p(l|x) ‖ p(l))])`.
pub fn inception_score(table: &ClassProbTable) -> f64 {
    let m = table.marginal();
    let mean_kl = table
        .rows()
        .iter()
        .map(|r| kl_divergence(r, &m))
        .sum::<f64>()
        / table.rows().len() as f64;
    mean_kl.exp()
}
