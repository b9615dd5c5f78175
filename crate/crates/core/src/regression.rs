//! Multi-target least squares on a shared design.
//!
//! Columns are centred and scaled before solving; columns whose spread is
//! negligible (all paths still sitting at one initial point) are dropped for
//! that fit. Coefficients are mapped back to the raw feature coordinates so
//! that fits from different time steps can be averaged.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{ensure_finite, Error, Result};

/// Relative spread below which a feature column is treated as constant.
const SPREAD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiFit {
    /// Per target: `[intercept, beta_1, ..., beta_p]` in raw feature units.
    pub coeffs: Vec<Vec<f64>>,
    /// Condition number of the regularised correlation matrix of the active columns.
    pub condition: f64,
    pub active_columns: usize,
}

impl MultiFit {
    pub fn predict(&self, target: usize, features: &[f64]) -> f64 {
        predict(&self.coeffs[target], features)
    }
}

pub fn predict(coeffs: &[f64], features: &[f64]) -> f64 {
    coeffs[0]
        + coeffs[1..]
            .iter()
            .zip(features)
            .map(|(b, f)| b * f)
            .sum::<f64>()
}

/// Centred and scaled Gram matrix of a feature sample, factorised once and
/// reused for any number of targets.
#[derive(Debug, Clone)]
pub struct Design {
    p: usize,
    n: usize,
    fmean: Vec<f64>,
    fstd: Vec<f64>,
    active: Vec<usize>,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    pub condition: f64,
}

impl Design {
    /// `features` is `n x p` row-major. `ridge` is added to the diagonal of
    /// the correlation matrix; `max_condition` bounds its regularised
    /// condition number.
    pub fn new(features: &[f64], p: usize, ridge: f64, max_condition: f64, step: usize) -> Result<Self> {
        let n = if p == 0 { 0 } else { features.len() / p };
        if p > 0 && n == 0 {
            return Err(Error::InvalidParameter("regression with no samples".into()));
        }
        let nf = n.max(1) as f64;
        let mut fmean = vec![0.0; p];
        let mut fstd = vec![0.0; p];
        if p > 0 {
            for row in features.chunks_exact(p) {
                for (m, v) in fmean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            fmean.iter_mut().for_each(|m| *m /= nf);
            for row in features.chunks_exact(p) {
                for j in 0..p {
                    fstd[j] += (row[j] - fmean[j]).powi(2);
                }
            }
            fstd.iter_mut().for_each(|s| *s = (*s / nf).sqrt());
        }
        let active: Vec<usize> = (0..p)
            .filter(|&j| fstd[j] > SPREAD_TOL * (1.0 + fmean[j].abs()))
            .collect();
        let k = active.len();
        if k == 0 {
            return Ok(Self {
                p,
                n,
                fmean,
                fstd,
                active,
                chol: None,
                condition: 1.0,
            });
        }
        let mut gram = DMatrix::<f64>::zeros(k, k);
        let mut z = vec![0.0; k];
        for frow in features.chunks_exact(p) {
            for (a, &j) in active.iter().enumerate() {
                z[a] = (frow[j] - fmean[j]) / fstd[j];
            }
            for a in 0..k {
                let za = z[a];
                for b in a..k {
                    gram[(a, b)] += za * z[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                gram[(a, b)] = gram[(b, a)];
            }
        }
        gram /= nf;
        for a in 0..k {
            gram[(a, a)] += ridge;
        }
        let eig = SymmetricEigen::new(gram.clone());
        let max_ev = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
        let min_ev = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
        let condition = if min_ev > 0.0 { max_ev / min_ev } else { f64::INFINITY };
        if !(condition <= max_condition) {
            return Err(Error::IllConditioned { step, condition });
        }
        let chol = gram.cholesky().ok_or(Error::IllConditioned { step, condition })?;
        Ok(Self {
            p,
            n,
            fmean,
            fstd,
            active,
            chol: Some(chol),
            condition,
        })
    }

    pub fn active_columns(&self) -> usize {
        self.active.len()
    }

    /// Coefficients `[intercept, beta_1, ..., beta_p]` in raw feature units
    /// for each column of the `n x t` row-major `targets`.
    pub fn solve(&self, features: &[f64], targets: &[f64], t: usize, step: usize) -> Result<Vec<Vec<f64>>> {
        let n = targets.len() / t;
        if n != self.n && self.p > 0 {
            return Err(Error::DimensionMismatch {
                context: "regression targets",
                expected: self.n,
                got: n,
            });
        }
        let nf = n as f64;
        ensure_finite(targets, "regression targets (backward values diverged)")?;
        let mut tmean = vec![0.0; t];
        for row in targets.chunks_exact(t) {
            for (m, v) in tmean.iter_mut().zip(row) {
                *m += v;
            }
        }
        tmean.iter_mut().for_each(|m| *m /= nf);
        let p = self.p;
        let mut coeffs: Vec<Vec<f64>> = (0..t)
            .map(|i| {
                let mut c = vec![0.0; p + 1];
                c[0] = tmean[i];
                c
            })
            .collect();
        let Some(chol) = &self.chol else {
            return Ok(coeffs);
        };
        let k = self.active.len();
        let mut rhs = DMatrix::<f64>::zeros(k, t);
        let mut z = vec![0.0; k];
        for (frow, trow) in features.chunks_exact(p).zip(targets.chunks_exact(t)) {
            for (a, &j) in self.active.iter().enumerate() {
                z[a] = (frow[j] - self.fmean[j]) / self.fstd[j];
            }
            for (i, tv) in trow.iter().enumerate() {
                let d = tv - tmean[i];
                for a in 0..k {
                    rhs[(a, i)] += z[a] * d;
                }
            }
        }
        rhs /= nf;
        let sol = chol.solve(&rhs);
        for (i, c) in coeffs.iter_mut().enumerate() {
            let mut intercept = tmean[i];
            for (a, &j) in self.active.iter().enumerate() {
                let beta = sol[(a, i)] / self.fstd[j];
                c[j + 1] = beta;
                intercept -= beta * self.fmean[j];
            }
            c[0] = intercept;
            if !c.iter().all(|v| v.is_finite()) {
                return Err(Error::IllConditioned {
                    step,
                    condition: self.condition,
                });
            }
        }
        Ok(coeffs)
    }
}

/// Fits every target column on the `n x p` row-major `features`.
///
/// `targets` is `n x t` row-major.
pub fn fit(
    features: &[f64],
    p: usize,
    targets: &[f64],
    t: usize,
    ridge: f64,
    max_condition: f64,
    step: usize,
) -> Result<MultiFit> {
    if targets.is_empty() {
        return Err(Error::InvalidParameter("regression with no samples".into()));
    }
    let design = Design::new(features, p, ridge, max_condition, step)?;
    let coeffs = design.solve(features, targets, t, step)?;
    Ok(MultiFit {
        coeffs,
        condition: design.condition,
        active_columns: design.active_columns(),
    })
}
