//! Joint dissipativity certificates.
//!
//! The sampled form evaluates
//!
//! ```text
//! 2 <A(x - x') + F(x) - F(x'), x - x'> + |Q (G(x) - G(x'))|_F^2 <= -mu |x - x'|^2
//! ```
//!
//! on random pairs and reports the smallest empirical `mu`. The matrix form is
//! specific to the reaction heat model, where the rate follows from a 2x2
//! symmetric matrix built from the declared structure constants.

use nalgebra::{Matrix2, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::{mat_vec, GalerkinModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateMethod {
    MatrixInequality,
    SampledInequality,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateOptions {
    pub method: CertificateMethod,
    pub sample_count: usize,
    pub seed: u64,
    /// Standard deviation of the random base points.
    pub radius: f64,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        Self {
            method: CertificateMethod::SampledInequality,
            sample_count: 2000,
            seed: 0,
            radius: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DissipativityWitness {
    Eigen {
        matrix: [[f64; 2]; 2],
        eigenvalues: [f64; 2],
    },
    /// Pair attaining the smallest empirical rate.
    Sample {
        x: Vec<f64>,
        x_prime: Vec<f64>,
        rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DissipativityCertificate {
    pub mu_bar: f64,
    pub method: CertificateMethod,
    pub success: bool,
    pub witness: DissipativityWitness,
}

pub fn joint_dissipativity_certificate(
    model: &GalerkinModel,
    options: &CertificateOptions,
) -> Result<DissipativityCertificate> {
    match options.method {
        CertificateMethod::MatrixInequality => matrix_certificate(model),
        CertificateMethod::SampledInequality => sampled_certificate(model, options),
    }
}

fn matrix_certificate(model: &GalerkinModel) -> Result<DissipativityCertificate> {
    let c = model.reaction_constants().ok_or_else(|| {
        Error::InvalidParameter(format!(
            "matrix certificate needs reaction structure constants; model {} has none",
            model.name()
        ))
    })?;
    let off = 0.5 * c.lip_f;
    let m = Matrix2::new(-c.mu_delta - c.mu_f, off, off, -c.mu_b + 0.5 * c.lip_sigma);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dissipativity matrix"));
    }
    let eig = SymmetricEigen::new(m);
    let (lo, hi) = if eig.eigenvalues[0] <= eig.eigenvalues[1] {
        (eig.eigenvalues[0], eig.eigenvalues[1])
    } else {
        (eig.eigenvalues[1], eig.eigenvalues[0])
    };
    let mu_bar = -hi;
    Ok(DissipativityCertificate {
        mu_bar,
        method: CertificateMethod::MatrixInequality,
        success: mu_bar > 0.0,
        witness: DissipativityWitness::Eigen {
            matrix: [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]],
            eigenvalues: [lo, hi],
        },
    })
}

/// Empirical rate `-(lhs) / |x - x'|^2` of one pair.
pub(crate) fn pair_rate(model: &GalerkinModel, x: &[f64], xp: &[f64]) -> f64 {
    let n = model.dim();
    let d1 = model.d1();
    let delta: Vec<f64> = x.iter().zip(xp).map(|(a, b)| a - b).collect();
    let norm2: f64 = delta.iter().map(|v| v * v).sum();
    let mut ad = vec![0.0; n];
    model.linear().apply(&delta, &mut ad);
    let mut fx = vec![0.0; n];
    let mut fxp = vec![0.0; n];
    model.drift_into(x, &mut fx);
    model.drift_into(xp, &mut fxp);
    let inner: f64 = (0..n).map(|i| (ad[i] + fx[i] - fxp[i]) * delta[i]).sum();
    let mut gx = vec![0.0; d1 * d1];
    let mut gxp = vec![0.0; d1 * d1];
    model.g_into(x, &mut gx);
    model.g_into(xp, &mut gxp);
    let dg: Vec<f64> = gx.iter().zip(&gxp).map(|(a, b)| a - b).collect();
    // |Q dG|_F^2 column by column of dG
    let mut hs = 0.0;
    let mut col = vec![0.0; d1];
    let mut qcol = vec![0.0; n];
    for j in 0..d1 {
        for i in 0..d1 {
            col[i] = dg[i * d1 + j];
        }
        mat_vec(model.q(), &col, &mut qcol);
        hs += qcol.iter().map(|v| v * v).sum::<f64>();
    }
    -(2.0 * inner + hs) / norm2
}

fn sampled_certificate(
    model: &GalerkinModel,
    options: &CertificateOptions,
) -> Result<DissipativityCertificate> {
    if options.sample_count < 1 {
        return Err(Error::InvalidParameter("sample_count must be >= 1".into()));
    }
    let n = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut worst: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut consider = |x: Vec<f64>, xp: Vec<f64>| {
        let rate = pair_rate(model, &x, &xp);
        if rate.is_finite() && worst.as_ref().is_none_or(|w| rate < w.0) {
            worst = Some((rate, x, xp));
        }
    };
    for i in 0..n {
        let base: Vec<f64> = (0..n).map(|_| options.radius * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut other = base.clone();
        other[i] += 1.0;
        consider(base, other);
    }
    for k in 0..options.sample_count {
        let scale = if k % 2 == 0 { options.radius } else { 0.01 * options.radius };
        let base: Vec<f64> = (0..n).map(|_| options.radius * rng.sample::<f64, _>(StandardNormal)).collect();
        let other: Vec<f64> = base
            .iter()
            .map(|v| v + scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        consider(base, other);
    }
    let (rate, x, xp) = worst.ok_or(Error::NonFinite("dissipativity samples"))?;
    Ok(DissipativityCertificate {
        mu_bar: rate,
        method: CertificateMethod::SampledInequality,
        success: rate > 0.0,
        witness: DissipativityWitness::Sample {
            x,
            x_prime: xp,
            rate,
        },
    })
}
