//! Sampled falsification of the declared model constants.
//!
//! Every check compares an empirical quantity against a declared constant with
//! a multiplicative slack. Failures are report entries carrying the worst
//! witness, never errors.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::{inverse_residual, GalerkinModel, INVERSE_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    pub sample_count: usize,
    pub seed: u64,
    /// Standard deviation of the random states.
    pub radius: f64,
    /// Multiplicative slack on declared constants.
    pub slack: f64,
}

impl ValidationOptions {
    pub fn new(sample_count: usize, seed: u64) -> Self {
        Self {
            sample_count,
            seed,
            radius: 2.0,
            slack: 1.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Largest empirical value found.
    pub observed: f64,
    /// Declared bound including slack.
    pub allowed: f64,
    /// States (or the `s` value) at which `observed` was attained.
    pub witness: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub model: String,
    pub slack: f64,
    pub sample_count: usize,
    pub checks: Vec<CheckOutcome>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

struct Worst {
    value: f64,
    witness: Vec<Vec<f64>>,
}

impl Worst {
    fn new() -> Self {
        Self {
            value: 0.0,
            witness: Vec::new(),
        }
    }

    fn offer(&mut self, value: f64, witness: impl FnOnce() -> Vec<Vec<f64>>) {
        // NaN counts as a violation
        if !(value <= self.value) {
            self.value = value;
            self.witness = witness();
        }
    }

    fn outcome(self, name: &str, allowed: f64) -> CheckOutcome {
        CheckOutcome {
            name: name.to_string(),
            passed: self.value <= allowed,
            observed: self.value,
            allowed,
            witness: self.witness,
        }
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}

fn matrix_of(model: &GalerkinModel, x: &[f64], inverse: bool) -> DMatrix<f64> {
    if inverse {
        model.g_inv_matrix(x)
    } else {
        model.g_matrix(x)
    }
}

pub fn validate_standing_assumptions(
    model: &GalerkinModel,
    sample_count: usize,
    rng_seed: u64,
) -> ValidationReport {
    validate_with(model, &ValidationOptions::new(sample_count, rng_seed))
}

pub fn validate_with(model: &GalerkinModel, options: &ValidationOptions) -> ValidationReport {
    let n = model.dim();
    let c = *model.constants();
    let slack = options.slack;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut normal = |scale: f64| -> Vec<f64> {
        (0..n)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };

    let mut lip_f = Worst::new();
    let mut lip_g = Worst::new();
    let mut lip_ginv = Worst::new();
    let mut bound_g = Worst::new();
    let mut bound_ginv = Worst::new();
    let mut residual = Worst::new();

    let mut fx = vec![0.0; n];
    let mut fxp = vec![0.0; n];
    let count = options.sample_count.max(2);
    for k in 0..count {
        let x = normal(options.radius);
        let scale = if k % 2 == 0 { options.radius } else { 0.01 * options.radius };
        let step = normal(scale);
        let xp: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
        let dist = step.iter().map(|v| v * v).sum::<f64>().sqrt();
        if dist == 0.0 {
            continue;
        }
        let pair = || vec![x.clone(), xp.clone()];

        model.drift_into(&x, &mut fx);
        model.drift_into(&xp, &mut fxp);
        let df = fx.iter().zip(&fxp).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        lip_f.offer(df / dist, pair);

        let g = matrix_of(model, &x, false);
        let gp = matrix_of(model, &xp, false);
        let gi = matrix_of(model, &x, true);
        let gip = matrix_of(model, &xp, true);
        lip_g.offer(spectral_norm(&(&g - &gp)) / dist, pair);
        lip_ginv.offer(spectral_norm(&(&gi - &gip)) / dist, pair);
        for (state, gm, gim) in [(&x, &g, &gi), (&xp, &gp, &gip)] {
            bound_g.offer(spectral_norm(gm), || vec![state.clone()]);
            bound_ginv.offer(spectral_norm(gim), || vec![state.clone()]);
            residual.offer(inverse_residual(gm, gim), || vec![state.clone()]);
        }
    }

    let mut checks = vec![
        lip_f.outcome("F_lipschitz", slack * c.lip_f),
        lip_g.outcome("G_lipschitz", slack * c.lip_g),
        // |G^-1(x) - G^-1(x')| <= |G^-1(x)| |G(x') - G(x)| |G^-1(x')|
        lip_ginv.outcome("G_inverse_lipschitz", slack * c.bound_g_inv.powi(2) * c.lip_g),
        bound_g.outcome("G_bound", slack * c.bound_g),
        bound_ginv.outcome("G_inverse_bound", slack * c.bound_g_inv),
        residual.outcome("G_inverse_identity", INVERSE_TOLERANCE),
    ];

    let q_hs = model.q().norm();
    checks.push(CheckOutcome {
        name: "Q_hilbert_schmidt".into(),
        passed: q_hs.is_finite(),
        observed: q_hs,
        allowed: f64::INFINITY,
        witness: Vec::new(),
    });

    // Ratio of |e^{sA} D|_F to the declared profile; the check passes when <= slack.
    let mut decay = Worst::new();
    for &s in model.s_grid() {
        let profile = c.decay_l * s.powf(-c.gamma);
        let norm = model.smoothing_norm(s);
        let ratio = if norm == 0.0 { 0.0 } else { norm / profile };
        decay.offer(ratio, || vec![vec![s, norm, profile]]);
    }
    checks.push(decay.outcome("smoothing_decay", slack));

    ValidationReport {
        model: model.name().to_string(),
        slack,
        sample_count: count,
        checks,
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use nalgebra::{DMatrix, DVector};

    use super::*;
    use crate::model::{build_ou_model, LinearPart, ModelConstants};

    fn linear_drift_model(declared: f64) -> GalerkinModel {
        // B = diag(2, -1): operator norm 2
        GalerkinModel::new(
            "linear-drift",
            LinearPart::Diagonal(DVector::from_vec(vec![-3.0, -3.0])),
            Arc::new(|x: &[f64], out: &mut [f64]| {
                out[0] = 2.0 * x[0];
                out[1] = -x[1];
            }),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            Arc::new(|_, out: &mut [f64]| out[0] = 1.0),
            Arc::new(|_, out: &mut [f64]| out[0] = 1.0),
            DMatrix::zeros(2, 1),
            ModelConstants {
                lip_f: declared,
                lip_g: 0.0,
                bound_g: 1.0,
                bound_g_inv: 1.0,
                gamma: 0.0,
                decay_l: 0.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn exact_lipschitz_constant_passes() {
        let report = validate_standing_assumptions(&linear_drift_model(2.0), 400, 1);
        assert!(report.passed(), "{report:?}");
        let f = report.check("F_lipschitz").unwrap();
        assert!(f.observed <= 2.0 + 1e-12);
        assert!(f.observed > 1.5);
    }

    #[test]
    fn understated_lipschitz_constant_fails_with_pair() {
        let report = validate_standing_assumptions(&linear_drift_model(0.5), 400, 1);
        assert!(!report.passed());
        let f = report.check("F_lipschitz").unwrap();
        assert!(!f.passed);
        assert_eq!(f.witness.len(), 2);
        assert_eq!(report.failures().count(), 1);
    }

    #[test]
    fn ou_model_passes() {
        let report = validate_standing_assumptions(&build_ou_model(1.0, 0.5).unwrap(), 50, 9);
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.check("G_inverse_bound").unwrap().observed, 2.0);
    }

    #[test]
    fn understated_bound_on_g_fails() {
        let model = build_ou_model(1.0, 3.0).unwrap().with_constants(ModelConstants {
            lip_f: 0.0,
            lip_g: 0.0,
            bound_g: 1.0,
            bound_g_inv: 1.0,
            gamma: 0.0,
            decay_l: 0.0,
        });
        let report = validate_standing_assumptions(&model, 10, 0);
        assert!(!report.check("G_bound").unwrap().passed);
        assert!(report.check("G_inverse_bound").unwrap().passed);
    }
}
