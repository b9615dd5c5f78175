//! The ergodic pair `(v̄, λ)` by vanishing discount, and checks of the
//! identities it must satisfy.
//!
//! For a decreasing schedule of discounts, `α v^α(x_ref)` is extrapolated
//! to `α = 0` to give `λ`. `v^α(x) - v^α(x_ref)` is extrapolated the same way
//! to give `v̄(x)`. All discounts share one seed, so every path sees the
//! same noise at every `α`. The extrapolated quantity is then a fixed linear
//! combination of per-path values, and its standard error is the plain
//! standard error of that per-path combination.

mod surrogate;
mod verify;

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::bsde::{solve_discounted, BsdeConfig, RegressionBasis};
use crate::error::{Error, Result};
use crate::hamiltonian::DriverSpec;
use crate::model::{GalerkinModel, StateVector};
use crate::stats::{intercept_weights, quadratic_intercept_weights, Estimate};

pub use surrogate::{GradientFn, ValueFn, ValueSurrogate};
pub use verify::{
    gradient_consistency, parabolic_long_time_ratio, verify_ergodic_bsde_residual, verify_mild_hjb,
    DirectionCheck, ErgodicResidual, GradientReport, HjbEntry, HjbVerificationReport, LongTimeRatio,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Extrapolation {
    /// Least-squares line in `α`, read at `α = 0`.
    Linear,
    /// Least-squares quadratic in `α`, read at `α = 0`. The curvature of
    /// `α v^α(x)` depends on `x`, so a line leaves an `x`-dependent bias.
    #[default]
    Quadratic,
    /// The value at the smallest `α`.
    Last,
}

impl Extrapolation {
    fn weights(self, alphas: &[f64]) -> Vec<f64> {
        let fallback = || {
            let mut w = vec![0.0; alphas.len()];
            *w.last_mut().expect("non-empty schedule") = 1.0;
            w
        };
        match self {
            Extrapolation::Linear => intercept_weights(alphas).unwrap_or_else(fallback),
            Extrapolation::Quadratic => quadratic_intercept_weights(alphas).unwrap_or_else(fallback),
            Extrapolation::Last => fallback(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErgodicConfig {
    pub bsde: BsdeConfig,
    pub extrapolation: Extrapolation,
    /// Fraction of the smallest-`α` grid where the regression representation
    /// of `v̄` and `ζ̄` is averaged. The solve there is far from both the
    /// start point and the truncation horizon.
    pub window: (f64, f64),
    /// Step fits averaged inside the window.
    pub window_fits: usize,
}

impl Default for ErgodicConfig {
    fn default() -> Self {
        Self {
            bsde: BsdeConfig::default(),
            extrapolation: Extrapolation::Quadratic,
            window: (0.125, 0.5),
            window_fits: 16,
        }
    }
}

/// `v^α` at the reference and evaluation points for one discount.
#[derive(Debug, Clone, Serialize)]
pub struct AlphaRecord {
    pub alpha: f64,
    pub v_ref: Estimate,
    pub alpha_v_ref: Estimate,
    /// `|v^α(x_1) - v^α(x_ref)| / |x_1 - x_ref|` for the first evaluation point
    /// distinct from the reference.
    pub lipschitz_probe: Option<f64>,
    pub truncation_t: f64,
    pub tail_bound: f64,
    /// `v^α` at every point of [`ErgodicSolution::points`].
    pub values: Vec<Estimate>,
    #[serde(skip)]
    pub samples: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErgodicSolution {
    pub lambda_hat: Estimate,
    pub x_ref: Vec<f64>,
    /// Reference point first, then the evaluation points.
    pub points: Vec<Vec<f64>>,
    /// `v̄` at [`Self::points`], with `v̄(x_ref) = 0` exactly.
    pub vbar_at: Vec<Estimate>,
    pub zeta1_at: Vec<Vec<f64>>,
    pub zeta2_at: Vec<Vec<f64>>,
    /// Sorted by decreasing `α`.
    pub alpha_records: Vec<AlphaRecord>,
    pub extrapolation: Extrapolation,
    pub weights: Vec<f64>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub surrogate: ValueSurrogate,
}

impl ErgodicSolution {
    /// Solution with prescribed `λ`, `v̄` and `ζ̄`; used for checks on known pairs.
    pub fn prescribed(lambda: f64, x_ref: Vec<f64>, surrogate: ValueSurrogate) -> Self {
        Self {
            lambda_hat: Estimate::exact(lambda),
            points: vec![x_ref.clone()],
            x_ref,
            vbar_at: vec![Estimate::exact(0.0)],
            zeta1_at: Vec::new(),
            zeta2_at: Vec::new(),
            alpha_records: Vec::new(),
            extrapolation: Extrapolation::Last,
            weights: Vec::new(),
            warnings: Vec::new(),
            surrogate,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda_hat.mean = lambda;
        self
    }

    pub fn with_surrogate(mut self, surrogate: ValueSurrogate) -> Self {
        self.surrogate = surrogate;
        self
    }

    /// `λ̂` with `points[j]` as the reference point, from the same per-path
    /// samples and weights as [`Self::lambda_hat`].
    pub fn lambda_at(&self, j: usize) -> Option<Estimate> {
        if self.alpha_records.is_empty() || self.weights.len() != self.alpha_records.len() {
            return None;
        }
        let n = self.alpha_records[0].samples.get(j)?.len();
        let per_path: Vec<f64> = (0..n)
            .map(|p| {
                self.alpha_records
                    .iter()
                    .zip(&self.weights)
                    .map(|(r, w)| w * (r.alpha * r.samples[j][p]))
                    .sum()
            })
            .collect();
        Some(Estimate::from_samples(&per_path))
    }

    pub fn smallest_alpha(&self) -> Option<f64> {
        self.alpha_records.last().map(|r| r.alpha)
    }

    /// `alpha,v_alpha_ref,alpha_v,stderr`.
    pub fn write_alpha_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "alpha,v_alpha_ref,alpha_v,stderr")?;
        for r in &self.alpha_records {
            writeln!(w, "{},{},{},{}", r.alpha, r.v_ref.mean, r.alpha_v_ref.mean, r.alpha_v_ref.stderr)?;
        }
        Ok(())
    }
}

/// Extracts `(v̄, λ)` by solving the discounted problem along `alpha_schedule`.
pub fn vanishing_discount(
    model: &GalerkinModel,
    driver: &DriverSpec,
    alpha_schedule: &[f64],
    x_ref: &StateVector,
    eval_points: &[StateVector],
    basis: &RegressionBasis,
    cfg: &ErgodicConfig,
) -> Result<ErgodicSolution> {
    if alpha_schedule.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "alpha schedule needs at least 3 entries, got {}",
            alpha_schedule.len()
        )));
    }
    if alpha_schedule.windows(2).any(|w| !(w[1] < w[0])) || !(alpha_schedule[alpha_schedule.len() - 1] > 0.0) {
        return Err(Error::InvalidParameter("alpha schedule must be positive and strictly decreasing".into()));
    }
    let mut points = vec![x_ref.clone()];
    points.extend(eval_points.iter().filter(|p| *p != x_ref).cloned());
    let n_pts = points.len();

    let mut records = Vec::with_capacity(alpha_schedule.len());
    let mut smallest = None;
    for (i, &alpha) in alpha_schedule.iter().enumerate() {
        let dv = solve_discounted(model, driver, alpha, &points, basis, &cfg.bsde)?;
        let v_ref = dv.values[0];
        let probe = (1..n_pts).next().map(|j| {
            let dist = points[j].distance(x_ref);
            (dv.values[j].mean - v_ref.mean).abs() / dist
        });
        records.push(AlphaRecord {
            alpha,
            v_ref,
            alpha_v_ref: Estimate {
                mean: alpha * v_ref.mean,
                stderr: alpha * v_ref.stderr,
            },
            lipschitz_probe: probe,
            truncation_t: dv.truncation_t,
            tail_bound: dv.tail_bound,
            values: dv.values.clone(),
            samples: dv.samples.clone(),
        });
        if i + 1 == alpha_schedule.len() {
            smallest = dv.solutions.into_iter().next();
        }
    }

    let weights = cfg.extrapolation.weights(alpha_schedule);
    let n = cfg.bsde.n_paths;
    let combine = |f: &dyn Fn(&AlphaRecord, usize) -> f64| -> Estimate {
        let per_path: Vec<f64> = (0..n)
            .map(|p| records.iter().zip(&weights).map(|(r, w)| w * f(r, p)).sum())
            .collect();
        Estimate::from_samples(&per_path)
    };
    let lambda_hat = combine(&|r, p| r.alpha * r.samples[0][p]);
    let mut vbar_at = vec![Estimate::exact(0.0)];
    for j in 1..n_pts {
        vbar_at.push(combine(&|r, p| r.samples[j][p] - r.samples[0][p]));
    }

    let mut warnings = Vec::new();
    let av: Vec<&Estimate> = records.iter().map(|r| &r.alpha_v_ref).collect();
    let steps: Vec<(f64, f64)> = av
        .windows(2)
        .map(|w| (w[1].mean - w[0].mean, 3.0 * w[0].combined_stderr(w[1])))
        .collect();
    let up = steps.iter().any(|(d, s)| *d > *s);
    let down = steps.iter().any(|(d, s)| *d < -*s);
    if up && down {
        warnings.push("alpha * v_alpha(x_ref) is not monotone in alpha beyond Monte Carlo noise".into());
    }

    let sol = smallest.expect("schedule is non-empty");
    let surrogate = ValueSurrogate::from_solution(&sol, x_ref.as_slice(), cfg.window, cfg.window_fits);
    let (d1, d2) = (model.d1(), model.d2());
    let mut zeta1_at = Vec::with_capacity(n_pts);
    let mut zeta2_at = Vec::with_capacity(n_pts);
    let mut zu = vec![0.0; d1 + d2];
    for p in &points {
        surrogate.zeta(p.as_slice(), &mut zu);
        zeta1_at.push(zu[..d1].to_vec());
        zeta2_at.push(zu[d1..].to_vec());
    }

    Ok(ErgodicSolution {
        lambda_hat,
        x_ref: x_ref.as_slice().to_vec(),
        points: points.iter().map(|p| p.as_slice().to_vec()).collect(),
        vbar_at,
        zeta1_at,
        zeta2_at,
        alpha_records: records,
        extrapolation: cfg.extrapolation,
        weights,
        warnings,
        surrogate,
    })
}

/// Difference quotients `|v^α(x_i) - v^α(x_j)| / |x_i - x_j|` per discount.
#[derive(Debug, Clone, Serialize)]
pub struct LipschitzReport {
    pub alphas: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
    /// `quotients[pair][alpha]`, with the standard error of the paired difference.
    pub quotients: Vec<Vec<Estimate>>,
    /// Per pair, `max / min - 1` over the schedule.
    pub variation: Vec<f64>,
    /// Per pair, quotients increase at every step as `α` decreases and the
    /// overall increase exceeds three standard errors.
    pub growing: Vec<bool>,
}

impl LipschitzReport {
    pub fn uniform_within(&self, tol: f64) -> bool {
        self.variation.iter().all(|v| *v < tol) && !self.growing.iter().any(|g| *g)
    }
}

/// Tabulates difference quotients over the α-schedule for pairs of indices
/// into `points`.
pub fn lipschitz_uniformity_diag(
    records: &[AlphaRecord],
    points: &[Vec<f64>],
    pairs: &[(usize, usize)],
) -> Result<LipschitzReport> {
    if records.len() < 2 || pairs.is_empty() {
        return Err(Error::InvalidParameter("need at least two discounts and one pair".into()));
    }
    let mut quotients = Vec::with_capacity(pairs.len());
    let mut variation = Vec::with_capacity(pairs.len());
    let mut growing = Vec::with_capacity(pairs.len());
    for &(i, j) in pairs {
        if i >= points.len() || j >= points.len() || i == j {
            return Err(Error::InvalidParameter(format!("bad pair ({i}, {j})")));
        }
        let dist: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let qs: Vec<Estimate> = records
            .iter()
            .map(|r| {
                let diff: Vec<f64> = r.samples[i].iter().zip(&r.samples[j]).map(|(a, b)| a - b).collect();
                let e = Estimate::from_samples(&diff);
                Estimate {
                    mean: e.mean.abs() / dist,
                    stderr: e.stderr / dist,
                }
            })
            .collect();
        let max = qs.iter().map(|q| q.mean).fold(f64::NEG_INFINITY, f64::max);
        let min = qs.iter().map(|q| q.mean).fold(f64::INFINITY, f64::min);
        variation.push(if max == 0.0 { 0.0 } else { max / min - 1.0 });
        let monotone = qs.windows(2).all(|w| w[1].mean > w[0].mean);
        let (first, last) = (qs[0], qs[qs.len() - 1]);
        growing.push(monotone && last.mean - first.mean > 3.0 * first.combined_stderr(&last) && max > 0.0 && max / min > 1.3);
        quotients.push(qs);
    }
    Ok(LipschitzReport {
        alphas: records.iter().map(|r| r.alpha).collect(),
        pairs: pairs.to_vec(),
        quotients,
        variation,
        growing,
    })
}
