use serde::Serialize;

use super::ErgodicSolution;
use crate::bsde::{solve_discounted, solve_finite_horizon, BsdeConfig, RegressionBasis, Terminal};
use crate::error::{Error, Result};
use crate::forward::{DriftAugmentation, PathEngine};
use crate::hamiltonian::DriverSpec;
use crate::model::{GalerkinModel, StateVector};
use crate::parallel::ordered_map;
use crate::rng::NoiseStream;
use crate::stats::Estimate;

const RESIDUAL_TAG: u64 = 0xE4C1;
const HJB_TAG: u64 = 0x41B3;

/// `ψ(x, ζ̄1(x) G(x)^{-1}, ζ̄2(x))` with scratch buffers.
struct DriverAlongPath<'a> {
    model: &'a GalerkinModel,
    driver: &'a DriverSpec,
    ergodic: &'a ErgodicSolution,
    uses_zu: bool,
    zu: Vec<f64>,
    zg: Vec<f64>,
    ginv: Vec<f64>,
}

impl<'a> DriverAlongPath<'a> {
    fn new(model: &'a GalerkinModel, driver: &'a DriverSpec, ergodic: &'a ErgodicSolution) -> Self {
        let (d1, d2) = (model.d1(), model.d2());
        Self {
            model,
            driver,
            ergodic,
            uses_zu: driver.depends_on_zu(),
            zu: vec![0.0; d1 + d2],
            zg: vec![0.0; d1],
            ginv: vec![0.0; d1 * d1],
        }
    }

    /// Updates `ζ̄(x)` and returns `ψ` there.
    fn eval(&mut self, x: &[f64]) -> f64 {
        let d1 = self.model.d1();
        self.ergodic.surrogate.zeta(x, &mut self.zu);
        let (z, u) = self.zu.split_at(d1);
        if !self.uses_zu {
            return self.driver.eval(x, z, u);
        }
        self.model.g_inv_into(x, &mut self.ginv);
        for (j, o) in self.zg.iter_mut().enumerate() {
            *o = (0..d1).map(|i| z[i] * self.ginv[i * d1 + j]).sum();
        }
        self.driver.eval(x, &self.zg, u)
    }
}

fn engine_for<'a>(
    model: &'a GalerkinModel,
    aug: &'a DriftAugmentation,
    cfg: &BsdeConfig,
    horizon: f64,
    noise: NoiseStream,
) -> Result<(PathEngine<'a>, usize)> {
    let m = ((horizon / cfg.dt).round() as usize).max(2);
    let engine = PathEngine::new(model, aug, &cfg.sim_config(m)?)?.with_noise(noise);
    Ok((engine, m))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicResidual {
    pub horizon: f64,
    /// `v̄(X_0) - v̄(X_T) - ∫ (ψ - λ) dt + ∫ ζ̄ dW` per path.
    pub integrated: Estimate,
    /// `integrated / T`, which estimates the error in `λ`.
    pub per_time: Estimate,
    /// Mean over steps and paths of the squared one-step residual.
    pub mean_square: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// `|E R| > 3 stderr`: a constant error in `λ` of size `δ` shows up as `δ T`.
    pub offset_detected: bool,
}

/// Pathwise identity of the ergodic BSDE on `[0, T]` from `x0`, on fresh paths.
pub fn verify_ergodic_bsde_residual(
    model: &GalerkinModel,
    driver: &DriverSpec,
    ergodic: &ErgodicSolution,
    horizon: f64,
    x0: &StateVector,
    tolerance: f64,
    cfg: &BsdeConfig,
) -> Result<ErgodicResidual> {
    model.check_state(x0)?;
    let aug = DriftAugmentation::none();
    let noise = NoiseStream::new(cfg.seed).derive(RESIDUAL_TAG);
    let (engine, m) = engine_for(model, &aug, cfg, horizon, noise)?;
    let dt = cfg.dt;
    let lambda = ergodic.lambda_hat.mean;
    let d1 = model.d1();
    let per_path = ordered_map(cfg.n_paths, |p| {
        let mut eval = DriverAlongPath::new(model, driver, ergodic);
        let mut total = 0.0;
        let mut squares = 0.0;
        engine.run(p, 0, x0.as_slice(), m, |_, x, dw1, dw2, xn| {
            let psi = eval.eval(x);
            let (z, u) = eval.zu.split_at(d1);
            let mart: f64 = z.iter().zip(dw1).map(|(a, b)| a * b).sum::<f64>()
                + u.iter().zip(dw2).map(|(a, b)| a * b).sum::<f64>();
            let v = ergodic.surrogate.vbar(x);
            let vn = ergodic.surrogate.vbar(xn);
            let r = v - vn - dt * (psi - lambda) + mart;
            total += r;
            squares += r * r;
        })?;
        Ok((total, squares))
    })?;
    let totals: Vec<f64> = per_path.iter().map(|p| p.0).collect();
    let integrated = Estimate::from_samples(&totals);
    let t = m as f64 * dt;
    let mean_square = per_path.iter().map(|p| p.1).sum::<f64>() / (cfg.n_paths * m) as f64;
    Ok(ErgodicResidual {
        horizon: t,
        integrated,
        per_time: Estimate {
            mean: integrated.mean / t,
            stderr: integrated.stderr / t,
        },
        mean_square,
        tolerance,
        passed: mean_square <= tolerance,
        offset_detected: integrated.mean.abs() > 3.0 * integrated.stderr,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HjbEntry {
    pub t: f64,
    pub horizon: f64,
    pub x: Vec<f64>,
    /// `v(x) - P_{T-t}[v](x) - ∫_t^T (P_{s-t}[ψ(·, ∇v Q, ∇v D)](x) - λ) ds`.
    pub residual: Estimate,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HjbVerificationReport {
    pub entries: Vec<HjbEntry>,
    pub all_passed: bool,
}

/// Mild form of the ergodic HJB equation at each `(t, T)` pair and point.
///
/// Every `P_s` is estimated on the same batch of fresh paths from `x`. The
/// `s`-integral is the trapezoid rule on the time grid. Each path then
/// carries one sample of the whole residual, so its standard error is
/// honest.
pub fn verify_mild_hjb(
    model: &GalerkinModel,
    driver: &DriverSpec,
    ergodic: &ErgodicSolution,
    t_pairs: &[(f64, f64)],
    eval_points: &[StateVector],
    cfg: &BsdeConfig,
) -> Result<HjbVerificationReport> {
    if driver.depends_on_zu() && !ergodic.surrogate.has_gradient() {
        return Err(Error::GradientUnavailable(
            "the driver depends on (z, u) but the ergodic solution carries no ζ̄".into(),
        ));
    }
    let aug = DriftAugmentation::none();
    let lambda = ergodic.lambda_hat.mean;
    let dt = cfg.dt;
    let mut entries = Vec::new();
    for (pi, &(t, big_t)) in t_pairs.iter().enumerate() {
        if !(big_t > t) {
            return Err(Error::InvalidParameter(format!("need T > t, got ({t}, {big_t})")));
        }
        for (xi, x) in eval_points.iter().enumerate() {
            model.check_state(x)?;
            let noise = NoiseStream::new(cfg.seed).derive(HJB_TAG + (pi * 1000 + xi) as u64);
            let (engine, m) = engine_for(model, &aug, cfg, big_t - t, noise)?;
            let v0 = ergodic.surrogate.vbar(x.as_slice());
            let samples = ordered_map(cfg.n_paths, |p| {
                let mut eval = DriverAlongPath::new(model, driver, ergodic);
                let mut integral = 0.0;
                let last = engine.run(p, 0, x.as_slice(), m, |k, xk, _, _, _| {
                    let g = eval.eval(xk) - lambda;
                    integral += if k == 0 { 0.5 * dt * g } else { dt * g };
                })?;
                let g_end = eval.eval(&last) - lambda;
                integral += 0.5 * dt * g_end;
                Ok(v0 - ergodic.surrogate.vbar(&last) - integral)
            })?;
            let residual = Estimate::from_samples(&samples);
            entries.push(HjbEntry {
                t,
                horizon: big_t,
                x: x.as_slice().to_vec(),
                residual,
                passed: residual.mean.abs() <= 3.0 * residual.stderr + 1e-12,
            });
        }
    }
    let all_passed = entries.iter().all(|e| e.passed);
    Ok(HjbVerificationReport { entries, all_passed })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LongTimeRatio {
    pub horizons: Vec<f64>,
    /// `v^T(0, x) / T`.
    pub ratios: Vec<Estimate>,
    /// `|ratio - λ|` against the supplied reference.
    pub errors: Vec<f64>,
    pub lambda_ref: f64,
    /// Errors never increase by more than three standard errors along the list.
    pub decreasing: bool,
}

/// `v^T(0, x) / T` from the undiscounted finite-horizon problem with zero terminal value.
#[allow(clippy::too_many_arguments)]
pub fn parabolic_long_time_ratio(
    model: &GalerkinModel,
    driver: &DriverSpec,
    horizons: &[f64],
    x: &StateVector,
    lambda_ref: f64,
    basis: &RegressionBasis,
    cfg: &BsdeConfig,
) -> Result<LongTimeRatio> {
    if horizons.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("horizons must be increasing".into()));
    }
    let zero: Terminal = std::sync::Arc::new(|_| 0.0);
    let mut ratios = Vec::with_capacity(horizons.len());
    for &t in horizons {
        let sol = solve_finite_horizon(model, driver, zero.clone(), t, 0.0, x, basis, cfg)?;
        let h = sol.horizon();
        ratios.push(Estimate {
            mean: sol.y0.mean / h,
            stderr: sol.y0.stderr / h,
        });
    }
    let errors: Vec<f64> = ratios.iter().map(|r| (r.mean - lambda_ref).abs()).collect();
    let decreasing = errors
        .windows(2)
        .zip(ratios.windows(2))
        .all(|(e, r)| e[1] <= e[0] + 3.0 * (r[0].stderr + r[1].stderr) + 1e-12);
    Ok(LongTimeRatio {
        horizons: horizons.to_vec(),
        ratios,
        errors,
        lambda_ref,
        decreasing,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectionCheck {
    pub point: usize,
    /// `"zeta1[i]"` or `"zeta2[i]"`.
    pub component: String,
    /// Reconstructed from finite differences of `v̄`.
    pub finite_difference: Estimate,
    pub zeta: f64,
    pub passed: bool,
    /// Standard error above the size of the difference itself.
    pub noisy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientReport {
    pub h_list: Vec<f64>,
    /// Per point, per coordinate: Richardson-extrapolated `∂_i v̄`.
    pub gradients: Vec<Vec<Estimate>>,
    pub checks: Vec<DirectionCheck>,
    pub mu_hat: f64,
    /// `2 (L_z² M_{G^{-1}}² + L_u²)`.
    pub differentiability_threshold: f64,
    pub differentiability_holds: bool,
    pub all_passed: bool,
}

/// Central differences of `v̄` against `ζ̄1 = ∇v̄ Q G` and `ζ̄2 = ∇v̄ D`.
///
/// `v̄` differences come from discounted solves at the smallest discount of
/// the schedule, with common noise at `x ± h e_i`. Solutions without an
/// α-schedule fall back to differences of their surrogate.
#[allow(clippy::too_many_arguments)]
pub fn gradient_consistency(
    model: &GalerkinModel,
    driver: &DriverSpec,
    ergodic: &ErgodicSolution,
    eval_points: &[StateVector],
    h_list: &[f64],
    mu_hat: f64,
    tolerance: f64,
    basis: &RegressionBasis,
    cfg: &BsdeConfig,
) -> Result<GradientReport> {
    if h_list.is_empty() || h_list.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::InvalidParameter("h_list needs positive steps".into()));
    }
    let mut hs = h_list.to_vec();
    hs.sort_by(|a, b| b.total_cmp(a));
    let (dim, d1, d2) = (model.dim(), model.d1(), model.d2());
    let alpha = ergodic.smallest_alpha();

    // per-path central difference at one step size
    let difference = |x: &StateVector, i: usize, h: f64| -> Result<Vec<f64>> {
        match alpha {
            Some(a) => {
                let pts = [x.shifted(i, h), x.shifted(i, -h)];
                let dv = solve_discounted(model, driver, a, &pts, basis, cfg)?;
                Ok(dv.samples[0].iter().zip(&dv.samples[1]).map(|(p, q)| (p - q) / (2.0 * h)).collect())
            }
            None => {
                let s = &ergodic.surrogate;
                Ok(vec![(s.vbar(x.shifted(i, h).as_slice()) - s.vbar(x.shifted(i, -h).as_slice())) / (2.0 * h)])
            }
        }
    };

    let mut gradients = Vec::with_capacity(eval_points.len());
    let mut checks = Vec::new();
    for (pi, x) in eval_points.iter().enumerate() {
        model.check_state(x)?;
        let mut grad = Vec::with_capacity(dim);
        let mut grad_samples = Vec::with_capacity(dim);
        for i in 0..dim {
            let coarse = difference(x, i, hs[0])?;
            let samples = if hs.len() >= 2 {
                let fine = difference(x, i, hs[hs.len() - 1])?;
                let r2 = (hs[0] / hs[hs.len() - 1]).powi(2);
                fine.iter().zip(&coarse).map(|(f, c)| (r2 * f - c) / (r2 - 1.0)).collect()
            } else {
                coarse
            };
            grad.push(Estimate::from_samples(&samples));
            grad_samples.push(samples);
        }

        let qg = model.q() * model.g_matrix(x.as_slice());
        let dmat = model.d();
        let mut zu = vec![0.0; d1 + d2];
        ergodic.surrogate.zeta(x.as_slice(), &mut zu);
        let n = grad_samples[0].len();
        let mut project = |label: &str, cols: usize, coef: &dyn Fn(usize, usize) -> f64, offset: usize| {
            for c in 0..cols {
                let comp: Vec<f64> = (0..n)
                    .map(|p| (0..dim).map(|i| grad_samples[i][p] * coef(i, c)).sum())
                    .collect();
                let fd = Estimate::from_samples(&comp);
                let zeta = zu[offset + c];
                checks.push(DirectionCheck {
                    point: pi,
                    component: format!("{label}[{c}]"),
                    finite_difference: fd,
                    zeta,
                    passed: (fd.mean - zeta).abs() <= (3.0 * fd.stderr).max(tolerance),
                    noisy: fd.stderr > fd.mean.abs(),
                });
            }
        };
        project("zeta1", d1, &|i, c| qg[(i, c)], 0);
        project("zeta2", d2, &|i, c| dmat[(i, c)], d1);
        gradients.push(grad);
    }

    let c = driver.constants;
    let threshold = 2.0 * (c.lip_z.powi(2) * model.constants().bound_g_inv.powi(2) + c.lip_u.powi(2));
    let all_passed = checks.iter().all(|c| c.passed);
    Ok(GradientReport {
        h_list: hs,
        gradients,
        checks,
        mu_hat,
        differentiability_threshold: threshold,
        differentiability_holds: mu_hat > threshold,
        all_passed,
    })
}
