use serde::Serialize;

use super::{DriftAugmentation, PathEngine, SimConfig};
use crate::error::{ensure_finite, Error, Result};
use crate::model::{GalerkinModel, StateVector};
use crate::parallel::ordered_sum;
use crate::stats::{fit_line, Estimate};

/// Differences below this are treated as exact coalescence.
const COALESCED: f64 = 1e-14;

/// Exponential fit of the synchronously coupled distance `E|X^x_t - X^{x'}_t|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub mu_hat: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Rate fitted to `E|X^x_t - X^{x'}_t|^2`.
    pub mu_hat_squared: f64,
    /// `[t_start, t_end]` of the fit.
    pub window: [f64; 2],
    pub times: Vec<f64>,
    pub mean_abs: Vec<f64>,
    pub mean_sq: Vec<f64>,
}

fn log_fit(times: &[f64], values: &[f64], lo: usize, hi: usize) -> Option<crate::stats::LineFit> {
    let (t, y): (Vec<f64>, Vec<f64>) = (lo..=hi)
        .filter(|&k| values[k] > COALESCED)
        .map(|k| (times[k], values[k].ln()))
        .unzip();
    fit_line(&t, &y)
}

pub fn estimate_contraction(
    model: &GalerkinModel,
    x0: &StateVector,
    x0p: &StateVector,
    cfg: &SimConfig,
) -> Result<DecayFit> {
    model.check_state(x0)?;
    model.check_state(x0p)?;
    if x0.distance(x0p) <= COALESCED {
        return Err(Error::DegenerateFit("initial conditions coincide".into()));
    }
    let aug = DriftAugmentation::none();
    let engine = PathEngine::new(model, &aug, cfg)?;
    let m = engine.n_steps();
    let d0 = x0.distance(x0p);
    let sums = ordered_sum(cfg.n_paths, 2 * (m + 1), |p, acc| {
        acc[0] += d0;
        acc[m + 1] += d0 * d0;
        engine.run_pair(p, x0.as_slice(), x0p.as_slice(), m, |k, a, b| {
            let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum();
            acc[k] += d2.sqrt();
            acc[m + 1 + k] += d2;
        })
    })?;
    ensure_finite(&sums, "contraction sums")?;
    let n = cfg.n_paths as f64;
    let mean_abs: Vec<f64> = sums[..=m].iter().map(|s| s / n).collect();
    let mean_sq: Vec<f64> = sums[m + 1..].iter().map(|s| s / n).collect();
    let times: Vec<f64> = (0..=m).map(|k| k as f64 * cfg.dt).collect();

    let floor = COALESCED.max(1e-12 * mean_abs[0]);
    let end = (0..=m).rev().find(|&k| mean_abs[k] > floor).unwrap_or(0);
    if end < 2 {
        return Err(Error::DegenerateFit("coupled paths coalesce immediately".into()));
    }
    // Skip one relaxation time, estimated from a first fit over everything.
    let guess = log_fit(&times, &mean_abs, 0, end)
        .ok_or_else(|| Error::DegenerateFit("no usable differences".into()))?;
    let mut start = 0;
    if guess.slope < 0.0 {
        let t0 = -1.0 / guess.slope;
        start = times.iter().position(|&t| t >= t0).unwrap_or(m);
        if start + 2 > end {
            start = 0;
        }
    }
    let fit = log_fit(&times, &mean_abs, start, end)
        .ok_or_else(|| Error::DegenerateFit("window too short".into()))?;
    let end_sq = (0..=m).rev().find(|&k| mean_sq[k] > floor * floor).unwrap_or(0);
    let fit_sq = log_fit(&times, &mean_sq, start.min(end_sq), end_sq);
    Ok(DecayFit {
        mu_hat: -fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        mu_hat_squared: fit_sq.map_or(f64::NAN, |f| -f.slope),
        window: [times[start], times[end]],
        times,
        mean_abs,
        mean_sq,
    })
}

/// Time series of `E|X_t|` with a growth diagnostic on its tail.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentSeries {
    pub times: Vec<f64>,
    pub mean_norm: Vec<f64>,
    pub stderr: Vec<f64>,
    pub running_max: Vec<f64>,
    /// Across-path mean of the per-path least-squares slope of `|X_t|` over
    /// the last third of the horizon.
    pub tail_slope: Estimate,
    /// Tail slope positive beyond three standard errors.
    pub growth_flag: bool,
}

impl MomentSeries {
    pub fn sup(&self) -> f64 {
        self.running_max.last().copied().unwrap_or(f64::NAN)
    }
}

pub fn estimate_moment_bound(model: &GalerkinModel, x0: &StateVector, cfg: &SimConfig) -> Result<MomentSeries> {
    model.check_state(x0)?;
    let aug = DriftAugmentation::none();
    let engine = PathEngine::new(model, &aug, cfg)?;
    let m = engine.n_steps();
    let times: Vec<f64> = (0..=m).map(|k| k as f64 * cfg.dt).collect();
    let tail_lo = 2 * m / 3;
    let tail_t = &times[tail_lo..];
    let t_mean = tail_t.iter().sum::<f64>() / tail_t.len() as f64;
    let sxx: f64 = tail_t.iter().map(|t| (t - t_mean).powi(2)).sum();
    let slope_w: Vec<f64> = tail_t.iter().map(|t| (t - t_mean) / sxx).collect();

    let x0n = x0.norm();
    let len = 2 * (m + 1) + 2;
    let sums = ordered_sum(cfg.n_paths, len, |p, acc| {
        acc[0] += x0n;
        acc[m + 1] += x0n * x0n;
        let mut slope = if tail_lo == 0 { slope_w[0] * x0n } else { 0.0 };
        engine.run(p, 0, x0.as_slice(), m, |k, _, _, _, next| {
            let r = next.iter().map(|v| v * v).sum::<f64>().sqrt();
            acc[k + 1] += r;
            acc[m + 2 + k] += r * r;
            if k + 1 >= tail_lo {
                slope += slope_w[k + 1 - tail_lo] * r;
            }
        })?;
        acc[2 * m + 2] += slope;
        acc[2 * m + 3] += slope * slope;
        Ok(())
    })?;
    // finite states can still overflow their squared norms
    ensure_finite(&sums, "moment sums")?;
    let n = cfg.n_paths as f64;
    let mean_norm: Vec<f64> = sums[..=m].iter().map(|s| s / n).collect();
    let stderr: Vec<f64> = (0..=m)
        .map(|k| {
            if cfg.n_paths < 2 {
                return 0.0;
            }
            let var = (sums[m + 1 + k] / n - mean_norm[k].powi(2)).max(0.0) * n / (n - 1.0);
            (var / n).sqrt()
        })
        .collect();
    let mut running_max = Vec::with_capacity(m + 1);
    let mut best = f64::NEG_INFINITY;
    for v in &mean_norm {
        best = best.max(*v);
        running_max.push(best);
    }
    let s_mean = sums[2 * m + 2] / n;
    let s_err = if cfg.n_paths < 2 {
        0.0
    } else {
        ((sums[2 * m + 3] / n - s_mean * s_mean).max(0.0) / (n - 1.0)).sqrt()
    };
    Ok(MomentSeries {
        times,
        mean_norm,
        stderr,
        running_max,
        tail_slope: Estimate {
            mean: s_mean,
            stderr: s_err,
        },
        growth_flag: s_mean > 3.0 * s_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_ou_model;

    #[test]
    fn ou_contraction_rate_is_exact() {
        let model = build_ou_model(1.0, 1.0).unwrap();
        let x = StateVector::new(vec![1.0]).unwrap();
        let xp = StateVector::new(vec![-0.5]).unwrap();
        let cfg = SimConfig::new(0.01, 5.0, 8, 1).unwrap();
        let fit = estimate_contraction(&model, &x, &xp, &cfg).unwrap();
        assert!((fit.mu_hat - 1.0).abs() < 1e-9, "{}", fit.mu_hat);
        assert!((fit.mu_hat_squared - 2.0).abs() < 1e-9);
        for (t, d) in fit.times.iter().zip(&fit.mean_abs) {
            assert!((d - 1.5 * (-t).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_starts_are_degenerate() {
        let model = build_ou_model(1.0, 1.0).unwrap();
        let x = StateVector::new(vec![1.0]).unwrap();
        let cfg = SimConfig::new(0.01, 1.0, 4, 1).unwrap();
        assert!(matches!(
            estimate_contraction(&model, &x, &x, &cfg),
            Err(Error::DegenerateFit(_))
        ));
    }

    #[test]
    fn ou_stationary_absolute_moment() {
        let model = build_ou_model(1.0, 1.0).unwrap();
        let x0 = StateVector::zeros(1);
        let cfg = SimConfig::new(0.01, 6.0, 40_000, 4).unwrap().with_correction(true);
        let s = estimate_moment_bound(&model, &x0, &cfg).unwrap();
        // E|N(0, 1/2)| = sqrt(2/π) sqrt(1/2)
        let exact = (2.0 / std::f64::consts::PI).sqrt() * 0.5f64.sqrt();
        let last = s.mean_norm.len() - 1;
        assert!((s.mean_norm[last] - exact).abs() < 4.0 * s.stderr[last], "{}", s.mean_norm[last]);
        assert!(!s.growth_flag);
    }
}
