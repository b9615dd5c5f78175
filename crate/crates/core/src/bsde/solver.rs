use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::basis::{RegressionBasis, Standardizer};
use crate::error::{ensure_len, Error, Result};
use crate::forward::{DriftAugmentation, PathEngine, Scheme, SimConfig};
use crate::hamiltonian::DriverSpec;
use crate::model::{GalerkinModel, StateVector};
use crate::parallel::{ordered_map, ordered_sum};
use crate::regression::{predict, Design};
use crate::rng::{NoiseStream, STEPS_PER_BLOCK};
use crate::stats::Estimate;

/// `x -> ξ(x)`.
pub type Terminal = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Noise family used for the out-of-sample re-evaluation.
const FRESH_TAG: u64 = 0xF5E5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BsdeConfig {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub stoch_conv_correction: bool,
    /// Ridge added to the standardized Gram matrix.
    pub ridge: f64,
    pub max_condition: f64,
    /// Declared bound on the truncated tail of the discounted value.
    pub tail_tolerance: f64,
    /// Longest horizon a discounted solve may truncate at.
    pub horizon_cap: f64,
    /// Re-evaluate the value on independent paths with the fitted coefficients.
    pub fresh_paths: bool,
    /// Keep `Y`, `Z`, `U` on every path and step.
    pub store_paths: bool,
}

impl Default for BsdeConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            n_paths: 10_000,
            seed: 0,
            scheme: Scheme::ExponentialEuler,
            stoch_conv_correction: false,
            ridge: 1e-10,
            max_condition: 1e12,
            tail_tolerance: 1e-2,
            horizon_cap: 5_000.0,
            fresh_paths: false,
            store_paths: false,
        }
    }
}

impl BsdeConfig {
    pub fn new(dt: f64, n_paths: usize, seed: u64) -> Self {
        Self {
            dt,
            n_paths,
            seed,
            ..Self::default()
        }
    }

    pub fn with_correction(mut self, on: bool) -> Self {
        self.stoch_conv_correction = on;
        self
    }

    pub fn with_tail_tolerance(mut self, tol: f64) -> Self {
        self.tail_tolerance = tol;
        self
    }

    pub(crate) fn sim_config(&self, n_steps: usize) -> Result<SimConfig> {
        Ok(SimConfig::new(self.dt, n_steps as f64 * self.dt, self.n_paths, self.seed)?
            .with_scheme(self.scheme)
            .with_correction(self.stoch_conv_correction))
    }
}

/// Regression representation of `(Y_k, Z_k, U_k)` at one time step.
#[derive(Debug, Clone, Serialize)]
pub struct StepFit {
    pub standardizer: Standardizer,
    /// `[intercept, beta...]` of `Y_k`.
    pub y: Vec<f64>,
    /// One coefficient row per component of `(Z, U)`.
    pub zu: Vec<Vec<f64>>,
    pub condition: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepSummary {
    pub t: f64,
    pub mean_y: f64,
    pub stderr_y: f64,
    pub mean_abs_z: f64,
    pub mean_abs_u: f64,
}

/// Pathwise solution arrays, path-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredPaths {
    /// `n_paths x (m + 1)`.
    pub y: Vec<f64>,
    /// `n_paths x m x d1`.
    pub z: Vec<f64>,
    /// `n_paths x m x d2`.
    pub u: Vec<f64>,
}

/// Solution of a Markovian BSDE on a grid of `m` steps started from one point.
#[derive(Clone)]
pub struct BsdeSolution {
    pub alpha: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub x0: Vec<f64>,
    /// Mean of the pathwise estimator of `Y_0`.
    pub y0: Estimate,
    /// Per-path values of that estimator.
    pub y0_samples: Vec<f64>,
    pub times: Vec<f64>,
    /// `m + 1` rows; the terminal row has no `Z`, `U` and reports zeros.
    pub summary: Vec<StepSummary>,
    /// `m` rows, one per step `k < m`.
    pub fits: Vec<StepFit>,
    pub max_condition: f64,
    pub paths: Option<StoredPaths>,
    /// Out-of-sample estimate of `Y_0` when requested.
    pub fresh_y0: Option<Estimate>,
    basis: RegressionBasis,
    terminal: Terminal,
    aug: DriftAugmentation,
    sim: SimConfig,
    d1: usize,
    d2: usize,
}

impl fmt::Debug for BsdeSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BsdeSolution")
            .field("alpha", &self.alpha)
            .field("dt", &self.dt)
            .field("n_steps", &self.n_steps)
            .field("n_paths", &self.n_paths)
            .field("x0", &self.x0)
            .field("y0", &self.y0)
            .field("max_condition", &self.max_condition)
            .finish_non_exhaustive()
    }
}

impl BsdeSolution {
    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    pub fn basis(&self) -> &RegressionBasis {
        &self.basis
    }

    /// Regression value of `Y_k` at `x`; the terminal condition at `k = m`.
    pub fn y_at(&self, k: usize, x: &[f64], work: &mut Vec<f64>) -> f64 {
        if k >= self.n_steps {
            return (self.terminal)(x);
        }
        let f = &self.fits[k];
        work.resize(self.basis.n_features(), 0.0);
        self.basis.features(x, &f.standardizer, work);
        predict(&f.y, work)
    }

    /// Regression value of `(Z_k, U_k)` at `x`, written into `out` (`d1 + d2`).
    pub fn zu_at(&self, k: usize, x: &[f64], out: &mut [f64], work: &mut Vec<f64>) {
        let f = &self.fits[k.min(self.n_steps - 1)];
        work.resize(self.basis.n_features(), 0.0);
        self.basis.features(x, &f.standardizer, work);
        for (o, c) in out.iter_mut().zip(&f.zu) {
            *o = predict(c, work);
        }
    }

    /// Averages `y_at` and `zu_at` over steps `lo..hi`; the discounted solves
    /// are time-homogeneous away from both ends of the grid.
    pub fn window_average(&self, lo: usize, hi: usize, x: &[f64]) -> (f64, Vec<f64>) {
        let hi = hi.min(self.n_steps).max(lo + 1);
        let mut work = Vec::new();
        let mut zu = vec![0.0; self.d1 + self.d2];
        let mut acc = vec![0.0; self.d1 + self.d2];
        let mut y = 0.0;
        for k in lo..hi {
            y += self.y_at(k, x, &mut work);
            self.zu_at(k, x, &mut zu, &mut work);
            for (a, v) in acc.iter_mut().zip(&zu) {
                *a += v;
            }
        }
        let n = (hi - lo) as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        (y / n, acc)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,mean_y,stderr_y,mean_abs_z,mean_abs_u")?;
        for s in &self.summary {
            writeln!(
                w,
                "{},{},{},{},{}",
                s.t, s.mean_y, s.stderr_y, s.mean_abs_z, s.mean_abs_u
            )?;
        }
        Ok(())
    }
}

/// Discounted value `v^α` at evaluation points.
#[derive(Debug, Clone)]
pub struct DiscountedValue {
    pub alpha: f64,
    pub points: Vec<Vec<f64>>,
    pub values: Vec<Estimate>,
    /// Out-of-sample values when the config asks for them.
    pub fresh_values: Vec<Option<Estimate>>,
    pub truncation_t: f64,
    pub tail_bound: f64,
    pub m_psi: f64,
    /// Per point, the per-path samples behind `values`.
    pub samples: Vec<Vec<f64>>,
    pub solutions: Vec<BsdeSolution>,
}

impl DiscountedValue {
    /// Largest excess of `|v^α(x)|` over `M_ψ/α + tail + 3 stderr`; `<= 0` when the bound holds.
    pub fn bound_excess(&self) -> f64 {
        self.values
            .iter()
            .map(|v| v.mean.abs() - (self.m_psi / self.alpha + self.tail_bound + 3.0 * v.stderr))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Residuals of the discrete backward equation along paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    /// Mean over paths and steps of the squared one-step residual.
    pub mean_square: f64,
    pub threshold: f64,
    pub passed: bool,
    /// Largest normalized correlation of residuals with a basis feature.
    pub max_orthogonality: f64,
    pub mean_orthogonality: f64,
    pub per_step_mean_square: Vec<f64>,
}

/// Steps `m` with `(M_ψ/α)(1 + α dt)^{-m} <= τ`, and the resulting tail bound.
pub fn truncation_steps(alpha: f64, m_psi: f64, cfg: &BsdeConfig) -> Result<(usize, f64)> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("discount must be positive, got {alpha}")));
    }
    if !(cfg.tail_tolerance > 0.0) {
        return Err(Error::InvalidParameter("tail tolerance must be positive".into()));
    }
    let scale = m_psi / alpha;
    let rate = (alpha * cfg.dt).ln_1p();
    let needed = if scale <= cfg.tail_tolerance {
        2
    } else {
        ((scale / cfg.tail_tolerance).ln() / rate).ceil() as usize
    }
    .max(2);
    let horizon = needed as f64 * cfg.dt;
    if horizon > cfg.horizon_cap {
        return Err(Error::InfeasibleTolerance {
            tolerance: cfg.tail_tolerance,
            needed: horizon,
            cap: cfg.horizon_cap,
        });
    }
    Ok((needed, scale * (-(needed as f64) * rate).exp()))
}

/// Finite-horizon BSDE with terminal `ξ` and discount `α >= 0` from `x0`.
#[allow(clippy::too_many_arguments)]
pub fn solve_finite_horizon(
    model: &GalerkinModel,
    driver: &DriverSpec,
    terminal: Terminal,
    horizon: f64,
    alpha: f64,
    x0: &StateVector,
    basis: &RegressionBasis,
    cfg: &BsdeConfig,
) -> Result<BsdeSolution> {
    solve_with_drift(model, &DriftAugmentation::none(), driver, terminal, horizon, alpha, x0, basis, cfg)
}

/// As [`solve_finite_horizon`], with extra drift in the forward equation.
#[allow(clippy::too_many_arguments)]
pub fn solve_with_drift(
    model: &GalerkinModel,
    aug: &DriftAugmentation,
    driver: &DriverSpec,
    terminal: Terminal,
    horizon: f64,
    alpha: f64,
    x0: &StateVector,
    basis: &RegressionBasis,
    cfg: &BsdeConfig,
) -> Result<BsdeSolution> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("discount must be >= 0, got {alpha}")));
    }
    let m = ((horizon / cfg.dt).round() as usize).max(2);
    backward(model, aug, driver, terminal, m, alpha, x0, basis, cfg)
}

/// `v^α` at each evaluation point, truncating at the horizon that makes the
/// geometric tail at most `cfg.tail_tolerance`.
pub fn solve_discounted(
    model: &GalerkinModel,
    driver: &DriverSpec,
    alpha: f64,
    eval_points: &[StateVector],
    basis: &RegressionBasis,
    cfg: &BsdeConfig,
) -> Result<DiscountedValue> {
    let m_psi = driver.constants.m_psi;
    let (m, tail_bound) = truncation_steps(alpha, m_psi, cfg)?;
    let zero: Terminal = Arc::new(|_| 0.0);
    let aug = DriftAugmentation::none();
    let mut out = DiscountedValue {
        alpha,
        points: Vec::new(),
        values: Vec::new(),
        fresh_values: Vec::new(),
        truncation_t: m as f64 * cfg.dt,
        tail_bound,
        m_psi,
        samples: Vec::new(),
        solutions: Vec::new(),
    };
    for x in eval_points {
        let sol = backward(model, &aug, driver, zero.clone(), m, alpha, x, basis, cfg)?;
        out.points.push(x.as_slice().to_vec());
        out.values.push(sol.y0);
        out.fresh_values.push(sol.fresh_y0);
        out.samples.push(sol.y0_samples.clone());
        out.solutions.push(sol);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn backward(
    model: &GalerkinModel,
    aug: &DriftAugmentation,
    driver: &DriverSpec,
    terminal: Terminal,
    m: usize,
    alpha: f64,
    x0: &StateVector,
    basis: &RegressionBasis,
    cfg: &BsdeConfig,
) -> Result<BsdeSolution> {
    model.check_state(x0)?;
    basis.check_dim(model.dim())?;
    let (dim, d1, d2) = (model.dim(), model.d1(), model.d2());
    ensure_len("driver z dimension", d1, driver.d1())?;
    ensure_len("driver u dimension", d2, driver.d2())?;
    let nz = d1 + d2;
    let sim = cfg.sim_config(m)?;
    let engine = PathEngine::new(model, aug, &sim)?;
    let n = cfg.n_paths;
    let dt = cfg.dt;
    let block = STEPS_PER_BLOCK;
    let n_blocks = m.div_ceil(block);
    let start = x0.as_slice();

    // forward pass keeping one state per block
    let forward = ordered_map(n, |p| {
        let mut ck = Vec::with_capacity(n_blocks * dim);
        ck.extend_from_slice(start);
        let last = engine.run(p, 0, start, m, |k, _, _, _, xn| {
            if (k + 1) % block == 0 && k + 1 < m {
                ck.extend_from_slice(xn);
            }
        })?;
        Ok((ck, last))
    })?;
    let mut checkpoints = vec![0.0; n_blocks * n * dim];
    let mut s = vec![0.0; n];
    for (p, (ck, last)) in forward.iter().enumerate() {
        for b in 0..n_blocks {
            checkpoints[(b * n + p) * dim..(b * n + p + 1) * dim].copy_from_slice(&ck[b * dim..(b + 1) * dim]);
        }
        s[p] = terminal(last);
    }
    let terminal_mean = Estimate::from_samples(&s);
    let terminal_values = s.clone();
    drop(forward);

    let pf = basis.n_features();
    let inv = 1.0 / (1.0 + alpha * dt);
    let mut fitted = s.clone();
    let mut fits: Vec<Option<StepFit>> = vec![None; m];
    let mut summary = vec![
        StepSummary {
            t: 0.0,
            mean_y: 0.0,
            stderr_y: 0.0,
            mean_abs_z: 0.0,
            mean_abs_u: 0.0,
        };
        m + 1
    ];
    summary[m] = StepSummary {
        t: m as f64 * dt,
        mean_y: terminal_mean.mean,
        stderr_y: terminal_mean.stderr,
        mean_abs_z: 0.0,
        mean_abs_u: 0.0,
    };
    let mut stored = cfg.store_paths.then(|| StoredPaths {
        y: vec![0.0; n * (m + 1)],
        z: vec![0.0; n * m * d1],
        u: vec![0.0; n * m * d2],
    });
    if let Some(st) = stored.as_mut() {
        for p in 0..n {
            st.y[p * (m + 1) + m] = terminal_values[p];
        }
    }

    let mut blk_x = vec![0.0; (block + 1) * n * dim];
    let mut blk_w = vec![0.0; block * n * nz];
    let mut phi = Vec::new();
    let mut next_phi = vec![0.0; pf];
    let mut targets = vec![0.0; n * nz];
    let mut zu = vec![0.0; nz];
    let mut zg = vec![0.0; d1];
    let mut ginv = vec![0.0; d1 * d1];
    let mut max_condition: f64 = 1.0;
    let uses_zu = driver.depends_on_zu();

    for b in (0..n_blocks).rev() {
        let k0 = b * block;
        let len = block.min(m - k0);
        for p in 0..n {
            let x = &checkpoints[(b * n + p) * dim..(b * n + p + 1) * dim];
            blk_x[p * dim..(p + 1) * dim].copy_from_slice(x);
            engine.run(p, k0, x, len, |k, _, dw1, dw2, xn| {
                let j = k - k0;
                let w = &mut blk_w[(j * n + p) * nz..(j * n + p + 1) * nz];
                w[..d1].copy_from_slice(dw1);
                w[d1..].copy_from_slice(dw2);
                blk_x[((j + 1) * n + p) * dim..((j + 1) * n + p + 1) * dim].copy_from_slice(xn);
            })?;
        }
        for k in (k0..k0 + len).rev() {
            let j = k - k0;
            let xk = &blk_x[j * n * dim..(j + 1) * n * dim];
            let w = &blk_w[j * n * nz..(j + 1) * n * nz];
            let st = basis.standardizer(xk, dim);
            basis.design(xk, dim, &st, &mut phi);

            // E_k[(Y_{k+1} - Y_{k+1}(X_k)) ΔW] / dt; the baseline removes the
            // level of Y from the regression noise
            for p in 0..n {
                let x = &xk[p * dim..(p + 1) * dim];
                let base = match fits.get(k + 1).and_then(|f| f.as_ref()) {
                    Some(f) => {
                        basis.features(x, &f.standardizer, &mut next_phi);
                        predict(&f.y, &next_phi)
                    }
                    None => terminal(x),
                };
                let d = (fitted[p] - base) / dt;
                for i in 0..nz {
                    targets[p * nz + i] = d * w[p * nz + i];
                }
            }
            let design = Design::new(&phi, pf, cfg.ridge, cfg.max_condition, k)?;
            max_condition = max_condition.max(design.condition);
            let zc = design.solve(&phi, &targets, nz, k)?;

            let (mut sum_z, mut sum_u) = (0.0, 0.0);
            for p in 0..n {
                let x = &xk[p * dim..(p + 1) * dim];
                let row = &phi[p * pf..(p + 1) * pf];
                for (o, c) in zu.iter_mut().zip(&zc) {
                    *o = predict(c, row);
                }
                let (z, u) = zu.split_at(d1);
                let psi = if uses_zu {
                    model.g_inv_into(x, &mut ginv);
                    for (jj, o) in zg.iter_mut().enumerate() {
                        *o = (0..d1).map(|i| z[i] * ginv[i * d1 + jj]).sum();
                    }
                    driver.eval(x, &zg, u)
                } else {
                    driver.eval(x, z, u)
                };
                let mart: f64 = zu.iter().zip(&w[p * nz..(p + 1) * nz]).map(|(a, b)| a * b).sum();
                s[p] = (s[p] + dt * psi - mart) * inv;
                if !s[p].is_finite() {
                    return Err(Error::NonFinite("backward value"));
                }
                sum_z += z.iter().map(|v| v * v).sum::<f64>().sqrt();
                sum_u += u.iter().map(|v| v * v).sum::<f64>().sqrt();
                if let Some(stp) = stored.as_mut() {
                    stp.z[(p * m + k) * d1..(p * m + k + 1) * d1].copy_from_slice(z);
                    stp.u[(p * m + k) * d2..(p * m + k + 1) * d2].copy_from_slice(u);
                }
            }
            let yc = design.solve(&phi, &s, 1, k)?.swap_remove(0);
            for p in 0..n {
                fitted[p] = predict(&yc, &phi[p * pf..(p + 1) * pf]);
            }
            if let Some(stp) = stored.as_mut() {
                for p in 0..n {
                    stp.y[p * (m + 1) + k] = fitted[p];
                }
            }
            let est = Estimate::from_samples(&s);
            summary[k] = StepSummary {
                t: k as f64 * dt,
                mean_y: est.mean,
                stderr_y: est.stderr,
                mean_abs_z: sum_z / n as f64,
                mean_abs_u: sum_u / n as f64,
            };
            fits[k] = Some(StepFit {
                standardizer: st,
                y: yc,
                zu: zc,
                condition: design.condition,
            });
        }
    }

    let y0 = Estimate::from_samples(&s);
    let mut sol = BsdeSolution {
        alpha,
        dt,
        n_steps: m,
        n_paths: n,
        seed: cfg.seed,
        x0: start.to_vec(),
        y0,
        y0_samples: s,
        times: (0..=m).map(|k| k as f64 * dt).collect(),
        summary,
        fits: fits.into_iter().map(|f| f.expect("every step fitted")).collect(),
        max_condition,
        paths: stored,
        fresh_y0: None,
        basis: basis.clone(),
        terminal,
        aug: aug.clone(),
        sim,
        d1,
        d2,
    };
    if cfg.fresh_paths {
        let noise = NoiseStream::new(cfg.seed).derive(FRESH_TAG);
        let fresh = replay(&sol, model, driver, noise, n, false)?;
        sol.fresh_y0 = Some(Estimate::from_samples(&fresh.values));
    }
    Ok(sol)
}

struct Replay {
    values: Vec<f64>,
    /// Per step: `[Σ r², Σ r φ_1.., Σ φ_1².., ]`.
    moments: Vec<f64>,
}

/// Re-runs the forward paths with the fitted coefficients: the pathwise
/// value estimator and, when asked, the one-step residual moments.
fn replay(
    sol: &BsdeSolution,
    model: &GalerkinModel,
    driver: &DriverSpec,
    noise: NoiseStream,
    n_paths: usize,
    residuals: bool,
) -> Result<Replay> {
    let engine = PathEngine::new(model, &sol.aug, &sol.sim)?.with_noise(noise);
    let (m, d1, d2) = (sol.n_steps, sol.d1, sol.d2);
    let nz = d1 + d2;
    let pf = sol.basis.n_features();
    let width = 1 + 2 * pf;
    let dt = sol.dt;
    let alpha = sol.alpha;
    let inv = 1.0 / (1.0 + alpha * dt);
    let uses_zu = driver.depends_on_zu();
    let values = ordered_map(n_paths, |p| {
        let mut work = Vec::new();
        let mut zu = vec![0.0; nz];
        let mut zg = vec![0.0; d1];
        let mut ginv = vec![0.0; d1 * d1];
        let mut acc = 0.0;
        let mut disc = 1.0;
        let last = engine.run(p, 0, &sol.x0, m, |k, x, dw1, dw2, _| {
            sol.zu_at(k, x, &mut zu, &mut work);
            let psi = driver_value(driver, model, uses_zu, x, &zu, d1, &mut zg, &mut ginv);
            disc *= inv;
            let mart: f64 = zu[..d1].iter().zip(dw1).map(|(a, b)| a * b).sum::<f64>()
                + zu[d1..].iter().zip(dw2).map(|(a, b)| a * b).sum::<f64>();
            acc += disc * (dt * psi - mart);
        })?;
        Ok(acc + disc * (sol.terminal)(&last))
    })?;
    let moments = if residuals {
        ordered_sum(n_paths, m * width, |p, out| {
            let mut work = Vec::new();
            let mut feats = vec![0.0; pf];
            let mut zu = vec![0.0; nz];
            let mut zg = vec![0.0; d1];
            let mut ginv = vec![0.0; d1 * d1];
            engine.run(p, 0, &sol.x0, m, |k, x, dw1, dw2, xn| {
                let f = &sol.fits[k];
                sol.basis.features(x, &f.standardizer, &mut feats);
                let yk = predict(&f.y, &feats);
                for (o, c) in zu.iter_mut().zip(&f.zu) {
                    *o = predict(c, &feats);
                }
                let psi = driver_value(driver, model, uses_zu, x, &zu, d1, &mut zg, &mut ginv);
                let mart: f64 = zu[..d1].iter().zip(dw1).map(|(a, b)| a * b).sum::<f64>()
                    + zu[d1..].iter().zip(dw2).map(|(a, b)| a * b).sum::<f64>();
                let y_next = sol.y_at(k + 1, xn, &mut work);
                let r = yk / inv - y_next - dt * psi + mart;
                let row = &mut out[k * width..(k + 1) * width];
                row[0] += r * r;
                for j in 0..pf {
                    row[1 + j] += r * feats[j];
                    row[1 + pf + j] += feats[j] * feats[j];
                }
            })?;
            Ok(())
        })?
    } else {
        Vec::new()
    };
    Ok(Replay { values, moments })
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn driver_value(
    driver: &DriverSpec,
    model: &GalerkinModel,
    uses_zu: bool,
    x: &[f64],
    zu: &[f64],
    d1: usize,
    zg: &mut [f64],
    ginv: &mut [f64],
) -> f64 {
    let (z, u) = zu.split_at(d1);
    if !uses_zu {
        return driver.eval(x, z, u);
    }
    model.g_inv_into(x, ginv);
    for (j, o) in zg.iter_mut().enumerate() {
        *o = (0..d1).map(|i| z[i] * ginv[i * d1 + j]).sum();
    }
    driver.eval(x, zg, u)
}

/// One-step residual `(1 + α dt) Y_k − Y_{k+1} − dt ψ + Z ΔW¹ + U ΔW²` of the
/// fitted solution along its own paths, in mean square, and its empirical
/// correlation with the basis features.
pub fn residual_diagnostic(
    solution: &BsdeSolution,
    model: &GalerkinModel,
    driver: &DriverSpec,
    threshold: f64,
) -> Result<ResidualReport> {
    let noise = NoiseStream::new(solution.seed);
    let n = solution.n_paths;
    let rep = replay(solution, model, driver, noise, n, true)?;
    let pf = solution.basis.n_features();
    let width = 1 + 2 * pf;
    let nf = n as f64;
    let mut per_step = Vec::with_capacity(solution.n_steps);
    let (mut max_orth, mut sum_orth, mut count): (f64, f64, usize) = (0.0, 0.0, 0);
    for row in rep.moments.chunks_exact(width) {
        let ms = row[0] / nf;
        per_step.push(ms);
        for j in 0..pf {
            let ff = row[1 + pf + j] / nf;
            if ms > 0.0 && ff > 1e-24 {
                let c = (row[1 + j] / nf).abs() / (ms * ff).sqrt();
                max_orth = max_orth.max(c);
                sum_orth += c;
                count += 1;
            }
        }
    }
    let mean_square = per_step.iter().sum::<f64>() / per_step.len().max(1) as f64;
    Ok(ResidualReport {
        mean_square,
        threshold,
        passed: mean_square <= threshold,
        max_orthogonality: max_orth,
        mean_orthogonality: if count > 0 { sum_orth / count as f64 } else { 0.0 },
        per_step_mean_square: per_step,
    })
}
