//! Ergodic costs of control policies and the optimality check against `λ`.
//!
//! Costs are long-run averages of `L(X, γ)` along the controlled dynamics,
//! simulated strongly with the extra drift `Q R1(γ) + D R2(γ)`. The weak
//! formulation by Girsanov reweighting is only used as a cross-check on
//! short horizons, where its density still has moderate variance.

mod policy;

use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use policy::{nearest_control, synthesize_feedback, GammaFn, IndexFn, Policy, PolicyKind};

use crate::error::{Error, Result};
use crate::ergodic::ErgodicSolution;
use crate::forward::{ControlField, DriftAugmentation, PathEngine, SimConfig};
use crate::hamiltonian::ControlStructure;
use crate::model::{GalerkinModel, StateVector};
use crate::parallel::ordered_map;
use crate::stats::Estimate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub dt: f64,
    pub horizon: f64,
    pub burn_in: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub stoch_conv_correction: bool,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            horizon: 50.0,
            burn_in: 5.0,
            n_paths: 1000,
            seed: 0,
            stoch_conv_correction: true,
        }
    }
}

impl CostConfig {
    pub fn new(dt: f64, horizon: f64, burn_in: f64, n_paths: usize, seed: u64) -> Self {
        Self {
            dt,
            horizon,
            burn_in,
            n_paths,
            seed,
            ..Self::default()
        }
    }

    /// Burn-in of five relaxation times `1 / μ̂`.
    pub fn with_relaxation(mut self, mu_hat: f64) -> Self {
        self.burn_in = 5.0 / mu_hat;
        self
    }

    pub fn doubled(&self) -> Self {
        Self {
            horizon: self.burn_in + 2.0 * (self.horizon - self.burn_in),
            ..*self
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.burn_in >= 0.0 && self.burn_in + self.dt < self.horizon) {
            return Err(Error::InvalidParameter(format!(
                "burn-in {} must lie in [0, horizon - dt) for horizon {}",
                self.burn_in, self.horizon
            )));
        }
        if self.n_paths < 2 {
            return Err(Error::InvalidParameter("cost estimation needs at least 2 paths".into()));
        }
        Ok(())
    }

    fn sim(&self, horizon: f64) -> Result<SimConfig> {
        Ok(SimConfig::new(self.dt, horizon, self.n_paths, self.seed)?.with_correction(self.stoch_conv_correction))
    }
}

/// `(1 / (T - burn_in)) ∫_{burn_in}^T L(X_s, γ_s) ds`, averaged over paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostEstimate {
    pub j_hat: f64,
    pub stderr: f64,
    pub horizon_t: f64,
    pub burn_in: f64,
    pub n_paths: usize,
}

impl CostEstimate {
    pub fn estimate(&self) -> Estimate {
        Estimate {
            mean: self.j_hat,
            stderr: self.stderr,
        }
    }
}

/// Extra drift `Q R1(γ(t, x)) + D R2(γ(t, x))` of the controlled dynamics.
pub fn control_drift(cs: &ControlStructure, policy: &Policy) -> DriftAugmentation {
    let grid = Arc::new(cs.clone());
    let (g1, p1) = (grid.clone(), policy.clone());
    let r: ControlField = Arc::new(move |t, x, out: &mut [f64]| out.copy_from_slice(g1.r1(p1.index(t, x))));
    let q: Option<ControlField> = if cs.max_r2() > 0.0 {
        let p2 = policy.clone();
        Some(Arc::new(move |t, x, out: &mut [f64]| out.copy_from_slice(grid.r2(p2.index(t, x)))))
    } else {
        None
    };
    DriftAugmentation {
        p: None,
        q,
        r: Some(r),
        enabled: true,
    }
}

fn check_inputs(model: &GalerkinModel, cs: &ControlStructure, x0: &StateVector, policy: &Policy) -> Result<()> {
    model.check_state(x0)?;
    policy.check(cs)?;
    if cs.d1() != model.d1() || cs.d2() != model.d2() {
        return Err(Error::DimensionMismatch {
            context: "control structure noise dimensions",
            expected: model.d1() + model.d2(),
            got: cs.d1() + cs.d2(),
        });
    }
    Ok(())
}

pub fn ergodic_cost(
    model: &GalerkinModel,
    cs: &ControlStructure,
    x0: &StateVector,
    policy: &Policy,
    cfg: &CostConfig,
) -> Result<CostEstimate> {
    check_inputs(model, cs, x0, policy)?;
    cfg.validate()?;
    let aug = control_drift(cs, policy);
    let sim = cfg.sim(cfg.horizon)?;
    let engine = PathEngine::new(model, &aug, &sim)?;
    let m = engine.n_steps();
    let k_burn = ((cfg.burn_in / cfg.dt).round() as usize).min(m - 1);
    let dt = cfg.dt;
    let samples = ordered_map(cfg.n_paths, |p| {
        let mut acc = 0.0;
        engine.run(p, 0, x0.as_slice(), m, |k, x, _, _, _| {
            if k >= k_burn {
                acc += cs.running_cost(x, policy.index(k as f64 * dt, x));
            }
        })?;
        Ok(acc / (m - k_burn) as f64)
    })?;
    let est = Estimate::from_samples(&samples);
    Ok(CostEstimate {
        j_hat: est.mean,
        stderr: est.stderr,
        horizon_t: m as f64 * dt,
        burn_in: k_burn as f64 * dt,
        n_paths: cfg.n_paths,
    })
}

/// Cost at `T` and at the doubled averaging window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DoublingCheck {
    pub base: CostEstimate,
    pub doubled: CostEstimate,
    pub difference: f64,
    pub combined_stderr: f64,
    pub consistent: bool,
}

pub fn cost_doubling_check(
    model: &GalerkinModel,
    cs: &ControlStructure,
    x0: &StateVector,
    policy: &Policy,
    cfg: &CostConfig,
) -> Result<DoublingCheck> {
    let base = ergodic_cost(model, cs, x0, policy, cfg)?;
    let doubled = ergodic_cost(model, cs, x0, policy, &cfg.doubled())?;
    let difference = doubled.j_hat - base.j_hat;
    let combined_stderr = base.estimate().combined_stderr(&doubled.estimate());
    Ok(DoublingCheck {
        base,
        doubled,
        difference,
        combined_stderr,
        consistent: difference.abs() <= 3.0 * combined_stderr + 1e-12,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapEntry {
    pub policy_id: String,
    pub kind: PolicyKind,
    pub cost: CostEstimate,
    /// `J - λ̂`.
    pub gap: f64,
    pub combined_stderr: f64,
    /// `J >= λ̂ - 3 se`.
    pub lower_bound_ok: bool,
    /// `|J - λ̂| <= 3 se + allowance`, for feedback policies only.
    pub optimality_ok: Option<bool>,
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub lambda_hat: Estimate,
    pub allowance: f64,
    pub entries: Vec<GapEntry>,
    pub all_passed: bool,
}

impl GapReport {
    /// `policy_id,j_hat,stderr,gap,T,burn_in`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "policy_id,j_hat,stderr,gap,T,burn_in")?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                e.policy_id, e.cost.j_hat, e.cost.stderr, e.gap, e.cost.horizon_t, e.cost.burn_in
            )?;
        }
        Ok(())
    }
}

/// Checks `J(γ) >= λ̂` for every policy and `J(γ̄) ≈ λ̂` for feedback policies,
/// where `allowance` absorbs the grid and time discretization.
pub fn verify_bound_and_gap(
    model: &GalerkinModel,
    cs: &ControlStructure,
    ergodic: &ErgodicSolution,
    x0: &StateVector,
    policies: &[Policy],
    cfg: &CostConfig,
    allowance: f64,
) -> Result<GapReport> {
    let lambda = ergodic.lambda_hat;
    let mut entries = Vec::with_capacity(policies.len());
    for policy in policies {
        let cost = ergodic_cost(model, cs, x0, policy, cfg)?;
        let gap = cost.j_hat - lambda.mean;
        let se = cost.estimate().combined_stderr(&lambda);
        let optimality_ok = (policy.kind == PolicyKind::StateFeedback).then(|| gap.abs() <= 3.0 * se + allowance + 1e-12);
        entries.push(GapEntry {
            policy_id: policy.id.clone(),
            kind: policy.kind,
            cost,
            gap,
            combined_stderr: se,
            lower_bound_ok: gap >= -3.0 * se - 1e-12,
            optimality_ok,
            fallbacks: policy.fallback_count(),
        });
    }
    let all_passed = entries.iter().all(|e| e.lower_bound_ok && e.optimality_ok != Some(false));
    Ok(GapReport {
        lambda_hat: lambda,
        allowance,
        entries,
        all_passed,
    })
}

/// `E^γ[∫_0^T L ds]` by direct simulation and by reweighting uncontrolled paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GirsanovReport {
    pub horizon: f64,
    pub direct: Estimate,
    pub reweighted: Estimate,
    pub difference: f64,
    pub combined_stderr: f64,
    /// `(Σ ρ)² / Σ ρ²`.
    pub effective_sample_size: f64,
    /// Sample coefficient of variation of the density.
    pub density_cv: f64,
    pub mean_density: f64,
    /// Effective sample size below 10% of the paths.
    pub inconclusive: bool,
    pub agree: bool,
}

/// Cross-checks the strong controlled dynamics against the weak formulation
/// with density `ρ_T = exp(Σ θ·ΔW - |θ|² dt / 2)`, `θ = (G^{-1} R1(γ), R2(γ))`.
/// Both estimators use the same noise, so `γ ≡ 0` gives identical paths.
pub fn girsanov_consistency_check(
    model: &GalerkinModel,
    cs: &ControlStructure,
    x0: &StateVector,
    policy: &Policy,
    t_short: f64,
    cfg: &CostConfig,
) -> Result<GirsanovReport> {
    check_inputs(model, cs, x0, policy)?;
    let sim = cfg.sim(t_short)?;
    let (d1, d2) = (model.d1(), model.d2());
    let dt = cfg.dt;

    let aug = control_drift(cs, policy);
    let controlled = PathEngine::new(model, &aug, &sim)?;
    let m = controlled.n_steps();
    let direct = ordered_map(cfg.n_paths, |p| {
        let mut acc = 0.0;
        controlled.run(p, 0, x0.as_slice(), m, |k, x, _, _, _| {
            acc += dt * cs.running_cost(x, policy.index(k as f64 * dt, x));
        })?;
        Ok(acc)
    })?;

    let none = DriftAugmentation::none();
    let free = PathEngine::new(model, &none, &sim)?;
    let weighted = ordered_map(cfg.n_paths, |p| {
        let (mut acc, mut log_rho) = (0.0, 0.0);
        let mut ginv = vec![0.0; d1 * d1];
        free.run(p, 0, x0.as_slice(), m, |k, x, dw1, dw2, _| {
            let i = policy.index(k as f64 * dt, x);
            acc += dt * cs.running_cost(x, i);
            model.g_inv_into(x, &mut ginv);
            let r1 = cs.r1(i);
            for (j, w) in dw1.iter().enumerate() {
                let th: f64 = (0..d1).map(|l| ginv[j * d1 + l] * r1[l]).sum();
                log_rho += th * w - 0.5 * th * th * dt;
            }
            for (th, w) in cs.r2(i).iter().zip(dw2).take(d2) {
                log_rho += th * w - 0.5 * th * th * dt;
            }
        })?;
        let rho = log_rho.exp();
        Ok((rho, rho * acc))
    })?;
    let rhos: Vec<f64> = weighted.iter().map(|w| w.0).collect();
    let values: Vec<f64> = weighted.iter().map(|w| w.1).collect();
    let direct = Estimate::from_samples(&direct);
    let reweighted = Estimate::from_samples(&values);
    let rho = Estimate::from_samples(&rhos);
    let (s1, s2) = rhos.iter().fold((0.0, 0.0), |(a, b), r| (a + r, b + r * r));
    let ess = if s2 > 0.0 { s1 * s1 / s2 } else { 0.0 };
    let n = cfg.n_paths as f64;
    let density_cv = rho.stderr * n.sqrt() / rho.mean;
    let difference = reweighted.mean - direct.mean;
    let combined_stderr = direct.combined_stderr(&reweighted);
    let inconclusive = ess < 0.1 * n;
    Ok(GirsanovReport {
        horizon: m as f64 * dt,
        direct,
        reweighted,
        difference,
        combined_stderr,
        effective_sample_size: ess,
        density_cv,
        mean_density: rho.mean,
        inconclusive,
        agree: !inconclusive && difference.abs() <= 3.0 * combined_stderr + 1e-12,
    })
}
