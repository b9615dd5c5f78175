//! One function per subcommand; each writes its files through an [`OutputWriter`].

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ergobsde_core::control::{
    girsanov_consistency_check, synthesize_feedback, verify_bound_and_gap, GapReport, GirsanovReport, Policy,
};
use ergobsde_core::ergodic::{
    lipschitz_uniformity_diag, parabolic_long_time_ratio, vanishing_discount, verify_ergodic_bsde_residual,
    verify_mild_hjb, ErgodicResidual, ErgodicSolution, HjbVerificationReport, LipschitzReport, LongTimeRatio,
};
use ergobsde_core::forward::{estimate_contraction, estimate_moment_bound, simulate, DecayFit, DriftAugmentation};
use ergobsde_core::hamiltonian::validate_driver;
use ergobsde_core::model::{
    joint_dissipativity_certificate, validate_standing_assumptions, CertificateMethod, CertificateOptions,
    DissipativityCertificate, StateVector, ValidationReport,
};
use ergobsde_core::scenarios::Problem;
use ergobsde_core::stats::Estimate;
use serde::Serialize;

use crate::error::CliError;
use crate::output::{dat_series, OutputWriter, SCHEMA_VERSION};
use crate::scenario::{state, Scenario, SolverSpec};

#[derive(Debug, Serialize)]
struct ValidationSummary<'a> {
    schema_version: u32,
    scenario: &'a str,
    passed: bool,
    model: ValidationReport,
    driver: ValidationReport,
    certificate: Option<DissipativityCertificate>,
    certificate_error: Option<String>,
}

pub fn validate(sc: &Scenario, out: &mut OutputWriter) -> Result<(), CliError> {
    let problem = sc.problem()?;
    let v = &sc.validate;
    let (model_report, driver_report, cert) = out.timed("validate", || {
        let m = validate_standing_assumptions(&problem.model, v.sample_count, v.seed);
        let d = validate_driver(&problem.driver, problem.model.dim(), v.sample_count, v.seed);
        let method = if problem.model.reaction_constants().is_some() {
            CertificateMethod::MatrixInequality
        } else {
            CertificateMethod::SampledInequality
        };
        let opts = CertificateOptions {
            method,
            sample_count: v.sample_count,
            seed: v.seed,
            ..Default::default()
        };
        (m, d, joint_dissipativity_certificate(&problem.model, &opts))
    });
    let (certificate, certificate_error) = match cert {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let passed = model_report.passed()
        && driver_report.passed()
        && certificate.as_ref().is_some_and(|c| c.success);
    out.write_json(
        "validation.json",
        &ValidationSummary {
            schema_version: SCHEMA_VERSION,
            scenario: &sc.name,
            passed,
            model: model_report,
            driver: driver_report,
            certificate,
            certificate_error,
        },
    )?;
    if passed {
        Ok(())
    } else {
        Err(CliError::Validation("standing assumptions failed; see validation.json".into()))
    }
}

#[derive(Debug, Serialize)]
struct SimulateSummary<'a> {
    schema_version: u32,
    scenario: &'a str,
    seed: u64,
    dt: f64,
    horizon: f64,
    n_paths: usize,
    moment_sup: f64,
    tail_slope: Estimate,
    growth_flag: bool,
    x0: Vec<f64>,
    x0_prime: Vec<f64>,
    contraction: DecayFit,
    paths_file: Option<&'static str>,
}

pub fn simulate_stats(sc: &Scenario, out: &mut OutputWriter) -> Result<(), CliError> {
    let spec = sc
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::Validation("scenario has no [simulate] section".into()))?;
    let problem = sc.problem()?;
    let model = &problem.model;
    let dim = model.dim();
    let cfg = spec.sim()?;
    let x0 = state(dim, spec.x0.as_ref(), "simulate.x0")?;
    let x0p = match &spec.x0_prime {
        Some(_) => state(dim, spec.x0_prime.as_ref(), "simulate.x0_prime")?,
        None => x0.shifted(dim - 1, 1.0),
    };
    let moments = out.timed("moments", || estimate_moment_bound(model, &x0, &cfg))?;
    let fit = out.timed("contraction", || estimate_contraction(model, &x0, &x0p, &cfg))?;

    let mut csv = String::from("t,mean_norm,stderr,running_max\n");
    for k in 0..moments.times.len() {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            moments.times[k], moments.mean_norm[k], moments.stderr[k], moments.running_max[k]
        ));
    }
    out.write("moments.csv", csv.as_bytes())?;
    let mut csv = String::from("t,mean_abs_diff,mean_sq_diff\n");
    for k in 0..fit.times.len() {
        csv.push_str(&format!("{},{},{}\n", fit.times[k], fit.mean_abs[k], fit.mean_sq[k]));
    }
    out.write("contraction.csv", csv.as_bytes())?;

    let paths_file = if spec.dump_paths {
        let bundle = out.timed("paths", || simulate(model, &x0, &DriftAugmentation::none(), &cfg))?;
        let mut bytes = Vec::new();
        bundle.write_to(&mut bytes)?;
        out.write("paths.bin", &bytes)?;
        Some("paths.bin")
    } else {
        None
    };
    out.write_json(
        "simulate.json",
        &SimulateSummary {
            schema_version: SCHEMA_VERSION,
            scenario: &sc.name,
            seed: spec.seed,
            dt: spec.dt,
            horizon: spec.horizon,
            n_paths: spec.n_paths,
            moment_sup: moments.sup(),
            tail_slope: moments.tail_slope,
            growth_flag: moments.growth_flag,
            x0: x0.into_vec(),
            x0_prime: x0p.into_vec(),
            contraction: fit,
            paths_file,
        },
    )
}

#[derive(Debug, Serialize)]
struct ErgodicSummary<'a> {
    schema_version: u32,
    scenario: &'a str,
    lambda_hat: f64,
    stderr: f64,
    /// `λ̂` with each evaluation point taken as the reference point.
    lambda_by_point: Vec<Estimate>,
    schedule: &'a [f64],
    seed: u64,
    dt: f64,
    n_paths: usize,
    extrapolation: &'a ergobsde_core::ergodic::Extrapolation,
    weights: &'a [f64],
    x_ref: &'a [f64],
    smallest_alpha: Option<f64>,
    discounted_bound: Vec<BoundRow>,
    lipschitz: Option<LipschitzReport>,
    warnings: &'a [String],
}

/// `|v^α(x)| ≤ M_ψ/α + tail + 3 se` at one discount.
#[derive(Debug, Clone, Serialize)]
pub struct BoundRow {
    pub alpha: f64,
    pub max_abs_v: f64,
    pub allowed: f64,
    pub holds: bool,
}

pub fn bound_rows(sol: &ErgodicSolution, m_psi: f64) -> Vec<BoundRow> {
    sol.alpha_records
        .iter()
        .map(|r| {
            let mut max_abs: f64 = 0.0;
            let mut allowed = f64::INFINITY;
            let mut holds = true;
            for v in &r.values {
                let lim = m_psi / r.alpha + r.tail_bound + 3.0 * v.stderr;
                holds &= v.mean.abs() <= lim;
                max_abs = max_abs.max(v.mean.abs());
                allowed = allowed.min(lim);
            }
            BoundRow {
                alpha: r.alpha,
                max_abs_v: max_abs,
                allowed,
                holds,
            }
        })
        .collect()
}

fn solve_ergodic(sc: &Scenario, problem: &Problem, out: &mut OutputWriter) -> Result<ErgodicSolution, CliError> {
    let solver = sc.solver()?;
    let dim = problem.model.dim();
    let x_ref = state(dim, solver.x_ref.as_ref(), "solver.x_ref")?;
    let points = eval_points(solver, dim)?;
    let basis = solver.basis(dim)?;
    let cfg = solver.ergodic();
    let sol = out.timed("vanishing_discount", || {
        vanishing_discount(
            &problem.model,
            &problem.driver,
            &solver.alpha_schedule,
            &x_ref,
            &points,
            &basis,
            &cfg,
        )
    })?;
    if !sol.lambda_hat.mean.is_finite() {
        return Err(CliError::Numerical("lambda_hat is not finite".into()));
    }
    Ok(sol)
}

fn eval_points(solver: &SolverSpec, dim: usize) -> Result<Vec<StateVector>, CliError> {
    solver
        .eval_points
        .iter()
        .map(|p| state(dim, Some(p), "solver.eval_points"))
        .collect()
}

fn write_ergodic(sc: &Scenario, problem: &Problem, sol: &ErgodicSolution, out: &mut OutputWriter) -> Result<(), CliError> {
    let solver = sc.solver()?;
    let mut csv = Vec::new();
    sol.write_alpha_csv(&mut csv)?;
    out.write("alpha_sweep.csv", &csv)?;

    let dim = problem.model.dim();
    let mut csv = Vec::new();
    let coords: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    writeln!(csv, "{},vbar,stderr", coords.join(","))?;
    for (p, v) in sol.points.iter().zip(&sol.vbar_at) {
        let xs: Vec<String> = p.iter().map(|c| c.to_string()).collect();
        writeln!(csv, "{},{},{}", xs.join(","), v.mean, v.stderr)?;
    }
    out.write("vbar.csv", &csv)?;

    let pairs: Vec<(usize, usize)> = (1..sol.points.len()).map(|j| (0, j)).collect();
    let lipschitz = if pairs.is_empty() {
        None
    } else {
        Some(lipschitz_uniformity_diag(&sol.alpha_records, &sol.points, &pairs)?)
    };
    out.write_json(
        "summary.json",
        &ErgodicSummary {
            schema_version: SCHEMA_VERSION,
            scenario: &sc.name,
            lambda_hat: sol.lambda_hat.mean,
            stderr: sol.lambda_hat.stderr,
            lambda_by_point: (0..sol.points.len()).filter_map(|j| sol.lambda_at(j)).collect(),
            schedule: &solver.alpha_schedule,
            seed: solver.seed,
            dt: solver.dt,
            n_paths: solver.n_paths,
            extrapolation: &sol.extrapolation,
            weights: &sol.weights,
            x_ref: &sol.x_ref,
            smallest_alpha: sol.smallest_alpha(),
            discounted_bound: bound_rows(sol, problem.driver.constants.m_psi),
            lipschitz,
            warnings: &sol.warnings,
        },
    )
}

pub fn ergodic(sc: &Scenario, out: &mut OutputWriter) -> Result<(), CliError> {
    let problem = sc.problem()?;
    let sol = solve_ergodic(sc, &problem, out)?;
    write_ergodic(sc, &problem, &sol, out)
}

#[derive(Debug, Serialize)]
struct HjbSummary<'a> {
    schema_version: u32,
    scenario: &'a str,
    lambda_hat: Estimate,
    seed: u64,
    mild: Option<HjbVerificationReport>,
    long_time: LongTimeRatio,
    residual: Option<ErgodicResidual>,
}

pub fn hjb(sc: &Scenario, out: &mut OutputWriter) -> Result<(), CliError> {
    let spec = sc
        .hjb
        .as_ref()
        .ok_or_else(|| CliError::Validation("scenario has no [hjb] section".into()))?;
    let solver = sc.solver()?;
    let problem = sc.problem()?;
    let (model, driver) = (&problem.model, &problem.driver);
    let dim = model.dim();
    let sol = solve_ergodic(sc, &problem, out)?;
    write_ergodic(sc, &problem, &sol, out)?;

    let mut cfg = solver.bsde();
    cfg.n_paths = spec.n_paths;
    cfg.seed = spec.seed;
    let x_ref = StateVector::new(sol.x_ref.clone())?;
    let points: Vec<StateVector> = if spec.points.is_empty() {
        vec![x_ref.clone()]
    } else {
        spec.points
            .iter()
            .map(|p| state(dim, Some(p), "hjb.points"))
            .collect::<Result<_, _>>()?
    };
    let pairs: Vec<(f64, f64)> = spec.t_pairs.iter().map(|p| (p[0], p[1])).collect();
    let mild = if pairs.is_empty() {
        None
    } else {
        Some(out.timed("mild_hjb", || verify_mild_hjb(model, driver, &sol, &pairs, &points, &cfg))?)
    };
    let x = match &spec.x {
        Some(_) => state(dim, spec.x.as_ref(), "hjb.x")?,
        None => x_ref.clone(),
    };
    let basis = solver.basis(dim)?;
    let long_time = out.timed("long_time", || {
        parabolic_long_time_ratio(model, driver, &spec.horizons, &x, sol.lambda_hat.mean, &basis, &cfg)
    })?;
    let residual = match spec.residual_horizon {
        Some(h) => Some(out.timed("residual", || {
            verify_ergodic_bsde_residual(model, driver, &sol, h, &x_ref, spec.residual_tolerance, &cfg)
        })?),
        None => None,
    };

    let mut csv = String::from("T,ratio,stderr,error\n");
    for i in 0..long_time.horizons.len() {
        let r = long_time.ratios[i];
        csv.push_str(&format!("{},{},{},{}\n", long_time.horizons[i], r.mean, r.stderr, long_time.errors[i]));
    }
    out.write("long_time.csv", csv.as_bytes())?;
    if let Some(m) = &mild {
        let mut csv = format!(
            "t,T,{},residual,stderr,passed\n",
            (0..dim).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",")
        );
        for e in &m.entries {
            let xs: Vec<String> = e.x.iter().map(|c| c.to_string()).collect();
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.t,
                e.horizon,
                xs.join(","),
                e.residual.mean,
                e.residual.stderr,
                e.passed
            ));
        }
        out.write("hjb.csv", csv.as_bytes())?;
    }
    out.write_json(
        "hjb.json",
        &HjbSummary {
            schema_version: SCHEMA_VERSION,
            scenario: &sc.name,
            lambda_hat: sol.lambda_hat,
            seed: spec.seed,
            mild,
            long_time,
            residual,
        },
    )
}

#[derive(Debug, Serialize)]
struct ControlSummary<'a> {
    schema_version: u32,
    scenario: &'a str,
    seed: u64,
    report: GapReport,
    girsanov: Option<GirsanovReport>,
}

pub fn control(sc: &Scenario, out: &mut OutputWriter) -> Result<(), CliError> {
    let spec = sc
        .control
        .as_ref()
        .ok_or_else(|| CliError::Validation("scenario has no [control] section".into()))?;
    let problem = sc.problem()?;
    let cs = problem
        .control
        .clone()
        .ok_or_else(|| CliError::Validation("the driver has no control structure".into()))?;
    let model = &problem.model;
    let sol = solve_ergodic(sc, &problem, out)?;
    write_ergodic(sc, &problem, &sol, out)?;

    let mut policies = Vec::new();
    if sol.surrogate.has_gradient() && problem.driver.depends_on_zu() {
        policies.push(synthesize_feedback(&sol, &cs, model)?);
    }
    for &g in &spec.constant_policies {
        policies.push(Policy::constant(&cs, &vec![g; cs.gamma_dim()])?);
    }
    let cfg = spec.cost();
    let x0 = StateVector::new(sol.x_ref.clone())?;
    let report = out.timed("costs", || {
        verify_bound_and_gap(model, &cs, &sol, &x0, &policies, &cfg, spec.allowance)
    })?;
    let girsanov = match spec.girsanov_horizon {
        Some(t) => {
            let p = Policy::constant(&cs, &vec![spec.girsanov_gamma; cs.gamma_dim()])?;
            Some(out.timed("girsanov", || girsanov_consistency_check(model, &cs, &x0, &p, t, &cfg))?)
        }
        None => None,
    };
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    out.write("control.csv", &csv)?;
    out.write_json(
        "control.json",
        &ControlSummary {
            schema_version: SCHEMA_VERSION,
            scenario: &sc.name,
            seed: spec.seed,
            report,
            girsanov,
        },
    )
}

/// Reads `name` from `dir` when present and returns its rows without the header.
fn csv_rows(dir: &Path, name: &str) -> Result<Option<Vec<Vec<f64>>>, CliError> {
    let path = dir.join(name);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)?;
    let rows = text
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .map_err(|_| CliError::Validation(format!("{name}: `{c}` is not a number")))
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    Ok(Some(rows))
}

#[derive(Debug, Serialize)]
struct ReportSummary<'a> {
    schema_version: u32,
    scenario: &'a str,
    series: Vec<&'static str>,
    lambda_hat: Option<serde_json::Value>,
    stderr: Option<serde_json::Value>,
    contraction_rate: Option<serde_json::Value>,
    long_time_final_error: Option<f64>,
    control_all_passed: Option<serde_json::Value>,
}

/// Collates earlier outputs in `dir` into plot series and one summary.
pub fn report(sc: &Scenario, out: &mut OutputWriter) -> Result<(), CliError> {
    let dir = out.dir().to_path_buf();
    let read_json = |name: &str| -> Result<Option<serde_json::Value>, CliError> {
        let p = dir.join(name);
        if !p.exists() {
            return Ok(None);
        }
        let v = serde_json::from_slice(&fs::read(&p)?)
            .map_err(|e| CliError::Validation(format!("{name}: {e}")))?;
        Ok(Some(v))
    };
    let mut series = Vec::new();
    if let Some(rows) = csv_rows(&dir, "alpha_sweep.csv")? {
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[2])).collect();
        out.write("alpha_v.dat", &dat_series("alpha alpha_v_alpha(x_ref)", &pts))?;
        series.push("alpha_v.dat");
    }
    let mut final_error = None;
    if let Some(rows) = csv_rows(&dir, "long_time.csv")? {
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[1])).collect();
        out.write("long_time.dat", &dat_series("T v_T(0,x)/T", &pts))?;
        final_error = rows.last().map(|r| r[3]);
        series.push("long_time.dat");
    }
    if let Some(rows) = csv_rows(&dir, "contraction.csv")? {
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[1])).collect();
        out.write("contraction.dat", &dat_series("t E|X_t - X'_t|", &pts))?;
        series.push("contraction.dat");
    }
    if series.is_empty() {
        return Err(CliError::Validation(format!(
            "no prior outputs in {}; run ergodic, hjb or simulate first",
            dir.display()
        )));
    }
    let summary = read_json("summary.json")?;
    let simulate = read_json("simulate.json")?;
    let control = read_json("control.json")?;
    out.write_json(
        "report.json",
        &ReportSummary {
            schema_version: SCHEMA_VERSION,
            scenario: &sc.name,
            series,
            lambda_hat: summary.as_ref().map(|s| s["lambda_hat"].clone()),
            stderr: summary.as_ref().map(|s| s["stderr"].clone()),
            contraction_rate: simulate.as_ref().map(|s| s["contraction"]["mu_hat"].clone()),
            long_time_final_error: final_error,
            control_all_passed: control.as_ref().map(|c| c["report"]["all_passed"].clone()),
        },
    )
}
