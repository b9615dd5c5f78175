use std::sync::{Arc, OnceLock};

use ergobsde_core::bsde::{BsdeConfig, RegressionBasis};
use ergobsde_core::ergodic::*;
use ergobsde_core::hamiltonian::{DriverConstants, DriverSpec};
use ergobsde_core::model::StateVector;
use ergobsde_core::scenarios;

const SCHEDULE: [f64; 4] = [0.4, 0.2, 0.1, 0.05];

fn cfg(seed: u64) -> ErgodicConfig {
    ErgodicConfig {
        bsde: BsdeConfig::new(0.05, 600, seed).with_correction(true),
        ..Default::default()
    }
}

fn ou_solution() -> &'static ErgodicSolution {
    static SOL: OnceLock<ErgodicSolution> = OnceLock::new();
    SOL.get_or_init(|| {
        let p = scenarios::ou_cos(1.0, 1.0).unwrap();
        let pts = [StateVector::new(vec![0.5]).unwrap(), StateVector::new(vec![-1.0]).unwrap()];
        vanishing_discount(&p.model, &p.driver, &SCHEDULE, &StateVector::zeros(1), &pts, &RegressionBasis::default_for(1), &cfg(21))
            .unwrap()
    })
}

#[test]
fn reference_value_is_zero_exactly() {
    let s = ou_solution();
    assert_eq!(s.vbar_at[0].mean, 0.0);
    assert_eq!(s.vbar_at[0].stderr, 0.0);
    assert_eq!(s.surrogate.vbar(&s.x_ref), 0.0);
}

#[test]
fn adding_a_constant_shifts_lambda_by_it() {
    let p = scenarios::ou_cos(1.0, 1.0).unwrap();
    let c = 0.75;
    let shifted = DriverSpec::new(
        "cos_plus_c",
        1,
        1,
        Arc::new(move |x, _, _| x[0].cos() + c),
        DriverConstants {
            lip_x: 1.0,
            lip_z: 0.0,
            lip_u: 0.0,
            // same truncation horizons as the unshifted run
            m_psi: 1.0,
        },
        true,
    );
    let b = RegressionBasis::default_for(1);
    let x = StateVector::zeros(1);
    let s = vanishing_discount(&p.model, &shifted, &SCHEDULE, &x, &[], &b, &cfg(21)).unwrap();
    let base = ou_solution();
    let d = s.lambda_hat.mean - base.lambda_hat.mean - c;
    assert!(d.abs() <= 2.0 * s.lambda_hat.stderr + 1e-6, "{d}");
}

#[test]
fn lambda_does_not_depend_on_the_reference_point() {
    let p = scenarios::ou_cos(1.0, 1.0).unwrap();
    let b = RegressionBasis::default_for(1);
    let other = vanishing_discount(&p.model, &p.driver, &SCHEDULE, &StateVector::new(vec![1.0]).unwrap(), &[], &b, &cfg(21)).unwrap();
    let base = ou_solution();
    let d = (other.lambda_hat.mean - base.lambda_hat.mean).abs();
    assert!(d <= 3.0 * other.lambda_hat.combined_stderr(&base.lambda_hat), "{:?} {:?}", other.lambda_hat, base.lambda_hat);
}

#[test]
fn interleaved_schedules_agree() {
    let p = scenarios::ou_cos(1.0, 1.0).unwrap();
    let b = RegressionBasis::default_for(1);
    let x = StateVector::zeros(1);
    let ratio3 = vanishing_discount(&p.model, &p.driver, &[0.45, 0.15, 0.05], &x, &[], &b, &cfg(33)).unwrap();
    let base = ou_solution();
    let d = (ratio3.lambda_hat.mean - base.lambda_hat.mean).abs();
    assert!(d <= 3.0 * ratio3.lambda_hat.combined_stderr(&base.lambda_hat), "{:?} {:?}", ratio3.lambda_hat, base.lambda_hat);
}

#[test]
fn injected_lambda_offsets_are_detected() {
    let p = scenarios::ou_cos(1.0, 1.0).unwrap();
    let base = ou_solution();
    let wrong = base.clone().with_lambda(base.lambda_hat.mean + 0.1);
    let trials = 20;
    let mut detected = 0;
    for seed in 0..trials {
        let c = BsdeConfig::new(0.05, 200, 1000 + seed).with_correction(true);
        let r = verify_ergodic_bsde_residual(&p.model, &p.driver, &wrong, 5.0, &StateVector::zeros(1), 1.0, &c).unwrap();
        detected += r.offset_detected as usize;
    }
    assert!(detected as f64 >= 0.95 * trials as f64, "{detected}/{trials}");
}

#[test]
fn lipschitz_quotient_is_uniform_in_alpha() {
    let s = ou_solution();
    let report = lipschitz_uniformity_diag(&s.alpha_records, &s.points, &[(0, 1), (0, 2)]).unwrap();
    assert!(report.uniform_within(0.3), "{:?}", report.variation);
}
