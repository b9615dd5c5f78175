use std::sync::Arc;

use ergobsde_core::bsde::{BsdeConfig, RegressionBasis};
use ergobsde_core::control::*;
use ergobsde_core::ergodic::{vanishing_discount, ErgodicConfig};
use ergobsde_core::hamiltonian::{ControlStructure, DriverSpec, StateCost};
use ergobsde_core::model::{build_ou_model, StateVector};
use ergobsde_core::scenarios;

/// `dX = (-X + γ) dt + dW`, `L = cos x + γ²` on `Γ = [-1, 1]`.
#[test]
fn controlled_ou_policies_respect_the_ergodic_bound() {
    let m = build_ou_model(1.0, 1.0).unwrap();
    let ell: StateCost = Arc::new(|x: &[f64]| x[0].cos());
    let cs = Arc::new(ControlStructure::quadratic(ell.clone(), -1.0, 1.0, 401, 1, 2.0).unwrap());
    let driver = DriverSpec::quadratic_control(ell, 1.0, 1.0, 1, Some(cs.clone()));
    let cfg = ErgodicConfig {
        bsde: BsdeConfig::new(0.02, 1000, 5).with_correction(true),
        ..Default::default()
    };
    let x0 = StateVector::zeros(1);
    let erg = vanishing_discount(&m, &driver, &[0.4, 0.2, 0.1, 0.05], &x0, &[], &RegressionBasis::default_for(1), &cfg).unwrap();
    let mut policies = vec![synthesize_feedback(&erg, &cs, &m).unwrap()];
    for g in [-1.0, -0.3, 0.0, 0.5, 1.0] {
        policies.push(Policy::constant(&cs, &[g]).unwrap());
    }
    let cc = CostConfig::new(0.02, 40.0, 5.0, 600, 9);
    let report = verify_bound_and_gap(&m, &cs, &erg, &x0, &policies, &cc, 0.02).unwrap();
    for e in &report.entries {
        assert!(e.lower_bound_ok, "{}: J = {} vs λ = {:?}", e.policy_id, e.cost.j_hat, erg.lambda_hat);
    }
    assert_eq!(report.entries[0].optimality_ok, Some(true), "{:?}", report.entries[0]);
    assert_eq!(report.entries[0].fallbacks, 0);
}

#[test]
fn example2_girsanov_estimators_agree_on_a_short_horizon() {
    let p = scenarios::example2(4, 201).unwrap();
    let cs = p.control.unwrap();
    let policy = Policy::constant(&cs, &[0.5]).unwrap();
    let cfg = CostConfig::new(0.01, 1.0, 0.0, 2000, 4);
    let r = girsanov_consistency_check(&p.model, &cs, &StateVector::zeros(5), &policy, 1.0, &cfg).unwrap();
    assert!(!r.inconclusive, "{r:?}");
    assert!(r.agree, "{r:?}");
}

#[test]
fn example2_cost_is_stable_under_doubling() {
    let p = scenarios::example2(4, 201).unwrap();
    let cs = p.control.unwrap();
    let policy = Policy::constant(&cs, &[0.0]).unwrap();
    let cfg = CostConfig::new(0.02, 20.0, 6.0, 300, 2);
    let d = cost_doubling_check(&p.model, &cs, &StateVector::zeros(5), &policy, &cfg).unwrap();
    assert!(d.consistent, "{d:?}");
}
