use ergobsde_core::model::*;
use ergobsde_core::scenarios;
use proptest::prelude::*;

fn boundary() -> GalerkinModel {
    build_boundary_control_model(
        4,
        ScalarFn::constant(1.0),
        ScalarFn::linear(-1.0, 0.0),
        ScalarFn::tanh_modulated(1.0, 0.25),
        ScalarFn::constant(1.0),
    )
    .unwrap()
    .model
}

fn models() -> Vec<GalerkinModel> {
    vec![
        build_ou_model(1.0, 1.3).unwrap(),
        scenarios::example2(6, 11).unwrap().model,
        boundary(),
    ]
}

fn state(dim: usize, raw: &[f64]) -> StateVector {
    StateVector::new((0..dim).map(|i| raw[i % raw.len()] * (1.0 + i as f64 * 0.1)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn diffusion_inverse_is_exact(raw in prop::collection::vec(-5.0f64..5.0, 8)) {
        for m in models() {
            let x = state(m.dim(), &raw);
            let r = inverse_residual(&m.g_matrix(x.as_slice()), &m.g_inv_matrix(x.as_slice()));
            prop_assert!(r <= 1e-10, "{}: {r}", m.name());
        }
    }

    #[test]
    fn semigroup_law_holds(raw in prop::collection::vec(-3.0f64..3.0, 8), s in 0.0f64..1.5, t in 0.0f64..1.5) {
        for m in models() {
            let x = state(m.dim(), &raw);
            let joint = m.semigroup_apply(s + t, &x).unwrap();
            let split = m.semigroup_apply(s, &m.semigroup_apply(t, &x).unwrap()).unwrap();
            let scale = 1.0 + x.norm();
            prop_assert!(joint.distance(&split) <= 1e-10 * scale, "{}: {}", m.name(), joint.distance(&split));
        }
    }
}

/// Largest eigenvalue of a symmetric 2x2 matrix in closed form.
fn lambda_max(m: [[f64; 2]; 2]) -> f64 {
    let (a, b, d) = (m[0][0], m[0][1], m[1][1]);
    0.5 * (a + d) + (0.25 * (a - d).powi(2) + b * b).sqrt()
}

#[test]
fn example2_certificate_is_the_top_eigenvalue() {
    let p = scenarios::example2(6, 11).unwrap();
    let opts = CertificateOptions {
        method: CertificateMethod::MatrixInequality,
        ..Default::default()
    };
    let cert = joint_dissipativity_certificate(&p.model, &opts).unwrap();
    assert!(cert.success);
    let DissipativityWitness::Eigen { matrix, .. } = cert.witness else {
        panic!("expected an eigen witness");
    };
    assert!((cert.mu_bar + lambda_max(matrix)).abs() <= 1e-12);
    assert!(cert.mu_bar > 0.8 && cert.mu_bar < 0.9, "{}", cert.mu_bar);
}

#[test]
fn declared_constants_dominate_empirical_ratios() {
    for m in models() {
        let report = validate_standing_assumptions(&m, 400, 17);
        for c in &report.checks {
            assert!(c.passed, "{}: {} > {}", c.name, c.observed, c.allowed);
        }
    }
}
