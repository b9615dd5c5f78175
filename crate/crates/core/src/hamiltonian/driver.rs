use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::control::{example2_closed_form, ControlStructure, StateCost};
use crate::model::{CheckOutcome, ValidationReport};

/// `(x, z, u) -> ψ(x, z, u)`.
pub type DriverFn = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync>;

/// Lipschitz constants and sup bound of the driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriverConstants {
    pub lip_x: f64,
    pub lip_z: f64,
    pub lip_u: f64,
    /// Bound on `|ψ(x, 0, 0)|`.
    pub m_psi: f64,
}

/// Concave driver `ψ(x, z, u)`, `z` a `d1` row vector and `u` a `d2` row vector.
#[derive(Clone)]
pub struct DriverSpec {
    name: String,
    d1: usize,
    d2: usize,
    psi: DriverFn,
    pub constants: DriverConstants,
    pub concave_in_zu: bool,
    depends_on_zu: bool,
    constant: Option<f64>,
    control: Option<Arc<ControlStructure>>,
}

impl fmt::Debug for DriverSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriverSpec")
            .field("name", &self.name)
            .field("d1", &self.d1)
            .field("d2", &self.d2)
            .field("constants", &self.constants)
            .field("concave_in_zu", &self.concave_in_zu)
            .finish_non_exhaustive()
    }
}

impl DriverSpec {
    pub fn new(
        name: impl Into<String>,
        d1: usize,
        d2: usize,
        psi: DriverFn,
        constants: DriverConstants,
        concave_in_zu: bool,
    ) -> Self {
        Self {
            name: name.into(),
            d1,
            d2,
            psi,
            constants,
            concave_in_zu,
            depends_on_zu: constants.lip_z > 0.0 || constants.lip_u > 0.0,
            constant: None,
            control: None,
        }
    }

    /// `ψ ≡ c`.
    pub fn constant(c: f64, d1: usize, d2: usize) -> Self {
        let mut d = Self::new(
            format!("constant({c})"),
            d1,
            d2,
            Arc::new(move |_, _, _| c),
            DriverConstants {
                lip_x: 0.0,
                lip_z: 0.0,
                lip_u: 0.0,
                m_psi: c.abs(),
            },
            true,
        );
        d.constant = Some(c);
        d
    }

    /// `ψ(x, z, u) = cos(x_1)`.
    pub fn cos_first(d1: usize, d2: usize) -> Self {
        Self::new(
            "cos_first",
            d1,
            d2,
            Arc::new(|x, _, _| x[0].cos()),
            DriverConstants {
                lip_x: 1.0,
                lip_z: 0.0,
                lip_u: 0.0,
                m_psi: 1.0,
            },
            true,
        )
    }

    /// `ψ(x, z, u) = c z_1` (scalar `z`).
    pub fn linear_z(c: f64, d2: usize) -> Self {
        Self::new(
            format!("linear_z({c})"),
            1,
            d2,
            Arc::new(move |_, z, _| c * z[0]),
            DriverConstants {
                lip_x: 0.0,
                lip_z: c.abs(),
                lip_u: 0.0,
                m_psi: 0.0,
            },
            true,
        )
    }

    /// Closed-form Hamiltonian of the quadratic control problem on `Γ = [-1, 1]`:
    /// `ψ(x, z) = ℓ(x) + h(z_1)` with `h(z) = -z²/4` on `[-2, 2]` and `1 - |z|` outside.
    pub fn quadratic_control(
        state_cost: StateCost,
        cost_lipschitz: f64,
        cost_bound: f64,
        d2: usize,
        control: Option<Arc<ControlStructure>>,
    ) -> Self {
        let psi: DriverFn = Arc::new(move |x, z, _| state_cost(x) + example2_closed_form(z[0]));
        let mut d = Self::new(
            "quadratic_control",
            1,
            d2,
            psi,
            DriverConstants {
                lip_x: cost_lipschitz,
                lip_z: 1.0,
                lip_u: 0.0,
                m_psi: cost_bound,
            },
            true,
        );
        d.control = control;
        d
    }

    /// Hamiltonian `min_γ {L(x, γ) + z·R1(γ) + u·R2(γ)}` evaluated on the control grid.
    pub fn from_control(cs: Arc<ControlStructure>, cost_lipschitz: f64) -> Self {
        let inner = cs.clone();
        let constants = DriverConstants {
            lip_x: cost_lipschitz,
            lip_z: cs.max_r1(),
            lip_u: cs.max_r2(),
            m_psi: cs.bound(),
        };
        let mut d = Self::new(
            "control_grid",
            cs.d1(),
            cs.d2(),
            Arc::new(move |x, z, u| inner.hamiltonian(x, z, u)),
            constants,
            true,
        );
        d.control = Some(cs);
        d
    }

    pub fn with_control(mut self, cs: Arc<ControlStructure>) -> Self {
        self.control = Some(cs);
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn d1(&self) -> usize {
        self.d1
    }
    pub fn d2(&self) -> usize {
        self.d2
    }
    pub fn control(&self) -> Option<&Arc<ControlStructure>> {
        self.control.as_ref()
    }

    /// Value of a constant driver.
    pub fn constant_value(&self) -> Option<f64> {
        self.constant
    }

    pub fn depends_on_zu(&self) -> bool {
        self.depends_on_zu
    }

    #[inline]
    pub fn eval(&self, x: &[f64], z: &[f64], u: &[f64]) -> f64 {
        (self.psi)(x, z, u)
    }
}

/// Sampled check of the driver constants and of midpoint concavity in `(z, u)`.
pub fn validate_driver(driver: &DriverSpec, dim: usize, sample_count: usize, seed: u64) -> ValidationReport {
    let slack = 1.05;
    let radius = 3.0;
    let (d1, d2) = (driver.d1(), driver.d2());
    let c = driver.constants;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize, scale: f64| -> Vec<f64> {
        (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let norm = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();

    #[derive(Default)]
    struct Worst(f64, Vec<Vec<f64>>);
    let mut bound = Worst::default();
    let (mut lx, mut lz, mut lu, mut concave) =
        (Worst::default(), Worst::default(), Worst::default(), Worst::default());
    let offer = |w: &mut Worst, v: f64, wit: &dyn Fn() -> Vec<Vec<f64>>| {
        if !(v <= w.0) {
            w.0 = v;
            w.1 = wit();
        }
    };
    let z0 = vec![0.0; d1];
    let u0 = vec![0.0; d2];
    for k in 0..sample_count.max(2) {
        let small = if k % 2 == 0 { 1.0 } else { 0.01 };
        let x = draw(dim, radius);
        let xp: Vec<f64> = x.iter().zip(draw(dim, radius * small)).map(|(a, b)| a + b).collect();
        let z = draw(d1, radius);
        let zp: Vec<f64> = z.iter().zip(draw(d1, radius * small)).map(|(a, b)| a + b).collect();
        let u = draw(d2, radius);
        let up: Vec<f64> = u.iter().zip(draw(d2, radius * small)).map(|(a, b)| a + b).collect();

        let at0 = driver.eval(&x, &z0, &u0).abs();
        offer(&mut bound, at0, &|| vec![x.clone()]);
        let base = driver.eval(&x, &z, &u);
        let dx = norm(&x, &xp);
        if dx > 0.0 {
            let r = (driver.eval(&xp, &z, &u) - base).abs() / dx;
            offer(&mut lx, r, &|| vec![x.clone(), xp.clone()]);
        }
        let dz = norm(&z, &zp);
        if dz > 0.0 {
            let r = (driver.eval(&x, &zp, &u) - base).abs() / dz;
            offer(&mut lz, r, &|| vec![z.clone(), zp.clone()]);
        }
        let du = norm(&u, &up);
        if du > 0.0 {
            let r = (driver.eval(&x, &z, &up) - base).abs() / du;
            offer(&mut lu, r, &|| vec![u.clone(), up.clone()]);
        }
        let zm: Vec<f64> = z.iter().zip(&zp).map(|(a, b)| 0.5 * (a + b)).collect();
        let um: Vec<f64> = u.iter().zip(&up).map(|(a, b)| 0.5 * (a + b)).collect();
        let gap = 0.5 * (base + driver.eval(&x, &zp, &up)) - driver.eval(&x, &zm, &um);
        offer(&mut concave, gap, &|| vec![z.clone(), zp.clone(), u.clone(), up.clone()]);
    }
    let outcome = |name: &str, w: Worst, allowed: f64| CheckOutcome {
        name: name.into(),
        passed: w.0 <= allowed,
        observed: w.0,
        allowed,
        witness: w.1,
    };
    ValidationReport {
        model: driver.name().to_string(),
        slack,
        sample_count: sample_count.max(2),
        checks: vec![
            outcome("psi_bound_at_zero", bound, slack * c.m_psi),
            outcome("psi_lipschitz_x", lx, slack * c.lip_x),
            outcome("psi_lipschitz_z", lz, slack * c.lip_z),
            outcome("psi_lipschitz_u", lu, slack * c.lip_u),
            outcome("psi_midpoint_concavity", concave, 1e-10),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_drivers_pass_their_own_checks() {
        for d in [
            DriverSpec::constant(1.5, 1, 1),
            DriverSpec::cos_first(1, 1),
            DriverSpec::linear_z(-0.7, 1),
            DriverSpec::quadratic_control(Arc::new(|x: &[f64]| x[0].cos()), 1.0, 1.0, 1, None),
        ] {
            let r = validate_driver(&d, 2, 500, 3);
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn convex_driver_is_flagged() {
        let d = DriverSpec::new(
            "convex",
            1,
            1,
            Arc::new(|_, z, _| z[0].abs()),
            DriverConstants {
                lip_x: 0.0,
                lip_z: 1.0,
                lip_u: 0.0,
                m_psi: 0.0,
            },
            false,
        );
        let r = validate_driver(&d, 1, 200, 1);
        assert!(!r.check("psi_midpoint_concavity").unwrap().passed);
    }
}
