//! Builders for the benchmark models: a scalar Ornstein–Uhlenbeck process, the
//! boundary-controlled heat equation and the reaction heat equation driven by a
//! scalar diffusion. Both heat equations are truncated to Dirichlet sine modes
//! and carry the scalar process `y` as their last coordinate.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{GalerkinModel, LinearPart, ModelConstants, ReactionConstants};
use crate::error::{Error, Result};
use crate::quadrature::composite_gauss;

/// Scalar coefficient function with its declared constants.
#[derive(Clone)]
pub struct ScalarFn {
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    label: String,
    /// Lipschitz constant.
    pub lipschitz: f64,
    /// `sup |f|` (infinite when unbounded).
    pub bound: f64,
    /// `inf |f|`.
    pub floor: f64,
    /// `mu` with `(f(y) - f(y'))(y - y') <= -mu |y - y'|^2`; `-inf` if unknown.
    pub dissipation: f64,
}

impl fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarFn")
            .field("label", &self.label)
            .field("lipschitz", &self.lipschitz)
            .field("bound", &self.bound)
            .field("floor", &self.floor)
            .finish()
    }
}

impl ScalarFn {
    pub fn new(
        label: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lipschitz: f64,
    ) -> Self {
        Self {
            f: Arc::new(f),
            label: label.into(),
            lipschitz,
            bound: f64::INFINITY,
            floor: 0.0,
            dissipation: f64::NEG_INFINITY,
        }
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = bound;
        self
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn with_dissipation(mut self, mu: f64) -> Self {
        self.dissipation = mu;
        self
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("constant({c})"), move |_| c, 0.0)
            .with_bound(c.abs())
            .with_floor(c.abs())
            .with_dissipation(0.0)
    }

    /// `offset + slope * y`.
    pub fn linear(slope: f64, offset: f64) -> Self {
        let f = Self::new(format!("linear({slope},{offset})"), move |y| offset + slope * y, slope.abs())
            .with_dissipation(-slope);
        if slope == 0.0 {
            f.with_bound(offset.abs()).with_floor(offset.abs())
        } else {
            f
        }
    }

    /// `base + amp * tanh(y)`.
    pub fn tanh_modulated(base: f64, amp: f64) -> Self {
        Self::new(format!("tanh({base},{amp})"), move |y| base + amp * y.tanh(), amp.abs())
            .with_bound(base.abs() + amp.abs())
            .with_floor((base.abs() - amp.abs()).max(0.0))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    #[inline]
    pub fn eval(&self, y: f64) -> f64 {
        (self.f)(y)
    }
}

/// Two-argument nonlinearity `f(x(ξ), y)` of the reaction heat equation.
#[derive(Clone)]
pub struct ReactionTerm {
    f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    label: String,
    /// `|f(x, y) - f(x', y')| <= L (|x - x'| + |y - y'|)`.
    pub lipschitz: f64,
    /// One-sided constant of `f` in its first argument.
    pub mu_f: f64,
    /// `f` ignores its first argument, so its projection is `f(y) P1`.
    uniform_in_x: bool,
}

impl fmt::Debug for ReactionTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReactionTerm")
            .field("label", &self.label)
            .field("lipschitz", &self.lipschitz)
            .field("mu_f", &self.mu_f)
            .finish()
    }
}

impl ReactionTerm {
    pub fn new(
        label: impl Into<String>,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        lipschitz: f64,
        mu_f: f64,
    ) -> Self {
        Self {
            f: Arc::new(f),
            label: label.into(),
            lipschitz,
            mu_f,
            uniform_in_x: false,
        }
    }

    pub fn zero() -> Self {
        let mut r = Self::new("zero", |_, _| 0.0, 0.0, 0.0);
        r.uniform_in_x = true;
        r
    }

    /// `amp * sin(x)`; one-sided constant `-|amp|`.
    pub fn sin_x(amp: f64) -> Self {
        Self::new(format!("sin_x({amp})"), move |x, _| amp * x.sin(), amp.abs(), -amp.abs())
    }

    /// `amp * sin(y)`, a source uniform in space driven by `y`.
    pub fn sin_y(amp: f64) -> Self {
        let mut r = Self::new(format!("sin_y({amp})"), move |_, y| amp * y.sin(), amp.abs(), 0.0);
        r.uniform_in_x = true;
        r
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (self.f)(x, y)
    }
}

/// Dirichlet sine basis `e_k(ξ) = sqrt(2/len) sin(k π ξ / len)` on `(0, len)`
/// with a fixed quadrature for spatial integrals of reconstructed fields.
#[derive(Debug, Clone)]
pub struct HeatField {
    n_modes: usize,
    length: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// Row-major `nodes x n_modes` values of the basis.
    table: Vec<f64>,
}

impl HeatField {
    pub fn new(n_modes: usize, length: f64) -> Self {
        let (nodes, weights) = composite_gauss(0.0, length, 2 * n_modes + 4, 4);
        let mut table = Vec::with_capacity(nodes.len() * n_modes);
        for &xi in &nodes {
            for k in 1..=n_modes {
                table.push(basis(k, xi, length));
            }
        }
        Self {
            n_modes,
            length,
            nodes,
            weights,
            table,
        }
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Dirichlet Laplacian eigenvalues `-(k π / len)^2`.
    pub fn eigenvalues(&self) -> Vec<f64> {
        (1..=self.n_modes)
            .map(|k| -(k as f64 * PI / self.length).powi(2))
            .collect()
    }

    pub fn basis(&self, k: usize, xi: f64) -> f64 {
        basis(k, xi, self.length)
    }

    /// Sine coefficients `<g, e_k>` by a fine composite Gauss rule.
    pub fn project_fn(&self, g: impl Fn(f64) -> f64) -> Vec<f64> {
        let (nodes, weights) = composite_gauss(0.0, self.length, 64 * self.n_modes.max(4), 8);
        (1..=self.n_modes)
            .map(|k| {
                nodes
                    .iter()
                    .zip(&weights)
                    .map(|(xi, w)| w * g(*xi) * basis(k, *xi, self.length))
                    .sum()
            })
            .collect()
    }

    /// Matrix of the multiplication operator by `d` on the truncated basis.
    pub fn multiplication_matrix(&self, d: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let (nodes, weights) = composite_gauss(0.0, self.length, 64 * self.n_modes.max(4), 8);
        let n = self.n_modes;
        let mut m = DMatrix::zeros(n, n);
        for (xi, w) in nodes.iter().zip(&weights) {
            let dv = d(*xi) * w;
            let vals: Vec<f64> = (1..=n).map(|k| basis(k, *xi, self.length)).collect();
            for i in 0..n {
                for j in 0..n {
                    m[(i, j)] += dv * vals[i] * vals[j];
                }
            }
        }
        m
    }

    /// `∫ h(X(ξ)) dξ` for the field with sine coefficients `coords`.
    pub fn integrate_field(&self, coords: &[f64], h: impl Fn(f64) -> f64) -> f64 {
        let n = self.n_modes;
        self.table
            .chunks_exact(n)
            .zip(&self.weights)
            .map(|(row, w)| {
                let value: f64 = row.iter().zip(coords).map(|(b, c)| b * c).sum();
                w * h(value)
            })
            .sum()
    }

    /// `out_k = <h(X(·)), e_k>` for the field with sine coefficients `coords`.
    pub fn project_field(&self, coords: &[f64], h: impl Fn(f64) -> f64, out: &mut [f64]) {
        let n = self.n_modes;
        out[..n].fill(0.0);
        for (row, w) in self.table.chunks_exact(n).zip(&self.weights) {
            let value: f64 = row.iter().zip(coords).map(|(b, c)| b * c).sum();
            let hv = w * h(value);
            for (o, b) in out[..n].iter_mut().zip(row) {
                *o += hv * b;
            }
        }
    }

    pub fn quadrature_nodes(&self) -> &[f64] {
        &self.nodes
    }
}

fn basis(k: usize, xi: f64, length: f64) -> f64 {
    (2.0 / length).sqrt() * (k as f64 * PI * xi / length).sin()
}

fn sup_abs(f: &ScalarFn, lo: f64, hi: f64) -> f64 {
    if f.bound.is_finite() {
        return f.bound;
    }
    (0..=2000)
        .map(|i| f.eval(lo + (hi - lo) * i as f64 / 2000.0).abs())
        .fold(0.0, f64::max)
}

/// Scalar Ornstein–Uhlenbeck process `dX = -a X dt + sigma dW1` (no `W2` noise).
pub fn build_ou_model(a: f64, sigma: f64) -> Result<GalerkinModel> {
    if sigma == 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidParameter("OU diffusion must be non-zero".into()));
    }
    GalerkinModel::new(
        format!("ou(a={a},sigma={sigma})"),
        LinearPart::Diagonal(DVector::from_element(1, -a)),
        Arc::new(|_, out: &mut [f64]| out.fill(0.0)),
        DMatrix::from_element(1, 1, 1.0),
        Arc::new(move |_, out: &mut [f64]| out[0] = sigma),
        Arc::new(move |_, out: &mut [f64]| out[0] = 1.0 / sigma),
        DMatrix::zeros(1, 1),
        ModelConstants {
            lip_f: 0.0,
            lip_g: 0.0,
            bound_g: sigma.abs(),
            bound_g_inv: 1.0 / sigma.abs(),
            gamma: 0.0,
            decay_l: 0.0,
        },
    )
}

/// Boundary-controlled heat equation on `(0, π)` with its boundary process.
#[derive(Debug, Clone)]
pub struct BoundaryControlModel {
    pub model: GalerkinModel,
    pub field: HeatField,
    /// Sine coefficients of the harmonic lift `1 - ξ/π`.
    pub lift: Vec<f64>,
    /// Control gain entering the boundary dynamics as `σ(y) ρ(γ)`.
    pub rho: ScalarFn,
}

pub fn build_boundary_control_model(
    n_modes: usize,
    d_profile: ScalarFn,
    b: ScalarFn,
    sigma: ScalarFn,
    rho: ScalarFn,
) -> Result<BoundaryControlModel> {
    if n_modes == 0 {
        return Err(Error::InvalidParameter("n_modes must be >= 1".into()));
    }
    if !(sigma.floor > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "boundary diffusion needs inf |sigma| > 0, got {}",
            sigma.floor
        )));
    }
    let field = HeatField::new(n_modes, PI);
    let lift = field.project_fn(|xi| 1.0 - xi / PI);
    let eig = field.eigenvalues();
    let dim = n_modes + 1;
    let mut a = DMatrix::zeros(dim, dim);
    for k in 0..n_modes {
        a[(k, k)] = eig[k];
        // -Δ R y on mode k
        a[(k, n_modes)] = -eig[k] * lift[k];
    }
    let d_block = field.multiplication_matrix(|xi| d_profile.eval(xi));
    let mut d = DMatrix::zeros(dim, n_modes);
    d.view_mut((0, 0), (n_modes, n_modes)).copy_from(&d_block);
    let mut q = DMatrix::zeros(dim, 1);
    q[(n_modes, 0)] = 1.0;

    let d_sup = sup_abs(&d_profile, 0.0, PI);
    let constants = ModelConstants {
        lip_f: b.lipschitz,
        lip_g: sigma.lipschitz,
        bound_g: sup_abs(&sigma, -50.0, 50.0),
        bound_g_inv: 1.0 / sigma.floor,
        gamma: 0.25,
        // sum_k e^{-2 k^2 s} <= (1/2) sqrt(π / (2 s)) and <= 0.136 for s >= 1
        decay_l: 0.8 * d_sup,
    };
    let (b2, s1, s2) = (b.clone(), sigma.clone(), sigma);
    let model = GalerkinModel::new(
        format!("boundary_heat(n={n_modes})"),
        LinearPart::Dense(a),
        Arc::new(move |x: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            out[n_modes] = b2.eval(x[n_modes]);
        }),
        q,
        Arc::new(move |x: &[f64], out: &mut [f64]| out[0] = s1.eval(x[n_modes])),
        Arc::new(move |x: &[f64], out: &mut [f64]| out[0] = 1.0 / s2.eval(x[n_modes])),
        d,
        constants,
    )?;
    Ok(BoundaryControlModel {
        model,
        field,
        lift,
        rho,
    })
}

/// Reaction heat equation on `(0, 1)` coupled to a scalar controlled diffusion.
#[derive(Debug, Clone)]
pub struct ReactionModel {
    pub model: GalerkinModel,
    pub field: HeatField,
}

impl ReactionModel {
    /// `x ↦ ∫_0^1 ℓ(X(ξ), y) dξ` on full state vectors.
    pub fn field_average(
        &self,
        ell: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Arc<dyn Fn(&[f64]) -> f64 + Send + Sync> {
        let field = self.field.clone();
        let n = field.n_modes();
        Arc::new(move |x: &[f64]| {
            let y = x[n];
            field.integrate_field(&x[..n], |v| ell(v, y))
        })
    }
}

pub fn build_reaction_model(
    n_modes: usize,
    f: ReactionTerm,
    b: ScalarFn,
    sigma: ScalarFn,
    d_profile: ScalarFn,
) -> Result<ReactionModel> {
    if n_modes == 0 {
        return Err(Error::InvalidParameter("n_modes must be >= 1".into()));
    }
    if !(sigma.floor > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "reaction diffusion needs inf |sigma| > 0, got {}",
            sigma.floor
        )));
    }
    if !sigma.bound.is_finite() {
        return Err(Error::InvalidParameter("sigma must be bounded".into()));
    }
    let field = HeatField::new(n_modes, 1.0);
    let mut eig = field.eigenvalues();
    eig.push(0.0);
    let dim = n_modes + 1;
    let d_block = field.multiplication_matrix(|xi| d_profile.eval(xi));
    let mut d = DMatrix::zeros(dim, n_modes);
    d.view_mut((0, 0), (n_modes, n_modes)).copy_from(&d_block);
    let mut q = DMatrix::zeros(dim, 1);
    q[(n_modes, 0)] = 1.0;

    let d_sup = sup_abs(&d_profile, 0.0, 1.0);
    let constants = ModelConstants {
        lip_f: (2.0 * f.lipschitz.powi(2) + b.lipschitz.powi(2)).sqrt(),
        lip_g: sigma.lipschitz,
        bound_g: sigma.bound,
        bound_g_inv: 1.0 / sigma.floor,
        gamma: 0.25,
        // sum_k e^{-2 k^2 π^2 s} <= (1/2) (2 π s)^{-1/2}
        decay_l: 0.45 * d_sup,
    };
    let reaction = ReactionConstants {
        mu_delta: PI * PI,
        mu_f: f.mu_f,
        lip_f: f.lipschitz,
        mu_b: b.dissipation,
        lip_sigma: sigma.lipschitz,
    };
    let drift_field = field.clone();
    let ones = field.project_fn(|_| 1.0);
    let uniform = f.uniform_in_x;
    let (s1, s2) = (sigma.clone(), sigma);
    let model = GalerkinModel::new(
        format!("reaction_heat(n={n_modes})"),
        LinearPart::Diagonal(DVector::from_vec(eig)),
        Arc::new(move |x: &[f64], out: &mut [f64]| {
            let y = x[n_modes];
            if uniform {
                let c = f.eval(0.0, y);
                for (o, w) in out[..n_modes].iter_mut().zip(&ones) {
                    *o = c * w;
                }
            } else {
                drift_field.project_field(&x[..n_modes], |v| f.eval(v, y), out);
            }
            out[n_modes] = b.eval(y);
        }),
        q,
        Arc::new(move |x: &[f64], out: &mut [f64]| out[0] = s1.eval(x[n_modes])),
        Arc::new(move |x: &[f64], out: &mut [f64]| out[0] = 1.0 / s2.eval(x[n_modes])),
        d,
        constants,
    )?
    .with_reaction_constants(reaction);
    Ok(ReactionModel { model, field })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_standing_assumptions, StateVector};
    use crate::quadrature::adaptive_simpson;

    /// e^{M} by Taylor series with scaling and squaring; independent of the
    /// Padé route used by the implementation.
    fn expm_taylor(m: &DMatrix<f64>) -> DMatrix<f64> {
        let norm = m.abs().row_sum().max();
        let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
        let scaled = m / 2f64.powi(squarings as i32);
        let n = m.nrows();
        let mut result = DMatrix::identity(n, n);
        let mut term = DMatrix::identity(n, n);
        for k in 1..40 {
            term = &term * &scaled / k as f64;
            result += &term;
        }
        for _ in 0..squarings {
            result = &result * &result;
        }
        result
    }

    fn unit_boundary(n: usize) -> BoundaryControlModel {
        build_boundary_control_model(
            n,
            ScalarFn::constant(1.0),
            ScalarFn::linear(0.0, 0.0),
            ScalarFn::constant(1.0),
            ScalarFn::constant(0.0),
        )
        .unwrap()
    }

    #[test]
    fn lift_coefficients_match_quadrature_and_closed_form() {
        let m = unit_boundary(6);
        for k in 1..=6 {
            // split so the symmetric first Simpson estimate cannot stop early
            let oracle: f64 = (0..16)
                .map(|j| {
                    let (a, b) = (j as f64 * PI / 16.0, (j + 1) as f64 * PI / 16.0);
                    adaptive_simpson(
                        &|xi: f64| (1.0 - xi / PI) * (k as f64 * xi).sin() * (2.0 / PI).sqrt(),
                        a,
                        b,
                        1e-14,
                    )
                })
                .sum();
            assert!((m.lift[k - 1] - oracle).abs() < 1e-11, "k={k} {} {oracle}", m.lift[k - 1]);
            assert!((m.lift[k - 1] - (2.0 / PI).sqrt() / k as f64).abs() < 1e-11);
        }
    }

    #[test]
    fn block_semigroup_matches_taylor_oracle() {
        let m = unit_boundary(4);
        let a = m.model.linear().matrix();
        let x = StateVector::new(vec![1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let got = m.model.semigroup_apply(0.5, &x).unwrap();
        let oracle = expm_taylor(&(a * 0.5)) * DVector::from_column_slice(x.as_slice());
        for i in 0..5 {
            assert!((got.as_slice()[i] - oracle[i]).abs() < 1e-10, "i={i}");
        }
        // closed form of the block-triangular exponential
        let lift = &m.lift;
        let first = (-0.5f64).exp() + (1.0 - (-0.5f64).exp()) * lift[0];
        assert!((got.as_slice()[0] - first).abs() < 1e-10);
        assert!((got.as_slice()[4] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn smoothing_bound_holds_with_quarter_exponent() {
        let m = unit_boundary(16);
        let c = m.model.constants();
        assert_eq!(c.gamma, 0.25);
        for &s in m.model.s_grid() {
            // modewise oracle: |e^{sΔ} D|_F^2 = sum_k e^{-2 k^2 s} for d ≡ 1
            let oracle: f64 = (1..=16).map(|k| (-2.0 * (k * k) as f64 * s).exp()).sum::<f64>().sqrt();
            assert!((m.model.smoothing_norm(s) - oracle).abs() < 1e-9, "s={s} {} {oracle}", m.model.smoothing_norm(s));
            assert!(oracle <= c.decay_l * s.powf(-c.gamma), "s={s}");
        }
    }

    #[test]
    fn constant_boundary_model_passes_validation() {
        let m = unit_boundary(1);
        let report = validate_standing_assumptions(&m.model, 200, 3);
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn nonpositive_boundary_diffusion_rejected() {
        let res = build_boundary_control_model(
            3,
            ScalarFn::constant(1.0),
            ScalarFn::linear(-1.0, 0.0),
            ScalarFn::tanh_modulated(0.5, 1.0),
            ScalarFn::constant(1.0),
        );
        assert!(matches!(res, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn reaction_spectrum_and_validation() {
        let r = build_reaction_model(
            6,
            ReactionTerm::sin_x(0.1),
            ScalarFn::linear(-1.0, 0.0),
            ScalarFn::constant(1.0),
            ScalarFn::constant(0.5),
        )
        .unwrap();
        let eig = r.field.eigenvalues();
        assert!((eig[0] + PI * PI).abs() < 1e-12);
        let report = validate_standing_assumptions(&r.model, 300, 5);
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn projected_source_matches_closed_form() {
        let r = build_reaction_model(
            5,
            ReactionTerm::sin_y(0.5),
            ScalarFn::linear(-1.0, 0.0),
            ScalarFn::constant(1.0),
            ScalarFn::constant(1.0),
        )
        .unwrap();
        let mut x = vec![0.0; 6];
        x[5] = 0.7;
        let mut out = vec![0.0; 6];
        r.model.drift_into(&x, &mut out);
        for k in 1..=5 {
            // <c, sqrt2 sin(kπξ)> = c sqrt2 (1 - (-1)^k) / (kπ)
            let c = 0.5 * 0.7f64.sin();
            let exact = c * 2f64.sqrt() * (1.0 - (-1f64).powi(k as i32)) / (k as f64 * PI);
            assert!((out[k - 1] - exact).abs() < 1e-6, "k={k}: {} vs {exact}", out[k - 1]);
        }
        assert!((out[5] + 0.7).abs() < 1e-15);
    }
}
