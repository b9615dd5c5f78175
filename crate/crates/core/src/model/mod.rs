//! Galerkin-truncated coefficients of the forward evolution equation
//!
//! ```text
//! dX = (A X + F(X)) dt + Q G(X) dW1 + D dW2
//! ```
//!
//! on a finite coordinate space. `A` is either diagonal (an eigenbasis of a
//! Dirichlet Laplacian) or dense (the boundary-lift block operator), `G(x)` is
//! an invertible `d1 x d1` matrix with a paired inverse, and `Q`, `D` are
//! constant `dim x d1` and `dim x d2` matrices.

mod dissipativity;
mod examples;
mod validate;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{ensure_finite, ensure_len, Error, Result};

pub use dissipativity::{
    joint_dissipativity_certificate, CertificateMethod, CertificateOptions,
    DissipativityCertificate, DissipativityWitness,
};
pub use examples::{
    build_boundary_control_model, build_ou_model, build_reaction_model, BoundaryControlModel,
    HeatField, ReactionModel, ReactionTerm, ScalarFn,
};
pub use validate::{validate_standing_assumptions, CheckOutcome, ValidationOptions, ValidationReport};

/// Tolerance on `|G^{-1}(x) G(x) - I|` (max entry) at every evaluated state.
pub const INVERSE_TOLERANCE: f64 = 1e-10;

pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Writes a row-major `d1 x d1` matrix.
pub type MatrixField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A point of the truncated state space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        ensure_finite(&coords, "state vector")?;
        Ok(Self(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn unit(dim: usize, index: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[index] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &StateVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Copy with `coords[index] += delta`.
    pub fn shifted(&self, index: usize, delta: f64) -> Self {
        let mut v = self.0.clone();
        v[index] += delta;
        Self(v)
    }
}

/// The generator `A` of the linear part.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearPart {
    /// Eigenvalues of a self-adjoint generator in its eigenbasis; the
    /// semigroup is applied exactly.
    Diagonal(DVector<f64>),
    /// General matrix; the semigroup goes through a dense matrix exponential.
    Dense(DMatrix<f64>),
}

impl LinearPart {
    pub fn dim(&self) -> usize {
        match self {
            LinearPart::Diagonal(v) => v.len(),
            LinearPart::Dense(m) => m.nrows(),
        }
    }

    pub fn has_exact_semigroup(&self) -> bool {
        matches!(self, LinearPart::Diagonal(_))
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        match self {
            LinearPart::Diagonal(v) => DMatrix::from_diagonal(v),
            LinearPart::Dense(m) => m.clone(),
        }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            LinearPart::Diagonal(v) => {
                for ((o, xi), l) in out.iter_mut().zip(x).zip(v.iter()) {
                    *o = l * xi;
                }
            }
            LinearPart::Dense(m) => mat_vec(m, x, out),
        }
    }

    /// `e^{tA}` in a form cheap to apply repeatedly.
    pub fn propagator(&self, t: f64) -> Propagator {
        match self {
            LinearPart::Diagonal(v) => Propagator::Diagonal(v.iter().map(|l| (l * t).exp()).collect()),
            LinearPart::Dense(m) => Propagator::Dense((m * t).exp()),
        }
    }
}

/// Precomputed `e^{tA}` for a fixed `t`.
#[derive(Debug, Clone, PartialEq)]
pub enum Propagator {
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

impl Propagator {
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Propagator::Diagonal(d) => {
                for ((o, xi), e) in out.iter_mut().zip(x).zip(d) {
                    *o = e * xi;
                }
            }
            Propagator::Dense(m) => mat_vec(m, x, out),
        }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        match self {
            Propagator::Diagonal(d) => DMatrix::from_diagonal(&DVector::from_column_slice(d)),
            Propagator::Dense(m) => m.clone(),
        }
    }
}

pub fn mat_vec(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for (j, xj) in x.iter().enumerate() {
            s += m[(i, j)] * xj;
        }
        *o = s;
    }
}

/// Declared constants of the standing assumptions on the coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelConstants {
    /// Lipschitz constant of `F`.
    pub lip_f: f64,
    /// Lipschitz constant of `G` in operator norm.
    pub lip_g: f64,
    /// Bound on `|G(x)|`.
    pub bound_g: f64,
    /// Bound on `|G(x)^{-1}|`.
    pub bound_g_inv: f64,
    /// Singularity exponent of the smoothing bound on `e^{sA} D`, in `[0, 1/2)`.
    pub gamma: f64,
    /// Constant `L` in `|e^{sA} D|_HS <= L s^{-gamma}`, singular only at `s = 0`.
    pub decay_l: f64,
}

/// Constants of the reaction-diffusion block structure, used by the 2x2
/// matrix form of joint dissipativity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReactionConstants {
    pub mu_delta: f64,
    pub mu_f: f64,
    pub lip_f: f64,
    pub mu_b: f64,
    pub lip_sigma: f64,
}

/// Values of the coefficients at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub drift: StateVector,
    /// `Q G(x)`, `dim x d1`.
    pub qg: DMatrix<f64>,
    /// `G(x)^{-1}`, `d1 x d1`.
    pub g_inv: DMatrix<f64>,
}

/// Galerkin truncation of `(A, F, Q, G, D)` with its declared constants.
#[derive(Clone)]
pub struct GalerkinModel {
    name: String,
    dim: usize,
    d1: usize,
    d2: usize,
    linear: LinearPart,
    drift: VectorField,
    q: DMatrix<f64>,
    g: MatrixField,
    g_inv: MatrixField,
    d: DMatrix<f64>,
    constants: ModelConstants,
    reaction: Option<ReactionConstants>,
    s_grid: Vec<f64>,
}

impl fmt::Debug for GalerkinModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GalerkinModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("d1", &self.d1)
            .field("d2", &self.d2)
            .field("linear", &self.linear)
            .field("constants", &self.constants)
            .finish_non_exhaustive()
    }
}

/// Default s-grid on which the smoothing bound for `e^{sA} D` is checked.
pub fn default_s_grid() -> Vec<f64> {
    (0..=40).map(|i| 10f64.powf(-4.0 + 5.0 * i as f64 / 40.0)).collect()
}

impl GalerkinModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        linear: LinearPart,
        drift: VectorField,
        q: DMatrix<f64>,
        g: MatrixField,
        g_inv: MatrixField,
        d: DMatrix<f64>,
        constants: ModelConstants,
    ) -> Result<Self> {
        let dim = linear.dim();
        if dim == 0 {
            return Err(Error::InvalidParameter("model dimension must be positive".into()));
        }
        if let LinearPart::Dense(m) = &linear {
            ensure_len("A columns", dim, m.ncols())?;
        }
        ensure_len("Q rows", dim, q.nrows())?;
        ensure_len("D rows", dim, d.nrows())?;
        let (d1, d2) = (q.ncols(), d.ncols());
        if d1 == 0 || d2 == 0 {
            return Err(Error::InvalidParameter("noise dimensions must be positive".into()));
        }
        ensure_finite(q.as_slice(), "Q")?;
        ensure_finite(d.as_slice(), "D")?;
        if !(0.0..0.5).contains(&constants.gamma) {
            return Err(Error::InvalidParameter(format!(
                "smoothing exponent {} outside [0, 1/2)",
                constants.gamma
            )));
        }
        Ok(Self {
            name: name.into(),
            dim,
            d1,
            d2,
            linear,
            drift,
            q,
            g,
            g_inv,
            d,
            constants,
            reaction: None,
            s_grid: default_s_grid(),
        })
    }

    pub fn with_reaction_constants(mut self, reaction: ReactionConstants) -> Self {
        self.reaction = Some(reaction);
        self
    }

    pub fn with_s_grid(mut self, s_grid: Vec<f64>) -> Self {
        self.s_grid = s_grid;
        self
    }

    pub fn with_constants(mut self, constants: ModelConstants) -> Self {
        self.constants = constants;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn d1(&self) -> usize {
        self.d1
    }
    pub fn d2(&self) -> usize {
        self.d2
    }
    pub fn linear(&self) -> &LinearPart {
        &self.linear
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn constants(&self) -> &ModelConstants {
        &self.constants
    }
    pub fn reaction_constants(&self) -> Option<&ReactionConstants> {
        self.reaction.as_ref()
    }
    pub fn s_grid(&self) -> &[f64] {
        &self.s_grid
    }

    pub fn check_state(&self, x: &StateVector) -> Result<()> {
        ensure_len("state vector", self.dim, x.dim())
    }

    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    pub fn g_into(&self, x: &[f64], out: &mut [f64]) {
        (self.g)(x, out)
    }

    pub fn g_inv_into(&self, x: &[f64], out: &mut [f64]) {
        (self.g_inv)(x, out)
    }

    /// `e^{tA} x`.
    pub fn semigroup_apply(&self, t: f64, x: &StateVector) -> Result<StateVector> {
        self.check_state(x)?;
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidParameter(format!("semigroup time {t} must be finite and >= 0")));
        }
        let mut out = vec![0.0; self.dim];
        self.linear.propagator(t).apply(x.as_slice(), &mut out);
        StateVector::new(out)
    }

    /// `(F(x), Q G(x), G(x)^{-1})`, checking the paired inverse.
    pub fn eval_coefficients(&self, x: &StateVector) -> Result<Coefficients> {
        self.check_state(x)?;
        let mut drift = vec![0.0; self.dim];
        self.drift_into(x.as_slice(), &mut drift);
        ensure_finite(&drift, "drift F(x)")?;
        let g = self.g_matrix(x.as_slice());
        let g_inv = self.g_inv_matrix(x.as_slice());
        ensure_finite(g.as_slice(), "G(x)")?;
        ensure_finite(g_inv.as_slice(), "G(x)^{-1}")?;
        let residual = inverse_residual(&g, &g_inv);
        if !(residual <= INVERSE_TOLERANCE) {
            return Err(Error::SingularDiffusion { residual });
        }
        Ok(Coefficients {
            drift: StateVector(drift),
            qg: &self.q * &g,
            g_inv,
        })
    }

    pub fn g_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let mut buf = vec![0.0; self.d1 * self.d1];
        self.g_into(x, &mut buf);
        DMatrix::from_row_slice(self.d1, self.d1, &buf)
    }

    pub fn g_inv_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let mut buf = vec![0.0; self.d1 * self.d1];
        self.g_inv_into(x, &mut buf);
        DMatrix::from_row_slice(self.d1, self.d1, &buf)
    }

    /// `|e^{sA} D|` in Frobenius norm.
    pub fn smoothing_norm(&self, s: f64) -> f64 {
        let e = self.linear.propagator(s).matrix();
        (e * &self.d).norm()
    }
}

/// Max-entry norm of `G^{-1} G - I`.
pub fn inverse_residual(g: &DMatrix<f64>, g_inv: &DMatrix<f64>) -> f64 {
    let prod = g_inv * g;
    let n = prod.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((prod[(i, j)] - target).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn heat_diag(n: usize) -> GalerkinModel {
        let eig = DVector::from_fn(n, |k, _| -((k + 1) as f64).powi(2));
        GalerkinModel::new(
            "heat",
            LinearPart::Diagonal(eig),
            Arc::new(|_, out: &mut [f64]| out.fill(0.0)),
            DMatrix::zeros(n, 1),
            Arc::new(|_, out: &mut [f64]| out[0] = 1.0),
            Arc::new(|_, out: &mut [f64]| out[0] = 1.0),
            DMatrix::identity(n, n),
            ModelConstants {
                lip_f: 0.0,
                lip_g: 0.0,
                bound_g: 1.0,
                bound_g_inv: 1.0,
                gamma: 0.25,
                decay_l: 0.8,
            },
        )
        .unwrap()
    }

    #[test]
    fn semigroup_at_zero_is_identity() {
        let m = heat_diag(4);
        let x = StateVector::new(vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(m.semigroup_apply(0.0, &x).unwrap(), x);
    }

    #[test]
    fn first_dirichlet_mode_decays_like_exp_minus_t() {
        let m = heat_diag(4);
        let y = m.semigroup_apply(1.0, &StateVector::unit(4, 0)).unwrap();
        assert!((y.as_slice()[0] - (-1.0f64).exp()).abs() < 1e-15);
        assert!(y.as_slice()[1..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn semigroup_rejects_bad_input() {
        let m = heat_diag(3);
        assert!(matches!(
            m.semigroup_apply(1.0, &StateVector::zeros(2)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(StateVector::new(vec![f64::NAN]).is_err());
        assert!(m.semigroup_apply(-1.0, &StateVector::zeros(3)).is_err());
    }

    #[test]
    fn dense_semigroup_matches_diagonal_one() {
        let diag = DVector::from_vec(vec![-1.0, -PI, -4.0]);
        let d = LinearPart::Diagonal(diag.clone());
        let m = LinearPart::Dense(DMatrix::from_diagonal(&diag));
        let x = [0.3, -1.0, 2.0];
        let mut a = [0.0; 3];
        let mut b = [0.0; 3];
        d.propagator(0.7).apply(&x, &mut a);
        m.propagator(0.7).apply(&x, &mut b);
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn singular_diffusion_is_rejected() {
        let m = GalerkinModel::new(
            "bad",
            LinearPart::Diagonal(DVector::from_vec(vec![-1.0])),
            Arc::new(|_, out: &mut [f64]| out.fill(0.0)),
            DMatrix::from_element(1, 1, 1.0),
            Arc::new(|_, out: &mut [f64]| out[0] = 2.0),
            Arc::new(|_, out: &mut [f64]| out[0] = 1.0),
            DMatrix::zeros(1, 1),
            ModelConstants {
                lip_f: 0.0,
                lip_g: 0.0,
                bound_g: 2.0,
                bound_g_inv: 1.0,
                gamma: 0.0,
                decay_l: 0.0,
            },
        )
        .unwrap();
        assert!(matches!(
            m.eval_coefficients(&StateVector::zeros(1)),
            Err(Error::SingularDiffusion { .. })
        ));
    }
}
