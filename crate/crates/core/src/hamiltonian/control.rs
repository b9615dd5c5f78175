use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};

/// `x -> ℓ(x)`.
pub type StateCost = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// `(x, γ) -> L(x, γ)`.
pub type RunningCostFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum RunningCost {
    /// `L(x, γ) = ℓ(x) + κ(γ)`, with `κ` tabulated on the control grid.
    Separable { state: StateCost, control: Vec<f64> },
    General(RunningCostFn),
}

/// Control data `(Γ, R1, R2, L)` on a finite grid of `Γ`.
#[derive(Clone)]
pub struct ControlStructure {
    gamma_dim: usize,
    d1: usize,
    d2: usize,
    gammas: Vec<f64>,
    r1: Vec<f64>,
    r2: Vec<f64>,
    cost: RunningCost,
    bound: f64,
}

impl fmt::Debug for ControlStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlStructure")
            .field("n_controls", &self.len())
            .field("gamma_dim", &self.gamma_dim)
            .field("d1", &self.d1)
            .field("d2", &self.d2)
            .field("bound", &self.bound)
            .finish_non_exhaustive()
    }
}

/// Hamiltonian value at the minimizing grid control.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub index: usize,
    pub gamma: Vec<f64>,
    pub value: f64,
}

/// `-z²/4` on `[-2, 2]`, `1 - |z|` outside: `min_{|γ| <= 1} (γ² + z γ)`.
pub fn example2_closed_form(z: f64) -> f64 {
    if z.abs() <= 2.0 {
        -0.25 * z * z
    } else {
        1.0 - z.abs()
    }
}

/// Minimizer of `γ² + z γ` on `[-1, 1]`.
pub fn example2_closed_form_argmin(z: f64) -> f64 {
    (-0.5 * z).clamp(-1.0, 1.0)
}

/// `n` equally spaced points on `[lo, hi]`, endpoints exact.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

impl ControlStructure {
    /// `gammas` is row-major `n x gamma_dim`; `r1`, `r2` map a control to
    /// its `d1`, `d2` vectors.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        gamma_dim: usize,
        gammas: Vec<f64>,
        d1: usize,
        d2: usize,
        r1: impl Fn(&[f64], &mut [f64]),
        r2: impl Fn(&[f64], &mut [f64]),
        cost: RunningCost,
        bound: f64,
    ) -> Result<Self> {
        if gamma_dim == 0 || gammas.is_empty() || gammas.len() % gamma_dim != 0 {
            return Err(Error::InvalidParameter("control grid is empty or ragged".into()));
        }
        let n = gammas.len() / gamma_dim;
        if let RunningCost::Separable { control, .. } = &cost {
            if control.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "tabulated control cost",
                    expected: n,
                    got: control.len(),
                });
            }
        }
        let mut t1 = vec![0.0; n * d1];
        let mut t2 = vec![0.0; n * d2];
        for (i, g) in gammas.chunks_exact(gamma_dim).enumerate() {
            r1(g, &mut t1[i * d1..(i + 1) * d1]);
            r2(g, &mut t2[i * d2..(i + 1) * d2]);
        }
        Ok(Self {
            gamma_dim,
            d1,
            d2,
            gammas,
            r1: t1,
            r2: t2,
            cost,
            bound,
        })
    }

    /// `Γ = [lo, hi]` gridded with `n` points, `R1(γ) = γ`, `R2 = 0`,
    /// `L(x, γ) = ℓ(x) + γ²`; `bound` must dominate `|ℓ| + max(lo², hi²)`.
    pub fn quadratic(state: StateCost, lo: f64, hi: f64, n: usize, d2: usize, bound: f64) -> Result<Self> {
        let grid = uniform_grid(lo, hi, n);
        let kappa = grid.iter().map(|g| g * g).collect();
        Self::new(
            1,
            grid,
            1,
            d2,
            |g, out| out[0] = g[0],
            |_, out| out.fill(0.0),
            RunningCost::Separable { state, control: kappa },
            bound,
        )
    }

    pub fn len(&self) -> usize {
        self.gammas.len() / self.gamma_dim
    }
    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }
    pub fn gamma_dim(&self) -> usize {
        self.gamma_dim
    }
    pub fn d1(&self) -> usize {
        self.d1
    }
    pub fn d2(&self) -> usize {
        self.d2
    }
    pub fn bound(&self) -> f64 {
        self.bound
    }
    pub fn gamma(&self, i: usize) -> &[f64] {
        &self.gammas[i * self.gamma_dim..(i + 1) * self.gamma_dim]
    }
    pub fn r1(&self, i: usize) -> &[f64] {
        &self.r1[i * self.d1..(i + 1) * self.d1]
    }
    pub fn r2(&self, i: usize) -> &[f64] {
        &self.r2[i * self.d2..(i + 1) * self.d2]
    }

    pub fn max_r1(&self) -> f64 {
        (0..self.len()).map(|i| norm(self.r1(i))).fold(0.0, f64::max)
    }

    pub fn max_r2(&self) -> f64 {
        (0..self.len()).map(|i| norm(self.r2(i))).fold(0.0, f64::max)
    }

    pub fn running_cost(&self, x: &[f64], i: usize) -> f64 {
        match &self.cost {
            RunningCost::Separable { state, control } => state(x) + control[i],
            RunningCost::General(f) => f(x, self.gamma(i)),
        }
    }

    /// Grid minimizer of `L(x, γ) + z·R1(γ) + u·R2(γ)`, smallest index on ties.
    pub fn select(&self, x: &[f64], z: &[f64], u: &[f64]) -> Selection {
        let state = match &self.cost {
            RunningCost::Separable { state, .. } => state(x),
            RunningCost::General(_) => 0.0,
        };
        let mut best = (0, f64::INFINITY);
        for i in 0..self.len() {
            let base = match &self.cost {
                RunningCost::Separable { control, .. } => control[i],
                RunningCost::General(f) => f(x, self.gamma(i)),
            };
            let v = base + dot(z, self.r1(i)) + dot(u, self.r2(i));
            if v < best.1 {
                best = (i, v);
            }
        }
        Selection {
            index: best.0,
            gamma: self.gamma(best.0).to_vec(),
            value: best.1 + state,
        }
    }

    pub fn hamiltonian(&self, x: &[f64], z: &[f64], u: &[f64]) -> f64 {
        self.select(x, z, u).value
    }

    /// Largest violation of `|R1|, |R2|, |L(x, ·)| <= c` over the grid and states.
    pub fn bound_violation(&self, states: &[Vec<f64>]) -> f64 {
        let mut worst = self.max_r1().max(self.max_r2()) - self.bound;
        for x in states {
            for i in 0..self.len() {
                worst = worst.max(self.running_cost(x, i).abs() - self.bound);
            }
        }
        worst
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn hamiltonian_from_control(cs: &ControlStructure, x: &[f64], z: &[f64], u: &[f64]) -> f64 {
    cs.hamiltonian(x, z, u)
}

pub fn epsilon_argmin_selection(cs: &ControlStructure, x: &[f64], z: &[f64], u: &[f64]) -> Selection {
    cs.select(x, z, u)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example2(n: usize) -> ControlStructure {
        // ℓ̄ ≡ 0.3 stands in for the spatial average
        ControlStructure::quadratic(Arc::new(|_: &[f64]| 0.3), -1.0, 1.0, n, 2, 1.3).unwrap()
    }

    #[test]
    fn grid_hamiltonian_reproduces_both_branches() {
        let cs = example2(2001);
        let x = [0.0];
        let u = [0.0, 0.0];
        assert!((hamiltonian_from_control(&cs, &x, &[1.0], &u) - (0.3 - 0.25)).abs() < 1e-12);
        assert!((hamiltonian_from_control(&cs, &x, &[0.0], &u) - 0.3).abs() < 1e-15);
        assert!((hamiltonian_from_control(&cs, &x, &[3.0], &u) - (0.3 - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn selections_match_closed_form_minimizers() {
        let cs = example2(2001);
        let u = [0.0, 0.0];
        assert_eq!(epsilon_argmin_selection(&cs, &[0.0], &[1.0], &u).gamma, vec![-0.5]);
        assert_eq!(epsilon_argmin_selection(&cs, &[0.0], &[0.0], &u).gamma, vec![0.0]);
        assert_eq!(epsilon_argmin_selection(&cs, &[0.0], &[3.0], &u).gamma, vec![-1.0]);
    }

    #[test]
    fn closed_form_is_continuous_at_the_junction() {
        assert_eq!(example2_closed_form(2.0), -1.0);
        assert!((example2_closed_form(2.0 + 1e-12) + 1.0).abs() < 1e-11);
        assert_eq!(example2_closed_form(0.0), 0.0);
        assert_eq!(example2_closed_form(-5.0), -4.0);
    }

    #[test]
    fn ties_resolve_to_smallest_index() {
        // L ≡ 0 and R1 = γ²: z = 1 gives ties at ±γ
        let cs = ControlStructure::new(
            1,
            uniform_grid(-1.0, 1.0, 5),
            1,
            1,
            |g, out| out[0] = g[0] * g[0],
            |_, out| out[0] = 0.0,
            RunningCost::General(Arc::new(|_, _| 0.0)),
            1.0,
        )
        .unwrap();
        let s = epsilon_argmin_selection(&cs, &[0.0], &[-1.0], &[0.0]);
        assert_eq!(s.index, 0);
        assert_eq!(s.gamma, vec![-1.0]);
    }

    #[test]
    fn bounds_of_example2_data_hold() {
        let cs = example2(201);
        assert!(cs.bound_violation(&[vec![0.0], vec![5.0]]) <= 0.0);
        assert_eq!(cs.max_r1(), 1.0);
        assert_eq!(cs.max_r2(), 0.0);
    }
}
