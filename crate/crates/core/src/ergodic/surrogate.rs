use std::fmt;
use std::sync::Arc;

use crate::bsde::{BsdeSolution, RegressionBasis, StepFit};
use crate::regression::predict;

/// `x -> v̄(x)`.
pub type ValueFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// `x -> (ζ̄1(x), ζ̄2(x))`, written into a `d1 + d2` slice.
pub type GradientFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Off-grid evaluation of `v̄` and `ζ̄`.
#[derive(Clone)]
pub struct ValueSurrogate {
    vbar: ValueFn,
    zeta: Option<GradientFn>,
}

impl Default for ValueSurrogate {
    fn default() -> Self {
        Self {
            vbar: Arc::new(|_| 0.0),
            zeta: Some(Arc::new(|_, out: &mut [f64]| out.fill(0.0))),
        }
    }
}

impl fmt::Debug for ValueSurrogate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ValueSurrogate")
            .field("has_gradient", &self.zeta.is_some())
            .finish_non_exhaustive()
    }
}

struct Averaged {
    basis: RegressionBasis,
    fits: Vec<StepFit>,
}

impl Averaged {
    fn y(&self, x: &[f64], work: &mut [f64]) -> f64 {
        let mut acc = 0.0;
        for f in &self.fits {
            self.basis.features(x, &f.standardizer, work);
            acc += predict(&f.y, work);
        }
        acc / self.fits.len() as f64
    }

    fn zu(&self, x: &[f64], out: &mut [f64], work: &mut [f64]) {
        out.fill(0.0);
        for f in &self.fits {
            self.basis.features(x, &f.standardizer, work);
            for (o, c) in out.iter_mut().zip(&f.zu) {
                *o += predict(c, work);
            }
        }
        let n = self.fits.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
    }
}

impl ValueSurrogate {
    pub fn new(vbar: ValueFn, zeta: Option<GradientFn>) -> Self {
        Self { vbar, zeta }
    }

    /// Regression representation of a long discounted solve, averaged over
    /// up to `n_fits` steps in the fractional window of its grid, and
    /// normalized to vanish at `x_ref`.
    pub fn from_solution(sol: &BsdeSolution, x_ref: &[f64], window: (f64, f64), n_fits: usize) -> Self {
        let m = sol.n_steps;
        let lo = ((window.0 * m as f64).floor() as usize).min(m - 1);
        let hi = ((window.1 * m as f64).ceil() as usize).clamp(lo + 1, m);
        let count = n_fits.clamp(1, hi - lo);
        let fits = (0..count)
            .map(|i| sol.fits[lo + i * (hi - lo) / count].clone())
            .collect();
        let avg = Arc::new(Averaged {
            basis: sol.basis().clone(),
            fits,
        });
        let p = avg.basis.n_features();
        let offset = avg.y(x_ref, &mut vec![0.0; p]);
        let a1 = avg.clone();
        let vbar: ValueFn = Arc::new(move |x| a1.y(x, &mut vec![0.0; p]) - offset);
        let zeta: GradientFn = Arc::new(move |x, out| avg.zu(x, out, &mut vec![0.0; p]));
        Self { vbar, zeta: Some(zeta) }
    }

    pub fn vbar(&self, x: &[f64]) -> f64 {
        (self.vbar)(x)
    }

    pub fn has_gradient(&self) -> bool {
        self.zeta.is_some()
    }

    /// Writes `(ζ̄1, ζ̄2)(x)`; zeros when no gradient surrogate is attached.
    pub fn zeta(&self, x: &[f64], out: &mut [f64]) {
        match &self.zeta {
            Some(z) => z(x, out),
            None => out.fill(0.0),
        }
    }

    /// `v̄ + h`, keeping `ζ̄`.
    pub fn perturbed(&self, h: ValueFn) -> Self {
        let base = self.vbar.clone();
        Self {
            vbar: Arc::new(move |x| base(x) + h(x)),
            zeta: self.zeta.clone(),
        }
    }

    pub fn without_gradient(mut self) -> Self {
        self.zeta = None;
        self
    }
}
