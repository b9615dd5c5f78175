//! Simulation of the forward equation and of its stability quantities.

mod bundle;
mod stability;
mod stepper;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bundle::{simulate, PathBundle, BUNDLE_MAGIC, BUNDLE_VERSION};
pub use stability::{estimate_contraction, estimate_moment_bound, DecayFit, MomentSeries};
pub use stepper::{PathEngine, Stepper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Semigroup applied exactly per step, drift integrated against it.
    ExponentialEuler,
    /// Explicit `(I + dt A)` step.
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
    /// Replace the left-point noise variance by the exact per-mode variance
    /// of the stochastic convolution (diagonal `A` only).
    pub stoch_conv_correction: bool,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, n_paths: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            dt,
            horizon,
            n_paths,
            seed,
            scheme: Scheme::ExponentialEuler,
            stoch_conv_correction: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_correction(mut self, on: bool) -> Self {
        self.stoch_conv_correction = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon > self.dt) || !self.horizon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "horizon {} must exceed dt {}",
                self.horizon, self.dt
            )));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidParameter("n_paths must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of steps; the horizon is rounded to the nearest multiple of `dt`.
    pub fn n_steps(&self) -> usize {
        ((self.horizon / self.dt).round() as usize).max(1)
    }
}

/// `(t, x) -> out` with `out` of the control dimension.
pub type ControlField = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Extra drift `Q G(x) p(t, x) + D q(t, x) + Q r(t, x)`.
///
/// `p, q` are the Girsanov shifts arising from the conjugate of the driver;
/// `r` is a control acting through `Q` without the diffusion factor.
#[derive(Clone, Default)]
pub struct DriftAugmentation {
    pub p: Option<ControlField>,
    pub q: Option<ControlField>,
    pub r: Option<ControlField>,
    pub enabled: bool,
}

impl fmt::Debug for DriftAugmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriftAugmentation")
            .field("p", &self.p.is_some())
            .field("q", &self.q.is_some())
            .field("r", &self.r.is_some())
            .field("enabled", &self.enabled)
            .finish()
    }
}

impl DriftAugmentation {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(p: Option<ControlField>, q: Option<ControlField>) -> Self {
        Self {
            p,
            q,
            r: None,
            enabled: true,
        }
    }

    pub fn direct(r: ControlField) -> Self {
        Self {
            p: None,
            q: None,
            r: Some(r),
            enabled: true,
        }
    }

    pub fn constant(p0: Vec<f64>, q0: Vec<f64>) -> Self {
        let p: ControlField = Arc::new(move |_, _, out: &mut [f64]| out.copy_from_slice(&p0));
        let q: ControlField = Arc::new(move |_, _, out: &mut [f64]| out.copy_from_slice(&q0));
        Self::new(Some(p), Some(q))
    }

    pub fn is_active(&self) -> bool {
        self.enabled && (self.p.is_some() || self.q.is_some() || self.r.is_some())
    }
}
