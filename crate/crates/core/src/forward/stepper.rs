use nalgebra::DMatrix;

use super::{DriftAugmentation, Scheme, SimConfig};
use crate::error::{Error, Result};
use crate::model::{mat_vec, GalerkinModel, LinearPart, Propagator};
use crate::rng::NoiseStream;

/// One time step of the forward scheme for a fixed model, augmentation and `dt`.
///
/// Exponential Euler reads
///
/// ```text
/// X' = e^{dt A} X + Φ (F(X) + aug(X)) + e^{dt A} (Q G(X) dW1 + D dW2),   Φ = ∫_0^dt e^{sA} ds
/// ```
///
/// which is exact for constant forcing. With the variance correction the
/// noise is instead scaled per mode by the exact stochastic-convolution
/// standard deviation.
pub struct Stepper<'a> {
    model: &'a GalerkinModel,
    aug: &'a DriftAugmentation,
    dt: f64,
    scheme: Scheme,
    prop: Propagator,
    phi: Propagator,
    noise_scale: Option<Vec<f64>>,
}

/// Work buffers for [`Stepper::step`].
#[derive(Debug, Clone)]
pub struct Scratch {
    drift: Vec<f64>,
    noise: Vec<f64>,
    tmp: Vec<f64>,
    extra: Vec<f64>,
    g: Vec<f64>,
    gw: Vec<f64>,
    ctl1: Vec<f64>,
    ctl2: Vec<f64>,
}

impl Scratch {
    pub fn new(model: &GalerkinModel) -> Self {
        let (n, d1, d2) = (model.dim(), model.d1(), model.d2());
        Self {
            drift: vec![0.0; n],
            noise: vec![0.0; n],
            tmp: vec![0.0; n],
            extra: vec![0.0; n],
            g: vec![0.0; d1 * d1],
            gw: vec![0.0; d1],
            ctl1: vec![0.0; d1],
            ctl2: vec![0.0; d2],
        }
    }
}

fn phi_propagator(linear: &LinearPart, dt: f64) -> Propagator {
    match linear {
        LinearPart::Diagonal(v) => Propagator::Diagonal(
            v.iter()
                .map(|&l| if l == 0.0 { dt } else { (l * dt).exp_m1() / l })
                .collect(),
        ),
        LinearPart::Dense(m) => {
            // exp([[A, I], [0, 0]] dt) has ∫_0^dt e^{sA} ds as its top-right block
            let n = m.nrows();
            let mut aug = DMatrix::zeros(2 * n, 2 * n);
            aug.view_mut((0, 0), (n, n)).copy_from(&(m * dt));
            for i in 0..n {
                aug[(i, n + i)] = dt;
            }
            Propagator::Dense(aug.exp().view((0, n), (n, n)).into_owned())
        }
    }
}

impl<'a> Stepper<'a> {
    pub fn new(model: &'a GalerkinModel, aug: &'a DriftAugmentation, cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let dt = cfg.dt;
        let noise_scale = if cfg.stoch_conv_correction {
            match model.linear() {
                LinearPart::Diagonal(v) => Some(
                    v.iter()
                        .map(|&l| {
                            if l == 0.0 {
                                1.0
                            } else {
                                ((2.0 * l * dt).exp_m1() / (2.0 * l * dt)).sqrt()
                            }
                        })
                        .collect(),
                ),
                LinearPart::Dense(_) => {
                    return Err(Error::InvalidParameter(
                        "the stochastic convolution correction needs a diagonal linear part".into(),
                    ))
                }
            }
        } else {
            None
        };
        Ok(Self {
            model,
            aug,
            dt,
            scheme: cfg.scheme,
            prop: model.linear().propagator(dt),
            phi: phi_propagator(model.linear(), dt),
            noise_scale,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn model(&self) -> &GalerkinModel {
        self.model
    }

    /// Advances `x` at time `t` by one step with Brownian increments `dw1, dw2`.
    pub fn step(&self, t: f64, x: &[f64], dw1: &[f64], dw2: &[f64], out: &mut [f64], s: &mut Scratch) {
        let model = self.model;
        let (d1, d2) = (model.d1(), model.d2());
        model.drift_into(x, &mut s.drift);
        model.g_into(x, &mut s.g);

        // G(x) dW1, then noise = Q G dW1 + D dW2
        for i in 0..d1 {
            s.gw[i] = (0..d1).map(|j| s.g[i * d1 + j] * dw1[j]).sum();
        }
        mat_vec(model.q(), &s.gw, &mut s.noise);
        mat_vec(model.d(), dw2, &mut s.tmp);
        for (nv, tv) in s.noise.iter_mut().zip(&s.tmp) {
            *nv += tv;
        }

        if self.aug.is_active() {
            s.ctl1.fill(0.0);
            if let Some(p) = &self.aug.p {
                p(t, x, &mut s.gw);
                for i in 0..d1 {
                    s.ctl1[i] = (0..d1).map(|j| s.g[i * d1 + j] * s.gw[j]).sum();
                }
            }
            if let Some(r) = &self.aug.r {
                r(t, x, &mut s.gw);
                for (c, v) in s.ctl1.iter_mut().zip(&s.gw) {
                    *c += v;
                }
            }
            mat_vec(model.q(), &s.ctl1, &mut s.extra);
            if let Some(q) = &self.aug.q {
                q(t, x, &mut s.ctl2[..d2]);
                mat_vec(model.d(), &s.ctl2, &mut s.tmp);
                for (e, v) in s.extra.iter_mut().zip(&s.tmp) {
                    *e += v;
                }
            }
            for (dv, e) in s.drift.iter_mut().zip(&s.extra) {
                *dv += e;
            }
        }

        match self.scheme {
            Scheme::ExponentialEuler => {
                self.prop.apply(x, out);
                self.phi.apply(&s.drift, &mut s.tmp);
                for (o, v) in out.iter_mut().zip(&s.tmp) {
                    *o += v;
                }
                match &self.noise_scale {
                    Some(c) => {
                        for ((o, nv), ci) in out.iter_mut().zip(&s.noise).zip(c) {
                            *o += ci * nv;
                        }
                    }
                    None => {
                        self.prop.apply(&s.noise, &mut s.tmp);
                        for (o, v) in out.iter_mut().zip(&s.tmp) {
                            *o += v;
                        }
                    }
                }
            }
            Scheme::EulerMaruyama => {
                model.linear().apply(x, &mut s.tmp);
                for i in 0..x.len() {
                    out[i] = x[i] + self.dt * (s.tmp[i] + s.drift[i]) + s.noise[i];
                }
            }
        }
    }
}

/// Stepper plus per-path noise: regenerates any path segment on demand.
pub struct PathEngine<'a> {
    stepper: Stepper<'a>,
    noise: NoiseStream,
    n_steps: usize,
    sqrt_dt: f64,
}

impl<'a> PathEngine<'a> {
    pub fn new(model: &'a GalerkinModel, aug: &'a DriftAugmentation, cfg: &SimConfig) -> Result<Self> {
        Ok(Self {
            stepper: Stepper::new(model, aug, cfg)?,
            noise: NoiseStream::new(cfg.seed),
            n_steps: cfg.n_steps(),
            sqrt_dt: cfg.dt.sqrt(),
        })
    }

    /// Same dynamics driven by a different noise family.
    pub fn with_noise(mut self, noise: NoiseStream) -> Self {
        self.noise = noise;
        self
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.stepper.dt
    }

    pub fn model(&self) -> &GalerkinModel {
        self.stepper.model
    }

    /// Simulates `count` steps of `path` from state `x` at step `start`.
    ///
    /// `visit(k, x_k, dw1, dw2, x_{k+1})` is called for each step; the final
    /// state is returned.
    pub fn run<V>(&self, path: usize, start: usize, x: &[f64], count: usize, mut visit: V) -> Result<Vec<f64>>
    where
        V: FnMut(usize, &[f64], &[f64], &[f64], &[f64]),
    {
        let model = self.stepper.model;
        let (d1, d2) = (model.d1(), model.d2());
        let mut cursor = self.noise.cursor(path, start, d1 + d2);
        let mut xi = vec![0.0; d1 + d2];
        let mut s = Scratch::new(model);
        let mut cur = x.to_vec();
        let mut next = vec![0.0; x.len()];
        for k in start..start + count {
            cursor.next_step(&mut xi);
            xi.iter_mut().for_each(|v| *v *= self.sqrt_dt);
            let (dw1, dw2) = xi.split_at(d1);
            self.stepper.step(k as f64 * self.stepper.dt, &cur, dw1, dw2, &mut next, &mut s);
            if !next.iter().all(|v| v.is_finite()) {
                return Err(Error::BlowUp { path, step: k + 1 });
            }
            visit(k, &cur, dw1, dw2, &next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Two copies of `path` from different initial states under the same noise.
    pub fn run_pair<V>(&self, path: usize, x: &[f64], xp: &[f64], count: usize, mut visit: V) -> Result<()>
    where
        V: FnMut(usize, &[f64], &[f64]),
    {
        let model = self.stepper.model;
        let (d1, d2) = (model.d1(), model.d2());
        let mut cursor = self.noise.cursor(path, 0, d1 + d2);
        let mut xi = vec![0.0; d1 + d2];
        let mut s = Scratch::new(model);
        let (mut a, mut b) = (x.to_vec(), xp.to_vec());
        let (mut na, mut nb) = (vec![0.0; x.len()], vec![0.0; x.len()]);
        for k in 0..count {
            cursor.next_step(&mut xi);
            xi.iter_mut().for_each(|v| *v *= self.sqrt_dt);
            let (dw1, dw2) = xi.split_at(d1);
            let t = k as f64 * self.stepper.dt;
            self.stepper.step(t, &a, dw1, dw2, &mut na, &mut s);
            self.stepper.step(t, &b, dw1, dw2, &mut nb, &mut s);
            if !na.iter().chain(&nb).all(|v| v.is_finite()) {
                return Err(Error::BlowUp { path, step: k + 1 });
            }
            visit(k + 1, &na, &nb);
            std::mem::swap(&mut a, &mut na);
            std::mem::swap(&mut b, &mut nb);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_boundary_control_model, build_ou_model, ScalarFn};

    #[test]
    fn drift_integral_matches_quadrature_for_dense_generator() {
        let m = build_boundary_control_model(
            3,
            ScalarFn::constant(1.0),
            ScalarFn::linear(0.0, 0.0),
            ScalarFn::constant(1.0),
            ScalarFn::constant(0.0),
        )
        .unwrap();
        let dt = 0.05;
        let phi = phi_propagator(m.model.linear(), dt).matrix();
        let a = m.model.linear().matrix();
        // Simpson on s ↦ e^{sA}
        let n = 64;
        let h = dt / n as f64;
        let mut quad = DMatrix::zeros(4, 4);
        for i in 0..=n {
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            quad += (&a * (i as f64 * h)).exp() * (w * h / 3.0);
        }
        assert!((phi - quad).abs().max() < 1e-12);
    }

    #[test]
    fn corrected_ou_step_has_exact_stationary_variance() {
        let model = build_ou_model(1.0, 1.0).unwrap();
        let aug = DriftAugmentation::none();
        let cfg = SimConfig::new(0.1, 1.0, 1, 0).unwrap().with_correction(true);
        let st = Stepper::new(&model, &aug, &cfg).unwrap();
        let mut s = Scratch::new(&model);
        let mut out = [0.0];
        // one step from 0 with unit normal scaled to dt
        st.step(0.0, &[0.0], &[0.1f64.sqrt()], &[0.0], &mut out, &mut s);
        let exact_sd = ((1.0 - (-0.2f64).exp()) / 2.0).sqrt();
        assert!((out[0] - exact_sd).abs() < 1e-14);
    }

    #[test]
    fn correction_rejected_for_dense_generator() {
        let m = build_boundary_control_model(
            2,
            ScalarFn::constant(1.0),
            ScalarFn::linear(0.0, 0.0),
            ScalarFn::constant(1.0),
            ScalarFn::constant(0.0),
        )
        .unwrap();
        let aug = DriftAugmentation::none();
        let cfg = SimConfig::new(0.1, 1.0, 1, 0).unwrap().with_correction(true);
        assert!(Stepper::new(&m.model, &aug, &cfg).is_err());
    }

    #[test]
    fn segment_replay_matches_full_run() {
        let model = build_ou_model(0.5, 1.0).unwrap();
        let aug = DriftAugmentation::none();
        let cfg = SimConfig::new(0.01, 3.0, 4, 11).unwrap();
        let engine = PathEngine::new(&model, &aug, &cfg).unwrap();
        let mut full = Vec::new();
        engine.run(2, 0, &[1.0], 300, |_, _, _, _, x| full.push(x[0])).unwrap();
        let mid = [full[149]];
        let mut tail = Vec::new();
        engine.run(2, 150, &mid, 150, |_, _, _, _, x| tail.push(x[0])).unwrap();
        assert_eq!(&full[150..], &tail[..]);
    }
}
