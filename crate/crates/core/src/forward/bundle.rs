use std::io::{Read, Write};

use super::{DriftAugmentation, PathEngine, SimConfig};
use crate::error::{Error, Result};
use crate::model::{GalerkinModel, StateVector};
use crate::parallel::ordered_map;

pub const BUNDLE_MAGIC: [u8; 8] = *b"EBSDEPB\0";
pub const BUNDLE_VERSION: u32 = 1;

/// Stored trajectories with the increments that generated them.
///
/// Arrays are path-major: `states[(p * (m + 1) + k) * dim + i]`,
/// `dw1[(p * m + k) * d1 + j]`, `dw2[(p * m + k) * d2 + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub dt: f64,
    pub seed: u64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub dim: usize,
    pub d1: usize,
    pub d2: usize,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub dw1: Vec<f64>,
    pub dw2: Vec<f64>,
}

impl PathBundle {
    pub fn state(&self, path: usize, k: usize) -> &[f64] {
        let off = (path * (self.n_steps + 1) + k) * self.dim;
        &self.states[off..off + self.dim]
    }

    pub fn dw1(&self, path: usize, k: usize) -> &[f64] {
        let off = (path * self.n_steps + k) * self.d1;
        &self.dw1[off..off + self.d1]
    }

    pub fn dw2(&self, path: usize, k: usize) -> &[f64] {
        let off = (path * self.n_steps + k) * self.d2;
        &self.dw2[off..off + self.d2]
    }

    /// Componentwise sample mean at time index `k`.
    pub fn mean_at(&self, k: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for p in 0..self.n_paths {
            for (a, v) in m.iter_mut().zip(self.state(p, k)) {
                *a += v;
            }
        }
        m.iter_mut().for_each(|a| *a /= self.n_paths as f64);
        m
    }

    /// Sample mean and variance of all `dW1` and `dW2` components.
    pub fn increment_moments(&self) -> (f64, f64) {
        let all = self.dw1.iter().chain(&self.dw2);
        let n = (self.dw1.len() + self.dw2.len()) as f64;
        let mean = all.clone().sum::<f64>() / n;
        let var = all.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    /// Little-endian binary dump: magic, version, header, then times,
    /// states, dW1 and dW2 as `f64` arrays.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&BUNDLE_MAGIC)?;
        w.write_all(&BUNDLE_VERSION.to_le_bytes())?;
        for v in [self.n_paths, self.n_steps, self.dim, self.d1, self.d2] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&self.dt.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for arr in [&self.times, &self.states, &self.dw1, &self.dw2] {
            for v in arr.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let io = |e: std::io::Error| Error::Format(e.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if magic != BUNDLE_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(io)?;
        let version = u32::from_le_bytes(b4);
        if version != BUNDLE_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let mut b8 = [0u8; 8];
        let mut header = [0usize; 5];
        for h in header.iter_mut() {
            r.read_exact(&mut b8).map_err(io)?;
            *h = usize::try_from(u64::from_le_bytes(b8)).map_err(|_| Error::Format("size overflow".into()))?;
        }
        let [n_paths, n_steps, dim, d1, d2] = header;
        r.read_exact(&mut b8).map_err(io)?;
        let dt = f64::from_le_bytes(b8);
        r.read_exact(&mut b8).map_err(io)?;
        let seed = u64::from_le_bytes(b8);
        let mut read_arr = |len: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                r.read_exact(&mut b8).map_err(io)?;
                out.push(f64::from_le_bytes(b8));
            }
            Ok(out)
        };
        let times = read_arr(n_steps + 1)?;
        let states = read_arr(n_paths * (n_steps + 1) * dim)?;
        let dw1 = read_arr(n_paths * n_steps * d1)?;
        let dw2 = read_arr(n_paths * n_steps * d2)?;
        Ok(Self {
            dt,
            seed,
            n_paths,
            n_steps,
            dim,
            d1,
            d2,
            times,
            states,
            dw1,
            dw2,
        })
    }
}

/// Simulates `cfg.n_paths` independent paths from `x0`.
pub fn simulate(
    model: &GalerkinModel,
    x0: &StateVector,
    aug: &DriftAugmentation,
    cfg: &SimConfig,
) -> Result<PathBundle> {
    model.check_state(x0)?;
    let engine = PathEngine::new(model, aug, cfg)?;
    let m = engine.n_steps();
    let (dim, d1, d2) = (model.dim(), model.d1(), model.d2());
    let per_path = ordered_map(cfg.n_paths, |p| {
        let mut states = Vec::with_capacity((m + 1) * dim);
        let mut w1 = Vec::with_capacity(m * d1);
        let mut w2 = Vec::with_capacity(m * d2);
        states.extend_from_slice(x0.as_slice());
        engine.run(p, 0, x0.as_slice(), m, |_, _, a, b, next| {
            w1.extend_from_slice(a);
            w2.extend_from_slice(b);
            states.extend_from_slice(next);
        })?;
        Ok((states, w1, w2))
    })?;
    let mut bundle = PathBundle {
        dt: cfg.dt,
        seed: cfg.seed,
        n_paths: cfg.n_paths,
        n_steps: m,
        dim,
        d1,
        d2,
        times: (0..=m).map(|k| k as f64 * cfg.dt).collect(),
        states: Vec::with_capacity(cfg.n_paths * (m + 1) * dim),
        dw1: Vec::with_capacity(cfg.n_paths * m * d1),
        dw2: Vec::with_capacity(cfg.n_paths * m * d2),
    };
    for (s, a, b) in per_path {
        bundle.states.extend(s);
        bundle.dw1.extend(a);
        bundle.dw2.extend(b);
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use nalgebra::{DMatrix, DVector};

    use super::*;
    use crate::forward::Scheme;
    use crate::model::{build_ou_model, LinearPart, ModelConstants};

    fn noise_free(n: usize) -> GalerkinModel {
        GalerkinModel::new(
            "deterministic",
            LinearPart::Diagonal(DVector::from_fn(n, |k, _| -((k + 1) as f64))),
            Arc::new(|_, out: &mut [f64]| out.fill(0.0)),
            DMatrix::zeros(n, 1),
            Arc::new(|_, out: &mut [f64]| out[0] = 1.0),
            Arc::new(|_, out: &mut [f64]| out[0] = 1.0),
            DMatrix::zeros(n, 1),
            ModelConstants {
                lip_f: 0.0,
                lip_g: 0.0,
                bound_g: 1.0,
                bound_g_inv: 1.0,
                gamma: 0.0,
                decay_l: 0.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn noise_free_flow_is_the_semigroup() {
        let model = noise_free(3);
        let x0 = StateVector::new(vec![1.0, -2.0, 0.5]).unwrap();
        let cfg = SimConfig::new(0.1, 1.0, 2, 0).unwrap();
        let b = simulate(&model, &x0, &DriftAugmentation::none(), &cfg).unwrap();
        for k in [0, 3, 10] {
            let exact = model.semigroup_apply(k as f64 * 0.1, &x0).unwrap();
            for (a, e) in b.state(1, k).iter().zip(exact.as_slice()) {
                assert!((a - e).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn ou_mean_matches_analytic_value() {
        let model = build_ou_model(1.0, 1.0).unwrap();
        let x0 = StateVector::new(vec![2.0]).unwrap();
        let cfg = SimConfig::new(0.02, 1.0, 100_000, 5).unwrap();
        let b = simulate(&model, &x0, &DriftAugmentation::none(), &cfg).unwrap();
        let m = b.n_steps;
        let finals: Vec<f64> = (0..b.n_paths).map(|p| b.state(p, m)[0]).collect();
        let est = crate::stats::Estimate::from_samples(&finals);
        let exact = 2.0 * (-1.0f64).exp();
        assert!((est.mean - exact).abs() < 3.0 * est.stderr, "{est:?} vs {exact}");
        let (mu, var) = b.increment_moments();
        assert!(mu.abs() < 5.0 * (0.02f64 / (b.dw1.len() + b.dw2.len()) as f64).sqrt());
        assert!((var / 0.02 - 1.0).abs() < 0.01);
        assert_eq!(b.state(7, 0), &[2.0]);
    }

    #[test]
    fn constant_shift_moves_the_ou_mean() {
        let model = build_ou_model(1.0, 0.8).unwrap();
        let x0 = StateVector::new(vec![0.0]).unwrap();
        let cfg = SimConfig::new(0.01, 2.0, 1, 3).unwrap();
        let p0 = 0.5;
        let plain = simulate(&model, &x0, &DriftAugmentation::none(), &cfg).unwrap();
        let shifted = simulate(&model, &x0, &DriftAugmentation::constant(vec![p0], vec![0.0]), &cfg).unwrap();
        // same noise, linear dynamics: the difference is the mean shift exactly
        let diff = shifted.state(0, 200)[0] - plain.state(0, 200)[0];
        let exact = 0.8 * p0 * (1.0 - (-2.0f64).exp());
        assert!((diff - exact).abs() < 1e-12, "{diff} vs {exact}");
    }

    #[test]
    fn zero_augmentation_is_bit_identical() {
        let model = build_ou_model(0.3, 1.2).unwrap();
        let x0 = StateVector::new(vec![0.7]).unwrap();
        let cfg = SimConfig::new(0.05, 2.0, 20, 8).unwrap();
        let a = simulate(&model, &x0, &DriftAugmentation::none(), &cfg).unwrap();
        let b = simulate(&model, &x0, &DriftAugmentation::constant(vec![0.0], vec![0.0]), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dump_round_trips() {
        let model = build_ou_model(1.0, 1.0).unwrap();
        let x0 = StateVector::new(vec![0.1]).unwrap();
        let cfg = SimConfig::new(0.1, 1.0, 3, 2).unwrap().with_scheme(Scheme::EulerMaruyama);
        let b = simulate(&model, &x0, &DriftAugmentation::none(), &cfg).unwrap();
        let mut buf = Vec::new();
        b.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], &BUNDLE_MAGIC);
        assert_eq!(PathBundle::read_from(&buf[..]).unwrap(), b);
        buf[0] = b'X';
        assert!(matches!(PathBundle::read_from(&buf[..]), Err(Error::Format(_))));
    }
}
