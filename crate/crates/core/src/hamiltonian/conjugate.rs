//! Concave Legendre transform
//!
//! ```text
//! ψ*(x, p, q) = inf_{z, u} { -z·p - u·q - ψ(x, z, u) }
//! ```
//!
//! computed by zooming grid search on expanding boxes, with divergence to
//! `-∞` detected from the decrease of the running infimum across doublings.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::driver::DriverSpec;
use super::control::uniform_grid;
use crate::error::{ensure_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchConfig {
    pub initial_radius: f64,
    pub max_doublings: usize,
    /// Relative tolerance at which successive box infima count as equal.
    pub tolerance: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            initial_radius: 1.0,
            max_doublings: 60,
            tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConjugateValue {
    Finite { value: f64, z: Vec<f64>, u: Vec<f64> },
    MinusInfinity,
    /// Budget exhausted without a verdict; `best` is the last box infimum.
    Inconclusive { best: f64 },
}

impl ConjugateValue {
    pub fn finite(&self) -> Option<f64> {
        match self {
            ConjugateValue::Finite { value, .. } => Some(*value),
            _ => None,
        }
    }
}

/// Coordinates searched: those of blocks with a positive Lipschitz constant.
struct Layout {
    z_active: bool,
    u_active: bool,
    d1: usize,
    d2: usize,
}

impl Layout {
    fn dims(&self) -> usize {
        (if self.z_active { self.d1 } else { 0 }) + (if self.u_active { self.d2 } else { 0 })
    }

    fn split(&self, w: &[f64], z: &mut [f64], u: &mut [f64]) {
        let mut k = 0;
        if self.z_active {
            z.copy_from_slice(&w[..self.d1]);
            k = self.d1;
        }
        if self.u_active {
            u.copy_from_slice(&w[k..k + self.d2]);
        }
    }
}

/// Minimizes `f` on the cube `[-r, r]^k` by repeated grid zooming.
fn zoom_minimize(f: &dyn Fn(&[f64]) -> f64, k: usize, r: f64) -> (f64, Vec<f64>) {
    let g: usize = match k {
        1 => 21,
        2 => 11,
        _ => 7,
    };
    let mut center = vec![0.0; k];
    let mut half = r;
    let mut best = (f(&center), center.clone());
    let mut idx = vec![0usize; k];
    let mut w = vec![0.0; k];
    for _ in 0..80 {
        let h = 2.0 * half / (g - 1) as f64;
        idx.fill(0);
        'grid: loop {
            for j in 0..k {
                w[j] = (center[j] - half + h * idx[j] as f64).clamp(-r, r);
            }
            let v = f(&w);
            if v < best.0 {
                best = (v, w.clone());
            }
            for j in 0..k {
                idx[j] += 1;
                if idx[j] < g {
                    continue 'grid;
                }
                idx[j] = 0;
            }
            break;
        }
        center.copy_from_slice(&best.1);
        half = 2.0 * h;
        if half < 1e-13 * (1.0 + r) {
            break;
        }
    }
    best
}

pub fn conjugate(driver: &DriverSpec, x: &[f64], p: &[f64], q: &[f64], cfg: &SearchConfig) -> Result<ConjugateValue> {
    let (d1, d2) = (driver.d1(), driver.d2());
    ensure_len("conjugate p", d1, p.len())?;
    ensure_len("conjugate q", d2, q.len())?;
    let c = driver.constants;
    let layout = Layout {
        z_active: c.lip_z > 0.0,
        u_active: c.lip_u > 0.0,
        d1,
        d2,
    };
    // A block ψ does not depend on contributes an affine term: -∞ unless its dual variable vanishes.
    if (!layout.z_active && p.iter().any(|v| *v != 0.0)) || (!layout.u_active && q.iter().any(|v| *v != 0.0)) {
        return Ok(ConjugateValue::MinusInfinity);
    }
    let k = layout.dims();
    let objective = |w: &[f64]| {
        let mut z = vec![0.0; d1];
        let mut u = vec![0.0; d2];
        layout.split(w, &mut z, &mut u);
        let lin: f64 = z.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() + u.iter().zip(q).map(|(a, b)| a * b).sum::<f64>();
        -lin - driver.eval(x, &z, &u)
    };
    if k == 0 {
        return Ok(ConjugateValue::Finite {
            value: objective(&[]),
            z: vec![0.0; d1],
            u: vec![0.0; d2],
        });
    }
    let floor = 1e3 * (c.lip_z + c.lip_u);
    let mut history: Vec<f64> = Vec::new();
    let mut r = cfg.initial_radius;
    for _ in 0..cfg.max_doublings {
        let (v, w) = zoom_minimize(&objective, k, r);
        history.push(v);
        let n = history.len();
        if n >= 3 && history[n - 3] - v > floor {
            return Ok(ConjugateValue::MinusInfinity);
        }
        let interior = w.iter().all(|wi| wi.abs() < 0.5 * r);
        let same = |a: f64, b: f64| (a - b).abs() <= cfg.tolerance * (1.0 + a.abs());
        let settled = (n >= 2 && interior && same(history[n - 2], v))
            || (n >= 3 && same(history[n - 3], v) && same(history[n - 2], v));
        if settled {
            let mut z = vec![0.0; d1];
            let mut u = vec![0.0; d2];
            layout.split(&w, &mut z, &mut u);
            // `+ 0.0` normalizes a negative zero
            return Ok(ConjugateValue::Finite { value: v + 0.0, z, u });
        }
        r *= 2.0;
    }
    Ok(ConjugateValue::Inconclusive {
        best: *history.last().unwrap_or(&f64::NAN),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TableConfig {
    /// Points per active scalar dual coordinate.
    pub points: usize,
    pub search: SearchConfig,
}

impl Default for TableConfig {
    fn default() -> Self {
        Self {
            points: 2001,
            search: SearchConfig::default(),
        }
    }
}

/// `ψ*(x, ·, ·)` on a product grid of the box `|p_i| <= L_z`, `|q_j| <= L_u`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConjugateTable {
    pub d1: usize,
    pub d2: usize,
    /// Row-major `nodes x (d1 + d2)` dual points `(p, q)`.
    pub nodes: Vec<f64>,
    /// `None` where `ψ* = -∞` or the search was inconclusive.
    pub values: Vec<Option<f64>>,
    pub domain_mask: Vec<bool>,
    pub inconclusive: usize,
    pub spacing_p: f64,
    pub spacing_q: f64,
    /// Largest finite-difference slope of `ψ*` between masked neighbours, per block.
    pub slope_p: f64,
    pub slope_q: f64,
}

impl ConjugateTable {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn node(&self, i: usize) -> (&[f64], &[f64]) {
        let w = self.d1 + self.d2;
        let row = &self.nodes[i * w..(i + 1) * w];
        row.split_at(self.d1)
    }

    pub fn masked(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v)))
    }

    /// Grid error bound of the biconjugate at `(z, u)`.
    pub fn tolerance(&self, z: &[f64], u: &[f64]) -> f64 {
        let nz = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nu = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        0.5 * (self.spacing_p * (nz + self.slope_p) * (self.d1 as f64).sqrt()
            + self.spacing_q * (nu + self.slope_q) * (self.d2 as f64).sqrt())
            + 1e-12
    }

    /// CSV with columns `p_1..p_d1, q_1..q_d2, value, in_domain`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header: Vec<String> = (1..=self.d1).map(|i| format!("p{i}")).collect();
        header.extend((1..=self.d2).map(|i| format!("q{i}")));
        header.push("value".into());
        header.push("in_domain".into());
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let (p, q) = self.node(i);
            let mut row: Vec<String> = p.iter().chain(q).map(|v| format!("{v}")).collect();
            row.push(self.values[i].map_or("-inf".to_string(), |v| format!("{v}")));
            row.push((self.domain_mask[i] as u8).to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

pub fn build_conjugate_table(driver: &DriverSpec, x: &[f64], cfg: &TableConfig) -> Result<ConjugateTable> {
    let (d1, d2) = (driver.d1(), driver.d2());
    let c = driver.constants;
    if cfg.points < 2 {
        return Err(Error::InvalidParameter("conjugate grid needs >= 2 points".into()));
    }
    let axis = |lip: f64| if lip > 0.0 { uniform_grid(-lip, lip, cfg.points) } else { vec![0.0] };
    let axes: Vec<Vec<f64>> = (0..d1)
        .map(|_| axis(c.lip_z))
        .chain((0..d2).map(|_| axis(c.lip_u)))
        .collect();
    let total: usize = axes.iter().map(Vec::len).product();
    if total > 5_000_000 {
        return Err(Error::InvalidParameter(format!("conjugate grid of {total} nodes is too large")));
    }
    let width = d1 + d2;
    let mut nodes = Vec::with_capacity(total * width);
    let mut idx = vec![0usize; width];
    for _ in 0..total {
        for (j, a) in axes.iter().enumerate() {
            nodes.push(a[idx[j]]);
        }
        for j in (0..width).rev() {
            idx[j] += 1;
            if idx[j] < axes[j].len() {
                break;
            }
            idx[j] = 0;
        }
    }
    let results: Vec<Result<ConjugateValue>> = nodes
        .par_chunks(width)
        .map(|row| {
            let (p, q) = row.split_at(d1);
            conjugate(driver, x, p, q, &cfg.search)
        })
        .collect();
    let mut values = Vec::with_capacity(total);
    let mut inconclusive = 0;
    for r in results {
        match r? {
            ConjugateValue::Finite { value, .. } => values.push(Some(value)),
            ConjugateValue::MinusInfinity => values.push(None),
            ConjugateValue::Inconclusive { .. } => {
                inconclusive += 1;
                values.push(None);
            }
        }
    }
    let domain_mask: Vec<bool> = values.iter().map(Option::is_some).collect();
    if !domain_mask.iter().any(|m| *m) {
        return Err(Error::EmptyDomain);
    }
    let spacing = |lip: f64| if lip > 0.0 { 2.0 * lip / (cfg.points - 1) as f64 } else { 0.0 };

    // neighbour slopes along each axis (row-major strides)
    let mut strides = vec![1usize; width];
    for j in (0..width.saturating_sub(1)).rev() {
        strides[j] = strides[j + 1] * axes[j + 1].len();
    }
    let (mut slope_p, mut slope_q) = (0.0f64, 0.0f64);
    for i in 0..total {
        let Some(vi) = values[i] else { continue };
        for j in 0..width {
            let pos = (i / strides[j]) % axes[j].len();
            if pos + 1 >= axes[j].len() {
                continue;
            }
            if let Some(vn) = values[i + strides[j]] {
                let h = axes[j][pos + 1] - axes[j][pos];
                let s = (vn - vi).abs() / h;
                if j < d1 {
                    slope_p = slope_p.max(s);
                } else {
                    slope_q = slope_q.max(s);
                }
            }
        }
    }
    Ok(ConjugateTable {
        d1,
        d2,
        nodes,
        values,
        domain_mask,
        inconclusive,
        spacing_p: spacing(c.lip_z),
        spacing_q: spacing(c.lip_u),
        slope_p,
        slope_q,
    })
}

/// `min` over masked nodes of `-z·p - u·q - ψ*(x, p, q)`.
pub fn biconjugate(table: &ConjugateTable, z: &[f64], u: &[f64]) -> Result<f64> {
    let mut best = f64::INFINITY;
    for (i, v) in table.masked() {
        let (p, q) = table.node(i);
        let lin: f64 = z.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() + u.iter().zip(q).map(|(a, b)| a * b).sum::<f64>();
        best = best.min(-lin - v);
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::EmptyDomain)
    }
}

/// `max` over masked nodes of `ψ(x, z, u) + z·p + u·q + ψ*(x, p, q)`; non-positive in exact arithmetic.
pub fn fenchel_young_residual(driver: &DriverSpec, table: &ConjugateTable, x: &[f64], z: &[f64], u: &[f64]) -> f64 {
    let psi = driver.eval(x, z, u);
    table
        .masked()
        .map(|(i, v)| {
            let (p, q) = table.node(i);
            let lin: f64 = z.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() + u.iter().zip(q).map(|(a, b)| a * b).sum::<f64>();
            psi + lin + v
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::hamiltonian::{example2_closed_form, DriverConstants};

    fn quartic_driver() -> DriverSpec {
        DriverSpec::new(
            "minus_quarter_square",
            1,
            1,
            Arc::new(|_, z, _| -0.25 * z[0] * z[0]),
            DriverConstants {
                lip_x: 0.0,
                lip_z: 2.0,
                lip_u: 0.0,
                m_psi: 0.0,
            },
            true,
        )
    }

    fn example2_driver() -> DriverSpec {
        DriverSpec::quadratic_control(Arc::new(|x: &[f64]| 0.5 * x[0].tanh().powi(2)), 1.0, 0.5, 1, None)
    }

    #[test]
    fn conjugate_of_quadratic_against_dense_grid() {
        let v = conjugate(&quartic_driver(), &[0.0], &[0.5], &[0.0], &SearchConfig::default()).unwrap();
        // brute-force oracle on a dense grid
        let oracle = (0..=400_000)
            .map(|i| -10.0 + 20.0 * i as f64 / 400_000.0)
            .map(|z| -0.5 * z + 0.25 * z * z)
            .fold(f64::INFINITY, f64::min);
        assert!((v.finite().unwrap() - oracle).abs() < 1e-9);
        assert!((v.finite().unwrap() + 0.25).abs() < 1e-12);
    }

    #[test]
    fn affine_driver_conjugate_is_an_indicator() {
        let d = DriverSpec::linear_z(1.5, 1);
        let cfg = SearchConfig::default();
        assert_eq!(conjugate(&d, &[0.0], &[-1.5], &[0.0], &cfg).unwrap().finite(), Some(0.0));
        assert_eq!(conjugate(&d, &[0.0], &[-1.4], &[0.0], &cfg).unwrap(), ConjugateValue::MinusInfinity);
        assert_eq!(conjugate(&d, &[0.0], &[0.0], &[0.3], &cfg).unwrap(), ConjugateValue::MinusInfinity);
    }

    #[test]
    fn constant_driver_conjugate() {
        let d = DriverSpec::constant(0.7, 1, 1);
        let v = conjugate(&d, &[0.0], &[0.0], &[0.0], &SearchConfig::default()).unwrap();
        assert_eq!(v.finite(), Some(-0.7));
    }

    #[test]
    fn example2_table_domain_and_biconjugate() {
        let d = example2_driver();
        let cfg = TableConfig {
            points: 401,
            ..Default::default()
        };
        let x = [0.4];
        let t = build_conjugate_table(&d, &x, &cfg).unwrap();
        assert_eq!(t.inconclusive, 0);
        assert!(t.domain_mask.iter().all(|m| *m), "domain is all of [-1, 1]");
        for (i, v) in t.masked() {
            let p = t.node(i).0[0];
            let ell = 0.5 * 0.4f64.tanh().powi(2);
            assert!((v - (-p * p - ell)).abs() < 1e-9, "p={p}");
        }
        let ell = 0.5 * 0.4f64.tanh().powi(2);
        let b = biconjugate(&t, &[1.0], &[0.0]).unwrap();
        assert!((b - (ell + example2_closed_form(1.0))).abs() <= t.tolerance(&[1.0], &[0.0]));
        let b0 = biconjugate(&t, &[0.0], &[0.0]).unwrap();
        assert!((b0 - ell).abs() <= t.tolerance(&[0.0], &[0.0]));
        assert!(fenchel_young_residual(&d, &t, &x, &[1.3], &[0.0]) <= 1e-8);
    }

    #[test]
    fn linear_table_masks_a_single_node() {
        let d = DriverSpec::linear_z(0.8, 1);
        let cfg = TableConfig {
            points: 201,
            ..Default::default()
        };
        let t = build_conjugate_table(&d, &[0.0], &cfg).unwrap();
        let masked: Vec<usize> = t.masked().map(|(i, _)| i).collect();
        assert_eq!(masked, vec![0]);
        assert_eq!(t.node(0).0, &[-0.8]);
        let mut csv = Vec::new();
        t.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("p1,q1,value,in_domain\n-0.8,0,0,1\n"), "{}", &text[..60]);
    }
}
