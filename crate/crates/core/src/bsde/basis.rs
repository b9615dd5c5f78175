use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest projection dimension accepted by a basis.
pub const MAX_PROJECTION_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisKind {
    /// Monomials of total degree `1..=degree` in the standardized coordinates.
    Polynomial { degree: usize },
    /// Gaussian bumps `exp(-|ξ - c|² / (2 w²))` in raw projected coordinates.
    Radial { centers: Vec<Vec<f64>>, width: f64 },
}

/// Regression features on a low-dimensional projection of the state.
///
/// The projection keeps the listed state coordinates. The constant function
/// is always included through the regression intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionBasis {
    pub kind: BasisKind,
    pub coords: Vec<usize>,
    #[serde(skip)]
    exponents: Vec<Vec<u8>>,
}

/// Per-time-step affine change of the projected coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Standardizer {
    pub center: Vec<f64>,
    /// Reciprocal spread; zero for a coordinate with no spread.
    pub inv_scale: Vec<f64>,
}

impl RegressionBasis {
    pub fn polynomial(coords: Vec<usize>, degree: usize) -> Result<Self> {
        Self::from_kind(BasisKind::Polynomial { degree }, coords)
    }

    pub fn radial(coords: Vec<usize>, centers: Vec<Vec<f64>>, width: f64) -> Result<Self> {
        Self::from_kind(BasisKind::Radial { centers, width }, coords)
    }

    /// Total degree 3 on the first `q` coordinates.
    pub fn default_for(dim: usize) -> Self {
        Self::polynomial((0..dim.min(MAX_PROJECTION_DIM)).collect(), 3).expect("valid default basis")
    }

    pub fn from_kind(kind: BasisKind, coords: Vec<usize>) -> Result<Self> {
        if coords.is_empty() || coords.len() > MAX_PROJECTION_DIM {
            return Err(Error::InvalidParameter(format!(
                "basis projection must keep 1..={MAX_PROJECTION_DIM} coordinates, got {}",
                coords.len()
            )));
        }
        let exponents = match &kind {
            BasisKind::Polynomial { degree } => {
                if *degree == 0 || *degree > 6 {
                    return Err(Error::InvalidParameter(format!("polynomial degree {degree} outside 1..=6")));
                }
                monomials(coords.len(), *degree)
            }
            BasisKind::Radial { centers, width } => {
                if centers.is_empty() || !(*width > 0.0) {
                    return Err(Error::InvalidParameter("radial basis needs centers and a positive width".into()));
                }
                if centers.iter().any(|c| c.len() != coords.len()) {
                    return Err(Error::DimensionMismatch {
                        context: "radial center",
                        expected: coords.len(),
                        got: centers.iter().map(|c| c.len()).find(|&l| l != coords.len()).unwrap_or(0),
                    });
                }
                Vec::new()
            }
        };
        Ok(Self { kind, coords, exponents })
    }

    /// Restores derived tables after deserialization.
    pub fn rebuilt(self) -> Result<Self> {
        Self::from_kind(self.kind, self.coords)
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        match self.coords.iter().find(|&&c| c >= dim) {
            Some(&c) => Err(Error::InvalidParameter(format!(
                "basis coordinate {c} out of range for state dimension {dim}"
            ))),
            None => Ok(()),
        }
    }

    pub fn n_features(&self) -> usize {
        match &self.kind {
            BasisKind::Polynomial { .. } => self.exponents.len(),
            BasisKind::Radial { centers, .. } => centers.len(),
        }
    }

    /// Standardizer fitted to the `n x dim` row-major sample `states`.
    pub fn standardizer(&self, states: &[f64], dim: usize) -> Standardizer {
        let q = self.coords.len();
        if let BasisKind::Radial { .. } = self.kind {
            return Standardizer {
                center: vec![0.0; q],
                inv_scale: vec![1.0; q],
            };
        }
        let n = (states.len() / dim).max(1) as f64;
        let mut center = vec![0.0; q];
        for row in states.chunks_exact(dim) {
            for (m, &c) in center.iter_mut().zip(&self.coords) {
                *m += row[c];
            }
        }
        center.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; q];
        for row in states.chunks_exact(dim) {
            for (i, &c) in self.coords.iter().enumerate() {
                var[i] += (row[c] - center[i]).powi(2);
            }
        }
        let inv_scale = var
            .iter()
            .zip(&center)
            .map(|(v, m)| {
                let s = (v / n).sqrt();
                if s > 1e-12 * (1.0 + m.abs()) {
                    1.0 / s
                } else {
                    0.0
                }
            })
            .collect();
        Standardizer { center, inv_scale }
    }

    /// Writes the features of state `x` into `out`; `work` needs the
    /// projection dimension times `degree + 1` entries.
    pub fn features(&self, x: &[f64], st: &Standardizer, out: &mut [f64]) {
        match &self.kind {
            BasisKind::Polynomial { degree } => {
                let q = self.coords.len();
                let stride = degree + 1;
                let mut pow = [0.0f64; MAX_PROJECTION_DIM * 7];
                for (i, &c) in self.coords.iter().enumerate() {
                    let u = (x[c] - st.center[i]) * st.inv_scale[i];
                    pow[i * stride] = 1.0;
                    for e in 1..stride {
                        pow[i * stride + e] = pow[i * stride + e - 1] * u;
                    }
                }
                for (o, ex) in out.iter_mut().zip(&self.exponents) {
                    let mut v = 1.0;
                    for i in 0..q {
                        let e = ex[i] as usize;
                        if e > 0 {
                            v *= pow[i * stride + e];
                        }
                    }
                    *o = v;
                }
            }
            BasisKind::Radial { centers, width } => {
                let s = -0.5 / (width * width);
                for (o, c) in out.iter_mut().zip(centers) {
                    let d2: f64 = self.coords.iter().zip(c).map(|(&k, ck)| (x[k] - ck).powi(2)).sum();
                    *o = (s * d2).exp();
                }
            }
        }
    }

    /// Features of every row of `states`, `n x n_features` row-major.
    pub fn design(&self, states: &[f64], dim: usize, st: &Standardizer, out: &mut Vec<f64>) {
        let p = self.n_features();
        let n = states.len() / dim;
        out.resize(n * p, 0.0);
        for (row, o) in states.chunks_exact(dim).zip(out.chunks_exact_mut(p)) {
            self.features(row, st, o);
        }
    }
}

/// Exponent vectors of total degree `1..=degree` in `q` variables, graded.
fn monomials(q: usize, degree: usize) -> Vec<Vec<u8>> {
    fn rec(q: usize, left: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if cur.len() == q - 1 {
            cur.push(left as u8);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for e in (0..=left).rev() {
            cur.push(e as u8);
            rec(q, left - e, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    for total in 1..=degree {
        rec(q, total, &mut Vec::with_capacity(q), &mut out);
    }
    out
}
