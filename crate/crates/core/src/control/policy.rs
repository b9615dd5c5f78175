use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ergodic::ErgodicSolution;
use crate::hamiltonian::ControlStructure;
use crate::model::GalerkinModel;

/// `(t, x) -> ` index of a control on the grid of `Γ`.
pub type IndexFn = Arc<dyn Fn(f64, &[f64]) -> usize + Send + Sync>;
/// `(t, x) -> γ`, an arbitrary point snapped onto the grid of `Γ`.
pub type GammaFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Constant,
    StateFeedback,
    External,
}

/// Γ-valued control law on the grid of a [`ControlStructure`].
#[derive(Clone)]
pub struct Policy {
    pub id: String,
    pub kind: PolicyKind,
    n_controls: usize,
    index_of: IndexFn,
    fallbacks: Arc<AtomicUsize>,
}

impl fmt::Debug for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Policy")
            .field("id", &self.id)
            .field("kind", &self.kind)
            .field("n_controls", &self.n_controls)
            .finish_non_exhaustive()
    }
}

/// Nearest grid control to `gamma`, smallest index on ties.
pub fn nearest_control(cs: &ControlStructure, gamma: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for i in 0..cs.len() {
        let d: f64 = cs.gamma(i).iter().zip(gamma).map(|(a, b)| (a - b).powi(2)).sum();
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static MEMO: RefCell<HashMap<u64, (u64, Vec<f64>, usize)>> = RefCell::new(HashMap::new());
}

// The forward step and the cost accumulation query the policy at the same
// (t, x); remembering the last answer per thread halves the work.
fn memoized(f: IndexFn) -> IndexFn {
    let uid = NEXT_UID.fetch_add(1, Ordering::Relaxed);
    Arc::new(move |t, x| {
        let hit = MEMO.with(|m| {
            m.borrow()
                .get(&uid)
                .and_then(|(tb, xs, i)| (*tb == t.to_bits() && xs.as_slice() == x).then_some(*i))
        });
        if let Some(i) = hit {
            return i;
        }
        let i = f(t, x);
        MEMO.with(|m| {
            let mut m = m.borrow_mut();
            let e = m.entry(uid).or_insert_with(|| (0, Vec::new(), 0));
            e.0 = t.to_bits();
            e.1.clear();
            e.1.extend_from_slice(x);
            e.2 = i;
        });
        i
    })
}

impl Policy {
    /// `γ ≡ gamma`, snapped to the grid.
    pub fn constant(cs: &ControlStructure, gamma: &[f64]) -> Result<Self> {
        if gamma.len() != cs.gamma_dim() {
            return Err(Error::DimensionMismatch {
                context: "constant policy",
                expected: cs.gamma_dim(),
                got: gamma.len(),
            });
        }
        let i = nearest_control(cs, gamma);
        let id = format!("constant({})", fmt_gamma(cs.gamma(i)));
        Ok(Self::from_index(cs, id, PolicyKind::Constant, Arc::new(move |_, _| i)))
    }

    /// Any measurable `(t, x) -> γ`; outputs are snapped to the grid.
    pub fn external(cs: &ControlStructure, id: impl Into<String>, gamma_of: GammaFn) -> Self {
        let grid = cs.clone();
        let k = cs.gamma_dim();
        let f: IndexFn = Arc::new(move |t, x| {
            let mut g = vec![0.0; k];
            gamma_of(t, x, &mut g);
            nearest_control(&grid, &g)
        });
        Self::from_index(cs, id.into(), PolicyKind::External, memoized(f))
    }

    /// Policy given directly by grid indices.
    pub fn from_index(cs: &ControlStructure, id: String, kind: PolicyKind, index_of: IndexFn) -> Self {
        Self {
            id,
            kind,
            n_controls: cs.len(),
            index_of,
            fallbacks: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn index(&self, t: f64, x: &[f64]) -> usize {
        (self.index_of)(t, x)
    }

    pub fn gamma<'a>(&self, cs: &'a ControlStructure, t: f64, x: &[f64]) -> &'a [f64] {
        cs.gamma(self.index(t, x))
    }

    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    /// States at which the feedback gradient was unusable so far.
    pub fn fallback_count(&self) -> usize {
        self.fallbacks.load(Ordering::Relaxed)
    }

    pub(crate) fn check(&self, cs: &ControlStructure) -> Result<()> {
        if self.n_controls != cs.len() {
            return Err(Error::DimensionMismatch {
                context: "policy control grid",
                expected: cs.len(),
                got: self.n_controls,
            });
        }
        Ok(())
    }
}

fn fmt_gamma(g: &[f64]) -> String {
    g.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(";")
}

/// `γ̄(x) = argmin_γ {L(x, γ) + ζ̄1(x) G(x)^{-1} R1(γ) + ζ̄2(x) R2(γ)}`.
///
/// Where `ζ̄` is not finite the selection at the nearest evaluation point of
/// the ergodic solution is used instead and counted.
pub fn synthesize_feedback(ergodic: &ErgodicSolution, cs: &ControlStructure, model: &GalerkinModel) -> Result<Policy> {
    let surrogate = ergodic.surrogate.clone();
    if !surrogate.has_gradient() {
        return Err(Error::GradientUnavailable("feedback needs a ζ̄ surrogate".into()));
    }
    let (d1, d2) = (model.d1(), model.d2());
    if cs.d1() != d1 || cs.d2() != d2 {
        return Err(Error::DimensionMismatch {
            context: "control structure noise dimensions",
            expected: d1 + d2,
            got: cs.d1() + cs.d2(),
        });
    }
    let u_zero = vec![0.0; d2];
    let mut anchors = Vec::new();
    for (k, x) in ergodic.points.iter().enumerate() {
        let (Some(z1), Some(z2)) = (ergodic.zeta1_at.get(k), ergodic.zeta2_at.get(k)) else {
            continue;
        };
        if z1.len() != d1 || !z1.iter().chain(z2).all(|v| v.is_finite()) {
            continue;
        }
        let z = times_g_inv(model, x, z1);
        let u = if z2.len() == d2 { z2.as_slice() } else { u_zero.as_slice() };
        anchors.push((x.clone(), cs.select(x, &z, u).index));
    }
    let grid = cs.clone();
    let m = model.clone();
    let fallbacks = Arc::new(AtomicUsize::new(0));
    let counter = fallbacks.clone();
    let f: IndexFn = Arc::new(move |_, x| {
        let mut zeta = vec![0.0; d1 + d2];
        surrogate.zeta(x, &mut zeta);
        if zeta.iter().all(|v| v.is_finite()) {
            let z = times_g_inv(&m, x, &zeta[..d1]);
            if z.iter().all(|v| v.is_finite()) {
                return grid.select(x, &z, &zeta[d1..]).index;
            }
        }
        counter.fetch_add(1, Ordering::Relaxed);
        nearest_anchor(&anchors, x).unwrap_or_else(|| grid.select(x, &vec![0.0; d1], &vec![0.0; d2]).index)
    });
    let mut p = Policy::from_index(cs, "feedback".into(), PolicyKind::StateFeedback, memoized(f));
    p.fallbacks = fallbacks;
    Ok(p)
}

fn times_g_inv(model: &GalerkinModel, x: &[f64], z: &[f64]) -> Vec<f64> {
    let d1 = z.len();
    let mut ginv = vec![0.0; d1 * d1];
    model.g_inv_into(x, &mut ginv);
    (0..d1).map(|j| (0..d1).map(|i| z[i] * ginv[i * d1 + j]).sum()).collect()
}

fn nearest_anchor(anchors: &[(Vec<f64>, usize)], x: &[f64]) -> Option<usize> {
    anchors
        .iter()
        .map(|(a, i)| (a.iter().zip(x).map(|(p, q)| (p - q).powi(2)).sum::<f64>(), *i))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, i)| i)
}
