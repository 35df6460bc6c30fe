//! Finite disturbance set built from the slowest modes of `A_c`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constraints::HalfSpace;
use crate::engine::{EngineState, N_X};
use crate::linearize::modal_decomposition;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub count: usize,
    pub modulus: f64,
    pub include_nominal: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self { count: 3, modulus: 0.1, include_nominal: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    /// Non-nominal disturbances, each of norm `modulus`.
    pub vectors: Vec<EngineState>,
    /// Eigenvalue each vector came from (`None` on the coordinate fallback).
    pub sources: Vec<Option<Complex64>>,
    pub modulus: f64,
    pub include_nominal: bool,
    pub warning: Option<String>,
}

impl ScenarioSet {
    pub fn nominal_only() -> Self {
        Self { vectors: vec![], sources: vec![], modulus: 0.0, include_nominal: true, warning: None }
    }

    /// Disturbances in solve order; the nominal `w = 0` comes last when included.
    pub fn all(&self) -> Vec<EngineState> {
        let mut v = self.vectors.clone();
        if self.include_nominal {
            v.push(EngineState::zeros());
        }
        v
    }

    pub fn len(&self) -> usize {
        self.vectors.len() + usize::from(self.include_nominal)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn parallel(a: &EngineState, b: &EngineState) -> bool {
    (a.dot(b)).abs() >= (1.0 - 1e-9) * a.norm() * b.norm()
}

/// Orients `w` so its projection on the tightest sign row with a nonzero projection is positive.
fn orient(mut w: EngineState, sign_rows: &[HalfSpace<EngineState>]) -> EngineState {
    let mut rows: Vec<&HalfSpace<EngineState>> = sign_rows.iter().collect();
    rows.sort_by(|p, q| (p.b / p.a.norm()).total_cmp(&(q.b / q.a.norm())));
    for h in rows {
        let s = h.a.dot(&w);
        if s.abs() > 1e-12 * w.norm() * h.a.norm() {
            if s < 0.0 {
                w = -w;
            }
            break;
        }
    }
    w
}

/// Takes the `count` modes with largest real part; complex pairs contribute the real part
/// of their eigenvector. Each vector is scaled to `modulus` and oriented toward the most
/// binding of `sign_rows`.
pub fn generate_disturbances(
    a_c: &DMatrix<f64>,
    count: usize,
    modulus: f64,
    include_nominal: bool,
    sign_rows: &[HalfSpace<EngineState>],
) -> ScenarioSet {
    assert!(count <= N_X, "at most {N_X} scenarios");
    let mut vectors: Vec<EngineState> = Vec::new();
    let mut sources = Vec::new();
    let mut warning = None;
    match modal_decomposition(a_c) {
        Ok(modes) => {
            for m in &modes {
                if vectors.len() == count {
                    break;
                }
                if m.value.im < 0.0 {
                    continue;
                }
                let re = EngineState::from_fn(|i, _| m.vector[i].re);
                let n = re.norm();
                if n < 1e-12 {
                    continue;
                }
                let w = orient(re * (modulus / n), sign_rows);
                if vectors.iter().any(|v| parallel(v, &w)) {
                    continue;
                }
                vectors.push(w);
                sources.push(Some(m.value));
            }
        }
        Err(e) => {
            warning = Some(format!("{e}"));
            let mut rows: Vec<(usize, f64)> =
                (0..N_X).map(|i| (i, a_c.row(i).norm())).collect();
            rows.sort_by(|p, q| q.1.total_cmp(&p.1).then(p.0.cmp(&q.0)));
            for &(i, _) in rows.iter().take(count) {
                let mut w = EngineState::zeros();
                w[i] = modulus;
                vectors.push(orient(w, sign_rows));
                sources.push(None);
            }
        }
    }
    ScenarioSet { vectors, sources, modulus, include_nominal, warning }
}
