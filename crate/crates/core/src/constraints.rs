//! Hard operating constraints shared by the terminal set, the MPC and the indicators.

use serde::{Deserialize, Serialize};

use crate::engine::{idx, mixture_ratio_rows, EngineParams, EngineState};

/// Linear half-space `aᵀv ≤ b`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace<V> {
    pub a: V,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HardConstraints {
    pub omega_max: f64,
    pub p_gg_max: f64,
    pub mr_cc: (f64, f64),
    pub mr_gg: (f64, f64),
    pub mr_pi: (f64, f64),
}

impl Default for HardConstraints {
    fn default() -> Self {
        Self {
            omega_max: 1.05,
            p_gg_max: 1.3,
            mr_cc: (4.0, 7.5),
            mr_gg: (0.5, 1.5),
            mr_pi: (4.0, 6.5),
        }
    }
}

impl HardConstraints {
    /// Box rows on absolute state: `(component, upper bound)`.
    pub fn state_box(&self) -> [(usize, f64); 3] {
        [(idx::OMEGA_H, self.omega_max), (idx::OMEGA_O, self.omega_max), (idx::P_GG, self.p_gg_max)]
    }

    /// Mixture-ratio rows `ox − MR·fu ≤ 0` on absolute state, order PI, CC, GG, each lower
    /// then upper.
    pub fn mr_rows(&self, p: &EngineParams) -> Vec<HalfSpace<EngineState>> {
        let rows = mixture_ratio_rows(p);
        let ranges = [self.mr_pi, self.mr_cc, self.mr_gg];
        let mut out = Vec::with_capacity(6);
        for ((ox, fu), (lo, hi)) in rows.iter().zip(ranges) {
            out.push(HalfSpace { a: fu * lo - ox, b: 0.0 });
            out.push(HalfSpace { a: ox - fu * hi, b: 0.0 });
        }
        out
    }

    /// All state half-spaces shifted to variations about `x_r`.
    pub fn delta_halfspaces(
        &self,
        x_r: &EngineState,
        p: &EngineParams,
        with_mr: bool,
    ) -> Vec<HalfSpace<EngineState>> {
        let mut out = Vec::new();
        for (i, ub) in self.state_box() {
            let mut a = EngineState::zeros();
            a[i] = 1.0;
            out.push(HalfSpace { a, b: ub - x_r[i] });
        }
        if with_mr {
            for h in self.mr_rows(p) {
                let b = h.b - h.a.dot(x_r);
                out.push(HalfSpace { a: h.a, b });
            }
        }
        out
    }

    /// True when every hard constraint holds (with an absolute slack `tol`).
    pub fn satisfied(&self, x: &EngineState, p: &EngineParams, with_mr: bool, tol: f64) -> bool {
        if self.state_box().iter().any(|&(i, ub)| x[i] > ub + tol) {
            return false;
        }
        if with_mr {
            let (pi, cc, gg) = crate::engine::mixture_ratios(x, p);
            for (v, (lo, hi)) in [(pi, self.mr_pi), (cc, self.mr_cc), (gg, self.mr_gg)] {
                if v < lo - tol || v > hi + tol {
                    return false;
                }
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nominal_point_strictly_inside() {
        let p = EngineParams::nominal();
        let c = HardConstraints::default();
        let x = EngineState::repeat(1.0);
        assert!(c.satisfied(&x, &p, true, 0.0));
        for h in c.delta_halfspaces(&x, &p, true) {
            assert!(h.b > 0.0);
        }
    }

    #[test]
    fn mr_rows_match_ratio_test() {
        let p = EngineParams::nominal();
        let c = HardConstraints::default();
        let mut x = EngineState::repeat(1.0);
        x[idx::M_VCO] = 1.4; // MR_CC = 8.4
        let violated: Vec<bool> = c.mr_rows(&p).iter().map(|h| h.a.dot(&x) > h.b).collect();
        assert!(violated[3]);
        assert!(!c.satisfied(&x, &p, true, 0.0));
        assert!(c.satisfied(&x, &p, false, 0.0));
    }
}
