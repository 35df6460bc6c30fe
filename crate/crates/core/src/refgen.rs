//! Reference preprocessor: rebuilds a full equilibrium `(x_r, u_r)` from the four launcher
//! commands through the choked-flow relation and a Levenberg–Marquardt trim.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::engine::{
    fc_unchecked, idx, ControlSections, EngineParams, EngineState, N_U, N_X,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceCommand {
    pub p_cc: f64,
    pub mr_pi: f64,
    pub mr_cc: f64,
    pub mr_gg: f64,
}

impl ReferenceCommand {
    pub fn nominal(p_cc: f64) -> Self {
        Self { p_cc, mr_pi: 5.25, mr_cc: 6.0, mr_gg: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.7..=1.2).contains(&self.p_cc) {
            return Err(Error::Range(format!("p_CC_r = {} outside [0.7, 1.2]", self.p_cc)));
        }
        for (name, v) in [("MR_PI", self.mr_pi), ("MR_CC", self.mr_cc), ("MR_GG", self.mr_gg)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Range(format!("{name}_r must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub x: EngineState,
    pub u: ControlSections,
    pub residual_norm: f64,
    pub command: ReferenceCommand,
}

/// Chamber fuel and oxidizer flows `(ṁ_VCH, ṁ_VCO)` from the choked-flow relation.
pub fn chamber_flows_from_reference(cmd: &ReferenceCommand, p: &EngineParams) -> (f64, f64) {
    let total = cmd.p_cc * p.a_th_cc / p.cstar_cc.eval(cmd.mr_cc);
    let mr = cmd.mr_cc;
    let fuel = if mr.is_infinite() { 0.0 } else { total / (1.0 + mr) };
    let ox = if mr.is_infinite() { total } else { total * mr / (1.0 + mr) };
    (fuel / p.s_vch, ox / p.s_vco)
}

/// Eleven dynamics rows (all but `ṗ_CC`, starter off) followed by the global MR, GG MR and
/// GG balance relations on redimensionalized flows.
pub fn equilibrium_residual(
    x: &EngineState,
    u: &ControlSections,
    cmd: &ReferenceCommand,
    p: &EngineParams,
) -> DVector<f64> {
    let d = fc_unchecked(x, u, 0.0, p);
    let mut r = DVector::zeros(14);
    let mut k = 0;
    for i in 0..N_X {
        if i != idx::P_CC {
            r[k] = d[i];
            k += 1;
        }
    }
    let vch = p.s_vch * x[idx::M_VCH];
    let vco = p.s_vco * x[idx::M_VCO];
    let vgh = p.s_vgh * x[idx::M_VGH];
    let vgo = p.s_vgo * x[idx::M_VGO];
    r[11] = (vco + vgo) - cmd.mr_pi * (vch + vgh);
    r[12] = vgo - cmd.mr_gg * vgh;
    r[13] = vgh + vgo - p.s_lth * x[idx::M_LTH] - p.s_vgc * x[idx::M_VGC];
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmOptions {
    pub max_iter: usize,
    pub gtol: f64,
    pub xtol: f64,
    pub damping0: f64,
    pub factor: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iter: 200, gtol: 1e-12, xtol: 1e-14, damping0: 1e-3, factor: 10.0 }
    }
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub x: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn fd_jacobian<F>(f: &F, z: &DVector<f64>, m: usize) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = z.len();
    let mut j = DMatrix::zeros(m, n);
    for c in 0..n {
        let h = 1e-6 * z[c].abs().max(1.0);
        let (mut zp, mut zm) = (z.clone(), z.clone());
        zp[c] += h;
        zm[c] -= h;
        j.set_column(c, &((f(&zp) - f(&zm)) / (2.0 * h)));
    }
    j
}

/// Levenberg–Marquardt with `λI` damping and a central-difference Jacobian.
pub fn lm_solve<F>(residual: F, guess: &DVector<f64>, opts: &LmOptions) -> Result<LmReport>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = guess.len();
    let mut z = guess.clone();
    let mut r = residual(&z);
    let mut cost = 0.5 * r.norm_squared();
    let mut lambda = opts.damping0;
    for it in 0..opts.max_iter {
        let j = fd_jacobian(&residual, &z, r.len());
        let g = j.transpose() * &r;
        if g.amax() < opts.gtol {
            return Ok(LmReport { x: z, residual_norm: r.norm(), iterations: it, converged: true });
        }
        let jtj = j.transpose() * &j;
        loop {
            let mut h = jtj.clone();
            for k in 0..n {
                h[(k, k)] += lambda;
            }
            let step = h.cholesky().map(|c| -c.solve(&g));
            if let Some(step) = step {
                let zn = &z + &step;
                let rn = residual(&zn);
                let cn = 0.5 * rn.norm_squared();
                if cn.is_finite() && cn < cost {
                    z = zn;
                    r = rn;
                    cost = cn;
                    lambda = (lambda / opts.factor).max(1e-15);
                    if step.amax() < opts.xtol {
                        return Ok(LmReport {
                            x: z,
                            residual_norm: r.norm(),
                            iterations: it + 1,
                            converged: true,
                        });
                    }
                    break;
                }
                if step.amax() < opts.xtol {
                    return Ok(LmReport {
                        x: z,
                        residual_norm: r.norm(),
                        iterations: it + 1,
                        converged: true,
                    });
                }
            }
            lambda *= opts.factor;
            if lambda > 1e16 {
                return Err(Error::NoConvergence {
                    iterations: it + 1,
                    residual: r.norm(),
                    best: z.iter().copied().collect(),
                });
            }
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: r.norm(),
        best: z.iter().copied().collect(),
    })
}

/// States solved for by the trim; `p_CC`, `ṁ_VCH`, `ṁ_VCO` are pinned.
pub const FREE_STATES: [usize; 9] = [
    idx::OMEGA_H,
    idx::OMEGA_O,
    idx::P_GG,
    idx::P_LTH,
    idx::P_VGC,
    idx::M_LTH,
    idx::M_VGH,
    idx::M_VGO,
    idx::M_VGC,
];

pub fn solve_reference(
    cmd: &ReferenceCommand,
    p: &EngineParams,
    guess: Option<&Equilibrium>,
) -> Result<Equilibrium> {
    solve_reference_with(cmd, p, guess, (0.01, 1.5), &LmOptions::default())
}

pub fn solve_reference_with(
    cmd: &ReferenceCommand,
    p: &EngineParams,
    guess: Option<&Equilibrium>,
    section_bounds: (f64, f64),
    opts: &LmOptions,
) -> Result<Equilibrium> {
    cmd.validate()?;
    let (m_vch, m_vco) = chamber_flows_from_reference(cmd, p);
    let build = |z: &DVector<f64>| {
        let mut x = EngineState::repeat(1.0);
        x[idx::P_CC] = cmd.p_cc;
        x[idx::M_VCH] = m_vch;
        x[idx::M_VCO] = m_vco;
        for (k, &i) in FREE_STATES.iter().enumerate() {
            x[i] = z[k].exp();
        }
        let u = ControlSections::from_fn(|k, _| z[FREE_STATES.len() + k].exp());
        (x, u)
    };
    // Algebraic rows carry redimensionalized flows; rescale them to the size of the
    // dynamics rows. The weighting leaves the zero set unchanged.
    let w = 1.0 / p.s_vgh;
    let residual = |z: &DVector<f64>| {
        let (x, u) = build(z);
        let mut r = equilibrium_residual(&x, &u, cmd, p);
        for k in 11..14 {
            r[k] *= w;
        }
        r
    };
    let z0 = match guess {
        Some(g) => DVector::from_iterator(
            FREE_STATES.len() + N_U,
            FREE_STATES.iter().map(|&i| g.x[i].ln()).chain(g.u.iter().map(|v| v.ln())),
        ),
        None => DVector::zeros(FREE_STATES.len() + N_U),
    };
    let rep = lm_solve(residual, &z0, opts)?;
    let (x, u) = build(&rep.x);
    let residual_norm = equilibrium_residual(&x, &u, cmd, p).amax();
    if let Some(k) = u.iter().position(|&v| v < section_bounds.0 || v > section_bounds.1) {
        return Err(Error::InfeasibleReference(format!(
            "{} = {} outside [{}, {}]",
            crate::engine::CONTROL_NAMES[k],
            u[k],
            section_bounds.0,
            section_bounds.1
        )));
    }
    Ok(Equilibrium { x, u, residual_norm, command: *cmd })
}

impl Equilibrium {
    pub fn nominal() -> Self {
        Self {
            x: EngineState::repeat(1.0),
            u: ControlSections::repeat(1.0),
            residual_norm: 0.0,
            command: ReferenceCommand::nominal(1.0),
        }
    }

    /// Iterations needed when re-solving from this point.
    pub fn resolve_iterations(&self, p: &EngineParams) -> Result<usize> {
        let cmd = self.command;
        let (m_vch, m_vco) = chamber_flows_from_reference(&cmd, p);
        let w = 1.0 / p.s_vgh;
        let this = self.clone();
        let residual = |z: &DVector<f64>| {
            let mut x = this.x;
            x[idx::M_VCH] = m_vch;
            x[idx::M_VCO] = m_vco;
            for (k, &i) in FREE_STATES.iter().enumerate() {
                x[i] = z[k].exp();
            }
            let u = ControlSections::from_fn(|k, _| z[FREE_STATES.len() + k].exp());
            let mut r = equilibrium_residual(&x, &u, &cmd, p);
            for k in 11..14 {
                r[k] *= w;
            }
            r
        };
        let z0 = DVector::from_iterator(
            FREE_STATES.len() + N_U,
            FREE_STATES.iter().map(|&i| self.x[i].ln()).chain(self.u.iter().map(|v| v.ln())),
        );
        Ok(lm_solve(residual, &z0, &LmOptions::default())?.iterations)
    }
}
