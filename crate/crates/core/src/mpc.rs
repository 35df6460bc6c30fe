//! Scenario-based min-max MPC in epigraph form.
//!
//! Per control step the problem is
//!
//! ```text
//! minimize    γ + ρ·Σσ
//! subject to  J(x_i, u, z_i) ≤ γ                     every scenario i
//!             x_{i,k+1} = A x_{i,k} + B u_k + w_i      z_{i,k+1} = z_{i,k} + dt·K_I·T x_{i,k}
//!             x_{i,Np+1}ᵀ P x_{i,Np+1} ≤ α_P + σ_T
//!             aⱼᵀ x_{i,k} ≤ bⱼ + σⱼ,  u box,  rate box,  σ ≥ 0
//! ```
//!
//! with `u_k = u_{Nu−1}` for `k ≥ Nu`. [`build_horizon`] produces the full layout with the
//! state and integral copies as variables; [`solve_problem`] eliminates them per scenario
//! and hands the reduced QCQP to the interior-point solver.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraints::HardConstraints;
use crate::engine::{idx, tracked, ControlSections, EngineParams, EngineState, TrackedState, N_U, N_X, N_Z};
use crate::error::{Error, Result};
use crate::linearize::{discretize_zoh_dyn, to_dyn, LinearModel};
use crate::qcqp::{self, IpmOptions, IpmStatus, Qcqp, Quad};
use crate::refgen::Equilibrium;
use crate::scenarios::{generate_disturbances, ScenarioConfig, ScenarioSet};
use crate::terminal::TerminalSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MrTrigger {
    /// Mixture-ratio rows from `t_c` on.
    Time,
    /// Mixture-ratio rows once the chamber fuel flow exceeds `fuel_flow_trigger`.
    FuelFlow,
}

/// How a scenario vector enters the discrete prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceModel {
    /// `w` is a constant rate added to `ẋ`, held over each step: `w_d = ∫₀^dt e^{A_c s} ds · w`.
    Continuous,
    /// `w` is added to `x` once per step.
    PerStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    pub np: usize,
    pub nu: usize,
    pub dt: f64,
    pub q: [f64; N_X],
    pub r: [f64; N_U],
    pub s: [f64; N_Z],
    pub k_i: [f64; N_Z],
    pub constraints: HardConstraints,
    /// Section units per second.
    pub u_rate_max: f64,
    pub t_c: f64,
    /// The integral state starts accumulating here.
    pub integrate_from: f64,
    pub mr_trigger: MrTrigger,
    pub fuel_flow_trigger: f64,
    pub rho_slack: f64,
    pub rho_terminal: f64,
    pub disturbance: DisturbanceModel,
    pub tol: f64,
    pub max_iter: usize,
    /// Solve the reduced problem (state copies eliminated) instead of the full layout.
    pub condensed: bool,
}

impl Default for MpcConfig {
    fn default() -> Self {
        let mut q = [0.1; N_X];
        q[idx::P_CC] = 10.0;
        for i in [idx::M_VCH, idx::M_VCO, idx::M_VGH, idx::M_VGO] {
            q[i] = 1.0;
        }
        Self {
            np: 10,
            nu: 5,
            dt: 0.01,
            q,
            r: [0.1; N_U],
            s: [1.0, 0.1, 0.1, 0.1, 0.1],
            k_i: [1.0, 3.0, 3.0, 3.0, 3.0],
            constraints: HardConstraints::default(),
            u_rate_max: 1.5,
            t_c: 1.9,
            integrate_from: 1.9,
            mr_trigger: MrTrigger::Time,
            fuel_flow_trigger: 0.2,
            rho_slack: 1e3,
            rho_terminal: 1.0,
            disturbance: DisturbanceModel::Continuous,
            tol: 1e-9,
            max_iter: 100,
            condensed: true,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.np >= self.nu && self.nu >= 1) {
            return bad("need np >= nu >= 1");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if self.q.iter().chain(&self.r).chain(&self.k_i).any(|&v| !(v > 0.0)) {
            return bad("q, r and k_i entries must be positive");
        }
        if self.s.iter().any(|&v| !(v >= 0.0)) {
            return bad("s entries must be nonnegative");
        }
        if !(self.u_rate_max > 0.0 && self.rho_slack > 0.0 && self.rho_terminal > 0.0) {
            return bad("u_rate_max and penalty weights must be positive");
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return bad("solver tolerance and iteration cap must be positive");
        }
        Ok(())
    }

    pub fn q_matrix(&self) -> nalgebra::SMatrix<f64, N_X, N_X> {
        nalgebra::SMatrix::from_diagonal(&EngineState::from_column_slice(&self.q))
    }

    pub fn r_matrix(&self) -> nalgebra::SMatrix<f64, N_U, N_U> {
        nalgebra::SMatrix::from_diagonal(&ControlSections::from_column_slice(&self.r))
    }

    /// Whether the mixture-ratio rows are scheduled at this instant.
    pub fn mr_active(&self, t: f64, x_meas: &EngineState) -> bool {
        match self.mr_trigger {
            MrTrigger::Time => t >= self.t_c - 1e-9,
            MrTrigger::FuelFlow => x_meas[idx::M_VCH] > self.fuel_flow_trigger,
        }
    }
}

/// Dimension-generic horizon data, all in variations about the anchor.
#[derive(Debug, Clone)]
pub struct HorizonData {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Selects the integrated components: `nz × n`.
    pub t: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub k_i: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub alpha: f64,
    /// Per-step additive disturbance of each scenario.
    pub w: Vec<DVector<f64>>,
    /// Softened rows `aᵀx_k ≤ b` applied to every predicted state.
    pub state_rows: Vec<(DVector<f64>, f64)>,
    pub u_lo: DVector<f64>,
    pub u_hi: DVector<f64>,
    /// Previous control variation and the per-step rate bound.
    pub rate: Option<(DVector<f64>, f64)>,
    pub np: usize,
    pub nu: usize,
    pub dt: f64,
    pub rho_slack: f64,
    pub rho_terminal: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
    pub m: usize,
    pub nz: usize,
    pub np: usize,
    pub nu: usize,
    pub n_scen: usize,
    /// One slack per state row, then the terminal slack.
    pub n_slack: usize,
}

impl Layout {
    pub fn u(&self, j: usize) -> usize {
        j * self.m
    }
    fn block(&self) -> usize {
        (self.n + self.nz) * (self.np + 1)
    }
    fn scen(&self, i: usize) -> usize {
        self.m * self.nu + i * self.block()
    }
    /// Offset of `x_{i,k}`, `k ∈ 1..=np+1`.
    pub fn x(&self, i: usize, k: usize) -> usize {
        self.scen(i) + (k - 1) * self.n
    }
    /// Offset of `z_{i,k}`, `k ∈ 1..=np+1`.
    pub fn z(&self, i: usize, k: usize) -> usize {
        self.scen(i) + self.n * (self.np + 1) + (k - 1) * self.nz
    }
    pub fn gamma(&self) -> usize {
        self.m * self.nu + self.n_scen * self.block()
    }
    pub fn slack(&self, j: usize) -> usize {
        self.gamma() + 1 + j
    }
    pub fn terminal_slack(&self) -> usize {
        self.slack(self.n_slack - 1)
    }
    pub fn n_vars(&self) -> usize {
        self.gamma() + 1 + self.n_slack
    }
    /// Variables that survive elimination: controls, γ and slacks.
    pub fn free(&self) -> Vec<usize> {
        (0..self.m * self.nu).chain(self.gamma()..self.n_vars()).collect()
    }
}

/// The epigraph QCQP in full layout. Quadratic rows: scenario epigraphs, then terminal
/// ellipsoids. Equality rows are grouped by scenario.
#[derive(Debug, Clone)]
pub struct MpcProblem {
    pub qcqp: Qcqp,
    pub layout: Layout,
}

impl MpcProblem {
    pub fn n_equalities(&self) -> usize {
        self.qcqp.a.nrows()
    }

    /// `J(x_i, u, z_i)` at a full-layout point.
    pub fn scenario_cost(&self, v: &DVector<f64>, i: usize) -> f64 {
        self.qcqp.quad[i].eval(v) + v[self.layout.gamma()]
    }
}

fn block_diag(blocks: &[&DMatrix<f64>], scale: f64) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut o = 0;
    for b in blocks {
        let k = b.nrows();
        out.view_mut((o, o), (k, k)).copy_from(&(*b * scale));
        o += k;
    }
    out
}

pub fn build_horizon(h: &HorizonData, dx0: &DVector<f64>, z0: &DVector<f64>) -> Result<MpcProblem> {
    let (n, m, nz) = (h.a.nrows(), h.b.ncols(), h.t.nrows());
    let dims_ok = h.a.ncols() == n
        && h.b.nrows() == n
        && h.t.ncols() == n
        && h.q.shape() == (n, n)
        && h.r.shape() == (m, m)
        && h.s.shape() == (nz, nz)
        && h.k_i.shape() == (nz, nz)
        && h.p.shape() == (n, n)
        && dx0.len() == n
        && z0.len() == nz
        && h.u_lo.len() == m
        && h.u_hi.len() == m
        && h.w.iter().all(|w| w.len() == n)
        && h.state_rows.iter().all(|(a, _)| a.len() == n)
        && h.rate.as_ref().map_or(true, |(u, _)| u.len() == m);
    if !dims_ok {
        return Err(Error::Contract("horizon data dimensions disagree".into()));
    }
    if !(h.np >= h.nu && h.nu >= 1) || h.w.is_empty() {
        return Err(Error::Contract("need np >= nu >= 1 and at least one scenario".into()));
    }
    let lay = Layout {
        n,
        m,
        nz,
        np: h.np,
        nu: h.nu,
        n_scen: h.w.len(),
        n_slack: h.state_rows.len() + 1,
    };
    let nv = lay.n_vars();
    let (np, nu) = (h.np, h.nu);

    let mut obj = DVector::zeros(nv);
    obj[lay.gamma()] = 1.0;
    for j in 0..h.state_rows.len() {
        obj[lay.slack(j)] = h.rho_slack;
    }
    obj[lay.terminal_slack()] = h.rho_terminal;
    let mut prob = Qcqp::new(nv, Quad::linear(obj, 0.0));

    // Dynamics and integrator equalities.
    let blk = (n + nz) * (np + 1);
    let mut a_eq = DMatrix::zeros(lay.n_scen * blk, nv);
    let mut b_eq = DVector::zeros(lay.n_scen * blk);
    let kt = &h.k_i * &h.t * h.dt;
    let ax0 = &h.a * dx0;
    let z1 = z0 + &kt * dx0;
    for (i, w) in h.w.iter().enumerate() {
        let base = i * blk;
        for k in 0..=np {
            let r0 = base + k * n;
            let xo = lay.x(i, k + 1);
            for d in 0..n {
                a_eq[(r0 + d, xo + d)] = 1.0;
            }
            a_eq.view_mut((r0, lay.u(k.min(nu - 1))), (n, m)).copy_from(&(-&h.b));
            if k == 0 {
                b_eq.rows_mut(r0, n).copy_from(&(&ax0 + w));
            } else {
                a_eq.view_mut((r0, lay.x(i, k)), (n, n)).copy_from(&(-&h.a));
                b_eq.rows_mut(r0, n).copy_from(w);
            }
            let r1 = base + n * (np + 1) + k * nz;
            let zo = lay.z(i, k + 1);
            for d in 0..nz {
                a_eq[(r1 + d, zo + d)] = 1.0;
            }
            if k == 0 {
                b_eq.rows_mut(r1, nz).copy_from(&z1);
            } else {
                for d in 0..nz {
                    a_eq[(r1 + d, lay.z(i, k) + d)] = -1.0;
                }
                a_eq.view_mut((r1, lay.x(i, k)), (nz, n)).copy_from(&(-&kt));
            }
        }
    }
    prob.a = a_eq;
    prob.b = b_eq;

    // Epigraph rows J_i − γ ≤ 0, with ½vᵀ(2W)v = vᵀWv.
    let r_blk = block_diag(&vec![&h.r; nu], 2.0 * h.dt);
    let q_dt = &h.q * h.dt;
    let mut x_parts: Vec<&DMatrix<f64>> = vec![&q_dt; np];
    x_parts.push(&h.p);
    let x_blk = block_diag(&x_parts, 2.0);
    let z_blk = block_diag(&vec![&h.s; np], 2.0 * h.dt);
    for i in 0..lay.n_scen {
        let mut q = DVector::zeros(nv);
        q[lay.gamma()] = -1.0;
        let mut blocks = vec![(lay.u(0), r_blk.clone()), (lay.x(i, 1), x_blk.clone())];
        if np > 0 && nz > 0 {
            blocks.push((lay.z(i, 1), z_blk.clone()));
        }
        prob.quad.push(Quad { blocks, q, r: 0.0 });
    }
    for i in 0..lay.n_scen {
        let mut q = DVector::zeros(nv);
        q[lay.terminal_slack()] = -1.0;
        prob.quad.push(Quad { blocks: vec![(lay.x(i, np + 1), &h.p * 2.0)], q, r: -h.alpha });
    }

    // Linear rows.
    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for j in 0..nu {
        for c in 0..m {
            rows.push((vec![(lay.u(j) + c, 1.0)], h.u_hi[c]));
            rows.push((vec![(lay.u(j) + c, -1.0)], -h.u_lo[c]));
        }
    }
    if let Some((du_prev, r)) = &h.rate {
        for c in 0..m {
            rows.push((vec![(lay.u(0) + c, 1.0)], du_prev[c] + r));
            rows.push((vec![(lay.u(0) + c, -1.0)], r - du_prev[c]));
        }
        for j in 1..nu {
            for c in 0..m {
                let (a, b) = (lay.u(j) + c, lay.u(j - 1) + c);
                rows.push((vec![(a, 1.0), (b, -1.0)], *r));
                rows.push((vec![(a, -1.0), (b, 1.0)], *r));
            }
        }
    }
    for i in 0..lay.n_scen {
        for k in 1..=np + 1 {
            for (j, (a, b)) in h.state_rows.iter().enumerate() {
                let mut e: Vec<(usize, f64)> =
                    a.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(d, v)| (lay.x(i, k) + d, *v)).collect();
                e.push((lay.slack(j), -1.0));
                rows.push((e, *b));
            }
        }
    }
    for j in 0..lay.n_slack {
        rows.push((vec![(lay.slack(j), -1.0)], 0.0));
    }
    let mut g = DMatrix::zeros(rows.len(), nv);
    let mut hv = DVector::zeros(rows.len());
    for (r, (e, b)) in rows.into_iter().enumerate() {
        for (c, v) in e {
            g[(r, c)] += v;
        }
        hv[r] = b;
    }
    prob.g = g;
    prob.h = hv;
    Ok(MpcProblem { qcqp: prob, layout: lay })
}

/// Affine parametrization `v = M·v_f + m0` of the full variable by the free variables.
#[derive(Debug, Clone)]
pub struct Elimination {
    pub m: DMatrix<f64>,
    pub m0: DVector<f64>,
}

/// Solves each scenario's equality block for its state and integral copies.
pub fn eliminate(prob: &MpcProblem) -> Result<Elimination> {
    let lay = &prob.layout;
    let free = lay.free();
    let nf = free.len();
    let nv = lay.n_vars();
    let blk = lay.block();
    let mut m = DMatrix::zeros(nv, nf);
    let mut m0 = DVector::zeros(nv);
    for (c, &f) in free.iter().enumerate() {
        m[(f, c)] = 1.0;
    }
    for i in 0..lay.n_scen {
        let (r0, c0) = (i * blk, lay.scen(i));
        let e = prob.qcqp.a.view((r0, c0), (blk, blk)).into_owned();
        let mut f = DMatrix::zeros(blk, nf);
        for (c, &j) in free.iter().enumerate() {
            f.column_mut(c).copy_from(&prob.qcqp.a.view((r0, j), (blk, 1)));
        }
        let lu = e.lu();
        let t = lu
            .solve(&(-f))
            .ok_or_else(|| Error::Solver(format!("scenario {i} dynamics block is singular")))?;
        let c = lu.solve(&prob.qcqp.b.rows(r0, blk).into_owned()).expect("factored above");
        m.view_mut((c0, 0), (blk, nf)).copy_from(&t);
        m0.rows_mut(c0, blk).copy_from(&c);
    }
    Ok(Elimination { m, m0 })
}

fn reduce_quad(q: &Quad, el: &Elimination) -> Quad {
    let nf = el.m.ncols();
    let mut p = DMatrix::zeros(nf, nf);
    let mut lin = el.m.transpose() * &q.q;
    let mut r = q.r + q.q.dot(&el.m0);
    for (o, pb) in &q.blocks {
        let k = pb.nrows();
        let mb = el.m.rows(*o, k);
        let c = el.m0.rows(*o, k);
        let pm = pb * &mb;
        p += mb.transpose() * &pm;
        lin += mb.transpose() * (pb * &c);
        r += 0.5 * c.dot(&(pb * &c));
    }
    if q.blocks.is_empty() {
        Quad::linear(lin, r)
    } else {
        Quad::dense(p, lin, r)
    }
}

/// The problem restricted to `v = M·v_f + m0`; equality rows vanish.
pub fn condense(prob: &MpcProblem, el: &Elimination) -> Qcqp {
    let p = &prob.qcqp;
    let mut out = Qcqp::new(el.m.ncols(), reduce_quad(&p.objective, el));
    out.quad = p.quad.iter().map(|q| reduce_quad(q, el)).collect();
    out.g = &p.g * &el.m;
    out.h = &p.h - &p.g * &el.m0;
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MpcStatus {
    Optimal,
    MaxIter,
    InfeasibleSoftened,
}

#[derive(Debug, Clone)]
pub struct MpcSolution {
    /// Control variations `Δu_0 … Δu_{Nu−1}`.
    pub du: Vec<DVector<f64>>,
    pub gamma: f64,
    pub scenario_costs: Vec<f64>,
    /// Per scenario, `Δx_1 … Δx_{Np+1}`.
    pub predicted: Vec<Vec<DVector<f64>>>,
    pub integral: Vec<Vec<DVector<f64>>>,
    pub slacks: DVector<f64>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    /// `‖A_eq v − b_eq‖_∞` of the full-layout point.
    pub equality_residual: f64,
    pub gap_monotone: bool,
    pub status: MpcStatus,
    /// Full-layout solution vector.
    pub v: DVector<f64>,
}

impl MpcSolution {
    pub fn slack_norm(&self) -> f64 {
        self.slacks.amax()
    }
}

/// Starting point: the given control sequence (zeros otherwise), with γ and slacks lifted
/// so every row holds.
fn initial_point(prob: &MpcProblem, el: &Elimination, du: Option<&[DVector<f64>]>) -> DVector<f64> {
    let lay = &prob.layout;
    let nf = el.m.ncols();
    let mut vf = DVector::zeros(nf);
    if let Some(seq) = du {
        for (j, d) in seq.iter().take(lay.nu).enumerate() {
            vf.rows_mut(lay.u(j), lay.m).copy_from(d);
        }
    }
    let v = &el.m * &vf + &el.m0;
    let base = lay.m * lay.nu;
    let mut gamma = 0.0f64;
    for i in 0..lay.n_scen {
        gamma = gamma.max(prob.scenario_cost(&v, i));
    }
    vf[base] = gamma + 1.0;
    let v = &el.m * &vf + &el.m0;
    // Lift each slack above its worst row violation.
    let g = prob.qcqp.ineq(&v);
    let nq = prob.qcqp.quad.len();
    let mut need = vec![0.0f64; lay.n_slack];
    for r in 0..prob.qcqp.g.nrows() {
        for j in 0..lay.n_slack {
            if prob.qcqp.g[(r, lay.slack(j))] < 0.0 {
                need[j] = need[j].max(g[nq + r]);
            }
        }
    }
    for i in 0..lay.n_scen {
        need[lay.n_slack - 1] = need[lay.n_slack - 1].max(g[lay.n_scen + i]);
    }
    for j in 0..lay.n_slack {
        vf[base + 1 + j] = need[j] + 1.0;
    }
    vf
}

/// Solves the epigraph problem; `warm` is a control-variation sequence to start from.
pub fn solve_problem(
    prob: &MpcProblem,
    warm: Option<&[DVector<f64>]>,
    opts: &IpmOptions,
    condensed: bool,
) -> Result<MpcSolution> {
    let lay = prob.layout;
    let el = eliminate(prob)?;
    let vf0 = initial_point(prob, &el, warm);
    let (v, ipm) = if condensed {
        let red = condense(prob, &el);
        let sol = qcqp::solve(&red, Some(&vf0), opts)?;
        (&el.m * &sol.x + &el.m0, sol)
    } else {
        let v0 = &el.m * &vf0 + &el.m0;
        let sol = qcqp::solve(&prob.qcqp, Some(&v0), opts)?;
        (sol.x.clone(), sol)
    };
    let equality_residual = if prob.qcqp.a.nrows() > 0 {
        (&prob.qcqp.a * &v - &prob.qcqp.b).amax()
    } else {
        0.0
    };
    let slacks = v.rows(lay.slack(0), lay.n_slack).into_owned();
    let status = match ipm.status {
        IpmStatus::MaxIter => MpcStatus::MaxIter,
        IpmStatus::Optimal if slacks.amax() > 1e-7 => MpcStatus::InfeasibleSoftened,
        IpmStatus::Optimal => MpcStatus::Optimal,
    };
    let gap_monotone = ipm.gap_history.windows(2).all(|w| w[1] <= w[0]);
    Ok(MpcSolution {
        du: (0..lay.nu).map(|j| v.rows(lay.u(j), lay.m).into_owned()).collect(),
        gamma: v[lay.gamma()],
        scenario_costs: (0..lay.n_scen).map(|i| prob.scenario_cost(&v, i)).collect(),
        predicted: (0..lay.n_scen)
            .map(|i| (1..=lay.np + 1).map(|k| v.rows(lay.x(i, k), lay.n).into_owned()).collect())
            .collect(),
        integral: (0..lay.n_scen)
            .map(|i| (1..=lay.np + 1).map(|k| v.rows(lay.z(i, k), lay.nz).into_owned()).collect())
            .collect(),
        slacks,
        iterations: ipm.iterations,
        primal_residual: ipm.primal_residual,
        dual_residual: ipm.dual_residual,
        gap: ipm.gap,
        equality_residual,
        gap_monotone,
        status,
        v,
    })
}

/// Everything the controller precomputes for one operating point.
#[derive(Debug, Clone)]
pub struct MpcModel {
    pub lin: LinearModel,
    pub term: TerminalSet,
    pub scen: ScenarioSet,
    pub params: EngineParams,
    pub section_bounds: (f64, f64),
    /// Per-step disturbances in solve order (nominal last when included).
    pub w_d: Vec<EngineState>,
}

impl MpcModel {
    pub fn new(
        lin: LinearModel,
        term: TerminalSet,
        scen: ScenarioSet,
        params: EngineParams,
        section_bounds: (f64, f64),
        cfg: &MpcConfig,
    ) -> Result<Self> {
        let scale = 1.0 + term.p.amax();
        let res = term.lyapunov_residual(&lin);
        if !(res < 1e-6 * scale) {
            return Err(Error::Contract(format!(
                "terminal set does not belong to this linear model (Lyapunov residual {res:.3e})"
            )));
        }
        if (lin.dt - cfg.dt).abs() > 1e-15 {
            return Err(Error::Contract(format!("model dt {} differs from controller dt {}", lin.dt, cfg.dt)));
        }
        if scen.is_empty() {
            return Err(Error::Contract("empty scenario set".into()));
        }
        let all = scen.all();
        let w_d = match cfg.disturbance {
            DisturbanceModel::PerStep => all,
            DisturbanceModel::Continuous => {
                let (_, gamma) = discretize_zoh_dyn(&to_dyn(&lin.a_c), &DMatrix::identity(N_X, N_X), lin.dt);
                all.iter()
                    .map(|w| EngineState::from_column_slice((&gamma * DVector::from_column_slice(w.as_slice())).as_slice()))
                    .collect()
            }
        };
        Ok(Self { lin, term, scen, params, section_bounds, w_d })
    }

    /// Reference solve products for one anchor: linear model, terminal set and scenarios.
    pub fn prepare(
        eq: &Equilibrium,
        params: &EngineParams,
        cfg: &MpcConfig,
        scen_cfg: &ScenarioConfig,
        section_bounds: (f64, f64),
    ) -> Result<Self> {
        cfg.validate()?;
        let lin = LinearModel::about(eq, params, cfg.dt)?;
        let term = TerminalSet::compute(&lin, &cfg.q_matrix(), &cfg.r_matrix(), &cfg.constraints, section_bounds, params)?;
        let sign_rows = cfg.constraints.delta_halfspaces(&eq.x, params, false);
        let scen = generate_disturbances(
            &to_dyn(&lin.a_c),
            scen_cfg.count,
            scen_cfg.modulus,
            scen_cfg.include_nominal,
            &sign_rows,
        );
        Self::new(lin, term, scen, params.clone(), section_bounds, cfg)
    }

    pub fn anchor(&self) -> &Equilibrium {
        &self.lin.anchor
    }
}

fn dv<const R: usize>(v: &nalgebra::SVector<f64, R>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

/// Assembles the step problem from absolute measurements.
pub fn build_problem(
    x_meas: &EngineState,
    z: &TrackedState,
    u_prev: &ControlSections,
    model: &MpcModel,
    cfg: &MpcConfig,
    t_now: f64,
) -> Result<MpcProblem> {
    let eq = model.anchor();
    let with_mr = cfg.mr_active(t_now, x_meas);
    let state_rows = cfg
        .constraints
        .delta_halfspaces(&eq.x, &model.params, with_mr)
        .into_iter()
        .map(|h| (dv(&h.a), h.b))
        .collect();
    let mut t = DMatrix::zeros(N_Z, N_X);
    for (r, &c) in idx::TRACKED.iter().enumerate() {
        t[(r, c)] = 1.0;
    }
    let (lo, hi) = model.section_bounds;
    let h = HorizonData {
        a: to_dyn(&model.lin.a_d),
        b: to_dyn(&model.lin.b_d),
        t,
        q: DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.q)),
        r: DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.r)),
        s: DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.s)),
        k_i: DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.k_i)),
        p: to_dyn(&model.term.p),
        alpha: model.term.alpha_p,
        w: model.w_d.iter().map(dv).collect(),
        state_rows,
        u_lo: dv(&eq.u.map(|u| lo - u)),
        u_hi: dv(&eq.u.map(|u| hi - u)),
        rate: Some((dv(&(u_prev - eq.u)), cfg.u_rate_max * cfg.dt)),
        np: cfg.np,
        nu: cfg.nu,
        dt: cfg.dt,
        rho_slack: cfg.rho_slack,
        rho_terminal: cfg.rho_terminal,
    };
    build_horizon(&h, &dv(&(x_meas - eq.x)), &dv(z))
}

#[derive(Debug, Clone)]
pub struct MpcStep {
    pub u: ControlSections,
    pub solution: Option<MpcSolution>,
    /// Set when the solve failed and the previous command was held.
    pub failure: Option<String>,
    pub mr_active: bool,
}

/// Receding-horizon controller state: integral, previous command and warm start.
#[derive(Debug, Clone)]
pub struct MpcController {
    pub cfg: MpcConfig,
    pub model: MpcModel,
    pub z: TrackedState,
    pub u_prev: ControlSections,
    warm: Option<Vec<DVector<f64>>>,
    pub failures: usize,
}

impl MpcController {
    pub fn new(cfg: MpcConfig, model: MpcModel, u_init: ControlSections) -> Self {
        Self { cfg, model, z: TrackedState::zeros(), u_prev: u_init, warm: None, failures: 0 }
    }

    pub fn step(&mut self, x_meas: &EngineState, t_now: f64) -> MpcStep {
        let eq = self.model.anchor().clone();
        let opts = IpmOptions { tol: self.cfg.tol, max_iter: self.cfg.max_iter };
        let mr_active = self.cfg.mr_active(t_now, x_meas);
        let outcome = build_problem(x_meas, &self.z, &self.u_prev, &self.model, &self.cfg, t_now)
            .and_then(|p| solve_problem(&p, self.warm.as_deref(), &opts, self.cfg.condensed));
        let (u, solution, failure) = match outcome {
            Ok(sol) if sol.status != MpcStatus::MaxIter => {
                let (lo, hi) = self.model.section_bounds;
                let r = self.cfg.u_rate_max * self.cfg.dt;
                let u = ControlSections::from_fn(|c, _| {
                    (eq.u[c] + sol.du[0][c]).clamp(self.u_prev[c] - r, self.u_prev[c] + r).clamp(lo, hi)
                });
                let mut next: Vec<DVector<f64>> = sol.du[1..].to_vec();
                next.push(sol.du[sol.du.len() - 1].clone());
                self.warm = Some(next);
                (u, Some(sol), None)
            }
            Ok(sol) => {
                self.warm = None;
                (self.u_prev, Some(sol), Some(format!("solver hit the iteration cap at t = {t_now:.4}")))
            }
            Err(e) => {
                self.warm = None;
                (self.u_prev, None, Some(format!("solve failed at t = {t_now:.4}: {e}")))
            }
        };
        if failure.is_some() {
            self.failures += 1;
        }
        let k_i = TrackedState::from_column_slice(&self.cfg.k_i);
        if t_now >= self.cfg.integrate_from - 1e-9 {
            self.z += (tracked(x_meas) - tracked(&eq.x)).component_mul(&k_i) * self.cfg.dt;
        }
        self.u_prev = u;
        MpcStep { u, solution, failure, mr_active }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::ValveMap;
    use proptest::prelude::*;

    fn dvec(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    /// Two-state, one-input system with a shaft-like bound on the first state.
    fn toy(ws: &[[f64; 2]]) -> HorizonData {
        HorizonData {
            a: DMatrix::from_row_slice(2, 2, &[0.95, 0.1, 0.0, 0.9]),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 0.1]),
            t: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            q: DMatrix::identity(2, 2),
            r: DMatrix::from_element(1, 1, 0.1),
            s: DMatrix::from_element(1, 1, 1.0),
            k_i: DMatrix::from_element(1, 1, 1.0),
            p: DMatrix::identity(2, 2) * 2.0,
            alpha: 10.0,
            w: ws.iter().map(|w| dvec(w)).collect(),
            state_rows: vec![(dvec(&[1.0, 0.0]), 5.0)],
            u_lo: dvec(&[-1.0]),
            u_hi: dvec(&[1.0]),
            rate: Some((dvec(&[0.0]), 0.5)),
            np: 4,
            nu: 2,
            dt: 0.1,
            rho_slack: 1e3,
            rho_terminal: 1.0,
        }
    }

    fn opts() -> IpmOptions {
        IpmOptions { tol: 1e-10, max_iter: 100 }
    }

    fn engine_model(count: usize) -> (MpcModel, MpcConfig) {
        let cfg = MpcConfig::default();
        let p = EngineParams::nominal();
        let eq = Equilibrium::nominal();
        let scen = ScenarioConfig { count, ..Default::default() };
        (MpcModel::prepare(&eq, &p, &cfg, &scen, ValveMap::default().section_range()).unwrap(), cfg)
    }

    #[test]
    fn equality_rows_per_scenario() {
        let (model, cfg) = engine_model(3);
        let eq = model.anchor().clone();
        let prob = build_problem(&eq.x, &TrackedState::zeros(), &eq.u, &model, &cfg, 1.5).unwrap();
        assert_eq!(model.w_d.len(), 4);
        assert_eq!(prob.n_equalities(), 4 * (12 * 11 + 5 * 11));
    }

    #[test]
    fn mixture_rows_only_from_tc() {
        let (model, cfg) = engine_model(0);
        let eq = model.anchor().clone();
        let z = TrackedState::zeros();
        let before = build_problem(&eq.x, &z, &eq.u, &model, &cfg, 1.89).unwrap();
        let after = build_problem(&eq.x, &z, &eq.u, &model, &cfg, 1.9).unwrap();
        assert_eq!(after.layout.n_slack - before.layout.n_slack, 6);
        let per_row = cfg.np + 1;
        assert_eq!(after.qcqp.g.nrows() - before.qcqp.g.nrows(), 6 * per_row + 6);
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let (model, cfg) = engine_model(0);
        let eq = model.anchor().clone();
        let prob = build_problem(&eq.x, &TrackedState::zeros(), &eq.u, &model, &cfg, 2.0).unwrap();
        let sol = solve_problem(&prob, None, &opts(), true).unwrap();
        assert_eq!(sol.status, MpcStatus::Optimal);
        assert!(sol.du.iter().all(|d| d.amax() < 1e-8));
        assert!(sol.gamma.abs() < 1e-8);
        let mut c = MpcController::new(cfg, model, eq.u);
        let step = c.step(&eq.x, 2.0);
        // The controller solves at `cfg.tol`, which leaves a barrier bias of order 10·tol.
        assert!((step.u - eq.u).amax() < 100.0 * cfg.tol, "{}", (step.u - eq.u).amax());
    }

    #[test]
    fn scenarios_bias_the_command_within_the_rate_box() {
        let (model, cfg) = engine_model(3);
        let eq = model.anchor().clone();
        let mut c = MpcController::new(cfg, model, eq.u);
        let step = c.step(&eq.x, 2.0);
        let d = (step.u - eq.u).amax();
        assert!(step.failure.is_none());
        assert!(d > 1e-6, "no bias: {d}");
        assert!(d <= cfg.u_rate_max * cfg.dt + 1e-12);
    }

    #[test]
    fn consecutive_commands_respect_rate() {
        let (model, cfg) = engine_model(0);
        let eq = model.anchor().clone();
        let mut x = eq.x;
        x[idx::P_CC] *= 0.8;
        x[idx::OMEGA_H] *= 0.9;
        let u0 = ControlSections::repeat(0.3);
        let mut c = MpcController::new(cfg, model, u0);
        let mut prev = u0;
        for k in 0..5 {
            let s = c.step(&x, 1.5 + 0.01 * k as f64);
            assert!((s.u - prev).amax() <= cfg.u_rate_max * cfg.dt + 1e-12);
            prev = s.u;
        }
        assert!((prev - u0).amax() > 0.01);
    }

    #[test]
    fn solver_failure_holds_previous_command() {
        let (model, mut cfg) = engine_model(0);
        cfg.max_iter = 1;
        let eq = model.anchor().clone();
        let mut x = eq.x;
        x[idx::P_CC] = 0.5;
        let u0 = ControlSections::repeat(0.7);
        let mut c = MpcController::new(cfg, model, u0);
        let s = c.step(&x, 2.0);
        assert!(s.failure.is_some());
        assert_eq!(s.u, u0);
        assert_eq!(c.failures, 1);
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        let mut h = toy(&[[0.0, 0.0]]);
        h.q = DMatrix::identity(3, 3);
        assert!(matches!(build_horizon(&h, &dvec(&[0.0, 0.0]), &dvec(&[0.0])), Err(Error::Contract(_))));
    }

    #[test]
    fn condensed_and_full_agree() {
        let h = toy(&[[0.02, -0.01], [0.0, 0.0]]);
        let prob = build_horizon(&h, &dvec(&[0.8, -0.5]), &dvec(&[0.1])).unwrap();
        let a = solve_problem(&prob, None, &opts(), true).unwrap();
        let b = solve_problem(&prob, None, &opts(), false).unwrap();
        assert_eq!(a.status, b.status);
        for (x, y) in a.du.iter().zip(&b.du) {
            assert!((x - y).amax() < 1e-6);
        }
        assert!((a.gamma - b.gamma).abs() < 1e-6 * (1.0 + a.gamma.abs()));
        assert!(b.equality_residual < 1e-8);
    }

    #[test]
    fn objective_scaling_keeps_the_minimizer() {
        let base = toy(&[[0.02, -0.01], [0.0, 0.0]]);
        let mut scaled = base.clone();
        let c = 7.5;
        for m in [&mut scaled.q, &mut scaled.r, &mut scaled.s, &mut scaled.p] {
            *m *= c;
        }
        scaled.alpha *= c;
        let (dx, z) = (dvec(&[0.6, 0.3]), dvec(&[0.0]));
        let a = solve_problem(&build_horizon(&base, &dx, &z).unwrap(), None, &opts(), true).unwrap();
        let b = solve_problem(&build_horizon(&scaled, &dx, &z).unwrap(), None, &opts(), true).unwrap();
        assert!(a.slack_norm() < 1e-9 && b.slack_norm() < 1e-9);
        assert!((&a.du[0] - &b.du[0]).amax() < 1e-8);
        assert!((b.gamma - c * a.gamma).abs() < 1e-8 * (1.0 + b.gamma));
    }

    #[test]
    fn bound_rows_hold_with_zero_slack() {
        let mut h = toy(&[[0.0, 0.0]]);
        h.state_rows = vec![(dvec(&[1.0, 0.0]), 0.5)];
        let sol = solve_problem(&build_horizon(&h, &dvec(&[0.45, 1.0]), &dvec(&[0.0])).unwrap(), None, &opts(), true).unwrap();
        if sol.slack_norm() < 1e-9 {
            for x in &sol.predicted[0] {
                assert!(x[0] <= 0.5 + 1e-8);
            }
        }
        assert!(sol.equality_residual < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn epigraph_is_tight_and_dynamics_hold(
            x0 in -1.0..1.0f64, x1 in -1.0..1.0f64, z in -0.5..0.5f64,
            w0 in -0.05..0.05f64, w1 in -0.05..0.05f64, up in -0.4..0.4f64,
        ) {
            let mut h = toy(&[[w0, w1], [-w1, w0], [0.0, 0.0]]);
            h.rate = Some((dvec(&[up]), 0.5));
            let prob = build_horizon(&h, &dvec(&[x0, x1]), &dvec(&[z])).unwrap();
            let sol = solve_problem(&prob, None, &opts(), true).unwrap();
            prop_assert_eq!(sol.status == MpcStatus::MaxIter, false);
            let worst = sol.scenario_costs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((sol.gamma - worst).abs() < 1e-8 * (1.0 + worst.abs()), "γ {} max J {}", sol.gamma, worst);
            prop_assert!(sol.equality_residual < 1e-8);
            prop_assert!((sol.du[0][0] - up).abs() <= 0.5 + 1e-9);
            prop_assert!((sol.du[1][0] - sol.du[0][0]).abs() <= 0.5 + 1e-9);
            prop_assert!(sol.du.iter().all(|d| d[0] >= -1.0 - 1e-9 && d[0] <= 1.0 + 1e-9));
        }
    }
}
