//! Reference controllers: open loop, decentralized PID and unconstrained LQR.

use serde::{Deserialize, Serialize};

use crate::engine::{idx, mixture_ratios, ControlSections, EngineParams, EngineState, N_U, N_X};
use crate::error::{Error, Result};
use crate::linearize::{to_dyn, LinearModel};
use crate::refgen::Equilibrium;
use crate::terminal::{lqr_gain, MatK};

/// Clamps `raw` to the section box and to `±rate` around `prev`.
pub fn shape_command(raw: &ControlSections, prev: &ControlSections, (lo, hi): (f64, f64), rate: f64) -> ControlSections {
    ControlSections::from_fn(|c, _| raw[c].clamp(prev[c] - rate, prev[c] + rate).clamp(lo, hi))
}

/// Quantity a PID loop regulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measured {
    PCc,
    MrCc,
    MrGg,
    MrPi,
}

impl Measured {
    fn value(self, x: &EngineState, p: &EngineParams) -> f64 {
        let (pi, cc, gg) = mixture_ratios(x, p);
        match self {
            Measured::PCc => x[idx::P_CC],
            Measured::MrCc => cc,
            Measured::MrGg => gg,
            Measured::MrPi => pi,
        }
    }

    fn reference(self, eq: &Equilibrium) -> f64 {
        let c = &eq.command;
        match self {
            Measured::PCc => c.p_cc,
            Measured::MrCc => c.mr_cc,
            Measured::MrGg => c.mr_gg,
            Measured::MrPi => c.mr_pi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub measured: Measured,
    pub valve: usize,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PidConfig {
    pub loops: Vec<PidGains>,
}

impl Default for PidConfig {
    fn default() -> Self {
        let l = |measured, valve, kp, ki| PidGains { measured, valve, kp, ki, kd: 0.0 };
        Self {
            loops: vec![
                l(Measured::PCc, idx::A_VGH, 1.0, 8.0),
                l(Measured::MrGg, idx::A_VGO, 0.5, 4.0),
                l(Measured::MrCc, idx::A_VCO, 0.5, 4.0),
                l(Measured::MrPi, idx::A_VGC, 0.5, 4.0),
            ],
        }
    }
}

impl PidConfig {
    pub fn validate(&self) -> Result<()> {
        for g in &self.loops {
            if g.valve >= N_U {
                return Err(Error::Config(format!("pid valve index {} out of range", g.valve)));
            }
            if ![g.kp, g.ki, g.kd].iter().all(|v| v.is_finite()) {
                return Err(Error::Config("pid gains must be finite".into()));
            }
        }
        let mut valves: Vec<_> = self.loops.iter().map(|g| g.valve).collect();
        valves.sort_unstable();
        valves.dedup();
        if valves.len() != self.loops.len() {
            return Err(Error::Config("two pid loops drive the same valve".into()));
        }
        Ok(())
    }

    pub fn zero() -> Self {
        Self {
            loops: Self::default().loops.into_iter().map(|g| PidGains { kp: 0.0, ki: 0.0, kd: 0.0, ..g }).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LoopState {
    integral: f64,
    prev_err: Option<f64>,
}

/// Decentralized PID on relative errors. Valves without a loop stay at `u_r`.
#[derive(Debug, Clone)]
pub struct PidBank {
    pub gains: Vec<PidGains>,
    state: Vec<LoopState>,
    pub eq: Equilibrium,
    pub params: EngineParams,
    pub bounds: (f64, f64),
    pub rate: f64,
    pub u_prev: ControlSections,
}

impl PidBank {
    pub fn new(cfg: &PidConfig, eq: Equilibrium, params: EngineParams, bounds: (f64, f64), rate: f64, u_init: ControlSections) -> Self {
        let state = vec![LoopState { integral: 0.0, prev_err: None }; cfg.loops.len()];
        Self { gains: cfg.loops.clone(), state, eq, params, bounds, rate, u_prev: u_init }
    }

    pub fn integral(&self, k: usize) -> f64 {
        self.state[k].integral
    }
}

pub fn pid_step(x_meas: &EngineState, bank: &mut PidBank, dt: f64) -> ControlSections {
    let mut raw = bank.eq.u;
    let (lo, hi) = bank.bounds;
    for (g, st) in bank.gains.iter().zip(bank.state.iter_mut()) {
        let r = g.measured.reference(&bank.eq);
        let e = (r - g.measured.value(x_meas, &bank.params)) / r;
        let base = bank.eq.u[g.valve];
        let (out_lo, out_hi) = (lo - base, hi - base);
        if g.ki != 0.0 {
            st.integral = (st.integral + e * dt).clamp(out_lo / g.ki.abs(), out_hi / g.ki.abs());
        }
        let de = st.prev_err.map_or(0.0, |p| (e - p) / dt);
        st.prev_err = Some(e);
        raw[g.valve] = base + (g.kp * e + g.ki * st.integral + g.kd * de).clamp(out_lo, out_hi);
    }
    let u = shape_command(&raw, &bank.u_prev, bank.bounds, bank.rate);
    bank.u_prev = u;
    u
}

/// Diagonal LQR weights. The defaults favour chamber pressure and barely weigh the valve flows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LqrConfig {
    pub q: [f64; N_X],
    pub r: [f64; N_U],
}

impl Default for LqrConfig {
    fn default() -> Self {
        let mut q = [0.1; N_X];
        q[idx::P_CC] = 10.0;
        for i in [idx::M_VCH, idx::M_VCO, idx::M_VGH, idx::M_VGO] {
            q[i] = 0.01;
        }
        Self { q, r: [1e-3; N_U] }
    }
}

impl LqrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q.iter().any(|&v| !(v >= 0.0 && v.is_finite())) || self.r.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Config("lqr weights: q must be nonnegative and r positive".into()));
        }
        Ok(())
    }

    /// Continuous-time gain at the anchor of `lin`, `u = Kx`.
    pub fn gain(&self, lin: &LinearModel) -> Result<MatK> {
        let q = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.q));
        let r = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.r));
        let k = lqr_gain(&to_dyn(&lin.a_c), &to_dyn(&lin.b_c), &q, &r)?;
        Ok(MatK::from_column_slice(k.as_slice()))
    }
}

#[derive(Debug, Clone)]
pub struct LqrController {
    pub k: MatK,
    pub eq: Equilibrium,
    pub bounds: (f64, f64),
    pub rate: f64,
    pub u_prev: ControlSections,
}

pub fn lqr_step(x_meas: &EngineState, ctl: &mut LqrController) -> ControlSections {
    let raw = ctl.eq.u + ctl.k * (x_meas - ctl.eq.x);
    let u = shape_command(&raw, &ctl.u_prev, ctl.bounds, ctl.rate);
    ctl.u_prev = u;
    u
}

/// Ramps toward `u_r` at the section rate limit.
#[derive(Debug, Clone)]
pub struct OpenLoop {
    pub u_r: ControlSections,
    pub bounds: (f64, f64),
    pub rate: f64,
    pub u_prev: ControlSections,
}

impl OpenLoop {
    pub fn step(&mut self) -> ControlSections {
        let u = shape_command(&self.u_r, &self.u_prev, self.bounds, self.rate);
        self.u_prev = u;
        u
    }
}
