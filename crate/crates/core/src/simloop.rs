//! Multirate closed-loop harness: controller at `dt_ctrl`, plant and valve servos at
//! `dt_plant`, plus the tracking indicators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{lqr_step, pid_step, LqrController, OpenLoop, PidBank};
use crate::constraints::HardConstraints;
use crate::engine::{
    actuator_step, fc_unchecked, idx, mixture_ratios, starter_flow, ActuatorBank, ControlSections,
    EngineParams, EngineState, ServoParams, ValveAngles, ValveMap, STATE_NAMES,
};
use crate::error::{Error, Result};
use crate::mpc::{MpcController, MpcStatus};
use crate::refgen::ReferenceCommand;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt_plant: f64,
    pub dt_ctrl: f64,
    pub t0: f64,
    pub tf: f64,
    pub servo: ServoParams,
    pub valve: ValveMap,
    /// Sections held during the start-up bootstrap.
    pub startup_sections: f64,
    /// Seed level of the bootstrap for every state except pressures.
    pub startup_level: f64,
    /// Half-width of the multiplicative spread applied to the bootstrap state.
    pub ic_spread: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt_plant: 1e-5,
            dt_ctrl: 0.01,
            t0: 1.5,
            tf: 3.0,
            servo: ServoParams::default(),
            valve: ValveMap::default(),
            startup_sections: 0.3,
            startup_level: 0.05,
            ic_spread: 0.1,
        }
    }
}

impl SimConfig {
    pub fn substeps(&self) -> Result<usize> {
        let r = self.dt_ctrl / self.dt_plant;
        let n = r.round();
        if !(n >= 1.0) || (r - n).abs() > 1e-9 * r {
            return Err(Error::Config(format!("dt_ctrl / dt_plant = {r} is not a positive integer")));
        }
        Ok(n as usize)
    }

    pub fn n_steps(&self) -> Result<usize> {
        let r = (self.tf - self.t0) / self.dt_ctrl;
        let n = r.round();
        if !(n >= 1.0) || (r - n).abs() > 1e-9 * r {
            return Err(Error::Config(format!("(tf - t0) / dt_ctrl = {r} is not a positive integer")));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.substeps()?;
        self.n_steps()?;
        if !(self.t0 >= 0.0) {
            return Err(Error::Config("t0 must be nonnegative".into()));
        }
        Ok(())
    }
}

fn rk4(x: &EngineState, u: &ControlSections, t: f64, h: f64, p: &EngineParams) -> EngineState {
    let f = |x: &EngineState, t: f64| fc_unchecked(x, u, starter_flow(t, &p.starter), p);
    let k1 = f(x, t);
    let k2 = f(&(x + k1 * (0.5 * h)), t + 0.5 * h);
    let k3 = f(&(x + k2 * (0.5 * h)), t + 0.5 * h);
    let k4 = f(&(x + k3 * h), t + h);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// One plant substep: RK4 on the complex model with the servo's current sections, then the
/// servo step toward `cmd`. States are clamped at zero.
pub fn integrate_plant_step(
    x: &EngineState,
    bank: &ActuatorBank,
    cmd: &ValveAngles,
    t: f64,
    dt: f64,
    params: &EngineParams,
) -> Result<(EngineState, ActuatorBank)> {
    let u = bank.sections();
    let xn = rk4(x, &u, t, dt, params).map(|v| v.max(0.0));
    if xn.iter().any(|v| !v.is_finite()) {
        let dump: Vec<String> = STATE_NAMES.iter().zip(x.iter()).map(|(n, v)| format!("{n}={v:e}")).collect();
        return Err(Error::PlantAbort { t, reason: format!("non-finite state from [{}]", dump.join(", ")) });
    }
    Ok((xn, actuator_step(bank, cmd, dt)))
}

/// Low-state start-up with the starter firing, sampled at `t0`.
pub fn bootstrap_state(params: &EngineParams, cfg: &SimConfig) -> Result<EngineState> {
    let mut x = EngineState::repeat(cfg.startup_level);
    for i in [idx::P_CC, idx::P_GG, idx::P_LTH, idx::P_VGC] {
        x[i] = params.p_tank_h.min(params.p_tank_o);
    }
    let u = ControlSections::repeat(cfg.startup_sections);
    let n = (cfg.t0 / cfg.dt_plant).round() as usize;
    for k in 0..n {
        let t = k as f64 * cfg.dt_plant;
        x = rk4(&x, &u, t, cfg.dt_plant, params).map(|v| v.max(0.0));
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::PlantAbort { t, reason: "start-up bootstrap diverged".into() });
        }
    }
    Ok(x)
}

/// Multiplies each component by an independent uniform factor in `[1 − spread, 1 + spread]`.
pub fn spread_state(x: &EngineState, seed: u64, spread: f64) -> EngineState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EngineState::from_fn(|i, _| x[i] * (1.0 + rng.gen_range(-spread..=spread)))
}

pub fn default_initial_condition(seed: u64, params: &EngineParams, cfg: &SimConfig) -> Result<EngineState> {
    Ok(spread_state(&bootstrap_state(params, cfg)?, seed, cfg.ic_spread))
}

/// Solver details attached to MPC samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveInfo {
    pub gamma: f64,
    pub status: MpcStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub slack: f64,
    pub mr_active: bool,
    pub held: bool,
}

pub enum Controller {
    OpenLoop(OpenLoop),
    Pid(PidBank),
    Lqr(LqrController),
    Mpc(Box<MpcController>),
}

impl Controller {
    pub fn name(&self) -> &'static str {
        match self {
            Controller::OpenLoop(_) => "ol",
            Controller::Pid(_) => "pid",
            Controller::Lqr(_) => "lqr",
            Controller::Mpc(_) => "mpc",
        }
    }

    fn command(&mut self, x: &EngineState, t: f64, dt: f64) -> (ControlSections, Option<SolveInfo>) {
        match self {
            Controller::OpenLoop(c) => (c.step(), None),
            Controller::Pid(c) => (pid_step(x, c, dt), None),
            Controller::Lqr(c) => (lqr_step(x, c), None),
            Controller::Mpc(c) => {
                let s = c.step(x, t);
                let info = match &s.solution {
                    Some(sol) => SolveInfo {
                        gamma: sol.gamma,
                        status: sol.status,
                        iterations: sol.iterations,
                        primal_residual: sol.primal_residual,
                        dual_residual: sol.dual_residual,
                        gap: sol.gap,
                        slack: sol.slack_norm(),
                        mr_active: s.mr_active,
                        held: s.failure.is_some(),
                    },
                    None => SolveInfo {
                        gamma: f64::NAN,
                        status: MpcStatus::MaxIter,
                        iterations: 0,
                        primal_residual: f64::NAN,
                        dual_residual: f64::NAN,
                        gap: f64::NAN,
                        slack: f64::NAN,
                        mr_active: s.mr_active,
                        held: true,
                    },
                };
                (s.u, Some(info))
            }
        }
    }
}

/// Hard-constraint flags in the order `ω_H, ω_O, p_GG, MR_PI, MR_CC, MR_GG` (true = violated).
pub fn violations(x: &EngineState, p: &EngineParams, c: &HardConstraints) -> [bool; 6] {
    let (pi, cc, gg) = mixture_ratios(x, p);
    let out = |v: f64, (lo, hi): (f64, f64)| v < lo || v > hi;
    [
        x[idx::OMEGA_H] > c.omega_max,
        x[idx::OMEGA_O] > c.omega_max,
        x[idx::P_GG] > c.p_gg_max,
        out(pi, c.mr_pi),
        out(cc, c.mr_cc),
        out(gg, c.mr_gg),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub x: EngineState,
    pub angle_cmd: ValveAngles,
    pub angle: ValveAngles,
    pub u_cmd: ControlSections,
    pub u_act: ControlSections,
    /// `(MR_PI, MR_CC, MR_GG)`.
    pub mr: (f64, f64, f64),
    pub violated: [bool; 6],
    pub solve: Option<SolveInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryLog {
    pub controller: String,
    pub command: ReferenceCommand,
    pub samples: Vec<Sample>,
    /// Set when the plant integration stopped early.
    pub aborted: Option<String>,
    pub solver_failures: usize,
}

/// Runs the loop from `cfg.t0` to `cfg.tf`. The actuators start at rest on `u_init`.
/// `params` drive the plant; `model_params` define the logged mixture ratios.
#[allow(clippy::too_many_arguments)]
pub fn closed_loop_run(
    controller: &mut Controller,
    cmd: &ReferenceCommand,
    ic: &EngineState,
    u_init: &ControlSections,
    params: &EngineParams,
    model_params: &EngineParams,
    constraints: &HardConstraints,
    cfg: &SimConfig,
) -> Result<TrajectoryLog> {
    cfg.validate()?;
    let sub = cfg.substeps()?;
    let steps = cfg.n_steps()?;
    let map = cfg.valve;
    let mut bank = ActuatorBank::at_rest(map.section_to_angle(u_init)?, cfg.servo, map);
    let mut x = *ic;
    let mut log = TrajectoryLog {
        controller: controller.name().into(),
        command: *cmd,
        samples: Vec::with_capacity(steps + 1),
        aborted: None,
        solver_failures: 0,
    };
    let mut last_cmd = *u_init;
    for k in 0..=steps {
        let t = cfg.t0 + k as f64 * cfg.dt_ctrl;
        let (u_cmd, solve) = if k < steps { controller.command(&x, t, cfg.dt_ctrl) } else { (last_cmd, None) };
        if solve.as_ref().is_some_and(|s| s.held) {
            log.solver_failures += 1;
        }
        last_cmd = u_cmd;
        let angle_cmd = map.section_to_angle(&u_cmd)?;
        log.samples.push(Sample {
            t,
            x,
            angle_cmd,
            angle: bank.angle,
            u_cmd,
            u_act: bank.sections(),
            mr: mixture_ratios(&x, model_params),
            violated: violations(&x, model_params, constraints),
            solve,
        });
        if k == steps {
            break;
        }
        for j in 0..sub {
            let ts = t + j as f64 * cfg.dt_plant;
            match integrate_plant_step(&x, &bank, &angle_cmd, ts, cfg.dt_plant, params) {
                Ok((xn, bn)) => {
                    x = xn;
                    bank = bn;
                }
                Err(e) => {
                    log.aborted = Some(e.to_string());
                    return Ok(log);
                }
            }
        }
    }
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Indicators {
    pub settling_time_99: f64,
    pub overshoot_pcc: f64,
    pub constraints_verification_time: f64,
    pub static_error_pcc: f64,
    pub static_error_mr_cc: f64,
    pub static_error_mr_gg: f64,
    pub static_error_mr_pi: f64,
}

impl Indicators {
    pub const NAMES: [&'static str; 7] = [
        "settling_time_99_s",
        "overshoot_pcc_pct",
        "constraints_verification_time_s",
        "static_error_pcc_pct",
        "static_error_mr_cc_pct",
        "static_error_mr_gg_pct",
        "static_error_mr_pi_pct",
    ];

    pub fn values(&self) -> [f64; 7] {
        [
            self.settling_time_99,
            self.overshoot_pcc,
            self.constraints_verification_time,
            self.static_error_pcc,
            self.static_error_mr_cc,
            self.static_error_mr_gg,
            self.static_error_mr_pi,
        ]
    }
}

/// Static errors average the last `0.1 s`; unsettled or never-admissible runs report `+∞`.
pub fn compute_indicators(log: &TrajectoryLog, cmd: &ReferenceCommand) -> Indicators {
    let s = &log.samples;
    let Some(last) = s.last() else {
        return Indicators {
            settling_time_99: f64::INFINITY,
            overshoot_pcc: f64::NAN,
            constraints_verification_time: f64::INFINITY,
            static_error_pcc: f64::NAN,
            static_error_mr_cc: f64::NAN,
            static_error_mr_gg: f64::NAN,
            static_error_mr_pi: f64::NAN,
        };
    };
    let rel = |v: f64, r: f64| (v - r).abs() / r;
    let pcc = |x: &Sample| x.x[idx::P_CC];
    let settle = match s.iter().rposition(|x| rel(pcc(x), cmd.p_cc) > 0.01) {
        None => s[0].t,
        Some(i) if i + 1 < s.len() => s[i + 1].t,
        Some(_) => f64::INFINITY,
    };
    let peak = s.iter().map(pcc).fold(f64::NEG_INFINITY, f64::max);
    let verify = match s.iter().rposition(|x| x.violated.iter().any(|&v| v)) {
        None => s[0].t,
        Some(i) if i + 1 < s.len() => s[i + 1].t,
        Some(_) => f64::INFINITY,
    };
    let window: Vec<&Sample> = s.iter().filter(|x| x.t >= last.t - 0.1 - 1e-9).collect();
    let mean = |f: &dyn Fn(&Sample) -> f64| 100.0 * window.iter().map(|x| f(x)).sum::<f64>() / window.len() as f64;
    Indicators {
        settling_time_99: settle,
        overshoot_pcc: 100.0 * (peak - cmd.p_cc) / cmd.p_cc,
        constraints_verification_time: verify,
        static_error_pcc: mean(&|x| rel(pcc(x), cmd.p_cc)),
        static_error_mr_cc: mean(&|x| rel(x.mr.1, cmd.mr_cc)),
        static_error_mr_gg: mean(&|x| rel(x.mr.2, cmd.mr_gg)),
        static_error_mr_pi: mean(&|x| rel(x.mr.0, cmd.mr_pi)),
    }
}

/// Largest shaft speed over samples with `t ≥ from`.
pub fn max_shaft_speed(log: &TrajectoryLog, from: f64) -> f64 {
    log.samples
        .iter()
        .filter(|s| s.t >= from - 1e-9)
        .map(|s| s.x[idx::OMEGA_H].max(s.x[idx::OMEGA_O]))
        .fold(f64::NEG_INFINITY, f64::max)
}
