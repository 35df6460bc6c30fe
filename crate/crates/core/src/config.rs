//! Run configuration and the per-operating-point experiment it resolves to.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{LqrConfig, LqrController, OpenLoop, PidBank, PidConfig};
use crate::engine::{calibrate_params, ClosureConfig, ControlSections, EngineParams, EngineState};
use crate::error::{Error, Result};
use crate::mpc::{MpcConfig, MpcController, MpcModel};
use crate::refgen::{solve_reference, Equilibrium, ReferenceCommand};
use crate::scenarios::ScenarioConfig;
use crate::simloop::{closed_loop_run, default_initial_condition, Controller, SimConfig, TrajectoryLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Ol,
    Pid,
    Lqr,
    Mpc,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] = [Self::Ol, Self::Pid, Self::Lqr, Self::Mpc];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ol => "ol",
            Self::Pid => "pid",
            Self::Lqr => "lqr",
            Self::Mpc => "mpc",
        }
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown controller '{s}' (expected ol, pid, lqr or mpc)")))
    }
}

/// Plant-side parameter perturbation. The controller model always uses the calibrated values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MismatchConfig {
    pub enabled: bool,
    pub seed: u64,
    pub frac: f64,
}

impl Default for MismatchConfig {
    fn default() -> Self {
        Self { enabled: true, seed: 1, frac: 0.03 }
    }
}

/// Cartesian grid over MPC weights for the `sweep` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Weight on `p_CC` in `Q`.
    pub q_p_cc: Vec<f64>,
    /// Common value of every entry of `R`.
    pub r: Vec<f64>,
    /// Common value of every entry of `K_I`.
    pub k_i: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { q_p_cc: vec![1.0, 10.0], r: vec![0.1], k_i: vec![1.0] }
    }
}

/// One grid point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub q_p_cc: f64,
    pub r: f64,
    pub k_i: f64,
}

impl SweepPoint {
    pub fn apply(&self, cfg: &mut MpcConfig) {
        cfg.q[crate::engine::idx::P_CC] = self.q_p_cc;
        cfg.r = [self.r; crate::engine::N_U];
        cfg.k_i = [self.k_i; crate::engine::N_Z];
    }
}

impl SweepConfig {
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = vec![];
        for &q_p_cc in &self.q_p_cc {
            for &r in &self.r {
                for &k_i in &self.k_i {
                    out.push(SweepPoint { q_p_cc, r, k_i });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub closure: ClosureConfig,
    /// Skips calibration and uses these constants as the model when present.
    pub params: Option<EngineParams>,
    pub mpc: MpcConfig,
    pub scenarios: ScenarioConfig,
    pub sim: SimConfig,
    pub pid: PidConfig,
    pub lqr: LqrConfig,
    pub controller: ControllerKind,
    pub command: ReferenceCommand,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub mismatch: MismatchConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            closure: ClosureConfig::default(),
            params: None,
            mpc: MpcConfig::default(),
            scenarios: ScenarioConfig::default(),
            sim: SimConfig::default(),
            pid: PidConfig::default(),
            lqr: LqrConfig::default(),
            controller: ControllerKind::Mpc,
            command: ReferenceCommand::nominal(1.0),
            seed: 1,
            out_dir: PathBuf::from("out"),
            mismatch: MismatchConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// JSON copy stored next to the outputs. The output directory is reset to
    /// the default so artifacts do not depend on where they were written.
    pub fn artifact_json(&self) -> Result<String> {
        RunConfig { out_dir: RunConfig::default().out_dir, ..self.clone() }.to_json()
    }

    pub fn validate(&self) -> Result<()> {
        self.mpc.validate()?;
        self.sim.validate()?;
        self.pid.validate()?;
        self.lqr.validate()?;
        self.command.validate()?;
        if (self.mpc.dt - self.sim.dt_ctrl).abs() > 1e-15 {
            return Err(Error::Config(format!("mpc.dt {} differs from sim.dt_ctrl {}", self.mpc.dt, self.sim.dt_ctrl)));
        }
        if self.scenarios.count == 0 && !self.scenarios.include_nominal {
            return Err(Error::Config("scenario set would be empty".into()));
        }
        if !(self.scenarios.modulus >= 0.0 && self.scenarios.modulus.is_finite()) {
            return Err(Error::Config("scenario modulus must be finite and nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.mismatch.frac) {
            return Err(Error::Config("mismatch.frac must lie in [0, 1)".into()));
        }
        let s = &self.sweep;
        if [&s.q_p_cc, &s.r, &s.k_i].iter().any(|v| v.is_empty() || v.iter().any(|&w| !(w > 0.0 && w.is_finite()))) {
            return Err(Error::Config("sweep axes must be nonempty lists of positive weights".into()));
        }
        Ok(())
    }

    /// Calibrated model constants, or the configured override.
    pub fn model_params(&self) -> Result<EngineParams> {
        match &self.params {
            Some(p) => Ok(p.clone()),
            None => calibrate_params(&self.closure),
        }
    }

    pub fn plant_params(&self, model: &EngineParams) -> EngineParams {
        if self.mismatch.enabled && self.mismatch.frac > 0.0 {
            model.perturbed(self.mismatch.seed, self.mismatch.frac)
        } else {
            model.clone()
        }
    }

    pub fn with_command(&self, command: ReferenceCommand) -> Self {
        Self { command, ..self.clone() }
    }
}

/// Everything one operating point needs: parameters, trim, controller model and IC.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: RunConfig,
    pub model_params: EngineParams,
    pub plant_params: EngineParams,
    pub equilibrium: Equilibrium,
    pub model: MpcModel,
    pub ic: EngineState,
}

impl Experiment {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let model_params = config.model_params()?;
        let plant_params = config.plant_params(&model_params);
        let equilibrium = solve_reference(&config.command, &model_params, None)?;
        let bounds = config.sim.valve.section_range();
        let model = MpcModel::prepare(&equilibrium, &model_params, &config.mpc, &config.scenarios, bounds)?;
        let ic = default_initial_condition(config.seed, &plant_params, &config.sim)?;
        Ok(Self { config: config.clone(), model_params, plant_params, equilibrium, model, ic })
    }

    /// Same operating point with another IC seed.
    pub fn reseeded(&self, seed: u64) -> Result<Self> {
        let ic = default_initial_condition(seed, &self.plant_params, &self.config.sim)?;
        let mut config = self.config.clone();
        config.seed = seed;
        Ok(Self { config, ic, ..self.clone() })
    }

    pub fn u_init(&self) -> ControlSections {
        ControlSections::repeat(self.config.sim.startup_sections)
    }

    pub fn controller(&self, kind: ControllerKind) -> Result<Controller> {
        let c = &self.config;
        let bounds = self.model.section_bounds;
        let rate = c.mpc.u_rate_max * c.mpc.dt;
        let u0 = self.u_init();
        let eq = self.equilibrium.clone();
        Ok(match kind {
            ControllerKind::Ol => Controller::OpenLoop(OpenLoop { u_r: eq.u, bounds, rate, u_prev: u0 }),
            ControllerKind::Pid => Controller::Pid(PidBank::new(&c.pid, eq, self.model_params.clone(), bounds, rate, u0)),
            ControllerKind::Lqr => {
                Controller::Lqr(LqrController { k: c.lqr.gain(&self.model.lin)?, eq, bounds, rate, u_prev: u0 })
            }
            ControllerKind::Mpc => Controller::Mpc(Box::new(MpcController::new(c.mpc, self.model.clone(), u0))),
        })
    }

    pub fn run(&self, kind: ControllerKind) -> Result<TrajectoryLog> {
        let mut ctl = self.controller(kind)?;
        closed_loop_run(
            &mut ctl,
            &self.config.command,
            &self.ic,
            &self.u_init(),
            &self.plant_params,
            &self.model_params,
            &self.config.mpc.constraints,
            &self.config.sim,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_json() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"seed": 3, "colour": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"mpc": {"np": 10, "horizon": 3}}"#).is_err());
        assert_eq!(RunConfig::from_json(r#"{"seed": 3}"#).unwrap().seed, 3);
    }

    #[test]
    fn invalid_values_rejected() {
        for text in [
            r#"{"command": {"p_cc": 1.5, "mr_pi": 5.25, "mr_cc": 6, "mr_gg": 1}}"#,
            r#"{"command": {"p_cc": 1.0, "mr_pi": -1, "mr_cc": 6, "mr_gg": 1}}"#,
            r#"{"mpc": {"np": 2, "nu": 5}}"#,
            r#"{"mpc": {"dt": 0.02}}"#,
            r#"{"sim": {"dt_plant": 3e-5}}"#,
            r#"{"mismatch": {"frac": 1.5}}"#,
            r#"{"sweep": {"q_p_cc": []}}"#,
            r#"{"controller": "pi"}"#,
        ] {
            assert!(RunConfig::from_json(text).is_err(), "{text}");
        }
    }

    #[test]
    fn controller_names_parse() {
        for k in ControllerKind::ALL {
            assert_eq!(k.name().parse::<ControllerKind>().unwrap(), k);
        }
        assert!("foo".parse::<ControllerKind>().is_err());
    }

    #[test]
    fn sweep_grid_is_cartesian() {
        let s = SweepConfig { q_p_cc: vec![1.0, 2.0], r: vec![0.1, 0.2, 0.3], k_i: vec![1.0] };
        let pts = s.points();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[4], SweepPoint { q_p_cc: 2.0, r: 0.2, k_i: 1.0 });
    }

    #[test]
    fn mismatch_switch() {
        let mut cfg = RunConfig::default();
        let p = cfg.model_params().unwrap();
        assert_ne!(cfg.plant_params(&p), p);
        cfg.mismatch.enabled = false;
        assert_eq!(cfg.plant_params(&p), p);
    }
}
