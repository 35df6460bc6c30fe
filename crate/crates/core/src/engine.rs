//! Nondimensional surrogate of a gas-generator-cycle engine.
//!
//! State order: `ω_H, ω_O, p_CC, p_GG, p_LTH, p_VGC, ṁ_LTH, ṁ_VCH, ṁ_VCO, ṁ_VGH, ṁ_VGO, ṁ_VGC`.
//! Control order: `A_VCH, A_VCO, A_VGH, A_VGO, A_VGC`.
//! Every quantity equals 1 at the nominal equilibrium produced by [`calibrate_params`].

use nalgebra::SVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_X: usize = 12;
pub const N_U: usize = 5;
pub const N_Z: usize = 5;

pub type EngineState = SVector<f64, N_X>;
pub type ControlSections = SVector<f64, N_U>;
pub type TrackedState = SVector<f64, N_Z>;
pub type ValveAngles = SVector<f64, N_U>;

pub mod idx {
    pub const OMEGA_H: usize = 0;
    pub const OMEGA_O: usize = 1;
    pub const P_CC: usize = 2;
    pub const P_GG: usize = 3;
    pub const P_LTH: usize = 4;
    pub const P_VGC: usize = 5;
    pub const M_LTH: usize = 6;
    pub const M_VCH: usize = 7;
    pub const M_VCO: usize = 8;
    pub const M_VGH: usize = 9;
    pub const M_VGO: usize = 10;
    pub const M_VGC: usize = 11;

    pub const A_VCH: usize = 0;
    pub const A_VCO: usize = 1;
    pub const A_VGH: usize = 2;
    pub const A_VGO: usize = 3;
    pub const A_VGC: usize = 4;

    /// Components of the tracked subvector x_z.
    pub const TRACKED: [usize; 5] = [P_CC, M_VCH, M_VCO, M_VGH, M_VGO];
}

pub const STATE_NAMES: [&str; N_X] = [
    "omega_H", "omega_O", "p_CC", "p_GG", "p_LTH", "p_VGC", "mdot_LTH", "mdot_VCH", "mdot_VCO",
    "mdot_VGH", "mdot_VGO", "mdot_VGC",
];
pub const CONTROL_NAMES: [&str; N_U] = ["A_VCH", "A_VCO", "A_VGH", "A_VGO", "A_VGC"];

pub fn tracked(x: &EngineState) -> TrackedState {
    TrackedState::from_fn(|i, _| x[idx::TRACKED[i]])
}

/// Quadratic characteristic-velocity law `c0 + c1·(MR − MR0) + c2·(MR − MR0)²`, clamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CstarPoly {
    pub mr0: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub lo: f64,
    pub hi: f64,
}

impl CstarPoly {
    pub fn eval(&self, mr: f64) -> f64 {
        let d = mr - self.mr0;
        (self.c0 + self.c1 * d + self.c2 * d * d).clamp(self.lo, self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StarterProfile {
    pub m_s0: f64,
    pub tau_s: f64,
    pub t_cut: f64,
}

impl Default for StarterProfile {
    fn default() -> Self {
        Self { m_s0: 0.25, tau_s: 0.15, t_cut: 1.9 }
    }
}

pub fn starter_flow(t: f64, profile: &StarterProfile) -> f64 {
    assert!(t >= 0.0, "starter evaluated at negative time {t}");
    if t < profile.t_cut {
        profile.m_s0 * (-t / profile.tau_s).exp()
    } else {
        0.0
    }
}

/// Inputs to [`calibrate_params`]. Pressures are relative to nominal chamber pressure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClosureConfig {
    pub p_tank_h: f64,
    pub p_tank_o: f64,
    /// Nominal pump pressure rises; the valve drop is `tank + rise − 1`.
    pub pump_rise_h: f64,
    pub pump_rise_o: f64,
    /// Flow-dependent share of the pump head, `b/a`.
    pub pump_slip_h: f64,
    pub pump_slip_o: f64,
    /// Nominal relative pressure drops across the LTH line and VGC valve.
    pub drop_lth: f64,
    pub drop_vgc: f64,
    /// Fraction of GG outflow through the LTH line.
    pub gg_split: f64,
    /// Exponent on turbine inlet pressure in the torque law.
    pub turbine_exponent: f64,
    pub inertia_h: f64,
    pub inertia_o: f64,
    pub cavity_gain: f64,
    pub line_gain: f64,
    pub mr_cc: f64,
    pub mr_gg: f64,
    pub mr_pi: f64,
    pub cstar_cc: CstarPoly,
    pub cstar_gg: CstarPoly,
    pub starter: StarterProfile,
    pub flow_floor: f64,
}

impl Default for ClosureConfig {
    fn default() -> Self {
        Self {
            p_tank_h: 0.1,
            p_tank_o: 0.1,
            pump_rise_h: 1.7,
            pump_rise_o: 1.7,
            pump_slip_h: 0.1,
            pump_slip_o: 0.01,
            drop_lth: 0.25,
            drop_vgc: 0.25,
            gg_split: 0.5,
            turbine_exponent: 0.1,
            inertia_h: 0.1,
            inertia_o: 0.1,
            cavity_gain: 40.0,
            line_gain: 10.0,
            mr_cc: 6.0,
            mr_gg: 1.0,
            mr_pi: 5.25,
            cstar_cc: CstarPoly { mr0: 6.0, c0: 1.0, c1: 0.02, c2: -0.01, lo: 0.5, hi: 1.5 },
            cstar_gg: CstarPoly { mr0: 1.0, c0: 1.0, c1: 0.05, c2: 0.0, lo: 0.5, hi: 1.5 },
            starter: StarterProfile::default(),
            flow_floor: 1e-3,
        }
    }
}

/// Calibrated surrogate constants.
///
/// `s_*` are nominal flows as fractions of the nominal chamber flow; multiplying a
/// nondimensional flow by its `s_*` redimensionalizes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineParams {
    pub j_h: f64,
    pub j_o: f64,
    pub k_th: f64,
    pub k_to: f64,
    pub beta: f64,
    pub a_h: f64,
    pub b_h: f64,
    pub a_o: f64,
    pub b_o: f64,
    pub a_cc: f64,
    pub a_gg: f64,
    pub a_lth: f64,
    pub a_vgc: f64,
    pub k_lth: f64,
    pub k_vch: f64,
    pub k_vco: f64,
    pub k_vgh: f64,
    pub k_vgo: f64,
    pub k_vgc: f64,
    pub r_lth: f64,
    pub r_vch: f64,
    pub r_vco: f64,
    pub r_vgh: f64,
    pub r_vgo: f64,
    pub r_vgc: f64,
    /// Downstream pressure ratios of the LTH line and VGC valve.
    pub sigma_lth: f64,
    pub sigma_vgc: f64,
    pub c_h: f64,
    pub c_o: f64,
    pub a_th_cc: f64,
    pub a_th_gg: f64,
    pub p_tank_h: f64,
    pub p_tank_o: f64,
    pub s_vch: f64,
    pub s_vco: f64,
    pub s_vgh: f64,
    pub s_vgo: f64,
    pub s_lth: f64,
    pub s_vgc: f64,
    pub mr_cc: f64,
    pub mr_gg: f64,
    pub mr_pi: f64,
    pub cstar_cc: CstarPoly,
    pub cstar_gg: CstarPoly,
    pub starter: StarterProfile,
    pub eps: f64,
}

pub fn calibrate_params(c: &ClosureConfig) -> Result<EngineParams> {
    let positive = [
        ("p_tank_h", c.p_tank_h),
        ("p_tank_o", c.p_tank_o),
        ("inertia_h", c.inertia_h),
        ("inertia_o", c.inertia_o),
        ("cavity_gain", c.cavity_gain),
        ("line_gain", c.line_gain),
        ("turbine_exponent", c.turbine_exponent),
        ("flow_floor", c.flow_floor),
        ("mr_cc", c.mr_cc),
        ("mr_gg", c.mr_gg),
        ("mr_pi", c.mr_pi),
    ];
    for (name, v) in positive {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Calibration(format!("{name} must be positive, got {v}")));
        }
    }
    let drop_h = c.p_tank_h + c.pump_rise_h - 1.0;
    let drop_o = c.p_tank_o + c.pump_rise_o - 1.0;
    if !(c.pump_rise_h > 0.0 && c.pump_rise_o > 0.0 && drop_h > 0.0 && drop_o > 0.0) {
        return Err(Error::Calibration(format!(
            "pump head insufficient: tank + rise must exceed nominal downstream pressure \
             (valve drops {drop_h}, {drop_o})"
        )));
    }
    for (name, v) in [("pump_slip_h", c.pump_slip_h), ("pump_slip_o", c.pump_slip_o)] {
        if !(0.0..1.0).contains(&v) {
            return Err(Error::Calibration(format!("{name} must lie in [0, 1), got {v}")));
        }
    }
    for (name, v) in [("drop_lth", c.drop_lth), ("drop_vgc", c.drop_vgc), ("gg_split", c.gg_split)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Calibration(format!("{name} must lie in (0, 1), got {v}")));
        }
    }
    // Global MR must sit between the GG and CC ratios for a positive GG flow.
    let (lo, hi) = (c.mr_gg.min(c.mr_cc), c.mr_gg.max(c.mr_cc));
    if !(c.mr_pi > lo && c.mr_pi < hi) {
        return Err(Error::Calibration(format!(
            "mixture ratios inconsistent: need MR_PI strictly between MR_GG and MR_CC, got {} / {} / {}",
            c.mr_pi, c.mr_gg, c.mr_cc
        )));
    }

    let s_vch = 1.0 / (1.0 + c.mr_cc);
    let s_vco = c.mr_cc / (1.0 + c.mr_cc);
    let s_vgh = (s_vco - c.mr_pi * s_vch) / (c.mr_pi - c.mr_gg);
    let s_vgo = c.mr_gg * s_vgh;
    let s_gg = s_vgh + s_vgo;

    let a_h = c.pump_rise_h / (1.0 - c.pump_slip_h);
    let a_o = c.pump_rise_o / (1.0 - c.pump_slip_o);
    let cstar_cc_nom = c.cstar_cc.eval(c.mr_cc);
    let cstar_gg_nom = c.cstar_gg.eval(c.mr_gg);

    Ok(EngineParams {
        j_h: c.inertia_h,
        j_o: c.inertia_o,
        k_th: c.pump_rise_h,
        k_to: c.pump_rise_o,
        beta: c.turbine_exponent,
        a_h,
        b_h: a_h * c.pump_slip_h,
        a_o,
        b_o: a_o * c.pump_slip_o,
        a_cc: c.cavity_gain,
        a_gg: c.cavity_gain,
        a_lth: c.cavity_gain,
        a_vgc: c.cavity_gain,
        k_lth: c.line_gain,
        k_vch: c.line_gain,
        k_vco: c.line_gain,
        k_vgh: c.line_gain,
        k_vgo: c.line_gain,
        k_vgc: c.line_gain,
        r_lth: c.drop_lth,
        r_vch: drop_h,
        r_vco: drop_o,
        r_vgh: drop_h,
        r_vgo: drop_o,
        r_vgc: c.drop_vgc,
        sigma_lth: 1.0 - c.drop_lth,
        sigma_vgc: 1.0 - c.drop_vgc,
        c_h: cstar_gg_nom,
        c_o: cstar_gg_nom,
        a_th_cc: cstar_cc_nom,
        a_th_gg: 1.0,
        p_tank_h: c.p_tank_h,
        p_tank_o: c.p_tank_o,
        s_vch,
        s_vco,
        s_vgh,
        s_vgo,
        s_lth: c.gg_split * s_gg,
        s_vgc: (1.0 - c.gg_split) * s_gg,
        mr_cc: c.mr_cc,
        mr_gg: c.mr_gg,
        mr_pi: c.mr_pi,
        cstar_cc: c.cstar_cc,
        cstar_gg: c.cstar_gg,
        starter: c.starter,
        eps: c.flow_floor,
    })
}

impl EngineParams {
    pub fn nominal() -> Self {
        calibrate_params(&ClosureConfig::default()).expect("default closure is feasible")
    }

    /// Plant-side copy with every resistance and turbine gain scaled by an independent
    /// uniform factor in `[1 − frac, 1 + frac]`.
    pub fn perturbed(&self, seed: u64, frac: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = self.clone();
        for v in [
            &mut p.r_lth,
            &mut p.r_vch,
            &mut p.r_vco,
            &mut p.r_vgh,
            &mut p.r_vgo,
            &mut p.r_vgc,
            &mut p.k_th,
            &mut p.k_to,
        ] {
            *v *= 1.0 + rng.gen_range(-frac..=frac);
        }
        p
    }

    /// Redimensionalized (ox, fuel) flows for the chamber, the GG and the whole engine.
    fn flows(&self, x: &EngineState) -> [(f64, f64); 3] {
        let vch = self.s_vch * x[idx::M_VCH];
        let vco = self.s_vco * x[idx::M_VCO];
        let vgh = self.s_vgh * x[idx::M_VGH];
        let vgo = self.s_vgo * x[idx::M_VGO];
        [(vco + vgo, vch + vgh), (vco, vch), (vgo, vgh)]
    }
}

/// `(MR_PI, MR_CC, MR_GG)` on redimensionalized flows, denominators floored at ε.
pub fn mixture_ratios(x: &EngineState, p: &EngineParams) -> (f64, f64, f64) {
    let [pi, cc, gg] = p.flows(x);
    let r = |(ox, fu): (f64, f64)| ox / fu.max(p.eps);
    (r(pi), r(cc), r(gg))
}

/// Coefficients `(c_ox, c_fu)` such that redimensionalized ox/fuel flows of a mixture-ratio
/// family are `c_oxᵀx` and `c_fuᵀx`. Order: PI, CC, GG.
pub fn mixture_ratio_rows(p: &EngineParams) -> [(EngineState, EngineState); 3] {
    let mut rows = [(EngineState::zeros(), EngineState::zeros()); 3];
    rows[0].0[idx::M_VCO] = p.s_vco;
    rows[0].0[idx::M_VGO] = p.s_vgo;
    rows[0].1[idx::M_VCH] = p.s_vch;
    rows[0].1[idx::M_VGH] = p.s_vgh;
    rows[1].0[idx::M_VCO] = p.s_vco;
    rows[1].1[idx::M_VCH] = p.s_vch;
    rows[2].0[idx::M_VGO] = p.s_vgo;
    rows[2].1[idx::M_VGH] = p.s_vgh;
    rows
}

fn check_finite(x: &EngineState, u: &ControlSections) -> Result<()> {
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Contract(format!("non-finite state component {}", STATE_NAMES[i])));
    }
    if let Some(i) = u.iter().position(|v| !v.is_finite()) {
        return Err(Error::Contract(format!("non-finite control component {}", CONTROL_NAMES[i])));
    }
    Ok(())
}

/// Right-hand side with explicit characteristic velocities and starter flow.
pub fn rhs(
    x: &EngineState,
    u: &ControlSections,
    p: &EngineParams,
    cstar_cc: f64,
    cstar_gg: f64,
    starter: f64,
) -> EngineState {
    let eps = p.eps;
    let (w_h, w_o) = (x[idx::OMEGA_H], x[idx::OMEGA_O]);
    let (p_cc, p_gg, p_lth, p_vgc) = (x[idx::P_CC], x[idx::P_GG], x[idx::P_LTH], x[idx::P_VGC]);
    let m_lth = x[idx::M_LTH];
    let (m_vch, m_vco, m_vgh, m_vgo, m_vgc) =
        (x[idx::M_VCH], x[idx::M_VCO], x[idx::M_VGH], x[idx::M_VGO], x[idx::M_VGC]);

    let q_h = (p.s_vch * m_vch + p.s_vgh * m_vgh) / (p.s_vch + p.s_vgh);
    let q_o = (p.s_vco * m_vco + p.s_vgo * m_vgo) / (p.s_vco + p.s_vgo);
    let rise_h = p.a_h * w_h * w_h - p.b_h * w_h * q_h;
    let rise_o = p.a_o * w_o * w_o - p.b_o * w_o * q_o;
    let pump_h = p.p_tank_h + rise_h;
    let pump_o = p.p_tank_o + rise_o;

    let mt_h = p.c_h * p_lth * p.a_th_gg / cstar_gg;
    let mt_o = p.c_o * p_vgc * p.a_th_gg / cstar_gg;

    let sq = |m: f64| m * m.abs();
    let mut d = EngineState::zeros();
    d[idx::OMEGA_H] =
        (p.k_th * mt_h * p_lth.max(0.0).powf(p.beta) - rise_h * q_h / w_h.max(eps)) / p.j_h;
    d[idx::OMEGA_O] =
        (p.k_to * mt_o * p_vgc.max(0.0).powf(p.beta) - rise_o * q_o / w_o.max(eps)) / p.j_o;
    d[idx::P_CC] = p.a_cc * (p.s_vch * m_vch + p.s_vco * m_vco - p_cc * p.a_th_cc / cstar_cc);
    d[idx::P_GG] = p.a_gg
        * ((p.s_vgh * m_vgh + p.s_vgo * m_vgo - p.s_lth * m_lth - p.s_vgc * m_vgc) / p.s_vgh
            + starter);
    d[idx::P_LTH] = p.a_lth * (m_lth - mt_h);
    d[idx::P_VGC] = p.a_vgc * (m_vgc - mt_o);
    d[idx::M_LTH] = p.k_lth * (p_gg - p.sigma_lth * p_lth - p.r_lth * sq(m_lth));
    d[idx::M_VCH] = p.k_vch * (pump_h - p_cc - p.r_vch * sq(m_vch) / (u[0] * u[0]));
    d[idx::M_VCO] = p.k_vco * (pump_o - p_cc - p.r_vco * sq(m_vco) / (u[1] * u[1]));
    d[idx::M_VGH] = p.k_vgh * (pump_h - p_gg - p.r_vgh * sq(m_vgh) / (u[2] * u[2]));
    d[idx::M_VGO] = p.k_vgo * (pump_o - p_gg - p.r_vgo * sq(m_vgo) / (u[3] * u[3]));
    d[idx::M_VGC] = p.k_vgc * (p_gg - p.sigma_vgc * p_vgc - p.r_vgc * sq(m_vgc) / (u[4] * u[4]));
    d
}

/// Complex model: C* follows the current mixture ratios, starter flow enters the GG balance.
pub fn dynamics_fc(
    x: &EngineState,
    u: &ControlSections,
    t: f64,
    p: &EngineParams,
) -> Result<EngineState> {
    check_finite(x, u)?;
    if !(t >= 0.0) {
        return Err(Error::Contract(format!("time must be nonnegative, got {t}")));
    }
    Ok(fc_unchecked(x, u, starter_flow(t, &p.starter), p))
}

pub(crate) fn fc_unchecked(
    x: &EngineState,
    u: &ControlSections,
    starter: f64,
    p: &EngineParams,
) -> EngineState {
    let (_, mr_cc, mr_gg) = mixture_ratios(x, p);
    rhs(x, u, p, p.cstar_cc.eval(mr_cc), p.cstar_gg.eval(mr_gg), starter)
}

/// Simplified model: C* frozen at the calibrated reference ratios, no starter.
pub fn dynamics_fs(x: &EngineState, u: &ControlSections, p: &EngineParams) -> Result<EngineState> {
    dynamics_fs_at(x, u, p, p.mr_cc, p.mr_gg)
}

/// Simplified model with C* frozen at the given chamber and GG mixture ratios.
pub fn dynamics_fs_at(
    x: &EngineState,
    u: &ControlSections,
    p: &EngineParams,
    mr_cc: f64,
    mr_gg: f64,
) -> Result<EngineState> {
    check_finite(x, u)?;
    Ok(rhs(x, u, p, p.cstar_cc.eval(mr_cc), p.cstar_gg.eval(mr_gg), 0.0))
}

/// Valve characteristic `A(α) = A_max·(1 − cos α)/(1 − cos α_max)` with angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValveMap {
    pub angle_min: f64,
    pub angle_max: f64,
    pub section_max: f64,
}

impl Default for ValveMap {
    fn default() -> Self {
        Self { angle_min: 5.0, angle_max: 90.0, section_max: 1.5 }
    }
}

impl ValveMap {
    fn denom(&self) -> f64 {
        1.0 - self.angle_max.to_radians().cos()
    }

    pub fn section_range(&self) -> (f64, f64) {
        (self.section(self.angle_min), self.section_max)
    }

    fn section(&self, deg: f64) -> f64 {
        self.section_max * (1.0 - deg.to_radians().cos()) / self.denom()
    }

    pub fn angle_to_section(&self, a: &ValveAngles) -> Result<ControlSections> {
        for (i, &v) in a.iter().enumerate() {
            if !(v >= self.angle_min && v <= self.angle_max) {
                return Err(Error::Range(format!(
                    "{} angle {v} outside [{}, {}] deg",
                    CONTROL_NAMES[i], self.angle_min, self.angle_max
                )));
            }
        }
        Ok(a.map(|v| self.section(v)))
    }

    pub fn section_to_angle(&self, s: &ControlSections) -> Result<ValveAngles> {
        let (lo, hi) = self.section_range();
        for (i, &v) in s.iter().enumerate() {
            if !(v >= lo && v <= hi) {
                return Err(Error::Range(format!(
                    "{} section {v} outside [{lo}, {hi}]",
                    CONTROL_NAMES[i]
                )));
            }
        }
        Ok(s.map(|v| (1.0 - v * self.denom() / self.section_max).acos().to_degrees()))
    }
}

/// Second-order valve servos with rate saturation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServoParams {
    pub omega_n: f64,
    pub zeta: f64,
    /// deg/s
    pub rate_max: f64,
}

impl Default for ServoParams {
    fn default() -> Self {
        Self { omega_n: 50.0, zeta: 0.7, rate_max: 120.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuatorBank {
    pub angle: ValveAngles,
    pub rate: ValveAngles,
    pub servo: ServoParams,
    pub map: ValveMap,
}

impl ActuatorBank {
    pub fn at_rest(angle: ValveAngles, servo: ServoParams, map: ValveMap) -> Self {
        Self { angle, rate: ValveAngles::zeros(), servo, map }
    }

    pub fn sections(&self) -> ControlSections {
        self.angle.map(|v| self.map.section(v))
    }
}

/// Semi-implicit Euler step of `α̈ = ω_n²(α_cmd − α) − 2ζω_n α̇` with rate and position limits.
pub fn actuator_step(bank: &ActuatorBank, cmd: &ValveAngles, dt: f64) -> ActuatorBank {
    let s = bank.servo;
    let mut out = *bank;
    for i in 0..N_U {
        let acc = s.omega_n * s.omega_n * (cmd[i] - bank.angle[i])
            - 2.0 * s.zeta * s.omega_n * bank.rate[i];
        let mut rate = (bank.rate[i] + dt * acc).clamp(-s.rate_max, s.rate_max);
        let mut angle = bank.angle[i] + dt * rate;
        if angle < bank.map.angle_min || angle > bank.map.angle_max {
            angle = angle.clamp(bank.map.angle_min, bank.map.angle_max);
            rate = 0.0;
        }
        out.angle[i] = angle;
        out.rate[i] = rate;
    }
    out
}
