//! Artifact emission: CSV/JSON writers and the command implementations behind the CLI.
//!
//! Numbers are written with 17 significant digits, `.` as decimal separator and LF line
//! endings, so identical runs produce identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{ControllerKind, Experiment, RunConfig, SweepPoint};
use crate::engine::{fc_unchecked, ControlSections, EngineParams, EngineState, CONTROL_NAMES, STATE_NAMES};
use crate::error::{Error, Result};
use crate::mpc::MpcModel;
use crate::refgen::{solve_reference, Equilibrium, ReferenceCommand};
use crate::simloop::{compute_indicators, max_shaft_speed, Indicators, TrajectoryLog};

/// Operating points of the comparison table.
pub const TABLE1_POINTS: [f64; 3] = [0.7, 1.0, 1.2];

pub const VIOLATION_NAMES: [&str; 6] = ["omega_h", "omega_o", "p_gg", "mr_pi", "mr_cc", "mr_gg"];

pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

fn csv_string(header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(vec![]);
    let err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn strings<I: IntoIterator<Item = S>, S: Into<String>>(it: I) -> Vec<String> {
    it.into_iter().map(Into::into).collect()
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, text)?;
    Ok(path)
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, v: &T) -> Result<PathBuf> {
    write(dir, name, &(serde_json::to_string_pretty(v)? + "\n"))
}

/// Column order of `trajectory.csv`.
pub fn trajectory_header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(STATE_NAMES.iter().map(|s| s.to_string()));
    for prefix in ["angle_cmd", "angle", "u_cmd", "u_act"] {
        h.extend(CONTROL_NAMES.iter().map(|c| format!("{prefix}_{c}")));
    }
    h.extend(strings(["mr_pi", "mr_cc", "mr_gg"]));
    h.extend(VIOLATION_NAMES.iter().map(|v| format!("viol_{v}")));
    h.extend(strings(["gamma", "status"]));
    h
}

pub fn trajectory_csv(log: &TrajectoryLog) -> Result<String> {
    let rows: Vec<Vec<String>> = log
        .samples
        .iter()
        .map(|s| {
            let mut r = vec![num(s.t)];
            r.extend(s.x.iter().map(|&v| num(v)));
            for v in [&s.angle_cmd, &s.angle, &s.u_cmd, &s.u_act] {
                r.extend(v.iter().map(|&v| num(v)));
            }
            r.extend([num(s.mr.0), num(s.mr.1), num(s.mr.2)]);
            r.extend(s.violated.iter().map(|&b| u8::from(b).to_string()));
            match &s.solve {
                Some(i) => r.extend([num(i.gamma), format!("{:?}", i.status).to_lowercase()]),
                None => r.extend([String::new(), String::new()]),
            }
            r
        })
        .collect();
    csv_string(&trajectory_header(), &rows)
}

/// Per-step solver record of an MPC run; empty body for the baselines.
pub fn solver_log_csv(log: &TrajectoryLog) -> Result<String> {
    let header = strings([
        "t", "status", "iterations", "gamma", "primal_residual", "dual_residual", "gap", "slack", "mr_active", "held",
    ]);
    let rows: Vec<Vec<String>> = log
        .samples
        .iter()
        .filter_map(|s| {
            s.solve.as_ref().map(|i| {
                vec![
                    num(s.t),
                    format!("{:?}", i.status).to_lowercase(),
                    i.iterations.to_string(),
                    num(i.gamma),
                    num(i.primal_residual),
                    num(i.dual_residual),
                    num(i.gap),
                    num(i.slack),
                    u8::from(i.mr_active).to_string(),
                    u8::from(i.held).to_string(),
                ]
            })
        })
        .collect();
    csv_string(&header, &rows)
}

pub fn indicators_csv(rows: &[(String, Indicators)]) -> Result<String> {
    let mut header = vec!["label".to_string()];
    header.extend(strings(Indicators::NAMES));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(label, ind)| {
            let mut r = vec![label.clone()];
            r.extend(ind.values().iter().map(|&v| num(v)));
            r
        })
        .collect();
    csv_string(&header, &body)
}

pub fn equilibrium_csv(eqs: &[Equilibrium]) -> Result<String> {
    let mut header = strings(["p_cc_r", "mr_pi_r", "mr_cc_r", "mr_gg_r"]);
    header.extend(STATE_NAMES.iter().map(|s| s.to_string()));
    header.extend(CONTROL_NAMES.iter().map(|s| s.to_string()));
    header.push("residual".into());
    let rows: Vec<Vec<String>> = eqs
        .iter()
        .map(|e| {
            let c = &e.command;
            let mut r = vec![num(c.p_cc), num(c.mr_pi), num(c.mr_cc), num(c.mr_gg)];
            r.extend(e.x.iter().map(|&v| num(v)));
            r.extend(e.u.iter().map(|&v| num(v)));
            r.push(num(e.residual_norm));
            r
        })
        .collect();
    csv_string(&header, &rows)
}

/// Disturbance vectors with the eigenvalue they came from, plus the terminal scalars.
pub fn scenarios_csv(model: &MpcModel) -> Result<String> {
    let mut header = strings(["index", "eig_re", "eig_im", "kappa", "alpha_p"]);
    header.extend(STATE_NAMES.iter().map(|s| format!("w_{s}")));
    let mut rows = vec![];
    let scen = &model.scen;
    for (i, w) in scen.all().iter().enumerate() {
        let src = scen.sources.get(i).copied().flatten();
        let mut r = vec![
            i.to_string(),
            src.map_or(String::new(), |c| num(c.re)),
            src.map_or(String::new(), |c| num(c.im)),
            num(model.term.kappa),
            num(model.term.alpha_p),
        ];
        r.extend(w.iter().map(|&v| num(v)));
        rows.push(r);
    }
    csv_string(&header, &rows)
}

/// `‖f_c(1, 1)‖_∞` with the starter off.
pub fn nominal_residual(p: &EngineParams) -> f64 {
    fc_unchecked(&EngineState::repeat(1.0), &ControlSections::repeat(1.0), 0.0, p).amax()
}

#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub params: EngineParams,
    pub residual: f64,
    pub path: PathBuf,
}

pub fn calibrate(cfg: &RunConfig, out: &Path) -> Result<CalibrationReport> {
    cfg.validate()?;
    let params = cfg.model_params()?;
    write(out, "config.json", &cfg.artifact_json()?)?;
    let path = write_json(out, "params.json", &params)?;
    Ok(CalibrationReport { residual: nominal_residual(&params), params, path })
}

pub fn refgen(cfg: &RunConfig, out: &Path) -> Result<Equilibrium> {
    cfg.validate()?;
    let params = cfg.model_params()?;
    let eq = solve_reference(&cfg.command, &params, None)?;
    write(out, "config.json", &cfg.artifact_json()?)?;
    write_json(out, "params.json", &params)?;
    write(out, "equilibrium.csv", &equilibrium_csv(std::slice::from_ref(&eq))?)?;
    Ok(eq)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: TrajectoryLog,
    pub indicators: Indicators,
    /// Largest shaft speed from `t_c` on.
    pub max_omega: f64,
}

pub fn evaluate(exp: &Experiment, kind: ControllerKind) -> Result<RunOutcome> {
    let log = exp.run(kind)?;
    let indicators = compute_indicators(&log, &exp.config.command);
    let max_omega = max_shaft_speed(&log, exp.config.mpc.t_c);
    Ok(RunOutcome { log, indicators, max_omega })
}

/// Writes every artifact of one run into `out`.
pub fn write_run(exp: &Experiment, outcome: &RunOutcome, out: &Path) -> Result<()> {
    let mut cfg = exp.config.clone();
    cfg.controller = outcome.log.controller.parse()?;
    write(out, "config.json", &cfg.artifact_json()?)?;
    write_json(out, "params.json", &exp.model_params)?;
    write_json(out, "plant_params.json", &exp.plant_params)?;
    write(out, "equilibrium.csv", &equilibrium_csv(std::slice::from_ref(&exp.equilibrium))?)?;
    write(out, "scenarios.csv", &scenarios_csv(&exp.model)?)?;
    write(out, "trajectory.csv", &trajectory_csv(&outcome.log)?)?;
    write(out, "solver_log.csv", &solver_log_csv(&outcome.log)?)?;
    write(out, "indicators.csv", &indicators_csv(&[(outcome.log.controller.clone(), outcome.indicators)])?)?;
    if let Some(msg) = &outcome.log.aborted {
        write(out, "abort.txt", &format!("{msg}\n"))?;
    }
    Ok(())
}

pub fn run(cfg: &RunConfig, out: &Path) -> Result<RunOutcome> {
    let exp = Experiment::new(cfg)?;
    let outcome = evaluate(&exp, cfg.controller)?;
    write_run(&exp, &outcome, out)?;
    Ok(outcome)
}

/// Open-loop and MPC indicators at each operating point.
#[derive(Debug, Clone)]
pub struct Table1 {
    pub points: Vec<f64>,
    pub ol: Vec<RunOutcome>,
    pub cl: Vec<RunOutcome>,
}

impl Table1 {
    pub fn header() -> Vec<String> {
        let mut h = vec!["indicator".to_string()];
        for p in TABLE1_POINTS {
            h.push(format!("ol_{p:.1}"));
            h.push(format!("cl_{p:.1}"));
        }
        h
    }

    pub fn to_csv(&self) -> Result<String> {
        let rows: Vec<Vec<String>> = Indicators::NAMES
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let mut r = vec![name.to_string()];
                for (ol, cl) in self.ol.iter().zip(&self.cl) {
                    r.push(num(ol.indicators.values()[k]));
                    r.push(num(cl.indicators.values()[k]));
                }
                r
            })
            .collect();
        csv_string(&Self::header(), &rows)
    }
}

/// Runs OL and MPC at the three operating points using the configured mixture ratios.
pub fn table1(cfg: &RunConfig, out: &Path) -> Result<Table1> {
    cfg.validate()?;
    let mut t = Table1 { points: TABLE1_POINTS.to_vec(), ol: vec![], cl: vec![] };
    for p in TABLE1_POINTS {
        let exp = Experiment::new(&cfg.with_command(ReferenceCommand { p_cc: p, ..cfg.command }))?;
        for (kind, dst) in [(ControllerKind::Ol, &mut t.ol), (ControllerKind::Mpc, &mut t.cl)] {
            let o = evaluate(&exp, kind)?;
            write_run(&exp, &o, &out.join(format!("{}_{p:.1}", kind.name())))?;
            dst.push(o);
        }
    }
    write(out, "config.json", &cfg.artifact_json()?)?;
    write(out, "table1.csv", &t.to_csv()?)?;
    Ok(t)
}

#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub indicators: Indicators,
    pub score: f64,
}

/// `p_CC` static error plus positive overshoot, both in percent. Non-finite scores never win.
pub fn sweep_score(ind: &Indicators) -> f64 {
    let s = ind.static_error_pcc + ind.overshoot_pcc.max(0.0);
    if s.is_finite() && ind.settling_time_99.is_finite() {
        s
    } else {
        f64::INFINITY
    }
}

/// Index of the lowest score; ties keep the earliest row.
pub fn best_row(rows: &[SweepRow]) -> Option<usize> {
    rows.iter()
        .enumerate()
        .filter(|(_, r)| r.score.is_finite())
        .min_by(|a, b| a.1.score.total_cmp(&b.1.score))
        .map(|(i, _)| i)
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut header = strings(["q_p_cc", "r", "k_i"]);
    header.extend(strings(Indicators::NAMES));
    header.extend(strings(["score", "best"]));
    let best = best_row(rows);
    let body: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut v = vec![num(r.point.q_p_cc), num(r.point.r), num(r.point.k_i)];
            v.extend(r.indicators.values().iter().map(|&x| num(x)));
            v.push(num(r.score));
            v.push(u8::from(best == Some(i)).to_string());
            v
        })
        .collect();
    csv_string(&header, &body)
}

/// MPC runs over the configured weight grid at the configured operating point.
pub fn sweep(cfg: &RunConfig, out: &Path) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let mut rows = vec![];
    for point in cfg.sweep.points() {
        let mut c = cfg.clone();
        point.apply(&mut c.mpc);
        let exp = Experiment::new(&c)?;
        let o = evaluate(&exp, ControllerKind::Mpc)?;
        rows.push(SweepRow { point, indicators: o.indicators, score: sweep_score(&o.indicators) });
    }
    write(out, "config.json", &cfg.artifact_json()?)?;
    write(out, "sweep.csv", &sweep_csv(&rows)?)?;
    Ok(rows)
}
