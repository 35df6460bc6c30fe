//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero
//! if any criterion fails.

use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lpre_core::config::{ControllerKind, Experiment, RunConfig};
use lpre_core::constraints::HardConstraints;
use lpre_core::engine::{
    calibrate_params, dynamics_fc, mixture_ratios, starter_flow, ClosureConfig, ControlSections, EngineParams,
    EngineState, ValveMap, N_X,
};
use lpre_core::linearize::{spectral_abscissa, to_dyn, LinearModel};
use lpre_core::mpc::{build_horizon, solve_problem, HorizonData, MpcConfig, MpcStatus};
use lpre_core::qcqp::{self, IpmOptions, Qcqp, Quad};
use lpre_core::refgen::{solve_reference, ReferenceCommand};
use lpre_core::report::{self, RunOutcome, Table1, TABLE1_POINTS};
use lpre_core::terminal::{control_halfspaces, TerminalSet};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn anchors(p: &EngineParams) -> Vec<lpre_core::refgen::Equilibrium> {
    TABLE1_POINTS.iter().map(|&c| solve_reference(&ReferenceCommand::nominal(c), p, None).unwrap()).collect()
}

fn calibration() -> Verdict {
    let t = Instant::now();
    let p = calibrate_params(&ClosureConfig::default()).unwrap();
    let el = t.elapsed();
    let ones = EngineState::repeat(1.0);
    assert_eq!(starter_flow(100.0, &p.starter), 0.0);
    let res = dynamics_fc(&ones, &ControlSections::repeat(1.0), 100.0, &p).unwrap().amax();
    let mr = mixture_ratios(&ones, &p);
    let pass = res < 1e-10 && mr == (5.25, 6.0, 1.0) && el < Duration::from_secs(1);
    verdict(pass, format!("residual {res:.2e}, MRs {mr:?}, {:.3} s", secs(el)))
}

fn preprocessor() -> Verdict {
    let p = EngineParams::nominal();
    let t = Instant::now();
    let eqs = anchors(&p);
    let el = t.elapsed();
    let mut worst = 0.0f64;
    let mut worst_mr = 0.0f64;
    for e in &eqs {
        let d = dynamics_fc(&e.x, &e.u, 100.0, &p).unwrap().amax();
        worst = worst.max(d).max(e.residual_norm);
        let (pi, cc, gg) = mixture_ratios(&e.x, &p);
        let c = e.command;
        worst_mr = worst_mr.max((pi - c.mr_pi).abs()).max((cc - c.mr_cc).abs()).max((gg - c.mr_gg).abs());
    }
    let nominal = &eqs[1];
    let dev = (nominal.x - EngineState::repeat(1.0)).amax().max((nominal.u - ControlSections::repeat(1.0)).amax());
    let pass = worst < 1e-8 && worst_mr < 1e-8 && dev < 1e-6 && el < Duration::from_secs(5);
    verdict(pass, format!("max residual {worst:.2e}, MR mismatch {worst_mr:.2e}, nominal deviation {dev:.2e}, {:.3} s", secs(el)))
}

/// One 10 ms step of `ẋ = A x + B u` by 1000 RK4 substeps, column by column.
fn rk4_blocks(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = (a.nrows(), b.ncols());
    let h = 1e-5;
    let prop = |x0: DVector<f64>, u: DVector<f64>| {
        let bu = b * &u;
        let f = |x: &DVector<f64>| a * x + &bu;
        let mut x = x0;
        for _ in 0..1000 {
            let k1 = f(&x);
            let k2 = f(&(&x + &k1 * (h / 2.0)));
            let k3 = f(&(&x + &k2 * (h / 2.0)));
            let k4 = f(&(&x + &k3 * h));
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        x
    };
    let mut ad = DMatrix::zeros(n, n);
    let mut bd = DMatrix::zeros(n, m);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        ad.set_column(j, &prop(e, DVector::zeros(m)));
    }
    for j in 0..m {
        let mut e = DVector::zeros(m);
        e[j] = 1.0;
        bd.set_column(j, &prop(DVector::zeros(n), e));
    }
    (ad, bd)
}

fn discretization() -> Verdict {
    let p = EngineParams::nominal();
    let mut worst = 0.0f64;
    let mut abscissa = f64::NEG_INFINITY;
    for e in anchors(&p) {
        let lin = LinearModel::about(&e, &p, 0.01).unwrap();
        let (ad, bd) = rk4_blocks(&to_dyn(&lin.a_c), &to_dyn(&lin.b_c));
        worst = worst.max((ad - to_dyn(&lin.a_d)).amax()).max((bd - to_dyn(&lin.b_d)).amax());
        abscissa = abscissa.max(spectral_abscissa(&to_dyn(&lin.a_c)));
    }
    verdict(worst < 1e-8 && abscissa < 0.0, format!("ZOH vs RK4 {worst:.2e}, max spectral abscissa {abscissa:.3}"))
}

fn terminal() -> Verdict {
    let p = EngineParams::nominal();
    let cfg = MpcConfig::default();
    let bounds = ValveMap::default().section_range();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut res, mut min_eig, mut margin, mut worst_row) = (0.0f64, f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    let mut el = Duration::ZERO;
    for e in anchors(&p) {
        let lin = LinearModel::about(&e, &p, cfg.dt).unwrap();
        let t = Instant::now();
        let term = TerminalSet::compute(&lin, &cfg.q_matrix(), &cfg.r_matrix(), &cfg.constraints, bounds, &p).unwrap();
        el = el.max(t.elapsed());
        res = res.max(term.lyapunov_residual(&lin));
        let pd = to_dyn(&term.p);
        min_eig = min_eig.min(pd.clone().symmetric_eigenvalues().min());
        let ak = to_dyn(&(lin.a_c + lin.b_c * term.k));
        margin = margin.min(-spectral_abscissa(&ak) - term.kappa);
        let state = cfg.constraints.delta_halfspaces(&e.x, &p, true);
        let control = control_halfspaces(&e.u, bounds);
        for _ in 0..100 {
            let d = DVector::<f64>::from_fn(N_X, |_, _| rng.gen_range(-1.0..1.0));
            let x = &d * (term.alpha_p / d.dot(&(&pd * &d))).sqrt();
            let xs = EngineState::from_column_slice(x.as_slice());
            let u = term.k * xs;
            for h in &state {
                worst_row = worst_row.max(h.a.dot(&xs) - h.b);
            }
            for h in &control {
                worst_row = worst_row.max(h.a.dot(&u) - h.b);
            }
        }
    }
    let pass = res < 1e-8 && min_eig > 0.0 && margin > 0.0 && worst_row <= 1e-12 && el < Duration::from_secs(2);
    verdict(
        pass,
        format!(
            "Lyapunov residual {res:.2e}, min eig P {min_eig:.2e}, κ margin {margin:.3}, worst boundary row {worst_row:.2e}, {:.3} s",
            secs(el)
        ),
    )
}

fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Random stable horizon problem with loose rows, so slacks stay at zero.
fn random_horizon(rng: &mut ChaCha8Rng) -> (HorizonData, DVector<f64>, DVector<f64>) {
    let n = rng.gen_range(2..=4);
    let m = rng.gen_range(1..=2);
    let ns = rng.gen_range(2..=4);
    let mut a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.2..0.2));
    for i in 0..n {
        a[(i, i)] += 0.7;
    }
    let diag = |rng: &mut ChaCha8Rng, k: usize, lo: f64, hi: f64| {
        DMatrix::from_diagonal(&DVector::from_fn(k, |_, _| rng.gen_range(lo..hi)))
    };
    let mut t = DMatrix::zeros(1, n);
    t[(0, 0)] = 1.0;
    let h = HorizonData {
        b: DMatrix::from_fn(n, m, |_, _| rng.gen_range(-0.5..0.5)),
        a,
        t,
        q: diag(rng, n, 0.1, 2.0),
        r: diag(rng, m, 0.05, 1.0),
        s: diag(rng, 1, 0.1, 1.0),
        k_i: diag(rng, 1, 0.5, 2.0),
        p: diag(rng, n, 1.0, 3.0),
        alpha: 1e3,
        w: (0..ns).map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-0.2..0.2))).collect(),
        state_rows: vec![(DVector::from_fn(n, |i, _| if i == 0 { 1.0 } else { 0.0 }), 50.0)],
        u_lo: DVector::from_element(m, -2.0),
        u_hi: DVector::from_element(m, 2.0),
        rate: Some((DVector::zeros(m), 1.0)),
        np: rng.gen_range(2..=6),
        nu: 1,
        dt: 0.1,
        rho_slack: 1e3,
        rho_terminal: 1e3,
    };
    let h = HorizonData { nu: rng.gen_range(1..=h.np), ..h };
    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let z0 = dv(&[rng.gen_range(-0.5..0.5)]);
    (h, x0, z0)
}

fn solver(mpc_runs: &[&RunOutcome]) -> Verdict {
    let opts = IpmOptions { tol: 1e-9, max_iter: 100 };
    // min γ s.t. u² ≤ γ, (u − 2)² ≤ γ.
    let mut p1 = Qcqp::new(2, Quad::linear(dv(&[0.0, 1.0]), 0.0));
    p1.quad.push(Quad::dense(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]), dv(&[0.0, -1.0]), 0.0));
    p1.quad.push(Quad::dense(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]), dv(&[-4.0, -1.0]), 4.0));
    let s1 = qcqp::solve(&p1, None, &opts).unwrap();
    let e1 = (s1.x[0] - 1.0).abs().max((s1.x[1] - 1.0).abs());
    // min (u − 2)² s.t. 0 ≤ u ≤ 1.
    let mut p2 = Qcqp::new(1, Quad::dense(DMatrix::from_element(1, 1, 2.0), dv(&[-4.0]), 4.0));
    p2.push_linear(&dv(&[1.0]), 1.0);
    p2.push_linear(&dv(&[-1.0]), 0.0);
    let s2 = qcqp::solve(&p2, None, &opts).unwrap();
    let e2 = (s2.x[0] - 1.0).abs();

    let mut kkt = 0.0f64;
    let mut steps = 0usize;
    for run in mpc_runs {
        for s in &run.log.samples {
            if let Some(i) = &s.solve {
                if i.status != MpcStatus::MaxIter && !i.held {
                    kkt = kkt.max(i.primal_residual).max(i.dual_residual).max(i.gap);
                    steps += 1;
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut tight = 0.0f64;
    for _ in 0..20 {
        let (h, x0, z0) = random_horizon(&mut rng);
        let sol = solve_problem(&build_horizon(&h, &x0, &z0).unwrap(), None, &opts, true).unwrap();
        let worst = sol.scenario_costs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        tight = tight.max((sol.gamma - worst).abs());
    }
    let pass = e1 < 1e-8 && e2 < 1e-8 && steps > 0 && kkt < 1e-8 && tight < 1e-8;
    verdict(
        pass,
        format!("examples {e1:.1e}/{e2:.1e}, KKT max {kkt:.2e} over {steps} MPC steps, epigraph gap {tight:.2e} on 20 problems"),
    )
}

/// Independent forward simulation of one scenario cost for a constant scalar input.
fn desk_cost(h: &HorizonData, x0: &DVector<f64>, z0: &DVector<f64>, w: &DVector<f64>, u: f64) -> f64 {
    let bu = &h.b * dv(&[u]);
    let kt = &h.k_i * &h.t * h.dt;
    let mut x = x0.clone();
    let mut z = z0.clone();
    let mut j = h.dt * h.nu as f64 * (h.r[(0, 0)] * u * u);
    for k in 0..=h.np {
        let xn = &h.a * &x + &bu + w;
        let zn = &z + &kt * &x;
        x = xn;
        z = zn;
        if k < h.np {
            j += h.dt * (x.dot(&(&h.q * &x)) + z.dot(&(&h.s * &z)));
        }
    }
    j + x.dot(&(&h.p * &x))
}

fn desk_minimax() -> Verdict {
    let t = Instant::now();
    let h = HorizonData {
        a: DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.8]),
        b: DMatrix::from_row_slice(2, 1, &[0.1, 0.5]),
        t: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        q: DMatrix::from_diagonal(&dv(&[1.0, 0.5])),
        r: DMatrix::from_element(1, 1, 0.2),
        s: DMatrix::from_element(1, 1, 1.0),
        k_i: DMatrix::from_element(1, 1, 1.0),
        p: DMatrix::from_diagonal(&dv(&[2.0, 1.0])),
        alpha: 1e6,
        w: vec![dv(&[0.3, 0.4]), dv(&[-0.2, -0.5])],
        state_rows: vec![],
        u_lo: dv(&[-2.0]),
        u_hi: dv(&[2.0]),
        rate: None,
        np: 2,
        nu: 1,
        dt: 0.1,
        rho_slack: 1e3,
        rho_terminal: 1e3,
    };
    let (x0, z0) = (dv(&[0.5, -0.3]), dv(&[0.1]));
    let opts = IpmOptions { tol: 1e-10, max_iter: 100 };
    let sol = solve_problem(&build_horizon(&h, &x0, &z0).unwrap(), None, &opts, true).unwrap();
    let (u_epi, g_epi) = (sol.du[0][0], sol.gamma);

    let worst = |u: f64| h.w.iter().map(|w| desk_cost(&h, &x0, &z0, w, u)).fold(f64::NEG_INFINITY, f64::max);
    let step = 1e-3;
    let n = ((h.u_hi[0] - h.u_lo[0]) / step).round() as usize;
    let (mut best_u, mut best) = (h.u_lo[0], f64::INFINITY);
    for k in 0..=n {
        let u = h.u_lo[0] + k as f64 * step;
        let v = worst(u);
        if v < best {
            best = v;
            best_u = u;
        }
    }
    // The pointwise max of convex costs is convex, so ternary search inside the best cell
    // reaches the continuous minimum.
    let (mut lo, mut hi) = ((best_u - step).max(h.u_lo[0]), (best_u + step).min(h.u_hi[0]));
    for _ in 0..200 {
        let (m1, m2) = (lo + (hi - lo) / 3.0, hi - (hi - lo) / 3.0);
        if worst(m1) < worst(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let u_ref = 0.5 * (lo + hi);
    let g_ref = worst(u_ref);
    let el = t.elapsed();
    let active = h.w.iter().map(|w| desk_cost(&h, &x0, &z0, w, u_epi)).collect::<Vec<_>>();
    let pass = (g_epi - g_ref).abs() < 1e-6 && g_epi <= best + 1e-9 && (u_epi - best_u).abs() <= step && el < Duration::from_secs(30);
    verdict(
        pass,
        format!(
            "epigraph u {u_epi:.6} γ {g_epi:.9}; grid u {best_u:.3} max J {best:.9}; refined {g_ref:.9}; scenario costs {:.6}/{:.6}; {:.3} s",
            active[0],
            active[1],
            secs(el)
        ),
    )
}

fn tracking(t1: &Table1) -> Verdict {
    let mut pass = true;
    let mut parts = vec![];
    for (p, cl) in t1.points.iter().zip(&t1.cl) {
        let i = &cl.indicators;
        let mr = i.static_error_mr_cc.max(i.static_error_mr_gg).max(i.static_error_mr_pi);
        let ok = i.static_error_pcc < 0.7 && mr < 1.7 && i.settling_time_99 <= 3.0 && cl.log.aborted.is_none();
        pass &= ok;
        parts.push(format!("{p:.1}: pCC {:.3}% MR max {:.3}% ts {:.2} s", i.static_error_pcc, mr, i.settling_time_99));
    }
    verdict(pass, parts.join("; "))
}

fn constraint_contrast(exp: &Experiment, mpc: &RunOutcome) -> Verdict {
    let bound = exp.config.mpc.constraints.omega_max;
    let peak = |o: &RunOutcome| o.log.samples.iter().map(|s| s.x[0].max(s.x[1])).fold(f64::NEG_INFINITY, f64::max);
    let lqr = report::evaluate(exp, ControllerKind::Lqr).unwrap();
    let pid = report::evaluate(exp, ControllerKind::Pid).unwrap();
    let pass = mpc.max_omega <= bound && peak(&lqr) > bound && peak(&pid) > bound;
    verdict(
        pass,
        format!("max ω: MPC {:.4} (t ≥ t_c), LQR {:.4}, PID {:.4}, bound {bound}", mpc.max_omega, peak(&lqr), peak(&pid)),
    )
}

fn table_report(t1: &Table1, dir: &Path) -> Verdict {
    let text = std::fs::read_to_string(dir.join("table1.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let header_ok = lines[0] == Table1::header().join(",");
    let shape_ok = lines.len() == 8 && lines[1..].iter().all(|l| l.split(',').count() == 7) && !text.contains('\r');
    let mut directional = true;
    let mut parts = vec![];
    for k in [0, 2] {
        let (ol, cl) = (t1.ol[k].indicators, t1.cl[k].indicators);
        let pairs = [
            (ol.static_error_pcc, cl.static_error_pcc),
            (ol.static_error_mr_cc, cl.static_error_mr_cc),
            (ol.static_error_mr_gg, cl.static_error_mr_gg),
            (ol.static_error_mr_pi, cl.static_error_mr_pi),
        ];
        directional &= pairs.iter().all(|(o, c)| c <= o);
        let f: Vec<String> = pairs.iter().map(|(o, c)| format!("{c:.2}≤{o:.2}")).collect();
        parts.push(format!("{:.1}: {}", t1.points[k], f.join(" ")));
    }
    verdict(header_ok && shape_ok && directional, format!("7×6 grid {}, CL vs OL {}", header_ok && shape_ok, parts.join("; ")))
}

fn robustness(base: &Experiment, runs: &mut Vec<RunOutcome>) -> Verdict {
    let c = HardConstraints::default();
    let mut pass = true;
    let mut cvt = vec![];
    let mut max_ts = 0.0f64;
    for seed in 1..=100u64 {
        let exp = base.reseeded(seed).unwrap();
        let o = report::evaluate(&exp, ControllerKind::Mpc).unwrap();
        let i = o.indicators;
        let after_ok = o
            .log
            .samples
            .iter()
            .filter(|s| s.t >= i.constraints_verification_time - 1e-9)
            .all(|s| c.satisfied(&s.x, &exp.model_params, true, 0.0));
        let ok = o.log.aborted.is_none()
            && o.log.samples.len() == 151
            && i.settling_time_99 <= 3.0
            && i.constraints_verification_time.is_finite()
            && after_ok;
        if !ok {
            println!("  seed {seed}: ts {} cvt {} aborted {:?}", i.settling_time_99, i.constraints_verification_time, o.log.aborted);
        }
        pass &= ok;
        cvt.push(i.constraints_verification_time);
        max_ts = max_ts.max(i.settling_time_99);
        runs.push(o);
    }
    let finite: Vec<f64> = cvt.iter().cloned().filter(|v| v.is_finite()).collect();
    let mean = finite.iter().sum::<f64>() / finite.len().max(1) as f64;
    let sd = (finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / finite.len().max(1) as f64).sqrt();
    let (lo, hi) = finite.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    verdict(pass, format!("100 seeds, max settling {max_ts:.2} s, verification time {lo:.2}..{hi:.2} s (mean {mean:.3}, sd {sd:.3})"))
}

/// Files in `a` whose bytes differ from (or are missing in) `b`, plus the count compared.
fn differing_files(a: &Path, b: &Path) -> (Vec<String>, usize) {
    let mut names: Vec<_> = std::fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let mut diff: Vec<String> =
        names.iter().filter(|n| std::fs::read(a.join(n)).ok() != std::fs::read(b.join(n)).ok()).map(|n| n.to_string_lossy().into_owned()).collect();
    if std::fs::read_dir(b).unwrap().count() != names.len() {
        diff.push("<file set>".into());
    }
    (diff, names.len())
}

fn determinism(root: &Path) -> Verdict {
    let cfg = RunConfig { seed: 7, ..RunConfig::default() };
    let mut diff = vec![];
    let mut count = 0;
    for (name, f) in [
        ("calibrate", (|c: &RunConfig, d: &Path| report::calibrate(c, d).map(|_| ())) as fn(&RunConfig, &Path) -> _),
        ("refgen", |c, d| report::refgen(c, d).map(|_| ())),
        ("run", |c, d| report::run(c, d).map(|_| ())),
    ] {
        let (a, b) = (root.join(format!("{name}_a")), root.join(format!("{name}_b")));
        f(&cfg, &a).unwrap();
        f(&cfg, &b).unwrap();
        let (d, n) = differing_files(&a, &b);
        diff.extend(d.into_iter().map(|f| format!("{name}/{f}")));
        count += n;
    }
    let mut detail = format!("{count} files compared across calibrate, refgen and an MPC run");
    if !diff.is_empty() {
        detail.push_str(&format!("; differing: {}", diff.join(", ")));
    }
    verdict(diff.is_empty(), detail)
}

fn main() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let mut results: Vec<(usize, &str, Verdict)> = vec![];
    results.push((1, "calibration", calibration()));
    results.push((2, "preprocessor", preprocessor()));
    results.push((3, "linearization and ZOH", discretization()));
    results.push((4, "terminal ingredients", terminal()));
    results.push((6, "desk-scale minimax", desk_minimax()));

    let cfg = RunConfig::default();
    let t = Instant::now();
    let t1 = report::table1(&cfg, &tmp.path().join("table1")).unwrap();
    let per_run = t.elapsed() / 6;
    let mut tr = tracking(&t1);
    tr.detail.push_str(&format!("; {:.1} s per run", secs(per_run)));
    tr.pass &= per_run < Duration::from_secs(600);
    results.push((7, "closed-loop tracking", tr));
    let high = Experiment::new(&cfg.with_command(ReferenceCommand::nominal(1.2))).unwrap();
    results.push((8, "constraint contrast", constraint_contrast(&high, &t1.cl[2])));
    results.push((9, "comparison table", table_report(&t1, &tmp.path().join("table1"))));
    let nominal = Experiment::new(&cfg).unwrap();
    let mut batch = vec![];
    results.push((10, "robustness batch", robustness(&nominal, &mut batch)));
    let mut mpc_runs: Vec<&RunOutcome> = t1.cl.iter().collect();
    mpc_runs.extend(batch.iter());
    results.push((5, "solver correctness", solver(&mpc_runs)));
    results.push((11, "determinism", determinism(tmp.path())));

    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (k, name, v) in &results {
        println!("criterion {k:>2} {name}: {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("acceptance: {} passed, {failed} failed in {:.1} s", results.len() - failed, secs(start.elapsed()));
    if failed > 0 {
        std::process::exit(1);
    }
}
