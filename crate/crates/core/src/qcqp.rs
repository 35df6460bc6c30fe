//! Primal-dual interior-point solver for convex quadratically constrained quadratic programs
//!
//! ```text
//! minimize    ½xᵀP₀x + q₀ᵀx + r₀
//! subject to  ½xᵀPⱼx + qⱼᵀx + rⱼ ≤ 0     (Pⱼ ⪰ 0)
//!             Gx ≤ h
//!             Ax = b
//! ```
//!
//! Inequalities get slacks `g(x) + s = 0, s > 0`. Each iteration takes a Mehrotra
//! predictor-corrector step on the reduced system
//! `[H + JᵀS⁻¹ΛJ, Aᵀ; A, 0]`, factored densely by LU with iterative refinement.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Convex quadratic `½Σ x_bᵀP_b x_b + qᵀx + r`, with `P` stored as square blocks on
/// contiguous index ranges starting at the given offsets.
#[derive(Debug, Clone)]
pub struct Quad {
    pub blocks: Vec<(usize, DMatrix<f64>)>,
    pub q: DVector<f64>,
    pub r: f64,
}

impl Quad {
    pub fn linear(q: DVector<f64>, r: f64) -> Self {
        Self { blocks: vec![], q, r }
    }

    pub fn dense(p: DMatrix<f64>, q: DVector<f64>, r: f64) -> Self {
        Self { blocks: vec![(0, p)], q, r }
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        let mut v = self.q.dot(x) + self.r;
        for (o, p) in &self.blocks {
            let xb = x.rows(*o, p.nrows());
            v += 0.5 * xb.dot(&(p * xb));
        }
        v
    }

    pub fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = self.q.clone();
        for (o, p) in &self.blocks {
            let xb = x.rows(*o, p.nrows());
            let mut gb = g.rows_mut(*o, p.nrows());
            gb += p * xb;
        }
        g
    }

    pub fn add_hessian(&self, h: &mut DMatrix<f64>, scale: f64) {
        for (o, p) in &self.blocks {
            let n = p.nrows();
            let mut hb = h.view_mut((*o, *o), (n, n));
            hb += p * scale;
        }
    }

    /// Dense Hessian (for tests and diagnostics).
    pub fn hessian(&self, n: usize) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(n, n);
        self.add_hessian(&mut h, 1.0);
        h
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            blocks: self.blocks.iter().map(|(o, p)| (*o, p * c)).collect(),
            q: &self.q * c,
            r: self.r * c,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Qcqp {
    pub objective: Quad,
    pub quad: Vec<Quad>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Qcqp {
    pub fn new(n: usize, objective: Quad) -> Self {
        Self {
            objective,
            quad: vec![],
            g: DMatrix::zeros(0, n),
            h: DVector::zeros(0),
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
        }
    }

    pub fn n(&self) -> usize {
        self.objective.q.len()
    }

    pub fn push_linear(&mut self, row: &DVector<f64>, rhs: f64) {
        let m = self.g.nrows();
        let g = std::mem::replace(&mut self.g, DMatrix::zeros(0, 0));
        self.g = g.insert_row(m, 0.0);
        self.g.row_mut(m).copy_from(&row.transpose());
        self.h = std::mem::replace(&mut self.h, DVector::zeros(0)).push(rhs);
    }

    pub fn push_equality(&mut self, row: &DVector<f64>, rhs: f64) {
        let m = self.a.nrows();
        let a = std::mem::replace(&mut self.a, DMatrix::zeros(0, 0));
        self.a = a.insert_row(m, 0.0);
        self.a.row_mut(m).copy_from(&row.transpose());
        self.b = std::mem::replace(&mut self.b, DVector::zeros(0)).push(rhs);
    }

    fn n_ineq(&self) -> usize {
        self.quad.len() + self.g.nrows()
    }

    /// Inequality values `g(x)` (quadratic rows first).
    pub fn ineq(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut v = DVector::zeros(self.n_ineq());
        for (i, q) in self.quad.iter().enumerate() {
            v[i] = q.eval(x);
        }
        let lin = &self.g * x - &self.h;
        v.rows_mut(self.quad.len(), self.g.nrows()).copy_from(&lin);
        v
    }

    fn ineq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n();
        let mq = self.quad.len();
        let mut j = DMatrix::zeros(self.n_ineq(), n);
        for (i, q) in self.quad.iter().enumerate() {
            j.row_mut(i).copy_from(&q.grad(x).transpose());
        }
        j.view_mut((mq, 0), (self.g.nrows(), n)).copy_from(&self.g);
        j
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpmOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpmStatus {
    Optimal,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct IpmSolution {
    pub x: DVector<f64>,
    pub s: DVector<f64>,
    pub lambda: DVector<f64>,
    pub nu: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub status: IpmStatus,
    /// Average complementarity `sᵀλ/m` after each accepted step.
    pub gap_history: Vec<f64>,
}

struct Residuals {
    dual: DVector<f64>,
    ineq: DVector<f64>,
    eq: DVector<f64>,
}

impl Residuals {
    fn primal_norm(&self) -> f64 {
        self.ineq.amax().max(self.eq.amax())
    }
}

fn residuals(
    prob: &Qcqp,
    x: &DVector<f64>,
    s: &DVector<f64>,
    lam: &DVector<f64>,
    nu: &DVector<f64>,
    jac: &DMatrix<f64>,
) -> Residuals {
    let dual = prob.objective.grad(x) + jac.transpose() * lam + prob.a.transpose() * nu;
    let ineq = prob.ineq(x) + s;
    let eq = &prob.a * x - &prob.b;
    Residuals { dual, ineq, eq }
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut a: f64 = 1.0;
    for (vi, di) in v.iter().zip(dv.iter()) {
        if *di < 0.0 {
            a = a.min(-vi / di);
        }
    }
    a
}

struct Newton {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    kkt: DMatrix<f64>,
    n: usize,
}

impl Newton {
    fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        let mut sol = self.lu.solve(rhs)?;
        for _ in 0..2 {
            let r = rhs - &self.kkt * &sol;
            if r.amax() <= 1e-15 * rhs.amax().max(1.0) {
                break;
            }
            sol += self.lu.solve(&r)?;
        }
        Some(sol)
    }
}

/// Search direction for a complementarity target `rc` (so that `Λds + Sdλ = −rc`).
fn direction(
    newton: &Newton,
    jac: &DMatrix<f64>,
    res: &Residuals,
    s: &DVector<f64>,
    lam: &DVector<f64>,
    rc: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
    let n = newton.n;
    let p = res.eq.len();
    // dλ = S⁻¹(Λ(r_ineq + J dx) − rc)
    let w = DVector::from_fn(s.len(), |i, _| (lam[i] * res.ineq[i] - rc[i]) / s[i]);
    let mut rhs = DVector::zeros(n + p);
    rhs.rows_mut(0, n).copy_from(&(-&res.dual - jac.transpose() * &w));
    rhs.rows_mut(n, p).copy_from(&(-&res.eq));
    let sol = newton.solve(&rhs)?;
    let dx = sol.rows(0, n).into_owned();
    let dnu = sol.rows(n, p).into_owned();
    let jdx = jac * &dx;
    let dlam = DVector::from_fn(s.len(), |i, _| w[i] + lam[i] * jdx[i] / s[i]);
    let ds = -&res.ineq - jdx;
    Some((dx, ds, dlam, dnu))
}

pub fn solve(prob: &Qcqp, x0: Option<&DVector<f64>>, opts: &IpmOptions) -> Result<IpmSolution> {
    let n = prob.n();
    let m = prob.n_ineq();
    let p = prob.a.nrows();
    if prob.g.ncols() != n || prob.a.ncols() != n || prob.quad.iter().any(|q| q.q.len() != n) {
        return Err(Error::Contract("QCQP dimensions disagree".into()));
    }
    let mut x = x0.cloned().unwrap_or_else(|| DVector::zeros(n));
    let g0 = prob.ineq(&x);
    let mut s = g0.map(|v| (-v).max(1.0));
    let mut lam = DVector::from_element(m, 1.0);
    let mut nu = DVector::zeros(p);
    let mut gap_history = Vec::new();
    let mu_of = |s: &DVector<f64>, l: &DVector<f64>| if m > 0 { s.dot(l) / m as f64 } else { 0.0 };

    let mut it = 0;
    loop {
        let jac = prob.ineq_jacobian(&x);
        let res = residuals(prob, &x, &s, &lam, &nu, &jac);
        let mu = mu_of(&s, &lam);
        let (pr, dr) = (res.primal_norm(), res.dual.amax());
        if (pr < opts.tol && dr < opts.tol && mu < opts.tol) || it >= opts.max_iter {
            let status = if it >= opts.max_iter && !(pr < opts.tol && dr < opts.tol && mu < opts.tol) {
                IpmStatus::MaxIter
            } else {
                IpmStatus::Optimal
            };
            return Ok(IpmSolution {
                objective: prob.objective.eval(&x),
                x,
                s,
                lambda: lam,
                nu,
                iterations: it,
                primal_residual: pr,
                dual_residual: dr,
                gap: mu,
                status,
                gap_history,
            });
        }

        let mut hess = prob.objective.hessian(n);
        for (i, q) in prob.quad.iter().enumerate() {
            q.add_hessian(&mut hess, lam[i]);
        }
        let d = DVector::from_fn(m, |i, _| lam[i] / s[i]);
        let jd = DMatrix::from_fn(m, n, |i, j| jac[(i, j)] * d[i]);
        hess += jac.transpose() * jd;
        let mut kkt = DMatrix::zeros(n + p, n + p);
        kkt.view_mut((0, 0), (n, n)).copy_from(&hess);
        kkt.view_mut((n, 0), (p, n)).copy_from(&prob.a);
        kkt.view_mut((0, n), (n, p)).copy_from(&prob.a.transpose());
        let newton = {
            let lu = kkt.clone().lu();
            if lu.is_invertible() {
                Newton { lu, kkt, n }
            } else {
                let mut reg = kkt;
                for i in 0..n {
                    reg[(i, i)] += 1e-10;
                }
                for i in n..n + p {
                    reg[(i, i)] -= 1e-10;
                }
                Newton { lu: reg.clone().lu(), kkt: reg, n }
            }
        };
        // A failed factorization ends the solve at the current iterate.
        macro_rules! dir_or_stop {
            ($e:expr) => {
                match $e {
                    Some(d) => d,
                    None => {
                        it = opts.max_iter;
                        continue;
                    }
                }
            };
        }

        // Predictor.
        let rc_aff = s.component_mul(&lam);
        let (dx_a, ds_a, dl_a, _) = dir_or_stop!(direction(&newton, &jac, &res, &s, &lam, &rc_aff));
        let a_aff = max_step(&s, &ds_a).min(max_step(&lam, &dl_a));
        let mu_aff = mu_of(&(&s + &ds_a * a_aff), &(&lam + &dl_a * a_aff));
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);
        let _ = dx_a;
        // Driving μ far below the tolerance only degrades the conditioning of S⁻¹Λ.
        let target = (sigma * mu).max((1e-2 * opts.tol).min(0.5 * mu));

        // Corrector.
        let rc = DVector::from_fn(m, |i, _| s[i] * lam[i] + ds_a[i] * dl_a[i] - target);
        let mut dir = dir_or_stop!(direction(&newton, &jac, &res, &s, &lam, &rc));
        let mut accepted = None;
        for attempt in 0..2 {
            let (dx, ds, dl, dn) = &dir;
            let amax = max_step(&s, ds).min(max_step(&lam, dl));
            let mut a = (0.99 * amax).min(1.0);
            for _ in 0..40 {
                let sn = &s + ds * a;
                let ln = &lam + dl * a;
                if mu_of(&sn, &ln) < mu {
                    accepted = Some((x.clone() + dx * a, sn, ln, &nu + dn * a));
                    break;
                }
                a *= 0.5;
            }
            if accepted.is_some() || attempt == 1 {
                break;
            }
            // Fall back to a plain centering direction, which always reduces μ for short steps.
            let rc = DVector::from_fn(m, |i, _| s[i] * lam[i] - 0.5 * mu);
            match direction(&newton, &jac, &res, &s, &lam, &rc) {
                Some(d) => dir = d,
                None => break,
            }
        }
        match accepted {
            Some((xn, sn, ln, nn)) => {
                x = xn;
                s = sn;
                lam = ln;
                nu = nn;
            }
            None if m == 0 => {
                let (dx, _, _, dn) = dir;
                x += dx;
                nu += dn;
            }
            None => {
                // No μ-decreasing step exists within the search; keep the iterate and stop.
                it = opts.max_iter;
                continue;
            }
        }
        gap_history.push(mu_of(&s, &lam));
        it += 1;
    }
}
