//! Quasi-infinite-horizon terminal ingredients: LQR gain, shift κ, Lyapunov matrix P and the
//! ellipsoid level α_P.

use nalgebra::{DMatrix, DVector, SMatrix};

use crate::constraints::{HalfSpace, HardConstraints};
use crate::engine::{ControlSections, EngineParams, EngineState, N_U, N_X};
use crate::error::{Error, Result};
use crate::linearize::{spectral_abscissa, LinearModel};

pub type MatK = SMatrix<f64, N_U, N_X>;

#[derive(Debug, Clone)]
pub struct TerminalSet {
    pub k: MatK,
    pub kappa: f64,
    pub p: SMatrix<f64, N_X, N_X>,
    pub alpha_p: f64,
    pub q_k: SMatrix<f64, N_X, N_X>,
    pub r_k: SMatrix<f64, N_U, N_U>,
}

impl TerminalSet {
    pub fn compute(
        lin: &LinearModel,
        q_k: &SMatrix<f64, N_X, N_X>,
        r_k: &SMatrix<f64, N_U, N_U>,
        constraints: &HardConstraints,
        section_bounds: (f64, f64),
        params: &EngineParams,
    ) -> Result<Self> {
        let a = dm(&lin.a_c);
        let b = dm(&lin.b_c);
        let q = dm(q_k);
        let r = dm(r_k);
        let kd = lqr_gain(&a, &b, &q, &r)?;
        let ak = &a + &b * &kd;
        let kappa = select_kappa(&ak)?;
        let mut m = ak.clone();
        for i in 0..N_X {
            m[(i, i)] += kappa;
        }
        let rhs = &q + kd.transpose() * &r * &kd;
        let p = solve_lyapunov(&m, &rhs)?;
        let k = MatK::from_column_slice(kd.as_slice());
        let p = SMatrix::<f64, N_X, N_X>::from_column_slice(p.as_slice());
        let x_r = lin.anchor.x;
        let state_hs = constraints.delta_halfspaces(&x_r, params, true);
        let control_hs = control_halfspaces(&lin.anchor.u, section_bounds);
        let alpha_p = terminal_alpha(&p, &k, &state_hs, &control_hs)?;
        Ok(Self { k, kappa, p, alpha_p, q_k: *q_k, r_k: *r_k })
    }

    /// `‖(A_K + κI)ᵀP + P(A_K + κI) + Q_K + KᵀR_K K‖_∞`.
    pub fn lyapunov_residual(&self, lin: &LinearModel) -> f64 {
        let m = lin.a_c + lin.b_c * self.k + SMatrix::<f64, N_X, N_X>::identity() * self.kappa;
        let res = m.transpose() * self.p + self.p * m + self.q_k + self.k.transpose() * self.r_k * self.k;
        res.amax()
    }
}

/// Section bounds as half-spaces on the control variation.
pub fn control_halfspaces(u_r: &ControlSections, (lo, hi): (f64, f64)) -> Vec<HalfSpace<ControlSections>> {
    let mut out = Vec::with_capacity(2 * N_U);
    for i in 0..N_U {
        let mut e = ControlSections::zeros();
        e[i] = 1.0;
        out.push(HalfSpace { a: e, b: hi - u_r[i] });
        out.push(HalfSpace { a: -e, b: u_r[i] - lo });
    }
    out
}

fn dm<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

/// Solves `MᵀP + PM = −RHS` through the Kronecker-vectorized linear system.
pub fn solve_lyapunov(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let mt = m.transpose();
    let op = id.kronecker(&mt) + mt.kronecker(&id);
    let vec_rhs = DVector::from_column_slice((-rhs).as_slice());
    let lu = op.clone().lu();
    let singular = || {
        let ev: Vec<_> = m.clone().complex_eigenvalues().iter().copied().collect();
        let mut worst = (0, 0, f64::INFINITY);
        for i in 0..n {
            for j in 0..n {
                let s = (ev[i] + ev[j]).norm();
                if s < worst.2 {
                    worst = (i, j, s);
                }
            }
        }
        Error::SingularLyapunov(format!(
            "eigenvalues {} and {} sum to {:e}",
            ev[worst.0], ev[worst.1], worst.2
        ))
    };
    let mut x = lu.solve(&vec_rhs).ok_or_else(singular)?;
    // One step of iterative refinement.
    let r = &vec_rhs - &op * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(singular());
    }
    let p = DMatrix::from_column_slice(n, n, x.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

pub fn care_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    let rinv = r.clone().try_inverse().expect("R is SPD");
    (a.transpose() * p + p * a - p * b * rinv * b.transpose() * p + q).amax()
}

/// Stabilizing CARE gain by Newton–Kleinman iteration from `K₀ = 0`; returns `K` with
/// `u = Kx`.
pub fn lqr_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(lqr_solve(a, b, q, r)?.0)
}

/// Gain and Riccati solution.
pub fn lqr_solve(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, m) = (a.nrows(), b.ncols());
    let r_chol = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Contract("R_K must be positive definite".into()))?;
    let mut k = DMatrix::zeros(m, n);
    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut best_kp = None;
    for _ in 0..100 {
        let ak = a + b * &k;
        let rhs = q + k.transpose() * r * &k;
        let p = solve_lyapunov(&ak, &rhs)?;
        k = -r_chol.solve(&(b.transpose() * &p));
        let res = care_residual(a, b, q, r, &p);
        history.push(res);
        if res < 1e-14 * (1.0 + p.amax()) {
            return Ok((k, p));
        }
        if res < best * 0.5 {
            best = res;
            since_best = 0;
            best_kp = Some((k.clone(), p));
        } else {
            since_best += 1;
            if since_best >= 5 {
                // Quadratic convergence has reached round-off.
                return match best_kp {
                    Some(kp) if best < 1e-8 => Ok(kp),
                    _ => Err(Error::RiccatiStall(history)),
                };
            }
        }
    }
    match best_kp {
        Some(kp) if best < 1e-8 => Ok(kp),
        _ => Err(Error::RiccatiStall(history)),
    }
}

/// `κ = ½·(−max Re λ(A_K))`.
pub fn select_kappa(ak: &DMatrix<f64>) -> Result<f64> {
    let abscissa = spectral_abscissa(ak);
    if !(abscissa < 0.0) {
        return Err(Error::NotHurwitz(abscissa));
    }
    Ok(-0.5 * abscissa)
}

/// Largest level α such that `{Δx : ΔxᵀPΔx ≤ α}` lies in every state half-space and maps
/// through `K` into every control half-space.
pub fn terminal_alpha(
    p: &SMatrix<f64, N_X, N_X>,
    k: &MatK,
    state_hs: &[HalfSpace<EngineState>],
    control_hs: &[HalfSpace<ControlSections>],
) -> Result<f64> {
    terminal_alpha_dyn(
        &dm(p),
        &state_hs.iter().map(|h| (DVector::from_column_slice(h.a.as_slice()), h.b)).collect::<Vec<_>>(),
        &control_hs
            .iter()
            .map(|h| (DVector::from_column_slice((k.transpose() * h.a).as_slice()), h.b))
            .collect::<Vec<_>>(),
    )
}

pub fn terminal_alpha_dyn(p: &DMatrix<f64>, state: &[(DVector<f64>, f64)], mapped: &[(DVector<f64>, f64)]) -> Result<f64> {
    let chol = p
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InfeasibleTerminal("P is not positive definite".into()))?;
    let mut alpha = f64::INFINITY;
    for (a, b) in state.iter().chain(mapped) {
        if !(*b > 0.0) {
            return Err(Error::InfeasibleTerminal(format!("reference violates a constraint (b = {b})")));
        }
        let s = a.dot(&chol.solve(a));
        if s > 0.0 {
            alpha = alpha.min(b * b / s);
        }
    }
    if !alpha.is_finite() {
        return Err(Error::InfeasibleTerminal("no constraint bounds the terminal set".into()));
    }
    Ok(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn d1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_care() {
        let (k, p) = lqr_solve(&d1(-1.0), &d1(1.0), &d1(1.0), &d1(1.0)).unwrap();
        let s = 2f64.sqrt() - 1.0;
        assert_relative_eq!(p[(0, 0)], s, epsilon = 1e-12);
        assert_relative_eq!(k[(0, 0)], -s, epsilon = 1e-12);
        let kappa = select_kappa(&d1(-1.0 - s)).unwrap();
        assert_relative_eq!(kappa, 0.70711, epsilon = 1e-5);
    }

    #[test]
    fn unactuated_gain_is_zero() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]);
        let k = lqr_gain(&a, &DMatrix::zeros(2, 1), &DMatrix::identity(2, 2), &d1(1.0)).unwrap();
        assert_eq!(k.amax(), 0.0);
    }

    #[test]
    fn kappa_cases() {
        assert_relative_eq!(select_kappa(&(-DMatrix::<f64>::identity(3, 3))).unwrap(), 0.5);
        assert!(select_kappa(&DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn lyapunov_closed_forms() {
        let p = solve_lyapunov(&(-DMatrix::<f64>::identity(3, 3)), &DMatrix::identity(3, 3)).unwrap();
        assert!((p - DMatrix::<f64>::identity(3, 3) * 0.5).amax() < 1e-15);
        let m = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let p = solve_lyapunov(&m, &DMatrix::identity(2, 2)).unwrap();
        assert!((p - DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.25])).amax() < 1e-15);
    }

    #[test]
    fn lyapunov_singular_reported() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let e = solve_lyapunov(&m, &DMatrix::identity(2, 2)).unwrap_err();
        assert!(e.to_string().contains("singular Lyapunov"));
    }

    #[test]
    fn alpha_support_function() {
        let p = SMatrix::<f64, N_X, N_X>::identity();
        let k = MatK::zeros();
        let mut e0 = EngineState::zeros();
        e0[0] = 1.0;
        let mut e1 = EngineState::zeros();
        e1[1] = 1.0;
        let one = [HalfSpace { a: e0, b: 0.5 }];
        assert_relative_eq!(terminal_alpha(&p, &k, &one, &[]).unwrap(), 0.25);
        let two = [HalfSpace { a: e0, b: 0.5 }, HalfSpace { a: e1, b: 0.3 }];
        assert_relative_eq!(terminal_alpha(&p, &k, &two, &[]).unwrap(), 0.09, epsilon = 1e-15);
        let bad = [HalfSpace { a: e0, b: -0.1 }];
        assert!(terminal_alpha(&p, &k, &bad, &[]).is_err());
    }

    proptest! {
        #[test]
        fn lyapunov_residual_random_stable(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 6;
            let mut m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-2.0..2.0));
            let shift = spectral_abscissa(&m) + 0.5;
            for i in 0..n { m[(i, i)] -= shift; }
            let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let rhs = &g * g.transpose();
            let p = solve_lyapunov(&m, &rhs).unwrap();
            let res = (m.transpose() * &p + &p * &m + &rhs).amax();
            prop_assert!(res < 1e-10);
        }
    }
}
