//! Linear models about an equilibrium: finite-difference Jacobians, zero-order-hold
//! discretization and modal analysis.

use nalgebra::{DMatrix, SMatrix};
use num_complex::Complex64;

use crate::engine::{
    dynamics_fs_at, ControlSections, EngineParams, EngineState, N_U, N_X, STATE_NAMES,
};
use crate::error::{Error, Result};
use crate::refgen::Equilibrium;

pub type MatA = SMatrix<f64, N_X, N_X>;
pub type MatB = SMatrix<f64, N_X, N_U>;

#[derive(Debug, Clone)]
pub struct LinearModel {
    pub a_c: MatA,
    pub b_c: MatB,
    pub a_d: MatA,
    pub b_d: MatB,
    pub dt: f64,
    pub anchor: Equilibrium,
}

impl LinearModel {
    /// Linearizes the simplified model with C* frozen at the anchor's commanded ratios.
    pub fn about(eq: &Equilibrium, params: &EngineParams, dt: f64) -> Result<Self> {
        let (mr_cc, mr_gg) = (eq.command.mr_cc, eq.command.mr_gg);
        let (a_c, b_c) =
            jacobians(|x, u| dynamics_fs_at(x, u, params, mr_cc, mr_gg), &eq.x, &eq.u)?;
        let (a_d, b_d) = discretize_zoh(&a_c, &b_c, dt);
        Ok(Self { a_c, b_c, a_d, b_d, dt, anchor: eq.clone() })
    }
}

/// Central differences with step `1e-6·max(1, |v_j|)` per component.
pub fn jacobians<F>(f: F, x: &EngineState, u: &ControlSections) -> Result<(MatA, MatB)>
where
    F: Fn(&EngineState, &ControlSections) -> Result<EngineState>,
{
    jacobians_with_step(f, x, u, 1e-6)
}

pub fn jacobians_with_step<F>(
    f: F,
    x: &EngineState,
    u: &ControlSections,
    rel: f64,
) -> Result<(MatA, MatB)>
where
    F: Fn(&EngineState, &ControlSections) -> Result<EngineState>,
{
    let mut a = MatA::zeros();
    let mut b = MatB::zeros();
    for j in 0..N_X {
        let h = rel * x[j].abs().max(1.0);
        let (mut xp, mut xm) = (*x, *x);
        xp[j] += h;
        xm[j] -= h;
        let col = (f(&xp, u)? - f(&xm, u)?) / (2.0 * h);
        a.set_column(j, &col);
    }
    for j in 0..N_U {
        let h = rel * u[j].abs().max(1.0);
        let (mut up, mut um) = (*u, *u);
        up[j] += h;
        um[j] -= h;
        let col = (f(x, &up)? - f(x, &um)?) / (2.0 * h);
        b.set_column(j, &col);
    }
    for (i, row) in a.row_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Linearization(format!(
                "non-finite derivative of d{}/dx",
                STATE_NAMES[i]
            )));
        }
    }
    for (i, row) in b.row_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Linearization(format!(
                "non-finite derivative of d{}/du",
                STATE_NAMES[i]
            )));
        }
    }
    Ok((a, b))
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Matrix exponential by scaling and squaring around a degree-13 Padé approximant.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm1 = (0..n).map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    const THETA13: f64 = 5.371920351148152;
    let s = if norm1 > THETA13 { (norm1 / THETA13).log2().ceil() as i32 } else { 0 };
    let a = a / 2f64.powi(s);
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];
    let mut r = (&v - &u).lu().solve(&(&v + &u)).expect("Padé denominator is nonsingular");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Zero-order-hold discretization via the exponential of `[[A, B], [0, 0]]·dt`.
pub fn discretize_zoh(a_c: &MatA, b_c: &MatB, dt: f64) -> (MatA, MatB) {
    let (a, b) = discretize_zoh_dyn(
        &DMatrix::from_column_slice(N_X, N_X, a_c.as_slice()),
        &DMatrix::from_column_slice(N_X, N_U, b_c.as_slice()),
        dt,
    );
    (MatA::from_column_slice(a.as_slice()), MatB::from_column_slice(b.as_slice()))
}

pub fn discretize_zoh_dyn(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = (a.nrows(), b.ncols());
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(b * dt));
    let e = expm(&aug);
    (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned())
}

#[derive(Debug, Clone)]
pub struct Mode {
    pub value: Complex64,
    pub vector: Vec<Complex64>,
}

/// Eigenpairs sorted by descending real part, conjugate pairs adjacent (positive imaginary
/// part first). Vectors have unit norm with their largest-modulus component real positive.
pub fn modal_decomposition(a: &DMatrix<f64>) -> Result<Vec<Mode>> {
    let n = a.nrows();
    let scale = a.amax().max(1.0);
    let mut values: Vec<Complex64> = a.clone().complex_eigenvalues().iter().copied().collect();
    if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Modal("non-finite eigenvalue".into()));
    }
    // Exact conjugate symmetry so the pairing below is deterministic.
    let tol = 1e-10 * scale;
    for v in values.iter_mut() {
        if v.im.abs() < tol {
            v.im = 0.0;
        }
    }
    values.sort_by(|p, q| q.re.total_cmp(&p.re).then(q.im.total_cmp(&p.im)));

    let ac = a.map(|v| Complex64::new(v, 0.0));
    let mut modes: Vec<Mode> = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        let lam = values[i];
        let vec = eigenvector(&ac, lam, scale)?;
        if lam.im > 0.0 {
            let conj_vec: Vec<Complex64> = vec.iter().map(|c| c.conj()).collect();
            modes.push(Mode { value: lam, vector: vec });
            modes.push(Mode { value: lam.conj(), vector: conj_vec });
            i += 2;
        } else {
            modes.push(Mode { value: lam, vector: vec });
            i += 1;
        }
    }
    if modes.len() != n {
        return Err(Error::Modal("unpaired complex eigenvalue".into()));
    }
    // Reject a numerically defective basis.
    let v = DMatrix::from_fn(n, n, |r, c| modes[c].vector[r]);
    let sv = v.clone().svd(false, false).singular_values;
    let cond = sv[0] / sv[n - 1];
    if !(cond < 1e10) {
        return Err(Error::Modal(format!("eigenvector basis condition number {cond:e}")));
    }
    Ok(modes)
}

fn eigenvector(a: &DMatrix<Complex64>, lam: Complex64, scale: f64) -> Result<Vec<Complex64>> {
    let n = a.nrows();
    let shift = lam + Complex64::new(1e-10 * scale, 0.0);
    let mut m = a.clone();
    for k in 0..n {
        m[(k, k)] -= shift;
    }
    let lu = m.lu();
    let mut v = nalgebra::DVector::from_fn(n, |k, _| Complex64::new(1.0 + 0.1 * k as f64, 0.0));
    for _ in 0..3 {
        v = lu
            .solve(&v)
            .ok_or_else(|| Error::Modal(format!("singular shifted matrix at {lam}")))?;
        let nv = v.norm();
        v /= Complex64::new(nv, 0.0);
    }
    let (kmax, _) = v
        .iter()
        .enumerate()
        .fold((0, -1.0), |acc, (k, c)| if c.norm() > acc.1 + 1e-12 { (k, c.norm()) } else { acc });
    let phase = v[kmax] / Complex64::new(v[kmax].norm(), 0.0);
    v /= phase;
    v[kmax].im = 0.0;
    let res = (a * &v - &v * lam).norm();
    if !(res < 1e-8) {
        return Err(Error::Modal(format!("eigenpair residual {res:e} at {lam}")));
    }
    Ok(v.iter().copied().collect())
}

pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.clone().complex_eigenvalues().iter().map(|v| v.re).fold(f64::NEG_INFINITY, f64::max)
}

pub fn to_dyn<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}
