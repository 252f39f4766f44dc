//! Second moments `𝐗 = E[X X^T]`, `𝐘 = E[X] E[X]^T` under a linear
//! closed-loop strategy `(Θ, Θ̄, 0)` of the homogeneous problem, and the
//! exact cost they determine.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{MflqError, Result};
use crate::linalg::symmetrize;
use crate::ode::{escaped, rk4_step, trapezoid, State};
use crate::problem::{MatrixPath, ProblemData, TimeGrid};

#[derive(Debug, Clone)]
pub struct MomentPath {
    pub grid: TimeGrid,
    pub x: Vec<DMatrix<f64>>,
    pub y: Vec<DMatrix<f64>>,
}

fn require_homogeneous(p0: &ProblemData) -> Result<()> {
    if !p0.is_homogeneous() {
        return Err(MflqError::Precondition(
            "moment equations need a homogeneous problem; strip the inhomogeneities first".into(),
        ));
    }
    Ok(())
}

fn check_shapes(p0: &ProblemData, theta: &MatrixPath, theta_bar: &MatrixPath) -> Result<()> {
    let want = (p0.m, p0.n);
    for (name, g) in [("Θ", theta), ("Θ̄", theta_bar)] {
        if g.shape() != want {
            return Err(MflqError::Dimension(format!(
                "gain {name} is {:?}, expected {:?}",
                g.shape(),
                want
            )));
        }
    }
    Ok(())
}

/// `(d𝐗/ds, d𝐘/ds)` at time `s`.
fn moment_rhs(
    p0: &ProblemData,
    theta: &MatrixPath,
    theta_bar: &MatrixPath,
    s: f64,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = p0.snapshot(s);
    let th = theta.at(s);
    let tb = theta_bar.at(s);
    let total = &th + &tb;
    let a_cl = &k.a + &k.b * &th;
    let c_cl = &k.c + &k.d * &th;
    let a_mf = &k.a_bar + &k.b_bar * &th + (&k.b + &k.b_bar) * &tb;
    let c_mf = &k.c_bar + &k.d_bar * &th + (&k.d + &k.d_bar) * &tb;
    let a_mean = &k.a + &k.a_bar + (&k.b + &k.b_bar) * &total;

    let ay = &a_mf * y;
    let cy = &c_mf * y;
    let dx = &a_cl * x + x * a_cl.transpose()
        + &c_cl * x * c_cl.transpose()
        + &ay
        + ay.transpose()
        + &c_cl * cy.transpose()
        + &cy * c_cl.transpose()
        + &cy * c_mf.transpose();
    let my = &a_mean * y;
    let dy = &my + my.transpose();
    (symmetrize(&dx), symmetrize(&dy))
}

/// Forward RK4 of the moment equations on the problem horizon.
pub fn propagate_moments(
    p0: &ProblemData,
    theta: &MatrixPath,
    theta_bar: &MatrixPath,
    x0: &DMatrix<f64>,
    y0: &DMatrix<f64>,
) -> Result<MomentPath> {
    require_homogeneous(p0)?;
    check_shapes(p0, theta, theta_bar)?;
    let n = p0.n;
    if x0.shape() != (n, n) || y0.shape() != (n, n) {
        return Err(MflqError::Dimension(format!("initial moments must be {n}x{n}")));
    }
    let grid = p0.horizon;
    let h = grid.step();
    let mut rhs = |s: f64, st: &State| {
        let (dx, dy) = moment_rhs(p0, theta, theta_bar, s, &st[0], &st[1]);
        vec![dx, dy]
    };
    let mut states: Vec<State> = Vec::with_capacity(grid.len());
    states.push(vec![symmetrize(x0), symmetrize(y0)]);
    for k in 0..grid.n_steps {
        let next = rk4_step(&mut rhs, grid.node(k), &states[k], h, true);
        if escaped(&next) {
            return Err(MflqError::FiniteEscape {
                what: "moment equations",
                node: k + 1,
                time: grid.node(k + 1),
                last_valid: k,
            });
        }
        states.push(next);
    }
    let (x, y) = states.into_iter().map(|mut st| (st.remove(0), st.remove(0))).unzip();
    Ok(MomentPath { grid, x, y })
}

/// Integrand matrices `(M, N)` of the cost `∫ tr[M 𝐗 + N 𝐘]`.
fn cost_matrices(
    p0: &ProblemData,
    th: &DMatrix<f64>,
    tb: &DMatrix<f64>,
    s: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = p0.snapshot(s);
    let total = th + tb;
    let m = &k.q + th.transpose() * &k.s + k.s.transpose() * th + th.transpose() * &k.r * th;
    let n = &k.q_bar
        + total.transpose() * &k.s_bar
        + k.s_bar.transpose() * &total
        + total.transpose() * &k.r_bar * &total
        + tb.transpose() * &k.r * tb
        + tb.transpose() * &k.s
        + k.s.transpose() * tb
        + tb.transpose() * &k.r * th
        + th.transpose() * &k.r * tb;
    (m, n)
}

/// `tr[G 𝐗(T) + Ḡ 𝐘(T)] + ∫ tr[M 𝐗 + N 𝐘] ds` with the trapezoid rule.
pub fn homogeneous_cost(
    p0: &ProblemData,
    theta: &MatrixPath,
    theta_bar: &MatrixPath,
    mp: &MomentPath,
) -> f64 {
    let running: Vec<f64> = (0..mp.grid.len())
        .map(|k| {
            let s = mp.grid.node(k);
            let (m, n) = cost_matrices(p0, &theta.at(s), &theta_bar.at(s), s);
            (m * &mp.x[k]).trace() + (n * &mp.y[k]).trace()
        })
        .collect();
    let last = mp.grid.n_steps;
    let w = &p0.weights;
    (&w.g * &mp.x[last]).trace() + (&w.g_bar * &mp.y[last]).trace() + trapezoid(&running, mp.grid.step())
}

/// Propagates and costs in one call.
pub fn moment_cost(
    p0: &ProblemData,
    theta: &MatrixPath,
    theta_bar: &MatrixPath,
    x0: &DMatrix<f64>,
    y0: &DMatrix<f64>,
) -> Result<f64> {
    let mp = propagate_moments(p0, theta, theta_bar, x0, y0)?;
    Ok(homogeneous_cost(p0, theta, theta_bar, &mp))
}

/// Max-norm of the central finite-difference gradient of the cost with
/// respect to constant bumps of every entry of `Θ` and `Θ̄`.
pub fn stationarity_residual(
    p0: &ProblemData,
    theta: &MatrixPath,
    theta_bar: &MatrixPath,
    x0: &DMatrix<f64>,
    y0: &DMatrix<f64>,
    fd_step: f64,
) -> Result<f64> {
    if !(fd_step > 0.0) {
        return Err(MflqError::Precondition(format!("fd_step must be positive, got {fd_step}")));
    }
    require_homogeneous(p0)?;
    check_shapes(p0, theta, theta_bar)?;
    let (m, n) = (p0.m, p0.n);
    // Entry index e < m n bumps Θ, the rest bump Θ̄.
    let partials: Vec<Result<f64>> = (0..2 * m * n)
        .into_par_iter()
        .map(|e| {
            let (which, idx) = (e / (m * n), e % (m * n));
            let mut bump = DMatrix::zeros(m, n);
            bump[(idx / n, idx % n)] = fd_step;
            let cost = |sign: f64| {
                let delta = &bump * sign;
                if which == 0 {
                    moment_cost(p0, &theta.shifted(&delta), theta_bar, x0, y0)
                } else {
                    moment_cost(p0, theta, &theta_bar.shifted(&delta), x0, y0)
                }
            };
            Ok((cost(1.0)? - cost(-1.0)?) / (2.0 * fd_step))
        })
        .collect();
    let mut worst = 0.0_f64;
    for g in partials {
        worst = worst.max(g?.abs());
    }
    Ok(worst)
}
