//! The affine backward equations for `(η, ζ)` and `η̄`, and the correction
//! terms `φ`, `φ̄`.
//!
//! Inputs are noise-affine, `f(s) = f0(s) + f1(s) W(s)`, so the backward SDE
//! is solved exactly by `η = η0 + η1 W`, `ζ = η1`, which turns it into two
//! coupled linear ODEs. `E[W(s)] = 0` and `E[W(s)^2] = s` throughout.

use nalgebra::{DMatrix, DVector};

use crate::error::{MflqError, Result};
use crate::gre::{ConditionVerdict, GreSolution, GreState, Tally, DEFAULT_TOL};
use crate::linalg;
use crate::ode::{escaped, hermite, rk4_step, State};
use crate::problem::{MatrixPath, TimeGrid};

fn col(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Node values of `η0` and `η1`.
#[derive(Debug, Clone)]
pub struct EtaPaths {
    pub eta0: Vec<DVector<f64>>,
    pub eta1: Vec<DVector<f64>>,
}

/// Right-hand sides `(dη0/ds, dη1/ds)` of the reduced equations.
pub fn eta_rhs(
    sol: &GreSolution,
    st: &GreState,
    eta0: &DVector<f64>,
    eta1: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let s = st.time;
    let k = sol.problem.snapshot(s);
    let f = sol.problem.inhom_at(s);
    let theta = st.theta();
    let a_cl = &k.a + &k.b * theta;
    let c_cl = &k.c + &k.d * theta;
    let p = &st.p;
    let d1 = a_cl.transpose() * eta1
        + c_cl.transpose() * (p * &f.sigma1)
        + theta.transpose() * &f.rho1
        + p * &f.b1
        + &f.q1;
    let d0 = a_cl.transpose() * eta0
        + c_cl.transpose() * eta1
        + c_cl.transpose() * (p * &f.sigma0)
        + theta.transpose() * &f.rho0
        + p * &f.b0
        + &f.q0;
    (-d0, -d1)
}

/// Drift generator of the backward SDE evaluated at a Brownian value `w`:
/// `(A+BΘ)^T η + (C+DΘ)^T ζ + (C+DΘ)^T P σ + Θ^T ρ + P b + q` with every
/// input taken as `f0 + f1 w`.
pub fn bsde_generator(
    sol: &GreSolution,
    st: &GreState,
    eta: &DVector<f64>,
    zeta: &DVector<f64>,
    w: f64,
) -> DVector<f64> {
    let k = sol.problem.snapshot(st.time);
    let f = sol.problem.inhom_at(st.time);
    let theta = st.theta();
    let a_cl = &k.a + &k.b * theta;
    let c_cl = &k.c + &k.d * theta;
    let p = &st.p;
    let sigma = &f.sigma0 + &f.sigma1 * w;
    let rho = &f.rho0 + &f.rho1 * w;
    let b = &f.b0 + &f.b1 * w;
    let q = &f.q0 + &f.q1 * w;
    a_cl.transpose() * eta + c_cl.transpose() * zeta + c_cl.transpose() * (p * sigma)
        + theta.transpose() * rho
        + p * b
        + q
}

fn escape(node: usize, grid: &TimeGrid, what: &'static str) -> MflqError {
    MflqError::FiniteEscape {
        what,
        node,
        time: grid.node(node),
        last_valid: node + 1,
    }
}

/// Backward RK4 for `(η0, η1)` from `(g0, g1)` on the GRE grid.
pub fn solve_eta(sol: &GreSolution) -> Result<EtaPaths> {
    let grid = sol.grid;
    let h = grid.step();
    let inh = &sol.problem.inhomogeneity;
    let mut rhs = |s: f64, y: &State| {
        let st = sol.state_at(s);
        let (d0, d1) = eta_rhs(sol, &st, &vec_of(&y[0]), &vec_of(&y[1]));
        vec![col(&d0), col(&d1)]
    };
    let mut states: Vec<State> = vec![Vec::new(); grid.len()];
    states[grid.n_steps] = vec![col(&inh.g0), col(&inh.g1)];
    for k in (1..=grid.n_steps).rev() {
        let next = rk4_step(&mut rhs, grid.node(k), &states[k], -h, false);
        if escaped(&next) {
            return Err(escape(k - 1, &grid, "affine backward equations"));
        }
        states[k - 1] = next;
    }
    Ok(EtaPaths {
        eta0: states.iter().map(|s| vec_of(&s[0])).collect(),
        eta1: states.iter().map(|s| vec_of(&s[1])).collect(),
    })
}

/// Inputs of the `η̄` equation that depend on `η1`:
/// `(D+D̄)^T (P σ0 + η1) + ρ0 + ρ̄` and `(C+C̄)^T (P σ0 + η1)`.
fn mean_terms(sol: &GreSolution, st: &GreState, eta1: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let k = sol.problem.snapshot(st.time);
    let f = sol.problem.inhom_at(st.time);
    let load = &st.p * &f.sigma0 + eta1;
    let d_sum = &k.d + &k.d_bar;
    let c_sum = &k.c + &k.c_bar;
    (
        d_sum.transpose() * &load + &f.rho0 + &f.rho_bar,
        c_sum.transpose() * &load,
    )
}

pub fn eta_bar_rhs(
    sol: &GreSolution,
    st: &GreState,
    eta_bar: &DVector<f64>,
    eta1: &DVector<f64>,
) -> DVector<f64> {
    let k = sol.problem.snapshot(st.time);
    let f = sol.problem.inhom_at(st.time);
    let gamma = st.gamma();
    let a_mean = &k.a + &k.a_bar + (&k.b + &k.b_bar) * gamma;
    let (control_term, state_term) = mean_terms(sol, st, eta1);
    let drift = a_mean.transpose() * eta_bar
        + gamma.transpose() * control_term
        + state_term
        + &f.q0
        + &f.q_bar
        + &st.pi * &f.b0;
    -drift
}

/// Backward RK4 for `η̄` from `g0 + ḡ`. Between nodes `η1` is taken from
/// cubic Hermite interpolation of its node values and slopes.
pub fn solve_eta_bar(sol: &GreSolution, eta: &EtaPaths) -> Result<Vec<DVector<f64>>> {
    let grid = sol.grid;
    let h = grid.step();
    let slopes: Vec<DMatrix<f64>> = sol
        .nodes
        .iter()
        .enumerate()
        .map(|(k, st)| col(&eta_rhs(sol, st, &eta.eta0[k], &eta.eta1[k]).1))
        .collect();
    let eta1_at = |s: f64| -> DVector<f64> {
        let (k, theta) = grid.locate(s);
        if theta == 0.0 {
            return eta.eta1[k].clone();
        }
        let m = hermite(
            &col(&eta.eta1[k]),
            &(&slopes[k] * h),
            &col(&eta.eta1[k + 1]),
            &(&slopes[k + 1] * h),
            theta,
        );
        vec_of(&m)
    };
    let mut rhs = |s: f64, y: &State| {
        let st = sol.state_at(s);
        vec![col(&eta_bar_rhs(sol, &st, &vec_of(&y[0]), &eta1_at(s)))]
    };
    let inh = &sol.problem.inhomogeneity;
    let mut states: Vec<State> = vec![Vec::new(); grid.len()];
    states[grid.n_steps] = vec![col(&(&inh.g0 + &inh.g_bar))];
    for k in (1..=grid.n_steps).rev() {
        let next = rk4_step(&mut rhs, grid.node(k), &states[k], -h, false);
        if escaped(&next) {
            return Err(escape(k - 1, &grid, "mean affine equation"));
        }
        states[k - 1] = next;
    }
    Ok(states.iter().map(|s| vec_of(&s[0])).collect())
}

/// Correction terms with their range arguments.
#[derive(Debug, Clone)]
pub struct Corrections {
    pub phi1: Vec<DVector<f64>>,
    pub phi_bar: Vec<DVector<f64>>,
    /// `B^T η1 + D^T P σ1 + ρ1` per node.
    pub phi1_arg: Vec<DVector<f64>>,
    /// `(B+B̄)^T η̄ + (D+D̄)^T (P σ0 + η1) + ρ0 + ρ̄` per node.
    pub phi_bar_arg: Vec<DVector<f64>>,
    /// `range(Σ; φ)` and `range(Σ̄; φ̄)`.
    pub feasibility: Vec<ConditionVerdict>,
}

pub fn compute_corrections(
    sol: &GreSolution,
    eta: &EtaPaths,
    eta_bar: &[DVector<f64>],
) -> Corrections {
    let mut range = Tally::new("range(Σ; φ)");
    let mut range_bar = Tally::new("range(Σ̄; φ̄)");
    let mut out = Corrections {
        phi1: Vec::new(),
        phi_bar: Vec::new(),
        phi1_arg: Vec::new(),
        phi_bar_arg: Vec::new(),
        feasibility: Vec::new(),
    };
    for (k, st) in sol.nodes.iter().enumerate() {
        let snap = sol.problem.snapshot(st.time);
        let f = sol.problem.inhom_at(st.time);
        let arg = snap.b.transpose() * &eta.eta1[k]
            + snap.d.transpose() * (&st.p * &f.sigma1)
            + &f.rho1;
        let (control_term, _) = mean_terms(sol, st, &eta.eta1[k]);
        let arg_bar = (&snap.b + &snap.b_bar).transpose() * &eta_bar[k] + control_term;

        for (tally, ch_pinv, weight, a) in [
            (&mut range, &st.plain.weight_pinv, &st.plain.weight, &arg),
            (&mut range_bar, &st.mean.weight_pinv, &st.mean.weight, &arg_bar),
        ] {
            match linalg::range_contained_with(&col(a), weight, ch_pinv, DEFAULT_TOL) {
                Ok(r) => tally.record(k, r.contained, r.residual),
                Err(_) => tally.record(k, false, f64::INFINITY),
            }
        }
        out.phi1.push(-(&st.plain.weight_pinv.pinv * &arg));
        out.phi_bar.push(-(&st.mean.weight_pinv.pinv * &arg_bar));
        out.phi1_arg.push(arg);
        out.phi_bar_arg.push(arg_bar);
    }
    out.feasibility = vec![range.verdict(), range_bar.verdict()];
    out
}

/// Everything produced by the affine stage.
#[derive(Debug, Clone)]
pub struct AffineSolution {
    pub grid: TimeGrid,
    pub eta0: Vec<DVector<f64>>,
    /// Also `ζ`, which is deterministic.
    pub eta1: Vec<DVector<f64>>,
    pub eta_bar: Vec<DVector<f64>>,
    /// `φ(s) = φ1(s) W(s)`.
    pub phi1: Vec<DVector<f64>>,
    pub phi_bar: Vec<DVector<f64>>,
    pub feasibility: Vec<ConditionVerdict>,
    pub feasible: bool,
}

impl AffineSolution {
    fn path(&self, v: &[DVector<f64>]) -> MatrixPath {
        MatrixPath::sampled(self.grid, v.iter().map(col).collect()).expect("one value per node")
    }

    pub fn phi1_path(&self) -> MatrixPath {
        self.path(&self.phi1)
    }

    pub fn phi_bar_path(&self) -> MatrixPath {
        self.path(&self.phi_bar)
    }
}

/// Runs [`solve_eta`], [`solve_eta_bar`] and [`compute_corrections`].
pub fn solve_affine(sol: &GreSolution) -> Result<AffineSolution> {
    let eta = solve_eta(sol)?;
    let eta_bar = solve_eta_bar(sol, &eta)?;
    let corr = compute_corrections(sol, &eta, &eta_bar);
    let feasible = corr.feasibility.iter().all(|c| c.passed);
    Ok(AffineSolution {
        grid: sol.grid,
        eta0: eta.eta0,
        eta1: eta.eta1,
        eta_bar,
        phi1: corr.phi1,
        phi_bar: corr.phi_bar,
        feasibility: corr.feasibility,
        feasible,
    })
}
