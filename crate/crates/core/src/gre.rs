//! Coupled generalized Riccati equations for `(P, Π)`, their backward RK4
//! integration, feedback gains, and the regular-solvability assessment.
//!
//! Both equations share one shape,
//!
//! ```text
//! dX/ds = -(X A + A^T X + C^T P C + Q - L^T Σ† L),
//! Σ = R + D^T P D,   L = B^T X + D^T P C + S,
//! ```
//!
//! with `X = P` on the plain coefficients and `X = Π` on the summed
//! coefficients `A + Ā`, `B + B̄`, ... . The pseudoinverse is evaluated
//! pointwise at every RK4 stage.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{MflqError, Result};
use crate::linalg::{self, op_norm, pinv, symmetrize, PinvResult, DEFAULT_REL_TOL};
use crate::ode::{escaped, hermite, rk4_step, trapezoid, State};
use crate::problem::{ensure_valid, MatrixPath, ProblemData, Snapshot, TimeGrid};

pub const DEFAULT_STEPS: usize = 1000;
/// Residual tolerance for the range conditions; PSD checks use it relative
/// to `1 + ‖Σ‖`.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Quantities derived from `(P, X)` for one of the two channels.
#[derive(Debug, Clone)]
pub struct Channel {
    /// `R + D^T P D` on the channel's coefficients.
    pub weight: DMatrix<f64>,
    /// Range argument `B^T X + D^T P C + S`.
    pub arg: DMatrix<f64>,
    pub weight_pinv: PinvResult,
    /// `-Σ† L`.
    pub gain: DMatrix<f64>,
}

#[allow(clippy::too_many_arguments)]
fn channel(
    x: &DMatrix<f64>,
    p: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    s: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Channel {
    let dt_p = d.transpose() * p;
    let weight = symmetrize(&(r + &dt_p * d));
    let arg = b.transpose() * x + &dt_p * c + s;
    let weight_pinv = pinv(&weight, DEFAULT_REL_TOL);
    let gain = -(&weight_pinv.pinv * &arg);
    Channel {
        weight,
        arg,
        weight_pinv,
        gain,
    }
}

fn riccati_derivative(
    x: &DMatrix<f64>,
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    ch: &Channel,
) -> DMatrix<f64> {
    let drift = x * a + a.transpose() * x + c.transpose() * p * c + q + ch.arg.transpose() * &ch.gain;
    symmetrize(&(-drift))
}

struct Summed {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    q: DMatrix<f64>,
    s: DMatrix<f64>,
    r: DMatrix<f64>,
}

fn summed(k: &Snapshot) -> Summed {
    Summed {
        a: &k.a + &k.a_bar,
        b: &k.b + &k.b_bar,
        c: &k.c + &k.c_bar,
        d: &k.d + &k.d_bar,
        q: &k.q + &k.q_bar,
        s: &k.s + &k.s_bar,
        r: &k.r + &k.r_bar,
    }
}

/// Full GRE state at one time.
#[derive(Debug, Clone)]
pub struct GreState {
    pub time: f64,
    pub p: DMatrix<f64>,
    pub pi: DMatrix<f64>,
    pub dp: DMatrix<f64>,
    pub dpi: DMatrix<f64>,
    /// Σ channel (`Θ = plain.gain`).
    pub plain: Channel,
    /// Σ̄ channel (`Γ = mean.gain`).
    pub mean: Channel,
}

impl GreState {
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.plain.weight
    }
    pub fn sigma_bar(&self) -> &DMatrix<f64> {
        &self.mean.weight
    }
    pub fn theta(&self) -> &DMatrix<f64> {
        &self.plain.gain
    }
    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.mean.gain
    }
}

fn evaluate_state(p_mat: &DMatrix<f64>, pi_mat: &DMatrix<f64>, s: f64, prob: &ProblemData) -> GreState {
    let k = prob.snapshot(s);
    let sm = summed(&k);
    let plain = channel(p_mat, p_mat, &k.b, &k.c, &k.d, &k.s, &k.r);
    let mean = channel(pi_mat, p_mat, &sm.b, &sm.c, &sm.d, &sm.s, &sm.r);
    let dp = riccati_derivative(p_mat, p_mat, &k.a, &k.c, &k.q, &plain);
    let dpi = riccati_derivative(pi_mat, p_mat, &sm.a, &sm.c, &sm.q, &mean);
    GreState {
        time: s,
        p: p_mat.clone(),
        pi: pi_mat.clone(),
        dp,
        dpi,
        plain,
        mean,
    }
}

/// Right-hand sides `(dP/ds, dΠ/ds)` of the coupled equations.
pub fn gre_rhs(
    p_mat: &DMatrix<f64>,
    pi_mat: &DMatrix<f64>,
    s: f64,
    prob: &ProblemData,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let st = evaluate_state(p_mat, pi_mat, s, prob);
    (st.dp, st.dpi)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionVerdict {
    pub name: String,
    pub passed: bool,
    pub failing_nodes: usize,
    pub worst_node: Option<usize>,
    pub worst_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    pub regular: bool,
    /// positive(Σ), positive(Σ̄), range(Σ), range(Σ̄), L2(Σ), L2(Σ̄).
    pub conditions: Vec<ConditionVerdict>,
    pub tol: f64,
    pub n_steps: usize,
    pub step: f64,
    pub sigma_rank: Vec<usize>,
    pub sigma_bar_rank: Vec<usize>,
    /// Nodes where a retained singular value of Σ or Σ̄ sits within 10x of
    /// the rank cutoff; the (L2) surrogate is unreliable there.
    pub near_rank_cutoff: Vec<usize>,
}

impl RegularityReport {
    pub fn condition(&self, name: &str) -> Option<&ConditionVerdict> {
        self.conditions.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> impl Iterator<Item = &ConditionVerdict> {
        self.conditions.iter().filter(|c| !c.passed)
    }
}

/// Sampled solution of the coupled equations on a uniform grid.
#[derive(Debug, Clone)]
pub struct GreSolution {
    pub grid: TimeGrid,
    pub problem: ProblemData,
    pub nodes: Vec<GreState>,
    pub report: RegularityReport,
}

impl GreSolution {
    pub fn p(&self, k: usize) -> &DMatrix<f64> {
        &self.nodes[k].p
    }
    pub fn pi(&self, k: usize) -> &DMatrix<f64> {
        &self.nodes[k].pi
    }
    pub fn sigma(&self, k: usize) -> &DMatrix<f64> {
        self.nodes[k].sigma()
    }
    pub fn sigma_bar(&self, k: usize) -> &DMatrix<f64> {
        self.nodes[k].sigma_bar()
    }
    pub fn theta(&self, k: usize) -> &DMatrix<f64> {
        self.nodes[k].theta()
    }
    pub fn gamma(&self, k: usize) -> &DMatrix<f64> {
        self.nodes[k].gamma()
    }

    /// State at an arbitrary time: node values exactly, cubic Hermite
    /// interpolation of `(P, Π)` in between with gains recomputed from it.
    pub fn state_at(&self, s: f64) -> GreState {
        let (k, theta) = self.grid.locate(s);
        if theta == 0.0 {
            return self.nodes[k].clone();
        }
        let h = self.grid.step();
        let (a, b) = (&self.nodes[k], &self.nodes[k + 1]);
        let p = symmetrize(&hermite(&a.p, &(&a.dp * h), &b.p, &(&b.dp * h), theta));
        let pi = symmetrize(&hermite(&a.pi, &(&a.dpi * h), &b.pi, &(&b.dpi * h), theta));
        evaluate_state(&p, &pi, s, &self.problem)
    }

    pub fn regular(&self) -> bool {
        self.report.regular
    }
}

/// Integrates the coupled equations backward from `(G, G + Ḡ)` with
/// fixed-step RK4 on `n_steps` uniform steps.
pub fn integrate_gre(prob: &ProblemData, n_steps: usize) -> Result<GreSolution> {
    ensure_valid(prob)?;
    let grid = prob.horizon.with_steps(n_steps)?;
    let h = grid.step();
    let w = &prob.weights;

    let mut rhs = |s: f64, y: &State| {
        let (dp, dpi) = gre_rhs(&y[0], &y[1], s, prob);
        vec![dp, dpi]
    };

    let mut states: Vec<State> = vec![Vec::new(); grid.len()];
    states[n_steps] = vec![w.g.clone(), &w.g + &w.g_bar];
    for k in (1..=n_steps).rev() {
        let next = rk4_step(&mut rhs, grid.node(k), &states[k], -h, true);
        if escaped(&next) {
            return Err(MflqError::FiniteEscape {
                what: "generalized Riccati equations",
                node: k - 1,
                time: grid.node(k - 1),
                last_valid: k,
            });
        }
        states[k - 1] = next;
    }

    let nodes: Vec<GreState> = states
        .iter()
        .enumerate()
        .map(|(k, st)| evaluate_state(&st[0], &st[1], grid.node(k), prob))
        .collect();
    let mut sol = GreSolution {
        grid,
        problem: prob.clone(),
        nodes,
        report: empty_report(grid),
    };
    sol.report = assess_regularity(&sol, DEFAULT_TOL);
    Ok(sol)
}

fn empty_report(grid: TimeGrid) -> RegularityReport {
    RegularityReport {
        regular: false,
        conditions: Vec::new(),
        tol: DEFAULT_TOL,
        n_steps: grid.n_steps,
        step: grid.step(),
        sigma_rank: Vec::new(),
        sigma_bar_rank: Vec::new(),
        near_rank_cutoff: Vec::new(),
    }
}

pub(crate) struct Tally {
    name: &'static str,
    failing: usize,
    worst: Option<(usize, f64)>,
}

impl Tally {
    pub(crate) fn new(name: &'static str) -> Self {
        Self {
            name,
            failing: 0,
            worst: None,
        }
    }

    pub(crate) fn record(&mut self, node: usize, passed: bool, residual: f64) {
        if !passed {
            self.failing += 1;
        }
        let worse = match self.worst {
            None => true,
            Some((_, r)) => residual > r || residual.is_nan(),
        };
        if worse {
            self.worst = Some((node, residual));
        }
    }

    pub(crate) fn verdict(self) -> ConditionVerdict {
        let (worst_node, worst_residual) = match self.worst {
            Some((k, r)) => (Some(k), r),
            None => (None, 0.0),
        };
        ConditionVerdict {
            name: self.name.to_string(),
            passed: self.failing == 0,
            failing_nodes: self.failing,
            worst_node,
            worst_residual,
        }
    }
}

fn check_positive(t: &mut Tally, k: usize, m: &DMatrix<f64>, tol: f64) {
    let bound = tol * (1.0 + op_norm(m));
    match linalg::is_psd(m, bound) {
        Ok(c) => t.record(k, c.is_psd, (-c.min_eigenvalue).max(0.0)),
        Err(_) => t.record(k, false, f64::INFINITY),
    }
}

fn check_range(t: &mut Tally, k: usize, ch: &Channel, tol: f64) {
    match linalg::range_contained_with(&ch.arg, &ch.weight, &ch.weight_pinv, tol) {
        Ok(r) => t.record(k, r.contained, r.residual),
        Err(_) => t.record(k, false, f64::INFINITY),
    }
}

fn check_l2(t: &mut Tally, gains: &[&DMatrix<f64>], h: f64) {
    let sq: Vec<f64> = gains.iter().map(|g| g.norm_squared()).collect();
    for (k, g) in gains.iter().enumerate() {
        let finite = g.iter().all(|x| x.is_finite());
        t.record(k, finite, if finite { g.norm() } else { f64::INFINITY });
    }
    let integral = trapezoid(&sq, h);
    if !integral.is_finite() {
        t.failing = t.failing.max(1);
    }
}

fn near_cutoff(pr: &PinvResult) -> bool {
    match pr.smallest_retained() {
        Some(s) => s < 10.0 * pr.tol_used,
        None => false,
    }
}

/// Checks the six regularity conditions at every grid node.
pub fn assess_regularity(sol: &GreSolution, tol: f64) -> RegularityReport {
    let mut pos = Tally::new("positive(Σ)");
    let mut pos_bar = Tally::new("positive(Σ̄)");
    let mut range = Tally::new("range(Σ)");
    let mut range_bar = Tally::new("range(Σ̄)");
    let mut l2 = Tally::new("L2(Σ)");
    let mut l2_bar = Tally::new("L2(Σ̄)");
    let mut near_rank_cutoff = Vec::new();

    for (k, st) in sol.nodes.iter().enumerate() {
        check_positive(&mut pos, k, st.sigma(), tol);
        check_positive(&mut pos_bar, k, st.sigma_bar(), tol);
        check_range(&mut range, k, &st.plain, tol);
        check_range(&mut range_bar, k, &st.mean, tol);
        if near_cutoff(&st.plain.weight_pinv) || near_cutoff(&st.mean.weight_pinv) {
            near_rank_cutoff.push(k);
        }
    }
    let h = sol.grid.step();
    let thetas: Vec<&DMatrix<f64>> = sol.nodes.iter().map(|s| s.theta()).collect();
    let gammas: Vec<&DMatrix<f64>> = sol.nodes.iter().map(|s| s.gamma()).collect();
    check_l2(&mut l2, &thetas, h);
    check_l2(&mut l2_bar, &gammas, h);

    let conditions: Vec<ConditionVerdict> = [pos, pos_bar, range, range_bar, l2, l2_bar]
        .into_iter()
        .map(Tally::verdict)
        .collect();
    RegularityReport {
        regular: conditions.iter().all(|c| c.passed),
        conditions,
        tol,
        n_steps: sol.grid.n_steps,
        step: h,
        sigma_rank: sol.nodes.iter().map(|s| s.plain.weight_pinv.rank).collect(),
        sigma_bar_rank: sol.nodes.iter().map(|s| s.mean.weight_pinv.rank).collect(),
        near_rank_cutoff,
    }
}

/// Gain paths `Θ`, `Γ` on the solution grid with their feedback residuals
/// `‖ΣΘ + L‖` and `‖Σ̄Γ + L̄‖`.
#[derive(Debug, Clone)]
pub struct Gains {
    pub theta: MatrixPath,
    pub gamma: MatrixPath,
    pub theta_residual: Vec<f64>,
    pub gamma_residual: Vec<f64>,
}

pub fn gains(sol: &GreSolution) -> Gains {
    let collect = |f: &dyn Fn(&GreState) -> DMatrix<f64>| -> Vec<DMatrix<f64>> {
        sol.nodes.iter().map(f).collect()
    };
    let residual = |ch: &Channel| op_norm(&(&ch.weight * &ch.gain + &ch.arg));
    Gains {
        theta: MatrixPath::sampled(sol.grid, collect(&|s| s.theta().clone()))
            .expect("one gain per node"),
        gamma: MatrixPath::sampled(sol.grid, collect(&|s| s.gamma().clone()))
            .expect("one gain per node"),
        theta_residual: sol.nodes.iter().map(|s| residual(&s.plain)).collect(),
        gamma_residual: sol.nodes.iter().map(|s| residual(&s.mean)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn m1(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    #[test]
    fn zero_problem_has_zero_rhs() {
        let p = ProblemData::zero(2, 1, TimeGrid::new(0.0, 1.0, 10).unwrap());
        let (dp, dpi) = gre_rhs(&DMatrix::zeros(2, 2), &DMatrix::zeros(2, 2), 0.3, &p);
        assert_eq!(dp, DMatrix::zeros(2, 2));
        assert_eq!(dpi, DMatrix::zeros(2, 2));
    }

    #[test]
    fn scalar_classic_rhs_is_p_squared() {
        let p = presets::scalar_classic();
        for x in [0.0, 0.5, 1.0, -2.0, 3.0] {
            let (dp, dpi) = gre_rhs(&m1(x), &m1(x), 0.2, &p);
            assert!((dp[(0, 0)] - x * x).abs() < 1e-14);
            assert!((dpi[(0, 0)] - x * x).abs() < 1e-14);
        }
    }

    #[test]
    fn example31_rhs_vanishes_at_constant_solution() {
        let p = presets::example31(0.5);
        let (dp, dpi) = gre_rhs(&m1(1.0), &m1(2.0), 0.7, &p);
        assert_eq!(dp[(0, 0)], 0.0);
        assert_eq!(dpi[(0, 0)], 0.0);
    }

    #[test]
    fn scalar_classic_matches_closed_form() {
        let sol = integrate_gre(&presets::scalar_classic(), 1000).unwrap();
        let err = sol
            .nodes
            .iter()
            .map(|st| (st.p[(0, 0)] - 1.0 / (2.0 - st.time)).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-8, "max error {err}");
        assert!((sol.p(0)[(0, 0)] - 0.5).abs() <= 1e-8);
        assert!(sol.regular());
    }

    #[test]
    fn example31_is_constant_and_not_regular() {
        let sol = integrate_gre(&presets::example31(0.5), 200).unwrap();
        for st in &sol.nodes {
            assert!((st.p[(0, 0)] - 1.0).abs() <= 1e-12);
            assert!((st.pi[(0, 0)] - 2.0).abs() <= 1e-12);
        }
        let r = &sol.report;
        assert!(!r.regular);
        let range = r.condition("range(Σ)").unwrap();
        assert!(!range.passed);
        assert_eq!(range.failing_nodes, sol.grid.len());
        assert_eq!(range.worst_residual, 0.5);
        let failed: Vec<_> = r.failed().map(|c| c.name.as_str()).collect();
        assert_eq!(failed, vec!["range(Σ)"]);
    }

    #[test]
    fn zero_problem_is_regular_with_zero_solution() {
        let p = ProblemData::zero(2, 2, TimeGrid::new(0.0, 1.0, 20).unwrap());
        let sol = integrate_gre(&p, 20).unwrap();
        assert!(sol.regular());
        for k in 0..sol.grid.len() {
            assert_eq!(sol.p(k), &DMatrix::zeros(2, 2));
            assert_eq!(sol.pi(k), &DMatrix::zeros(2, 2));
            assert_eq!(sol.theta(k), &DMatrix::zeros(2, 2));
            assert_eq!(sol.gamma(k), &DMatrix::zeros(2, 2));
        }
    }

    #[test]
    fn gains_examples() {
        let sol = integrate_gre(&presets::scalar_classic(), 1000).unwrap();
        let g = gains(&sol);
        for (k, s) in sol.grid.nodes().into_iter().enumerate() {
            assert!((g.theta.at(s)[(0, 0)] + 1.0 / (2.0 - s)).abs() < 1e-8);
            assert!(g.theta_residual[k] < 1e-7 && g.gamma_residual[k] < 1e-7);
        }
        let sol = integrate_gre(&presets::example31(0.5), 100).unwrap();
        let g = gains(&sol);
        assert!(g.gamma.samples().iter().all(|m| m[(0, 0)] == 0.0));
        // Θ from the pseudoinverse is zero but ΣΘ + L = 1 stays nonzero.
        assert!(g.theta_residual.iter().all(|&r| (r - 1.0).abs() < 1e-12));
    }

    #[test]
    fn terminal_values_are_exact() {
        let p = presets::random_spd(2, 2, 7);
        let sol = integrate_gre(&p, 100).unwrap();
        let last = sol.grid.n_steps;
        assert_eq!(sol.p(last), &p.weights.g);
        assert_eq!(sol.pi(last), &(&p.weights.g + &p.weights.g_bar));
    }

    #[test]
    fn solutions_stay_symmetric() {
        let p = presets::random_spd(3, 2, 11);
        let sol = integrate_gre(&p, 200).unwrap();
        for st in &sol.nodes {
            assert!((&st.p - st.p.transpose()).norm() <= 1e-9);
            assert!((&st.pi - st.pi.transpose()).norm() <= 1e-9);
        }
        assert!(sol.regular());
    }

    #[test]
    fn rk4_refinement_shows_fourth_order() {
        let p = presets::random_spd(2, 2, 3).without_mean_field();
        let p0 = |k: usize| integrate_gre(&p, k).unwrap().p(0).clone();
        let (a, b, c) = (p0(500), p0(1000), p0(2000));
        let d1 = (&a - &b).norm();
        let d2 = (&b - &c).norm();
        assert!(d1 < 16.0 * d2 * 1.5 || d1 < 1e-13, "d1 {d1} d2 {d2}");
        assert!(d2 < d1 || d1 < 1e-13);
    }

    #[test]
    fn classical_problem_has_identical_channels() {
        let p = presets::random_spd(2, 2, 5).without_mean_field();
        let sol = integrate_gre(&p, 300).unwrap();
        for st in &sol.nodes {
            assert!((&st.pi - &st.p).norm() <= 1e-10);
        }
    }

    #[test]
    fn escape_is_reported_with_node() {
        // With R = -1 the equation is dP/ds = -P^2, so P(s) = 1 / (s - 0.9)
        // from P(1) = 10 blows up at s = 0.9.
        let mut p = presets::scalar_classic();
        p.coefficients.a = MatrixPath::scalar(0.0);
        p.weights.r = MatrixPath::scalar(-1.0);
        p.weights.g = m1(10.0);
        let err = integrate_gre(&p, 1000).unwrap_err();
        match err {
            MflqError::FiniteEscape { node, last_valid, .. } => assert_eq!(last_valid, node + 1),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn state_at_nodes_matches_storage_and_interpolates_smoothly() {
        let sol = integrate_gre(&presets::scalar_classic(), 100).unwrap();
        let s = sol.grid.node(37);
        assert_eq!(sol.state_at(s).p, *sol.p(37));
        let mid = 0.5 * (sol.grid.node(10) + sol.grid.node(11));
        let want = 1.0 / (2.0 - mid);
        assert!((sol.state_at(mid).p[(0, 0)] - want).abs() < 1e-9);
    }
}
