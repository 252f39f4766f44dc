//! Independent checks of the synthesized solution: a brute-force quadratic
//! program for noiseless problems, the completion-of-squares identity, a
//! randomized lower-bound battery, and classical degeneration.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{MflqError, Result};
use crate::gre::{integrate_gre, GreSolution};
use crate::moments::stationarity_residual;
use crate::problem::{
    ensure_valid, strip_inhomogeneous, ControlSpec, InitialLaw, MatrixPath, NoiseAffinePath, NoiseAnchor,
    ProblemData,
};
use crate::sim::{mean_field_cost, simulate, simulate_with, Estimate, Flat, PathCost, PathIntegrand};
use crate::synthesis::{value, ClosedLoopSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub status: CheckStatus,
    pub discrepancy: f64,
    pub tolerance: f64,
    pub metadata: BTreeMap<String, Value>,
}

impl CheckResult {
    /// Passes iff `discrepancy <= tolerance`.
    pub fn measured(name: &str, discrepancy: f64, tolerance: f64, metadata: BTreeMap<String, Value>) -> Self {
        let status = if discrepancy <= tolerance {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
        Self {
            name: name.to_string(),
            status,
            discrepancy,
            tolerance,
            metadata,
        }
    }

    pub fn skipped(name: &str, reason: &str) -> Self {
        let mut metadata = BTreeMap::new();
        metadata.insert("reason".into(), json!(reason));
        Self {
            name: name.to_string(),
            status: CheckStatus::Skipped,
            discrepancy: 0.0,
            tolerance: 0.0,
            metadata,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Pass
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    /// No check failed (skipped checks do not count against the report).
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn extend(&mut self, other: VerificationReport) {
        self.checks.extend(other.checks);
    }
}

fn meta(pairs: &[(&str, Value)]) -> BTreeMap<String, Value> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

// ---------------------------------------------------------------------------
// Quadratic program oracle

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub cost: f64,
    /// Piecewise-constant control on each of the `K` steps.
    pub controls: Vec<DVector<f64>>,
    pub hessian_min_eigenvalue: Option<f64>,
}

/// Why a problem is outside the oracle's class, if it is.
pub fn qp_applicable(p: &ProblemData) -> std::result::Result<(), String> {
    let c = &p.coefficients;
    let h = &p.inhomogeneity;
    for (name, path) in [("C", &c.c), ("C_bar", &c.c_bar), ("D", &c.d), ("D_bar", &c.d_bar)] {
        if !path.is_zero() {
            return Err(format!("{name} is nonzero"));
        }
    }
    if !h.sigma.is_zero() {
        return Err("sigma is nonzero".into());
    }
    if !h.b.noise_part.is_zero() {
        return Err("b has a noise part".into());
    }
    Ok(())
}

/// Minimizes the forward-Euler discretization of the cost over
/// piecewise-constant controls on `k_steps` steps from the deterministic
/// state `x`.
///
/// With no diffusion the state is deterministic, so `E[X] = X` and
/// `E[u] = u`, and the cost is an explicit quadratic `U^T H U + 2 f^T U + c`
/// in the stacked control. Noise parts of `q`, `ρ` and `g` have zero mean
/// against a deterministic state and drop out.
pub fn qp_oracle(p: &ProblemData, x: &DVector<f64>, k_steps: usize) -> Result<QpSolution> {
    ensure_valid(p)?;
    qp_applicable(p).map_err(|why| MflqError::Precondition(format!("quadratic program oracle: {why}")))?;
    if x.len() != p.n {
        return Err(MflqError::Dimension(format!("initial state has length {}, expected {}", x.len(), p.n)));
    }
    let grid = p.horizon.with_steps(k_steps)?;
    let (n, m, k_n) = (p.n, p.m, k_steps);
    let h = grid.step();
    let dim = m * k_n;

    struct Node {
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        b0: DVector<f64>,
        q: DMatrix<f64>,
        s: DMatrix<f64>,
        r: DMatrix<f64>,
        qv: DVector<f64>,
        rv: DVector<f64>,
    }
    let nodes: Vec<Node> = (0..k_n)
        .map(|k| {
            let s = grid.node(k);
            let c = p.snapshot(s);
            let f = p.inhom_at(s);
            Node {
                a: &c.a + &c.a_bar,
                b: &c.b + &c.b_bar,
                b0: f.b0.clone(),
                q: &c.q + &c.q_bar,
                s: &c.s + &c.s_bar,
                r: &c.r + &c.r_bar,
                qv: &f.q0 + &f.q_bar,
                rv: &f.rho0 + &f.rho_bar,
            }
        })
        .collect();
    let g_t = &p.weights.g + &p.weights.g_bar;
    let g_v = &p.inhomogeneity.g0 + &p.inhomogeneity.g_bar;

    // X_k = a_k + Ψ_k U, with Ψ stacked over k = 0..=K.
    let mut free = vec![x.clone()];
    for nd in &nodes {
        let prev = free.last().expect("nonempty");
        free.push(prev + (&nd.a * prev + &nd.b0) * h);
    }
    let mut psi = DMatrix::<f64>::zeros(n * (k_n + 1), dim);
    for j in 0..k_n {
        let mut block = &nodes[j].b * h;
        for k in j + 1..=k_n {
            psi.view_mut((k * n, j * m), (n, m)).copy_from(&block);
            if k < k_n {
                block = &block + &nodes[k].a * &block * h;
            }
        }
    }

    // Weighted Ψ: W Ψ with W = blockdiag(h Q_k, ..., G).
    let mut wpsi = DMatrix::<f64>::zeros(n * (k_n + 1), dim);
    for k in 0..=k_n {
        let w = if k < k_n { &nodes[k].q * h } else { g_t.clone() };
        let rows = psi.rows(k * n, n);
        wpsi.rows_mut(k * n, n).copy_from(&(w * rows));
    }
    let mut hess = psi.transpose() * &wpsi;
    let mut f = DVector::<f64>::zeros(dim);
    let mut c0 = 0.0;
    for k in 0..k_n {
        let nd = &nodes[k];
        let ak = &free[k];
        let psi_k = psi.rows(k * n, n);
        // Cross term 2 u_k^T S X_k.
        let cross = (&nd.s * psi_k) * h;
        for i in 0..m {
            for j in 0..dim {
                hess[(k * m + i, j)] += cross[(i, j)];
                hess[(j, k * m + i)] += cross[(i, j)];
            }
        }
        let rblock = &nd.r * h;
        { let mut v = hess.view_mut((k * m, k * m), (m, m)); v += &rblock; }
        f += psi_k.transpose() * ((&nd.q * ak + &nd.qv) * h);
        let fu = (&nd.s * ak + &nd.rv) * h;
        { let mut v = f.rows_mut(k * m, m); v += &fu; }
        c0 += h * ((&nd.q * ak).dot(ak) + 2.0 * nd.qv.dot(ak));
    }
    let at = &free[k_n];
    f += psi.rows(k_n * n, n).transpose() * (&g_t * at + &g_v);
    c0 += (&g_t * at).dot(at) + 2.0 * g_v.dot(at);
    let hess = (&hess + hess.transpose()) * 0.5;

    let scale = 1.0 + hess.amax();
    let (u, min_eig) = match hess.clone().cholesky() {
        Some(ch) => (ch.solve(&(-&f)), None),
        None => {
            let eig = SymmetricEigen::new(hess.clone());
            let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            let tol = 1e-10 * scale * dim as f64;
            if lmin < -tol {
                return Err(MflqError::UnboundedBelow(format!(
                    "Hessian has eigenvalue {lmin:.3e}"
                )));
            }
            // Singular PSD: solve on the range, require f in it.
            let mut u = DVector::zeros(dim);
            for (i, &lam) in eig.eigenvalues.iter().enumerate() {
                let v = eig.eigenvectors.column(i);
                let coef = v.dot(&f);
                if lam > tol {
                    u -= v * (coef / lam);
                } else if coef.abs() > 1e-8 * (1.0 + f.norm()) {
                    return Err(MflqError::UnboundedBelow(
                        "linear term has a component in the Hessian null space".into(),
                    ));
                }
            }
            (u, Some(lmin))
        }
    };
    let cost = c0 + f.dot(&u);
    let controls = (0..k_n).map(|k| u.rows(k * m, m).into_owned()).collect();
    Ok(QpSolution {
        cost,
        controls,
        hessian_min_eigenvalue: min_eig,
    })
}

// ---------------------------------------------------------------------------
// Completion of squares

/// Running residual `<Σ(u - E[u] - Θ(X - E[X])), ·>` on the simulation grid.
struct SquareResidual {
    sigma: Vec<Flat>,
    theta: Vec<Flat>,
    ex: Vec<Vec<f64>>,
    eu: Vec<Vec<f64>>,
}

impl PathIntegrand for SquareResidual {
    fn running(&self, k: usize, x: &[f64], u: &[f64], _w: f64) -> f64 {
        let dx: Vec<f64> = x.iter().zip(&self.ex[k]).map(|(a, b)| a - b).collect();
        let mut r: Vec<f64> = u.iter().zip(&self.eu[k]).map(|(a, b)| a - b).collect();
        let mut tdx = vec![0.0; r.len()];
        self.theta[k].mul_add(&dx, &mut tdx);
        for (ri, ti) in r.iter_mut().zip(&tdx) {
            *ri -= ti;
        }
        self.sigma[k].form(&r, &r)
    }

    fn terminal(&self, _x: &[f64], _w: f64) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompletionResult {
    pub lhs: Estimate,
    pub rhs: Estimate,
    /// `|lhs - rhs| / max(|lhs|, |rhs|)`, zero when both vanish.
    pub gap: f64,
}

/// Evaluates both sides of the completion-of-squares identity for the
/// homogeneous cost from `ξ = 0` on common sample paths.
pub fn completion_check(
    p0: &ProblemData,
    sol: &GreSolution,
    spec: &ControlSpec,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<CompletionResult> {
    if !sol.regular() {
        return Err(MflqError::Precondition(
            "the completion-of-squares identity needs a regular Riccati solution".into(),
        ));
    }
    if !p0.is_homogeneous() {
        return Err(MflqError::Precondition("completion check needs a homogeneous problem".into()));
    }
    let law = InitialLaw::zero(p0.n);
    let grid = p0.horizon.with_steps(n_steps)?;
    let mean = crate::sim::mean_ode(p0, spec, &law.mean, n_steps)?;
    let states: Vec<_> = grid.nodes().into_iter().map(|s| sol.state_at(s)).collect();
    let residual = SquareResidual {
        sigma: states.iter().map(|st| Flat::new(st.sigma())).collect(),
        theta: states.iter().map(|st| Flat::new(st.theta())).collect(),
        ex: mean.mean_x.iter().map(|v| v.as_slice().to_vec()).collect(),
        eu: mean.mean_u.iter().map(|v| v.as_slice().to_vec()).collect(),
    };
    let cost = PathCost::new(p0, &grid);
    let ens = simulate_with(p0, spec, &law, n_paths, n_steps, seed, &[&cost, &residual])?;

    let mean_sq: Vec<f64> = states
        .iter()
        .enumerate()
        .map(|(k, st)| {
            let r = &ens.mean.mean_u[k] - st.gamma() * &ens.mean.mean_x[k];
            (st.sigma_bar() * &r).dot(&r)
        })
        .collect();
    let lhs = ens.estimates[0].offset(mean_field_cost(p0, &grid, &ens.mean.mean_x, &ens.mean.mean_u));
    let rhs = ens.estimates[1].offset(crate::ode::trapezoid(&mean_sq, grid.step()));
    let denom = lhs.mean.abs().max(rhs.mean.abs());
    let gap = if denom == 0.0 {
        0.0
    } else {
        (lhs.mean - rhs.mean).abs() / denom
    };
    Ok(CompletionResult { lhs, rhs, gap })
}

/// Random open-loop noise-affine control with entries in `[-1, 1]`.
pub fn random_open_loop(n: usize, m: usize, seed: u64) -> ControlSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v0 = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
    let v1 = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
    ControlSpec {
        offset: NoiseAffinePath::constant(v0, v1),
        ..ControlSpec::zero(n, m)
    }
}

// ---------------------------------------------------------------------------
// Lower-bound battery

#[derive(Debug, Clone, Copy)]
pub struct BatteryOptions {
    pub n_controls: usize,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Added to `3 stderr` in both comparisons to absorb the time
    /// discretization bias of the simulation, relative to `1 + |V|`.
    pub bias_allowance: f64,
}

impl Default for BatteryOptions {
    fn default() -> Self {
        Self {
            n_controls: 100,
            n_paths: 2000,
            n_steps: 200,
            seed: 0,
            bias_allowance: 1e-3,
        }
    }
}

/// `k`-th perturbed strategy: gains shifted by constants in `[-2, 2]`,
/// offsets by constants in `[-1, 1]` in both parts.
pub fn perturbed_strategy(opt: &ControlSpec, n: usize, m: usize, seed: u64, k: usize) -> ControlSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xba77_e125);
    rng.set_stream(k as u64);
    let mut draw = |r: usize, c: usize, w: f64| DMatrix::from_fn(r, c, |_, _| rng.random_range(-w..w));
    let dt = draw(m, n, 2.0);
    let dtb = draw(m, n, 2.0);
    let dv0 = draw(m, 1, 1.0);
    let dv1 = draw(m, 1, 1.0);
    ControlSpec {
        feedback: opt.feedback.shifted(&dt),
        mean_feedback: opt.mean_feedback.shifted(&dtb),
        offset: NoiseAffinePath {
            const_part: opt.offset.const_part.shifted(&dv0),
            noise_part: opt.offset.noise_part.shifted(&dv1),
        },
        anchor: NoiseAnchor::Running,
    }
}

/// Battery against an explicitly supplied value, so the harness itself can
/// be tested with a corrupted one.
pub fn lower_bound_battery_with_value(
    p: &ProblemData,
    sol: &ClosedLoopSolution,
    law: &InitialLaw,
    v: f64,
    opts: &BatteryOptions,
) -> Result<VerificationReport> {
    let allowance = opts.bias_allowance * (1.0 + v.abs());
    let opt = simulate(p, &sol.strategy, law, opts.n_paths, opts.n_steps, opts.seed)?;
    let opt_gap = (opt.cost_mean - v).abs();
    let mut report = VerificationReport::default();
    report.checks.push(CheckResult::measured(
        "battery.optimal_matches_value",
        opt_gap,
        3.0 * opt.cost_stderr + allowance,
        meta(&[
            ("value", json!(v)),
            ("cost_mean", json!(opt.cost_mean)),
            ("cost_stderr", json!(opt.cost_stderr)),
            ("n_paths", json!(opts.n_paths)),
            ("n_steps", json!(opts.n_steps)),
            ("seed", json!(opts.seed)),
        ]),
    ));

    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0usize;
    let mut lowest = f64::INFINITY;
    for k in 0..opts.n_controls {
        let spec = perturbed_strategy(&sol.strategy, p.n, p.m, opts.seed, k);
        let r = simulate(p, &spec, law, opts.n_paths, opts.n_steps, opts.seed)?;
        // Positive when the sampled cost undercuts the value beyond noise.
        let excess = v - r.cost_mean - 3.0 * r.cost_stderr;
        if excess > allowance {
            violations += 1;
        }
        worst = worst.max(excess);
        lowest = lowest.min(r.cost_mean);
    }
    if opts.n_controls == 0 {
        worst = 0.0;
    }
    report.checks.push(CheckResult::measured(
        "battery.lower_bound",
        worst,
        allowance,
        meta(&[
            ("value", json!(v)),
            ("n_controls", json!(opts.n_controls)),
            ("violations", json!(violations)),
            ("lowest_cost", json!(if lowest.is_finite() { lowest } else { v })),
            ("n_paths", json!(opts.n_paths)),
            ("n_steps", json!(opts.n_steps)),
            ("seed", json!(opts.seed)),
        ]),
    ));
    Ok(report)
}

/// Samples perturbed strategies around the synthesized one and checks that
/// none beats `V(t, ξ)` and that the synthesized one attains it.
pub fn lower_bound_battery(
    p: &ProblemData,
    sol: &ClosedLoopSolution,
    law: &InitialLaw,
    opts: &BatteryOptions,
) -> Result<VerificationReport> {
    if !sol.solvable {
        return Err(MflqError::Precondition("lower-bound battery needs a solvable synthesis".into()));
    }
    let v = value(sol, law)?.value;
    lower_bound_battery_with_value(p, sol, law, v, opts)
}

// ---------------------------------------------------------------------------
// Classical degeneration

/// Without mean-field terms the two Riccati equations coincide.
pub fn classical_degeneration(p: &ProblemData, n_steps: usize) -> Result<VerificationReport> {
    if !p.has_no_mean_field() {
        return Err(MflqError::Precondition(
            "classical degeneration needs every mean-field coefficient and weight to vanish".into(),
        ));
    }
    let sol = integrate_gre(p, n_steps)?;
    let pi_gap = sol.nodes.iter().map(|st| (&st.pi - &st.p).amax()).fold(0.0, f64::max);
    let gain_gap = sol
        .nodes
        .iter()
        .map(|st| (st.gamma() - st.theta()).amax())
        .fold(0.0, f64::max);
    let md = meta(&[("n_steps", json!(n_steps))]);
    Ok(VerificationReport {
        checks: vec![
            CheckResult::measured("degeneration.pi_equals_p", pi_gap, 1e-10, md.clone()),
            CheckResult::measured("degeneration.gamma_equals_theta", gain_gap, 1e-8, md),
        ],
    })
}

// ---------------------------------------------------------------------------
// Suite

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    All,
    Qp,
    Completion,
    Battery,
    Degeneration,
    Stationarity,
}

impl std::str::FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "all" => Suite::All,
            "qp" => Suite::Qp,
            "completion" => Suite::Completion,
            "battery" => Suite::Battery,
            "degeneration" => Suite::Degeneration,
            "stationarity" => Suite::Stationarity,
            other => return Err(format!("unknown suite `{other}`")),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub gre_steps: usize,
    pub qp_steps: usize,
    pub n_paths: usize,
    pub n_steps: usize,
    pub n_controls: usize,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            gre_steps: 400,
            qp_steps: 1000,
            n_paths: 2000,
            n_steps: 200,
            n_controls: 20,
            seed: 0,
        }
    }
}

fn qp_suite(p: &ProblemData, sol: &ClosedLoopSolution, law: &InitialLaw, o: &SuiteOptions) -> Result<CheckResult> {
    const NAME: &str = "qp.matches_value";
    if let Err(why) = qp_applicable(p) {
        return Ok(CheckResult::skipped(NAME, &why));
    }
    if law.brownian_load.iter().chain(law.indep_load.iter()).any(|&v| v != 0.0) {
        return Ok(CheckResult::skipped(NAME, "initial law is random"));
    }
    let k = o.qp_steps.max(2);
    let fine = qp_oracle(p, &law.mean, k)?;
    let coarse = qp_oracle(p, &law.mean, k / 2)?;
    let v = value(sol, law)?.value;
    // First-order convergence: the error at K is about the K/2 -> K change.
    let tol = 2.0 * (fine.cost - coarse.cost).abs() + 1e-9 * (1.0 + v.abs());
    Ok(CheckResult::measured(
        NAME,
        (fine.cost - v).abs(),
        tol,
        meta(&[("qp_cost", json!(fine.cost)), ("value", json!(v)), ("k_steps", json!(k))]),
    ))
}

fn completion_suite(p: &ProblemData, sol: &ClosedLoopSolution, o: &SuiteOptions) -> Result<CheckResult> {
    const NAME: &str = "completion.identity";
    if !sol.gre.regular() {
        return Ok(CheckResult::skipped(NAME, "Riccati solution is not regular"));
    }
    let p0 = strip_inhomogeneous(p);
    let mut spec = random_open_loop(p.n, p.m, o.seed);
    if qp_applicable(&p0).is_ok() {
        // Without noise in the problem a deterministic control keeps the
        // check deterministic, so the gap is pure time discretization.
        spec.offset.noise_part = MatrixPath::zeros(p.m, 1);
    }
    let r = completion_check(&p0, &sol.gre, &spec, o.n_paths, o.n_steps, o.seed)?;
    Ok(CheckResult::measured(
        NAME,
        r.gap,
        0.01,
        meta(&[
            ("lhs", json!(r.lhs.mean)),
            ("rhs", json!(r.rhs.mean)),
            ("lhs_stderr", json!(r.lhs.stderr)),
            ("rhs_stderr", json!(r.rhs.stderr)),
            ("n_paths", json!(o.n_paths)),
            ("n_steps", json!(o.n_steps)),
            ("seed", json!(o.seed)),
        ]),
    ))
}

fn stationarity_suite(p: &ProblemData, sol: &ClosedLoopSolution, law: &InitialLaw) -> Result<CheckResult> {
    const NAME: &str = "stationarity.gradient";
    if !sol.gre.regular() {
        return Ok(CheckResult::skipped(NAME, "Riccati solution is not regular"));
    }
    let p0 = strip_inhomogeneous(p).with_steps(sol.gre.grid.n_steps)?;
    let t = p.horizon.t0;
    let r = stationarity_residual(
        &p0,
        &sol.strategy.feedback,
        &sol.strategy.mean_feedback,
        &law.second_moment(t),
        &law.mean_outer(),
        1e-5,
    )?;
    Ok(CheckResult::measured(NAME, r, 1e-4, meta(&[("fd_step", json!(1e-5))])))
}

/// Runs the selected checks against a synthesized solution.
pub fn run_suite(
    p: &ProblemData,
    sol: &ClosedLoopSolution,
    law: &InitialLaw,
    suite: Suite,
    o: &SuiteOptions,
) -> Result<VerificationReport> {
    let want = |s: Suite| suite == Suite::All || suite == s;
    let mut report = VerificationReport::default();
    if want(Suite::Qp) {
        report.checks.push(qp_suite(p, sol, law, o)?);
    }
    if want(Suite::Completion) {
        report.checks.push(completion_suite(p, sol, o)?);
    }
    if want(Suite::Stationarity) {
        report.checks.push(stationarity_suite(p, sol, law)?);
    }
    if want(Suite::Battery) {
        if sol.solvable {
            let opts = BatteryOptions {
                n_controls: o.n_controls,
                n_paths: o.n_paths,
                n_steps: o.n_steps,
                seed: o.seed,
                ..BatteryOptions::default()
            };
            report.extend(lower_bound_battery(p, sol, law, &opts)?);
        } else {
            report
                .checks
                .push(CheckResult::skipped("battery", "problem is not closed-loop solvable"));
        }
    }
    if want(Suite::Degeneration) {
        if p.has_no_mean_field() {
            report.extend(classical_degeneration(p, o.gre_steps)?);
        } else {
            report
                .checks
                .push(CheckResult::skipped("degeneration", "problem has mean-field terms"));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::problem::TimeGrid;
    use crate::synthesis::synthesize;

    fn x1(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn qp_on_scalar_classic() {
        let p = presets::scalar_classic();
        let r = qp_oracle(&p, &x1(1.0), 400).unwrap();
        assert!((r.cost - 0.5).abs() < 5e-3, "{}", r.cost);
    }

    #[test]
    fn qp_on_zero_weights_is_zero() {
        let mut p = ProblemData::zero(1, 1, TimeGrid::new(0.0, 1.0, 10).unwrap());
        p.coefficients.b = MatrixPath::scalar(1.0);
        let r = qp_oracle(&p, &x1(1.0), 20).unwrap();
        assert_eq!(r.cost, 0.0);
        assert!(r.controls.iter().all(|u| u[0] == 0.0));
    }

    #[test]
    fn qp_without_control_authority_is_the_terminal_cost() {
        let mut p = ProblemData::zero(1, 1, TimeGrid::new(0.0, 1.0, 10).unwrap());
        p.weights.g = DMatrix::from_element(1, 1, 1.0);
        let r = qp_oracle(&p, &x1(1.0), 20).unwrap();
        assert!((r.cost - 1.0).abs() < 1e-14);
    }

    #[test]
    fn qp_rejects_indefinite_hessian_and_noise() {
        let mut p = presets::scalar_classic();
        p.weights.r = MatrixPath::scalar(-1.0);
        assert!(matches!(qp_oracle(&p, &x1(1.0), 20), Err(MflqError::UnboundedBelow(_))));
        let mut p = presets::scalar_classic();
        p.coefficients.c = MatrixPath::scalar(0.1);
        assert!(matches!(qp_oracle(&p, &x1(1.0), 20), Err(MflqError::Precondition(_))));
    }

    #[test]
    fn completion_examples() {
        let p = presets::scalar_classic();
        let sol = integrate_gre(&p, 2000).unwrap();
        let spec = ControlSpec {
            offset: NoiseAffinePath::constant(x1(1.0), x1(0.0)),
            ..ControlSpec::zero(1, 1)
        };
        let r = completion_check(&p, &sol, &spec, 2, 2000, 0).unwrap();
        assert!((r.lhs.mean - 2.0).abs() < 1e-6, "{}", r.lhs.mean);
        assert!((r.rhs.mean - 2.0).abs() < 1e-6, "{}", r.rhs.mean);

        let zero = completion_check(&p, &sol, &ControlSpec::zero(1, 1), 2, 100, 0).unwrap();
        assert_eq!((zero.lhs.mean, zero.rhs.mean, zero.gap), (0.0, 0.0, 0.0));
    }

    #[test]
    fn completion_at_optimum_vanishes() {
        let p = strip_inhomogeneous(&presets::random_spd(2, 2, 3));
        let sol = synthesize(&p, 100).unwrap();
        let r = completion_check(&p, &sol.gre, &sol.strategy, 50, 100, 1).unwrap();
        assert_eq!(r.lhs.mean, 0.0);
        assert_eq!(r.rhs.mean, 0.0);
    }

    #[test]
    fn completion_refuses_irregular_solutions() {
        let p = presets::example31(0.5);
        let sol = integrate_gre(&p, 50).unwrap();
        let e = completion_check(&p, &sol, &ControlSpec::zero(1, 1), 10, 50, 0);
        assert!(matches!(e, Err(MflqError::Precondition(_))));
    }

    #[test]
    fn battery_passes_on_scalar_classic_and_catches_a_corrupted_value() {
        let p = presets::scalar_classic();
        let sol = synthesize(&p, 1000).unwrap();
        let law = InitialLaw::deterministic(x1(1.0));
        let opts = BatteryOptions {
            n_controls: 100,
            n_paths: 2,
            n_steps: 1000,
            ..BatteryOptions::default()
        };
        let r = lower_bound_battery(&p, &sol, &law, &opts).unwrap();
        assert!(r.passed(), "{r:?}");
        let v = value(&sol, &law).unwrap().value;
        let bad = lower_bound_battery_with_value(&p, &sol, &law, v + 1.0, &opts).unwrap();
        assert!(!bad.checks[0].passed());
    }

    #[test]
    fn battery_is_degenerate_on_zero_weights() {
        let mut p = ProblemData::zero(1, 1, TimeGrid::new(0.0, 1.0, 50).unwrap());
        p.coefficients.b = MatrixPath::scalar(1.0);
        let sol = synthesize(&p, 50).unwrap();
        let law = InitialLaw::deterministic(x1(1.0));
        let opts = BatteryOptions {
            n_controls: 5,
            n_paths: 2,
            n_steps: 50,
            ..BatteryOptions::default()
        };
        let r = lower_bound_battery(&p, &sol, &law, &opts).unwrap();
        assert!(r.passed());
        assert_eq!(r.checks[1].metadata["lowest_cost"], json!(0.0));
    }

    #[test]
    fn degeneration_examples() {
        let r = classical_degeneration(&presets::scalar_classic(), 500).unwrap();
        assert!(r.passed());
        assert_eq!(r.checks[0].discrepancy, 0.0);

        let mut p = presets::scalar_classic();
        p.coefficients.c = MatrixPath::scalar(0.4);
        p.coefficients.d = MatrixPath::scalar(0.3);
        p.weights.r = MatrixPath::scalar(2.0);
        assert!(classical_degeneration(&p, 500).unwrap().passed());

        let mut p = presets::scalar_classic();
        p.weights.g_bar = DMatrix::from_element(1, 1, 1.0);
        assert!(matches!(classical_degeneration(&p, 10), Err(MflqError::Precondition(_))));
    }

    #[test]
    fn battery_is_seed_reproducible() {
        let p = presets::random_spd(2, 2, 2);
        let sol = synthesize(&p, 100).unwrap();
        let law = presets::random_law(2, 2);
        let opts = BatteryOptions {
            n_controls: 3,
            n_paths: 200,
            n_steps: 50,
            seed: 5,
            ..BatteryOptions::default()
        };
        let a = serde_json::to_string(&lower_bound_battery(&p, &sol, &law, &opts).unwrap()).unwrap();
        let b = serde_json::to_string(&lower_bound_battery(&p, &sol, &law, &opts).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
