//! Euler–Maruyama simulation of the closed-loop state equation and Monte
//! Carlo cost estimation.
//!
//! `E[X]` and `E[u]` come from the deterministic mean equation rather than
//! the particle average, which is exact for deterministic coefficients.
//! Path `i` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream `i`, so
//! results do not depend on how paths are scheduled across threads.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{MflqError, Result};
use crate::ode::{escaped, rk4_step, trapezoid, State};
use crate::problem::{ensure_valid, ControlSpec, InitialLaw, NoiseAnchor, ProblemData, TimeGrid};

/// Paths per work unit; fixed so aggregation order never changes.
const CHUNK: usize = 256;

/// Row-major dense matrix for the inner loop.
#[derive(Debug, Clone)]
pub(crate) struct Flat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Flat {
    pub(crate) fn new(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(m[(i, j)]);
            }
        }
        Self { rows, cols, data }
    }

    /// `out += M x`.
    pub(crate) fn mul_add(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.rows) {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// `y^T M x`.
    pub(crate) fn form(&self, y: &[f64], x: &[f64]) -> f64 {
        (0..self.rows)
            .map(|i| {
                let row = &self.data[i * self.cols..(i + 1) * self.cols];
                y[i] * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .sum()
    }
}

fn slice(v: &DVector<f64>) -> Vec<f64> {
    v.as_slice().to_vec()
}

/// Compensated sum, evaluated in order.
pub(crate) fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Mean and standard error of i.i.d. samples (two-pass).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = neumaier_sum(values.iter().copied()) / n;
        let var = if values.len() > 1 {
            neumaier_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            stderr: (var / n).sqrt(),
        }
    }

    /// Shifts the mean by a deterministic amount.
    pub fn offset(self, c: f64) -> Self {
        Self {
            mean: self.mean + c,
            ..self
        }
    }
}

/// Deterministic mean state and control on a grid.
#[derive(Debug, Clone)]
pub struct MeanPath {
    pub grid: TimeGrid,
    pub mean_x: Vec<DVector<f64>>,
    pub mean_u: Vec<DVector<f64>>,
}

fn mean_control(spec: &ControlSpec, s: f64, ex: &DVector<f64>) -> DVector<f64> {
    (spec.feedback.at(s) + spec.mean_feedback.at(s)) * ex + spec.offset.const_part.vector_at(s)
}

/// Forward RK4 for `dE[X] = [(A+Ā) E[X] + (B+B̄) E[u] + b0] ds` with
/// `E[u] = (Θ+Θ̄) E[X] + v0`.
pub fn mean_ode(p: &ProblemData, spec: &ControlSpec, mean0: &DVector<f64>, n_steps: usize) -> Result<MeanPath> {
    spec.check(p.n, p.m, &p.horizon)?;
    if mean0.len() != p.n {
        return Err(MflqError::Dimension(format!("initial mean has length {}, expected {}", mean0.len(), p.n)));
    }
    let grid = p.horizon.with_steps(n_steps)?;
    let h = grid.step();
    let mut rhs = |s: f64, y: &State| {
        let k = p.snapshot(s);
        let ex = DVector::from_column_slice(y[0].as_slice());
        let eu = mean_control(spec, s, &ex);
        let b0 = p.inhomogeneity.b.const_part.vector_at(s);
        let d = (&k.a + &k.a_bar) * &ex + (&k.b + &k.b_bar) * eu + b0;
        vec![DMatrix::from_column_slice(p.n, 1, d.as_slice())]
    };
    let mut xs: Vec<DVector<f64>> = vec![mean0.clone()];
    let mut y: State = vec![DMatrix::from_column_slice(p.n, 1, mean0.as_slice())];
    for k in 0..grid.n_steps {
        y = rk4_step(&mut rhs, grid.node(k), &y, h, false);
        if escaped(&y) {
            return Err(MflqError::FiniteEscape {
                what: "mean equation",
                node: k + 1,
                time: grid.node(k + 1),
                last_valid: k,
            });
        }
        xs.push(DVector::from_column_slice(y[0].as_slice()));
    }
    let mean_u = xs
        .iter()
        .enumerate()
        .map(|(k, ex)| mean_control(spec, grid.node(k), ex))
        .collect();
    Ok(MeanPath {
        grid,
        mean_x: xs,
        mean_u,
    })
}

/// A pathwise functional `∫ running ds + terminal`, integrated with the
/// trapezoid rule on the simulation grid.
pub trait PathIntegrand: Sync {
    fn running(&self, k: usize, x: &[f64], u: &[f64], w: f64) -> f64;
    fn terminal(&self, x: &[f64], w: f64) -> f64;
}

struct StepData {
    a: Flat,
    b: Flat,
    c: Flat,
    d: Flat,
    theta: Flat,
    /// `Ā E[X] + B̄ E[u] + b0` and `b1`.
    drift0: Vec<f64>,
    drift1: Vec<f64>,
    /// `C̄ E[X] + D̄ E[u] + σ0` and `σ1`.
    diff0: Vec<f64>,
    diff1: Vec<f64>,
    /// `Θ̄ E[X] + v0` and `v1`.
    u0: Vec<f64>,
    u1: Vec<f64>,
}

/// Precomputed closed-loop coefficients on the simulation grid.
struct Kernel {
    grid: TimeGrid,
    n: usize,
    m: usize,
    steps: Vec<StepData>,
    law_mean: Vec<f64>,
    law_c: Vec<f64>,
    law_l: Flat,
    anchor: NoiseAnchor,
    seed: u64,
}

impl Kernel {
    fn new(p: &ProblemData, spec: &ControlSpec, law: &InitialLaw, mean: &MeanPath, seed: u64) -> Self {
        let grid = mean.grid;
        let steps = (0..grid.len())
            .map(|k| {
                let s = grid.node(k);
                let c = p.snapshot(s);
                let f = p.inhom_at(s);
                let (ex, eu) = (&mean.mean_x[k], &mean.mean_u[k]);
                let (v0, v1) = spec.offset.at(s);
                StepData {
                    a: Flat::new(&c.a),
                    b: Flat::new(&c.b),
                    c: Flat::new(&c.c),
                    d: Flat::new(&c.d),
                    theta: Flat::new(&spec.feedback.at(s)),
                    drift0: slice(&(&c.a_bar * ex + &c.b_bar * eu + &f.b0)),
                    drift1: slice(&f.b1),
                    diff0: slice(&(&c.c_bar * ex + &c.d_bar * eu + &f.sigma0)),
                    diff1: slice(&f.sigma1),
                    u0: slice(&(spec.mean_feedback.at(s) * ex + v0)),
                    u1: slice(&v1),
                }
            })
            .collect();
        Self {
            grid,
            n: p.n,
            m: p.m,
            steps,
            law_mean: slice(&law.mean),
            law_c: slice(&law.brownian_load),
            law_l: Flat::new(&law.indep_load),
            anchor: spec.anchor,
            seed,
        }
    }

    /// Simulates path `index`, calling `visit(k, x, u, w)` at every node.
    fn run_path(&self, index: usize, visit: &mut impl FnMut(usize, &[f64], &[f64], f64)) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let t0 = self.grid.t0;
        let za: f64 = rng.sample(StandardNormal);
        let zb: f64 = rng.sample(StandardNormal);
        let (w_tau, w_t) = match self.anchor {
            NoiseAnchor::Frozen(tau) => {
                let w_tau = tau.sqrt() * za;
                (w_tau, w_tau + (t0 - tau).max(0.0).sqrt() * zb)
            }
            NoiseAnchor::Running => (0.0, t0.sqrt() * zb),
        };
        let g: Vec<f64> = (0..self.n).map(|_| rng.sample(StandardNormal)).collect();

        let mut x: Vec<f64> = self
            .law_mean
            .iter()
            .zip(&self.law_c)
            .map(|(m, c)| m + c * w_t)
            .collect();
        self.law_l.mul_add(&g, &mut x);

        let h = self.grid.step();
        let sqrt_h = h.sqrt();
        let mut w = w_t;
        let mut u = vec![0.0; self.m];
        let mut drift = vec![0.0; self.n];
        let mut diff = vec![0.0; self.n];
        for (k, st) in self.steps.iter().enumerate() {
            let wa = match self.anchor {
                NoiseAnchor::Frozen(_) => w_tau,
                NoiseAnchor::Running => w,
            };
            for i in 0..self.m {
                u[i] = st.u0[i] + st.u1[i] * wa;
            }
            st.theta.mul_add(&x, &mut u);
            visit(k, &x, &u, w);
            if k == self.grid.n_steps {
                break;
            }
            let dw = sqrt_h * rng.sample::<f64, _>(StandardNormal);
            for i in 0..self.n {
                drift[i] = st.drift0[i] + st.drift1[i] * w;
                diff[i] = st.diff0[i] + st.diff1[i] * w;
            }
            st.a.mul_add(&x, &mut drift);
            st.b.mul_add(&u, &mut drift);
            st.c.mul_add(&x, &mut diff);
            st.d.mul_add(&u, &mut diff);
            for i in 0..self.n {
                x[i] += h * drift[i] + dw * diff[i];
            }
            w += dw;
        }
    }
}

struct ChunkOut {
    values: Vec<Vec<f64>>,
    sum_x: Vec<f64>,
    sum_x2: Vec<f64>,
    sum_xt_outer: Vec<f64>,
}

/// Ensemble-level output of [`simulate_with`].
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub grid: TimeGrid,
    pub mean: MeanPath,
    /// One per integrand, in order (deterministic offsets not included).
    pub estimates: Vec<Estimate>,
    pub sample_mean_x: Vec<DVector<f64>>,
    pub sample_std_x: Vec<DVector<f64>>,
    pub terminal_second_moment: DMatrix<f64>,
}

fn check_inputs(p: &ProblemData, spec: &ControlSpec, law: &InitialLaw, n_paths: usize) -> Result<()> {
    ensure_valid(p)?;
    spec.check(p.n, p.m, &p.horizon)?;
    law.check(p.n)?;
    if n_paths < 2 {
        return Err(MflqError::Precondition(format!("need at least 2 paths, got {n_paths}")));
    }
    Ok(())
}

/// Simulates `n_paths` closed-loop paths and evaluates every integrand on
/// each one (common random numbers across integrands).
pub fn simulate_with(
    p: &ProblemData,
    spec: &ControlSpec,
    law: &InitialLaw,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    integrands: &[&dyn PathIntegrand],
) -> Result<Ensemble> {
    check_inputs(p, spec, law, n_paths)?;
    let mean = mean_ode(p, spec, &law.mean, n_steps)?;
    let kernel = Kernel::new(p, spec, law, &mean, seed);
    let grid = kernel.grid;
    let (n, len, h) = (p.n, grid.len(), grid.step());
    let last = grid.n_steps;

    let chunks: Vec<ChunkOut> = (0..n_paths.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let range = c * CHUNK..((c + 1) * CHUNK).min(n_paths);
            let mut out = ChunkOut {
                values: vec![Vec::with_capacity(range.len()); integrands.len()],
                sum_x: vec![0.0; len * n],
                sum_x2: vec![0.0; len * n],
                sum_xt_outer: vec![0.0; n * n],
            };
            let mut acc = vec![0.0; integrands.len()];
            for i in range {
                acc.iter_mut().for_each(|a| *a = 0.0);
                kernel.run_path(i, &mut |k, x, u, w| {
                    let weight = if k == 0 || k == last { 0.5 * h } else { h };
                    for (a, f) in acc.iter_mut().zip(integrands) {
                        *a += weight * f.running(k, x, u, w);
                        if k == last {
                            *a += f.terminal(x, w);
                        }
                    }
                    for j in 0..n {
                        out.sum_x[k * n + j] += x[j];
                        out.sum_x2[k * n + j] += x[j] * x[j];
                    }
                    if k == last {
                        for a in 0..n {
                            for b in 0..n {
                                out.sum_xt_outer[a * n + b] += x[a] * x[b];
                            }
                        }
                    }
                });
                for (v, a) in out.values.iter_mut().zip(&acc) {
                    v.push(*a);
                }
            }
            out
        })
        .collect();

    let estimates = (0..integrands.len())
        .map(|j| {
            let all: Vec<f64> = chunks.iter().flat_map(|c| c.values[j].iter().copied()).collect();
            Estimate::from_samples(&all)
        })
        .collect();
    let total = |f: &dyn Fn(&ChunkOut) -> f64| neumaier_sum(chunks.iter().map(f));
    let np = n_paths as f64;
    let mut sample_mean_x = Vec::with_capacity(len);
    let mut sample_std_x = Vec::with_capacity(len);
    for k in 0..len {
        let mu = DVector::from_fn(n, |j, _| total(&|c| c.sum_x[k * n + j]) / np);
        let sd = DVector::from_fn(n, |j, _| {
            let s2 = total(&|c| c.sum_x2[k * n + j]);
            ((s2 - np * mu[j] * mu[j]) / (np - 1.0)).max(0.0).sqrt()
        });
        sample_mean_x.push(mu);
        sample_std_x.push(sd);
    }
    let terminal_second_moment = DMatrix::from_fn(n, n, |a, b| total(&|c| c.sum_xt_outer[a * n + b]) / np);
    Ok(Ensemble {
        grid,
        mean,
        estimates,
        sample_mean_x,
        sample_std_x,
        terminal_second_moment,
    })
}

struct CostNode {
    q: Flat,
    s: Flat,
    r: Flat,
    q0: Vec<f64>,
    q1: Vec<f64>,
    rho0: Vec<f64>,
    rho1: Vec<f64>,
}

/// Pathwise part of the cost: every block except those in `E[X]`, `E[u]`.
pub struct PathCost {
    nodes: Vec<CostNode>,
    g: Flat,
    g0: Vec<f64>,
    g1: Vec<f64>,
}

impl PathCost {
    pub fn new(p: &ProblemData, grid: &TimeGrid) -> Self {
        let nodes = grid
            .nodes()
            .into_iter()
            .map(|s| {
                let c = p.snapshot(s);
                let f = p.inhom_at(s);
                CostNode {
                    q: Flat::new(&c.q),
                    s: Flat::new(&c.s),
                    r: Flat::new(&c.r),
                    q0: slice(&f.q0),
                    q1: slice(&f.q1),
                    rho0: slice(&f.rho0),
                    rho1: slice(&f.rho1),
                }
            })
            .collect();
        Self {
            nodes,
            g: Flat::new(&p.weights.g),
            g0: slice(&p.inhomogeneity.g0),
            g1: slice(&p.inhomogeneity.g1),
        }
    }
}

impl PathIntegrand for PathCost {
    fn running(&self, k: usize, x: &[f64], u: &[f64], w: f64) -> f64 {
        let c = &self.nodes[k];
        let lin_x: f64 = c.q0.iter().zip(&c.q1).zip(x).map(|((a, b), xi)| (a + b * w) * xi).sum();
        let lin_u: f64 = c.rho0.iter().zip(&c.rho1).zip(u).map(|((a, b), ui)| (a + b * w) * ui).sum();
        c.q.form(x, x) + 2.0 * c.s.form(u, x) + c.r.form(u, u) + 2.0 * lin_x + 2.0 * lin_u
    }

    fn terminal(&self, x: &[f64], w: f64) -> f64 {
        let lin: f64 = self.g0.iter().zip(&self.g1).zip(x).map(|((a, b), xi)| (a + b * w) * xi).sum();
        self.g.form(x, x) + 2.0 * lin
    }
}

/// Deterministic cost blocks in `E[X]`, `E[u]`, with `ex`/`eu` per node.
pub fn mean_field_cost(p: &ProblemData, grid: &TimeGrid, ex: &[DVector<f64>], eu: &[DVector<f64>]) -> f64 {
    let running: Vec<f64> = grid
        .nodes()
        .into_iter()
        .enumerate()
        .map(|(k, s)| {
            let c = p.snapshot(s);
            let f = p.inhom_at(s);
            let (x, u) = (&ex[k], &eu[k]);
            (&c.q_bar * x).dot(x) + 2.0 * (&c.s_bar * x).dot(u) + (&c.r_bar * u).dot(u)
                + 2.0 * f.q_bar.dot(x)
                + 2.0 * f.rho_bar.dot(u)
        })
        .collect();
    let xt = &ex[grid.n_steps];
    (&p.weights.g_bar * xt).dot(xt) + 2.0 * p.inhomogeneity.g_bar.dot(xt) + trapezoid(&running, grid.step())
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub cost_mean: f64,
    pub cost_stderr: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub times: Vec<f64>,
    /// Exact `E[X]` per node.
    pub mean_path: Vec<Vec<f64>>,
    pub sample_mean_path: Vec<Vec<f64>>,
    /// Largest `|sample mean - E[X]|` over nodes and components.
    pub max_mean_gap: f64,
    /// Largest gap in units of `sample std / sqrt(n_paths)`; zero where the
    /// sample std vanishes and the gap is below round-off.
    pub max_mean_z: f64,
    pub terminal_sample_mean: Vec<f64>,
    pub terminal_sample_second_moment: Vec<Vec<f64>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Simulates the closed loop `u = Θ X + Θ̄ E[X] + v` from `law` and
/// estimates the cost.
pub fn simulate(
    p: &ProblemData,
    spec: &ControlSpec,
    law: &InitialLaw,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<SimulationReport> {
    let grid = p.horizon.with_steps(n_steps)?;
    let cost = PathCost::new(p, &grid);
    let ens = simulate_with(p, spec, law, n_paths, n_steps, seed, &[&cost])?;
    let det = mean_field_cost(p, &grid, &ens.mean.mean_x, &ens.mean.mean_u);
    let est = ens.estimates[0].offset(det);

    let sqrt_n = (n_paths as f64).sqrt();
    let mut max_gap = 0.0_f64;
    let mut max_z = 0.0_f64;
    for k in 0..grid.len() {
        for j in 0..p.n {
            let gap = (ens.sample_mean_x[k][j] - ens.mean.mean_x[k][j]).abs();
            max_gap = max_gap.max(gap);
            let se = ens.sample_std_x[k][j] / sqrt_n;
            let scale = 1.0 + ens.mean.mean_x[k][j].abs();
            if se > 1e-12 * scale {
                max_z = max_z.max(gap / se);
            } else if gap > 1e-9 * scale {
                max_z = f64::INFINITY;
            }
        }
    }
    let last = grid.n_steps;
    Ok(SimulationReport {
        cost_mean: est.mean,
        cost_stderr: est.stderr,
        n_paths,
        n_steps,
        seed,
        times: grid.nodes(),
        mean_path: ens.mean.mean_x.iter().map(slice).collect(),
        sample_mean_path: ens.sample_mean_x.iter().map(slice).collect(),
        max_mean_gap: max_gap,
        max_mean_z: max_z,
        terminal_sample_mean: slice(&ens.sample_mean_x[last]),
        terminal_sample_second_moment: rows(&ens.terminal_second_moment),
    })
}

/// One recorded path on the simulation grid.
#[derive(Debug, Clone)]
pub struct SamplePath {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub w: Vec<f64>,
}

/// Simulates and keeps every path. Memory grows with paths times steps, so
/// this is meant for small ensembles.
pub fn record_paths(
    p: &ProblemData,
    spec: &ControlSpec,
    law: &InitialLaw,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<(Vec<SamplePath>, MeanPath)> {
    check_inputs(p, spec, law, n_paths)?;
    let mean = mean_ode(p, spec, &law.mean, n_steps)?;
    let kernel = Kernel::new(p, spec, law, &mean, seed);
    let paths = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut path = SamplePath {
                x: Vec::new(),
                u: Vec::new(),
                w: Vec::new(),
            };
            kernel.run_path(i, &mut |_, x, u, w| {
                path.x.push(DVector::from_column_slice(x));
                path.u.push(DVector::from_column_slice(u));
                path.w.push(w);
            });
            path
        })
        .collect();
    Ok((paths, mean))
}

/// Cost estimate over recorded paths. The mean-field blocks use `mean` when
/// given, otherwise the sample averages of `X` and `u`.
pub fn estimate_cost(
    paths: &[SamplePath],
    grid: &TimeGrid,
    p: &ProblemData,
    mean: Option<&MeanPath>,
) -> Result<Estimate> {
    if paths.is_empty() {
        return Err(MflqError::Precondition("no paths to estimate from".into()));
    }
    if let Some(k) = paths.iter().position(|q| q.x.len() != grid.len() || q.u.len() != grid.len() || q.w.len() != grid.len()) {
        return Err(MflqError::Dimension(format!("path {k} does not match the grid with {} nodes", grid.len())));
    }
    let cost = PathCost::new(p, grid);
    let last = grid.n_steps;
    let values: Vec<f64> = paths
        .iter()
        .map(|q| {
            let run: Vec<f64> = (0..grid.len())
                .map(|k| cost.running(k, q.x[k].as_slice(), q.u[k].as_slice(), q.w[k]))
                .collect();
            trapezoid(&run, grid.step()) + cost.terminal(q.x[last].as_slice(), q.w[last])
        })
        .collect();
    let (ex, eu): (Vec<DVector<f64>>, Vec<DVector<f64>>) = match mean {
        Some(m) => (m.mean_x.clone(), m.mean_u.clone()),
        None => {
            let np = paths.len() as f64;
            (0..grid.len())
                .map(|k| {
                    let sx = paths.iter().fold(DVector::zeros(p.n), |a, q| a + &q.x[k]) / np;
                    let su = paths.iter().fold(DVector::zeros(p.m), |a, q| a + &q.u[k]) / np;
                    (sx, su)
                })
                .unzip()
        }
    };
    Ok(Estimate::from_samples(&values).offset(mean_field_cost(p, grid, &ex, &eu)))
}
