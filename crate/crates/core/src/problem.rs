//! Problem data: time grids, time-dependent coefficient paths, the
//! noise-affine inhomogeneity class, initial laws, and closed-loop
//! controls.
//!
//! All matrices are `nalgebra::DMatrix<f64>`; vectors travel as `DVector<f64>`
//! at the API surface and as `n x 1` matrices inside [`MatrixPath`].

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MflqError, Result};

/// Relative tolerance for declared-symmetric weights.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Uniform grid `t0 = s_0 < s_1 < ... < s_N = t_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t0.is_finite() && t_end.is_finite()) || t0 >= t_end {
            return Err(MflqError::InvalidGrid(format!(
                "need finite t0 < t_end, got [{t0}, {t_end}]"
            )));
        }
        if t0 < 0.0 {
            return Err(MflqError::InvalidGrid(format!(
                "start time {t0} precedes the Brownian origin 0"
            )));
        }
        if n_steps == 0 {
            return Err(MflqError::InvalidGrid("n_steps must be at least 1".into()));
        }
        Ok(Self { t0, t_end, n_steps })
    }

    /// Same interval, different resolution.
    pub fn with_steps(&self, n_steps: usize) -> Result<Self> {
        Self::new(self.t0, self.t_end, n_steps)
    }

    pub fn step(&self) -> f64 {
        (self.t_end - self.t0) / self.n_steps as f64
    }

    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, k: usize) -> f64 {
        if k >= self.n_steps {
            self.t_end
        } else {
            self.t0 + k as f64 * (self.t_end - self.t0) / self.n_steps as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.node(k)).collect()
    }

    pub fn contains(&self, s: f64) -> bool {
        let slack = 1e-12 * (1.0 + self.t0.abs().max(self.t_end.abs()));
        s >= self.t0 - slack && s <= self.t_end + slack
    }

    /// Bracketing node `k` and fraction `theta ∈ [0, 1)` with
    /// `s = node(k) + theta * step`. Times within 1e-9 steps of a node snap
    /// to it so node evaluations stay exact.
    pub fn locate(&self, s: f64) -> (usize, f64) {
        let x = ((s - self.t0) / self.step()).clamp(0.0, self.n_steps as f64);
        let r = x.round();
        if (x - r).abs() < 1e-9 {
            return (r as usize, 0.0);
        }
        let k = (x.floor() as usize).min(self.n_steps - 1);
        (k, x - k as f64)
    }
}

/// A matrix-valued function of time: a constant or uniform-grid samples with
/// linear interpolation between nodes.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixPath {
    Constant(DMatrix<f64>),
    Sampled {
        grid: TimeGrid,
        samples: Vec<DMatrix<f64>>,
    },
}

impl MatrixPath {
    pub fn constant(m: DMatrix<f64>) -> Self {
        MatrixPath::Constant(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        MatrixPath::Constant(DMatrix::zeros(rows, cols))
    }

    pub fn scalar(v: f64) -> Self {
        MatrixPath::Constant(DMatrix::from_element(1, 1, v))
    }

    pub fn from_vector(v: DVector<f64>) -> Self {
        let n = v.len();
        MatrixPath::Constant(DMatrix::from_column_slice(n, 1, v.as_slice()))
    }

    pub fn sampled(grid: TimeGrid, samples: Vec<DMatrix<f64>>) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(MflqError::Dimension(format!(
                "{} samples for a grid with {} nodes",
                samples.len(),
                grid.len()
            )));
        }
        let shape = samples[0].shape();
        if let Some(k) = samples.iter().position(|m| m.shape() != shape) {
            return Err(MflqError::Dimension(format!(
                "sample {k} has shape {:?}, expected {:?}",
                samples[k].shape(),
                shape
            )));
        }
        Ok(MatrixPath::Sampled { grid, samples })
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            MatrixPath::Constant(m) => m.shape(),
            MatrixPath::Sampled { samples, .. } => samples[0].shape(),
        }
    }

    /// Interpolated value; times outside a sampled grid clamp to its ends.
    pub fn at(&self, s: f64) -> DMatrix<f64> {
        match self {
            MatrixPath::Constant(m) => m.clone(),
            MatrixPath::Sampled { grid, samples } => {
                let (k, theta) = grid.locate(s);
                if theta == 0.0 {
                    samples[k].clone()
                } else {
                    &samples[k] * (1.0 - theta) + &samples[k + 1] * theta
                }
            }
        }
    }

    /// Column-vector paths evaluated as a vector.
    pub fn vector_at(&self, s: f64) -> DVector<f64> {
        let m = self.at(s);
        DVector::from_column_slice(m.as_slice())
    }

    /// Every stored sample (one for constant paths).
    pub fn samples(&self) -> &[DMatrix<f64>] {
        match self {
            MatrixPath::Constant(m) => std::slice::from_ref(m),
            MatrixPath::Sampled { samples, .. } => samples,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.samples().iter().all(|m| m.iter().all(|&x| x == 0.0))
    }

    pub fn map(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        match self {
            MatrixPath::Constant(m) => MatrixPath::Constant(f(m)),
            MatrixPath::Sampled { grid, samples } => MatrixPath::Sampled {
                grid: *grid,
                samples: samples.iter().map(f).collect(),
            },
        }
    }

    /// Adds a constant matrix to every sample.
    pub fn shifted(&self, delta: &DMatrix<f64>) -> Self {
        self.map(|m| m + delta)
    }
}

/// Evaluates `path` at `s`, rejecting times outside `horizon`.
pub fn eval_path(path: &MatrixPath, horizon: &TimeGrid, s: f64) -> Result<DMatrix<f64>> {
    if !horizon.contains(s) {
        return Err(MflqError::OutOfRange {
            s,
            t0: horizon.t0,
            t_end: horizon.t_end,
        });
    }
    if let MatrixPath::Sampled { grid, .. } = path {
        if !grid.contains(s) {
            return Err(MflqError::OutOfRange {
                s,
                t0: grid.t0,
                t_end: grid.t_end,
            });
        }
    }
    Ok(path.at(s))
}

/// `f0(s) + f1(s) W(s)` with vector-valued parts.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseAffinePath {
    pub const_part: MatrixPath,
    pub noise_part: MatrixPath,
}

impl NoiseAffinePath {
    pub fn zeros(n: usize) -> Self {
        Self {
            const_part: MatrixPath::zeros(n, 1),
            noise_part: MatrixPath::zeros(n, 1),
        }
    }

    pub fn constant(c0: DVector<f64>, c1: DVector<f64>) -> Self {
        Self {
            const_part: MatrixPath::from_vector(c0),
            noise_part: MatrixPath::from_vector(c1),
        }
    }

    pub fn at(&self, s: f64) -> (DVector<f64>, DVector<f64>) {
        (self.const_part.vector_at(s), self.noise_part.vector_at(s))
    }

    pub fn is_zero(&self) -> bool {
        self.const_part.is_zero() && self.noise_part.is_zero()
    }

    pub fn len(&self) -> usize {
        self.const_part.shape().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// State-equation coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub a: MatrixPath,
    pub a_bar: MatrixPath,
    pub b: MatrixPath,
    pub b_bar: MatrixPath,
    pub c: MatrixPath,
    pub c_bar: MatrixPath,
    pub d: MatrixPath,
    pub d_bar: MatrixPath,
}

/// Quadratic weights of the cost. `s`, `s_bar` are `m x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub q: MatrixPath,
    pub q_bar: MatrixPath,
    pub s: MatrixPath,
    pub s_bar: MatrixPath,
    pub r: MatrixPath,
    pub r_bar: MatrixPath,
    pub g: DMatrix<f64>,
    pub g_bar: DMatrix<f64>,
}

/// Inhomogeneous terms restricted to the noise-affine class.
/// The terminal linear weight is `g = g0 + g1 W(T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Inhomogeneity {
    pub b: NoiseAffinePath,
    pub sigma: NoiseAffinePath,
    pub q: NoiseAffinePath,
    pub rho: NoiseAffinePath,
    pub q_bar: MatrixPath,
    pub rho_bar: MatrixPath,
    pub g0: DVector<f64>,
    pub g1: DVector<f64>,
    pub g_bar: DVector<f64>,
}

impl Inhomogeneity {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            b: NoiseAffinePath::zeros(n),
            sigma: NoiseAffinePath::zeros(n),
            q: NoiseAffinePath::zeros(n),
            rho: NoiseAffinePath::zeros(m),
            q_bar: MatrixPath::zeros(n, 1),
            rho_bar: MatrixPath::zeros(m, 1),
            g0: DVector::zeros(n),
            g1: DVector::zeros(n),
            g_bar: DVector::zeros(n),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.b.is_zero()
            && self.sigma.is_zero()
            && self.q.is_zero()
            && self.rho.is_zero()
            && self.q_bar.is_zero()
            && self.rho_bar.is_zero()
            && self.g0.iter().all(|&x| x == 0.0)
            && self.g1.iter().all(|&x| x == 0.0)
            && self.g_bar.iter().all(|&x| x == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemData {
    pub n: usize,
    pub m: usize,
    pub horizon: TimeGrid,
    pub coefficients: Coefficients,
    pub weights: Weights,
    pub inhomogeneity: Inhomogeneity,
}

/// Coefficients and weights frozen at one time.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub a: DMatrix<f64>,
    pub a_bar: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub b_bar: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub c_bar: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub d_bar: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub q_bar: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub s_bar: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub r_bar: DMatrix<f64>,
}

/// Inhomogeneities frozen at one time: `f(s) = f0 + f1 W(s)`.
#[derive(Debug, Clone)]
pub struct InhomSnapshot {
    pub b0: DVector<f64>,
    pub b1: DVector<f64>,
    pub sigma0: DVector<f64>,
    pub sigma1: DVector<f64>,
    pub q0: DVector<f64>,
    pub q1: DVector<f64>,
    pub rho0: DVector<f64>,
    pub rho1: DVector<f64>,
    pub q_bar: DVector<f64>,
    pub rho_bar: DVector<f64>,
}

impl ProblemData {
    /// All coefficient, weight and inhomogeneity paths zero.
    pub fn zero(n: usize, m: usize, horizon: TimeGrid) -> Self {
        let z = MatrixPath::zeros;
        Self {
            n,
            m,
            horizon,
            coefficients: Coefficients {
                a: z(n, n),
                a_bar: z(n, n),
                b: z(n, m),
                b_bar: z(n, m),
                c: z(n, n),
                c_bar: z(n, n),
                d: z(n, m),
                d_bar: z(n, m),
            },
            weights: Weights {
                q: z(n, n),
                q_bar: z(n, n),
                s: z(m, n),
                s_bar: z(m, n),
                r: z(m, m),
                r_bar: z(m, m),
                g: DMatrix::zeros(n, n),
                g_bar: DMatrix::zeros(n, n),
            },
            inhomogeneity: Inhomogeneity::zeros(n, m),
        }
    }

    pub fn snapshot(&self, s: f64) -> Snapshot {
        let c = &self.coefficients;
        let w = &self.weights;
        Snapshot {
            a: c.a.at(s),
            a_bar: c.a_bar.at(s),
            b: c.b.at(s),
            b_bar: c.b_bar.at(s),
            c: c.c.at(s),
            c_bar: c.c_bar.at(s),
            d: c.d.at(s),
            d_bar: c.d_bar.at(s),
            q: w.q.at(s),
            q_bar: w.q_bar.at(s),
            s: w.s.at(s),
            s_bar: w.s_bar.at(s),
            r: w.r.at(s),
            r_bar: w.r_bar.at(s),
        }
    }

    pub fn inhom_at(&self, s: f64) -> InhomSnapshot {
        let h = &self.inhomogeneity;
        let (b0, b1) = h.b.at(s);
        let (sigma0, sigma1) = h.sigma.at(s);
        let (q0, q1) = h.q.at(s);
        let (rho0, rho1) = h.rho.at(s);
        InhomSnapshot {
            b0,
            b1,
            sigma0,
            sigma1,
            q0,
            q1,
            rho0,
            rho1,
            q_bar: h.q_bar.vector_at(s),
            rho_bar: h.rho_bar.vector_at(s),
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        self.inhomogeneity.is_zero()
    }

    /// True when every mean-field coefficient and weight vanishes.
    pub fn has_no_mean_field(&self) -> bool {
        let c = &self.coefficients;
        let w = &self.weights;
        [&c.a_bar, &c.b_bar, &c.c_bar, &c.d_bar, &w.q_bar, &w.s_bar, &w.r_bar]
            .iter()
            .all(|p| p.is_zero())
            && w.g_bar.iter().all(|&x| x == 0.0)
    }

    /// Copy with every mean-field coefficient and weight set to zero.
    pub fn without_mean_field(&self) -> Self {
        let mut p = self.clone();
        let (n, m) = (self.n, self.m);
        let c = &mut p.coefficients;
        c.a_bar = MatrixPath::zeros(n, n);
        c.b_bar = MatrixPath::zeros(n, m);
        c.c_bar = MatrixPath::zeros(n, n);
        c.d_bar = MatrixPath::zeros(n, m);
        let w = &mut p.weights;
        w.q_bar = MatrixPath::zeros(n, n);
        w.s_bar = MatrixPath::zeros(m, n);
        w.r_bar = MatrixPath::zeros(m, m);
        w.g_bar = DMatrix::zeros(n, n);
        p
    }

    /// Copy on a different horizon resolution.
    pub fn with_steps(&self, n_steps: usize) -> Result<Self> {
        let mut p = self.clone();
        p.horizon = self.horizon.with_steps(n_steps)?;
        Ok(p)
    }
}

/// Returns the homogeneous problem: every inhomogeneity zeroed, coefficient
/// and weight paths untouched.
pub fn strip_inhomogeneous(p: &ProblemData) -> ProblemData {
    let mut out = p.clone();
    out.inhomogeneity = Inhomogeneity::zeros(p.n, p.m);
    out
}

/// One failed shape or symmetry constraint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub field: String,
    pub node: Option<usize>,
    pub message: String,
}

impl Violation {
    pub fn is_inhomogeneity(&self) -> bool {
        self.field.starts_with("inhomogeneity.")
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some(k) => write!(f, "{} (node {}): {}", self.field, k, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).norm()
}

pub(crate) fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    m.is_square() && asymmetry(m) <= rel_tol * (1.0 + m.norm())
}

struct Checker<'a> {
    horizon: &'a TimeGrid,
    out: Vec<Violation>,
}

impl Checker<'_> {
    fn push(&mut self, field: &str, node: Option<usize>, message: String) {
        self.out.push(Violation {
            field: field.to_string(),
            node,
            message,
        });
    }

    fn path(&mut self, field: &str, path: &MatrixPath, shape: (usize, usize), symmetric: bool) {
        if let MatrixPath::Sampled { grid, .. } = path {
            let slack = 1e-12 * (1.0 + grid.t_end.abs());
            if (grid.t0 - self.horizon.t0).abs() > slack
                || (grid.t_end - self.horizon.t_end).abs() > slack
            {
                self.push(
                    field,
                    None,
                    format!(
                        "sample grid [{}, {}] does not span the horizon [{}, {}]",
                        grid.t0, grid.t_end, self.horizon.t0, self.horizon.t_end
                    ),
                );
            }
        }
        let indexed = matches!(path, MatrixPath::Sampled { .. });
        for (k, m) in path.samples().iter().enumerate() {
            let node = indexed.then_some(k);
            if m.shape() != shape {
                self.push(
                    field,
                    node,
                    format!("expected shape {}x{}, got {}x{}", shape.0, shape.1, m.nrows(), m.ncols()),
                );
                // Shape errors make the remaining checks meaningless.
                return;
            }
            if m.iter().any(|x| !x.is_finite()) {
                self.push(field, node, "non-finite entry".into());
            }
            if symmetric && !is_symmetric(m, SYMMETRY_TOL) {
                self.push(
                    field,
                    node,
                    format!("not symmetric (asymmetry {:.3e})", asymmetry(m)),
                );
            }
        }
    }

    fn matrix(&mut self, field: &str, m: &DMatrix<f64>, shape: (usize, usize), symmetric: bool) {
        self.path(field, &MatrixPath::Constant(m.clone()), shape, symmetric);
    }

    fn vector(&mut self, field: &str, v: &DVector<f64>, n: usize) {
        if v.len() != n {
            self.push(field, None, format!("expected length {n}, got {}", v.len()));
        } else if v.iter().any(|x| !x.is_finite()) {
            self.push(field, None, "non-finite entry".into());
        }
    }

    fn affine(&mut self, field: &str, path: &NoiseAffinePath, n: usize) {
        self.path(&format!("{field}.const"), &path.const_part, (n, 1), false);
        self.path(&format!("{field}.noise"), &path.noise_part, (n, 1), false);
    }
}

/// Lists every shape, finiteness and symmetry violation. Empty means valid.
pub fn validate(p: &ProblemData) -> Vec<Violation> {
    let (n, m) = (p.n, p.m);
    let mut ck = Checker {
        horizon: &p.horizon,
        out: Vec::new(),
    };
    if n == 0 || m == 0 {
        ck.push("dims", None, format!("dimensions must be positive, got n={n}, m={m}"));
        return ck.out;
    }
    if let Err(e) = TimeGrid::new(p.horizon.t0, p.horizon.t_end, p.horizon.n_steps) {
        ck.push("horizon", None, e.to_string());
    }
    let c = &p.coefficients;
    ck.path("coefficients.A", &c.a, (n, n), false);
    ck.path("coefficients.A_bar", &c.a_bar, (n, n), false);
    ck.path("coefficients.B", &c.b, (n, m), false);
    ck.path("coefficients.B_bar", &c.b_bar, (n, m), false);
    ck.path("coefficients.C", &c.c, (n, n), false);
    ck.path("coefficients.C_bar", &c.c_bar, (n, n), false);
    ck.path("coefficients.D", &c.d, (n, m), false);
    ck.path("coefficients.D_bar", &c.d_bar, (n, m), false);
    let w = &p.weights;
    ck.path("weights.Q", &w.q, (n, n), true);
    ck.path("weights.Q_bar", &w.q_bar, (n, n), true);
    ck.path("weights.S", &w.s, (m, n), false);
    ck.path("weights.S_bar", &w.s_bar, (m, n), false);
    ck.path("weights.R", &w.r, (m, m), true);
    ck.path("weights.R_bar", &w.r_bar, (m, m), true);
    ck.matrix("weights.G", &w.g, (n, n), true);
    ck.matrix("weights.G_bar", &w.g_bar, (n, n), true);
    let h = &p.inhomogeneity;
    ck.affine("inhomogeneity.b", &h.b, n);
    ck.affine("inhomogeneity.sigma", &h.sigma, n);
    ck.affine("inhomogeneity.q", &h.q, n);
    ck.affine("inhomogeneity.rho", &h.rho, m);
    ck.path("inhomogeneity.q_bar", &h.q_bar, (n, 1), false);
    ck.path("inhomogeneity.rho_bar", &h.rho_bar, (m, 1), false);
    ck.vector("inhomogeneity.g0", &h.g0, n);
    ck.vector("inhomogeneity.g1", &h.g1, n);
    ck.vector("inhomogeneity.g_bar", &h.g_bar, n);
    ck.out
}

/// Fails with [`MflqError::Validation`] when `validate` reports anything.
pub fn ensure_valid(p: &ProblemData) -> Result<()> {
    let v = validate(p);
    if v.is_empty() {
        Ok(())
    } else {
        Err(MflqError::Validation(v))
    }
}

/// Initial state `xi = mean + brownian_load * W(t) + indep_load * G` with `G`
/// standard normal and independent of `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialLaw {
    pub mean: DVector<f64>,
    pub brownian_load: DVector<f64>,
    pub indep_load: DMatrix<f64>,
}

impl InitialLaw {
    pub fn deterministic(x: DVector<f64>) -> Self {
        let n = x.len();
        Self {
            mean: x,
            brownian_load: DVector::zeros(n),
            indep_load: DMatrix::zeros(n, n),
        }
    }

    pub fn zero(n: usize) -> Self {
        Self::deterministic(DVector::zeros(n))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn check(&self, n: usize) -> Result<()> {
        if self.mean.len() != n
            || self.brownian_load.len() != n
            || self.indep_load.shape() != (n, n)
        {
            return Err(MflqError::InvalidLaw(format!(
                "expected mean/brownian_load of length {n} and a {n}x{n} indep_load"
            )));
        }
        let finite = self
            .mean
            .iter()
            .chain(self.brownian_load.iter())
            .chain(self.indep_load.iter())
            .all(|x| x.is_finite());
        if !finite {
            return Err(MflqError::InvalidLaw("non-finite entry".into()));
        }
        Ok(())
    }

    /// `t c c^T + L L^T`.
    pub fn covariance(&self, t: f64) -> DMatrix<f64> {
        let c = &self.brownian_load;
        c * c.transpose() * t + &self.indep_load * self.indep_load.transpose()
    }

    /// `E[xi xi^T]`.
    pub fn second_moment(&self, t: f64) -> DMatrix<f64> {
        self.covariance(t) + &self.mean * self.mean.transpose()
    }

    /// `E[xi] E[xi]^T`.
    pub fn mean_outer(&self) -> DMatrix<f64> {
        &self.mean * self.mean.transpose()
    }
}

/// Which Brownian value multiplies the noise part of a control offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", content = "time", rename_all = "snake_case")]
pub enum NoiseAnchor {
    /// `v(s) = v0(s) + v1(s) W(s)`.
    #[default]
    Running,
    /// `v(s) = v0(s) + v1(s) W(tau)` for a fixed `tau` no later than the
    /// start of the horizon.
    Frozen(f64),
}

/// Closed-loop strategy `u = Theta X + Theta_bar E[X] + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSpec {
    pub feedback: MatrixPath,
    pub mean_feedback: MatrixPath,
    pub offset: NoiseAffinePath,
    pub anchor: NoiseAnchor,
}

impl ControlSpec {
    pub fn zero(n: usize, m: usize) -> Self {
        Self {
            feedback: MatrixPath::zeros(m, n),
            mean_feedback: MatrixPath::zeros(m, n),
            offset: NoiseAffinePath::zeros(m),
            anchor: NoiseAnchor::Running,
        }
    }

    /// Pure feedback `(Theta, Theta_bar, 0)`.
    pub fn feedback(theta: MatrixPath, theta_bar: MatrixPath) -> Self {
        let m = theta.shape().0;
        Self {
            feedback: theta,
            mean_feedback: theta_bar,
            offset: NoiseAffinePath::zeros(m),
            anchor: NoiseAnchor::Running,
        }
    }

    pub fn check(&self, n: usize, m: usize, horizon: &TimeGrid) -> Result<()> {
        let bad = |what: &str, got: (usize, usize), want: (usize, usize)| {
            MflqError::Dimension(format!(
                "control {what}: expected {}x{}, got {}x{}",
                want.0, want.1, got.0, got.1
            ))
        };
        if self.feedback.shape() != (m, n) {
            return Err(bad("feedback", self.feedback.shape(), (m, n)));
        }
        if self.mean_feedback.shape() != (m, n) {
            return Err(bad("mean_feedback", self.mean_feedback.shape(), (m, n)));
        }
        if self.offset.const_part.shape() != (m, 1) {
            return Err(bad("offset.const", self.offset.const_part.shape(), (m, 1)));
        }
        if self.offset.noise_part.shape() != (m, 1) {
            return Err(bad("offset.noise", self.offset.noise_part.shape(), (m, 1)));
        }
        if let NoiseAnchor::Frozen(tau) = self.anchor {
            if !(0.0..=horizon.t0 + 1e-12).contains(&tau) {
                return Err(MflqError::Precondition(format!(
                    "frozen anchor time {tau} must lie in [0, {}]",
                    horizon.t0
                )));
            }
        }
        Ok(())
    }
}
