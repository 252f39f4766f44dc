//! Built-in problems: the mean-field counterexample with a weakly optimal but
//! no optimal closed-loop strategy, the scalar classical regulator with
//! `P(s) = 1 / (2 - s)`, and a seeded generator of well-posed instances.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MflqError, Result};
use crate::problem::{InitialLaw, MatrixPath, NoiseAffinePath, ProblemData, TimeGrid};

pub const PRESET_NAMES: [&str; 3] = ["example31", "scalar_classic", "random_spd"];

/// `dX = (u - E[u]) ds + E[u] dW` on `[t, 1]`, cost `E[X(1)^2] + (E[X(1)])^2`.
pub fn example31(t: f64) -> ProblemData {
    let horizon = TimeGrid::new(t, 1.0, 1000).expect("0 <= t < 1");
    let mut p = ProblemData::zero(1, 1, horizon);
    p.coefficients.b = MatrixPath::scalar(1.0);
    p.coefficients.b_bar = MatrixPath::scalar(-1.0);
    p.coefficients.d_bar = MatrixPath::scalar(1.0);
    p.weights.g = DMatrix::from_element(1, 1, 1.0);
    p.weights.g_bar = DMatrix::from_element(1, 1, 1.0);
    p
}

/// `dX = u ds` on `[0, 1]`, cost `∫ u^2 ds + X(1)^2`.
pub fn scalar_classic() -> ProblemData {
    let horizon = TimeGrid::new(0.0, 1.0, 1000).expect("valid horizon");
    let mut p = ProblemData::zero(1, 1, horizon);
    p.coefficients.b = MatrixPath::scalar(1.0);
    p.weights.r = MatrixPath::scalar(1.0);
    p.weights.g = DMatrix::from_element(1, 1, 1.0);
    p
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.random_range(-1.0..1.0))
}

fn gram(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let m = uniform(rng, n, n, 1.0 / (n as f64).sqrt());
    (m.transpose() * m) * scale
}

fn vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.random_range(-1.0..1.0))
}

fn affine(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> NoiseAffinePath {
    NoiseAffinePath::constant(vector(rng, n, scale), vector(rng, n, scale))
}

/// Seeded well-posed instance on `[0.2, 1]` with constant coefficients.
///
/// `Q ≥ 0.5 I`, `R ≥ I`, `R̄ ≥ 0`, `G ≥ 0.5 I` and a small cross weight keep
/// the classical cost convex, so `P ≥ 0` and `Σ, Σ̄ ≥ I` along the horizon.
/// Every inhomogeneity carries both a constant and a noise part.
pub fn random_spd(n: usize, m: usize, seed: u64) -> ProblemData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = TimeGrid::new(0.2, 1.0, 400).expect("valid horizon");
    let mut p = ProblemData::zero(n, m, horizon);
    let cross = 0.3 / n.max(m) as f64;
    {
        let c = &mut p.coefficients;
        c.a = MatrixPath::constant(uniform(&mut rng, n, n, 0.5));
        c.a_bar = MatrixPath::constant(uniform(&mut rng, n, n, 0.3));
        c.b = MatrixPath::constant(uniform(&mut rng, n, m, 0.7));
        c.b_bar = MatrixPath::constant(uniform(&mut rng, n, m, 0.3));
        c.c = MatrixPath::constant(uniform(&mut rng, n, n, 0.3));
        c.c_bar = MatrixPath::constant(uniform(&mut rng, n, n, 0.2));
        c.d = MatrixPath::constant(uniform(&mut rng, n, m, 0.3));
        c.d_bar = MatrixPath::constant(uniform(&mut rng, n, m, 0.2));
    }
    {
        let w = &mut p.weights;
        w.q = MatrixPath::constant(DMatrix::identity(n, n) * 0.5 + gram(&mut rng, n, 0.5));
        w.q_bar = MatrixPath::constant(gram(&mut rng, n, 0.3));
        w.s = MatrixPath::constant(uniform(&mut rng, m, n, cross));
        w.s_bar = MatrixPath::constant(uniform(&mut rng, m, n, 0.5 * cross));
        w.r = MatrixPath::constant(DMatrix::identity(m, m) + gram(&mut rng, m, 0.5));
        w.r_bar = MatrixPath::constant(gram(&mut rng, m, 0.3));
        w.g = DMatrix::identity(n, n) * 0.5 + gram(&mut rng, n, 0.5);
        w.g_bar = gram(&mut rng, n, 0.3);
    }
    {
        let h = &mut p.inhomogeneity;
        h.b = affine(&mut rng, n, 0.3);
        h.sigma = affine(&mut rng, n, 0.3);
        h.q = affine(&mut rng, n, 0.3);
        h.rho = affine(&mut rng, m, 0.3);
        h.q_bar = MatrixPath::from_vector(vector(&mut rng, n, 0.3));
        h.rho_bar = MatrixPath::from_vector(vector(&mut rng, m, 0.3));
        h.g0 = vector(&mut rng, n, 0.3);
        h.g1 = vector(&mut rng, n, 0.3);
        h.g_bar = vector(&mut rng, n, 0.3);
    }
    p
}

/// Seeded Gaussian initial law matching [`random_spd`].
pub fn random_law(n: usize, seed: u64) -> InitialLaw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a3);
    InitialLaw {
        mean: vector(&mut rng, n, 1.0),
        brownian_load: vector(&mut rng, n, 0.5),
        indep_load: uniform(&mut rng, n, n, 0.3),
    }
}

/// Options for [`preset`].
#[derive(Debug, Clone, Copy)]
pub struct PresetOptions {
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    /// Start time for `example31`.
    pub t: f64,
}

impl Default for PresetOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            n: 2,
            m: 2,
            t: 0.5,
        }
    }
}

/// Named preset with its default initial law.
pub fn preset(name: &str, opts: PresetOptions) -> Result<(ProblemData, InitialLaw)> {
    match name {
        "example31" => {
            if !(0.0..1.0).contains(&opts.t) {
                return Err(MflqError::Precondition(format!(
                    "example31 needs 0 <= t < 1, got {}",
                    opts.t
                )));
            }
            Ok((example31(opts.t), InitialLaw::deterministic(DVector::from_element(1, 1.0))))
        }
        "scalar_classic" => Ok((scalar_classic(), InitialLaw::deterministic(DVector::from_element(1, 1.0)))),
        "random_spd" => {
            if opts.n == 0 || opts.m == 0 {
                return Err(MflqError::Precondition("random_spd needs n, m >= 1".into()));
            }
            Ok((random_spd(opts.n, opts.m, opts.seed), random_law(opts.n, opts.seed)))
        }
        other => Err(MflqError::Precondition(format!(
            "unknown preset `{other}` (expected one of {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::validate;

    #[test]
    fn presets_validate() {
        assert!(validate(&example31(0.5)).is_empty());
        assert!(validate(&scalar_classic()).is_empty());
        for seed in 0..5 {
            assert!(validate(&random_spd(2, 3, seed)).is_empty());
        }
    }

    #[test]
    fn random_spd_is_seed_deterministic() {
        assert_eq!(random_spd(2, 2, 9), random_spd(2, 2, 9));
        assert_ne!(random_spd(2, 2, 9), random_spd(2, 2, 10));
    }

    #[test]
    fn unknown_preset_is_rejected() {
        assert!(preset("nope", PresetOptions::default()).is_err());
    }
}
