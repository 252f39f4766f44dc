//! Optimal closed-loop strategy and value function.
//!
//! The free parameters of the optimal family are fixed to zero, so
//! `Θ* = Θ`, `Θ̄* = Γ - Θ` and `v* = φ̄ + φ1 W`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::affine::{solve_affine, AffineSolution};
use crate::error::Result;
use crate::gre::{gains, integrate_gre, GreSolution};
use crate::ode::trapezoid;
use crate::problem::{ControlSpec, InitialLaw, MatrixPath, NoiseAffinePath, NoiseAnchor, ProblemData};

#[derive(Debug, Clone)]
pub struct ClosedLoopSolution {
    pub strategy: ControlSpec,
    pub gre: GreSolution,
    pub affine: AffineSolution,
    /// Regular GRE solution and feasible corrections.
    pub solvable: bool,
}

impl ClosedLoopSolution {
    pub fn problem(&self) -> &ProblemData {
        &self.gre.problem
    }
}

/// Builds `(Θ, Γ - Θ, φ̄ + φ1 W)` from solved GRE and affine stages.
pub fn assemble(gre: GreSolution, affine: AffineSolution) -> ClosedLoopSolution {
    let g = gains(&gre);
    let theta_bar: Vec<DMatrix<f64>> = gre
        .nodes
        .iter()
        .map(|st| st.gamma() - st.theta())
        .collect();
    let strategy = ControlSpec {
        feedback: g.theta,
        mean_feedback: MatrixPath::sampled(gre.grid, theta_bar).expect("one gain per node"),
        offset: NoiseAffinePath {
            const_part: affine.phi_bar_path(),
            noise_part: affine.phi1_path(),
        },
        anchor: NoiseAnchor::Running,
    };
    let solvable = gre.regular() && affine.feasible;
    ClosedLoopSolution {
        strategy,
        gre,
        affine,
        solvable,
    }
}

/// Integrates the GREs and the affine equations on `n_steps` uniform steps
/// and assembles the strategy. Non-solvable problems still get their
/// pseudoinverse-based strategy, flagged through `solvable`.
pub fn synthesize(p: &ProblemData, n_steps: usize) -> Result<ClosedLoopSolution> {
    let gre = integrate_gre(p, n_steps)?;
    let affine = solve_affine(&gre)?;
    Ok(assemble(gre, affine))
}

#[derive(Debug, Clone, Serialize)]
pub struct ValueReport {
    pub value: f64,
    /// False when the problem is not closed-loop solvable; the value is then
    /// only a weak value candidate.
    pub certified: bool,
    pub quadratic_part: f64,
    pub linear_part: f64,
    pub integral_part: f64,
}

/// `V(t, ξ)` for `ξ = m + c W(t) + L G` at the start of the horizon.
pub fn value(sol: &ClosedLoopSolution, law: &InitialLaw) -> Result<ValueReport> {
    let p = sol.problem();
    law.check(p.n)?;
    let grid = sol.gre.grid;
    let t = grid.t0;
    let a = &sol.affine;
    let (p0, pi0) = (sol.gre.p(0), sol.gre.pi(0));
    let m = &law.mean;

    let quadratic = (p0 * law.covariance(t)).trace() + (pi0 * m).dot(m);
    let linear = 2.0 * t * a.eta1[0].dot(&law.brownian_load) + 2.0 * a.eta_bar[0].dot(m);

    let integrand: Vec<f64> = sol
        .gre
        .nodes
        .iter()
        .enumerate()
        .map(|(k, st)| {
            let s = st.time;
            let f = p.inhom_at(s);
            let pp = &st.p;
            let (eta1, eta_bar) = (&a.eta1[k], &a.eta_bar[k]);
            let (phi1, phi_bar) = (&a.phi1[k], &a.phi_bar[k]);
            (pp * &f.sigma0).dot(&f.sigma0) + s * (pp * &f.sigma1).dot(&f.sigma1)
                + 2.0 * s * eta1.dot(&f.b1)
                + 2.0 * eta1.dot(&f.sigma0)
                + 2.0 * eta_bar.dot(&f.b0)
                - s * (st.sigma() * phi1).dot(phi1)
                - (st.sigma_bar() * phi_bar).dot(phi_bar)
        })
        .collect();
    let integral = trapezoid(&integrand, grid.step());
    Ok(ValueReport {
        value: quadratic + linear + integral,
        certified: sol.solvable,
        quadratic_part: quadratic,
        linear_part: linear,
        integral_part: integral,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::problem::{strip_inhomogeneous, TimeGrid};
    use nalgebra::DVector;

    fn x1(v: f64) -> InitialLaw {
        InitialLaw::deterministic(DVector::from_element(1, v))
    }

    #[test]
    fn scalar_classic_strategy_and_value() {
        let sol = synthesize(&presets::scalar_classic(), 1000).unwrap();
        assert!(sol.solvable);
        for s in sol.gre.grid.nodes() {
            assert!((sol.strategy.feedback.at(s)[(0, 0)] + 1.0 / (2.0 - s)).abs() < 1e-8);
            assert_eq!(sol.strategy.mean_feedback.at(s)[(0, 0)], 0.0);
        }
        assert!(sol.strategy.offset.is_zero());
        let v = value(&sol, &x1(1.0)).unwrap();
        assert!((v.value - 0.5).abs() < 1e-8);
        assert!(v.certified);
    }

    #[test]
    fn example31_weak_value() {
        let sol = synthesize(&presets::example31(0.5), 100).unwrap();
        assert!(!sol.solvable);
        for x in [0.0, 1.0, -3.0] {
            let v = value(&sol, &x1(x)).unwrap();
            assert!((v.value - 2.0 * x * x).abs() <= 1e-12);
            assert!(!v.certified);
        }
    }

    #[test]
    fn zero_problem_is_solvable_with_zero_value() {
        let p = ProblemData::zero(2, 1, TimeGrid::new(0.0, 1.0, 10).unwrap());
        let sol = synthesize(&p, 10).unwrap();
        assert!(sol.solvable);
        let law = presets::random_law(2, 1);
        assert_eq!(value(&sol, &law).unwrap().value, 0.0);
    }

    #[test]
    fn gains_sum_to_gamma() {
        let sol = synthesize(&presets::random_spd(2, 2, 3), 50).unwrap();
        for (k, st) in sol.gre.nodes.iter().enumerate() {
            let s = sol.gre.grid.node(k);
            let sum = sol.strategy.feedback.at(s) + sol.strategy.mean_feedback.at(s);
            assert!((sum - st.gamma()).amax() <= 1e-15);
        }
    }

    #[test]
    fn homogeneous_value_is_the_quadratic_form() {
        let p = strip_inhomogeneous(&presets::random_spd(2, 2, 6));
        let sol = synthesize(&p, 80).unwrap();
        let law = presets::random_law(2, 6);
        let t = p.horizon.t0;
        let want = (sol.gre.p(0) * law.covariance(t)).trace() + (sol.gre.pi(0) * &law.mean).dot(&law.mean);
        assert!((value(&sol, &law).unwrap().value - want).abs() <= 1e-12);
    }

    #[test]
    fn homogeneous_value_scales_quadratically_in_the_mean() {
        let p = strip_inhomogeneous(&presets::random_spd(3, 2, 2));
        let sol = synthesize(&p, 40).unwrap();
        let m = DVector::from_vec(vec![0.3, -1.0, 0.7]);
        let v = |a: f64| value(&sol, &InitialLaw::deterministic(&m * a)).unwrap().value;
        assert_eq!(v(0.0), 0.0);
        assert!((v(2.0) - 4.0 * v(1.0)).abs() <= 1e-12 * v(2.0).abs().max(1.0));
    }

    #[test]
    fn classical_problem_value_uses_p_only() {
        let p = strip_inhomogeneous(&presets::random_spd(2, 2, 9)).without_mean_field();
        let sol = synthesize(&p, 80).unwrap();
        let mut law = presets::random_law(2, 9);
        law.brownian_load = DVector::zeros(2);
        let p0 = sol.gre.p(0);
        let want = (p0 * &law.indep_load * law.indep_load.transpose()).trace() + (p0 * &law.mean).dot(&law.mean);
        assert!((value(&sol, &law).unwrap().value - want).abs() <= 1e-10);
    }
}
