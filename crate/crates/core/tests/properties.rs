//! Property tests over seeded random problems.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

use mflq::affine::solve_affine;
use mflq::document::{problem_from_text, problem_to_value, to_text};
use mflq::gre::{assess_regularity, gains, integrate_gre, DEFAULT_TOL};
use mflq::moments::{homogeneous_cost, moment_cost, propagate_moments};
use mflq::presets;
use mflq::problem::{strip_inhomogeneous, validate, ControlSpec, InitialLaw, MatrixPath, ProblemData, TimeGrid};
use mflq::sim::simulate;
use mflq::synthesis::{synthesize, value};

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn problem(n: usize, m: usize, seed: u64, steps: usize) -> ProblemData {
    presets::random_spd(n, m, seed).with_steps(steps).unwrap()
}

fn max_norm(ms: impl Iterator<Item = f64>) -> f64 {
    ms.fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn sampled_paths_are_exact_at_nodes_and_affine_between(
        vals in proptest::collection::vec(-5.0f64..5.0, 6),
        k in 0usize..5,
        frac in 0.0f64..1.0,
    ) {
        let grid = TimeGrid::new(0.0, 2.0, 5).unwrap();
        let samples: Vec<_> = vals.iter().map(|&v| DMatrix::from_element(1, 1, v)).collect();
        let path = MatrixPath::sampled(grid, samples).unwrap();
        for (j, &v) in vals.iter().enumerate() {
            prop_assert_eq!(path.at(grid.node(j))[(0, 0)], v);
        }
        let (a, b) = (grid.node(k), grid.node(k + 1));
        let s = a + frac * (b - a);
        let want = vals[k] + frac * (vals[k + 1] - vals[k]);
        prop_assert!((path.at(s)[(0, 0)] - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn stripping_is_idempotent_and_keeps_core_violations(seed in 0u64..1000, n in 1usize..4, m in 1usize..4) {
        let mut p = presets::random_spd(n, m, seed);
        // Break one weight and one inhomogeneity so both kinds of violation occur.
        p.weights.r = MatrixPath::constant(DMatrix::from_fn(m, m, |i, j| if i <= j { 1.0 } else { 0.0 } + i as f64));
        p.inhomogeneity.g0[0] = f64::NAN;
        let s = strip_inhomogeneous(&p);
        prop_assert_eq!(&strip_inhomogeneous(&s), &s);
        let core: Vec<String> = validate(&p).into_iter().filter(|v| !v.is_inhomogeneity()).map(|v| v.to_string()).collect();
        let stripped: Vec<String> = validate(&s).into_iter().map(|v| v.to_string()).collect();
        prop_assert_eq!(core, stripped);
    }
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn riccati_solutions_are_symmetric_with_exact_terminal_values(seed in 0u64..1000, n in 1usize..4, m in 1usize..4) {
        let p = problem(n, m, seed, 200);
        let sol = integrate_gre(&p, 200).unwrap();
        let asym = max_norm(sol.nodes.iter().map(|st| (&st.p - st.p.transpose()).amax().max((&st.pi - st.pi.transpose()).amax())));
        prop_assert!(asym <= 1e-9);
        let last = sol.nodes.last().unwrap();
        prop_assert_eq!(&last.p, &p.weights.g);
        prop_assert_eq!(&last.pi, &(&p.weights.g + &p.weights.g_bar));
    }

    #[test]
    fn regular_solutions_have_small_feedback_residuals(seed in 0u64..1000, n in 1usize..4, m in 1usize..4) {
        let sol = integrate_gre(&problem(n, m, seed, 200), 200).unwrap();
        prop_assert!(assess_regularity(&sol, DEFAULT_TOL).regular);
        let g = gains(&sol);
        prop_assert!(max_norm(g.theta_residual.iter().copied()) <= 1e-7);
        prop_assert!(max_norm(g.gamma_residual.iter().copied()) <= 1e-7);
    }

    #[test]
    fn bars_off_means_pi_equals_p(seed in 0u64..1000, n in 1usize..4, m in 1usize..4) {
        let p = problem(n, m, seed, 200).without_mean_field();
        let sol = integrate_gre(&p, 200).unwrap();
        prop_assert!(max_norm(sol.nodes.iter().map(|st| (&st.pi - &st.p).amax())) <= 1e-10);
    }

    #[test]
    fn homogeneous_problems_have_zero_affine_terms(seed in 0u64..1000, n in 1usize..4, m in 1usize..4) {
        let p = strip_inhomogeneous(&problem(n, m, seed, 100));
        let a = solve_affine(&integrate_gre(&p, 100).unwrap()).unwrap();
        for v in [&a.eta0, &a.eta1, &a.eta_bar, &a.phi1, &a.phi_bar] {
            prop_assert!(v.iter().all(|x| x.iter().all(|&e| e == 0.0)));
        }
        prop_assert!(a.feasible);
    }

    #[test]
    fn corrections_solve_their_normal_equations(seed in 0u64..1000, n in 1usize..4, m in 1usize..4) {
        let p = problem(n, m, seed, 100);
        let sol = synthesize(&p, 100).unwrap();
        prop_assert!(sol.affine.feasible);
        let a = &sol.affine;
        for (k, st) in sol.gre.nodes.iter().enumerate() {
            let c = p.snapshot(st.time);
            let f = p.inhom_at(st.time);
            let arg1 = c.b.transpose() * &a.eta1[k] + c.d.transpose() * (&st.p * &f.sigma1) + &f.rho1;
            let arg_bar = (&c.b + &c.b_bar).transpose() * &a.eta_bar[k]
                + (&c.d + &c.d_bar).transpose() * (&st.p * &f.sigma0 + &a.eta1[k])
                + &f.rho0
                + &f.rho_bar;
            prop_assert!((st.sigma() * &a.phi1[k] + arg1).amax() <= 1e-7);
            prop_assert!((st.sigma_bar() * &a.phi_bar[k] + arg_bar).amax() <= 1e-7);
        }
    }

    #[test]
    fn strategy_gains_sum_to_gamma(seed in 0u64..1000, n in 1usize..4, m in 1usize..4) {
        let sol = synthesize(&problem(n, m, seed, 100), 100).unwrap();
        for st in &sol.gre.nodes {
            let total = sol.strategy.feedback.at(st.time) + sol.strategy.mean_feedback.at(st.time);
            // Θ̄ is stored as Γ - Θ, so the sum recovers Γ up to one rounding.
            let scale = 1.0 + st.gamma().amax();
            prop_assert!((total - st.gamma()).amax() <= 4.0 * f64::EPSILON * scale);
        }
    }

    #[test]
    fn homogeneous_value_formula(seed in 0u64..1000, n in 1usize..4, m in 1usize..4, alpha in -3.0f64..3.0) {
        let p = strip_inhomogeneous(&problem(n, m, seed, 100));
        let sol = synthesize(&p, 100).unwrap();
        let law = presets::random_law(n, seed);
        let t = p.horizon.t0;
        let want = (sol.gre.p(0) * law.covariance(t)).trace() + (sol.gre.pi(0) * &law.mean).dot(&law.mean);
        let got = value(&sol, &law).unwrap().value;
        prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));

        let v = |a: f64| value(&sol, &InitialLaw::deterministic(&law.mean * a)).unwrap().value;
        let (v1, va) = (v(1.0), v(alpha));
        prop_assert!((va - alpha * alpha * v1).abs() <= 1e-10 * (1.0 + v1.abs()) * (1.0 + alpha * alpha));
    }

    #[test]
    fn classical_value_uses_p_only(seed in 0u64..1000, n in 1usize..4, m in 1usize..4) {
        let p = strip_inhomogeneous(&problem(n, m, seed, 100)).without_mean_field();
        let sol = synthesize(&p, 100).unwrap();
        let mut law = presets::random_law(n, seed);
        law.brownian_load = DVector::zeros(n);
        let p0 = sol.gre.p(0);
        let want = (p0 * &law.indep_load * law.indep_load.transpose()).trace() + (p0 * &law.mean).dot(&law.mean);
        prop_assert!((value(&sol, &law).unwrap().value - want).abs() <= 1e-10);
    }

    #[test]
    fn moment_covariance_stays_psd_and_cost_is_linear(seed in 0u64..1000, n in 1usize..4, m in 1usize..4) {
        let p = strip_inhomogeneous(&problem(n, m, seed, 100));
        let th = MatrixPath::constant(DMatrix::from_fn(m, n, |i, j| 0.3 * ((i + 2 * j) as f64 - 1.0)));
        let tb = MatrixPath::constant(DMatrix::from_fn(m, n, |i, j| -0.2 * (i as f64 - j as f64)));
        let law = presets::random_law(n, seed);
        let (x0, y0) = (law.second_moment(p.horizon.t0), law.mean_outer());
        let mp = propagate_moments(&p, &th, &tb, &x0, &y0).unwrap();
        for (x, y) in mp.x.iter().zip(&mp.y) {
            let lmin = SymmetricEigen::new(x - y).eigenvalues.min();
            prop_assert!(lmin >= -1e-8);
        }
        let j = homogeneous_cost(&p, &th, &tb, &mp);
        let j2 = moment_cost(&p, &th, &tb, &(&x0 * 2.0), &(&y0 * 2.0)).unwrap();
        prop_assert!((j2 - 2.0 * j).abs() <= 1e-10 * (1.0 + j.abs()));
    }

    #[test]
    fn synthesized_gains_minimize_the_moment_cost(seed in 0u64..1000, bump in proptest::collection::vec(-1.0f64..1.0, 8)) {
        let p = strip_inhomogeneous(&problem(2, 2, seed, 100));
        let sol = synthesize(&p, 100).unwrap();
        let law = presets::random_law(2, seed);
        let (x0, y0) = (law.second_moment(p.horizon.t0), law.mean_outer());
        let (th, tb) = (&sol.strategy.feedback, &sol.strategy.mean_feedback);
        let best = moment_cost(&p, th, tb, &x0, &y0).unwrap();
        let d1 = DMatrix::from_column_slice(2, 2, &bump[..4]);
        let d2 = DMatrix::from_column_slice(2, 2, &bump[4..]);
        let other = moment_cost(&p, &th.shifted(&d1), &tb.shifted(&d2), &x0, &y0).unwrap();
        prop_assert!(best <= other + 1e-9 * (1.0 + best.abs()), "{best} > {other}");
    }

    #[test]
    fn documents_round_trip(seed in 0u64..1000, n in 1usize..4, m in 1usize..4) {
        let p = presets::random_spd(n, m, seed);
        let law = presets::random_law(n, seed);
        let text = to_text(&problem_to_value(&p, Some(&law)));
        let doc = problem_from_text(&text).unwrap();
        prop_assert_eq!(doc.problem, p);
        prop_assert_eq!(doc.law, Some(law));
    }
}

proptest! {
    #![proptest_config(config(6))]

    #[test]
    fn simulation_is_deterministic_per_seed(seed in 0u64..1000) {
        let p = problem(2, 2, seed, 100);
        let sol = synthesize(&p, 100).unwrap();
        let law = presets::random_law(2, seed);
        let a = simulate(&p, &sol.strategy, &law, 700, 50, seed).unwrap();
        let b = simulate(&p, &sol.strategy, &law, 700, 50, seed).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn noiseless_deterministic_controls_have_zero_stderr(seed in 0u64..1000) {
        let mut p = problem(2, 2, seed, 100);
        let z = MatrixPath::zeros;
        p.coefficients.c = z(2, 2);
        p.coefficients.c_bar = z(2, 2);
        p.coefficients.d = z(2, 2);
        p.coefficients.d_bar = z(2, 2);
        p.inhomogeneity.sigma.const_part = z(2, 1);
        p.inhomogeneity.sigma.noise_part = z(2, 1);
        p.inhomogeneity.b.noise_part = z(2, 1);
        p.inhomogeneity.q.noise_part = z(2, 1);
        p.inhomogeneity.rho.noise_part = z(2, 1);
        p.inhomogeneity.g1 = DVector::zeros(2);
        let law = InitialLaw::deterministic(presets::random_law(2, seed).mean);
        let spec = ControlSpec::feedback(MatrixPath::constant(DMatrix::identity(2, 2) * -0.5), MatrixPath::zeros(2, 2));
        let r = simulate(&p, &spec, &law, 64, 100, seed).unwrap();
        prop_assert_eq!(r.cost_stderr, 0.0);
    }
}

#[test]
fn riccati_refinement_is_fourth_order() {
    let p = strip_inhomogeneous(&presets::random_spd(2, 2, 11));
    let p0 = |k: usize| integrate_gre(&p, k).unwrap().p(0).clone();
    let (a, b, c) = (p0(500), p0(1000), p0(2000));
    let coarse = (&a - &b).amax();
    let fine = (&b - &c).amax();
    // Both differences can sit at round-off, where the ratio means nothing.
    assert!(coarse < 16.0 * fine || coarse < 1e-13, "{coarse:e} vs {fine:e}");
}

#[test]
fn qp_oracle_is_first_order_when_the_discretization_is_inexact() {
    // dX = (X + u) ds: Euler is no longer exact for piecewise-constant u.
    let mut p = presets::scalar_classic();
    p.coefficients.a = MatrixPath::scalar(1.0);
    let x = DVector::from_element(1, 1.0);
    let j = |k| mflq::verify::qp_oracle(&p, &x, k).unwrap().cost;
    let (j1, j2, j4) = (j(250), j(500), j(1000));
    let ratio = (j2 - j1).abs() / (j4 - j2).abs();
    assert!((2.0 / 1.5..=3.0).contains(&ratio), "ratio {ratio}");
    let exact = synthesize(&p, 1000).unwrap();
    let v = value(&exact, &InitialLaw::deterministic(x.clone())).unwrap().value;
    assert!((j4 - v).abs() < 1e-2, "{j4} vs {v}");
}
