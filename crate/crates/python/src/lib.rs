//! Python bindings for the `mflq` solver.
//!
//! Reports come back as plain Python objects (dicts, lists, floats). Initial
//! laws are dicts in the document layout: `{"mean": [..], "brownian_load":
//! [..], "indep_load": {"rows", "cols", "data"}}`, with only `mean` required.

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde_json::{json, Value};

use mflq::document::{self, control_from_text, control_to_value, law_from_value, parse_json, problem_to_value, to_text};
use mflq::gre::{assess_regularity, integrate_gre, DEFAULT_TOL};
use mflq::presets::{self, PresetOptions};
use mflq::problem::{ensure_valid, ControlSpec, InitialLaw, ProblemData};
use mflq::synthesis::{synthesize, ClosedLoopSolution};
use mflq::verify::{run_suite, Suite, SuiteOptions};
use mflq::MflqError as CoreError;

create_exception!(mflq_py, MflqError, PyValueError);
create_exception!(mflq_py, NumericalError, PyRuntimeError);

fn to_py(e: CoreError) -> PyErr {
    match e {
        CoreError::FiniteEscape { .. } | CoreError::UnboundedBelow(_) => NumericalError::new_err(e.to_string()),
        CoreError::Validation(ref v) => {
            let lines: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            MflqError::new_err(format!("{e}: {}", lines.join("; ")))
        }
        _ => MflqError::new_err(e.to_string()),
    }
}

fn value_to_py(py: Python<'_>, v: &Value) -> PyResult<Py<PyAny>> {
    Ok(py.import("json")?.call_method1("loads", (v.to_string(),))?.unbind())
}

fn py_to_value(obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    parse_json(&text).map_err(to_py)
}

/// A validated problem together with its optional default initial law.
#[pyclass(module = "mflq_py", frozen)]
struct Problem {
    problem: ProblemData,
    law: Option<InitialLaw>,
}

impl Problem {
    fn law_or(&self, law: Option<&Bound<'_, PyAny>>) -> PyResult<InitialLaw> {
        match law {
            Some(obj) => law_from_value(&py_to_value(obj)?, "law", self.problem.n).map_err(to_py),
            None => self
                .law
                .clone()
                .ok_or_else(|| MflqError::new_err("no initial law: pass `law` or load a document that has one")),
        }
    }

    fn strategy(&self, name: &str) -> PyResult<ControlSpec> {
        let p = &self.problem;
        match name {
            "optimal" => Ok(synthesize(p, p.horizon.n_steps).map_err(to_py)?.strategy),
            "zero" => Ok(ControlSpec::zero(p.n, p.m)),
            text => control_from_text(text, p.n, p.m, &p.horizon).map_err(to_py),
        }
    }
}

#[pymethods]
impl Problem {
    /// Built-in problem: `example31`, `scalar_classic` or `random_spd`.
    #[staticmethod]
    #[pyo3(signature = (name, seed=0, n=2, m=2, t=0.5))]
    fn preset(name: &str, seed: u64, n: usize, m: usize, t: f64) -> PyResult<Self> {
        let (problem, law) = presets::preset(name, PresetOptions { seed, n, m, t }).map_err(to_py)?;
        Ok(Self { problem, law: Some(law) })
    }

    /// Parses and validates a JSON problem document.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let doc = document::problem_from_text(text).map_err(to_py)?;
        ensure_valid(&doc.problem).map_err(to_py)?;
        Ok(Self {
            problem: doc.problem,
            law: doc.law,
        })
    }

    fn to_json(&self) -> String {
        to_text(&problem_to_value(&self.problem, self.law.as_ref()))
    }

    /// Same problem on a different number of uniform steps.
    fn with_steps(&self, steps: usize) -> PyResult<Self> {
        Ok(Self {
            problem: self.problem.with_steps(steps).map_err(to_py)?,
            law: self.law.clone(),
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.problem.n
    }

    #[getter]
    fn m(&self) -> usize {
        self.problem.m
    }

    /// `(t, T, steps)`.
    #[getter]
    fn horizon(&self) -> (f64, f64, usize) {
        let h = self.problem.horizon;
        (h.t0, h.t_end, h.n_steps)
    }

    #[getter]
    fn law(&self, py: Python<'_>) -> PyResult<Option<Py<PyAny>>> {
        self.law.as_ref().map(|l| value_to_py(py, &document::law_to_value(l))).transpose()
    }

    #[pyo3(signature = (tol=DEFAULT_TOL))]
    fn regularity(&self, py: Python<'_>, tol: f64) -> PyResult<Py<PyAny>> {
        let p = &self.problem;
        let sol = integrate_gre(p, p.horizon.n_steps).map_err(to_py)?;
        let report = assess_regularity(&sol, tol);
        let mut v = serde_json::to_value(&report).expect("serializable");
        v["failed_conditions"] = json!(report.failed().map(|c| c.name.clone()).collect::<Vec<_>>());
        value_to_py(py, &v)
    }

    /// Synthesizes the closed-loop strategy.
    fn solve(&self) -> PyResult<Solution> {
        let p = &self.problem;
        let sol = synthesize(p, p.horizon.n_steps).map_err(to_py)?;
        Ok(Solution { sol, law: self.law.clone() })
    }

    /// Monte Carlo cost of `strategy`: `"optimal"`, `"zero"` or a control
    /// document as JSON text.
    #[pyo3(signature = (law=None, paths=10_000, steps=200, seed=0, strategy="optimal"))]
    fn simulate(
        &self,
        py: Python<'_>,
        law: Option<&Bound<'_, PyAny>>,
        paths: usize,
        steps: usize,
        seed: u64,
        strategy: &str,
    ) -> PyResult<Py<PyAny>> {
        let law = self.law_or(law)?;
        let spec = self.strategy(strategy)?;
        let report = py
            .detach(|| mflq::sim::simulate(&self.problem, &spec, &law, paths, steps, seed))
            .map_err(to_py)?;
        value_to_py(py, &serde_json::to_value(&report).expect("serializable"))
    }

    /// Runs a verification suite and returns the report with a `passed` key.
    #[pyo3(signature = (suite="all", law=None, paths=2000, steps=200, seed=0, controls=20, qp_steps=1000))]
    #[allow(clippy::too_many_arguments)]
    fn verify(
        &self,
        py: Python<'_>,
        suite: &str,
        law: Option<&Bound<'_, PyAny>>,
        paths: usize,
        steps: usize,
        seed: u64,
        controls: usize,
        qp_steps: usize,
    ) -> PyResult<Py<PyAny>> {
        let suite: Suite = suite.parse().map_err(MflqError::new_err)?;
        let law = self.law_or(law)?;
        let p = &self.problem;
        let opts = SuiteOptions {
            gre_steps: p.horizon.n_steps,
            qp_steps,
            n_paths: paths,
            n_steps: steps,
            n_controls: controls,
            seed,
        };
        let report = py
            .detach(|| {
                let sol = synthesize(p, p.horizon.n_steps)?;
                run_suite(p, &sol, &law, suite, &opts)
            })
            .map_err(to_py)?;
        let mut v = serde_json::to_value(&report).expect("serializable");
        v["passed"] = json!(report.passed());
        value_to_py(py, &v)
    }

    fn __repr__(&self) -> String {
        let h = self.problem.horizon;
        format!("Problem(n={}, m={}, horizon=[{}, {}], steps={})", self.problem.n, self.problem.m, h.t0, h.t_end, h.n_steps)
    }
}

/// Riccati solution, affine corrections and the assembled strategy.
#[pyclass(module = "mflq_py", frozen)]
struct Solution {
    sol: ClosedLoopSolution,
    law: Option<InitialLaw>,
}

#[pymethods]
impl Solution {
    #[getter]
    fn solvable(&self) -> bool {
        self.sol.solvable
    }

    #[getter]
    fn regular(&self) -> bool {
        self.sol.gre.regular()
    }

    #[getter]
    fn feasible(&self) -> bool {
        self.sol.affine.feasible
    }

    /// P, Π, Θ, Θ̄, Γ and the offsets at `times` (default: 11 even samples).
    #[pyo3(signature = (times=None))]
    fn report(&self, py: Python<'_>, times: Option<Vec<f64>>) -> PyResult<Py<PyAny>> {
        let ts = match times {
            Some(ts) => {
                let text = ts.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
                mflq::cli::sample_times(&self.sol, Some(&text)).map_err(to_py)?
            }
            None => mflq::cli::sample_times(&self.sol, None).map_err(to_py)?,
        };
        value_to_py(py, &mflq::cli::solve_report(&self.sol, &ts))
    }

    /// Value at `law` (or the problem's default law).
    #[pyo3(signature = (law=None))]
    fn value(&self, py: Python<'_>, law: Option<&Bound<'_, PyAny>>) -> PyResult<Py<PyAny>> {
        let n = self.sol.problem().n;
        let law = match law {
            Some(obj) => law_from_value(&py_to_value(obj)?, "law", n).map_err(to_py)?,
            None => self.law.clone().ok_or_else(|| MflqError::new_err("no initial law given"))?,
        };
        let v = mflq::synthesis::value(&self.sol, &law).map_err(to_py)?;
        value_to_py(py, &serde_json::to_value(&v).expect("serializable"))
    }

    /// The strategy as a control document, loadable by `simulate`.
    fn strategy_json(&self) -> String {
        to_text(&control_to_value(&self.sol.strategy, &self.sol.problem().horizon))
    }
}

#[pymodule]
fn mflq_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Problem>()?;
    m.add_class::<Solution>()?;
    m.add("MflqError", m.py().get_type::<MflqError>())?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    Ok(())
}
