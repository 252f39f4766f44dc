//! Command-line front end.
//!
//! Problems are read from JSON documents (see [`crate::document`]) or from a
//! built-in preset given as `preset:NAME` or `preset:NAME:SEED`. Reports go to
//! standard output as JSON.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure (finite
//! escape), 4 verification failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::document::{self, control_from_text, control_to_value, problem_from_text, problem_to_value, to_text};
use crate::error::{MflqError, Result};
use crate::presets::{self, PresetOptions};
use crate::problem::{ensure_valid, ControlSpec, InitialLaw, ProblemData};
use crate::sim::{mean_ode, simulate};
use crate::synthesis::{synthesize, value, ClosedLoopSolution};
use crate::verify::{run_suite, Suite, SuiteOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "mflq", version, about = "Closed-loop solver for mean-field stochastic LQ problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Input {
    /// Problem document, or `preset:NAME[:SEED]`.
    file: String,
    /// Riccati integration steps (default: the document's horizon steps).
    #[arg(long)]
    gre_steps: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize the optimal closed-loop strategy.
    Solve {
        #[command(flatten)]
        input: Input,
        /// Comma-separated sample times (default: 11 evenly spaced).
        #[arg(long)]
        times: Option<String>,
        /// Write a CSV time series (time, P, Pi, Theta, Gamma, E[X]) here.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write the strategy as a control document.
        #[arg(long)]
        strategy_out: Option<PathBuf>,
        /// Initial law for the E[X] column, `mean=..;brownian=..;indep=..`.
        #[arg(long)]
        law: Option<String>,
    },
    /// Regularity verdict for the Riccati solution.
    Regularity {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value_t = crate::gre::DEFAULT_TOL)]
        tol: f64,
    },
    /// Value function at the initial law.
    Value {
        #[command(flatten)]
        input: Input,
        /// `mean=..;brownian=..;indep=..` (indep row-major n x n).
        #[arg(long)]
        law: Option<String>,
    },
    /// Monte Carlo cost of a strategy.
    Simulate {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `optimal`, `zero`, or a control document.
        #[arg(long, default_value = "optimal")]
        strategy: String,
        #[arg(long)]
        law: Option<String>,
    },
    /// Independent verification suites.
    Verify {
        #[command(flatten)]
        input: Input,
        /// all, qp, completion, battery, degeneration or stationarity.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 2000)]
        paths: usize,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturbed strategies in the lower-bound battery.
        #[arg(long, default_value_t = 20)]
        controls: usize,
        /// Steps of the quadratic program oracle.
        #[arg(long, default_value_t = 1000)]
        qp_steps: usize,
        #[arg(long)]
        law: Option<String>,
    },
    /// Print a preset problem document.
    Example {
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        m: usize,
        /// Start time for example31.
        #[arg(long, default_value_t = 0.5)]
        t: f64,
    },
}

fn exit_code(e: &MflqError) -> i32 {
    match e {
        MflqError::FiniteEscape { .. } | MflqError::UnboundedBelow(_) => EXIT_NUMERICAL,
        _ => EXIT_INVALID,
    }
}

/// Runs one command; `args[0]` is the program name.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if let MflqError::Validation(v) = &e {
                for x in v {
                    let _ = writeln!(err, "  {x}");
                }
            }
            exit_code(&e)
        }
    }
}

struct Loaded {
    problem: ProblemData,
    law: Option<InitialLaw>,
}

fn io_err(path: &Path, e: std::io::Error) -> MflqError {
    MflqError::Document {
        field: "$".into(),
        message: format!("{}: {e}", path.display()),
    }
}

fn load(input: &Input) -> Result<Loaded> {
    let (problem, law) = if let Some(spec) = input.file.strip_prefix("preset:") {
        let (name, seed) = match spec.split_once(':') {
            Some((n, s)) => (
                n,
                s.parse::<u64>()
                    .map_err(|_| MflqError::Precondition(format!("bad preset seed `{s}`")))?,
            ),
            None => (spec, 0),
        };
        let (p, l) = presets::preset(name, PresetOptions { seed, ..Default::default() })?;
        (p, Some(l))
    } else {
        let path = Path::new(&input.file);
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let doc = problem_from_text(&text)?;
        (doc.problem, doc.law)
    };
    ensure_valid(&problem)?;
    let problem = match input.gre_steps {
        Some(k) => problem.with_steps(k)?,
        None => problem,
    };
    Ok(Loaded { problem, law })
}

/// Parses `mean=1,2;brownian=0,0.5;indep=1,0,0,1`. Omitted parts are zero.
pub fn parse_law(text: &str, n: usize) -> Result<InitialLaw> {
    let bad = |m: String| MflqError::InvalidLaw(m);
    let mut law = InitialLaw::zero(n);
    let mut has_mean = false;
    for part in text.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let (key, vals) = part
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key=values, got `{part}`")))?;
        let xs = vals
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad(format!("bad number `{v}` in `{key}`"))))
            .collect::<Result<Vec<_>>>()?;
        match key.trim() {
            "mean" | "brownian" => {
                if xs.len() != n {
                    return Err(bad(format!("`{key}` needs {n} values, got {}", xs.len())));
                }
                if key.trim() == "mean" {
                    law.mean = DVector::from_vec(xs);
                    has_mean = true;
                } else {
                    law.brownian_load = DVector::from_vec(xs);
                }
            }
            "indep" => {
                if xs.len() != n * n {
                    return Err(bad(format!("`indep` needs {} values, got {}", n * n, xs.len())));
                }
                law.indep_load = DMatrix::from_row_slice(n, n, &xs);
            }
            other => return Err(bad(format!("unknown law key `{other}`"))),
        }
    }
    if !has_mean {
        return Err(bad("`mean` is required".into()));
    }
    law.check(n)?;
    Ok(law)
}

fn resolve_law(flag: Option<&str>, loaded: &Loaded) -> Result<InitialLaw> {
    match (flag, &loaded.law) {
        (Some(s), _) => parse_law(s, loaded.problem.n),
        (None, Some(l)) => {
            l.check(loaded.problem.n)?;
            Ok(l.clone())
        }
        (None, None) => Err(MflqError::InvalidLaw(
            "no initial law: pass --law or add `initial_law` to the document".into(),
        )),
    }
}

fn emit(out: &mut dyn Write, v: &Value) -> Result<()> {
    out.write_all(to_text(v).as_bytes())
        .map_err(|e| MflqError::Precondition(format!("cannot write output: {e}")))
}

fn rows(m: &DMatrix<f64>) -> Value {
    json!((0..m.nrows()).map(|i| m.row(i).iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>())
}

pub fn sample_times(sol: &ClosedLoopSolution, times: Option<&str>) -> Result<Vec<f64>> {
    let g = sol.gre.grid;
    match times {
        None => Ok((0..=10).map(|i| g.t0 + (g.t_end - g.t0) * i as f64 / 10.0).collect()),
        Some(s) => s
            .split(',')
            .map(|x| {
                let t: f64 = x
                    .trim()
                    .parse()
                    .map_err(|_| MflqError::Precondition(format!("bad sample time `{x}`")))?;
                if !g.contains(t) {
                    return Err(MflqError::OutOfRange {
                        s: t,
                        t0: g.t0,
                        t_end: g.t_end,
                    });
                }
                Ok(t)
            })
            .collect(),
    }
}

pub fn solve_report(sol: &ClosedLoopSolution, times: &[f64]) -> Value {
    let samples: Vec<Value> = times
        .iter()
        .map(|&s| {
            let st = sol.gre.state_at(s);
            let (v0, v1) = sol.strategy.offset.at(s);
            json!({
                "t": s,
                "P": rows(&st.p),
                "Pi": rows(&st.pi),
                "Theta": rows(&sol.strategy.feedback.at(s)),
                "Theta_bar": rows(&sol.strategy.mean_feedback.at(s)),
                "Gamma": rows(st.gamma()),
                "offset_const": v0.as_slice(),
                "offset_noise": v1.as_slice(),
            })
        })
        .collect();
    let feasibility: Vec<Value> = sol
        .affine
        .feasibility
        .iter()
        .map(|c| serde_json::to_value(c).expect("serializable"))
        .collect();
    json!({
        "solvable": sol.solvable,
        "regular": sol.gre.regular(),
        "feasible": sol.affine.feasible,
        "failed_conditions": sol.gre.report.failed().map(|c| c.name.clone()).collect::<Vec<_>>(),
        "feasibility": feasibility,
        "n_steps": sol.gre.grid.n_steps,
        "samples": samples,
    })
}

fn write_csv(dir: &Path, sol: &ClosedLoopSolution, law: Option<&InitialLaw>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let p = sol.problem();
    let (n, m) = (p.n, p.m);
    let mean = match law {
        Some(l) => Some(mean_ode(p, &sol.strategy, &l.mean, sol.gre.grid.n_steps)?),
        None => None,
    };
    let mut header = vec!["time".to_string()];
    for (name, r, c) in [("P", n, n), ("Pi", n, n), ("Theta", m, n), ("Gamma", m, n)] {
        for i in 0..r {
            for j in 0..c {
                header.push(format!("{name}_{i}_{j}"));
            }
        }
    }
    if mean.is_some() {
        header.extend((0..n).map(|i| format!("EX_{i}")));
    }
    let mut text = header.join(",");
    text.push('\n');
    let push = |row: &mut Vec<String>, a: &DMatrix<f64>| {
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                row.push(format!("{:e}", a[(i, j)]));
            }
        }
    };
    for (k, st) in sol.gre.nodes.iter().enumerate() {
        let mut row = vec![format!("{:e}", st.time)];
        push(&mut row, &st.p);
        push(&mut row, &st.pi);
        push(&mut row, st.theta());
        push(&mut row, st.gamma());
        if let Some(mp) = &mean {
            row.extend(mp.mean_x[k].iter().map(|x| format!("{x:e}")));
        }
        text.push_str(&row.join(","));
        text.push('\n');
    }
    let path = dir.join("solution.csv");
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

fn strategy_for(name: &str, loaded: &Loaded) -> Result<ControlSpec> {
    let p = &loaded.problem;
    match name {
        "optimal" => Ok(synthesize(p, p.horizon.n_steps)?.strategy),
        "zero" => Ok(ControlSpec::zero(p.n, p.m)),
        file => {
            let path = Path::new(file);
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            control_from_text(&text, p.n, p.m, &p.horizon)
        }
    }
}

fn execute(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Example { name, seed, n, m, t } => {
            let (p, law) = presets::preset(&name, PresetOptions { seed, n, m, t })?;
            emit(out, &problem_to_value(&p, Some(&law)))?;
            Ok(EXIT_OK)
        }
        Command::Regularity { input, tol } => {
            let loaded = load(&input)?;
            let sol = crate::gre::integrate_gre(&loaded.problem, loaded.problem.horizon.n_steps)?;
            let report = crate::gre::assess_regularity(&sol, tol);
            let mut v = serde_json::to_value(&report).expect("serializable");
            v["failed_conditions"] = json!(report.failed().map(|c| c.name.clone()).collect::<Vec<_>>());
            emit(out, &v)?;
            Ok(EXIT_OK)
        }
        Command::Solve {
            input,
            times,
            csv,
            strategy_out,
            law,
        } => {
            let loaded = load(&input)?;
            let sol = synthesize(&loaded.problem, loaded.problem.horizon.n_steps)?;
            let ts = sample_times(&sol, times.as_deref())?;
            emit(out, &solve_report(&sol, &ts))?;
            if let Some(dir) = csv {
                let l = match law.as_deref() {
                    Some(s) => Some(parse_law(s, loaded.problem.n)?),
                    None => loaded.law.clone(),
                };
                write_csv(&dir, &sol, l.as_ref())?;
            }
            if let Some(path) = strategy_out {
                let text = to_text(&control_to_value(&sol.strategy, &loaded.problem.horizon));
                fs::write(&path, text).map_err(|e| io_err(&path, e))?;
            }
            Ok(EXIT_OK)
        }
        Command::Value { input, law } => {
            let loaded = load(&input)?;
            let law = resolve_law(law.as_deref(), &loaded)?;
            let sol = synthesize(&loaded.problem, loaded.problem.horizon.n_steps)?;
            let v = value(&sol, &law)?;
            let mut doc = serde_json::to_value(&v).expect("serializable");
            doc["law"] = document::law_to_value(&law);
            emit(out, &doc)?;
            Ok(EXIT_OK)
        }
        Command::Simulate {
            input,
            paths,
            steps,
            seed,
            strategy,
            law,
        } => {
            let loaded = load(&input)?;
            let law = resolve_law(law.as_deref(), &loaded)?;
            let spec = strategy_for(&strategy, &loaded)?;
            let report = simulate(&loaded.problem, &spec, &law, paths, steps, seed)?;
            emit(out, &serde_json::to_value(&report).expect("serializable"))?;
            Ok(EXIT_OK)
        }
        Command::Verify {
            input,
            suite,
            paths,
            steps,
            seed,
            controls,
            qp_steps,
            law,
        } => {
            let loaded = load(&input)?;
            let suite: Suite = suite.parse().map_err(MflqError::Precondition)?;
            let law = resolve_law(law.as_deref(), &loaded)?;
            let p = &loaded.problem;
            let sol = synthesize(p, p.horizon.n_steps)?;
            let opts = SuiteOptions {
                gre_steps: p.horizon.n_steps,
                qp_steps,
                n_paths: paths,
                n_steps: steps,
                n_controls: controls,
                seed,
            };
            let report = run_suite(p, &sol, &law, suite, &opts)?;
            let mut v = serde_json::to_value(&report).expect("serializable");
            v["passed"] = json!(report.passed());
            emit(out, &v)?;
            Ok(if report.passed() { EXIT_OK } else { EXIT_VERIFY })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn law_strings() {
        let l = parse_law("mean=1,2; brownian=0,0.5; indep=1,0,0,2", 2).unwrap();
        assert_eq!(l.mean.as_slice(), &[1.0, 2.0]);
        assert_eq!(l.brownian_load.as_slice(), &[0.0, 0.5]);
        assert_eq!(l.indep_load[(1, 1)], 2.0);
        assert_eq!(parse_law("mean=1", 1).unwrap(), InitialLaw::deterministic(DVector::from_element(1, 1.0)));
        assert!(parse_law("mean=1", 2).is_err());
        assert!(parse_law("brownian=1", 1).is_err());
        assert!(parse_law("mean=x", 1).is_err());
        assert!(parse_law("mean=1;sigma=2", 1).is_err());
    }
}
