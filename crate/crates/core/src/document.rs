//! JSON documents for problems, initial laws and strategies.
//!
//! Matrices are row-major with explicit dimensions:
//!
//! ```json
//! {"rows": 2, "cols": 1, "data": [1.0, 2.0]}
//! {"rows": 1, "cols": 1, "grid": [[0.5], [0.7], [0.9]]}
//! ```
//!
//! A `grid` path holds one sample per node of a uniform grid on the problem
//! horizon; an optional `"span": [t0, t_end]` overrides the horizon. Omitted
//! coefficient, weight and inhomogeneity entries are zero. Numbers are
//! written with shortest round-trip formatting, so emitting and reloading a
//! problem reproduces it exactly.

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Map, Value};

use crate::error::{MflqError, Result};
use crate::problem::{
    Coefficients, ControlSpec, Inhomogeneity, InitialLaw, MatrixPath, NoiseAffinePath, NoiseAnchor, ProblemData,
    TimeGrid, Weights,
};

fn err(field: &str, message: impl Into<String>) -> MflqError {
    MflqError::Document {
        field: field.to_string(),
        message: message.into(),
    }
}

fn join(parent: &str, key: &str) -> String {
    if parent.is_empty() {
        key.to_string()
    } else {
        format!("{parent}.{key}")
    }
}

// ---------------------------------------------------------------------------
// Emission

fn num(x: f64) -> Value {
    // Non-finite values have no JSON literal; validation rejects them anyway.
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

fn row_major(m: &DMatrix<f64>) -> Vec<Value> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(num(m[(i, j)]));
        }
    }
    out
}

pub fn matrix_to_value(m: &DMatrix<f64>) -> Value {
    json!({"rows": m.nrows(), "cols": m.ncols(), "data": row_major(m)})
}

pub fn vector_to_value(v: &DVector<f64>) -> Value {
    Value::Array(v.iter().map(|&x| num(x)).collect())
}

pub fn path_to_value(p: &MatrixPath, horizon: &TimeGrid) -> Value {
    match p {
        MatrixPath::Constant(m) => matrix_to_value(m),
        MatrixPath::Sampled { grid, samples } => {
            let (rows, cols) = p.shape();
            let mut obj = Map::new();
            obj.insert("rows".into(), json!(rows));
            obj.insert("cols".into(), json!(cols));
            if (grid.t0, grid.t_end) != (horizon.t0, horizon.t_end) {
                obj.insert("span".into(), json!([num(grid.t0), num(grid.t_end)]));
            }
            obj.insert(
                "grid".into(),
                Value::Array(samples.iter().map(|m| Value::Array(row_major(m))).collect()),
            );
            Value::Object(obj)
        }
    }
}

fn affine_to_value(p: &NoiseAffinePath, horizon: &TimeGrid) -> Value {
    json!({
        "const": path_to_value(&p.const_part, horizon),
        "noise": path_to_value(&p.noise_part, horizon),
    })
}

pub fn law_to_value(law: &InitialLaw) -> Value {
    json!({
        "mean": vector_to_value(&law.mean),
        "brownian_load": vector_to_value(&law.brownian_load),
        "indep_load": matrix_to_value(&law.indep_load),
    })
}

/// Full problem document, with the initial law when one is given.
pub fn problem_to_value(p: &ProblemData, law: Option<&InitialLaw>) -> Value {
    let h = &p.horizon;
    let path = |x: &MatrixPath| path_to_value(x, h);
    let c = &p.coefficients;
    let w = &p.weights;
    let f = &p.inhomogeneity;
    let mut doc = json!({
        "dims": {"n": p.n, "m": p.m},
        "horizon": {"t": num(h.t0), "T": num(h.t_end), "steps": h.n_steps},
        "coefficients": {
            "A": path(&c.a), "A_bar": path(&c.a_bar),
            "B": path(&c.b), "B_bar": path(&c.b_bar),
            "C": path(&c.c), "C_bar": path(&c.c_bar),
            "D": path(&c.d), "D_bar": path(&c.d_bar),
        },
        "weights": {
            "Q": path(&w.q), "Q_bar": path(&w.q_bar),
            "S": path(&w.s), "S_bar": path(&w.s_bar),
            "R": path(&w.r), "R_bar": path(&w.r_bar),
            "G": matrix_to_value(&w.g), "G_bar": matrix_to_value(&w.g_bar),
        },
        "inhomogeneities": {
            "b": affine_to_value(&f.b, h),
            "sigma": affine_to_value(&f.sigma, h),
            "q": affine_to_value(&f.q, h),
            "rho": affine_to_value(&f.rho, h),
            "q_bar": path(&f.q_bar),
            "rho_bar": path(&f.rho_bar),
            "g": {"const": vector_to_value(&f.g0), "noise": vector_to_value(&f.g1)},
            "g_bar": vector_to_value(&f.g_bar),
        },
    });
    if let Some(law) = law {
        doc["initial_law"] = law_to_value(law);
    }
    doc
}

pub fn control_to_value(spec: &ControlSpec, horizon: &TimeGrid) -> Value {
    let anchor = match spec.anchor {
        NoiseAnchor::Running => json!("running"),
        NoiseAnchor::Frozen(tau) => json!({"frozen": num(tau)}),
    };
    json!({
        "feedback": path_to_value(&spec.feedback, horizon),
        "mean_feedback": path_to_value(&spec.mean_feedback, horizon),
        "offset": affine_to_value(&spec.offset, horizon),
        "anchor": anchor,
    })
}

/// Pretty-printed JSON text. Key order is fixed, so equal inputs give
/// byte-identical output.
pub fn to_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values always serialize");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// Parsing

fn obj<'a>(v: &'a Value, field: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| err(field, "expected an object"))
}

fn get<'a>(o: &'a Map<String, Value>, parent: &str, key: &str) -> Result<&'a Value> {
    o.get(key).ok_or_else(|| err(&join(parent, key), "missing field"))
}

fn as_f64(v: &Value, field: &str) -> Result<f64> {
    let x = v.as_f64().ok_or_else(|| err(field, "expected a number"))?;
    if !x.is_finite() {
        return Err(err(field, "number is not finite"));
    }
    Ok(x)
}

fn as_usize(v: &Value, field: &str) -> Result<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| err(field, "expected a nonnegative integer"))
}

fn numbers(v: &Value, field: &str) -> Result<Vec<f64>> {
    let arr = v.as_array().ok_or_else(|| err(field, "expected an array of numbers"))?;
    arr.iter()
        .enumerate()
        .map(|(i, x)| as_f64(x, &format!("{field}[{i}]")))
        .collect()
}

pub fn vector_from_value(v: &Value, field: &str, len: usize) -> Result<DVector<f64>> {
    let xs = numbers(v, field)?;
    if xs.len() != len {
        return Err(err(field, format!("expected {len} entries, got {}", xs.len())));
    }
    Ok(DVector::from_vec(xs))
}

fn dims(o: &Map<String, Value>, field: &str, want: (usize, usize)) -> Result<(usize, usize)> {
    let rows = as_usize(get(o, field, "rows")?, &join(field, "rows"))?;
    let cols = as_usize(get(o, field, "cols")?, &join(field, "cols"))?;
    if (rows, cols) != want {
        return Err(err(
            field,
            format!("expected a {}x{} matrix, got {rows}x{cols}", want.0, want.1),
        ));
    }
    Ok((rows, cols))
}

fn flat_matrix(v: &Value, field: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let xs = numbers(v, field)?;
    if xs.len() != rows * cols {
        return Err(err(
            field,
            format!("{rows}x{cols} matrix needs {} entries, got {}", rows * cols, xs.len()),
        ));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &xs))
}

pub fn matrix_from_value(v: &Value, field: &str, want: (usize, usize)) -> Result<DMatrix<f64>> {
    let o = obj(v, field)?;
    let (rows, cols) = dims(o, field, want)?;
    if o.contains_key("grid") {
        return Err(err(field, "expected a constant matrix, found a time grid"));
    }
    flat_matrix(get(o, field, "data")?, &join(field, "data"), rows, cols)
}

pub fn path_from_value(v: &Value, field: &str, want: (usize, usize), horizon: &TimeGrid) -> Result<MatrixPath> {
    let o = obj(v, field)?;
    let (rows, cols) = dims(o, field, want)?;
    match (o.get("data"), o.get("grid")) {
        (Some(d), None) => Ok(MatrixPath::Constant(flat_matrix(d, &join(field, "data"), rows, cols)?)),
        (None, Some(g)) => {
            let gf = join(field, "grid");
            let arr = g.as_array().ok_or_else(|| err(&gf, "expected an array of samples"))?;
            if arr.len() < 2 {
                return Err(err(&gf, "a grid path needs at least two samples"));
            }
            let samples = arr
                .iter()
                .enumerate()
                .map(|(k, s)| flat_matrix(s, &format!("{gf}[{k}]"), rows, cols))
                .collect::<Result<Vec<_>>>()?;
            let (t0, t_end) = match o.get("span") {
                None => (horizon.t0, horizon.t_end),
                Some(sp) => {
                    let sf = join(field, "span");
                    let xs = numbers(sp, &sf)?;
                    if xs.len() != 2 {
                        return Err(err(&sf, "expected [t0, t_end]"));
                    }
                    (xs[0], xs[1])
                }
            };
            let grid = TimeGrid::new(t0, t_end, samples.len() - 1).map_err(|e| err(field, e.to_string()))?;
            if grid.t0 > horizon.t0 || grid.t_end < horizon.t_end {
                return Err(err(field, "grid path does not cover the horizon"));
            }
            MatrixPath::sampled(grid, samples).map_err(|e| err(field, e.to_string()))
        }
        (Some(_), Some(_)) => Err(err(field, "give either `data` or `grid`, not both")),
        (None, None) => Err(err(field, "missing `data` or `grid`")),
    }
}

/// Entry `key` of `o` as a path, zero when absent.
fn opt_path(
    o: &Map<String, Value>,
    parent: &str,
    key: &str,
    want: (usize, usize),
    horizon: &TimeGrid,
) -> Result<MatrixPath> {
    match o.get(key) {
        None => Ok(MatrixPath::zeros(want.0, want.1)),
        Some(v) => path_from_value(v, &join(parent, key), want, horizon),
    }
}

fn opt_matrix(o: &Map<String, Value>, parent: &str, key: &str, want: (usize, usize)) -> Result<DMatrix<f64>> {
    match o.get(key) {
        None => Ok(DMatrix::zeros(want.0, want.1)),
        Some(v) => matrix_from_value(v, &join(parent, key), want),
    }
}

fn opt_vector(o: &Map<String, Value>, parent: &str, key: &str, len: usize) -> Result<DVector<f64>> {
    match o.get(key) {
        None => Ok(DVector::zeros(len)),
        Some(v) => vector_from_value(v, &join(parent, key), len),
    }
}

fn opt_affine(o: &Map<String, Value>, parent: &str, key: &str, len: usize, horizon: &TimeGrid) -> Result<NoiseAffinePath> {
    let field = join(parent, key);
    let Some(v) = o.get(key) else {
        return Ok(NoiseAffinePath::zeros(len));
    };
    let a = obj(v, &field)?;
    reject_unknown(a, &field, &["const", "noise"])?;
    Ok(NoiseAffinePath {
        const_part: opt_path(a, &field, "const", (len, 1), horizon)?,
        noise_part: opt_path(a, &field, "noise", (len, 1), horizon)?,
    })
}

fn opt_obj<'a>(o: &'a Map<String, Value>, key: &str) -> Result<Option<&'a Map<String, Value>>> {
    o.get(key).map(|v| obj(v, key)).transpose()
}

fn reject_unknown(o: &Map<String, Value>, field: &str, allowed: &[&str]) -> Result<()> {
    match o.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(err(&join(field, k), "unknown field")),
        None => Ok(()),
    }
}

pub fn law_from_value(v: &Value, field: &str, n: usize) -> Result<InitialLaw> {
    let o = obj(v, field)?;
    reject_unknown(o, field, &["mean", "brownian_load", "indep_load"])?;
    Ok(InitialLaw {
        mean: vector_from_value(get(o, field, "mean")?, &join(field, "mean"), n)?,
        brownian_load: opt_vector(o, field, "brownian_load", n)?,
        indep_load: opt_matrix(o, field, "indep_load", (n, n))?,
    })
}

/// Parsed problem document. Structural errors are reported here; semantic
/// checks (symmetry, definiteness) are left to [`crate::problem::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemDocument {
    pub problem: ProblemData,
    pub law: Option<InitialLaw>,
}

pub fn problem_from_value(v: &Value) -> Result<ProblemDocument> {
    let root = obj(v, "$")?;
    reject_unknown(
        root,
        "",
        &["dims", "horizon", "coefficients", "weights", "inhomogeneities", "initial_law"],
    )?;
    let d = obj(get(root, "", "dims")?, "dims")?;
    let n = as_usize(get(d, "dims", "n")?, "dims.n")?;
    let m = as_usize(get(d, "dims", "m")?, "dims.m")?;
    if n == 0 || m == 0 {
        return Err(err("dims", "n and m must be positive"));
    }
    let h = obj(get(root, "", "horizon")?, "horizon")?;
    let horizon = TimeGrid::new(
        as_f64(get(h, "horizon", "t")?, "horizon.t")?,
        as_f64(get(h, "horizon", "T")?, "horizon.T")?,
        as_usize(get(h, "horizon", "steps")?, "horizon.steps")?,
    )
    .map_err(|e| err("horizon", e.to_string()))?;

    let empty = Map::new();
    let c = opt_obj(root, "coefficients")?.unwrap_or(&empty);
    reject_unknown(c, "coefficients", &["A", "A_bar", "B", "B_bar", "C", "C_bar", "D", "D_bar"])?;
    let cp = |k: &str, w| opt_path(c, "coefficients", k, w, &horizon);
    let coefficients = Coefficients {
        a: cp("A", (n, n))?,
        a_bar: cp("A_bar", (n, n))?,
        b: cp("B", (n, m))?,
        b_bar: cp("B_bar", (n, m))?,
        c: cp("C", (n, n))?,
        c_bar: cp("C_bar", (n, n))?,
        d: cp("D", (n, m))?,
        d_bar: cp("D_bar", (n, m))?,
    };

    let w = opt_obj(root, "weights")?.unwrap_or(&empty);
    reject_unknown(w, "weights", &["Q", "Q_bar", "S", "S_bar", "R", "R_bar", "G", "G_bar"])?;
    let wp = |k: &str, s| opt_path(w, "weights", k, s, &horizon);
    let weights = Weights {
        q: wp("Q", (n, n))?,
        q_bar: wp("Q_bar", (n, n))?,
        s: wp("S", (m, n))?,
        s_bar: wp("S_bar", (m, n))?,
        r: wp("R", (m, m))?,
        r_bar: wp("R_bar", (m, m))?,
        g: opt_matrix(w, "weights", "G", (n, n))?,
        g_bar: opt_matrix(w, "weights", "G_bar", (n, n))?,
    };

    let f = opt_obj(root, "inhomogeneities")?.unwrap_or(&empty);
    const INH: &str = "inhomogeneities";
    reject_unknown(f, INH, &["b", "sigma", "q", "rho", "q_bar", "rho_bar", "g", "g_bar"])?;
    let (g0, g1) = match f.get("g") {
        None => (DVector::zeros(n), DVector::zeros(n)),
        Some(v) => {
            let gf = join(INH, "g");
            let g = obj(v, &gf)?;
            reject_unknown(g, &gf, &["const", "noise"])?;
            (opt_vector(g, &gf, "const", n)?, opt_vector(g, &gf, "noise", n)?)
        }
    };
    let inhomogeneity = Inhomogeneity {
        b: opt_affine(f, INH, "b", n, &horizon)?,
        sigma: opt_affine(f, INH, "sigma", n, &horizon)?,
        q: opt_affine(f, INH, "q", n, &horizon)?,
        rho: opt_affine(f, INH, "rho", m, &horizon)?,
        q_bar: opt_path(f, INH, "q_bar", (n, 1), &horizon)?,
        rho_bar: opt_path(f, INH, "rho_bar", (m, 1), &horizon)?,
        g0,
        g1,
        g_bar: opt_vector(f, INH, "g_bar", n)?,
    };

    let law = root
        .get("initial_law")
        .map(|v| law_from_value(v, "initial_law", n))
        .transpose()?;
    Ok(ProblemDocument {
        problem: ProblemData {
            n,
            m,
            horizon,
            coefficients,
            weights,
            inhomogeneity,
        },
        law,
    })
}

pub fn control_from_value(v: &Value, n: usize, m: usize, horizon: &TimeGrid) -> Result<ControlSpec> {
    let o = obj(v, "$")?;
    reject_unknown(o, "", &["feedback", "mean_feedback", "offset", "anchor"])?;
    let anchor = match o.get("anchor") {
        None => NoiseAnchor::Running,
        Some(Value::String(s)) if s == "running" => NoiseAnchor::Running,
        Some(Value::Object(a)) if a.len() == 1 && a.contains_key("frozen") => {
            NoiseAnchor::Frozen(as_f64(&a["frozen"], "anchor.frozen")?)
        }
        Some(_) => return Err(err("anchor", "expected \"running\" or {\"frozen\": tau}")),
    };
    Ok(ControlSpec {
        feedback: opt_path(o, "", "feedback", (m, n), horizon)?,
        mean_feedback: opt_path(o, "", "mean_feedback", (m, n), horizon)?,
        offset: opt_affine(o, "", "offset", m, horizon)?,
        anchor,
    })
}

pub fn parse_json(text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| err("$", format!("malformed JSON at line {}, column {}: {e}", e.line(), e.column())))
}

pub fn problem_from_text(text: &str) -> Result<ProblemDocument> {
    problem_from_value(&parse_json(text)?)
}

pub fn control_from_text(text: &str, n: usize, m: usize, horizon: &TimeGrid) -> Result<ControlSpec> {
    control_from_value(&parse_json(text)?, n, m, horizon)
}
