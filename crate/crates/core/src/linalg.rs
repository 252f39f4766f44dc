//! Pseudoinverse, semidefiniteness and range-inclusion tests.
//!
//! Ranks use the cutoff `rel_tol * max(rows, cols) * sigma_max`; every test
//! reports the measured quantity alongside its verdict so borderline cases
//! remain visible to callers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{MflqError, Result};
use crate::problem::is_symmetric;

pub const DEFAULT_REL_TOL: f64 = 1e-10;

/// Symmetry slack accepted by [`is_psd`] and [`projector`].
const INPUT_SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct PinvResult {
    pub pinv: DMatrix<f64>,
    pub rank: usize,
    /// Descending.
    pub singular_values: Vec<f64>,
    pub tol_used: f64,
}

impl PinvResult {
    /// Smallest singular value kept in the rank, if any.
    pub fn smallest_retained(&self) -> Option<f64> {
        self.rank.checked_sub(1).map(|k| self.singular_values[k])
    }
}

pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> PinvResult {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return PinvResult {
            pinv: DMatrix::zeros(cols, rows),
            rank: 0,
            singular_values: Vec::new(),
            tol_used: 0.0,
        };
    }
    if m.iter().any(|x| !x.is_finite()) {
        return PinvResult {
            pinv: DMatrix::from_element(cols, rows, f64::NAN),
            rank: 0,
            singular_values: vec![f64::NAN; rows.min(cols)],
            tol_used: f64::NAN,
        };
    }
    // nalgebra's SVD occasionally returns an inconsistent factorization for
    // rank-deficient input, so singular pairs come from a symmetric
    // eigendecomposition instead.
    let pairs = singular_pairs(m);
    let sigma_max = pairs.iter().map(|p| p.0).fold(0.0_f64, f64::max);
    let tol_used = rel_tol * rows.max(cols) as f64 * sigma_max;

    let mut out = DMatrix::zeros(cols, rows);
    let mut rank = 0;
    for (s, u, v) in &pairs {
        if *s > tol_used && *s > 0.0 {
            rank += 1;
            out += v * u.transpose() * (1.0 / s);
        }
    }
    let mut singular_values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    singular_values.resize(rows.min(cols), 0.0);
    singular_values.sort_by(|a, b| b.total_cmp(a));
    PinvResult {
        pinv: out,
        rank,
        singular_values,
        tol_used,
    }
}

/// Largest singular value; zero for empty matrices.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.ncols() == 1 || m.nrows() == 1 || m.iter().any(|x| !x.is_finite()) {
        return m.norm();
    }
    singular_pairs(m).first().map_or(0.0, |p| p.0)
}

type SingularPair = (f64, DVector<f64>, DVector<f64>);

/// Nonnegative singular triples `(σ, u, v)` with `M v = σ u`, descending.
///
/// Symmetric input is decomposed directly; otherwise the positive
/// eigenvalues of `[[0, M], [M^T, 0]]` are the singular values, with
/// eigenvectors `(u, v) / √2`. Neither route squares the conditioning.
fn singular_pairs(m: &DMatrix<f64>) -> Vec<SingularPair> {
    let (rows, cols) = m.shape();
    let mut pairs: Vec<SingularPair> = if rows == cols && m == &m.transpose() {
        let e = SymmetricEigen::new(m.clone());
        e.eigenvalues
            .iter()
            .enumerate()
            .map(|(i, &lam)| {
                let v = e.eigenvectors.column(i).into_owned();
                let u = if lam < 0.0 { -&v } else { v.clone() };
                (lam.abs(), u, v)
            })
            .collect()
    } else {
        let mut j = DMatrix::zeros(rows + cols, rows + cols);
        j.view_mut((0, rows), (rows, cols)).copy_from(m);
        j.view_mut((rows, 0), (cols, rows)).copy_from(&m.transpose());
        let e = SymmetricEigen::new(j);
        e.eigenvalues
            .iter()
            .enumerate()
            .filter(|(_, &lam)| lam > 0.0)
            .map(|(i, &lam)| {
                let w = e.eigenvectors.column(i);
                let u = w.rows(0, rows) * std::f64::consts::SQRT_2;
                let v = w.rows(rows, cols) * std::f64::consts::SQRT_2;
                (lam, u, v)
            })
            .collect()
    };
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs.truncate(rows.min(cols));
    pairs
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn require_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(MflqError::Dimension(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !is_symmetric(m, INPUT_SYMMETRY_TOL) {
        return Err(MflqError::NotSymmetric {
            asymmetry: (m - m.transpose()).norm(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdCheck {
    pub is_psd: bool,
    pub min_eigenvalue: f64,
}

/// `lambda_min(M) >= -tol` via a symmetric eigendecomposition.
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> Result<PsdCheck> {
    require_symmetric(m)?;
    if m.is_empty() {
        return Ok(PsdCheck {
            is_psd: true,
            min_eigenvalue: 0.0,
        });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Ok(PsdCheck {
            is_psd: false,
            min_eigenvalue: f64::NAN,
        });
    }
    let min_eigenvalue = SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    Ok(PsdCheck {
        is_psd: min_eigenvalue >= -tol,
        min_eigenvalue,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeCheck {
    pub contained: bool,
    pub residual: f64,
}

/// Tests `R(N) ⊆ R(M)` through `‖(I - M M†) N‖ / (1 + ‖N‖)`, operator norms.
pub fn range_contained(n: &DMatrix<f64>, m: &DMatrix<f64>, tol: f64) -> Result<RangeCheck> {
    range_contained_with(n, m, &pinv(m, DEFAULT_REL_TOL), tol)
}

/// Same as [`range_contained`] with a precomputed pseudoinverse of `m`.
pub fn range_contained_with(
    n: &DMatrix<f64>,
    m: &DMatrix<f64>,
    m_pinv: &PinvResult,
    tol: f64,
) -> Result<RangeCheck> {
    if !m.is_square() || n.nrows() != m.nrows() {
        return Err(MflqError::Dimension(format!(
            "range test needs N with {} rows against a square M, got N {}x{} and M {}x{}",
            m.nrows(),
            n.nrows(),
            n.ncols(),
            m.nrows(),
            m.ncols()
        )));
    }
    let leak = n - m * (&m_pinv.pinv * n);
    let residual = op_norm(&leak) / (1.0 + op_norm(n));
    Ok(RangeCheck {
        contained: residual <= tol,
        residual,
    })
}

/// Orthogonal projector `M† M` onto the range of a symmetric PSD `M`.
pub fn projector(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    require_symmetric(m)?;
    let p = pinv(m, DEFAULT_REL_TOL).pinv * m;
    Ok(symmetrize(&p))
}
