//! Dense real linear-algebra kernel shared by every stage of the simulator.
//!
//! All routines are thin, deterministic wrappers around nalgebra's SVD with a
//! single [`TolerancePolicy`] deciding numerical rank. Orthonormal factors are
//! returned with a fixed sign convention: the first entry of each column whose
//! magnitude exceeds [`SIGN_EPS`] is positive.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Entries below this magnitude are skipped when fixing column signs.
pub const SIGN_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("no orthogonal complement: the {rows}x{cols} avoid-space fills the ambient space")]
    NoComplement { rows: usize, cols: usize },
    #[error("rank deficient: row rank {rank} < {required} required")]
    RankDeficient { rank: usize, required: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid tolerance policy: {0}")]
    InvalidPolicy(String),
}

/// Rank and residual thresholds used consistently across the kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TolerancePolicy {
    /// Singular values at or below `rank_tol * sigma_max` count as zero.
    pub rank_tol: f64,
    /// Absolute threshold for residuals that should vanish.
    pub zero_tol: f64,
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        Self {
            rank_tol: 1e-9,
            zero_tol: 1e-9,
        }
    }
}

impl TolerancePolicy {
    pub fn new(rank_tol: f64, zero_tol: f64) -> Result<Self, NumericsError> {
        let ok = |t: f64| t > 0.0 && t < 1.0;
        if !ok(rank_tol) {
            return Err(NumericsError::InvalidPolicy(format!(
                "rank_tol must lie in (0, 1), got {rank_tol}"
            )));
        }
        if !ok(zero_tol) {
            return Err(NumericsError::InvalidPolicy(format!(
                "zero_tol must lie in (0, 1), got {zero_tol}"
            )));
        }
        Ok(Self { rank_tol, zero_tol })
    }

    /// Number of singular values counted as nonzero.
    fn count_rank(&self, singular_values: &[f64]) -> usize {
        let max = singular_values.iter().cloned().fold(0.0_f64, f64::max);
        if max == 0.0 {
            return 0;
        }
        singular_values
            .iter()
            .filter(|&&s| s > self.rank_tol * max)
            .count()
    }
}

/// Thin SVD `A = Phi * diag(gamma) * Psi^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    pub left: Matrix,
    pub singular_values: Vector,
    pub right: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        &self.left * Matrix::from_diagonal(&self.singular_values) * self.right.transpose()
    }
}

fn first_significant(col: impl Iterator<Item = f64>) -> Option<f64> {
    col.into_iter().find(|x| x.abs() > SIGN_EPS)
}

/// Flips every column whose first significant entry is negative.
pub fn fix_column_signs(m: &mut Matrix) {
    for j in 0..m.ncols() {
        if first_significant(m.column(j).iter().cloned()).is_some_and(|x| x < 0.0) {
            m.column_mut(j).neg_mut();
        }
    }
}

/// Singular values and right singular vectors (as columns of an n x n matrix),
/// ordered by descending singular value. Wide inputs are padded with zero rows
/// so that the full right factor, including the null directions, comes back.
fn full_right_svd(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.ncols();
    let padded = if a.nrows() < n {
        let mut p = Matrix::zeros(n, n);
        p.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = nalgebra::SVD::new(padded, false, true);
    let v_t = svd.v_t.expect("right factor requested");
    let mut pairs: Vec<(f64, Vector)> = svd
        .singular_values
        .iter()
        .cloned()
        .zip(v_t.row_iter().map(|r| r.transpose()))
        .collect();
    // stable: ties keep nalgebra order
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    let values = pairs.iter().map(|p| p.0).collect();
    let cols: Vec<Vector> = pairs.into_iter().map(|p| p.1).collect();
    (values, Matrix::from_columns(&cols))
}

/// Numerical rank of `a` under `pol`.
pub fn rank(a: &Matrix, pol: &TolerancePolicy) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().singular_values();
    pol.count_rank(sv.as_slice())
}

/// Orthonormal basis of `{x : A x = 0}`, one column per null direction.
///
/// Columns are ordered by ascending associated singular value; a matrix with
/// trivial null space yields an `n x 0` result.
pub fn null_space_basis(a: &Matrix, pol: &TolerancePolicy) -> Matrix {
    let n = a.ncols();
    if n == 0 {
        return Matrix::zeros(0, 0);
    }
    if a.nrows() == 0 {
        return Matrix::identity(n, n);
    }
    let (values, right) = full_right_svd(a);
    let r = pol.count_rank(&values);
    let mut basis = Matrix::zeros(n, n - r);
    for (k, j) in (r..n).rev().enumerate() {
        basis.set_column(k, &right.column(j));
    }
    fix_column_signs(&mut basis);
    basis
}

/// A unit vector orthogonal to every row of `s`.
///
/// This is the first column of [`null_space_basis`]; fails when the rows of
/// `s` already span the whole space.
pub fn orth_complement_vector(s: &Matrix, pol: &TolerancePolicy) -> Result<Vector, NumericsError> {
    let basis = null_space_basis(s, pol);
    if basis.ncols() == 0 {
        return Err(NumericsError::NoComplement {
            rows: s.nrows(),
            cols: s.ncols(),
        });
    }
    Ok(basis.column(0).into_owned())
}

/// Orthogonal projection of `x` onto the complement of the row space of `s`.
///
/// Returns `None` when that complement is trivial.
pub fn project_off_rows(s: &Matrix, x: &Vector, pol: &TolerancePolicy) -> Option<Vector> {
    let basis = null_space_basis(s, pol);
    if basis.ncols() == 0 {
        return None;
    }
    Some(&basis * (basis.transpose() * x))
}

/// Minimum-norm solution of `A x = b` for a wide, full-row-rank `A`,
/// i.e. `x = A^T (A A^T)^{-1} b`, evaluated through the SVD.
pub fn min_norm_right_solve(
    a: &Matrix,
    b: &Vector,
    pol: &TolerancePolicy,
) -> Result<Vector, NumericsError> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(NumericsError::DimensionMismatch(format!(
            "rhs has length {} but matrix has {m} rows",
            b.len()
        )));
    }
    if m > n {
        return Err(NumericsError::RankDeficient {
            rank: n,
            required: m,
        });
    }
    let svd = svd_factor(a);
    let r = pol.count_rank(svd.singular_values.as_slice());
    if r < m {
        return Err(NumericsError::RankDeficient {
            rank: r,
            required: m,
        });
    }
    let mut coeffs = svd.left.transpose() * b;
    for (c, s) in coeffs.iter_mut().zip(svd.singular_values.iter()) {
        *c /= s;
    }
    Ok(&svd.right * coeffs)
}

/// Thin SVD with nonincreasing singular values and the crate sign convention
/// applied to the right factor (left columns flipped alongside).
pub fn svd_factor(a: &Matrix) -> Svd {
    let (m, n) = a.shape();
    let k = m.min(n);
    if k == 0 {
        return Svd {
            left: Matrix::zeros(m, 0),
            singular_values: Vector::zeros(0),
            right: Matrix::zeros(n, 0),
        };
    }
    let svd = nalgebra::SVD::new(a.clone(), true, true);
    let u = svd.u.expect("left factor requested");
    let v_t = svd.v_t.expect("right factor requested");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));

    let mut left = Matrix::zeros(m, k);
    let mut right = Matrix::zeros(n, k);
    let mut values = Vector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        let mut l = u.column(src).into_owned();
        let mut r = v_t.row(src).transpose();
        if first_significant(r.iter().cloned()).is_some_and(|x| x < 0.0) {
            l.neg_mut();
            r.neg_mut();
        }
        left.set_column(dst, &l);
        right.set_column(dst, &r);
        values[dst] = svd.singular_values[src].max(0.0);
    }
    Svd {
        left,
        singular_values: values,
        right,
    }
}

/// Removes row `skip` from `a`.
pub fn without_row(a: &Matrix, skip: usize) -> Matrix {
    a.clone().remove_row(skip)
}

/// Stacks `top` above `bottom`; both must have the same column count.
pub fn vstack(top: &Matrix, bottom: &Matrix) -> Matrix {
    assert_eq!(top.ncols(), bottom.ncols(), "vstack column mismatch");
    let mut out = Matrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.view_mut((0, 0), top.shape()).copy_from(top);
    out.view_mut((top.nrows(), 0), bottom.shape())
        .copy_from(bottom);
    out
}

/// Places `left` and `right` side by side; both must have the same row count.
pub fn hstack(left: &Matrix, right: &Matrix) -> Matrix {
    assert_eq!(left.nrows(), right.nrows(), "hstack row mismatch");
    let mut out = Matrix::zeros(left.nrows(), left.ncols() + right.ncols());
    out.view_mut((0, 0), left.shape()).copy_from(left);
    out.view_mut((0, left.ncols()), right.shape())
        .copy_from(right);
    out
}
