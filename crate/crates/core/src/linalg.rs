//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Relative pivot below which a column is treated as collinear with the
/// columns before it.
pub const COLLINEAR_TOL: f64 = 1e-10;

/// Orthonormal basis of the column space of a matrix, built column by column.
///
/// Columns whose component orthogonal to the earlier kept columns is below
/// `COLLINEAR_TOL` times their own norm are dropped, so `dropped` names the
/// columns that are linear combinations of earlier ones.
#[derive(Debug, Clone)]
pub struct Basis {
    /// n × r matrix with orthonormal columns.
    pub q: DMatrix<f64>,
    /// r × r upper-triangular factor with `a[:, kept] = q * r`.
    pub r: DMatrix<f64>,
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
}

impl Basis {
    /// Modified Gram–Schmidt with one reorthogonalization pass.
    pub fn new(a: &DMatrix<f64>) -> Self {
        Self::with_tolerance(a, COLLINEAR_TOL)
    }

    pub fn with_tolerance(a: &DMatrix<f64>, rel_tol: f64) -> Self {
        let (n, k) = a.shape();
        let mut q_cols: Vec<DVector<f64>> = Vec::with_capacity(k);
        let mut r = DMatrix::<f64>::zeros(k, k);
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        for j in 0..k {
            let original = a.column(j).into_owned();
            let norm0 = original.norm();
            let mut v = original;
            let mut coef = vec![0.0; q_cols.len()];
            for _pass in 0..2 {
                for (c, q) in q_cols.iter().enumerate() {
                    let d = q.dot(&v);
                    v.axpy(-d, q, 1.0);
                    coef[c] += d;
                }
            }
            let norm = v.norm();
            if norm0 == 0.0 || !norm.is_finite() || norm <= rel_tol * norm0 {
                dropped.push(j);
                continue;
            }
            let col = q_cols.len();
            for (c, d) in coef.into_iter().enumerate() {
                r[(c, col)] = d;
            }
            r[(col, col)] = norm;
            q_cols.push(v / norm);
            kept.push(j);
        }
        let rank = q_cols.len();
        let mut q = DMatrix::<f64>::zeros(n, rank);
        for (c, col) in q_cols.iter().enumerate() {
            q.set_column(c, col);
        }
        let r = r.view((0, 0), (rank, rank)).into_owned();
        Basis { q, r, kept, dropped }
    }

    pub fn rank(&self) -> usize {
        self.kept.len()
    }

    /// Orthogonal projection of every column of `s` onto the basis span.
    pub fn project(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        let coef = self.q.transpose() * s;
        &self.q * coef
    }

    /// Least-squares coefficients for the kept columns (full column rank case).
    pub fn solve(&self, y: &DVector<f64>) -> DVector<f64> {
        let qty = self.q.transpose() * y;
        back_substitute(&self.r, &qty)
    }
}

fn back_substitute(r: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let k = r.nrows();
    let mut x = DVector::<f64>::zeros(k);
    for i in (0..k).rev() {
        let mut acc = b[i];
        for j in i + 1..k {
            acc -= r[(i, j)] * x[j];
        }
        x[i] = acc / r[(i, i)];
    }
    x
}

/// Ratio of the largest to the smallest singular value.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Condition number above which a Hessian average is rejected.
pub const MAX_CONDITION: f64 = 1e13;

/// `A⁻¹ · meat · A⁻ᵀ`, computed with two LU solves.
pub fn sandwich_product(hessian: &DMatrix<f64>, meat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cond = condition_number(hessian);
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(Error::SingularHessian { condition: cond });
    }
    let lu = hessian.clone().lu();
    let left = lu
        .solve(meat)
        .ok_or(Error::SingularHessian { condition: cond })?;
    let lu_t = hessian.transpose().lu();
    let v = lu_t
        .solve(&left.transpose())
        .ok_or(Error::SingularHessian { condition: cond })?;
    Ok(symmetrize(&v.transpose()))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Sums rows of `s` within groups: row `c` of the result is Σ_{i: labels[i]=c} s_i.
pub fn group_sums(s: &DMatrix<f64>, labels: &[usize], n_groups: usize) -> DMatrix<f64> {
    let k = s.ncols();
    let mut out = DMatrix::<f64>::zeros(n_groups, k);
    for col in 0..k {
        let src = s.column(col);
        let mut dst = out.column_mut(col);
        for (i, &c) in labels.iter().enumerate() {
            dst[c] += src[i];
        }
    }
    out
}
