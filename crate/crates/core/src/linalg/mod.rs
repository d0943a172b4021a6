//! Dense linear algebra used by every subspace method: centering, class
//! scatter, and the symmetric-definite generalized eigensolver.

mod symeig;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::ClassLabels;

use symeig::{dot, symmetric_eigen, transpose};

/// Subtracts the row means (means over samples) from every column.
pub fn center_columns(x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let mean = x
        .mean_axis(Axis(1))
        .unwrap_or_else(|| Array1::zeros(x.nrows()));
    let mut out = x.clone();
    for (mut row, m) in out.rows_mut().into_iter().zip(mean.iter()) {
        row -= *m;
    }
    (out, mean)
}

/// Between-class and total scatter of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterSet {
    pub between_class: Array2<f64>,
    pub total: Array2<f64>,
    /// `(class id, sample count)` in ascending class order.
    pub class_counts: Vec<(u32, usize)>,
}

fn check_label_len(x: &Array2<f64>, labels: &ClassLabels) -> Result<()> {
    if labels.len() != x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} samples",
            labels.len(),
            x.ncols()
        )));
    }
    Ok(())
}

/// Per-class column sums of `x`, one column per class (`d x C`).
pub fn class_sums(x: &Array2<f64>, labels: &ClassLabels) -> Result<Array2<f64>> {
    check_label_len(x, labels)?;
    let mut sums = Array2::zeros((x.nrows(), labels.n_classes()));
    for (col, k) in x.columns().into_iter().zip(labels.class_indices()) {
        let mut target = sums.column_mut(k);
        target += &col;
    }
    Ok(sums)
}

/// `S = sum_c n_c (mu_c - mu)(mu_c - mu)^T` and the centered total scatter.
pub fn between_class_scatter(x: &Array2<f64>, labels: &ClassLabels) -> Result<ScatterSet> {
    check_label_len(x, labels)?;
    let (xc, _) = center_columns(x);
    let counts = labels.class_counts();
    let sums = class_sums(&xc, labels)?;
    // Columns sqrt(n_c) (mu_c - mu) = s_c / sqrt(n_c) for centered data.
    let mut weighted = sums;
    for (mut col, &n_c) in weighted.columns_mut().into_iter().zip(&counts) {
        col /= (n_c as f64).sqrt();
    }
    let between = symmetrize(&weighted.dot(&weighted.t()));
    let total = symmetrize(&xc.dot(&xc.t()));
    Ok(ScatterSet {
        between_class: between,
        total,
        class_counts: labels.classes().iter().copied().zip(counts).collect(),
    })
}

/// `(A + A^T) / 2`.
pub fn symmetrize(a: &Array2<f64>) -> Array2<f64> {
    (a + &a.t()) * 0.5
}

/// Regularization added to the right-hand matrix before factorization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum RidgePolicy {
    /// `eps = factor * trace(B) / d`, raised tenfold on factorization failure.
    Relative(f64),
    /// A fixed `eps`, raised tenfold on factorization failure.
    Fixed(f64),
    /// No ridge and no escalation.
    None,
}

impl Default for RidgePolicy {
    fn default() -> Self {
        RidgePolicy::Relative(1e-6)
    }
}

pub const MAX_RIDGE_ESCALATIONS: usize = 3;

/// Solution of `A v = lambda (B + ridge I) v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedEigResult {
    /// Descending.
    pub eigenvalues: Array1<f64>,
    /// Column `k` pairs with `eigenvalues[k]`; columns are `B'`-orthonormal.
    pub eigenvectors: Array2<f64>,
    pub ridge_used: f64,
}

/// Symmetric-definite generalized eigenproblem by Cholesky whitening.
///
/// `B + eps I = L L^T` turns the pencil into the standard symmetric problem
/// `L^-1 A L^-T y = lambda y` with `v = L^-T y`. Each eigenvector is signed so
/// that its largest-magnitude entry is positive.
pub fn generalized_eig_sym(
    a: &Array2<f64>,
    b: &Array2<f64>,
    ridge: RidgePolicy,
) -> Result<GeneralizedEigResult> {
    let n = a.nrows();
    if a.ncols() != n || b.dim() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "pencil shapes {:?} and {:?} are not matching squares",
            a.dim(),
            b.dim()
        )));
    }
    if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("pencil has non-finite entries".into()));
    }
    if n == 0 {
        return Ok(GeneralizedEigResult {
            eigenvalues: Array1::zeros(0),
            eigenvectors: Array2::zeros((0, 0)),
            ridge_used: 0.0,
        });
    }
    let a_sym = to_row_major(&symmetrize(a));
    let b_sym = to_row_major(&symmetrize(b));

    let trace: f64 = (0..n).map(|i| b_sym[i * n + i]).sum();
    let (mut eps, escalate) = match ridge {
        RidgePolicy::Relative(f) => (f * trace / n as f64, true),
        RidgePolicy::Fixed(e) => (e, true),
        RidgePolicy::None => (0.0, false),
    };
    if !eps.is_finite() || eps < 0.0 {
        return Err(Error::InvalidParameter(format!("ridge {eps} must be finite and >= 0")));
    }
    let mut escalations = 0;
    let l = loop {
        let mut shifted = b_sym.clone();
        for i in 0..n {
            shifted[i * n + i] += eps;
        }
        match cholesky(&shifted, n) {
            Some(l) => break l,
            None if escalate && eps > 0.0 && escalations < MAX_RIDGE_ESCALATIONS => {
                eps *= 10.0;
                escalations += 1;
            }
            None => {
                return Err(Error::NotPositiveDefinite {
                    escalations,
                    ridge: eps,
                })
            }
        }
    };

    // C = L^-1 A L^-T, formed as L^-1 (L^-1 A)^T since A is symmetric.
    let y = forward_solve_rows(&l, &a_sym, n);
    let mut c = forward_solve_rows(&l, &transpose(&y, n), n);
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (c[i * n + j] + c[j * n + i]);
            c[i * n + j] = s;
            c[j * n + i] = s;
        }
    }
    let (values, rows) = symmetric_eigen(&c, n)?;

    let lt = transpose(&l, n);
    let mut eigenvalues = Array1::zeros(n);
    let mut eigenvectors = Array2::zeros((n, n));
    for (k, src) in (0..n).rev().enumerate() {
        eigenvalues[k] = values[src];
        let mut v = back_solve_transposed(&lt, &rows[src * n..(src + 1) * n], n);
        let pivot = v
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, x)| if x.abs() > best.1.abs() { (i, x) } else { best });
        if pivot.1 < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for (i, x) in v.into_iter().enumerate() {
            eigenvectors[[i, k]] = x;
        }
    }
    Ok(GeneralizedEigResult {
        eigenvalues,
        eigenvectors,
        ridge_used: eps,
    })
}

fn to_row_major(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

/// Lower Cholesky factor of a row-major SPD matrix, `None` when a pivot is
/// not safely positive.
fn cholesky(b: &[f64], n: usize) -> Option<Vec<f64>> {
    let max_diag = (0..n).map(|i| b[i * n + i].abs()).fold(0.0, f64::max);
    let floor = 1e-14 * max_diag;
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let row_j = &l[j * n..j * n + j];
        let pivot = b[j * n + j] - dot(row_j, row_j);
        if pivot.is_nan() || pivot <= floor {
            return None;
        }
        let ljj = pivot.sqrt();
        l[j * n + j] = ljj;
        for i in j + 1..n {
            let s = dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
            l[i * n + j] = (b[i * n + j] - s) / ljj;
        }
    }
    Some(l)
}

/// `L^-1 R` for lower-triangular `L`, processing `R` one row at a time.
fn forward_solve_rows(l: &[f64], r: &[f64], n: usize) -> Vec<f64> {
    let mut y = r.to_vec();
    for i in 0..n {
        let (done, rest) = y.split_at_mut(i * n);
        let yi = &mut rest[..n];
        for k in 0..i {
            let lik = l[i * n + k];
            if lik != 0.0 {
                let yk = &done[k * n..(k + 1) * n];
                for (a, b) in yi.iter_mut().zip(yk) {
                    *a -= lik * b;
                }
            }
        }
        let inv = 1.0 / l[i * n + i];
        yi.iter_mut().for_each(|a| *a *= inv);
    }
    y
}

/// Solves `L^T v = q` given `lt = L^T` (upper triangular, row-major).
fn back_solve_transposed(lt: &[f64], q: &[f64], n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    for j in (0..n).rev() {
        let s = dot(&lt[j * n + j + 1..(j + 1) * n], &v[j + 1..]);
        v[j] = (q[j] - s) / lt[j * n + j];
    }
    v
}

/// Frobenius norm.
pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}
