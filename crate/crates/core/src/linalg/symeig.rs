//! Dense symmetric eigensolver: Householder reduction to tridiagonal form
//! followed by implicit QL iterations with Wilkinson-style shifts.
//!
//! Matrices are flat row-major `n*n` buffers. Eigenvectors come back as rows
//! so that every Givens rotation in the QL sweep touches two contiguous rows.

use crate::error::{Error, Result};

/// Eigenvalues (ascending) and eigenvectors (row `k` pairs with value `k`)
/// of the symmetric matrix `a`.
pub(crate) fn symmetric_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    debug_assert_eq!(a.len(), n * n);
    if n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let mut work = a.to_vec();
    let (mut d, mut e, mut rows) = tridiagonalize(&mut work, n);
    ql_implicit(&mut d, &mut e, &mut rows, n)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| d[i]).collect();
    let mut vectors = Vec::with_capacity(n * n);
    for &i in &order {
        vectors.extend_from_slice(&rows[i * n..(i + 1) * n]);
    }
    Ok((values, vectors))
}

/// Reduces `a` in place and returns `(diag, offdiag, q_transposed)` where
/// `offdiag[k]` couples `k` and `k+1` and `a = Q T Q^T`.
fn tridiagonalize(a: &mut [f64], n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    let mut reflectors: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n.saturating_sub(2));

    for k in 0..n.saturating_sub(2) {
        let m = n - k - 1;
        let x = a[k * n + k + 1..(k + 1) * n].to_vec();
        let tail: f64 = x[1..].iter().map(|v| v * v).sum();
        d[k] = a[k * n + k];
        if tail == 0.0 {
            e[k] = x[0];
            reflectors.push((Vec::new(), 0.0));
            continue;
        }
        let norm = (x[0] * x[0] + tail).sqrt();
        let alpha = if x[0] > 0.0 { -norm } else { norm };
        let mut v = x;
        v[0] -= alpha;
        let beta = 2.0 / (v[0] * v[0] + tail);

        // p = beta * A22 v, using contiguous rows of the trailing block.
        let off = k + 1;
        let mut p = vec![0.0; m];
        for (i, pi) in p.iter_mut().enumerate() {
            let row = &a[(off + i) * n + off..(off + i + 1) * n];
            *pi = beta * dot(row, &v);
        }
        let kappa = 0.5 * beta * dot(&p, &v);
        let w: Vec<f64> = p.iter().zip(&v).map(|(pi, vi)| pi - kappa * vi).collect();
        for i in 0..m {
            let (vi, wi) = (v[i], w[i]);
            let row = &mut a[(off + i) * n + off..(off + i + 1) * n];
            for ((r, vj), wj) in row.iter_mut().zip(&v).zip(&w) {
                *r -= vi * wj + wi * vj;
            }
        }
        e[k] = alpha;
        reflectors.push((v, beta));
    }
    if n >= 2 {
        d[n - 2] = a[(n - 2) * n + n - 2];
        e[n - 2] = a[(n - 2) * n + n - 1];
    }
    d[n - 1] = a[n * n - 1];
    e[n - 1] = 0.0;

    // Q = H_0 H_1 ... H_{n-3}, accumulated backwards so that each step only
    // touches the trailing block.
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        q[i * n + i] = 1.0;
    }
    for (k, (v, beta)) in reflectors.iter().enumerate().rev() {
        if *beta == 0.0 {
            continue;
        }
        let off = k + 1;
        let m = n - off;
        let mut u = vec![0.0; m];
        for (i, vi) in v.iter().enumerate() {
            let row = &q[(off + i) * n + off..(off + i + 1) * n];
            for (uj, rj) in u.iter_mut().zip(row) {
                *uj += vi * rj;
            }
        }
        for (i, vi) in v.iter().enumerate() {
            let scale = beta * vi;
            let row = &mut q[(off + i) * n + off..(off + i + 1) * n];
            for (rj, uj) in row.iter_mut().zip(&u) {
                *rj -= scale * uj;
            }
        }
    }
    (d, e, transpose(&q, n))
}

/// Implicit QL on the tridiagonal `(d, e)`; rotations are applied to the
/// rows of `z`, which start as `Q^T`.
fn ql_implicit(d: &mut [f64], e: &mut [f64], z: &mut [f64], n: usize) -> Result<()> {
    const MAX_ITER: usize = 60;
    let eps = f64::EPSILON;
    let mut shift_total = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > MAX_ITER {
                    return Err(Error::NoConvergence { index: l, dim: n });
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                shift_total += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    let h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    rotate_rows(z, n, i, c, s);
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += shift_total;
        e[l] = 0.0;
    }
    Ok(())
}

#[inline]
fn rotate_rows(z: &mut [f64], n: usize, i: usize, c: f64, s: f64) {
    let (head, tail) = z.split_at_mut((i + 1) * n);
    let zi = &mut head[i * n..];
    let zi1 = &mut tail[..n];
    for (a, b) in zi.iter_mut().zip(zi1.iter_mut()) {
        let h = *b;
        *b = s * *a + c * h;
        *a = c * *a - s * h;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators keep the loop vectorizable without reassociation.
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for k in 0..4 {
            acc[k] += a[4 * c + k] * b[4 * c + k];
        }
    }
    let mut tail = 0.0;
    for k in 4 * chunks..a.len() {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn transpose(a: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = a[i * n + j];
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let x = rng.random_range(-1.0..1.0);
                a[i * n + j] = x;
                a[j * n + i] = x;
            }
        }
        a
    }

    fn check_decomposition(a: &[f64], n: usize) {
        let (vals, vecs) = symmetric_eigen(a, n).unwrap();
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        for k in 0..n {
            let v = &vecs[k * n..(k + 1) * n];
            for i in 0..n {
                let av = dot(&a[i * n..(i + 1) * n], v);
                assert!((av - vals[k] * v[i]).abs() <= 1e-12 * norm.max(1.0));
            }
            for l in 0..n {
                let ip = dot(v, &vecs[l * n..(l + 1) * n]);
                let expect = if k == l { 1.0 } else { 0.0 };
                assert!((ip - expect).abs() <= 1e-12, "<v{k}, v{l}> = {ip}");
            }
        }
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn small_sizes() {
        for n in 1..6 {
            check_decomposition(&random_symmetric(n, n as u64), n);
        }
    }

    #[test]
    fn random_medium() {
        check_decomposition(&random_symmetric(40, 99), 40);
    }

    #[test]
    fn diagonal_and_repeated() {
        let n = 5;
        let mut a = vec![0.0; n * n];
        for (i, v) in [2.0, 2.0, -1.0, 7.0, 2.0].iter().enumerate() {
            a[i * n + i] = *v;
        }
        let (vals, _) = symmetric_eigen(&a, n).unwrap();
        assert_eq!(vals, vec![-1.0, 2.0, 2.0, 2.0, 7.0]);
        check_decomposition(&a, n);
    }

    #[test]
    fn low_rank() {
        let n = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a: Vec<f64> = (0..n * n).map(|k| u[k / n] * u[k % n]).collect();
        check_decomposition(&a, n);
        let (vals, _) = symmetric_eigen(&a, n).unwrap();
        let top: f64 = u.iter().map(|x| x * x).sum();
        assert!((vals[n - 1] - top).abs() < 1e-12);
        assert!(vals[..n - 1].iter().all(|v| v.abs() < 1e-12));
    }
}
