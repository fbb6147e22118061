//! Small dense linear-algebra helpers.
//!
//! Everything here is deterministic: summations run in a fixed index order
//! regardless of matrix shape or thread count, so batched and unbatched
//! call sites produce bit-identical results.

use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;

use crate::scalar::Scalar;

/// Rows below this count are not worth a rayon dispatch.
const PAR_ROW_THRESHOLD: usize = 64;

fn matmul_impl<T: Scalar>(a: ArrayView2<'_, T>, b: ArrayView2<'_, T>, parallel: bool) -> Array2<T> {
    let (m, ka) = a.dim();
    let (kb, n) = b.dim();
    assert_eq!(ka, kb, "matmul inner dimensions differ: {ka} vs {kb}");

    let a_std = a.as_standard_layout();
    let a_slice = a_std.as_slice().expect("standard layout");
    let b_std = b.as_standard_layout();
    let b_slice = b_std.as_slice().expect("standard layout");

    let mut out = vec![T::zero(); m * n];
    let row_job = |(i, out_row): (usize, &mut [T])| {
        let a_row = &a_slice[i * ka..(i + 1) * ka];
        for (k, &aik) in a_row.iter().enumerate() {
            let b_row = &b_slice[k * n..(k + 1) * n];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o = *o + aik * bkj;
            }
        }
    };
    if parallel && m >= PAR_ROW_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(row_job);
    } else {
        out.chunks_mut(n).enumerate().for_each(row_job);
    }
    Array2::from_shape_vec((m, n), out).expect("shape matches buffer")
}

/// Dense matrix product with fixed i-k-j accumulation order.
///
/// Each output row depends only on the matching input row, so row-parallel
/// execution is bit-identical to sequential execution.
pub fn matmul<T: Scalar>(a: ArrayView2<'_, T>, b: ArrayView2<'_, T>) -> Array2<T> {
    matmul_impl(a, b, true)
}

/// Same kernel as [`matmul`] but never spawns parallel work; for call sites
/// that already run inside a rayon task.
pub fn matmul_seq<T: Scalar>(a: ArrayView2<'_, T>, b: ArrayView2<'_, T>) -> Array2<T> {
    matmul_impl(a, b, false)
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// In-place numerically stabilized softmax over one row.
pub fn softmax_row<T: Scalar>(row: &mut [T]) {
    let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
    let mut denom = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        denom += *v;
    }
    for v in row.iter_mut() {
        *v = *v / denom;
    }
}

/// Row-wise softmax of `m` scaled by `temperature`.
pub fn row_softmax_scaled<T: Scalar>(m: ArrayView2<'_, T>, temperature: T) -> Array2<T> {
    let mut out = m.to_owned();
    for mut row in out.rows_mut() {
        let row = row.as_slice_mut().expect("standard layout");
        for v in row.iter_mut() {
            *v = *v * temperature;
        }
        softmax_row(row);
    }
    out
}

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// columns. Deterministic: sweep order is fixed and ties sort by original
/// index.
pub fn symmetric_eigen<T: Scalar>(matrix: ArrayView2<'_, T>) -> (Array1<T>, Array2<T>) {
    let n = matrix.nrows();
    assert_eq!(n, matrix.ncols(), "symmetric_eigen needs a square matrix");
    let mut a = matrix.to_owned();
    let mut v = Array2::<T>::eye(n);
    if n <= 1 {
        let vals = Array1::from_iter(a.diag().iter().cloned());
        return (vals, v);
    }

    let eps = T::epsilon() * T::from_f64_lossy(16.0);
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = T::zero();
        let mut scale = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[[p, q]] * a[[p, q]];
            }
            scale += a[[p, p]] * a[[p, p]];
        }
        if off <= eps * eps * (scale + off) || off == T::zero() {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                let theta = (aqq - app) / (T::from_f64_lossy(2.0) * apq);
                // Smaller-angle rotation root for stability.
                let t = {
                    let sign = if theta >= T::zero() { T::one() } else { -T::one() };
                    sign / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[[j, j]]
            .partial_cmp(&a[[i, i]])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values = Array1::from_iter(order.iter().map(|&i| a[[i, i]]));
    let mut vectors = Array2::<T>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[[r, dst]] = v[[r, src]];
        }
    }
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matmul_matches_naive_loop() {
        let a = array![[1.0_f64, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let b = array![[7.0, 8.0], [9.0, 10.0], [11.0, 12.0]];
        let c = matmul(a.view(), b.view());
        let mut expect = Array2::<f64>::zeros((2, 2));
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..3 {
                    expect[[i, j]] += a[[i, k]] * b[[k, j]];
                }
            }
        }
        assert_eq!(c, expect);
    }

    #[test]
    fn matmul_parallel_rows_bit_identical() {
        // 128 rows crosses the parallel threshold; compare against the
        // sequential path on a row-by-row basis.
        let m = 128;
        let a = Array2::from_shape_fn((m, 33), |(i, j)| ((i * 31 + j * 7) % 13) as f64 * 0.37 - 1.0);
        let b = Array2::from_shape_fn((33, 17), |(i, j)| ((i * 5 + j * 11) % 7) as f64 * 0.21 - 0.4);
        let full = matmul(a.view(), b.view());
        for i in 0..m {
            let row = matmul(a.slice(ndarray::s![i..i + 1, ..]), b.view());
            assert_eq!(full.row(i), row.row(0), "row {i} differs");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut row = vec![1.0_f64, 2.0, 3.0, -1.0];
        softmax_row(&mut row);
        let sum: f64 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        // Stabilization keeps huge logits finite.
        let mut big = vec![1e4_f64, 1e4 - 1.0];
        softmax_row(&mut big);
        assert!(big.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        let a = array![[2.0_f64, 1.0], [1.0, 2.0]];
        let (vals, vecs) = symmetric_eigen(a.view());
        assert!((vals[0] - 3.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
        // A v = lambda v
        for j in 0..2 {
            for i in 0..2 {
                let av: f64 = (0..2).map(|k| a[[i, k]] * vecs[[k, j]]).sum();
                assert!((av - vals[j] * vecs[[i, j]]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn jacobi_residuals_on_random_symmetric() {
        let n = 24;
        let mut a = Array2::<f64>::zeros((n, n));
        let mut state = 0x9e3779b97f4a7c15_u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for i in 0..n {
            for j in i..n {
                let v = next();
                a[[i, j]] = v;
                a[[j, i]] = v;
            }
        }
        let (vals, vecs) = symmetric_eigen(a.view());
        for j in 0..n {
            let mut resid = 0.0_f64;
            for i in 0..n {
                let av: f64 = (0..n).map(|k| a[[i, k]] * vecs[[k, j]]).sum();
                resid += (av - vals[j] * vecs[[i, j]]).powi(2);
            }
            assert!(resid.sqrt() < 1e-9, "residual {} for eigenpair {j}", resid.sqrt());
        }
        // Descending order.
        for w in vals.as_slice().unwrap().windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
    }
}
