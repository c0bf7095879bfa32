//! Sparse storage, band Cholesky and small dense helpers.

mod band;
mod csr;

pub use band::BandCholesky;
pub use csr::CsrMatrix;

use nalgebra::{DMatrix, DVector};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Column `k` of a column-major matrix as a slice.
pub fn col(m: &DMatrix<f64>, k: usize) -> &[f64] {
    let n = m.nrows();
    &m.as_slice()[k * n..(k + 1) * n]
}

pub fn col_mut(m: &mut DMatrix<f64>, k: usize) -> &mut [f64] {
    let n = m.nrows();
    &mut m.as_mut_slice()[k * n..(k + 1) * n]
}

/// `a^T b` through an explicit transpose, so the product runs on the blocked gemm kernel.
pub fn tr_gemm(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * b
}

/// Orthonormalizes `candidates` against `basis` and each other in the inner product
/// induced by `gram` (`None` means Euclidean), with two passes of modified Gram-Schmidt.
///
/// A candidate whose remainder falls below `tol` times its original norm is skipped.
/// Returns the accepted vectors.
pub fn gram_schmidt_extend(
    basis: &[Vec<f64>],
    candidates: &[Vec<f64>],
    gram: Option<&CsrMatrix>,
    tol: f64,
) -> Vec<Vec<f64>> {
    let apply = |x: &[f64]| -> Vec<f64> {
        match gram {
            Some(g) => g.apply(x),
            None => x.to_vec(),
        }
    };
    // Gram-weighted copies make every projection coefficient a plain dot product.
    let mut weighted: Vec<Vec<f64>> = basis.iter().map(|b| apply(b)).collect();
    let mut accepted: Vec<Vec<f64>> = Vec::new();
    for c in candidates {
        let mut v = c.clone();
        let n0 = dot(&v, &apply(&v)).max(0.0).sqrt();
        if !(n0 > 0.0) || !n0.is_finite() {
            continue;
        }
        for _pass in 0..2 {
            for (b, wb) in basis.iter().chain(accepted.iter()).zip(weighted.iter()) {
                let h = dot(wb, &v);
                axpy(-h, b, &mut v);
            }
        }
        let wv = apply(&v);
        let n1 = dot(&v, &wv).max(0.0).sqrt();
        if n1 <= tol * n0 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n1);
        weighted.push(wv.into_iter().map(|x| x / n1).collect());
        accepted.push(v);
    }
    accepted
}

/// Largest eigenvalue of the symmetric pencil `(apply, gram)` by power iteration on
/// `gram^{-1} apply`.
pub fn power_iteration(
    n: usize,
    mut apply: impl FnMut(&[f64]) -> Vec<f64>,
    gram_solve: impl Fn(&[f64]) -> Vec<f64>,
    gram_apply: impl Fn(&[f64]) -> Vec<f64>,
    iters: usize,
    tol: f64,
) -> f64 {
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 13) as f64 / 13.0).collect();
    let nv = dot(&v, &gram_apply(&v)).sqrt();
    v.iter_mut().for_each(|x| *x /= nv);
    let mut lambda = 0.0;
    for _ in 0..iters {
        let av = apply(&v);
        let rq = dot(&v, &av);
        let mut w = gram_solve(&av);
        let nw = dot(&w, &gram_apply(&w)).sqrt();
        if !(nw > 0.0) {
            return 0.0;
        }
        w.iter_mut().for_each(|x| *x /= nw);
        v = w;
        if (rq - lambda).abs() <= tol * rq.abs() {
            return rq;
        }
        lambda = rq;
    }
    lambda
}

/// Symmetric eigen-decomposition with eigenvalues sorted in decreasing order.
pub fn sorted_symmetric_eigen(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = nalgebra::SymmetricEigen::new(m);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (j, &i) in order.iter().enumerate() {
        vecs.set_column(j, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}
