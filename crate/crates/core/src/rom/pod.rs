use nalgebra::DMatrix;

use crate::linalg::{col, gram_schmidt_extend, tr_gemm, CsrMatrix};

/// POD of `snapshots` in the `gram` inner product.
///
/// Keeps the leading modes until the retained energy reaches `(1 - eps^2)` of the total.
/// Modes are orthonormal in `gram`; an all-zero snapshot set yields no modes.
///
/// The snapshot Gramian `S^T M S = R^T R` is factored through a `gram`-orthonormal
/// basis `Q` of the snapshots, so the singular values come from the small matrix `R`
/// and keep full relative accuracy down to rounding level.
pub fn pod_compress(snapshots: &DMatrix<f64>, gram: &CsrMatrix, eps: f64) -> DMatrix<f64> {
    pod_compress_relative(snapshots, gram, eps, None)
}

/// Like [`pod_compress`], but the discarded energy is measured against `reference`
/// (a squared norm) instead of the energy of `snapshots` itself.
///
/// Compressing projection defects against the energy of the raw snapshots keeps the
/// overall approximation error at `eps` and discards defects that are already below it.
pub fn pod_compress_relative(
    snapshots: &DMatrix<f64>,
    gram: &CsrMatrix,
    eps: f64,
    reference: Option<f64>,
) -> DMatrix<f64> {
    let (n, m) = snapshots.shape();
    let cols: Vec<Vec<f64>> = (0..m).map(|j| col(snapshots, j).to_vec()).collect();
    let q = gram_schmidt_extend(&[], &cols, Some(gram), 1e-12);
    if q.is_empty() {
        return DMatrix::zeros(n, 0);
    }
    let k = q.len();
    let mut qm = DMatrix::zeros(n, k);
    let mut mq = DMatrix::zeros(n, k);
    for (j, v) in q.iter().enumerate() {
        qm.column_mut(j).copy_from_slice(v);
        gram.mul_vec(v, mq.column_mut(j).as_mut_slice());
    }
    let r = tr_gemm(&mq, snapshots);
    let svd = r.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sq: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].powi(2)).collect();
    let total: f64 = sq.iter().sum();
    let allowed = eps * eps * reference.unwrap_or(total);
    // Tail energies as suffix sums; subtracting from the total loses them to rounding.
    let mut tail = vec![0.0; sq.len() + 1];
    for i in (0..sq.len()).rev() {
        tail[i] = tail[i + 1] + sq[i];
    }
    let mut kept = 0;
    while kept < sq.len() && sq[kept] > 0.0 && tail[kept] > allowed {
        kept += 1;
    }
    let mut vecs = DMatrix::zeros(k, kept);
    for (j, &i) in order.iter().take(kept).enumerate() {
        vecs.set_column(j, &u.column(i));
    }
    let modes = &qm * vecs;
    let cands: Vec<Vec<f64>> = (0..kept).map(|j| col(&modes, j).to_vec()).collect();
    let clean = gram_schmidt_extend(&[], &cands, Some(gram), 1e-10);
    let mut out = DMatrix::zeros(n, clean.len());
    for (j, v) in clean.iter().enumerate() {
        out.column_mut(j).copy_from_slice(v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_snapshot_is_normalized() {
        let g = CsrMatrix::diagonal(&[1.0, 4.0]);
        let s = DMatrix::from_column_slice(2, 1, &[3.0, 2.0]);
        let m = pod_compress(&s, &g, 1e-3);
        assert_eq!(m.ncols(), 1);
        let nrm = (9.0f64 + 16.0).sqrt();
        assert!((m[(0, 0)].abs() - 3.0 / nrm).abs() < 1e-14);
        assert!((m[(1, 0)].abs() - 2.0 / nrm).abs() < 1e-14);
    }

    #[test]
    fn orthogonal_equal_snapshots_are_both_kept() {
        let g = CsrMatrix::identity(3);
        let s = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(pod_compress(&s, &g, 1e-8).ncols(), 2);
        assert_eq!(pod_compress(&DMatrix::zeros(3, 4), &g, 1e-3).ncols(), 0);
        let small = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1e-6]);
        assert_eq!(pod_compress_relative(&small, &g, 1e-3, Some(1.0)).ncols(), 0);
        assert_eq!(pod_compress_relative(&small, &g, 1e-7, Some(1.0)).ncols(), 1);
    }

    #[test]
    fn graded_spectrum_keeps_modes_far_below_rounding_of_the_total() {
        // Singular values 1, 1e-3, .., 1e-12: the tail energies sit below
        // eps_machine * total but above eps^2 * total.
        let n = 6;
        let s = DMatrix::from_fn(n, 5, |i, j| if i == j { 10f64.powi(-3 * j as i32) } else { 0.0 });
        let g = CsrMatrix::identity(n);
        assert_eq!(pod_compress(&s, &g, 1e-14).ncols(), 5);
        assert_eq!(pod_compress(&s, &g, 1e-5).ncols(), 2);
    }
}
