use super::csr::CsrMatrix;
use crate::error::{Error, Result};

/// Cholesky factor `L` of a symmetric positive definite band matrix.
///
/// Row `i` of `L` is stored contiguously for columns `i - bw ..= i`.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandCholesky {
    /// Factors `diag_scale * diag(extra_diag) + scale * A`, reading the lower triangle of `A`.
    pub fn factor_combination(a: &CsrMatrix, scale: f64, extra_diag: Option<&[f64]>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension("band factorization needs a square matrix".into()));
        }
        let bw = a.lower_bandwidth();
        let w = bw + 1;
        let mut data = vec![0.0; n * w];
        for r in 0..n {
            for e in a.indptr()[r]..a.indptr()[r + 1] {
                let c = a.indices()[e];
                if c <= r {
                    data[r * w + (c + bw - r)] += scale * a.values()[e];
                }
            }
            if let Some(d) = extra_diag {
                data[r * w + bw] += d[r];
            }
        }
        Self::factor_in_place(n, bw, data)
    }

    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        Self::factor_combination(a, 1.0, None)
    }

    fn factor_in_place(n: usize, bw: usize, mut data: Vec<f64>) -> Result<Self> {
        let w = bw + 1;
        for i in 0..n {
            let lo_i = i.saturating_sub(bw);
            for j in lo_i..=i {
                let lo = lo_i.max(j.saturating_sub(bw));
                let mut s = data[i * w + (j + bw - i)];
                let ri = i * w + bw - i;
                let rj = j * w + bw - j;
                for k in lo..j {
                    s -= data[ri + k] * data[rj + k];
                }
                if j == i {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Factorization(format!(
                            "non-positive pivot {s:e} at row {i}"
                        )));
                    }
                    data[i * w + bw] = s.sqrt();
                } else {
                    data[i * w + (j + bw - i)] = s / data[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    /// Overwrites `b` with `A^{-1} b`.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        debug_assert_eq!(b.len(), n);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let row = &self.data[i * w + bw - i..];
            let mut s = b[i];
            for k in lo..i {
                s -= row[k] * b[k];
            }
            b[i] = s / self.data[i * w + bw];
        }
        for i in (0..n).rev() {
            let xi = b[i] / self.data[i * w + bw];
            b[i] = xi;
            let lo = i.saturating_sub(bw);
            let row = &self.data[i * w + bw - i..];
            for k in lo..i {
                b[k] -= row[k] * xi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
                t.push((i - 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn matches_dense_solve() {
        let n = 40;
        let a = laplacian_1d(n);
        let shift: Vec<f64> = (0..n).map(|i| 0.1 + i as f64 * 0.01).collect();
        let f = BandCholesky::factor_combination(&a, 3.0, Some(&shift)).unwrap();
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = f.solve(&b);
        let dense = a.to_dense() * 3.0 + DMatrix::from_diagonal(&DVector::from_vec(shift));
        let xr = dense.lu().solve(&DVector::from_vec(b)).unwrap();
        for i in 0..n {
            assert!((x[i] - xr[i]).abs() < 1e-12 * xr.amax().max(1.0));
        }
    }

    #[test]
    fn rejects_indefinite() {
        let a = laplacian_1d(5);
        assert!(BandCholesky::factor_combination(&a, -1.0, None).is_err());
    }
}
