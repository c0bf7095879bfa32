use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(
        nrows: usize,
        ncols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if indptr.len() != nrows + 1 || indices.len() != values.len() {
            return Err(Error::Dimension("inconsistent CSR arrays".into()));
        }
        if indptr[nrows] != indices.len() {
            return Err(Error::Dimension("CSR row pointer does not cover entries".into()));
        }
        for r in 0..nrows {
            let row = &indices[indptr[r]..indptr[r + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) || row.iter().any(|&c| c >= ncols) {
                return Err(Error::Dimension(format!("CSR row {r} not sorted or out of range")));
            }
        }
        Ok(Self { nrows, ncols, indptr, indices, values })
    }

    /// Builds a matrix from unsorted triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut t = triplets.to_vec();
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &t {
            assert!(r < nrows && c < ncols, "triplet out of range");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Self { nrows, ncols, indptr, indices, values }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: values.to_vec(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    /// Same sparsity pattern, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self { values, ..self.clone() }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }
    pub fn ncols(&self) -> usize {
        self.ncols
    }
    pub fn nnz(&self) -> usize {
        self.values.len()
    }
    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Row index of every stored entry.
    pub fn entry_rows(&self) -> Vec<usize> {
        let mut rows = vec![0; self.nnz()];
        for r in 0..self.nrows {
            for e in self.indptr[r]..self.indptr[r + 1] {
                rows[e] = r;
            }
        }
        rows
    }

    /// Position of `(r, c)` in the value array.
    pub fn find(&self, r: usize, c: usize) -> Option<usize> {
        let lo = self.indptr[r];
        let row = &self.indices[lo..self.indptr[r + 1]];
        row.binary_search(&c).ok().map(|i| lo + i)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.find(r, c).map_or(0.0, |e| self.values[e])
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for r in 0..self.nrows {
            let mut s = 0.0;
            for e in self.indptr[r]..self.indptr[r + 1] {
                s += self.values[e] * x[self.indices[e]];
            }
            y[r] = s;
        }
    }

    /// `y += a A x`
    pub fn mul_vec_add(&self, a: f64, x: &[f64], y: &mut [f64]) {
        for r in 0..self.nrows {
            let mut s = 0.0;
            for e in self.indptr[r]..self.indptr[r + 1] {
                s += self.values[e] * x[self.indices[e]];
            }
            y[r] += a * s;
        }
    }

    /// `y = A^T x`
    pub fn tr_mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        y.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.nrows {
            let xr = x[r];
            for e in self.indptr[r]..self.indptr[r + 1] {
                y[self.indices[e]] += self.values[e] * xr;
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec(x, &mut y);
        y
    }

    /// `self * b` for a dense right-hand side.
    pub fn mul_dense(&self, b: &nalgebra::DMatrix<f64>) -> nalgebra::DMatrix<f64> {
        let mut out = nalgebra::DMatrix::zeros(self.nrows(), b.ncols());
        for j in 0..b.ncols() {
            self.mul_vec(super::col(b, j), super::col_mut(&mut out, j));
        }
        out
    }

    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        self.tr_mul_vec(x, &mut y);
        y
    }

    /// `x^T A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for r in 0..self.nrows {
            let mut t = 0.0;
            for e in self.indptr[r]..self.indptr[r + 1] {
                t += self.values[e] * y[self.indices[e]];
            }
            s += x[r] * t;
        }
        s
    }

    pub fn transpose(&self) -> Self {
        let mut t = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for e in self.indptr[r]..self.indptr[r + 1] {
                t.push((self.indices[e], r, self.values[e]));
            }
        }
        Self::from_triplets(self.ncols, self.nrows, &t)
    }

    /// Sparse product `A B`.
    pub fn matmul(&self, b: &CsrMatrix) -> Self {
        assert_eq!(self.ncols, b.nrows);
        let mut t = Vec::new();
        for r in 0..self.nrows {
            for e in self.indptr[r]..self.indptr[r + 1] {
                let k = self.indices[e];
                let a = self.values[e];
                for f in b.indptr[k]..b.indptr[k + 1] {
                    t.push((r, b.indices[f], a * b.values[f]));
                }
            }
        }
        Self::from_triplets(self.nrows, b.ncols, &t)
    }

    /// Dense copy, intended for small matrices and tests.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for e in self.indptr[r]..self.indptr[r + 1] {
                d[(r, self.indices[e])] += self.values[e];
            }
        }
        d
    }

    /// Largest `row - col` over stored entries of the lower triangle.
    pub fn lower_bandwidth(&self) -> usize {
        let mut bw = 0;
        for r in 0..self.nrows {
            for e in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[e];
                if c < r {
                    bw = bw.max(r - c);
                }
            }
        }
        bw
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for r in 0..self.nrows {
            for e in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[e];
                if (self.values[e] - self.get(c, r)).abs() > tol * scale {
                    return false;
                }
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates_and_multiply() {
        let a = CsrMatrix::from_triplets(2, 3, &[(0, 2, 1.0), (0, 0, 2.0), (0, 2, 3.0), (1, 1, -1.0)]);
        assert_eq!(a.get(0, 2), 4.0);
        assert_eq!(a.apply(&[1.0, 2.0, 3.0]), vec![14.0, -2.0]);
        assert_eq!(a.apply_transpose(&[1.0, 1.0]), vec![2.0, -1.0, 4.0]);
        let ata = a.transpose().matmul(&a);
        assert!(ata.is_symmetric(0.0));
        assert_eq!(ata.to_dense(), a.to_dense().transpose() * a.to_dense());
    }
}
