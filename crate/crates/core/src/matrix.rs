//! Square sparse (compressed sparse column) and dense column-major matrices.
//!
//! Row index = destination, column index = origin throughout the crate.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CscMatrix {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CscMatrix {
    pub fn identity(n: usize) -> Self {
        CscMatrix {
            n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds from per-column `(row, value)` lists. Rows within a column are
    /// sorted and must be unique.
    pub fn from_columns(n: usize, columns: Vec<Vec<(usize, f64)>>) -> Self {
        assert_eq!(columns.len(), n, "expected {n} columns");
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for mut col in columns {
            col.sort_by_key(|e| e.0);
            debug_assert!(col.windows(2).all(|w| w[0].0 < w[1].0), "duplicate row in column");
            for (r, v) in col {
                assert!(r < n, "row {r} out of bounds for n={n}");
                row_idx.push(r);
                values.push(v);
            }
            col_ptr.push(row_idx.len());
        }
        CscMatrix { n, col_ptr, row_idx, values }
    }

    /// Raw CSC parts; validated for monotone pointers and in-range rows.
    pub fn from_parts(n: usize, col_ptr: Vec<usize>, row_idx: Vec<usize>, values: Vec<f64>) -> Option<Self> {
        let ok = col_ptr.len() == n + 1
            && col_ptr.first() == Some(&0)
            && col_ptr.last() == Some(&row_idx.len())
            && row_idx.len() == values.len()
            && col_ptr.windows(2).all(|w| w[0] <= w[1])
            && row_idx.iter().all(|&r| r < n)
            && (0..n).all(|c| row_idx[col_ptr[c]..col_ptr[c + 1]].windows(2).all(|w| w[0] < w[1]));
        ok.then_some(CscMatrix { n, col_ptr, row_idx, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Position range of column `j` in the row/value arrays.
    pub fn col_range(&self, j: usize) -> std::ops::Range<usize> {
        self.col_ptr[j]..self.col_ptr[j + 1]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.col_range(j).map(move |p| (self.row_idx[p], self.values[p]))
    }

    /// Storage position of entry `(i, j)`, if structurally present.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let r = self.col_range(j);
        self.row_idx[r.clone()].binary_search(&i).ok().map(|k| r.start + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.values[p])
    }

    pub fn col_sum(&self, j: usize) -> f64 {
        self.values[self.col_range(j)].iter().sum()
    }

    pub fn max_col_sum_error(&self) -> f64 {
        (0..self.n).map(|j| (self.col_sum(j) - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.n);
        for j in 0..self.n {
            for (i, v) in self.column(j) {
                d.set(i, j, v);
            }
        }
        d
    }

    /// `self * x` for a dense vector.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for (i, v) in self.column(j) {
                    y[i] += v * xj;
                }
            }
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        DenseMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds from row-major nested rows (convenient for literals).
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "matrix must be square");
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        m
    }

    pub fn from_col_major(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n);
        DenseMatrix { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.n + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.n + i] = v;
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn column_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn as_col_major(&self) -> &[f64] {
        &self.data
    }

    pub fn mul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = DenseMatrix::zeros(n);
        for j in 0..n {
            let oc = other.column(j);
            let dst = &mut out.data[j * n..(j + 1) * n];
            for (k, &b) in oc.iter().enumerate() {
                if b != 0.0 {
                    let ac = &self.data[k * n..(k + 1) * n];
                    for (d, &a) in dst.iter_mut().zip(ac) {
                        *d += a * b;
                    }
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.n);
        for j in 0..self.n {
            for i in 0..self.n {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn pow(&self, p: u32) -> DenseMatrix {
        let mut acc = DenseMatrix::identity(self.n);
        for _ in 0..p {
            acc = self.mul(&acc);
        }
        acc
    }

    pub fn sub(&self, other: &DenseMatrix) -> DenseMatrix {
        DenseMatrix {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn col_sum(&self, j: usize) -> f64 {
        self.column(j).iter().sum()
    }

    pub fn max_col_sum_error(&self) -> f64 {
        (0..self.n).map(|j| (self.col_sum(j) - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn is_column_stochastic(&self, tol: f64) -> bool {
        self.data.iter().all(|&v| v >= -tol && v <= 1.0 + tol) && self.max_col_sum_error() <= tol
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for (yi, &a) in y.iter_mut().zip(self.column(j)) {
                    *yi += a * xj;
                }
            }
        }
        y
    }

    pub fn nnz(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csc_lookup_and_dense() {
        let m = CscMatrix::from_columns(2, vec![vec![(1, 0.75), (0, 0.25)], vec![(0, 1.0)]]);
        assert_eq!(m.get(0, 0), 0.25);
        assert_eq!(m.get(1, 0), 0.75);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.to_dense(), DenseMatrix::from_rows(&[vec![0.25, 1.0], vec![0.75, 0.0]]));
        assert_eq!(m.mul_vec(&[1.0, 2.0]), vec![2.25, 0.75]);
    }

    #[test]
    fn from_parts_validates() {
        assert!(CscMatrix::from_parts(2, vec![0, 1, 2], vec![0, 1], vec![1.0, 1.0]).is_some());
        assert!(CscMatrix::from_parts(2, vec![0, 1, 2], vec![0, 2], vec![1.0, 1.0]).is_none());
        assert!(CscMatrix::from_parts(2, vec![0, 2, 2], vec![1, 0], vec![1.0, 1.0]).is_none());
    }

    #[test]
    fn dense_algebra() {
        let swap = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(swap.pow(2), DenseMatrix::identity(2));
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(a.transpose().get(0, 1), 3.0);
        assert_eq!(a.mul(&DenseMatrix::identity(2)), a);
        assert_eq!(a.mul(&a), DenseMatrix::from_rows(&[vec![7.0, 10.0], vec![15.0, 22.0]]));
    }
}
