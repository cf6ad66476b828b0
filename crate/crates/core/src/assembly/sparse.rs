//! Compressed sparse row storage with shareable sparsity patterns.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Row offsets and sorted, unique column indices of a CSR matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl SparsityPattern {
    /// Build from per-row column lists; columns are sorted and deduplicated.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<usize>>) -> Result<Self> {
        let nrows = rows.len();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut cols in rows {
            cols.sort_unstable();
            cols.dedup();
            if let Some(&last) = cols.last() {
                if last >= ncols {
                    return Err(Error::Index { index: last, limit: ncols });
                }
            }
            col_idx.extend_from_slice(&cols);
            row_ptr.push(col_idx.len());
        }
        Ok(Self { nrows, ncols, row_ptr, col_idx })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Storage position of entry `(i, j)`, if it is in the pattern.
    #[inline]
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.row(i).binary_search(&j).ok().map(|k| start + k)
    }

    /// Pattern of the 2x2 block matrix whose four blocks all have this pattern.
    pub fn tiled_2x2(&self) -> Self {
        let n = self.nrows;
        let m = self.ncols;
        let mut row_ptr = Vec::with_capacity(2 * n + 1);
        let mut col_idx = Vec::with_capacity(4 * self.nnz());
        row_ptr.push(0);
        for _half in 0..2 {
            for i in 0..n {
                col_idx.extend_from_slice(self.row(i));
                col_idx.extend(self.row(i).iter().map(|&j| j + m));
                row_ptr.push(col_idx.len());
            }
        }
        Self { nrows: 2 * n, ncols: 2 * m, row_ptr, col_idx }
    }
}

/// CSR matrix. Matrices assembled on the same grid share one pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        Self { pattern, values }
    }

    pub fn from_parts(pattern: Arc<SparsityPattern>, values: Vec<f64>) -> Result<Self> {
        if values.len() != pattern.nnz() {
            return Err(Error::Dimension(format!(
                "{} values for a pattern with {} entries",
                values.len(),
                pattern.nnz()
            )));
        }
        Ok(Self { pattern, values })
    }

    /// Build from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows = vec![Vec::new(); nrows];
        for &(i, j, _) in triplets {
            if i >= nrows {
                return Err(Error::Index { index: i, limit: nrows });
            }
            rows[i].push(j);
        }
        let pattern = Arc::new(SparsityPattern::from_rows(ncols, rows)?);
        let mut m = Self::zeros(pattern);
        for &(i, j, v) in triplets {
            let k = m.pattern.position(i, j).expect("entry is in the pattern it was built from");
            m.values[k] += v;
        }
        Ok(m)
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, n, &t).expect("identity triplets are in range")
    }

    /// Keep the nonzero entries of a dense row-major matrix.
    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let t: Vec<_> = rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(move |(j, &v)| (i, j, v)))
            .collect();
        Self::from_triplets(nrows, ncols, &t).expect("dense indices are in range")
    }

    pub fn nrows(&self) -> usize {
        self.pattern.nrows
    }

    pub fn ncols(&self) -> usize {
        self.pattern.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.position(i, j).map_or(0.0, |k| self.values[k])
    }

    /// Entries of row `i` as `(column, value)` pairs.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1];
        self.pattern.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn same_pattern(&self, other: &SparseMatrix) -> bool {
        Arc::ptr_eq(&self.pattern, &other.pattern) || self.pattern == other.pattern
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows()];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols());
        assert_eq!(y.len(), self.nrows());
        let p = &self.pattern;
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                acc += self.values[k] * x[p.col_idx[k]];
            }
            *yi = acc;
        }
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows());
        let p = &self.pattern;
        let mut y = vec![0.0; self.ncols()];
        for (i, &xi) in x.iter().enumerate() {
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                y[p.col_idx[k]] += self.values[k] * xi;
            }
        }
        y
    }

    /// `x^T A x`
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.matvec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn transpose(&self) -> SparseMatrix {
        let t: Vec<_> = (0..self.nrows()).flat_map(|i| self.row(i).map(move |(j, v)| (j, i, v))).collect();
        Self::from_triplets(self.ncols(), self.nrows(), &t).expect("transposed indices are in range")
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|A_ij - A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.nrows() {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Induced 1-norm (largest absolute column sum).
    pub fn norm_1(&self) -> f64 {
        let mut col = vec![0.0; self.ncols()];
        for i in 0..self.nrows() {
            for (j, v) in self.row(i) {
                col[j] += v.abs();
            }
        }
        col.into_iter().fold(0.0, f64::max)
    }

    /// `sum_k c_k A_k` over matrices sharing one pattern.
    pub fn linear_combination(terms: &[(f64, &SparseMatrix)]) -> Result<SparseMatrix> {
        let (_, first) = terms.first().ok_or_else(|| Error::Dimension("empty linear combination".into()))?;
        let mut out = SparseMatrix::zeros(first.pattern.clone());
        for (c, m) in terms {
            if !m.same_pattern(first) {
                return Err(Error::Dimension("linear combination of differing patterns".into()));
            }
            for (o, v) in out.values.iter_mut().zip(&m.values) {
                *o += c * v;
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols()]; self.nrows()];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }

    /// Column pointers, row indices, and values of the same matrix in
    /// compressed sparse column form.
    pub fn to_csc(&self) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
        let (m, n) = (self.nrows(), self.ncols());
        let mut col_ptr = vec![0usize; n + 1];
        for &j in &self.pattern.col_idx {
            col_ptr[j + 1] += 1;
        }
        for j in 0..n {
            col_ptr[j + 1] += col_ptr[j];
        }
        let mut next = col_ptr.clone();
        let mut row_idx = vec![0usize; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        for i in 0..m {
            for k in self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1] {
                let j = self.pattern.col_idx[k];
                row_idx[next[j]] = i;
                vals[next[j]] = self.values[k];
                next[j] += 1;
            }
        }
        (col_ptr, row_idx, vals)
    }

    /// Matrix Market coordinate format (`real general`, 1-based indices).
    pub fn write_matrix_market<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(out, "{} {} {}", self.nrows(), self.ncols(), self.nnz())?;
        for i in 0..self.nrows() {
            for (j, v) in self.row(i) {
                writeln!(out, "{} {} {:.17e}", i + 1, j + 1, v)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates_and_sort() {
        let m = SparseMatrix::from_triplets(2, 3, &[(0, 2, 1.0), (0, 0, 2.0), (0, 2, 0.5), (1, 1, 3.0)]).unwrap();
        assert_eq!(m.pattern().row(0), &[0, 2]);
        assert_eq!(m.get(0, 2), 1.5);
        assert_eq!(m.get(1, 0), 0.0);
        assert_eq!(m.matvec(&[1.0, 1.0, 1.0]), vec![3.5, 3.0]);
        assert_eq!(m.matvec_transpose(&[1.0, 2.0]), vec![2.0, 6.0, 1.5]);
    }

    #[test]
    fn csc_round_trip() {
        let d = vec![vec![1.0, 0.0, 2.0], vec![0.0, 3.0, 0.0], vec![4.0, 5.0, 6.0]];
        let m = SparseMatrix::from_dense(&d);
        let (cp, ri, v) = m.to_csc();
        assert_eq!(cp, vec![0, 2, 4, 6]);
        assert_eq!(ri, vec![0, 2, 1, 2, 0, 2]);
        assert_eq!(v, vec![1.0, 4.0, 3.0, 5.0, 2.0, 6.0]);
        assert_eq!(m.transpose().transpose().to_dense(), d);
    }

    #[test]
    fn tiled_pattern() {
        let m = SparseMatrix::from_dense(&[vec![1.0, 1.0], vec![0.0, 1.0]]);
        let t = m.pattern().tiled_2x2();
        assert_eq!(t.nrows(), 4);
        assert_eq!(t.row(0), &[0, 1, 2, 3]);
        assert_eq!(t.row(3), &[1, 3]);
    }

    #[test]
    fn matrix_market_header() {
        let m = SparseMatrix::identity(2);
        let mut buf = Vec::new();
        m.write_matrix_market(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = s.lines().collect();
        assert_eq!(lines[0], "%%MatrixMarket matrix coordinate real general");
        assert_eq!(lines[1], "2 2 2");
        assert!(lines[3].starts_with("2 2 1.0"));
    }
}
