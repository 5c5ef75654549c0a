//! Compressed-row sparse matrices used for the design and penalty.

use faer::Mat;

/// Real matrix in compressed-row layout. Column indices within a row are
/// strictly increasing and stored values are nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// resulting zeros dropped.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_rows];
        for &(r, c, v) in triplets {
            assert!(r < n_rows && c < n_cols, "triplet ({r}, {c}) out of bounds");
            rows[r].push((c, v));
        }
        Self::from_rows(n_cols, rows)
    }

    /// Builds from per-row `(col, value)` lists in any order.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n_rows = rows.len();
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut i = 0;
            while i < row.len() {
                let c = row[i].0;
                assert!(c < n_cols, "column {c} out of bounds");
                let mut v = 0.0;
                while i < row.len() && row[i].0 == c {
                    v += row[i].1;
                    i += 1;
                }
                if v != 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn density(&self) -> f64 {
        self.nnz() as f64 / (self.n_rows as f64 * self.n_cols as f64)
    }

    /// `(columns, values)` of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[usize], &[f64])> + '_ {
        (0..self.n_rows).map(move |i| self.row(i))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map(|k| vals[k]).unwrap_or(0.0)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols);
        self.rows()
            .map(|(c, v)| c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum())
            .collect()
    }

    pub fn transpose_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.n_rows);
        let mut out = vec![0.0; self.n_cols];
        for (i, (c, v)) in self.rows().enumerate() {
            for (&j, &a) in c.iter().zip(v) {
                out[j] += a * y[i];
            }
        }
        out
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n_cols];
        for (i, (c, v)) in self.rows().enumerate() {
            for (&j, &a) in c.iter().zip(v) {
                rows[j].push((i, a));
            }
        }
        SparseMatrix::from_rows(self.n_rows, rows)
    }

    /// Rows `idx` in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> SparseMatrix {
        let rows = idx
            .iter()
            .map(|&i| {
                let (c, v) = self.row(i);
                c.iter().copied().zip(v.iter().copied()).collect()
            })
            .collect();
        SparseMatrix::from_rows(self.n_cols, rows)
    }

    /// Vertical concatenation.
    pub fn vstack(blocks: &[SparseMatrix]) -> SparseMatrix {
        let n_cols = blocks.first().map_or(0, |b| b.n_cols);
        let mut rows = Vec::new();
        for b in blocks {
            assert_eq!(b.n_cols, n_cols);
            for (c, v) in b.rows() {
                rows.push(c.iter().copied().zip(v.iter().copied()).collect());
            }
        }
        SparseMatrix::from_rows(n_cols, rows)
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.n_rows, self.n_cols);
        for (i, (c, v)) in self.rows().enumerate() {
            for (&j, &a) in c.iter().zip(v) {
                m[(i, j)] = a;
            }
        }
        m
    }

    /// `(self · dense)ᵀ`, i.e. one output column per row of `self`. `dense_t`
    /// holds `denseᵀ` so that each row of `dense` is a contiguous column.
    pub fn mul_dense_transposed(&self, dense_t: &Mat<f64>) -> Mat<f64> {
        assert_eq!(dense_t.ncols(), self.n_cols);
        let k = dense_t.nrows();
        let mut out = Mat::<f64>::zeros(k, self.n_rows);
        for (i, (c, v)) in self.rows().enumerate() {
            let mut col = out.col_mut(i);
            for (&j, &a) in c.iter().zip(v) {
                let src = dense_t.col(j);
                for r in 0..k {
                    col[r] += a * src[r];
                }
            }
        }
        out
    }
}
