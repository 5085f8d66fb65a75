use ndarray::{Array2, ArrayView2};

/// Compressed-sparse-row matrix used for constant operands (row-normalized
/// propagation matrices, sparse bag-of-words features).
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(
                r < rows && c < cols,
                "triplet ({r}, {c}) outside {rows}x{cols}"
            );
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        CsrMatrix {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    /// Keeps the exact nonzero pattern of a dense matrix.
    pub fn from_dense(m: ArrayView2<f64>) -> Self {
        let mut triplets = Vec::new();
        for ((r, c), &v) in m.indexed_iter() {
            if v != 0.0 {
                triplets.push((r, c, v));
            }
        }
        CsrMatrix::from_triplets(m.nrows(), m.ncols(), triplets)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn density(&self) -> f64 {
        if self.rows * self.cols == 0 {
            0.0
        } else {
            self.nnz() as f64 / (self.rows * self.cols) as f64
        }
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.indptr[r], self.indptr[r + 1]);
        self.indices[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    /// `self * b`
    pub fn matmul(&self, b: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(self.cols, b.nrows());
        let mut out = Array2::<f64>::zeros((self.rows, b.ncols()));
        for r in 0..self.rows {
            let mut out_row = out.row_mut(r);
            for (c, v) in self.row(r) {
                out_row.scaled_add(v, &b.row(c));
            }
        }
        out
    }

    /// `self^T * g`
    pub fn transpose_matmul(&self, g: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(self.rows, g.nrows());
        let mut out = Array2::<f64>::zeros((self.cols, g.ncols()));
        for r in 0..self.rows {
            let g_row = g.row(r);
            for (c, v) in self.row(r) {
                out.row_mut(c).scaled_add(v, &g_row);
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out[[r, c]] += v;
            }
        }
        out
    }
}
