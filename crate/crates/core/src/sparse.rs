//! Compressed sparse row matrices.

/// Square or rectangular CSR matrix with `f64` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Assembles from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n_rows + 1];
        for &(r, c, _) in triplets {
            assert!(r < n_rows && c < n_cols, "triplet ({r}, {c}) out of bounds");
            counts[r + 1] += 1;
        }
        for i in 0..n_rows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let slot = next[r];
            cols[slot] = c;
            vals[slot] = v;
            next[r] += 1;
        }

        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for r in 0..n_rows {
            order.clear();
            order.extend(counts[r]..counts[r + 1]);
            order.sort_by_key(|&s| cols[s]);
            let mut last: Option<usize> = None;
            for &s in &order {
                if last == Some(cols[s]) {
                    *values.last_mut().unwrap() += vals[s];
                } else {
                    col_idx.push(cols[s]);
                    values.push(vals[s]);
                    last = Some(cols[s]);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
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

    /// Column indices and values of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.get(r, r)).collect()
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        for (r, yr) in y.iter_mut().enumerate() {
            *yr = self.row(r).map(|(c, v)| v * x[c]).sum();
        }
    }

    /// `Y = A X` for a row-major dense block `X` with `k` columns.
    pub fn mul_dense(&self, x: &[f64], k: usize, y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols * k);
        assert_eq!(y.len(), self.n_rows * k);
        for r in 0..self.n_rows {
            let out = &mut y[r * k..(r + 1) * k];
            out.fill(0.0);
            for (c, v) in self.row(r) {
                for (o, xv) in out.iter_mut().zip(&x[c * k..(c + 1) * k]) {
                    *o += v * xv;
                }
            }
        }
    }

    /// `Y += A^T X` for a row-major dense block `X` with `k` columns.
    pub fn mul_dense_transpose_acc(&self, x: &[f64], k: usize, y: &mut [f64]) {
        assert_eq!(x.len(), self.n_rows * k);
        assert_eq!(y.len(), self.n_cols * k);
        for r in 0..self.n_rows {
            let xr = &x[r * k..(r + 1) * k];
            for (c, v) in self.row(r) {
                for (o, xv) in y[c * k..(c + 1) * k].iter_mut().zip(xr) {
                    *o += v * xv;
                }
            }
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (r, row) in d.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] = v;
            }
        }
        d
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.n_rows == self.n_cols
            && (0..self.n_rows).all(|r| self.row(r).all(|(c, v)| (v - self.get(c, r)).abs() <= tol))
    }
}
