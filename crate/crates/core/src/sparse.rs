use nalgebra::DMatrix;

/// Compressed sparse row matrix with `f64` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_rows<I>(n_cols: usize, rows: I) -> Self
    where
        I: IntoIterator<Item = (Vec<usize>, Vec<f64>)>,
    {
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for (cols, vals) in rows {
            assert_eq!(cols.len(), vals.len(), "row index/value length mismatch");
            debug_assert!(cols.iter().all(|&c| c < n_cols));
            col_idx.extend(cols);
            values.extend(vals);
            row_ptr.push(col_idx.len());
        }
        Self {
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows(n, (0..n).map(|i| (vec![i], vec![1.0])))
    }

    pub fn n_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[range.clone()], &self.values[range])
    }

    pub fn row_values_mut(&mut self, i: usize) -> &mut [f64] {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        &mut self.values[range]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.iter().position(|&c| c == j).map_or(0.0, |k| vals[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows());
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows()];
        self.matvec_into(x, &mut y);
        y
    }

    /// Copy of the matrix with every flagged row replaced by the identity row.
    pub fn with_identity_rows(&self, flagged: &[bool]) -> Self {
        assert_eq!(flagged.len(), self.n_rows());
        let rows = (0..self.n_rows()).map(|k| {
            if flagged[k] {
                (vec![k], vec![1.0])
            } else {
                let (c, v) = self.row(k);
                (c.to_vec(), v.to_vec())
            }
        });
        Self::from_rows(self.n_cols, rows)
    }

    /// Entry-wise affine combination `alpha * I + beta * self` (square only).
    pub fn shifted(&self, alpha: f64, beta: f64) -> Self {
        assert_eq!(self.n_rows(), self.n_cols);
        let rows = (0..self.n_rows()).map(|i| {
            let (c, v) = self.row(i);
            let mut cols = c.to_vec();
            let mut vals: Vec<f64> = v.iter().map(|x| beta * x).collect();
            match cols.iter().position(|&k| k == i) {
                Some(k) => vals[k] += alpha,
                None => {
                    cols.push(i);
                    vals.push(alpha);
                }
            }
            (cols, vals)
        });
        Self::from_rows(self.n_cols, rows)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows(), self.n_cols);
        for i in 0..self.n_rows() {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                m[(i, c)] += v;
            }
        }
        m
    }
}
