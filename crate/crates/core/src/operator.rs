//! Discrete operators stored row by row: `D_i u = sum_j c_ij u_j`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Laplace,
    Gradient(usize),
    Diffusion,
    ZeroFunctional,
    Derived,
}

impl OperatorKind {
    /// Laplace and diffusion rows annihilate constants.
    pub fn has_zero_row_sum(self) -> bool {
        matches!(self, OperatorKind::Laplace | OperatorKind::Diffusion)
    }
}

/// Coefficients of one operator row centered at point `center`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorRow {
    pub center: usize,
    pub indices: Vec<usize>,
    pub coefficients: Vec<f64>,
}

impl OperatorRow {
    pub fn new(center: usize, indices: Vec<usize>, coefficients: Vec<f64>) -> Self {
        debug_assert_eq!(indices.len(), coefficients.len());
        Self {
            center,
            indices,
            coefficients,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn diagonal_position(&self) -> Option<usize> {
        self.indices.iter().position(|&j| j == self.center)
    }

    pub fn diagonal(&self) -> f64 {
        self.diagonal_position().map_or(0.0, |k| self.coefficients[k])
    }

    pub fn apply(&self, values: &[f64]) -> f64 {
        apply_row(&self.indices, &self.coefficients, values)
    }

    /// Off-diagonal sum in stored order, then the diagonal. A diagonal set to
    /// minus the off-diagonal sum in the same order yields exactly zero.
    pub fn row_sum(&self) -> f64 {
        row_sum(self.center, &self.indices, &self.coefficients)
    }

    pub fn max_abs(&self) -> f64 {
        self.coefficients.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Overwrite the diagonal with minus the off-diagonal sum.
    pub fn rederive_diagonal(&mut self) {
        set_zero_sum_diagonal(self.center, &self.indices, &mut self.coefficients);
    }
}

pub(crate) fn apply_row(indices: &[usize], coefficients: &[f64], values: &[f64]) -> f64 {
    indices
        .iter()
        .zip(coefficients)
        .map(|(&j, &c)| c * values[j])
        .sum()
}

pub(crate) fn row_sum(center: usize, indices: &[usize], coefficients: &[f64]) -> f64 {
    let mut off = 0.0;
    let mut diag = 0.0;
    for (&j, &c) in indices.iter().zip(coefficients) {
        if j == center {
            diag += c;
        } else {
            off += c;
        }
    }
    off + diag
}

pub(crate) fn set_zero_sum_diagonal(center: usize, indices: &[usize], coefficients: &mut [f64]) {
    let mut off = 0.0;
    let mut slot = None;
    for (k, (&j, &c)) in indices.iter().zip(coefficients.iter()).enumerate() {
        if j == center {
            slot = Some(k);
        } else {
            off += c;
        }
    }
    if let Some(k) = slot {
        coefficients[k] = -off;
    }
}

/// An assembled operator: one row per cloud point, in point order.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    pub kind: OperatorKind,
    /// Monomial degree of the underlying consistency conditions (0 when the
    /// operator is not built from a basis, e.g. the Voronoi finite volumes).
    pub degree: usize,
    pub corrected: bool,
    csr: CsrMatrix,
}

impl OperatorMatrix {
    pub fn from_rows(kind: OperatorKind, degree: usize, corrected: bool, rows: Vec<OperatorRow>) -> Self {
        let n = rows.len();
        debug_assert!(rows.iter().enumerate().all(|(i, r)| r.center == i));
        let csr = CsrMatrix::from_rows(n, rows.into_iter().map(|r| (r.indices, r.coefficients)));
        Self {
            kind,
            degree,
            corrected,
            csr,
        }
    }

    pub fn len(&self) -> usize {
        self.csr.n_rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn csr(&self) -> &CsrMatrix {
        &self.csr
    }

    pub fn indices(&self, i: usize) -> &[usize] {
        self.csr.row(i).0
    }

    pub fn coefficients(&self, i: usize) -> &[f64] {
        self.csr.row(i).1
    }

    pub fn row(&self, i: usize) -> OperatorRow {
        let (c, v) = self.csr.row(i);
        OperatorRow::new(i, c.to_vec(), v.to_vec())
    }

    pub fn rows(&self) -> impl Iterator<Item = OperatorRow> + '_ {
        (0..self.len()).map(|i| self.row(i))
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        self.csr.get(i, i)
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        let (c, v) = self.csr.row(i);
        row_sum(i, c, v)
    }

    pub fn row_max_abs(&self, i: usize) -> f64 {
        self.coefficients(i).iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        self.csr.matvec(values)
    }

    pub fn apply_row(&self, i: usize, values: &[f64]) -> f64 {
        let (c, v) = self.csr.row(i);
        apply_row(c, v, values)
    }

    /// `i,j,value` triples in row-major order with 17 significant digits.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("i,j,value\n");
        for i in 0..self.len() {
            let (cols, vals) = self.csr.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let _ = writeln!(out, "{i},{j},{v:.16e}");
            }
        }
        fs::write(path, out)?;
        Ok(())
    }
}
