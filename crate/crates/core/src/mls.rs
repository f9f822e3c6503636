//! Moving least squares operator rows.
//!
//! Each row solves `min 1/2 sum_j (c_j / w_j)^2` subject to exact
//! reproduction of a monomial basis, `K c = b`. The closed-form solution is
//! `c = W^2 K^T (K W^2 K^T)^{-1} b`. Internally the monomials are scaled by
//! `h^{-|alpha|}` so the normal matrix does not degrade as `h -> 0`; the
//! returned coefficients always act on unscaled point values.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{GfdmError, Result};
use crate::operator::{OperatorKind, OperatorMatrix, OperatorRow};
use crate::pointcloud::{PointCloud, StencilSet};
use crate::spatial::Point;

/// Normal-matrix condition number above which the Cholesky route is
/// abandoned for a pivoted QR factorization.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Pivots of `W K^T` below this fraction of the largest mark the stencil as
/// rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Guard for the diagonal dominance correction denominator.
const CORRECTION_GUARD: f64 = 1e-14;

pub type MultiIndex = [u32; 2];

#[inline]
pub fn monomial(d: Point, alpha: MultiIndex) -> f64 {
    d[0].powi(alpha[0] as i32) * d[1].powi(alpha[1] as i32)
}

/// Bivariate monomials of total degree at most `degree`, ordered by degree
/// and, within a degree, by decreasing power of the first coordinate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonomialBasis {
    degree: usize,
    exponents: Vec<MultiIndex>,
}

impl MonomialBasis {
    pub fn new(degree: usize) -> Self {
        let exponents = (0..=degree as u32)
            .flat_map(|d| (0..=d).rev().map(move |a| [a, d - a]))
            .collect();
        Self { degree, exponents }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self) -> &[MultiIndex] {
        &self.exponents
    }

    pub fn position(&self, alpha: MultiIndex) -> Option<usize> {
        self.exponents.iter().position(|&a| a == alpha)
    }
}

/// Geometry of one stencil seen from its center.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalStencil {
    pub center: usize,
    pub indices: Vec<usize>,
    /// `x_j - x_i` for every stencil member, aligned with `indices`.
    pub offsets: Vec<Point>,
    /// Effective smoothing length `h_i`.
    pub h: f64,
}

impl LocalStencil {
    pub fn new(center: usize, indices: Vec<usize>, offsets: Vec<Point>, h: f64) -> Self {
        debug_assert_eq!(indices.len(), offsets.len());
        Self {
            center,
            indices,
            offsets,
            h,
        }
    }

    pub fn gather(cloud: &PointCloud, stencils: &StencilSet, i: usize) -> Self {
        let xi = cloud.point(i);
        let indices = stencils.neighbors(i).to_vec();
        let offsets = indices
            .iter()
            .map(|&j| {
                let xj = cloud.point(j);
                [xj[0] - xi[0], xj[1] - xi[1]]
            })
            .collect();
        Self::new(i, indices, offsets, stencils.radius(i))
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.offsets.iter().map(|d| d[0].hypot(d[1])).collect()
    }

    fn center_position(&self) -> Option<usize> {
        self.indices.iter().position(|&j| j == self.center)
    }
}

/// `w_ij = exp(-|x_j - x_i| / h_i)`.
pub fn weight_vector(distances: &[f64], h: f64) -> Vec<f64> {
    distances.iter().map(|&d| (-d / h).exp()).collect()
}

/// Consistency targets of the Laplacian: 2 for pure second powers, else 0.
pub fn rhs_laplace(basis: &MonomialBasis) -> Result<Vec<f64>> {
    if basis.degree() < 2 {
        return Err(GfdmError::Parameter(format!(
            "the Laplacian needs a basis of degree >= 2, got {}",
            basis.degree()
        )));
    }
    Ok(basis
        .exponents()
        .iter()
        .map(|&a| if a == [2, 0] || a == [0, 2] { 2.0 } else { 0.0 })
        .collect())
}

/// Consistency targets of the derivative along axis `k` (0 for x, 1 for y).
pub fn rhs_gradient(basis: &MonomialBasis, k: usize) -> Result<Vec<f64>> {
    if k > 1 {
        return Err(GfdmError::Parameter(format!("gradient component {k} is not 0 or 1")));
    }
    if basis.degree() < 1 {
        return Err(GfdmError::Parameter("the gradient needs a basis of degree >= 1".into()));
    }
    let unit = if k == 0 { [1, 0] } else { [0, 1] };
    Ok(basis
        .exponents()
        .iter()
        .map(|&a| if a == unit { 1.0 } else { 0.0 })
        .collect())
}

/// `W K^T` with scaled monomials: entry (j, a) = w_j (d_j / h)^alpha_a.
fn scaled_design(stencil: &LocalStencil, weights: &[f64], basis: &MonomialBasis) -> DMatrix<f64> {
    let n = stencil.len();
    let m = basis.len();
    let inv_h = 1.0 / stencil.h;
    let mut design = DMatrix::zeros(n, m);
    for (j, (d, &w)) in stencil.offsets.iter().zip(weights).enumerate() {
        let s = [d[0] * inv_h, d[1] * inv_h];
        for (a, &alpha) in basis.exponents().iter().enumerate() {
            design[(j, a)] = w * monomial(s, alpha);
        }
    }
    design
}

fn scaled_rhs(rhs: &[f64], basis: &MonomialBasis, h: f64) -> Vec<f64> {
    rhs.iter()
        .zip(basis.exponents())
        .map(|(&b, a)| b / h.powi((a[0] + a[1]) as i32))
        .collect()
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Weighted minimum-norm solution of `K c = b` given `design = W K^T`.
/// Returns `None` when `K` is rank deficient.
fn min_norm_solve(design: &DMatrix<f64>, weights: &[f64], rhs: &[f64], force_qr: bool) -> Option<Vec<f64>> {
    let b = DVector::from_column_slice(rhs);
    if !force_qr {
        let normal = design.transpose() * design;
        if let Some(chol) = Cholesky::new(normal.clone()) {
            let cond = norm1(&normal) * norm1(&chol.inverse());
            if cond.is_finite() && cond <= CONDITION_LIMIT {
                let y = chol.solve(&b);
                let mut c = weighted(design * y, weights);
                // one step of iterative refinement on the constraint residual
                let r = &b - constraint_product(design, weights, &c);
                let dc = weighted(design * chol.solve(&r), weights);
                for (ci, di) in c.iter_mut().zip(dc.iter()) {
                    *ci += di;
                }
                return Some(c);
            }
        }
    }
    qr_solve(design, weights, &b)
}

fn weighted(v: DVector<f64>, weights: &[f64]) -> Vec<f64> {
    v.iter().zip(weights).map(|(x, w)| x * w).collect()
}

/// `K c` recovered from the weighted design matrix.
fn constraint_product(design: &DMatrix<f64>, weights: &[f64], c: &[f64]) -> DVector<f64> {
    let unweighted = DVector::from_iterator(c.len(), c.iter().zip(weights).map(|(x, w)| x / w));
    design.transpose() * unweighted
}

/// `c = W Q R^{-T} P^T b` from `W K^T P = Q R`.
fn qr_solve(design: &DMatrix<f64>, weights: &[f64], b: &DVector<f64>) -> Option<Vec<f64>> {
    let m = design.ncols();
    if design.nrows() < m {
        return None;
    }
    let qr = design.clone().col_piv_qr();
    let r = qr.r();
    let pivot_max = (0..m).map(|k| r[(k, k)].abs()).fold(0.0, f64::max);
    if pivot_max.is_nan() || pivot_max <= 0.0 || (0..m).any(|k| r[(k, k)].abs() <= RANK_TOL * pivot_max) {
        return None;
    }
    let mut z = b.clone();
    qr.p().permute_rows(&mut z);
    let v = r.transpose().solve_lower_triangular(&z)?;
    Some(weighted(qr.q() * v, weights))
}

fn solve_row(
    stencil: &LocalStencil,
    weights: &[f64],
    basis: &MonomialBasis,
    rhs: &[f64],
    force_qr: bool,
) -> Result<OperatorRow> {
    assert_eq!(rhs.len(), basis.len(), "right-hand side does not match the basis");
    assert_eq!(weights.len(), stencil.len(), "weights do not match the stencil");
    let singular = || GfdmError::SingularStencil {
        point: stencil.center,
    };
    if stencil.len() < basis.len() {
        return Err(singular());
    }
    let design = scaled_design(stencil, weights, basis);
    let b = scaled_rhs(rhs, basis, stencil.h);
    let c = min_norm_solve(&design, weights, &b, force_qr).ok_or_else(singular)?;
    if c.iter().any(|x| !x.is_finite()) {
        return Err(singular());
    }
    Ok(OperatorRow::new(stencil.center, stencil.indices.clone(), c))
}

/// Operator row reproducing `sum_j c_j phi(x_j) = rhs[phi]` for every basis
/// monomial `phi(x) = (x - x_i)^alpha`, with minimal weighted norm.
pub fn solve_mls_row(
    stencil: &LocalStencil,
    weights: &[f64],
    basis: &MonomialBasis,
    rhs: &[f64],
) -> Result<OperatorRow> {
    solve_row(stencil, weights, basis, rhs, false)
}

/// Same as [`solve_mls_row`] but always through the pivoted QR route.
pub fn solve_mls_row_qr(
    stencil: &LocalStencil,
    weights: &[f64],
    basis: &MonomialBasis,
    rhs: &[f64],
) -> Result<OperatorRow> {
    solve_row(stencil, weights, basis, rhs, true)
}

/// Nontrivial approximation of the zero functional: a row in the kernel of
/// the consistency conditions with the center coefficient pinned to one.
pub fn zero_functional_row(
    stencil: &LocalStencil,
    weights: &[f64],
    basis: &MonomialBasis,
) -> Result<OperatorRow> {
    let singular = || GfdmError::SingularStencil {
        point: stencil.center,
    };
    let pos = stencil.center_position().ok_or_else(singular)?;
    if stencil.len() < basis.len() + 1 {
        return Err(singular());
    }
    let base = scaled_design(stencil, weights, basis);
    let m = basis.len();
    let mut design = base.insert_column(m, 0.0);
    design[(pos, m)] = weights[pos];
    let mut b = vec![0.0; m + 1];
    b[m] = 1.0;
    let c = min_norm_solve(&design, weights, &b, false).ok_or_else(singular)?;
    Ok(OperatorRow::new(stencil.center, stencil.indices.clone(), c))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedRow {
    pub row: OperatorRow,
    pub alpha: f64,
    /// Whether the corrected row satisfies `c_ij c_ii <= 0` for all `j != i`
    /// with a nonzero diagonal. The correction does not guarantee it.
    pub sign_condition: bool,
}

/// Closed-form minimizer of `sum_j (a_j + t b_j)^2 / (d + t)^2` over `t`,
/// where `a`, `b` are off-diagonal entries of the row and the zero functional
/// and `d` the row's diagonal (the zero functional's diagonal is one).
/// Returns zero when the denominator degenerates.
pub fn dominance_alpha(off: &[f64], zero_off: &[f64], diag: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut scale = 0.0;
    for (&a, &b) in off.iter().zip(zero_off) {
        let e = b * diag - a;
        num += a * e;
        den += b * e;
        scale += b * b;
    }
    if den.abs() <= CORRECTION_GUARD * scale {
        0.0
    } else {
        -num / den
    }
}

pub fn satisfies_sign_condition(row: &OperatorRow) -> bool {
    let d = row.diagonal();
    d != 0.0
        && row
            .indices
            .iter()
            .zip(&row.coefficients)
            .all(|(&j, &c)| j == row.center || c * d <= 0.0)
}

/// Add the multiple of the zero functional that minimizes the off-diagonal
/// mass relative to the diagonal. Consistency conditions are unchanged.
pub fn correct_diagonal_dominance(row: &OperatorRow, zero_row: &OperatorRow) -> Result<CorrectedRow> {
    if row.center != zero_row.center || row.indices != zero_row.indices {
        return Err(GfdmError::Parameter(format!(
            "row {} and its zero functional use different stencils",
            row.center
        )));
    }
    let mut off = Vec::with_capacity(row.len());
    let mut zero_off = Vec::with_capacity(row.len());
    for (k, &j) in row.indices.iter().enumerate() {
        if j != row.center {
            off.push(row.coefficients[k]);
            zero_off.push(zero_row.coefficients[k]);
        }
    }
    let alpha = dominance_alpha(&off, &zero_off, row.diagonal());
    let coefficients = row
        .coefficients
        .iter()
        .zip(&zero_row.coefficients)
        .map(|(c, z)| c + alpha * z)
        .collect();
    let corrected = OperatorRow::new(row.center, row.indices.clone(), coefficients);
    let sign_condition = satisfies_sign_condition(&corrected);
    Ok(CorrectedRow {
        row: corrected,
        alpha,
        sign_condition,
    })
}

fn assemble<F>(cloud: &PointCloud, stencils: &StencilSet, mut row_at: F) -> Result<Vec<OperatorRow>>
where
    F: FnMut(&LocalStencil, &[f64]) -> Result<OperatorRow>,
{
    if stencils.len() != cloud.len() {
        return Err(GfdmError::Parameter(format!(
            "{} stencils for {} points",
            stencils.len(),
            cloud.len()
        )));
    }
    (0..cloud.len())
        .map(|i| {
            let stencil = LocalStencil::gather(cloud, stencils, i);
            let weights = weight_vector(&stencil.distances(), stencil.h);
            row_at(&stencil, &weights)
        })
        .collect()
}

/// Discrete Laplacian of consistency order `order` (basis degree), with the
/// optional diagonal dominance correction. Boundary rows are assembled too.
pub fn build_laplace(
    cloud: &PointCloud,
    stencils: &StencilSet,
    order: usize,
    dd_correction: bool,
) -> Result<OperatorMatrix> {
    let basis = MonomialBasis::new(order);
    let rhs = rhs_laplace(&basis)?;
    let rows = assemble(cloud, stencils, |stencil, weights| {
        let mut row = solve_mls_row(stencil, weights, &basis, &rhs)?;
        if dd_correction {
            let zero = zero_functional_row(stencil, weights, &basis)?;
            row = correct_diagonal_dominance(&row, &zero)?.row;
        }
        row.rederive_diagonal();
        Ok(row)
    })?;
    Ok(OperatorMatrix::from_rows(OperatorKind::Laplace, order, dd_correction, rows))
}

/// Second-order discrete gradient: one matrix per coordinate direction.
pub fn build_gradient(cloud: &PointCloud, stencils: &StencilSet) -> Result<[OperatorMatrix; 2]> {
    let basis = MonomialBasis::new(2);
    let build = |k: usize| -> Result<OperatorMatrix> {
        let rhs = rhs_gradient(&basis, k)?;
        let rows = assemble(cloud, stencils, |stencil, weights| {
            let mut row = solve_mls_row(stencil, weights, &basis, &rhs)?;
            row.rederive_diagonal();
            Ok(row)
        })?;
        Ok(OperatorMatrix::from_rows(OperatorKind::Gradient(k), 2, false, rows))
    };
    Ok([build(0)?, build(1)?])
}

/// Operator derived from a Laplace row by weighting each off-diagonal with
/// `xi_j (x_j - x_i)^alpha`, halved when `alpha != 0`. With `xi = 1` and
/// `alpha = e_k` this is a gradient approximation; with `alpha = 2 e_k` an
/// interpolation. The diagonal closes the row sum for `alpha = 0` and is
/// zero otherwise. `xi` is aligned with the row's indices.
pub fn derive_operator(
    laplace_row: &OperatorRow,
    cloud: &PointCloud,
    alpha: MultiIndex,
    xi: &[f64],
) -> OperatorRow {
    assert_eq!(xi.len(), laplace_row.len(), "xi values do not match the row");
    let xc = cloud.point(laplace_row.center);
    let factor = if alpha == [0, 0] { 1.0 } else { 0.5 };
    let mut coefficients: Vec<f64> = laplace_row
        .indices
        .iter()
        .zip(&laplace_row.coefficients)
        .zip(xi)
        .map(|((&j, &c), &x)| {
            if j == laplace_row.center {
                0.0
            } else {
                let p = cloud.point(j);
                factor * x * c * monomial([p[0] - xc[0], p[1] - xc[1]], alpha)
            }
        })
        .collect();
    let mut row = OperatorRow::new(laplace_row.center, laplace_row.indices.clone(), std::mem::take(&mut coefficients));
    if alpha == [0, 0] {
        row.rederive_diagonal();
    }
    row
}

/// Derived gradient of a whole Laplacian, one matrix per direction.
pub fn derived_gradient(laplace: &OperatorMatrix, cloud: &PointCloud) -> [OperatorMatrix; 2] {
    let build = |alpha: MultiIndex, k: usize| {
        let rows = laplace
            .rows()
            .map(|row| {
                let ones = vec![1.0; row.len()];
                derive_operator(&row, cloud, alpha, &ones)
            })
            .collect();
        OperatorMatrix::from_rows(OperatorKind::Gradient(k), laplace.degree, false, rows)
    };
    [build([1, 0], 0), build([0, 1], 1)]
}
