//! Discrete diffusion operators `u -> div(lambda grad u)`.
//!
//! Three constructions share one cloud: the derived operator (Laplace rows
//! weighted by midpoint reconstructions of the diffusivity), the classical
//! MLS row with diffusivity-dependent constraints, and Voronoi finite
//! volumes.

use std::fmt;
use std::str::FromStr;

use crate::error::{GfdmError, Result};
use crate::mls::{
    correct_diagonal_dominance, monomial, solve_mls_row, weight_vector, zero_functional_row,
    LocalStencil, MonomialBasis, MultiIndex,
};
use crate::operator::{OperatorKind, OperatorMatrix, OperatorRow};
use crate::pointcloud::{PointCloud, StencilSet};
use crate::spatial::{dist, Point};
use crate::voronoi::VoronoiDiagram;

/// A scalar function of position with optional closed-form derivatives.
pub trait ScalarField: Send + Sync {
    fn value(&self, x: Point) -> f64;

    fn gradient(&self, _x: Point) -> Option<[f64; 2]> {
        None
    }

    fn laplacian(&self, _x: Point) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub f64);

impl ScalarField for Constant {
    fn value(&self, _x: Point) -> f64 {
        self.0
    }

    fn gradient(&self, _x: Point) -> Option<[f64; 2]> {
        Some([0.0, 0.0])
    }

    fn laplacian(&self, _x: Point) -> Option<f64> {
        Some(0.0)
    }
}

/// Diffusivity sampled on a cloud. `gradients` are the ones fed to the
/// gradient-based reconstructions and the MLS constraints; the analytic
/// derivatives are kept separately for verification targets.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusivityField {
    values: Vec<f64>,
    gradients: Option<Vec<[f64; 2]>>,
    analytic_gradients: Option<Vec<[f64; 2]>>,
    analytic_laplacians: Option<Vec<f64>>,
}

impl DiffusivityField {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(GfdmError::Domain(format!(
                "diffusivity {} at point {i} is not positive",
                values[i]
            )));
        }
        Ok(Self {
            values,
            gradients: None,
            analytic_gradients: None,
            analytic_laplacians: None,
        })
    }

    /// Sample `field` at every point; analytic gradients, when the field
    /// has them, become the working gradients.
    pub fn sample(cloud: &PointCloud, field: &dyn ScalarField) -> Result<Self> {
        let mut out = Self::from_values(cloud.points().iter().map(|&p| field.value(p)).collect())?;
        out.analytic_gradients = cloud.points().iter().map(|&p| field.gradient(p)).collect();
        out.analytic_laplacians = cloud.points().iter().map(|&p| field.laplacian(p)).collect();
        out.gradients = out.analytic_gradients.clone();
        Ok(out)
    }

    pub fn with_gradients(mut self, gradients: Vec<[f64; 2]>) -> Self {
        assert_eq!(gradients.len(), self.values.len());
        self.gradients = Some(gradients);
        self
    }

    /// Replace the working gradients by a discrete gradient of the samples.
    pub fn with_discrete_gradients(self, gradient: &[OperatorMatrix; 2]) -> Self {
        let gx = gradient[0].apply(&self.values);
        let gy = gradient[1].apply(&self.values);
        let g = gx.into_iter().zip(gy).map(|(a, b)| [a, b]).collect();
        self.with_gradients(g)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn gradients(&self) -> Option<&[[f64; 2]]> {
        self.gradients.as_deref()
    }

    pub fn analytic_gradients(&self) -> Option<&[[f64; 2]]> {
        self.analytic_gradients.as_deref()
    }

    pub fn analytic_laplacians(&self) -> Option<&[f64]> {
        self.analytic_laplacians.as_deref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReconstructionScheme {
    Arithmetic,
    Harmonic,
    Geometric,
    Taylor,
    SkewTaylor,
    Hermite,
}

impl ReconstructionScheme {
    pub const ALL: [ReconstructionScheme; 6] = [
        Self::Arithmetic,
        Self::Harmonic,
        Self::Geometric,
        Self::Taylor,
        Self::SkewTaylor,
        Self::Hermite,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Self::Arithmetic => "am",
            Self::Harmonic => "hm",
            Self::Geometric => "gm",
            Self::Taylor => "taylor",
            Self::SkewTaylor => "skew",
            Self::Hermite => "gr",
        }
    }

    pub fn needs_gradients(self) -> bool {
        matches!(self, Self::Taylor | Self::SkewTaylor | Self::Hermite)
    }
}

impl fmt::Display for ReconstructionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ReconstructionScheme {
    type Err = GfdmError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.tag() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                GfdmError::Parameter(format!(
                    "unknown reconstruction '{s}', expected one of am, hm, gm, taylor, skew, gr"
                ))
            })
    }
}

#[inline]
fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn arithmetic_mean(a: f64, b: f64) -> f64 {
    0.5 * (a + b)
}

pub fn harmonic_mean(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(GfdmError::Domain(format!("harmonic mean of {a} and {b} needs positive inputs")));
    }
    // in exact arithmetic HM <= GM; keep it true after rounding
    Ok((2.0 * a * b / (a + b)).min((a * b).sqrt()))
}

pub fn geometric_mean(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(GfdmError::Domain(format!("geometric mean of {a} and {b} needs positive inputs")));
    }
    // likewise GM <= AM
    Ok((a * b).sqrt().min(0.5 * (a + b)))
}

/// Value of the diffusivity on the segment from `x_i` to `x_j = x_i + d`.
pub fn reconstruct(
    scheme: ReconstructionScheme,
    li: f64,
    lj: f64,
    gi: Option<[f64; 2]>,
    gj: Option<[f64; 2]>,
    d: [f64; 2],
) -> Result<f64> {
    let need = |g: Option<[f64; 2]>| {
        g.ok_or_else(|| GfdmError::Parameter(format!("reconstruction '{scheme}' needs gradients")))
    };
    match scheme {
        ReconstructionScheme::Arithmetic => Ok(arithmetic_mean(li, lj)),
        ReconstructionScheme::Harmonic => harmonic_mean(li, lj),
        ReconstructionScheme::Geometric => geometric_mean(li, lj),
        ReconstructionScheme::Taylor => Ok(li + 0.5 * dot(need(gi)?, d)),
        ReconstructionScheme::SkewTaylor => Ok(lj - 0.5 * dot(need(gi)?, d)),
        ReconstructionScheme::Hermite => {
            let (gi, gj) = (need(gi)?, need(gj)?);
            Ok(arithmetic_mean(li, lj) + 0.125 * dot([gi[0] - gj[0], gi[1] - gj[1]], d))
        }
    }
}

/// Midpoint diffusivity for the edge `i -> j` as used by the builders:
/// gradient-based values that are not positive fall back to the harmonic
/// mean. The flag reports whether that happened.
pub fn edge_diffusivity(
    scheme: ReconstructionScheme,
    field: &DiffusivityField,
    points: &[Point],
    i: usize,
    j: usize,
) -> Result<(f64, bool)> {
    let (li, lj) = (field.values[i], field.values[j]);
    let grads = field.gradients.as_deref();
    let d = [points[j][0] - points[i][0], points[j][1] - points[i][1]];
    let tag = |e: GfdmError| match e {
        GfdmError::Domain(msg) => GfdmError::Domain(format!("edge ({i}, {j}): {msg}")),
        other => other,
    };
    let value = reconstruct(scheme, li, lj, grads.map(|g| g[i]), grads.map(|g| g[j]), d).map_err(tag)?;
    if scheme.needs_gradients() && (value.is_nan() || value <= 0.0) {
        return Ok((harmonic_mean(li, lj).map_err(tag)?, true));
    }
    Ok((value, false))
}

/// An assembled diffusion operator plus how many edge values were clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionOperator {
    pub matrix: OperatorMatrix,
    pub clamp_count: usize,
}

fn weight_rows<'a>(
    rows: impl Iterator<Item = OperatorRow> + 'a,
    field: &'a DiffusivityField,
    points: &'a [Point],
    scheme: ReconstructionScheme,
    clamps: &'a mut usize,
) -> impl Iterator<Item = Result<OperatorRow>> + 'a {
    rows.map(move |mut row| {
        for (k, &j) in row.indices.iter().enumerate() {
            if j != row.center {
                let (lij, clamped) = edge_diffusivity(scheme, field, points, row.center, j)?;
                *clamps += clamped as usize;
                row.coefficients[k] *= lij;
            }
        }
        row.rederive_diagonal();
        Ok(row)
    })
}

fn check_sizes(n: usize, field: &DiffusivityField, scheme: ReconstructionScheme) -> Result<()> {
    if field.len() != n {
        return Err(GfdmError::Parameter(format!(
            "diffusivity has {} samples for {n} points",
            field.len()
        )));
    }
    if scheme.needs_gradients() && field.gradients.is_none() {
        return Err(GfdmError::Parameter(format!("reconstruction '{scheme}' needs gradients")));
    }
    Ok(())
}

/// Derived diffusion operator: every off-diagonal Laplace coefficient is
/// weighted by the reconstructed midpoint diffusivity, the diagonal closes
/// the row sum.
pub fn build_ddo(
    laplace: &OperatorMatrix,
    cloud: &PointCloud,
    field: &DiffusivityField,
    scheme: ReconstructionScheme,
) -> Result<DiffusionOperator> {
    check_sizes(laplace.len(), field, scheme)?;
    let mut clamp_count = 0;
    let rows = weight_rows(laplace.rows(), field, cloud.points(), scheme, &mut clamp_count)
        .collect::<Result<Vec<_>>>()?;
    Ok(DiffusionOperator {
        matrix: OperatorMatrix::from_rows(OperatorKind::Diffusion, laplace.degree, laplace.corrected, rows),
        clamp_count,
    })
}

/// Constraint targets of `div(lambda grad .)` on the monomials centered at
/// a point with diffusivity `value` and gradient `gradient`.
pub fn rhs_diffusion(basis: &MonomialBasis, value: f64, gradient: [f64; 2]) -> Vec<f64> {
    basis
        .exponents()
        .iter()
        .map(|&a| match a {
            [1, 0] => gradient[0],
            [0, 1] => gradient[1],
            [2, 0] | [0, 2] => 2.0 * value,
            _ => 0.0,
        })
        .collect()
}

/// Classical MLS diffusion row on the degree-`order` basis, constrained by
/// the field's working gradients.
pub fn build_mls_diffusion(
    cloud: &PointCloud,
    stencils: &StencilSet,
    field: &DiffusivityField,
    order: usize,
    dd_correction: bool,
) -> Result<OperatorMatrix> {
    if order < 2 {
        return Err(GfdmError::Parameter(format!("diffusion rows need order >= 2, got {order}")));
    }
    check_sizes(cloud.len(), field, ReconstructionScheme::Arithmetic)?;
    let grads = field
        .gradients
        .as_deref()
        .ok_or_else(|| GfdmError::Parameter("MLS diffusion needs diffusivity gradients".into()))?;
    let basis = MonomialBasis::new(order);
    let rows = (0..cloud.len())
        .map(|i| {
            let stencil = LocalStencil::gather(cloud, stencils, i);
            let weights = weight_vector(&stencil.distances(), stencil.h);
            let rhs = rhs_diffusion(&basis, field.values[i], grads[i]);
            let mut row = solve_mls_row(&stencil, &weights, &basis, &rhs)?;
            if dd_correction {
                let zero = zero_functional_row(&stencil, &weights, &basis)?;
                row = correct_diagonal_dominance(&row, &zero)?.row;
            }
            row.rederive_diagonal();
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OperatorMatrix::from_rows(OperatorKind::Diffusion, order, dd_correction, rows))
}

fn fvm_rows(diagram: &VoronoiDiagram, cloud: &PointCloud) -> Result<Vec<OperatorRow>> {
    if diagram.len() != cloud.len() {
        return Err(GfdmError::Parameter(format!(
            "Voronoi diagram has {} cells for {} points",
            diagram.len(),
            cloud.len()
        )));
    }
    let points = cloud.points();
    Ok((0..cloud.len())
        .map(|i| {
            let volume = diagram.volumes()[i];
            let mut indices = Vec::with_capacity(diagram.neighbors(i).len() + 1);
            let mut coefficients = Vec::with_capacity(indices.capacity());
            let mut center_done = false;
            for &(j, face) in diagram.neighbors(i) {
                if !center_done && j > i {
                    indices.push(i);
                    coefficients.push(0.0);
                    center_done = true;
                }
                indices.push(j);
                coefficients.push(face / (volume * dist(points[i], points[j])));
            }
            if !center_done {
                indices.push(i);
                coefficients.push(0.0);
            }
            let mut row = OperatorRow::new(i, indices, coefficients);
            row.rederive_diagonal();
            row
        })
        .collect())
}

/// Two-point flux finite volumes on the Voronoi cells.
pub fn build_fvm_laplace(diagram: &VoronoiDiagram, cloud: &PointCloud) -> Result<OperatorMatrix> {
    Ok(OperatorMatrix::from_rows(OperatorKind::Laplace, 0, false, fvm_rows(diagram, cloud)?))
}

pub fn build_fvm_diffusion(
    diagram: &VoronoiDiagram,
    cloud: &PointCloud,
    field: &DiffusivityField,
    scheme: ReconstructionScheme,
) -> Result<DiffusionOperator> {
    check_sizes(cloud.len(), field, scheme)?;
    let rows = fvm_rows(diagram, cloud)?;
    let mut clamp_count = 0;
    let rows = weight_rows(rows.into_iter(), field, cloud.points(), scheme, &mut clamp_count)
        .collect::<Result<Vec<_>>>()?;
    Ok(DiffusionOperator {
        matrix: OperatorMatrix::from_rows(OperatorKind::Diffusion, 0, false, rows),
        clamp_count,
    })
}

/// One enrichment identity evaluated on one row.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrichmentEntry {
    pub alpha: MultiIndex,
    pub value: f64,
    /// `None` when the target needs analytic derivatives that are missing.
    pub target: Option<f64>,
}

impl EnrichmentEntry {
    pub fn residual(&self) -> Option<f64> {
        self.target.map(|t| self.value - t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnrichmentResiduals {
    pub center: usize,
    /// Test functions `(x - x_i)^alpha / lambda(x)`.
    pub scaled_by_field: Vec<EnrichmentEntry>,
    /// Test functions `(x - x_i)^alpha / lambda_{i->}(x)`.
    pub scaled_by_reconstruction: Vec<EnrichmentEntry>,
}

/// Apply a derived diffusion row to diffusivity-scaled monomials of degree
/// at most `degree` and compare with the limits the row should reproduce.
pub fn enrichment_residuals(
    ddo_row: &OperatorRow,
    cloud: &PointCloud,
    field: &DiffusivityField,
    scheme: ReconstructionScheme,
    degree: usize,
) -> Result<EnrichmentResiduals> {
    check_sizes(cloud.len(), field, scheme)?;
    let i = ddo_row.center;
    let points = cloud.points();
    let xi = points[i];
    let li = field.values[i];
    let mut recon = Vec::with_capacity(ddo_row.len());
    for &j in &ddo_row.indices {
        recon.push(if j == i { li } else { edge_diffusivity(scheme, field, points, i, j)?.0 });
    }
    let grad = field.analytic_gradients.as_deref().map(|g| g[i]);
    let lap = field.analytic_laplacians.as_deref().map(|l| l[i]);

    let apply = |alpha: MultiIndex, denom: &dyn Fn(usize, usize) -> f64| -> f64 {
        ddo_row
            .indices
            .iter()
            .zip(&ddo_row.coefficients)
            .enumerate()
            .map(|(k, (&j, &c))| {
                let p = points[j];
                c * monomial([p[0] - xi[0], p[1] - xi[1]], alpha) / denom(k, j)
            })
            .sum()
    };

    let basis = MonomialBasis::new(degree);
    let mut scaled_by_field = Vec::with_capacity(basis.len());
    let mut scaled_by_reconstruction = Vec::with_capacity(basis.len());
    for &alpha in basis.exponents() {
        let order = alpha[0] + alpha[1];
        let polynomial_target = match alpha {
            [2, 0] | [0, 2] => 2.0,
            _ => 0.0,
        };
        let field_target = match alpha {
            [0, 0] => match (grad, lap) {
                (Some(g), Some(l)) => Some(-(l / li - dot(g, g) / (li * li))),
                _ => None,
            },
            [1, 0] => grad.map(|g| -g[0] / li),
            [0, 1] => grad.map(|g| -g[1] / li),
            _ => Some(polynomial_target),
        };
        scaled_by_field.push(EnrichmentEntry {
            alpha,
            value: apply(alpha, &|_, j| field.values[j]),
            target: field_target,
        });
        let recon_target = if order == 0 {
            lap.map(|l| -l / (4.0 * li))
        } else {
            Some(polynomial_target)
        };
        scaled_by_reconstruction.push(EnrichmentEntry {
            alpha,
            value: apply(alpha, &|k, _| recon[k]),
            target: recon_target,
        });
    }
    Ok(EnrichmentResiduals {
        center: i,
        scaled_by_field,
        scaled_by_reconstruction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mls::build_laplace;
    use crate::pointcloud::{build_stencils, generate_cloud};
    use crate::voronoi::compute_voronoi;

    struct Linear;
    impl ScalarField for Linear {
        fn value(&self, x: Point) -> f64 {
            1.0 + x[0] + 2.0 * x[1]
        }
        fn gradient(&self, _x: Point) -> Option<[f64; 2]> {
            Some([1.0, 2.0])
        }
        fn laplacian(&self, _x: Point) -> Option<f64> {
            Some(0.0)
        }
    }

    #[test]
    fn means() {
        let s = |r| reconstruct(r, 1.0, 3.0, None, None, [1.0, 0.0]).unwrap();
        assert_eq!(s(ReconstructionScheme::Arithmetic), 2.0);
        assert_eq!(s(ReconstructionScheme::Harmonic), 1.5);
        assert!((s(ReconstructionScheme::Geometric) - 3f64.sqrt()).abs() < 1e-15);
        assert!(harmonic_mean(0.0, 1.0).is_err());
        assert!(geometric_mean(-1.0, 1.0).is_err());
        assert!(reconstruct(ReconstructionScheme::Taylor, 1.0, 1.0, None, None, [0.0; 2]).is_err());
    }

    #[test]
    fn hermite_is_exact_on_quadratics() {
        let v = reconstruct(
            ReconstructionScheme::Hermite,
            0.0,
            1.0,
            Some([0.0, 0.0]),
            Some([2.0, 0.0]),
            [1.0, 0.0],
        )
        .unwrap();
        assert_eq!(v, 0.25);
    }

    #[test]
    fn taylor_family() {
        let g = Some([2.0, 0.0]);
        let t = reconstruct(ReconstructionScheme::Taylor, 1.0, 5.0, g, None, [1.0, 0.0]).unwrap();
        let s = reconstruct(ReconstructionScheme::SkewTaylor, 1.0, 5.0, g, None, [1.0, 0.0]).unwrap();
        assert_eq!(t, 2.0);
        assert_eq!(s, 4.0);
    }

    #[test]
    fn tags_round_trip() {
        for r in ReconstructionScheme::ALL {
            assert_eq!(r.tag().parse::<ReconstructionScheme>().unwrap(), r);
        }
        assert!("wm".parse::<ReconstructionScheme>().is_err());
    }

    #[test]
    fn nonpositive_gradient_reconstructions_fall_back() {
        let field = DiffusivityField::from_values(vec![1.0, 1.0])
            .unwrap()
            .with_gradients(vec![[-10.0, 0.0], [0.0, 0.0]]);
        let pts = [[0.0, 0.0], [1.0, 0.0]];
        let (v, clamped) = edge_diffusivity(ReconstructionScheme::Taylor, &field, &pts, 0, 1).unwrap();
        assert!(clamped);
        assert_eq!(v, 1.0);
    }

    #[test]
    fn one_dimensional_ddo() {
        let h = 0.1;
        let cloud = PointCloud::new(
            vec![[0.0, 0.5], [h, 0.5], [2.0 * h, 0.5]],
            vec![h; 3],
            vec![false; 3],
        )
        .unwrap();
        let lap = OperatorMatrix::from_rows(
            OperatorKind::Laplace,
            2,
            false,
            vec![
                OperatorRow::new(0, vec![0], vec![0.0]),
                OperatorRow::new(1, vec![0, 1, 2], vec![1.0 / (h * h), -2.0 / (h * h), 1.0 / (h * h)]),
                OperatorRow::new(2, vec![2], vec![0.0]),
            ],
        );
        // lambda(x) = x, sampled at 0, h, 2h; the zero sample is only used
        // by the arithmetic mean here
        let values = vec![0.0, h, 2.0 * h];
        let field = DiffusivityField {
            values,
            gradients: None,
            analytic_gradients: None,
            analytic_laplacians: None,
        };
        let ddo = build_ddo(&lap, &cloud, &field, ReconstructionScheme::Arithmetic).unwrap();
        let row = ddo.matrix.row(1);
        let expect = [1.0 / (2.0 * h), -2.0 / h, 3.0 / (2.0 * h)];
        for (c, e) in row.coefficients.iter().zip(expect) {
            assert!((c - e).abs() < 1e-12 * e.abs());
        }
        let u = [0.0, h, 2.0 * h];
        assert!((row.apply(&u) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_diffusivity_reproduces_the_laplacian() {
        let cloud = generate_cloud(0.2, 3).unwrap();
        let stencils = build_stencils(&cloud, 20).unwrap();
        let lap = build_laplace(&cloud, &stencils, 2, true).unwrap();
        let field = DiffusivityField::from_values(vec![1.0; cloud.len()]).unwrap();
        let ddo = build_ddo(&lap, &cloud, &field, ReconstructionScheme::Harmonic).unwrap();
        assert_eq!(ddo.matrix.csr(), lap.csr());
        assert_eq!(ddo.clamp_count, 0);
    }

    #[test]
    fn constant_mls_diffusion_scales_the_laplacian() {
        let cloud = generate_cloud(0.2, 4).unwrap();
        let stencils = build_stencils(&cloud, 20).unwrap();
        let lap = build_laplace(&cloud, &stencils, 2, false).unwrap();
        let field = DiffusivityField::sample(&cloud, &Constant(2.5)).unwrap();
        let mls = build_mls_diffusion(&cloud, &stencils, &field, 2, false).unwrap();
        for i in 0..cloud.len() {
            let scale = lap.row_max_abs(i);
            for (a, b) in mls.coefficients(i).iter().zip(lap.coefficients(i)) {
                assert!((a - 2.5 * b).abs() <= 1e-9 * 2.5 * scale);
            }
        }
    }

    #[test]
    fn mls_diffusion_exact_for_quadratics_with_linear_diffusivity() {
        let cloud = generate_cloud(0.2, 5).unwrap();
        let stencils = build_stencils(&cloud, 20).unwrap();
        let field = DiffusivityField::sample(&cloud, &Linear).unwrap();
        let op = build_mls_diffusion(&cloud, &stencils, &field, 2, false).unwrap();
        // u = x^2 + x y: div(lambda grad u) = lambda*2 + (1, 2).(2x + y, x)
        let u: Vec<f64> = cloud.points().iter().map(|p| p[0] * p[0] + p[0] * p[1]).collect();
        let out = op.apply(&u);
        for (i, p) in cloud.points().iter().enumerate() {
            let exact = 2.0 * Linear.value(*p) + (2.0 * p[0] + p[1]) + 2.0 * p[0];
            assert!((out[i] - exact).abs() < 1e-8 * op.row_max_abs(i).max(1.0), "{i}");
        }
    }

    #[test]
    fn fvm_rows_on_a_grid() {
        let n = 5;
        let s = 1.0 / (n - 1) as f64;
        let pts: Vec<Point> = (0..n * n).map(|k| [(k % n) as f64 * s, (k / n) as f64 * s]).collect();
        let flags = pts.iter().map(|&p| crate::pointcloud::on_unit_square_boundary(p)).collect();
        let cloud = PointCloud::new(pts, vec![s; n * n], flags).unwrap();
        let diagram = compute_voronoi(&cloud).unwrap();
        let fvm = build_fvm_laplace(&diagram, &cloud).unwrap();
        let center = 2 * n + 2;
        let row = fvm.row(center);
        assert_eq!(row.indices, vec![center - n, center - 1, center, center + 1, center + n]);
        for (&j, &c) in row.indices.iter().zip(&row.coefficients) {
            let e = if j == center { -4.0 / (s * s) } else { 1.0 / (s * s) };
            assert!((c - e).abs() < 1e-9 * e.abs());
        }
        let field = DiffusivityField::from_values(vec![5.0; n * n]).unwrap();
        let scaled = build_fvm_diffusion(&diagram, &cloud, &field, ReconstructionScheme::Geometric).unwrap();
        for i in 0..n * n {
            assert_eq!(fvm.row_sum(i), 0.0);
            for (a, b) in scaled.matrix.coefficients(i).iter().zip(fvm.coefficients(i)) {
                assert!((a - 5.0 * b).abs() <= 1e-13 * (5.0 * b).abs().max(1.0));
            }
        }
    }

    #[test]
    fn enrichment_polynomial_identity_is_exact() {
        let cloud = generate_cloud(0.2, 6).unwrap();
        let stencils = build_stencils(&cloud, 20).unwrap();
        let lap = build_laplace(&cloud, &stencils, 2, true).unwrap();
        let field = DiffusivityField::sample(&cloud, &Linear).unwrap();
        let ddo = build_ddo(&lap, &cloud, &field, ReconstructionScheme::Arithmetic).unwrap();
        let h = stencils.radius(10);
        let report = enrichment_residuals(&ddo.matrix.row(10), &cloud, &field, ReconstructionScheme::Arithmetic, 2).unwrap();
        for e in &report.scaled_by_reconstruction[1..] {
            let order = (e.alpha[0] + e.alpha[1]) as i32;
            let scale = ddo.matrix.row_max_abs(10) * h.powi(order);
            assert!(e.residual().unwrap().abs() <= 1e-10 * scale, "{e:?}");
        }
        assert!(report.scaled_by_field[0].target.is_some());
    }
}
