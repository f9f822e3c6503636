//! Executable checks of the operator theory: exact reproduction identities,
//! sign-condition audits and empirical convergence orders.
//!
//! Order checks fit `log(residual)` against `log(h)` over a refinement
//! sequence and compare the slope with the predicted order minus
//! [`ORDER_SLACK`]. Exact identities are checked against absolute,
//! scale-aware tolerances.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::benchmark::{fit_slope, Discretization, Method};
use crate::diffusion::{
    arithmetic_mean, build_ddo, build_fvm_laplace, enrichment_residuals, geometric_mean, harmonic_mean,
    reconstruct, DiffusivityField, ReconstructionScheme, ScalarField,
};
use crate::error::{GfdmError, Result};
use crate::mls::{derive_operator, monomial, rhs_gradient, rhs_laplace, satisfies_sign_condition, MonomialBasis, MultiIndex};
use crate::operator::{OperatorKind, OperatorMatrix, OperatorRow};
use crate::pointcloud::PointCloud;
use crate::solver::solve_poisson;
use crate::spatial::{dist, Point};

/// Refinement sequence used when none is given.
pub const DEFAULT_VERIFY_H: [f64; 3] = [0.16, 0.08, 0.04];

/// Scaled residual allowed for hard reproduction constraints.
pub const REPRODUCTION_TOL: f64 = 1e-8;

/// Scaled residual allowed for the reconstruction-scaled cancellation.
pub const CANCELLATION_TOL: f64 = 1e-10;

/// Relative coefficient mismatch allowed between algebraically equal
/// operators.
pub const IDENTITY_TOL: f64 = 1e-13;

/// Allowed shortfall of a fitted slope below the predicted order.
pub const ORDER_SLACK: f64 = 0.5;

/// Pair separations for the midpoint reconstruction orders.
pub const PAIR_SEPARATIONS: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];

/// Number of random point pairs per separation.
const PAIR_COUNT: usize = 64;

pub const REPORT_HEADER: &str = "check,param,h,residual,slope,pass";

/// `exp(x1 - x2^2)`, the smooth positive diffusivity used by the checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmoothField;

impl ScalarField for SmoothField {
    fn value(&self, x: Point) -> f64 {
        (x[0] - x[1] * x[1]).exp()
    }

    fn gradient(&self, x: Point) -> Option<[f64; 2]> {
        let l = self.value(x);
        Some([l, -2.0 * x[1] * l])
    }

    fn laplacian(&self, x: Point) -> Option<f64> {
        Some(self.value(x) * (4.0 * x[1] * x[1] - 1.0))
    }
}

/// One line of a report. `h` is empty for summary lines, `pass` is empty
/// for values that are reported without a threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportEntry {
    pub check: String,
    pub param: String,
    pub h: Option<f64>,
    pub residual: f64,
    pub slope: Option<f64>,
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub entries: Vec<ReportEntry>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6e}")).unwrap_or_default()
}

impl Report {
    pub fn push(&mut self, check: &str, param: &str, h: Option<f64>, residual: f64, slope: Option<f64>, pass: Option<bool>) {
        self.entries.push(ReportEntry {
            check: check.into(),
            param: param.into(),
            h,
            residual,
            slope,
            pass,
        });
    }

    pub fn extend(&mut self, other: Report) {
        self.entries.extend(other.entries);
    }

    /// True when no entry failed.
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.pass != Some(false))
    }

    pub fn failures(&self) -> impl Iterator<Item = &ReportEntry> {
        self.entries.iter().filter(|e| e.pass == Some(false))
    }

    pub fn find(&self, check: &str, param: &str) -> Option<&ReportEntry> {
        self.entries
            .iter()
            .find(|e| e.check == check && e.param == param && e.h.is_none())
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for e in &self.entries {
            let pass = e.pass.map(|p| p.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{:.6e},{},{}",
                e.check,
                e.param,
                opt(e.h),
                e.residual,
                opt(e.slope),
                pass
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in self.entries.iter().filter(|e| e.h.is_none()) {
            let status = match e.pass {
                Some(true) => "PASS",
                Some(false) => "FAIL",
                None => "info",
            };
            let slope = e.slope.map(|s| format!("  slope {s:.2}")).unwrap_or_default();
            let _ = writeln!(out, "{status:4}  {:<28} {:<24} residual {:.3e}{slope}", e.check, e.param, e.residual);
        }
        let failed = self.failures().count();
        let _ = writeln!(out, "{} checks, {failed} failed", self.entries.iter().filter(|e| e.h.is_none()).count());
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Per-level lines plus a summary line carrying the fitted slope,
    /// checked against `min_slope` when given.
    fn order(&mut self, check: &str, param: &str, hs: &[f64], residuals: &[f64], min_slope: Option<f64>) {
        for (&h, &r) in hs.iter().zip(residuals) {
            self.push(check, param, Some(h), r, None, None);
        }
        let slope = fit_slope(hs, residuals).slope;
        let pass = min_slope.map(|m| slope.is_some_and(|s| s >= m));
        self.push(check, param, None, residuals.last().copied().unwrap_or(f64::NAN), slope, pass);
    }

    /// Per-level lines plus a summary line passing when every level is at
    /// most `tol`.
    fn bounded(&mut self, check: &str, param: &str, hs: &[f64], residuals: &[f64], tol: f64) {
        for (&h, &r) in hs.iter().zip(residuals) {
            self.push(check, param, Some(h), r, None, Some(r <= tol));
        }
        let worst = residuals.iter().copied().fold(0.0, f64::max);
        self.push(check, param, None, worst, None, Some(worst <= tol));
    }
}

fn alpha_tag(alpha: MultiIndex) -> String {
    format!("a={}{}", alpha[0], alpha[1])
}

fn row_reach(row: &OperatorRow, points: &[Point]) -> f64 {
    let xi = points[row.center];
    row.indices.iter().map(|&j| dist(points[j], xi)).fold(0.0, f64::max)
}

fn offset(points: &[Point], i: usize, j: usize) -> Point {
    [points[j][0] - points[i][0], points[j][1] - points[i][1]]
}

fn apply_monomial(row: &OperatorRow, points: &[Point], alpha: MultiIndex) -> f64 {
    row.indices
        .iter()
        .zip(&row.coefficients)
        .map(|(&j, &c)| c * monomial(offset(points, row.center, j), alpha))
        .sum()
}

/// Largest scaled reproduction residual `|sum_j c_ij phi(x_j) - D phi(x_i)|
/// / (|c_i|_2 reach_i^|alpha|)` over all rows and basis monomials of a
/// Laplace or gradient operator, where `reach_i` is the row's radius.
pub fn reproduction_residual(op: &OperatorMatrix, cloud: &PointCloud) -> Result<f64> {
    let basis = MonomialBasis::new(op.degree);
    let targets = match op.kind {
        OperatorKind::Laplace => rhs_laplace(&basis)?,
        OperatorKind::Gradient(k) => rhs_gradient(&basis, k)?,
        other => {
            return Err(GfdmError::Parameter(format!(
                "no monomial targets for {other:?} operators"
            )))
        }
    };
    let points = cloud.points();
    let mut worst = 0.0f64;
    for row in op.rows() {
        let reach = row_reach(&row, points);
        let norm = row.coefficients.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        for (&alpha, &t) in basis.exponents().iter().zip(&targets) {
            let scale = norm * reach.powi((alpha[0] + alpha[1]) as i32);
            worst = worst.max((apply_monomial(&row, points, alpha) - t).abs() / scale);
        }
    }
    Ok(worst)
}

/// Largest `|row sum|` over all rows.
pub fn max_row_sum(op: &OperatorMatrix) -> f64 {
    op.rows().map(|r| r.row_sum().abs()).fold(0.0, f64::max)
}

/// Largest coefficient difference between two operators with identical
/// sparsity, relative to each row's largest coefficient.
pub fn coefficient_mismatch(a: &OperatorMatrix, b: &OperatorMatrix) -> Result<f64> {
    if a.len() != b.len() {
        return Err(GfdmError::Parameter("operators have different sizes".into()));
    }
    let mut worst = 0.0f64;
    for i in 0..a.len() {
        if a.indices(i) != b.indices(i) {
            return Err(GfdmError::Parameter(format!("row {i} has a different stencil")));
        }
        let scale = a.row_max_abs(i).max(b.row_max_abs(i)).max(f64::MIN_POSITIVE);
        for (x, y) in a.coefficients(i).iter().zip(b.coefficients(i)) {
            worst = worst.max((x - y).abs() / scale);
        }
    }
    Ok(worst)
}

/// The arithmetic-mean diffusion operator assembled as
/// `(1/2) [L(lambda u) + lambda L u - u L lambda]` from a Laplacian `L`.
pub fn product_rule_assembly(laplace: &OperatorMatrix, field: &DiffusivityField) -> OperatorMatrix {
    let l = field.values();
    let rows = laplace
        .rows()
        .map(|row| {
            let i = row.center;
            let lap_lambda = row.apply(l);
            let coefficients = row
                .indices
                .iter()
                .zip(&row.coefficients)
                .map(|(&j, &c)| {
                    let mut v = 0.5 * (c * l[j] + l[i] * c);
                    if j == i {
                        v -= 0.5 * lap_lambda;
                    }
                    v
                })
                .collect();
            OperatorRow::new(i, row.indices.clone(), coefficients)
        })
        .collect();
    OperatorMatrix::from_rows(OperatorKind::Diffusion, laplace.degree, laplace.corrected, rows)
}

/// Outcome of a sign-condition audit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SignAudit {
    pub rows_total: usize,
    pub rows_dd: usize,
    /// Rows failing `c_ij c_ii <= 0`, including those with a zero diagonal.
    pub violations: Vec<usize>,
    /// Rows with a zero diagonal, reported separately.
    pub zero_diagonal: Vec<usize>,
}

impl SignAudit {
    pub fn fraction(&self) -> f64 {
        if self.rows_total == 0 {
            1.0
        } else {
            self.rows_dd as f64 / self.rows_total as f64
        }
    }
}

/// Check the sign condition on every row, skipping rows flagged in `skip`
/// (typically Dirichlet boundary rows).
pub fn check_sign_conditions(matrix: &OperatorMatrix, skip: Option<&[bool]>) -> SignAudit {
    let mut audit = SignAudit::default();
    for row in matrix.rows() {
        if skip.is_some_and(|s| s[row.center]) {
            continue;
        }
        audit.rows_total += 1;
        if row.diagonal() == 0.0 {
            audit.zero_diagonal.push(row.center);
        }
        if satisfies_sign_condition(&row) {
            audit.rows_dd += 1;
        } else {
            audit.violations.push(row.center);
        }
    }
    audit
}

/// Rows where the Laplacian satisfies the sign condition but the diffusion
/// operator built from it does not.
pub fn sign_inheritance_failures(laplace: &OperatorMatrix, diffusion: &OperatorMatrix, skip: Option<&[bool]>) -> Vec<usize> {
    laplace
        .rows()
        .zip(diffusion.rows())
        .filter(|(l, _)| !skip.is_some_and(|s| s[l.center]))
        .filter(|(l, d)| satisfies_sign_condition(l) && !satisfies_sign_condition(d))
        .map(|(l, _)| l.center)
        .collect()
}

/// Count points where `harmonic <= geometric <= arithmetic` fails for
/// the pairs `(values[i], values[j])`.
pub fn mean_ordering_violations(pairs: &[(f64, f64)]) -> Result<usize> {
    let mut bad = 0;
    for &(a, b) in pairs {
        let (hm, gm, am) = (harmonic_mean(a, b)?, geometric_mean(a, b)?, arithmetic_mean(a, b));
        if !(hm <= gm && gm <= am) {
            bad += 1;
        }
    }
    Ok(bad)
}

fn interior(cloud: &PointCloud) -> Vec<usize> {
    cloud.interior_indices().collect()
}

fn sample_smooth(cloud: &PointCloud) -> Result<DiffusivityField> {
    DiffusivityField::sample(cloud, &SmoothField)
}

fn dd_for(order: usize) -> bool {
    if order == 2 {
        Method::Ddo2.default_dd()
    } else {
        Method::Ddo4.default_dd()
    }
}

fn discretizations(h_list: &[f64], seed: u64) -> Result<Vec<Discretization>> {
    if h_list.is_empty() {
        return Err(GfdmError::Parameter("empty refinement sequence".into()));
    }
    h_list.iter().map(|&h| Discretization::new(h, seed)).collect()
}

/// Reproduction of the Laplace and gradient constraints, and consistency of
/// the derived diffusion operator with the smooth diffusivity.
pub fn check_consistency_suite(h_list: &[f64], seed: u64) -> Result<Report> {
    let mut discs = discretizations(h_list, seed)?;
    consistency_on(&mut discs)
}

fn consistency_on(discs: &mut [Discretization]) -> Result<Report> {
    let hs: Vec<f64> = discs.iter().map(|d| d.h).collect();
    let mut report = Report::default();
    for order in [2, 4] {
        let dd = dd_for(order);
        let mut laplace = Vec::new();
        for d in discs.iter_mut() {
            let op = d.laplacian(order, dd)?.clone();
            laplace.push(reproduction_residual(&op, &d.cloud)?);
        }
        report.bounded("reproduction", &format!("laplace{order}"), &hs, &laplace, REPRODUCTION_TOL);
    }
    let mut gradient = Vec::new();
    for d in discs.iter_mut() {
        let g = d.gradient()?.clone();
        let cloud = &d.cloud;
        gradient.push(reproduction_residual(&g[0], cloud)?.max(reproduction_residual(&g[1], cloud)?));
    }
    report.bounded("reproduction", "gradient2", &hs, &gradient, REPRODUCTION_TOL);

    // unit diffusivity gives back the Laplacian for every mean, and the
    // arithmetic mean equals the product rule assembly
    for order in [2, 4] {
        let dd = dd_for(order);
        let mut reduction = Vec::new();
        let mut product_rule = Vec::new();
        for d in discs.iter_mut() {
            let laplace = d.laplacian(order, dd)?.clone();
            let unit = DiffusivityField::from_values(vec![1.0; d.len()])?;
            let mut worst = 0.0f64;
            for scheme in [ReconstructionScheme::Arithmetic, ReconstructionScheme::Harmonic, ReconstructionScheme::Geometric] {
                let ddo = build_ddo(&laplace, &d.cloud, &unit, scheme)?.matrix;
                worst = worst.max(coefficient_mismatch(&ddo, &laplace)?);
            }
            reduction.push(worst);
            let field = sample_smooth(&d.cloud)?;
            let ddo = build_ddo(&laplace, &d.cloud, &field, ReconstructionScheme::Arithmetic)?.matrix;
            product_rule.push(coefficient_mismatch(&ddo, &product_rule_assembly(&laplace, &field))?);
        }
        report.bounded("unit_reduction", &format!("ddo{order} am/hm/gm"), &hs, &reduction, IDENTITY_TOL);
        report.bounded("product_rule", &format!("ddo{order}-am"), &hs, &product_rule, IDENTITY_TOL);
    }

    // the derived diffusion operator on centered monomials: zero for the
    // constant, d_k lambda for e_k, 2 lambda delta_kl for e_k + e_l
    let alphas: [MultiIndex; 6] = [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]];
    for order in [2, 4] {
        let dd = dd_for(order);
        let mut residuals = vec![Vec::new(); alphas.len()];
        for d in discs.iter_mut() {
            let laplace = d.laplacian(order, dd)?.clone();
            let field = sample_smooth(&d.cloud)?;
            let ddo = build_ddo(&laplace, &d.cloud, &field, ReconstructionScheme::Arithmetic)?.matrix;
            let points = d.cloud.points();
            let grads = field.analytic_gradients().expect("smooth field has gradients");
            for (a, &alpha) in alphas.iter().enumerate() {
                let mut worst = 0.0f64;
                for i in interior(&d.cloud) {
                    let target = match alpha {
                        [1, 0] => grads[i][0],
                        [0, 1] => grads[i][1],
                        [2, 0] | [0, 2] => 2.0 * field.values()[i],
                        _ => 0.0,
                    };
                    let row = ddo.row(i);
                    let value = if alpha == [0, 0] { row.row_sum() } else { apply_monomial(&row, points, alpha) };
                    worst = worst.max((value - target).abs());
                }
                residuals[a].push(worst);
            }
        }
        let param = |alpha| format!("ddo{order}-am {}", alpha_tag(alpha));
        // an irregular degree-p stencil is exact to degree p and accurate
        // to O(h^(p-1)) beyond it; the arithmetic mean adds O(h)
        let q = 1.0;
        let p = order as f64 - 1.0;
        for (a, &alpha) in alphas.iter().enumerate() {
            match alpha[0] + alpha[1] {
                0 => report.bounded("ddo_consistency", &param(alpha), &hs, &residuals[a], 0.0),
                1 => report.order("ddo_consistency", &param(alpha), &hs, &residuals[a], Some(p.min(q) - ORDER_SLACK)),
                _ => report.order("ddo_consistency", &param(alpha), &hs, &residuals[a], Some(p.min(q + 1.0) - ORDER_SLACK)),
            }
        }
    }
    Ok(report)
}

/// Sign-condition audits: Voronoi finite volumes, corrected Laplacians and
/// their derived diffusion operators, plus a discrete maximum principle
/// spot check.
pub fn check_signs_suite(h_list: &[f64], seed: u64) -> Result<Report> {
    let mut discs = discretizations(h_list, seed)?;
    signs_on(&mut discs)
}

fn signs_on(discs: &mut [Discretization]) -> Result<Report> {
    let hs: Vec<f64> = discs.iter().map(|d| d.h).collect();
    let mut report = Report::default();
    let mut fvm = Vec::new();
    let mut lap_fraction = Vec::new();
    let mut inherit = Vec::new();
    let mut minimum = Vec::new();
    let mut ordering = Vec::new();
    for d in discs.iter_mut() {
        let boundary = d.cloud.is_boundary().to_vec();
        let fvm_op = build_fvm_laplace(&d.diagram, &d.cloud)?;
        let audit = check_sign_conditions(&fvm_op, Some(&boundary));
        fvm.push(1.0 - audit.fraction());

        let field = sample_smooth(&d.cloud)?;
        let mut failures = 0;
        for order in [2, 4] {
            let laplace = d.laplacian(order, dd_for(order))?.clone();
            if order == 2 {
                lap_fraction.push(check_sign_conditions(&laplace, Some(&boundary)).fraction());
            }
            for scheme in [ReconstructionScheme::Arithmetic, ReconstructionScheme::Harmonic, ReconstructionScheme::Geometric] {
                let ddo = build_ddo(&laplace, &d.cloud, &field, scheme)?.matrix;
                failures += sign_inheritance_failures(&laplace, &ddo, Some(&boundary)).len();
            }
        }
        inherit.push(failures as f64);

        let values = field.values();
        let pairs: Vec<(f64, f64)> = (0..d.len())
            .flat_map(|i| d.stencils.neighbors(i).iter().map(move |&j| (values[i], values[j])))
            .collect();
        ordering.push(mean_ordering_violations(&pairs)? as f64);

        // inverse positivity: -L u = 1 with zero boundary values gives u >= 0
        let ones = vec![1.0; d.len()];
        let u = solve_poisson(&fvm_op, &ones, &boundary)?;
        minimum.push(u.iter().copied().fold(f64::INFINITY, f64::min).min(0.0).abs());
    }
    report.bounded("sign_condition", "fvm violated fraction", &hs, &fvm, 0.0);
    for (&h, &f) in hs.iter().zip(&lap_fraction) {
        report.push("sign_condition", "laplace2 dd fraction", Some(h), f, None, None);
    }
    report.push(
        "sign_condition",
        "laplace2 dd fraction",
        None,
        lap_fraction.iter().copied().fold(1.0, f64::min),
        None,
        None,
    );
    report.bounded("sign_inheritance", "ddo2/ddo4 am/hm/gm", &hs, &inherit, 0.0);
    report.bounded("mean_ordering", "hm <= gm <= am", &hs, &ordering, 0.0);
    report.bounded("max_principle", "fvm negative part", &hs, &minimum, 0.0);
    Ok(report)
}

fn smooth_u(x: Point) -> (f64, [f64; 2]) {
    let (sx, cx) = (PI * x[0]).sin_cos();
    let (sy, cy) = (PI * x[1]).sin_cos();
    (sx * cy, [PI * cx * cy, -PI * sx * sy])
}

fn quadratic(x: Point) -> (f64, [f64; 2]) {
    let (a, b) = (x[0], x[1]);
    (
        1.0 + 2.0 * a - b + 3.0 * a * a - a * b + 0.5 * b * b,
        [2.0 + 6.0 * a - b, -1.0 - a + b],
    )
}

/// `|value - target|` relative to the magnitude of the summed terms.
fn term_relative(terms: impl Iterator<Item = f64>, target: f64) -> f64 {
    let (mut sum, mut mag) = (0.0, target.abs());
    for t in terms {
        sum += t;
        mag += t.abs();
    }
    if mag == 0.0 {
        0.0
    } else {
        (sum - target).abs() / mag
    }
}

/// Orders of operators derived from the Laplacian: gradients and weighted
/// interpolations of `sin(pi x1) cos(pi x2)` with weight `exp(x1 - x2^2)`.
pub fn check_derived_operator_orders(h_list: &[f64], seed: u64) -> Result<Report> {
    let mut discs = discretizations(h_list, seed)?;
    derived_on(&mut discs)
}

fn derived_on(discs: &mut [Discretization]) -> Result<Report> {
    let hs: Vec<f64> = discs.iter().map(|d| d.h).collect();
    let mut report = Report::default();
    for order in [2, 4] {
        let (mut grad, mut wgrad, mut interp, mut exact, mut constant) = (vec![], vec![], vec![], vec![], vec![]);
        for d in discs.iter_mut() {
            let laplace = d.laplacian(order, dd_for(order))?.clone();
            let points = d.cloud.points().to_vec();
            let xi: Vec<f64> = points.iter().map(|&p| SmoothField.value(p)).collect();
            let u: Vec<f64> = points.iter().map(|&p| smooth_u(p).0).collect();
            let (mut g, mut wg, mut ip, mut ex, mut co) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
            for i in interior(&d.cloud) {
                let row = laplace.row(i);
                let ones = vec![1.0; row.len()];
                let weights: Vec<f64> = row.indices.iter().map(|&j| xi[j]).collect();
                let (ui, dui) = smooth_u(points[i]);
                let dxi = SmoothField.gradient(points[i]).expect("closed form");
                for (k, alpha) in [[1, 0], [0, 1]].into_iter().enumerate() {
                    let plain = derive_operator(&row, &d.cloud, alpha, &ones);
                    g = g.max((plain.apply(&u) - dui[k]).abs());
                    let weighted = derive_operator(&row, &d.cloud, alpha, &weights);
                    wg = wg.max((weighted.apply(&u) - (xi[i] * dui[k] + ui * dxi[k])).abs());
                    let twice = [2 * alpha[0], 2 * alpha[1]];
                    let interp_row = derive_operator(&row, &d.cloud, twice, &weights);
                    ip = ip.max((interp_row.apply(&u) - xi[i] * ui).abs());
                    // exactness: quadratics need p >= 3, linears p >= 2
                    let poly = |p: Point| if order >= 3 { quadratic(p) } else { (quadratic(p).0 - 3.0 * p[0] * p[0] + p[0] * p[1] - 0.5 * p[1] * p[1], [0.0; 2]) };
                    let target = if order >= 3 { quadratic(points[i]).1[k] } else { [2.0, -1.0][k] };
                    let terms = plain.indices.iter().zip(&plain.coefficients).map(|(&j, &c)| c * poly(points[j]).0);
                    ex = ex.max(term_relative(terms, target));
                    let constant_row = derive_operator(&row, &d.cloud, twice, &ones);
                    co = co.max(term_relative(constant_row.coefficients.iter().copied(), 1.0));
                }
            }
            grad.push(g);
            wgrad.push(wg);
            interp.push(ip);
            exact.push(ex);
            constant.push(co);
        }
        let min_slope = Some(order as f64 - 1.0 - ORDER_SLACK);
        report.order("derived_gradient", &format!("p={order}"), &hs, &grad, min_slope);
        report.order("derived_weighted_gradient", &format!("p={order}"), &hs, &wgrad, min_slope);
        report.order("derived_interpolation", &format!("p={order}"), &hs, &interp, min_slope);
        let poly = if order >= 3 { "quadratic" } else { "linear" };
        report.bounded("derived_exactness", &format!("p={order} {poly}"), &hs, &exact, REPRODUCTION_TOL);
        report.bounded("derived_exactness", &format!("p={order} constant"), &hs, &constant, REPRODUCTION_TOL);
    }
    Ok(report)
}

/// Reconstruction order `q` entering the enrichment error terms.
fn reconstruction_order(scheme: ReconstructionScheme) -> f64 {
    if scheme.needs_gradients() {
        2.0
    } else {
        1.0
    }
}

/// Enrichment identities of the derived diffusion operator with the smooth
/// diffusivity: exact cancellation for reconstruction-scaled monomials and
/// convergence for field-scaled ones.
pub fn check_enrichment_suite(h_list: &[f64], seed: u64, scheme: ReconstructionScheme) -> Result<Report> {
    let mut discs = discretizations(h_list, seed)?;
    enrichment_on(&mut discs, scheme)
}

fn enrichment_on(discs: &mut [Discretization], scheme: ReconstructionScheme) -> Result<Report> {
    let hs: Vec<f64> = discs.iter().map(|d| d.h).collect();
    let mut report = Report::default();
    let q = reconstruction_order(scheme);
    for order in [2, 4] {
        let (mut cancel, mut first, mut second, mut field_zero, mut recon_zero) = (vec![], vec![], vec![], vec![], vec![]);
        for d in discs.iter_mut() {
            let laplace = d.laplacian(order, dd_for(order))?.clone();
            let field = sample_smooth(&d.cloud)?;
            let ddo = build_ddo(&laplace, &d.cloud, &field, scheme)?.matrix;
            let points = d.cloud.points();
            let (mut c, mut f1, mut f2, mut f0, mut r0) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
            for i in interior(&d.cloud) {
                let row = ddo.row(i);
                let reach = row_reach(&row, points);
                let scale = row.max_abs();
                let res = enrichment_residuals(&row, &d.cloud, &field, scheme, order)?;
                for e in &res.scaled_by_reconstruction {
                    let n = (e.alpha[0] + e.alpha[1]) as i32;
                    let r = e.residual().unwrap_or(f64::NAN).abs();
                    if n == 0 {
                        r0 = r0.max(r);
                    } else {
                        c = c.max(r / (scale * reach.powi(n)));
                    }
                }
                for e in &res.scaled_by_field {
                    let r = e.residual().unwrap_or(f64::NAN).abs();
                    match e.alpha[0] + e.alpha[1] {
                        0 => f0 = f0.max(r),
                        1 => f1 = f1.max(r),
                        2 => f2 = f2.max(r),
                        _ => {}
                    }
                }
            }
            cancel.push(c);
            first.push(f1);
            second.push(f2);
            field_zero.push(f0);
            recon_zero.push(r0);
        }
        let tag = |what: &str| format!("ddo{order}-{} {what}", scheme.tag());
        let p = order as f64 - 1.0;
        report.bounded("enrichment_reconstruction", &tag("|a|>=1"), &hs, &cancel, CANCELLATION_TOL);
        report.order("enrichment_reconstruction", &tag("a=00"), &hs, &recon_zero, None);
        report.order("enrichment_field", &tag("|a|=1"), &hs, &first, Some(p.min(q) - ORDER_SLACK));
        report.order("enrichment_field", &tag("|a|=2"), &hs, &second, Some(p.min(q + 1.0) - ORDER_SLACK));
        report.order("enrichment_field", &tag("a=00"), &hs, &field_zero, None);
    }
    Ok(report)
}

/// Largest midpoint error `|lambda_ij - lambda((x_i + x_j) / 2)|` of a
/// reconstruction with the smooth field and analytic gradients, over random
/// pairs at distance `separation` inside `[0.25, 0.75]^2`.
pub fn reconstruction_error(scheme: ReconstructionScheme, separation: f64, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..PAIR_COUNT {
        let xi = [rng.gen_range(0.25..0.75), rng.gen_range(0.25..0.75)];
        let angle: f64 = rng.gen_range(0.0..2.0 * PI);
        let d = [separation * angle.cos(), separation * angle.sin()];
        let xj = [xi[0] + d[0], xi[1] + d[1]];
        let mid = [xi[0] + 0.5 * d[0], xi[1] + 0.5 * d[1]];
        let f = &SmoothField;
        let value = reconstruct(scheme, f.value(xi), f.value(xj), f.gradient(xi), f.gradient(xj), d)?;
        worst = worst.max((value - f.value(mid)).abs());
    }
    Ok(worst)
}

/// Midpoint reconstruction orders for every scheme: `q + 1` with `q = 1`
/// for the means and one-sided Taylor values, `q = 3` for the Hermite form.
pub fn check_reconstruction_orders(separations: &[f64], seed: u64) -> Result<Report> {
    let mut report = Report::default();
    for scheme in ReconstructionScheme::ALL {
        let errors = separations
            .iter()
            .map(|&s| reconstruction_error(scheme, s, seed))
            .collect::<Result<Vec<_>>>()?;
        let q = if scheme == ReconstructionScheme::Hermite { 3.0 } else { 1.0 };
        report.order("midpoint_reconstruction", scheme.tag(), separations, &errors, Some(q + 1.0 - ORDER_SLACK));
    }
    Ok(report)
}

/// Which checks `run_suite` performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Consistency,
    Signs,
    Derived,
    Enrichment,
    All,
}

impl std::str::FromStr for Suite {
    type Err = GfdmError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "consistency" => Suite::Consistency,
            "signs" => Suite::Signs,
            "derived" => Suite::Derived,
            "enrichment" => Suite::Enrichment,
            "all" => Suite::All,
            other => {
                return Err(GfdmError::Parameter(format!(
                    "unknown suite '{other}', expected consistency, signs, derived, enrichment or all"
                )))
            }
        })
    }
}

/// Run a suite, sharing one set of clouds between its checks.
pub fn run_suite(suite: Suite, h_list: &[f64], seed: u64) -> Result<Report> {
    let mut discs = discretizations(h_list, seed)?;
    let mut report = Report::default();
    if matches!(suite, Suite::Consistency | Suite::All) {
        report.extend(check_reconstruction_orders(&PAIR_SEPARATIONS, seed)?);
        report.extend(consistency_on(&mut discs)?);
    }
    if matches!(suite, Suite::Signs | Suite::All) {
        report.extend(signs_on(&mut discs)?);
    }
    if matches!(suite, Suite::Derived | Suite::All) {
        report.extend(derived_on(&mut discs)?);
    }
    if matches!(suite, Suite::Enrichment | Suite::All) {
        for scheme in [
            ReconstructionScheme::Arithmetic,
            ReconstructionScheme::Harmonic,
            ReconstructionScheme::Geometric,
            ReconstructionScheme::Hermite,
        ] {
            report.extend(enrichment_on(&mut discs, scheme)?);
        }
    }
    Ok(report)
}
