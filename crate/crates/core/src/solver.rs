//! Sparse linear solves, Dirichlet handling, trapezoidal time stepping and
//! weighted discrete norms.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use faer::prelude::*;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};

use crate::error::{GfdmError, Result};
use crate::operator::OperatorMatrix;
use crate::pointcloud::PointCloud;
use crate::sparse::CsrMatrix;

/// Relative residual target for every solve in the pipeline.
pub const DEFAULT_REL_TOL: f64 = 1e-10;

/// Iteration cap for the Krylov phase before switching to the direct solver.
pub const MAX_ITERATIONS: usize = 4000;

/// Any solution value beyond this marks a time integration as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e100;

/// Safety factor on the time step: `dt <= CFL_FACTOR * dx^2`.
pub const CFL_FACTOR: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

impl LinearSystem {
    pub fn new(matrix: CsrMatrix, rhs: Vec<f64>) -> Result<Self> {
        if matrix.n_rows() != matrix.n_cols() || matrix.n_rows() != rhs.len() {
            return Err(GfdmError::Parameter(format!(
                "system is {}x{} with a right-hand side of length {}",
                matrix.n_rows(),
                matrix.n_cols(),
                rhs.len()
            )));
        }
        if let Some(i) = (0..matrix.n_rows()).find(|&i| matrix.row(i).0.is_empty()) {
            return Err(GfdmError::Parameter(format!("row {i} of the system is empty")));
        }
        Ok(Self { matrix, rhs })
    }

    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    pub fn residual_norm(&self, x: &[f64]) -> f64 {
        residual_norm(&self.matrix, &self.rhs, x)
    }
}

/// Boundary rows become identity rows with zero right-hand side.
pub fn apply_dirichlet(system: &LinearSystem, boundary: &[bool]) -> LinearSystem {
    assert_eq!(boundary.len(), system.len(), "boundary flags do not match the system");
    let rhs = system
        .rhs
        .iter()
        .zip(boundary)
        .map(|(&b, &flag)| if flag { 0.0 } else { b })
        .collect();
    LinearSystem {
        matrix: system.matrix.with_identity_rows(boundary),
        rhs,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

enum Outcome {
    Converged,
    Breakdown,
}

/// Right Jacobi-preconditioned BiCGSTAB. `x` holds the initial guess and
/// receives the iterate; `budget` is decremented per iteration.
fn bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    inv_diag: &[f64],
    x: &mut [f64],
    target: f64,
    budget: &mut usize,
) -> Outcome {
    let n = b.len();
    let mut r = a.matvec(x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    if norm(&r) <= target {
        return Outcome::Converged;
    }
    let shadow = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut p = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];
    while *budget > 0 {
        *budget -= 1;
        let rho_next = dot(&shadow, &r);
        if rho_next == 0.0 || !rho_next.is_finite() {
            return Outcome::Breakdown;
        }
        let beta = (rho_next / rho) * (alpha / omega);
        rho = rho_next;
        for k in 0..n {
            p[k] = r[k] + beta * (p[k] - omega * v[k]);
            p_hat[k] = inv_diag[k] * p[k];
        }
        a.matvec_into(&p_hat, &mut v);
        let sv = dot(&shadow, &v);
        if sv == 0.0 || !sv.is_finite() {
            return Outcome::Breakdown;
        }
        alpha = rho / sv;
        // r becomes s
        for k in 0..n {
            r[k] -= alpha * v[k];
        }
        if norm(&r) <= target {
            for k in 0..n {
                x[k] += alpha * p_hat[k];
            }
            return Outcome::Converged;
        }
        for k in 0..n {
            s_hat[k] = inv_diag[k] * r[k];
        }
        a.matvec_into(&s_hat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &r) / tt } else { 0.0 };
        for k in 0..n {
            x[k] += alpha * p_hat[k] + omega * s_hat[k];
            r[k] -= omega * t[k];
        }
        if norm(&r) <= target {
            return Outcome::Converged;
        }
        if omega == 0.0 || !omega.is_finite() {
            return Outcome::Breakdown;
        }
    }
    Outcome::Breakdown
}

/// Sparse LU with fill-reducing ordering of a row-equilibrated matrix.
/// Used when BiCGSTAB stalls, which happens on operators that are far from
/// diagonally dominant, and reused across time steps.
#[derive(Debug, Clone)]
struct DirectSolver {
    scaled: CsrMatrix,
    row_scale: Vec<f64>,
    lu: Lu<usize, f64>,
}

impl DirectSolver {
    fn new(matrix: &CsrMatrix) -> Option<Self> {
        let n = matrix.n_rows();
        let (scaled, row_scale) = equilibrate(matrix);
        let mut triplets = Vec::with_capacity(scaled.nnz());
        for i in 0..n {
            let (cols, vals) = scaled.row(i);
            triplets.extend(cols.iter().zip(vals).map(|(&j, &v)| Triplet::new(i, j, v)));
        }
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets).ok()?;
        let lu = a.sp_lu().ok()?;
        Some(Self { scaled, row_scale, lu })
    }

    /// `None` unless the equilibrated residual meets `rel_tol`.
    fn solve(&self, rhs: &[f64], rel_tol: f64) -> Option<Vec<f64>> {
        let b: Vec<f64> = rhs.iter().zip(&self.row_scale).map(|(v, s)| v * s).collect();
        let x = self.lu.solve(&Col::<f64>::from_fn(b.len(), |i| b[i]));
        let x: Vec<f64> = (0..b.len()).map(|i| x[i]).collect();
        let ok = x.iter().all(|v| v.is_finite())
            && residual_norm(&self.scaled, &b, &x) <= rel_tol * norm(&b);
        ok.then_some(x)
    }
}

/// Solve `A x = b` to `|b - A x| <= rel_tol |b|` starting from zero, with
/// rows of `A` and `b` first scaled to unit max-norm.
pub fn solve_sparse(system: &LinearSystem, rel_tol: f64) -> Result<Vec<f64>> {
    solve_sparse_from(system, rel_tol, vec![0.0; system.len()])
}

/// As [`solve_sparse`] with an explicit initial guess.
pub fn solve_sparse_from(system: &LinearSystem, rel_tol: f64, x: Vec<f64>) -> Result<Vec<f64>> {
    solve_csr(&system.matrix, &system.rhs, rel_tol, x)
}

fn residual_norm(matrix: &CsrMatrix, rhs: &[f64], x: &[f64]) -> f64 {
    let ax = matrix.matvec(x);
    ax.iter().zip(rhs).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt()
}

/// Scale every row to unit max-norm. Jump coefficients put rows of very
/// different magnitude into one system, and an unscaled residual is then
/// dominated by the large rows.
/// Returns the scaled matrix and the per-row factors.
fn equilibrate(matrix: &CsrMatrix) -> (CsrMatrix, Vec<f64>) {
    let mut scaled = matrix.clone();
    let mut factors = vec![1.0; matrix.n_rows()];
    for (i, f) in factors.iter_mut().enumerate() {
        let row = scaled.row_values_mut(i);
        let big = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if big > 0.0 && big.is_finite() {
            *f = 1.0 / big;
            row.iter_mut().for_each(|v| *v *= *f);
        }
    }
    (scaled, factors)
}

/// The tolerance applies to the row-equilibrated system.
fn solve_csr(matrix: &CsrMatrix, rhs: &[f64], rel_tol: f64, mut x: Vec<f64>) -> Result<Vec<f64>> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(GfdmError::Parameter(format!("relative tolerance {rel_tol} not in (0, 1)")));
    }
    let n = rhs.len();
    assert_eq!(x.len(), n, "initial guess does not match the system");
    let (original, original_rhs) = (matrix, rhs.to_vec());
    let (scaled, factors) = equilibrate(matrix);
    let scaled_rhs: Vec<f64> = rhs.iter().zip(&factors).map(|(v, f)| v * f).collect();
    let (matrix, rhs) = (&scaled, scaled_rhs.as_slice());
    let b_norm = norm(rhs);
    if !b_norm.is_finite() {
        return Err(GfdmError::Domain("right-hand side is not finite".into()));
    }
    if b_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let target = rel_tol * b_norm;
    let inv_diag: Vec<f64> = matrix
        .diagonal()
        .iter()
        .map(|&d| if d != 0.0 && d.is_finite() { 1.0 / d } else { 1.0 })
        .collect();
    let cap = MAX_ITERATIONS.min(20 * n);
    let mut budget = cap;
    // the recurrence residual can drift from the true one; restart from the
    // current iterate until the true residual agrees or the budget runs out
    for _ in 0..4 {
        match bicgstab(matrix, rhs, &inv_diag, &mut x, target, &mut budget) {
            Outcome::Converged if residual_norm(matrix, rhs, &x) <= target => return Ok(x),
            Outcome::Converged if budget > 0 => continue,
            _ => break,
        }
    }
    if let Some(x) = DirectSolver::new(original).and_then(|d| d.solve(&original_rhs, rel_tol)) {
        return Ok(x);
    }
    let residual = if x.iter().all(|v| v.is_finite()) {
        residual_norm(matrix, rhs, &x) / b_norm
    } else {
        f64::INFINITY
    };
    Err(GfdmError::Solver {
        iterations: cap - budget,
        residual,
    })
}

/// `-L u = q` with homogeneous Dirichlet values on flagged points.
pub fn solve_poisson(operator: &OperatorMatrix, q: &[f64], boundary: &[bool]) -> Result<Vec<f64>> {
    let system = LinearSystem::new(operator.csr().shifted(0.0, -1.0), q.to_vec())?;
    solve_sparse(&apply_dirichlet(&system, boundary), DEFAULT_REL_TOL)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps: usize,
}

/// Uniform step `dt = horizon / M` with the smallest integer `M` such that
/// `dt <= 0.7 dx^2`.
pub fn cfl_dt(dx: f64, horizon: f64) -> Result<TimeGrid> {
    if !(dx > 0.0 && dx.is_finite()) || !(horizon > 0.0 && horizon.is_finite()) {
        return Err(GfdmError::Parameter(format!(
            "time step needs positive spacing and horizon, got {dx} and {horizon}"
        )));
    }
    let ratio = horizon / (CFL_FACTOR * dx * dx);
    // absorb rounding in the ratio so exact multiples do not gain a step
    let steps = ((ratio * (1.0 - 1e-12)).ceil() as usize).max(1);
    Ok(TimeGrid {
        dt: horizon / steps as f64,
        steps,
    })
}

/// Implicit trapezoidal rule for `du/dt = L u + q` with zero Dirichlet
/// values, with the left-hand matrix assembled once.
#[derive(Debug, Clone)]
pub struct TrapezoidalStepper {
    implicit: CsrMatrix,
    explicit: CsrMatrix,
    boundary: Vec<bool>,
    dt: f64,
    // the implicit matrix never changes, so one factorization serves every step
    direct: Option<DirectSolver>,
}

impl TrapezoidalStepper {
    pub fn new(operator: &OperatorMatrix, dt: f64, boundary: &[bool]) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(GfdmError::Parameter(format!("time step {dt} is not positive")));
        }
        if boundary.len() != operator.len() {
            return Err(GfdmError::Parameter("boundary flags do not match the operator".into()));
        }
        let implicit = operator.csr().shifted(1.0, -0.5 * dt).with_identity_rows(boundary);
        Ok(Self {
            direct: DirectSolver::new(&implicit),
            implicit,
            explicit: operator.csr().shifted(1.0, 0.5 * dt),
            boundary: boundary.to_vec(),
            dt,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step(&self, u: &[f64], q_now: &[f64], q_next: &[f64]) -> Result<Vec<f64>> {
        let mut rhs = self.explicit.matvec(u);
        for k in 0..rhs.len() {
            rhs[k] = if self.boundary[k] {
                0.0
            } else {
                rhs[k] + 0.5 * self.dt * (q_now[k] + q_next[k])
            };
        }
        if let Some(x) = self.direct.as_ref().and_then(|d| d.solve(&rhs, DEFAULT_REL_TOL)) {
            return Ok(x);
        }
        solve_csr(&self.implicit, &rhs, DEFAULT_REL_TOL, u.to_vec())
    }
}

pub fn step_trapezoidal(
    operator: &OperatorMatrix,
    u: &[f64],
    q_now: &[f64],
    q_next: &[f64],
    dt: f64,
    boundary: &[bool],
) -> Result<Vec<f64>> {
    TrapezoidalStepper::new(operator, dt, boundary)?.step(u, q_now, q_next)
}

/// March `du/dt = L u + q(t)` from `u0` over `grid.steps` steps. `source`
/// samples the source at a given time.
pub fn solve_heat(
    operator: &OperatorMatrix,
    boundary: &[bool],
    u0: Vec<f64>,
    grid: TimeGrid,
    mut source: impl FnMut(f64) -> Vec<f64>,
) -> Result<Vec<f64>> {
    let stepper = TrapezoidalStepper::new(operator, grid.dt, boundary)?;
    let mut u = u0;
    let mut q_now = source(0.0);
    for n in 0..grid.steps {
        let q_next = source((n + 1) as f64 * grid.dt);
        u = stepper.step(&u, &q_now, &q_next)?;
        if u.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Err(GfdmError::Diverged { step: n + 1 });
        }
        q_now = q_next;
    }
    Ok(u)
}

/// `|u_ref - u_h| / |u_ref|` in the norm `|u|^2 = sum_i v_i u_i^2`.
pub fn discrete_l2_error(u_h: &[f64], u_ref: &[f64], weights: &[f64]) -> Result<f64> {
    if u_h.len() != u_ref.len() || u_h.len() != weights.len() {
        return Err(GfdmError::Parameter("norm inputs differ in length".into()));
    }
    let mut diff = 0.0;
    let mut refn = 0.0;
    for ((a, b), w) in u_h.iter().zip(u_ref).zip(weights) {
        diff += w * (b - a) * (b - a);
        refn += w * b * b;
    }
    if refn == 0.0 {
        return Err(GfdmError::Domain("reference solution has zero norm".into()));
    }
    if !diff.is_finite() {
        return Err(GfdmError::Domain("numerical solution is not finite".into()));
    }
    Ok((diff / refn).sqrt())
}

pub fn write_solution_csv(path: impl AsRef<Path>, cloud: &PointCloud, u_h: &[f64], u_ref: &[f64]) -> Result<()> {
    let mut out = String::from("id,x,y,u_h,u_ref,abs_err\n");
    for (i, p) in cloud.points().iter().enumerate() {
        let _ = writeln!(
            out,
            "{i},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            p[0],
            p[1],
            u_h[i],
            u_ref[i],
            (u_h[i] - u_ref[i]).abs()
        );
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{OperatorKind, OperatorRow};

    fn system(rows: Vec<(Vec<usize>, Vec<f64>)>, rhs: Vec<f64>) -> LinearSystem {
        let n = rhs.len();
        LinearSystem::new(CsrMatrix::from_rows(n, rows), rhs).unwrap()
    }

    #[test]
    fn trivial_systems() {
        let id = LinearSystem::new(CsrMatrix::identity(3), vec![1.0, -2.0, 3.5]).unwrap();
        assert_eq!(solve_sparse(&id, 1e-10).unwrap(), vec![1.0, -2.0, 3.5]);
        let diag = system(vec![(vec![0], vec![2.0]), (vec![1], vec![4.0])], vec![2.0, 8.0]);
        assert_eq!(solve_sparse(&diag, 1e-10).unwrap(), vec![1.0, 2.0]);
        assert!(solve_sparse(&diag, 0.0).is_err());
    }

    #[test]
    fn malformed_systems_are_rejected() {
        let empty_row = CsrMatrix::from_rows(2, vec![(vec![0], vec![1.0]), (vec![], vec![])]);
        assert!(LinearSystem::new(empty_row, vec![0.0, 0.0]).is_err());
        assert!(LinearSystem::new(CsrMatrix::identity(2), vec![0.0]).is_err());
    }

    #[test]
    fn dirichlet_rows() {
        let s = system(
            vec![(vec![0, 1], vec![2.0, -1.0]), (vec![0, 1], vec![-1.0, 2.0])],
            vec![1.0, 1.0],
        );
        let all = apply_dirichlet(&s, &[true, true]);
        assert_eq!(solve_sparse(&all, 1e-10).unwrap(), vec![0.0, 0.0]);
        assert_eq!(apply_dirichlet(&s, &[false, false]), s);
        let mixed = apply_dirichlet(&s, &[true, false]);
        let x = solve_sparse(&mixed, 1e-12).unwrap();
        assert_eq!(x[0], 0.0);
        assert!((x[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn singular_system_reports_failure() {
        let s = system(vec![(vec![0, 1], vec![1.0, 1.0]), (vec![0, 1], vec![1.0, 1.0])], vec![1.0, 2.0]);
        assert!(matches!(solve_sparse(&s, 1e-10), Err(GfdmError::Solver { .. })));
    }

    #[test]
    fn time_grid() {
        let g = cfl_dt(0.1, 1.0).unwrap();
        assert_eq!(g.steps, 143);
        assert_eq!(g.dt, 1.0 / 143.0);
        assert_eq!(cfl_dt(1.0, 0.7).unwrap(), TimeGrid { dt: 0.7, steps: 1 });
        assert!(cfl_dt(0.0, 1.0).is_err());
        let mut last = f64::INFINITY;
        for k in 1..50 {
            let dt = cfl_dt(1.0 / k as f64, 1.0).unwrap().dt;
            assert!(dt <= last && dt <= 0.7 / (k * k) as f64 + 1e-18);
            last = dt;
        }
    }

    fn scalar(a: f64) -> OperatorMatrix {
        OperatorMatrix::from_rows(OperatorKind::Laplace, 0, false, vec![OperatorRow::new(0, vec![0], vec![-a])])
    }

    #[test]
    fn trapezoidal_amplification() {
        for (a, dt) in [(1.0, 0.1), (100.0, 0.5), (3.0, 1e-3)] {
            let u = step_trapezoidal(&scalar(a), &[1.0], &[0.0], &[0.0], dt, &[false]).unwrap();
            let expect = (1.0 - 0.5 * a * dt) / (1.0 + 0.5 * a * dt);
            assert!((u[0] - expect).abs() < 1e-12);
            assert!(u[0].abs() <= 1.0);
        }
        let still = step_trapezoidal(&scalar(0.0), &[0.3], &[0.0], &[0.0], 0.1, &[false]).unwrap();
        assert_eq!(still, vec![0.3]);
    }

    #[test]
    fn heat_with_zero_data_stays_zero() {
        let grid = TimeGrid { dt: 0.1, steps: 10 };
        let u = solve_heat(&scalar(2.0), &[false], vec![0.0], grid, |_| vec![0.0]).unwrap();
        assert_eq!(u, vec![0.0]);
    }

    #[test]
    fn norms() {
        assert_eq!(discrete_l2_error(&[1.0, 2.0], &[1.0, 2.0], &[0.5, 0.5]).unwrap(), 0.0);
        assert_eq!(discrete_l2_error(&[0.0, 0.0], &[1.0, 2.0], &[0.5, 0.5]).unwrap(), 1.0);
        assert!((discrete_l2_error(&[3.0, 0.0], &[3.0, 4.0], &[1.0, 1.0]).unwrap() - 0.8).abs() < 1e-15);
        assert!(discrete_l2_error(&[1.0], &[0.0], &[1.0]).is_err());
        assert!(discrete_l2_error(&[f64::INFINITY], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn rows_of_very_different_size() {
        // a 1e8 jump in one row; the small rows must still be resolved
        let s = system(
            vec![
                (vec![0, 1], vec![2e8, -1e8]),
                (vec![0, 1, 2], vec![-1.0, 2.0, -1.0]),
                (vec![1, 2], vec![-1.0, 2.0]),
            ],
            vec![1e8, 0.0, 1.0],
        );
        let x = solve_sparse(&s, 1e-12).unwrap();
        let exact = nalgebra::DMatrix::from_row_slice(3, 3, &[2e8, -1e8, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0])
            .lu()
            .solve(&nalgebra::DVector::from_vec(vec![1e8, 0.0, 1.0]))
            .unwrap();
        for k in 0..3 {
            assert!((x[k] - exact[k]).abs() < 1e-10 * exact[k].abs().max(1.0));
        }
    }

    #[test]
    fn unstable_stepping_is_reported() {
        let grid = TimeGrid { dt: 1.0, steps: 1000 };
        let err = solve_heat(&scalar(-1.9), &[false], vec![1.0], grid, |_| vec![0.0]).unwrap_err();
        assert!(matches!(err, GfdmError::Diverged { .. }));
    }
}
