//! Manufactured test problems and convergence sweeps over point clouds.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::diffusion::{
    build_ddo, build_fvm_diffusion, build_mls_diffusion, DiffusivityField, ReconstructionScheme,
    ScalarField,
};
use crate::error::{GfdmError, Result};
use crate::mls::{build_gradient, build_laplace, satisfies_sign_condition};
use crate::operator::OperatorMatrix;
use crate::pointcloud::{build_stencils, generate_cloud, min_point_distance, PointCloud, StencilSet};
use crate::solver::{cfl_dt, discrete_l2_error, solve_heat, solve_poisson, TimeGrid};
use crate::voronoi::{compute_voronoi, norm_weights, VoronoiDiagram};

/// Stencil size used by every MLS-based method, enough for the 15-term
/// degree-4 basis with room to spare.
pub const MIN_NEIGHBORS: usize = 30;

pub const DEFAULT_H_LIST: [f64; 4] = [0.16, 0.08, 0.04, 0.02];

/// Diffusivity inside the inclusion of the interface problem.
pub const INTERFACE_CONTRAST: f64 = 1e8;

/// Offset of the interface level set.
pub const INTERFACE_LEVEL: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseKind {
    Elliptic,
    Parabolic,
}

/// `sin(pi x) sin(pi y)` and its derivatives.
fn bump(x: [f64; 2]) -> (f64, [f64; 2]) {
    let (sx, cx) = (PI * x[0]).sin_cos();
    let (sy, cy) = (PI * x[1]).sin_cos();
    (sx * sy, [PI * cx * sy, PI * sx * cy])
}

/// One of the five benchmark problems on the unit square with zero
/// Dirichlet data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TestCase {
    id: u8,
}

/// Diffusivity of a [`TestCase`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaseDiffusivity {
    id: u8,
}

impl ScalarField for CaseDiffusivity {
    fn value(&self, x: [f64; 2]) -> f64 {
        match self.id {
            1 | 4 => (x[0] - x[1] * x[1]).exp(),
            2 => 2.0 + (6.0 * PI * x[0]).sin() * (6.0 * PI * x[1]).sin(),
            _ => {
                if bump(x).0 - INTERFACE_LEVEL >= 0.0 {
                    INTERFACE_CONTRAST
                } else {
                    1.0
                }
            }
        }
    }

    fn gradient(&self, x: [f64; 2]) -> Option<[f64; 2]> {
        Some(match self.id {
            1 | 4 => {
                let l = self.value(x);
                [l, -2.0 * x[1] * l]
            }
            2 => {
                let (sx, cx) = (6.0 * PI * x[0]).sin_cos();
                let (sy, cy) = (6.0 * PI * x[1]).sin_cos();
                [6.0 * PI * cx * sy, 6.0 * PI * sx * cy]
            }
            // piecewise constant: zero away from the interface
            _ => [0.0, 0.0],
        })
    }

    fn laplacian(&self, x: [f64; 2]) -> Option<f64> {
        Some(match self.id {
            1 | 4 => self.value(x) * (4.0 * x[1] * x[1] - 1.0),
            2 => -72.0 * PI * PI * (6.0 * PI * x[0]).sin() * (6.0 * PI * x[1]).sin(),
            _ => 0.0,
        })
    }
}

impl TestCase {
    pub fn new(id: u8) -> Result<Self> {
        if (1..=5).contains(&id) {
            Ok(Self { id })
        } else {
            Err(GfdmError::Parameter(format!("unknown test case {id}, expected 1 to 5")))
        }
    }

    pub fn id(self) -> u8 {
        self.id
    }

    pub fn kind(self) -> CaseKind {
        if self.id >= 4 {
            CaseKind::Parabolic
        } else {
            CaseKind::Elliptic
        }
    }

    pub fn diffusivity(self) -> CaseDiffusivity {
        CaseDiffusivity { id: self.id }
    }

    /// Whether the diffusivity jumps across an interface.
    pub fn has_interface(self) -> bool {
        matches!(self.id, 3 | 5)
    }

    /// Temporal factor `a(t) = exp(-4t)`; one for elliptic cases.
    pub fn temporal(self, t: f64) -> f64 {
        match self.kind() {
            CaseKind::Elliptic => 1.0,
            CaseKind::Parabolic => (-4.0 * t).exp(),
        }
    }

    /// Time-independent profile of the solution.
    pub fn profile(self, x: [f64; 2]) -> f64 {
        let s = bump(x).0;
        if self.has_interface() {
            let f = s - INTERFACE_LEVEL;
            f / self.diffusivity().value(x) + INTERFACE_LEVEL
        } else {
            s
        }
    }

    /// `-div(lambda grad profile)`, from closed-form derivatives.
    pub fn steady_source(self, x: [f64; 2]) -> f64 {
        let (s, ds) = bump(x);
        if self.has_interface() {
            // lambda grad(profile) = grad f away from the interface
            return 2.0 * PI * PI * s;
        }
        let field = self.diffusivity();
        let l = field.value(x);
        let g = field.gradient(x).unwrap_or([0.0, 0.0]);
        -(g[0] * ds[0] + g[1] * ds[1]) + 2.0 * PI * PI * l * s
    }

    pub fn solution(self, x: [f64; 2], t: f64) -> f64 {
        self.temporal(t) * self.profile(x)
    }

    /// Source of `du/dt = div(lambda grad u) + q`, or of `-div(lambda grad u) = q`.
    pub fn source(self, x: [f64; 2], t: f64) -> f64 {
        match self.kind() {
            CaseKind::Elliptic => self.steady_source(x),
            CaseKind::Parabolic => self.temporal(t) * (self.steady_source(x) - 4.0 * self.profile(x)),
        }
    }
}

pub fn define_test_case(id: u8) -> Result<TestCase> {
    TestCase::new(id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Fvm,
    Mls2,
    Mls4,
    Ddo2,
    Ddo4,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Fvm, Method::Mls2, Method::Mls4, Method::Ddo2, Method::Ddo4];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Fvm => "fvm",
            Method::Mls2 => "mls2",
            Method::Mls4 => "mls4",
            Method::Ddo2 => "ddo2",
            Method::Ddo4 => "ddo4",
        }
    }

    pub fn order(self) -> usize {
        match self {
            Method::Fvm | Method::Mls2 | Method::Ddo2 => 2,
            Method::Mls4 | Method::Ddo4 => 4,
        }
    }

    /// Diagonal dominance correction default. On for every MLS-based
    /// method: without it the order-4 rows have eigenvalues in the right
    /// half-plane on these clouds and time stepping blows up.
    pub fn default_dd(self) -> bool {
        self != Method::Fvm
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = GfdmError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                GfdmError::Parameter(format!(
                    "unknown method '{s}', expected one of fvm, mls2, mls4, ddo2, ddo4"
                ))
            })
    }
}

/// Everything about one cloud that does not depend on the problem: the
/// points, stencils, Voronoi cells, and lazily built Laplace and gradient
/// operators.
#[derive(Debug)]
pub struct Discretization {
    pub h: f64,
    pub seed: u64,
    pub cloud: PointCloud,
    pub stencils: StencilSet,
    pub diagram: VoronoiDiagram,
    pub weights: Vec<f64>,
    laplacians: BTreeMap<(usize, bool), OperatorMatrix>,
    gradient: Option<[OperatorMatrix; 2]>,
}

impl Discretization {
    pub fn new(h: f64, seed: u64) -> Result<Self> {
        Self::from_cloud(generate_cloud(h, seed)?, h, seed)
    }

    pub fn from_cloud(cloud: PointCloud, h: f64, seed: u64) -> Result<Self> {
        let stencils = build_stencils(&cloud, MIN_NEIGHBORS)?;
        let diagram = compute_voronoi(&cloud)?;
        let weights = norm_weights(&diagram);
        Ok(Self {
            h,
            seed,
            cloud,
            stencils,
            diagram,
            weights,
            laplacians: BTreeMap::new(),
            gradient: None,
        })
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    pub fn laplacian(&mut self, order: usize, dd: bool) -> Result<&OperatorMatrix> {
        if !self.laplacians.contains_key(&(order, dd)) {
            let op = build_laplace(&self.cloud, &self.stencils, order, dd)?;
            self.laplacians.insert((order, dd), op);
        }
        Ok(&self.laplacians[&(order, dd)])
    }

    pub fn gradient(&mut self) -> Result<&[OperatorMatrix; 2]> {
        if self.gradient.is_none() {
            self.gradient = Some(build_gradient(&self.cloud, &self.stencils)?);
        }
        Ok(self.gradient.as_ref().expect("gradient just built"))
    }

    /// Diffusivity samples of `case`; the working gradients come from the
    /// discrete gradient unless `analytic` is set.
    pub fn field(&mut self, case: TestCase, analytic: bool) -> Result<DiffusivityField> {
        let field = DiffusivityField::sample(&self.cloud, &case.diffusivity())?;
        if analytic {
            Ok(field)
        } else {
            let gradient = self.gradient()?;
            Ok(field.with_discrete_gradients(gradient))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Diagonal dominance correction for the Laplacian under DDO; `None`
    /// picks the per-order default.
    pub dd: Option<bool>,
    /// Feed analytic diffusivity gradients instead of discrete ones.
    pub analytic_gradients: bool,
    /// Final time of parabolic runs.
    pub horizon: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            dd: None,
            analytic_gradients: false,
            horizon: 1.0,
        }
    }
}

/// The assembled operator for one method together with diagnostics.
#[derive(Debug, Clone)]
pub struct BuiltOperator {
    pub matrix: OperatorMatrix,
    pub clamp_count: usize,
    /// Interior rows violating the sign condition.
    pub dd_violations: usize,
}

pub fn interior_sign_violations(matrix: &OperatorMatrix, boundary: &[bool]) -> usize {
    (0..matrix.len())
        .filter(|&i| !boundary[i] && !satisfies_sign_condition(&matrix.row(i)))
        .count()
}

pub fn build_operator(
    disc: &mut Discretization,
    case: TestCase,
    method: Method,
    scheme: ReconstructionScheme,
    options: &RunOptions,
) -> Result<BuiltOperator> {
    let field = disc.field(case, options.analytic_gradients)?;
    let (matrix, clamp_count) = match method {
        Method::Fvm => {
            let op = build_fvm_diffusion(&disc.diagram, &disc.cloud, &field, scheme)?;
            (op.matrix, op.clamp_count)
        }
        Method::Mls2 | Method::Mls4 => {
            let dd = options.dd.unwrap_or(method.default_dd());
            (build_mls_diffusion(&disc.cloud, &disc.stencils, &field, method.order(), dd)?, 0)
        }
        Method::Ddo2 | Method::Ddo4 => {
            let dd = options.dd.unwrap_or(method.default_dd());
            let laplace = disc.laplacian(method.order(), dd)?.clone();
            let op = build_ddo(&laplace, &disc.cloud, &field, scheme)?;
            (op.matrix, op.clamp_count)
        }
    };
    let dd_violations = interior_sign_violations(&matrix, disc.cloud.is_boundary());
    Ok(BuiltOperator {
        matrix,
        clamp_count,
        dd_violations,
    })
}

/// Outcome of one solve on one cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub case: u8,
    pub method: Method,
    pub scheme: ReconstructionScheme,
    pub seed: u64,
    pub h: f64,
    pub n: usize,
    pub dt: Option<f64>,
    /// Relative discrete L2 error, or the failure message.
    pub error: std::result::Result<f64, String>,
    pub order_running: Option<f64>,
    pub wall_time_s: f64,
    pub clamp_count: usize,
    pub dd_violations: usize,
}

impl RunRecord {
    pub fn error_value(&self) -> Option<f64> {
        self.error.as_ref().ok().copied().filter(|e| e.is_finite() && *e > 0.0)
    }
}

/// Solution and reference of one run.
#[derive(Debug, Clone)]
pub struct Solution {
    pub u_h: Vec<f64>,
    pub u_ref: Vec<f64>,
    pub error: f64,
    pub time_grid: Option<TimeGrid>,
    pub operator: BuiltOperator,
}

pub fn solve_case(
    disc: &mut Discretization,
    case: TestCase,
    method: Method,
    scheme: ReconstructionScheme,
    options: &RunOptions,
) -> Result<Solution> {
    let operator = build_operator(disc, case, method, scheme, options)?;
    let points = disc.cloud.points();
    let boundary = disc.cloud.is_boundary();
    let (u_h, u_ref, time_grid) = match case.kind() {
        CaseKind::Elliptic => {
            let q: Vec<f64> = points.iter().map(|&p| case.source(p, 0.0)).collect();
            let u_h = solve_poisson(&operator.matrix, &q, boundary)?;
            let u_ref: Vec<f64> = points.iter().map(|&p| case.solution(p, 0.0)).collect();
            (u_h, u_ref, None)
        }
        CaseKind::Parabolic => {
            let grid = cfl_dt(min_point_distance(&disc.cloud)?, options.horizon)?;
            let u0 = points
                .iter()
                .zip(boundary)
                .map(|(&p, &b)| if b { 0.0 } else { case.solution(p, 0.0) })
                .collect();
            let u_h = solve_heat(&operator.matrix, boundary, u0, grid, |t| {
                points.iter().map(|&p| case.source(p, t)).collect()
            })?;
            let u_ref: Vec<f64> = points.iter().map(|&p| case.solution(p, options.horizon)).collect();
            (u_h, u_ref, Some(grid))
        }
    };
    let error = discrete_l2_error(&u_h, &u_ref, &disc.weights)?;
    Ok(Solution {
        u_h,
        u_ref,
        error,
        time_grid,
        operator,
    })
}

/// One sweep row on an existing discretization.
pub fn run_on(
    disc: &mut Discretization,
    case: TestCase,
    method: Method,
    scheme: ReconstructionScheme,
    options: &RunOptions,
) -> RunRecord {
    let start = Instant::now();
    let outcome = solve_case(disc, case, method, scheme, options);
    let wall_time_s = start.elapsed().as_secs_f64();
    let mut record = RunRecord {
        case: case.id(),
        method,
        scheme,
        seed: disc.seed,
        h: disc.h,
        n: disc.len(),
        dt: None,
        error: Err(String::new()),
        order_running: None,
        wall_time_s,
        clamp_count: 0,
        dd_violations: 0,
    };
    match outcome {
        Ok(sol) => {
            record.dt = sol.time_grid.map(|g| g.dt);
            record.error = Ok(sol.error);
            record.clamp_count = sol.operator.clamp_count;
            record.dd_violations = sol.operator.dd_violations;
        }
        Err(e) => record.error = Err(e.to_string()),
    }
    record
}

fn check_h_list(h_list: &[f64]) -> Result<()> {
    if h_list.is_empty() {
        return Err(GfdmError::Parameter("empty h list".into()));
    }
    if h_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(GfdmError::Parameter("h list must be strictly decreasing".into()));
    }
    Ok(())
}

/// Fill `order_running` from consecutive valid rows of the same method.
fn fill_running_orders(records: &mut [RunRecord]) {
    let mut last: BTreeMap<Method, (usize, f64)> = BTreeMap::new();
    for r in records.iter_mut() {
        if let Some(e) = r.error_value() {
            if let Some(&(n0, e0)) = last.get(&r.method) {
                r.order_running = pair_order(n0, e0, r.n, e);
            }
            last.insert(r.method, (r.n, e));
        }
    }
}

fn pair_order(n0: usize, e0: f64, n1: usize, e1: f64) -> Option<f64> {
    let dh = (effective_h(n1) / effective_h(n0)).ln();
    (dh != 0.0).then(|| (e1 / e0).ln() / dh)
}

/// `h ~ N^{-1/2}` in two dimensions.
pub fn effective_h(n: usize) -> f64 {
    (n as f64).powf(-0.5)
}

/// Sweep several methods over a refinement sequence, sharing one cloud per
/// level. Rows are ordered by level, then by the given method order.
pub fn run_sweep(
    case: TestCase,
    methods: &[Method],
    scheme: ReconstructionScheme,
    h_list: &[f64],
    seed: u64,
    options: &RunOptions,
) -> Result<Vec<RunRecord>> {
    check_h_list(h_list)?;
    let mut records = Vec::with_capacity(h_list.len() * methods.len());
    for &h in h_list {
        match Discretization::new(h, seed) {
            Ok(mut disc) => {
                for &m in methods {
                    records.push(run_on(&mut disc, case, m, scheme, options));
                }
            }
            Err(e) => {
                for &m in methods {
                    records.push(RunRecord {
                        case: case.id(),
                        method: m,
                        scheme,
                        seed,
                        h,
                        n: 0,
                        dt: None,
                        error: Err(e.to_string()),
                        order_running: None,
                        wall_time_s: 0.0,
                        clamp_count: 0,
                        dd_violations: 0,
                    });
                }
            }
        }
    }
    fill_running_orders(&mut records);
    Ok(records)
}

pub fn run_convergence(
    case: TestCase,
    method: Method,
    scheme: ReconstructionScheme,
    h_list: &[f64],
    seed: u64,
    options: &RunOptions,
) -> Result<Vec<RunRecord>> {
    run_sweep(case, &[method], scheme, h_list, seed, options)
}

/// Least-squares fit of `log(error)` against `log(h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderFit {
    /// `None` with fewer than two usable points.
    pub slope: Option<f64>,
    /// Euclidean norm of the fit residuals in log space.
    pub residual: f64,
    pub points: usize,
}

pub fn fit_slope(h: &[f64], values: &[f64]) -> OrderFit {
    let pts: Vec<(f64, f64)> = h
        .iter()
        .zip(values)
        .map(|(&x, &y)| (x, y))
        .filter(|&(x, y)| x > 0.0 && y > 0.0 && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len();
    if n < 2 {
        return OrderFit {
            slope: None,
            residual: 0.0,
            points: n,
        };
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return OrderFit {
            slope: None,
            residual: 0.0,
            points: n,
        };
    }
    let slope = sxy / sxx;
    let residual = pts
        .iter()
        .map(|p| {
            let r = p.1 - (my + slope * (p.0 - mx));
            r * r
        })
        .sum::<f64>()
        .sqrt();
    OrderFit {
        slope: Some(slope),
        residual,
        points: n,
    }
}

/// Convergence order from `(N, error)` pairs, with `h = N^{-1/2}`.
pub fn estimate_order(rows: &[(usize, f64)]) -> OrderFit {
    let h: Vec<f64> = rows.iter().map(|&(n, _)| effective_h(n)).collect();
    let e: Vec<f64> = rows.iter().map(|&(_, e)| e).collect();
    fit_slope(&h, &e)
}

pub fn estimate_record_order(records: &[RunRecord]) -> OrderFit {
    let rows: Vec<(usize, f64)> = records
        .iter()
        .filter_map(|r| r.error_value().map(|e| (r.n, e)))
        .collect();
    estimate_order(&rows)
}

pub const RESULTS_HEADER: &str =
    "case,method,scheme,seed,h,N,dt,error,order_running,wall_time_s,clamp_count,dd_violations";

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.6e}"))
}

pub fn results_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in records {
        let error = match &r.error {
            Ok(e) => format!("{e:.10e}"),
            Err(_) => "nan".to_string(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{:.3},{},{}",
            r.case,
            r.method,
            r.scheme,
            r.seed,
            r.h,
            r.n,
            opt(r.dt),
            error,
            r.order_running.map_or(String::new(), |o| format!("{o:.4}")),
            r.wall_time_s,
            r.clamp_count,
            r.dd_violations
        );
    }
    out
}

pub fn write_results_csv(path: impl AsRef<Path>, records: &[RunRecord]) -> Result<()> {
    fs::write(path, results_csv(records))?;
    Ok(())
}
