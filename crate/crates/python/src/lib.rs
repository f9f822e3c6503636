use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use gfdm::benchmark::{self, Discretization as CoreDiscretization, Method, RunOptions, TestCase};
use gfdm::diffusion::{self, ReconstructionScheme};
use gfdm::operator::OperatorMatrix;
use gfdm::pointcloud::{self, PointCloud as CorePointCloud};
use gfdm::verification::{self, Suite, DEFAULT_VERIFY_H};
use gfdm::GfdmError;

fn to_py(e: GfdmError) -> PyErr {
    match e {
        GfdmError::Parameter(_) | GfdmError::Format { .. } => PyValueError::new_err(e.to_string()),
        GfdmError::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn options(dd: Option<bool>) -> RunOptions {
    RunOptions {
        dd,
        ..RunOptions::default()
    }
}

#[pyclass(name = "PointCloud", module = "pygfdm", frozen)]
pub struct PyPointCloud {
    inner: CorePointCloud,
}

#[pymethods]
impl PyPointCloud {
    #[staticmethod]
    #[pyo3(signature = (h, seed = 1))]
    fn generate(h: f64, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: pointcloud::generate_cloud(h, seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: pointcloud::load_cloud(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        pointcloud::save_cloud(&self.inner, path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("PointCloud(points={}, boundary={})", self.inner.len(), self.inner.boundary_count())
    }

    #[getter]
    fn points(&self) -> Vec<(f64, f64)> {
        self.inner.points().iter().map(|p| (p[0], p[1])).collect()
    }

    #[getter]
    fn h(&self) -> Vec<f64> {
        self.inner.h().to_vec()
    }

    #[getter]
    fn is_boundary(&self) -> Vec<bool> {
        self.inner.is_boundary().to_vec()
    }
}

/// Sparse operator rows; row `i` is centered at point `i`.
#[pyclass(name = "Operator", module = "pygfdm", frozen)]
pub struct PyOperator {
    inner: OperatorMatrix,
}

#[pymethods]
impl PyOperator {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Operator(kind={:?}, degree={}, rows={})",
            self.inner.kind,
            self.inner.degree,
            self.inner.len()
        )
    }

    fn apply(&self, values: Vec<f64>) -> PyResult<Vec<f64>> {
        if values.len() != self.inner.len() {
            return Err(PyValueError::new_err(format!(
                "expected {} values, got {}",
                self.inner.len(),
                values.len()
            )));
        }
        Ok(self.inner.apply(&values))
    }

    /// `(indices, coefficients)` of row `i`.
    fn row(&self, i: usize) -> PyResult<(Vec<usize>, Vec<f64>)> {
        if i >= self.inner.len() {
            return Err(PyValueError::new_err(format!("row {i} out of range")));
        }
        Ok((self.inner.indices(i).to_vec(), self.inner.coefficients(i).to_vec()))
    }

    fn row_sums(&self) -> Vec<f64> {
        (0..self.inner.len()).map(|i| self.inner.row_sum(i)).collect()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.write_csv(path).map_err(to_py)
    }
}

/// A cloud with its stencils and Voronoi cells.
#[pyclass(name = "Discretization", module = "pygfdm")]
pub struct PyDiscretization {
    inner: CoreDiscretization,
}

#[pymethods]
impl PyDiscretization {
    #[new]
    #[pyo3(signature = (h, seed = 1))]
    fn new(h: f64, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: CoreDiscretization::new(h, seed).map_err(to_py)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn cloud(&self) -> PyPointCloud {
        PyPointCloud {
            inner: self.inner.cloud.clone(),
        }
    }

    #[getter]
    fn volumes(&self) -> Vec<f64> {
        self.inner.diagram.volumes().to_vec()
    }

    #[pyo3(signature = (order = 2, dd = true))]
    fn laplacian(&mut self, order: usize, dd: bool) -> PyResult<PyOperator> {
        Ok(PyOperator {
            inner: self.inner.laplacian(order, dd).map_err(to_py)?.clone(),
        })
    }

    /// Derived diffusion operator for diffusivity samples `values`.
    #[pyo3(signature = (values, order = 2, recon = "am", dd = true))]
    fn diffusion(&mut self, values: Vec<f64>, order: usize, recon: &str, dd: bool) -> PyResult<PyOperator> {
        let scheme: ReconstructionScheme = recon.parse().map_err(to_py)?;
        let field = diffusion::DiffusivityField::from_values(values).map_err(to_py)?;
        let field = if scheme.needs_gradients() {
            let gradient = self.inner.gradient().map_err(to_py)?;
            field.with_discrete_gradients(gradient)
        } else {
            field
        };
        let laplace = self.inner.laplacian(order, dd).map_err(to_py)?.clone();
        let op = diffusion::build_ddo(&laplace, &self.inner.cloud, &field, scheme).map_err(to_py)?;
        Ok(PyOperator { inner: op.matrix })
    }

    /// Solve a benchmark case; returns `(error, u_h, u_ref)`.
    #[pyo3(signature = (case, method, recon = "am", dd = None))]
    fn solve(&mut self, case: u8, method: &str, recon: &str, dd: Option<bool>) -> PyResult<(f64, Vec<f64>, Vec<f64>)> {
        let case = TestCase::new(case).map_err(to_py)?;
        let method: Method = method.parse().map_err(to_py)?;
        let scheme: ReconstructionScheme = recon.parse().map_err(to_py)?;
        let sol = benchmark::solve_case(&mut self.inner, case, method, scheme, &options(dd)).map_err(to_py)?;
        Ok((sol.error, sol.u_h, sol.u_ref))
    }
}

/// Fitted order per method tag, `None` with too few usable levels.
type Orders = Vec<(String, Option<f64>)>;

/// Refinement sweep; returns `(results_csv, [(method, order)])`.
#[pyfunction]
#[pyo3(signature = (case, methods, recon = "am", h_list = vec![0.16, 0.08, 0.04], seed = 1, dd = None))]
fn converge(
    case: u8,
    methods: Vec<String>,
    recon: &str,
    h_list: Vec<f64>,
    seed: u64,
    dd: Option<bool>,
) -> PyResult<(String, Orders)> {
    let case = TestCase::new(case).map_err(to_py)?;
    let methods = methods
        .iter()
        .map(|m| m.parse::<Method>())
        .collect::<gfdm::Result<Vec<_>>>()
        .map_err(to_py)?;
    let scheme: ReconstructionScheme = recon.parse().map_err(to_py)?;
    let records = benchmark::run_sweep(case, &methods, scheme, &h_list, seed, &options(dd)).map_err(to_py)?;
    let orders = methods
        .iter()
        .map(|m| {
            let rows: Vec<_> = records.iter().filter(|r| r.method == *m).cloned().collect();
            (m.tag().to_string(), benchmark::estimate_record_order(&rows).slope)
        })
        .collect();
    Ok((benchmark::results_csv(&records), orders))
}

/// Run a verification suite; returns `(passed, text_report, csv_report)`.
#[pyfunction]
#[pyo3(signature = (suite = "all", h_list = None, seed = 1))]
fn verify(suite: &str, h_list: Option<Vec<f64>>, seed: u64) -> PyResult<(bool, String, String)> {
    let suite: Suite = suite.parse().map_err(to_py)?;
    let h_list = h_list.unwrap_or(DEFAULT_VERIFY_H.to_vec());
    let report = verification::run_suite(suite, &h_list, seed).map_err(to_py)?;
    Ok((report.passed(), report.to_text(), report.to_csv()))
}

#[pyfunction]
#[pyo3(signature = (recon, li, lj, d, gi = None, gj = None))]
fn reconstruct(
    recon: &str,
    li: f64,
    lj: f64,
    d: (f64, f64),
    gi: Option<(f64, f64)>,
    gj: Option<(f64, f64)>,
) -> PyResult<f64> {
    let scheme: ReconstructionScheme = recon.parse().map_err(to_py)?;
    let arr = |g: (f64, f64)| [g.0, g.1];
    diffusion::reconstruct(scheme, li, lj, gi.map(arr), gj.map(arr), [d.0, d.1]).map_err(to_py)
}

#[pymodule]
fn pygfdm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPointCloud>()?;
    m.add_class::<PyOperator>()?;
    m.add_class::<PyDiscretization>()?;
    m.add_function(wrap_pyfunction!(converge, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    Ok(())
}
