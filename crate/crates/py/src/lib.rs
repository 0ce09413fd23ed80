//! Python bindings. Matrices cross the boundary as lists of rows and edges
//! as `(u, v)` index pairs with `u < v`.

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mns::graph::{EdgeSet, Rule};
use mns::mns::{MnsConfig, Network};
use mns::tuning::AlphaLambda;

fn to_py(e: mns::Error) -> PyErr {
    match e {
        mns::Error::Numeric(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn edges(e: &EdgeSet) -> Vec<(usize, usize)> {
    e.iter().collect()
}

fn edge_set(p: usize, pairs: Vec<(usize, usize)>) -> PyResult<EdgeSet> {
    EdgeSet::from_pairs(p, pairs).map_err(to_py)
}

fn parse_rule(rule: &str) -> PyResult<Rule> {
    rule.parse().map_err(PyValueError::new_err)
}

/// Centered per-subject data sharing one set of node labels.
#[pyclass(name = "Cohort", module = "pymns", frozen)]
struct PyCohort {
    inner: mns::CohortData,
}

#[pymethods]
impl PyCohort {
    /// Builds a cohort from one `n_i × p` matrix per subject.
    #[new]
    #[pyo3(signature = (subjects, labels=None, subject_ids=None))]
    fn new(subjects: Vec<Vec<Vec<f64>>>, labels: Option<Vec<String>>, subject_ids: Option<Vec<String>>) -> PyResult<Self> {
        let mats = subjects.iter().map(|s| to_matrix(s)).collect::<PyResult<Vec<_>>>()?;
        let inner = match (labels, subject_ids) {
            (None, None) => mns::CohortData::from_matrices(mats),
            (labels, ids) => {
                let p = mats.first().map_or(0, |m| m.ncols());
                let nodes = match labels {
                    Some(l) => mns::NodeSet::new(l),
                    None => mns::NodeSet::numbered(p),
                }
                .map_err(to_py)?;
                let ids = ids.unwrap_or_else(|| (1..=mats.len()).map(|i| format!("subject_{i:02}")).collect());
                mns::CohortData::new(nodes, mats, ids)
            }
        }
        .map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Reads a cohort directory (or its `cohort.json`).
    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self { inner: mns::io::ingest_cohort(&path).map_err(to_py)? })
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn n_subjects(&self) -> usize {
        self.inner.n_subjects()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.nodes().labels().to_vec()
    }

    #[getter]
    fn subject_ids(&self) -> Vec<String> {
        self.inner.subject_ids().to_vec()
    }

    #[getter]
    fn n_obs(&self) -> Vec<usize> {
        self.inner.n_obs()
    }

    fn subject(&self, i: usize) -> PyResult<Vec<Vec<f64>>> {
        if i >= self.inner.n_subjects() {
            return Err(PyValueError::new_err(format!("no subject {i}")));
        }
        Ok(to_rows(self.inner.subject(i)))
    }

    fn __repr__(&self) -> String {
        format!("Cohort(p={}, subjects={}, n={:?})", self.inner.p(), self.inner.n_subjects(), self.inner.n_obs())
    }
}

/// Ground truth of a simulated cohort.
#[pyclass(name = "Truth", module = "pymns", frozen)]
struct PyTruth {
    inner: mns::simulator::SimTruth,
}

#[pymethods]
impl PyTruth {
    #[getter]
    fn population(&self) -> Vec<(usize, usize)> {
        edges(&self.inner.e_pop)
    }

    #[getter]
    fn variable(&self) -> Vec<(usize, usize)> {
        edges(&self.inner.e_tilde)
    }

    #[getter]
    fn subject_specific(&self) -> Vec<Vec<(usize, usize)>> {
        self.inner.e_subject.iter().map(edges).collect()
    }

    #[getter]
    fn subject_full(&self) -> Vec<Vec<(usize, usize)>> {
        (0..self.inner.n_subjects()).map(|i| edges(&self.inner.e_full(i))).collect()
    }

    fn precision(&self, i: usize) -> PyResult<Vec<Vec<f64>>> {
        self.inner
            .precisions
            .get(i)
            .map(|m| to_rows(m.matrix()))
            .ok_or_else(|| PyValueError::new_err(format!("no subject {i}")))
    }
}

/// Population, variance and subject networks from one MNS fit.
#[pyclass(name = "MnsResult", module = "pymns", frozen)]
struct PyMnsResult {
    inner: mns::MnsResult,
}

fn weighted(net: &Network) -> Vec<(usize, usize, f64)> {
    net.edges.iter().map(|(u, v)| (u, v, net.weights.get(u, v))).collect()
}

#[pymethods]
impl PyMnsResult {
    #[getter]
    fn population(&self) -> Vec<(usize, usize)> {
        edges(&self.inner.population.edges)
    }

    #[getter]
    fn variance(&self) -> Vec<(usize, usize)> {
        edges(&self.inner.variance.edges)
    }

    #[getter]
    fn subject_specific(&self) -> Vec<Vec<(usize, usize)>> {
        self.inner.subject_specific.iter().map(|n| edges(&n.edges)).collect()
    }

    #[getter]
    fn subject_full(&self) -> Vec<Vec<(usize, usize)>> {
        self.inner.subject_full.iter().map(|n| edges(&n.edges)).collect()
    }

    /// Population edges with their averaged coefficients.
    fn population_weights(&self) -> Vec<(usize, usize, f64)> {
        weighted(&self.inner.population)
    }

    fn variance_weights(&self) -> Vec<(usize, usize, f64)> {
        weighted(&self.inner.variance)
    }

    #[getter]
    fn lambda1(&self) -> f64 {
        self.inner.config.lambda1
    }

    #[getter]
    fn lambda2(&self) -> f64 {
        self.inner.config.lambda2
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.all_converged()
    }

    /// Fixed effects `β` of node `v`, indexed by the other nodes in order.
    fn beta(&self, v: usize) -> PyResult<Vec<f64>> {
        let f = self.inner.node_fits.get(v).ok_or_else(|| PyValueError::new_err(format!("no node {v}")))?;
        Ok(f.beta.iter().copied().collect())
    }

    /// Random-effect scales `σ` of node `v`.
    fn sigma(&self, v: usize) -> PyResult<Vec<f64>> {
        let f = self.inner.node_fits.get(v).ok_or_else(|| PyValueError::new_err(format!("no node {v}")))?;
        Ok(f.sigma_re.iter().copied().collect())
    }

    /// BLUPs of node `v`, one row per subject.
    fn blups(&self, v: usize) -> PyResult<Vec<Vec<f64>>> {
        let f = self.inner.node_fits.get(v).ok_or_else(|| PyValueError::new_err(format!("no node {v}")))?;
        Ok(to_rows(&f.blups))
    }
}

/// Simulates a cohort; returns `(truth, cohort)`.
#[pyfunction]
#[pyo3(signature = (p=50, n_subjects=10, n=200, e_ran=20, tau=1.0, r=1.0, ba_m=1, seed=0))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    p: usize,
    n_subjects: usize,
    n: usize,
    e_ran: usize,
    tau: f64,
    r: f64,
    ba_m: usize,
    seed: u64,
) -> PyResult<(PyTruth, PyCohort)> {
    let cfg = mns::simulator::SimConfig { p, n_subjects, n, e_ran, tau, r, ba_m, seed };
    let (truth, cohort) = py.detach(|| mns::simulator::simulate(&cfg)).map_err(to_py)?;
    Ok((PyTruth { inner: truth }, PyCohort { inner: cohort }))
}

fn mns_config(lambda1: f64, lambda2: f64, rule: &str, em_tol: f64, em_max_iter: usize) -> PyResult<MnsConfig> {
    Ok(MnsConfig {
        rule: parse_rule(rule)?,
        em_tol,
        em_max_iter,
        ..MnsConfig::with_penalties(lambda1, lambda2)
    })
}

/// Fits MNS at `(alpha, lam)`; `λ₁ = αλ`, `λ₂ = √2(1 − α)λ`.
#[pyfunction]
#[pyo3(signature = (cohort, lam, alpha=0.25, rule="and", em_tol=1e-4, em_max_iter=200))]
fn fit(
    py: Python<'_>,
    cohort: &PyCohort,
    lam: f64,
    alpha: f64,
    rule: &str,
    em_tol: f64,
    em_max_iter: usize,
) -> PyResult<PyMnsResult> {
    let (l1, l2) = AlphaLambda::new(alpha, lam).map_err(to_py)?.to_penalties();
    let cfg = mns_config(l1, l2, rule, em_tol, em_max_iter)?;
    let inner = py.detach(|| mns::fit_all(&cohort.inner, &cfg)).map_err(to_py)?;
    Ok(PyMnsResult { inner })
}

/// Default log-spaced `λ` grid for `alpha`, largest first.
#[pyfunction]
#[pyo3(signature = (cohort, alpha=0.25, count=mns::tuning::DEFAULT_GRID_SIZE, depth=mns::tuning::DEFAULT_GRID_DEPTH))]
fn lambda_grid(cohort: &PyCohort, alpha: f64, count: usize, depth: f64) -> PyResult<Vec<f64>> {
    let hi = mns::tuning::mns_lambda_max(&cohort.inner, alpha);
    Ok(mns::tuning::alpha_lambda_grid(alpha, hi, count, depth)
        .map_err(to_py)?
        .iter()
        .map(|g| g.lambda)
        .collect())
}

/// K-fold CV over `lambdas` (default grid when omitted); returns a dict with
/// `lambdas`, `mse`, `best_index`, `best_lambda`.
#[pyfunction]
#[pyo3(signature = (cohort, lambdas=None, alpha=0.25, folds=5, rule="and"))]
fn cross_validate<'py>(
    py: Python<'py>,
    cohort: &PyCohort,
    lambdas: Option<Vec<f64>>,
    alpha: f64,
    folds: usize,
    rule: &str,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let grid = match lambdas {
        Some(ls) => ls.into_iter().map(|l| AlphaLambda::new(alpha, l)).collect::<mns::Result<Vec<_>>>(),
        None => mns::tuning::default_grid(&cohort.inner, alpha),
    }
    .map_err(to_py)?;
    let base = MnsConfig { rule: parse_rule(rule)?, ..MnsConfig::default() };
    let report = py
        .detach(|| mns::tuning::cross_validate(&cohort.inner, &grid, folds, &base))
        .map_err(to_py)?;
    let out = pyo3::types::PyDict::new(py);
    out.set_item("lambdas", report.grid.iter().map(|g| g.lambda).collect::<Vec<_>>())?;
    out.set_item("mse", report.mse)?;
    out.set_item("best_index", report.best_index)?;
    out.set_item("best_lambda", report.best.lambda)?;
    Ok(out)
}

/// Graphical lasso edges: one list for `mode="pooled"`, one per subject for
/// `mode="subject"`.
#[pyfunction]
#[pyo3(signature = (cohort, lam, mode="pooled"))]
fn glasso(py: Python<'_>, cohort: &PyCohort, lam: f64, mode: &str) -> PyResult<Vec<Vec<(usize, usize)>>> {
    let c = &cohort.inner;
    match mode {
        "pooled" => Ok(vec![edges(&py.detach(|| mns::glasso::fit_pooled(c, lam)).map_err(to_py)?)]),
        "subject" => {
            let path = py.detach(|| mns::glasso::fit_per_subject_path(c, &[lam])).map_err(to_py)?;
            Ok(path[0].iter().map(edges).collect())
        }
        other => Err(PyValueError::new_err(format!("mode must be pooled or subject, got {other:?}"))),
    }
}

/// Bootstrap stability selection; returns a dict with `mu`, `rho` (p×p rows)
/// and per-subject `stars_lambda`.
#[pyfunction]
#[pyo3(signature = (cohort, b=200, c=0.25, stars_beta=0.05, seed=0))]
fn stability<'py>(
    py: Python<'py>,
    cohort: &PyCohort,
    b: usize,
    c: f64,
    stars_beta: f64,
    seed: u64,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let cfg = mns::stability::StabilityConfig {
        b,
        c,
        stars_beta,
        seed,
        ..mns::stability::StabilityConfig::default()
    };
    let res = py.detach(|| mns::stability::run_stability(&cohort.inner, &cfg)).map_err(to_py)?;
    let out = pyo3::types::PyDict::new(py);
    out.set_item("mu", to_rows(&res.mu_pop))?;
    out.set_item("rho", to_rows(&res.rho_pop))?;
    out.set_item("stars_lambda", res.stars.iter().map(|s| s.lambda).collect::<Vec<_>>())?;
    Ok(out)
}

/// `(tpr, fpr)` of an estimated edge list against the truth over `p` nodes.
#[pyfunction]
fn tpr_fpr(p: usize, estimated: Vec<(usize, usize)>, truth: Vec<(usize, usize)>) -> PyResult<(f64, f64)> {
    let r = mns::tuning::tpr_fpr(&edge_set(p, estimated)?, &edge_set(p, truth)?).map_err(to_py)?;
    Ok((r.tpr, r.fpr))
}

/// Area under the ROC curve traced by a path of estimates.
#[pyfunction]
fn roc_auc(p: usize, lambdas: Vec<f64>, estimates: Vec<Vec<(usize, usize)>>, truth: Vec<(usize, usize)>) -> PyResult<f64> {
    let est = estimates
        .into_iter()
        .map(|e| edge_set(p, e).map(|s| vec![s]))
        .collect::<PyResult<Vec<_>>>()?;
    let curve = mns::tuning::roc_curve(&lambdas, &est, &[edge_set(p, truth)?]).map_err(to_py)?;
    Ok(curve.auc)
}

/// Average local clustering coefficient of an edge list.
#[pyfunction]
fn clustering_coefficient(p: usize, edges: Vec<(usize, usize)>) -> PyResult<f64> {
    mns::graph::clustering_coefficient(&edge_set(p, edges)?).map_err(to_py)
}

#[pymodule]
fn pymns(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCohort>()?;
    m.add_class::<PyTruth>()?;
    m.add_class::<PyMnsResult>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_grid, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_function(wrap_pyfunction!(glasso, m)?)?;
    m.add_function(wrap_pyfunction!(stability, m)?)?;
    m.add_function(wrap_pyfunction!(tpr_fpr, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(clustering_coefficient, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
