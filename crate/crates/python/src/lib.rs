//! Python bindings for `cauchy-fwi`.
//!
//! Everything is driven from a run configuration, as on the command line:
//! load a `Config`, `synthesize` a `DataSet`, then `invert` it. Errors
//! surface as `ValueError` (or `OSError` for file-system failures) with
//! the error category in brackets.

use std::path::PathBuf;
use std::sync::Arc;

use num_complex::Complex64;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use cauchy_fwi::acquisition::{add_noise, synthesis_grid, synthesize as synthesize_clean};
use cauchy_fwi::analysis::{self, ProbeGeometry, DEFAULT_STEPS};
use cauchy_fwi::config::RunConfig;
use cauchy_fwi::grid::relative_l2_error;
use cauchy_fwi::helmholtz::assemble;
use cauchy_fwi::inversion::run_inversion_with;
use cauchy_fwi::{io, CauchyDataSet, FwiError, MisfitProblem, NodalField, PhysicsConfig, PiecewiseLinearModel, SourceSpec};

fn to_py(e: FwiError) -> PyErr {
    match e {
        FwiError::Io(err) => PyOSError::new_err(err.to_string()),
        other => PyValueError::new_err(format!("[{}] {other}", other.category())),
    }
}

trait OrPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> OrPy<T> for cauchy_fwi::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// Structured 2D/3D node grid; depth is the last axis.
#[pyclass(frozen, name = "Grid")]
struct PyGrid {
    inner: cauchy_fwi::Grid,
}

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (extent, nodes, free_surface = true))]
    fn new(extent: Vec<f64>, nodes: Vec<usize>, free_surface: bool) -> PyResult<Self> {
        let g = cauchy_fwi::Grid::new(&extent, &nodes).py_err()?;
        Ok(PyGrid {
            inner: if free_surface { g } else { g.all_absorbing() },
        })
    }

    #[staticmethod]
    fn with_spacing(extent: Vec<f64>, spacing: f64) -> PyResult<Self> {
        Ok(PyGrid {
            inner: cauchy_fwi::Grid::with_spacing(&extent, spacing).py_err()?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn nodes(&self) -> Vec<usize> {
        self.inner.nodes().to_vec()
    }

    #[getter]
    fn extent(&self) -> Vec<f64> {
        self.inner.extent().to_vec()
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes()
    }

    #[getter]
    fn free_surface(&self) -> bool {
        self.inner.has_free_surface()
    }

    /// Coordinates of node `i` (x[, y], z).
    fn coords(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.inner.n_nodes() {
            return Err(PyValueError::new_err(format!("node {i} out of range")));
        }
        Ok(self.inner.coords(i)[..self.inner.dim()].to_vec())
    }

    fn __repr__(&self) -> String {
        format!("Grid({})", self.inner.describe())
    }
}

/// Run configuration (grid, physics, partition, acquisition, phantom,
/// optimizer).
#[pyclass(frozen, name = "Config")]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyConfig {
            inner: RunConfig::load(&path).py_err()?,
        })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: RunConfig::parse(text).py_err()?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn grid(&self) -> PyResult<PyGrid> {
        Ok(PyGrid {
            inner: self.inner.grid().py_err()?,
        })
    }

    /// Phantom speed on the inversion grid, node by node.
    fn phantom(&self) -> PyResult<Vec<f64>> {
        Ok(self.inner.phantom(&self.inner.grid().py_err()?).values)
    }

    /// Depth-only starting speed on the inversion grid.
    fn background(&self) -> PyResult<Vec<f64>> {
        Ok(self.inner.background(&self.inner.grid().py_err()?).values)
    }

    #[getter]
    fn freq_hz(&self) -> f64 {
        self.inner.physics.freq_hz
    }
}

/// Cauchy data: field and normal derivative per source and receiver.
#[pyclass(frozen, name = "DataSet")]
struct PyDataSet {
    inner: CauchyDataSet,
}

#[pymethods]
impl PyDataSet {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(PyDataSet {
            inner: io::read_data(&path).py_err()?,
        })
    }

    /// Writes the data file and its geometry sidecars.
    fn write(&self, path: PathBuf) -> PyResult<()> {
        io::write_data(&self.inner, &path).py_err()
    }

    #[getter]
    fn n_sources(&self) -> usize {
        self.inner.n_sources()
    }

    #[getter]
    fn n_receivers(&self) -> usize {
        self.inner.n_receivers()
    }

    fn g(&self, source: usize) -> PyResult<Vec<Complex64>> {
        self.check(source)?;
        Ok(self.inner.g(source).to_vec())
    }

    fn dg(&self, source: usize) -> PyResult<Vec<Complex64>> {
        self.check(source)?;
        Ok(self.inner.dg(source).to_vec())
    }
}

impl PyDataSet {
    fn check(&self, source: usize) -> PyResult<()> {
        if source >= self.inner.n_sources() {
            return Err(PyValueError::new_err(format!(
                "source {source} out of range ({} sources)",
                self.inner.n_sources()
            )));
        }
        Ok(())
    }
}

/// Piecewise-linear speed model on a fixed partition.
#[pyclass(frozen, name = "Model")]
struct PyModel {
    inner: PiecewiseLinearModel,
}

#[pymethods]
impl PyModel {
    /// `(a_j, A_j...)` per subdomain, concatenated.
    #[getter]
    fn coefficients(&self) -> Vec<f64> {
        self.inner.coefficients().to_vec()
    }

    #[getter]
    fn n_subdomains(&self) -> usize {
        self.inner.partition().len()
    }

    #[getter]
    fn frozen(&self) -> Vec<bool> {
        self.inner.partition().frozen_flags()
    }

    /// Nodal wave speed.
    fn speed(&self) -> Vec<f64> {
        self.inner.evaluate_unchecked().values
    }

    fn write(&self, model_path: PathBuf, partition_path: PathBuf) -> PyResult<()> {
        io::write_model(&self.inner, &model_path).py_err()?;
        io::write_partition(self.inner.partition(), &partition_path).py_err()
    }
}

#[pyclass(frozen, name = "InversionResult", get_all)]
struct PyInversionResult {
    model: Py<PyModel>,
    termination: String,
    /// Misfit at the start of each iteration.
    j_history: Vec<f64>,
    final_j: Option<f64>,
    initial_e_rel: f64,
    final_e_rel: f64,
}

#[pymethods]
impl PyInversionResult {
    fn __repr__(&self) -> String {
        format!(
            "InversionResult({}, {} iterations, E_rel {:.4} -> {:.4})",
            self.termination,
            self.j_history.len(),
            self.initial_e_rel,
            self.final_e_rel
        )
    }
}

/// Green's function of a point source on `grid` for the nodal `speed`.
#[pyfunction]
#[pyo3(signature = (grid, speed, freq_hz, source, c_water = 1500.0))]
fn green(
    py: Python<'_>,
    grid: &PyGrid,
    speed: Vec<f64>,
    freq_hz: f64,
    source: Vec<f64>,
    c_water: f64,
) -> PyResult<Vec<Complex64>> {
    let field = NodalField::new(grid.inner, speed, "m/s").py_err()?;
    let phys = PhysicsConfig::new(freq_hz, c_water).py_err()?;
    py.detach(|| {
        let sys = assemble(&field, &phys)?;
        Ok(sys.green(&SourceSpec::new(&source))?.values)
    })
    .py_err()
}

/// Synthesizes observation data from the configured phantom, with the
/// configured noise unless overridden.
#[pyfunction]
#[pyo3(signature = (config, inverse_crime = None, snr_db = None, seed = None))]
fn synthesize(
    py: Python<'_>,
    config: &PyConfig,
    inverse_crime: Option<bool>,
    snr_db: Option<f64>,
    seed: Option<u64>,
) -> PyResult<PyDataSet> {
    let mut cfg = config.inner.clone();
    if let Some(b) = inverse_crime {
        cfg.run.inverse_crime = b;
    }
    if let Some(s) = snr_db {
        cfg.noise.snr_db = s;
    }
    if let Some(s) = seed {
        cfg.noise.seed = s;
    }
    let data = py
        .detach(|| {
            cfg.validate()?;
            let grid = cfg.grid()?;
            let fine = synthesis_grid(&grid, cfg.run.inverse_crime)?;
            let clean = synthesize_clean(
                &cfg.phantom(&fine),
                &cfg.observation_sources()?,
                &cfg.receivers(&grid)?,
                &cfg.physics()?,
            )?;
            add_noise(&clean, cfg.noise.snr_db, cfg.noise.seed)
        })
        .py_err()?;
    Ok(PyDataSet { inner: data })
}

/// Runs the inversion from the depth-only background of `config`.
#[pyfunction]
#[pyo3(signature = (config, data, decouple_sources = None, max_iter = None))]
fn invert(
    py: Python<'_>,
    config: &PyConfig,
    data: &PyDataSet,
    decouple_sources: Option<bool>,
    max_iter: Option<usize>,
) -> PyResult<PyInversionResult> {
    let mut cfg = config.inner.clone();
    if let Some(b) = decouple_sources {
        cfg.run.decouple_sources = b;
    }
    if let Some(n) = max_iter {
        cfg.optimizer.n_iter_max = n;
        cfg.optimizer.n_iter_min = cfg.optimizer.n_iter_min.min(n);
    }
    let data = data.inner.clone();
    let (outcome, e0, e1) = py
        .detach(|| {
            cfg.validate()?;
            let grid = cfg.grid()?;
            let phys = cfg.physics()?;
            data.check_frequency(phys.freq_hz)?;
            let sim = cfg.simulation_sources(cfg.run.decouple_sources)?;
            let problem = MisfitProblem::new(grid, phys, data, sim)?;
            let partition = cfg.partition(&grid)?;
            let initial = PiecewiseLinearModel::fit(&cfg.background(&grid), Arc::clone(&partition), cfg.bounds()?)?;
            let outcome = run_inversion_with(&problem, &initial, &cfg.optim(), |_| {})?;
            let truth = cfg.phantom(&grid);
            let e0 = relative_l2_error(&truth, &initial.evaluate_unchecked())?;
            let e1 = relative_l2_error(&truth, &outcome.model.evaluate_unchecked())?;
            Ok((outcome, e0, e1))
        })
        .py_err()?;
    Ok(PyInversionResult {
        model: Py::new(py, PyModel { inner: outcome.model })?,
        termination: outcome.termination.to_string(),
        j_history: outcome.records.iter().map(|r| r.j).collect(),
        final_j: outcome.final_j,
        initial_e_rel: e0,
        final_e_rel: e1,
    })
}

/// Adjoint gradient against central differences on inverse-crime data.
/// Returns `(passed, max_rel_error)`.
#[pyfunction]
#[pyo3(signature = (config, probes = 1, seed = 0))]
fn gradcheck(py: Python<'_>, config: &PyConfig, probes: usize, seed: u64) -> PyResult<(bool, f64)> {
    let cfg = &config.inner;
    let report = py
        .detach(|| {
            let grid = cfg.grid()?;
            let phys = cfg.physics()?;
            let data = synthesize_clean(&cfg.phantom(&grid), &cfg.observation_sources()?, &cfg.receivers(&grid)?, &phys)?;
            let sim = cfg.simulation_sources(cfg.run.decouple_sources)?;
            let problem = MisfitProblem::new(grid, phys, data, sim)?;
            analysis::gradcheck(&problem, &cfg.partition(&grid)?, cfg.bounds()?, probes, &DEFAULT_STEPS, seed)
        })
        .py_err()?;
    Ok((report.passed(), report.max_rel_error()))
}

/// Stability-ratio probe over random admissible model pairs. Returns
/// `(min_ratio, max_ratio, n_flagged)`.
#[pyfunction]
#[pyo3(signature = (config, pairs = 50, seed = 0))]
fn probe(py: Python<'_>, config: &PyConfig, pairs: usize, seed: u64) -> PyResult<(f64, f64, usize)> {
    let cfg = &config.inner;
    let report = py
        .detach(|| {
            let grid = cfg.grid()?;
            let geometry = ProbeGeometry {
                receivers: cfg.receivers(&grid)?,
                obs: cfg.observation_sources()?,
                sim: cfg.simulation_sources(cfg.run.decouple_sources)?,
            };
            analysis::probe_stability(&cfg.partition(&grid)?, cfg.bounds()?, &cfg.physics()?, &geometry, pairs, seed)
        })
        .py_err()?;
    Ok((report.min_ratio, report.max_ratio, report.flagged().count()))
}

#[pymodule]
fn cauchy_fwi_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataSet>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyInversionResult>()?;
    m.add_function(wrap_pyfunction!(green, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(invert, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(probe, m)?)?;
    Ok(())
}
