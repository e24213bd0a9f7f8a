//! Python bindings for `readsp_core`.

use std::net::Ipv4Addr;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use readsp_core as core;
use readsp_core::sketch::MergeMode;

fn err(e: core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn mode(inner: bool) -> MergeMode {
    if inner {
        MergeMode::Inner
    } else {
        MergeMode::Outer
    }
}

#[pyclass(name = "HashSuite", module = "readsp", skip_from_py_object, frozen)]
#[derive(Clone)]
struct PyHashSuite(core::HashSuite);

#[pymethods]
impl PyHashSuite {
    #[new]
    #[pyo3(signature = (seed, rows = 1))]
    fn new(seed: u64, rows: usize) -> Self {
        Self(core::HashSuite::new(seed, rows))
    }

    fn rand32(&self, b: u32) -> u32 {
        self.0.rand32(b)
    }

    fn re_bit(&self, b: u32) -> u8 {
        self.0.re_bit(b)
    }

    fn le_bit(&self, b: u32, le_len: usize) -> usize {
        self.0.le_bit(b, le_len)
    }

    fn column(&self, row: usize, a: u32, v_hat: usize) -> PyResult<usize> {
        if row >= self.0.rows() {
            return Err(PyValueError::new_err(format!("row {row} out of range")));
        }
        Ok(self.0.column(row, a, v_hat))
    }
}

#[pyclass(name = "RoughEstimator", module = "readsp", skip_from_py_object)]
#[derive(Clone)]
struct PyRoughEstimator(core::RoughEstimator);

#[pymethods]
impl PyRoughEstimator {
    #[new]
    #[pyo3(signature = (bits = 0))]
    fn new(bits: u8) -> Self {
        Self(core::RoughEstimator::from_bits(bits))
    }

    #[getter]
    fn bits(&self) -> u8 {
        self.0.bits()
    }

    fn update(&mut self, b: u32, tau: f64, hs: &PyHashSuite) {
        self.0.update(b, tau, &hs.0);
    }

    fn popcount(&self) -> u32 {
        self.0.popcount()
    }

    fn is_candidate(&self) -> bool {
        self.0.is_candidate()
    }

    #[pyo3(signature = (other, inner = false))]
    fn merge(&self, other: &Self, inner: bool) -> Self {
        Self(self.0.merge(other.0, mode(inner)))
    }

    fn __repr__(&self) -> String {
        format!("RoughEstimator(0b{:08b})", self.0.bits())
    }
}

#[pyclass(name = "LinearEstimator", module = "readsp", skip_from_py_object)]
#[derive(Clone)]
struct PyLinearEstimator(core::LinearEstimator);

#[pymethods]
impl PyLinearEstimator {
    #[new]
    fn new(length: usize) -> PyResult<Self> {
        core::LinearEstimator::new(length).map(Self).map_err(err)
    }

    #[staticmethod]
    fn from_bytes(data: &[u8], length: usize) -> PyResult<Self> {
        core::LinearEstimator::from_bytes(data, length).map(Self).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn update(&mut self, b: u32, hs: &PyHashSuite) {
        self.0.update(b, &hs.0);
    }

    fn set_bit(&mut self, pos: usize) -> PyResult<()> {
        if pos >= self.0.len() {
            return Err(PyValueError::new_err(format!("bit {pos} out of range")));
        }
        self.0.set_bit(pos);
        Ok(())
    }

    fn get_bit(&self, pos: usize) -> PyResult<bool> {
        if pos >= self.0.len() {
            return Err(PyValueError::new_err(format!("bit {pos} out of range")));
        }
        Ok(self.0.get_bit(pos))
    }

    fn popcount(&self) -> usize {
        self.0.popcount()
    }

    fn zero_count(&self) -> usize {
        self.0.zero_count()
    }

    /// `(value, saturated)`.
    fn estimate(&self) -> (f64, bool) {
        let e = self.0.estimate();
        (e.value, e.saturated)
    }

    #[pyo3(signature = (other, inner = false))]
    fn merge(&self, other: &Self, inner: bool) -> PyResult<Self> {
        self.0.merge(&other.0, mode(inner)).map(Self).map_err(err)
    }

    fn is_subset_of(&self, other: &Self) -> bool {
        self.0.is_subset_of(&other.0)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.0.to_bytes())
    }
}

#[pyclass(name = "RECubeConfig", module = "readsp", skip_from_py_object, frozen)]
#[derive(Clone)]
struct PyRECubeConfig(core::RECubeConfig);

#[pymethods]
impl PyRECubeConfig {
    #[new]
    fn new(r: u8, widths: Vec<u8>, starts: Vec<u8>) -> PyResult<Self> {
        core::RECubeConfig::new(r, widths, starts).map(Self).map_err(err)
    }

    #[staticmethod]
    fn default_rows(r: u8) -> PyResult<Self> {
        core::RECubeConfig::with_default_rows(r).map(Self).map_err(err)
    }

    #[staticmethod]
    fn uniform(r: u8, width: u8) -> PyResult<Self> {
        core::RECubeConfig::with_uniform_width(r, width).map(Self).map_err(err)
    }

    #[getter]
    fn r(&self) -> u8 {
        self.0.r()
    }

    #[getter]
    fn widths(&self) -> Vec<u8> {
        self.0.widths().to_vec()
    }

    #[getter]
    fn starts(&self) -> Vec<u8> {
        self.0.starts().to_vec()
    }

    fn memory_bytes(&self) -> usize {
        self.0.memory_bytes()
    }

    /// `(k, [row indexes])` of an address.
    fn derive_indices(&self, a: u32) -> (u32, Vec<u32>) {
        let idx = self.0.derive_indices(a);
        (idx.k, idx.rows)
    }

    fn address(&self, k: u32, rows: Vec<u32>) -> PyResult<u32> {
        if rows.len() != self.0.rows() || k >> self.0.r() != 0 {
            return Err(PyValueError::new_err("index tuple does not fit this geometry"));
        }
        Ok(self.0.address(k, &rows))
    }
}

#[pyclass(name = "RECube", module = "readsp", skip_from_py_object)]
#[derive(Clone)]
struct PyRECube(core::RECube);

#[pymethods]
impl PyRECube {
    #[new]
    fn new(config: &PyRECubeConfig) -> Self {
        Self(core::RECube::new(config.0.clone()))
    }

    fn update(&mut self, a: u32, b: u32, tau: f64, hs: &PyHashSuite) {
        self.0.update(a, b, tau, &hs.0);
    }

    fn cell(&self, k: u32, row: usize, j: u32) -> PyResult<u8> {
        let cfg = self.0.config();
        if k >> cfg.r() != 0 || row >= cfg.rows() || j as usize >= cfg.row_len(row) {
            return Err(PyValueError::new_err("cell index out of range"));
        }
        Ok(self.0.cell(k, row, j).bits())
    }

    fn merge(&mut self, other: &Self) -> PyResult<()> {
        self.0.merge_outer_assign(&other.0).map_err(err)
    }

    fn recover_candidates(&self) -> Vec<u32> {
        self.0.recover_candidates()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }
}

#[pyclass(name = "DetectorConfig", module = "readsp", skip_from_py_object, frozen)]
#[derive(Clone)]
struct PyDetectorConfig(core::DetectorConfig);

#[pymethods]
impl PyDetectorConfig {
    #[new]
    #[pyo3(signature = (theta = 1024, g = 8, le_len = 1 << 14, u_hat = 5, v_hat = 1 << 15, cube = None, seed = 0x5EED))]
    fn new(
        theta: u32,
        g: u32,
        le_len: usize,
        u_hat: usize,
        v_hat: usize,
        cube: Option<&PyRECubeConfig>,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = core::DetectorConfig {
            params: core::DetectorParams { theta, g, le_len, u_hat, v_hat },
            cube: match cube {
                Some(c) => c.0.clone(),
                None => core::RECubeConfig::with_default_rows(6).map_err(err)?,
            },
            seed,
        };
        cfg.validate().map_err(err)?;
        Ok(Self(cfg))
    }

    #[getter]
    fn theta(&self) -> u32 {
        self.0.params.theta
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    fn tau(&self) -> PyResult<f64> {
        self.0.tau().map_err(err)
    }

    fn hash_suite(&self) -> PyHashSuite {
        PyHashSuite(self.0.hash_suite())
    }

    fn master_structure_bytes(&self) -> usize {
        self.0.master_structure_bytes()
    }
}

#[pyclass(name = "ObservationNode", module = "readsp")]
struct PyObservationNode(core::ObservationNode);

#[pymethods]
impl PyObservationNode {
    #[new]
    fn new(node_id: u16, config: &PyDetectorConfig) -> PyResult<Self> {
        core::ObservationNode::new(node_id, config.0.clone()).map(Self).map_err(err)
    }

    fn observe(&mut self, a: u32, b: u32) {
        self.0.observe(core::IpPair::new(a, b));
    }

    /// Scans an iterable of `(a, b)` pairs.
    fn scan(&mut self, pairs: Vec<(u32, u32)>) {
        self.0.scan_pairs(pairs.into_iter().map(|(a, b)| core::IpPair::new(a, b)));
    }

    fn start_window(&mut self, window_id: u32) -> PyResult<()> {
        self.0.start_window(window_id).map_err(err)
    }

    #[getter]
    fn pairs(&self) -> u64 {
        self.0.stats().pairs
    }

    fn cube(&self) -> PyRECube {
        PyRECube(self.0.rec().clone())
    }

    fn stage1_payload<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.0.stage1_payload())
    }

    fn stage3_payload<'py>(&self, py: Python<'py>, candidates: Vec<u32>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.0.stage3_payload(&candidates))
    }
}

/// Runs the three-stage protocol over scanned nodes and returns the window
/// report as a dict.
#[pyfunction]
#[pyo3(signature = (nodes, mode = "read"))]
fn run_window<'py>(
    py: Python<'py>,
    nodes: Vec<PyRef<'py, PyObservationNode>>,
    mode: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let mode = match mode {
        "read" => core::DetectionMode::Read,
        "naive_reference" => core::DetectionMode::NaiveReference,
        other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
    };
    let report = core::run_window(nodes.iter().map(|n| &n.0), mode).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("window_id", report.window_id)?;
    d.set_item("mode", report.mode.name())?;
    d.set_item("candidates", report.candidates.clone())?;
    let supers: Vec<(u32, f64, bool)> = report
        .super_points
        .iter()
        .map(|s| (s.address, s.estimate, s.saturated))
        .collect();
    d.set_item("super_points", supers)?;
    let traffic: Vec<(u16, usize, usize, usize)> = report
        .per_node
        .iter()
        .map(|n| (n.node_id, n.stage1, n.stage2, n.stage3))
        .collect();
    d.set_item("per_node", traffic)?;
    d.set_item("master_structure_bytes", report.master_structure_bytes)?;
    d.set_item("transmitted_fraction", report.transmitted_fraction())?;
    Ok(d)
}

/// Synthetic trace as a list of `(a, b, ts)` tuples.
#[pyfunction]
#[pyo3(signature = (planted = Vec::new(), background_hosts = 0, zipf_s = 1.2, background_max = 512, duplication_factor = 1.0, seed = 1, windows = 1, window_secs = 300))]
#[allow(clippy::too_many_arguments)]
fn generate_trace(
    planted: Vec<(u32, u32)>,
    background_hosts: usize,
    zipf_s: f64,
    background_max: u32,
    duplication_factor: f64,
    seed: u64,
    windows: u32,
    window_secs: u32,
) -> PyResult<Vec<(u32, u32, u32)>> {
    let spec = core::TraceSpec {
        planted,
        background_hosts,
        zipf_s,
        background_max,
        duplication_factor,
        seed,
        windows,
        window_secs,
    };
    let trace = core::generate_trace(&spec).map_err(err)?;
    Ok(trace.into_iter().map(|p| (p.a, p.b, p.ts.unwrap_or(0))).collect())
}

/// Exact distinct-count of every source in `pairs` above `theta`.
#[pyfunction]
fn oracle_super_points(pairs: Vec<(u32, u32)>, theta: u32) -> Vec<u32> {
    let pairs: Vec<core::IpPair> = pairs.into_iter().map(|(a, b)| core::IpPair::new(a, b)).collect();
    core::OracleTable::from_pairs(&pairs).super_points(theta).into_iter().collect()
}

#[pyfunction]
fn linear_count(length: usize, zeros: usize) -> (f64, bool) {
    let e = core::sketch::linear_count(length, zeros);
    (e.value, e.saturated)
}

#[pyfunction]
fn le_std_dev(load: f64, length: usize) -> f64 {
    core::sketch::le_std_dev(load, length)
}

#[pyfunction]
fn format_address(a: u32) -> String {
    Ipv4Addr::from(a).to_string()
}

/// Runs the self-check suites; returns `(name, passed, detail)` per suite.
#[pyfunction]
#[pyo3(signature = (seed = 1))]
fn verify(py: Python<'_>, seed: u64) -> Vec<(String, bool, String)> {
    py.detach(|| core::verify::run_all(seed))
        .into_iter()
        .map(|o| (o.name.to_string(), o.passed(), o.detail))
        .collect()
}

#[pymodule]
fn readsp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHashSuite>()?;
    m.add_class::<PyRoughEstimator>()?;
    m.add_class::<PyLinearEstimator>()?;
    m.add_class::<PyRECubeConfig>()?;
    m.add_class::<PyRECube>()?;
    m.add_class::<PyDetectorConfig>()?;
    m.add_class::<PyObservationNode>()?;
    m.add_function(wrap_pyfunction!(run_window, m)?)?;
    m.add_function(wrap_pyfunction!(generate_trace, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_super_points, m)?)?;
    m.add_function(wrap_pyfunction!(linear_count, m)?)?;
    m.add_function(wrap_pyfunction!(le_std_dev, m)?)?;
    m.add_function(wrap_pyfunction!(format_address, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
