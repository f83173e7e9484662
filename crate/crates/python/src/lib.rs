//! Python bindings: meshes, voxel grids, metrics, run configs and the
//! command-line entry point.

use std::path::PathBuf;

use occufield::geometry::{self, CubeBounds, Point3, TriMesh, VoxelGrid};
use occufield::metrics::{self, MetricConfig};
use occufield::mfpifu::CoarseConfig;
use occufield::vsr::VsrConfig;
use occufield_cli::{CliError, RunConfig};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn core_err(e: occufield::Error) -> PyErr {
    match e {
        occufield::Error::Io(io) => PyIOError::new_err(io.to_string()),
        occufield::Error::Config(_)
        | occufield::Error::Validity(_)
        | occufield::Error::Usage(_)
        | occufield::Error::Parse(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn cli_err(e: CliError) -> PyErr {
    match e {
        CliError::Usage(_) | CliError::Config(_) => PyValueError::new_err(e.to_string()),
        CliError::Core(inner) => core_err(inner),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Closed triangle mesh.
#[pyclass(name = "TriMesh", module = "occufield_py", skip_from_py_object)]
#[derive(Clone)]
struct PyTriMesh {
    inner: TriMesh,
}

#[pymethods]
impl PyTriMesh {
    #[new]
    fn new(vertices: Vec<Point3>, triangles: Vec<[u32; 3]>) -> PyResult<Self> {
        Ok(PyTriMesh { inner: TriMesh::new(vertices, triangles).map_err(core_err)? })
    }

    #[staticmethod]
    fn read_obj(path: PathBuf) -> PyResult<Self> {
        Ok(PyTriMesh { inner: TriMesh::read_obj(&path).map_err(core_err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (center, radius, level = 4))]
    fn sphere(center: Point3, radius: f64, level: u32) -> PyResult<Self> {
        Ok(PyTriMesh { inner: TriMesh::octasphere(center, radius, level).map_err(core_err)? })
    }

    #[staticmethod]
    fn cuboid(min: Point3, max: Point3) -> PyResult<Self> {
        Ok(PyTriMesh { inner: TriMesh::cuboid(min, max).map_err(core_err)? })
    }

    fn write_obj(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_obj(&path).map_err(core_err)
    }

    #[getter]
    fn vertices(&self) -> Vec<Point3> {
        self.inner.vertices.clone()
    }

    #[getter]
    fn triangles(&self) -> Vec<[u32; 3]> {
        self.inner.triangles.clone()
    }

    fn surface_area(&self) -> f64 {
        self.inner.surface_area()
    }

    fn volume(&self) -> f64 {
        self.inner.signed_volume()
    }

    fn is_watertight(&self) -> bool {
        self.inner.check_watertight().is_ok()
    }

    fn translated(&self, offset: Point3) -> Self {
        PyTriMesh { inner: self.inner.translated(offset) }
    }

    fn __len__(&self) -> usize {
        self.inner.triangles.len()
    }

    fn __repr__(&self) -> String {
        format!("TriMesh(vertices={}, triangles={})", self.inner.vertices.len(), self.inner.triangles.len())
    }
}

/// Axis-aligned cube volume.
#[pyclass(name = "Bounds", module = "occufield_py", skip_from_py_object)]
#[derive(Clone)]
struct PyBounds {
    inner: CubeBounds,
}

#[pymethods]
impl PyBounds {
    #[new]
    fn new(center: Point3, half_extent: f64) -> PyResult<Self> {
        Ok(PyBounds { inner: CubeBounds::centered(center, half_extent).map_err(core_err)? })
    }

    #[getter]
    fn min(&self) -> Point3 {
        self.inner.min
    }

    #[getter]
    fn size(&self) -> f64 {
        self.inner.size
    }

    fn __repr__(&self) -> String {
        format!("Bounds(min={:?}, size={})", self.inner.min, self.inner.size)
    }
}

/// Occupancy values on an N³ lattice, x fastest.
#[pyclass(name = "VoxelGrid", module = "occufield_py", skip_from_py_object)]
#[derive(Clone)]
struct PyVoxelGrid {
    inner: VoxelGrid,
}

#[pymethods]
impl PyVoxelGrid {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(PyVoxelGrid { inner: VoxelGrid::read(&path).map_err(core_err)? })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write(&path).map_err(core_err)
    }

    #[getter]
    fn resolution(&self) -> usize {
        self.inner.resolution
    }

    #[getter]
    fn voxel_size(&self) -> f64 {
        self.inner.voxel_size
    }

    #[getter]
    fn values(&self) -> Vec<f32> {
        self.inner.values.clone()
    }

    fn bounds(&self) -> PyBounds {
        PyBounds { inner: self.inner.bounds() }
    }

    fn occupied_count(&self) -> usize {
        self.inner.occupied_count()
    }

    /// 0.5 iso-surface (or `iso`) as a closed mesh.
    #[pyo3(signature = (iso = 0.5))]
    fn marching_cubes(&self, iso: f64) -> PyTriMesh {
        PyTriMesh { inner: geometry::marching_cubes(&self.inner, iso) }
    }
}

#[pyfunction]
fn voxelize(mesh: &PyTriMesh, resolution: usize, bounds: &PyBounds) -> PyResult<PyVoxelGrid> {
    Ok(PyVoxelGrid { inner: geometry::voxelize(&mesh.inner, resolution, &bounds.inner).map_err(core_err)? })
}

/// 1 if `point` is inside `mesh`, else 0.
#[pyfunction]
fn occupancy_label(mesh: &PyTriMesh, point: Point3) -> PyResult<u8> {
    geometry::occupancy_label(&mesh.inner, point).map_err(core_err)
}

#[pyfunction]
#[pyo3(signature = (pred, gt, sample_count = metrics::DEFAULT_SAMPLE_COUNT, seed = 0))]
fn p2s(pred: &PyTriMesh, gt: &PyTriMesh, sample_count: usize, seed: u64) -> PyResult<f64> {
    metrics::p2s(&pred.inner, &gt.inner, sample_count, seed).map_err(core_err)
}

#[pyfunction]
#[pyo3(signature = (pred, gt, sample_count = metrics::DEFAULT_SAMPLE_COUNT, seed = 0))]
fn chamfer_l2(pred: &PyTriMesh, gt: &PyTriMesh, sample_count: usize, seed: u64) -> PyResult<f64> {
    metrics::chamfer_l2(&pred.inner, &gt.inner, sample_count, seed).map_err(core_err)
}

#[pyfunction]
#[pyo3(signature = (a, b, bounds, resolution = metrics::DEFAULT_IOU_RESOLUTION))]
fn iou(a: &PyTriMesh, b: &PyTriMesh, bounds: &PyBounds, resolution: usize) -> PyResult<f64> {
    metrics::iou(&a.inner, &b.inner, resolution, &bounds.inner).map_err(core_err)
}

/// All three metrics as a dict with `sample_id`, `p2s_cm`, `chamfer_l2`, `iou`.
#[pyfunction]
#[pyo3(signature = (pred, gt, bounds, sample_id = "pred", sample_count = metrics::DEFAULT_SAMPLE_COUNT, seed = 0))]
fn evaluate<'py>(
    py: Python<'py>,
    pred: &PyTriMesh,
    gt: &PyTriMesh,
    bounds: &PyBounds,
    sample_id: &str,
    sample_count: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = MetricConfig { sample_count, seed, ..MetricConfig::default() };
    let r = metrics::evaluate(sample_id, &pred.inner, &gt.inner, &bounds.inner, &cfg).map_err(core_err)?;
    let d = PyDict::new(py);
    d.set_item("sample_id", r.sample_id)?;
    d.set_item("p2s_cm", r.p2s_cm)?;
    d.set_item("chamfer_l2", r.chamfer_l2)?;
    d.set_item("iou", r.iou)?;
    Ok(d)
}

/// Run configuration with canonical `key = value` text.
#[pyclass(name = "RunConfig", module = "occufield_py", skip_from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (preset = "desk"))]
    fn new(preset: &str) -> PyResult<Self> {
        Ok(PyRunConfig { inner: RunConfig::preset(preset).map_err(cli_err)? })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(PyRunConfig { inner: RunConfig::parse(text).map_err(cli_err)? })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(cli_err)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner
            .to_kv()
            .raw(key)
            .map(str::to_string)
            .map_err(|_| PyValueError::new_err(format!("unknown key `{key}`")))
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!("RunConfig(preset={:?}, seed={})", self.inner.preset, self.inner.seed)
    }
}

/// MLP input widths of the coarse and VSR networks for a preset.
#[pyfunction]
fn query_widths(preset: &str) -> PyResult<(usize, usize)> {
    let c = CoarseConfig::preset(preset).map_err(core_err)?;
    let v = VsrConfig::preset(preset).map_err(core_err)?;
    Ok((c.query_width(), v.query_width()))
}

/// Runs the full pipeline; returns `{"coarse": [...], "refined": [...] | None}`
/// with one metrics dict per held-out sample.
#[pyfunction]
fn run_pipeline<'py>(py: Python<'py>, config: &PyRunConfig) -> PyResult<Bound<'py, PyDict>> {
    let report =
        py.detach(|| occufield_cli::run_pipeline(&config.inner, &mut |line| println!("{line}"))).map_err(cli_err)?;
    let rows = |rs: &[metrics::EvalReport]| -> PyResult<Vec<Bound<'py, PyDict>>> {
        rs.iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("sample_id", &r.sample_id)?;
                d.set_item("p2s_cm", r.p2s_cm)?;
                d.set_item("chamfer_l2", r.chamfer_l2)?;
                d.set_item("iou", r.iou)?;
                Ok(d)
            })
            .collect()
    };
    let out = PyDict::new(py);
    out.set_item("coarse", rows(&report.coarse)?)?;
    match &report.refined {
        Some(r) => out.set_item("refined", rows(r)?)?,
        None => out.set_item("refined", py.None())?,
    }
    Ok(out)
}

/// Same as the `occufield` executable; `argv` excludes the program name.
/// Returns the exit status.
#[pyfunction]
fn run_command(py: Python<'_>, argv: Vec<String>) -> i32 {
    py.detach(|| occufield_cli::run_command(std::iter::once("occufield".to_string()).chain(argv)))
}

#[pymodule]
fn occufield_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTriMesh>()?;
    m.add_class::<PyBounds>()?;
    m.add_class::<PyVoxelGrid>()?;
    m.add_class::<PyRunConfig>()?;
    m.add_function(wrap_pyfunction!(voxelize, m)?)?;
    m.add_function(wrap_pyfunction!(occupancy_label, m)?)?;
    m.add_function(wrap_pyfunction!(p2s, m)?)?;
    m.add_function(wrap_pyfunction!(chamfer_l2, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(query_widths, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(run_command, m)?)?;
    Ok(())
}
