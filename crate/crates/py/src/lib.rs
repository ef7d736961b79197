//! Python bindings. Structured values (configs, sample draws, record metadata)
//! cross the boundary as dicts with the same layout as the JSON files on disk.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use forge_core::cdm_model::{self, CdmGeometrySpec, CdmShape, NotchAbscissae, CONTROL_POINTS};
use forge_core::dataset_io::{self, PipelineConfig, PreparedCt};
use forge_core::geometry::{camera_from_orbit, CameraPose, ProjectionGeometry, Vec3};
use forge_core::metrics::{self, SubpixelMethod};
use forge_core::projector::{self, BeliefMapParams, Image2D, ImageKind};
use forge_core::sampler::{self, FemurSide, SampleConfig, SamplingRanges};

create_exception!(cdmforge, ForgeError, PyException);

fn err(e: forge_core::ForgeError) -> PyErr {
    ForgeError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| ForgeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| ForgeError::new_err(e.to_string()))
}

fn config_from(obj: Option<&Bound<'_, PyAny>>) -> PyResult<PipelineConfig> {
    let cfg: PipelineConfig = match obj {
        Some(o) => from_py(o)?,
        None => PipelineConfig::default(),
    };
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

fn side_from(s: &str) -> PyResult<FemurSide> {
    match s {
        "left" => Ok(FemurSide::Left),
        "right" => Ok(FemurSide::Right),
        _ => Err(ForgeError::new_err(format!(
            "femur side must be 'left' or 'right', got {s:?}"
        ))),
    }
}

fn vec3(p: [f64; 3]) -> Vec3 {
    Vec3::new(p[0], p[1], p[2])
}

fn arr3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// C-arm view: the orbit parameters plus the derived camera.
#[pyclass(module = "cdmforge", frozen)]
struct Geometry {
    g: ProjectionGeometry,
    cam: CameraPose,
}

#[pymethods]
impl Geometry {
    #[new]
    #[pyo3(signature = (source_to_detector_mm, source_to_isocenter_mm, lao_rao_deg, cran_caud_deg, cols = 512, rows = 512, pixel_size_mm = 0.62))]
    fn new(
        source_to_detector_mm: f64,
        source_to_isocenter_mm: f64,
        lao_rao_deg: f64,
        cran_caud_deg: f64,
        cols: usize,
        rows: usize,
        pixel_size_mm: f64,
    ) -> PyResult<Self> {
        let g = ProjectionGeometry::new(
            source_to_detector_mm,
            source_to_isocenter_mm,
            lao_rao_deg,
            cran_caud_deg,
            cols,
            rows,
            pixel_size_mm,
        )
        .map_err(err)?;
        let cam = camera_from_orbit(&g).map_err(err)?;
        Ok(Self { g, cam })
    }

    /// World point (mm) to detector pixel `(col, row)`.
    fn project(&self, point: [f64; 3]) -> PyResult<[f64; 2]> {
        self.cam.project(&self.g, &vec3(point)).map_err(err)
    }

    #[getter]
    fn magnification(&self) -> f64 {
        self.g.magnification()
    }

    #[getter]
    fn principal_point(&self) -> (f64, f64) {
        self.g.principal_point()
    }

    #[getter]
    fn source_position(&self) -> [f64; 3] {
        arr3(&self.cam.source_position)
    }

    #[getter]
    fn detector_center(&self) -> [f64; 3] {
        arr3(&self.cam.detector_center)
    }

    fn __repr__(&self) -> String {
        format!(
            "Geometry(sdd={}, sid={}, lao_rao={}, cran_caud={}, {}x{} @ {} mm)",
            self.g.source_to_detector_mm,
            self.g.source_to_isocenter_mm,
            self.g.lao_rao_deg,
            self.g.cran_caud_deg,
            self.g.detector_cols,
            self.g.detector_rows,
            self.g.pixel_size_mm
        )
    }
}

/// Row-major detector image.
#[pyclass(module = "cdmforge", frozen)]
struct Image {
    inner: Image2D,
}

fn kind_name(k: ImageKind) -> &'static str {
    match k {
        ImageKind::LineIntegral => "line_integral",
        ImageKind::Normalized => "normalized",
        ImageKind::Probability => "probability",
        ImageKind::Mask => "mask",
    }
}

fn kind_from(s: &str) -> PyResult<ImageKind> {
    Ok(match s {
        "line_integral" => ImageKind::LineIntegral,
        "normalized" => ImageKind::Normalized,
        "probability" => ImageKind::Probability,
        "mask" => ImageKind::Mask,
        _ => return Err(ForgeError::new_err(format!("unknown image kind {s:?}"))),
    })
}

#[pymethods]
impl Image {
    #[new]
    #[pyo3(signature = (values, cols, rows, pixel_size_mm = metrics::DEFAULT_PIXEL_SIZE_MM, kind = "probability"))]
    fn new(values: Vec<f64>, cols: usize, rows: usize, pixel_size_mm: f64, kind: &str) -> PyResult<Self> {
        let inner = Image2D::new(cols, rows, pixel_size_mm, kind_from(kind)?, values).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn cols(&self) -> usize {
        self.inner.cols
    }

    #[getter]
    fn rows(&self) -> usize {
        self.inner.rows
    }

    #[getter]
    fn pixel_size_mm(&self) -> f64 {
        self.inner.pixel_size_mm
    }

    #[getter]
    fn kind(&self) -> &'static str {
        kind_name(self.inner.kind)
    }

    /// Flat row-major values.
    fn values(&self) -> Vec<f64> {
        self.inner.values.clone()
    }

    /// Nested `[row][col]` lists, ready for `numpy.asarray`.
    fn to_rows(&self) -> Vec<Vec<f64>> {
        self.inner.values.chunks(self.inner.cols).map(<[f64]>::to_vec).collect()
    }

    fn get(&self, col: usize, row: usize) -> PyResult<f64> {
        if col >= self.inner.cols || row >= self.inner.rows {
            return Err(pyo3::exceptions::PyIndexError::new_err("pixel out of range"));
        }
        Ok(self.inner.get(col, row))
    }

    fn argmax(&self) -> Option<(usize, usize)> {
        self.inner.argmax()
    }

    fn count_nonzero(&self) -> usize {
        self.inner.count_nonzero()
    }

    fn min_max(&self) -> (f64, f64) {
        self.inner.min_max()
    }

    fn __len__(&self) -> usize {
        self.inner.values.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Image({}x{}, {})",
            self.inner.cols,
            self.inner.rows,
            kind_name(self.inner.kind)
        )
    }
}

fn image(inner: Image2D) -> Image {
    Image { inner }
}

fn shape_from(control_angles_deg: Vec<f64>) -> PyResult<CdmShape> {
    let c: [f64; CONTROL_POINTS] = control_angles_deg
        .try_into()
        .map_err(|v: Vec<f64>| ForgeError::new_err(format!("need {CONTROL_POINTS} control angles, got {}", v.len())))?;
    CdmShape::new(c).map_err(err)
}

/// Joint angles (deg) of the 26 notches from the 5 spline control angles.
#[pyfunction]
#[pyo3(signature = (control_angles_deg, abscissae = "midpoint"))]
fn spline_joint_angles(control_angles_deg: Vec<f64>, abscissae: &str) -> PyResult<Vec<f64>> {
    let abscissae: NotchAbscissae = serde_json::from_value(serde_json::Value::String(abscissae.into()))
        .map_err(|e| ForgeError::new_err(e.to_string()))?;
    let shape = shape_from(control_angles_deg)?;
    Ok(cdm_model::spline_joint_angles(&shape, abscissae).map_err(err)?.to_vec())
}

/// Manipulator-local kinematics: joint angles, centerline and both landmarks.
#[pyfunction]
#[pyo3(signature = (control_angles_deg, spec = None))]
fn forward_kinematics<'py>(
    py: Python<'py>,
    control_angles_deg: Vec<f64>,
    spec: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let spec: CdmGeometrySpec = match spec {
        Some(s) => from_py(s)?,
        None => CdmGeometrySpec::default(),
    };
    let kin = cdm_model::forward_kinematics(&shape_from(control_angles_deg)?, &spec).map_err(err)?;
    let out = pyo3::types::PyDict::new(py);
    out.set_item("joint_angles_deg", kin.joint_angles_deg.to_vec())?;
    out.set_item("centerline", kin.centerline.iter().map(arr3).collect::<Vec<_>>())?;
    out.set_item("landmark_proximal", arr3(&kin.landmark_proximal))?;
    out.set_item("landmark_distal", arr3(&kin.landmark_distal))?;
    Ok(out)
}

/// Gaussian belief map with unit peak at `point` (col, row).
#[pyfunction]
#[pyo3(signature = (point, cols, rows, sigma_px = 5.0))]
fn belief_map(point: [f64; 2], cols: usize, rows: usize, sigma_px: f64) -> PyResult<Image> {
    projector::belief_map(point, &BeliefMapParams { sigma_px }, cols, rows)
        .map(image)
        .map_err(err)
}

/// Min-max rescaling of line integrals to [-1, 1]; returns `(image, min, max)`.
#[pyfunction]
fn normalize_line_integrals(img: &Image) -> PyResult<(Image, f64, f64)> {
    let (out, lo, hi) = projector::normalize_line_integrals(&img.inner).map_err(err)?;
    Ok((image(out), lo, hi))
}

#[pyfunction]
#[pyo3(signature = (pred, gt, threshold = 0.5))]
fn dice(pred: &Image, gt: &Image, threshold: f64) -> PyResult<f64> {
    metrics::dice(&pred.inner, &gt.inner, threshold).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (pred_px, gt_px, pixel_size_mm = metrics::DEFAULT_PIXEL_SIZE_MM))]
fn landmark_error_mm(pred_px: [f64; 2], gt_px: [f64; 2], pixel_size_mm: f64) -> PyResult<f64> {
    metrics::landmark_error_mm(pred_px, gt_px, pixel_size_mm).map_err(err)
}

/// Sub-pixel peak of a belief map; `method` is "gaussian", "centroid" or "argmax".
#[pyfunction]
#[pyo3(signature = (belief, method = "gaussian"))]
fn extract_landmark(belief: &Image, method: &str) -> PyResult<[f64; 2]> {
    let method = match method {
        "gaussian" => SubpixelMethod::GaussianFit,
        "centroid" => SubpixelMethod::Centroid,
        "argmax" => SubpixelMethod::Argmax,
        _ => return Err(ForgeError::new_err(format!("unknown method {method:?}"))),
    };
    metrics::extract_landmark_with(&belief.inner, method).map_err(err)
}

/// The deterministic parameter draw for one sample, as a dict.
#[pyfunction]
#[pyo3(signature = (master_seed, ct_id, femur_side, sample_index, ranges = None))]
fn sample_configuration<'py>(
    py: Python<'py>,
    master_seed: u64,
    ct_id: &str,
    femur_side: &str,
    sample_index: u32,
    ranges: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let ranges: SamplingRanges = match ranges {
        Some(r) => from_py(r)?,
        None => SamplingRanges::default(),
    };
    let s = sampler::sample_configuration(master_seed, ct_id, side_from(femur_side)?, sample_index, &ranges)
        .map_err(err)?;
    to_py(py, &s)
}

/// Train/val/test assignment of CTs and samples.
#[pyfunction]
fn make_split<'py>(
    py: Python<'py>,
    ct_ids: Vec<String>,
    samples_per_femur: u32,
    master_seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let split = sampler::make_split(&ct_ids, samples_per_femur, master_seed).map_err(err)?;
    to_py(py, &split)
}

/// The default pipeline config as a dict.
#[pyfunction]
fn default_config(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    to_py(py, &PipelineConfig::default())
}

/// Validates a config dict and returns its content hash.
#[pyfunction]
fn config_hash(config: &Bound<'_, PyAny>) -> PyResult<String> {
    Ok(config_from(Some(config))?.hash())
}

/// Writes the synthetic phantom CT described by `config["phantom"]`.
#[pyfunction]
#[pyo3(signature = (path, config = None))]
fn write_phantom(path: PathBuf, config: Option<&Bound<'_, PyAny>>) -> PyResult<()> {
    let cfg = config_from(config)?;
    let ct = dataset_io::make_phantom_ct(&cfg.phantom).map_err(err)?;
    if path.extension().is_some_and(|e| e == "mhd") {
        dataset_io::write_metaimage(&ct, &path)
    } else {
        dataset_io::write_volume(&ct, &path, Some(cfg.phantom.default_alignment()))
    }
    .map_err(err)
}

/// A rendered (or loaded) sample: image, mask, two belief maps and metadata.
#[pyclass(module = "cdmforge", frozen)]
struct Record {
    #[pyo3(get)]
    image: Py<Image>,
    #[pyo3(get)]
    mask: Py<Image>,
    #[pyo3(get)]
    belief_maps: (Py<Image>, Py<Image>),
    #[pyo3(get)]
    meta: Py<PyAny>,
}

fn record(py: Python<'_>, rec: dataset_io::SampleRecord) -> PyResult<Record> {
    let [b0, b1] = rec.belief_maps;
    Ok(Record {
        image: Py::new(py, image(rec.image))?,
        mask: Py::new(py, image(rec.mask))?,
        belief_maps: (Py::new(py, image(b0))?, Py::new(py, image(b1))?),
        meta: to_py(py, &rec.meta)?.unbind(),
    })
}

#[pymethods]
impl Record {
    /// Writes the record in the on-disk dataset layout.
    fn write(&self, py: Python<'_>, dir: PathBuf) -> PyResult<()> {
        let rec = dataset_io::SampleRecord {
            image: self.image.get().inner.clone(),
            mask: self.mask.get().inner.clone(),
            belief_maps: [
                self.belief_maps.0.get().inner.clone(),
                self.belief_maps.1.get().inner.clone(),
            ],
            meta: from_py(self.meta.bind(py))?,
        };
        dataset_io::write_record(&rec, &dir).map_err(err)
    }
}

/// Renders one sample against the CT at `ct_path`.
#[pyfunction]
#[pyo3(signature = (ct_path, sample, config = None))]
fn render_sample(
    py: Python<'_>,
    ct_path: PathBuf,
    sample: &Bound<'_, PyAny>,
    config: Option<&Bound<'_, PyAny>>,
) -> PyResult<Record> {
    let cfg = config_from(config)?;
    let sample: SampleConfig = from_py(sample)?;
    let rec = py
        .detach(|| {
            let ct = PreparedCt::load(&ct_path, &cfg)?;
            dataset_io::render_sample(&cfg, &ct, &sample, None)
        })
        .map_err(err)?;
    record(py, rec)
}

/// Loads and validates one record directory.
#[pyfunction]
fn read_record(py: Python<'_>, dir: PathBuf) -> PyResult<Record> {
    let rec = py.detach(|| dataset_io::read_record(&dir)).map_err(err)?;
    record(py, rec)
}

/// Generates a full dataset; returns a summary dict.
#[pyfunction]
#[pyo3(signature = (ct_paths, master_seed, out, config = None))]
fn generate<'py>(
    py: Python<'py>,
    ct_paths: Vec<PathBuf>,
    master_seed: u64,
    out: PathBuf,
    config: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let cfg = config_from(config)?;
    let report = py
        .detach(|| dataset_io::generate_dataset_from_paths(&cfg, &ct_paths, master_seed, &out))
        .map_err(err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("generated", report.generated)?;
    d.set_item("reused", report.reused)?;
    d.set_item("failures", report.failures.clone())?;
    d.set_item("failure_rate", report.failure_rate())?;
    d.set_item("failure_rate_exceeded", report.failure_rate_exceeded())?;
    d.set_item("manifest", to_py(py, &report.manifest)?)?;
    Ok(d)
}

/// Scores prediction directories against a ground-truth dataset.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, pred: PathBuf, gt: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let report = py
        .detach(|| dataset_io::evaluate_directories(&pred, &gt))
        .map_err(err)?;
    to_py(py, &report)
}

#[pymodule]
fn cdmforge(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ForgeError", m.py().get_type::<ForgeError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Geometry>()?;
    m.add_class::<Image>()?;
    m.add_class::<Record>()?;
    m.add_function(wrap_pyfunction!(spline_joint_angles, m)?)?;
    m.add_function(wrap_pyfunction!(forward_kinematics, m)?)?;
    m.add_function(wrap_pyfunction!(belief_map, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_line_integrals, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_function(wrap_pyfunction!(landmark_error_mm, m)?)?;
    m.add_function(wrap_pyfunction!(extract_landmark, m)?)?;
    m.add_function(wrap_pyfunction!(sample_configuration, m)?)?;
    m.add_function(wrap_pyfunction!(make_split, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(config_hash, m)?)?;
    m.add_function(wrap_pyfunction!(write_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(render_sample, m)?)?;
    m.add_function(wrap_pyfunction!(read_record, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
