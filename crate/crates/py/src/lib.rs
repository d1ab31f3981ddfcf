//! Python bindings. Structured results (answers, reports, traces, stats) are
//! returned as plain dicts via their JSON form.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

use geoground::benchforge::{self, default_templates, Task};
use geoground::evalharness;
use geoground::geoquery::{self, ClassId, FootprintFile, SemanticRaster};
use geoground::grid::{self, TokenFeatures};
use geoground::losses::{self, ProbMask};
use geoground::modality::{self, Modality, TextEmbeddings};
use geoground::raster::{self, BinaryMask, Connectivity, RleMask};
use geoground::runtime::{GenerationConfig, Scenario};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(err)
}

/// A binary mask. Construct from nested rows of bools or 0/1 ints.
#[pyclass(module = "geoground_py", name = "Mask", skip_from_py_object)]
#[derive(Clone)]
struct PyMask {
    inner: BinaryMask,
}

#[pymethods]
impl PyMask {
    #[new]
    fn new(rows: Vec<Vec<i64>>) -> PyResult<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(err("rows must all have the same length"));
        }
        let bits = rows.into_iter().flatten().map(|v| v != 0).collect();
        Ok(Self {
            inner: BinaryMask::from_bits(width, height, bits).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_rle(py: Python<'_>, rle: &Bound<'_, PyAny>) -> PyResult<Self> {
        let rle: RleMask = from_py(py, rle)?;
        Ok(Self {
            inner: rle.decode().map_err(err)?,
        })
    }

    fn to_rle(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &RleMask::from(&self.inner))
    }

    fn rows(&self) -> Vec<Vec<bool>> {
        self.inner
            .bits()
            .chunks(self.inner.width().max(1))
            .map(<[bool]>::to_vec)
            .collect()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn area(&self) -> usize {
        self.inner.count()
    }

    fn dilate(&self) -> Self {
        Self {
            inner: raster::dilate(&self.inner),
        }
    }

    fn erode(&self) -> Self {
        Self {
            inner: raster::erode(&self.inner),
        }
    }

    fn open(&self) -> Self {
        Self {
            inner: raster::open(&self.inner),
        }
    }

    /// Number of connected components (4 or 8 connectivity).
    #[pyo3(signature = (connectivity = 8))]
    fn components(&self, connectivity: u8) -> PyResult<u32> {
        let c = match connectivity {
            4 => Connectivity::Four,
            8 => Connectivity::Eight,
            other => return Err(err(format!("connectivity must be 4 or 8, got {other}"))),
        };
        Ok(raster::connected_components(&self.inner, c).count)
    }

    /// Exact Euclidean distance to the nearest foreground pixel, as rows.
    fn distance_transform(&self) -> PyResult<Vec<Vec<f64>>> {
        let field = raster::distance_transform(&self.inner).map_err(err)?;
        Ok((0..self.inner.height())
            .map(|y| (0..self.inner.width()).map(|x| field.get(x, y)).collect())
            .collect())
    }

    fn iou(&self, other: &PyMask) -> PyResult<f64> {
        raster::iou(&self.inner, &other.inner).map_err(err)
    }

    fn __eq__(&self, other: &PyMask) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "Mask({}x{}, area={})",
            self.inner.width(),
            self.inner.height(),
            self.inner.count()
        )
    }
}

/// A land-cover label raster with a class-name table.
#[pyclass(module = "geoground_py", name = "Raster", skip_from_py_object)]
struct PyRaster {
    inner: SemanticRaster,
}

impl PyRaster {
    fn id(&self, class: &Bound<'_, PyAny>) -> PyResult<ClassId> {
        if let Ok(id) = class.extract::<ClassId>() {
            return Ok(id);
        }
        let name: String = class.extract()?;
        self.inner
            .class_id(&name)
            .ok_or_else(|| err(format!("unknown class {name:?}")))
    }
}

#[pymethods]
impl PyRaster {
    #[new]
    fn new(
        width: usize,
        height: usize,
        resolution: f64,
        labels: Vec<ClassId>,
        class_names: BTreeMap<ClassId, String>,
    ) -> PyResult<Self> {
        Ok(Self {
            inner: SemanticRaster::new(width, height, resolution, labels, class_names).map_err(err)?,
        })
    }

    /// Load a raster JSON or an image with its `.meta.json` sidecar.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: SemanticRaster::load(&path).map_err(err)?,
        })
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn class_names(&self) -> BTreeMap<ClassId, String> {
        self.inner.class_names().clone()
    }

    fn class_mask(&self, class: &Bound<'_, PyAny>) -> PyResult<PyMask> {
        Ok(PyMask {
            inner: geoquery::class_mask(&self.inner, self.id(class)?).map_err(err)?,
        })
    }

    fn coverage(&self, py: Python<'_>, class: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        to_py(
            py,
            &geoquery::coverage_percentage(&self.inner, self.id(class)?).map_err(err)?,
        )
    }

    fn area(&self, py: Python<'_>, class: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        to_py(py, &geoquery::area(&self.inner, self.id(class)?).map_err(err)?)
    }

    fn existence(&self, py: Python<'_>, class: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        to_py(py, &geoquery::existence(&self.inner, self.id(class)?).map_err(err)?)
    }

    fn region_count(&self, py: Python<'_>, class: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        to_py(py, &geoquery::region_count(&self.inner, self.id(class)?).map_err(err)?)
    }

    fn locate(&self, py: Python<'_>, class: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        to_py(py, &geoquery::locate(&self.inner, self.id(class)?).map_err(err)?)
    }

    fn rank(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &geoquery::rank_areas(&self.inner).map_err(err)?)
    }

    fn compare(&self, py: Python<'_>, a: &Bound<'_, PyAny>, b: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        to_py(
            py,
            &geoquery::compare_pair(&self.inner, self.id(a)?, self.id(b)?).map_err(err)?,
        )
    }

    fn distance(&self, py: Python<'_>, a: &Bound<'_, PyAny>, b: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        to_py(
            py,
            &geoquery::min_distance(&self.inner, self.id(a)?, self.id(b)?).map_err(err)?,
        )
    }

    fn adjacency(&self, py: Python<'_>, a: &Bound<'_, PyAny>, b: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        to_py(
            py,
            &geoquery::adjacency(&self.inner, self.id(a)?, self.id(b)?).map_err(err)?,
        )
    }
}

/// Destroyed-building rate of a footprint file given as JSON text.
#[pyfunction]
fn building_change(py: Python<'_>, footprints_json: &str) -> PyResult<Py<PyAny>> {
    let f = FootprintFile::from_json(footprints_json).map_err(err)?;
    let set = f.building_set().map_err(err)?;
    let c = geoquery::building_change(&set, set.damage_labels(), f.width, f.height).map_err(err)?;
    to_py(
        py,
        &serde_json::json!({
            "answer": c.answer,
            "n_total": c.n_total,
            "n_destroyed": c.n_destroyed,
            "destroyed_mask": RleMask::from(&c.destroyed_mask),
        }),
    )
}

/// Build a benchmark file from a source directory; returns its stats.
#[pyfunction]
#[pyo3(signature = (source_dir, out_path, seed = 0, tasks = None, balance = true))]
fn build_benchmark(
    py: Python<'_>,
    source_dir: PathBuf,
    out_path: PathBuf,
    seed: u64,
    tasks: Option<Vec<String>>,
    balance: bool,
) -> PyResult<Py<PyAny>> {
    let tasks = match tasks {
        None => Task::BENCH.to_vec(),
        Some(names) => names
            .iter()
            .map(|n| Task::parse(n).ok_or_else(|| err(format!("unknown task {n:?}"))))
            .collect::<PyResult<_>>()?,
    };
    let sources = benchforge::load_sources(&source_dir).map_err(err)?;
    let samples = benchforge::build_benchmark(&sources, &default_templates(), &tasks, seed, balance).map_err(err)?;
    let stats = benchforge::assemble_benchmark(&samples, &out_path).map_err(err)?;
    to_py(py, &stats)
}

/// Score a JSON-lines responses file against a benchmark file.
#[pyfunction]
fn evaluate(py: Python<'_>, bench_path: PathBuf, responses_path: PathBuf) -> PyResult<Py<PyAny>> {
    let bench = benchforge::read_benchmark(&bench_path).map_err(err)?;
    let text = std::fs::read_to_string(&responses_path).map_err(err)?;
    let responses = evalharness::parse_responses(&text).map_err(err)?;
    let (_, report) = evalharness::evaluate(&bench, &responses).map_err(err)?;
    to_py(py, &report)
}

#[pyfunction]
fn extract_option(response: &str) -> Option<char> {
    evalharness::extract_option(response)
}

#[pyfunction]
fn pearson(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    evalharness::pearson(&xs, &ys).map_err(err)
}

/// Greedy-matched mean IoU over `(image_index, Mask)` pairs.
#[pyfunction]
fn grounding_iou(pred: Vec<(usize, PyRef<'_, PyMask>)>, gt: Vec<(usize, PyRef<'_, PyMask>)>) -> PyResult<f64> {
    let enc = |v: &[(usize, PyRef<'_, PyMask>)]| -> Vec<(usize, RleMask)> {
        v.iter().map(|(i, m)| (*i, RleMask::from(&m.inner))).collect()
    };
    evalharness::grounding_iou(&enc(&pred), &enc(&gt)).map_err(err)
}

/// Run a scripted scenario (JSON text) and return its trace.
#[pyfunction]
#[pyo3(signature = (scenario_json, token_cap = 128, max_tokens = None))]
fn simulate(py: Python<'_>, scenario_json: &str, token_cap: usize, max_tokens: Option<usize>) -> PyResult<Py<PyAny>> {
    let scenario = Scenario::from_json(scenario_json).map_err(err)?;
    let mut cfg = GenerationConfig {
        token_cap,
        ..GenerationConfig::default()
    };
    if let Some(m) = max_tokens {
        cfg.max_tokens = m;
    }
    let trace = scenario.run(&cfg).map_err(err)?;
    trace.validate(token_cap).map_err(err)?;
    to_py(py, &trace)
}

#[pyfunction]
#[pyo3(signature = (width, height, tile_size = grid::DEFAULT_TILE_SIZE, max_tiles = grid::DEFAULT_MAX_TILES))]
fn plan_patches(
    py: Python<'_>,
    width: usize,
    height: usize,
    tile_size: usize,
    max_tiles: usize,
) -> PyResult<Py<PyAny>> {
    let layout = grid::plan_patches(width, height, tile_size, max_tiles).map_err(err)?;
    let mut value = serde_json::to_value(layout).map_err(err)?;
    value["token_count"] = layout.token_count().into();
    to_py(py, &value)
}

/// Indices of tokens selected for a mask, capped by spatial uniform sampling.
#[pyfunction]
#[pyo3(signature = (mask, tile_size = grid::DEFAULT_TILE_SIZE, max_tiles = grid::DEFAULT_MAX_TILES, cap = grid::DEFAULT_TOKEN_CAP))]
fn select_tokens(mask: &PyMask, tile_size: usize, max_tiles: usize, cap: usize) -> PyResult<Vec<usize>> {
    let layout = grid::plan_patches(mask.inner.width(), mask.inner.height(), tile_size, max_tiles).map_err(err)?;
    let tok = grid::downsample_mask(&mask.inner, &layout).map_err(err)?;
    Ok(grid::spatial_uniform_sample(&tok, cap).indices().to_vec())
}

/// Per-token text relevance of `visual` (N x D) given `text` (L x D).
#[pyfunction]
fn relevance_scores(visual: Vec<Vec<f64>>, text: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let v = TokenFeatures::new(visual).map_err(err)?;
    let q = TextEmbeddings::new(text).map_err(err)?;
    Ok(modality::relevance_scores(&v, &q, Modality::Optical).map_err(err)?.beta)
}

fn prob_mask(probs: Vec<f64>, gt: &PyMask) -> PyResult<ProbMask> {
    ProbMask::new(gt.inner.width(), gt.inner.height(), probs).map_err(err)
}

/// `(loss, grad)` of the soft Dice loss; `probs` is row-major.
#[pyfunction]
fn dice_loss(probs: Vec<f64>, gt: &PyMask) -> PyResult<(f64, Vec<f64>)> {
    let g = losses::dice_loss(&prob_mask(probs, gt)?, &gt.inner).map_err(err)?;
    Ok((g.loss, g.grad))
}

/// `(loss, grad)` of the mean per-pixel binary cross-entropy.
#[pyfunction]
fn pixel_ce(probs: Vec<f64>, gt: &PyMask) -> PyResult<(f64, Vec<f64>)> {
    let g = losses::pixel_ce(&prob_mask(probs, gt)?, &gt.inner).map_err(err)?;
    Ok((g.loss, g.grad))
}

#[pyfunction]
#[pyo3(signature = (lm, dice, ce, lambda_seg = None))]
fn total_loss(py: Python<'_>, lm: f64, dice: f64, ce: f64, lambda_seg: Option<f64>) -> PyResult<Py<PyAny>> {
    to_py(py, &losses::total_loss(lm, dice, ce, lambda_seg).map_err(err)?)
}

#[pymodule]
fn geoground_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMask>()?;
    m.add_class::<PyRaster>()?;
    m.add_function(wrap_pyfunction!(building_change, m)?)?;
    m.add_function(wrap_pyfunction!(build_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(extract_option, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(grounding_iou, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(plan_patches, m)?)?;
    m.add_function(wrap_pyfunction!(select_tokens, m)?)?;
    m.add_function(wrap_pyfunction!(relevance_scores, m)?)?;
    m.add_function(wrap_pyfunction!(dice_loss, m)?)?;
    m.add_function(wrap_pyfunction!(pixel_ce, m)?)?;
    m.add_function(wrap_pyfunction!(total_loss, m)?)?;
    Ok(())
}
