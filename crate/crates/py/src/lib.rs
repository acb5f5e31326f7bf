//! Python bindings: cubes, preprocessing, PCA, clustering, phantoms and
//! evaluation. Arrays cross the boundary as flat lists in the crate's native
//! layouts (band-sequential cubes, pixel-major scores, row-major images).

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use strata_core::cluster::{self, CovarianceKind};
use strata_core::cube_io::{self, CubeHeader, Interleave};
use strata_core::dimred::{self, ComponentSelector};
use strata_core::evaluate::{self, LayerGroundTruth};
use strata_core::phantom::{self, PhantomSpec};
use strata_core::pipeline::{self, Method, PipelineConfig};
use strata_core::preprocess::{self, RemainderPolicy, WhiteTarget};
use strata_core::{Error, ErrorClass};

fn to_py(e: impl Into<Error>) -> PyErr {
    let e: Error = e.into();
    match e.class() {
        ErrorClass::Format => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn white_target(target: Option<f64>) -> WhiteTarget {
    target.map_or(WhiteTarget::MeanOfMeans, WhiteTarget::Fixed)
}

fn selector(k: Option<usize>, variance: Option<f64>) -> PyResult<ComponentSelector> {
    match (k, variance) {
        (Some(k), None) => Ok(ComponentSelector::FixedK(k)),
        (None, Some(r)) => Ok(ComponentSelector::VarianceTarget(r)),
        (None, None) => Ok(ComponentSelector::VarianceTarget(0.995)),
        _ => Err(PyValueError::new_err("give either k or variance, not both")),
    }
}

/// Reflectance cube, band-sequential (`values[b * pixels + y * samples + x]`).
#[pyclass(name = "SpectralCube", module = "strata")]
#[derive(Clone)]
struct PyCube {
    inner: cube_io::SpectralCube,
}

#[pymethods]
impl PyCube {
    #[new]
    #[pyo3(signature = (samples, lines, bands, values, wavelengths=None))]
    fn new(
        samples: usize,
        lines: usize,
        bands: usize,
        values: Vec<f64>,
        wavelengths: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let header = CubeHeader::new(samples, lines, bands, wavelengths).map_err(to_py)?;
        let inner = cube_io::SpectralCube::new(header, values).map_err(to_py)?;
        Ok(PyCube { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyCube {
            inner: cube_io::load_cube(&path).map_err(to_py)?,
        })
    }

    #[pyo3(signature = (path, interleave="bsq"))]
    fn save(&self, path: PathBuf, interleave: &str) -> PyResult<()> {
        let interleave: Interleave = interleave.parse().map_err(to_py)?;
        cube_io::save_cube(&self.inner, &path, interleave).map_err(to_py)
    }

    #[getter]
    fn samples(&self) -> usize {
        self.inner.samples()
    }

    #[getter]
    fn lines(&self) -> usize {
        self.inner.lines()
    }

    #[getter]
    fn bands(&self) -> usize {
        self.inner.bands()
    }

    #[getter]
    fn wavelengths(&self) -> Option<Vec<f64>> {
        self.inner.wavelengths().map(|w| w.to_vec())
    }

    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    fn band(&self, band: usize) -> PyResult<Vec<f64>> {
        if band >= self.inner.bands() {
            return Err(PyValueError::new_err(format!("band {band} out of range")));
        }
        Ok(self.inner.band(band).to_vec())
    }

    fn spectrum(&self, pixel: usize) -> PyResult<Vec<f64>> {
        if pixel >= self.inner.pixels() {
            return Err(PyValueError::new_err(format!("pixel {pixel} out of range")));
        }
        Ok(self.inner.spectrum(pixel))
    }

    /// 8-bit rendering of one band as PGM bytes (min-max scaled).
    fn band_pgm(&self, band: usize) -> PyResult<Vec<u8>> {
        let image = cube_io::render_band(&self.inner, band, cube_io::DisplayRange::MinMax).map_err(to_py)?;
        Ok(image.to_pgm())
    }

    fn __repr__(&self) -> String {
        format!(
            "SpectralCube(samples={}, lines={}, bands={})",
            self.inner.samples(),
            self.inner.lines(),
            self.inner.bands()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (white, target=None))]
fn white_factors(white: &PyCube, target: Option<f64>) -> PyResult<Vec<f64>> {
    let f = preprocess::compute_white_factors(&white.inner, white_target(target)).map_err(to_py)?;
    Ok(f.factors().to_vec())
}

#[pyfunction]
#[pyo3(signature = (cube, white, target=None))]
fn normalize(cube: &PyCube, white: &PyCube, target: Option<f64>) -> PyResult<PyCube> {
    let f = preprocess::compute_white_factors(&white.inner, white_target(target)).map_err(to_py)?;
    Ok(PyCube {
        inner: preprocess::apply_normalization(&cube.inner, &f).map_err(to_py)?,
    })
}

#[pyfunction]
fn trim_bands(cube: &PyCube, leading: usize, trailing: usize) -> PyResult<PyCube> {
    Ok(PyCube {
        inner: preprocess::trim_bands(&cube.inner, leading, trailing).map_err(to_py)?,
    })
}

#[pyfunction]
#[pyo3(signature = (cube, bin, drop_tail=false))]
fn bin_bands(cube: &PyCube, bin: usize, drop_tail: bool) -> PyResult<PyCube> {
    let policy = if drop_tail {
        RemainderPolicy::DropTail
    } else {
        RemainderPolicy::Strict
    };
    Ok(PyCube {
        inner: preprocess::bin_bands_with(&cube.inner, bin, policy).map_err(to_py)?,
    })
}

#[pyclass(name = "PcaModel", module = "strata")]
#[derive(Clone)]
struct PyPca {
    inner: dimred::PcaModel,
}

#[pymethods]
impl PyPca {
    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn bands(&self) -> usize {
        self.inner.bands()
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean().to_vec()
    }

    #[getter]
    fn components(&self) -> Vec<Vec<f64>> {
        self.inner.components().to_vec()
    }

    #[getter]
    fn explained_variance(&self) -> Vec<f64> {
        self.inner.explained_variance().to_vec()
    }

    #[getter]
    fn explained_ratio(&self) -> Vec<f64> {
        self.inner.explained_ratio()
    }

    #[getter]
    fn cumulative_ratio(&self) -> f64 {
        self.inner.cumulative_ratio()
    }

    fn project(&self, cube: &PyCube) -> PyResult<PyScores> {
        Ok(PyScores {
            inner: dimred::project(&cube.inner, &self.inner).map_err(to_py)?,
        })
    }

    fn reconstruct(&self, scores: &PyScores) -> PyResult<PyCube> {
        Ok(PyCube {
            inner: dimred::reconstruct(&scores.inner, &self.inner).map_err(to_py)?,
        })
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(PyPca {
            inner: dimred::PcaModel::from_text(text).map_err(to_py)?,
        })
    }
}

#[pyfunction]
#[pyo3(signature = (cube, k=None, variance=None))]
fn fit_pca(cube: &PyCube, k: Option<usize>, variance: Option<f64>) -> PyResult<PyPca> {
    Ok(PyPca {
        inner: dimred::fit_pca(&cube.inner, selector(k, variance)?).map_err(to_py)?,
    })
}

/// Principal-component scores, pixel-major (`values[p * k + c]`).
#[pyclass(name = "ScoreCube", module = "strata")]
#[derive(Clone)]
struct PyScores {
    inner: dimred::ScoreCube,
}

#[pymethods]
impl PyScores {
    #[new]
    fn new(width: usize, height: usize, k: usize, values: Vec<f64>) -> PyResult<Self> {
        Ok(PyScores {
            inner: dimred::ScoreCube::new(width, height, k, values).map_err(to_py)?,
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
    fn k(&self) -> usize {
        self.inner.k()
    }

    fn values(&self) -> Vec<f64> {
        self.inner.scores().to_vec()
    }
}

#[pyclass(name = "LabelMap", module = "strata")]
#[derive(Clone)]
struct PyLabels {
    inner: cluster::LabelMap,
}

#[pymethods]
impl PyLabels {
    #[new]
    fn new(width: usize, height: usize, k: usize, labels: Vec<u32>) -> PyResult<Self> {
        Ok(PyLabels {
            inner: cluster::LabelMap::new(width, height, k, labels).map_err(to_py)?,
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
    fn k(&self) -> usize {
        self.inner.k()
    }

    fn labels(&self) -> Vec<u32> {
        self.inner.labels().to_vec()
    }

    fn counts(&self) -> Vec<usize> {
        self.inner.counts()
    }

    /// Label map rendered with one gray level per cluster, as PGM bytes.
    fn to_pgm(&self) -> Vec<u8> {
        cluster::render_label_map(&self.inner).to_pgm()
    }

    /// White-on-black mask (or inverse) of the given clusters, as PGM bytes.
    #[pyo3(signature = (clusters, inverse=false))]
    fn extract(&self, clusters: Vec<usize>, inverse: bool) -> PyResult<Vec<u8>> {
        let mode = if inverse {
            cluster::ExtractMode::Inverse
        } else {
            cluster::ExtractMode::Mask
        };
        Ok(cluster::extract_layer(&self.inner, &clusters, mode)
            .map_err(to_py)?
            .to_pgm())
    }
}

#[pyfunction]
#[pyo3(signature = (scores, k, seed=0, restarts=1, max_iter=300, tol=1e-4))]
fn kmeans(
    py: Python<'_>,
    scores: &PyScores,
    k: usize,
    seed: u64,
    restarts: usize,
    max_iter: usize,
    tol: f64,
) -> PyResult<(PyLabels, PyObject)> {
    let config = cluster::KMeansConfig {
        restarts,
        max_iter,
        tol,
        ..cluster::KMeansConfig::new(k, seed)
    };
    let (model, labels) = cluster::kmeans_fit(&scores.inner, &config).map_err(to_py)?;
    let info = PyDict::new(py);
    info.set_item("inertia", model.inertia)?;
    info.set_item("iterations", model.iterations)?;
    info.set_item("inertia_history", model.inertia_history.clone())?;
    info.set_item(
        "centroids",
        model
            .centroids
            .chunks(model.dim.max(1))
            .map(|c| c.to_vec())
            .collect::<Vec<_>>(),
    )?;
    Ok((PyLabels { inner: labels }, info.into_any().unbind()))
}

#[pyfunction]
#[pyo3(signature = (scores, k, seed=0, restarts=1, cov="full", reg=1e-6, max_iter=300, tol=1e-6))]
#[allow(clippy::too_many_arguments)]
fn gmm(
    py: Python<'_>,
    scores: &PyScores,
    k: usize,
    seed: u64,
    restarts: usize,
    cov: &str,
    reg: f64,
    max_iter: usize,
    tol: f64,
) -> PyResult<(PyLabels, PyObject)> {
    let covariance = match cov {
        "full" => CovarianceKind::Full,
        "diag" | "diagonal" => CovarianceKind::Diagonal,
        other => return Err(PyValueError::new_err(format!("unknown covariance `{other}`"))),
    };
    let config = cluster::GmmConfig {
        covariance,
        restarts,
        reg,
        max_iter,
        tol,
        ..cluster::GmmConfig::new(k, seed)
    };
    let model = cluster::gmm_fit(&scores.inner, &config).map_err(to_py)?;
    let labels = cluster::gmm_assign(&scores.inner, &model).map_err(to_py)?;
    let info = PyDict::new(py);
    info.set_item("log_likelihood", model.log_likelihood)?;
    info.set_item("iterations", model.iterations)?;
    info.set_item("log_likelihood_history", model.log_likelihood_history.clone())?;
    info.set_item("weights", model.weights.clone())?;
    info.set_item(
        "means",
        (0..model.k()).map(|i| model.mean(i).to_vec()).collect::<Vec<_>>(),
    )?;
    Ok((PyLabels { inner: labels }, info.into_any().unbind()))
}

/// Per-layer boolean masks; later layers take precedence where they overlap.
#[pyclass(name = "GroundTruth", module = "strata")]
#[derive(Clone)]
struct PyTruth {
    inner: LayerGroundTruth,
}

#[pymethods]
impl PyTruth {
    #[new]
    fn new(width: usize, height: usize, layers: Vec<(String, Vec<bool>)>) -> PyResult<Self> {
        Ok(PyTruth {
            inner: LayerGroundTruth::new(width, height, layers).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(PyTruth {
            inner: LayerGroundTruth::load_masks(&dir).map_err(to_py)?,
        })
    }

    fn names(&self) -> Vec<String> {
        self.inner.names().into_iter().map(String::from).collect()
    }

    fn mask(&self, name: &str) -> PyResult<Vec<bool>> {
        self.inner
            .mask(name)
            .map(|m| m.to_vec())
            .ok_or_else(|| PyValueError::new_err(format!("no layer `{name}`")))
    }
}

/// Scores a label map against ground truth; returns metrics and assignment.
#[pyfunction]
fn match_clusters(py: Python<'_>, labels: &PyLabels, truth: &PyTruth) -> PyResult<PyObject> {
    let report = evaluate::match_clusters(&labels.inner, &truth.inner).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("pixel_accuracy", report.pixel_accuracy)?;
    out.set_item("purity", report.purity)?;
    out.set_item("mean_iou", report.mean_iou())?;
    out.set_item(
        "iou",
        report
            .per_layer_iou
            .iter()
            .cloned()
            .collect::<std::collections::BTreeMap<_, _>>(),
    )?;
    out.set_item("assignment", report.assignment.clone())?;
    out.set_item("text", report.to_text())?;
    Ok(out.into_any().unbind())
}

#[pyclass(name = "Phantom", module = "strata")]
struct PyPhantom {
    #[pyo3(get)]
    cube: PyCube,
    #[pyo3(get)]
    white: PyCube,
    #[pyo3(get)]
    truth: PyTruth,
    scans: Vec<cube_io::GrayImage>,
}

#[pymethods]
impl PyPhantom {
    /// Step scans (blank paper, then one per layer) as PGM bytes.
    fn step_scans(&self) -> Vec<Vec<u8>> {
        self.scans.iter().map(|s| s.to_pgm()).collect()
    }
}

/// Generates a phantom from TOML text or a built-in scene
/// (`default`, `concealed`, `gradient`).
#[pyfunction]
#[pyo3(signature = (spec=None, scene="default", size=64, bands=208, seed=0, noise_sigma=None))]
fn generate_phantom(
    spec: Option<&str>,
    scene: &str,
    size: usize,
    bands: usize,
    seed: u64,
    noise_sigma: Option<f64>,
) -> PyResult<PyPhantom> {
    let mut spec = match spec {
        Some(text) => PhantomSpec::from_toml(text).map_err(to_py)?,
        None => match scene {
            "default" => PhantomSpec::default_scene(size, size, bands),
            "concealed" => PhantomSpec::concealed_chalk_scene(size, size, bands),
            "gradient" => PhantomSpec::gradient_scene(size, size, bands, 0.15, 0.1),
            other => return Err(PyValueError::new_err(format!("unknown scene `{other}`"))),
        },
    };
    spec.seed = seed;
    if let Some(s) = noise_sigma {
        spec.noise_sigma = s;
    }
    let ph = phantom::generate_phantom(&spec).map_err(to_py)?;
    Ok(PyPhantom {
        cube: PyCube { inner: ph.cube },
        white: PyCube { inner: ph.white },
        truth: PyTruth { inner: ph.truth },
        scans: ph.step_scans,
    })
}

/// Runs the full chain in memory. `config` holds `key = value` lines.
#[pyfunction]
#[pyo3(signature = (cube, white, k=4, method="kmeans", seed=0, config=None))]
fn separate(
    py: Python<'_>,
    cube: &PyCube,
    white: &PyCube,
    k: usize,
    method: &str,
    seed: u64,
    config: Option<&str>,
) -> PyResult<PyObject> {
    let mut cfg = PipelineConfig::default();
    if let Some(text) = config {
        cfg.apply_text(text).map_err(to_py)?;
    }
    cfg.k = k;
    cfg.seed = seed;
    cfg.method = method.parse::<Method>().map_err(to_py)?;
    let sep = py
        .allow_threads(|| pipeline::run_separation(&cfg, cube.inner.clone(), white.inner.clone()))
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("bands", sep.reduction.bands.binned)?;
    out.set_item(
        "model",
        PyPca {
            inner: sep.reduction.model.clone(),
        },
    )?;
    out.set_item(
        "scores",
        PyScores {
            inner: sep.reduction.scores.clone(),
        },
    )?;
    out.set_item(
        "labels",
        PyLabels {
            inner: sep.labels.clone(),
        },
    )?;
    out.set_item(
        "normalized",
        PyCube {
            inner: sep.reduction.normalized.clone(),
        },
    )?;
    Ok(out.into_any().unbind())
}

#[pyfunction]
fn register_translation(reference: Vec<u8>, moving: Vec<u8>, max_shift: usize) -> PyResult<(i64, i64)> {
    let a = cube_io::GrayImage::from_pgm(&reference).map_err(to_py)?;
    let b = cube_io::GrayImage::from_pgm(&moving).map_err(to_py)?;
    evaluate::register_translation(&a, &b, max_shift).map_err(to_py)
}

#[pymodule]
fn strata(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyCube>()?;
    m.add_class::<PyPca>()?;
    m.add_class::<PyScores>()?;
    m.add_class::<PyLabels>()?;
    m.add_class::<PyTruth>()?;
    m.add_class::<PyPhantom>()?;
    m.add_function(wrap_pyfunction!(white_factors, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(trim_bands, m)?)?;
    m.add_function(wrap_pyfunction!(bin_bands, m)?)?;
    m.add_function(wrap_pyfunction!(fit_pca, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(gmm, m)?)?;
    m.add_function(wrap_pyfunction!(match_clusters, m)?)?;
    m.add_function(wrap_pyfunction!(generate_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(separate, m)?)?;
    m.add_function(wrap_pyfunction!(register_translation, m)?)?;
    Ok(())
}
