//! Python bindings for the gesturebench engine.

use std::collections::BTreeMap;
use std::sync::Arc;

use gesturebench::classify::{self, CrcReport, EvalConfig, LabeledBundle, MethodId, ProbeResult};
use gesturebench::dataset;
use gesturebench::descriptors::{self, DescriptorBundle, FeatureConfig};
use gesturebench::mask::{self, BinaryMask, NormalizationConfig, Point, WristAnnotation};
use gesturebench::matching::{self, CombineWeights};
use gesturebench::synth::{self, Jitter, SynthConfig, DEFAULT_JITTER_LEVEL};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn method(name: &str) -> PyResult<MethodId> {
    name.parse().map_err(err)
}

fn weights(alpha: Option<f64>, beta: Option<f64>) -> PyResult<CombineWeights> {
    let d = CombineWeights::default();
    CombineWeights::new(alpha.unwrap_or(d.alpha), beta.unwrap_or(d.beta)).map_err(err)
}

/// Binary hand mask, row-major, `True` for hand pixels.
#[pyclass(name = "Mask", frozen, from_py_object)]
#[derive(Clone)]
struct PyMask(BinaryMask);

#[pymethods]
impl PyMask {
    #[new]
    fn new(width: usize, height: usize, pixels: Vec<bool>) -> PyResult<Self> {
        BinaryMask::new(width, height, pixels).map(PyMask).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        mask::load_mask(path).map(PyMask).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        mask::save_mask(&self.0, path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    fn count(&self) -> usize {
        self.0.count()
    }

    fn get(&self, x: usize, y: usize) -> PyResult<bool> {
        if x >= self.0.width() || y >= self.0.height() {
            return Err(PyValueError::new_err("pixel out of range"));
        }
        Ok(self.0.get(x, y))
    }

    fn pixels(&self) -> Vec<bool> {
        self.0.pixels().to_vec()
    }

    /// Rotates, cuts at the wrist and rescales; returns
    /// `(mask, rotation_applied, scale_applied)`.
    #[pyo3(signature = (left, right, target_width = None))]
    fn normalize(&self, left: (f64, f64), right: (f64, f64), target_width: Option<usize>) -> PyResult<(PyMask, f64, f64)> {
        let cfg = NormalizationConfig {
            target_width: target_width.unwrap_or(NormalizationConfig::default().target_width),
        };
        let wrist = WristAnnotation::new(Point::new(left.0, left.1), Point::new(right.0, right.1));
        let n = mask::normalize(&self.0, &wrist, &cfg).map_err(err)?;
        Ok((PyMask(n.mask.clone()), n.rotation_applied, n.scale_applied))
    }

    /// Every descriptor of this mask under default settings.
    fn features(&self) -> PyResult<PyBundle> {
        descriptors::build_bundle(&self.0, &FeatureConfig::default())
            .map(|b| PyBundle(Arc::new(b)))
            .map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Mask({}x{}, {} set)", self.0.width(), self.0.height(), self.0.count())
    }
}

/// Precomputed descriptors of one mask.
#[pyclass(name = "Bundle", frozen, from_py_object)]
#[derive(Clone)]
struct PyBundle(Arc<DescriptorBundle>);

#[pymethods]
impl PyBundle {
    fn hu(&self) -> Option<Vec<f64>> {
        self.0.hu.as_ref().map(|h| h.0.to_vec())
    }

    fn dt_histogram(&self) -> Option<Vec<f64>> {
        self.0.dt_hist.as_ref().map(|h| h.bins.clone())
    }

    fn orientation_histogram(&self) -> Option<Vec<f64>> {
        self.0.ohist.as_ref().map(|h| h.bins.clone())
    }

    fn contour(&self) -> Option<Vec<(f64, f64)>> {
        self.0.contour.as_ref().map(|c| c.points().iter().map(|p| (p.x, p.y)).collect())
    }
}

/// Gallery of labelled bundles; every class needs the same image count.
#[pyclass(name = "Gallery", frozen)]
struct PyGallery(classify::Gallery);

#[pymethods]
impl PyGallery {
    /// `entries` is a list of `(id, label, Bundle)`.
    #[new]
    fn new(entries: Vec<(String, String, PyBundle)>) -> PyResult<Self> {
        let v = entries
            .into_iter()
            .map(|(id, label, b)| LabeledBundle { id, label, bundle: b.0 })
            .collect();
        classify::Gallery::new(v).map(PyGallery).map_err(err)
    }

    fn labels(&self) -> Vec<String> {
        self.0.labels().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

fn result_dict<'py>(py: Python<'py>, r: &ProbeResult) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let d = pyo3::types::PyDict::new(py);
    d.set_item("probe_id", &r.probe_id)?;
    d.set_item("true_label", &r.true_label)?;
    d.set_item("rank", r.rank)?;
    let c: Vec<(String, f64)> = r.candidates.iter().map(|c| (c.label.clone(), c.cost)).collect();
    d.set_item("candidates", c)?;
    Ok(d)
}

fn report_dict<'py>(py: Python<'py>, r: &CrcReport) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let d = pyo3::types::PyDict::new(py);
    d.set_item("method", r.method.as_str())?;
    d.set_item("g", r.g)?;
    d.set_item("repeats", r.repeats)?;
    d.set_item("mean", r.mean.clone())?;
    d.set_item("sigma", r.sigma.clone())?;
    Ok(d)
}

/// Method identifiers accepted by `score`, `classify` and `evaluate`.
#[pyfunction]
fn methods() -> Vec<&'static str> {
    MethodId::ALL.iter().map(|m| m.as_str()).collect()
}

#[pyfunction]
#[pyo3(signature = (probe, entry, method_name, alpha = None, beta = None))]
fn score(probe: &PyBundle, entry: &PyBundle, method_name: &str, alpha: Option<f64>, beta: Option<f64>) -> PyResult<f64> {
    classify::score(&probe.0, &entry.0, method(method_name)?, &weights(alpha, beta)?).map_err(err)
}

#[pyfunction]
#[pyo3(name = "classify", signature = (probe_id, label, probe, gallery, method_name, alpha = None, beta = None))]
fn classify_probe<'py>(
    py: Python<'py>,
    probe_id: String,
    label: String,
    probe: &PyBundle,
    gallery: &PyGallery,
    method_name: &str,
    alpha: Option<f64>,
    beta: Option<f64>,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let p = LabeledBundle {
        id: probe_id,
        label,
        bundle: probe.0.clone(),
    };
    let r = classify::classify_one(&p, &gallery.0, method(method_name)?, &weights(alpha, beta)?).map_err(err)?;
    result_dict(py, &r)
}

#[pyfunction]
fn chi_square(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    matching::chi_square(&a, &b).map_err(err)
}

#[pyfunction]
fn template_ssd(a: &PyMask, b: &PyMask) -> PyResult<f64> {
    matching::template_ssd(&a.0, &b.0).map_err(err)
}

/// Square assignment problem; returns `(permutation, total_cost)`.
#[pyfunction]
fn hungarian(rows: Vec<Vec<f64>>) -> PyResult<(Vec<usize>, f64)> {
    let m = matching::CostMatrix::from_rows(&rows).map_err(err)?;
    let a = matching::hungarian(&m);
    Ok((a.permutation, a.total_cost))
}

/// Reads a manifest (or a directory holding one) as `[(id, label, Mask)]`.
#[pyfunction]
fn load_dataset(path: &str) -> PyResult<Vec<(String, String, PyMask)>> {
    let v = dataset::load_dataset(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
    Ok(v.into_iter().map(|m| (m.id, m.label, PyMask(m.mask))).collect())
}

/// Renders and normalizes a synthetic set in memory as `[(id, label, Mask)]`.
#[pyfunction]
#[pyo3(signature = (classes = 15, per_class = 30, seed = 7, jitter = DEFAULT_JITTER_LEVEL))]
fn synth_dataset(classes: usize, per_class: usize, seed: u64, jitter: f64) -> PyResult<Vec<(String, String, PyMask)>> {
    let cfg = SynthConfig {
        classes,
        per_class,
        seed,
        jitter: Jitter::level(jitter),
    };
    let samples = synth::render_dataset(&cfg).map_err(err)?;
    let masks = dataset::normalize_samples(&samples, &NormalizationConfig::default()).map_err(err)?;
    Ok(masks.into_iter().map(|m| (m.id, m.label, PyMask(m.mask))).collect())
}

/// Writes raw PGMs, wrists.csv and manifest.csv; returns the image count.
#[pyfunction]
#[pyo3(signature = (out_dir, classes = 15, per_class = 30, seed = 7, jitter = DEFAULT_JITTER_LEVEL))]
fn synth_generate(out_dir: &str, classes: usize, per_class: usize, seed: u64, jitter: f64) -> PyResult<usize> {
    let cfg = SynthConfig {
        classes,
        per_class,
        seed,
        jitter: Jitter::level(jitter),
    };
    synth::generate(&cfg, out_dir).map(|m| m.entries.len()).map_err(err)
}

/// Repeated gallery/probe evaluation over `[(id, label, Mask)]`.
#[pyfunction]
#[pyo3(signature = (data, method_name, g = 1, repeats = 10, seed = 1, threads = 1))]
fn evaluate<'py>(
    py: Python<'py>,
    data: Vec<(String, String, PyMask)>,
    method_name: &str,
    g: usize,
    repeats: usize,
    seed: u64,
    threads: usize,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let m = method(method_name)?;
    let masks: Vec<dataset::LabeledMask> = data
        .into_iter()
        .map(|(id, label, mask)| dataset::LabeledMask { id, label, mask: mask.0 })
        .collect();
    let bundles = dataset::prepare_bundles_with(&masks, &FeatureConfig::default(), m.features(), threads).map_err(err)?;
    let cfg = EvalConfig {
        method: m,
        g,
        repeats,
        seed,
        threads,
        weights: CombineWeights::default(),
    };
    let r = classify::evaluate(&bundles, &cfg).map_err(err)?;
    report_dict(py, &r)
}

/// Image counts per label.
#[pyfunction]
fn class_counts(data: Vec<(String, String, PyMask)>) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for (_, label, _) in data {
        *out.entry(label).or_default() += 1;
    }
    out
}

#[pymodule]
#[pyo3(name = "gesturebench")]
fn gesturebench_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMask>()?;
    m.add_class::<PyBundle>()?;
    m.add_class::<PyGallery>()?;
    m.add_function(wrap_pyfunction!(methods, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(classify_probe, m)?)?;
    m.add_function(wrap_pyfunction!(chi_square, m)?)?;
    m.add_function(wrap_pyfunction!(template_ssd, m)?)?;
    m.add_function(wrap_pyfunction!(hungarian, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(synth_generate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(class_counts, m)?)?;
    Ok(())
}
