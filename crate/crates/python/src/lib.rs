//! Python bindings: `import hyperagg_py`.

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use hyperagg::error::Error;
use hyperagg::gradcheck::{run_gradcheck, GradcheckOptions};
use hyperagg::similarity::{self, Rdm};
use hyperagg::training::{self, reliability, Dataset, LossKind, TrainConfig};
use hyperagg::types::{self, MaskResolution, Modality, PairIndex, RdmSlice, StageSpec};

create_exception!(hyperagg_py, HyperaggError, PyValueError);

fn err(e: Error) -> PyErr {
    HyperaggError::new_err(e.to_string())
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for hyperagg::error::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

fn parse_resolution(text: &str) -> PyResult<MaskResolution> {
    text.parse::<MaskResolution>().py()
}

fn stage_specs(stages: Vec<(String, usize, usize)>) -> Vec<StageSpec> {
    stages
        .into_iter()
        .map(|(name, channels, spatial)| StageSpec::new(name, channels, spatial))
        .collect()
}

fn stage_tuples(stages: &[StageSpec]) -> Vec<(String, usize, usize)> {
    stages
        .iter()
        .map(|s| (s.name.clone(), s.channels, s.spatial))
        .collect()
}

fn rows(flat: &[f64], n: usize) -> Vec<Vec<f64>> {
    flat.chunks(n).map(<[f64]>::to_vec).collect()
}

fn flatten(matrix: &[Vec<f64>]) -> PyResult<(usize, Vec<f64>)> {
    let n = matrix.len();
    if matrix.iter().any(|r| r.len() != n) {
        return Err(HyperaggError::new_err("matrix must be square"));
    }
    Ok((n, matrix.concat()))
}

/// Per-image, per-stage activations.
#[pyclass(name = "FeatureSet", module = "hyperagg_py", frozen)]
pub struct PyFeatureSet {
    inner: types::FeatureSet,
}

#[pymethods]
impl PyFeatureSet {
    /// `stages` is a list of `(name, channels, spatial)`; `data` is image-major,
    /// then stage, channel, spatial.
    #[new]
    fn new(
        image_ids: Vec<String>,
        stages: Vec<(String, usize, usize)>,
        data: Vec<f32>,
    ) -> PyResult<Self> {
        let inner = types::FeatureSet::new(image_ids, stage_specs(stages), data).py()?;
        Ok(Self { inner })
    }

    #[getter]
    fn image_ids(&self) -> Vec<String> {
        self.inner.image_ids().to_vec()
    }

    #[getter]
    fn stages(&self) -> Vec<(String, usize, usize)> {
        stage_tuples(self.inner.stages())
    }

    #[getter]
    fn num_images(&self) -> usize {
        self.inner.num_images()
    }

    #[getter]
    fn embedding_len(&self) -> usize {
        self.inner.embedding_len()
    }

    fn data(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn image(&self, index: usize) -> PyResult<Vec<f32>> {
        if index >= self.inner.num_images() {
            return Err(HyperaggError::new_err(format!(
                "image index {index} out of range"
            )));
        }
        Ok(self.inner.image(index).to_vec())
    }

    fn select(&self, ids: Vec<String>) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.select(&ids).py()?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.num_images()
    }

    fn __repr__(&self) -> String {
        format!(
            "FeatureSet(images={}, stages={:?})",
            self.inner.num_images(),
            self.stages()
        )
    }
}

/// Multiplicative coefficients over stages, channels or features.
#[pyclass(name = "Mask", module = "hyperagg_py", frozen)]
pub struct PyMask {
    inner: types::Mask,
}

#[pymethods]
impl PyMask {
    /// `coefficients` holds one list per stage.
    #[new]
    fn new(
        resolution: &str,
        stages: Vec<(String, usize, usize)>,
        coefficients: Vec<Vec<f32>>,
    ) -> PyResult<Self> {
        let res = parse_resolution(resolution)?;
        let inner = types::Mask::from_coefficients(res, &stage_specs(stages), coefficients).py()?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn identity(resolution: &str, stages: Vec<(String, usize, usize)>) -> PyResult<Self> {
        let res = parse_resolution(resolution)?;
        Ok(Self {
            inner: types::Mask::identity(res, &stage_specs(stages)),
        })
    }

    #[getter]
    fn resolution(&self) -> String {
        self.inner.resolution().to_string()
    }

    #[getter]
    fn coefficients(&self) -> Vec<Vec<f32>> {
        self.inner.coefficients().to_vec()
    }

    #[getter]
    fn num_coefficients(&self) -> usize {
        self.inner.num_coefficients()
    }

    fn scaled(&self, factor: f32) -> Self {
        Self {
            inner: self.inner.scaled(factor),
        }
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "Mask(resolution={:?}, coefficients={})",
            self.resolution(),
            self.inner.num_coefficients()
        )
    }
}

/// `(timestamp, subject matrices as lists of rows)`.
type SliceArg = (Option<f64>, Vec<Vec<Vec<f32>>>);

/// Per-subject RDMs for one modality, optionally time-resolved.
#[pyclass(name = "RdmStack", module = "hyperagg_py", frozen)]
pub struct PyRdmStack {
    inner: types::RdmStack,
}

/// Case-insensitive; accepts the `other:NAME` form that `modality` returns.
fn parse_modality(text: &str) -> Modality {
    match text.to_ascii_lowercase().as_str() {
        "fmri-evc" => Modality::FmriEvc,
        "fmri-it" => Modality::FmriIt,
        "meg-early" => Modality::MegEarly,
        "meg-late" => Modality::MegLate,
        _ => Modality::Other(text.strip_prefix("other:").unwrap_or(text).to_string()),
    }
}

#[pymethods]
impl PyRdmStack {
    /// `slices` is a list of `(timestamp or None, [subject matrix, ...])`, each
    /// matrix a list of rows. Modality is one of fmri-evc, fmri-it, meg-early,
    /// meg-late, or any other name.
    #[new]
    fn new(image_ids: Vec<String>, modality: &str, slices: Vec<SliceArg>) -> PyResult<Self> {
        let slices = slices
            .into_iter()
            .map(|(timestamp, subjects)| RdmSlice {
                timestamp,
                matrices: subjects.into_iter().map(|m| m.concat()).collect(),
            })
            .collect();
        let inner = types::RdmStack::new(image_ids, parse_modality(modality), slices)
            .map_err(|e| err(e.into()))?;
        Ok(Self { inner })
    }

    #[getter]
    fn image_ids(&self) -> Vec<String> {
        self.inner.image_ids().to_vec()
    }

    #[getter]
    fn modality(&self) -> String {
        self.inner.modality().to_string()
    }

    #[getter]
    fn subjects(&self) -> usize {
        self.inner.subjects()
    }

    #[getter]
    fn num_slices(&self) -> usize {
        self.inner.slices().len()
    }

    #[getter]
    fn timestamps(&self) -> Vec<Option<f64>> {
        self.inner.slices().iter().map(|s| s.timestamp).collect()
    }

    #[getter]
    fn midpoint_slice(&self) -> usize {
        self.inner.midpoint_slice()
    }

    fn matrix(&self, slice: usize, subject: usize) -> PyResult<Vec<Vec<f32>>> {
        self.inner.slice_index(slice).py()?;
        if subject >= self.inner.subjects() {
            return Err(HyperaggError::new_err(format!(
                "subject {subject} out of range"
            )));
        }
        let n = self.inner.num_images();
        Ok(self
            .inner
            .matrix(slice, subject)
            .chunks(n)
            .map(<[f32]>::to_vec)
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "RdmStack(modality={:?}, images={}, subjects={}, slices={})",
            self.modality(),
            self.inner.num_images(),
            self.inner.subjects(),
            self.num_slices()
        )
    }
}

#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    similarity::pearson(&x, &y).py()
}

#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    similarity::spearman(&x, &y).py()
}

#[pyfunction]
fn pair_count(n: usize) -> PyResult<usize> {
    types::pair_count(n).py()
}

/// Row-major `i < j` entries of a square matrix.
#[pyfunction]
fn upper_triangle(matrix: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let (_, flat) = flatten(&matrix)?;
    types::upper_triangle(&flat).py()
}

#[pyfunction]
#[pyo3(signature = (noise, n_bar, alpha = reliability::DEFAULT_ALPHA, beta_exp = reliability::DEFAULT_BETA_EXP))]
fn reliability_weight(noise: f64, n_bar: f64, alpha: f64, beta_exp: f64) -> PyResult<f64> {
    reliability::reliability_weight(noise, n_bar, alpha, beta_exp).py()
}

/// Population std across subjects of entry `(i, j)`.
#[pyfunction]
#[pyo3(signature = (stack, i, j, slice = 0))]
fn compute_noise(stack: &PyRdmStack, i: usize, j: usize, slice: usize) -> PyResult<f64> {
    if j >= stack.inner.num_images() {
        return Err(HyperaggError::new_err(format!(
            "image index {j} out of range"
        )));
    }
    let pair = PairIndex::new(i, j).py()?;
    reliability::compute_noise(&stack.inner, pair, slice).py()
}

#[pyfunction]
fn read_features(path: &str) -> PyResult<PyFeatureSet> {
    Ok(PyFeatureSet {
        inner: hyperagg::io::read_features(path).py()?,
    })
}

#[pyfunction]
fn write_features(features: &PyFeatureSet, path: &str) -> PyResult<()> {
    hyperagg::io::write_features(&features.inner, path).py()
}

#[pyfunction]
fn read_rdms(path: &str) -> PyResult<PyRdmStack> {
    Ok(PyRdmStack {
        inner: hyperagg::io::read_rdms(path).py()?,
    })
}

#[pyfunction]
fn write_rdms(stack: &PyRdmStack, path: &str) -> PyResult<()> {
    hyperagg::io::write_rdms(&stack.inner, path).py()
}

/// Load a checkpoint's mask and stage layout.
#[pyfunction]
fn load_mask(path: &str) -> PyResult<PyMask> {
    Ok(PyMask {
        inner: hyperagg::io::load_checkpoint(path).py()?.mask,
    })
}

/// Predicted RDM (list of rows) over `image_ids`, or all images.
#[pyfunction]
#[pyo3(signature = (features, mask, image_ids = None))]
fn predicted_rdm(
    features: &PyFeatureSet,
    mask: &PyMask,
    image_ids: Option<Vec<String>>,
) -> PyResult<Vec<Vec<f64>>> {
    let fs = &features.inner;
    let subset = match image_ids {
        None => (0..fs.num_images()).collect(),
        Some(ids) => ids
            .iter()
            .map(|id| {
                fs.index_of(id)
                    .ok_or_else(|| err(Error::UnknownImage(id.clone())))
            })
            .collect::<PyResult<Vec<_>>>()?,
    };
    let rdm = similarity::predicted_rdm(fs, &mask.inner, &subset).py()?;
    Ok(rows(&rdm.data, rdm.n()))
}

#[pyfunction]
#[pyo3(signature = (stack, slice = None))]
fn noise_ceiling(stack: &PyRdmStack, slice: Option<usize>) -> PyResult<f64> {
    let slice = slice.unwrap_or_else(|| stack.inner.midpoint_slice());
    similarity::noise_ceiling(&stack.inner, slice).py()
}

/// Score a predicted RDM (list of rows, ordered as the stack's images).
/// Returns a dict with per_subject_r2, mean_r2, noise_ceiling and
/// normalized_score_percent.
#[pyfunction]
#[pyo3(signature = (predicted, stack, slice = None, ceiling = None))]
fn score<'py>(
    py: Python<'py>,
    predicted: Vec<Vec<f64>>,
    stack: &PyRdmStack,
    slice: Option<usize>,
    ceiling: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let (_, data) = flatten(&predicted)?;
    let rdm = Rdm {
        image_ids: stack.inner.image_ids().to_vec(),
        data,
    };
    let slice = slice.unwrap_or_else(|| stack.inner.midpoint_slice());
    let report = similarity::score_with_ceiling(&rdm, &stack.inner, slice, ceiling).py()?;
    let out = PyDict::new(py);
    out.set_item("mean_r2", report.mean_r2())?;
    out.set_item("per_subject_r2", report.per_subject_r2)?;
    out.set_item("noise_ceiling", report.noise_ceiling)?;
    out.set_item("normalized_score_percent", report.normalized_score_percent)?;
    Ok(out)
}

/// Train a mask. `datasets` is a list of `(FeatureSet, RdmStack)`; each stack's
/// images are looked up by id in its FeatureSet. Returns a dict with the best
/// mask, its epoch and losses, and the per-epoch log as tuples
/// `(epoch, step, train_loss, val_loss, wall_time_s)`.
#[pyfunction]
#[pyo3(signature = (
    datasets, *, epochs = 15, learning_rate = 0.01, batch_size = 40, loss = "l1",
    use_reliability_weights = false, resolution = "per-channel", val_fraction = 0.1, seed = 0,
    meg_gaussian_sampling = false
))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    datasets: Vec<(PyRef<'py, PyFeatureSet>, PyRef<'py, PyRdmStack>)>,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    loss: &str,
    use_reliability_weights: bool,
    resolution: &str,
    val_fraction: f64,
    seed: u64,
    meg_gaussian_sampling: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let config = TrainConfig {
        learning_rate,
        batch_size,
        epochs,
        loss: loss.parse::<LossKind>().py()?,
        use_reliability_weights,
        resolution: parse_resolution(resolution)?,
        val_fraction,
        seed,
        meg_gaussian_sampling,
        ..Default::default()
    };
    let datasets = datasets
        .iter()
        .enumerate()
        .map(|(k, (fs, stack))| Dataset::new(format!("dataset{k}"), &fs.inner, stack.inner.clone()))
        .collect::<hyperagg::error::Result<Vec<_>>>()
        .py()?;
    if datasets.is_empty() {
        return Err(HyperaggError::new_err("no datasets"));
    }
    let (outcome, log) = py.detach(|| training::train(datasets, &config)).py()?;
    let out = PyDict::new(py);
    out.set_item(
        "mask",
        PyMask {
            inner: outcome.mask,
        },
    )?;
    out.set_item("best_epoch", outcome.best_epoch)?;
    out.set_item("train_loss", outcome.train_loss)?;
    out.set_item("val_loss", outcome.val_loss)?;
    out.set_item(
        "final_mask",
        PyMask {
            inner: outcome.final_mask,
        },
    )?;
    let records: Vec<(usize, u64, f64, f64, f64)> = log
        .records
        .iter()
        .map(|r| (r.epoch, r.step, r.train_loss, r.val_loss, r.wall_time))
        .collect();
    out.set_item("log", records)?;
    Ok(out)
}

/// Run the finite-difference gradient check; returns (passed, max relative error).
#[pyfunction]
#[pyo3(signature = (seed = 0, instances = 100))]
fn gradcheck(py: Python<'_>, seed: u64, instances: usize) -> PyResult<(bool, f64)> {
    let report = py
        .detach(|| {
            run_gradcheck(GradcheckOptions {
                seed,
                instances,
                ..Default::default()
            })
        })
        .py()?;
    Ok((report.passed(), report.max_relative_error()))
}

#[pymodule]
fn hyperagg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("HyperaggError", m.py().get_type::<HyperaggError>())?;
    m.add_class::<PyFeatureSet>()?;
    m.add_class::<PyMask>()?;
    m.add_class::<PyRdmStack>()?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(pair_count, m)?)?;
    m.add_function(wrap_pyfunction!(upper_triangle, m)?)?;
    m.add_function(wrap_pyfunction!(reliability_weight, m)?)?;
    m.add_function(wrap_pyfunction!(compute_noise, m)?)?;
    m.add_function(wrap_pyfunction!(read_features, m)?)?;
    m.add_function(wrap_pyfunction!(write_features, m)?)?;
    m.add_function(wrap_pyfunction!(read_rdms, m)?)?;
    m.add_function(wrap_pyfunction!(write_rdms, m)?)?;
    m.add_function(wrap_pyfunction!(load_mask, m)?)?;
    m.add_function(wrap_pyfunction!(predicted_rdm, m)?)?;
    m.add_function(wrap_pyfunction!(noise_ceiling, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
