//! Python module `l1sa`: dataset generation, the fusion model, training,
//! saliency and weight mutual information.

use std::path::PathBuf;

use pyo3::exceptions::{PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ::l1sa::experiment::train_group;
use ::l1sa::interpret;
use ::l1sa::synth::{self, GroupLayout, Label, RobotSpec, SceneKind, SceneSpec};
use ::l1sa::train::{evaluate, TrainConfig};
use ::l1sa::{Error, LayerId, LevelOneConfig, LevelOneParams, Tensor};

fn to_py(e: Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn scene_kind(name: &str) -> PyResult<SceneKind> {
    SceneKind::parse(name).ok_or_else(|| PyValueError::new_err(format!("unknown scene kind {name:?}")))
}

#[pyclass(name = "Dataset", module = "l1sa")]
struct PyDataset {
    inner: synth::Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (kind, samples, seed = 0, height = 64, width = 64))]
    fn generate(kind: &str, samples: usize, seed: u64, height: usize, width: usize) -> PyResult<Self> {
        let spec = SceneSpec::new(scene_kind(kind)?, (height, width), seed);
        let inner = synth::generate_scene(&spec, &RobotSpec::default(), samples).map_err(to_py)?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(PyDataset { inner: synth::read_dataset(&path).map_err(to_py)? })
    }

    /// Writes `manifest.json` and `samples.bin`; returns the manifest hash.
    fn write(&self, path: PathBuf) -> PyResult<String> {
        synth::write_dataset(&self.inner, &path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn image_size(&self) -> (usize, usize) {
        self.inner.image_size
    }

    /// 1 for self, 0 for environment.
    fn labels(&self) -> Vec<usize> {
        self.inner.samples.iter().map(|s| s.label.index()).collect()
    }

    /// `(image CHW floats, proprio floats, label, sample_id)`.
    fn sample(&self, index: usize) -> PyResult<(Vec<f32>, Vec<f32>, usize, u64)> {
        let s = self.inner.samples.get(index).ok_or_else(|| PyIndexError::new_err(index))?;
        Ok((s.image.clone(), s.proprio.clone(), s.label.index(), s.sample_id))
    }

    fn concat(&self, other: PyRef<'_, PyDataset>) -> PyResult<Self> {
        Ok(PyDataset { inner: synth::Dataset::concat(&[&self.inner, &other.inner]).map_err(to_py)? })
    }
}

#[pyclass(name = "Model", module = "l1sa")]
struct PyModel {
    inner: LevelOneParams,
}

impl PyModel {
    fn single(&self, image: Vec<f32>, proprio: Vec<f32>) -> PyResult<(Tensor, Tensor)> {
        let (h, w) = self.inner.config.image_size;
        let img = Tensor::new(&[1, 3, h, w], image).map_err(to_py)?;
        let pro = Tensor::new(&[1, proprio.len()], proprio).map_err(to_py)?;
        Ok((img, pro))
    }
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (seed = 0, height = 64, width = 64))]
    fn new(seed: u64, height: usize, width: usize) -> PyResult<Self> {
        let config = LevelOneConfig { image_size: (height, width), seed, ..LevelOneConfig::default() };
        Ok(PyModel { inner: LevelOneParams::init(config).map_err(to_py)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel { inner: LevelOneParams::load(&path).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn logits(&self, image: Vec<f32>, proprio: Vec<f32>) -> PyResult<Vec<f32>> {
        let (img, pro) = self.single(image, proprio)?;
        Ok(self.inner.forward(&img, &pro).map_err(to_py)?.into_data())
    }

    /// `(label, confidence)` with label 1 for self.
    fn predict(&self, image: Vec<f32>, proprio: Vec<f32>) -> PyResult<(usize, f32)> {
        let (img, pro) = self.single(image, proprio)?;
        let p = self.inner.predict(&img, &pro).map_err(to_py)?[0];
        Ok((p.label.index(), p.confidence))
    }

    /// Pre-fusion activations `(vision 19, proprio 76)`.
    fn feature_split(&self, image: Vec<f32>, proprio: Vec<f32>) -> PyResult<(Vec<f32>, Vec<f32>)> {
        let (img, pro) = self.single(image, proprio)?;
        let (v, p) = self.inner.feature_split(&img, &pro).map_err(to_py)?;
        Ok((v.into_data(), p.into_data()))
    }

    /// Accuracy and `[true][predicted]` counts on a dataset.
    fn evaluate(&self, data: PyRef<'_, PyDataset>) -> PyResult<(f64, [[u64; 2]; 2])> {
        let m = evaluate(&self.inner, &data.inner).map_err(to_py)?;
        Ok((m.accuracy(), m.counts))
    }

    /// Normalised saliency map (row-major `H x W`), predicted label and
    /// whether the raw map was all zero.
    fn saliency(&self, image: Vec<f32>, proprio: Vec<f32>) -> PyResult<(Vec<f32>, usize, bool)> {
        let map = interpret::saliency(&self.inner, &image, &proprio, 0).map_err(to_py)?;
        Ok((map.values, map.predicted.index(), map.zero_map))
    }

    /// Flattened weights of `fc2`, `fc1`, `fc0` or `vision-projection`.
    fn layer_weights(&self, layer: &str) -> PyResult<Vec<f32>> {
        let id = LayerId::parse(layer).ok_or_else(|| PyValueError::new_err(format!("unknown layer {layer:?}")))?;
        Ok(self.inner.layer_weights(id).data().to_vec())
    }
}

/// Trains a fresh model for one group on a pool of its three training scenes.
#[pyfunction]
#[pyo3(signature = (pool, group, seed = 0, epochs = 24, batch_size = 64, learning_rate = 0.001))]
fn train(pool: PyRef<'_, PyDataset>, group: u8, seed: u64, epochs: usize, batch_size: usize, learning_rate: f32) -> PyResult<(PyModel, Vec<f64>)> {
    let layout = GroupLayout::new(group).map_err(to_py)?;
    let model_cfg = LevelOneConfig { image_size: pool.inner.image_size, ..LevelOneConfig::default() };
    let cfg = TrainConfig { epochs, batch_size, learning_rate, ..TrainConfig::default() };
    let (model, report) = train_group(&pool.inner, &layout, &model_cfg, &cfg, seed).map_err(to_py)?;
    Ok((PyModel { inner: model }, report.epochs.iter().map(|e| e.train_loss).collect()))
}

/// `(mi_bits, h_a, h_b)` of two equal-length vectors.
#[pyfunction]
#[pyo3(signature = (a, b, bins = 32))]
fn mutual_information(a: Vec<f32>, b: Vec<f32>, bins: usize) -> PyResult<(f64, f64, f64)> {
    let r = interpret::mutual_information(&a, &b, bins).map_err(to_py)?;
    Ok((r.mi_bits, r.h_a, r.h_b))
}

/// Joint end points per arm for the default robot.
#[pyfunction]
fn forward_kinematics(angles: Vec<f32>) -> PyResult<Vec<Vec<(f32, f32)>>> {
    let chains = synth::forward_kinematics(&RobotSpec::default(), &angles).map_err(to_py)?;
    Ok(chains.iter().map(|c| c.points.iter().map(|p| (p[0], p[1])).collect()).collect())
}

#[pyfunction]
fn label_name(index: usize) -> PyResult<&'static str> {
    Label::from_index(index).map(Label::name).ok_or_else(|| PyValueError::new_err(format!("label index {index}")))
}

#[pymodule]
#[pyo3(name = "l1sa")]
fn l1sa_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(mutual_information, m)?)?;
    m.add_function(wrap_pyfunction!(forward_kinematics, m)?)?;
    m.add_function(wrap_pyfunction!(label_name, m)?)?;
    Ok(())
}
