//! Python bindings: models, datasets, zonotopes, certification, PGD and the
//! federation primitives.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use certfed::adversarial::{self, PgdConfig};
use certfed::attacks::{self, DistillSpec};
use certfed::data::{self, SynthSpec};
use certfed::federation::{self, ClientUpdate};
use certfed::nn::{self, serialize, Arch, TrainConfig};
use certfed::zonotope::{self, CertEpsilon};
use certfed::{Error, Tensor};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::RejectedInput(_) => PyValueError::new_err(e.to_string()),
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for certfed::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn train_cfg(learning_rate: f64, epochs: usize, batch_size: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate,
        epochs,
        batch_size,
        rng_seed: seed,
        ..TrainConfig::default()
    }
}

/// Feed-forward classifier.
#[pyclass(name = "Model", module = "certfed_py", from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: nn::Model,
}

#[pymethods]
impl PyModel {
    /// Builds a named architecture preset with seeded initialisation.
    #[staticmethod]
    #[pyo3(signature = (name, input_shape, num_classes, seed=0))]
    fn preset(name: &str, input_shape: Vec<usize>, num_classes: usize, seed: u64) -> PyResult<Self> {
        let inner = Arch::preset(name, &input_shape, num_classes).py()?.build(seed).py()?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: serialize::load(path).py()?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        serialize::save(&self.inner, path).py()
    }

    fn logits(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check(&x)?;
        Ok(self.inner.logits(&x))
    }

    fn predict(&self, x: Vec<f64>) -> PyResult<usize> {
        self.check(&x)?;
        Ok(self.inner.predict(&x))
    }

    fn params(&self) -> Vec<f64> {
        self.inner.flatten_params()
    }

    fn with_params(&self, params: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.load_params(&params).py()?,
        })
    }

    #[getter]
    fn input_shape(&self) -> Vec<usize> {
        self.inner.input_shape().to_vec()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn hash(&self) -> String {
        serialize::model_hash(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(input_shape={:?}, classes={}, params={})",
            self.inner.input_shape(),
            self.inner.num_classes(),
            self.inner.param_count()
        )
    }
}

impl PyModel {
    fn check(&self, x: &[f64]) -> PyResult<()> {
        if x.len() != self.inner.input_dim() {
            return Err(PyValueError::new_err(format!(
                "expected {} inputs, got {}",
                self.inner.input_dim(),
                x.len()
            )));
        }
        Ok(())
    }
}

/// Labelled images with pixel values in [0, 1].
#[pyclass(name = "Dataset", module = "certfed_py", from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: data::LabeledDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(images: Vec<Vec<f64>>, labels: Vec<usize>, sample_shape: Vec<usize>, num_classes: usize) -> PyResult<Self> {
        let dim: usize = sample_shape.iter().product();
        if let Some(bad) = images.iter().position(|r| r.len() != dim) {
            return Err(PyValueError::new_err(format!("image {bad} does not have {dim} values")));
        }
        let mut shape = vec![images.len()];
        shape.extend(sample_shape);
        let t = Tensor::new(shape, images.concat()).py()?;
        Ok(Self {
            inner: data::LabeledDataset::new("python", t, labels, num_classes).py()?,
        })
    }

    #[staticmethod]
    fn load_idx(images_path: &str, labels_path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: data::load_idx(images_path, labels_path).py()?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (classes, shape, per_class, separation, seed=0, noise=0.1))]
    fn synth(classes: usize, shape: Vec<usize>, per_class: usize, separation: f64, seed: u64, noise: f64) -> PyResult<Self> {
        let spec = SynthSpec {
            classes,
            shape,
            per_class,
            separation,
            noise,
            seed,
        };
        Ok(Self {
            inner: data::synth_dataset(&spec).py()?,
        })
    }

    fn range(&self, start: usize, end: usize) -> PyResult<Self> {
        if start > end || end > self.inner.len() {
            return Err(PyValueError::new_err(format!("bad range {start}..{end}")));
        }
        Ok(Self {
            inner: self.inner.range(start, end, format!("{}[{start}..{end}]", self.inner.name)),
        })
    }

    fn x(&self, i: usize) -> PyResult<Vec<f64>> {
        self.index(i)?;
        Ok(self.inner.x(i).to_vec())
    }

    fn y(&self, i: usize) -> PyResult<usize> {
        self.index(i)?;
        Ok(self.inner.y(i))
    }

    #[getter]
    fn sample_shape(&self) -> Vec<usize> {
        self.inner.sample_shape().to_vec()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

impl PyDataset {
    fn index(&self, i: usize) -> PyResult<()> {
        if i >= self.inner.len() {
            return Err(PyValueError::new_err(format!("index {i} out of range")));
        }
        Ok(())
    }
}

/// Affine form `c + G·eps`, `eps` in [-1, 1]^k.
#[pyclass(name = "Zonotope", module = "certfed_py", from_py_object)]
#[derive(Clone)]
struct PyZonotope {
    inner: zonotope::Zonotope,
}

#[pymethods]
impl PyZonotope {
    /// `rows[j][i]` is the coefficient of symbol `i` in output `j`.
    #[new]
    fn new(center: Vec<f64>, rows: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self {
            inner: zonotope::Zonotope::from_rows(center, &rows).py()?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (x, eps, clip=true))]
    fn linf_ball(x: Vec<f64>, eps: f64, clip: bool) -> PyResult<Self> {
        let e = CertEpsilon::crt(eps).py()?;
        Ok(Self {
            inner: zonotope::from_linf_ball(&x, e, clip.then_some((0.0, 1.0))).py()?,
        })
    }

    /// `weight` is row-major `out x in`.
    fn affine(&self, weight: Vec<f64>, bias: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: zonotope::affine(&self.inner, &weight, &bias).py()?,
        })
    }

    fn relu(&self) -> Self {
        Self {
            inner: zonotope::relu_deepzono(&self.inner),
        }
    }

    fn propagate(&self, model: &PyModel) -> PyResult<Self> {
        Ok(Self {
            inner: zonotope::propagate(&model.inner, &self.inner).py()?,
        })
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let b = self.inner.bounds();
        (b.lower, b.upper)
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.inner.dim()).map(|j| self.inner.row(j)).collect()
    }

    #[getter]
    fn center(&self) -> Vec<f64> {
        self.inner.center().to_vec()
    }

    #[getter]
    fn num_symbols(&self) -> usize {
        self.inner.num_symbols()
    }

    fn cert_loss(&self, label: usize) -> PyResult<f64> {
        zonotope::cert_loss(&self.inner, label).py()
    }
}

/// Certifies the L-infinity ball of radius `eps` around `x` for `label`.
#[pyfunction]
fn certify<'py>(py: Python<'py>, model: &PyModel, x: Vec<f64>, label: usize, eps: f64) -> PyResult<Bound<'py, PyDict>> {
    model.check(&x)?;
    let v = zonotope::certify(&model.inner, &x, label, CertEpsilon::crt(eps).py()?).py()?;
    let d = PyDict::new(py);
    d.set_item("certified", v.certified)?;
    d.set_item("predicted_label", v.predicted_label)?;
    d.set_item("cert_loss", v.cert_loss)?;
    d.set_item("lower", v.logit_bounds.lower)?;
    d.set_item("upper", v.logit_bounds.upper)?;
    Ok(d)
}

/// Returns `(certified_accuracy, mean_cert_loss)` over a dataset.
#[pyfunction]
fn certified_stats(model: &PyModel, data: &PyDataset, eps: f64) -> PyResult<(f64, f64)> {
    let s = zonotope::certified_stats(&model.inner, &data.inner, CertEpsilon::crt(eps).py()?).py()?;
    Ok((s.certified_accuracy, s.mean_cert_loss))
}

#[pyfunction]
fn accuracy(model: &PyModel, data: &PyDataset) -> PyResult<f64> {
    nn::accuracy(&model.inner, &data.inner).py()
}

fn pgd_cfg(eps: f64, steps: usize, temperature: f64, seed: u64) -> PyResult<PgdConfig> {
    Ok(PgdConfig::new(eps).py()?.with_steps(steps).with_temperature(temperature).with_seed(seed))
}

#[pyfunction]
#[pyo3(signature = (model, x, label, eps, steps=40, temperature=1.0, seed=0))]
fn pgd_attack(model: &PyModel, x: Vec<f64>, label: usize, eps: f64, steps: usize, temperature: f64, seed: u64) -> PyResult<Vec<f64>> {
    model.check(&x)?;
    adversarial::pgd_attack(&model.inner, &x, label, &pgd_cfg(eps, steps, temperature, seed)?).py()
}

#[pyfunction]
#[pyo3(signature = (model, data, eps, steps=40, temperature=1.0, seed=0))]
fn adv_accuracy(model: &PyModel, data: &PyDataset, eps: f64, steps: usize, temperature: f64, seed: u64) -> PyResult<f64> {
    adversarial::adv_accuracy(&model.inner, &data.inner, &pgd_cfg(eps, steps, temperature, seed)?).py()
}

#[pyfunction]
#[pyo3(signature = (model, data, learning_rate=0.05, epochs=10, batch_size=32, seed=0))]
fn train(model: &PyModel, data: &PyDataset, learning_rate: f64, epochs: usize, batch_size: usize, seed: u64) -> PyResult<PyModel> {
    let cfg = train_cfg(learning_rate, epochs, batch_size, seed);
    Ok(PyModel {
        inner: nn::train(&model.inner, &data.inner, &cfg).py()?,
    })
}

#[pyfunction]
#[pyo3(signature = (model, data, eps, learning_rate=0.05, epochs=10, batch_size=32, steps=10, seed=0))]
#[allow(clippy::too_many_arguments)]
fn pgd_train(
    model: &PyModel,
    data: &PyDataset,
    eps: f64,
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    steps: usize,
    seed: u64,
) -> PyResult<PyModel> {
    let cfg = train_cfg(learning_rate, epochs, batch_size, seed);
    let pgd = pgd_cfg(eps, steps, 1.0, seed)?;
    Ok(PyModel {
        inner: adversarial::pgd_train(&model.inner, &data.inner, &cfg, &pgd).py()?,
    })
}

/// Defensive distillation; returns the student model.
#[pyfunction]
#[pyo3(signature = (model, data, temperature=100.0, learning_rate=10.0, epochs=10, batch_size=32, seed=0))]
fn distill(
    model: &PyModel,
    data: &PyDataset,
    temperature: f64,
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> PyResult<PyModel> {
    let cfg = train_cfg(learning_rate, epochs, batch_size, seed);
    let spec = DistillSpec {
        temperature,
        teacher_cfg: cfg.clone(),
        student_cfg: cfg,
    };
    Ok(PyModel {
        inner: attacks::distill(&model.inner, &data.inner, &spec).py()?.student,
    })
}

/// Coordinate-wise median of parameter vectors.
#[pyfunction]
fn median_aggregate(updates: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let ups: Vec<ClientUpdate> = updates
        .into_iter()
        .enumerate()
        .map(|(client_id, params)| ClientUpdate {
            client_id,
            params,
            is_malicious: false,
        })
        .collect();
    federation::median_aggregate(&ups).py()
}

/// P[X >= k] for X ~ Hypergeometric(population, marked, draws).
#[pyfunction]
fn hypergeometric_tail(population: u64, marked: u64, draws: u64, k: u64) -> PyResult<f64> {
    federation::hypergeometric_tail(population, marked, draws, k).py()
}

#[pymodule]
fn certfed_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyZonotope>()?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(certified_stats, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(pgd_attack, m)?)?;
    m.add_function(wrap_pyfunction!(adv_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(pgd_train, m)?)?;
    m.add_function(wrap_pyfunction!(distill, m)?)?;
    m.add_function(wrap_pyfunction!(median_aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(hypergeometric_tail, m)?)?;
    Ok(())
}
