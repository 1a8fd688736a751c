//! Python module `san_py`: tensors, the generator, post-processing,
//! evaluation metrics, synthetic data and training runs.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use san_core::config::Settings;
use san_core::dataset::{self, load_voc_style, SaliencySample};
use san_core::eval::{self, EvalSettings};
use san_core::postproc::{self, PostprocParams};
use san_core::training::{run_training, NoObserver, TrainMode};
use san_core::{checkpoint, GeneratorSpec, Mode, Network, Prng};

fn err(e: san_core::Error) -> PyErr {
    match e {
        san_core::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Dense `(n, c, h, w)` float32 tensor.
#[pyclass(name = "Tensor", module = "san_py", skip_from_py_object)]
#[derive(Clone)]
struct PyTensor {
    inner: san_core::Tensor<f32>,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: (usize, usize, usize, usize), data: Vec<f32>) -> PyResult<Self> {
        let inner = san_core::Tensor::from_vec(shape, data).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn zeros(shape: (usize, usize, usize, usize)) -> Self {
        Self {
            inner: san_core::Tensor::zeros(shape),
        }
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize, usize) {
        let s = self.inner.shape();
        (s.n, s.c, s.h, s.w)
    }

    /// Flat row-major values.
    fn tolist(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn at(&self, n: usize, c: usize, h: usize, w: usize) -> PyResult<f32> {
        let s = self.inner.shape();
        if n >= s.n || c >= s.c || h >= s.h || w >= s.w {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(self.inner.at(n, c, h, w))
    }

    fn sum(&self) -> f32 {
        self.inner.sum()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.shape())
    }
}

/// Image-to-saliency generator network.
#[pyclass(name = "Generator", module = "san_py")]
struct PyGenerator {
    net: Network<f32>,
}

#[pymethods]
impl PyGenerator {
    #[new]
    #[pyo3(signature = (hidden_widths=None, map_dims=9, seed=0))]
    fn new(hidden_widths: Option<Vec<usize>>, map_dims: usize, seed: u64) -> PyResult<Self> {
        let mut spec = GeneratorSpec {
            map_dims,
            ..GeneratorSpec::default()
        };
        if let Some(w) = hidden_widths {
            spec.hidden_widths = w;
        }
        let net = san_core::build_generator(&spec, &mut Prng::new(seed)).map_err(err)?;
        Ok(Self { net })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let net = checkpoint::load_generator(path).map_err(err)?;
        Ok(Self { net })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save_checkpoint(&self.net, path).map_err(err)
    }

    /// Multi-channel maps of an `(n, 3, h, w)` batch, inference mode.
    fn forward(&mut self, images: &PyTensor) -> PyResult<PyTensor> {
        let previous = self.net.mode();
        self.net.set_mode(Mode::Eval);
        let out = self.net.forward(&images.inner);
        self.net.set_mode(previous);
        Ok(PyTensor {
            inner: out.map_err(err)?,
        })
    }

    /// Channel-averaged `(1, 1, h, w)` map of one `(1, 3, h, w)` image.
    fn predict(&mut self, image: &PyTensor) -> PyResult<PyTensor> {
        let maps = self.forward(image)?;
        let inner = san_core::training::average_channels(&maps.inner).map_err(err)?;
        Ok(PyTensor { inner })
    }

    fn parameter_count(&self) -> usize {
        self.net.flat_params().len()
    }
}

#[pyfunction]
fn read_ppm(path: PathBuf) -> PyResult<PyTensor> {
    Ok(PyTensor {
        inner: dataset::read_ppm(path).map_err(err)?,
    })
}

#[pyfunction]
fn read_pgm(path: PathBuf) -> PyResult<PyTensor> {
    Ok(PyTensor {
        inner: dataset::read_pgm(path).map_err(err)?,
    })
}

#[pyfunction]
fn write_pgm(map: &PyTensor, path: PathBuf) -> PyResult<()> {
    dataset::write_pgm(&map.inner, path).map_err(err)
}

/// Synthetic samples as `(id, image, mask, label)` tuples.
#[pyfunction]
#[pyo3(signature = (n, classes=3, size=64, seed=0))]
fn gen_synthetic(
    n: usize,
    classes: usize,
    size: usize,
    seed: u64,
) -> PyResult<Vec<(String, PyTensor, PyTensor, usize)>> {
    let samples =
        dataset::gen_synthetic_dataset(n, classes, size, &mut Prng::new(seed)).map_err(err)?;
    Ok(samples
        .into_iter()
        .map(|s| {
            (
                s.id,
                PyTensor { inner: s.image },
                PyTensor { inner: s.mask },
                s.label,
            )
        })
        .collect())
}

/// Per-pixel SLIC segment ids, row-major.
#[pyfunction]
#[pyo3(signature = (image, k, compactness=10.0, iters=10))]
fn slic(image: &PyTensor, k: usize, compactness: f64, iters: usize) -> PyResult<Vec<usize>> {
    Ok(postproc::slic(&image.inner, k, compactness, iters)
        .map_err(err)?
        .labels)
}

#[pyfunction]
#[pyo3(signature = (image, map, weak_fraction=0.2, slic_k=128, refine_weight=0.5))]
fn postprocess(
    image: &PyTensor,
    map: &PyTensor,
    weak_fraction: f64,
    slic_k: usize,
    refine_weight: f64,
) -> PyResult<PyTensor> {
    let params = PostprocParams {
        weak_fraction,
        slic_k,
        refine_weight,
        ..PostprocParams::default()
    };
    let inner = postproc::postprocess_pipeline(&image.inner, &map.inner, &params).map_err(err)?;
    Ok(PyTensor { inner })
}

#[pyfunction]
fn precision_recall(pred: Vec<bool>, gt: Vec<bool>) -> PyResult<(f64, f64)> {
    eval::precision_recall(&pred, &gt).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (precision, recall, beta=0.3))]
fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    eval::f_beta(precision, recall, beta)
}

/// F_β of one map against a mask with the adaptive threshold.
#[pyfunction]
fn score_map(map: &PyTensor, mask: &PyTensor) -> PyResult<f64> {
    let s =
        eval::score_map("map", &map.inner, &mask.inner, &EvalSettings::default()).map_err(err)?;
    Ok(s.f_beta)
}

/// Mean F_β of a generator checkpoint over a dataset directory.
#[pyfunction]
#[pyo3(signature = (ckpt, data, postprocess=true))]
fn evaluate(ckpt: PathBuf, data: PathBuf, postprocess: bool) -> PyResult<f64> {
    let mut g = checkpoint::load_generator(ckpt).map_err(err)?;
    let (samples, _): (Vec<SaliencySample>, _) = load_voc_style(data, None).map_err(err)?;
    let pp = PostprocParams::default();
    let report = eval::evaluate_dataset(
        &mut g,
        &samples,
        postprocess.then_some(&pp),
        &EvalSettings::default(),
    )
    .map_err(err)?;
    Ok(report.mean_f_beta)
}

/// Train on a dataset directory; returns the per-iteration train F_β.
#[pyfunction]
#[pyo3(signature = (data, out, config=None, mode=None))]
fn train(
    data: PathBuf,
    out: PathBuf,
    config: Option<PathBuf>,
    mode: Option<&str>,
) -> PyResult<Vec<f64>> {
    let mut settings = match config {
        Some(path) => Settings::from_file(path).map_err(err)?,
        None => Settings::default(),
    };
    if let Some(m) = mode {
        settings.train.mode = m.parse::<TrainMode>().map_err(err)?;
    }
    settings.validate().map_err(err)?;
    let (samples, meta) = load_voc_style(&data, None).map_err(err)?;
    settings.echo_into(&out).map_err(err)?;
    let outcome = run_training(
        &settings.train,
        &samples,
        meta.num_classes,
        Some(&out),
        &mut NoObserver,
    )
    .map_err(err)?;
    Ok(outcome
        .log
        .snapshots
        .iter()
        .map(|s| s.train_f_beta)
        .collect())
}

/// `(layer, max relative error, passed)` for every layer kind.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn gradcheck(seed: u64) -> PyResult<Vec<(String, f64, bool)>> {
    Ok(san_core::gradcheck::run_suite(seed)
        .map_err(err)?
        .into_iter()
        .map(|c| (c.name, c.max_rel_error, c.passed))
        .collect())
}

#[pymodule]
fn san_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyGenerator>()?;
    m.add_function(wrap_pyfunction!(read_ppm, m)?)?;
    m.add_function(wrap_pyfunction!(read_pgm, m)?)?;
    m.add_function(wrap_pyfunction!(write_pgm, m)?)?;
    m.add_function(wrap_pyfunction!(gen_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(slic, m)?)?;
    m.add_function(wrap_pyfunction!(postprocess, m)?)?;
    m.add_function(wrap_pyfunction!(precision_recall, m)?)?;
    m.add_function(wrap_pyfunction!(f_beta, m)?)?;
    m.add_function(wrap_pyfunction!(score_map, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
