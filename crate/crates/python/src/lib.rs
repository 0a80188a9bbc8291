//! Python bindings: phantoms, metrics, generator inference, training and augmentation.
//!
//! Images cross the boundary as nested lists (rows of floats, rows of bools).

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use lesionforge::augment::{build_augmented_dataset, synthesize, PipelineConfig};
use lesionforge::data::{load_dataset, BinaryMask2D, Image2D, LoadOptions};
use lesionforge::eval;
use lesionforge::networks::checkpoint::load_generator;
use lesionforge::networks::Generator as CoreGenerator;
use lesionforge::phantom::{gen_dataset, gen_healthy, gen_pathological, PhantomSpec};
use lesionforge::trainer::{train as core_train, TrainConfig};

create_exception!(lesionforge_py, LesionForgeError, PyException);

fn err(e: lesionforge::Error) -> PyErr {
    if e.is_usage() {
        PyValueError::new_err(e.to_string())
    } else {
        LesionForgeError::new_err(e.to_string())
    }
}

fn rows<T: Copy>(rows: &[Vec<T>]) -> PyResult<(usize, usize, Vec<T>)> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if h == 0 || w == 0 || rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("expected a non-empty rectangular list of rows"));
    }
    Ok((h, w, rows.concat()))
}

fn to_image(v: &[Vec<f32>]) -> PyResult<Image2D> {
    let (h, w, px) = rows(v)?;
    Image2D::new(h, w, px).map_err(err)
}

fn to_mask(v: &[Vec<bool>]) -> PyResult<BinaryMask2D> {
    let (h, w, px) = rows(v)?;
    Ok(BinaryMask2D::from_bools(h, w, &px))
}

fn image_rows(img: &Image2D) -> Vec<Vec<f32>> {
    img.pixels().chunks(img.width()).map(<[f32]>::to_vec).collect()
}

fn mask_rows(m: &BinaryMask2D) -> Vec<Vec<bool>> {
    m.pixels().chunks(m.width()).map(|r| r.iter().map(|&p| p != 0).collect()).collect()
}

fn spec_from(seed: u64, size: usize) -> PhantomSpec {
    PhantomSpec {
        seed,
        size,
        ..PhantomSpec::default()
    }
}

/// Writes a phantom dataset (healthy/, pathological/images, pathological/masks, aux/)
/// and returns the subject counts.
#[pyfunction]
#[pyo3(signature = (out, n_healthy, n_pathological, seed=0, size=64))]
fn generate_phantoms(
    out: PathBuf,
    n_healthy: usize,
    n_pathological: usize,
    seed: u64,
    size: usize,
) -> PyResult<(usize, usize)> {
    let ds = gen_dataset(&spec_from(seed, size), n_healthy, n_pathological, &out).map_err(err)?;
    Ok((ds.healthy.len(), ds.pathological.len()))
}

/// One healthy phantom image (rows of floats in [-1, 1]).
#[pyfunction]
#[pyo3(signature = (index, seed=0, size=64))]
fn healthy_phantom(index: u64, seed: u64, size: usize) -> PyResult<Vec<Vec<f32>>> {
    Ok(image_rows(&gen_healthy(&spec_from(seed, size), index).map_err(err)?.image))
}

/// One lesioned phantom as (image, lesion mask).
#[pyfunction]
#[pyo3(signature = (index, seed=0, size=64))]
fn pathological_phantom(index: u64, seed: u64, size: usize) -> PyResult<(Vec<Vec<f32>>, Vec<Vec<bool>>)> {
    let p = gen_pathological(&spec_from(seed, size), index).map_err(err)?;
    Ok((image_rows(&p.image), mask_rows(&p.lesion)))
}

#[pyfunction]
fn dice(a: Vec<Vec<bool>>, b: Vec<Vec<bool>>) -> PyResult<f64> {
    eval::dice(&to_mask(&a)?, &to_mask(&b)?).map_err(err)
}

/// Percentile boundary Hausdorff distance in pixels; None when either mask is empty.
#[pyfunction]
#[pyo3(signature = (a, b, percentile=95.0))]
fn hausdorff(a: Vec<Vec<bool>>, b: Vec<Vec<bool>>, percentile: f64) -> PyResult<Option<f64>> {
    eval::hausdorff(&to_mask(&a)?, &to_mask(&b)?, percentile).map_err(err)
}

/// A trained generator loaded from a `.safetensors` bundle.
#[pyclass(frozen)]
struct Generator {
    inner: CoreGenerator,
}

#[pymethods]
impl Generator {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_generator(&path).map_err(err)?.0,
        })
    }

    /// Returns one dict per sample with `output`, `foreground` and `background_attention`.
    #[pyo3(signature = (image, samples=1, dropout=true, seed=0))]
    fn synthesize<'py>(
        &self,
        py: Python<'py>,
        image: Vec<Vec<f32>>,
        samples: usize,
        dropout: bool,
        seed: u64,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let x = to_image(&image)?;
        let products = synthesize(&self.inner, &x, samples, dropout, seed).map_err(err)?;
        products
            .iter()
            .map(|p| {
                let d = PyDict::new(py);
                d.set_item("output", image_rows(&p.output))?;
                d.set_item("foreground", image_rows(&p.o_fore))?;
                d.set_item("background_attention", image_rows(&p.a_back))?;
                Ok(d)
            })
            .collect()
    }
}

/// Trains on a dataset directory. `config` is a JSON string; missing fields take defaults.
/// Returns the path of the last checkpoint directory.
#[pyfunction]
#[pyo3(signature = (data, out, config="{}", resume=None))]
fn train(data: PathBuf, out: PathBuf, config: &str, resume: Option<PathBuf>) -> PyResult<String> {
    let cfg: TrainConfig = serde_json::from_str(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let opts = LoadOptions {
        target_size: Some(cfg.image_size),
        ..Default::default()
    };
    let ds = load_dataset(&data, &opts).map_err(err)?;
    let outcome = core_train(&cfg, &ds, &out, resume.as_deref()).map_err(err)?;
    Ok(outcome.last_checkpoint.display().to_string())
}

/// Builds an augmented dataset from the healthy cohort of `data`; returns the item count.
#[pyfunction]
#[pyo3(signature = (generator, data, out, k=1, seed=0, size=64))]
fn augment(generator: PathBuf, data: PathBuf, out: PathBuf, k: usize, seed: u64, size: usize) -> PyResult<usize> {
    let gen = load_generator(&generator).map_err(err)?.0;
    let opts = LoadOptions {
        target_size: Some(size),
        ..Default::default()
    };
    let ds = load_dataset(&data, &opts).map_err(err)?;
    let healthy: Vec<_> = ds.healthy_ids.into_iter().zip(ds.healthy).collect();
    let cfg = PipelineConfig {
        k_per_subject: k,
        seed,
        ..Default::default()
    };
    let label = generator.display().to_string();
    let manifest = build_augmented_dataset(&gen, &label, &healthy, &cfg, &out).map_err(err)?;
    Ok(manifest.items.len())
}

#[pymodule]
pub fn lesionforge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LesionForgeError", m.py().get_type::<LesionForgeError>())?;
    m.add_class::<Generator>()?;
    m.add_function(wrap_pyfunction!(generate_phantoms, m)?)?;
    m.add_function(wrap_pyfunction!(healthy_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(pathological_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_function(wrap_pyfunction!(hausdorff, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(augment, m)?)?;
    Ok(())
}
