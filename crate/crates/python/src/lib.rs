//! Python bindings. Images cross the boundary as lists of rows of floats.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use wpp_core::image::{bicubic_upsample as bicubic, extract_patches, subsample_distribution, Image};
use wpp_core::operator::{self as op, ForwardOperator};
use wpp_core::optim::AdamConfig;
use wpp_core::texture::{generate_texture as texture, TextureSpec};
use wpp_core::transport::{self as tr, DualAscentConfig};
use wpp_core::variational::{reconstruct as reconstruct_core, ReconstructionConfig};
use wpp_core::{metrics, WppError};

fn py_err(e: WppError) -> PyErr {
    match e {
        WppError::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(format!("{}: {e}", e.kind())),
    }
}

fn to_image(rows: Vec<Vec<f64>>) -> PyResult<Image> {
    Image::from_rows(&rows).map_err(py_err)
}

/// Strided or Fourier blur-and-downsample operator.
#[pyclass(name = "ForwardOperator", frozen)]
struct PyForwardOperator {
    inner: ForwardOperator,
}

#[pymethods]
impl PyForwardOperator {
    #[staticmethod]
    #[pyo3(signature = (kernel, bias, stride))]
    fn strided(kernel: Vec<Vec<f64>>, bias: f64, stride: usize) -> PyResult<Self> {
        let inner = ForwardOperator::strided(to_image(kernel)?, bias, stride).map_err(py_err)?;
        Ok(PyForwardOperator { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (kernel, bias, target, factor))]
    fn fourier(kernel: Vec<Vec<f64>>, bias: f64, target: (usize, usize), factor: usize) -> PyResult<Self> {
        let inner = ForwardOperator::fourier(to_image(kernel)?, bias, target, factor).map_err(py_err)?;
        Ok(PyForwardOperator { inner })
    }

    fn apply(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.inner.apply(&to_image(x)?).map_err(py_err)?.to_rows())
    }

    fn adjoint(&self, g: Vec<Vec<f64>>, input_dims: (usize, usize)) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.inner.adjoint(&to_image(g)?, input_dims).map_err(py_err)?.to_rows())
    }

    fn output_dims(&self, dims: (usize, usize)) -> PyResult<(usize, usize)> {
        self.inner.output_dims(dims).map_err(py_err)
    }

    #[getter]
    fn stride(&self) -> usize {
        self.inner.stride()
    }

    #[getter]
    fn bias(&self) -> f64 {
        self.inner.bias()
    }
}

#[pyfunction]
fn gaussian_kernel(size: usize, sigma: f64) -> PyResult<Vec<Vec<f64>>> {
    Ok(op::gaussian_kernel(size, sigma).map_err(py_err)?.to_rows())
}

#[pyfunction]
#[pyo3(signature = (y, sigma, seed = 0))]
fn add_noise(y: Vec<Vec<f64>>, sigma: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let out = op::add_noise(&to_image(y)?, &op::NoiseModel { sigma, seed }).map_err(py_err)?;
    Ok(out.to_rows())
}

/// Kernel and bias from a registered (high, low) resolution pair.
#[pyfunction]
fn estimate_operator(hr: Vec<Vec<f64>>, lr: Vec<Vec<f64>>, kernel_size: usize) -> PyResult<(Vec<Vec<f64>>, f64)> {
    let (k, b) = op::estimate_operator(&to_image(hr)?, &to_image(lr)?, kernel_size).map_err(py_err)?;
    Ok((k.to_rows(), b))
}

#[pyfunction]
fn bicubic_upsample(y: Vec<Vec<f64>>, factor: usize) -> PyResult<Vec<Vec<f64>>> {
    Ok(bicubic(&to_image(y)?, factor).map_err(py_err)?.to_rows())
}

#[pyfunction]
fn psnr(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::psnr(&to_image(x)?, &to_image(y)?).map_err(py_err)
}

#[pyfunction]
fn blur_effect(x: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::blur_effect(&to_image(x)?).map_err(py_err)
}

/// `(psnr, blur_effect)` after cropping `margin` pixels.
#[pyfunction]
#[pyo3(signature = (x, truth, margin = metrics::EVAL_MARGIN))]
fn evaluate(x: Vec<Vec<f64>>, truth: Vec<Vec<f64>>, margin: usize) -> PyResult<(f64, f64)> {
    let r = metrics::evaluate(&to_image(x)?, &to_image(truth)?, margin).map_err(py_err)?;
    Ok((r.psnr, r.blur_effect))
}

/// Exact W2² between the patch distributions of two images.
#[pyfunction]
#[pyo3(signature = (a, b, patch_size = 6))]
fn w2_exact(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, patch_size: usize) -> PyResult<f64> {
    let pa = extract_patches(&to_image(a)?, patch_size, patch_size).map_err(py_err)?;
    let pb = extract_patches(&to_image(b)?, patch_size, patch_size).map_err(py_err)?;
    Ok(tr::w2_exact_lp(&pa, &pb).map_err(py_err)?.0)
}

/// Semi-dual W2² estimate and the ascended potential.
#[pyfunction]
#[pyo3(signature = (a, b, patch_size = 6, steps = 20, step_size = 1.0, minibatch = 10000, seed = 0))]
fn w2_semidual(
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    patch_size: usize,
    steps: usize,
    step_size: f64,
    minibatch: usize,
    seed: u64,
) -> PyResult<(f64, Vec<f64>)> {
    let pa = extract_patches(&to_image(a)?, patch_size, patch_size).map_err(py_err)?;
    let pb = extract_patches(&to_image(b)?, patch_size, patch_size).map_err(py_err)?;
    let cfg = DualAscentConfig {
        steps,
        step_size,
        minibatch,
        seed,
        ..DualAscentConfig::default()
    };
    let r = tr::w2_semidual(&pa, &pb, &cfg, None).map_err(py_err)?;
    Ok((r.value, r.psi.values().to_vec()))
}

/// Variational WPP reconstruction; returns the image and the objective trace.
#[pyfunction]
#[pyo3(signature = (y, operator, reference, lam = 12.5, iterations = 200, lr = 0.01,
                    patch_size = 6, ref_subsample = 2000, dual_steps = 20, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn reconstruct(
    y: Vec<Vec<f64>>,
    operator: &PyForwardOperator,
    reference: Vec<Vec<f64>>,
    lam: f64,
    iterations: usize,
    lr: f64,
    patch_size: usize,
    ref_subsample: usize,
    dual_steps: usize,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let all = extract_patches(&to_image(reference)?, patch_size, patch_size).map_err(py_err)?;
    let reference = if ref_subsample == 0 {
        all
    } else {
        subsample_distribution(&all, ref_subsample, 1).map_err(py_err)?
    };
    let d = ReconstructionConfig::default();
    let cfg = ReconstructionConfig {
        lambda: lam,
        outer_iterations: iterations,
        adam: AdamConfig { lr, ..d.adam },
        dual: DualAscentConfig {
            steps: dual_steps,
            seed,
            ..d.dual
        },
        patch: (patch_size, patch_size),
        ..d
    };
    let rec = reconstruct_core(&to_image(y)?, &operator.inner, &reference, &cfg).map_err(py_err)?;
    let trace = rec.trace.iter().map(|r| r.value.total).collect();
    Ok((rec.x.to_rows(), trace))
}

#[pyfunction]
#[pyo3(signature = (rows, cols, seed = 0, cell = 12.0, octaves = 3, sharpness = 6.0))]
fn generate_texture(rows: usize, cols: usize, seed: u64, cell: f64, octaves: usize, sharpness: f64) -> PyResult<Vec<Vec<f64>>> {
    let spec = TextureSpec {
        rows,
        cols,
        cell,
        octaves,
        sharpness,
        seed,
        ..TextureSpec::default()
    };
    Ok(texture(&spec).map_err(py_err)?.to_rows())
}

#[pyfunction]
fn load_image(path: &str) -> PyResult<Vec<Vec<f64>>> {
    Ok(wpp_core::io::load_image(path).map_err(py_err)?.to_rows())
}

#[pyfunction]
fn save_image(img: Vec<Vec<f64>>, path: &str) -> PyResult<()> {
    wpp_core::io::save_image(&to_image(img)?, path).map_err(py_err)
}

#[pymodule]
fn wpp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyForwardOperator>()?;
    m.add_function(wrap_pyfunction!(gaussian_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(add_noise, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_operator, m)?)?;
    m.add_function(wrap_pyfunction!(bicubic_upsample, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(blur_effect, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(w2_exact, m)?)?;
    m.add_function(wrap_pyfunction!(w2_semidual, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(generate_texture, m)?)?;
    m.add_function(wrap_pyfunction!(load_image, m)?)?;
    m.add_function(wrap_pyfunction!(save_image, m)?)?;
    Ok(())
}
