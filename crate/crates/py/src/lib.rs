//! Python bindings over the core library: the contrastive losses with
//! gradients, the time-lag kernel, event extraction, Spearman correlation,
//! the learning-rate schedule, and synthetic dataset generation.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use mtsc::config::{default_families, ExperimentConfig};
use mtsc::data::io::write_dataset_dir;
use mtsc::data::{split_dataset, Track};
use mtsc::losses::{self, LossConfig, LossMode, LossScope, TimeLagKernel};
use mtsc::selector;
use mtsc::trainer::{lr_schedule, TrainConfig};

fn to_py_err(e: mtsc::Error) -> PyErr {
    match e {
        mtsc::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn kernel(exponent: f64, diagonal: f64) -> TimeLagKernel {
    TimeLagKernel {
        exponent,
        diagonal,
        outer: None,
    }
}

type LossTriple = (f64, Vec<Vec<f64>>, Vec<Vec<f64>>);

#[pyfunction]
#[pyo3(signature = (i, j, exponent = 5.0, diagonal = 1.0))]
fn time_lag_weight(i: usize, j: usize, exponent: f64, diagonal: f64) -> f64 {
    losses::time_lag_weight(i, j, &kernel(exponent, diagonal))
}

#[pyfunction]
fn extract_events(mask: Vec<bool>) -> Vec<(usize, usize)> {
    mtsc::data::extract_events(&mask, 0, Track::Audio)
        .into_iter()
        .map(|e| (e.start, e.end))
        .collect()
}

#[pyfunction]
fn spearman(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    selector::spearman(&xs, &ys).map_err(to_py_err)
}

#[pyfunction]
#[pyo3(signature = (epoch, lr0 = 3e-4, decay_factor = 0.1, decay_every = 10))]
fn learning_rate(epoch: usize, lr0: f64, decay_factor: f64, decay_every: usize) -> f64 {
    let config = TrainConfig {
        lr0,
        decay_factor,
        decay_every,
        ..TrainConfig::default()
    };
    lr_schedule(epoch, &config)
}

/// Returns (loss, grad_z1, grad_z2).
#[pyfunction]
#[pyo3(signature = (z1, z2, tau = 0.5))]
fn nt_xent(z1: Vec<Vec<f64>>, z2: Vec<Vec<f64>>, tau: f64) -> PyResult<LossTriple> {
    let r = losses::nt_xent(&z1, &z2, tau).map_err(to_py_err)?;
    Ok((r.loss, r.grad_phi1, r.grad_phi2))
}

#[pyfunction]
#[pyo3(signature = (z1, z2, tau = 0.5, exponent = 5.0, diagonal = 1.0))]
fn weighted_nt_xent(
    z1: Vec<Vec<f64>>,
    z2: Vec<Vec<f64>>,
    tau: f64,
    exponent: f64,
    diagonal: f64,
) -> PyResult<LossTriple> {
    let r = losses::weighted_nt_xent(&z1, &z2, tau, &kernel(exponent, diagonal))
        .map_err(to_py_err)?;
    Ok((r.loss, r.grad_phi1, r.grad_phi2))
}

#[pyfunction]
#[pyo3(signature = (phi1, phi2, mode = "squared", scope = "full", tau = 0.5, exponent = 5.0, diagonal = 1.0))]
#[allow(clippy::too_many_arguments)]
fn mtsc_loss(
    phi1: Vec<Vec<f64>>,
    phi2: Vec<Vec<f64>>,
    mode: &str,
    scope: &str,
    tau: f64,
    exponent: f64,
    diagonal: f64,
) -> PyResult<LossTriple> {
    let mode = match mode {
        "literal" => LossMode::Literal,
        "squared" => LossMode::Squared,
        other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
    };
    let scope = match scope {
        "full" => LossScope::Full,
        "part" => LossScope::Part,
        other => return Err(PyValueError::new_err(format!("unknown scope {other:?}"))),
    };
    let config = LossConfig {
        temperature: tau,
        mode,
        scope,
        kernel: kernel(exponent, diagonal),
    };
    let r = losses::mtsc(&phi1, &phi2, &config).map_err(to_py_err)?;
    Ok((r.loss, r.grad_phi1, r.grad_phi2))
}

/// Generates the default synthetic dataset into `out_dir` (train/eval/test
/// JSON-lines plus manifest). Returns the split sizes.
#[pyfunction]
#[pyo3(signature = (out_dir, videos = 100, segments = 10, classes = 5, seed = 17))]
fn generate_dataset(
    out_dir: &str,
    videos: usize,
    segments: usize,
    classes: usize,
    seed: u64,
) -> PyResult<(usize, usize, usize)> {
    let mut config = ExperimentConfig::default();
    config.gen.videos = videos;
    config.gen.segments = segments;
    config.gen.classes = classes;
    config.gen.seed = seed;
    config.validate().map_err(to_py_err)?;
    let (fa, fv) =
        default_families(&config.gen, config.selector.fingerprint_scale).map_err(to_py_err)?;
    let dataset = mtsc::datagen::generate_dataset(&config.gen, &fa, &fv).map_err(to_py_err)?;
    let (train, eval, test) =
        split_dataset(&dataset, config.split.fractions, config.split.seed).map_err(to_py_err)?;
    let gen_value = serde_json::to_value(&config.gen)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    write_dataset_dir(
        std::path::Path::new(out_dir),
        &[("train", &train), ("eval", &eval), ("test", &test)],
        config.gen.seed,
        Some(gen_value),
    )
    .map_err(to_py_err)?;
    Ok((train.len(), eval.len(), test.len()))
}

#[pymodule]
fn mtsc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(time_lag_weight, m)?)?;
    m.add_function(wrap_pyfunction!(extract_events, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(learning_rate, m)?)?;
    m.add_function(wrap_pyfunction!(nt_xent, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_nt_xent, m)?)?;
    m.add_function(wrap_pyfunction!(mtsc_loss, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    Ok(())
}
