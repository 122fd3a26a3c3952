//! Python bindings for the forecasting toolkit.
//!
//! Matrices cross the boundary as lists of row lists (`list[list[float]]`);
//! error kinds map onto Python exceptions: configuration/data problems raise
//! `ValueError`, I/O problems raise `OSError`, and numerical failures raise
//! `RuntimeError`.

use std::collections::HashMap;
use std::path::Path;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use stgf_core::autodiff::DenseMatrix;
use stgf_core::data;
use stgf_core::error::Error;
use stgf_core::eval;
use stgf_core::graphcore::{normalize_with_self_loops, Adjacency};
use stgf_core::graphlearn::{self, DistanceMatrix, EmbeddingSet, GraphLearnConfig, GvaeConfig};
use stgf_core::model::{self, Checkpoint};
use stgf_core::util::{stream_rng, streams};

fn err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Config(_) | Error::Data(_) => PyValueError::new_err(msg),
        Error::Io { .. } => PyIOError::new_err(msg),
        Error::Numerical(_) => PyRuntimeError::new_err(msg),
    }
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<DenseMatrix> {
    DenseMatrix::from_rows(&rows).map_err(err)
}

fn to_rows(m: &DenseMatrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// Version of the underlying toolkit.
#[pyfunction]
fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// Train the graph autoencoder on a binary topology and return the
/// deterministic mean embeddings (one row per node).
#[pyfunction]
#[pyo3(signature = (adjacency, epochs = 200, seed = 42))]
fn train_gvae_embeddings(
    adjacency: Vec<Vec<f64>>,
    epochs: usize,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let obs = Adjacency::new(to_matrix(adjacency)?).map_err(err)?;
    let cfg = GvaeConfig {
        epochs,
        ..GvaeConfig::default()
    };
    let mut rng = stream_rng(seed, streams::GVAE);
    let emb = graphlearn::train_gvae(&obs, &cfg, &mut rng).map_err(err)?;
    Ok(to_rows(emb.vectors()))
}

/// Squared pairwise Euclidean distances between embedding rows.
#[pyfunction]
fn pairwise_distances(embeddings: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let emb = EmbeddingSet::new(to_matrix(embeddings)?).map_err(err)?;
    Ok(to_rows(graphlearn::pairwise_distances(&emb).matrix()))
}

/// Solve the smooth-graph program on a distance matrix; returns the learned
/// weighted adjacency (symmetric, nonnegative, zero diagonal).
#[pyfunction]
#[pyo3(signature = (distances, alpha = 1.0, beta = 1.0))]
fn learn_graph(distances: Vec<Vec<f64>>, alpha: f64, beta: f64) -> PyResult<Vec<Vec<f64>>> {
    let z = DistanceMatrix::new(to_matrix(distances)?).map_err(err)?;
    let cfg = GraphLearnConfig {
        alpha,
        beta,
        ..GraphLearnConfig::default()
    };
    let learned = graphlearn::learn_graph(&z, &cfg).map_err(err)?;
    Ok(to_rows(learned.weights()))
}

/// Find the density weight whose learned graph hits `target_density`.
#[pyfunction]
#[pyo3(signature = (distances, alpha = 1.0, target_density = 0.3))]
fn calibrate_beta(distances: Vec<Vec<f64>>, alpha: f64, target_density: f64) -> PyResult<f64> {
    let z = DistanceMatrix::new(to_matrix(distances)?).map_err(err)?;
    graphlearn::calibrate_beta(&z, alpha, target_density).map_err(err)
}

/// The five forecast metrics as a dict: rmse, mae, acc, r2, var.
#[pyfunction]
fn metrics(pred: Vec<Vec<f64>>, truth: Vec<Vec<f64>>) -> PyResult<HashMap<String, f64>> {
    let m = eval::metrics(&to_matrix(pred)?, &to_matrix(truth)?).map_err(err)?;
    Ok(HashMap::from([
        ("rmse".to_string(), m.rmse),
        ("mae".to_string(), m.mae),
        ("acc".to_string(), m.acc),
        ("r2".to_string(), m.r2),
        ("var".to_string(), m.var),
    ]))
}

/// Historical-average baseline: every future step repeats the per-node mean
/// of the history rows.
#[pyfunction]
fn ha_forecast(history: Vec<Vec<f64>>, steps: usize) -> PyResult<Vec<Vec<f64>>> {
    Ok(to_rows(&eval::ha_forecast(&to_matrix(history)?, steps)))
}

/// Load a checkpoint written by `stgf train` and roll the model out from
/// `history` (time × nodes, normalized units). Returns horizon × nodes
/// predictions in the same normalized units.
#[pyfunction]
fn forecast_checkpoint(path: &str, history: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let ckpt = Checkpoint::load(Path::new(path)).map_err(err)?;
    let map_adjacency = Adjacency::new(ckpt.map_adjacency.clone()).map_err(err)?;
    let base = normalize_with_self_loops(&map_adjacency).map_err(err)?;
    let hist = to_matrix(history)?;
    let preds = model::forecast(&ckpt.params, &ckpt.cfg, &base, &hist).map_err(err)?;
    Ok(to_rows(&preds))
}

/// Load a speed CSV and return `(normalized_speeds, max_speed, split_index)`.
#[pyfunction]
#[pyo3(signature = (path, interval_minutes = 15))]
fn load_dataset(path: &str, interval_minutes: usize) -> PyResult<(Vec<Vec<f64>>, f64, usize)> {
    let ds = data::load_speeds(Path::new(path), interval_minutes).map_err(err)?;
    Ok((to_rows(&ds.normalized()), ds.max_speed(), ds.split_index()))
}

#[pymodule]
fn stgf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(version, m)?)?;
    m.add_function(wrap_pyfunction!(train_gvae_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(pairwise_distances, m)?)?;
    m.add_function(wrap_pyfunction!(learn_graph, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_beta, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(ha_forecast, m)?)?;
    m.add_function(wrap_pyfunction!(forecast_checkpoint, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    Ok(())
}
