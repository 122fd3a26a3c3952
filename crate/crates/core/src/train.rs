//! Training: mini-batch loss, Adam optimization, learning-rate schedule, and
//! the end-to-end epoch loop.
//!
//! One epoch samples the propagation operator once via dropout, then walks
//! shuffled mini-batches; every batch rolls each window out to the training
//! horizon, averages the gradients, and takes one Adam step. Per-window
//! forward/backward passes run in parallel, but gradients are reduced in a
//! fixed order so identical seeds give bit-identical parameters.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::autodiff::{DenseMatrix, Graph, NodeId};
use crate::data::Window;
use crate::error::{Error, Result};
use crate::graphcore::{self, Adjacency, PropagationOperator};
use crate::graphlearn::{learn_graph, pairwise_distances, train_gvae, GraphLearnConfig, GvaeConfig};
use crate::model::{self, Checkpoint, ModelConfig, ModelNodes, ModelParams, TENSOR_NAMES};
use crate::util::{csvnum, stream_rng, streams};

/// Adam moment constants (standard defaults).
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Hyperparameters of a training run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub dropout_p: f64,
    pub seed: u64,
    /// Resample the dropout mask for every batch instead of once per epoch.
    pub resample_per_batch: bool,
    /// Write a checkpoint every `k` epochs (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            lr0: 1e-2,
            lr_decay: 0.2,
            decay_every: 25,
            dropout_p: 0.1,
            seed: 1,
            resample_per_batch: false,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::config("batch_size must be at least 1".to_string()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if self.decay_every < 1 {
            return Err(Error::config("decay_every must be at least 1".to_string()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config(format!(
                "dropout_p must satisfy 0 <= p < 1, got {}",
                self.dropout_p
            )));
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(Error::config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        Ok(())
    }
}

/// Learning rate for a 1-based epoch: `lr0 · decay^⌊(epoch−1)/every⌋`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let k = (epoch - 1) / cfg.decay_every;
    cfg.lr0 * cfg.lr_decay.powi(k as i32)
}

/// Adam optimizer state: first/second moments per parameter plus a step
/// counter for bias correction.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AdamState {
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
    step: u64,
}

impl AdamState {
    /// Zero-initialized moments matching the parameter shapes.
    pub fn new(params: &[DenseMatrix]) -> Self {
        let zeros: Vec<DenseMatrix> = params
            .iter()
            .map(|p| DenseMatrix::zeros(p.rows(), p.cols()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update applied in place.
    ///
    /// A non-finite gradient aborts the step before touching any parameter;
    /// parameters are verified finite afterwards.
    pub fn step(
        &mut self,
        params: &mut [DenseMatrix],
        grads: &[DenseMatrix],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::config(format!(
                "adam state holds {} parameters but got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::config(format!("learning rate must be positive, got {lr}")));
        }
        for (k, g) in grads.iter().enumerate() {
            if g.shape() != params[k].shape() {
                return Err(Error::shape("adam_step", params[k].shape(), g.shape()));
            }
            g.check_finite("gradient")
                .map_err(|e| Error::numerical(format!("aborting optimizer step: {e}")))?;
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for k in 0..params.len() {
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let p = params[k].data_mut();
            let g = grads[k].data();
            for i in 0..g.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
            params[k].check_finite("parameter after adam step")?;
        }
        Ok(())
    }
}

/// Tape-level forecast loss: `Σ_i ‖pred_i − target_i‖²_F / (T·n)`.
///
/// `preds` holds one `n×1` node per horizon step; `targets` the matching
/// ground truth. Normalization by `T·n` keeps the scale comparable across
/// datasets and horizons.
pub fn forecast_loss(
    graph: &mut Graph,
    preds: &[NodeId],
    targets: &[DenseMatrix],
) -> Result<NodeId> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::config(format!(
            "loss needs matching non-empty prediction/target lists, got {} vs {}",
            preds.len(),
            targets.len()
        )));
    }
    let t_steps = preds.len();
    let n = targets[0].rows();
    let mut total: Option<NodeId> = None;
    for (&p, target) in preds.iter().zip(targets) {
        if graph.value(p).shape() != target.shape() {
            return Err(Error::shape(
                "forecast_loss",
                graph.value(p).shape(),
                target.shape(),
            ));
        }
        let tconst = graph.constant(target.clone())?;
        let err = graph.sub(p, tconst)?;
        let sq = graph.mul(err, err)?;
        let s = graph.sum(sq)?;
        total = Some(match total {
            Some(acc) => graph.add(acc, s)?,
            None => s,
        });
    }
    let total = total.expect("non-empty");
    graph.scale(total, 1.0 / (t_steps as f64 * n as f64))
}

/// Where the road graph driving propagation comes from.
#[derive(Debug, Clone)]
pub enum GraphSource {
    /// Use this adjacency directly (e.g. a previously learned graph, or the
    /// observed topology itself).
    Precomputed(Adjacency),
    /// Learn the graph here: embed the observed topology, then solve the
    /// convex weight program on the embedding distances.
    Learn {
        gvae: GvaeConfig,
        program: GraphLearnConfig,
    },
}

impl GraphSource {
    fn resolve(&self, obs: &Adjacency, seed: u64) -> Result<Adjacency> {
        match self {
            GraphSource::Precomputed(a) => Ok(a.clone()),
            GraphSource::Learn { gvae, program } => {
                let mut rng = stream_rng(seed, streams::GVAE);
                let emb = train_gvae(obs, gvae, &mut rng)?;
                let z = pairwise_distances(&emb);
                learn_graph(&z, program)
            }
        }
    }
}

/// Per-epoch numbers recorded in the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// NaN when no windows were held out for validation.
    pub val_loss: f64,
    pub wall_ms: f64,
}

/// Side outputs of a training run.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Keep φ at its zero initialization instead of training it.
    pub freeze_phi: bool,
    /// Write one CSV row per epoch here when set.
    pub log_csv: Option<PathBuf>,
    /// Write checkpoints here (overwritten every `checkpoint_every` epochs
    /// and at the end) when set.
    pub checkpoint: Option<PathBuf>,
}

/// A trained model with the graph it was trained on and its loss history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// The adjacency actually used (learned here or passed in precomputed).
    pub map_adjacency: Adjacency,
    pub history: Vec<EpochStats>,
}

/// Index of φ in the canonical tensor order.
const PHI: usize = TENSOR_NAMES.len() - 1;

/// Forward/backward for one window on a fresh tape: returns the loss value
/// and per-tensor gradients in canonical order.
fn window_grad(
    window: &Window,
    base: &PropagationOperator,
    mask: &DenseMatrix,
    tensors: &[DenseMatrix],
    cfg: &ModelConfig,
) -> Result<(f64, Vec<DenseMatrix>)> {
    let n = base.n();
    let mut graph = Graph::new();
    let nodes = ModelNodes::register(&mut graph, n, cfg, tensors, true)?;
    let op = graphcore::operator_node(&mut graph, base, nodes.phi, Some(mask))?;
    let preds = model::rollout(&mut graph, &window.history, op, &nodes, cfg)?;
    let targets: Vec<DenseMatrix> = (0..window.target.rows())
        .map(|i| DenseMatrix::from_vec(n, 1, window.target.row(i).to_vec()))
        .collect::<Result<_>>()?;
    let loss = forecast_loss(&mut graph, &preds, &targets)?;
    graph.backward(loss)?;
    let grads = nodes.ids().iter().map(|&id| graph.grad_of(id)).collect();
    Ok((graph.value(loss).get(0, 0), grads))
}

/// Mean forecast loss over `windows` with the deterministic evaluation
/// operator (no dropout); NaN when `windows` is empty.
fn mean_eval_loss(
    windows: &[Window],
    params: &ModelParams,
    base: &PropagationOperator,
    cfg: &ModelConfig,
) -> Result<f64> {
    if windows.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for w in windows {
        let preds = model::forecast(params, cfg, base, &w.history)?;
        let (t_steps, n) = w.target.shape();
        let mut sq = 0.0;
        for (p, t) in preds.data().iter().zip(w.target.data()) {
            sq += (p - t) * (p - t);
        }
        total += sq / (t_steps as f64 * n as f64);
    }
    Ok(total / windows.len() as f64)
}

/// Runs the full training procedure and returns the final parameters.
///
/// `windows` must all share one history length (= `model_cfg.history_steps`)
/// and one target length (= `model_cfg.horizon_steps`). The last tenth of
/// `windows` is held out for the validation curve; the final evaluation
/// split is handled elsewhere and never enters here.
pub fn train(
    windows: &[Window],
    obs: &Adjacency,
    source: &GraphSource,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if windows.is_empty() {
        return Err(Error::data("no training windows provided".to_string()));
    }
    let n = obs.n();
    for w in windows {
        if w.history.shape() != (model_cfg.history_steps, n) {
            return Err(Error::shape(
                "window history",
                (model_cfg.history_steps, n),
                w.history.shape(),
            ));
        }
        if w.target.shape() != (model_cfg.horizon_steps, n) {
            return Err(Error::shape(
                "window target",
                (model_cfg.horizon_steps, n),
                w.target.shape(),
            ));
        }
    }

    let map_adjacency = source.resolve(obs, cfg.seed)?;
    if map_adjacency.n() != n {
        return Err(Error::config(format!(
            "graph has {} nodes but the dataset has {n} roads",
            map_adjacency.n()
        )));
    }
    let base = graphcore::normalize_with_self_loops(&map_adjacency)?;

    let mut rng_init = stream_rng(cfg.seed, streams::INIT);
    let params = ModelParams::init(n, model_cfg, &mut rng_init)?;
    let mut tensors = params.to_vec();

    let val_count = windows.len() / 10;
    let (train_windows, val_windows) = windows.split_at(windows.len() - val_count);

    let mut rng_dropout = stream_rng(cfg.seed, streams::DROPOUT);
    let mut rng_shuffle = stream_rng(cfg.seed, streams::SHUFFLE);
    let mut adam = AdamState::new(&tensors);
    let mut history: Vec<EpochStats> = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let lr = lr_at(epoch, cfg);
        let mut mask = graphcore::sample_mask(n, cfg.dropout_p, &mut rng_dropout)?;
        let mut order: Vec<usize> = (0..train_windows.len()).collect();
        order.shuffle(&mut rng_shuffle);

        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            if cfg.resample_per_batch {
                mask = graphcore::sample_mask(n, cfg.dropout_p, &mut rng_dropout)?;
            }
            let results: Vec<(f64, Vec<DenseMatrix>)> = batch
                .par_iter()
                .map(|&wi| window_grad(&train_windows[wi], &base, &mask, &tensors, model_cfg))
                .collect::<Result<Vec<_>>>()?;

            let inv = 1.0 / batch.len() as f64;
            let mut grads: Vec<DenseMatrix> = tensors
                .iter()
                .map(|t| DenseMatrix::zeros(t.rows(), t.cols()))
                .collect();
            for (loss, g) in &results {
                loss_sum += loss;
                for (acc, gk) in grads.iter_mut().zip(g) {
                    for (a, b) in acc.data_mut().iter_mut().zip(gk.data()) {
                        *a += b * inv;
                    }
                }
            }
            if opts.freeze_phi {
                let phi = &mut grads[PHI];
                *phi = DenseMatrix::zeros(phi.rows(), phi.cols());
            }
            adam.step(&mut tensors, &grads, lr)?;
        }

        let train_loss = loss_sum / train_windows.len() as f64;
        let epoch_params = ModelParams::from_vec(n, model_cfg, &tensors)?;
        let val_loss = mean_eval_loss(val_windows, &epoch_params, &base, model_cfg)?;
        history.push(EpochStats {
            epoch,
            lr,
            train_loss,
            val_loss,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });

        if let Some(path) = &opts.checkpoint {
            let at_interval = cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0;
            if at_interval || epoch == cfg.epochs {
                Checkpoint::new(
                    model_cfg.clone(),
                    epoch_params,
                    map_adjacency.weights().clone(),
                )?
                .save(path)?;
            }
        }
    }

    let params = ModelParams::from_vec(n, model_cfg, &tensors)?;
    if cfg.epochs == 0 {
        if let Some(path) = &opts.checkpoint {
            Checkpoint::new(
                model_cfg.clone(),
                params.clone(),
                map_adjacency.weights().clone(),
            )?
            .save(path)?;
        }
    }
    if let Some(path) = &opts.log_csv {
        let rows: Vec<[f64; 5]> = history
            .iter()
            .map(|s| [s.epoch as f64, s.lr, s.train_loss, s.val_loss, s.wall_ms])
            .collect();
        csvnum::write_rows(
            path,
            Some("epoch,lr,train_loss,val_loss,wall_ms"),
            rows.iter().map(|r| r.as_slice()),
        )?;
    }

    Ok(TrainOutcome {
        params,
        map_adjacency,
        history,
    })
}
