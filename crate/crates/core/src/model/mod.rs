//! The traffic forecaster: a 1→hidden projection, a graph-tailored GRU whose
//! dense layers are replaced by graph convolutions with a shared propagation
//! operator, a hidden→1 decoder, and an autoregressive rollout that feeds
//! each prediction back as the next input.
//!
//! All forward functions build onto an [`autodiff::Graph`](crate::autodiff)
//! tape so one backward pass yields gradients for every parameter, including
//! the adjacency correction φ routed through the propagation operator.

use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{DenseMatrix, Graph, NodeId};
use crate::error::{Error, Result};
use crate::graphcore::{self, PropagationOperator};
use crate::util::uniform_symmetric;

/// Activation applied to the reset gate; the conventional choice is the
/// sigmoid, the identity variant is exposed for architecture comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResetGateActivation {
    Sigmoid,
    Identity,
}

impl FromStr for ResetGateActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(ResetGateActivation::Sigmoid),
            "identity" => Ok(ResetGateActivation::Identity),
            other => Err(Error::config(format!(
                "unknown reset-gate activation {other:?}; expected \"sigmoid\" or \"identity\""
            ))),
        }
    }
}

/// Architecture and rollout settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    /// GRU hidden width.
    pub hidden: usize,
    /// Dropout probability applied to the propagation operator in training.
    pub dropout_p: f64,
    /// Activation of the reset gate.
    pub reset_gate_activation: ResetGateActivation,
    /// Number of future steps T predicted per window.
    pub horizon_steps: usize,
    /// Number of observed steps t fed in before predicting.
    pub history_steps: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 64,
            dropout_p: 0.1,
            reset_gate_activation: ResetGateActivation::Sigmoid,
            horizon_steps: 1,
            history_steps: 4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::config("hidden size must be positive".to_string()));
        }
        graphcore::check_dropout_p(self.dropout_p)?;
        if self.horizon_steps == 0 {
            return Err(Error::config("horizon_steps must be at least 1".to_string()));
        }
        if self.history_steps == 0 {
            return Err(Error::config("history_steps must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// Names of the trainable tensors in canonical order. Every slice of
/// parameter matrices handed to the optimizer uses this order.
pub const TENSOR_NAMES: [&str; 11] = [
    "w_f", "b_f", "w_u", "b_u", "w_r", "b_r", "w_c", "b_c", "w_dec", "b_dec", "phi",
];

/// All trainable state of one model instance.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelParams {
    /// Projection weight, 1×hidden.
    pub w_f: DenseMatrix,
    /// Projection bias, 1×hidden.
    pub b_f: DenseMatrix,
    /// Update-gate weight, 2·hidden×hidden.
    pub w_u: DenseMatrix,
    /// Update-gate bias, 1×hidden.
    pub b_u: DenseMatrix,
    /// Reset-gate weight, 2·hidden×hidden.
    pub w_r: DenseMatrix,
    /// Reset-gate bias, 1×hidden.
    pub b_r: DenseMatrix,
    /// Candidate weight, 2·hidden×hidden.
    pub w_c: DenseMatrix,
    /// Candidate bias, 1×hidden.
    pub b_c: DenseMatrix,
    /// Decoder weight, hidden×1.
    pub w_dec: DenseMatrix,
    /// Decoder bias, 1×1.
    pub b_dec: DenseMatrix,
    /// Additive correction to the propagation operator, n×n.
    pub phi: DenseMatrix,
}

impl ModelParams {
    /// Fresh parameters: every layer drawn uniformly in ±√(1/fan_in)
    /// (the standard recurrent-layer default), φ at zero so the initial
    /// propagation operator equals its base.
    pub fn init<R: Rng + ?Sized>(n: usize, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if n == 0 {
            return Err(Error::config("model needs at least one node".to_string()));
        }
        let h = cfg.hidden;
        let proj_bound = 1.0;
        let gru_bound = (1.0 / (2 * h) as f64).sqrt();
        let dec_bound = (1.0 / h as f64).sqrt();
        let mut draw = |rows: usize, cols: usize, bound: f64| {
            let data: Vec<f64> = (0..rows * cols)
                .map(|_| uniform_symmetric(rng, bound))
                .collect();
            DenseMatrix::from_vec(rows, cols, data)
        };
        Ok(ModelParams {
            w_f: draw(1, h, proj_bound)?,
            b_f: draw(1, h, proj_bound)?,
            w_u: draw(2 * h, h, gru_bound)?,
            b_u: draw(1, h, gru_bound)?,
            w_r: draw(2 * h, h, gru_bound)?,
            b_r: draw(1, h, gru_bound)?,
            w_c: draw(2 * h, h, gru_bound)?,
            b_c: draw(1, h, gru_bound)?,
            w_dec: draw(h, 1, dec_bound)?,
            b_dec: draw(1, 1, dec_bound)?,
            phi: DenseMatrix::zeros(n, n),
        })
    }

    /// All-zero parameters (useful for the closed-form pin tests).
    pub fn zeros(n: usize, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        Ok(ModelParams {
            w_f: DenseMatrix::zeros(1, h),
            b_f: DenseMatrix::zeros(1, h),
            w_u: DenseMatrix::zeros(2 * h, h),
            b_u: DenseMatrix::zeros(1, h),
            w_r: DenseMatrix::zeros(2 * h, h),
            b_r: DenseMatrix::zeros(1, h),
            w_c: DenseMatrix::zeros(2 * h, h),
            b_c: DenseMatrix::zeros(1, h),
            w_dec: DenseMatrix::zeros(h, 1),
            b_dec: DenseMatrix::zeros(1, 1),
            phi: DenseMatrix::zeros(n, n),
        })
    }

    /// Number of graph nodes this instance is shaped for.
    pub fn n(&self) -> usize {
        self.phi.shape().0
    }

    /// Hidden width encoded in the parameter shapes.
    pub fn hidden(&self) -> usize {
        self.w_f.shape().1
    }

    /// Clones the tensors into the canonical optimizer order
    /// (see [`TENSOR_NAMES`]).
    pub fn to_vec(&self) -> Vec<DenseMatrix> {
        vec![
            self.w_f.clone(),
            self.b_f.clone(),
            self.w_u.clone(),
            self.b_u.clone(),
            self.w_r.clone(),
            self.b_r.clone(),
            self.w_c.clone(),
            self.b_c.clone(),
            self.w_dec.clone(),
            self.b_dec.clone(),
            self.phi.clone(),
        ]
    }

    /// Rebuilds parameters from tensors in canonical order, checking shapes.
    pub fn from_vec(n: usize, cfg: &ModelConfig, tensors: &[DenseMatrix]) -> Result<Self> {
        if tensors.len() != TENSOR_NAMES.len() {
            return Err(Error::config(format!(
                "expected {} parameter tensors, got {}",
                TENSOR_NAMES.len(),
                tensors.len()
            )));
        }
        let params = ModelParams {
            w_f: tensors[0].clone(),
            b_f: tensors[1].clone(),
            w_u: tensors[2].clone(),
            b_u: tensors[3].clone(),
            w_r: tensors[4].clone(),
            b_r: tensors[5].clone(),
            w_c: tensors[6].clone(),
            b_c: tensors[7].clone(),
            w_dec: tensors[8].clone(),
            b_dec: tensors[9].clone(),
            phi: tensors[10].clone(),
        };
        params.validate(n, cfg)?;
        Ok(params)
    }

    /// Checks every tensor against the shapes implied by `n` and `cfg` and
    /// requires all entries finite.
    pub fn validate(&self, n: usize, cfg: &ModelConfig) -> Result<()> {
        cfg.validate()?;
        let h = cfg.hidden;
        let expected: [(&str, &DenseMatrix, (usize, usize)); 11] = [
            ("w_f", &self.w_f, (1, h)),
            ("b_f", &self.b_f, (1, h)),
            ("w_u", &self.w_u, (2 * h, h)),
            ("b_u", &self.b_u, (1, h)),
            ("w_r", &self.w_r, (2 * h, h)),
            ("b_r", &self.b_r, (1, h)),
            ("w_c", &self.w_c, (2 * h, h)),
            ("b_c", &self.b_c, (1, h)),
            ("w_dec", &self.w_dec, (h, 1)),
            ("b_dec", &self.b_dec, (1, 1)),
            ("phi", &self.phi, (n, n)),
        ];
        for (name, tensor, shape) in expected {
            if tensor.shape() != shape {
                return Err(Error::config(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    tensor.shape(),
                    shape
                )));
            }
            tensor.check_finite(name)?;
        }
        Ok(())
    }
}

/// Tape handles of one registration of [`ModelParams`] onto a graph.
#[derive(Debug, Clone, Copy)]
pub struct ModelNodes {
    pub w_f: NodeId,
    pub b_f: NodeId,
    pub w_u: NodeId,
    pub b_u: NodeId,
    pub w_r: NodeId,
    pub b_r: NodeId,
    pub w_c: NodeId,
    pub b_c: NodeId,
    pub w_dec: NodeId,
    pub b_dec: NodeId,
    pub phi: NodeId,
}

impl ModelNodes {
    /// Puts parameter tensors (canonical order) onto the tape, as trainable
    /// leaves or as constants for inference.
    pub fn register(
        graph: &mut Graph,
        n: usize,
        cfg: &ModelConfig,
        tensors: &[DenseMatrix],
        trainable: bool,
    ) -> Result<Self> {
        ModelParams::from_vec(n, cfg, tensors)?;
        let mut ids = Vec::with_capacity(TENSOR_NAMES.len());
        for tensor in tensors {
            ids.push(if trainable {
                graph.param(tensor.clone())?
            } else {
                graph.constant(tensor.clone())?
            });
        }
        Ok(ModelNodes {
            w_f: ids[0],
            b_f: ids[1],
            w_u: ids[2],
            b_u: ids[3],
            w_r: ids[4],
            b_r: ids[5],
            w_c: ids[6],
            b_c: ids[7],
            w_dec: ids[8],
            b_dec: ids[9],
            phi: ids[10],
        })
    }

    /// Node ids in the canonical tensor order (see [`TENSOR_NAMES`]).
    pub fn ids(&self) -> [NodeId; 11] {
        [
            self.w_f, self.b_f, self.w_u, self.b_u, self.w_r, self.b_r, self.w_c, self.b_c,
            self.w_dec, self.b_dec, self.phi,
        ]
    }
}

/// Projects n×1 speeds into n×hidden features: L = x·W_f + b_f.
pub fn project(graph: &mut Graph, x: NodeId, m: &ModelNodes) -> Result<NodeId> {
    let lin = graph.matmul(x, m.w_f)?;
    graph.add_row_bias(lin, m.b_f)
}

/// One step of the graph-tailored GRU. With the shared graph convolution
/// g(W, b) = op·concat(·,·)·W + b:
///
/// ```text
/// u = σ(g over [L, H]; W_u, b_u)
/// r = act_r(g over [L, H]; W_r, b_r)
/// n = tanh(g over [L, r⊙H]; W_c, b_c)
/// H⁺ = u⊙H + (1−u)⊙n
/// ```
pub fn gru_step(
    graph: &mut Graph,
    l: NodeId,
    h: NodeId,
    op: NodeId,
    m: &ModelNodes,
    cfg: &ModelConfig,
) -> Result<NodeId> {
    let lh = graph.concat_cols(l, h)?;
    let conv_lh = graph.matmul(op, lh)?;

    let u_lin = graph.matmul(conv_lh, m.w_u)?;
    let u_pre = graph.add_row_bias(u_lin, m.b_u)?;
    let u = graph.sigmoid(u_pre)?;

    let r_lin = graph.matmul(conv_lh, m.w_r)?;
    let r_pre = graph.add_row_bias(r_lin, m.b_r)?;
    let r = match cfg.reset_gate_activation {
        ResetGateActivation::Sigmoid => graph.sigmoid(r_pre)?,
        ResetGateActivation::Identity => r_pre,
    };

    let rh = graph.mul(r, h)?;
    let lrh = graph.concat_cols(l, rh)?;
    let conv_lrh = graph.matmul(op, lrh)?;
    let n_lin = graph.matmul(conv_lrh, m.w_c)?;
    let n_pre = graph.add_row_bias(n_lin, m.b_c)?;
    let n = graph.tanh(n_pre)?;

    let keep = graph.mul(u, h)?;
    let gate = graph.one_minus(u)?;
    let fresh = graph.mul(gate, n)?;
    graph.add(keep, fresh)
}

/// Maps n×hidden features back to n×1 speeds: X = H·W_dec + b_dec.
pub fn decode(graph: &mut Graph, h: NodeId, m: &ModelNodes) -> Result<NodeId> {
    let lin = graph.matmul(h, m.w_dec)?;
    graph.add_row_bias(lin, m.b_dec)
}

/// Autoregressive multi-horizon forecast on the tape. Feeds the t observed
/// steps (rows of `history`, oldest first) through the GRU from H₀ = 0,
/// decodes the hidden state after the last observed step into the first
/// prediction, then feeds each prediction back in as the next input. Returns
/// the T = `cfg.horizon_steps` prediction nodes (each n×1), all
/// differentiable through the feedback path.
pub fn rollout(
    graph: &mut Graph,
    history: &DenseMatrix,
    op: NodeId,
    m: &ModelNodes,
    cfg: &ModelConfig,
) -> Result<Vec<NodeId>> {
    let (t, n) = history.shape();
    if t == 0 {
        return Err(Error::config("rollout needs at least one history step".to_string()));
    }
    let op_n = graph.value(op).shape().0;
    if n != op_n {
        return Err(Error::config(format!(
            "history has {n} nodes per step but the propagation operator is {op_n}x{op_n}"
        )));
    }
    history.check_finite("rollout history")?;

    let mut h = graph.constant(DenseMatrix::zeros(n, cfg.hidden))?;
    for step in 0..t {
        let col: Vec<f64> = history.row(step).to_vec();
        let x = graph.constant(DenseMatrix::from_vec(n, 1, col)?)?;
        let l = project(graph, x, m)?;
        h = gru_step(graph, l, h, op, m, cfg)?;
    }

    let mut preds = Vec::with_capacity(cfg.horizon_steps);
    let mut pred = decode(graph, h, m)?;
    preds.push(pred);
    for _ in 1..cfg.horizon_steps {
        let l = project(graph, pred, m)?;
        h = gru_step(graph, l, h, op, m, cfg)?;
        pred = decode(graph, h, m)?;
        preds.push(pred);
    }
    Ok(preds)
}

/// Stacks the values of rollout prediction nodes into a T×n matrix
/// (row i = horizon step i+1).
pub fn collect_predictions(graph: &Graph, preds: &[NodeId]) -> Result<DenseMatrix> {
    let rows: Vec<Vec<f64>> = preds
        .iter()
        .map(|&p| graph.value(p).data().to_vec())
        .collect();
    DenseMatrix::from_rows(&rows)
}

/// Deterministic inference: builds a throwaway tape with constant
/// parameters, applies the correction φ to the base operator without
/// dropout, and returns the T×n predictions.
pub fn forecast(
    params: &ModelParams,
    cfg: &ModelConfig,
    base: &PropagationOperator,
    history: &DenseMatrix,
) -> Result<DenseMatrix> {
    let n = base.n();
    params.validate(n, cfg)?;
    let tensors = params.to_vec();
    let mut graph = Graph::new();
    let nodes = ModelNodes::register(&mut graph, n, cfg, &tensors, false)?;
    let op = graphcore::operator_node(&mut graph, base, nodes.phi, None)?;
    let preds = rollout(&mut graph, history, op, &nodes, cfg)?;
    collect_predictions(&graph, &preds)
}

/// Format tag written into every checkpoint.
pub const CHECKPOINT_VERSION: &str = "stgf-checkpoint-v1";

/// Self-describing snapshot of a trained model: config, every parameter
/// tensor by name, and the MAP adjacency the propagation operator was built
/// from. Round-trips bit-exactly.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Checkpoint {
    pub version: String,
    pub cfg: ModelConfig,
    pub params: ModelParams,
    pub map_adjacency: DenseMatrix,
}

impl Checkpoint {
    pub fn new(cfg: ModelConfig, params: ModelParams, map_adjacency: DenseMatrix) -> Result<Self> {
        let n = map_adjacency.shape().0;
        if map_adjacency.shape() != (n, n) {
            return Err(Error::config(format!(
                "MAP adjacency must be square, got {:?}",
                map_adjacency.shape()
            )));
        }
        params.validate(n, &cfg)?;
        Ok(Checkpoint {
            version: CHECKPOINT_VERSION.to_string(),
            cfg,
            params,
            map_adjacency,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let writer = BufWriter::new(file);
        serde_json::to_writer(writer, self)
            .map_err(|e| Error::data(format!("cannot encode checkpoint {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let ckpt: Checkpoint = serde_json::from_reader(reader)
            .map_err(|e| Error::data(format!("cannot parse checkpoint {}: {e}", path.display())))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::data(format!(
                "checkpoint {} has version {:?}, this build reads {:?}",
                path.display(),
                ckpt.version,
                CHECKPOINT_VERSION
            )));
        }
        let n = ckpt.map_adjacency.shape().0;
        ckpt.params.validate(n, &ckpt.cfg)?;
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, sigmoid_scalar};
    use crate::graphcore::Adjacency;
    use crate::train::forecast_loss;
    use crate::util::stream_rng;

    fn small_cfg(hidden: usize) -> ModelConfig {
        ModelConfig {
            hidden,
            dropout_p: 0.0,
            reset_gate_activation: ResetGateActivation::Sigmoid,
            horizon_steps: 1,
            history_steps: 1,
        }
    }

    fn identity_op(n: usize) -> PropagationOperator {
        PropagationOperator::new(DenseMatrix::identity(n)).unwrap()
    }

    fn register(
        graph: &mut Graph,
        params: &ModelParams,
        cfg: &ModelConfig,
        trainable: bool,
    ) -> ModelNodes {
        ModelNodes::register(graph, params.n(), cfg, &params.to_vec(), trainable).unwrap()
    }

    #[test]
    fn projection_pins() {
        let cfg = small_cfg(4);
        let mut params = ModelParams::zeros(3, &cfg).unwrap();

        // Zero parameters → zero features.
        let mut g = Graph::new();
        let m = register(&mut g, &params, &cfg, false);
        let x = g
            .constant(DenseMatrix::from_vec(3, 1, vec![0.2, 0.5, 0.9]).unwrap())
            .unwrap();
        let l = project(&mut g, x, &m).unwrap();
        assert_eq!(g.value(l), &DenseMatrix::zeros(3, 4));

        // Zero input, bias c → every row equals c.
        params.b_f = DenseMatrix::from_vec(1, 4, vec![0.1, -0.2, 0.3, 0.7]).unwrap();
        let mut g = Graph::new();
        let m = register(&mut g, &params, &cfg, false);
        let x = g.constant(DenseMatrix::zeros(3, 1)).unwrap();
        let l = project(&mut g, x, &m).unwrap();
        for i in 0..3 {
            assert_eq!(g.value(l).row(i), params.b_f.row(0));
        }

        // Single road, W_f = [1, 0, 0, 0], x = 0.5 → L = [0.5, 0, 0, 0].
        let mut params = ModelParams::zeros(1, &cfg).unwrap();
        params.w_f = DenseMatrix::from_vec(1, 4, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let mut g = Graph::new();
        let m = register(&mut g, &params, &cfg, false);
        let x = g.constant(DenseMatrix::filled(1, 1, 0.5)).unwrap();
        let l = project(&mut g, x, &m).unwrap();
        assert_eq!(g.value(l).data(), &[0.5, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn gru_zero_parameters_halve_the_hidden_state() {
        let cfg = small_cfg(3);
        let params = ModelParams::zeros(2, &cfg).unwrap();
        let mut g = Graph::new();
        let m = register(&mut g, &params, &cfg, false);
        let op = g.constant(DenseMatrix::identity(2)).unwrap();
        let h0 =
            DenseMatrix::from_vec(2, 3, vec![0.4, -0.6, 1.0, 0.0, 0.2, -0.8]).unwrap();
        let l = g.constant(DenseMatrix::zeros(2, 3)).unwrap();
        let h = g.constant(h0.clone()).unwrap();
        let h1 = gru_step(&mut g, l, h, op, &m, &cfg).unwrap();
        // u = σ(0) = 0.5, n = tanh(0) = 0 ⇒ H⁺ = 0.5·H.
        for (out, inp) in g.value(h1).data().iter().zip(h0.data()) {
            assert!((out - 0.5 * inp).abs() < 1e-15);
        }
    }

    #[test]
    fn gru_candidate_bias_closed_form() {
        // H = 0, all weights zero, b_c = c ⇒ H⁺ = 0.5·tanh(c) entrywise.
        let cfg = small_cfg(3);
        let mut params = ModelParams::zeros(2, &cfg).unwrap();
        params.b_c = DenseMatrix::from_vec(1, 3, vec![0.3, -1.2, 2.0]).unwrap();
        let mut g = Graph::new();
        let m = register(&mut g, &params, &cfg, false);
        let op = g.constant(DenseMatrix::identity(2)).unwrap();
        let l = g.constant(DenseMatrix::zeros(2, 3)).unwrap();
        let h = g.constant(DenseMatrix::zeros(2, 3)).unwrap();
        let h1 = gru_step(&mut g, l, h, op, &m, &cfg).unwrap();
        for i in 0..2 {
            for (j, &c) in [0.3f64, -1.2, 2.0].iter().enumerate() {
                let expect = 0.5 * c.tanh();
                assert!((g.value(h1).get(i, j) - expect).abs() < 1e-15);
            }
        }
    }

    /// Plain per-node GRU computed with explicit scalar loops, independent of
    /// the autodiff stack.
    fn plain_gru_reference(
        l: &DenseMatrix,
        h: &DenseMatrix,
        params: &ModelParams,
        identity_reset: bool,
    ) -> DenseMatrix {
        let (n, hid) = h.shape();
        let cat = |row: usize, k: usize| -> f64 {
            if k < hid {
                l.get(row, k)
            } else {
                h.get(row, k - hid)
            }
        };
        let mut out = DenseMatrix::zeros(n, hid);
        for row in 0..n {
            let mut u = vec![0.0; hid];
            let mut r = vec![0.0; hid];
            for j in 0..hid {
                let mut su = params.b_u.get(0, j);
                let mut sr = params.b_r.get(0, j);
                for k in 0..2 * hid {
                    su += cat(row, k) * params.w_u.get(k, j);
                    sr += cat(row, k) * params.w_r.get(k, j);
                }
                u[j] = sigmoid_scalar(su);
                r[j] = if identity_reset { sr } else { sigmoid_scalar(sr) };
            }
            for j in 0..hid {
                let mut sn = params.b_c.get(0, j);
                for k in 0..2 * hid {
                    let x = if k < hid {
                        l.get(row, k)
                    } else {
                        r[k - hid] * h.get(row, k - hid)
                    };
                    sn += x * params.w_c.get(k, j);
                }
                let nj = sn.tanh();
                out.set(row, j, u[j] * h.get(row, j) + (1.0 - u[j]) * nj);
            }
        }
        out
    }

    #[test]
    fn identity_operator_reduces_to_a_plain_gru() {
        let mut rng = stream_rng(40, "model-gru-oracle");
        for identity_reset in [false, true] {
            let mut cfg = small_cfg(5);
            cfg.reset_gate_activation = if identity_reset {
                ResetGateActivation::Identity
            } else {
                ResetGateActivation::Sigmoid
            };
            let params = ModelParams::init(3, &cfg, &mut rng).unwrap();
            let l_mat = DenseMatrix::from_vec(
                3,
                5,
                (0..15).map(|_| uniform_symmetric(&mut rng, 1.0)).collect(),
            )
            .unwrap();
            let h_mat = DenseMatrix::from_vec(
                3,
                5,
                (0..15).map(|_| uniform_symmetric(&mut rng, 1.0)).collect(),
            )
            .unwrap();

            let mut g = Graph::new();
            let m = register(&mut g, &params, &cfg, false);
            let op = g.constant(DenseMatrix::identity(3)).unwrap();
            let l = g.constant(l_mat.clone()).unwrap();
            let h = g.constant(h_mat.clone()).unwrap();
            let h1 = gru_step(&mut g, l, h, op, &m, &cfg).unwrap();

            let reference = plain_gru_reference(&l_mat, &h_mat, &params, identity_reset);
            for (a, b) in g.value(h1).data().iter().zip(reference.data()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn identity_operator_keeps_nodes_independent() {
        let mut rng = stream_rng(41, "model-independence");
        let cfg = small_cfg(4);
        let params = ModelParams::init(3, &cfg, &mut rng).unwrap();
        let history =
            DenseMatrix::from_vec(2, 3, vec![0.1, 0.5, 0.9, 0.3, 0.7, 0.2]).unwrap();
        let mut bumped = history.clone();
        bumped.set(0, 2, 0.99);
        bumped.set(1, 2, 0.01);

        let run = |hist: &DenseMatrix| -> DenseMatrix {
            forecast(&params, &cfg, &identity_op(3), hist).unwrap()
        };
        let base = run(&history);
        let after = run(&bumped);
        // Only node 2's input changed; with op = I nothing mixes across
        // nodes, so nodes 0 and 1 predict identically.
        assert_eq!(base.get(0, 0), after.get(0, 0));
        assert_eq!(base.get(0, 1), after.get(0, 1));
        assert_ne!(base.get(0, 2), after.get(0, 2));
    }

    #[test]
    fn decoder_pins() {
        let cfg = small_cfg(4);
        let mut params = ModelParams::zeros(3, &cfg).unwrap();
        params.b_dec = DenseMatrix::filled(1, 1, 0.3);
        let mut g = Graph::new();
        let m = register(&mut g, &params, &cfg, false);
        let h = g
            .constant(DenseMatrix::from_vec(3, 4, (0..12).map(|i| i as f64).collect()).unwrap())
            .unwrap();
        let out = decode(&mut g, h, &m).unwrap();
        assert_eq!(g.value(out).data(), &[0.3, 0.3, 0.3]);

        // One-hot row times a column of ones picks out 1 + bias.
        params.w_dec = DenseMatrix::filled(4, 1, 1.0);
        params.b_dec = DenseMatrix::filled(1, 1, -0.1);
        let mut g = Graph::new();
        let m = register(&mut g, &params, &cfg, false);
        let h = g
            .constant(DenseMatrix::from_vec(1, 4, vec![0.0, 1.0, 0.0, 0.0]).unwrap())
            .unwrap();
        let out = decode(&mut g, h, &m).unwrap();
        assert!((g.value(out).get(0, 0) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn projection_gru_decode_chain_gradient_check() {
        let mut rng = stream_rng(42, "model-chain-gradcheck");
        let cfg = small_cfg(4);
        let n = 3;
        let init = ModelParams::init(n, &cfg, &mut rng).unwrap();
        let tensors = init.to_vec();
        let adj = {
            let mut a = DenseMatrix::zeros(n, n);
            a.set(0, 1, 1.0);
            a.set(1, 0, 1.0);
            a.set(1, 2, 1.0);
            a.set(2, 1, 1.0);
            Adjacency::new(a).unwrap()
        };
        let base = graphcore::normalize_with_self_loops(&adj).unwrap();
        let x_mat = DenseMatrix::from_vec(n, 1, vec![0.2, 0.8, 0.5]).unwrap();

        let cfg2 = cfg.clone();
        let max_err = grad_check(
            move |g, ids| {
                let m = ModelNodes {
                    w_f: ids[0],
                    b_f: ids[1],
                    w_u: ids[2],
                    b_u: ids[3],
                    w_r: ids[4],
                    b_r: ids[5],
                    w_c: ids[6],
                    b_c: ids[7],
                    w_dec: ids[8],
                    b_dec: ids[9],
                    phi: ids[10],
                };
                let op = graphcore::operator_node(g, &base, m.phi, None)?;
                let x = g.constant(x_mat.clone())?;
                let l = project(g, x, &m)?;
                let h0 = g.constant(DenseMatrix::zeros(n, cfg2.hidden))?;
                let h1 = gru_step(g, l, h0, op, &m, &cfg2)?;
                let out = decode(g, h1, &m)?;
                let sq = g.mul(out, out)?;
                g.sum(sq)
            },
            &tensors,
            1e-5,
        )
        .unwrap();
        assert!(max_err < 1e-4, "max relative gradient error {max_err}");
    }

    #[test]
    fn full_model_gradient_check_on_four_nodes() {
        let mut rng = stream_rng(43, "model-full-gradcheck");
        let cfg = ModelConfig {
            hidden: 6,
            dropout_p: 0.0,
            reset_gate_activation: ResetGateActivation::Sigmoid,
            horizon_steps: 2,
            history_steps: 3,
        };
        let n = 4;
        let init = ModelParams::init(n, &cfg, &mut rng).unwrap();
        let tensors = init.to_vec();
        let adj = {
            let mut a = DenseMatrix::zeros(n, n);
            for (p, q) in [(0, 1), (1, 2), (2, 3), (3, 0)] {
                a.set(p, q, 1.0);
                a.set(q, p, 1.0);
            }
            Adjacency::new(a).unwrap()
        };
        let base = graphcore::normalize_with_self_loops(&adj).unwrap();
        let history = DenseMatrix::from_vec(
            3,
            n,
            (0..12).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let targets: Vec<DenseMatrix> = (0..2)
            .map(|_| {
                DenseMatrix::from_vec(n, 1, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect())
                    .unwrap()
            })
            .collect();

        let cfg2 = cfg.clone();
        let max_err = grad_check(
            move |g, ids| {
                let m = ModelNodes {
                    w_f: ids[0],
                    b_f: ids[1],
                    w_u: ids[2],
                    b_u: ids[3],
                    w_r: ids[4],
                    b_r: ids[5],
                    w_c: ids[6],
                    b_c: ids[7],
                    w_dec: ids[8],
                    b_dec: ids[9],
                    phi: ids[10],
                };
                let op = graphcore::operator_node(g, &base, m.phi, None)?;
                let preds = rollout(g, &history, op, &m, &cfg2)?;
                forecast_loss(g, &preds, &targets)
            },
            &tensors,
            1e-5,
        )
        .unwrap();
        assert!(max_err < 1e-4, "max relative gradient error {max_err}");
    }

    #[test]
    fn rollout_with_zero_parameters_predicts_the_decoder_bias() {
        let cfg = ModelConfig {
            horizon_steps: 3,
            history_steps: 2,
            ..small_cfg(4)
        };
        let mut params = ModelParams::zeros(2, &cfg).unwrap();
        params.b_dec = DenseMatrix::filled(1, 1, 0.25);
        let history = DenseMatrix::from_vec(2, 2, vec![0.1, 0.9, 0.4, 0.6]).unwrap();
        let preds = forecast(&params, &cfg, &identity_op(2), &history).unwrap();
        assert_eq!(preds.shape(), (3, 2));
        for &v in preds.data() {
            assert_eq!(v, 0.25);
        }
    }

    #[test]
    fn rollout_prefixes_are_consistent_and_deterministic() {
        let mut rng = stream_rng(44, "model-prefix");
        let cfg = ModelConfig {
            horizon_steps: 4,
            history_steps: 3,
            ..small_cfg(5)
        };
        let params = ModelParams::init(3, &cfg, &mut rng).unwrap();
        let history = DenseMatrix::from_vec(
            3,
            3,
            (0..9).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let op = identity_op(3);

        let long = forecast(&params, &cfg, &op, &history).unwrap();
        let short_cfg = ModelConfig {
            horizon_steps: 1,
            ..cfg.clone()
        };
        let short = forecast(&params, &short_cfg, &op, &history).unwrap();
        assert_eq!(long.row(0), short.row(0), "first horizon step must agree");

        let again = forecast(&params, &cfg, &op, &history).unwrap();
        assert_eq!(long, again, "same inputs must give bitwise-equal output");
    }

    #[test]
    fn hidden_state_stays_bounded_by_one() {
        let mut rng = stream_rng(45, "model-bounded");
        let cfg = small_cfg(4);
        let n = 3;
        // Deliberately large weights: boundedness is structural (the update
        // gate mixes H with a tanh output), not a small-weight accident.
        let mut params = ModelParams::init(n, &cfg, &mut rng).unwrap();
        for t in [&mut params.w_u, &mut params.w_r, &mut params.w_c] {
            *t = t.map(|x| 10.0 * x);
        }
        let adj = {
            let mut a = DenseMatrix::zeros(n, n);
            for (p, q) in [(0, 1), (1, 2)] {
                a.set(p, q, 1.0);
                a.set(q, p, 1.0);
            }
            Adjacency::new(a).unwrap()
        };
        let base = graphcore::normalize_with_self_loops(&adj).unwrap();

        let mut g = Graph::new();
        let m = register(&mut g, &params, &cfg, false);
        let op = graphcore::operator_node(&mut g, &base, m.phi, None).unwrap();
        let mut h = g.constant(DenseMatrix::zeros(n, cfg.hidden)).unwrap();
        for _ in 0..50 {
            let x = g
                .constant(
                    DenseMatrix::from_vec(n, 1, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect())
                        .unwrap(),
                )
                .unwrap();
            let l = project(&mut g, x, &m).unwrap();
            h = gru_step(&mut g, l, h, op, &m, &cfg).unwrap();
            assert!(g.value(h).max_abs() <= 1.0, "‖H‖∞ = {}", g.value(h).max_abs());
        }
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let mut rng = stream_rng(46, "model-checkpoint");
        let cfg = ModelConfig {
            horizon_steps: 2,
            history_steps: 3,
            ..small_cfg(5)
        };
        let mut params = ModelParams::init(4, &cfg, &mut rng).unwrap();
        // Make φ nonzero so the round trip covers it too.
        params.phi = params.phi.map(|_| uniform_symmetric(&mut rng, 0.01));
        let map_adj = {
            let mut a = DenseMatrix::zeros(4, 4);
            a.set(0, 1, 0.37);
            a.set(1, 0, 0.37);
            a.set(2, 3, 1.0 / 3.0);
            a.set(3, 2, 1.0 / 3.0);
            a.set(1, 2, 0.1234567890123456789);
            a.set(2, 1, 0.1234567890123456789);
            a
        };
        let ckpt = Checkpoint::new(cfg, params, map_adj).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(ckpt, loaded);

        // Version tampering is refused with a data error.
        let mut raw: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        raw["version"] = serde_json::Value::String("stgf-checkpoint-v0".to_string());
        std::fs::write(&path, serde_json::to_string(&raw).unwrap()).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn mismatched_shapes_are_rejected_with_the_tensor_name() {
        let cfg = small_cfg(4);
        let params = ModelParams::zeros(3, &cfg).unwrap();
        let mut tensors = params.to_vec();
        tensors[2] = DenseMatrix::zeros(7, 4);
        let err = ModelParams::from_vec(3, &cfg, &tensors).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("w_u"), "{err}");
    }

    #[test]
    fn reset_gate_activation_parses_and_rejects() {
        assert_eq!(
            "sigmoid".parse::<ResetGateActivation>().unwrap(),
            ResetGateActivation::Sigmoid
        );
        assert_eq!(
            "identity".parse::<ResetGateActivation>().unwrap(),
            ResetGateActivation::Identity
        );
        assert_eq!(
            "relu".parse::<ResetGateActivation>().unwrap_err().exit_code(),
            2
        );
    }
}
