//! Graph variational autoencoder over an observed road topology.
//!
//! Encoder: two graph-convolution layers over the self-loop-normalized
//! topology with identity node features — `H₁ = relu(Ã W₀)`, then
//! `μ = Ã H₁ W_μ` and `log σ² = Ã H₁ W_σ`. Decoder: `σ(z zᵀ)` edge
//! probabilities. Loss: positive-reweighted binary cross-entropy on the
//! self-loop-augmented adjacency plus the Gaussian KL to the standard
//! normal. The deterministic mean μ is returned as the embedding so that
//! everything downstream of the autoencoder is reproducible without a
//! sampling step.

use rand::Rng;

use crate::autodiff::{DenseMatrix, Graph, NodeId};
use crate::error::{Error, Result};
use crate::graphcore::{normalize_with_self_loops, Adjacency};
use crate::graphlearn::EmbeddingSet;
use crate::train::AdamState;
use crate::util::standard_normal;

/// Autoencoder hyperparameters. Defaults are the method's canonical
/// small-graph settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GvaeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub latent_dim: usize,
    pub hidden_dim: usize,
}

impl Default for GvaeConfig {
    fn default() -> Self {
        GvaeConfig {
            epochs: 200,
            lr: 0.01,
            latent_dim: 16,
            hidden_dim: 32,
        }
    }
}

impl GvaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim < 2 {
            return Err(Error::config(format!(
                "latent_dim must be at least 2, got {}",
                self.latent_dim
            )));
        }
        if self.hidden_dim < 1 {
            return Err(Error::config("hidden_dim must be at least 1".to_string()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Glorot-uniform initialization: `U(±√(6/(fan_in+fan_out)))`.
fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    DenseMatrix::from_vec(rows, cols, data).expect("finite init")
}

/// Edge probabilities `σ(E Eᵀ)` decoded from embeddings.
pub fn reconstruction_probabilities(emb: &EmbeddingSet) -> DenseMatrix {
    let logits = emb
        .vectors()
        .matmul(&emb.vectors().transpose())
        .expect("square gram");
    logits.map(crate::autodiff::sigmoid_scalar)
}

/// KL divergence node `−0.5/n · Σ(1 + logσ² − μ² − σ²)`.
fn kl_node(g: &mut Graph, mu: NodeId, logvar: NodeId, n: usize) -> Result<NodeId> {
    let one_plus = g.affine(logvar, 1.0, 1.0)?;
    let mu_sq = g.mul(mu, mu)?;
    let partial = g.sub(one_plus, mu_sq)?;
    let var = g.exp(logvar)?;
    let inner = g.sub(partial, var)?;
    let total = g.sum(inner)?;
    g.scale(total, -0.5 / n as f64)
}

/// Mean positive-reweighted binary cross-entropy between logits and 0/1
/// labels: `(1−y)·softplus(x) + pw·y·softplus(−x)` averaged over all entries.
fn weighted_bce_node(
    g: &mut Graph,
    logits: NodeId,
    labels: &DenseMatrix,
    pos_weight: f64,
) -> Result<NodeId> {
    let neg_mask = g.constant(labels.map(|y| 1.0 - y))?;
    let pos_mask = g.constant(labels.scale(pos_weight))?;
    let sp_pos = g.softplus(logits)?;
    let neg_logits = g.scale(logits, -1.0)?;
    let sp_neg = g.softplus(neg_logits)?;
    let t1 = g.mul(neg_mask, sp_pos)?;
    let t2 = g.mul(pos_mask, sp_neg)?;
    let total = g.add(t1, t2)?;
    g.mean(total)
}

struct GvaeForward {
    mu: NodeId,
    loss: NodeId,
}

#[allow(clippy::too_many_arguments)]
fn gvae_forward(
    g: &mut Graph,
    a_norm: &DenseMatrix,
    params: &[DenseMatrix; 3],
    eps: Option<&DenseMatrix>,
    labels: &DenseMatrix,
    pos_weight: f64,
) -> Result<(GvaeForward, [NodeId; 3])> {
    let n = a_norm.rows();
    let w0 = g.param(params[0].clone())?;
    let wmu = g.param(params[1].clone())?;
    let wsig = g.param(params[2].clone())?;
    let a = g.constant(a_norm.clone())?;

    // Identity node features make the first layer Ã·W₀ directly.
    let pre1 = g.matmul(a, w0)?;
    let h1 = g.relu(pre1)?;
    let ah1 = g.matmul(a, h1)?;
    let mu = g.matmul(ah1, wmu)?;
    let logvar = g.matmul(ah1, wsig)?;

    let z = match eps {
        Some(e) => {
            let half_logvar = g.scale(logvar, 0.5)?;
            let std = g.exp(half_logvar)?;
            let e_const = g.constant(e.clone())?;
            let noise = g.mul(std, e_const)?;
            g.add(mu, noise)?
        }
        None => mu,
    };
    let zt = g.transpose(z)?;
    let logits = g.matmul(z, zt)?;

    let recon = weighted_bce_node(g, logits, labels, pos_weight)?;
    let kl = kl_node(g, mu, logvar, n)?;
    let loss = g.add(recon, kl)?;
    Ok((GvaeForward { mu, loss }, [w0, wmu, wsig]))
}

/// Train the autoencoder on an observed topology and return the deterministic
/// mean embeddings.
pub fn train_gvae<R: Rng + ?Sized>(
    obs: &Adjacency,
    cfg: &GvaeConfig,
    rng: &mut R,
) -> Result<EmbeddingSet> {
    train_gvae_with_history(obs, cfg, rng).map(|(emb, _)| emb)
}

/// [`train_gvae`] plus the per-epoch loss curve for provenance logging.
pub fn train_gvae_with_history<R: Rng + ?Sized>(
    obs: &Adjacency,
    cfg: &GvaeConfig,
    rng: &mut R,
) -> Result<(EmbeddingSet, Vec<f64>)> {
    cfg.validate()?;
    obs.validate_topology()?;
    let n = obs.n();
    let edge_weight_sum: f64 = obs.weights().data().iter().sum();
    if edge_weight_sum == 0.0 {
        return Err(Error::numerical(
            "observed topology has no edges; cannot learn embeddings from a degenerate graph"
                .to_string(),
        ));
    }

    let a_norm = normalize_with_self_loops(obs)?.matrix().clone();

    // Labels are the self-loop-augmented adjacency; sparse graphs get their
    // positive entries reweighted by #zeros/#ones.
    let mut labels = obs.weights().clone();
    for i in 0..n {
        labels.set(i, i, 1.0);
    }
    let ones: f64 = labels.data().iter().sum();
    let zeros = (n * n) as f64 - ones;
    let pos_weight = if ones > 0.0 { zeros / ones } else { 0.0 };

    let mut params = [
        glorot(n, cfg.hidden_dim, rng),
        glorot(cfg.hidden_dim, cfg.latent_dim, rng),
        glorot(cfg.hidden_dim, cfg.latent_dim, rng),
    ];
    let mut adam = AdamState::new(&params);

    let mut losses = Vec::with_capacity(cfg.epochs);
    for _epoch in 0..cfg.epochs {
        let eps_data: Vec<f64> = (0..n * cfg.latent_dim)
            .map(|_| standard_normal(rng))
            .collect();
        let eps = DenseMatrix::from_vec(n, cfg.latent_dim, eps_data)?;

        let mut g = Graph::new();
        let (fwd, ids) = gvae_forward(&mut g, &a_norm, &params, Some(&eps), &labels, pos_weight)?;
        losses.push(g.value(fwd.loss).get(0, 0));
        g.backward(fwd.loss)?;
        let grads: Vec<DenseMatrix> = ids.iter().map(|&id| g.grad_of(id)).collect();
        adam.step(&mut params, &grads, cfg.lr)?;
    }

    // Deterministic embedding: the encoder mean, no reparameterization noise.
    let mut g = Graph::new();
    let (fwd, _) = gvae_forward(&mut g, &a_norm, &params, None, &labels, pos_weight)?;
    Ok((EmbeddingSet::new(g.value(fwd.mu).clone())?, losses))
}
