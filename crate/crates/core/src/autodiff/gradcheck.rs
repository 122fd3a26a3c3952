//! Finite-difference verification of analytic gradients.
//!
//! The checker rebuilds the computation through a user-supplied builder
//! closure: once on a tape to obtain analytic gradients, then many times with
//! perturbed parameter entries to form central differences. The reported
//! score is the maximum over all parameter entries of
//! `|analytic − fd| / max(1, |fd|)`.

use crate::autodiff::graph::{Graph, NodeId};
use crate::autodiff::matrix::DenseMatrix;
use crate::error::{Error, Result};

/// Valid range for the finite-difference step.
const EPS_MIN: f64 = 1e-8;
const EPS_MAX: f64 = 1e-3;

fn validate_eps(eps: f64) -> Result<()> {
    if !(eps > EPS_MIN && eps < EPS_MAX) {
        return Err(Error::config(format!(
            "finite-difference step {eps} outside ({EPS_MIN}, {EPS_MAX})"
        )));
    }
    Ok(())
}

/// Central-difference gradients of a scalar function of several matrices.
pub fn finite_difference_grads<F>(
    mut f: F,
    params: &[DenseMatrix],
    eps: f64,
) -> Result<Vec<DenseMatrix>>
where
    F: FnMut(&[DenseMatrix]) -> Result<f64>,
{
    validate_eps(eps)?;
    let mut work: Vec<DenseMatrix> = params.to_vec();
    let mut grads: Vec<DenseMatrix> = params
        .iter()
        .map(|p| DenseMatrix::zeros(p.rows(), p.cols()))
        .collect();
    for p in 0..params.len() {
        for idx in 0..params[p].len() {
            let orig = work[p].data()[idx];
            work[p].data_mut()[idx] = orig + eps;
            let plus = f(&work)?;
            work[p].data_mut()[idx] = orig - eps;
            let minus = f(&work)?;
            work[p].data_mut()[idx] = orig;
            let d = (plus - minus) / (2.0 * eps);
            if !d.is_finite() {
                return Err(Error::numerical(format!(
                    "non-finite central difference for parameter {p} entry {idx}"
                )));
            }
            grads[p].data_mut()[idx] = d;
        }
    }
    Ok(grads)
}

/// `max |a − fd| / max(1, |fd|)` over all entries of all parameters.
pub fn max_rel_error(analytic: &[DenseMatrix], fd: &[DenseMatrix]) -> Result<f64> {
    if analytic.len() != fd.len() {
        return Err(Error::config(format!(
            "gradient lists differ in length: {} vs {}",
            analytic.len(),
            fd.len()
        )));
    }
    let mut worst = 0.0f64;
    for (a, f) in analytic.iter().zip(fd) {
        if a.shape() != f.shape() {
            return Err(Error::shape("max_rel_error", a.shape(), f.shape()));
        }
        for (&x, &y) in a.data().iter().zip(f.data()) {
            let rel = (x - y).abs() / y.abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Build the computation once for analytic gradients and re-evaluate it under
/// entry perturbations for central differences; return the worst relative
/// error. The builder receives a fresh tape and the parameter leaves (in the
/// order of `params`) and must return a scalar loss node.
pub fn grad_check<F>(build: F, params: &[DenseMatrix], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    validate_eps(eps)?;

    let mut graph = Graph::new();
    let ids: Vec<NodeId> = params
        .iter()
        .map(|p| graph.param(p.clone()))
        .collect::<Result<_>>()?;
    let loss = build(&mut graph, &ids)?;
    graph.backward(loss)?;
    let analytic: Vec<DenseMatrix> = ids.iter().map(|&id| graph.grad_of(id)).collect();

    let fd = finite_difference_grads(
        |values| {
            let mut g = Graph::new();
            let ids: Vec<NodeId> = values
                .iter()
                .map(|p| g.param(p.clone()))
                .collect::<Result<_>>()?;
            let loss = build(&mut g, &ids)?;
            let v = g.value(loss);
            if v.shape() != (1, 1) {
                return Err(Error::config(format!(
                    "grad_check builder must return a scalar, got {}x{}",
                    v.rows(),
                    v.cols()
                )));
            }
            Ok(v.get(0, 0))
        },
        params,
        eps,
    )?;

    max_rel_error(&analytic, &fd)
}
