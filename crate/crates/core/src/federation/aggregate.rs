use alloc::vec::Vec;

use crate::error::{invalid, shape_err, Error, Result};
use crate::nn::ModelState;

fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(invalid!("{} weights for {} institutions", weights.len(), n));
    }
    if n == 0 {
        return Err(invalid!("nothing to aggregate"));
    }
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(invalid!(
            "aggregation weights must be nonnegative: {:?}",
            weights
        ));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid!("aggregation weights must sum to 1, got {}", total));
    }
    Ok(())
}

fn weighted_sum(vectors: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>> {
    check_weights(weights, vectors.len())?;
    let len = vectors[0].len();
    if let Some(i) = vectors.iter().position(|v| v.len() != len) {
        return Err(shape_err!(
            "vector {} has length {}, expected {}",
            i,
            vectors[i].len(),
            len
        ));
    }
    let mut out: Vec<f64> = vectors[0].iter().map(|v| weights[0] * v).collect();
    for (v, &w) in vectors.iter().zip(weights).skip(1) {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += w * x;
        }
    }
    Ok(out)
}

/// `1 / n` each.
pub fn uniform_weights(n: usize) -> Vec<f64> {
    alloc::vec![1.0 / n as f64; n]
}

/// `Q_i / Q` from institution sizes.
pub fn proportional_weights(sizes: &[usize]) -> Vec<f64> {
    let total: usize = sizes.iter().sum();
    sizes.iter().map(|&q| q as f64 / total as f64).collect()
}

/// `sum_i w_i g_i`.
pub fn aggregate_gradients(grads: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    let views: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
    weighted_sum(&views, weights)
}

fn check_arch(models: &[ModelState]) -> Result<()> {
    let first = models
        .first()
        .ok_or_else(|| invalid!("nothing to aggregate"))?;
    if let Some(i) = models.iter().position(|m| m.arch() != first.arch()) {
        return Err(Error::Arch(alloc::format!(
            "model {} has a different architecture from model 0",
            i
        )));
    }
    Ok(())
}

/// Weighted average of BN running means and variances.
pub fn aggregate_bn_buffers(models: &[ModelState], weights: &[f64]) -> Result<Vec<f64>> {
    check_arch(models)?;
    let buffers: Vec<Vec<f64>> = models.iter().map(|m| m.flatten_buffers()).collect();
    let views: Vec<&[f64]> = buffers.iter().map(|b| b.as_slice()).collect();
    weighted_sum(&views, weights)
}

/// Weighted parameter average. BN running statistics are averaged too when
/// `bn_avg`, otherwise institution 0's statistics are kept.
pub fn aggregate_weights(
    models: &[ModelState],
    weights: &[f64],
    bn_avg: bool,
) -> Result<ModelState> {
    check_arch(models)?;
    let params: Vec<Vec<f64>> = models.iter().map(|m| m.flatten_params()).collect();
    let views: Vec<&[f64]> = params.iter().map(|p| p.as_slice()).collect();
    let merged = models[0].unflatten_params(&weighted_sum(&views, weights)?)?;
    if bn_avg {
        merged.unflatten_buffers(&aggregate_bn_buffers(models, weights)?)
    } else {
        Ok(merged)
    }
}
