use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::tensor::Tensor;

/// Per-category loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryWeights {
    alphas: Vec<f64>,
}

impl CategoryWeights {
    /// All-ones weights, under which the weighted loss is plain cross-entropy.
    pub fn uniform(categories: usize) -> Self {
        Self {
            alphas: vec![1.0; categories],
        }
    }

    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(invalid!(
                "category weights must be positive and finite: {:?}",
                alphas
            ));
        }
        Ok(Self { alphas })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }
}

/// `alpha_j = max(counts) / n_j`; the majority category gets weight 1.
pub fn class_weights(counts: &[usize]) -> Result<CategoryWeights> {
    if counts.len() < 2 {
        return Err(invalid!("need at least 2 categories, got {}", counts.len()));
    }
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(invalid!(
            "category {} has no samples; its weight is undefined",
            j
        ));
    }
    let max = *counts.iter().max().unwrap() as f64;
    Ok(CategoryWeights {
        alphas: counts.iter().map(|&c| max / c as f64).collect(),
    })
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    /// Mean of the per-sample losses.
    pub loss: f64,
    pub per_sample: Vec<f64>,
    /// d loss / d logits, N x K row-major.
    pub logits_gradient: Vec<f64>,
}

fn ce(logits: &Tensor, labels: &[usize], alphas: Option<&[f64]>) -> Result<LossOutput> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(shape_err!("logits must be N x K, got {:?}", shape));
    }
    let (n, k) = (shape[0], shape[1]);
    if labels.len() != n {
        return Err(shape_err!("{} labels for {} logit rows", labels.len(), n));
    }
    if let Some(a) = alphas {
        if a.len() != k {
            return Err(shape_err!("{} category weights for {} logits", a.len(), k));
        }
    }
    let mut per_sample = Vec::with_capacity(n);
    let mut grad = vec![0.0; n * k];
    let scale = 1.0 / n as f64;
    for (b, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(invalid!("label {} outside [0, {})", y, k));
        }
        let row = &logits.data()[b * k..][..k];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| libm::exp(z - max)).sum();
        let lse = max + libm::log(sum);
        let nll = lse - row[y];
        let (l, a) = match alphas {
            Some(a) => (a[y] * nll, a[y]),
            None => (nll, 1.0),
        };
        per_sample.push(l);
        let g = &mut grad[b * k..][..k];
        for j in 0..k {
            let p = libm::exp(row[j] - lse);
            let d = if j == y { p - 1.0 } else { p };
            g[j] = match alphas {
                Some(_) => a * d * scale,
                None => d * scale,
            };
        }
    }
    let loss = per_sample.iter().sum::<f64>() / n as f64;
    Ok(LossOutput {
        loss,
        per_sample,
        logits_gradient: grad,
    })
}

/// Standard (unweighted) softmax cross-entropy.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<LossOutput> {
    ce(logits, labels, None)
}

/// Class-weighted softmax cross-entropy: per-sample `-alpha_y log p_y`,
/// averaged over the batch. Computed through log-sum-exp.
pub fn weighted_ce(
    logits: &Tensor,
    labels: &[usize],
    weights: &CategoryWeights,
) -> Result<LossOutput> {
    ce(logits, labels, Some(weights.alphas()))
}

/// Per-category sample counts of `labels`.
pub fn histogram(labels: &[usize], categories: usize) -> Vec<usize> {
    let mut h = vec![0; categories];
    for &l in labels {
        h[l] += 1;
    }
    h
}
