use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::arch::{Arch, Layer};
use crate::error::{shape_err, Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Trainable parameters plus batch-normalization running statistics.
///
/// The two sets are kept apart so aggregation can treat them differently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    params: Vec<NamedTensor>,
    bn_buffers: Vec<NamedTensor>,
    arch: Arch,
}

/// Builds a model with He fan-in normal weights, zero biases, unit BN scale,
/// zero BN shift, zero running mean and unit running variance.
pub fn build_model(arch: &Arch, seed: u64) -> Result<ModelState> {
    arch.extents()?;
    let mut rng = rng::rng(seed);
    let mut params = Vec::new();
    for (i, layer) in arch.layers.iter().enumerate() {
        let (weight_shape, fan_in, out) = match *layer {
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (
                alloc::vec![out_channels, in_channels, kernel, kernel],
                in_channels * kernel * kernel,
                out_channels,
            ),
            Layer::Dense {
                in_features,
                out_features,
            } => (
                alloc::vec![out_features, in_features],
                in_features,
                out_features,
            ),
            Layer::BatchNorm { channels } => {
                params.push(NamedTensor {
                    name: format!("bn{}.gamma", i),
                    tensor: Tensor::filled(alloc::vec![channels], 1.0),
                });
                params.push(NamedTensor {
                    name: format!("bn{}.beta", i),
                    tensor: Tensor::zeros(alloc::vec![channels]),
                });
                continue;
            }
            Layer::Relu | Layer::MaxPool2d { .. } | Layer::Flatten => continue,
        };
        let std = libm::sqrt(2.0 / fan_in as f64);
        let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(format!("{}", e)))?;
        let len = weight_shape.iter().product();
        let data: Vec<f64> = (0..len).map(|_| normal.sample(&mut rng)).collect();
        let prefix = if matches!(layer, Layer::Conv2d { .. }) {
            "conv"
        } else {
            "dense"
        };
        params.push(NamedTensor {
            name: format!("{}{}.weight", prefix, i),
            tensor: Tensor::new(weight_shape, data)?,
        });
        params.push(NamedTensor {
            name: format!("{}{}.bias", prefix, i),
            tensor: Tensor::zeros(alloc::vec![out]),
        });
    }
    let bn_buffers = arch
        .buffer_layout()
        .into_iter()
        .map(|(name, shape)| {
            let fill = if name.ends_with("running_var") {
                1.0
            } else {
                0.0
            };
            NamedTensor {
                name,
                tensor: Tensor::filled(shape, fill),
            }
        })
        .collect();
    Ok(ModelState {
        params,
        bn_buffers,
        arch: arch.clone(),
    })
}

fn flatten(set: &[NamedTensor]) -> Vec<f64> {
    let mut out = Vec::with_capacity(set.iter().map(|t| t.tensor.len()).sum());
    for t in set {
        out.extend_from_slice(t.tensor.data());
    }
    out
}

fn unflatten(set: &[NamedTensor], values: &[f64], what: &str) -> Result<Vec<NamedTensor>> {
    let expected: usize = set.iter().map(|t| t.tensor.len()).sum();
    if values.len() != expected {
        return Err(shape_err!(
            "{} vector has {} values, model holds {}",
            what,
            values.len(),
            expected
        ));
    }
    let mut offset = 0;
    set.iter()
        .map(|t| {
            let len = t.tensor.len();
            let tensor = Tensor::new(t.tensor.shape().into(), values[offset..offset + len].into())?;
            offset += len;
            Ok(NamedTensor {
                name: t.name.clone(),
                tensor,
            })
        })
        .collect()
}

impl ModelState {
    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn params(&self) -> &[NamedTensor] {
        &self.params
    }

    pub fn bn_buffers(&self) -> &[NamedTensor] {
        &self.bn_buffers
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|t| t.tensor.len()).sum()
    }

    pub fn buffer_count(&self) -> usize {
        self.bn_buffers.iter().map(|t| t.tensor.len()).sum()
    }

    pub fn flatten_params(&self) -> Vec<f64> {
        flatten(&self.params)
    }

    pub fn flatten_buffers(&self) -> Vec<f64> {
        flatten(&self.bn_buffers)
    }

    pub fn unflatten_params(&self, values: &[f64]) -> Result<ModelState> {
        Ok(ModelState {
            params: unflatten(&self.params, values, "parameter")?,
            bn_buffers: self.bn_buffers.clone(),
            arch: self.arch.clone(),
        })
    }

    /// Replaces the running statistics. Running variances must stay positive.
    pub fn unflatten_buffers(&self, values: &[f64]) -> Result<ModelState> {
        let bn_buffers = unflatten(&self.bn_buffers, values, "buffer")?;
        for b in &bn_buffers {
            if b.name.ends_with("running_var") && b.tensor.data().iter().any(|&v| !(v > 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "{} must be strictly positive",
                    b.name
                )));
            }
            if !b.tensor.is_finite() {
                return Err(Error::NonFinite(format!("buffer {}", b.name)));
            }
        }
        Ok(ModelState {
            params: self.params.clone(),
            bn_buffers,
            arch: self.arch.clone(),
        })
    }

    /// `params - lr * gradient`; running statistics are left untouched.
    pub fn sgd_step(&self, gradient: &[f64], lr: f64) -> Result<ModelState> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and >= 0, got {}",
                lr
            )));
        }
        if gradient.len() != self.param_count() {
            return Err(shape_err!(
                "gradient has {} values, model holds {} parameters",
                gradient.len(),
                self.param_count()
            ));
        }
        let mut params = self.params.clone();
        let mut offset = 0;
        for p in &mut params {
            let len = p.tensor.len();
            for (v, g) in p
                .tensor
                .data_mut()
                .iter_mut()
                .zip(&gradient[offset..offset + len])
            {
                *v -= lr * g;
            }
            if !p.tensor.is_finite() {
                return Err(Error::NonFinite(format!("sgd step on {}", p.name)));
            }
            offset += len;
        }
        Ok(ModelState {
            params,
            bn_buffers: self.bn_buffers.clone(),
            arch: self.arch.clone(),
        })
    }

    /// True when params and buffers are bitwise equal.
    pub fn bitwise_eq(&self, other: &ModelState) -> bool {
        self.arch == other.arch
            && self
                .flatten_params()
                .iter()
                .map(|v| v.to_bits())
                .eq(other.flatten_params().iter().map(|v| v.to_bits()))
            && self
                .flatten_buffers()
                .iter()
                .map(|v| v.to_bits())
                .eq(other.flatten_buffers().iter().map(|v| v.to_bits()))
    }
}
