//! Forward and reverse-mode passes over a [`ModelState`].

use alloc::format;
use alloc::vec::Vec;

use super::arch::{Extent, Layer};
use super::layers::{self, ConvDims};
use super::loss::{weighted_ce, CategoryWeights};
use super::model::ModelState;
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics normalize BN inputs.
    Train,
    /// Running statistics normalize BN inputs.
    Infer,
}

/// Per-BN-layer batch mean and biased variance from a train-mode pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Number of values reduced per channel (batch size times positions).
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Tensor,
    /// Empty in infer mode.
    pub batch_stats: Vec<BnBatchStats>,
}

/// Gradient of the weighted cross-entropy batch loss plus the momentum
/// updated running statistics the pass implies.
#[derive(Debug, Clone)]
pub struct Backward {
    pub loss: f64,
    pub per_sample: Vec<f64>,
    /// Aligned with [`ModelState::flatten_params`].
    pub gradient: Vec<f64>,
    /// Aligned with [`ModelState::flatten_buffers`]; not applied to the model.
    pub running: Vec<f64>,
}

enum Cache {
    Conv {
        input: Vec<f64>,
        dims: ConvDims,
        param: usize,
    },
    Bn {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        spatial: usize,
        param: usize,
    },
    Relu {
        input: Vec<f64>,
    },
    Pool {
        argmax: Vec<usize>,
        input_len: usize,
    },
    Dense {
        input: Vec<f64>,
        inputs: usize,
        outputs: usize,
        param: usize,
    },
    None,
}

struct Pass {
    logits: Vec<f64>,
    stats: Vec<BnBatchStats>,
    caches: Vec<Cache>,
    pattern: Vec<u64>,
}

fn check_batch(model: &ModelState, batch: &Tensor, mode: Mode) -> Result<usize> {
    let [c, h, w] = model.arch().input;
    let shape = batch.shape();
    if shape.len() != 4 || shape[1..] != [c, h, w] {
        return Err(shape_err!(
            "batch shape {:?} does not match model input [N, {}, {}, {}]",
            shape,
            c,
            h,
            w
        ));
    }
    let n = shape[0];
    if mode == Mode::Train && n < 2 && model.arch().has_batch_norm() {
        return Err(Error::InvalidArgument(format!(
            "train-mode batch normalization needs at least 2 samples, got {}",
            n
        )));
    }
    Ok(n)
}

fn run(model: &ModelState, batch: &Tensor, mode: Mode, keep: bool) -> Result<Pass> {
    let n = check_batch(model, batch, mode)?;
    let arch = model.arch();
    arch.extents()?;
    let params = model.params();
    let buffers = model.bn_buffers();
    let mut x: Vec<f64> = batch.data().into();
    let mut extent = arch.input_extent();
    let mut next_param = 0;
    let mut next_buffer = 0;
    let mut stats = Vec::new();
    let mut caches = Vec::new();
    let mut pattern = Vec::new();
    for layer in &arch.layers {
        let (y, cache, out_extent) = match (*layer, extent) {
            (
                Layer::Conv2d {
                    out_channels,
                    kernel,
                    padding,
                    ..
                },
                Extent::Spatial {
                    channels,
                    height,
                    width,
                },
            ) => {
                let dims = ConvDims {
                    batch: n,
                    in_channels: channels,
                    height,
                    width,
                    out_channels,
                    kernel,
                    padding,
                };
                let y = layers::conv2d_forward(
                    &x,
                    params[next_param].tensor.data(),
                    params[next_param + 1].tensor.data(),
                    dims,
                );
                let out = Extent::Spatial {
                    channels: out_channels,
                    height: dims.out_height(),
                    width: dims.out_width(),
                };
                let cache = Cache::Conv {
                    input: x,
                    dims,
                    param: next_param,
                };
                next_param += 2;
                (y, cache, out)
            }
            (Layer::BatchNorm { .. }, e) => {
                let (channels, spatial) = e.channel_view();
                let gamma = params[next_param].tensor.data();
                let beta = params[next_param + 1].tensor.data();
                let (mean, var) = match mode {
                    Mode::Train => {
                        let (m, v) = layers::channel_stats(&x, n, channels, spatial);
                        stats.push(BnBatchStats {
                            mean: m.clone(),
                            var: v.clone(),
                            count: n * spatial,
                        });
                        (m, v)
                    }
                    Mode::Infer => (
                        buffers[next_buffer].tensor.data().into(),
                        buffers[next_buffer + 1].tensor.data().into(),
                    ),
                };
                let (y, xhat, inv_std) =
                    layers::bn_forward(&x, gamma, beta, &mean, &var, n, spatial);
                let cache = Cache::Bn {
                    xhat,
                    inv_std,
                    spatial,
                    param: next_param,
                };
                next_param += 2;
                next_buffer += 2;
                (y, cache, e)
            }
            (Layer::Relu, e) => {
                let y = layers::relu_forward(&x);
                if keep {
                    pattern.extend(x.chunks(64).map(|c| {
                        c.iter()
                            .enumerate()
                            .fold(0u64, |acc, (i, &v)| acc | ((v > 0.0) as u64) << i)
                    }));
                }
                (y, Cache::Relu { input: x }, e)
            }
            (
                Layer::MaxPool2d { size },
                Extent::Spatial {
                    channels,
                    height,
                    width,
                },
            ) => {
                let (y, argmax) = layers::maxpool_forward(&x, n, channels, height, width, size);
                if keep {
                    pattern.extend(argmax.iter().map(|&i| i as u64));
                }
                let out = Extent::Spatial {
                    channels,
                    height: height / size,
                    width: width / size,
                };
                (
                    y,
                    Cache::Pool {
                        argmax,
                        input_len: x.len(),
                    },
                    out,
                )
            }
            (Layer::Flatten, e) => (x, Cache::None, Extent::Flat(e.len())),
            (
                Layer::Dense {
                    in_features,
                    out_features,
                },
                _,
            ) => {
                let y = layers::dense_forward(
                    &x,
                    params[next_param].tensor.data(),
                    params[next_param + 1].tensor.data(),
                    n,
                    in_features,
                    out_features,
                );
                let cache = Cache::Dense {
                    input: x,
                    inputs: in_features,
                    outputs: out_features,
                    param: next_param,
                };
                next_param += 2;
                (y, cache, Extent::Flat(out_features))
            }
            // extents() already rejected every other combination
            (l, e) => return Err(Error::Arch(format!("layer {:?} cannot take {}", l, e))),
        };
        if keep {
            caches.push(cache);
        }
        x = y;
        extent = out_extent;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("forward pass".into()));
    }
    Ok(Pass {
        logits: x,
        stats,
        caches,
        pattern,
    })
}

/// Runs the network. Never mutates the model; in train mode the batch
/// statistics of every BN layer are returned.
pub fn forward(model: &ModelState, batch: &Tensor, mode: Mode) -> Result<ForwardOutput> {
    let n = batch.shape().first().copied().unwrap_or(0);
    let pass = run(model, batch, mode, false)?;
    Ok(ForwardOutput {
        logits: Tensor::new(alloc::vec![n, model.arch().num_classes], pass.logits)?,
        batch_stats: pass.stats,
    })
}

/// Encodes which side of every ReLU kink and which max-pool winner each
/// activation sits on. Two inputs with equal signatures lie in the same
/// smooth piece of the network function.
pub fn piecewise_signature(model: &ModelState, batch: &Tensor, mode: Mode) -> Result<Vec<u64>> {
    Ok(run(model, batch, mode, true)?.pattern)
}

/// Applies the momentum update implied by `stats` to a copy of the model's
/// running statistics, returned flat.
pub fn updated_running(model: &ModelState, stats: &[BnBatchStats]) -> Result<Vec<f64>> {
    let buffers = model.bn_buffers();
    if buffers.len() != 2 * stats.len() {
        return Err(shape_err!(
            "{} BN layers but {} batch statistics",
            buffers.len() / 2,
            stats.len()
        ));
    }
    let mut out = Vec::with_capacity(model.buffer_count());
    for (pair, s) in buffers.chunks(2).zip(stats) {
        let mut mean: Vec<f64> = pair[0].tensor.data().into();
        let mut var: Vec<f64> = pair[1].tensor.data().into();
        layers::update_running(&mut mean, &mut var, &s.mean, &s.var, s.count);
        out.extend(mean);
        out.extend(var);
    }
    Ok(out)
}

/// Train-mode forward plus exact reverse-mode gradient of the weighted
/// cross-entropy batch loss with respect to every trainable parameter.
pub fn backward(
    model: &ModelState,
    batch: &Tensor,
    labels: &[usize],
    weights: &CategoryWeights,
) -> Result<Backward> {
    let n = check_batch(model, batch, Mode::Train)?;
    if labels.len() != n {
        return Err(shape_err!("{} labels for a batch of {}", labels.len(), n));
    }
    let pass = run(model, batch, Mode::Train, true)?;
    let classes = model.arch().num_classes;
    let logits = Tensor::new(alloc::vec![n, classes], pass.logits)?;
    let loss = weighted_ce(&logits, labels, weights)?;
    let mut dy = loss.logits_gradient;

    let params = model.params();
    let mut grads: Vec<Option<Vec<f64>>> = alloc::vec![None; params.len()];
    for cache in pass.caches.into_iter().rev() {
        dy = match cache {
            Cache::Conv { input, dims, param } => {
                let (dx, dw, db) =
                    layers::conv2d_backward(&input, params[param].tensor.data(), &dy, dims);
                grads[param] = Some(dw);
                grads[param + 1] = Some(db);
                dx
            }
            Cache::Bn {
                xhat,
                inv_std,
                spatial,
                param,
            } => {
                let (dx, dg, dbeta) = layers::bn_backward(
                    &dy,
                    &xhat,
                    &inv_std,
                    params[param].tensor.data(),
                    n,
                    spatial,
                );
                grads[param] = Some(dg);
                grads[param + 1] = Some(dbeta);
                dx
            }
            Cache::Relu { input } => layers::relu_backward(&input, &dy),
            Cache::Pool { argmax, input_len } => layers::maxpool_backward(input_len, &argmax, &dy),
            Cache::Dense {
                input,
                inputs,
                outputs,
                param,
            } => {
                let (dx, dw, db) = layers::dense_backward(
                    &input,
                    params[param].tensor.data(),
                    &dy,
                    n,
                    inputs,
                    outputs,
                );
                grads[param] = Some(dw);
                grads[param + 1] = Some(db);
                dx
            }
            Cache::None => dy,
        };
    }
    let mut gradient = Vec::with_capacity(model.param_count());
    for g in grads {
        gradient.extend(g.ok_or_else(|| Error::Arch("parameter without gradient".into()))?);
    }
    if gradient.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("backward pass".into()));
    }
    let running = updated_running(model, &pass.stats)?;
    Ok(Backward {
        loss: loss.loss,
        per_sample: loss.per_sample,
        gradient,
        running,
    })
}
