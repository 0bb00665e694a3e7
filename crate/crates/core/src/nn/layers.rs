//! Per-layer forward and backward kernels on flat NCHW buffers.

use alloc::vec;
use alloc::vec::Vec;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
}

impl ConvDims {
    pub fn out_height(&self) -> usize {
        self.height + 2 * self.padding + 1 - self.kernel
    }

    pub fn out_width(&self) -> usize {
        self.width + 2 * self.padding + 1 - self.kernel
    }

    /// Output positions `o` for which `o + k - padding` lands inside `0..extent`.
    fn valid(&self, k: usize, out: usize, extent: usize) -> (usize, usize) {
        let lo = self.padding.saturating_sub(k);
        let hi = (extent + self.padding).saturating_sub(k).min(out);
        (lo, hi.max(lo))
    }
}

/// Unfolds one C x H x W image into a (C k k) x (Ho Wo) column matrix; padding reads as zero.
fn im2col(input: &[f64], d: &ConvDims, cols: &mut [f64]) {
    let (ho, wo) = (d.out_height(), d.out_width());
    let ohw = ho * wo;
    let hw = d.height * d.width;
    cols.iter_mut().for_each(|v| *v = 0.0);
    for ci in 0..d.in_channels {
        let plane = &input[ci * hw..][..hw];
        for ky in 0..d.kernel {
            let (oy0, oy1) = d.valid(ky, ho, d.height);
            for kx in 0..d.kernel {
                let (ox0, ox1) = d.valid(kx, wo, d.width);
                let row = &mut cols[((ci * d.kernel + ky) * d.kernel + kx) * ohw..][..ohw];
                for oy in oy0..oy1 {
                    let iy = oy + ky - d.padding;
                    let src = &plane[iy * d.width + ox0 + kx - d.padding..][..ox1 - ox0];
                    row[oy * wo + ox0..][..ox1 - ox0].copy_from_slice(src);
                }
            }
        }
    }
}

/// Inverse of [`im2col`]: accumulates columns back into an image.
fn col2im(cols: &[f64], d: &ConvDims, out: &mut [f64]) {
    let (ho, wo) = (d.out_height(), d.out_width());
    let ohw = ho * wo;
    let hw = d.height * d.width;
    for ci in 0..d.in_channels {
        let plane = &mut out[ci * hw..][..hw];
        for ky in 0..d.kernel {
            let (oy0, oy1) = d.valid(ky, ho, d.height);
            for kx in 0..d.kernel {
                let (ox0, ox1) = d.valid(kx, wo, d.width);
                let row = &cols[((ci * d.kernel + ky) * d.kernel + kx) * ohw..][..ohw];
                for oy in oy0..oy1 {
                    let iy = oy + ky - d.padding;
                    let dst = &mut plane[iy * d.width + ox0 + kx - d.padding..][..ox1 - ox0];
                    for (a, &b) in dst.iter_mut().zip(&row[oy * wo + ox0..][..ox1 - ox0]) {
                        *a += b;
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(x: &[f64], weight: &[f64], bias: &[f64], d: ConvDims) -> Vec<f64> {
    let ohw = d.out_height() * d.out_width();
    let hw = d.height * d.width;
    let taps = d.in_channels * d.kernel * d.kernel;
    let mut cols = vec![0.0; taps * ohw];
    let mut y = vec![0.0; d.batch * d.out_channels * ohw];
    for b in 0..d.batch {
        im2col(
            &x[b * d.in_channels * hw..][..d.in_channels * hw],
            &d,
            &mut cols,
        );
        for co in 0..d.out_channels {
            let out = &mut y[(b * d.out_channels + co) * ohw..][..ohw];
            out.iter_mut().for_each(|v| *v = bias[co]);
            for (&wv, col) in weight[co * taps..][..taps]
                .iter()
                .zip(cols.chunks_exact(ohw))
            {
                for (o, &c) in out.iter_mut().zip(col) {
                    *o += wv * c;
                }
            }
        }
    }
    y
}

/// Returns (d_input, d_weight, d_bias).
pub fn conv2d_backward(
    x: &[f64],
    weight: &[f64],
    dy: &[f64],
    d: ConvDims,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let ohw = d.out_height() * d.out_width();
    let hw = d.height * d.width;
    let taps = d.in_channels * d.kernel * d.kernel;
    let mut cols = vec![0.0; taps * ohw];
    let mut dcols = vec![0.0; taps * ohw];
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; weight.len()];
    let mut db = vec![0.0; d.out_channels];
    for b in 0..d.batch {
        im2col(
            &x[b * d.in_channels * hw..][..d.in_channels * hw],
            &d,
            &mut cols,
        );
        dcols.iter_mut().for_each(|v| *v = 0.0);
        for co in 0..d.out_channels {
            let g = &dy[(b * d.out_channels + co) * ohw..][..ohw];
            db[co] += g.iter().sum::<f64>();
            let w = &weight[co * taps..][..taps];
            let dwr = &mut dw[co * taps..][..taps];
            for (k, (col, dcol)) in cols
                .chunks_exact(ohw)
                .zip(dcols.chunks_exact_mut(ohw))
                .enumerate()
            {
                let wv = w[k];
                let mut acc = 0.0;
                for ((&gv, &cv), dc) in g.iter().zip(col).zip(dcol) {
                    acc += gv * cv;
                    *dc += wv * gv;
                }
                dwr[k] += acc;
            }
        }
        col2im(
            &dcols,
            &d,
            &mut dx[b * d.in_channels * hw..][..d.in_channels * hw],
        );
    }
    (dx, dw, db)
}

/// Batch mean and biased variance per channel of an N x C x S buffer.
pub fn channel_stats(
    x: &[f64],
    batch: usize,
    channels: usize,
    spatial: usize,
) -> (Vec<f64>, Vec<f64>) {
    let count = (batch * spatial) as f64;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for c in 0..channels {
        let mut s = 0.0;
        for b in 0..batch {
            s += x[(b * channels + c) * spatial..][..spatial]
                .iter()
                .sum::<f64>();
        }
        let m = s / count;
        let mut v = 0.0;
        for b in 0..batch {
            for &xv in &x[(b * channels + c) * spatial..][..spatial] {
                v += (xv - m) * (xv - m);
            }
        }
        mean[c] = m;
        var[c] = v / count;
    }
    (mean, var)
}

/// Normalizes with the given per-channel statistics; returns (output, x_hat, inv_std).
pub fn bn_forward(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    batch: usize,
    spatial: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let channels = gamma.len();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + BN_EPS)).collect();
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * spatial;
            for i in base..base + spatial {
                let h = (x[i] - mean[c]) * inv_std[c];
                xhat[i] = h;
                y[i] = gamma[c] * h + beta[c];
            }
        }
    }
    (y, xhat, inv_std)
}

/// Full batch-norm backward with batch statistics as functions of the input.
/// Returns (d_input, d_gamma, d_beta).
pub fn bn_backward(
    dy: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    batch: usize,
    spatial: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let channels = gamma.len();
    let count = (batch * spatial) as f64;
    let mut dgamma = vec![0.0; channels];
    let mut dbeta = vec![0.0; channels];
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * spatial;
            for i in base..base + spatial {
                dgamma[c] += dy[i] * xhat[i];
                dbeta[c] += dy[i];
            }
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for b in 0..batch {
        for c in 0..channels {
            let k = gamma[c] * inv_std[c] / count;
            let base = (b * channels + c) * spatial;
            for i in base..base + spatial {
                dx[i] = k * (count * dy[i] - dbeta[c] - xhat[i] * dgamma[c]);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Momentum update of running statistics; the running variance tracks the
/// unbiased batch variance.
pub fn update_running(
    running_mean: &mut [f64],
    running_var: &mut [f64],
    mean: &[f64],
    var: &[f64],
    count: usize,
) {
    let unbias = count as f64 / (count as f64 - 1.0);
    for c in 0..running_mean.len() {
        running_mean[c] = (1.0 - BN_MOMENTUM) * running_mean[c] + BN_MOMENTUM * mean[c];
        running_var[c] = (1.0 - BN_MOMENTUM) * running_var[c] + BN_MOMENTUM * var[c] * unbias;
    }
}

pub fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

pub fn relu_backward(x: &[f64], dy: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(dy)
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect()
}

/// Returns (output, flat argmax index per output element). Ties resolve to
/// the first element in row-major window order.
pub fn maxpool_forward(
    x: &[f64],
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    size: usize,
) -> (Vec<f64>, Vec<usize>) {
    let (ho, wo) = (height / size, width / size);
    let mut y = Vec::with_capacity(batch * channels * ho * wo);
    let mut arg = Vec::with_capacity(y.capacity());
    for plane in 0..batch * channels {
        let base = plane * height * width;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * size * width + ox * size;
                for dy in 0..size {
                    for dx in 0..size {
                        let i = base + (oy * size + dy) * width + ox * size + dx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                y.push(x[best]);
                arg.push(best);
            }
        }
    }
    (y, arg)
}

pub fn maxpool_backward(input_len: usize, argmax: &[usize], dy: &[f64]) -> Vec<f64> {
    let mut dx = vec![0.0; input_len];
    for (&i, &g) in argmax.iter().zip(dy) {
        dx[i] += g;
    }
    dx
}

pub fn dense_forward(
    x: &[f64],
    weight: &[f64],
    bias: &[f64],
    batch: usize,
    inputs: usize,
    outputs: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; batch * outputs];
    for b in 0..batch {
        let row = &x[b * inputs..][..inputs];
        for o in 0..outputs {
            let w = &weight[o * inputs..][..inputs];
            let mut acc = bias[o];
            for (wv, xv) in w.iter().zip(row) {
                acc += wv * xv;
            }
            y[b * outputs + o] = acc;
        }
    }
    y
}

/// Returns (d_input, d_weight, d_bias).
pub fn dense_backward(
    x: &[f64],
    weight: &[f64],
    dy: &[f64],
    batch: usize,
    inputs: usize,
    outputs: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; batch * inputs];
    let mut dw = vec![0.0; weight.len()];
    let mut db = vec![0.0; outputs];
    for b in 0..batch {
        let row = &x[b * inputs..][..inputs];
        let drow = &mut dx[b * inputs..][..inputs];
        for o in 0..outputs {
            let g = dy[b * outputs + o];
            db[o] += g;
            let w = &weight[o * inputs..][..inputs];
            let dwr = &mut dw[o * inputs..][..inputs];
            for i in 0..inputs {
                dwr[i] += g * row[i];
                drow[i] += g * w[i];
            }
        }
    }
    (dx, dw, db)
}
