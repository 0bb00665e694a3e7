//! Central finite-difference check of [`backward`](super::backward).
//!
//! The numeric side uses only the forward pass and the loss, so it shares no
//! code with the reverse-mode path it checks.

use alloc::vec::Vec;

use super::loss::{weighted_ce, CategoryWeights};
use super::model::ModelState;
use super::network::{backward, forward, piecewise_signature, Mode};
use crate::error::Result;
use crate::tensor::Tensor;

/// Gradients smaller than this are compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Index of the parameter with the largest relative error.
    pub worst: usize,
    pub checked: usize,
    /// Coordinates whose ±h probe crossed a ReLU kink or switched a max-pool
    /// winner; central differences are meaningless there.
    pub skipped: Vec<usize>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn loss_at(
    model: &ModelState,
    batch: &Tensor,
    labels: &[usize],
    weights: &CategoryWeights,
) -> Result<f64> {
    let out = forward(model, batch, Mode::Train)?;
    Ok(weighted_ce(&out.logits, labels, weights)?.loss)
}

pub fn check_gradients(
    model: &ModelState,
    batch: &Tensor,
    labels: &[usize],
    weights: &CategoryWeights,
    h: f64,
) -> Result<GradCheckReport> {
    let analytic = backward(model, batch, labels, weights)?.gradient;
    let base_sig = piecewise_signature(model, batch, Mode::Train)?;
    let theta = model.flatten_params();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: 0,
        checked: 0,
        skipped: Vec::new(),
    };
    let mut probe = theta.clone();
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let plus = model.unflatten_params(&probe)?;
        probe[i] = theta[i] - h;
        let minus = model.unflatten_params(&probe)?;
        probe[i] = theta[i];
        if piecewise_signature(&plus, batch, Mode::Train)? != base_sig
            || piecewise_signature(&minus, batch, Mode::Train)? != base_sig
        {
            report.skipped.push(i);
            continue;
        }
        let numeric = (loss_at(&plus, batch, labels, weights)?
            - loss_at(&minus, batch, labels, weights)?)
            / (2.0 * h);
        let rel = relative_error(analytic[i], numeric);
        report.max_abs_error = report.max_abs_error.max((analytic[i] - numeric).abs());
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = i;
        }
        report.checked += 1;
    }
    Ok(report)
}
