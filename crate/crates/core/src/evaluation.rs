//! Accuracy, the cross-institution matrix, drop rates and the selection metric.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{invalid, Result};
use crate::federation::{Method, Mitigations, RoundLog, TrainOutcome};
use crate::nn::{
    class_weights, forward, histogram, weighted_ce, CategoryWeights, Mode, ModelState,
};
use crate::skew::InstitutionShard;
use crate::tensor::Tensor;

const CHUNK: usize = 256;

/// Seeds that fully determine one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSeeds {
    pub model: u64,
    pub data_order: u64,
    pub partition: u64,
}

/// Drop rate of a run against a named reference accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRate {
    pub reference: String,
    pub reference_accuracy: f64,
    /// Percent, relative to the reference.
    pub value: f64,
}

/// Evaluated outcome of one protocol run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: Method,
    pub mitigations: Mitigations,
    /// Accuracy of the selected global model on the pooled institution test shards.
    pub test_accuracy: f64,
    pub selected_round: Option<usize>,
    pub rounds: Vec<RoundLog>,
    /// Row = model's institution, column = test shard's institution.
    pub cross_matrix: Vec<Vec<f64>>,
    pub drop_rate: Option<DropRate>,
    pub trial_seeds: TrialSeeds,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<Vec<f64>>,
}

impl RunResult {
    /// Sets the drop rate against `reference_accuracy`.
    pub fn with_reference(
        mut self,
        reference: impl Into<String>,
        reference_accuracy: f64,
    ) -> Result<Self> {
        let value = drop_rate(self.test_accuracy, reference_accuracy)?;
        self.drop_rate = Some(DropRate {
            reference: reference.into(),
            reference_accuracy,
            value,
        });
        Ok(self)
    }
}

/// Infer-mode logits for the whole dataset, evaluated in chunks.
fn logits(model: &ModelState, ds: &LabeledDataset) -> Result<Vec<Tensor>> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    idx.chunks(CHUNK)
        .map(|c| forward(model, &ds.images().select(c)?, Mode::Infer).map(|o| o.logits))
        .collect()
}

/// Index of the largest logit; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Infer-mode predicted category for every sample.
pub fn predict(model: &ModelState, ds: &LabeledDataset) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(ds.len());
    for t in logits(model, ds)? {
        let k = t.shape()[1];
        out.extend(t.data().chunks(k).map(argmax));
    }
    Ok(out)
}

/// Fraction of samples whose argmax prediction matches the label.
pub fn accuracy(model: &ModelState, ds: &LabeledDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(invalid!("accuracy of an empty dataset"));
    }
    let pred = predict(model, ds)?;
    let correct = pred.iter().zip(ds.labels()).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / ds.len() as f64)
}

/// Entry (i, j) is the accuracy of `models[i]` on `tests[j]`.
pub fn cross_institution_matrix(
    models: &[ModelState],
    tests: &[&LabeledDataset],
) -> Result<Vec<Vec<f64>>> {
    if models.len() != tests.len() {
        return Err(invalid!(
            "{} models for {} test shards",
            models.len(),
            tests.len()
        ));
    }
    models
        .iter()
        .map(|m| tests.iter().map(|t| accuracy(m, t)).collect())
        .collect()
}

/// `100 (reference - acc) / reference`; negative when `acc` improves on the reference.
pub fn drop_rate(acc: f64, reference: f64) -> Result<f64> {
    if !(reference > 0.0) {
        return Err(invalid!(
            "reference accuracy must be positive, got {}",
            reference
        ));
    }
    Ok(100.0 * (reference - acc) / reference)
}

/// Mean validation loss over the pooled shards. With `wl` the loss is
/// weighted from the pooled validation histogram.
pub fn selection_metric(model: &ModelState, vals: &[&LabeledDataset], wl: bool) -> Result<f64> {
    let total: usize = vals.iter().map(|v| v.len()).sum();
    if total == 0 {
        return Err(invalid!("no validation data"));
    }
    let k = model.arch().num_classes;
    let weights = if wl {
        let mut h = alloc::vec![0; k];
        for v in vals {
            for (a, b) in h.iter_mut().zip(histogram(v.labels(), k)) {
                *a += b;
            }
        }
        class_weights(&h)?
    } else {
        CategoryWeights::uniform(k)
    };
    let mut sum = 0.0;
    for v in vals.iter().filter(|v| !v.is_empty()) {
        let labels = v.labels();
        for (c, t) in logits(model, v)?.iter().enumerate() {
            let y = &labels[c * CHUNK..][..t.shape()[0]];
            sum += weighted_ce(t, y, &weights)?.per_sample.iter().sum::<f64>();
        }
    }
    Ok(sum / total as f64)
}

/// Scores a finished run against the institutions' test shards.
pub fn evaluate(
    outcome: &TrainOutcome,
    shards: &[InstitutionShard],
    method: Method,
    mitigations: Mitigations,
    trial_seeds: TrialSeeds,
) -> Result<RunResult> {
    let tests: Vec<&LabeledDataset> = shards.iter().map(|s| &s.test).collect();
    let pooled = LabeledDataset::concat(&tests)?;
    let test_accuracy = accuracy(&outcome.model, &pooled)?;
    let models: Vec<ModelState> = if outcome.institution_models.len() == tests.len() {
        outcome.institution_models.clone()
    } else {
        alloc::vec![outcome.model.clone(); tests.len()]
    };
    Ok(RunResult {
        method,
        mitigations,
        test_accuracy,
        selected_round: outcome.selected_round,
        rounds: outcome.logs.clone(),
        cross_matrix: cross_institution_matrix(&models, &tests)?,
        drop_rate: None,
        trial_seeds,
        trace: outcome.trace.clone(),
    })
}
