//! Minibatch streams and per-protocol iteration budgets.

use alloc::vec::Vec;

use super::BatchSize;
use crate::data::LabeledDataset;
use crate::error::{invalid, Result};
use crate::rng::{self, stream};
use crate::tensor::Tensor;

/// Endless minibatch sequence over one institution's training data.
///
/// Each local epoch is a fresh permutation keyed by (seed, institution,
/// epoch); the incomplete tail batch is dropped.
#[derive(Debug, Clone)]
pub struct BatchStream<'a> {
    ds: &'a LabeledDataset,
    institution: u64,
    seed: u64,
    batch: usize,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl<'a> BatchStream<'a> {
    pub fn new(
        ds: &'a LabeledDataset,
        institution: usize,
        seed: u64,
        batch: BatchSize,
    ) -> Result<Self> {
        let b = match batch {
            BatchSize::Fixed(b) => b,
            BatchSize::Full(_) => ds.len(),
        };
        if b == 0 || b > ds.len() {
            return Err(invalid!(
                "institution {} has {} samples, fewer than the batch size {}",
                institution,
                ds.len(),
                b
            ));
        }
        let mut s = Self {
            ds,
            institution: institution as u64,
            seed,
            batch: b,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        };
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        self.order = rng::shuffled(
            self.ds.len(),
            rng::derive(
                self.seed,
                &[stream::DATA_ORDER, self.institution, self.epoch],
            ),
        );
        self.pos = 0;
    }

    pub fn next_indices(&mut self) -> &[usize] {
        if self.pos + self.batch > self.order.len() {
            self.epoch += 1;
            self.reshuffle();
        }
        let out = &self.order[self.pos..self.pos + self.batch];
        self.pos += self.batch;
        out
    }

    pub fn next_batch(&mut self) -> Result<(Tensor, Vec<usize>)> {
        let ds = self.ds;
        let idx = self.next_indices();
        let labels = idx.iter().map(|&i| ds.labels()[i]).collect();
        Ok((ds.images().select(idx)?, labels))
    }

    /// Local epochs started so far (the first is 0).
    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

fn fixed(batch: BatchSize) -> Option<usize> {
    match batch {
        BatchSize::Fixed(b) => Some(b),
        BatchSize::Full(_) => None,
    }
}

/// FedSGD iterations per round: `floor(Q_max / B)`; smaller institutions
/// reshuffle and cycle. One with full batches.
pub fn fedsgd_iterations(sizes: &[usize], batch: BatchSize) -> Result<usize> {
    let Some(b) = fixed(batch) else { return Ok(1) };
    if let Some(i) = sizes.iter().position(|&q| q < b) {
        return Err(invalid!(
            "institution {} has {} samples, fewer than the batch size {}",
            i,
            sizes[i],
            b
        ));
    }
    Ok(sizes.iter().copied().max().unwrap_or(0) / b)
}

/// FedAVG local steps per round: `floor(Q_i / B)` (one local epoch).
pub fn fedavg_local_steps(sizes: &[usize], batch: BatchSize) -> Result<Vec<usize>> {
    let Some(b) = fixed(batch) else {
        return Ok(alloc::vec![1; sizes.len()]);
    };
    sizes
        .iter()
        .enumerate()
        .map(|(i, &q)| match q / b {
            0 => Err(invalid!(
                "institution {} has {} samples, too few for one batch of {}",
                i,
                q,
                b
            )),
            steps => Ok(steps),
        })
        .collect()
}

/// CWT iterations per institution visit: `floor(Q / (B n))` for every
/// institution, or `floor(Q_i / B)` with proportional budgets.
pub fn cwt_visit_budgets(
    sizes: &[usize],
    batch: BatchSize,
    proportional: bool,
) -> Result<Vec<usize>> {
    let Some(b) = fixed(batch) else {
        return Ok(alloc::vec![1; sizes.len()]);
    };
    if let Some(i) = sizes.iter().position(|&q| q < b) {
        return Err(invalid!(
            "institution {} has {} samples, fewer than the batch size {}",
            i,
            sizes[i],
            b
        ));
    }
    if proportional {
        return fedavg_local_steps(sizes, batch);
    }
    let total: usize = sizes.iter().sum();
    match total / (b * sizes.len()) {
        0 => Err(invalid!(
            "zero iterations per visit: {} samples, batch {}, {} institutions",
            total,
            b,
            sizes.len()
        )),
        per_visit => Ok(alloc::vec![per_visit; sizes.len()]),
    }
}
