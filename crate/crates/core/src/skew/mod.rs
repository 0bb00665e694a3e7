//! Heterogeneity regimes (quantity, label distribution, acquisition) and
//! the metrics that score them.

mod metrics;
mod partition;
pub mod transforms;

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use metrics::{counts_to_f64, ks_distance, mean_pairwise_ks, quantity_std};
pub use partition::{allocate, equal_sizes, partition_label_skew, partition_quantity};
pub use transforms::{Degradation, MixtureComponent};

use crate::data::{apportion, LabeledDataset};
use crate::error::{invalid, Error, Result};
use crate::rng::{self, stream};

/// One institution's private data.
#[derive(Debug, Clone, PartialEq)]
pub struct InstitutionShard {
    pub institution_id: usize,
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
    /// Acquisition degradation applied to all three splits, if any.
    pub degradation: Option<Degradation>,
    /// Degradation seeds used for (train, val, test).
    pub degradation_seeds: [u64; 3],
}

impl InstitutionShard {
    /// Training sample count `Q_i`.
    pub fn size(&self) -> usize {
        self.train.len()
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        self.train.histogram()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Regime {
    /// Training sizes per institution; validation and test shards are scaled
    /// to the same proportions.
    Quantity { sizes: Vec<usize> },
    /// Equal sizes with a non-IID fraction `fraction` of dominant-category data.
    Label { institutions: usize, fraction: f64 },
    /// Equal IID shards, each degraded by its institution's transform.
    Acquisition { transforms: Vec<Degradation> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionPlan {
    pub regime: Regime,
    #[serde(default)]
    pub seed: u64,
}

impl PartitionPlan {
    pub fn institutions(&self) -> usize {
        match &self.regime {
            Regime::Quantity { sizes } => sizes.len(),
            Regime::Label { institutions, .. } => *institutions,
            Regime::Acquisition { transforms } => transforms.len(),
        }
    }

    pub fn regime_name(&self) -> &'static str {
        match self.regime {
            Regime::Quantity { .. } => "quantity",
            Regime::Label { .. } => "label",
            Regime::Acquisition { .. } => "acquisition",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.institutions() < 2 {
            return Err(invalid!(
                "a partition needs at least 2 institutions, got {}",
                self.institutions()
            ));
        }
        match &self.regime {
            Regime::Quantity { sizes } if sizes.contains(&0) => {
                Err(invalid!("institution sizes must be positive"))
            }
            Regime::Label { fraction, .. } if !(0.0..=1.0).contains(fraction) => Err(invalid!(
                "non-IID fraction must lie in [0, 1], got {}",
                fraction
            )),
            Regime::Acquisition { transforms } => transforms.iter().try_for_each(|t| t.validate()),
            _ => Ok(()),
        }
    }

    /// Seed for institution `institution`'s degradation of split `split`
    /// (0 train, 1 val, 2 test).
    pub fn degradation_seed(&self, institution: usize, split: usize) -> u64 {
        rng::derive(
            self.seed,
            &[stream::TRANSFORM, institution as u64, split as u64],
        )
    }

    fn split_parts(
        &self,
        ds: &LabeledDataset,
        split: usize,
        train_len: usize,
    ) -> Result<Vec<LabeledDataset>> {
        let seed = rng::derive(self.seed, &[stream::PARTITION, split as u64]);
        match &self.regime {
            Regime::Quantity { sizes } => {
                let sizes = if split == 0 {
                    sizes.clone()
                } else {
                    let wanted: usize = sizes.iter().sum();
                    let scaled = ((wanted as u128 * ds.len() as u128) / train_len as u128) as usize;
                    let weights: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
                    apportion(scaled.min(ds.len()), &weights)
                };
                partition_quantity(ds, &sizes, seed)
            }
            Regime::Label {
                institutions,
                fraction,
            } => partition_label_skew(ds, *institutions, *fraction, seed),
            Regime::Acquisition { transforms } => {
                let parts = partition_quantity(ds, &equal_sizes(ds.len(), transforms.len()), seed)?;
                parts
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        p.with_images(
                            transforms[i].apply(p.images(), self.degradation_seed(i, split))?,
                        )
                    })
                    .collect()
            }
        }
    }

    /// Materializes the plan on a (train, val, test) split. Validation and
    /// test shards inherit their institution's skew.
    pub fn apply(
        &self,
        train: &LabeledDataset,
        val: &LabeledDataset,
        test: &LabeledDataset,
    ) -> Result<Vec<InstitutionShard>> {
        self.validate()?;
        let name = ["train", "val", "test"];
        let mut per_split = Vec::with_capacity(3);
        for (s, ds) in [train, val, test].into_iter().enumerate() {
            per_split.push(
                self.split_parts(ds, s, train.len())
                    .map_err(|e| Error::Infeasible(format!("{} split: {}", name[s], e)))?,
            );
        }
        let tests = per_split.pop().unwrap();
        let vals = per_split.pop().unwrap();
        let trains = per_split.pop().unwrap();
        let degradations: Vec<Option<Degradation>> = match &self.regime {
            Regime::Acquisition { transforms } => transforms.iter().cloned().map(Some).collect(),
            _ => alloc::vec![None; trains.len()],
        };
        Ok(trains
            .into_iter()
            .zip(vals)
            .zip(tests)
            .zip(degradations)
            .enumerate()
            .map(
                |(i, (((train, val), test), degradation))| InstitutionShard {
                    institution_id: i,
                    train,
                    val,
                    test,
                    degradation_seeds: if degradation.is_some() {
                        [0, 1, 2].map(|s| self.degradation_seed(i, s))
                    } else {
                        [0; 3]
                    },
                    degradation,
                },
            )
            .collect())
    }
}

/// Quantity and label skew of a partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewReport {
    pub quantity_std: f64,
    pub mean_pairwise_ks: f64,
    pub sizes: Vec<usize>,
    pub label_histograms: Vec<Vec<usize>>,
}

pub fn score_partition(shards: &[InstitutionShard]) -> Result<SkewReport> {
    if shards.len() < 2 {
        return Err(invalid!("need at least 2 shards, got {}", shards.len()));
    }
    let sizes: Vec<usize> = shards.iter().map(|s| s.size()).collect();
    let label_histograms: Vec<Vec<usize>> = shards.iter().map(|s| s.label_histogram()).collect();
    Ok(SkewReport {
        quantity_std: quantity_std(&sizes)?,
        mean_pairwise_ks: mean_pairwise_ks(&counts_to_f64(&label_histograms))?,
        sizes,
        label_histograms,
    })
}
