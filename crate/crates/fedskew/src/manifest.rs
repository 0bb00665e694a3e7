//! Partition manifests: the sample ids and degradation of every institution,
//! enough to rebuild the shards without rerunning the partitioner.

use fedskew_core::skew::score_partition;
use fedskew_core::{
    Degradation, InstitutionShard, LabeledDataset, PartitionPlan, Regime, SkewReport,
};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A partition plan as written in files. With `scale_to_train`, quantity
/// sizes are proportions that get apportioned to the training set size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    pub regime: Regime,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scale_to_train: bool,
}

impl PlanSpec {
    pub fn resolve(&self, train_len: usize) -> Result<PartitionPlan> {
        Ok(PartitionPlan {
            regime: resolve_regime(&self.regime, self.scale_to_train, train_len)?,
            seed: self.seed,
        })
    }
}

pub fn resolve_regime(regime: &Regime, scale_to_train: bool, train_len: usize) -> Result<Regime> {
    match (regime, scale_to_train) {
        (_, false) => Ok(regime.clone()),
        (Regime::Quantity { sizes }, true) => {
            let weights: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
            Ok(Regime::Quantity {
                sizes: fedskew_core::data::apportion(train_len, &weights),
            })
        }
        _ => Err(invalid!("scale_to_train applies to quantity plans only")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub institution_id: usize,
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
    #[serde(default)]
    pub degradation: Option<Degradation>,
    #[serde(default)]
    pub degradation_seeds: [u64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub plan: PartitionPlan,
    pub institutions: Vec<ManifestEntry>,
    pub skew: SkewReport,
}

impl Manifest {
    pub fn from_shards(plan: PartitionPlan, shards: &[InstitutionShard]) -> Result<Self> {
        let institutions = shards
            .iter()
            .map(|s| ManifestEntry {
                institution_id: s.institution_id,
                train: s.train.ids().to_vec(),
                val: s.val.ids().to_vec(),
                test: s.test.ids().to_vec(),
                degradation: s.degradation.clone(),
                degradation_seeds: s.degradation_seeds,
            })
            .collect();
        Ok(Manifest {
            plan,
            institutions,
            skew: score_partition(shards)?,
        })
    }

    /// Applies a plan to the three splits and records the result.
    pub fn build(
        plan: PartitionPlan,
        splits: &[LabeledDataset; 3],
    ) -> Result<(Self, Vec<InstitutionShard>)> {
        let shards = plan.apply(&splits[0], &splits[1], &splits[2])?;
        Ok((Self::from_shards(plan, &shards)?, shards))
    }

    /// Rebuilds the shards from recorded ids, reapplying each degradation
    /// with its recorded seeds.
    pub fn materialize(&self, splits: &[LabeledDataset; 3]) -> Result<Vec<InstitutionShard>> {
        self.institutions
            .iter()
            .map(|e| {
                let pick = |k: usize, ids: &[u64]| -> Result<LabeledDataset> {
                    let ds = splits[k].select_ids(ids)?;
                    match &e.degradation {
                        Some(d) => {
                            Ok(ds.with_images(d.apply(ds.images(), e.degradation_seeds[k])?)?)
                        }
                        None => Ok(ds),
                    }
                };
                Ok(InstitutionShard {
                    institution_id: e.institution_id,
                    train: pick(0, &e.train)?,
                    val: pick(1, &e.val)?,
                    test: pick(2, &e.test)?,
                    degradation: e.degradation.clone(),
                    degradation_seeds: e.degradation_seeds,
                })
            })
            .collect()
    }
}
