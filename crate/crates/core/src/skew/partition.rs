use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{apportion, LabeledDataset};
use crate::error::{invalid, Error, Result};
use crate::rng::{self, stream};

/// Splits per-category availability `hist` across institutions of the given
/// `sizes` so that every cell is within 1 of `sizes[i] * hist[k] / N`.
///
/// Cells start at the floor of their target; each institution's remainder is
/// handed out one unit per category, largest fractional part first, subject
/// to what the category still has left.
pub fn allocate(hist: &[usize], sizes: &[usize]) -> Result<Vec<Vec<usize>>> {
    let total: usize = hist.iter().sum();
    let wanted: usize = sizes.iter().sum();
    if wanted > total {
        return Err(Error::Infeasible(format!(
            "sizes sum to {} but only {} samples are available",
            wanted, total
        )));
    }
    let c = hist.len();
    if total == 0 {
        return Ok(vec![vec![0; c]; sizes.len()]);
    }
    let mut alloc_ = vec![vec![0usize; c]; sizes.len()];
    let mut frac = vec![vec![0usize; c]; sizes.len()];
    let mut left = hist.to_vec();
    for (i, &s) in sizes.iter().enumerate() {
        for k in 0..c {
            let num = s as u128 * hist[k] as u128;
            alloc_[i][k] = (num / total as u128) as usize;
            frac[i][k] = (num % total as u128) as usize;
            left[k] -= alloc_[i][k];
        }
    }
    for (i, &s) in sizes.iter().enumerate() {
        let mut need = s - alloc_[i].iter().sum::<usize>();
        let mut order: Vec<usize> = (0..c).collect();
        order.sort_by(|&a, &b| {
            frac[i][b]
                .cmp(&frac[i][a])
                .then(left[b].cmp(&left[a]))
                .then(a.cmp(&b))
        });
        for k in order {
            if need == 0 {
                break;
            }
            if left[k] > 0 {
                alloc_[i][k] += 1;
                left[k] -= 1;
                need -= 1;
            }
        }
        if need > 0 {
            return Err(Error::Infeasible(format!(
                "cannot fill institution {} proportionally",
                i
            )));
        }
    }
    Ok(alloc_)
}

fn members_by_category(ds: &LabeledDataset, seed: u64, tag: u64) -> Vec<Vec<usize>> {
    (0..ds.num_categories())
        .map(|k| {
            let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels()[i] == k).collect();
            rng::shuffled(
                members.len(),
                rng::derive(seed, &[stream::PARTITION, tag, k as u64]),
            )
            .into_iter()
            .map(|o| members[o])
            .collect()
        })
        .collect()
}

fn take(pools: &mut [Vec<usize>], alloc_: &[Vec<usize>], into: &mut [Vec<usize>]) {
    for (i, row) in alloc_.iter().enumerate() {
        for (k, &count) in row.iter().enumerate() {
            let start = pools[k].len() - count;
            into[i].extend(pools[k].drain(start..));
        }
    }
}

fn build(ds: &LabeledDataset, mut parts: Vec<Vec<usize>>) -> Result<Vec<LabeledDataset>> {
    parts
        .iter_mut()
        .map(|p| {
            p.sort_unstable();
            ds.subset(p)
        })
        .collect()
}

/// Quantity skew: institution `i` receives exactly `sizes[i]` samples with
/// label proportions matching the whole dataset (each category count within 1).
pub fn partition_quantity(
    ds: &LabeledDataset,
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<LabeledDataset>> {
    if sizes.is_empty() {
        return Err(invalid!("no institution sizes given"));
    }
    let alloc_ = allocate(&ds.histogram(), sizes)?;
    for (i, row) in alloc_.iter().enumerate() {
        if let Some(k) = row.iter().position(|&v| v == 0) {
            return Err(Error::Infeasible(format!(
                "institution {} (size {}) is too small to hold category {}",
                i, sizes[i], k
            )));
        }
    }
    let mut pools = members_by_category(ds, seed, 0);
    let mut parts = vec![Vec::new(); sizes.len()];
    take(&mut pools, &alloc_, &mut parts);
    build(ds, parts)
}

/// Equal shard sizes (the first `N mod n` institutions get one extra).
pub fn equal_sizes(total: usize, n: usize) -> Vec<usize> {
    apportion(total, &vec![1.0; n])
}

/// Label-distribution skew: a fraction `f` of each institution's equal-size
/// shard comes from its dominant category (`i mod C`); the rest is drawn
/// proportionally from everything left over.
pub fn partition_label_skew(
    ds: &LabeledDataset,
    n: usize,
    f: f64,
    seed: u64,
) -> Result<Vec<LabeledDataset>> {
    if n < 1 {
        return Err(invalid!("need at least one institution"));
    }
    if !(0.0..=1.0).contains(&f) {
        return Err(invalid!("non-IID fraction must lie in [0, 1], got {}", f));
    }
    let c = ds.num_categories();
    let sizes = equal_sizes(ds.len(), n);
    let dominant: Vec<usize> = sizes
        .iter()
        .map(|&s| libm::round(f * s as f64) as usize)
        .collect();
    let mut pools = members_by_category(ds, seed, 1);
    let mut parts = vec![Vec::new(); n];
    for i in 0..n {
        let k = i % c;
        if pools[k].len() < dominant[i] {
            return Err(Error::Infeasible(format!(
                "category {} has {} samples left but institution {} needs {}",
                k,
                pools[k].len(),
                i,
                dominant[i]
            )));
        }
        let start = pools[k].len() - dominant[i];
        parts[i].extend(pools[k].drain(start..));
    }
    let residue_hist: Vec<usize> = pools.iter().map(|p| p.len()).collect();
    let residue_sizes: Vec<usize> = sizes.iter().zip(&dominant).map(|(s, d)| s - d).collect();
    let alloc_ = allocate(&residue_hist, &residue_sizes)?;
    take(&mut pools, &alloc_, &mut parts);
    if let Some(i) = parts.iter().position(|p| p.is_empty()) {
        return Err(Error::Infeasible(format!(
            "institution {} receives no samples",
            i
        )));
    }
    build(ds, parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthSpec};

    #[test]
    fn allocate_rows_and_columns() {
        let a = allocate(&[10, 20, 30], &[6, 12, 18]).unwrap();
        assert_eq!(a, vec![vec![1, 2, 3], vec![2, 4, 6], vec![3, 6, 9]]);
        assert!(allocate(&[1, 1], &[3]).is_err());
    }

    #[test]
    fn quantity_rejects_oversubscription_and_tiny_shards() {
        let ds = synth_generate(&SynthSpec::balanced(4, 10, 4, 0)).unwrap();
        assert!(partition_quantity(&ds, &[30, 11], 0).is_err());
        assert!(matches!(
            partition_quantity(&ds, &[2, 30], 0),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn label_skew_endpoints() {
        let ds = synth_generate(&SynthSpec::balanced(4, 20, 4, 0)).unwrap();
        let full = partition_label_skew(&ds, 4, 1.0, 1).unwrap();
        for (i, p) in full.iter().enumerate() {
            assert!(p.labels().iter().all(|&l| l == i));
        }
        let iid = partition_label_skew(&ds, 4, 0.0, 1).unwrap();
        for p in &iid {
            assert_eq!(p.histogram(), [5, 5, 5, 5]);
        }
    }

    #[test]
    fn label_skew_reports_starved_category() {
        let ds = synth_generate(&SynthSpec {
            num_categories: 2,
            per_category: vec![30, 10],
            extent: 4,
            seed: 0,
        })
        .unwrap();
        let err = partition_label_skew(&ds, 2, 1.0, 0).unwrap_err();
        let Error::Infeasible(msg) = err else {
            panic!()
        };
        assert!(
            msg.contains("category 1") && msg.contains("institution 1"),
            "{}",
            msg
        );
    }
}
