use alloc::vec::Vec;

use crate::error::{invalid, Result};

/// Sample (n-1 denominator) standard deviation of institution sizes.
pub fn quantity_std(sizes: &[usize]) -> Result<f64> {
    if sizes.len() < 2 {
        return Err(invalid!(
            "need at least 2 institutions, got {}",
            sizes.len()
        ));
    }
    let n = sizes.len() as f64;
    let mean = sizes.iter().map(|&s| s as f64).sum::<f64>() / n;
    let ss: f64 = sizes
        .iter()
        .map(|&s| (s as f64 - mean) * (s as f64 - mean))
        .sum();
    Ok(libm::sqrt(ss / (n - 1.0)))
}

fn cdf(hist: &[f64]) -> Vec<f64> {
    let total: f64 = hist.iter().sum();
    let mut acc = 0.0;
    hist.iter()
        .map(|&h| {
            acc += h;
            acc / total
        })
        .collect()
}

/// Two-sample KS distance between category histograms, with CDFs taken over
/// the category index order.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    cdf(a)
        .iter()
        .zip(cdf(b))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Mean KS distance over all unordered institution pairs. 0 means identical
/// label distributions, 1 means disjoint ones.
pub fn mean_pairwise_ks(histograms: &[Vec<f64>]) -> Result<f64> {
    if histograms.len() < 2 {
        return Err(invalid!(
            "need at least 2 histograms, got {}",
            histograms.len()
        ));
    }
    let c = histograms[0].len();
    for (i, h) in histograms.iter().enumerate() {
        if h.len() != c {
            return Err(invalid!(
                "histogram {} has {} categories, expected {}",
                i,
                h.len(),
                c
            ));
        }
        if h.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(invalid!(
                "histogram {} has a negative or non-finite count",
                i
            ));
        }
        if !(h.iter().sum::<f64>() > 0.0) {
            return Err(invalid!("histogram {} is empty", i));
        }
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..histograms.len() {
        for j in i + 1..histograms.len() {
            sum += ks_distance(&histograms[i], &histograms[j]);
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

pub fn counts_to_f64(histograms: &[Vec<usize>]) -> Vec<Vec<f64>> {
    histograms
        .iter()
        .map(|h| h.iter().map(|&v| v as f64).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn std_of_equal_sizes_is_zero() {
        assert_eq!(quantity_std(&[474, 474, 474, 474]).unwrap(), 0.0);
        assert!(quantity_std(&[5]).is_err());
    }

    #[test]
    fn ks_examples() {
        let u = vec![0.25; 4];
        assert_eq!(
            mean_pairwise_ks(&[u.clone(), u.clone(), u.clone()]).unwrap(),
            0.0
        );
        let a = vec![0.5, 0.5, 0.0, 0.0];
        let b = vec![0.0, 0.0, 0.5, 0.5];
        assert_eq!(mean_pairwise_ks(&[a.clone(), b.clone()]).unwrap(), 1.0);
        assert!(mean_pairwise_ks(&[a, vec![0.0; 4]]).is_err());
    }
}
