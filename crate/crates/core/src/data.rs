//! Labeled image datasets, the procedural generator, and stratified splitting.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::nn::histogram;
use crate::rng::{self, stream};
use crate::tensor::Tensor;

/// Images (N x C x H x W, values in [0, 1]) with category labels and stable ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    images: Tensor,
    labels: Vec<usize>,
    num_categories: usize,
    ids: Vec<u64>,
    /// Optional grouping key per sample (e.g. subject); grouped samples are
    /// never separated by [`stratified_split`].
    groups: Option<Vec<u64>>,
}

impl LabeledDataset {
    pub fn new(
        images: Tensor,
        labels: Vec<usize>,
        num_categories: usize,
        ids: Vec<u64>,
    ) -> Result<Self> {
        Self::with_groups(images, labels, num_categories, ids, None)
    }

    pub fn with_groups(
        images: Tensor,
        labels: Vec<usize>,
        num_categories: usize,
        ids: Vec<u64>,
        groups: Option<Vec<u64>>,
    ) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(shape_err!(
                "images must be N x C x H x W, got {:?}",
                images.shape()
            ));
        }
        let n = images.shape()[0];
        if labels.len() != n || ids.len() != n {
            return Err(shape_err!(
                "{} images, {} labels, {} ids",
                n,
                labels.len(),
                ids.len()
            ));
        }
        if let Some(g) = &groups {
            if g.len() != n {
                return Err(shape_err!("{} group keys for {} samples", g.len(), n));
            }
        }
        if num_categories < 2 {
            return Err(invalid!(
                "need at least 2 categories, got {}",
                num_categories
            ));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= num_categories) {
            return Err(invalid!("label {} outside [0, {})", l, num_categories));
        }
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid!("sample ids are not unique"));
        }
        if images.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(invalid!("pixel values must lie in [0, 1]"));
        }
        Ok(Self {
            images,
            labels,
            num_categories,
            ids,
            groups,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn groups(&self) -> Option<&[u64]> {
        self.groups.as_deref()
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    /// (channels, height, width) of each image.
    pub fn image_extent(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn histogram(&self) -> Vec<usize> {
        histogram(&self.labels, self.num_categories)
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(invalid!("empty subset"));
        }
        Ok(Self {
            images: self.images.select(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_categories: self.num_categories,
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
            groups: self
                .groups
                .as_ref()
                .map(|g| indices.iter().map(|&i| g[i]).collect()),
        })
    }

    /// Samples whose ids are listed, in list order.
    pub fn select_ids(&self, ids: &[u64]) -> Result<Self> {
        let pos: BTreeMap<u64, usize> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i))
            .collect();
        let idx = ids
            .iter()
            .map(|id| {
                pos.get(id)
                    .copied()
                    .ok_or_else(|| invalid!("unknown sample id {}", id))
            })
            .collect::<Result<Vec<_>>>()?;
        self.subset(&idx)
    }

    /// Replaces the image tensor (same shape), keeping labels and ids.
    pub fn with_images(&self, images: Tensor) -> Result<Self> {
        if images.shape() != self.images.shape() {
            return Err(shape_err!(
                "replacement images {:?} differ from {:?}",
                images.shape(),
                self.images.shape()
            ));
        }
        Self::with_groups(
            images,
            self.labels.clone(),
            self.num_categories,
            self.ids.clone(),
            self.groups.clone(),
        )
    }

    pub fn concat(parts: &[&LabeledDataset]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| invalid!("cannot concatenate zero datasets"))?;
        if parts
            .iter()
            .any(|p| p.num_categories != first.num_categories)
        {
            return Err(invalid!("datasets disagree on the category count"));
        }
        let images = Tensor::concat(&parts.iter().map(|p| &p.images).collect::<Vec<_>>())?;
        let groups = if parts.iter().all(|p| p.groups.is_some()) {
            Some(
                parts
                    .iter()
                    .flat_map(|p| p.groups.clone().unwrap())
                    .collect(),
            )
        } else {
            None
        };
        Self::with_groups(
            images,
            parts
                .iter()
                .flat_map(|p| p.labels.iter().copied())
                .collect(),
            first.num_categories,
            parts.iter().flat_map(|p| p.ids.iter().copied()).collect(),
            groups,
        )
    }
}

/// Parameters of the procedural oriented-bar task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub num_categories: usize,
    /// Sample count per category.
    pub per_category: Vec<usize>,
    /// Images are `extent` x `extent`, one channel.
    pub extent: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn balanced(num_categories: usize, per_category: usize, extent: usize, seed: u64) -> Self {
        Self {
            num_categories,
            per_category: vec![per_category; num_categories],
            extent,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_categories < 2 {
            return Err(invalid!(
                "need at least 2 categories, got {}",
                self.num_categories
            ));
        }
        if self.per_category.len() != self.num_categories {
            return Err(invalid!(
                "{} per-category counts for {} categories",
                self.per_category.len(),
                self.num_categories
            ));
        }
        if self.per_category.contains(&0) {
            return Err(invalid!("every category needs at least one sample"));
        }
        if self.extent < 4 {
            return Err(invalid!(
                "image extent must be at least 4, got {}",
                self.extent
            ));
        }
        Ok(())
    }
}

// Difficulty of the generated task.
const ANGLE_JITTER: f64 = 0.6; // fraction of half the inter-category spacing
const CENTER_JITTER: f64 = 0.15; // fraction of the extent
const BAR_WIDTH: f64 = 0.8; // pixels, gaussian profile sigma
const PIXEL_NOISE: f64 = 0.05;

fn render_bar(out: &mut [f64], extent: usize, rng: &mut rng::Rng, base_angle: f64, spacing: f64) {
    let e = extent as f64;
    let angle = base_angle + rng.random_range(-1.0..1.0) * ANGLE_JITTER * spacing * 0.5;
    let cx = (e - 1.0) / 2.0 + rng.random_range(-1.0..1.0) * CENTER_JITTER * e;
    let cy = (e - 1.0) / 2.0 + rng.random_range(-1.0..1.0) * CENTER_JITTER * e;
    let half_len = rng.random_range(0.28..0.42) * e;
    let intensity = rng.random_range(0.1..0.26);
    let background = rng.random_range(0.05..0.25);
    let (dx, dy) = (libm::cos(angle), libm::sin(angle));
    let noise = Normal::new(0.0, PIXEL_NOISE).unwrap();
    for y in 0..extent {
        for x in 0..extent {
            let (px, py) = (x as f64 - cx, y as f64 - cy);
            let along = (px * dx + py * dy).clamp(-half_len, half_len);
            let (qx, qy) = (px - along * dx, py - along * dy);
            let d2 = qx * qx + qy * qy;
            let v = background
                + intensity * libm::exp(-d2 / (2.0 * BAR_WIDTH * BAR_WIDTH))
                + noise.sample(rng);
            out[y * extent + x] = v.clamp(0.0, 1.0);
        }
    }
}

/// Generates the oriented-bar task: category `k` is a bar at angle
/// `k * pi / C` with per-sample angle, position, length and contrast jitter
/// plus pixel noise. Samples are emitted category by category with ids
/// `0..N`; the output is a pure function of `spec`.
pub fn synth_generate(spec: &SynthSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let total: usize = spec.per_category.iter().sum();
    let pixels = spec.extent * spec.extent;
    let spacing = PI / spec.num_categories as f64;
    let mut data = vec![0.0; total * pixels];
    let mut labels = Vec::with_capacity(total);
    let mut i = 0;
    for (k, &count) in spec.per_category.iter().enumerate() {
        for _ in 0..count {
            let mut r = rng::rng(rng::derive(spec.seed, &[stream::SYNTH, i as u64]));
            render_bar(
                &mut data[i * pixels..][..pixels],
                spec.extent,
                &mut r,
                k as f64 * spacing,
                spacing,
            );
            labels.push(k);
            i += 1;
        }
    }
    LabeledDataset::new(
        Tensor::new(vec![total, 1, spec.extent, spec.extent], data)?,
        labels,
        spec.num_categories,
        (0..total as u64).collect(),
    )
}

/// Fractions of a three-way split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(invalid!("split fractions must be positive: {:?}", f));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid!(
                "split fractions must sum to 1, got {}",
                f.iter().sum::<f64>()
            ));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

/// Largest-remainder apportionment of `total` by `fractions`; ties go to the
/// earlier entry. Each share is within 1 of `total * fraction`.
pub fn apportion(total: usize, fractions: &[f64]) -> Vec<usize> {
    let sum: f64 = fractions.iter().sum();
    let targets: Vec<f64> = fractions.iter().map(|f| total as f64 * f / sum).collect();
    let mut out: Vec<usize> = targets.iter().map(|t| libm::floor(*t) as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (targets[a] - out[a] as f64, targets[b] - out[b] as f64);
        fb.partial_cmp(&fa)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        out[i] += 1;
    }
    out
}

/// Splits into (train, val, test) preserving per-category proportions.
///
/// Without multi-sample groups every category's count in every split is
/// within 1 of exact proportionality. With groups, whole groups are assigned
/// greedily to the split furthest below its target size.
pub fn stratified_split(
    ds: &LabeledDataset,
    fractions: SplitFractions,
    seed: u64,
) -> Result<[LabeledDataset; 3]> {
    fractions.validate()?;
    let f = fractions.as_array();
    let mut parts: [Vec<usize>; 3] = Default::default();
    let grouped = ds.groups().filter(|g| {
        let mut s = g.to_vec();
        s.sort_unstable();
        s.windows(2).any(|w| w[0] == w[1])
    });
    match grouped {
        None => {
            for k in 0..ds.num_categories() {
                let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels()[i] == k).collect();
                let order =
                    rng::shuffled(members.len(), rng::derive(seed, &[stream::SPLIT, k as u64]));
                let sizes = apportion(members.len(), &f);
                let mut it = order.into_iter().map(|o| members[o]);
                for (s, &size) in sizes.iter().enumerate() {
                    parts[s].extend(it.by_ref().take(size));
                }
            }
        }
        Some(groups) => {
            let mut by_group: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
            for (i, &g) in groups.iter().enumerate() {
                by_group.entry(g).or_default().push(i);
            }
            let keys: Vec<u64> = by_group.keys().copied().collect();
            let order = rng::shuffled(keys.len(), rng::derive(seed, &[stream::SPLIT]));
            let targets: Vec<f64> = f.iter().map(|v| v * ds.len() as f64).collect();
            for o in order {
                let members = &by_group[&keys[o]];
                let s = (0..3)
                    .max_by(|&a, &b| {
                        let da = targets[a] - parts[a].len() as f64;
                        let db = targets[b] - parts[b].len() as f64;
                        da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                    })
                    .unwrap();
                parts[s].extend(members);
            }
        }
    }
    let names = ["train", "val", "test"];
    let mut out = Vec::with_capacity(3);
    for (s, idx) in parts.iter_mut().enumerate() {
        idx.sort_unstable();
        let h = histogram(
            &idx.iter().map(|&i| ds.labels()[i]).collect::<Vec<_>>(),
            ds.num_categories(),
        );
        if let Some(k) = h.iter().position(|&c| c == 0) {
            return Err(Error::Infeasible(alloc::format!(
                "{} split receives no samples of category {}",
                names[s],
                k
            )));
        }
        out.push(ds.subset(idx)?);
    }
    let test = out.pop().unwrap();
    let val = out.pop().unwrap();
    let train = out.pop().unwrap();
    Ok([train, val, test])
}
