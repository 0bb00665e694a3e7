//! Dataset sources: a directory of IDX split files or an in-memory synthetic spec.

use std::fs;
use std::path::{Path, PathBuf};

use fedskew_core::data::{stratified_split, synth_generate};
use fedskew_core::{LabeledDataset, SplitFractions, SynthSpec};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::idx::{load_idx_with, parse_idx, write_idx};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Synthetic data plus the split applied to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthData {
    pub spec: SynthSpec,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default)]
    pub split_seed: u64,
}

impl SynthData {
    pub fn generate(&self) -> Result<[LabeledDataset; 3]> {
        self.split.validate()?;
        let ds = synth_generate(&self.spec)?;
        Ok(stratified_split(&ds, self.split, self.split_seed)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synth(SynthData),
    Idx { dir: PathBuf },
}

impl DataSource {
    pub fn load(&self) -> Result<[LabeledDataset; 3]> {
        match self {
            DataSource::Synth(s) => s.generate(),
            DataSource::Idx { dir } => load_data_dir(dir),
        }
    }
}

pub fn split_paths(dir: &Path, split: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{split}-images.idx")),
        dir.join(format!("{split}-labels.idx")),
    )
}

/// Writes `{train,val,test}-{images,labels}.idx` into `dir`.
pub fn write_data_dir(dir: &Path, splits: &[LabeledDataset; 3]) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    for (name, ds) in SPLITS.iter().zip(splits) {
        let (images, labels) = split_paths(dir, name);
        write_idx(ds, &images, &labels)?;
    }
    Ok(())
}

/// Loads the three splits of a data directory. Ids run consecutively across
/// train, val and test so they are unique over the whole directory, and the
/// category count is taken over all three splits.
pub fn load_data_dir(dir: &Path) -> Result<[LabeledDataset; 3]> {
    let mut first = Vec::with_capacity(3);
    for name in SPLITS {
        let (images, labels) = split_paths(dir, name);
        first.push(load_idx_with(&images, &labels, None, 0)?);
    }
    let categories = first.iter().map(|d| d.num_categories()).max().unwrap_or(2);
    let mut offset = 0;
    let mut out = Vec::with_capacity(3);
    for name in SPLITS {
        let (images, labels) = split_paths(dir, name);
        let img = fs::read(&images).map_err(Error::io(&images))?;
        let lab = fs::read(&labels).map_err(Error::io(&labels))?;
        let ds = parse_idx(&img, &lab, Some(categories), offset)?;
        offset += ds.len() as u64;
        out.push(ds);
    }
    Ok(out.try_into().unwrap())
}
