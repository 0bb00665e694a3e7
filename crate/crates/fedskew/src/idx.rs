//! The IDX container: big-endian `u32` header words followed by `u8` payload.
//!
//! Images: `[2051][count][rows][cols][pixels...]`; labels: `[2049][count][labels...]`.
//! Pixels are scaled by 1/255 on load and rounded back on write.

use std::fs;
use std::path::Path;

use fedskew_core::{LabeledDataset, Tensor};

use crate::error::{invalid, Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| invalid!("unexpected end of data"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        match self.u32() {
            Ok(m) if m == expected => Ok(()),
            _ => Err(invalid!("not an IDX file")),
        }
    }
}

/// Decoded image file: `count` images of `rows x cols` bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }
}

pub fn decode_images(bytes: &[u8]) -> Result<IdxImages> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(IMAGE_MAGIC)?;
    let count = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    if rows == 0 || cols == 0 {
        return Err(invalid!(
            "IDX images must have positive extent, got {}x{}",
            rows,
            cols
        ));
    }
    let len = count
        .checked_mul(rows * cols)
        .ok_or_else(|| invalid!("unexpected end of data"))?;
    let pixels = r.take(len)?.to_vec();
    Ok(IdxImages { rows, cols, pixels })
}

pub fn decode_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(LABEL_MAGIC)?;
    let count = r.u32()? as usize;
    Ok(r.take(count)?.to_vec())
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for word in [
        IMAGE_MAGIC,
        images.count() as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
        out.extend(word.to_be_bytes());
    }
    out.extend(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend(LABEL_MAGIC.to_be_bytes());
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend(labels);
    out
}

/// Builds a dataset from IDX bytes. `num_categories` defaults to
/// `max(label) + 1` (at least 2); ids are `first_id..first_id + N`.
pub fn parse_idx(
    image_bytes: &[u8],
    label_bytes: &[u8],
    num_categories: Option<usize>,
    first_id: u64,
) -> Result<LabeledDataset> {
    let images = decode_images(image_bytes)?;
    let labels = decode_labels(label_bytes)?;
    if images.count() != labels.len() {
        return Err(invalid!("image/label count disagree"));
    }
    if labels.is_empty() {
        return Err(invalid!("IDX files hold no samples"));
    }
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let categories =
        num_categories.unwrap_or_else(|| labels.iter().max().map_or(2, |m| (m + 1).max(2)));
    let data = images
        .pixels
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    let tensor = Tensor::new(vec![labels.len(), 1, images.rows, images.cols], data)?;
    let ids = (first_id..first_id + labels.len() as u64).collect();
    Ok(LabeledDataset::new(tensor, labels, categories, ids)?)
}

/// Encodes a single-channel dataset; pixels are rounded to the nearest 1/255.
pub fn to_idx(ds: &LabeledDataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let [c, rows, cols] = ds.image_extent();
    if c != 1 {
        return Err(invalid!(
            "IDX holds single-channel images, dataset has {} channels",
            c
        ));
    }
    if ds.num_categories() > 256 {
        return Err(invalid!(
            "IDX labels are bytes; {} categories do not fit",
            ds.num_categories()
        ));
    }
    let pixels = ds
        .images()
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let labels: Vec<u8> = ds.labels().iter().map(|&l| l as u8).collect();
    Ok((
        encode_images(&IdxImages { rows, cols, pixels }),
        encode_labels(&labels),
    ))
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    load_idx_with(images_path, labels_path, None, 0)
}

pub fn load_idx_with(
    images_path: &Path,
    labels_path: &Path,
    num_categories: Option<usize>,
    first_id: u64,
) -> Result<LabeledDataset> {
    let images = fs::read(images_path).map_err(Error::io(images_path))?;
    let labels = fs::read(labels_path).map_err(Error::io(labels_path))?;
    parse_idx(&images, &labels, num_categories, first_id).map_err(|e| match e {
        Error::Invalid(m) => invalid!(
            "{} / {}: {}",
            images_path.display(),
            labels_path.display(),
            m
        ),
        other => other,
    })
}

pub fn write_idx(ds: &LabeledDataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let (images, labels) = to_idx(ds)?;
    fs::write(images_path, images).map_err(Error::io(images_path))?;
    fs::write(labels_path, labels).map_err(Error::io(labels_path))
}
