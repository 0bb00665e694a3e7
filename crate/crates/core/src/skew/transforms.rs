//! Imaging-acquisition degradations. Every transform preserves the tensor
//! shape and clamps results into [0, 1]. Randomness is drawn per image from
//! `derive(seed, [image index])`, so output never depends on evaluation order.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::rng::{self, stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Degradation {
    Resolution { factor: usize },
    Gaussian { sigma: f64 },
    Speckle { sigma: f64 },
    Poisson { scale: f64 },
    MotionBlur { length: usize, angle_deg: f64 },
    Mixture { components: Vec<MixtureComponent> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub transform: Box<Degradation>,
}

pub const DEFAULT_SIGMA: f64 = 0.1;
pub const DEFAULT_POISSON_SCALE: f64 = 64.0;
pub const DEFAULT_BLUR_LENGTH: usize = 5;
pub const DOMINANT_WEIGHT: f64 = 0.7;

impl Degradation {
    pub fn gaussian() -> Self {
        Degradation::Gaussian {
            sigma: DEFAULT_SIGMA,
        }
    }

    pub fn motion_blur() -> Self {
        Degradation::MotionBlur {
            length: DEFAULT_BLUR_LENGTH,
            angle_deg: 0.0,
        }
    }

    /// A mixture of gaussian, speckle, poisson and motion blur where
    /// `dominant` carries [`DOMINANT_WEIGHT`] and the rest share the remainder.
    pub fn dominated_mixture(dominant: Degradation) -> Self {
        let all = [
            Degradation::gaussian(),
            Degradation::Speckle {
                sigma: DEFAULT_SIGMA,
            },
            Degradation::Poisson {
                scale: DEFAULT_POISSON_SCALE,
            },
            Degradation::motion_blur(),
        ];
        let others = all.iter().filter(|d| **d != dominant).count() as f64;
        let components = all
            .into_iter()
            .map(|d| {
                let weight = if d == dominant {
                    DOMINANT_WEIGHT
                } else {
                    (1.0 - DOMINANT_WEIGHT) / others
                };
                MixtureComponent {
                    weight,
                    transform: Box::new(d),
                }
            })
            .collect();
        Degradation::Mixture { components }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Degradation::Resolution { factor } if *factor == 0 => {
                Err(invalid!("resolution factor must be >= 1"))
            }
            Degradation::Gaussian { sigma } | Degradation::Speckle { sigma }
                if !(*sigma >= 0.0) || !sigma.is_finite() =>
            {
                Err(invalid!(
                    "noise sigma must be finite and >= 0, got {}",
                    sigma
                ))
            }
            Degradation::Poisson { scale } if !(*scale > 0.0) || !scale.is_finite() => {
                Err(invalid!("poisson scale must be positive, got {}", scale))
            }
            Degradation::MotionBlur { length, angle_deg }
                if *length == 0 || !angle_deg.is_finite() =>
            {
                Err(invalid!("blur length must be >= 1 with a finite angle"))
            }
            Degradation::Mixture { components } => {
                if components.is_empty() {
                    return Err(invalid!("mixture needs at least one component"));
                }
                if components.iter().any(|c| !(c.weight >= 0.0)) {
                    return Err(invalid!("mixture weights must be nonnegative"));
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(invalid!("mixture weights must sum to 1, got {}", total));
                }
                components.iter().try_for_each(|c| c.transform.validate())
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, images: &Tensor, seed: u64) -> Result<Tensor> {
        self.validate()?;
        check_images(images)?;
        let dims = dims(images);
        let mut out = images.clone();
        for (i, img) in out.data_mut().chunks_mut(dims.len()).enumerate() {
            apply_one(
                self,
                img,
                dims,
                rng::derive(seed, &[stream::TRANSFORM, i as u64]),
            )?;
        }
        Ok(out)
    }
}

#[derive(Clone, Copy)]
struct Dims {
    channels: usize,
    height: usize,
    width: usize,
}

impl Dims {
    fn len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

fn dims(images: &Tensor) -> Dims {
    let s = images.shape();
    Dims {
        channels: s[1],
        height: s[2],
        width: s[3],
    }
}

fn check_images(images: &Tensor) -> Result<()> {
    if images.shape().len() != 4 {
        return Err(shape_err!(
            "images must be N x C x H x W, got {:?}",
            images.shape()
        ));
    }
    Ok(())
}

fn apply_one(d: &Degradation, img: &mut [f64], dims: Dims, seed: u64) -> Result<()> {
    match *d {
        Degradation::Resolution { factor } => resolution_one(img, dims, factor),
        Degradation::Gaussian { sigma } => {
            if sigma > 0.0 {
                let noise = Normal::new(0.0, sigma).map_err(|e| invalid!("{}", e))?;
                let mut r = rng::rng(seed);
                img.iter_mut()
                    .for_each(|v| *v = (*v + noise.sample(&mut r)).clamp(0.0, 1.0));
            }
            Ok(())
        }
        Degradation::Speckle { sigma } => {
            if sigma > 0.0 {
                let noise = Normal::new(0.0, sigma).map_err(|e| invalid!("{}", e))?;
                let mut r = rng::rng(seed);
                img.iter_mut()
                    .for_each(|v| *v = (*v * (1.0 + noise.sample(&mut r))).clamp(0.0, 1.0));
            }
            Ok(())
        }
        Degradation::Poisson { scale } => {
            let mut r = rng::rng(seed);
            for v in img.iter_mut() {
                let lambda = *v * scale;
                let draw = if lambda > 0.0 {
                    Poisson::new(lambda)
                        .map_err(|e| invalid!("{}", e))?
                        .sample(&mut r)
                } else {
                    0.0
                };
                *v = (draw / scale).clamp(0.0, 1.0);
            }
            Ok(())
        }
        Degradation::MotionBlur { length, angle_deg } => {
            let blurred = blur_one(img, dims, length, angle_deg);
            img.iter_mut()
                .zip(blurred)
                .for_each(|(v, b)| *v = b.clamp(0.0, 1.0));
            Ok(())
        }
        Degradation::Mixture { ref components } => {
            let mut r = rng::rng(seed);
            let u: f64 = r.random();
            let mut acc = 0.0;
            let mut pick = components.len() - 1;
            for (i, c) in components.iter().enumerate() {
                acc += c.weight;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            apply_one(
                &components[pick].transform,
                img,
                dims,
                rng::derive(seed, &[pick as u64]),
            )
        }
    }
}

fn resolution_one(img: &mut [f64], d: Dims, k: usize) -> Result<()> {
    if k > d.height.min(d.width) {
        return Err(invalid!(
            "resolution factor {} exceeds image extent {}x{}",
            k,
            d.height,
            d.width
        ));
    }
    if k == 1 {
        return Ok(());
    }
    let plane = d.height * d.width;
    for c in 0..d.channels {
        let p = &mut img[c * plane..][..plane];
        let (bh, bw) = (d.height.div_ceil(k), d.width.div_ceil(k));
        let mut means = vec![0.0; bh * bw];
        for by in 0..bh {
            for bx in 0..bw {
                let (y1, x1) = (((by + 1) * k).min(d.height), ((bx + 1) * k).min(d.width));
                let mut s = 0.0;
                for y in by * k..y1 {
                    for x in bx * k..x1 {
                        s += p[y * d.width + x];
                    }
                }
                means[by * bw + bx] = s / ((y1 - by * k) * (x1 - bx * k)) as f64;
            }
        }
        for y in 0..d.height {
            for x in 0..d.width {
                p[y * d.width + x] = means[(y / k) * bw + x / k].clamp(0.0, 1.0);
            }
        }
    }
    Ok(())
}

/// Line-kernel offsets (dy, dx) of a length-`length` blur at `angle_deg`.
pub fn blur_offsets(length: usize, angle_deg: f64) -> Vec<(isize, isize)> {
    let theta = angle_deg.to_radians();
    let (c, s) = (libm::cos(theta), libm::sin(theta));
    (0..length)
        .map(|i| {
            let t = i as f64 - (length as f64 - 1.0) / 2.0;
            (libm::round(t * s) as isize, libm::round(t * c) as isize)
        })
        .collect()
}

fn blur_one(img: &[f64], d: Dims, length: usize, angle_deg: f64) -> Vec<f64> {
    let offsets = blur_offsets(length, angle_deg);
    let w = 1.0 / length as f64;
    let plane = d.height * d.width;
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut out = vec![0.0; img.len()];
    for c in 0..d.channels {
        let p = &img[c * plane..][..plane];
        for y in 0..d.height {
            for x in 0..d.width {
                let mut acc = 0.0;
                for &(oy, ox) in &offsets {
                    let sy = clamp(y as isize + oy, d.height);
                    let sx = clamp(x as isize + ox, d.width);
                    acc += w * p[sy * d.width + sx];
                }
                out[c * plane + y * d.width + x] = acc;
            }
        }
    }
    out
}

pub fn degrade_resolution(images: &Tensor, factor: usize) -> Result<Tensor> {
    Degradation::Resolution { factor }.apply(images, 0)
}

pub fn add_gaussian(images: &Tensor, sigma: f64, seed: u64) -> Result<Tensor> {
    Degradation::Gaussian { sigma }.apply(images, seed)
}

pub fn add_speckle(images: &Tensor, sigma: f64, seed: u64) -> Result<Tensor> {
    Degradation::Speckle { sigma }.apply(images, seed)
}

pub fn add_poisson(images: &Tensor, scale: f64, seed: u64) -> Result<Tensor> {
    Degradation::Poisson { scale }.apply(images, seed)
}

pub fn motion_blur(images: &Tensor, length: usize, angle_deg: f64) -> Result<Tensor> {
    Degradation::MotionBlur { length, angle_deg }.apply(images, 0)
}

/// Unclamped motion blur, exposed for kernel checks.
pub fn motion_blur_raw(images: &Tensor, length: usize, angle_deg: f64) -> Result<Tensor> {
    check_images(images)?;
    if length == 0 {
        return Err(invalid!("blur length must be >= 1"));
    }
    let d = dims(images);
    let data: Vec<f64> = images
        .data()
        .chunks(d.len())
        .flat_map(|img| blur_one(img, d, length, angle_deg))
        .collect();
    Tensor::new(images.shape().into(), data)
}

pub fn mixture(images: &Tensor, components: Vec<MixtureComponent>, seed: u64) -> Result<Tensor> {
    Degradation::Mixture { components }.apply(images, seed)
}

/// Resolution factors 4, 3, 2, 1 for institutions 1 to 4.
pub fn resolution_skew() -> Vec<Degradation> {
    [4, 3, 2, 1]
        .into_iter()
        .map(|factor| Degradation::Resolution { factor })
        .collect()
}

/// Gaussian noise, motion blur, a gaussian-dominated mixture and a
/// blur-dominated mixture for institutions 1 to 4.
pub fn noise_skew() -> Vec<Degradation> {
    vec![
        Degradation::gaussian(),
        Degradation::motion_blur(),
        Degradation::dominated_mixture(Degradation::gaussian()),
        Degradation::dominated_mixture(Degradation::motion_blur()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker() -> Tensor {
        let v = [
            0.0, 1.0, 0.2, 0.6, 0.4, 0.8, 1.0, 0.0, 0.5, 0.5, 0.3, 0.1, 0.9, 0.7, 0.2, 0.4,
        ];
        Tensor::new(vec![1, 1, 4, 4], v.to_vec()).unwrap()
    }

    #[test]
    fn factor_one_is_identity() {
        let x = checker();
        assert_eq!(degrade_resolution(&x, 1).unwrap(), x);
        assert!(degrade_resolution(&x, 5).is_err());
    }

    #[test]
    fn factor_two_block_means() {
        let y = degrade_resolution(&checker(), 2).unwrap();
        // blocks: TL {0,1,.4,.8} TR {.2,.6,1,0} BL {.5,.5,.9,.7} BR {.3,.1,.2,.4}
        let tl = (0.0 + 1.0 + 0.4 + 0.8) / 4.0;
        let tr = (0.2 + 0.6 + 1.0 + 0.0) / 4.0;
        let bl = (0.5 + 0.5 + 0.9 + 0.7) / 4.0;
        let br = (0.3 + 0.1 + 0.2 + 0.4) / 4.0;
        let want = [
            tl, tl, tr, tr, tl, tl, tr, tr, bl, bl, br, br, bl, bl, br, br,
        ];
        for (g, w) in y.data().iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_sigma_is_identity() {
        let x = checker();
        assert_eq!(add_gaussian(&x, 0.0, 3).unwrap(), x);
        assert_eq!(add_speckle(&x, 0.0, 3).unwrap(), x);
    }

    #[test]
    fn unit_blur_is_identity() {
        let x = checker();
        assert_eq!(motion_blur_raw(&x, 1, 37.0).unwrap(), x);
        assert_eq!(
            blur_offsets(5, 0.0),
            [(0, -2), (0, -1), (0, 0), (0, 1), (0, 2)]
        );
    }

    #[test]
    fn constant_image_survives_resolution_and_blur() {
        let x = Tensor::filled(vec![2, 1, 6, 6], 0.3);
        for k in 1..=6 {
            for (a, b) in degrade_resolution(&x, k)
                .unwrap()
                .data()
                .iter()
                .zip(x.data())
            {
                assert!((a - b).abs() < 1e-15);
            }
        }
        for (a, b) in motion_blur(&x, 5, 30.0)
            .unwrap()
            .data()
            .iter()
            .zip(x.data())
        {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        let x = checker();
        assert!(add_gaussian(&x, -0.1, 0).is_err());
        assert!(add_poisson(&x, 0.0, 0).is_err());
        assert!(motion_blur(&x, 0, 0.0).is_err());
        let bad = vec![MixtureComponent {
            weight: 0.5,
            transform: Box::new(Degradation::gaussian()),
        }];
        assert!(mixture(&x, bad, 0).is_err());
    }

    #[test]
    fn dominated_mixture_weights() {
        let Degradation::Mixture { components } =
            Degradation::dominated_mixture(Degradation::motion_blur())
        else {
            panic!()
        };
        let w: Vec<f64> = components.iter().map(|c| c.weight).collect();
        assert_eq!(w.iter().cloned().fold(0.0, f64::max), 0.7);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(*components[3].transform, Degradation::motion_blur());
        assert_eq!(components[3].weight, 0.7);
    }
}
