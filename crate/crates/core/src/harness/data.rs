//! Paired low/normal-light samples: a seeded synthetic generator and a directory loader.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::image_io::{load_png, save_png};
use crate::error::{Error, Result};
use crate::tensor_core::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub id: String,
    /// `(1, 3, H, W)` in `[0, 1]`.
    pub low: Tensor,
    pub normal: Tensor,
}

impl PairedSample {
    pub fn new(id: impl Into<String>, low: Tensor, normal: Tensor) -> Result<Self> {
        let s = low.shape();
        if s != normal.shape() || s.batch != 1 || s.channels != 3 {
            return Err(Error::shape(
                "paired sample",
                format!("low {} and normal {} must both be (1, 3, H, W)", s, normal.shape()),
            ));
        }
        Ok(Self {
            id: id.into(),
            low,
            normal,
        })
    }
}

/// Ranges of the synthetic degradation `clamp(gain · normal^gamma + noise)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Degradation {
    pub gamma: (f64, f64),
    pub gain: (f64, f64),
    pub noise_sigma: (f64, f64),
}

impl Default for Degradation {
    fn default() -> Self {
        Self {
            gamma: (2.0, 3.0),
            gain: (0.2, 0.5),
            noise_sigma: (0.01, 0.03),
        }
    }
}

fn clean_image(size: usize, rng: &mut impl Rng) -> Tensor {
    let mut colour = || [0; 3].map(|_| rng.random_range(0.05..0.5));
    let (c0, c1) = (colour(), colour());
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let n = size as f64;
    let mut img = Tensor::from_fn(Shape::new(1, 3, size, size), |_, c, y, x| {
        let t = 0.5 + ((x as f64 / n - 0.5) * dx + (y as f64 / n - 0.5) * dy) * 0.7;
        c0[c] * (1.0 - t) + c1[c] * t
    });
    for _ in 0..rng.random_range(2..6) {
        let w = rng.random_range(size / 8..=size / 2).max(1);
        let h = rng.random_range(size / 8..=size / 2).max(1);
        let (x0, y0) = (rng.random_range(0..=size - w), rng.random_range(0..=size - h));
        let col = [0; 3].map(|_| rng.random_range(0.05..0.55));
        let alpha = rng.random_range(0.5..1.0);
        for (c, &value) in col.iter().enumerate() {
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    let v = img.at_mut(0, c, y, x);
                    *v = (1.0 - alpha) * *v + alpha * value;
                }
            }
        }
    }
    let (fx, fy) = (rng.random_range(1.0..4.0), rng.random_range(1.0..4.0));
    let amp = rng.random_range(0.03..0.12);
    let ph: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    Tensor::from_fn(img.shape(), |_, c, y, x| {
        let s = (std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) / n + ph).sin();
        (img.at(0, c, y, x) + amp * s).clamp(0.0, 1.0)
    })
}

fn degrade(normal: &Tensor, d: &Degradation, rng: &mut impl Rng) -> Tensor {
    let gamma = rng.random_range(d.gamma.0..=d.gamma.1);
    let gain = rng.random_range(d.gain.0..=d.gain.1);
    let sigma = rng.random_range(d.noise_sigma.0..=d.noise_sigma.1);
    let noise = Normal::new(0.0, sigma).expect("positive sigma");
    Tensor::from_fn(normal.shape(), |b, c, y, x| {
        (gain * normal.at(b, c, y, x).powf(gamma) + noise.sample(rng)).clamp(0.0, 1.0)
    })
}

/// `count` pairs of `size x size` images. Sample `i` draws from stream `i` of a ChaCha8
/// generator seeded with `seed`, so samples do not depend on each other.
pub fn synth_pairs(count: usize, size: usize, seed: u64) -> Result<Vec<PairedSample>> {
    synth_pairs_with(count, size, seed, &Degradation::default())
}

pub fn synth_pairs_with(count: usize, size: usize, seed: u64, d: &Degradation) -> Result<Vec<PairedSample>> {
    if size == 0 || size % 4 != 0 {
        return Err(Error::Invalid(format!("image size must be a positive multiple of 4, got {size}")));
    }
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let normal = clean_image(size, &mut rng);
            let low = degrade(&normal, d, &mut rng);
            PairedSample::new(format!("pair_{i:04}"), low, normal)
        })
        .collect()
}

/// Writes `low/<id>.png` and `high/<id>.png` under `dir`.
pub fn write_pairs(dir: &Path, pairs: &[PairedSample]) -> Result<()> {
    for sub in ["low", "high"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    for p in pairs {
        save_png(&dir.join("low").join(format!("{}.png", p.id)), &p.low)?;
        save_png(&dir.join("high").join(format!("{}.png", p.id)), &p.normal)?;
    }
    Ok(())
}

/// Loads every `low/<name>.png` with a matching `high/<name>.png`, sorted by name.
pub fn load_paired_dir(dir: &Path) -> Result<Vec<PairedSample>> {
    let low_dir = dir.join("low");
    let entries = fs::read_dir(&low_dir).map_err(|e| Error::io(&low_dir, e))?;
    let mut names = Vec::new();
    for e in entries {
        let e = e.map_err(|e| Error::io(&low_dir, e))?;
        let name = e.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(Error::Invalid(format!("no PNG files in {}", low_dir.display())));
    }
    names
        .into_iter()
        .map(|name| {
            let high = dir.join("high").join(&name);
            if !high.exists() {
                return Err(Error::Invalid(format!("{} has no partner in high/", name)));
            }
            let id = name.rsplit_once('.').map_or(name.as_str(), |(s, _)| s).to_string();
            PairedSample::new(id, load_png(&low_dir.join(&name))?, load_png(&high)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::psnr;

    #[test]
    fn generation_is_deterministic_and_independent_per_sample() {
        let a = synth_pairs(6, 16, 3).unwrap();
        assert_eq!(a, synth_pairs(6, 16, 3).unwrap());
        assert_eq!(a[2..4], synth_pairs(4, 16, 3).unwrap()[2..4]);
        assert_ne!(a, synth_pairs(6, 16, 4).unwrap());
        assert!(synth_pairs(1, 10, 0).is_err());
    }

    #[test]
    fn low_images_are_darker_and_in_the_expected_psnr_band() {
        let pairs = synth_pairs(64, 32, 0).unwrap();
        let mut band = (f64::MAX, f64::MIN);
        for p in &pairs {
            assert!(p.low.mean() < p.normal.mean(), "{}", p.id);
            assert!(p.low.data().iter().chain(p.normal.data()).all(|v| (0.0..=1.0).contains(v)));
            let db = psnr(&p.low, &p.normal).unwrap();
            band = (band.0.min(db), band.1.max(db));
        }
        println!("psnr(low, normal) range: {band:?}");
        assert!(band.0 >= 8.0 && band.1 <= 20.0, "{band:?}");
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = synth_pairs(3, 8, 1).unwrap();
        write_pairs(dir.path(), &pairs).unwrap();
        let back = load_paired_dir(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in pairs.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            // 8-bit quantisation
            assert!(a.normal.max_abs_diff(&b.normal) <= 0.5 / 255.0 + 1e-12);
        }
        fs::remove_file(dir.path().join("high").join("pair_0001.png")).unwrap();
        assert!(load_paired_dir(dir.path()).is_err());
    }
}
