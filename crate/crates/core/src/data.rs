//! Procedural image corpus and resolution degradation.
//!
//! Each image has a smooth background, a few hard-edged ellipses and
//! rectangles, a class-dependent oriented sinusoid and a fine texture with
//! a wavelength under four pixels. The class signal lives in the texture
//! frequency band, so it weakens as images are downsampled.

use crate::error::{ensure, Result};
use crate::image::{ImageSample, Spacing};
use crate::resize::resize_tensor;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub size: usize,
    pub spacing: Spacing,
    pub n_classes: usize,
    /// Texture wavelength range (pixels) per class; class `k` uses entry `k % len`.
    pub class_wavelengths: Vec<(f64, f64)>,
    pub class_amplitude: f64,
    pub fine_wavelength: (f64, f64),
    pub fine_amplitude: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            size: 64,
            spacing: Spacing::iso(1.0),
            n_classes: 2,
            class_wavelengths: vec![(11.0, 14.0), (5.0, 6.5)],
            class_amplitude: 0.12,
            fine_wavelength: (2.5, 3.5),
            fine_amplitude: 0.06,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage<T> {
    pub image: ImageSample<T>,
    pub label: usize,
}

fn render(cfg: &SyntheticConfig, label: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = cfg.size;
    let nf = n as f64;
    let mut img = vec![0.0; n * n];

    let (b0, gx, gy) = (
        rng.random_range(0.1..0.25),
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.1..0.1),
    );
    for y in 0..n {
        for x in 0..n {
            img[y * n + x] = b0 + gx * (x as f64 / nf) + gy * (y as f64 / nf);
        }
    }

    let shapes = rng.random_range(2..=4);
    for _ in 0..shapes {
        let cx = rng.random_range(0.15..0.85) * nf;
        let cy = rng.random_range(0.15..0.85) * nf;
        let rx = rng.random_range(0.08..0.3) * nf;
        let ry = rng.random_range(0.08..0.3) * nf;
        let level = rng.random_range(0.35..0.75);
        let ellipse = rng.random_bool(0.5);
        for y in 0..n {
            for x in 0..n {
                let (dx, dy) = ((x as f64 + 0.5 - cx) / rx, (y as f64 + 0.5 - cy) / ry);
                let inside = if ellipse {
                    dx * dx + dy * dy <= 1.0
                } else {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                };
                if inside {
                    img[y * n + x] = level;
                }
            }
        }
    }

    let mut wave = |range: (f64, f64), amp: f64, img: &mut [f64]| {
        let lambda = rng.random_range(range.0..range.1);
        let theta = rng.random_range(0.0..PI);
        let phase = rng.random_range(0.0..2.0 * PI);
        let (c, s) = (theta.cos(), theta.sin());
        for y in 0..n {
            for x in 0..n {
                let t = (x as f64 * c + y as f64 * s) / lambda;
                img[y * n + x] += amp * (2.0 * PI * t + phase).sin();
            }
        }
    };
    let band = cfg.class_wavelengths[label % cfg.class_wavelengths.len()];
    wave(band, cfg.class_amplitude, &mut img);
    wave(cfg.fine_wavelength, cfg.fine_amplitude, &mut img);

    img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    img
}

/// `n` images with labels `i % n_classes`; image `i` depends only on
/// `(seed, i)`, so corpora of different lengths share a prefix.
pub fn generate_synthetic<T: Scalar>(cfg: &SyntheticConfig, n: usize) -> Result<Vec<LabeledImage<T>>> {
    ensure!(n >= 1, "generate_synthetic needs n >= 1");
    ensure!(cfg.size >= 1 && cfg.n_classes >= 1, "invalid synthetic config {cfg:?}");
    ensure!(
        !cfg.class_wavelengths.is_empty(),
        "at least one class wavelength band is required"
    );
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let label = i % cfg.n_classes;
            let pixels = render(cfg, label, &mut rng);
            let t = Tensor::new(vec![1, 1, cfg.size, cfg.size], pixels.into_iter().map(T::lit).collect())?;
            Ok(LabeledImage {
                image: ImageSample::new(t, cfg.spacing)?,
                label,
            })
        })
        .collect()
}

/// Grid size after coarsening by `factor` (at least 1 pixel per axis).
pub fn degraded_size(size: (usize, usize), factor: f64) -> (usize, usize) {
    let f = |s: usize| ((s as f64 / factor).round() as usize).max(1);
    (f(size.0), f(size.1))
}

/// Bilinear downsampling by `factor`; the new spacing keeps the physical
/// extent of the original grid.
pub fn degrade<T: Scalar>(image: &ImageSample<T>, factor: f64) -> Result<ImageSample<T>> {
    ensure!(factor >= 1.0 && factor.is_finite(), "degradation factor must be >= 1, got {factor}");
    let size = image.size();
    let target = degraded_size(size, factor);
    let (ey, ex) = image.extent();
    let pixels = resize_tensor(&image.pixels, target)?;
    ImageSample::new(pixels, Spacing::new(ey / target.0 as f64, ex / target.1 as f64))
}
