//! Oriented sinusoidal gratings as a small texture-classification stream.
//!
//! Each class has a fixed (frequency, orientation); every sample draws a
//! random phase, a small parameter jitter and Gaussian pixel noise, plus
//! class-independent style: contrast, brightness and a fine texture overlay. The
//! unlabeled pool uses orientations halfway between class orientations, so
//! its parameter set never meets a class parameter.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{split_protocol, ImageShape, LabeledSample, TaskStream, UnlabeledPool};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub image_size: usize,
    /// Spatial frequencies in cycles per image; classes cycle through them.
    pub frequencies: Vec<f64>,
    pub noise_std: f64,
    /// Per-sample std of the orientation, in radians.
    pub orientation_jitter: f64,
    /// Per-sample std of the frequency, relative to the class frequency.
    pub frequency_jitter: f64,
    pub contrast: f64,
    /// Per-sample contrast factor drawn from `1 ± contrast_spread`.
    pub contrast_spread: f64,
    /// Per-sample brightness offset drawn from `± brightness_spread`.
    pub brightness_spread: f64,
    /// Maximum amplitude of a fine texture overlay with random orientation
    /// and phase; the amplitude itself is drawn per sample.
    pub texture_amplitude: f64,
    /// Texture frequency in cycles per image.
    pub texture_frequency: f64,
    pub pool_size: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 6,
            train_per_class: 200,
            test_per_class: 100,
            image_size: 16,
            frequencies: vec![2.0, 3.5],
            noise_std: 0.1,
            orientation_jitter: 0.25,
            frequency_jitter: 0.15,
            contrast: 0.15,
            contrast_spread: 0.5,
            brightness_spread: 0.2,
            texture_amplitude: 0.2,
            texture_frequency: 6.0,
            pool_size: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternParams {
    pub frequency: f64,
    /// Radians in `[0, π)`.
    pub orientation: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, m: &str| Err(Error::config(format!("dataset.synthetic.{field}"), m));
        if self.classes == 0 {
            return bad("classes", "must be positive");
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return bad("train_per_class", "per-class counts must be positive");
        }
        if self.image_size < 4 {
            return bad("image_size", "must be at least 4");
        }
        if self.frequencies.is_empty() || self.frequencies.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return bad("frequencies", "need at least one positive frequency");
        }
        for (name, v) in [
            ("noise_std", self.noise_std),
            ("orientation_jitter", self.orientation_jitter),
            ("frequency_jitter", self.frequency_jitter),
            ("contrast", self.contrast),
            ("contrast_spread", self.contrast_spread),
            ("brightness_spread", self.brightness_spread),
            ("texture_amplitude", self.texture_amplitude),
            ("texture_frequency", self.texture_frequency),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(name, "must be finite and non-negative");
            }
        }
        Ok(())
    }

    fn orientation_count(&self) -> usize {
        self.classes.div_ceil(self.frequencies.len())
    }

    /// Class `c` takes frequency `c mod F` and orientation step `c div F`.
    pub fn class_params(&self, class: usize) -> PatternParams {
        let nf = self.frequencies.len();
        PatternParams {
            frequency: self.frequencies[class % nf],
            orientation: (class / nf) as f64 * PI / self.orientation_count() as f64,
        }
    }

    /// Pool orientations sit halfway between neighbouring class orientations.
    pub fn pool_orientations(&self) -> Vec<f64> {
        let k = self.orientation_count();
        (0..k).map(|o| (o as f64 + 0.5) * PI / k as f64).collect()
    }

    pub fn shape(&self) -> ImageShape {
        ImageShape {
            channels: 1,
            size: self.image_size,
        }
    }

    fn render<R: Rng + ?Sized>(&self, p: PatternParams, jitter: bool, rng: &mut R) -> Vec<f32> {
        let (mut freq, mut theta) = (p.frequency, p.orientation);
        if jitter {
            let g = Normal::new(0.0, 1.0).expect("unit normal");
            theta += self.orientation_jitter * g.sample(rng);
            freq *= 1.0 + self.frequency_jitter * g.sample(rng);
        }
        let phase = rng.random_range(0.0..2.0 * PI);
        let contrast = self.contrast * (1.0 + self.contrast_spread * rng.random_range(-1.0..=1.0));
        let brightness = self.brightness_spread * rng.random_range(-1.0..=1.0);
        let tex_amp = self.texture_amplitude * rng.random_range(0.0..=1.0);
        let tex_theta = rng.random_range(0.0..PI);
        let tex_phase = rng.random_range(0.0..2.0 * PI);
        let noise = Normal::new(0.0, self.noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
        let s = self.image_size as f64;
        let (c, sn) = (theta.cos(), theta.sin());
        let (tc, ts) = (tex_theta.cos(), tex_theta.sin());
        let mut img = Vec::with_capacity(self.image_size * self.image_size);
        for y in 0..self.image_size {
            for x in 0..self.image_size {
                let (xf, yf) = (x as f64, y as f64);
                let u = (xf * c + yf * sn) / s;
                let t = (xf * tc + yf * ts) / s;
                let mut v = 0.5 + brightness + contrast * (2.0 * PI * freq * u + phase).sin();
                if tex_amp > 0.0 {
                    v += tex_amp * (2.0 * PI * self.texture_frequency * t + tex_phase).sin();
                }
                if self.noise_std > 0.0 {
                    v += noise.sample(rng);
                }
                img.push(v as f32);
            }
        }
        img
    }
}

/// Builds the labeled stream (split by `steps`) and the unlabeled pool.
/// Identical `(spec, steps, seed)` give bitwise-identical data.
pub fn make_synthetic_stream(
    spec: &SyntheticSpec,
    steps: usize,
    seed: u64,
) -> Result<(TaskStream, UnlabeledPool, Vec<PatternParams>)> {
    spec.validate()?;
    let counts = split_protocol(spec.classes, steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(spec.classes * spec.train_per_class);
    let mut test = Vec::with_capacity(spec.classes * spec.test_per_class);
    for c in 0..spec.classes {
        let p = spec.class_params(c);
        for _ in 0..spec.train_per_class {
            let id = train.len();
            train.push(LabeledSample {
                id,
                label: c,
                image: spec.render(p, true, &mut rng),
            });
        }
        for _ in 0..spec.test_per_class {
            let id = test.len();
            test.push(LabeledSample {
                id,
                label: c,
                image: spec.render(p, true, &mut rng),
            });
        }
    }
    let orients = spec.pool_orientations();
    let (fmin, fmax) = spec
        .frequencies
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &f| (a.min(f), b.max(f)));
    let mut records = Vec::with_capacity(spec.pool_size);
    let mut images = Vec::with_capacity(spec.pool_size);
    for _ in 0..spec.pool_size {
        let frequency = if fmax > fmin { rng.random_range(fmin..=fmax) } else { fmin };
        let p = PatternParams {
            frequency,
            orientation: orients[rng.random_range(0..orients.len())],
        };
        images.push(spec.render(p, false, &mut rng));
        records.push(p);
    }
    let stream = TaskStream::from_datasets(spec.shape(), train, test, &counts)?;
    Ok((stream, UnlabeledPool::new(images), records))
}
