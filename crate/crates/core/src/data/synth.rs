//! Deterministic synthetic texture/defect images.
//!
//! Backgrounds are oriented sinusoidal gratings plus Gaussian pixel noise.
//! The grating's wave vector is an integer number of cycles per image along
//! each axis, so every background has the same mean up to noise. Defect
//! images add either a Gaussian blob or an anti-aliased scratch.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LabeledImage, ProblemDataset, CLEAN_DIR, DEFECT_DIR};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, standard_normal, SeededRng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectKind {
    Blob,
    Scratch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProblemSpec {
    pub name: String,
    pub image_size: usize,
    /// Grating wave vector in whole cycles per image along (x, y).
    pub cycles: (i32, i32),
    pub amplitude: f64,
    /// Standard deviation of the per-pixel Gaussian noise.
    pub noise: f64,
    pub defect: DefectKind,
    /// Peak intensity added by the defect.
    pub contrast: f64,
    /// Blob standard deviation or scratch length, in pixels.
    pub defect_scale: f64,
    pub n_defect: usize,
    pub n_clean: usize,
    pub seed: u64,
}

impl SyntheticProblemSpec {
    /// Pixel extent the defect needs to fit.
    fn defect_extent(&self) -> f64 {
        match self.defect {
            DefectKind::Blob => 6.0 * self.defect_scale,
            DefectKind::Scratch => self.defect_scale + 2.0 * SCRATCH_HALF_WIDTH,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 4 {
            return Err(Error::Config(format!("{}: image size {} too small", self.name, self.image_size)));
        }
        if !(self.contrast >= 0.0) || !(self.noise >= 0.0) || !(self.amplitude >= 0.0) {
            return Err(Error::Config(format!(
                "{}: contrast, noise and amplitude must be non-negative",
                self.name
            )));
        }
        if self.n_defect == 0 || self.n_clean == 0 {
            return Err(Error::Config(format!("{}: both class counts must be >= 1", self.name)));
        }
        if !(self.defect_scale > 0.0) {
            return Err(Error::Config(format!("{}: defect scale must be positive", self.name)));
        }
        if self.defect_extent() > self.image_size as f64 {
            return Err(Error::Config(format!(
                "{}: defect needs {:.1} px but the image is {} px",
                self.name,
                self.defect_extent(),
                self.image_size
            )));
        }
        Ok(())
    }
}

const SCRATCH_HALF_WIDTH: f64 = 1.25;

fn background(spec: &SyntheticProblemSpec, rng: &mut SeededRng) -> Vec<f64> {
    let n = spec.image_size;
    let phase = rng.random_range(0.0..2.0 * PI);
    let (kx, ky) = (f64::from(spec.cycles.0), f64::from(spec.cycles.1));
    let mut px = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let arg = 2.0 * PI * (kx * x as f64 + ky * y as f64) / n as f64 + phase;
            px.push(0.5 + spec.amplitude * arg.sin());
        }
    }
    for p in &mut px {
        *p += spec.noise * standard_normal(rng);
    }
    px
}

fn add_blob(px: &mut [f64], n: usize, spec: &SyntheticProblemSpec, rng: &mut SeededRng) {
    let sigma = spec.defect_scale;
    let margin = 3.0 * sigma;
    let hi = n as f64 - margin;
    let cx = if hi > margin { rng.random_range(margin..hi) } else { n as f64 / 2.0 };
    let cy = if hi > margin { rng.random_range(margin..hi) } else { n as f64 / 2.0 };
    for y in 0..n {
        for x in 0..n {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            px[y * n + x] += spec.contrast * (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
}

fn add_scratch(px: &mut [f64], n: usize, spec: &SyntheticProblemSpec, rng: &mut SeededRng) {
    let half_len = spec.defect_scale / 2.0;
    let angle = rng.random_range(0.0..PI);
    let (dx, dy) = (angle.cos(), angle.sin());
    let margin = half_len + SCRATCH_HALF_WIDTH;
    let hi = n as f64 - margin;
    let cx = if hi > margin { rng.random_range(margin..hi) } else { n as f64 / 2.0 };
    let cy = if hi > margin { rng.random_range(margin..hi) } else { n as f64 / 2.0 };
    for y in 0..n {
        for x in 0..n {
            let (rx, ry) = (x as f64 - cx, y as f64 - cy);
            let t = (rx * dx + ry * dy).clamp(-half_len, half_len);
            let dist = ((rx - t * dx).powi(2) + (ry - t * dy).powi(2)).sqrt();
            let coverage = (1.0 - dist / SCRATCH_HALF_WIDTH).max(0.0);
            px[y * n + x] += spec.contrast * coverage;
        }
    }
}

/// Defect images come first (`defect/d0000`, ...), then clean ones
/// (`no_defect/n0000`, ...), matching the loader's ordering.
pub fn generate_synthetic_problem(spec: &SyntheticProblemSpec) -> Result<ProblemDataset> {
    spec.validate()?;
    let n = spec.image_size;
    let mut images = Vec::with_capacity(spec.n_defect + spec.n_clean);
    let labelled = (0..spec.n_defect)
        .map(|i| (true, i))
        .chain((0..spec.n_clean).map(|i| (false, i)));
    for (defect, i) in labelled {
        let stream = (u64::from(defect) << 32) | i as u64;
        let mut rng = rng_from_seed(derive_seed(spec.seed, stream));
        let mut px = background(spec, &mut rng);
        if defect {
            match spec.defect {
                DefectKind::Blob => add_blob(&mut px, n, spec, &mut rng),
                DefectKind::Scratch => add_scratch(&mut px, n, spec, &mut rng),
            }
        }
        for p in &mut px {
            *p = p.clamp(0.0, 1.0);
        }
        let id = if defect {
            format!("{DEFECT_DIR}/d{i:04}")
        } else {
            format!("{CLEAN_DIR}/n{i:04}")
        };
        images.push(LabeledImage {
            id,
            pixels: Tensor::new(vec![1, n, n], px)?,
            defect,
        });
    }
    ProblemDataset::new(spec.name.clone(), images)
}

/// Six problems with distinct textures, alternating blob and scratch defects,
/// in the 1000 clean / 150 defect composition.
pub fn synthetic_suite(contrast: f64, noise: f64, seed: u64) -> Vec<SyntheticProblemSpec> {
    let textures: [((i32, i32), f64, DefectKind, f64); 6] = [
        ((2, 0), 0.20, DefectKind::Blob, 3.0),
        ((1, 3), 0.15, DefectKind::Scratch, 12.0),
        ((4, 4), 0.20, DefectKind::Blob, 3.5),
        ((0, 5), 0.15, DefectKind::Scratch, 12.0),
        ((3, -2), 0.20, DefectKind::Blob, 2.75),
        ((6, 1), 0.15, DefectKind::Scratch, 14.0),
    ];
    textures
        .iter()
        .enumerate()
        .map(|(i, &(cycles, amplitude, defect, defect_scale))| SyntheticProblemSpec {
            name: format!("problem{}", i + 1),
            image_size: super::DEFAULT_IMAGE_SIZE,
            cycles,
            amplitude,
            noise,
            defect,
            contrast,
            defect_scale,
            n_defect: 150,
            n_clean: 1000,
            seed: derive_seed(seed, i as u64 + 1),
        })
        .collect()
}
