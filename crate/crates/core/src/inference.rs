//! Mask estimation and the image- and pixel-level decision rules.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{Generator, GeneratorSpec, ModelParams, Tensor};
use crate::types::{resize_bilinear, DetectionResult, ForgeryMask, ImageRgb, Label, SoftMask};

/// A generator with trained parameters, ready for inference.
#[derive(Clone, Debug)]
pub struct Detector {
    generator: Generator,
    params: ModelParams<f32>,
}

impl Detector {
    pub fn new(spec: GeneratorSpec, params: ModelParams<f32>) -> Result<Self> {
        params.check_layout(&spec)?;
        if !params.all_finite() {
            return Err(Error::BadCheckpoint("non-finite generator parameters".into()));
        }
        Ok(Self {
            generator: Generator::new(spec)?,
            params,
        })
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn params(&self) -> &ModelParams<f32> {
        &self.params
    }

    pub fn resolution(&self) -> usize {
        self.generator.spec().resolution
    }

    /// Soft mask at the network resolution.
    pub fn estimate_network_mask(&self, image: &ImageRgb) -> Result<SoftMask> {
        let r = self.resolution();
        let x = Tensor::from_vec(&[1, 3, r, r], network_input(image, r))?;
        let y = self.generator.infer(&self.params, &x)?;
        SoftMask::new(r, r, y.into_data())
    }

    /// Soft mask at the image's own resolution.
    pub fn estimate_mask(&self, image: &ImageRgb) -> Result<SoftMask> {
        Ok(self
            .estimate_network_mask(image)?
            .resized(image.width(), image.height()))
    }

    pub fn estimate_masks(&self, images: &[&ImageRgb]) -> Result<Vec<SoftMask>> {
        images.par_iter().map(|img| self.estimate_mask(img)).collect()
    }
}

/// Planar `[3, r, r]` network input in `[0, 1]`.
pub fn network_input(image: &ImageRgb, r: usize) -> Vec<f32> {
    let planar = image.to_planar_unit();
    if image.width() == r && image.height() == r {
        return planar;
    }
    resize_bilinear(&planar, 3, image.width(), image.height(), r, r)
}

/// Binary `{0, 1}` training target at resolution `r`: bilinear resize
/// followed by a 0.5 threshold.
pub fn network_target(mask: &ForgeryMask, r: usize) -> Vec<f32> {
    let unit = mask.to_unit();
    if mask.width() == r && mask.height() == r {
        return unit;
    }
    resize_bilinear(&unit, 1, mask.width(), mask.height(), r, r)
        .into_iter()
        .map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
        .collect()
}

/// Mean mask value on the 0..255 scale.
pub fn detection_score(mask: &SoftMask) -> f64 {
    let sum: f64 = mask.data().iter().map(|&v| f64::from(v)).sum();
    255.0 * sum / mask.data().len() as f64
}

/// Forged iff `score >= threshold`.
pub fn classify(score: f64, threshold: f64) -> DetectionResult {
    DetectionResult {
        score,
        threshold,
        label: if score >= threshold { Label::Forged } else { Label::Pristine },
    }
}

/// Pixels with `p >= tau` become forged.
pub fn localize(mask: &SoftMask, tau: f64) -> Result<ForgeryMask> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidInput(format!("pixel threshold {tau} outside [0,1]")));
    }
    Ok(ForgeryMask::from_fn(mask.width(), mask.height(), |x, y| {
        f64::from(mask.value(x, y)) >= tau
    }))
}
