//! Rasters shared by every stage: the image under analysis, its binary
//! forgery mask, and the generator's soft mask estimate.
//!
//! Pixel coordinates are `(x, y) = (column, row)` with the origin at the top
//! left; all buffers are row-major.

use std::fmt;
use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of corpus images.
pub const CORPUS_RESOLUTION: usize = 650;

/// Mask value marking a spliced pixel.
pub const FORGED: u8 = 255;

/// 3-channel 8-bit raster.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageRgb {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl fmt::Debug for ImageRgb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ImageRgb({}x{})", self.width, self.height)
    }
}

impl ImageRgb {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::ShapeMismatch(format!(
                "rgb buffer of {} bytes for {width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let img = RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("length checked at construction");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_png_bytes()?)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        Self::from_png_bytes(&std::fs::read(path)?)
    }

    /// Planar `[3, H, W]` intensities scaled to `[0, 1]`.
    pub fn to_planar_unit(&self) -> Vec<f32> {
        let plane = self.width * self.height;
        let mut out = vec![0.0f32; plane * 3];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = f32::from(px[c]) / 255.0;
            }
        }
        out
    }
}

/// Binary ground-truth mask: 255 on spliced pixels, 0 elsewhere.
#[derive(Clone, PartialEq, Eq)]
pub struct ForgeryMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl fmt::Debug for ForgeryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ForgeryMask({}x{}, {} forged)",
            self.width,
            self.height,
            mask_forged_pixel_count(self)
        )
    }
}

impl ForgeryMask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "mask buffer of {} bytes for {width}x{height}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v != 0 && v != FORGED) {
            return Err(Error::InvalidInput(format!(
                "mask value {v} is neither 0 nor 255"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut forged: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(if forged(x, y) { FORGED } else { 0 });
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn is_forged(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] == FORGED
    }

    pub fn set_forged(&mut self, x: usize, y: usize, forged: bool) {
        self.data[y * self.width + x] = if forged { FORGED } else { 0 };
    }

    pub fn is_pristine(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)` of the forged region.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.is_forged(x, y) {
                    bbox = Some(match bbox {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bbox
    }

    /// `{0.0, 1.0}` targets for the loss.
    pub fn to_unit(&self) -> Vec<f32> {
        self.data.iter().map(|&v| if v == FORGED { 1.0 } else { 0.0 }).collect()
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let img = GrayImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("length checked at construction");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_luma8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_png_bytes()?)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        Self::from_png_bytes(&std::fs::read(path)?)
    }
}

/// Number of pixels marked forged.
pub fn mask_forged_pixel_count(mask: &ForgeryMask) -> usize {
    mask.data.iter().filter(|&&v| v == FORGED).count()
}

/// Generator output: per-pixel forgery likelihood in `[0, 1]`.
#[derive(Clone, PartialEq)]
pub struct SoftMask {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl fmt::Debug for SoftMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SoftMask({}x{})", self.width, self.height)
    }
}

impl SoftMask {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "soft mask of {} values for {width}x{height}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("soft mask value {v} outside [0,1]")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self::new(width, height, vec![value; width * height]).expect("caller passes a value in [0,1]")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn value(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// 8-bit rendering, `round(255 p)`.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.data.iter().map(|&p| (p * 255.0).round() as u8).collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = GrayImage::from_raw(self.width as u32, self.height as u32, self.to_gray8())
            .expect("length checked at construction");
        img.save_with_format(path, ImageFormat::Png)?;
        Ok(())
    }

    /// Inverse of [`SoftMask::save_png`] up to 8-bit quantisation.
    pub fn load_png(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        let img = image::open(path)?.into_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Self::new(w, h, img.into_raw().into_iter().map(|v| f32::from(v) / 255.0).collect())
    }

    pub fn resized(&self, width: usize, height: usize) -> SoftMask {
        let mut data = resize_bilinear(&self.data, 1, self.width, self.height, width, height);
        // interpolation of values in [0,1] stays in [0,1] up to rounding
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        SoftMask {
            width,
            height,
            data,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Pristine,
    Small,
    Medium,
    Large,
}

impl SizeClass {
    pub const ALL: [SizeClass; 4] = [
        SizeClass::Pristine,
        SizeClass::Small,
        SizeClass::Medium,
        SizeClass::Large,
    ];

    /// Nominal forged-region side length in pixels.
    pub fn nominal_size(self) -> Option<usize> {
        match self {
            SizeClass::Pristine => None,
            SizeClass::Small => Some(32),
            SizeClass::Medium => Some(64),
            SizeClass::Large => Some(128),
        }
    }

    pub fn from_target_size(size: usize) -> Option<SizeClass> {
        match size {
            32 => Some(SizeClass::Small),
            64 => Some(SizeClass::Medium),
            128 => Some(SizeClass::Large),
            _ => None,
        }
    }

    pub fn is_forged(self) -> bool {
        self != SizeClass::Pristine
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SizeClass::Pristine => "pristine",
            SizeClass::Small => "small",
            SizeClass::Medium => "medium",
            SizeClass::Large => "large",
        }
    }
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Relative per-axis tolerance on the forged bounding box for real data.
pub const SIZE_TOLERANCE: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageMaskPair {
    pub id: String,
    pub image: ImageRgb,
    pub mask: ForgeryMask,
    pub size_class: SizeClass,
}

impl ImageMaskPair {
    pub fn new(id: impl Into<String>, image: ImageRgb, mask: ForgeryMask, size_class: SizeClass) -> Result<Self> {
        let pair = Self {
            id: id.into(),
            image,
            mask,
            size_class,
        };
        pair.validate()?;
        Ok(pair)
    }

    /// Checks dimensions, class/mask agreement and the per-class bounding box.
    pub fn validate(&self) -> Result<()> {
        if self.image.width() != self.mask.width() || self.image.height() != self.mask.height() {
            return Err(Error::ShapeMismatch(format!(
                "pair {}: image {}x{} vs mask {}x{}",
                self.id,
                self.image.width(),
                self.image.height(),
                self.mask.width(),
                self.mask.height()
            )));
        }
        match (self.size_class.nominal_size(), self.mask.bounding_box()) {
            (None, None) => Ok(()),
            (None, Some(_)) => Err(Error::InvalidInput(format!(
                "pair {} is labelled pristine but its mask is not empty",
                self.id
            ))),
            (Some(_), None) => Err(Error::InvalidInput(format!(
                "pair {} is labelled {} but its mask is empty",
                self.id, self.size_class
            ))),
            (Some(nominal), Some((x0, y0, x1, y1))) => {
                let lo = nominal as f64 * (1.0 - SIZE_TOLERANCE);
                let hi = nominal as f64 * (1.0 + SIZE_TOLERANCE);
                for extent in [x1 - x0 + 1, y1 - y0 + 1] {
                    if (extent as f64) < lo || (extent as f64) > hi {
                        return Err(Error::InvalidInput(format!(
                            "pair {}: forged extent {extent} px is not ~{nominal} px",
                            self.id
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Pristine,
    Forged,
}

/// Image-level decision. `label == Forged` iff `score >= threshold`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub score: f64,
    pub threshold: f64,
    pub label: Label,
}

/// Bilinear resampling of a planar `[channels, sh, sw]` buffer with
/// half-pixel centres and edge clamping.
pub fn resize_bilinear(src: &[f32], channels: usize, sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f32> {
    assert_eq!(src.len(), channels * sw * sh);
    let taps = |dst: usize, src_len: usize| -> Vec<(usize, usize, f32)> {
        let scale = src_len as f64 / dst as f64;
        (0..dst)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(src_len - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let xs = taps(dw, sw);
    let ys = taps(dh, sh);
    let mut out = vec![0.0f32; channels * dw * dh];
    for c in 0..channels {
        let plane = &src[c * sw * sh..(c + 1) * sw * sh];
        let dst = &mut out[c * dw * dh..(c + 1) * dw * dh];
        for (dy, &(y0, y1, fy)) in ys.iter().enumerate() {
            let r0 = &plane[y0 * sw..(y0 + 1) * sw];
            let r1 = &plane[y1 * sw..(y1 + 1) * sw];
            for (dx, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
                dst[dy * dw + dx] = top + (bottom - top) * fy;
            }
        }
    }
    out
}
