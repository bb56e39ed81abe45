use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Object pasted into a base image. Alpha is binary: a pixel is either
/// pasted verbatim or not at all.
#[derive(Clone, PartialEq, Eq)]
pub struct SpriteAsset {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
    category: String,
}

impl std::fmt::Debug for SpriteAsset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "SpriteAsset({}, {}x{}, {} opaque)",
            self.category,
            self.width,
            self.height,
            self.opaque_count()
        )
    }
}

impl SpriteAsset {
    pub fn new(width: usize, height: usize, rgba: Vec<u8>, category: impl Into<String>) -> Result<Self> {
        if rgba.len() != width * height * 4 {
            return Err(Error::ShapeMismatch(format!(
                "rgba buffer of {} bytes for {width}x{height}",
                rgba.len()
            )));
        }
        if rgba.chunks_exact(4).any(|px| px[3] != 0 && px[3] != 255) {
            return Err(Error::InvalidInput("sprite alpha must be 0 or 255".into()));
        }
        let sprite = Self {
            width,
            height,
            rgba,
            category: category.into(),
        };
        if sprite.opaque_count() == 0 {
            return Err(Error::EmptySprite);
        }
        Ok(sprite)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn rgba(&self) -> &[u8] {
        &self.rgba
    }

    pub fn is_opaque(&self, x: usize, y: usize) -> bool {
        self.rgba[(y * self.width + x) * 4 + 3] == 255
    }

    pub fn rgb(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 4;
        [self.rgba[i], self.rgba[i + 1], self.rgba[i + 2]]
    }

    pub fn opaque_count(&self) -> usize {
        self.rgba.chunks_exact(4).filter(|px| px[3] == 255).count()
    }

    /// Resample to `side x side`. A target pixel covers a footprint of
    /// source pixels; it is opaque if any of them is, taking the colour of
    /// the first opaque one in raster order. Same-size resampling is the
    /// identity, and the opaque bounding box of a trimmed sprite always
    /// spans the full target.
    pub fn rescaled(&self, side: usize) -> SpriteAsset {
        if side == self.width && side == self.height {
            return self.clone();
        }
        let span = |t: usize, src: usize| -> (usize, usize) {
            let lo = t * src / side;
            let hi = ((t + 1) * src).div_ceil(side).max(lo + 1).min(src);
            (lo, hi)
        };
        let mut rgba = vec![0u8; side * side * 4];
        for ty in 0..side {
            let (y0, y1) = span(ty, self.height);
            for tx in 0..side {
                let (x0, x1) = span(tx, self.width);
                let hit = (y0..y1)
                    .flat_map(|y| (x0..x1).map(move |x| (x, y)))
                    .find(|&(x, y)| self.is_opaque(x, y));
                if let Some((x, y)) = hit {
                    let i = (ty * side + tx) * 4;
                    rgba[i..i + 3].copy_from_slice(&self.rgb(x, y));
                    rgba[i + 3] = 255;
                }
            }
        }
        SpriteAsset {
            width: side,
            height: side,
            rgba,
            category: self.category.clone(),
        }
    }

    /// Crop to the opaque bounding box.
    fn trimmed(self) -> Result<SpriteAsset> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.is_opaque(x, y) {
                    bbox = Some(match bbox {
                        None => (x, y, x, y),
                        Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
                    });
                }
            }
        }
        let (x0, y0, x1, y1) = bbox.ok_or(Error::EmptySprite)?;
        let (w, h) = (x1 - x0 + 1, y1 - y0 + 1);
        let mut rgba = Vec::with_capacity(w * h * 4);
        for y in y0..=y1 {
            let row = (y * self.width + x0) * 4;
            rgba.extend_from_slice(&self.rgba[row..row + w * 4]);
        }
        SpriteAsset::new(w, h, rgba, self.category)
    }
}

/// Canvas side for procedurally drawn sprites.
const CANVAS: usize = 128;

fn canvas_sprite(category: &str, mut paint: impl FnMut(f64, f64) -> Option<[u8; 3]>) -> Result<SpriteAsset> {
    let mut rgba = vec![0u8; CANVAS * CANVAS * 4];
    for y in 0..CANVAS {
        for x in 0..CANVAS {
            // centred coordinates in [-1, 1]
            let u = (x as f64 + 0.5) / CANVAS as f64 * 2.0 - 1.0;
            let v = (y as f64 + 0.5) / CANVAS as f64 * 2.0 - 1.0;
            if let Some(rgb) = paint(u, v) {
                let i = (y * CANVAS + x) * 4;
                rgba[i..i + 3].copy_from_slice(&rgb);
                rgba[i + 3] = 255;
            }
        }
    }
    SpriteAsset::new(CANVAS, CANVAS, rgba, category)?.trimmed()
}

/// Bright sprite colours: every channel of every opaque pixel sits above
/// the ceiling used by [`super::texture::BASE_CEILING`], so a spliced
/// pixel always differs from the base it replaces.
fn bright(rng: &mut Rng, tint: [i32; 3]) -> [u8; 3] {
    let base = rng.random_range(238..=252);
    tint.map(|t| (base + t + rng.random_range(-2..=2)).clamp(236, 255) as u8)
}

/// Top-down airplane silhouette: fuselage, swept wings and tailplane,
/// rotated by a random heading.
pub fn airplane(rng: &mut Rng) -> Result<SpriteAsset> {
    let heading = rng.random_range(0.0..std::f64::consts::TAU);
    let (sin, cos) = heading.sin_cos();
    let wing_span = rng.random_range(0.75..0.95);
    let wing_chord = rng.random_range(0.14..0.22);
    let sweep = rng.random_range(0.0..0.35);
    let body_half_width = rng.random_range(0.09..0.13);
    let tint = [rng.random_range(-6..=0), rng.random_range(-6..=0), rng.random_range(-2..=3)];
    let mut pixel_rng = rng.clone();
    canvas_sprite("airplane", |u, v| {
        // body frame: `along` runs nose (-1) to tail (+1)
        let along = u * cos + v * sin;
        let across = -u * sin + v * cos;
        let fuselage = along.abs() < 0.92 && across.abs() < body_half_width * (1.0 - 0.3 * along.max(0.0));
        let wing_axis = -0.05 + sweep * across.abs();
        let wing = across.abs() < wing_span && (along - wing_axis).abs() < wing_chord * 0.5;
        let tail_axis = 0.72 + sweep * 0.5 * across.abs();
        let tail = across.abs() < wing_span * 0.38 && (along - tail_axis).abs() < wing_chord * 0.3;
        (fuselage || wing || tail).then(|| bright(&mut pixel_rng, tint))
    })
}

/// Cumulus-like blob: union of random discs.
pub fn cloud(rng: &mut Rng) -> Result<SpriteAsset> {
    let blobs: Vec<(f64, f64, f64)> = (0..rng.random_range(4..9))
        .map(|_| {
            let r = rng.random_range(0.25..0.45);
            let cx = rng.random_range(-0.9 + r..0.9 - r);
            let cy = rng.random_range(-0.9 + r..0.9 - r);
            (cx, cy, r)
        })
        .collect();
    let mut pixel_rng = rng.clone();
    canvas_sprite("cloud", |u, v| {
        let depth = blobs
            .iter()
            .map(|&(cx, cy, r)| 1.0 - ((u - cx).powi(2) + (v - cy).powi(2)).sqrt() / r)
            .fold(f64::NEG_INFINITY, f64::max);
        (depth > 0.0).then(|| {
            let shade = (4.0 * depth).min(1.0);
            let v = 240.0 + 12.0 * shade + pixel_rng.random_range(-3.0..3.0);
            let v = v.clamp(236.0, 255.0) as u8;
            [v, v, v.saturating_add(2)]
        })
    })
}

/// Mixed airplane/cloud library.
pub fn sprite_library(rng: &mut Rng, count: usize) -> Result<Vec<SpriteAsset>> {
    (0..count)
        .map(|i| if i % 2 == 0 { airplane(rng) } else { cloud(rng) })
        .collect()
}
