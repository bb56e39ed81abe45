//! Forgery corpus synthesis: sprite splicing, geometric augmentation and
//! the train/validation/test protocol.

mod corpus;
pub mod sprite;
pub mod texture;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use corpus::{
    apportion, build_splits, synthesize_corpus, ClassCounts, Corpus, DatasetManifest, ManifestEntry, Split,
    REFERENCE_COUNTS,
};
pub use sprite::SpriteAsset;

use crate::error::{Error, Result};
use crate::rng::{indexed_stream, stream};
use crate::types::{ForgeryMask, ImageMaskPair, ImageRgb, SizeClass, CORPUS_RESOLUTION};

/// Number of procedural sprites drawn for a synthetic corpus.
pub const SPRITE_LIBRARY_SIZE: usize = 24;

/// Procedural bases for `REFERENCE_COUNTS.scaled(scale)`, one per source pair.
pub fn synthetic_bases(seed: u64, scale: f64) -> Vec<ImageRgb> {
    let needed = REFERENCE_COUNTS.scaled(scale).sources().total();
    (0..needed as u64)
        .into_par_iter()
        .map(|i| texture::satellite_base(&mut indexed_stream(seed, "base", &[i]), CORPUS_RESOLUTION))
        .collect()
}

/// Fully procedural corpus with splits assigned.
pub fn synthetic_corpus(seed: u64, scale: f64) -> Result<Corpus> {
    corpus_from_bases(&synthetic_bases(seed, scale), seed, scale)
}

/// Corpus over caller-supplied bases with procedural sprites and splits
/// assigned.
pub fn corpus_from_bases(bases: &[ImageRgb], seed: u64, scale: f64) -> Result<Corpus> {
    let sprites = sprite::sprite_library(&mut stream(seed, "sprites"), SPRITE_LIBRARY_SIZE)?;
    let mut corpus = synthesize_corpus(bases, &sprites, seed, scale)?;
    corpus.manifest = build_splits(&corpus.manifest, seed)?;
    Ok(corpus)
}

/// Paste `sprite`, resampled to `target_size x target_size`, with its top
/// left corner at `top_left = (x, y)`. Only opaque sprite pixels replace
/// base pixels; the mask marks exactly those.
pub fn splice(
    base: &ImageRgb,
    sprite: &SpriteAsset,
    top_left: (usize, usize),
    target_size: usize,
    id: impl Into<String>,
) -> Result<ImageMaskPair> {
    let size_class = SizeClass::from_target_size(target_size)
        .ok_or_else(|| Error::InvalidInput(format!("target size {target_size} is not one of 32, 64, 128")))?;
    if sprite.opaque_count() == 0 {
        return Err(Error::EmptySprite);
    }
    let (x0, y0) = top_left;
    if x0 + target_size > base.width() || y0 + target_size > base.height() {
        return Err(Error::OutOfBounds {
            x: x0,
            y: y0,
            size: target_size,
            width: base.width(),
            height: base.height(),
        });
    }
    let resized = sprite.rescaled(target_size);
    let mut image = base.clone();
    let mut mask = ForgeryMask::zeros(base.width(), base.height());
    for sy in 0..target_size {
        for sx in 0..target_size {
            if resized.is_opaque(sx, sy) {
                image.set_pixel(x0 + sx, y0 + sy, resized.rgb(sx, sy));
                mask.set_forged(x0 + sx, y0 + sy, true);
            }
        }
    }
    ImageMaskPair::new(id, image, mask, size_class)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// Quarter turn counterclockwise: `(x, y) -> (y, W-1-x)`.
    Rot90,
    Rot180,
    Rot270,
    /// Mirror about the vertical centre axis: `(x, y) -> (W-1-x, y)`.
    FlipH,
    /// Mirror about the horizontal centre axis: `(x, y) -> (x, H-1-y)`.
    FlipV,
}

impl Transform {
    pub const ALL: [Transform; 5] = [
        Transform::Rot90,
        Transform::Rot180,
        Transform::Rot270,
        Transform::FlipH,
        Transform::FlipV,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Transform::Rot90 => "rot90",
            Transform::Rot180 => "rot180",
            Transform::Rot270 => "rot270",
            Transform::FlipH => "flip_h",
            Transform::FlipV => "flip_v",
        }
    }

    /// Output dimensions for a `width x height` input.
    pub fn output_dims(self, width: usize, height: usize) -> (usize, usize) {
        match self {
            Transform::Rot90 | Transform::Rot270 => (height, width),
            _ => (width, height),
        }
    }

    /// Where source pixel `(x, y)` lands.
    pub fn map(self, x: usize, y: usize, width: usize, height: usize) -> (usize, usize) {
        match self {
            Transform::Rot90 => (y, width - 1 - x),
            Transform::Rot180 => (width - 1 - x, height - 1 - y),
            Transform::Rot270 => (height - 1 - y, x),
            Transform::FlipH => (width - 1 - x, y),
            Transform::FlipV => (x, height - 1 - y),
        }
    }

    pub fn apply_image(self, img: &ImageRgb) -> ImageRgb {
        let (w, h) = (img.width(), img.height());
        let (ow, oh) = self.output_dims(w, h);
        let mut data = vec![0u8; ow * oh * 3];
        for y in 0..h {
            for x in 0..w {
                let (nx, ny) = self.map(x, y, w, h);
                let dst = (ny * ow + nx) * 3;
                data[dst..dst + 3].copy_from_slice(&img.pixel(x, y));
            }
        }
        ImageRgb::new(ow, oh, data).expect("dimensions preserved")
    }

    pub fn apply_mask(self, mask: &ForgeryMask) -> ForgeryMask {
        let (w, h) = (mask.width(), mask.height());
        let (ow, oh) = self.output_dims(w, h);
        let mut out = ForgeryMask::zeros(ow, oh);
        for y in 0..h {
            for x in 0..w {
                if mask.is_forged(x, y) {
                    let (nx, ny) = self.map(x, y, w, h);
                    out.set_forged(nx, ny, true);
                }
            }
        }
        out
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Apply `transform` to image and mask alike. The new id is
/// `"{old id}_{transform}"`.
pub fn augment(pair: &ImageMaskPair, transform: Transform) -> ImageMaskPair {
    ImageMaskPair {
        id: format!("{}_{}", pair.id, transform),
        image: transform.apply_image(&pair.image),
        mask: transform.apply_mask(&pair.mask),
        size_class: pair.size_class,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::types::{mask_forged_pixel_count, CORPUS_RESOLUTION};
    use proptest::prelude::*;

    fn base() -> ImageRgb {
        ImageRgb::from_fn(CORPUS_RESOLUTION, CORPUS_RESOLUTION, |x, y| {
            [(x % 200) as u8, (y % 200) as u8, ((x + y) % 150) as u8]
        })
    }

    fn solid_sprite(side: usize) -> SpriteAsset {
        SpriteAsset::new(side, side, [240, 241, 242, 255].repeat(side * side), "block").unwrap()
    }

    /// 128x128 sprite with exactly 9000 opaque pixels scattered over the
    /// whole canvas (`i -> 7919 i mod 16384` is a bijection).
    fn scattered_sprite() -> SpriteAsset {
        let mut rgba = vec![0u8; 128 * 128 * 4];
        for i in 0..128 * 128 {
            if (i * 7919) % 16384 < 9000 {
                rgba[i * 4..i * 4 + 4].copy_from_slice(&[250, 250, 250, 255]);
            }
        }
        SpriteAsset::new(128, 128, rgba, "scatter").unwrap()
    }

    #[test]
    fn splice_solid_small_block() {
        let pair = splice(&base(), &solid_sprite(32), (0, 0), 32, "s").unwrap();
        assert_eq!(mask_forged_pixel_count(&pair.mask), 1024);
        assert_eq!(pair.size_class, SizeClass::Small);
    }

    #[test]
    fn splice_scattered_sprite_count_and_extent() {
        let sprite = scattered_sprite();
        // oracle: count opaque alpha directly
        let opaque = sprite.rgba().chunks_exact(4).filter(|p| p[3] == 255).count();
        assert_eq!(opaque, 9000);
        let pair = splice(&base(), &sprite, (100, 200), 128, "l").unwrap();
        assert_eq!(mask_forged_pixel_count(&pair.mask), 9000);
        for y in 0..CORPUS_RESOLUTION {
            for x in 0..CORPUS_RESOLUTION {
                if pair.mask.is_forged(x, y) {
                    assert!((100..=227).contains(&x) && (200..=327).contains(&y));
                }
            }
        }
        assert_eq!(pair.size_class, SizeClass::Large);
    }

    #[test]
    fn splice_errors() {
        let transparent = SpriteAsset::new(2, 2, vec![0; 16], "x");
        assert!(matches!(transparent, Err(Error::EmptySprite)));
        let err = splice(&base(), &solid_sprite(64), (600, 10), 64, "o").unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { .. }));
        assert!(splice(&base(), &solid_sprite(64), (586, 586), 64, "edge").is_ok());
        assert!(matches!(
            splice(&base(), &solid_sprite(64), (0, 0), 48, "odd"),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn splice_leaves_the_rest_of_the_base_untouched() {
        let b = base();
        let pair = splice(&b, &scattered_sprite(), (300, 40), 64, "m").unwrap();
        let resized = scattered_sprite().rescaled(64);
        for y in 0..CORPUS_RESOLUTION {
            for x in 0..CORPUS_RESOLUTION {
                if pair.mask.is_forged(x, y) {
                    assert_eq!(pair.image.pixel(x, y), resized.rgb(x - 300, y - 40));
                } else {
                    assert_eq!(pair.image.pixel(x, y), b.pixel(x, y));
                }
            }
        }
    }

    fn forged_pair() -> ImageMaskPair {
        let sprite = sprite::airplane(&mut stream(1, "plane")).unwrap();
        splice(&base(), &sprite, (10, 500), 32, "f").unwrap()
    }

    #[test]
    fn rot90_four_times_is_identity() {
        let pair = forged_pair();
        let mut p = pair.clone();
        for _ in 0..4 {
            p = augment(&p, Transform::Rot90);
        }
        assert_eq!(p.image, pair.image);
        assert_eq!(p.mask, pair.mask);
    }

    #[test]
    fn flips_are_involutions() {
        let pair = forged_pair();
        for t in [Transform::FlipH, Transform::FlipV, Transform::Rot180] {
            let twice = augment(&augment(&pair, t), t);
            assert_eq!(twice.image, pair.image);
            assert_eq!(twice.mask, pair.mask);
        }
    }

    #[test]
    fn rot90_is_counterclockwise() {
        let n = CORPUS_RESOLUTION;
        let mut mask = ForgeryMask::zeros(n, n);
        mask.set_forged(10, 20, true);
        let out = Transform::Rot90.apply_mask(&mask);
        assert!(out.is_forged(20, n - 1 - 10));
        assert_eq!(mask_forged_pixel_count(&out), 1);
        // the top-right corner rotates to the top-left
        assert_eq!(Transform::Rot90.map(n - 1, 0, n, n), (0, 0));
    }

    #[test]
    fn augment_preserves_class_and_derives_id() {
        let pair = forged_pair();
        let out = augment(&pair, Transform::FlipV);
        assert_eq!(out.id, "f_flip_v");
        assert_eq!(out.size_class, pair.size_class);
        assert_eq!(mask_forged_pixel_count(&out.mask), mask_forged_pixel_count(&pair.mask));
        out.validate().unwrap();
    }

    #[test]
    fn rot270_inverts_rot90() {
        let pair = forged_pair();
        let back = augment(&augment(&pair, Transform::Rot90), Transform::Rot270);
        assert_eq!(back.image, pair.image);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        /// The emitted mask equals the pixel difference between base and
        /// forged image whenever sprite colours differ from the base.
        #[test]
        fn mask_equals_pixel_difference(seed in any::<u64>(), x in 0usize..580, y in 0usize..580, which in 0usize..3) {
            let side = [32, 64, 64][which];
            let mut rng = stream(seed, "prop");
            let base = texture::satellite_base(&mut rng, 128).clone();
            let base = ImageRgb::from_fn(650, 650, |px, py| base.pixel(px % 128, py % 128));
            let sprite = if seed % 2 == 0 { sprite::airplane(&mut rng) } else { sprite::cloud(&mut rng) }.unwrap();
            let (x, y) = (x.min(650 - side), y.min(650 - side));
            let pair = splice(&base, &sprite, (x, y), side, "p").unwrap();
            for py in 0..650 {
                for px in 0..650 {
                    let differs = pair.image.pixel(px, py) != base.pixel(px, py);
                    prop_assert_eq!(differs, pair.mask.is_forged(px, py));
                }
            }
        }

        /// Transforming a pair equals transforming its parts.
        #[test]
        fn augment_commutes_componentwise(seed in any::<u64>(), t in 0usize..5) {
            let t = Transform::ALL[t];
            let mut rng = stream(seed, "aug");
            let img = texture::satellite_base(&mut rng, 48);
            let mask = ForgeryMask::from_fn(48, 48, |x, y| (x * 31 + y * 17 + seed as usize).is_multiple_of(7));
            let pair = ImageMaskPair { id: "a".into(), image: img.clone(), mask: mask.clone(), size_class: SizeClass::Small };
            let out = augment(&pair, t);
            prop_assert_eq!(out.image, t.apply_image(&img));
            prop_assert_eq!(out.mask, t.apply_mask(&mask));
        }
    }
}
