use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{augment, splice, SpriteAsset, Transform};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::types::{ForgeryMask, ImageMaskPair, ImageRgb, SizeClass};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub pristine: usize,
    pub small: usize,
    pub medium: usize,
    pub large: usize,
}

/// Corpus composition at scale 1.
pub const REFERENCE_COUNTS: ClassCounts = ClassCounts {
    pristine: 123,
    small: 158,
    medium: 32,
    large: 31,
};

impl ClassCounts {
    pub fn get(&self, class: SizeClass) -> usize {
        match class {
            SizeClass::Pristine => self.pristine,
            SizeClass::Small => self.small,
            SizeClass::Medium => self.medium,
            SizeClass::Large => self.large,
        }
    }

    fn get_mut(&mut self, class: SizeClass) -> &mut usize {
        match class {
            SizeClass::Pristine => &mut self.pristine,
            SizeClass::Small => &mut self.small,
            SizeClass::Medium => &mut self.medium,
            SizeClass::Large => &mut self.large,
        }
    }

    pub fn total(&self) -> usize {
        self.pristine + self.small + self.medium + self.large
    }

    /// Each count multiplied by `scale` and rounded half away from zero.
    pub fn scaled(&self, scale: f64) -> ClassCounts {
        let s = |n: usize| (n as f64 * scale).round() as usize;
        ClassCounts {
            pristine: s(self.pristine),
            small: s(self.small),
            medium: s(self.medium),
            large: s(self.large),
        }
    }

    /// Source pairs needed: augmented classes reach their count from
    /// `ceil(n / 6)` originals (identity + five transforms each).
    pub fn sources(&self) -> ClassCounts {
        let per = Transform::ALL.len() + 1;
        ClassCounts {
            pristine: self.pristine.div_ceil(per),
            small: self.small.div_ceil(per),
            medium: self.medium,
            large: self.large,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidInput(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image_path: String,
    pub mask_path: String,
    pub size_class: SizeClass,
    pub split: Option<Split>,
}

/// On-disk index of a corpus. Paths are relative to the manifest's
/// directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub pairs: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn counts(&self) -> ClassCounts {
        let mut c = ClassCounts::default();
        for e in &self.pairs {
            *c.get_mut(e.size_class) += 1;
        }
        c
    }

    pub fn split_counts(&self, split: Split) -> ClassCounts {
        let mut c = ClassCounts::default();
        for e in self.pairs.iter().filter(|e| e.split == Some(split)) {
            *c.get_mut(e.size_class) += 1;
        }
        c
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.pairs.iter().filter(move |e| e.split == Some(split))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(path, json)?;
        Ok(())
    }

    /// Read one pair relative to `root`.
    pub fn load_pair(&self, root: &Path, entry: &ManifestEntry) -> Result<ImageMaskPair> {
        let image = ImageRgb::load_png(&root.join(&entry.image_path))?;
        let mask = ForgeryMask::load_png(&root.join(&entry.mask_path))?;
        ImageMaskPair::new(entry.id.clone(), image, mask, entry.size_class)
    }
}

/// In-memory corpus: manifest plus pixel data in manifest order.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub manifest: DatasetManifest,
    pub pairs: Vec<ImageMaskPair>,
}

impl Corpus {
    pub fn pair(&self, id: &str) -> Option<&ImageMaskPair> {
        self.pairs.iter().find(|p| p.id == id)
    }

    pub fn split_pairs(&self, split: Split) -> Vec<&ImageMaskPair> {
        self.manifest
            .pairs
            .iter()
            .zip(&self.pairs)
            .filter(|(e, _)| e.split == Some(split))
            .map(|(_, p)| p)
            .collect()
    }

    /// Write `images/`, `masks/` and `manifest.json` under `dir`. Existing
    /// files with identical content are left untouched.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("images"))?;
        std::fs::create_dir_all(dir.join("masks"))?;
        self.manifest
            .pairs
            .par_iter()
            .zip(self.pairs.par_iter())
            .try_for_each(|(entry, pair)| -> Result<()> {
                write_if_changed(&dir.join(&entry.image_path), &pair.image.to_png_bytes()?)?;
                write_if_changed(&dir.join(&entry.mask_path), &pair.mask.to_png_bytes()?)
            })?;
        let mut json = serde_json::to_vec_pretty(&self.manifest)?;
        json.push(b'\n');
        write_if_changed(&dir.join("manifest.json"), &json)
    }
}

fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<()> {
    if std::fs::read(path).ok().as_deref() == Some(bytes) {
        return Ok(());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

struct SourceJob {
    id: String,
    class: SizeClass,
    base: usize,
    /// Augmentations to emit besides the original.
    extra: Vec<Transform>,
}

/// Plan per-source augmentation lists: each source gets a seeded
/// permutation of the transforms, and slots are dealt round-robin until
/// the class total is reached.
fn plan_augmentations(seed: u64, ids: &[String], total: usize) -> Vec<Vec<Transform>> {
    let orders: Vec<Vec<Transform>> = ids
        .iter()
        .map(|id| {
            let mut order = Transform::ALL.to_vec();
            order.shuffle(&mut stream(seed, &format!("augment/{id}")));
            order
        })
        .collect();
    let mut extra = vec![Vec::new(); ids.len()];
    let mut remaining = total.saturating_sub(ids.len());
    'rounds: for round in 0..Transform::ALL.len() {
        for (i, order) in orders.iter().enumerate() {
            if remaining == 0 {
                break 'rounds;
            }
            extra[i].push(order[round]);
            remaining -= 1;
        }
    }
    extra
}

/// Build a corpus with `REFERENCE_COUNTS.scaled(scale)` pairs. Every
/// source pair consumes one distinct base image; pristine and small
/// sources are augmented up to their quota. Per-pair randomness is keyed by
/// `(seed, id)` so the result does not depend on the rayon pool size.
pub fn synthesize_corpus(bases: &[ImageRgb], sprites: &[SpriteAsset], seed: u64, scale: f64) -> Result<Corpus> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidInput(format!("scale {scale} must be positive")));
    }
    let counts = REFERENCE_COUNTS.scaled(scale);
    let sources = counts.sources();
    let needed = sources.total();
    if bases.len() < needed {
        return Err(Error::InsufficientBases {
            needed,
            available: bases.len(),
        });
    }
    if sprites.is_empty() && counts.total() > counts.pristine {
        return Err(Error::EmptySprite);
    }

    let mut base_order: Vec<usize> = (0..bases.len()).collect();
    base_order.shuffle(&mut stream(seed, "base-assignment"));
    let mut next_base = base_order.into_iter();

    let mut jobs = Vec::with_capacity(needed);
    for class in SizeClass::ALL {
        let ids: Vec<String> = (0..sources.get(class)).map(|i| format!("{class}_{i:04}")).collect();
        let extras = if matches!(class, SizeClass::Pristine | SizeClass::Small) {
            plan_augmentations(seed, &ids, counts.get(class))
        } else {
            vec![Vec::new(); ids.len()]
        };
        for (id, extra) in ids.into_iter().zip(extras) {
            jobs.push(SourceJob {
                id,
                class,
                base: next_base.next().expect("base count checked"),
                extra,
            });
        }
    }

    let groups: Vec<Vec<ImageMaskPair>> = jobs
        .par_iter()
        .map(|job| -> Result<Vec<ImageMaskPair>> {
            let base = &bases[job.base];
            let original = match job.class.nominal_size() {
                None => ImageMaskPair::new(
                    job.id.clone(),
                    base.clone(),
                    ForgeryMask::zeros(base.width(), base.height()),
                    SizeClass::Pristine,
                )?,
                Some(side) => {
                    let mut rng = stream(seed, &format!("splice/{}", job.id));
                    let sprite = &sprites[rng.random_range(0..sprites.len())];
                    let x = rng.random_range(0..=base.width() - side);
                    let y = rng.random_range(0..=base.height() - side);
                    splice(base, sprite, (x, y), side, job.id.clone())?
                }
            };
            let mut out = Vec::with_capacity(1 + job.extra.len());
            out.extend(job.extra.iter().map(|&t| augment(&original, t)));
            out.insert(0, original);
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let pairs: Vec<ImageMaskPair> = groups.into_iter().flatten().collect();
    let manifest = DatasetManifest {
        seed,
        pairs: pairs
            .iter()
            .map(|p| ManifestEntry {
                id: p.id.clone(),
                image_path: format!("images/{}.png", p.id),
                mask_path: format!("masks/{}.png", p.id),
                size_class: p.size_class,
                split: None,
            })
            .collect(),
    };
    Ok(Corpus { manifest, pairs })
}

/// Largest-remainder apportionment of `total` items in proportion to
/// `weights`; remainder ties go to the earlier slot.
pub fn apportion(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut shares: Vec<usize> = weights.iter().map(|&w| total * w / sum).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // remainder numerators are exact integers: total*w mod sum
    order.sort_by_key(|&i| std::cmp::Reverse((total * weights[i]) % sum));
    let mut left = total - shares.iter().sum::<usize>();
    for i in order {
        if left == 0 {
            break;
        }
        shares[i] += 1;
        left -= 1;
    }
    shares
}

/// Reference split composition `[train, validation, test]` per class.
fn reference_quota(class: SizeClass) -> [usize; 3] {
    match class {
        SizeClass::Small => [128, 32, 0],
        SizeClass::Pristine => [90, 18, 15],
        SizeClass::Medium => [0, 0, 32],
        SizeClass::Large => [0, 0, 31],
    }
}

/// Assign every pair to train/validation/test. Small and pristine pairs
/// fill train and validation, medium, large and the rest of pristine fill
/// test, each class apportioned in proportion to the reference quotas.
pub fn build_splits(manifest: &DatasetManifest, seed: u64) -> Result<DatasetManifest> {
    let counts = manifest.counts();
    if counts.small == 0 {
        return Err(Error::QuotaUnsatisfiable("no small forgeries for train/validation".into()));
    }
    if counts.medium + counts.large == 0 {
        return Err(Error::QuotaUnsatisfiable("no medium or large forgeries for test".into()));
    }

    let mut by_class: BTreeMap<SizeClass, Vec<&str>> = BTreeMap::new();
    for e in &manifest.pairs {
        by_class.entry(e.size_class).or_default().push(&e.id);
    }
    let mut assignment: BTreeMap<&str, Split> = BTreeMap::new();
    for (class, mut ids) in by_class {
        ids.sort_unstable();
        ids.shuffle(&mut stream(seed, &format!("split/{class}")));
        let quota = apportion(ids.len(), &reference_quota(class));
        let mut it = ids.into_iter();
        for (split, n) in [Split::Train, Split::Validation, Split::Test].into_iter().zip(quota) {
            for id in it.by_ref().take(n) {
                assignment.insert(id, split);
            }
        }
    }
    let mut out = manifest.clone();
    out.seed = seed;
    for e in &mut out.pairs {
        e.split = Some(assignment[e.id.as_str()]);
    }
    Ok(out)
}
