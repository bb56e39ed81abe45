//! Checkpoint archive.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 8     | magic `SPLGCKPT`                          |
//! | 4     | format version (`u32`)                    |
//! | 8     | header length `h` (`u64`)                 |
//! | h     | UTF-8 JSON header                         |
//! | rest  | `f32` payload, tensors in header order    |
//!
//! The header carries the network specs, epoch and step counters, the
//! training config and its hash, validation metrics, optimizer step
//! counts, and a tensor index of `{group, name, shape, offset, count}`
//! where `offset` and `count` are in `f32` elements.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Adam, TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::inference::Detector;
use crate::nn::{Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, ModelParams, Tensor};

pub const MAGIC: &[u8; 8] = b"SPLGCKPT";
pub const FORMAT_VERSION: u32 = 1;

const GROUPS: [&str; 6] = [
    "generator",
    "discriminator",
    "generator.adam.m",
    "generator.adam.v",
    "discriminator.adam.m",
    "discriminator.adam.v",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetrics {
    /// Validation metric for this epoch; `None` if it was not computed.
    pub val_metric: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    group: String,
    name: String,
    shape: Vec<usize>,
    offset: usize,
    count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    epoch: usize,
    step: usize,
    config: TrainConfig,
    config_hash: String,
    generator_spec: GeneratorSpec,
    discriminator_spec: DiscriminatorSpec,
    metrics: CheckpointMetrics,
    generator_adam_t: u64,
    discriminator_adam_t: u64,
    tensors: Vec<TensorEntry>,
}

/// Complete training state at an epoch boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub step: usize,
    pub config: TrainConfig,
    pub generator_spec: GeneratorSpec,
    pub discriminator_spec: DiscriminatorSpec,
    pub generator: ModelParams<f32>,
    pub discriminator: ModelParams<f32>,
    pub generator_opt: Adam,
    pub discriminator_opt: Adam,
    pub metrics: CheckpointMetrics,
}

/// SHA-256 over the config JSON with `epochs` cleared, so extending a run
/// keeps the hash.
pub fn config_hash(config: &TrainConfig) -> String {
    let recipe = TrainConfig { epochs: 0, ..config.clone() };
    let json = serde_json::to_vec(&recipe).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

impl Checkpoint {
    pub fn from_state(state: &TrainState, config: &TrainConfig, metrics: CheckpointMetrics) -> Self {
        Self {
            epoch: state.epoch,
            step: state.step,
            config: config.clone(),
            generator_spec: state.generator.spec().clone(),
            discriminator_spec: state.discriminator.spec().clone(),
            generator: state.g_params.clone(),
            discriminator: state.d_params.clone(),
            generator_opt: state.g_opt.clone(),
            discriminator_opt: state.d_opt.clone(),
            metrics,
        }
    }

    pub fn into_state(self) -> Result<TrainState> {
        Ok(TrainState {
            generator: Generator::new(self.generator_spec)?,
            discriminator: Discriminator::new(self.discriminator_spec)?,
            g_params: self.generator,
            d_params: self.discriminator,
            g_opt: self.generator_opt,
            d_opt: self.discriminator_opt,
            epoch: self.epoch,
            step: self.step,
        })
    }

    pub fn detector(&self) -> Result<Detector> {
        Detector::new(self.generator_spec.clone(), self.generator.clone())
    }

    fn groups(&self) -> [&ModelParams<f32>; 6] {
        [
            &self.generator,
            &self.discriminator,
            &self.generator_opt.m,
            &self.generator_opt.v,
            &self.discriminator_opt.m,
            &self.discriminator_opt.v,
        ]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut offset = 0;
        for (group, params) in GROUPS.iter().zip(self.groups()) {
            for (name, t) in params.iter() {
                tensors.push(TensorEntry {
                    group: group.to_string(),
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                    count: t.len(),
                });
                offset += t.len();
            }
        }
        let header = Header {
            epoch: self.epoch,
            step: self.step,
            config: self.config.clone(),
            config_hash: config_hash(&self.config),
            generator_spec: self.generator_spec.clone(),
            discriminator_spec: self.discriminator_spec.clone(),
            metrics: self.metrics,
            generator_adam_t: self.generator_opt.t,
            discriminator_adam_t: self.discriminator_opt.t,
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + 4 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for params in self.groups() {
            for (_, t) in params.iter() {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::BadCheckpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint archive"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::BadCheckpoint(format!("unsupported format version {version}")));
        }
        let hlen = usize::try_from(u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")))
            .map_err(|_| bad("header length overflow"))?;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| Error::BadCheckpoint(e.to_string()))?;
        if header.config_hash != config_hash(&header.config) {
            return Err(bad("config hash does not match the stored config"));
        }
        let payload = &body[hlen..];
        let total: usize = header.tensors.iter().map(|t| t.count).sum();
        if payload.len() != 4 * total {
            return Err(Error::BadCheckpoint(format!(
                "payload holds {} bytes, index describes {}",
                payload.len(),
                4 * total
            )));
        }
        let mut groups: Vec<ModelParams<f32>> = (0..GROUPS.len()).map(|_| ModelParams::new()).collect();
        for entry in &header.tensors {
            let g = GROUPS
                .iter()
                .position(|g| *g == entry.group)
                .ok_or_else(|| Error::BadCheckpoint(format!("unknown tensor group {}", entry.group)))?;
            if entry.shape.iter().product::<usize>() != entry.count || entry.offset + entry.count > total {
                return Err(Error::BadCheckpoint(format!("inconsistent index entry for {}", entry.name)));
            }
            let raw = &payload[4 * entry.offset..4 * (entry.offset + entry.count)];
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            groups[g].insert(entry.name.clone(), Tensor::from_vec(&entry.shape, data)?);
        }
        let mut it = groups.into_iter();
        let mut next = || it.next().expect("six groups");
        let (generator, discriminator) = (next(), next());
        let (gm, gv, dm, dv) = (next(), next(), next(), next());
        generator.check_layout(&header.generator_spec)?;
        discriminator.check_layout(&header.discriminator_spec)?;
        for (m, p) in [(&gm, &generator), (&gv, &generator), (&dm, &discriminator), (&dv, &discriminator)] {
            if m.len() != p.len() {
                return Err(bad("optimizer state does not mirror parameters"));
            }
        }
        let adam = header.config.optimizer;
        Ok(Self {
            epoch: header.epoch,
            step: header.step,
            config: header.config,
            generator_spec: header.generator_spec,
            discriminator_spec: header.discriminator_spec,
            generator,
            discriminator,
            generator_opt: Adam {
                config: adam,
                t: header.generator_adam_t,
                m: gm,
                v: gv,
            },
            discriminator_opt: Adam {
                config: adam,
                t: header.discriminator_adam_t,
                m: dm,
                v: dv,
            },
            metrics: header.metrics,
        })
    }

    /// Write via a temporary file and rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("ckpt.tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&self.to_bytes()?)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        Self::from_bytes(&fs::read(path)?)
    }
}
