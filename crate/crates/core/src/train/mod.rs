//! Alternating discriminator/generator optimisation, validation-based
//! model selection and checkpointing.

mod adam;
mod checkpoint;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{config_hash, Checkpoint, CheckpointMetrics, FORMAT_VERSION, MAGIC};

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{estimate_pairs, pixel_roc};
use crate::forge::{Corpus, DatasetManifest, Split};
use crate::inference::{network_input, network_target, Detector};
use crate::losses::{adversarial_loss_d_graded, total_generator_loss, LossConfig, LossTerms, ReconMode};
use crate::nn::{
    init_params, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, Mode, ModelParams, Preset, Tensor,
};
use crate::rng::{indexed_stream, Rng};
use crate::types::ImageMaskPair;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMetric {
    /// Pixel-level localization AUC pooled over the validation split.
    PixelAuc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub loss: LossConfig,
    pub seed: u64,
    /// Persist a numbered checkpoint every this many epochs.
    pub checkpoint_every: usize,
    pub preset: Preset,
    pub validation_metric: ValidationMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            optimizer: AdamConfig::default(),
            batch_size: 1,
            loss: LossConfig::default(),
            seed: 0,
            checkpoint_every: 10,
            preset: Preset::Standard,
            validation_metric: ValidationMetric::PixelAuc,
        }
    }
}

impl TrainConfig {
    /// Reduced-width, 50-epoch recipe for CPU runs.
    pub fn desk() -> Self {
        Self {
            epochs: 50,
            preset: Preset::Tiny,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.loss.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be positive".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::InvalidInput("checkpoint_every must be positive".into()));
        }
        Ok(())
    }
}

/// A training pair resampled to the network resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedPair {
    pub id: String,
    /// Planar `[3, r, r]` in `[0, 1]`.
    pub image: Vec<f32>,
    /// `[r, r]` in `{0, 1}`.
    pub target: Vec<f32>,
}

impl PreparedPair {
    pub fn new(pair: &ImageMaskPair, resolution: usize) -> Self {
        Self {
            id: pair.id.clone(),
            image: network_input(&pair.image, resolution),
            target: network_target(&pair.mask, resolution),
        }
    }
}

/// Loss terms of one alternating step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub epoch: usize,
    /// 1-based global step.
    pub step: usize,
    pub loss_d: f64,
    pub adv_g: f64,
    pub recon: f64,
    pub total: f64,
}

impl StepMetrics {
    pub fn terms(&self) -> LossTerms {
        LossTerms {
            step: self.step,
            adv_g: self.adv_g,
            recon: self.recon,
            total: self.total,
            d: self.loss_d,
        }
    }
}

/// `step,L_adv_G,L_R_<mode>,L_total,L_D` rows for a sequence of steps.
pub fn losses_csv(metrics: &[StepMetrics], mode: ReconMode) -> String {
    let mut s = LossTerms::csv_header(mode);
    s.push('\n');
    for m in metrics {
        s.push_str(&m.terms().csv_row());
        s.push('\n');
    }
    s
}

/// Networks, parameters and optimizer state.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub g_params: ModelParams<f32>,
    pub d_params: ModelParams<f32>,
    pub g_opt: Adam,
    pub d_opt: Adam,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed steps.
    pub step: usize,
}

impl TrainState {
    pub fn new(g_spec: GeneratorSpec, d_spec: DiscriminatorSpec, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        d_spec.validate()?;
        let g_params = init_params(&g_spec, config.seed);
        let d_params = init_params(&d_spec, config.seed);
        Ok(Self {
            g_opt: Adam::new(config.optimizer, &g_params),
            d_opt: Adam::new(config.optimizer, &d_params),
            generator: Generator::new(g_spec)?,
            discriminator: Discriminator::new(d_spec)?,
            g_params,
            d_params,
            epoch: 0,
            step: 0,
        })
    }

    pub fn from_config(config: &TrainConfig) -> Result<Self> {
        Self::new(config.preset.generator(), config.preset.discriminator(), config)
    }

    pub fn resolution(&self) -> usize {
        self.generator.spec().resolution
    }

    pub fn detector(&self) -> Result<Detector> {
        Detector::new(self.generator.spec().clone(), self.g_params.clone())
    }

    fn batch(&self, batch: &[&PreparedPair]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let r = self.resolution();
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let mut x = Vec::with_capacity(batch.len() * 3 * r * r);
        let mut m = Vec::with_capacity(batch.len() * r * r);
        for p in batch {
            if p.image.len() != 3 * r * r || p.target.len() != r * r {
                return Err(Error::BadShape(format!("pair {} is not prepared at resolution {r}", p.id)));
            }
            x.extend_from_slice(&p.image);
            m.extend_from_slice(&p.target);
        }
        Ok((
            Tensor::from_vec(&[batch.len(), 3, r, r], x)?,
            Tensor::from_vec(&[batch.len(), 1, r, r], m)?,
        ))
    }

    fn non_finite(&self, what: &str, value: f64) -> Error {
        Error::NonFiniteLoss {
            epoch: self.epoch + 1,
            step: self.step + 1,
            detail: format!("{what} = {value}"),
        }
    }

    /// One discriminator update on a real pair and a detached fake pair.
    fn update_discriminator(&mut self, x: &Tensor<f32>, m: &Tensor<f32>, fake: &Tensor<f32>, eps: f32) -> Result<f64> {
        let d = &self.discriminator;
        let real_tr = d.forward(&self.d_params, x, m)?;
        let fake_tr = d.forward(&self.d_params, x, fake)?;
        let loss = adversarial_loss_d_graded(real_tr.output().data(), fake_tr.output().data(), eps);
        let value = f64::from(loss.value);
        if !value.is_finite() {
            return Err(self.non_finite("L_D", value));
        }
        let mut grads_it = loss.grads.into_iter();
        let d_real = Tensor::from_vec(real_tr.output().shape(), grads_it.next().expect("real grads"))?;
        let d_fake = Tensor::from_vec(fake_tr.output().shape(), grads_it.next().expect("fake grads"))?;
        let (mut grads, _) = d.backward(&self.d_params, &real_tr, &d_real, false);
        let (fake_grads, _) = d.backward(&self.d_params, &fake_tr, &d_fake, false);
        grads.accumulate(&fake_grads);
        self.d_opt.step(&mut self.d_params, &grads);
        Ok(value)
    }

    /// Discriminator update followed by a generator update against the
    /// updated discriminator. Decoder dropout draws from `dropout`.
    pub fn train_step(&mut self, batch: &[&PreparedPair], loss: &LossConfig, dropout: &mut Rng) -> Result<StepMetrics> {
        loss.validate()?;
        let eps = loss.epsilon as f32;
        let (x, m) = self.batch(batch)?;
        let g_trace = self.generator.forward(&self.g_params, &x, Mode::Train(dropout))?;
        let loss_d = self.update_discriminator(&x, &m, g_trace.output(), eps)?;

        let d = &self.discriminator;
        let d_trace = d.forward(&self.d_params, &x, g_trace.output())?;
        let g_loss = total_generator_loss(d_trace.output().data(), g_trace.output().data(), m.data(), loss)?;
        for (what, v) in [("L_adv_G", g_loss.adversarial), ("L_R", g_loss.reconstruction), ("L_total", g_loss.total)] {
            if !v.is_finite() {
                return Err(self.non_finite(what, f64::from(v)));
            }
        }
        let d_scores = Tensor::from_vec(d_trace.output().shape(), g_loss.d_fake)?;
        let (_, d_mask) = d.backward(&self.d_params, &d_trace, &d_scores, true);
        let mut d_out = d_mask.expect("mask gradient requested");
        d_out.add_assign(&Tensor::from_vec(g_trace.output().shape(), g_loss.d_estimate)?);
        let g_grads = self.generator.backward(&self.g_params, &g_trace, &d_out);
        self.g_opt.step(&mut self.g_params, &g_grads);

        self.step += 1;
        Ok(StepMetrics {
            epoch: self.epoch + 1,
            step: self.step,
            loss_d,
            adv_g: f64::from(g_loss.adversarial),
            recon: f64::from(g_loss.reconstruction),
            total: f64::from(g_loss.total),
        })
    }

    /// Discriminator-only update with the generator frozen; fakes come from
    /// the generator in inference mode. Returns the loss before the update.
    pub fn discriminator_step(&mut self, batch: &[&PreparedPair], loss: &LossConfig) -> Result<f64> {
        let (x, m) = self.batch(batch)?;
        let fake = self.generator.infer(&self.g_params, &x)?;
        self.update_discriminator(&x, &m, &fake, loss.epsilon as f32)
    }
}

/// Inputs to [`train`]: prepared training pairs and full-resolution
/// validation pairs.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub train: Vec<PreparedPair>,
    pub validation: Vec<ImageMaskPair>,
}

impl TrainingData {
    pub fn from_pairs(train: &[&ImageMaskPair], validation: &[&ImageMaskPair], resolution: usize) -> Self {
        Self {
            train: train.iter().map(|p| PreparedPair::new(p, resolution)).collect(),
            validation: validation.iter().map(|&p| p.clone()).collect(),
        }
    }

    pub fn from_corpus(corpus: &Corpus, resolution: usize) -> Self {
        Self::from_pairs(&corpus.split_pairs(Split::Train), &corpus.split_pairs(Split::Validation), resolution)
    }

    /// Load the train and validation splits of a manifest stored in `root`.
    pub fn from_manifest(manifest: &DatasetManifest, root: &Path, resolution: usize) -> Result<Self> {
        let load = |split| -> Result<Vec<ImageMaskPair>> {
            manifest.entries(split).map(|e| manifest.load_pair(root, e)).collect()
        };
        let train = load(Split::Train)?;
        let validation = load(Split::Validation)?;
        if train.is_empty() {
            return Err(Error::InvalidInput("manifest has no train split".into()));
        }
        Ok(Self {
            train: train.iter().map(|p| PreparedPair::new(p, resolution)).collect(),
            validation,
        })
    }
}

/// Epoch-level log row; loss columns are epoch means and are empty for
/// the initial checkpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: usize,
    pub losses: Option<[f64; 4]>,
    pub val_metric: Option<f64>,
}

impl EpochRecord {
    pub fn csv_header(mode: ReconMode) -> String {
        format!("epoch,step,L_D,L_adv_G,L_R_{mode},L_total,val_metric")
    }

    pub fn csv_row(&self) -> String {
        let losses = match self.losses {
            Some([d, adv, rec, tot]) => format!("{d},{adv},{rec},{tot}"),
            None => ",,,".to_string(),
        };
        let val = self.val_metric.map(|v| v.to_string()).unwrap_or_default();
        format!("{},{},{losses},{val}", self.epoch, self.step)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub epoch: usize,
    pub val_metric: Option<f64>,
    /// Numbered archive, if this epoch was persisted on schedule.
    pub path: Option<PathBuf>,
}

/// Argmax of the validation metric; ties go to the earliest epoch and a
/// missing metric ranks below every value.
pub fn select_best(records: &[CheckpointRecord]) -> Result<&CheckpointRecord> {
    let key = |r: &CheckpointRecord| r.val_metric.filter(|v| !v.is_nan()).unwrap_or(f64::NEG_INFINITY);
    let mut best = records.first().ok_or(Error::EmptyList)?;
    for r in &records[1..] {
        if key(r) > key(best) {
            best = r;
        }
    }
    Ok(best)
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    pub checkpoints: Vec<CheckpointRecord>,
    pub best: CheckpointRecord,
    pub state: TrainState,
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const LOSSES_FILE: &str = "losses.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const BEST_MARKER: &str = "best.json";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

pub fn numbered_checkpoint(out: &Path, epoch: usize) -> PathBuf {
    out.join("checkpoints").join(format!("epoch_{epoch:04}.ckpt"))
}

/// Validation metric of the current generator; `None` when the split has
/// no forged pair.
pub fn validation_metric(state: &TrainState, validation: &[ImageMaskPair]) -> Result<Option<f64>> {
    if !validation.iter().any(|p| !p.mask.is_pristine()) {
        return Ok(None);
    }
    let detector = state.detector()?;
    let refs: Vec<&ImageMaskPair> = validation.iter().collect();
    let estimates = estimate_pairs(&detector, &refs)?;
    Ok(Some(pixel_roc(&estimates)?.auc))
}

struct CsvLog {
    out: BufWriter<File>,
}

impl CsvLog {
    /// Open `path`, keeping the header and rows accepted by `keep`.
    fn open(path: &Path, header: &str, keep: impl Fn(usize) -> bool) -> Result<Self> {
        let mut kept = format!("{header}\n");
        if path.exists() {
            for line in fs::read_to_string(path)?.lines().skip(1) {
                let first = line.split(',').next().and_then(|v| v.parse::<usize>().ok());
                if first.is_some_and(&keep) {
                    kept.push_str(line);
                    kept.push('\n');
                }
            }
        }
        fs::write(path, kept)?;
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    fn row(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}")?;
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct BestMarker {
    epoch: usize,
    val_metric: Option<f64>,
}

/// Seeded visiting order of `n` training pairs in `epoch`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut indexed_stream(seed, "shuffle", &[epoch as u64]));
    order
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Train from freshly initialised parameters, writing logs and
/// checkpoints under `out`.
pub fn train(config: &TrainConfig, data: &TrainingData, out: &Path) -> Result<TrainOutcome> {
    let state = TrainState::from_config(config)?;
    run(config, data, out, state, None)
}

/// Like [`train`] with explicit network specs.
pub fn train_with_specs(
    config: &TrainConfig,
    g_spec: GeneratorSpec,
    d_spec: DiscriminatorSpec,
    data: &TrainingData,
    out: &Path,
) -> Result<TrainOutcome> {
    let state = TrainState::new(g_spec, d_spec, config)?;
    run(config, data, out, state, None)
}

/// Continue a run from `checkpoint` up to `config.epochs`. Log rows after
/// the checkpoint are discarded and rewritten.
pub fn resume(config: &TrainConfig, data: &TrainingData, out: &Path, checkpoint: Checkpoint) -> Result<TrainOutcome> {
    if config_hash(config) != config_hash(&checkpoint.config) {
        return Err(Error::InvalidInput(
            "resume config differs from the checkpoint's config beyond the epoch count".into(),
        ));
    }
    let metric = checkpoint.metrics.val_metric;
    let state = checkpoint.into_state()?;
    run(config, data, out, state, Some(metric))
}

fn run(config: &TrainConfig, data: &TrainingData, out: &Path, mut state: TrainState, resumed: Option<Option<f64>>) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::InvalidInput("no training pairs".into()));
    }
    fs::create_dir_all(out.join("checkpoints"))?;
    let mode = config.loss.recon_mode;
    let (start_epoch, start_step) = (state.epoch, state.step);
    let mut metrics_log = CsvLog::open(&out.join(METRICS_FILE), &EpochRecord::csv_header(mode), |e| {
        resumed.is_some() && e <= start_epoch
    })?;
    let mut losses_log = CsvLog::open(&out.join(LOSSES_FILE), &LossTerms::csv_header(mode), |s| {
        resumed.is_some() && s <= start_step
    })?;

    let mut log = Vec::new();
    let mut checkpoints = Vec::new();
    let mut best: CheckpointRecord;

    let persist = |state: &TrainState, metric: Option<f64>, path: &Path| -> Result<()> {
        Checkpoint::from_state(state, config, CheckpointMetrics { val_metric: metric }).save(path)
    };
    let write_best = |state: &TrainState, metric: Option<f64>| -> Result<()> {
        persist(state, metric, &out.join(BEST_CHECKPOINT))?;
        let marker = BestMarker {
            epoch: state.epoch,
            val_metric: metric,
        };
        fs::write(out.join(BEST_MARKER), serde_json::to_string_pretty(&marker)? + "\n")?;
        Ok(())
    };

    match resumed {
        None => {
            let metric = validation_metric(&state, &data.validation)?;
            let record = EpochRecord {
                epoch: 0,
                step: 0,
                losses: None,
                val_metric: metric,
            };
            metrics_log.row(&record.csv_row())?;
            log.push(record);
            let path = numbered_checkpoint(out, 0);
            persist(&state, metric, &path)?;
            persist(&state, metric, &out.join(LAST_CHECKPOINT))?;
            write_best(&state, metric)?;
            best = CheckpointRecord {
                epoch: 0,
                val_metric: metric,
                path: Some(path),
            };
            checkpoints.push(best.clone());
        }
        Some(metric) => {
            let marker: Option<BestMarker> = fs::read(out.join(BEST_MARKER))
                .ok()
                .and_then(|b| serde_json::from_slice(&b).ok())
                .filter(|m: &BestMarker| m.epoch <= start_epoch && out.join(BEST_CHECKPOINT).exists());
            best = match marker {
                Some(m) => CheckpointRecord {
                    epoch: m.epoch,
                    val_metric: m.val_metric,
                    path: None,
                },
                None => {
                    write_best(&state, metric)?;
                    CheckpointRecord {
                        epoch: start_epoch,
                        val_metric: metric,
                        path: None,
                    }
                }
            };
        }
    }

    for epoch in start_epoch + 1..=config.epochs {
        let order = epoch_order(config.seed, epoch, data.train.len());
        let mut steps = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PreparedPair> = chunk.iter().map(|&i| &data.train[i]).collect();
            let mut dropout = indexed_stream(config.seed, "dropout", &[epoch as u64, state.step as u64 + 1]);
            let m = state.train_step(&batch, &config.loss, &mut dropout)?;
            losses_log.row(&m.terms().csv_row())?;
            steps.push(m);
        }
        state.epoch = epoch;
        let metric = validation_metric(&state, &data.validation)?;
        let record = EpochRecord {
            epoch,
            step: state.step,
            losses: Some([
                mean(steps.iter().map(|m| m.loss_d)),
                mean(steps.iter().map(|m| m.adv_g)),
                mean(steps.iter().map(|m| m.recon)),
                mean(steps.iter().map(|m| m.total)),
            ]),
            val_metric: metric,
        };
        metrics_log.row(&record.csv_row())?;
        log.push(record);

        let path = (epoch % config.checkpoint_every == 0 || epoch == config.epochs).then(|| numbered_checkpoint(out, epoch));
        if let Some(p) = &path {
            persist(&state, metric, p)?;
        }
        persist(&state, metric, &out.join(LAST_CHECKPOINT))?;
        let current = CheckpointRecord {
            epoch,
            val_metric: metric,
            path,
        };
        if select_best(&[best.clone(), current.clone()])?.epoch == epoch {
            write_best(&state, metric)?;
            best = current.clone();
        }
        checkpoints.push(current);
    }

    Ok(TrainOutcome {
        log,
        checkpoints,
        best,
        state,
    })
}

/// Result of repeatedly stepping on one fixed batch.
#[derive(Debug)]
pub struct OverfitReport {
    pub steps: Vec<StepMetrics>,
    pub state: TrainState,
}

impl OverfitReport {
    pub fn final_recon(&self) -> f64 {
        self.steps.last().map_or(f64::NAN, |m| m.recon)
    }
}

/// Train on `pairs` as a single batch for `steps` steps.
pub fn overfit(mut state: TrainState, pairs: &[PreparedPair], steps: usize, config: &TrainConfig) -> Result<OverfitReport> {
    let batch: Vec<&PreparedPair> = pairs.iter().collect();
    let mut out = Vec::with_capacity(steps);
    for s in 0..steps {
        let mut dropout = indexed_stream(config.seed, "overfit-dropout", &[s as u64]);
        out.push(state.train_step(&batch, &config.loss, &mut dropout)?);
    }
    Ok(OverfitReport { steps: out, state })
}
