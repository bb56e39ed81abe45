//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.
//!
//! Select a subset with `cargo test --test acceptance -- 1 3 4`.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::Rng as _;
use splicegan::eval::{estimate_pairs, evaluate_detection, evaluate_localization, pr_from_pairs, roc_from_pairs};
use splicegan::forge::sprite::sprite_library;
use splicegan::forge::texture::satellite_base;
use splicegan::forge::{splice, synthetic_corpus, ClassCounts, Corpus, Split};
use splicegan::inference::{detection_score, localize};
use splicegan::losses::{
    adversarial_loss_d_graded, adversarial_loss_g_graded, reconstruction_loss_graded, total_generator_loss,
    LossConfig, ReconMode, EPS_F64,
};
use splicegan::nn::{init_params, receptive_field, DiscriminatorSpec, Generator, GeneratorSpec, ModelParams, Tensor};
use splicegan::rng::{indexed_stream, stream};
use splicegan::train::{
    losses_csv, overfit, train, Checkpoint, PreparedPair, TrainConfig, TrainState, TrainingData, BEST_CHECKPOINT,
    LAST_CHECKPOINT, LOSSES_FILE, METRICS_FILE,
};
use splicegan::types::{ImageMaskPair, SoftMask, SizeClass, CORPUS_RESOLUTION};

const SEED: u64 = 7;
const DESK_SCALE: f64 = 0.25;
const OVERFIT_STEPS: usize = 200;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Artifacts shared between the training criteria.
#[derive(Default)]
struct Shared {
    overfit_losses: Option<String>,
    desk_run: Option<RunFiles>,
}

#[derive(Clone, PartialEq)]
struct RunFiles {
    metrics: Vec<u8>,
    losses: Vec<u8>,
    last_checkpoint: Vec<u8>,
}

impl RunFiles {
    fn read(dir: &Path) -> std::io::Result<Self> {
        Ok(Self {
            metrics: fs::read(dir.join(METRICS_FILE))?,
            losses: fs::read(dir.join(LOSSES_FILE))?,
            last_checkpoint: fs::read(dir.join(LAST_CHECKPOINT))?,
        })
    }
}

// ---------------------------------------------------------------- 1

fn structural_fidelity(_: &mut Shared) -> Outcome {
    let d = DiscriminatorSpec::default();
    // offset-and-jump recurrence, walked from the input side
    let (mut rf, mut jump) = (1usize, 1usize);
    for s in &d.stages {
        rf += (s.kernel - 1) * jump;
        jump *= s.stride;
    }
    ensure!(rf == 70, "independent receptive field is {rf}");
    ensure!(receptive_field(&d) == 70, "receptive_field = {}", receptive_field(&d));
    ensure!(
        receptive_field(&DiscriminatorSpec::tiny()) == 70,
        "tiny receptive field = {}",
        receptive_field(&DiscriminatorSpec::tiny())
    );

    for g in [GeneratorSpec::default(), GeneratorSpec::tiny()] {
        let (enc, dec) = (g.encoder(), g.decoder());
        ensure!(enc.len() == 8 && dec.len() == 8, "{} encoder / {} decoder stages", enc.len(), dec.len());
        ensure!(enc[0].in_channels == 3, "encoder input has {} channels", enc[0].in_channels);
        for i in 1..8 {
            ensure!(enc[i].in_channels == enc[i - 1].out_channels, "encoder stage {} input mismatch", i + 1);
        }
        ensure!(dec[0].in_channels == enc[7].out_channels, "bottleneck feeds {} channels", dec[0].in_channels);
        for j in 1..=7 {
            let src = g.skip_source(j).ok_or(format!("decoder stage {j} has no skip"))?;
            ensure!(src == 8 - j, "decoder stage {j} pairs with encoder stage {src}");
            // decoder j runs at R/2^(8-j), encoder src at R/2^src
            ensure!(
                dec[j].in_channels == dec[j - 1].out_channels + enc[src - 1].out_channels,
                "decoder stage {} takes {} channels, expected {} + {}",
                j + 1,
                dec[j].in_channels,
                dec[j - 1].out_channels,
                enc[src - 1].out_channels
            );
        }
        ensure!(g.skip_source(8).is_none(), "last decoder stage has a skip");
        ensure!(dec[7].out_channels == 1, "output has {} channels", dec[7].out_channels);
    }

    let g = Generator::new(GeneratorSpec::tiny()).map_err(fail)?;
    let p: ModelParams<f32> = init_params(g.spec(), SEED);
    let out = g.infer(&p, &Tensor::full(&[1, 3, 256, 256], 0.5f32)).map_err(fail)?;
    ensure!(out.shape() == [1, 1, 256, 256], "generator output {:?}", out.shape());
    Ok("receptive field 70, 8+8 stages, skip channels consistent".into())
}

// ---------------------------------------------------------------- 2

fn central_difference(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-6;
    (0..x.len())
        .map(|i| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[i] += h;
            down[i] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-12))
        .fold(0.0, f64::max)
}

fn gradient_checks(_: &mut Shared) -> Outcome {
    let mut rng = stream(SEED, "acceptance/gradcheck");
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let n = rng.random_range(1..=32);
        // probabilities stay inside the clamp band
        let probs = |rng: &mut splicegan::rng::Rng| -> Vec<f64> { (0..n).map(|_| rng.random_range(0.05..0.95)).collect() };
        let real = probs(&mut rng);
        let fake = probs(&mut rng);
        let estimate = probs(&mut rng);
        let target: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
        let mode = if trial % 2 == 0 { ReconMode::Bce } else { ReconMode::L1 };
        let mut errs = Vec::new();

        let d = adversarial_loss_d_graded(&real, &fake, EPS_F64);
        errs.push((
            "adversarial D (real)",
            rel_error(&d.grads[0], &central_difference(&real, |r| adversarial_loss_d_graded(r, &fake, EPS_F64).value)),
        ));
        errs.push((
            "adversarial D (fake)",
            rel_error(&d.grads[1], &central_difference(&fake, |f| adversarial_loss_d_graded(&real, f, EPS_F64).value)),
        ));

        let g = adversarial_loss_g_graded(&fake, EPS_F64);
        errs.push((
            "adversarial G",
            rel_error(&g.grads[0], &central_difference(&fake, |f| adversarial_loss_g_graded(f, EPS_F64).value)),
        ));

        for m in [ReconMode::Bce, ReconMode::L1] {
            let r = reconstruction_loss_graded(&estimate, &target, m, EPS_F64).map_err(fail)?;
            let numeric = central_difference(&estimate, |e| {
                reconstruction_loss_graded(e, &target, m, EPS_F64).unwrap().value
            });
            errs.push((if m == ReconMode::Bce { "BCE" } else { "L1" }, rel_error(&r.grads[0], &numeric)));
        }

        let config = LossConfig {
            recon_mode: mode,
            lambda: 100.0,
            epsilon: EPS_F64,
        };
        let total = total_generator_loss(&fake, &estimate, &target, &config).map_err(fail)?;
        errs.push((
            "total (fake)",
            rel_error(
                &total.d_fake,
                &central_difference(&fake, |f| total_generator_loss(f, &estimate, &target, &config).unwrap().total),
            ),
        ));
        errs.push((
            "total (estimate)",
            rel_error(
                &total.d_estimate,
                &central_difference(&estimate, |e| total_generator_loss(&fake, e, &target, &config).unwrap().total),
            ),
        ));

        for (name, err) in errs {
            ensure!(err < 1e-5, "trial {trial}: {name} relative error {err:.3e}");
            worst = worst.max(err);
        }
    }
    Ok(format!("100 trials, worst relative error {worst:.2e}"))
}

// ---------------------------------------------------------------- 3

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn swept_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut ap, mut prev_recall) = (0.0, 0.0);
    for t in thresholds {
        let tp = scores.iter().zip(labels).filter(|(&s, &l)| l && s >= t).count() as f64;
        let kept = scores.iter().filter(|&&s| s >= t).count() as f64;
        let recall = tp / positives;
        ap += (recall - prev_recall) * (tp / kept);
        prev_recall = recall;
    }
    ap
}

fn metric_oracles(_: &mut Shared) -> Outcome {
    let mut rng = stream(SEED, "acceptance/oracles");
    let (mut worst_auc, mut worst_ap) = (0.0f64, 0.0f64);
    for instance in 0..500 {
        let n = rng.random_range(2..=200);
        let coarse = instance % 3 == 0;
        let scores: Vec<f64> = (0..n)
            .map(|_| if coarse { f64::from(rng.random_range(0..8u8)) } else { rng.random::<f64>() })
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;

        let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
        let auc = roc_from_pairs(&mut pairs).map_err(fail)?.auc;
        let ap = pr_from_pairs(&mut pairs).map_err(fail)?.ap;
        let (da, dp) = ((auc - pairwise_auc(&scores, &labels)).abs(), (ap - swept_ap(&scores, &labels)).abs());
        ensure!(da <= 1e-9, "instance {instance}: AUC off by {da:.3e}");
        ensure!(dp <= 1e-9, "instance {instance}: AP off by {dp:.3e}");
        worst_auc = worst_auc.max(da);
        worst_ap = worst_ap.max(dp);
    }
    Ok(format!("500 instances, max |dAUC| {worst_auc:.1e}, max |dAP| {worst_ap:.1e}"))
}

// ---------------------------------------------------------------- 4

fn detection_score_exactness(_: &mut Shared) -> Outcome {
    let side = CORPUS_RESOLUTION;
    let block = SoftMask::new(
        side,
        side,
        (0..side * side).map(|i| if i % side < 128 && i / side < 128 { 1.0 } else { 0.0 }).collect(),
    )
    .map_err(fail)?;
    let expected = 255.0 * 16384.0 / 422500.0;
    ensure!(detection_score(&block) == expected, "block score {} != {expected}", detection_score(&block));

    // dyadic levels keep every partial sum exact in f64
    let mut rng = stream(SEED, "acceptance/eq-score");
    for case in 0..20 {
        let levels: Vec<u32> = (0..side * side).map(|_| rng.random_range(0..=256)).collect();
        let mask = SoftMask::new(side, side, levels.iter().map(|&k| k as f32 / 256.0).collect()).map_err(fail)?;
        let total: u64 = levels.iter().map(|&k| u64::from(k)).sum();
        let direct = 255.0 * (total as f64 / 256.0) / (side * side) as f64;
        ensure!(detection_score(&mask) == direct, "case {case}: {} != {direct}", detection_score(&mask));
    }
    Ok(format!("128x128 block scores {expected}, 20 random masks exact"))
}

// ---------------------------------------------------------------- 5

fn overfit_pairs(seed: u64) -> Result<Vec<ImageMaskPair>, String> {
    let sprites = sprite_library(&mut stream(seed, "acceptance/sprites"), 4).map_err(fail)?;
    let mut rng = stream(seed, "acceptance/placement");
    [32usize, 64, 128, 64]
        .iter()
        .enumerate()
        .map(|(i, &size)| {
            let base = satellite_base(&mut indexed_stream(seed, "acceptance/base", &[i as u64]), CORPUS_RESOLUTION);
            let at = (
                rng.random_range(0..=CORPUS_RESOLUTION - size),
                rng.random_range(0..=CORPUS_RESOLUTION - size),
            );
            splice(&base, &sprites[i], at, size, format!("overfit_{i}")).map_err(fail)
        })
        .collect()
}

/// Returns the final reconstruction loss, the pooled pixel agreement at
/// 0.5 and the per-step loss CSV.
fn overfit_run(seed: u64) -> Result<(f64, f64, String), String> {
    let pairs = overfit_pairs(seed)?;
    let config = TrainConfig {
        batch_size: pairs.len(),
        seed,
        ..TrainConfig::desk()
    };
    let state = TrainState::from_config(&config).map_err(fail)?;
    let prepared: Vec<PreparedPair> = pairs.iter().map(|p| PreparedPair::new(p, state.resolution())).collect();
    let report = overfit(state, &prepared, OVERFIT_STEPS, &config).map_err(fail)?;
    let detector = report.state.detector().map_err(fail)?;
    let (mut agree, mut total) = (0usize, 0usize);
    for p in &pairs {
        let estimate = detector.estimate_mask(&p.image).map_err(fail)?;
        let binary = localize(&estimate, 0.5).map_err(fail)?;
        agree += binary.data().iter().zip(p.mask.data()).filter(|(a, b)| a == b).count();
        total += binary.data().len();
    }
    Ok((
        report.final_recon(),
        agree as f64 / total as f64,
        losses_csv(&report.steps, config.loss.recon_mode),
    ))
}

fn overfit_sanity(shared: &mut Shared) -> Outcome {
    let (recon, agreement, csv) = overfit_run(SEED)?;
    shared.overfit_losses = Some(csv);
    ensure!(recon < 0.1, "reconstruction loss {recon:.4} after {OVERFIT_STEPS} steps");
    ensure!(agreement >= 0.99, "pixel agreement {:.4}%", 100.0 * agreement);
    Ok(format!(
        "BCE after {OVERFIT_STEPS} steps {recon:.4}, pixel agreement {:.3}%",
        100.0 * agreement
    ))
}

// ---------------------------------------------------------------- 6

struct DeskResult {
    detection_auc: f64,
    localization_auc: f64,
    threshold: f64,
}

fn desk_run(corpus: &Corpus, mode: ReconMode, out: &Path) -> Result<DeskResult, String> {
    let mut config = TrainConfig::desk();
    config.seed = SEED;
    config.loss.recon_mode = mode;
    let state_resolution = config.preset.generator().resolution;
    let data = TrainingData::from_corpus(corpus, state_resolution);
    train(&config, &data, out).map_err(fail)?;
    let detector = Checkpoint::load(&out.join(BEST_CHECKPOINT))
        .and_then(|c| c.detector())
        .map_err(fail)?;
    let estimates = estimate_pairs(&detector, &corpus.split_pairs(Split::Test)).map_err(fail)?;
    let detection = evaluate_detection(&estimates).map_err(fail)?;
    let localization = evaluate_localization(&estimates, detection.threshold).map_err(fail)?;
    Ok(DeskResult {
        detection_auc: detection.roc.auc,
        localization_auc: localization.roc.auc,
        threshold: detection.threshold,
    })
}

fn desk_corpus() -> Result<Corpus, String> {
    synthetic_corpus(SEED, DESK_SCALE).map_err(fail)
}

fn desk_experiment(shared: &mut Shared) -> Outcome {
    let corpus = desk_corpus()?;
    let counts = corpus.manifest.counts();
    let expected = ClassCounts {
        pristine: 31,
        small: 40,
        medium: 8,
        large: 8,
    };
    ensure!(counts == expected, "corpus counts {counts:?}");

    let dir = tempfile::tempdir().map_err(fail)?;
    let bce = desk_run(&corpus, ReconMode::Bce, &dir.path().join("bce"))?;
    shared.desk_run = Some(RunFiles::read(&dir.path().join("bce")).map_err(fail)?);
    let l1 = desk_run(&corpus, ReconMode::L1, &dir.path().join("l1"))?;
    println!(
        "    BCE: detection AUC {:.4} (T = {:.3}), localization AUC {:.4}",
        bce.detection_auc, bce.threshold, bce.localization_auc
    );
    println!(
        "    L1:  detection AUC {:.4} (T = {:.3}), localization AUC {:.4}",
        l1.detection_auc, l1.threshold, l1.localization_auc
    );
    println!(
        "    localization AUC BCE vs L1: {:.4} vs {:.4} (reference 0.988 vs 0.927)",
        bce.localization_auc, l1.localization_auc
    );
    ensure!(bce.detection_auc >= 0.95, "BCE detection AUC {:.4} < 0.95", bce.detection_auc);
    ensure!(bce.localization_auc >= 0.90, "BCE localization AUC {:.4} < 0.90", bce.localization_auc);
    Ok(format!(
        "detection AUC {:.4}, localization AUC {:.4} (L1 {:.4})",
        bce.detection_auc, bce.localization_auc, l1.localization_auc
    ))
}

// ---------------------------------------------------------------- 7

fn determinism(shared: &mut Shared) -> Outcome {
    let first_overfit = match shared.overfit_losses.take() {
        Some(csv) => csv,
        None => overfit_run(SEED)?.2,
    };
    let second_overfit = overfit_run(SEED)?.2;
    ensure!(first_overfit == second_overfit, "overfit loss logs differ");

    let corpus = desk_corpus()?;
    let rerun_corpus = desk_corpus()?;
    ensure!(
        corpus.manifest == rerun_corpus.manifest
            && corpus.pairs.iter().zip(&rerun_corpus.pairs).all(|(a, b)| a.image == b.image && a.mask == b.mask),
        "corpus synthesis is not reproducible"
    );
    let dir = tempfile::tempdir().map_err(fail)?;
    let first = match shared.desk_run.take() {
        Some(files) => files,
        None => {
            desk_run(&corpus, ReconMode::Bce, &dir.path().join("a"))?;
            RunFiles::read(&dir.path().join("a")).map_err(fail)?
        }
    };
    desk_run(&rerun_corpus, ReconMode::Bce, &dir.path().join("b"))?;
    let second = RunFiles::read(&dir.path().join("b")).map_err(fail)?;
    ensure!(first.metrics == second.metrics, "{METRICS_FILE} differs between runs");
    ensure!(first.losses == second.losses, "{LOSSES_FILE} differs between runs");
    ensure!(first.last_checkpoint == second.last_checkpoint, "final checkpoints differ between runs");
    Ok(format!(
        "overfit log, {METRICS_FILE} ({} B), {LOSSES_FILE} ({} B) and final checkpoint identical",
        second.metrics.len(),
        second.losses.len()
    ))
}

// ---------------------------------------------------------------- 8

fn protocol_integrity(_: &mut Shared) -> Outcome {
    let mut summary = Vec::new();
    for scale in [DESK_SCALE, 1.0] {
        let manifest = synthetic_corpus(SEED, scale).map_err(fail)?.manifest;
        ensure!(manifest.pairs.iter().all(|e| e.split.is_some()), "scale {scale}: unassigned pairs");
        let test = manifest.split_counts(Split::Test);
        ensure!(test.small == 0, "scale {scale}: {} small forgeries in test", test.small);
        ensure!(test.medium + test.large > 0, "scale {scale}: test has no medium/large forgeries");
        for e in &manifest.pairs {
            let medium_or_large = matches!(e.size_class, SizeClass::Medium | SizeClass::Large);
            ensure!(
                medium_or_large == (e.split == Some(Split::Test) && e.size_class.is_forged()),
                "scale {scale}: {} ({:?}) assigned to {:?}",
                e.id,
                e.size_class,
                e.split
            );
        }
        summary.push(format!(
            "scale {scale}: test {}P/{}M/{}L",
            test.pristine, test.medium, test.large
        ));
    }
    Ok(summary.join(", "))
}

// ----------------------------------------------------------------

type Criterion = fn(&mut Shared) -> Outcome;

fn main() {
    let criteria: [(&str, Criterion); 8] = [
        ("structural fidelity", structural_fidelity),
        ("loss gradient checks", gradient_checks),
        ("metric oracles", metric_oracles),
        ("detection score exactness", detection_score_exactness),
        ("overfit sanity", overfit_sanity),
        ("desk-scale experiment", desk_experiment),
        ("determinism", determinism),
        ("generalization protocol", protocol_integrity),
    ];
    let selected: BTreeSet<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();

    let mut shared = Shared::default();
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| check(&mut shared)))
            .unwrap_or_else(|panic| Err(format!("panicked: {:?}", panic.downcast_ref::<String>().map(String::as_str).or(panic.downcast_ref::<&str>().copied()))));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS [{secs:.1}s] {detail}"),
            Err(reason) => {
                failures += 1;
                println!("criterion {n} ({name}): FAIL [{secs:.1}s] {reason}");
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
