use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use splicegan::eval::{
    estimate_pairs, evaluate_detection, evaluate_localization, read_roc_csv, render_roc_svg, write_evaluation,
    DetectionReport, EvaluationSummary, ImageEstimate, LocalizationReport, Series, CURVE_STEP,
};
use splicegan::forge::{corpus_from_bases, synthetic_corpus, Corpus, DatasetManifest, Split};
use splicegan::inference::{classify, detection_score, localize};
use splicegan::train::{self, Checkpoint, TrainingData, BEST_CHECKPOINT};
use splicegan::types::{ImageMaskPair, ImageRgb, Label, SizeClass, SoftMask};
use splicegan::{Error, Result};

use crate::config::ExperimentConfig;
use crate::{CurveKind, EvalArgs, InferArgs, PlotArgs, SynthArgs, TrainArgs};

pub struct Context {
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub config: ExperimentConfig,
    pub config_file: bool,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    fs::write(path, json)?;
    Ok(())
}

fn require_dir(path: &Path) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::Missing(path.to_path_buf()))
    }
}

/// A checkpoint file, or the best checkpoint of a run directory.
fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if path.is_dir() {
        Checkpoint::load(&path.join(BEST_CHECKPOINT))
    } else {
        Checkpoint::load(path)
    }
}

fn manifest_root(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn load_split(manifest_path: &Path, split: Split) -> Result<Vec<ImageMaskPair>> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let root = manifest_root(manifest_path);
    let pairs: Vec<ImageMaskPair> = manifest
        .entries(split)
        .map(|e| manifest.load_pair(root, e))
        .collect::<Result<_>>()?;
    if pairs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} has no {} pairs",
            manifest_path.display(),
            split.as_str()
        )));
    }
    Ok(pairs)
}

fn load_bases(dir: &Path) -> Result<Vec<ImageRgb>> {
    require_dir(dir)?;
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")));
    paths.sort();
    paths.iter().map(|p| ImageRgb::load_png(p)).collect()
}

fn print_counts(corpus: &Corpus) {
    let m = &corpus.manifest;
    let splits = [Split::Train, Split::Validation, Split::Test].map(|s| m.split_counts(s));
    let total = m.counts();
    println!("{:<10}{:>7}{:>7}{:>12}{:>6}", "class", "total", "train", "validation", "test");
    for class in [SizeClass::Small, SizeClass::Medium, SizeClass::Large, SizeClass::Pristine] {
        println!(
            "{:<10}{:>7}{:>7}{:>12}{:>6}",
            class.as_str(),
            total.get(class),
            splits[0].get(class),
            splits[1].get(class),
            splits[2].get(class)
        );
    }
    println!(
        "{:<10}{:>7}{:>7}{:>12}{:>6}",
        "all",
        total.total(),
        splits[0].total(),
        splits[1].total(),
        splits[2].total()
    );
}

pub fn synth(ctx: &Context, args: SynthArgs) -> Result<()> {
    let cfg = &ctx.config.synth;
    let seed = ctx.seed.unwrap_or(cfg.seed);
    let scale = args.scale.unwrap_or(cfg.scale);
    fs::create_dir_all(&ctx.out)?;
    let corpus = match args.bases.as_ref().or(cfg.bases.as_ref()) {
        Some(dir) => corpus_from_bases(&load_bases(dir)?, seed, scale)?,
        None => synthetic_corpus(seed, scale)?,
    };
    corpus.write(&ctx.out)?;
    print_counts(&corpus);
    Ok(())
}

pub fn train(ctx: &Context, args: TrainArgs) -> Result<()> {
    let resumed = args.resume.as_deref().map(Checkpoint::load).transpose()?;
    let mut config = match &resumed {
        Some(ckpt) if !ctx.config_file => ckpt.config.clone(),
        _ => ctx.config.train.clone(),
    };
    if let Some(seed) = ctx.seed {
        config.seed = seed;
    }
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(l) = args.loss {
        config.loss.recon_mode = l.into();
    }
    if let Some(p) = args.preset {
        config.preset = p.into();
    }
    if let Some(b) = args.batch_size {
        config.batch_size = b;
    }
    config.validate()?;

    let manifest = DatasetManifest::load(&args.manifest)?;
    let resolution = config.preset.generator().resolution;
    let data = TrainingData::from_manifest(&manifest, manifest_root(&args.manifest), resolution)?;
    fs::create_dir_all(&ctx.out)?;
    write_json(&ctx.out.join("config.json"), &config)?;
    let outcome = match resumed {
        Some(ckpt) => train::resume(&config, &data, &ctx.out, ckpt)?,
        None => train::train(&config, &data, &ctx.out)?,
    };
    let metric = outcome
        .best
        .val_metric
        .map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"));
    println!(
        "trained {} ({} loss) to epoch {}; best epoch {} with validation pixel AUC {metric}",
        ctx.out.display(),
        config.loss.recon_mode,
        outcome.state.epoch,
        outcome.best.epoch
    );
    Ok(())
}

#[derive(Serialize)]
struct DetectionRecord {
    id: String,
    score: f64,
    threshold: f64,
    label: Label,
}

pub fn infer(ctx: &Context, args: InferArgs) -> Result<()> {
    let detector = load_checkpoint(&args.checkpoint)?.detector()?;
    let threshold = match (args.threshold, &args.summary) {
        (Some(t), _) => t,
        (None, Some(path)) => EvaluationSummary::load(path)?.threshold,
        (None, None) => {
            return Err(Error::InvalidInput(
                "pass --threshold or --summary to fix the detection threshold".into(),
            ))
        }
    };
    let tau = args.tau.unwrap_or(ctx.config.eval.tau);
    let inputs: Vec<(String, ImageRgb)> = match &args.manifest {
        Some(m) => load_split(m, args.split.parse()?)?
            .into_iter()
            .map(|p| (p.id, p.image))
            .collect(),
        None => args
            .images
            .iter()
            .map(|p| {
                let id = p.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned());
                Ok((id, ImageRgb::load_png(p)?))
            })
            .collect::<Result<_>>()?,
    };
    if inputs.is_empty() {
        return Err(Error::InvalidInput("no images given".into()));
    }

    let soft_dir = ctx.out.join("soft");
    let binary_dir = ctx.out.join("binary");
    fs::create_dir_all(&soft_dir)?;
    fs::create_dir_all(&binary_dir)?;
    let images: Vec<&ImageRgb> = inputs.iter().map(|(_, img)| img).collect();
    let masks = detector.estimate_masks(&images)?;
    let mut records = Vec::with_capacity(inputs.len());
    for ((id, _), mask) in inputs.iter().zip(&masks) {
        let result = classify(detection_score(mask), threshold);
        mask.save_png(&soft_dir.join(format!("{id}.png")))?;
        localize(mask, tau)?.save_png(&binary_dir.join(format!("{id}.png")))?;
        println!("{id}\t{:.6}\t{}", result.score, label_str(result.label));
        records.push(DetectionRecord {
            id: id.clone(),
            score: result.score,
            threshold: result.threshold,
            label: result.label,
        });
    }
    write_json(&ctx.out.join("detections.json"), &records)
}

fn label_str(label: Label) -> &'static str {
    match label {
        Label::Pristine => "pristine",
        Label::Forged => "forged",
    }
}

fn evaluate(estimates: &[ImageEstimate]) -> Result<(DetectionReport, LocalizationReport)> {
    let det = evaluate_detection(estimates)?;
    let loc = evaluate_localization(estimates, det.threshold)?;
    Ok((det, loc))
}

fn print_summary(label: &str, s: &EvaluationSummary) {
    println!(
        "{label}: detection AUC {:.4} AP {:.4} (T = {:.4}); localization AUC {:.4} AP {:.4}",
        s.auc_detection, s.ap_detection, s.threshold, s.auc_localization, s.ap_localization
    );
}

/// `[LABEL=]PATH`; the label defaults to the directory or file name.
fn parse_compare(spec: &str) -> (String, PathBuf) {
    if let Some((label, path)) = spec.split_once('=') {
        return (label.to_string(), PathBuf::from(path));
    }
    let path = PathBuf::from(spec);
    let label = if path.is_dir() { path.file_name() } else { path.file_stem() }
        .map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned());
    (label, path)
}

pub fn eval(ctx: &Context, args: EvalArgs) -> Result<()> {
    let split: Split = args.split.as_deref().unwrap_or(&ctx.config.eval.split).parse()?;
    let pairs = load_split(&args.manifest, split)?;
    let refs: Vec<&ImageMaskPair> = pairs.iter().collect();

    if !args.compare.is_empty() {
        let runs: Vec<(String, PathBuf)> = args.compare.iter().map(|s| parse_compare(s)).collect();
        let mut labels: Vec<&String> = runs.iter().map(|(l, _)| l).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != runs.len() {
            return Err(Error::InvalidInput("comparison labels must be distinct".into()));
        }
        let mut detection = Vec::new();
        let mut localization = Vec::new();
        let mut summaries = BTreeMap::new();
        for (label, path) in &runs {
            let ckpt = load_checkpoint(path)?;
            let mode = ckpt.config.loss.recon_mode;
            let estimates = estimate_pairs(&ckpt.detector()?, &refs)?;
            let (det, loc) = evaluate(&estimates)?;
            let summary = write_evaluation(&ctx.out.join(label), &det, &loc, mode.as_str())?;
            print_summary(label, &summary);
            detection.push(Series::from_roc(label, &det.roc.points, det.roc.auc));
            localization.push(Series::from_roc(label, &loc.roc.thinned(CURVE_STEP), loc.roc.auc));
            summaries.insert(label.clone(), summary);
        }
        fs::write(ctx.out.join("compare_detection_roc.svg"), render_roc_svg("Detection ROC", &detection))?;
        fs::write(
            ctx.out.join("compare_localization_roc.svg"),
            render_roc_svg("Localization ROC", &localization),
        )?;
        return write_json(&ctx.out.join("compare.json"), &summaries);
    }

    let (estimates, mode) = match (&args.checkpoint, &args.estimates) {
        (Some(path), _) => {
            let ckpt = load_checkpoint(path)?;
            (estimate_pairs(&ckpt.detector()?, &refs)?, ckpt.config.loss.recon_mode.as_str())
        }
        (None, Some(dir)) => {
            require_dir(dir)?;
            let estimates = pairs
                .iter()
                .map(|p| {
                    let mask = SoftMask::load_png(&dir.join(format!("{}.png", p.id)))?;
                    ImageEstimate::new(p.id.clone(), p.mask.clone(), mask)
                })
                .collect::<Result<Vec<_>>>()?;
            (estimates, "external")
        }
        (None, None) => {
            return Err(Error::InvalidInput(
                "pass --checkpoint, --estimates or --compare".into(),
            ))
        }
    };
    let (det, loc) = evaluate(&estimates)?;
    let summary = write_evaluation(&ctx.out, &det, &loc, mode)?;
    print_summary(split.as_str(), &summary);
    Ok(())
}

pub fn plot(ctx: &Context, args: PlotArgs) -> Result<()> {
    let mut detection = Vec::new();
    let mut localization = Vec::new();
    for dir in &args.runs {
        require_dir(dir)?;
        let summary = EvaluationSummary::load(&dir.join("summary.json"))?;
        let label = dir
            .file_name()
            .map_or_else(|| dir.display().to_string(), |s| s.to_string_lossy().into_owned());
        if args.kind != CurveKind::Localization {
            let points = read_roc_csv(&dir.join("detection_roc.csv"))?;
            detection.push(Series::from_roc(&label, &points, summary.auc_detection));
        }
        if args.kind != CurveKind::Detection {
            let points = read_roc_csv(&dir.join("localization_roc.csv"))?;
            localization.push(Series::from_roc(&label, &points, summary.auc_localization));
        }
    }
    fs::create_dir_all(&ctx.out)?;
    for (series, name, title) in [
        (detection, "roc_detection.svg", "Detection ROC"),
        (localization, "roc_localization.svg", "Localization ROC"),
    ] {
        if !series.is_empty() {
            let path = ctx.out.join(name);
            fs::write(&path, render_roc_svg(title, &series))?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
