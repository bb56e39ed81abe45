use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{pr_curve, pr_from_pairs, roc_curve, roc_from_pairs, PrCurve, RocCurve, ScoredSample};
use crate::error::{Error, Result};
use crate::inference::{detection_score, Detector};
use crate::types::{ForgeryMask, ImageMaskPair, SoftMask};

/// Coordinate resolution used when writing pixel-level curves.
pub const CURVE_STEP: f64 = 1e-3;

/// Generator output for one evaluated pair.
#[derive(Clone, Debug)]
pub struct ImageEstimate {
    pub id: String,
    pub truth: ForgeryMask,
    pub estimate: SoftMask,
    pub score: f64,
}

impl ImageEstimate {
    pub fn new(id: impl Into<String>, truth: ForgeryMask, estimate: SoftMask) -> Result<Self> {
        if (truth.width(), truth.height()) != (estimate.width(), estimate.height()) {
            return Err(Error::ShapeMismatch(format!(
                "estimate {}x{} vs truth {}x{}",
                estimate.width(),
                estimate.height(),
                truth.width(),
                truth.height()
            )));
        }
        let score = detection_score(&estimate);
        Ok(Self {
            id: id.into(),
            truth,
            estimate,
            score,
        })
    }

    pub fn is_forged(&self) -> bool {
        !self.truth.is_pristine()
    }
}

pub fn estimate_pairs(detector: &Detector, pairs: &[&ImageMaskPair]) -> Result<Vec<ImageEstimate>> {
    pairs
        .par_iter()
        .map(|p| ImageEstimate::new(p.id.clone(), p.mask.clone(), detector.estimate_mask(&p.image)?))
        .collect()
}

#[derive(Clone, Debug)]
pub struct DetectionReport {
    pub samples: Vec<ScoredSample>,
    pub roc: RocCurve,
    pub pr: PrCurve,
    /// Operating threshold `T` maximising `tpr - fpr`.
    pub threshold: f64,
}

pub fn evaluate_detection(estimates: &[ImageEstimate]) -> Result<DetectionReport> {
    let samples: Vec<ScoredSample> = estimates
        .iter()
        .map(|e| ScoredSample {
            id: e.id.clone(),
            score: e.score,
            label: e.is_forged(),
        })
        .collect();
    let roc = roc_curve(&samples)?;
    let pr = pr_curve(&samples)?;
    let threshold = roc.youden_threshold();
    Ok(DetectionReport {
        samples,
        roc,
        pr,
        threshold,
    })
}

#[derive(Clone, Debug)]
pub struct LocalizationReport {
    pub roc: RocCurve,
    pub pr: PrCurve,
    /// Images classified forged at the operating threshold.
    pub images: Vec<String>,
    pub pixels: usize,
}

fn pooled_pixels<'a>(estimates: impl Iterator<Item = &'a ImageEstimate>) -> Vec<(f32, bool)> {
    let mut pairs = Vec::new();
    for e in estimates {
        pairs.extend(
            e.estimate
                .data()
                .iter()
                .zip(e.truth.data())
                .map(|(&p, &t)| (p, t != 0)),
        );
    }
    pairs
}

/// Pixel ROC over every estimate, without detection gating.
pub fn pixel_roc(estimates: &[ImageEstimate]) -> Result<RocCurve> {
    roc_from_pairs(&mut pooled_pixels(estimates.iter()))
}

/// Pixel ROC and PR pooled over images with `score >= threshold`.
pub fn evaluate_localization(estimates: &[ImageEstimate], threshold: f64) -> Result<LocalizationReport> {
    let detected: Vec<&ImageEstimate> = estimates.iter().filter(|e| e.score >= threshold).collect();
    if detected.is_empty() {
        return Err(Error::NoDetectedForgeries(threshold));
    }
    let mut pairs = pooled_pixels(detected.iter().copied());
    let pixels = pairs.len();
    let roc = roc_from_pairs(&mut pairs)?;
    let pr = pr_from_pairs(&mut pairs)?;
    Ok(LocalizationReport {
        roc,
        pr,
        images: detected.iter().map(|e| e.id.clone()).collect(),
        pixels,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub auc_detection: f64,
    pub ap_detection: f64,
    pub auc_localization: f64,
    pub ap_localization: f64,
    pub loss_mode: String,
    pub threshold: f64,
}

impl EvaluationSummary {
    pub fn new(det: &DetectionReport, loc: &LocalizationReport, loss_mode: &str) -> Self {
        Self {
            auc_detection: det.roc.auc,
            ap_detection: det.pr.ap,
            auc_localization: loc.roc.auc,
            ap_localization: loc.pr.ap,
            loss_mode: loss_mode.to_string(),
            threshold: det.threshold,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

pub fn scores_csv(samples: &[ScoredSample]) -> String {
    let mut s = String::from("id,label,score\n");
    for x in samples {
        let _ = writeln!(s, "{},{},{}", x.id, u8::from(x.label), x.score);
    }
    s
}

pub fn roc_csv(points: &[super::RocPoint]) -> String {
    let mut s = String::from("threshold,fpr,tpr\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.threshold, p.fpr, p.tpr);
    }
    s
}

pub fn pr_csv(points: &[super::PrPoint]) -> String {
    let mut s = String::from("threshold,recall,precision\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.threshold, p.recall, p.precision);
    }
    s
}

/// Write curves, scores, plots and `summary.json` under `dir`.
pub fn write_evaluation(dir: &Path, det: &DetectionReport, loc: &LocalizationReport, loss_mode: &str) -> Result<EvaluationSummary> {
    fs::create_dir_all(dir)?;
    let summary = EvaluationSummary::new(det, loc, loss_mode);
    fs::write(dir.join("detection_scores.csv"), scores_csv(&det.samples))?;
    fs::write(dir.join("detection_roc.csv"), roc_csv(&det.roc.points))?;
    fs::write(dir.join("detection_pr.csv"), pr_csv(&det.pr.points))?;
    let loc_roc = loc.roc.thinned(CURVE_STEP);
    let loc_pr = loc.pr.thinned(CURVE_STEP);
    fs::write(dir.join("localization_roc.csv"), roc_csv(&loc_roc))?;
    fs::write(dir.join("localization_pr.csv"), pr_csv(&loc_pr))?;

    let det_series = super::Series::from_roc(&format!("detection ({loss_mode})"), &det.roc.points, det.roc.auc);
    let loc_series = super::Series::from_roc(&format!("localization ({loss_mode})"), &loc_roc, loc.roc.auc);
    fs::write(dir.join("roc.svg"), super::render_roc_svg("ROC", &[det_series, loc_series]))?;
    let det_pr = super::Series::from_pr(&format!("detection ({loss_mode})"), &det.pr.points, det.pr.ap);
    let loc_pr = super::Series::from_pr(&format!("localization ({loss_mode})"), &loc_pr, loc.pr.ap);
    fs::write(dir.join("pr.svg"), super::render_pr_svg("Precision-recall", &[det_pr, loc_pr]))?;

    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    fs::write(dir.join("summary.json"), json)?;
    Ok(summary)
}

/// Read a `threshold,fpr,tpr` CSV written by [`roc_csv`].
pub fn read_roc_csv(path: &Path) -> Result<Vec<super::RocPoint>> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let num = |i: usize| -> Result<f64> {
                f.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::InvalidInput(format!("bad curve row {line:?} in {}", path.display())))
            };
            Ok(super::RocPoint {
                threshold: num(0)?,
                fpr: num(1)?,
                tpr: num(2)?,
            })
        })
        .collect()
}
