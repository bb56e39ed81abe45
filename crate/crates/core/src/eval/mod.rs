//! Ranking metrics over scored samples: ROC/AUC and PR/AP.
//!
//! Samples with equal scores form one threshold step, so a tied
//! positive/negative pair contributes one half to the AUC.

mod report;
mod svg;

pub use report::*;
pub use svg::{render_pr_svg, render_roc_svg, Series};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub id: String,
    pub score: f64,
    /// `true` for forged (positive).
    pub label: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Samples with `score >= threshold` are called positive.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    /// Starts at `(0, 0)` with an infinite threshold and ends at `(1, 1)`.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    /// One point per distinct score, in descending score order.
    pub points: Vec<PrPoint>,
    pub ap: f64,
}

/// Positive and negative counts at one distinct score.
#[derive(Clone, Copy, Debug)]
struct Group {
    score: f64,
    pos: u64,
    neg: u64,
}

fn groups<S: Copy + Into<f64>>(pairs: &mut [(S, bool)]) -> Result<(Vec<Group>, u64, u64)> {
    if let Some((s, _)) = pairs.iter().find(|(s, _)| !(*s).into().is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite score {}", (*s).into())));
    }
    pairs.sort_unstable_by(|a, b| b.0.into().total_cmp(&a.0.into()));
    let mut out: Vec<Group> = Vec::new();
    let (mut p, mut n) = (0, 0);
    for &(s, label) in pairs.iter() {
        let s = s.into();
        match out.last_mut() {
            Some(g) if g.score == s => {}
            _ => out.push(Group { score: s, pos: 0, neg: 0 }),
        }
        let g = out.last_mut().expect("just pushed");
        if label {
            g.pos += 1;
            p += 1;
        } else {
            g.neg += 1;
            n += 1;
        }
    }
    Ok((out, p, n))
}

/// ROC over `(score, is_positive)` pairs; reorders the slice.
pub fn roc_from_pairs<S: Copy + Into<f64>>(pairs: &mut [(S, bool)]) -> Result<RocCurve> {
    let (groups, p, n) = groups(pairs)?;
    if p == 0 || n == 0 {
        return Err(Error::DegenerateLabels);
    }
    let (pf, nf) = (p as f64, n as f64);
    let mut points = Vec::with_capacity(groups.len() + 1);
    points.push(RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    });
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut area = 0.0;
    for g in &groups {
        // trapezoid in count units: neg * (tp_before + tp_after) / 2
        area += g.neg as f64 * (2 * tp + g.pos) as f64 / 2.0;
        tp += g.pos;
        fp += g.neg;
        points.push(RocPoint {
            threshold: g.score,
            fpr: fp as f64 / nf,
            tpr: tp as f64 / pf,
        });
    }
    Ok(RocCurve {
        points,
        auc: area / (pf * nf),
    })
}

/// PR curve and average precision `sum (R_n - R_{n-1}) P_n`; reorders the slice.
pub fn pr_from_pairs<S: Copy + Into<f64>>(pairs: &mut [(S, bool)]) -> Result<PrCurve> {
    let (groups, p, _) = groups(pairs)?;
    if p == 0 {
        return Err(Error::NoPositives);
    }
    let pf = p as f64;
    let mut points = Vec::with_capacity(groups.len());
    let (mut tp, mut seen) = (0u64, 0u64);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for g in &groups {
        tp += g.pos;
        seen += g.pos + g.neg;
        let recall = tp as f64 / pf;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(PrPoint {
            threshold: g.score,
            recall,
            precision,
        });
    }
    Ok(PrCurve { points, ap })
}

fn sample_pairs(samples: &[ScoredSample]) -> Vec<(f64, bool)> {
    samples.iter().map(|s| (s.score, s.label)).collect()
}

pub fn roc_curve(samples: &[ScoredSample]) -> Result<RocCurve> {
    roc_from_pairs(&mut sample_pairs(samples))
}

pub fn pr_curve(samples: &[ScoredSample]) -> Result<PrCurve> {
    pr_from_pairs(&mut sample_pairs(samples))
}

impl RocCurve {
    /// Threshold of the point maximising `tpr - fpr`; ties go to the
    /// higher threshold.
    pub fn youden_threshold(&self) -> f64 {
        let mut best = &self.points[self.points.len().min(2) - 1];
        for pt in self.points.iter().skip(1) {
            if pt.tpr - pt.fpr > best.tpr - best.fpr {
                best = pt;
            }
        }
        best.threshold
    }

    /// Subset of points such that consecutive kept points differ by at
    /// least `step` in one coordinate; endpoints are always kept.
    pub fn thinned(&self, step: f64) -> Vec<RocPoint> {
        thin(&self.points, step, |p| (p.fpr, p.tpr))
    }
}

impl PrCurve {
    pub fn thinned(&self, step: f64) -> Vec<PrPoint> {
        thin(&self.points, step, |p| (p.recall, p.precision))
    }
}

fn thin<P: Copy>(points: &[P], step: f64, xy: impl Fn(&P) -> (f64, f64)) -> Vec<P> {
    let mut out: Vec<P> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let keep = match out.last() {
            None => true,
            Some(q) => {
                let ((x0, y0), (x1, y1)) = (xy(q), xy(p));
                i + 1 == points.len() || (x1 - x0).abs() >= step || (y1 - y0).abs() >= step
            }
        };
        if keep {
            out.push(*p);
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod oracle {
    /// `P(s+ > s-) + P(s+ == s-) / 2` by enumerating all pairs.
    pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &si) in scores.iter().enumerate() {
            if !labels[i] {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] {
                    continue;
                }
                den += 1.0;
                if si > sj {
                    num += 1.0;
                } else if si == sj {
                    num += 0.5;
                }
            }
        }
        num / den
    }

    /// Average precision by counting, for each distinct score taken from
    /// high to low, everything at or above it.
    pub fn swept_ap(scores: &[f64], labels: &[bool]) -> f64 {
        let mut distinct: Vec<f64> = scores.to_vec();
        distinct.sort_by(|a, b| b.partial_cmp(a).unwrap());
        distinct.dedup();
        let total_pos = labels.iter().filter(|&&l| l).count() as f64;
        let mut prev_recall = 0.0;
        let mut ap = 0.0;
        for t in distinct {
            let at_or_above: Vec<bool> = scores
                .iter()
                .zip(labels)
                .filter(|(s, _)| **s >= t)
                .map(|(_, &l)| l)
                .collect();
            let tp = at_or_above.iter().filter(|&&l| l).count() as f64;
            let recall = tp / total_pos;
            ap += (recall - prev_recall) * tp / at_or_above.len() as f64;
            prev_recall = recall;
        }
        ap
    }
}
