//! Anomaly scoring, ranking metrics, heatmap export and test-set
//! evaluation reports.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::geometry::io::{write_ply, PlyEncoding};
use crate::geometry::{PointCloud, Vec3};
use crate::model::Model;

pub const MASK_THRESHOLD: f64 = 0.5;
const SCORE_EPS: f64 = 1e-12;
/// Fraction of the highest point scores averaged into the object score.
pub const OBJECT_TOP_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScores {
    pub point_scores: Vec<f64>,
    pub object_score: f64,
    pub mask: Vec<bool>,
}

/// L1 offset norms divided by their maximum, zeroed where the mask
/// probability is below `threshold`.
pub fn point_scores(offsets: &[Vec3], mask_probs: &[f64], threshold: f64) -> Result<AnomalyScores> {
    if offsets.len() != mask_probs.len() {
        return Err(Error::CountMismatch(format!(
            "{} offsets for {} mask probabilities",
            offsets.len(),
            mask_probs.len()
        )));
    }
    let raw: Vec<f64> = offsets.iter().map(|o| o.abs().sum()).collect();
    let max = raw.iter().copied().fold(0.0, f64::max);
    let mask: Vec<bool> = mask_probs.iter().map(|&p| p >= threshold).collect();
    let scores: Vec<f64> = raw
        .iter()
        .zip(&mask)
        .map(|(&r, &m)| if m && max > 0.0 { r / (max + SCORE_EPS) } else { 0.0 })
        .collect();
    Ok(AnomalyScores {
        object_score: object_score(&scores),
        point_scores: scores,
        mask,
    })
}

/// Mean of the top ⌈1% of N⌉ scores.
pub fn object_score(scores: &[f64]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let k = ((scores.len() as f64 * OBJECT_TOP_FRACTION).ceil() as usize).max(1);
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted[..k].iter().sum::<f64>() / k as f64
}

fn class_counts(labels: &[bool]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((pos, neg))
}

fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Mann–Whitney estimate of P(score⁺ > score⁻) with half credit for ties.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::CountMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let (pos, neg) = class_counts(labels)?;
    let order = descending(scores);
    // twice the U statistic stays an exact integer
    let mut twice_u: u128 = 0;
    let mut neg_below = neg as u128;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut n) = (0u128, 0u128);
        while j < order.len() && scores[order[j]].total_cmp(&scores[order[i]]) == Ordering::Equal {
            if labels[order[j]] {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        neg_below -= n;
        twice_u += p * (2 * neg_below + n);
        i = j;
    }
    Ok(twice_u as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Average precision: Σ (Rₖ − Rₖ₋₁)·Pₖ over distinct score thresholds.
pub fn auc_pr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::CountMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let (pos, _) = class_counts(labels)?;
    let order = descending(scores);
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut gained = 0;
        while j < order.len() && scores[order[j]].total_cmp(&scores[order[i]]) == Ordering::Equal {
            gained += labels[order[j]] as usize;
            j += 1;
        }
        tp += gained;
        seen = j;
        if gained > 0 {
            ap += (gained as f64 / pos as f64) * (tp as f64 / seen as f64);
        }
        i = j;
    }
    debug_assert_eq!(seen, scores.len());
    Ok(ap)
}

/// Blue (score 0) to red (score 1) ramp; 0.5 maps to (128, 0, 128).
pub fn heat_color(score: f64) -> [u8; 3] {
    let s = if score.is_finite() { score.clamp(0.0, 1.0) } else { 0.0 };
    [(255.0 * s).round() as u8, 0, (255.0 * (1.0 - s)).round() as u8]
}

/// Binary little-endian PLY with per-vertex heat colors.
pub fn export_heatmap(cloud: &PointCloud, scores: &[f64], path: &Path) -> Result<()> {
    if scores.len() != cloud.len() {
        return Err(Error::CountMismatch(format!(
            "{} scores for {} points",
            scores.len(),
            cloud.len()
        )));
    }
    let colors: Vec<[u8; 3]> = scores.iter().map(|&s| heat_color(s)).collect();
    write_ply(path, cloud, Some(&colors), PlyEncoding::BinaryLittleEndian)
}

/// A labeled test cloud.
#[derive(Debug, Clone)]
pub struct TestSample {
    pub class: String,
    pub name: String,
    pub cloud: PointCloud,
    /// Per-point anomaly labels.
    pub labels: Vec<bool>,
}

impl TestSample {
    pub fn is_anomalous(&self) -> bool {
        self.labels.iter().any(|&l| l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub auc_roc: f64,
    pub auc_pr: f64,
}

impl LevelMetrics {
    fn compute(scores: &[f64], labels: &[bool]) -> Result<Self> {
        Ok(Self {
            auc_roc: auc_roc(scores, labels)?,
            auc_pr: auc_pr(scores, labels)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub samples: usize,
    pub anomalous: usize,
    pub point: LevelMetrics,
    pub object: LevelMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    /// Unweighted means over classes.
    pub point: LevelMetrics,
    pub object: LevelMetrics,
    pub config_hash: String,
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "class,samples,anomalous,point_auc_roc,point_auc_pr,object_auc_roc,object_auc_pr\n",
        );
        let row = |name: &str, s: usize, a: usize, p: &LevelMetrics, o: &LevelMetrics| {
            format!(
                "{name},{s},{a},{:.6},{:.6},{:.6},{:.6}\n",
                p.auc_roc, p.auc_pr, o.auc_roc, o.auc_pr
            )
        };
        for c in &self.classes {
            out += &row(&c.class, c.samples, c.anomalous, &c.point, &c.object);
        }
        let samples = self.classes.iter().map(|c| c.samples).sum();
        let anomalous = self.classes.iter().map(|c| c.anomalous).sum();
        out += &row("mean", samples, anomalous, &self.point, &self.object);
        out
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(format!("{stem}.csv"));
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join(format!("{stem}.json"));
        fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json, e))
    }
}

/// Scores of every sample, grouped by class in first-seen order.
#[derive(Debug, Clone)]
pub struct ScoredSample {
    pub class: String,
    pub name: String,
    pub scores: AnomalyScores,
    pub labels: Vec<bool>,
}

pub fn score_sample(model: &Model, codebook: &Codebook, cloud: &PointCloud) -> Result<AnomalyScores> {
    let prediction = model.predict(cloud, codebook)?;
    point_scores(&prediction.offsets, &prediction.mask_probs, MASK_THRESHOLD)
}

/// Point- and object-level metrics from already scored samples.
pub fn summarize(scored: &[ScoredSample], config_hash: u64) -> Result<MetricsReport> {
    if scored.is_empty() {
        return Err(Error::MissingLabels("empty test set".into()));
    }
    let mut names: Vec<&str> = Vec::new();
    for s in scored {
        if !names.contains(&s.class.as_str()) {
            names.push(&s.class);
        }
    }
    let mut classes = Vec::with_capacity(names.len());
    for name in names {
        let members: Vec<&ScoredSample> = scored.iter().filter(|s| s.class == name).collect();
        let point_scores: Vec<f64> = members
            .iter()
            .flat_map(|s| s.scores.point_scores.iter().copied())
            .collect();
        let point_labels: Vec<bool> = members.iter().flat_map(|s| s.labels.iter().copied()).collect();
        let object_scores: Vec<f64> = members.iter().map(|s| s.scores.object_score).collect();
        let object_labels: Vec<bool> = members.iter().map(|s| s.labels.iter().any(|&l| l)).collect();
        let level = |scores: &[f64], labels: &[bool], what: &str| {
            LevelMetrics::compute(scores, labels).map_err(|e| match e {
                Error::SingleClass => {
                    Error::MissingLabels(format!("class {name} has one {what}-level label"))
                }
                other => other,
            })
        };
        classes.push(ClassMetrics {
            class: name.to_string(),
            samples: members.len(),
            anomalous: object_labels.iter().filter(|&&l| l).count(),
            point: level(&point_scores, &point_labels, "point")?,
            object: level(&object_scores, &object_labels, "object")?,
        });
    }
    let mean = |f: &dyn Fn(&ClassMetrics) -> f64| {
        classes.iter().map(f).sum::<f64>() / classes.len() as f64
    };
    Ok(MetricsReport {
        point: LevelMetrics {
            auc_roc: mean(&|c| c.point.auc_roc),
            auc_pr: mean(&|c| c.point.auc_pr),
        },
        object: LevelMetrics {
            auc_roc: mean(&|c| c.object.auc_roc),
            auc_pr: mean(&|c| c.object.auc_pr),
        },
        classes,
        config_hash: format!("{config_hash:016x}"),
    })
}

/// Score every test sample with its class codebook and summarize.
pub fn evaluate(
    model: &Model,
    codebooks: &[(String, Codebook)],
    test: &[TestSample],
) -> Result<(MetricsReport, Vec<ScoredSample>)> {
    if test.is_empty() {
        return Err(Error::MissingLabels("empty test set".into()));
    }
    let mut scored = Vec::with_capacity(test.len());
    for sample in test {
        if sample.labels.len() != sample.cloud.len() {
            return Err(Error::MissingLabels(format!(
                "{}: {} labels for {} points",
                sample.name,
                sample.labels.len(),
                sample.cloud.len()
            )));
        }
        let book = codebooks
            .iter()
            .find(|(c, _)| *c == sample.class)
            .map(|(_, b)| b)
            .ok_or_else(|| Error::MissingLabels(format!("no codebook for class {}", sample.class)))?;
        scored.push(ScoredSample {
            class: sample.class.clone(),
            name: sample.name.clone(),
            scores: score_sample(model, book, &sample.cloud)?,
            labels: sample.labels.clone(),
        });
    }
    Ok((summarize(&scored, model.config.hash())?, scored))
}
