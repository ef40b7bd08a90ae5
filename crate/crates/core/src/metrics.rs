//! Calibration and failure-prediction metrics over confidence records.
//!
//! All functions are pure. Binning uses `bins` equal-width, right-closed
//! intervals over `[0, 1]`: bin `m` (1-based) covers `((m-1)/bins, m/bins]`
//! and a confidence of exactly `0` lands in bin 1.
//!
//! Ranking metrics break score ties by input order (stable sort, descending
//! score). AUROC gives half credit to tied pairs, so it is order independent;
//! average precision is not, and the tie rule is observable in its output.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use thiserror::Error;

/// Default number of equal-width ECE bins.
pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("metric requires at least one record")]
    EmptyInput,
    #[error("bin count must be at least 1")]
    ZeroBins,
    #[error("confidence {0} outside [0, 1]")]
    ConfidenceOutOfRange(f64),
}

/// Which elicitation point a confidence belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Perception,
    Action,
}

impl Stage {
    pub const ALL: [Stage; 2] = [Stage::Perception, Stage::Action];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Perception => "perception",
            Stage::Action => "action",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.as_str())
    }
}

/// One elicited confidence paired with its correctness label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRecord")]
pub struct ConfidenceRecord {
    confidence: f64,
    pub correct: bool,
    pub stage: Stage,
    pub task_id: u32,
    pub episode_id: u32,
    pub step: u32,
}

#[derive(Deserialize)]
struct RawRecord {
    confidence: f64,
    correct: bool,
    stage: Stage,
    #[serde(default = "one")]
    task_id: u32,
    #[serde(default)]
    episode_id: u32,
    #[serde(default)]
    step: u32,
}

fn one() -> u32 {
    1
}

impl TryFrom<RawRecord> for ConfidenceRecord {
    type Error = MetricsError;

    fn try_from(raw: RawRecord) -> Result<Self, Self::Error> {
        let mut rec = ConfidenceRecord::new(raw.confidence, raw.correct, raw.stage)?;
        rec.task_id = raw.task_id;
        rec.episode_id = raw.episode_id;
        rec.step = raw.step;
        Ok(rec)
    }
}

impl ConfidenceRecord {
    /// Builds a record, rejecting confidences outside `[0, 1]` (and NaN).
    pub fn new(confidence: f64, correct: bool, stage: Stage) -> Result<Self, MetricsError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(MetricsError::ConfidenceOutOfRange(confidence));
        }
        Ok(ConfidenceRecord {
            confidence,
            correct,
            stage,
            task_id: 1,
            episode_id: 0,
            step: 0,
        })
    }

    pub fn with_origin(mut self, task_id: u32, episode_id: u32, step: u32) -> Self {
        self.task_id = task_id;
        self.episode_id = episode_id;
        self.step = step;
        self
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    /// The record with its label negated and its confidence mirrored to `1 - c`.
    pub fn flipped(&self) -> Self {
        ConfidenceRecord {
            confidence: 1.0 - self.confidence,
            correct: !self.correct,
            ..self.clone()
        }
    }
}

/// Per-bin reliability summary. Empty bins carry no mean or accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub bin_index: usize,
    pub count: usize,
    pub mean_confidence: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ece: f64,
    pub auroc: Option<f64>,
    pub auprc_pos: Option<f64>,
    pub auprc_neg: Option<f64>,
    pub n: usize,
}

impl MetricReport {
    pub fn compute(records: &[ConfidenceRecord], bins: usize) -> Result<Self, MetricsError> {
        Ok(MetricReport {
            ece: ece(records, bins)?,
            auroc: auroc(records),
            auprc_pos: auprc_positive(records),
            auprc_neg: auprc_negative(records),
            n: records.len(),
        })
    }
}

/// 1-based bin for `confidence` under right-closed equal-width binning.
pub fn bin_index(confidence: f64, bins: usize) -> usize {
    debug_assert!(bins >= 1);
    let b = bins as f64;
    let mut m = (confidence * b).ceil() as usize;
    // The product can land one ulp off a boundary; settle against the exact
    // edges m/bins used in the interval definition.
    while m > 1 && confidence <= (m - 1) as f64 / b {
        m -= 1;
    }
    while m < bins && confidence > m as f64 / b {
        m += 1;
    }
    m.clamp(1, bins)
}

pub fn reliability_bins(records: &[ConfidenceRecord], bins: usize) -> Result<Vec<BinSummary>, MetricsError> {
    if bins == 0 {
        return Err(MetricsError::ZeroBins);
    }
    let mut sums = vec![(0usize, 0.0f64, 0usize); bins];
    for r in records {
        let slot = &mut sums[bin_index(r.confidence, bins) - 1];
        slot.0 += 1;
        slot.1 += r.confidence;
        slot.2 += usize::from(r.correct);
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(i, (count, conf_sum, hits))| BinSummary {
            bin_index: i + 1,
            count,
            mean_confidence: (count > 0).then(|| conf_sum / count as f64),
            accuracy: (count > 0).then(|| hits as f64 / count as f64),
        })
        .collect())
}

/// ECE recomputed from reliability summaries.
pub fn ece_from_bins(summaries: &[BinSummary]) -> f64 {
    let n: usize = summaries.iter().map(|b| b.count).sum();
    if n == 0 {
        return 0.0;
    }
    summaries
        .iter()
        .filter_map(|b| match (b.mean_confidence, b.accuracy) {
            (Some(c), Some(a)) => Some(b.count as f64 / n as f64 * (a - c).abs()),
            _ => None,
        })
        .sum()
}

/// Expected calibration error with `bins` equal-width bins.
pub fn ece(records: &[ConfidenceRecord], bins: usize) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let summaries = reliability_bins(records, bins)?;
    Ok(ece_from_bins(&summaries).clamp(0.0, 1.0))
}

/// Mann-Whitney AUROC with confidence as the score for the `correct` class.
///
/// Returns `None` unless both classes are present.
pub fn auroc(records: &[ConfidenceRecord]) -> Option<f64> {
    let n_pos = records.iter().filter(|r| r.correct).count();
    let n_neg = records.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut scored: Vec<(f64, bool)> = records.iter().map(|r| (r.confidence, r.correct)).collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));

    // Midrank sum of the positive class, accumulated as 2*rank to stay exact.
    let mut twice_rank_sum = 0u128;
    let mut i = 0;
    while i < scored.len() {
        let mut j = i;
        while j < scored.len() && scored[j].0 == scored[i].0 {
            j += 1;
        }
        // ranks i+1..=j share midrank (i+1+j)/2
        let twice_mid = (i + 1 + j) as u128;
        let pos_in_group = scored[i..j].iter().filter(|s| s.1).count() as u128;
        twice_rank_sum += twice_mid * pos_in_group;
        i = j;
    }
    let n_pos = n_pos as u128;
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Some(twice_u as f64 / (2 * n_pos * n_neg as u128) as f64)
}

/// Non-interpolated average precision of `positives` ranked by `scores`.
fn average_precision(scores: &[f64], positives: &[bool]) -> Option<f64> {
    let n_pos = positives.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable: equal scores keep input order
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &idx) in order.iter().enumerate() {
        if positives[idx] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / n_pos as f64)
}

/// Average precision for retrieving correct records by confidence.
pub fn auprc_positive(records: &[ConfidenceRecord]) -> Option<f64> {
    let scores: Vec<f64> = records.iter().map(|r| r.confidence).collect();
    let labels: Vec<bool> = records.iter().map(|r| r.correct).collect();
    average_precision(&scores, &labels)
}

/// Average precision for retrieving incorrect records by `1 - confidence`.
pub fn auprc_negative(records: &[ConfidenceRecord]) -> Option<f64> {
    let scores: Vec<f64> = records.iter().map(|r| 1.0 - r.confidence).collect();
    let labels: Vec<bool> = records.iter().map(|r| !r.correct).collect();
    average_precision(&scores, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(c: f64, ok: bool) -> ConfidenceRecord {
        ConfidenceRecord::new(c, ok, Stage::Perception).unwrap()
    }

    #[test]
    fn rejects_out_of_range_confidence() {
        assert!(ConfidenceRecord::new(1.01, true, Stage::Action).is_err());
        assert!(ConfidenceRecord::new(-0.1, true, Stage::Action).is_err());
        assert!(ConfidenceRecord::new(f64::NAN, true, Stage::Action).is_err());
        let bad: Result<ConfidenceRecord, _> =
            serde_json::from_str(r#"{"confidence":2.0,"correct":true,"stage":"action"}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn ece_examples() {
        assert_eq!(ece(&[rec(1.0, true)], 10).unwrap(), 0.0);
        let v = ece(&[rec(0.8, true), rec(0.8, false)], 10).unwrap();
        assert!((v - 0.3).abs() < 1e-12);
        assert_eq!(ece(&[], 10), Err(MetricsError::EmptyInput));
        assert_eq!(ece(&[rec(0.5, true)], 0), Err(MetricsError::ZeroBins));
    }

    #[test]
    fn bin_edges_are_right_closed() {
        assert_eq!(bin_index(0.0, 10), 1);
        assert_eq!(bin_index(0.1, 10), 1);
        assert_eq!(bin_index(0.1000001, 10), 2);
        assert_eq!(bin_index(0.3, 10), 3);
        assert_eq!(bin_index(0.7, 10), 7);
        assert_eq!(bin_index(1.0, 10), 10);
        assert_eq!(bin_index(0.42, 1), 1);
        for k in 1..=10 {
            assert_eq!(bin_index(k as f64 / 10.0, 10), k);
        }
    }

    #[test]
    fn reliability_examples() {
        let b = reliability_bins(&[rec(0.05, false)], 10).unwrap();
        assert_eq!(b[0].count, 1);
        assert_eq!(b[0].mean_confidence, Some(0.05));
        assert_eq!(b[0].accuracy, Some(0.0));
        assert!(b[1..].iter().all(|s| s.count == 0 && s.mean_confidence.is_none() && s.accuracy.is_none()));
        let b = reliability_bins(&[rec(0.0, true)], 10).unwrap();
        assert_eq!(b[0].count, 1);
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[rec(0.9, true), rec(0.1, false)]), Some(1.0));
        assert_eq!(auroc(&[rec(0.5, true), rec(0.5, false)]), Some(0.5));
        let r = [rec(0.9, true), rec(0.7, false), rec(0.6, true), rec(0.2, false)];
        assert_eq!(auroc(&r), Some(0.75));
        assert_eq!(auroc(&[rec(0.9, true), rec(0.2, true)]), None);
    }

    #[test]
    fn auprc_examples() {
        assert_eq!(auprc_positive(&[rec(0.9, true), rec(0.1, false)]), Some(1.0));
        assert_eq!(auprc_positive(&[rec(0.1, true), rec(0.9, false)]), Some(0.5));
        assert_eq!(auprc_negative(&[rec(0.9, true), rec(0.1, false)]), Some(1.0));
        // tie: correct record listed first keeps rank 1, the incorrect one sits at rank 2
        assert_eq!(auprc_negative(&[rec(0.5, true), rec(0.5, false)]), Some(0.5));
        assert_eq!(auprc_negative(&[rec(0.5, false), rec(0.5, true)]), Some(1.0));
        assert_eq!(auprc_positive(&[rec(0.3, false)]), None);
        assert_eq!(auprc_negative(&[rec(0.3, true)]), None);
    }

    #[test]
    fn report_marks_missing_auroc() {
        let r = MetricReport::compute(&[rec(0.7, true)], 10).unwrap();
        assert_eq!(r.auroc, None);
        assert_eq!(r.auprc_neg, None);
        assert_eq!(r.n, 1);
    }
}
