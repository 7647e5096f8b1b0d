//! Threshold-free and thresholded detection metrics over `(score, label)`
//! pairs, label 1 meaning malicious.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn counts(scores: &[(f64, u8)]) -> (usize, usize) {
    let p = scores.iter().filter(|s| s.1 == 1).count();
    (p, scores.len() - p)
}

/// Indices sorted by descending score.
fn descending(scores: &[(f64, u8)]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].0.total_cmp(&scores[a].0));
    idx
}

/// Cumulative (tp, fp) after each block of tied scores, highest first.
fn sweep(scores: &[(f64, u8)]) -> Vec<(f64, usize, usize)> {
    let idx = descending(scores);
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut j = 0;
    while j < idx.len() {
        let s = scores[idx[j]].0;
        while j < idx.len() && scores[idx[j]].0 == s {
            if scores[idx[j]].1 == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        out.push((s, tp, fp));
    }
    out
}

/// Mann-Whitney statistic: fraction of (malicious, benign) pairs ordered
/// correctly, ties counting one half.
pub fn roc_auc(scores: &[(f64, u8)]) -> Result<f64> {
    let (p, n) = counts(scores);
    if p == 0 || n == 0 {
        return Err(Error::OneClassOnly);
    }
    // twice the number of correctly ordered pairs, accumulated in integers
    let mut twice_wins: u64 = 0;
    let mut fp_below_block = 0u64;
    let blocks = sweep(scores);
    // walk ascending so every positive sees the negatives strictly below it
    let mut prev = (0usize, 0usize);
    let mut per_block = Vec::with_capacity(blocks.len());
    for &(_, tp, fp) in &blocks {
        per_block.push((tp - prev.0, fp - prev.1));
        prev = (tp, fp);
    }
    for &(bp, bn) in per_block.iter().rev() {
        twice_wins += 2 * bp as u64 * fp_below_block + bp as u64 * bn as u64;
        fp_below_block += bn as u64;
    }
    Ok(twice_wins as f64 / (2.0 * p as f64 * n as f64))
}

/// Σ (Rₙ − Rₙ₋₁)·Pₙ over distinct thresholds in descending order.
pub fn average_precision(scores: &[(f64, u8)]) -> Result<f64> {
    let (p, _) = counts(scores);
    if p == 0 {
        return Err(Error::NoPositives);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (_, tp, fp) in sweep(scores) {
        let recall = tp as f64 / p as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Operating points at every distinct score, threshold descending; a score
/// `≥ threshold` counts as an alert. Rates of an empty class are 0.
pub fn curve(scores: &[(f64, u8)]) -> Vec<CurvePoint> {
    let (p, n) = counts(scores);
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    sweep(scores)
        .into_iter()
        .map(|(threshold, tp, fp)| CurvePoint {
            threshold,
            tpr: ratio(tp, p),
            fpr: ratio(fp, n),
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, p),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub points: Vec<CurvePoint>,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
    /// `None` without positives.
    pub ap: Option<f64>,
}

pub fn curve_report(scores: &[(f64, u8)]) -> CurveReport {
    CurveReport {
        points: curve(scores),
        auc: roc_auc(scores).ok(),
        ap: average_precision(scores).ok(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRates {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub tpr: f64,
    pub fpr: f64,
    pub precision: f64,
    /// Set when tpr was reported as 0 for lack of positives.
    pub no_positives: bool,
    /// Set when fpr was reported as 0 for lack of negatives.
    pub no_negatives: bool,
    /// Set when precision was reported as 0 because nothing was flagged.
    pub no_alerts: bool,
}

/// Confusion counts when `score > threshold` raises an alert.
pub fn rate_at_threshold(scores: &[(f64, u8)], threshold: f64) -> ThresholdRates {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for &(s, l) in scores {
        match (s > threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    ThresholdRates {
        threshold,
        tp,
        fp,
        tn,
        fn_,
        tpr: ratio(tp, tp + fn_),
        fpr: ratio(fp, fp + tn),
        precision: ratio(tp, tp + fp),
        no_positives: tp + fn_ == 0,
        no_negatives: fp + tn == 0,
        no_alerts: tp + fp == 0,
    }
}
