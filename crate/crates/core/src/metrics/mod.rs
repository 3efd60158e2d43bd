//! Classification evaluation: rank-based AUROC, ROC points, F1-maximizing
//! threshold selection, precision/recall/F1, per-split evaluation and
//! cross-split aggregation.
//!
//! Every thresholded decision uses `score >= threshold`.

mod report;

pub use report::{
    aggregate, evaluate_split, format_auroc_table, format_prf_table, select_thresholds, ExperimentReport,
    MetricSummary, NoFindingRule, Prf1, SplitMetrics, ThresholdSet,
};

use crate::error::{Error, Result};

fn check_inputs(scores: &[f64], labels: &[bool], what: &str) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::arg(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::arg(format!("non-finite score {s}")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric {
            label: what.to_string(),
            message: format!("AUROC needs both classes ({pos} positive, {neg} negative)"),
        });
    }
    Ok((pos, neg))
}

/// Indices sorted by descending score, grouped into runs of equal score.
fn descending_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in idx {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// `(wins + ties / 2) / (n_pos n_neg)` over all positive-negative pairs,
/// computed from a tie-grouped sweep.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    auroc_for(scores, labels, "scores")
}

pub(crate) fn auroc_for(scores: &[f64], labels: &[bool], what: &str) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels, what)?;
    // Ascending sweep: each positive beats every negative seen in lower
    // groups and ties with negatives in its own group. Doubled to stay
    // integral.
    let mut doubled: u128 = 0;
    let mut neg_below: u128 = 0;
    for group in descending_groups(scores).iter().rev() {
        let p = group.iter().filter(|&&i| labels[i]).count() as u128;
        let n = group.len() as u128 - p;
        doubled += p * (2 * neg_below + n);
        neg_below += n;
    }
    Ok((doubled as f64 / 2.0) / (pos as f64 * neg as f64))
}

/// Unweighted mean.
pub fn macro_average(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Macro AUROC over the five abnormality AUROCs.
pub fn macro_auroc(per_label: &[f64; 5]) -> f64 {
    macro_average(per_label)
}

/// ROC points from `(0,0)` to `(1,1)`, one per distinct score threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
}

impl RocCurve {
    /// Trapezoidal area under the points.
    pub fn area(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for (x, y) in &self.points {
            out.push_str(&format!("{x},{y}\n"));
        }
        out
    }
}

pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    let (pos, neg) = check_inputs(scores, labels, "scores")?;
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for group in descending_groups(scores) {
        for i in group {
            if labels[i] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(RocCurve { points })
}

/// Precision, recall and F1 from confusion counts; any `0/0` is 0.
pub fn prf1_from_counts(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    (precision, recall, f1)
}

pub fn prf1(predictions: &[bool], labels: &[bool]) -> Result<(f64, f64, f64)> {
    if predictions.len() != labels.len() {
        return Err(Error::arg(format!("{} predictions but {} labels", predictions.len(), labels.len())));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    Ok(prf1_from_counts(tp, fp, fn_))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Sweeps every distinct observed score as a threshold and keeps the one
/// with the highest F1, preferring the larger threshold on ties.
pub fn select_threshold_f1(scores: &[f64], labels: &[bool]) -> Result<ThresholdChoice> {
    select_threshold_for(scores, labels, "scores")
}

pub(crate) fn select_threshold_for(scores: &[f64], labels: &[bool], what: &str) -> Result<ThresholdChoice> {
    if scores.len() != labels.len() {
        return Err(Error::arg(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::arg(format!("non-finite score {s}")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return Err(Error::UndefinedMetric {
            label: what.to_string(),
            message: "threshold selection needs at least one positive".into(),
        });
    }
    let mut best: Option<ThresholdChoice> = None;
    let (mut tp, mut fp) = (0, 0);
    // descending thresholds, so a later candidate only wins with a strictly
    // larger F1
    for group in descending_groups(scores) {
        for &i in &group {
            if labels[i] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let (precision, recall, f1) = prf1_from_counts(tp, fp, pos - tp);
        if best.is_none_or(|b| f1 > b.f1) {
            best = Some(ThresholdChoice { threshold: scores[group[0]], precision, recall, f1 });
        }
    }
    Ok(best.expect("at least one candidate"))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive pair counting.
    pub(crate) fn brute_auroc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut doubled = 0u64;
        let (mut p, mut n) = (0u64, 0u64);
        for &l in labels {
            if l {
                p += 1
            } else {
                n += 1
            }
        }
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    doubled += if scores[i] > scores[j] {
                        2
                    } else if scores[i] == scores[j] {
                        1
                    } else {
                        0
                    };
                }
            }
        }
        (doubled as f64 / 2.0) / (p as f64 * n as f64)
    }

    /// Tries every observed score as a threshold.
    pub(crate) fn brute_threshold(scores: &[f64], labels: &[bool]) -> (f64, f64) {
        let mut cands: Vec<f64> = scores.to_vec();
        cands.sort_by(|a, b| b.total_cmp(a));
        cands.dedup();
        let mut best = (f64::NAN, -1.0);
        for t in cands {
            let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
            for (s, &l) in scores.iter().zip(labels) {
                let p = *s >= t;
                if p && l {
                    tp += 1
                } else if p {
                    fp += 1
                } else if l {
                    fn_ += 1
                }
            }
            let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            if f1 > best.1 {
                best = (t, f1);
            }
        }
        best
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.9, 0.8, 0.7, 0.1], &[true, false, true, false]).unwrap(), 0.75);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric { .. })));
        assert!(auroc(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn macro_anchor_values() {
        let densenet = [80.1, 71.8, 70.6, 90.9, 78.1].map(|v| v / 100.0);
        assert!((macro_auroc(&densenet) * 100.0 - 78.3).abs() < 0.05);
        let resnet = [81.1, 72.4, 71.1, 91.6, 80.9].map(|v| v / 100.0);
        assert!((macro_auroc(&resnet) - 0.7942).abs() < 1e-12);
        assert!((macro_auroc(&[0.37; 5]) - 0.37).abs() < 1e-15);
    }

    #[test]
    fn roc_examples() {
        let r = roc_points(&[0.9, 0.1], &[true, false]).unwrap();
        assert_eq!(r.points, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        let r = roc_points(&[0.3; 3], &[true, false, false]).unwrap();
        assert_eq!(r.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(r.area(), 0.5);
    }

    #[test]
    fn prf1_examples() {
        assert_eq!(prf1(&[true, false, true], &[true, false, true]).unwrap(), (1.0, 1.0, 1.0));
        assert_eq!(prf1(&[false, false], &[true, false]).unwrap(), (0.0, 0.0, 0.0));
        let (p, r, f) = prf1_from_counts(2, 1, 0);
        assert_eq!((p, r), (2.0 / 3.0, 1.0));
        assert!((f - 0.8).abs() < 1e-15);
    }

    #[test]
    fn threshold_examples() {
        let t = select_threshold_f1(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!((t.threshold, t.f1), (0.8, 1.0));
        let t = select_threshold_f1(&[0.4, 0.7, 0.2], &[true; 3]).unwrap();
        assert_eq!((t.threshold, t.recall, t.f1), (0.2, 1.0, 1.0));
        let t = select_threshold_f1(&[0.9, 0.6, 0.4, 0.2], &[true, false, true, false]).unwrap();
        assert_eq!(t.threshold, 0.4);
        assert_eq!(t.precision, 2.0 / 3.0);
        assert!((t.f1 - 0.8).abs() < 1e-15);
        assert!(select_threshold_f1(&[0.2, 0.3], &[false, false]).is_err());
    }

    proptest! {
        #[test]
        fn auroc_matches_pair_counting(data in prop::collection::vec((0u8..6, any::<bool>()), 2..30)) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64 / 5.0).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
                let a = auroc(&scores, &labels).unwrap();
                prop_assert_eq!(a, brute_auroc(&scores, &labels));
                let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
                prop_assert!((a + auroc(&scores, &flipped).unwrap() - 1.0).abs() < 1e-12);
                let cubed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
                prop_assert_eq!(a, auroc(&cubed, &labels).unwrap());
                prop_assert!((roc_points(&scores, &labels).unwrap().area() - a).abs() < 1e-12);
            }
        }

        #[test]
        fn threshold_matches_sweep(data in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..50)) {
            let scores: Vec<f64> = data.iter().map(|d| (d.0 * 20.0).round() / 20.0).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            if labels.iter().any(|&l| l) {
                let t = select_threshold_f1(&scores, &labels).unwrap();
                prop_assert_eq!((t.threshold, t.f1), brute_threshold(&scores, &labels));
            }
        }
    }
}
