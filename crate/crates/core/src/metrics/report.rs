use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{auroc_for, macro_average, prf1, select_threshold_for};
use crate::error::{Error, Result};
use crate::labels::{Label, LabelVector, ABNORMALITIES, NUM_ABNORMALITIES};
use crate::model::{no_finding_binary, no_finding_score, ScoreVector};

/// Per-label decision thresholds chosen on validation data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub abnormalities: [f64; NUM_ABNORMALITIES],
    /// Threshold on the continuous No Finding score.
    pub no_finding: f64,
}

impl ThresholdSet {
    pub fn uniform(t: f64) -> Self {
        ThresholdSet { abnormalities: [t; NUM_ABNORMALITIES], no_finding: t }
    }

    pub fn predict(&self, s: &ScoreVector) -> [bool; NUM_ABNORMALITIES] {
        std::array::from_fn(|k| s.0[k] >= self.abnormalities[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<(f64, f64, f64)> for Prf1 {
    fn from((precision, recall, f1): (f64, f64, f64)) -> Self {
        Prf1 { precision, recall, f1 }
    }
}

/// How a No Finding decision was derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoFindingRule {
    /// Normal iff no abnormality clears its threshold.
    Complement,
    /// Normal iff `1 - max_k p_k` clears the validation-selected threshold.
    ScoreThreshold,
}

impl NoFindingRule {
    pub fn tag(self) -> &'static str {
        match self {
            NoFindingRule::Complement => "complement",
            NoFindingRule::ScoreThreshold => "score-threshold",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub auroc: [f64; NUM_ABNORMALITIES],
    pub macro_auroc: f64,
    pub prf1: [Prf1; NUM_ABNORMALITIES],
    pub macro_prf1: Prf1,
    pub no_finding_auroc: f64,
    pub no_finding_complement: Prf1,
    pub no_finding_score_threshold: Prf1,
    pub thresholds: ThresholdSet,
    pub n_images: usize,
}

impl SplitMetrics {
    /// Every scalar metric with a stable display name, in report order.
    pub fn named_values(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for l in ABNORMALITIES {
            out.push((format!("AUROC {}", l.name()), self.auroc[l.index()]));
        }
        out.push(("Macro AUROC".into(), self.macro_auroc));
        out.push(("No Finding AUROC".into(), self.no_finding_auroc));
        for l in ABNORMALITIES {
            let m = self.prf1[l.index()];
            out.push((format!("P {}", l.name()), m.precision));
            out.push((format!("R {}", l.name()), m.recall));
            out.push((format!("F1 {}", l.name()), m.f1));
        }
        out.push(("Macro P".into(), self.macro_prf1.precision));
        out.push(("Macro R".into(), self.macro_prf1.recall));
        out.push(("Macro F1".into(), self.macro_prf1.f1));
        for (rule, m) in [
            (NoFindingRule::Complement, self.no_finding_complement),
            (NoFindingRule::ScoreThreshold, self.no_finding_score_threshold),
        ] {
            out.push((format!("No Finding P ({})", rule.tag()), m.precision));
            out.push((format!("No Finding R ({})", rule.tag()), m.recall));
            out.push((format!("No Finding F1 ({})", rule.tag()), m.f1));
        }
        out
    }
}

fn check_lengths(scores: &[ScoreVector], labels: &[LabelVector]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::arg(format!("{} score vectors but {} label vectors", scores.len(), labels.len())));
    }
    Ok(())
}

/// F1-maximizing threshold per abnormality, and for the No Finding score.
pub fn select_thresholds(scores: &[ScoreVector], labels: &[LabelVector]) -> Result<ThresholdSet> {
    check_lengths(scores, labels)?;
    let mut abnormalities = [0.0; NUM_ABNORMALITIES];
    for l in ABNORMALITIES {
        let s: Vec<f64> = scores.iter().map(|v| v.0[l.index()]).collect();
        let y: Vec<bool> = labels.iter().map(|v| v.get(l)).collect();
        abnormalities[l.index()] = select_threshold_for(&s, &y, l.name())?.threshold;
    }
    let nf: Vec<f64> = scores.iter().map(no_finding_score).collect();
    let y: Vec<bool> = labels.iter().map(LabelVector::no_finding).collect();
    let no_finding = select_threshold_for(&nf, &y, Label::NoFinding.name())?.threshold;
    Ok(ThresholdSet { abnormalities, no_finding })
}

/// Evaluates one test partition with thresholds fixed beforehand.
pub fn evaluate_split(
    scores: &[ScoreVector],
    labels: &[LabelVector],
    thresholds: &ThresholdSet,
) -> Result<SplitMetrics> {
    check_lengths(scores, labels)?;
    let predicted: Vec<[bool; NUM_ABNORMALITIES]> = scores.iter().map(|s| thresholds.predict(s)).collect();

    let mut auroc = [0.0; NUM_ABNORMALITIES];
    let mut per_label = [Prf1::default(); NUM_ABNORMALITIES];
    for l in ABNORMALITIES {
        let k = l.index();
        let s: Vec<f64> = scores.iter().map(|v| v.0[k]).collect();
        let y: Vec<bool> = labels.iter().map(|v| v.get(l)).collect();
        auroc[k] = auroc_for(&s, &y, l.name())?;
        let p: Vec<bool> = predicted.iter().map(|p| p[k]).collect();
        per_label[k] = prf1(&p, &y)?.into();
    }
    let macro_prf1 = Prf1 {
        precision: macro_average(&per_label.map(|m| m.precision)),
        recall: macro_average(&per_label.map(|m| m.recall)),
        f1: macro_average(&per_label.map(|m| m.f1)),
    };

    let nf_scores: Vec<f64> = scores.iter().map(no_finding_score).collect();
    let nf_labels: Vec<bool> = labels.iter().map(LabelVector::no_finding).collect();
    let no_finding_auroc = auroc_for(&nf_scores, &nf_labels, Label::NoFinding.name())?;
    let complement: Vec<bool> = predicted.iter().map(no_finding_binary).collect();
    let by_score: Vec<bool> = nf_scores.iter().map(|&s| s >= thresholds.no_finding).collect();

    Ok(SplitMetrics {
        auroc,
        macro_auroc: macro_average(&auroc),
        prf1: per_label,
        macro_prf1,
        no_finding_auroc,
        no_finding_complement: prf1(&complement, &nf_labels)?.into(),
        no_finding_score_threshold: prf1(&by_score, &nf_labels)?.into(),
        thresholds: *thresholds,
        n_images: scores.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub name: String,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; absent with a single split.
    pub std: Option<f64>,
}

impl MetricSummary {
    fn from_values(name: String, values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std =
            (values.len() >= 2).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        MetricSummary { name, values, mean, std }
    }

    fn cell(&self, scale: f64, decimals: usize) -> String {
        match self.std {
            Some(sd) => format!("{:.*} ± {:.*}", decimals, self.mean * scale, decimals, sd * scale),
            None => format!("{:.*}", decimals, self.mean * scale),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub split_seeds: Vec<u64>,
    pub splits: Vec<SplitMetrics>,
    pub summary: Vec<MetricSummary>,
}

/// Mean and sample standard deviation of every metric across splits.
pub fn aggregate(split_seeds: &[u64], splits: &[SplitMetrics]) -> Result<ExperimentReport> {
    if splits.is_empty() {
        return Err(Error::arg("aggregate needs at least one split"));
    }
    if split_seeds.len() != splits.len() {
        return Err(Error::arg("one seed per split is required"));
    }
    let named: Vec<Vec<(String, f64)>> = splits.iter().map(SplitMetrics::named_values).collect();
    let summary = (0..named[0].len())
        .map(|i| MetricSummary::from_values(named[0][i].0.clone(), named.iter().map(|s| s[i].1).collect()))
        .collect();
    Ok(ExperimentReport { split_seeds: split_seeds.to_vec(), splits: splits.to_vec(), summary })
}

impl ExperimentReport {
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.summary.iter().find(|m| m.name == name)
    }

    /// Long format: `split_seed,metric,value`.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("split_seed,metric,value\n");
        for (seed, split) in self.split_seeds.iter().zip(&self.splits) {
            for (name, v) in split.named_values() {
                let _ = writeln!(out, "{seed},{name},{v}");
            }
        }
        out
    }

    /// `metric,mean,std,n`; std is empty for a single split.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("metric,mean,std,n\n");
        for m in &self.summary {
            let sd = m.std.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", m.name, m.mean, sd, m.values.len());
        }
        out
    }
}

fn table(rows: &[(String, Vec<String>)], header: &[&str]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for (name, cells) in rows {
        widths[0] = widths[0].max(name.chars().count());
        for (i, c) in cells.iter().enumerate() {
            widths[i + 1] = widths[i + 1].max(c.chars().count());
        }
    }
    let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w - s.chars().count()));
    let mut out = String::new();
    let line: Vec<String> = header.iter().zip(&widths).map(|(h, &w)| pad(h, w)).collect();
    out.push_str(line.join("  ").trim_end());
    out.push('\n');
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    out.push_str(&rule.join("  "));
    out.push('\n');
    for (name, cells) in rows {
        let mut line = vec![pad(name, widths[0])];
        line.extend(cells.iter().enumerate().map(|(i, c)| pad(c, widths[i + 1])));
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn summary_rows(
    columns: &[(&str, &ExperimentReport)],
    rows: &[(&str, &str)],
    scale: f64,
    decimals: usize,
) -> Vec<(String, Vec<String>)> {
    rows.iter()
        .map(|(display, metric)| {
            let cells = columns
                .iter()
                .map(|(_, r)| r.metric(metric).map(|m| m.cell(scale, decimals)).unwrap_or_else(|| "-".into()))
                .collect();
            (display.to_string(), cells)
        })
        .collect()
}

/// Per-label, macro and No Finding AUROC (×100, mean ± std), one column per
/// setting.
pub fn format_auroc_table(columns: &[(&str, &ExperimentReport)]) -> String {
    let mut header = vec!["Label"];
    header.extend(columns.iter().map(|c| c.0));
    let names: Vec<(String, String)> = ABNORMALITIES
        .iter()
        .map(|l| (l.name().to_string(), format!("AUROC {}", l.name())))
        .chain([
            ("Macro AUROC".to_string(), "Macro AUROC".to_string()),
            ("No Finding".to_string(), "No Finding AUROC".to_string()),
        ])
        .collect();
    let rows: Vec<(&str, &str)> = names.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    table(&summary_rows(columns, &rows, 100.0, 1), &header)
}

/// Macro P/R/F1 over abnormalities plus No Finding P/R/F1 under both rules.
pub fn format_prf_table(columns: &[(&str, &ExperimentReport)]) -> String {
    let mut header = vec!["Metric"];
    header.extend(columns.iter().map(|c| c.0));
    let rows = [
        ("Macro P", "Macro P"),
        ("Macro R", "Macro R"),
        ("Macro F1", "Macro F1"),
        ("No Finding P (complement)", "No Finding P (complement)"),
        ("No Finding R (complement)", "No Finding R (complement)"),
        ("No Finding F1 (complement)", "No Finding F1 (complement)"),
        ("No Finding P (score-threshold)", "No Finding P (score-threshold)"),
        ("No Finding R (score-threshold)", "No Finding R (score-threshold)"),
        ("No Finding F1 (score-threshold)", "No Finding F1 (score-threshold)"),
    ];
    table(&summary_rows(columns, &rows, 1.0, 3), &header)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn perfect_fixture() -> (Vec<ScoreVector>, Vec<LabelVector>) {
        let flags = [
            [true, false, false, true, false],
            [false, true, true, false, true],
            [false; 5],
            [true, true, true, true, true],
            [false; 5],
        ];
        let labels: Vec<LabelVector> = flags.iter().map(|&f| LabelVector::from_abnormalities(f)).collect();
        let scores = flags.iter().map(|f| ScoreVector(f.map(|b| b as u8 as f64))).collect();
        (scores, labels)
    }

    #[test]
    fn perfect_scores_give_perfect_metrics() {
        let (scores, labels) = perfect_fixture();
        let m = evaluate_split(&scores, &labels, &ThresholdSet::uniform(0.5)).unwrap();
        assert_eq!(m.auroc, [1.0; 5]);
        assert_eq!(m.macro_auroc, 1.0);
        assert_eq!(m.no_finding_auroc, 1.0);
        assert!(m.prf1.iter().all(|p| p.f1 == 1.0));
        assert_eq!(m.no_finding_complement.f1, 1.0);
        assert_eq!(m.no_finding_score_threshold.f1, 1.0);
    }

    #[test]
    fn constant_scores_give_chance_auroc() {
        let (_, labels) = perfect_fixture();
        let scores = vec![ScoreVector([0.5; 5]); labels.len()];
        let m = evaluate_split(&scores, &labels, &ThresholdSet::uniform(0.5)).unwrap();
        assert_eq!(m.auroc, [0.5; 5]);
        assert_eq!(m.no_finding_auroc, 0.5);
    }

    #[test]
    fn single_class_label_is_reported_by_name() {
        let labels = vec![LabelVector::from_abnormalities([true, false, false, false, false]); 3];
        let scores = vec![ScoreVector([0.5; 5]); 3];
        match evaluate_split(&scores, &labels, &ThresholdSet::uniform(0.5)) {
            Err(Error::UndefinedMetric { label, .. }) => assert_eq!(label, "Mass"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn thresholds_from_validation() {
        let (scores, labels) = perfect_fixture();
        let t = select_thresholds(&scores, &labels).unwrap();
        assert_eq!(t.abnormalities, [1.0; 5]);
        assert_eq!(t.no_finding, 1.0);
    }

    fn metrics_with_macro(v: f64) -> SplitMetrics {
        SplitMetrics {
            auroc: [v; 5],
            macro_auroc: v,
            prf1: [Prf1::default(); 5],
            macro_prf1: Prf1::default(),
            no_finding_auroc: v,
            no_finding_complement: Prf1::default(),
            no_finding_score_threshold: Prf1::default(),
            thresholds: ThresholdSet::uniform(0.5),
            n_images: 10,
        }
    }

    #[test]
    fn aggregate_examples() {
        let one = aggregate(&[1], &[metrics_with_macro(0.7)]).unwrap();
        assert_eq!(one.metric("Macro AUROC").unwrap().mean, 0.7);
        assert_eq!(one.metric("Macro AUROC").unwrap().std, None);

        let same = aggregate(&[1, 2], &[metrics_with_macro(0.7), metrics_with_macro(0.7)]).unwrap();
        assert_eq!(same.metric("Macro AUROC").unwrap().std, Some(0.0));

        let vals = [0.78, 0.79, 0.80, 0.79, 0.78];
        let splits: Vec<_> = vals.iter().map(|&v| metrics_with_macro(v)).collect();
        let r = aggregate(&[1, 2, 3, 4, 5], &splits).unwrap();
        let m = r.metric("Macro AUROC").unwrap();
        assert!((m.mean - 0.788).abs() < 1e-12);
        // sum of squared deviations is 280e-6, over n - 1 = 4
        assert!((m.std.unwrap() - (70e-6f64).sqrt()).abs() < 1e-12);
        assert!((m.std.unwrap() - 0.0084).abs() < 1e-4);
        assert!(aggregate(&[], &[]).is_err());
    }

    #[test]
    fn tables_have_one_column_per_setting() {
        let r = aggregate(&[1, 2], &[metrics_with_macro(0.78), metrics_with_macro(0.79)]).unwrap();
        let t = format_auroc_table(&[("A", &r), ("B", &r)]);
        assert!(t.contains("Macro AUROC  78.5 ± 0.7  78.5 ± 0.7"), "{t}");
        assert_eq!(t.lines().count(), 2 + 7);
        let p = format_prf_table(&[("A", &r)]);
        assert!(p.contains("No Finding F1 (complement)"));
        assert!(r.metrics_csv().starts_with("split_seed,metric,value\n1,AUROC Mass,0.78\n"));
        assert!(r.summary_csv().contains("Macro AUROC,"));
    }

    proptest! {
        #[test]
        fn macro_values_and_no_finding_consistency(
            rows in prop::collection::vec((prop::array::uniform5(0.0f64..=1.0), prop::array::uniform5(any::<bool>())), 4..30),
            t in prop::array::uniform5(0.05f64..0.95),
        ) {
            let mut labels: Vec<LabelVector> = rows.iter().map(|r| LabelVector::from_abnormalities(r.1)).collect();
            // force both classes for every label including No Finding
            labels[0] = LabelVector::from_abnormalities([true; 5]);
            labels[1] = LabelVector::from_abnormalities([false; 5]);
            let scores: Vec<ScoreVector> = rows.iter().map(|r| ScoreVector(r.0)).collect();
            let th = ThresholdSet { abnormalities: t, no_finding: 0.5 };
            let m = evaluate_split(&scores, &labels, &th).unwrap();
            prop_assert_eq!(m.macro_auroc, macro_average(&m.auroc));
            prop_assert_eq!(m.macro_prf1.f1, macro_average(&m.prf1.map(|p| p.f1)));
            for s in &scores {
                let p = th.predict(s);
                if no_finding_binary(&p) {
                    prop_assert!((0..5).all(|k| s.0[k] < t[k]));
                }
            }
        }
    }
}
