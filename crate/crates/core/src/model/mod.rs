//! Multi-label abnormality scoring.
//!
//! Scores normally arrive from an external classifier as CSV
//! ([`load_scores`]); [`network`] holds a small reference classifier with
//! hand-derived gradients that is trained with [`train`].

mod adam;
mod network;
mod train;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState};
pub use network::{
    accumulate_gradients, bce_with_logits, forward, gradients, predict, sigmoid, Activations, ModelConfig, ParamArrays,
    RefModelParams,
};
pub use train::{train, EpochLog, LabeledImage, TrainConfig, TrainOutcome};

use crate::error::{Error, Result};
use crate::labels::NUM_ABNORMALITIES;

pub const SCORE_HEADER: [&str; 6] = ["image_id", "p_mass", "p_nodule", "p_pneumonia", "p_edema", "p_fibrosis"];

/// Abnormality probabilities in the fixed order
/// `[Mass, Nodule, Pneumonia, Edema, Fibrosis]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreVector(pub [f64; NUM_ABNORMALITIES]);

impl ScoreVector {
    pub fn new(p: [f64; NUM_ABNORMALITIES]) -> Result<Self> {
        if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::arg(format!("probability {v} outside [0, 1]")));
        }
        Ok(ScoreVector(p))
    }

    pub fn get(&self, k: usize) -> f64 {
        self.0[k]
    }
}

/// Reads `image_id,p_mass,p_nodule,p_pneumonia,p_edema,p_fibrosis` rows.
pub fn load_scores(csv_bytes: &[u8], source: &str) -> Result<BTreeMap<String, ScoreVector>> {
    let fail = |message: String| Error::Ingestion { source_name: source.to_string(), message };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(csv_bytes);
    let headers = reader.headers().map_err(|e| fail(format!("header: {e}")))?;
    if headers.iter().ne(SCORE_HEADER.iter().copied()) {
        return Err(fail(format!("header must be {}", SCORE_HEADER.join(","))));
    }
    let mut out = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| fail(format!("row {line}: {e}")))?;
        let id = row[0].to_string();
        if id.is_empty() {
            return Err(fail(format!("row {line}: empty image_id")));
        }
        let mut p = [0.0; NUM_ABNORMALITIES];
        for (k, slot) in p.iter_mut().enumerate() {
            let field = &row[k + 1];
            let v: f64 = field
                .parse()
                .map_err(|_| fail(format!("row {line}: {} = \"{field}\" is not a number", SCORE_HEADER[k + 1])))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(fail(format!("row {line}: {} = {v} outside [0, 1]", SCORE_HEADER[k + 1])));
            }
            *slot = v;
        }
        if out.insert(id.clone(), ScoreVector(p)).is_some() {
            return Err(fail(format!("row {line}: duplicate image_id {id}")));
        }
    }
    Ok(out)
}

/// Writes scores in the format [`load_scores`] reads.
pub fn scores_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a ScoreVector)>) -> String {
    let mut out = SCORE_HEADER.join(",");
    out.push('\n');
    for (id, s) in rows {
        out.push_str(id);
        for p in s.0 {
            out.push_str(&format!(",{p}"));
        }
        out.push('\n');
    }
    out
}

/// Continuous normality score `1 - max_k p_k`.
pub fn no_finding_score(p: &ScoreVector) -> f64 {
    1.0 - p.0.iter().copied().fold(0.0, f64::max)
}

/// An image is predicted normal iff no abnormality is predicted.
pub fn no_finding_binary(predicted: &[bool; NUM_ABNORMALITIES]) -> bool {
    !predicted.iter().any(|&b| b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn load_scores_examples() {
        let csv =
            b"image_id,p_mass,p_nodule,p_pneumonia,p_edema,p_fibrosis\nx.png,0,0,0,0,0\ny.png,0.1,0.2,0.3,0.4,1\n";
        let m = load_scores(csv, "s.csv").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m["x.png"], ScoreVector([0.0; 5]));

        let bad = b"image_id,p_mass,p_nodule,p_pneumonia,p_edema,p_fibrosis\nx.png,0,0,0,0,0\nz.png,1.2,0,0,0,0\n";
        let err = load_scores(bad, "s.csv").unwrap_err().to_string();
        assert!(err.contains("row 3"), "{err}");

        let dup = b"image_id,p_mass,p_nodule,p_pneumonia,p_edema,p_fibrosis\nx.png,0,0,0,0,0\nx.png,0,0,0,0,0\n";
        assert!(load_scores(dup, "s.csv").unwrap_err().to_string().contains("duplicate"));
        assert!(load_scores(b"id,a\n", "s.csv").is_err());
    }

    #[test]
    fn scores_csv_round_trip() {
        let a = ScoreVector([0.1, 0.25, 1.0, 0.0, 0.333]);
        let text = scores_csv([("a", &a)]);
        assert_eq!(load_scores(text.as_bytes(), "t").unwrap()["a"], a);
    }

    #[test]
    fn no_finding_examples() {
        assert_eq!(no_finding_score(&ScoreVector([0.0; 5])), 1.0);
        assert_eq!(no_finding_score(&ScoreVector([1.0, 0.0, 0.0, 0.0, 0.0])), 0.0);
        let s = no_finding_score(&ScoreVector([0.2, 0.7, 0.1, 0.3, 0.4]));
        assert!((s - 0.3).abs() < 1e-15);
        assert!(no_finding_binary(&[false; 5]));
        assert!(!no_finding_binary(&[false, false, true, false, false]));
        assert!(!no_finding_binary(&[true; 5]));
    }

    /// Independence-based normality score, used only to compare behavior.
    fn product_rule(p: &ScoreVector) -> f64 {
        1.0 - p.0.iter().map(|v| 1.0 - v).product::<f64>()
    }

    proptest! {
        #[test]
        fn no_finding_score_is_antitone(p in prop::array::uniform5(0.0f64..=1.0), k in 0usize..5, bump in 0.0f64..=1.0) {
            let base = ScoreVector(p);
            let mut raised = p;
            raised[k] = (raised[k] + bump).min(1.0);
            let raised = ScoreVector(raised);
            prop_assert!(no_finding_score(&raised) <= no_finding_score(&base));
            for pj in p {
                prop_assert!(no_finding_score(&base) <= 1.0 - pj);
            }
            // the rejected product form is also antitone, and it always
            // flags at least as much abnormality as the max form
            prop_assert!(product_rule(&raised) >= product_rule(&base) - 1e-15);
            prop_assert!(1.0 - product_rule(&base) <= no_finding_score(&base) + 1e-15);
        }

        #[test]
        fn binary_and_continuous_agree_with_shared_threshold(p in prop::array::uniform5(0.0f64..=1.0), t in 0.0f64..=1.0) {
            let predicted = p.map(|v| v >= t);
            let binary = no_finding_binary(&predicted);
            let continuous = no_finding_score(&ScoreVector(p)) > 1.0 - t;
            // 1 - max p > 1 - t  <=>  max p < t, modulo rounding in 1 - x
            let max = p.iter().copied().fold(0.0, f64::max);
            if (max - t).abs() > 1e-12 {
                prop_assert_eq!(binary, continuous);
            }
        }
    }
}
