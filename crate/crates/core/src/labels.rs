//! The fixed six-label vocabulary shared by every module.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const NUM_LABELS: usize = 6;
pub const NUM_ABNORMALITIES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Mass,
    Nodule,
    Pneumonia,
    Edema,
    Fibrosis,
    NoFinding,
}

pub const ALL_LABELS: [Label; NUM_LABELS] =
    [Label::Mass, Label::Nodule, Label::Pneumonia, Label::Edema, Label::Fibrosis, Label::NoFinding];

pub const ABNORMALITIES: [Label; NUM_ABNORMALITIES] =
    [Label::Mass, Label::Nodule, Label::Pneumonia, Label::Edema, Label::Fibrosis];

impl Label {
    /// Position in the fixed label order.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Name as it appears in NIH-style manifests.
    pub fn name(self) -> &'static str {
        match self {
            Label::Mass => "Mass",
            Label::Nodule => "Nodule",
            Label::Pneumonia => "Pneumonia",
            Label::Edema => "Edema",
            Label::Fibrosis => "Fibrosis",
            Label::NoFinding => "No Finding",
        }
    }

    pub fn from_name(name: &str) -> Option<Label> {
        ALL_LABELS.into_iter().find(|l| l.name() == name)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Six binary flags in the fixed label order. `No Finding` excludes every
/// abnormality flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct LabelVector([bool; NUM_LABELS]);

impl LabelVector {
    /// Builds a vector from abnormality flags; No Finding is set exactly when
    /// none of them is.
    pub fn from_abnormalities(flags: [bool; NUM_ABNORMALITIES]) -> Self {
        let mut out = [false; NUM_LABELS];
        out[..NUM_ABNORMALITIES].copy_from_slice(&flags);
        out[Label::NoFinding.index()] = !flags.iter().any(|&f| f);
        LabelVector(out)
    }

    /// Builds a vector from raw flags, rejecting No Finding combined with an
    /// abnormality.
    pub fn from_flags(flags: [bool; NUM_LABELS]) -> Option<Self> {
        let any_abnormal = flags[..NUM_ABNORMALITIES].iter().any(|&f| f);
        if any_abnormal && flags[Label::NoFinding.index()] {
            return None;
        }
        Some(LabelVector(flags))
    }

    pub fn flags(&self) -> [bool; NUM_LABELS] {
        self.0
    }

    pub fn get(&self, label: Label) -> bool {
        self.0[label.index()]
    }

    pub fn abnormalities(&self) -> [bool; NUM_ABNORMALITIES] {
        let mut out = [false; NUM_ABNORMALITIES];
        out.copy_from_slice(&self.0[..NUM_ABNORMALITIES]);
        out
    }

    pub fn no_finding(&self) -> bool {
        self.0[Label::NoFinding.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for l in ALL_LABELS {
            assert_eq!(Label::from_name(l.name()), Some(l));
        }
        assert_eq!(Label::from_name("Effusion"), None);
    }

    #[test]
    fn no_finding_excludes_abnormalities() {
        assert!(LabelVector::from_abnormalities([false; 5]).no_finding());
        assert!(!LabelVector::from_abnormalities([false, true, false, false, false]).no_finding());
        assert!(LabelVector::from_flags([true, false, false, false, false, true]).is_none());
        assert!(LabelVector::from_flags([false; 6]).is_some());
    }
}
