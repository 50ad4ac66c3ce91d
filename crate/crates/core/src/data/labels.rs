use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NUM_LABELS;

/// Canonical label order; "No Finding" is always the last entry.
pub const LABELS: [&str; NUM_LABELS] = [
    "Cardiomegaly",
    "Emphysema",
    "Edema",
    "Hernia",
    "Pneumothorax",
    "Effusion",
    "Mass",
    "Fibrosis",
    "Atelectasis",
    "Consolidation",
    "Pleural_Thickening",
    "Nodule",
    "Pneumonia",
    "Infiltration",
    "No Finding",
];

/// Short names used in report tables.
pub const DISPLAY_NAMES: [&str; NUM_LABELS] = [
    "Cardiomegaly",
    "Emphysema",
    "Edema",
    "Hernia",
    "Pneumothorax",
    "Effusion",
    "Mass",
    "Fibrosis",
    "Atelectasis",
    "Consolidation",
    "Pleural Thicken.",
    "Nodule",
    "Pneumonia",
    "Infiltration",
    "No Findings",
];

pub const NO_FINDING: usize = NUM_LABELS - 1;
pub const NUM_PATHOLOGIES: usize = NUM_LABELS - 1;

pub fn label_index(token: &str) -> Option<usize> {
    let t = token.trim();
    LABELS
        .iter()
        .position(|l| l.eq_ignore_ascii_case(t))
        .or_else(|| t.eq_ignore_ascii_case("Pleural Thickening").then_some(10))
}

/// A 15-bit label vector in canonical order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Labels(u16);

impl Labels {
    pub const NO_FINDING: Labels = Labels(1 << NO_FINDING);

    /// Builds a vector from pathology bits only; "No Finding" is derived.
    pub fn from_pathologies(bits: u16) -> Result<Labels> {
        if bits >> NUM_PATHOLOGIES != 0 {
            return Err(Error::Validation(format!("pathology mask {bits:#x} uses more than 14 bits")));
        }
        Ok(if bits == 0 { Labels::NO_FINDING } else { Labels(bits) })
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn pathology_bits(self) -> u16 {
        self.0 & ((1 << NUM_PATHOLOGIES) - 1)
    }

    pub fn get(self, index: usize) -> bool {
        index < NUM_LABELS && self.0 >> index & 1 == 1
    }

    pub fn is_no_finding(self) -> bool {
        self.get(NO_FINDING)
    }

    /// Parses a pipe-separated finding string.
    pub fn encode(findings: &str) -> Result<Labels> {
        let mut bits = 0u16;
        for token in findings.split('|') {
            let index = label_index(token)
                .ok_or_else(|| Error::Validation(format!("unknown finding `{}`", token.trim())))?;
            bits |= 1 << index;
        }
        if bits & (1 << NO_FINDING) != 0 && bits != 1 << NO_FINDING {
            return Err(Error::Validation(format!(
                "`{findings}` combines No Finding with a pathology"
            )));
        }
        Ok(Labels(bits))
    }

    pub fn decode(self) -> String {
        LABELS
            .iter()
            .enumerate()
            .filter(|(i, _)| self.get(*i))
            .map(|(_, n)| *n)
            .collect::<Vec<_>>()
            .join("|")
    }

    pub fn to_vec(self) -> Vec<f32> {
        (0..NUM_LABELS).map(|i| if self.get(i) { 1.0 } else { 0.0 }).collect()
    }
}

impl TryFrom<String> for Labels {
    type Error = Error;
    fn try_from(s: String) -> Result<Labels> {
        Labels::encode(&s)
    }
}

impl From<Labels> for String {
    fn from(l: Labels) -> String {
        l.decode()
    }
}

impl fmt::Display for Labels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.decode())
    }
}
