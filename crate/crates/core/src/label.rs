//! The 14-label chest X-ray observation space and per-sentence label states.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// One of the 14 CheXpert observation labels.
///
/// The discriminant is the stable integer code used in label files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Label {
    EnlargedCardiomediastinum = 0,
    Cardiomegaly = 1,
    LungOpacity = 2,
    LungLesion = 3,
    Edema = 4,
    Consolidation = 5,
    Pneumonia = 6,
    Atelectasis = 7,
    Pneumothorax = 8,
    PleuralEffusion = 9,
    PleuralOther = 10,
    Fracture = 11,
    SupportDevices = 12,
    NoFinding = 13,
}

impl Label {
    pub const COUNT: usize = 14;

    pub const ALL: [Label; 14] = [
        Label::EnlargedCardiomediastinum,
        Label::Cardiomegaly,
        Label::LungOpacity,
        Label::LungLesion,
        Label::Edema,
        Label::Consolidation,
        Label::Pneumonia,
        Label::Atelectasis,
        Label::Pneumothorax,
        Label::PleuralEffusion,
        Label::PleuralOther,
        Label::Fracture,
        Label::SupportDevices,
        Label::NoFinding,
    ];

    /// The 13 labels that describe an observation (everything but No Finding).
    pub const SUBSTANTIVE: [Label; 13] = [
        Label::EnlargedCardiomediastinum,
        Label::Cardiomegaly,
        Label::LungOpacity,
        Label::LungLesion,
        Label::Edema,
        Label::Consolidation,
        Label::Pneumonia,
        Label::Atelectasis,
        Label::Pneumothorax,
        Label::PleuralEffusion,
        Label::PleuralOther,
        Label::Fracture,
        Label::SupportDevices,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Label> {
        Label::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::EnlargedCardiomediastinum => "Enlarged Cardiomediastinum",
            Label::Cardiomegaly => "Cardiomegaly",
            Label::LungOpacity => "Lung Opacity",
            Label::LungLesion => "Lung Lesion",
            Label::Edema => "Edema",
            Label::Consolidation => "Consolidation",
            Label::Pneumonia => "Pneumonia",
            Label::Atelectasis => "Atelectasis",
            Label::Pneumothorax => "Pneumothorax",
            Label::PleuralEffusion => "Pleural Effusion",
            Label::PleuralOther => "Pleural Other",
            Label::Fracture => "Fracture",
            Label::SupportDevices => "Support Devices",
            Label::NoFinding => "No Finding",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = Error;

    /// Accepts the display name, case-insensitively, with spaces or underscores.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .chars()
            .map(|c| if c == '_' { ' ' } else { c.to_ascii_lowercase() })
            .collect();
        Label::ALL
            .iter()
            .copied()
            .find(|l| l.name().to_ascii_lowercase() == norm)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Mention state of a label within one sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Certainty {
    #[default]
    Absent,
    Negative,
    Uncertain,
    Positive,
}

impl Certainty {
    /// Uncertain or Positive.
    pub fn is_present(self) -> bool {
        matches!(self, Certainty::Uncertain | Certainty::Positive)
    }

    /// Encoding used by CheXpert-style label files: blank, 0, -1, 1.
    pub fn label_file_code(self) -> &'static str {
        match self {
            Certainty::Absent => "",
            Certainty::Negative => "0",
            Certainty::Uncertain => "-1",
            Certainty::Positive => "1",
        }
    }

    pub fn from_label_file_code(s: &str) -> Option<Certainty> {
        match s.trim() {
            "" => Some(Certainty::Absent),
            "0" | "0.0" => Some(Certainty::Negative),
            "-1" | "-1.0" => Some(Certainty::Uncertain),
            "1" | "1.0" => Some(Certainty::Positive),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Certainty::Absent => "absent",
            Certainty::Negative => "negative",
            Certainty::Uncertain => "uncertain",
            Certainty::Positive => "positive",
        }
    }
}

impl fmt::Display for Certainty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Total assignment of a [`Certainty`] to each of the 14 labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct LabelState([Certainty; Label::COUNT]);

impl LabelState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I: IntoIterator<Item = (Label, Certainty)>>(pairs: I) -> Self {
        let mut state = Self::default();
        for (label, certainty) in pairs {
            state.set(label, certainty);
        }
        state
    }

    pub fn get(&self, label: Label) -> Certainty {
        self.0[label as usize]
    }

    pub fn set(&mut self, label: Label, certainty: Certainty) {
        self.0[label as usize] = certainty;
    }

    /// Labels (in code order) whose certainty is Uncertain or Positive.
    pub fn present_set(&self) -> Vec<Label> {
        Label::ALL
            .iter()
            .copied()
            .filter(|&l| self.get(l).is_present())
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Label, Certainty)> + '_ {
        Label::ALL.iter().map(move |&l| (l, self.get(l)))
    }

    pub fn is_all_absent(&self) -> bool {
        self.0.iter().all(|&c| c == Certainty::Absent)
    }
}
