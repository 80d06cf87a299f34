//! Support-weighted ROC AUC over pathologies, with Uncertain and Positive
//! merged into one class.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::{Label, LabelState};

pub const N_UNC: usize = 3;
pub const N_PATH: usize = 10;

/// Tolerance on each pathology's three-way probabilities summing to one.
pub const COLUMN_SUM_TOLERANCE: f64 = 1e-6;

/// Area under the ROC curve by the Mann-Whitney rank statistic, ties
/// counting one half. `None` unless both classes occur.
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), truth.len(), "scores and truth differ in length");
    let n_pos = truth.iter().filter(|&&t| t).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // sum of (1-based, tie-averaged) ranks of the positives
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]].total_cmp(&scores[order[i]]) == Ordering::Equal {
            j += 1;
        }
        let mid_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_tie = order[i..j].iter().filter(|&&k| truth[k]).count();
        pos_rank_sum += mid_rank * pos_in_tie as f64;
        i = j;
    }
    let n_pos = n_pos as f64;
    let u = pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0;
    Some(u / (n_pos * n_neg as f64))
}

/// Binary scores and ground truth for one pathology.
#[derive(Debug, Clone, PartialEq)]
pub struct PathologyScores {
    pub label: Label,
    pub scores: Vec<f64>,
    pub truth: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathologyAuc {
    pub label: Label,
    /// Number of images whose ground truth is Uncertain or Positive.
    pub support: usize,
    /// `None` when the pathology lacks positives or negatives and was excluded.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedAuc {
    pub value: Option<f64>,
    pub per_pathology: Vec<PathologyAuc>,
}

impl WeightedAuc {
    pub fn excluded(&self) -> impl Iterator<Item = Label> + '_ {
        self.per_pathology.iter().filter(|p| p.auc.is_none()).map(|p| p.label)
    }
}

/// Mean of per-pathology AUCs weighted by positive support. Pathologies
/// without both classes are excluded; `value` is `None` if none remain.
pub fn weighted_auc_from_scores(columns: &[PathologyScores]) -> WeightedAuc {
    let mut num = 0.0;
    let mut den = 0usize;
    let per_pathology = columns
        .iter()
        .map(|c| {
            let support = c.truth.iter().filter(|&&t| t).count();
            let auc = roc_auc(&c.scores, &c.truth);
            if let Some(a) = auc {
                num += support as f64 * a;
                den += support;
            }
            PathologyAuc {
                label: c.label,
                support,
                auc,
            }
        })
        .collect();
    WeightedAuc {
        value: (den > 0).then(|| num / den as f64),
        per_pathology,
    }
}

/// The ten pathologies along the prediction matrix's second axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pathologies(pub [Label; N_PATH]);

impl Default for Pathologies {
    /// The seven explainable diagnoses plus Lung Opacity, Lung Lesion and
    /// Enlarged Cardiomediastinum, in label code order.
    fn default() -> Self {
        Pathologies([
            Label::EnlargedCardiomediastinum,
            Label::LungOpacity,
            Label::LungLesion,
            Label::Edema,
            Label::Consolidation,
            Label::Pneumonia,
            Label::Atelectasis,
            Label::Pneumothorax,
            Label::PleuralEffusion,
            Label::PleuralOther,
        ])
    }
}

impl Pathologies {
    pub fn from_labels(labels: &[Label]) -> Result<Self> {
        let arr: [Label; N_PATH] = labels.try_into().map_err(|_| {
            Error::Config(format!("expected {N_PATH} pathologies, got {}", labels.len()))
        })?;
        for (i, l) in arr.iter().enumerate() {
            if arr[..i].contains(l) {
                return Err(Error::Config(format!("pathology {l} listed twice")));
            }
        }
        Ok(Pathologies(arr))
    }

    pub fn index_of(&self, label: Label) -> Option<usize> {
        self.0.iter().position(|&l| l == label)
    }
}

/// Model output for one image: probabilities per certainty (negative,
/// uncertain, positive) and pathology.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionMatrix {
    pub scores: [[f64; N_PATH]; N_UNC],
}

impl PredictionMatrix {
    pub fn new(scores: [[f64; N_PATH]; N_UNC]) -> Result<Self> {
        for p in 0..N_PATH {
            let col: Vec<f64> = scores.iter().map(|row| row[p]).collect();
            if col.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
                return Err(Error::Config(format!(
                    "pathology column {p} has a value outside [0, 1]"
                )));
            }
            let sum: f64 = col.iter().sum();
            if (sum - 1.0).abs() > COLUMN_SUM_TOLERANCE {
                return Err(Error::Config(format!(
                    "pathology column {p} sums to {sum}, not 1"
                )));
            }
        }
        Ok(PredictionMatrix { scores })
    }

    /// p(uncertain) + p(positive).
    pub fn present_score(&self, pathology: usize) -> f64 {
        self.scores[1][pathology] + self.scores[2][pathology]
    }
}

/// Weighted AUC over images given their predictions and ground-truth label states.
pub fn weighted_auc(images: &[(PredictionMatrix, LabelState)], pathologies: &Pathologies) -> WeightedAuc {
    let columns: Vec<PathologyScores> = pathologies
        .0
        .iter()
        .enumerate()
        .map(|(p, &label)| PathologyScores {
            label,
            scores: images.iter().map(|(m, _)| m.present_score(p)).collect(),
            truth: images.iter().map(|(_, gt)| gt.get(label).is_present()).collect(),
        })
        .collect();
    weighted_auc_from_scores(&columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::Certainty;

    #[test]
    fn perfect_and_tied() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), Some(1.0));
        assert_eq!(roc_auc(&[0.5; 4], &[false, true, false, true]), Some(0.5));
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]), Some(0.0));
        assert_eq!(roc_auc(&[0.1, 0.2], &[true, true]), None);
    }

    #[test]
    fn sklearn_reference() {
        // sklearn.metrics.roc_auc_score([0,0,1,1], [0.1,0.4,0.35,0.8]) == 0.75
        assert_eq!(roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]), Some(0.75));
    }

    #[test]
    fn weighting_by_support() {
        let cols = [
            PathologyScores {
                label: Label::Edema,
                scores: vec![0.9, 0.8, 0.1, 0.2],
                truth: vec![true, true, true, false],
            },
            PathologyScores {
                label: Label::Pneumonia,
                scores: vec![0.1, 0.9, 0.5, 0.5],
                truth: vec![true, false, false, false],
            },
            PathologyScores {
                label: Label::Atelectasis,
                scores: vec![0.1, 0.9, 0.5, 0.5],
                truth: vec![false; 4],
            },
        ];
        let w = weighted_auc_from_scores(&cols);
        // Edema: positives {.9,.8,.1} vs negative .2 -> 2/3; Pneumonia: 0
        assert!((w.value.unwrap() - (3.0 * (2.0 / 3.0) + 0.0) / 4.0).abs() < 1e-12);
        assert_eq!(w.excluded().collect::<Vec<_>>(), vec![Label::Atelectasis]);
    }

    #[test]
    fn nothing_scoreable() {
        let cols = [PathologyScores {
            label: Label::Edema,
            scores: vec![0.3],
            truth: vec![true],
        }];
        assert_eq!(weighted_auc_from_scores(&cols).value, None);
        assert_eq!(weighted_auc_from_scores(&[]).value, None);
    }

    #[test]
    fn matrix_validation() {
        let mut s = [[0.5; N_PATH], [0.25; N_PATH], [0.25; N_PATH]];
        let m = PredictionMatrix::new(s).unwrap();
        assert_eq!(m.present_score(3), 0.5);
        s[2][4] = 0.3;
        assert!(PredictionMatrix::new(s).is_err());
    }

    #[test]
    fn matrix_route() {
        let path = Pathologies::default();
        let mk = |p_present: f64| {
            PredictionMatrix::new([[1.0 - p_present; N_PATH], [0.0; N_PATH], [p_present; N_PATH]]).unwrap()
        };
        let pos = LabelState::from_pairs([(Label::Edema, Certainty::Uncertain)]);
        let neg = LabelState::from_pairs([(Label::Edema, Certainty::Negative)]);
        let w = weighted_auc(&[(mk(0.9), pos), (mk(0.1), neg)], &path);
        assert_eq!(w.value, Some(1.0));
        assert_eq!(w.per_pathology.iter().filter(|p| p.auc.is_some()).count(), 1);
    }

    #[test]
    fn pathology_config() {
        assert!(Pathologies::from_labels(&[Label::Edema; 10]).is_err());
        assert!(Pathologies::from_labels(&Label::ALL[..9]).is_err());
        let p = Pathologies::from_labels(&Label::ALL[..10]).unwrap();
        assert_eq!(p.index_of(Label::Pneumothorax), Some(8));
    }
}
