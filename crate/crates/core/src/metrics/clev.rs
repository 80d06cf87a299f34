//! CLEV: share of generated explanations whose evidence labels exactly
//! equal those of the ground-truth explanation.

use std::collections::BTreeSet;

use crate::label::{Label, LabelState};
use crate::rules::EVIDENCE_LABELS;

/// Evidence-capable labels present in `state`, minus the diagnosis being
/// explained (Consolidation can be either).
pub fn evidence_labels(state: &LabelState, diagnosis: Label) -> BTreeSet<Label> {
    EVIDENCE_LABELS
        .iter()
        .copied()
        .filter(|&l| l != diagnosis && state.get(l).is_present())
        .collect()
}

/// Fraction of `(diagnosis, gt_text, generated_text)` triples whose evidence
/// sets agree. `None` for an empty input.
pub fn clev<'a, I, F>(pairs: I, label_text: F) -> Option<f64>
where
    I: IntoIterator<Item = (Label, &'a str, &'a str)>,
    F: Fn(&str) -> LabelState,
{
    let mut n = 0usize;
    let mut hits = 0usize;
    for (dx, gt, gen) in pairs {
        n += 1;
        if evidence_labels(&label_text(gt), dx) == evidence_labels(&label_text(gen), dx) {
            hits += 1;
        }
    }
    (n > 0).then(|| hits as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mention::BuiltinLabeler;

    fn score(pairs: &[(Label, &str, &str)]) -> Option<f64> {
        let l = BuiltinLabeler::default();
        clev(pairs.iter().copied(), |t| l.label_text(t))
    }

    #[test]
    fn same_evidence_matches() {
        assert_eq!(
            score(&[(
                Label::Pneumonia,
                "Opacity and consolidation concerning for pneumonia.",
                "Consolidation with surrounding opacity, likely pneumonia."
            )]),
            Some(1.0)
        );
    }

    #[test]
    fn missing_evidence_fails() {
        assert_eq!(
            score(&[(Label::Pneumonia, "Opacity concerning for pneumonia.", "Likely pneumonia.")]),
            Some(0.0)
        );
    }

    #[test]
    fn both_empty_match() {
        assert_eq!(
            score(&[(Label::Edema, "Findings suggest mild edema.", "Mild edema is suspected.")]),
            Some(1.0)
        );
    }

    #[test]
    fn diagnosis_removed_from_evidence() {
        // Consolidation explained by opacity: only opacity counts as evidence
        assert_eq!(
            score(&[(
                Label::Consolidation,
                "Opacity may reflect consolidation.",
                "Opacity."
            )]),
            Some(1.0)
        );
    }

    #[test]
    fn empty_is_undefined() {
        assert_eq!(score(&[]), None);
    }
}
