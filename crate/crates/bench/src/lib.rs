//! Shared inputs for the benchmarks under `benches/`.

use nle_core::metrics::auc::{PathologyScores, N_PATH};
use nle_core::synth::{generate, SynthConfig};
use nle_core::{Label, Report};

pub fn reports(n: usize) -> Vec<Report> {
    generate(&SynthConfig {
        reports: n,
        seed: 42,
        max_sentences: 8,
    })
}

/// Deterministic scores with a weak signal, `images` per pathology.
pub fn auc_columns(images: usize) -> Vec<PathologyScores> {
    (0..N_PATH)
        .map(|p| {
            let truth: Vec<bool> = (0..images).map(|i| (i * 7 + p) % 5 == 0).collect();
            let scores = truth
                .iter()
                .enumerate()
                .map(|(i, &t)| ((i * 2_654_435_761) % 1000) as f64 / 1000.0 + if t { 0.2 } else { 0.0 })
                .collect();
            PathologyScores {
                label: Label::ALL[p],
                scores,
                truth,
            }
        })
        .collect()
}
