//! Seeded generator of synthetic radiology reports, for tests and benchmarks.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ImageMeta, Report, Split, StudyMeta, ViewPosition};
use crate::error::{Error, Result};

const EXPLAINED: &[&str] = &[
    "Right basilar opacity likely reflects atelectasis.",
    "Patchy opacity in the left lower lobe concerning for pneumonia.",
    "Opacity at the bases could be atelectasis or pneumonia.",
    "Focal consolidation in the right upper lobe, consistent with pneumonia.",
    "Interstitial markings are increased, suggestive of mild pulmonary edema.",
    "Blunting of the costophrenic angle consistent with small pleural effusion.",
    "Retrocardiac opacity may represent consolidation.",
    "Consolidation could be atelectasis or pneumonia.",
    "Enlarged cardiac silhouette with vascular congestion, likely due to edema.",
    "Nodular opacity concerning for pneumonia.",
];

const PLAIN: &[&str] = &[
    "The lungs are clear.",
    "No pneumothorax.",
    "Heart size is normal.",
    "There is no pleural effusion.",
    "Mild cardiomegaly is unchanged.",
    "Atelectasis at the left base.",
    "Small right pleural effusion.",
    "Mediastinal contours are within normal limits.",
    "No acute cardiopulmonary process.",
    "Osseous structures are unremarkable.",
];

const FILTERED: &[&str] = &[
    "Findings discussed with ___ at 10:15.",
    "Recommend follow-up chest CT to assess the opacity.",
    "Patient has a history of pneumonia.",
    "Lateral view is limited by motion.",
];

#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub reports: usize,
    pub seed: u64,
    pub max_sentences: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            reports: 100,
            seed: 0,
            max_sentences: 8,
        }
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> &'a str {
    pool.choose(rng).copied().unwrap_or_default()
}

fn sentence(rng: &mut ChaCha8Rng) -> &'static str {
    match rng.gen_range(0..10) {
        0..=2 => pick(rng, EXPLAINED),
        3 => pick(rng, FILTERED),
        _ => pick(rng, PLAIN),
    }
}

fn report_text(rng: &mut ChaCha8Rng, max_sentences: usize) -> String {
    let n = |rng: &mut ChaCha8Rng| rng.gen_range(1..=max_sentences.max(1));
    let body = |rng: &mut ChaCha8Rng, k: usize| (0..k).map(|_| sentence(rng)).collect::<Vec<_>>().join(" ");
    let mut s = String::from("EXAMINATION: CHEST (PA AND LAT)\n\nINDICATION: ___ with cough.\n\n");
    match rng.gen_range(0..10) {
        // no recognizable sections
        0 => s.push_str("Chest radiograph reviewed. No change.\n"),
        1 => {
            let k = n(rng);
            s.push_str(&format!("IMPRESSION: {}\n", body(rng, k)));
        }
        _ => {
            let (k1, k2) = (n(rng), n(rng).min(3));
            s.push_str(&format!("FINDINGS: {}\n\nIMPRESSION: {}\n", body(rng, k1), body(rng, k2)));
        }
    }
    s
}

fn images(rng: &mut ChaCha8Rng, study: u64) -> Vec<ImageMeta> {
    let views = [ViewPosition::AP, ViewPosition::PA, ViewPosition::Lateral];
    let n = rng.gen_range(0..=3);
    let mut out: Vec<ImageMeta> = (0..n)
        .map(|k| ImageMeta {
            image_id: format!("{study:08}-{k:02}"),
            view_position: *views.choose(rng).unwrap_or(&ViewPosition::AP),
        })
        .collect();
    out.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    out
}

/// Deterministic corpus for `cfg.seed`.
pub fn generate(cfg: &SynthConfig) -> Vec<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let splits = [Split::Train, Split::Train, Split::Train, Split::Dev, Split::Test];
    (0..cfg.reports as u64)
        .map(|i| {
            let study = 50_000_000 + i;
            let meta = StudyMeta {
                subject_id: format!("{}", 10_000_000 + i / 3),
                study_id: study.to_string(),
                images: images(&mut rng, study),
                split: *splits.choose(&mut rng).unwrap_or(&Split::Train),
            };
            let text = report_text(&mut rng, cfg.max_sentences);
            Report::new(meta, text)
        })
        .collect()
}

/// Writes `reports` as a corpus directory: `files/p<subject>/s<study>.txt`,
/// `metadata.csv` and `splits.csv`.
pub fn write_corpus(dir: &Path, reports: &[Report]) -> Result<()> {
    let files = dir.join("files");
    let mut meta = String::from("image_id,study_id,subject_id,view_position\n");
    let mut splits = String::from("study_id,split\n");
    for r in reports {
        let sub = files.join(format!("p{}", r.meta.subject_id));
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let path = sub.join(format!("s{}.txt", r.meta.study_id));
        fs::write(&path, &r.raw_text).map_err(|e| Error::io(&path, e))?;
        for im in &r.meta.images {
            meta.push_str(&format!(
                "{},{},{},{}\n",
                im.image_id,
                r.meta.study_id,
                r.meta.subject_id,
                im.view_position.as_str()
            ));
        }
        if r.meta.split != Split::Unassigned {
            splits.push_str(&format!("{},{}\n", r.meta.study_id, r.meta.split));
        }
    }
    for (name, body) in [("metadata.csv", meta), ("splits.csv", splits)] {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(body.as_bytes()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
