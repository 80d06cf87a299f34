//! Batch evaluation of a system's predictions and generated explanations.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::csv_reader;
use crate::error::{Error, Result};
use crate::label::{Certainty, Label, LabelState};
use crate::metrics::auc::{weighted_auc, Pathologies, PathologyAuc, PredictionMatrix, N_PATH, N_UNC};
use crate::metrics::clev::clev;
use crate::metrics::nlg::score_texts;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// One generated explanation for one diagnosis of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub image_id: String,
    pub diagnosis: Label,
    pub gt_nle: String,
    pub gen_nle: String,
    /// Ground truth is Uncertain or Positive.
    pub gt_binary: bool,
    /// Predicted p(uncertain) + p(positive); filled in from the prediction file.
    #[serde(default)]
    pub pred_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spice: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bertscore: Option<f64>,
}

/// Pairs whose diagnosis is present in the ground truth and predicted
/// present (score at or above `threshold`). Pairs without a score are dropped.
pub fn filter_correct(pairs: &[EvalPair], threshold: f64) -> Vec<&EvalPair> {
    pairs
        .iter()
        .filter(|p| p.gt_binary && p.pred_score.is_some_and(|s| s >= threshold))
        .collect()
}

pub fn load_eval_pairs(path: &Path) -> Result<Vec<EvalPair>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: EvalPair =
            serde_json::from_str(&line).map_err(|e| Error::row(path, i as u64 + 1, e.to_string()))?;
        out.push(pair);
    }
    Ok(out)
}

/// Column names of the prediction CSV after `image_id`.
pub fn prediction_columns() -> Vec<String> {
    ["negative", "uncertain", "positive"]
        .iter()
        .flat_map(|c| (0..N_PATH).map(move |p| format!("{c}_{p}")))
        .collect()
}

/// Reads `image_id` plus 30 probability columns (`negative_0..9`,
/// `uncertain_0..9`, `positive_0..9`).
pub fn load_predictions(path: &Path) -> Result<BTreeMap<String, PredictionMatrix>> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers()?.clone();
    let image_col = headers
        .iter()
        .position(|h| h == "image_id")
        .ok_or_else(|| Error::invalid_file(path, "missing image_id column"))?;
    let mut cols = Vec::with_capacity(N_UNC * N_PATH);
    for name in prediction_columns() {
        let i = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::invalid_file(path, format!("missing column {name}")))?;
        cols.push(i);
    }
    let mut out = BTreeMap::new();
    for (n, rec) in rdr.records().enumerate() {
        let line = n as u64 + 2;
        let rec = rec.map_err(|e| Error::row(path, line, e.to_string()))?;
        let mut scores = [[0.0; N_PATH]; N_UNC];
        for (k, &i) in cols.iter().enumerate() {
            let v = rec.get(i).unwrap_or("");
            scores[k / N_PATH][k % N_PATH] = v
                .parse()
                .map_err(|_| Error::row(path, line, format!("not a number: {v:?}")))?;
        }
        let m = PredictionMatrix::new(scores).map_err(|e| Error::row(path, line, e.to_string()))?;
        let id = rec.get(image_col).unwrap_or("").to_string();
        if out.insert(id.clone(), m).is_some() {
            return Err(Error::row(path, line, format!("duplicate image_id {id}")));
        }
    }
    Ok(out)
}

/// Reads per-image ground truth: `image_id` plus label columns coded
/// blank/0/-1/1.
pub fn load_gt_labels(path: &Path) -> Result<BTreeMap<String, LabelState>> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers()?.clone();
    let mut image_col = None;
    let mut cols = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if h == "image_id" {
            image_col = Some(i);
        } else {
            let l: Label = h
                .parse()
                .map_err(|_| Error::invalid_file(path, format!("unknown label column {h:?}")))?;
            cols.push((i, l));
        }
    }
    let image_col = image_col.ok_or_else(|| Error::invalid_file(path, "missing image_id column"))?;
    let mut out = BTreeMap::new();
    for (n, rec) in rdr.records().enumerate() {
        let line = n as u64 + 2;
        let rec = rec.map_err(|e| Error::row(path, line, e.to_string()))?;
        let mut s = LabelState::new();
        for &(i, l) in &cols {
            let v = rec.get(i).unwrap_or("");
            let c = Certainty::from_label_file_code(v)
                .ok_or_else(|| Error::row(path, line, format!("invalid value {v:?} for {l}")))?;
            s.set(l, c);
        }
        out.insert(rec.get(image_col).unwrap_or("").to_string(), s);
    }
    Ok(out)
}

/// Ground truth implied by the evaluation pairs: a pathology is present for
/// an image iff some pair marks it so.
pub fn gt_from_pairs(pairs: &[EvalPair]) -> BTreeMap<String, LabelState> {
    let mut out: BTreeMap<String, LabelState> = BTreeMap::new();
    for p in pairs {
        let s = out.entry(p.image_id.clone()).or_default();
        if p.gt_binary {
            s.set(p.diagnosis, Certainty::Positive);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc_weighted: Option<f64>,
    pub auc_per_pathology: Vec<PathologyAuc>,
    pub clev: Option<f64>,
    pub bleu1: Option<f64>,
    pub bleu2: Option<f64>,
    pub bleu3: Option<f64>,
    pub bleu4: Option<f64>,
    pub rouge_l: Option<f64>,
    pub meteor: Option<f64>,
    pub cider: Option<f64>,
    pub spice: Option<f64>,
    pub bertscore: Option<f64>,
    pub threshold: f64,
    pub n_pairs_total: usize,
    pub n_pairs_scored: usize,
    pub n_missing_predictions: usize,
    pub n_images_scored: usize,
}

impl MetricReport {
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
        let rows: [(&str, String); 16] = [
            ("AUC (weighted)", fmt(self.auc_weighted)),
            ("CLEV", fmt(self.clev)),
            ("BLEU-1", fmt(self.bleu1)),
            ("BLEU-2", fmt(self.bleu2)),
            ("BLEU-3", fmt(self.bleu3)),
            ("BLEU-4", fmt(self.bleu4)),
            ("ROUGE-L", fmt(self.rouge_l)),
            ("METEOR (lite)", fmt(self.meteor)),
            ("CIDEr", fmt(self.cider)),
            ("SPICE", fmt(self.spice)),
            ("BERTScore", fmt(self.bertscore)),
            ("threshold", format!("{}", self.threshold)),
            ("pairs total", self.n_pairs_total.to_string()),
            ("pairs scored", self.n_pairs_scored.to_string()),
            ("missing predictions", self.n_missing_predictions.to_string()),
            ("images scored (AUC)", self.n_images_scored.to_string()),
        ];
        let mut s = String::new();
        for (k, v) in rows {
            s.push_str(&format!("{k:<22} {v:>10}\n"));
        }
        for p in &self.auc_per_pathology {
            s.push_str(&format!(
                "  AUC {:<26} {:>10}  (support {})\n",
                p.label.name(),
                fmt(p.auc),
                p.support
            ));
        }
        s
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvaluateOptions {
    pub threshold: f64,
    pub pathologies: Pathologies,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        EvaluateOptions {
            threshold: DEFAULT_THRESHOLD,
            pathologies: Pathologies::default(),
        }
    }
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Scores predictions and explanations. `gt` defaults to [`gt_from_pairs`];
/// `label_text` labels explanation text for CLEV.
pub fn evaluate<F>(
    mut pairs: Vec<EvalPair>,
    predictions: &BTreeMap<String, PredictionMatrix>,
    gt: Option<&BTreeMap<String, LabelState>>,
    opts: &EvaluateOptions,
    label_text: F,
) -> Result<MetricReport>
where
    F: Fn(&str) -> LabelState,
{
    let n_total = pairs.len();
    let derived;
    let gt = match gt {
        Some(g) => g,
        None => {
            derived = gt_from_pairs(&pairs);
            &derived
        }
    };

    let mut n_missing = 0;
    pairs.retain_mut(|p| {
        let Some(m) = predictions.get(&p.image_id) else {
            n_missing += 1;
            return false;
        };
        match opts.pathologies.index_of(p.diagnosis) {
            Some(i) => {
                p.pred_score = Some(m.present_score(i));
                true
            }
            None => {
                n_missing += 1;
                false
            }
        }
    });
    if n_missing > 0 {
        log::warn!("{n_missing} evaluation pairs dropped: no prediction for image or diagnosis");
    }

    let images: Vec<(PredictionMatrix, LabelState)> = predictions
        .iter()
        .filter_map(|(id, m)| gt.get(id).map(|s| (*m, *s)))
        .collect();
    let auc = weighted_auc(&images, &opts.pathologies);
    for l in auc.excluded() {
        log::warn!("AUC: {l} lacks positive or negative examples; excluded");
    }

    let kept = filter_correct(&pairs, opts.threshold);
    let clev_score = clev(
        kept.iter().map(|p| (p.diagnosis, p.gt_nle.as_str(), p.gen_nle.as_str())),
        &label_text,
    );
    let cands: Vec<&str> = kept.iter().map(|p| p.gen_nle.as_str()).collect();
    let refs: Vec<&str> = kept.iter().map(|p| p.gt_nle.as_str()).collect();
    let nlg = score_texts(&cands, &refs)?;

    Ok(MetricReport {
        auc_weighted: auc.value,
        auc_per_pathology: auc.per_pathology,
        clev: clev_score,
        bleu1: nlg.map(|s| s.bleu[0]),
        bleu2: nlg.map(|s| s.bleu[1]),
        bleu3: nlg.map(|s| s.bleu[2]),
        bleu4: nlg.map(|s| s.bleu[3]),
        rouge_l: nlg.map(|s| s.rouge_l),
        meteor: nlg.map(|s| s.meteor),
        cider: nlg.map(|s| s.cider),
        spice: mean_of(kept.iter().map(|p| p.spice)),
        bertscore: mean_of(kept.iter().map(|p| p.bertscore)),
        threshold: opts.threshold,
        n_pairs_total: n_total,
        n_pairs_scored: kept.len(),
        n_missing_predictions: n_missing,
        n_images_scored: images.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(gt: bool, score: Option<f64>) -> EvalPair {
        EvalPair {
            image_id: "i".into(),
            diagnosis: Label::Edema,
            gt_nle: "a".into(),
            gen_nle: "b".into(),
            gt_binary: gt,
            pred_score: score,
            spice: None,
            bertscore: None,
        }
    }

    #[test]
    fn correct_prediction_filter() {
        assert_eq!(filter_correct(&[pair(true, Some(0.9))], 0.5).len(), 1);
        assert_eq!(filter_correct(&[pair(true, Some(0.2))], 0.5).len(), 0);
        assert_eq!(filter_correct(&[pair(false, Some(0.2))], 0.5).len(), 0);
        assert_eq!(filter_correct(&[pair(true, Some(0.5))], 0.5).len(), 1);
        assert_eq!(filter_correct(&[pair(true, None)], 0.5).len(), 0);
        assert!(filter_correct(&[], 0.5).is_empty());
    }

    #[test]
    fn column_names() {
        let c = prediction_columns();
        assert_eq!(c.len(), 30);
        assert_eq!(c[0], "negative_0");
        assert_eq!(c[10], "uncertain_0");
        assert_eq!(c[29], "positive_9");
    }

    #[test]
    fn eval_pair_json() {
        let p: EvalPair = serde_json::from_str(
            r#"{"image_id":"x","diagnosis":"Pleural Effusion","gt_nle":"a","gen_nle":"b","gt_binary":true,"spice":0.2}"#,
        )
        .unwrap();
        assert_eq!(p.diagnosis, Label::PleuralEffusion);
        assert_eq!(p.spice, Some(0.2));
        assert_eq!(p.pred_score, None);
    }
}
