//! The extraction funnel: sections, sentences, filters, keyword tagging,
//! labelling, rule matching, per-study de-duplication and expansion to
//! frontal images, plus dataset and statistics emission.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_ingest_errors, ImageMeta, IngestIssue, Report, Split, ViewPosition};
use crate::error::{Error, Result};
use crate::keywords::KeywordTagger;
use crate::label::{Certainty, Label, LabelState};
use crate::mention::Labeler;
use crate::rules::{Evidence, RuleEngine, RuleId, RuleMatch};
use crate::segment::{segment_report, Section, Sentence};

pub const STATS_SCHEMA_VERSION: u32 = 1;

/// One image-NLE pair; the unit of the JSONL dataset files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NleRecord {
    pub subject_id: String,
    pub study_id: String,
    pub image_id: String,
    pub view_position: ViewPosition,
    pub section: Section,
    pub sentence_index: usize,
    #[serde(rename = "nle")]
    pub nle_text: String,
    pub diagnosis: Vec<(Label, Certainty)>,
    pub evidence: Vec<Evidence>,
    pub rule_id: RuleId,
    pub keywords: Vec<String>,
    pub split: Split,
}

impl NleRecord {
    fn sort_key(&self) -> (&str, &str, Section, usize, &str) {
        (
            &self.subject_id,
            &self.study_id,
            self.section,
            self.sentence_index,
            &self.image_id,
        )
    }

    /// The label state implied by the stored diagnosis and evidence.
    pub fn implied_state(&self) -> LabelState {
        let mut s = LabelState::from_pairs(self.diagnosis.iter().copied());
        for e in &self.evidence {
            if let Evidence::Label(l) = e {
                s.set(*l, Certainty::Positive);
            }
        }
        s
    }
}

/// Sentence counts after each stage, in stage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FunnelStats {
    pub sentences_total: usize,
    pub after_anonymized_filter: usize,
    pub after_nondescriptive_filter: usize,
    pub rule_matched: usize,
    pub after_dedup: usize,
    pub after_frontal_restriction: usize,
}

impl FunnelStats {
    pub fn stages(&self) -> [(&'static str, usize); 6] {
        [
            ("sentences_total", self.sentences_total),
            ("after_anonymized_filter", self.after_anonymized_filter),
            ("after_nondescriptive_filter", self.after_nondescriptive_filter),
            ("rule_matched", self.rule_matched),
            ("after_dedup", self.after_dedup),
            ("after_frontal_restriction", self.after_frontal_restriction),
        ]
    }

    pub fn is_monotone(&self) -> bool {
        self.stages().windows(2).all(|w| w[1].1 <= w[0].1)
    }

    fn add(&mut self, o: &FunnelStats) {
        self.sentences_total += o.sentences_total;
        self.after_anonymized_filter += o.after_anonymized_filter;
        self.after_nondescriptive_filter += o.after_nondescriptive_filter;
        self.rule_matched += o.rule_matched;
        self.after_dedup += o.after_dedup;
        self.after_frontal_restriction += o.after_frontal_restriction;
    }
}

/// A rule-matched sentence before image expansion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub section: Section,
    pub sentence_index: usize,
    pub text: String,
    pub rule_match: RuleMatch,
    pub keywords: Vec<String>,
}

fn dedup_key(c: &Candidate, ignore_certainty: bool) -> (Vec<(Label, Option<Certainty>)>, Vec<Evidence>) {
    let mut dx: Vec<(Label, Option<Certainty>)> = c
        .rule_match
        .diagnosis
        .iter()
        .map(|&(l, cert)| (l, (!ignore_certainty).then_some(cert)))
        .collect();
    dx.sort();
    let mut ev = c.rule_match.evidence.clone();
    ev.sort();
    (dx, ev)
}

/// Keeps the first candidate (findings before impression, then sentence
/// order) for each distinct set of diagnosis and evidence labels.
pub fn dedup(mut candidates: Vec<Candidate>, ignore_certainty: bool) -> Vec<Candidate> {
    candidates.sort_by_key(|c| (c.section, c.sentence_index));
    let mut seen = HashSet::new();
    candidates.retain(|c| seen.insert(dedup_key(c, ignore_certainty)));
    candidates
}

/// One record per candidate and frontal (AP/PA) image of the study.
pub fn expand_per_image(report: &Report, candidates: &[Candidate]) -> Vec<NleRecord> {
    let mut frontal: Vec<&ImageMeta> = report.meta.frontal_images().collect();
    frontal.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let meta = &report.meta;
    candidates
        .iter()
        .flat_map(|c| {
            frontal.iter().map(move |img| NleRecord {
                subject_id: meta.subject_id.clone(),
                study_id: meta.study_id.clone(),
                image_id: img.image_id.clone(),
                view_position: img.view_position,
                section: c.section,
                sentence_index: c.sentence_index,
                nle_text: c.text.clone(),
                diagnosis: c.rule_match.diagnosis.clone(),
                evidence: c.rule_match.evidence.clone(),
                rule_id: c.rule_match.rule_id,
                keywords: c.keywords.clone(),
                split: meta.split,
            })
        })
        .collect()
}

#[derive(Debug, Default)]
struct ReportOutcome {
    funnel: FunnelStats,
    keyword_counts: BTreeMap<String, usize>,
    /// Surviving candidates, for the distribution tables.
    kept: Vec<Candidate>,
    records: Vec<NleRecord>,
}

pub struct Pipeline<'a> {
    pub tagger: &'a KeywordTagger,
    pub labeler: &'a dyn Labeler,
    pub rules: &'a RuleEngine,
    pub dedup_ignore_certainty: bool,
}

/// Result of a pipeline run, before anything is written.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    /// Ordered by (subject_id, study_id, section, sentence_index, image_id).
    pub records: Vec<NleRecord>,
    pub stats: DatasetStats,
}

impl Pipeline<'_> {
    fn candidate(&self, sentence: &Sentence, keywords: Vec<String>) -> Option<Candidate> {
        let state = self.labeler.label(sentence);
        let m = self.rules.match_rule(&state, !keywords.is_empty())?;
        Some(Candidate {
            section: sentence.section,
            sentence_index: sentence.index,
            text: sentence.text.clone(),
            rule_match: m,
            keywords,
        })
    }

    fn process_report(&self, report: &Report) -> ReportOutcome {
        let mut out = ReportOutcome::default();
        let mut candidates = Vec::new();
        for sentence in segment_report(report) {
            out.funnel.sentences_total += 1;
            let tags = self.tagger.tag(&sentence.text);
            for kw in tags.keywords() {
                *out.keyword_counts.entry(kw).or_default() += 1;
            }
            match tags.filter_reason {
                Some(crate::keywords::FilterReason::Anonymized) => continue,
                Some(_) => {
                    out.funnel.after_anonymized_filter += 1;
                    continue;
                }
                None => {
                    out.funnel.after_anonymized_filter += 1;
                    out.funnel.after_nondescriptive_filter += 1;
                }
            }
            if let Some(c) = self.candidate(&sentence, tags.keywords()) {
                candidates.push(c);
            }
        }
        out.funnel.rule_matched = candidates.len();
        let kept = dedup(candidates, self.dedup_ignore_certainty);
        out.funnel.after_dedup = kept.len();
        if report.meta.frontal_images().next().is_some() {
            out.funnel.after_frontal_restriction = kept.len();
            out.records = expand_per_image(report, &kept);
            out.kept = kept;
        }
        out
    }

    /// Runs the funnel over `reports` on the current rayon pool. Output is
    /// identical for any thread count and any input order.
    pub fn run(&self, reports: &[Report]) -> PipelineOutput {
        let outcomes: Vec<ReportOutcome> = reports.par_iter().map(|r| self.process_report(r)).collect();
        let mut funnel = FunnelStats::default();
        let mut keyword_counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut kept = Vec::new();
        let mut records = Vec::new();
        for o in outcomes {
            funnel.add(&o.funnel);
            for (k, n) in o.keyword_counts {
                *keyword_counts.entry(k).or_default() += n;
            }
            kept.extend(o.kept);
            records.extend(o.records);
        }
        records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        let stats = DatasetStats::build(
            reports.len(),
            reports.iter().filter(|r| r.is_skipped()).count(),
            funnel,
            &kept,
            &records,
            keyword_counts,
        );
        PipelineOutput { records, stats }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombinationCount {
    pub labels: Vec<String>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordCount {
    pub keyword: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReportCounts {
    pub total: usize,
    pub skipped_no_sections: usize,
    pub ingest_errors: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RecordCounts {
    pub nle_sentences: usize,
    pub image_nle_pairs: usize,
    pub image_diagnosis_nle_triplets: usize,
    pub by_split: BTreeMap<Split, usize>,
}

/// Contents of `stats.json`. Combination and keyword tables are sorted by
/// descending count, ties by name. Combination tables count surviving NLE
/// sentences; the keyword table counts all segmented sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub schema_version: u32,
    pub reports: ReportCounts,
    pub funnel: FunnelStats,
    pub records: RecordCounts,
    pub diagnosis_combinations: Vec<CombinationCount>,
    pub evidence_combinations: Vec<CombinationCount>,
    pub explanation_keywords: Vec<KeywordCount>,
}

fn ranked(counts: BTreeMap<Vec<String>, usize>) -> Vec<CombinationCount> {
    let mut v: Vec<CombinationCount> = counts
        .into_iter()
        .map(|(labels, count)| CombinationCount { labels, count })
        .collect();
    v.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.labels.cmp(&b.labels)));
    v
}

impl DatasetStats {
    fn build(
        total_reports: usize,
        skipped: usize,
        funnel: FunnelStats,
        kept: &[Candidate],
        records: &[NleRecord],
        keyword_counts: BTreeMap<String, usize>,
    ) -> Self {
        let mut dx: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        let mut ev: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        for c in kept {
            let d = c.rule_match.diagnosis.iter().map(|(l, _)| l.name().to_string()).collect();
            *dx.entry(d).or_default() += 1;
            let e = c.rule_match.evidence.iter().map(|e| e.as_str().to_string()).collect();
            *ev.entry(e).or_default() += 1;
        }
        let mut keywords: Vec<KeywordCount> = keyword_counts
            .into_iter()
            .map(|(keyword, count)| KeywordCount { keyword, count })
            .collect();
        keywords.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.keyword.cmp(&b.keyword)));

        let mut by_split: BTreeMap<Split, usize> = Split::ALL.iter().map(|&s| (s, 0)).collect();
        for r in records {
            *by_split.entry(r.split).or_default() += 1;
        }
        DatasetStats {
            schema_version: STATS_SCHEMA_VERSION,
            reports: ReportCounts {
                total: total_reports,
                skipped_no_sections: skipped,
                ingest_errors: 0,
            },
            funnel,
            records: RecordCounts {
                nle_sentences: kept.len(),
                image_nle_pairs: records.len(),
                image_diagnosis_nle_triplets: records.iter().map(|r| r.diagnosis.len()).sum(),
                by_split,
            },
            diagnosis_combinations: ranked(dx),
            evidence_combinations: ranked(ev),
            explanation_keywords: keywords,
        }
    }

    /// Rebuilds the record-derived tables from dataset records alone (one
    /// count per distinct study sentence). Funnel and keyword tables need
    /// the corpus and are left empty.
    pub fn from_records(records: &[NleRecord]) -> Self {
        let mut seen = HashSet::new();
        let kept: Vec<Candidate> = records
            .iter()
            .filter(|r| seen.insert((r.study_id.clone(), r.section, r.sentence_index)))
            .map(|r| Candidate {
                section: r.section,
                sentence_index: r.sentence_index,
                text: r.nle_text.clone(),
                rule_match: RuleMatch {
                    rule_id: r.rule_id,
                    diagnosis: r.diagnosis.clone(),
                    evidence: r.evidence.clone(),
                },
                keywords: r.keywords.clone(),
            })
            .collect();
        DatasetStats::build(0, 0, FunnelStats::default(), &kept, records, BTreeMap::new())
    }

    /// Plain-text rendering of the funnel and distribution tables.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str("Funnel\n");
        for (name, n) in self.funnel.stages() {
            s.push_str(&format!("  {name:<30} {n:>10}\n"));
        }
        s.push_str(&format!(
            "Records\n  {:<30} {:>10}\n  {:<30} {:>10}\n  {:<30} {:>10}\n",
            "nle_sentences",
            self.records.nle_sentences,
            "image_nle_pairs",
            self.records.image_nle_pairs,
            "image_diagnosis_nle_triplets",
            self.records.image_diagnosis_nle_triplets
        ));
        for (split, n) in &self.records.by_split {
            s.push_str(&format!("  {:<30} {n:>10}\n", format!("split {split}")));
        }
        let combos = |title: &str, rows: &[CombinationCount], s: &mut String| {
            s.push_str(title);
            s.push('\n');
            for c in rows {
                s.push_str(&format!("  {:<48} {:>8}\n", c.labels.join(", "), c.count));
            }
        };
        combos("Diagnosis labels", &self.diagnosis_combinations, &mut s);
        combos("Evidence labels", &self.evidence_combinations, &mut s);
        if !self.explanation_keywords.is_empty() {
            s.push_str("Explanation keywords\n");
            for k in &self.explanation_keywords {
                s.push_str(&format!("  {:<48} {:>8}\n", k.keyword, k.count));
            }
        }
        s
    }
}

pub fn split_file_name(split: Split) -> String {
    format!("mimic_nle_{split}.jsonl")
}

/// Paths written by [`write_outputs`].
#[derive(Debug, Clone)]
pub struct WrittenFiles {
    pub jsonl: Vec<PathBuf>,
    pub triplets: PathBuf,
    pub stats: PathBuf,
    pub ingest_errors: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Writes the per-split JSONL files, `triplets.csv`, `stats.json` and
/// `ingest_errors.csv` into `out_dir`.
pub fn write_outputs(out_dir: &Path, output: &PipelineOutput, issues: &[IngestIssue]) -> Result<WrittenFiles> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut jsonl = Vec::new();
    for split in Split::ALL {
        let path = out_dir.join(split_file_name(split));
        let mut w = create(&path)?;
        for r in output.records.iter().filter(|r| r.split == split) {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        jsonl.push(path);
    }

    let triplets = out_dir.join("triplets.csv");
    let mut tw = csv::Writer::from_writer(create(&triplets)?);
    tw.write_record([
        "subject_id",
        "study_id",
        "image_id",
        "view_position",
        "section",
        "sentence_index",
        "diagnosis",
        "certainty",
        "evidence",
        "rule_id",
        "split",
        "nle",
    ])?;
    for r in &output.records {
        let evidence: Vec<&str> = r.evidence.iter().map(|e| e.as_str()).collect();
        for (label, certainty) in &r.diagnosis {
            tw.write_record([
                r.subject_id.as_str(),
                r.study_id.as_str(),
                r.image_id.as_str(),
                r.view_position.as_str(),
                r.section.as_str(),
                &r.sentence_index.to_string(),
                label.name(),
                certainty.as_str(),
                &evidence.join(";"),
                &r.rule_id.to_string(),
                r.split.as_str(),
                r.nle_text.as_str(),
            ])?;
        }
    }
    tw.flush().map_err(|e| Error::io(&triplets, e))?;

    let mut stats = output.stats.clone();
    stats.reports.ingest_errors = issues.len();
    let stats_path = out_dir.join("stats.json");
    let mut sw = create(&stats_path)?;
    serde_json::to_writer_pretty(&mut sw, &stats)?;
    sw.write_all(b"\n").map_err(|e| Error::io(&stats_path, e))?;
    sw.flush().map_err(|e| Error::io(&stats_path, e))?;

    let ingest_errors = out_dir.join("ingest_errors.csv");
    write_ingest_errors(&ingest_errors, issues)?;
    Ok(WrittenFiles {
        jsonl,
        triplets,
        stats: stats_path,
        ingest_errors,
    })
}

pub fn read_jsonl(path: &Path) -> Result<Vec<NleRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::row(path, i as u64 + 1, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

/// Reads every `mimic_nle_*.jsonl` in `dir`, in split order.
pub fn read_dataset(dir: &Path) -> Result<Vec<NleRecord>> {
    let mut out = Vec::new();
    for split in Split::ALL {
        let p = dir.join(split_file_name(split));
        if p.exists() {
            out.extend(read_jsonl(&p)?);
        }
    }
    Ok(out)
}
