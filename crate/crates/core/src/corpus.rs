//! Corpus loading and Findings/Impression section extraction.
//!
//! The default layout mirrors MIMIC-CXR: `<root>/.../p<subject>/s<study>.txt`,
//! one report per study. A manifest CSV (`study_id,path[,subject_id]`) can be
//! given instead for corpora with another layout.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViewPosition {
    AP,
    PA,
    #[serde(rename = "LATERAL")]
    Lateral,
    #[serde(rename = "OTHER")]
    Other,
}

impl ViewPosition {
    pub fn is_frontal(self) -> bool {
        matches!(self, ViewPosition::AP | ViewPosition::PA)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ViewPosition::AP => "AP",
            ViewPosition::PA => "PA",
            ViewPosition::Lateral => "LATERAL",
            ViewPosition::Other => "OTHER",
        }
    }

    /// Parses a metadata value. Anything unrecognised (including MIMIC's
    /// `AP AXIAL`, `LAO`, blanks) is `Other`; `LL` is a lateral view.
    pub fn parse_lenient(s: &str) -> ViewPosition {
        match s.trim().to_ascii_uppercase().as_str() {
            "AP" => ViewPosition::AP,
            "PA" => ViewPosition::PA,
            "LATERAL" | "LL" => ViewPosition::Lateral,
            _ => ViewPosition::Other,
        }
    }
}

impl fmt::Display for ViewPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
    #[default]
    Unassigned,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Dev, Split::Test, Split::Unassigned];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            // MIMIC-CXR calls the dev split "validate".
            "dev" | "validate" | "validation" | "val" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            "" | "unassigned" => Ok(Split::Unassigned),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub image_id: String,
    pub view_position: ViewPosition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyMeta {
    pub subject_id: String,
    pub study_id: String,
    /// Sorted by `image_id`.
    pub images: Vec<ImageMeta>,
    pub split: Split,
}

impl StudyMeta {
    pub fn frontal_images(&self) -> impl Iterator<Item = &ImageMeta> {
        self.images.iter().filter(|i| i.view_position.is_frontal())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub meta: StudyMeta,
    pub raw_text: String,
    pub findings: Option<String>,
    pub impression: Option<String>,
}

impl Report {
    /// Builds a report and extracts its sections from `raw_text`.
    pub fn new(meta: StudyMeta, raw_text: String) -> Self {
        let sections = extract_sections(&raw_text);
        let findings = sections.findings.map(str::to_owned);
        let impression = sections.impression.map(str::to_owned);
        Report {
            meta,
            raw_text,
            findings,
            impression,
        }
    }

    /// A report with neither a Findings nor an Impression section.
    pub fn is_skipped(&self) -> bool {
        self.findings.is_none() && self.impression.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Sections<'a> {
    pub findings: Option<&'a str>,
    pub impression: Option<&'a str>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum HeaderKind {
    Findings,
    Impression,
    Other,
}

fn header_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)\b(findings?|impressions?|comparisons?|indications?|technique|clinical history|history|examination|notification|recommendations?(?:\(s\))?|reason for exam(?:ination)?)[ \t]*:",
        )
        .expect("header regex")
    })
}

/// Headers count when they start a line, or anywhere when written in capitals
/// (reports flattened onto one line keep their upper-case headers).
fn headers(raw: &str) -> Vec<(HeaderKind, usize, usize)> {
    header_regex()
        .captures_iter(raw)
        .filter_map(|caps| {
            let whole = caps.get(0)?;
            let word = caps.get(1)?;
            let line_start = raw[..whole.start()]
                .rsplit('\n')
                .next()
                .is_none_or(|prefix| prefix.trim().is_empty());
            let upper = word
                .as_str()
                .chars()
                .all(|c| !c.is_ascii_lowercase());
            if !(line_start || upper) {
                return None;
            }
            let lower = word.as_str().to_ascii_lowercase();
            let kind = if lower.starts_with("finding") {
                HeaderKind::Findings
            } else if lower.starts_with("impression") {
                HeaderKind::Impression
            } else {
                HeaderKind::Other
            };
            Some((kind, whole.start(), whole.end()))
        })
        .collect()
}

/// Byte ranges of the Findings and Impression bodies within `raw`, trimmed.
///
/// Each section runs from its (first) header to the next recognised header
/// or the end of text. Empty bodies count as absent.
pub fn section_spans(raw: &str) -> (Option<Range<usize>>, Option<Range<usize>>) {
    let hs = headers(raw);
    let span_for = |want: HeaderKind| -> Option<Range<usize>> {
        let idx = hs.iter().position(|(k, _, _)| *k == want)?;
        let start = hs[idx].2;
        let end = hs.get(idx + 1).map_or(raw.len(), |h| h.1);
        let body = &raw[start..end];
        let lead = body.len() - body.trim_start().len();
        let trimmed = body.trim();
        if trimmed.is_empty() {
            None
        } else {
            Some(start + lead..start + lead + trimmed.len())
        }
    };
    (span_for(HeaderKind::Findings), span_for(HeaderKind::Impression))
}

pub fn extract_sections(raw: &str) -> Sections<'_> {
    let (f, i) = section_spans(raw);
    Sections {
        findings: f.map(|r| &raw[r]),
        impression: i.map(|r| &raw[r]),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueReason {
    Unreadable,
    NoSections,
    DuplicateStudy,
}

impl IssueReason {
    pub fn as_str(self) -> &'static str {
        match self {
            IssueReason::Unreadable => "unreadable",
            IssueReason::NoSections => "no_sections",
            IssueReason::DuplicateStudy => "duplicate_study",
        }
    }
}

/// A study that was skipped or could not be read. Loading continues past these.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct IngestIssue {
    pub subject_id: String,
    pub study_id: String,
    pub path: PathBuf,
    pub reason: IssueReason,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct CorpusPaths {
    pub report_root: PathBuf,
    pub metadata: Option<PathBuf>,
    pub splits: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedCorpus {
    /// Sorted by `(subject_id, study_id)`; includes skipped reports.
    pub reports: Vec<Report>,
    pub issues: Vec<IngestIssue>,
}

impl LoadedCorpus {
    pub fn skipped(&self) -> usize {
        self.reports.iter().filter(|r| r.is_skipped()).count()
    }
}

#[derive(Debug, Clone)]
struct StudyFile {
    subject_id: String,
    study_id: String,
    path: PathBuf,
}

#[derive(Debug, Deserialize)]
struct MetadataRow {
    #[serde(alias = "dicom_id")]
    image_id: String,
    study_id: String,
    #[serde(default)]
    subject_id: Option<String>,
    #[serde(alias = "ViewPosition", default)]
    view_position: Option<String>,
}

#[derive(Debug, Deserialize)]
struct SplitRow {
    study_id: String,
    split: String,
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    study_id: String,
    path: PathBuf,
    #[serde(default)]
    subject_id: Option<String>,
}

/// Strips the `s`/`p` prefix MIMIC-CXR puts on directory and file names, so
/// ids match the bare numbers used in its CSVs.
fn strip_id_prefix(s: &str, prefix: char) -> &str {
    match s.strip_prefix(prefix) {
        Some(rest) if !rest.is_empty() => rest,
        _ => s,
    }
}

fn normalize_id(s: &str) -> String {
    s.trim().to_string()
}

pub(crate) fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn row_number(err: &csv::Error, fallback: u64) -> u64 {
    err.position().map_or(fallback, |p| p.line())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(u64, T)>> {
    let mut rdr = csv_reader(path)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<T>().enumerate() {
        // header is line 1
        let fallback = i as u64 + 2;
        match rec {
            Ok(row) => rows.push((fallback, row)),
            Err(e) => {
                let line = row_number(&e, fallback);
                return Err(Error::row(path, line, e.to_string()));
            }
        }
    }
    Ok(rows)
}

struct Metadata {
    images: HashMap<String, Vec<ImageMeta>>,
    subjects: HashMap<String, String>,
}

fn load_metadata(path: &Path) -> Result<Metadata> {
    let mut images: HashMap<String, Vec<ImageMeta>> = HashMap::new();
    let mut subjects = HashMap::new();
    for (line, row) in read_rows::<MetadataRow>(path)? {
        let study_id = normalize_id(&row.study_id);
        if study_id.is_empty() || row.image_id.trim().is_empty() {
            return Err(Error::row(path, line, "empty image_id or study_id"));
        }
        let view = ViewPosition::parse_lenient(row.view_position.as_deref().unwrap_or(""));
        let list = images.entry(study_id.clone()).or_default();
        if list.iter().any(|i| i.image_id == row.image_id) {
            return Err(Error::row(
                path,
                line,
                format!("duplicate image_id {} in study {study_id}", row.image_id),
            ));
        }
        list.push(ImageMeta {
            image_id: row.image_id,
            view_position: view,
        });
        if let Some(subject) = row.subject_id.filter(|s| !s.trim().is_empty()) {
            subjects.insert(study_id, normalize_id(&subject));
        }
    }
    for list in images.values_mut() {
        list.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    }
    Ok(Metadata { images, subjects })
}

fn load_splits(path: &Path) -> Result<HashMap<String, Split>> {
    let mut splits = HashMap::new();
    for (line, row) in read_rows::<SplitRow>(path)? {
        let split: Split = row.split.parse().map_err(|m| Error::row(path, line, m))?;
        let study = normalize_id(&row.study_id);
        // MIMIC's split file is per image, so a study repeats with one split.
        if let Some(prev) = splits.insert(study.clone(), split) {
            if prev != split {
                return Err(Error::row(
                    path,
                    line,
                    format!("study {study} assigned to both {prev} and {split}"),
                ));
            }
        }
    }
    Ok(splits)
}

fn discover_files(root: &Path) -> Result<Vec<StudyFile>> {
    if !root.is_dir() {
        return Err(Error::invalid_file(root, "report root is not a directory"));
    }
    let mut files = Vec::new();
    for entry in WalkDir::new(root).follow_links(true) {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            Error::io(path, e.into())
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let study_id = strip_id_prefix(stem, 's').to_string();
        let subject_id = path
            .parent()
            .filter(|p| p != &root)
            .and_then(|p| p.file_name())
            .and_then(|n| n.to_str())
            .map(|n| strip_id_prefix(n, 'p').to_string())
            .unwrap_or_default();
        files.push(StudyFile {
            subject_id,
            study_id,
            path: path.to_path_buf(),
        });
    }
    Ok(files)
}

fn manifest_files(root: &Path, manifest: &Path) -> Result<Vec<StudyFile>> {
    Ok(read_rows::<ManifestRow>(manifest)?
        .into_iter()
        .map(|(_, row)| StudyFile {
            subject_id: row.subject_id.map(|s| normalize_id(&s)).unwrap_or_default(),
            study_id: normalize_id(&row.study_id),
            path: if row.path.is_absolute() {
                row.path
            } else {
                root.join(row.path)
            },
        })
        .collect())
}

/// Loads every study under `paths.report_root`.
///
/// Unreadable files and reports with neither section become [`IngestIssue`]s;
/// a malformed CSV row is fatal. Output order is `(subject_id, study_id)`
/// whatever the filesystem enumeration order or thread count.
pub fn load_corpus(paths: &CorpusPaths) -> Result<LoadedCorpus> {
    let mut files = match &paths.manifest {
        Some(m) => manifest_files(&paths.report_root, m)?,
        None => discover_files(&paths.report_root)?,
    };
    let metadata = match &paths.metadata {
        Some(p) => Some(load_metadata(p)?),
        None => None,
    };
    let splits = match &paths.splits {
        Some(p) => load_splits(p)?,
        None => HashMap::new(),
    };

    if let Some(md) = &metadata {
        for f in &mut files {
            if let Some(subject) = md.subjects.get(&f.study_id) {
                f.subject_id = subject.clone();
            }
        }
    }
    files.sort_by(|a, b| {
        (&a.subject_id, &a.study_id, &a.path).cmp(&(&b.subject_id, &b.study_id, &b.path))
    });

    let rel = |p: &Path| p.strip_prefix(&paths.report_root).unwrap_or(p).to_path_buf();
    let mut issues = Vec::new();
    let mut unique: BTreeMap<(String, String), StudyFile> = BTreeMap::new();
    let mut seen_study: HashMap<String, PathBuf> = HashMap::new();
    for f in files {
        if let Some(first) = seen_study.get(&f.study_id) {
            issues.push(IngestIssue {
                subject_id: f.subject_id.clone(),
                study_id: f.study_id.clone(),
                path: rel(&f.path),
                reason: IssueReason::DuplicateStudy,
                detail: format!("already loaded from {}", rel(first).display()),
            });
            continue;
        }
        seen_study.insert(f.study_id.clone(), f.path.clone());
        unique.insert((f.subject_id.clone(), f.study_id.clone()), f);
    }

    let loaded: Vec<std::result::Result<(Report, PathBuf), IngestIssue>> = unique
        .into_values()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|f| {
            let text = fs::read_to_string(&f.path).map_err(|e| IngestIssue {
                subject_id: f.subject_id.clone(),
                study_id: f.study_id.clone(),
                path: rel(&f.path),
                reason: IssueReason::Unreadable,
                detail: e.to_string(),
            })?;
            let images = metadata
                .as_ref()
                .and_then(|md| md.images.get(&f.study_id))
                .cloned()
                .unwrap_or_default();
            let split = splits.get(&f.study_id).copied().unwrap_or_default();
            let meta = StudyMeta {
                subject_id: f.subject_id,
                study_id: f.study_id,
                images,
                split,
            };
            Ok((Report::new(meta, text), rel(&f.path)))
        })
        .collect();

    let mut reports = Vec::with_capacity(loaded.len());
    for item in loaded {
        match item {
            Ok((r, path)) => {
                if r.is_skipped() {
                    issues.push(IngestIssue {
                        subject_id: r.meta.subject_id.clone(),
                        study_id: r.meta.study_id.clone(),
                        path,
                        reason: IssueReason::NoSections,
                        detail: "neither FINDINGS nor IMPRESSION header found".into(),
                    });
                }
                reports.push(r);
            }
            Err(issue) => issues.push(issue),
        }
    }
    issues.sort();
    Ok(LoadedCorpus { reports, issues })
}

/// Writes `ingest_errors.csv` with columns `subject_id,study_id,reason,path,detail`.
pub fn write_ingest_errors(path: &Path, issues: &[IngestIssue]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["subject_id", "study_id", "reason", "path", "detail"])?;
    for i in issues {
        w.write_record([
            i.subject_id.as_str(),
            i.study_id.as_str(),
            i.reason.as_str(),
            &i.path.display().to_string(),
            i.detail.as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn both_sections_on_one_line() {
        let s = extract_sections("FINDINGS: A. IMPRESSION: B.");
        assert_eq!(s.findings, Some("A."));
        assert_eq!(s.impression, Some("B."));
    }

    #[test]
    fn no_headers() {
        let s = extract_sections("Chest radiograph shows nothing of note.");
        assert_eq!(s, Sections::default());
    }

    #[test]
    fn impression_only() {
        let s = extract_sections("IMPRESSION: only impression.");
        assert_eq!(s.findings, None);
        assert_eq!(s.impression, Some("only impression."));
    }

    #[test]
    fn other_headers_terminate_sections() {
        let raw = "                                 FINAL REPORT\n EXAMINATION:  CHEST (PA AND LAT)\n\n \
                   INDICATION:  ___ with cough\n\n COMPARISON:  None.\n\n FINDINGS:\n \n There is a left \n effusion.\n\n \
                   IMPRESSION:\n \n Left effusion.\n\n NOTIFICATION: discussed with Dr. ___.\n";
        let s = extract_sections(raw);
        assert_eq!(s.findings, Some("There is a left \n effusion."));
        assert_eq!(s.impression, Some("Left effusion."));
    }

    #[test]
    fn lowercase_header_only_at_line_start() {
        let s = extract_sections("findings: clear.\nThe impression: is odd.");
        assert_eq!(s.findings, Some("clear.\nThe impression: is odd."));
        assert_eq!(s.impression, None);
        let s = extract_sections("Findings : a\nimpression:b");
        assert_eq!(s.findings, Some("a"));
        assert_eq!(s.impression, Some("b"));
    }

    #[test]
    fn empty_body_is_absent() {
        let s = extract_sections("FINDINGS:\n\nIMPRESSION: x");
        assert_eq!(s.findings, None);
        assert_eq!(s.impression, Some("x"));
    }

    #[test]
    fn view_positions() {
        assert_eq!(ViewPosition::parse_lenient("ap"), ViewPosition::AP);
        assert_eq!(ViewPosition::parse_lenient("LL"), ViewPosition::Lateral);
        assert_eq!(ViewPosition::parse_lenient("AP AXIAL"), ViewPosition::Other);
        assert_eq!(ViewPosition::parse_lenient(""), ViewPosition::Other);
    }

    #[test]
    fn split_aliases() {
        assert_eq!("validate".parse::<Split>(), Ok(Split::Dev));
        assert!("holdout".parse::<Split>().is_err());
    }

    fn text_strategy() -> impl Strategy<Value = String> {
        let pieces = prop::collection::vec(
            prop_oneof![
                Just("FINDINGS:".to_string()),
                Just("IMPRESSION:".to_string()),
                Just("impression:".to_string()),
                Just("COMPARISON:".to_string()),
                Just("\n".to_string()),
                Just(" ".to_string()),
                "[a-z .]{0,12}",
            ],
            0..12,
        );
        pieces.prop_map(|p| p.concat())
    }

    proptest! {
        #[test]
        fn sections_are_disjoint_substrings(raw in text_strategy()) {
            let (f, i) = section_spans(&raw);
            if let (Some(f), Some(i)) = (&f, &i) {
                prop_assert!(f.end <= i.start || i.end <= f.start);
            }
            let s = extract_sections(&raw);
            prop_assert_eq!(s, extract_sections(&raw));
            if let Some(f) = s.findings { prop_assert!(raw.contains(f)); }
            if let Some(i) = s.impression { prop_assert!(raw.contains(i)); }
        }
    }
}
