//! Per-sentence label extraction.
//!
//! Two interchangeable sources implement [`Labeler`]: [`BuiltinLabeler`], a
//! deterministic phrase/cue matcher in the NegBio style, and
//! [`ExternalLabels`], precomputed labels (for example CheXbert output)
//! keyed by `(study_id, section, sentence_index)`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::corpus::csv_reader;
use crate::error::{Error, Result};
use crate::label::{Certainty, Label, LabelState};
use crate::segment::{tokenize, Section, Sentence};

/// Maximum number of tokens a `*` in a mention phrase may stand for.
pub const MAX_GAP: usize = 3;

/// How many tokens may separate a mention from an adjacent "or".
const OR_WINDOW: usize = 2;

pub trait Labeler: Sync {
    fn label(&self, sentence: &Sentence) -> LabelState;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MentionLexicon {
    /// Phrases per label. Phrases are tokenised like sentence text; a `*`
    /// token matches up to [`MAX_GAP`] tokens within one clause. The No
    /// Finding list holds "clear lungs" style phrases.
    pub labels: BTreeMap<Label, Vec<String>>,
    pub negation: Vec<String>,
    pub uncertainty: Vec<String>,
}

fn owned(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for MentionLexicon {
    fn default() -> Self {
        use Label::*;
        let labels: BTreeMap<Label, Vec<String>> = [
            (
                EnlargedCardiomediastinum,
                owned(&[
                    "widened mediastinum",
                    "enlarged mediastinum",
                    "mediastinal widening",
                    "mediastinal enlargement",
                    "widening of the mediastinum",
                    "mediastinum * widened",
                    "enlarged cardiomediastinal silhouette",
                    "widened cardiomediastinal silhouette",
                    "cardiomediastinal silhouette * enlarged",
                    "cardiomediastinal silhouette * widened",
                    "enlargement of the cardiomediastinal silhouette",
                ]),
            ),
            (
                Cardiomegaly,
                owned(&[
                    "cardiomegaly",
                    "enlarged heart",
                    "heart * enlarged",
                    "enlarged cardiac silhouette",
                    "cardiac silhouette * enlarged",
                    "enlargement of the cardiac silhouette",
                ]),
            ),
            (
                LungOpacity,
                owned(&[
                    "opacity",
                    "opacities",
                    "opacification",
                    "opacifications",
                    "opacified",
                    "density",
                    "densities",
                    "infiltrate",
                    "infiltrates",
                    "infiltration",
                    "airspace disease",
                    "air space disease",
                    "haziness",
                    "scarring",
                    "interstitial markings",
                ]),
            ),
            (
                LungLesion,
                owned(&[
                    "nodule",
                    "nodules",
                    "mass",
                    "masses",
                    "lesion",
                    "lesions",
                    "tumor",
                    "neoplasm",
                    "carcinoma",
                    "malignancy",
                    "granuloma",
                    "granulomas",
                ]),
            ),
            (
                Edema,
                owned(&[
                    "edema",
                    "vascular congestion",
                    "pulmonary congestion",
                    "heart failure",
                    "chf",
                    "fluid overload",
                    "volume overload",
                ]),
            ),
            (
                Consolidation,
                owned(&["consolidation", "consolidations", "consolidative", "consolidated"]),
            ),
            (
                Pneumonia,
                owned(&["pneumonia", "pneumonias", "infection", "infectious process", "infectious"]),
            ),
            (
                Atelectasis,
                owned(&["atelectasis", "atelectatic", "collapse", "collapsed", "volume loss"]),
            ),
            (
                Pneumothorax,
                owned(&["pneumothorax", "pneumothoraces", "pneumothoraxes", "ptx"]),
            ),
            (
                PleuralEffusion,
                owned(&[
                    "effusion",
                    "effusions",
                    "pleural effusion",
                    "pleural effusions",
                    "pleural fluid",
                    "hydrothorax",
                ]),
            ),
            (
                PleuralOther,
                owned(&[
                    "pleural thickening",
                    "pleural plaque",
                    "pleural plaques",
                    "pleural scarring",
                    "pleural calcification",
                    "pleural calcifications",
                    "fibrothorax",
                ]),
            ),
            (Fracture, owned(&["fracture", "fractures", "fractured"])),
            (
                SupportDevices,
                owned(&[
                    "tube",
                    "tubes",
                    "catheter",
                    "catheters",
                    "central line",
                    "picc",
                    "pacemaker",
                    "pacer",
                    "icd",
                    "stent",
                    "stents",
                    "drain",
                    "port-a-cath",
                    "sternotomy wires",
                ]),
            ),
            (
                NoFinding,
                owned(&[
                    "lungs are clear",
                    "lungs clear",
                    "clear lungs",
                    "lungs are well expanded and clear",
                    "no acute cardiopulmonary process",
                    "no acute cardiopulmonary abnormality",
                    "no acute cardiopulmonary disease",
                    "no acute intrathoracic process",
                ]),
            ),
        ]
        .into_iter()
        .collect();
        MentionLexicon {
            labels,
            negation: owned(&[
                "no",
                "without",
                "free of",
                "clear of",
                "resolved",
                "negative for",
                "rather than",
            ]),
            uncertainty: owned(&[
                "may",
                "might",
                "possible",
                "possibly",
                "question",
                "cannot exclude",
                "cannot be excluded",
                "likely",
                "suspected",
                "suspicious",
                "concerning",
                "borderline",
                "versus",
                "vs",
            ]),
        }
    }
}

impl MentionLexicon {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let lex: MentionLexicon =
            toml::from_str(s).map_err(|e| Error::InvalidLexicon(e.to_string()))?;
        lex.validate()?;
        Ok(lex)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s).map_err(|e| Error::invalid_file(path, e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let mut owner: HashMap<&str, Label> = HashMap::new();
        let all_phrases = self
            .labels
            .iter()
            .flat_map(|(l, ps)| ps.iter().map(move |p| (Some(*l), p)))
            .chain(self.negation.iter().map(|p| (None, p)))
            .chain(self.uncertainty.iter().map(|p| (None, p)));
        for (label, p) in all_phrases {
            if p.chars().any(char::is_uppercase) {
                return Err(Error::InvalidLexicon(format!("phrase {p:?} is not lowercase")));
            }
            let toks = tokenize(p);
            if toks.is_empty() || toks[0] == "*" || toks.last().is_some_and(|t| t == "*") {
                return Err(Error::InvalidLexicon(format!(
                    "phrase {p:?} is empty or starts/ends with a gap"
                )));
            }
            if let Some(label) = label {
                if let Some(prev) = owner.insert(p.as_str(), label) {
                    if prev != label {
                        return Err(Error::InvalidLexicon(format!(
                            "phrase {p:?} assigned to both {prev} and {label}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum PatTok {
    Word(String),
    Gap,
}

#[derive(Debug, Clone)]
struct Pattern {
    label: Label,
    source: String,
    toks: Vec<PatTok>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Span {
    start: usize,
    end: usize,
}

#[derive(Debug, Clone, Copy)]
struct Mention {
    label: Label,
    span: Span,
}

fn is_clause_boundary(tok: &str) -> bool {
    matches!(tok, "," | ";" | ":" | "." | "!" | "?" | "but" | "however")
}

/// Clause number of every token; boundary tokens open a new clause.
fn clause_ids(tokens: &[String]) -> Vec<usize> {
    clause_ids_joining_lists(tokens, &[])
}

/// As [`clause_ids`], except that a comma followed (after any conjunction)
/// by one of `mention_starts` continues the clause, so that "no a, b, or c"
/// keeps one scope.
fn clause_ids_joining_lists(tokens: &[String], mention_starts: &[usize]) -> Vec<usize> {
    let continues_list = |k: usize| {
        let mut j = k + 1;
        while j < tokens.len() && matches!(tokens[j].as_str(), "and" | "or" | "nor" | "and/or") {
            j += 1;
        }
        mention_starts.contains(&j)
    };
    let mut id = 0;
    tokens
        .iter()
        .enumerate()
        .map(|(k, t)| {
            if is_clause_boundary(t) && !(t == "," && continues_list(k)) {
                id += 1;
            }
            id
        })
        .collect()
}

/// Deterministic pattern labeler.
#[derive(Debug, Clone)]
pub struct BuiltinLabeler {
    by_first: HashMap<String, Vec<Pattern>>,
    negation: Vec<Vec<String>>,
    uncertainty: Vec<Vec<String>>,
    negation_words: Vec<String>,
}

impl Default for BuiltinLabeler {
    fn default() -> Self {
        BuiltinLabeler::new(&MentionLexicon::default()).expect("default mention lexicon is valid")
    }
}

impl BuiltinLabeler {
    pub fn new(lex: &MentionLexicon) -> Result<Self> {
        lex.validate()?;
        let mut by_first: HashMap<String, Vec<Pattern>> = HashMap::new();
        for (&label, phrases) in &lex.labels {
            for p in phrases {
                let toks: Vec<PatTok> = tokenize(p)
                    .into_iter()
                    .map(|t| if t == "*" { PatTok::Gap } else { PatTok::Word(t) })
                    .collect();
                let PatTok::Word(first) = &toks[0] else { unreachable!() };
                by_first.entry(first.clone()).or_default().push(Pattern {
                    label,
                    source: p.clone(),
                    toks,
                });
            }
        }
        let cues = |list: &[String]| list.iter().map(|c| tokenize(c)).collect::<Vec<_>>();
        let negation = cues(&lex.negation);
        let mut negation_words: Vec<String> = negation.iter().flatten().cloned().collect();
        negation_words.push("not".into());
        Ok(BuiltinLabeler {
            by_first,
            negation,
            uncertainty: cues(&lex.uncertainty),
            negation_words,
        })
    }

    /// End (exclusive) of a match of `pat` starting at `start`, preferring the
    /// longest. Gaps stay within one clause and never swallow a negation word.
    fn match_at(&self, pat: &[PatTok], tokens: &[String], clauses: &[usize], pos: usize, clause: usize) -> Option<usize> {
        let Some((head, rest)) = pat.split_first() else {
            return Some(pos);
        };
        match head {
            PatTok::Word(w) => {
                if pos < tokens.len() && clauses[pos] == clause && &tokens[pos] == w {
                    self.match_at(rest, tokens, clauses, pos + 1, clause)
                } else {
                    None
                }
            }
            PatTok::Gap => {
                let mut best = None;
                for skip in 0..=MAX_GAP {
                    let p = pos + skip;
                    if skip > 0 {
                        let t = p - 1;
                        if t >= tokens.len()
                            || clauses[t] != clause
                            || self.negation_words.contains(&tokens[t])
                        {
                            break;
                        }
                    }
                    if let Some(end) = self.match_at(rest, tokens, clauses, p, clause) {
                        best = best.max(Some(end));
                    }
                }
                best
            }
        }
    }

    /// Longest-match, left-to-right, non-overlapping mention spans.
    fn find_mentions(&self, tokens: &[String], clauses: &[usize]) -> Vec<Mention> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let mut best: Option<(usize, Label, &str)> = None;
            if let Some(cands) = self.by_first.get(&tokens[i]) {
                for pat in cands {
                    if let Some(end) = self.match_at(&pat.toks, tokens, clauses, i, clauses[i]) {
                        // longest span wins; ties go to the lower label code,
                        // then the lexically smaller phrase
                        let better = match best {
                            None => true,
                            Some((be, bl, bs)) => {
                                (end, std::cmp::Reverse(pat.label), std::cmp::Reverse(pat.source.as_str()))
                                    > (be, std::cmp::Reverse(bl), std::cmp::Reverse(bs))
                            }
                        };
                        if better {
                            best = Some((end, pat.label, pat.source.as_str()));
                        }
                    }
                }
            }
            match best {
                Some((end, label, _)) => {
                    out.push(Mention {
                        label,
                        span: Span { start: i, end },
                    });
                    i = end;
                }
                None => i += 1,
            }
        }
        out
    }

    fn find_cues(cues: &[Vec<String>], tokens: &[String], clauses: &[usize], mentions: &[Mention]) -> Vec<Span> {
        let mut out = Vec::new();
        for cue in cues {
            if cue.is_empty() || cue.len() > tokens.len() {
                continue;
            }
            for start in 0..=tokens.len() - cue.len() {
                let end = start + cue.len();
                if tokens[start..end] != cue[..] || clauses[start] != clauses[end - 1] {
                    continue;
                }
                let inside_mention = mentions
                    .iter()
                    .any(|m| start < m.span.end && m.span.start < end);
                if !inside_mention {
                    out.push(Span { start, end });
                }
            }
        }
        out
    }

    pub fn label_tokens(&self, tokens: &[String]) -> LabelState {
        let mentions = self.find_mentions(tokens, &clause_ids(tokens));
        let starts: Vec<usize> = mentions
            .iter()
            .filter(|m| m.label != Label::NoFinding)
            .map(|m| m.span.start)
            .collect();
        let clauses = clause_ids_joining_lists(tokens, &starts);
        let neg = Self::find_cues(&self.negation, tokens, &clauses, &mentions);
        let unc = Self::find_cues(&self.uncertainty, tokens, &clauses, &mentions);

        let substantive: Vec<&Mention> = mentions
            .iter()
            .filter(|m| m.label != Label::NoFinding)
            .collect();
        let mut or_coordinated = vec![false; substantive.len()];
        for (k, tok) in tokens.iter().enumerate() {
            if tok != "or" && tok != "and/or" {
                continue;
            }
            let before = substantive.iter().rposition(|m| {
                m.span.end <= k && k - m.span.end <= OR_WINDOW && clauses[m.span.start] == clauses[k]
            });
            let after = substantive.iter().position(|m| {
                m.span.start > k && m.span.start - k - 1 <= OR_WINDOW && clauses[m.span.start] == clauses[k]
            });
            if let (Some(b), Some(a)) = (before, after) {
                if substantive[b].label != substantive[a].label {
                    or_coordinated[b] = true;
                    or_coordinated[a] = true;
                }
            }
        }

        let mut state = LabelState::new();
        for (idx, m) in substantive.iter().enumerate() {
            let clause = clauses[m.span.start];
            let same = |c: &&Span| clauses[c.start] == clause;
            let negated = neg.iter().filter(same).any(|c| c.end <= m.span.start);
            let uncertain = unc.iter().filter(same).any(|c| {
                c.end <= m.span.start
                    // a trailing cue ("... is suspected") only reaches back if
                    // it does not introduce a later mention in the clause
                    || (c.start >= m.span.end
                        && !substantive
                            .iter()
                            .any(|o| o.span.start >= c.end && clauses[o.span.start] == clause))
            });
            let certainty = if negated {
                Certainty::Negative
            } else if uncertain || or_coordinated[idx] {
                Certainty::Uncertain
            } else {
                Certainty::Positive
            };
            if certainty > state.get(m.label) {
                state.set(m.label, certainty);
            }
        }

        let clear = mentions.iter().any(|m| m.label == Label::NoFinding);
        let nothing_present = Label::SUBSTANTIVE.iter().all(|&l| !state.get(l).is_present());
        if clear && nothing_present {
            state.set(Label::NoFinding, Certainty::Positive);
        }
        state
    }

    pub fn label_text(&self, text: &str) -> LabelState {
        self.label_tokens(&tokenize(text))
    }
}

impl Labeler for BuiltinLabeler {
    fn label(&self, sentence: &Sentence) -> LabelState {
        self.label_tokens(&sentence.tokens)
    }
}

pub type SentenceKey = (String, Section, usize);

/// Labels read from a CSV file; unknown sentences are all-Absent.
#[derive(Debug, Default)]
pub struct ExternalLabels {
    map: HashMap<SentenceKey, LabelState>,
    misses: AtomicUsize,
}

impl ExternalLabels {
    pub fn from_map(map: HashMap<SentenceKey, LabelState>) -> Self {
        ExternalLabels {
            map,
            misses: AtomicUsize::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, key: &SentenceKey) -> Option<&LabelState> {
        self.map.get(key)
    }

    /// Lookups that found no row so far.
    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }
}

impl Labeler for ExternalLabels {
    fn label(&self, sentence: &Sentence) -> LabelState {
        let key = (sentence.study_id.clone(), sentence.section, sentence.index);
        match self.map.get(&key) {
            Some(s) => *s,
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                LabelState::new()
            }
        }
    }
}

/// Maps header positions to labels; `passthrough` names columns that are
/// allowed but ignored.
fn label_columns(path: &Path, headers: &csv::StringRecord, keys: &[&str], passthrough: &[&str]) -> Result<Vec<(usize, Label)>> {
    let mut cols = Vec::new();
    let mut seen = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if keys.contains(&h) || passthrough.contains(&h) {
            continue;
        }
        let label: Label = h
            .parse()
            .map_err(|_| Error::invalid_file(path, format!("unknown label column {h:?}")))?;
        if seen.contains(&label) {
            return Err(Error::invalid_file(path, format!("label column {h:?} repeated")));
        }
        seen.push(label);
        cols.push((i, label));
    }
    for k in keys {
        if !headers.iter().any(|h| h == *k) {
            return Err(Error::invalid_file(path, format!("missing column {k:?}")));
        }
    }
    Ok(cols)
}

fn parse_state(path: &Path, line: u64, rec: &csv::StringRecord, cols: &[(usize, Label)]) -> Result<LabelState> {
    let mut state = LabelState::new();
    for &(i, label) in cols {
        let v = rec.get(i).unwrap_or("");
        let c = Certainty::from_label_file_code(v).ok_or_else(|| {
            Error::row(path, line, format!("invalid value {v:?} for {label}; expected blank, 0, -1 or 1"))
        })?;
        state.set(label, c);
    }
    Ok(state)
}

/// Reads a label file with columns `study_id, section, sentence_index`
/// followed by label columns holding blank/0/-1/1. A `text` column is
/// permitted and ignored.
pub fn load_external_labels(path: &Path) -> Result<ExternalLabels> {
    let mut rdr = csv_reader(path)?;
    if fs::metadata(path).map_err(|e| Error::io(path, e))?.len() == 0 {
        return Ok(ExternalLabels::default());
    }
    let headers = rdr.headers()?.clone();
    let keys = ["study_id", "section", "sentence_index"];
    let cols = label_columns(path, &headers, &keys, &["text"])?;
    let idx = |name: &str| headers.iter().position(|h| h == name).expect("checked above");
    let (si, se, sx) = (idx("study_id"), idx("section"), idx("sentence_index"));

    let mut map = HashMap::new();
    for (n, rec) in rdr.records().enumerate() {
        let fallback = n as u64 + 2;
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(fallback, |p| p.line());
            Error::row(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(fallback, |p| p.line());
        let study = rec.get(si).unwrap_or("").to_string();
        let section = Section::parse(rec.get(se).unwrap_or(""))
            .ok_or_else(|| Error::row(path, line, "section must be findings or impression"))?;
        let index: usize = rec
            .get(sx)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::row(path, line, "sentence_index is not a non-negative integer"))?;
        let state = parse_state(path, line, &rec, &cols)?;
        let key = (study, section, index);
        if map.contains_key(&key) {
            return Err(Error::row(
                path,
                line,
                format!("duplicate key ({}, {}, {})", key.0, key.1, key.2),
            ));
        }
        map.insert(key, state);
    }
    Ok(ExternalLabels::from_map(map))
}

/// Writes sentences and their labels in the format [`load_external_labels`] reads.
pub fn write_label_csv<'a, I>(path: &Path, rows: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a Sentence, LabelState)>,
{
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["study_id", "section", "sentence_index"];
    header.extend(Label::ALL.iter().map(|l| l.name()));
    header.push("text");
    w.write_record(&header)?;
    for (s, state) in rows {
        let mut rec = vec![s.study_id.clone(), s.section.to_string(), s.index.to_string()];
        rec.extend(Label::ALL.iter().map(|&l| state.get(l).label_file_code().to_string()));
        rec.push(s.text.clone());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Labels keyed by exact sentence text, for scoring free text such as
/// generated explanations. Reads CheXbert's output layout: a `text` (or
/// `Report Impression`) column plus label columns.
#[derive(Debug, Default)]
pub struct TextLabels {
    map: HashMap<String, LabelState>,
    misses: AtomicUsize,
}

impl TextLabels {
    pub fn load(path: &Path) -> Result<Self> {
        let mut rdr = csv_reader(path)?;
        let headers = rdr.headers()?.clone();
        let text_col = headers
            .iter()
            .position(|h| h == "text" || h == "Report Impression")
            .ok_or_else(|| Error::invalid_file(path, "missing text column"))?;
        let key = headers.get(text_col).unwrap_or("text").to_string();
        let cols = label_columns(path, &headers, &[key.as_str()], &[])?;
        let mut map = HashMap::new();
        for (n, rec) in rdr.records().enumerate() {
            let line = n as u64 + 2;
            let rec = rec.map_err(|e| Error::row(path, line, e.to_string()))?;
            let text = rec.get(text_col).unwrap_or("").trim().to_string();
            let state = parse_state(path, line, &rec, &cols)?;
            if let Some(prev) = map.insert(text.clone(), state) {
                if prev != state {
                    return Err(Error::row(path, line, format!("conflicting labels for {text:?}")));
                }
            }
        }
        Ok(TextLabels {
            map,
            misses: AtomicUsize::new(0),
        })
    }

    pub fn label_text(&self, text: &str) -> LabelState {
        match self.map.get(text.trim()) {
            Some(s) => *s,
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                LabelState::new()
            }
        }
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;
    use Certainty::*;
    use Label::*;

    fn label(text: &str) -> LabelState {
        BuiltinLabeler::default().label_text(text)
    }

    fn only(pairs: &[(Label, Certainty)]) -> LabelState {
        LabelState::from_pairs(pairs.iter().copied())
    }

    #[test]
    fn positive_effusion() {
        assert_eq!(label("There is a left pleural effusion."), only(&[(PleuralEffusion, Positive)]));
    }

    #[test]
    fn negated_pneumothorax() {
        assert_eq!(label("No pneumothorax."), only(&[(Pneumothorax, Negative)]));
    }

    #[test]
    fn negated_list() {
        let all_neg = only(&[(Consolidation, Negative), (PleuralEffusion, Negative), (Pneumothorax, Negative)]);
        assert_eq!(label("There is no focal consolidation, effusion, or pneumothorax."), all_neg);
        assert_eq!(label("Heart size is normal without effusion, consolidation or pneumothorax."), all_neg);
        // a comma before a cue still closes the clause
        assert_eq!(
            label("No effusion, likely pneumonia."),
            only(&[(PleuralEffusion, Negative), (Pneumonia, Uncertain)])
        );
    }

    #[test]
    fn uncertainty_and_or() {
        assert_eq!(
            label("Opacity may reflect atelectasis or pneumonia."),
            only(&[(LungOpacity, Positive), (Atelectasis, Uncertain), (Pneumonia, Uncertain)])
        );
    }

    #[test]
    fn trailing_cue() {
        assert_eq!(label("Pneumonia is suspected."), only(&[(Pneumonia, Uncertain)]));
        assert_eq!(
            label("Left basilar opacity likely atelectasis."),
            only(&[(LungOpacity, Positive), (Atelectasis, Uncertain)])
        );
    }

    #[test]
    fn clause_scoping() {
        assert_eq!(
            label("No pneumothorax, but there is a small effusion."),
            only(&[(Pneumothorax, Negative), (PleuralEffusion, Positive)])
        );
        assert_eq!(
            label("Atelectasis, possibly pneumonia."),
            only(&[(Atelectasis, Positive), (Pneumonia, Uncertain)])
        );
        assert_eq!(
            label("No effusion or pneumothorax."),
            only(&[(PleuralEffusion, Negative), (Pneumothorax, Negative)])
        );
    }

    #[test]
    fn positive_beats_negative_for_same_label() {
        assert_eq!(
            label("Left effusion; no right effusion."),
            only(&[(PleuralEffusion, Positive)])
        );
    }

    #[test]
    fn gapped_phrases() {
        assert_eq!(
            label("The cardiomediastinal silhouette is mildly enlarged."),
            only(&[(EnlargedCardiomediastinum, Positive)])
        );
        // a negation word inside the gap blocks the phrase
        assert!(label("The cardiomediastinal silhouette is not enlarged.").is_all_absent());
    }

    #[test]
    fn longest_match_wins() {
        assert_eq!(label("Stable pleural thickening."), only(&[(PleuralOther, Positive)]));
        assert_eq!(label("Pleural scarring."), only(&[(PleuralOther, Positive)]));
    }

    #[test]
    fn no_finding() {
        assert_eq!(label("The lungs are clear."), only(&[(NoFinding, Positive)]));
        assert_eq!(
            label("No acute cardiopulmonary process."),
            only(&[(NoFinding, Positive)])
        );
        assert_eq!(
            label("Lungs are clear without effusion."),
            only(&[(NoFinding, Positive), (PleuralEffusion, Negative)])
        );
        assert_eq!(label("Lungs are clear, small effusion."), only(&[(PleuralEffusion, Positive)]));
    }

    #[test]
    fn multi_token_cues() {
        assert_eq!(label("Pneumonia cannot be excluded."), only(&[(Pneumonia, Uncertain)]));
        assert_eq!(label("Negative for pneumothorax."), only(&[(Pneumothorax, Negative)]));
        assert_eq!(
            label("Atelectasis rather than pneumonia."),
            only(&[(Atelectasis, Positive), (Pneumonia, Negative)])
        );
    }

    #[test]
    fn duplicate_phrase_rejected() {
        let mut lex = MentionLexicon::default();
        lex.labels.get_mut(&Edema).unwrap().push("effusion".into());
        assert!(lex.validate().is_err());
        let mut lex = MentionLexicon::default();
        lex.labels.get_mut(&Edema).unwrap().push("* edema".into());
        assert!(lex.validate().is_err());
    }

    #[test]
    fn lexicon_toml() {
        let src = "negation = [\"no\"]\nuncertainty = [\"may\"]\n[labels]\n\"Pleural Effusion\" = [\"effusion\"]\n";
        let lex = MentionLexicon::from_toml_str(src).unwrap();
        let l = BuiltinLabeler::new(&lex).unwrap();
        assert_eq!(l.label_text("May be effusion."), only(&[(PleuralEffusion, Uncertain)]));
        assert!(MentionLexicon::from_toml_str("negation=[]\nuncertainty=[]\n[labels]\nPneumonitis=[\"x\"]\n").is_err());
    }

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn external_label_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "labels.csv",
            "study_id,section,sentence_index,Pneumonia,Consolidation,Edema\n\
             s1,findings,0,-1,1,\n\
             s1,impression,3,,,0\n",
        );
        let ext = load_external_labels(&p).unwrap();
        assert_eq!(ext.len(), 2);
        let s = Sentence::new("s1", Section::Findings, 0, "x");
        assert_eq!(ext.label(&s), only(&[(Pneumonia, Uncertain), (Consolidation, Positive)]));
        let s = Sentence::new("s1", Section::Impression, 3, "x");
        assert_eq!(ext.label(&s), only(&[(Edema, Negative)]));
        let missing = Sentence::new("s2", Section::Findings, 0, "x");
        assert!(ext.label(&missing).is_all_absent());
        assert_eq!(ext.misses(), 1);
    }

    #[test]
    fn external_label_errors() {
        let dir = tempfile::tempdir().unwrap();
        let empty = write(&dir, "empty.csv", "");
        assert!(load_external_labels(&empty).unwrap().is_empty());
        let bad = write(&dir, "bad.csv", "study_id,section,sentence_index,Pneumonia\ns1,findings,0,2\n");
        match load_external_labels(&bad) {
            Err(Error::MalformedRow { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected row error, got {other:?}"),
        }
        let unknown = write(&dir, "unk.csv", "study_id,section,sentence_index,Pneumonitis\n");
        assert!(load_external_labels(&unknown).is_err());
        let dup = write(
            &dir,
            "dup.csv",
            "study_id,section,sentence_index,Edema\ns1,findings,0,1\ns1,findings,0,1\n",
        );
        assert!(matches!(load_external_labels(&dup), Err(Error::MalformedRow { row: 3, .. })));
    }

    #[test]
    fn label_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let l = BuiltinLabeler::default();
        let sents = [
            Sentence::new("s1", Section::Findings, 0, "Opacity may reflect atelectasis or pneumonia."),
            Sentence::new("s1", Section::Impression, 1, "No pneumothorax, text with \"quotes\"."),
        ];
        let p = dir.path().join("l.csv");
        write_label_csv(&p, sents.iter().map(|s| (s, l.label(s)))).unwrap();
        let ext = load_external_labels(&p).unwrap();
        for s in &sents {
            assert_eq!(ext.label(s), l.label(s));
        }
    }

    #[test]
    fn text_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "t.csv", "Report Impression,Lung Opacity,Pneumonia\nopacity concerning for pneumonia,1,-1\n");
        let t = TextLabels::load(&p).unwrap();
        assert_eq!(
            t.label_text(" opacity concerning for pneumonia "),
            only(&[(LungOpacity, Positive), (Pneumonia, Uncertain)])
        );
        assert!(t.label_text("other").is_all_absent());
        assert_eq!(t.misses(), 1);
    }

    fn vocab() -> Vec<&'static str> {
        vec![
            "no", "may", "or", "opacity", "atelectasis", "pneumonia", "effusion", "left", ",",
            "likely", "is", "consolidation", "edema", "lungs", "are", "clear", "heart", "enlarged",
            "without", "suspected", "the", "pleural", "thickening", "but",
        ]
    }

    proptest! {
        #[test]
        fn no_finding_implies_nothing_present(words in prop::collection::vec(prop::sample::select(vocab()), 0..14)) {
            let s = label(&words.join(" "));
            if s.get(NoFinding) == Positive {
                for l in Label::SUBSTANTIVE {
                    prop_assert!(!s.get(l).is_present());
                }
            }
        }

        #[test]
        fn phrase_order_is_irrelevant(words in prop::collection::vec(prop::sample::select(vocab()), 0..14), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut lex = MentionLexicon::default();
            for ps in lex.labels.values_mut() {
                ps.shuffle(&mut rng);
            }
            lex.negation.shuffle(&mut rng);
            lex.uncertainty.shuffle(&mut rng);
            let shuffled = BuiltinLabeler::new(&lex).unwrap();
            let text = words.join(" ");
            prop_assert_eq!(shuffled.label_text(&text), label(&text));
        }
    }
}
