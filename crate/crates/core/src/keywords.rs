//! Explanation-keyword tagging and the non-descriptive sentence filters.
//!
//! Phrases are matched as raw, case-insensitive substrings of the sentence,
//! so stems such as `deteriorat` or `imag` match any continuation. A phrase
//! may carry a `\b` marker at either end to require a word boundary there;
//! the default lexicon uses this only for `ct`, which would otherwise hit
//! words like "atelectasis" and "reflect".

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeywordLexicon {
    pub explanation: Vec<String>,
    pub exemptions: Vec<String>,
    pub history: Vec<String>,
    pub recommendations: Vec<String>,
    pub technical: Vec<String>,
    pub extra_excluded: Vec<String>,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for KeywordLexicon {
    fn default() -> Self {
        KeywordLexicon {
            explanation: strings(&[
                "indicate",
                "suggest",
                "concerning for",
                "compatible with",
                "account",
                "due",
                "reflect",
                "relate",
                "potentially",
                "likely represent",
                "suspicious for",
                "worrisome for",
                "consistent with",
                "may represent",
            ]),
            exemptions: strings(&["suggestion", "is suggested", "correlate"]),
            history: strings(&[
                "prior",
                "compare",
                "change",
                "deteriorat",
                "increase",
                "decrease",
                "previous",
                "patient",
            ]),
            recommendations: strings(&["recommend", "perform", "follow"]),
            technical: strings(&[
                r"\bct\b",
                "technique",
                " position",
                "exam",
                "assess",
                "view",
                "imag",
            ]),
            extra_excluded: strings(&["finding"]),
        }
    }
}

/// The built-in keyword lists.
pub fn default_lexicon() -> KeywordLexicon {
    KeywordLexicon::default()
}

impl KeywordLexicon {
    /// Parses a TOML lexicon. Lists that are not given keep their defaults.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let lex: KeywordLexicon =
            toml::from_str(s).map_err(|e| Error::InvalidLexicon(e.to_string()))?;
        lex.validate()?;
        Ok(lex)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s).map_err(|e| Error::invalid_file(path, e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let lists = [
            ("explanation", &self.explanation),
            ("exemptions", &self.exemptions),
            ("history", &self.history),
            ("recommendations", &self.recommendations),
            ("technical", &self.technical),
            ("extra_excluded", &self.extra_excluded),
        ];
        for (name, list) in lists {
            for p in list {
                let phrase = Phrase::parse(p);
                if phrase.needle.is_empty() {
                    return Err(Error::InvalidLexicon(format!("empty phrase in {name}")));
                }
                if phrase.needle.chars().any(char::is_uppercase) {
                    return Err(Error::InvalidLexicon(format!(
                        "{name} phrase {p:?} is not lowercase"
                    )));
                }
            }
        }
        for ex in &self.exemptions {
            let ex_needle = Phrase::parse(ex).needle;
            let covers = self
                .explanation
                .iter()
                .any(|kw| ex_needle.contains(&Phrase::parse(kw).needle));
            if !covers {
                return Err(Error::InvalidLexicon(format!(
                    "exemption {ex:?} contains no explanation phrase"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Phrase {
    source: String,
    needle: String,
    left_boundary: bool,
    right_boundary: bool,
}

impl Phrase {
    fn parse(raw: &str) -> Phrase {
        let (left_boundary, rest) = match raw.strip_prefix(r"\b") {
            Some(r) => (true, r),
            None => (false, raw),
        };
        let (right_boundary, needle) = match rest.strip_suffix(r"\b") {
            Some(r) => (true, r),
            None => (false, rest),
        };
        Phrase {
            source: raw.to_string(),
            needle: needle.to_string(),
            left_boundary,
            right_boundary,
        }
    }

    /// Start offsets of all occurrences in `haystack` (already lowercased).
    fn find_all<'a>(&'a self, haystack: &'a str) -> impl Iterator<Item = usize> + 'a {
        let bytes = haystack.as_bytes();
        let is_word = |b: u8| b.is_ascii_alphanumeric() || b >= 0x80;
        haystack
            .match_indices(self.needle.as_str())
            .map(|(i, _)| i)
            .filter(move |&i| {
                let end = i + self.needle.len();
                let left_ok = !self.left_boundary || i == 0 || !is_word(bytes[i - 1]);
                let right_ok = !self.right_boundary || end == bytes.len() || !is_word(bytes[end]);
                left_ok && right_ok
            })
    }

    fn occurs_in(&self, haystack: &str) -> bool {
        self.find_all(haystack).next().is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FilterReason {
    Anonymized,
    PatientHistory,
    Recommendation,
    Technical,
    FindingWord,
}

impl FilterReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterReason::Anonymized => "anonymized",
            FilterReason::PatientHistory => "patient_history",
            FilterReason::Recommendation => "recommendation",
            FilterReason::Technical => "technical",
            FilterReason::FindingWord => "finding_word",
        }
    }
}

impl fmt::Display for FilterReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KeywordMatch {
    /// The lexicon entry that matched.
    pub phrase: String,
    /// Byte offset into the sentence text.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TagResult {
    /// Sorted by offset, then phrase.
    pub explanation_matches: Vec<KeywordMatch>,
    pub filter_reason: Option<FilterReason>,
}

impl TagResult {
    pub fn has_explanation_keyword(&self) -> bool {
        !self.explanation_matches.is_empty()
    }

    /// Distinct matched phrases in order of first occurrence.
    pub fn keywords(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for m in &self.explanation_matches {
            if !out.contains(&m.phrase) {
                out.push(m.phrase.clone());
            }
        }
        out
    }
}

/// A [`KeywordLexicon`] prepared for matching.
#[derive(Debug, Clone)]
pub struct KeywordTagger {
    explanation: Vec<Phrase>,
    exemptions: Vec<Phrase>,
    filters: Vec<(FilterReason, Vec<Phrase>)>,
}

impl KeywordTagger {
    pub fn new(lex: &KeywordLexicon) -> Result<Self> {
        lex.validate()?;
        let compile = |list: &[String]| list.iter().map(|p| Phrase::parse(p)).collect::<Vec<_>>();
        Ok(KeywordTagger {
            explanation: compile(&lex.explanation),
            exemptions: compile(&lex.exemptions),
            filters: vec![
                (FilterReason::PatientHistory, compile(&lex.history)),
                (FilterReason::Recommendation, compile(&lex.recommendations)),
                (FilterReason::Technical, compile(&lex.technical)),
                (FilterReason::FindingWord, compile(&lex.extra_excluded)),
            ],
        })
    }

    /// Explanation phrases present in `text`, minus any occurrence that lies
    /// within an occurrence of an exemption phrase.
    pub fn tag_explanation(&self, text: &str) -> Vec<KeywordMatch> {
        let lower = text.to_ascii_lowercase();
        let exempt: Vec<(usize, usize)> = self
            .exemptions
            .iter()
            .flat_map(|p| p.find_all(&lower).map(move |i| (i, i + p.needle.len())))
            .collect();
        let mut matches: Vec<KeywordMatch> = self
            .explanation
            .iter()
            .flat_map(|p| {
                let exempt = &exempt;
                p.find_all(&lower)
                    .filter(move |&i| {
                        let end = i + p.needle.len();
                        !exempt.iter().any(|&(s, e)| s <= i && end <= e)
                    })
                    .map(move |i| KeywordMatch {
                        phrase: p.source.clone(),
                        offset: i,
                    })
            })
            .collect();
        matches.sort_by(|a, b| (a.offset, &a.phrase).cmp(&(b.offset, &b.phrase)));
        matches
    }

    /// First applicable filter: anonymisation, then patient history,
    /// recommendation, technical, and the word "finding".
    pub fn classify_filter(&self, text: &str) -> Option<FilterReason> {
        if text.contains('_') {
            return Some(FilterReason::Anonymized);
        }
        let lower = text.to_ascii_lowercase();
        self.filters
            .iter()
            .find(|(_, phrases)| phrases.iter().any(|p| p.occurs_in(&lower)))
            .map(|(reason, _)| *reason)
    }

    pub fn tag(&self, text: &str) -> TagResult {
        TagResult {
            explanation_matches: self.tag_explanation(text),
            filter_reason: self.classify_filter(text),
        }
    }

    pub fn explanation_phrases(&self) -> impl Iterator<Item = &str> {
        self.explanation.iter().map(|p| p.source.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tagger() -> KeywordTagger {
        KeywordTagger::new(&default_lexicon()).unwrap()
    }

    fn phrases(ms: &[KeywordMatch]) -> Vec<&str> {
        ms.iter().map(|m| m.phrase.as_str()).collect()
    }

    #[test]
    fn default_list_sizes() {
        let lex = default_lexicon();
        assert_eq!(lex.explanation.len(), 14);
        assert_eq!(lex.exemptions.len(), 3);
        assert!(lex.explanation.iter().any(|p| p == "worrisome for"));
        assert_eq!(lex.history.len(), 8);
        assert_eq!(lex.recommendations.len(), 3);
        assert_eq!(lex.technical.len(), 7);
        assert_eq!(lex.extra_excluded, vec!["finding"]);
        lex.validate().unwrap();
    }

    #[test]
    fn compatible_with() {
        let t = tagger();
        let s = "Right upper lobe new consolidation is compatible with atelectasis with possibly superimposed aspiration.";
        let m = t.tag_explanation(s);
        assert_eq!(phrases(&m), vec!["compatible with"]);
        assert_eq!(m[0].offset, s.find("compatible").unwrap());
        assert_eq!(t.classify_filter(s), None);
    }

    #[test]
    fn exemptions_void_matches() {
        let t = tagger();
        assert!(t.tag_explanation("There is suggestion of edema.").is_empty());
        assert!(t.tag_explanation("Clinical correlation is suggested.").is_empty());
        assert!(t.tag_explanation("Please correlate clinically.").is_empty());
        // a second, unexempted occurrence still counts
        assert_eq!(
            phrases(&t.tag_explanation("Suggestion of edema, which may suggest overload.")),
            vec!["suggest"]
        );
        assert_eq!(phrases(&t.tag_explanation("Findings suggesting edema.")), vec!["suggest"]);
    }

    #[test]
    fn finding_word_filter() {
        let t = tagger();
        let s = "Findings may represent pneumonia.";
        assert_eq!(phrases(&t.tag_explanation(s)), vec!["may represent"]);
        assert_eq!(t.classify_filter(s), Some(FilterReason::FindingWord));
    }

    #[test]
    fn filter_examples() {
        let t = tagger();
        assert_eq!(
            t.classify_filter("Compared to the prior study, stable."),
            Some(FilterReason::PatientHistory)
        );
        assert_eq!(t.classify_filter("___ year old with cough."), Some(FilterReason::Anonymized));
        assert_eq!(t.classify_filter("There is a left pleural effusion."), None);
        assert_eq!(
            t.classify_filter("Recommend follow-up radiograph."),
            Some(FilterReason::Recommendation)
        );
        assert_eq!(
            t.classify_filter("Consider CT for further evaluation."),
            Some(FilterReason::Technical)
        );
        assert_eq!(
            t.classify_filter("Tube is in standard position."),
            Some(FilterReason::Technical)
        );
        // history outranks technical
        assert_eq!(
            t.classify_filter("Unchanged position of the tube compared to prior."),
            Some(FilterReason::PatientHistory)
        );
    }

    #[test]
    fn ct_needs_word_boundaries() {
        let t = tagger();
        assert_eq!(t.classify_filter("Bibasilar atelectasis."), None);
        assert_eq!(t.classify_filter("Opacity may reflect atelectasis."), None);
        assert_eq!(t.classify_filter("Findings on CT."), Some(FilterReason::Technical));
        assert_eq!(t.classify_filter("Prior ct: none"), Some(FilterReason::PatientHistory));
        assert_eq!(t.classify_filter("see ct."), Some(FilterReason::Technical));
    }

    #[test]
    fn plain_ct_entry_matches_any_substring() {
        let mut lex = default_lexicon();
        lex.technical[0] = "ct".into();
        let t = KeywordTagger::new(&lex).unwrap();
        assert_eq!(t.classify_filter("Bibasilar atelectasis."), Some(FilterReason::Technical));
    }

    #[test]
    fn position_keeps_leading_space() {
        let t = tagger();
        assert_eq!(t.classify_filter("A supposition about edema."), None);
    }

    #[test]
    fn toml_partial_override() {
        let lex = KeywordLexicon::from_toml_str("explanation = [\"suggest\", \"indicative of\"]\nexemptions = [\"suggestion\"]\n").unwrap();
        assert_eq!(lex.explanation.len(), 2);
        assert_eq!(lex.history, default_lexicon().history);
    }

    #[test]
    fn invalid_lexicons_rejected() {
        assert!(KeywordLexicon::from_toml_str("explanation = [\"Suggest\"]").is_err());
        assert!(KeywordLexicon::from_toml_str("exemptions = [\"nothing here\"]").is_err());
        assert!(KeywordLexicon::from_toml_str("unknown = [\"x\"]").is_err());
    }

    #[test]
    fn keywords_deduplicated_in_order() {
        let t = tagger();
        let r = t.tag("Opacity due to edema, likely represents fluid due to failure.");
        assert_eq!(r.keywords(), vec!["due", "likely represent"]);
        assert!(r.has_explanation_keyword());
    }

    proptest! {
        #[test]
        fn underscore_always_anonymized(a in "[a-zA-Z ,.]{0,20}", b in "[a-zA-Z ,._]{0,20}") {
            let s = format!("{a}_{b}");
            prop_assert_eq!(tagger().classify_filter(&s), Some(FilterReason::Anonymized));
        }

        #[test]
        fn case_insensitive(s in "[a-zA-Z ,.]{0,60}") {
            let t = tagger();
            prop_assert_eq!(t.tag(&s), t.tag(&s.to_ascii_uppercase()));
        }

        #[test]
        fn never_inside_exemption(
            pre in "[a-z ]{0,10}",
            mid in "[a-z ]{0,10}",
            ex in prop::sample::select(vec!["suggestion", "is suggested", "correlate"]),
            kw in prop::sample::select(default_lexicon().explanation),
        ) {
            let s = format!("{pre}{ex}{mid}{kw} {ex}");
            let t = tagger();
            let lower = s.to_ascii_lowercase();
            let exempt: Vec<(usize, usize)> = ["suggestion", "is suggested", "correlate"]
                .iter()
                .flat_map(|e| lower.match_indices(e).map(|(i, m)| (i, i + m.len())).collect::<Vec<_>>())
                .collect();
            for m in t.tag_explanation(&s) {
                let end = m.offset + m.phrase.len();
                prop_assert!(!exempt.iter().any(|&(a, b)| a <= m.offset && end <= b));
            }
        }
    }
}
