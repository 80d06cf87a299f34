//! The evidence graph and the twelve label-combination rules that decide
//! whether a labelled sentence is a valid explanation, and which of its
//! labels are evidence and which are diagnoses.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::label::{Certainty, Label, LabelState};

/// Labels that can act as evidence.
pub const EVIDENCE_LABELS: [Label; 4] = [
    Label::EnlargedCardiomediastinum,
    Label::LungOpacity,
    Label::LungLesion,
    Label::Consolidation,
];

/// Labels that can be explained.
pub const DIAGNOSIS_LABELS: [Label; 7] = [
    Label::Edema,
    Label::Consolidation,
    Label::Pneumonia,
    Label::Atelectasis,
    Label::Pneumothorax,
    Label::PleuralEffusion,
    Label::PleuralOther,
];

/// The ten labels any rule refers to, in code order.
pub const RULE_LABELS: [Label; 10] = [
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
];

const SET_A: [Label; 4] = [
    Label::PleuralEffusion,
    Label::Edema,
    Label::PleuralOther,
    Label::Pneumothorax,
];

const SET_B: [Label; 6] = [
    Label::PleuralEffusion,
    Label::Edema,
    Label::PleuralOther,
    Label::Pneumothorax,
    Label::Pneumonia,
    Label::Atelectasis,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RuleId(u8);

impl RuleId {
    /// `n` in 1..=12.
    pub fn new(n: u8) -> Option<RuleId> {
        (1..=12).contains(&n).then_some(RuleId(n))
    }

    pub fn number(self) -> u8 {
        self.0
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}", self.0)
    }
}

impl std::str::FromStr for RuleId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('R')
            .and_then(|n| n.parse().ok())
            .and_then(RuleId::new)
            .ok_or_else(|| format!("invalid rule id {s:?}"))
    }
}

impl Serialize for RuleId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RuleId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Certainty a rule demands of one label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CertaintyConstraint {
    UncertainOrPositive,
    Uncertain,
    Positive,
}

impl CertaintyConstraint {
    pub fn admits(self, c: Certainty) -> bool {
        match self {
            CertaintyConstraint::UncertainOrPositive => c.is_present(),
            CertaintyConstraint::Uncertain => c == Certainty::Uncertain,
            CertaintyConstraint::Positive => c == Certainty::Positive,
        }
    }
}

/// One evidence item of an explanation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Evidence {
    /// Evidence not captured by any of the 14 labels.
    OtherMisc,
    Label(Label),
}

impl Evidence {
    pub fn as_str(&self) -> &'static str {
        match self {
            Evidence::OtherMisc => "other_misc",
            Evidence::Label(l) => l.name(),
        }
    }
}

impl fmt::Display for Evidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Evidence {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Evidence {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        if s == "other_misc" {
            Ok(Evidence::OtherMisc)
        } else {
            s.parse().map(Evidence::Label).map_err(serde::de::Error::custom)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EvidenceSpec {
    OtherMisc,
    /// Each label must be present as Uncertain or Positive.
    Labels(Vec<Label>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum DiagnosisSpec {
    /// Exactly one label from the set, Uncertain or Positive.
    OneOf(Vec<Label>),
    /// Two or more labels from the set, all Uncertain.
    UncertainSubset(Vec<Label>),
    /// Exactly these labels with the given constraints.
    Exact(Vec<(Label, CertaintyConstraint)>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RulePattern {
    pub id: RuleId,
    pub evidence: EvidenceSpec,
    pub diagnosis: DiagnosisSpec,
    pub kw_required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RuleMatch {
    pub rule_id: RuleId,
    /// In label code order.
    pub diagnosis: Vec<(Label, Certainty)>,
    pub evidence: Vec<Evidence>,
}

impl RulePattern {
    fn evidence_labels(&self) -> &[Label] {
        match &self.evidence {
            EvidenceSpec::OtherMisc => &[],
            EvidenceSpec::Labels(ls) => ls,
        }
    }

    /// Tests the pattern against the present labels of a sentence.
    fn matches(&self, state: &LabelState, present: &BTreeSet<Label>, has_kw: bool) -> Option<RuleMatch> {
        if self.kw_required && !has_kw {
            return None;
        }
        let evidence = self.evidence_labels();
        if !evidence.iter().all(|l| present.contains(l)) {
            return None;
        }
        let rest: Vec<Label> = present
            .iter()
            .copied()
            .filter(|l| !evidence.contains(l))
            .collect();
        let ok = match &self.diagnosis {
            DiagnosisSpec::OneOf(set) => rest.len() == 1 && set.contains(&rest[0]),
            DiagnosisSpec::UncertainSubset(set) => {
                rest.len() >= 2
                    && rest
                        .iter()
                        .all(|l| set.contains(l) && state.get(*l) == Certainty::Uncertain)
            }
            DiagnosisSpec::Exact(req) => {
                rest.len() == req.len()
                    && req
                        .iter()
                        .all(|(l, c)| rest.contains(l) && c.admits(state.get(*l)))
            }
        };
        if !ok {
            return None;
        }
        let evidence = match &self.evidence {
            EvidenceSpec::OtherMisc => vec![Evidence::OtherMisc],
            EvidenceSpec::Labels(ls) => {
                let mut ev: Vec<Evidence> = ls.iter().copied().map(Evidence::Label).collect();
                ev.sort();
                ev
            }
        };
        Some(RuleMatch {
            rule_id: self.id,
            diagnosis: rest.iter().map(|&l| (l, state.get(l))).collect(),
            evidence,
        })
    }

    /// Stable one-line description, used for the rule-table hash.
    pub fn describe(&self) -> String {
        let names = |ls: &[Label]| ls.iter().map(|l| l.name()).collect::<Vec<_>>().join(", ");
        let ev = match &self.evidence {
            EvidenceSpec::OtherMisc => "other_misc".to_string(),
            EvidenceSpec::Labels(ls) => format!("{{{}}}", names(ls)),
        };
        let dx = match &self.diagnosis {
            DiagnosisSpec::OneOf(s) => format!("one of {{{}}}", names(s)),
            DiagnosisSpec::UncertainSubset(s) => format!(">=2 uncertain of {{{}}}", names(s)),
            DiagnosisSpec::Exact(req) => format!(
                "exactly {{{}}}",
                req.iter()
                    .map(|(l, c)| format!("{}:{c:?}", l.name()))
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        };
        format!("{} {ev} -> {dx} kw={}", self.id, self.kw_required)
    }
}

/// The twelve rules, in table order.
pub fn builtin_rules() -> Vec<RulePattern> {
    use CertaintyConstraint as C;
    use Label::*;
    let rule = |n: u8, evidence: EvidenceSpec, diagnosis: DiagnosisSpec, kw_required: bool| RulePattern {
        id: RuleId(n),
        evidence,
        diagnosis,
        kw_required,
    };
    let ev = |ls: &[Label]| EvidenceSpec::Labels(ls.to_vec());
    let exact = |req: &[(Label, C)]| DiagnosisSpec::Exact(req.to_vec());
    vec![
        rule(1, EvidenceSpec::OtherMisc, DiagnosisSpec::OneOf(SET_A.to_vec()), true),
        rule(2, EvidenceSpec::OtherMisc, DiagnosisSpec::UncertainSubset(SET_A.to_vec()), true),
        rule(3, ev(&[LungOpacity]), DiagnosisSpec::OneOf(SET_B.to_vec()), false),
        rule(4, ev(&[LungOpacity]), DiagnosisSpec::UncertainSubset(SET_B.to_vec()), false),
        rule(5, ev(&[LungOpacity]), exact(&[(Consolidation, C::UncertainOrPositive)]), false),
        rule(6, ev(&[Consolidation]), exact(&[(Pneumonia, C::UncertainOrPositive)]), false),
        rule(7, ev(&[LungOpacity, Consolidation]), exact(&[(Pneumonia, C::UncertainOrPositive)]), false),
        rule(8, ev(&[LungLesion]), exact(&[(Pneumonia, C::UncertainOrPositive)]), true),
        rule(9, ev(&[LungOpacity]), exact(&[(Atelectasis, C::Positive), (Pneumonia, C::Uncertain)]), false),
        rule(10, ev(&[Consolidation]), exact(&[(Atelectasis, C::Uncertain), (Pneumonia, C::Uncertain)]), false),
        rule(11, ev(&[EnlargedCardiomediastinum]), exact(&[(Edema, C::UncertainOrPositive)]), true),
        rule(12, ev(&[EnlargedCardiomediastinum]), exact(&[(Atelectasis, C::UncertainOrPositive)]), true),
    ]
}

/// Hex SHA-256 of the rule descriptions, identifying the rule table in use.
pub fn rule_table_hash(rules: &[RulePattern]) -> String {
    let mut h = Sha256::new();
    for r in rules {
        h.update(r.describe().as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Immutable rule set with its matching logic.
#[derive(Debug, Clone)]
pub struct RuleEngine {
    rules: Vec<RulePattern>,
}

impl Default for RuleEngine {
    fn default() -> Self {
        RuleEngine::new(builtin_rules())
    }
}

impl RuleEngine {
    pub fn new(rules: Vec<RulePattern>) -> Self {
        RuleEngine { rules }
    }

    pub fn rules(&self) -> &[RulePattern] {
        &self.rules
    }

    fn present(state: &LabelState) -> BTreeSet<Label> {
        Label::SUBSTANTIVE
            .iter()
            .copied()
            .filter(|&l| state.get(l).is_present())
            .collect()
    }

    /// Every rule that fires, in rule order.
    pub fn matching_rules(&self, state: &LabelState, has_explanation_kw: bool) -> Vec<RuleMatch> {
        let present = Self::present(state);
        if present.is_empty() {
            return Vec::new();
        }
        self.rules
            .iter()
            .filter_map(|r| r.matches(state, &present, has_explanation_kw))
            .collect()
    }

    /// The firing rule, if any. With the built-in rules at most one fires.
    pub fn match_rule(&self, state: &LabelState, has_explanation_kw: bool) -> Option<RuleMatch> {
        self.matching_rules(state, has_explanation_kw).into_iter().next()
    }

    /// Evidence label -> diagnosis labels it may support, derived from the rules.
    pub fn evidence_graph(&self) -> EvidenceGraph {
        let mut edges: BTreeMap<Label, BTreeSet<Label>> = BTreeMap::new();
        for r in &self.rules {
            let dx: Vec<Label> = match &r.diagnosis {
                DiagnosisSpec::OneOf(s) | DiagnosisSpec::UncertainSubset(s) => s.clone(),
                DiagnosisSpec::Exact(req) => req.iter().map(|(l, _)| *l).collect(),
            };
            for &e in r.evidence_labels() {
                edges.entry(e).or_default().extend(dx.iter().copied());
            }
        }
        EvidenceGraph { edges }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvidenceGraph {
    pub edges: BTreeMap<Label, BTreeSet<Label>>,
}

impl EvidenceGraph {
    pub fn evidence_capable(&self) -> BTreeSet<Label> {
        self.edges.keys().copied().collect()
    }

    pub fn diagnosis_capable(&self) -> BTreeSet<Label> {
        self.edges.values().flatten().copied().collect()
    }

    pub fn has_edge(&self, evidence: Label, diagnosis: Label) -> bool {
        self.edges.get(&evidence).is_some_and(|d| d.contains(&diagnosis))
    }
}

/// Outcome of enumerating every input the rules can distinguish.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExclusivityReport {
    pub inputs: usize,
    pub unmatched: usize,
    pub matched_once: usize,
    /// Inputs matched by two or more rules, with the rules involved.
    pub multi_matched: Vec<(LabelState, bool, Vec<RuleId>)>,
    /// Per rule, the number of inputs it alone matches.
    pub per_rule: BTreeMap<RuleId, usize>,
}

impl ExclusivityReport {
    pub fn is_exclusive(&self) -> bool {
        self.multi_matched.is_empty()
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str("rule  inputs matched\n");
        s.push_str("----  --------------\n");
        for (id, n) in &self.per_rule {
            s.push_str(&format!("{:<4}  {n:>14}\n", id.to_string()));
        }
        s.push_str("----  --------------\n");
        s.push_str(&format!("inputs enumerated   {:>8}\n", self.inputs));
        s.push_str(&format!("matched by no rule  {:>8}\n", self.unmatched));
        s.push_str(&format!("matched by one rule {:>8}\n", self.matched_once));
        s.push_str(&format!("matched by 2+ rules {:>8}\n", self.multi_matched.len()));
        for (state, kw, ids) in self.multi_matched.iter().take(20) {
            let labels: Vec<String> = RULE_LABELS
                .iter()
                .filter(|&&l| state.get(l).is_present())
                .map(|&l| format!("{}={}", l.name(), state.get(l)))
                .collect();
            let ids: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
            s.push_str(&format!("  conflict: [{}] kw={kw} -> {}\n", labels.join(", "), ids.join(", ")));
        }
        s
    }
}

/// Tries every {Absent, Uncertain, Positive} assignment of the ten rule
/// labels, with and without a keyword (3^10 x 2 inputs).
pub fn audit_exclusivity(engine: &RuleEngine) -> ExclusivityReport {
    const STATES: [Certainty; 3] = [Certainty::Absent, Certainty::Uncertain, Certainty::Positive];
    let total = 3usize.pow(RULE_LABELS.len() as u32);
    let mut report = ExclusivityReport {
        inputs: 0,
        unmatched: 0,
        matched_once: 0,
        multi_matched: Vec::new(),
        per_rule: engine.rules().iter().map(|r| (r.id, 0)).collect(),
    };
    for code in 0..total {
        let mut state = LabelState::new();
        let mut rem = code;
        for &l in &RULE_LABELS {
            state.set(l, STATES[rem % 3]);
            rem /= 3;
        }
        for kw in [false, true] {
            report.inputs += 1;
            let hits = engine.matching_rules(&state, kw);
            match hits.len() {
                0 => report.unmatched += 1,
                1 => {
                    report.matched_once += 1;
                    *report.per_rule.entry(hits[0].rule_id).or_default() += 1;
                }
                _ => report
                    .multi_matched
                    .push((state, kw, hits.iter().map(|h| h.rule_id).collect())),
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Certainty::*;
    use Label::*;

    fn state(pairs: &[(Label, Certainty)]) -> LabelState {
        LabelState::from_pairs(pairs.iter().copied())
    }

    fn rule_of(pairs: &[(Label, Certainty)], kw: bool) -> Option<u8> {
        RuleEngine::default()
            .match_rule(&state(pairs), kw)
            .map(|m| m.rule_id.number())
    }

    #[test]
    fn table_shape() {
        let rules = builtin_rules();
        assert_eq!(rules.len(), 12);
        let kw: Vec<bool> = rules.iter().map(|r| r.kw_required).collect();
        assert_eq!(
            kw,
            vec![true, true, false, false, false, false, false, true, false, false, true, true]
        );
        assert!(!rules[5].kw_required);
        assert!(rules[10].kw_required);
    }

    #[test]
    fn consolidation_pneumonia() {
        let m = RuleEngine::default()
            .match_rule(&state(&[(Consolidation, Positive), (Pneumonia, Uncertain)]), false)
            .unwrap();
        assert_eq!(m.rule_id.to_string(), "R6");
        assert_eq!(m.evidence, vec![Evidence::Label(Consolidation)]);
        assert_eq!(m.diagnosis, vec![(Pneumonia, Uncertain)]);
    }

    #[test]
    fn keyword_gate() {
        assert_eq!(rule_of(&[(Edema, Uncertain)], false), None);
        assert_eq!(rule_of(&[(Edema, Uncertain)], true), Some(1));
    }

    #[test]
    fn ambiguous_pair_excluded() {
        assert_eq!(rule_of(&[(Consolidation, Positive), (Atelectasis, Positive)], true), None);
    }

    #[test]
    fn r9_and_r4() {
        assert_eq!(
            rule_of(&[(LungOpacity, Positive), (Atelectasis, Positive), (Pneumonia, Uncertain)], false),
            Some(9)
        );
        assert_eq!(
            rule_of(&[(LungOpacity, Positive), (Atelectasis, Uncertain), (Pneumonia, Uncertain)], false),
            Some(4)
        );
        assert_eq!(
            rule_of(&[(LungOpacity, Positive), (Consolidation, Positive), (Pneumonia, Uncertain)], false),
            Some(7)
        );
    }

    #[test]
    fn r2_subset() {
        let m = RuleEngine::default()
            .match_rule(&state(&[(PleuralEffusion, Uncertain), (Pneumothorax, Uncertain)]), true)
            .unwrap();
        assert_eq!(m.rule_id.number(), 2);
        assert_eq!(m.diagnosis, vec![(Pneumothorax, Uncertain), (PleuralEffusion, Uncertain)]);
        assert_eq!(m.evidence, vec![Evidence::OtherMisc]);
        // a positive member breaks the all-uncertain requirement
        assert_eq!(rule_of(&[(PleuralEffusion, Positive), (Pneumothorax, Uncertain)], true), None);
    }

    #[test]
    fn empty_and_extra_labels() {
        assert_eq!(rule_of(&[], true), None);
        assert_eq!(rule_of(&[(SupportDevices, Positive), (Edema, Positive)], true), None);
        assert_eq!(rule_of(&[(NoFinding, Positive)], true), None);
    }

    #[test]
    fn graph_from_rules() {
        let g = RuleEngine::default().evidence_graph();
        assert_eq!(g.evidence_capable(), EVIDENCE_LABELS.into_iter().collect());
        assert_eq!(g.diagnosis_capable(), DIAGNOSIS_LABELS.into_iter().collect());
        assert!(g.has_edge(LungOpacity, Consolidation));
        assert!(g.has_edge(EnlargedCardiomediastinum, Edema));
        assert!(!g.has_edge(Consolidation, Edema));
        assert!(!g.has_edge(LungLesion, Atelectasis));
    }

    #[test]
    fn audit_finds_no_conflicts() {
        let r = audit_exclusivity(&RuleEngine::default());
        assert_eq!(r.inputs, 118_098);
        assert!(r.is_exclusive(), "{}", r.to_table());
        assert_eq!(r.unmatched + r.matched_once, r.inputs);
    }

    #[test]
    fn audit_detects_overlap() {
        let mut rules = builtin_rules();
        let mut dup = rules[5].clone();
        dup.id = RuleId::new(12).unwrap();
        rules.push(dup);
        let r = audit_exclusivity(&RuleEngine::new(rules));
        assert!(!r.is_exclusive());
        // {Consolidation, Pneumonia} x {U,P}^2 x kw on/off
        assert_eq!(r.multi_matched.len(), 8);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let h = rule_table_hash(&builtin_rules());
        assert_eq!(h.len(), 64);
        let mut rules = builtin_rules();
        rules[0].kw_required = false;
        assert_ne!(rule_table_hash(&rules), h);
    }

    #[test]
    fn rule_id_text() {
        assert_eq!("R12".parse::<RuleId>().unwrap().number(), 12);
        assert!("R13".parse::<RuleId>().is_err());
        assert!("6".parse::<RuleId>().is_err());
    }

    fn any_state() -> impl Strategy<Value = LabelState> {
        prop::collection::vec(0u8..4, 14).prop_map(|v| {
            let cs = [Absent, Negative, Uncertain, Positive];
            LabelState::from_pairs(Label::ALL.iter().zip(v).map(|(&l, c)| (l, cs[c as usize])))
        })
    }

    proptest! {
        #[test]
        fn keyword_only_enables(s in any_state()) {
            let e = RuleEngine::default();
            if let Some(m) = e.match_rule(&s, false) {
                prop_assert_eq!(e.match_rule(&s, true), Some(m));
            }
        }

        #[test]
        fn negative_is_like_absent(s in any_state(), kw in any::<bool>()) {
            let e = RuleEngine::default();
            let mut absent = s;
            for l in Label::ALL {
                if s.get(l) == Negative {
                    absent.set(l, Absent);
                }
            }
            prop_assert_eq!(e.match_rule(&s, kw), e.match_rule(&absent, kw));
        }

        #[test]
        fn matches_respect_graph(s in any_state(), kw in any::<bool>()) {
            let e = RuleEngine::default();
            let g = e.evidence_graph();
            if let Some(m) = e.match_rule(&s, kw) {
                prop_assert!(!m.diagnosis.is_empty());
                for ev in &m.evidence {
                    if let Evidence::Label(el) = ev {
                        prop_assert!(EVIDENCE_LABELS.contains(el));
                        for (d, _) in &m.diagnosis {
                            prop_assert!(d != el);
                            prop_assert!(g.has_edge(*el, *d));
                        }
                    }
                }
            }
        }
    }
}
