//! Text-overlap metrics between generated and reference explanations:
//! corpus BLEU-1..4, ROUGE-L, a synonym-free METEOR variant, and CIDEr.
//!
//! Every metric takes one reference per candidate, tokenised with
//! [`metric_tokens`].

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::segment::tokenize;

/// ROUGE-L recall weight.
pub const ROUGE_BETA: f64 = 1.2;
pub const METEOR_ALPHA: f64 = 0.9;
pub const METEOR_BETA: f64 = 3.0;
pub const METEOR_GAMMA: f64 = 0.5;
pub const CIDER_MAX_N: usize = 4;
pub const CIDER_SCALE: f64 = 10.0;

/// Tokens used for scoring: the shared tokeniser minus punctuation-only tokens.
pub fn metric_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .collect()
}

fn check_lengths<A, B>(cands: &[A], refs: &[B]) -> Result<()> {
    if cands.len() != refs.len() {
        return Err(Error::LengthMismatch {
            candidates: cands.len(),
            references: refs.len(),
        });
    }
    Ok(())
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus-level BLEU-1..4 (index `n - 1`) with brevity penalty and no
/// smoothing; a zero n-gram precision makes that and higher orders zero.
pub fn bleu(cands: &[Vec<String>], refs: &[Vec<String>]) -> Result<[f64; 4]> {
    check_lengths(cands, refs)?;
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, r) in cands.iter().zip(refs) {
        c_len += c.len();
        r_len += r.len();
        for n in 1..=4 {
            let rc = ngram_counts(r, n);
            for (g, k) in ngram_counts(c, n) {
                matched[n - 1] += k.min(rc.get(g).copied().unwrap_or(0));
            }
            total[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    if c_len == 0 {
        return Ok([0.0; 4]);
    }
    let bp = if c_len >= r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    let mut out = [0.0; 4];
    let mut log_sum = 0.0;
    for n in 1..=4 {
        if matched[n - 1] == 0 || total[n - 1] == 0 {
            break;
        }
        log_sum += (matched[n - 1] as f64 / total[n - 1] as f64).ln();
        out[n - 1] = bp * (log_sum / n as f64).exp();
    }
    Ok(out)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure of one pair.
pub fn rouge_l_pair(cand: &[String], reference: &[String]) -> f64 {
    let lcs = lcs_len(cand, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / cand.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Mean per-pair ROUGE-L.
pub fn rouge_l(cands: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64> {
    check_lengths(cands, refs)?;
    Ok(mean(cands.iter().zip(refs).map(|(c, r)| rouge_l_pair(c, r))))
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Suffix-stripping stemmer used by METEOR's second matching stage.
pub fn stem(word: &str) -> String {
    const RULES: [(&str, &str); 5] = [("ies", "y"), ("ing", ""), ("ed", ""), ("ly", ""), ("s", "")];
    for (suffix, repl) in RULES {
        if let Some(base) = word.strip_suffix(suffix) {
            if base.chars().count() < 3 {
                continue;
            }
            if suffix == "s" && (base.ends_with('s') || base.ends_with('u') || base.ends_with('i')) {
                continue;
            }
            return format!("{base}{repl}");
        }
    }
    word.to_string()
}

/// Unigram alignment: exact matches first, then stem matches among what is
/// left. Each candidate token, left to right, takes the reference token that
/// continues the previous alignment if possible, else the leftmost free one.
/// Returns `(candidate index, reference index)` pairs sorted by candidate.
pub fn meteor_alignment(cand: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let mut ref_used = vec![false; reference.len()];
    let mut align: Vec<Option<usize>> = vec![None; cand.len()];
    let stems_c: Vec<String> = cand.iter().map(|w| stem(w)).collect();
    let stems_r: Vec<String> = reference.iter().map(|w| stem(w)).collect();
    for stage in 0..2 {
        for i in 0..cand.len() {
            if align[i].is_some() {
                continue;
            }
            let same = |j: usize| {
                if stage == 0 {
                    cand[i] == reference[j]
                } else {
                    stems_c[i] == stems_r[j]
                }
            };
            let follow = i
                .checked_sub(1)
                .and_then(|p| align[p])
                .map(|pj| pj + 1)
                .filter(|&j| j < reference.len() && !ref_used[j] && same(j));
            let pick = follow.or_else(|| (0..reference.len()).find(|&j| !ref_used[j] && same(j)));
            if let Some(j) = pick {
                ref_used[j] = true;
                align[i] = Some(j);
            }
        }
    }
    align
        .into_iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j)))
        .collect()
}

/// Number of maximal runs of alignments adjacent in both strings.
pub fn chunk_count(alignment: &[(usize, usize)]) -> usize {
    let mut chunks = 0;
    for (k, &(i, j)) in alignment.iter().enumerate() {
        let continues = k > 0 && {
            let (pi, pj) = alignment[k - 1];
            i == pi + 1 && j == pj + 1
        };
        if !continues {
            chunks += 1;
        }
    }
    chunks
}

pub fn meteor_pair(cand: &[String], reference: &[String]) -> f64 {
    let align = meteor_alignment(cand, reference);
    let m = align.len();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / cand.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let frag = chunk_count(&align) as f64 / m as f64;
    let penalty = METEOR_GAMMA * frag.powf(METEOR_BETA);
    fmean * (1.0 - penalty)
}

/// Mean per-pair METEOR without synonym matching.
pub fn meteor_lite(cands: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64> {
    check_lengths(cands, refs)?;
    Ok(mean(cands.iter().zip(refs).map(|(c, r)| meteor_pair(c, r))))
}

type TfIdf = HashMap<Vec<String>, f64>;

fn tfidf(tokens: &[String], n: usize, df: &HashMap<Vec<String>, usize>, log_docs: f64) -> TfIdf {
    ngram_counts(tokens, n)
        .into_iter()
        .map(|(g, k)| {
            let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
            (g.to_vec(), k as f64 * (log_docs - d.ln()))
        })
        .collect()
}

fn cosine(a: &TfIdf, b: &TfIdf) -> f64 {
    let na: f64 = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().map(|(g, v)| v * b.get(g).copied().unwrap_or(0.0)).sum();
    dot / (na * nb)
}

/// Per-pair CIDEr scores. Document frequencies come from the references
/// (one document per pair); each pair scores the mean over n = 1..4 of the
/// TF-IDF cosine similarity, times 10.
pub fn cider_pairs(cands: &[Vec<String>], refs: &[Vec<String>]) -> Result<Vec<f64>> {
    check_lengths(cands, refs)?;
    let log_docs = (refs.len().max(1) as f64).ln();
    let mut scores = vec![0.0; cands.len()];
    for n in 1..=CIDER_MAX_N {
        let mut df: HashMap<Vec<String>, usize> = HashMap::new();
        for r in refs {
            for g in ngram_counts(r, n).into_keys() {
                *df.entry(g.to_vec()).or_insert(0) += 1;
            }
        }
        for (i, (c, r)) in cands.iter().zip(refs).enumerate() {
            let sim = cosine(&tfidf(c, n, &df, log_docs), &tfidf(r, n, &df, log_docs));
            scores[i] += sim / CIDER_MAX_N as f64 * CIDER_SCALE;
        }
    }
    Ok(scores)
}

pub fn cider(cands: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64> {
    Ok(mean(cider_pairs(cands, refs)?.into_iter()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlgScores {
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider: f64,
}

/// All text metrics for aligned candidate/reference strings; `None` when
/// there are no pairs.
pub fn score_texts(cands: &[&str], refs: &[&str]) -> Result<Option<NlgScores>> {
    check_lengths(cands, refs)?;
    if cands.is_empty() {
        return Ok(None);
    }
    let c: Vec<Vec<String>> = cands.iter().map(|t| metric_tokens(t)).collect();
    let r: Vec<Vec<String>> = refs.iter().map(|t| metric_tokens(t)).collect();
    Ok(Some(NlgScores {
        bleu: bleu(&c, &r)?,
        rouge_l: rouge_l(&c, &r)?,
        meteor: meteor_lite(&c, &r)?,
        cider: cider(&c, &r)?,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        metric_tokens(s)
    }

    #[test]
    fn punctuation_dropped() {
        assert_eq!(toks("Left-sided opacity, likely pneumonia."), ["left-sided", "opacity", "likely", "pneumonia"]);
    }

    #[test]
    fn identity_scores_one() {
        let c = vec![toks("the left lower lobe opacity is concerning for pneumonia")];
        let b = bleu(&c, &c).unwrap();
        for v in b {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert!((rouge_l(&c, &c).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_scores_zero() {
        let c = vec![toks("alpha beta gamma delta"), toks("one two three four")];
        let r = vec![toks("left lower lobe opacity"), toks("pleural effusion is present")];
        assert_eq!(bleu(&c, &r).unwrap(), [0.0; 4]);
        assert_eq!(rouge_l(&c, &r).unwrap(), 0.0);
        assert_eq!(meteor_lite(&c, &r).unwrap(), 0.0);
        assert_eq!(cider(&c, &r).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch() {
        let c = vec![toks("a")];
        assert!(matches!(bleu(&c, &[]), Err(Error::LengthMismatch { .. })));
        assert!(score_texts(&["a"], &[]).is_err());
        assert_eq!(score_texts(&[], &[]).unwrap(), None);
    }

    #[test]
    fn stemmer() {
        assert_eq!(stem("opacities"), "opacity");
        assert_eq!(stem("effusions"), "effusion");
        assert_eq!(stem("increased"), "increas");
        assert_eq!(stem("atelectasis"), "atelectasis");
        assert_eq!(stem("mass"), "mass");
        assert_eq!(stem("is"), "is");
    }

    #[test]
    fn alignment_prefers_continuing_chunks() {
        let c = toks("a b a b");
        let r = toks("x a b");
        let al = meteor_alignment(&c, &r);
        assert_eq!(al, vec![(0, 1), (1, 2)]);
        assert_eq!(chunk_count(&al), 1);
        let al = meteor_alignment(&toks("opacities seen"), &toks("opacity seen"));
        assert_eq!(al, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn meteor_pair_by_hand() {
        // m = 3 of 4 candidate / 5 reference tokens, 2 chunks
        let c = toks("opacity at right base");
        let r = toks("right base opacity is present");
        let p: f64 = 3.0 / 4.0;
        let rr: f64 = 3.0 / 5.0;
        let fmean = p * rr / (0.9 * p + 0.1 * rr);
        let expected = fmean * (1.0 - 0.5 * (2.0f64 / 3.0).powi(3));
        assert!((meteor_pair(&c, &r) - expected).abs() < 1e-12);
    }

    #[test]
    fn cider_single_pair_is_zero() {
        // one document: every n-gram has idf log(1) - log(1) = 0
        let c = vec![toks("opacity")];
        assert_eq!(cider(&c, &c).unwrap(), 0.0);
    }

    #[test]
    fn bleu_brevity_penalty() {
        let c = vec![toks("a b c d")];
        let r = vec![toks("a b c d e f g h")];
        let b = bleu(&c, &r).unwrap();
        assert!((b[0] - (1.0f64 - 2.0).exp()).abs() < 1e-12);
        assert!((b[3] - (1.0f64 - 2.0).exp()).abs() < 1e-12);
    }
}
