//! Evaluation primitives: BLEU, normalized mutual information over
//! clusterings, and a rule-based slot-coverage faithfulness proxy.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize, tuple_content_tokens, CorpusRecord};
use crate::error::NumericError;

const MAX_ORDER: usize = 4;

/// Fixed English function-word list used by the faithfulness proxy.
pub fn stop_words() -> &'static HashSet<&'static str> {
    use std::sync::OnceLock;
    static STOPS: OnceLock<HashSet<&'static str>> = OnceLock::new();
    STOPS.get_or_init(|| {
        include_str!("../data/stopwords.txt")
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect()
    })
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n {
        for win in tokens.windows(n) {
            *counts.entry(win).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches of `hyp` against the best reference counts.
fn clipped_matches(hyp: &[String], refs: &[Vec<String>], n: usize) -> (usize, usize) {
    let hyp_counts = ngram_counts(hyp, n);
    let total: usize = hyp_counts.values().sum();
    let mut matches = 0;
    for (gram, &count) in &hyp_counts {
        let best_ref = refs
            .iter()
            .map(|r| ngram_counts(r, n).get(gram).copied().unwrap_or(0))
            .max()
            .unwrap_or(0);
        matches += count.min(best_ref);
    }
    (matches, total)
}

/// Reference length closest to the hypothesis length (ties to the shorter).
fn effective_ref_len(hyp_len: usize, refs: &[Vec<String>]) -> usize {
    refs.iter()
        .map(|r| r.len())
        .min_by_key(|&rl| {
            let diff = (rl as i64 - hyp_len as i64).abs();
            (diff, rl)
        })
        .unwrap_or(0)
}

fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        return 0.0;
    }
    if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// Corpus BLEU-4: geometric mean of clipped n-gram precisions times the
/// brevity penalty. No smoothing; a vanishing precision yields 0.
pub fn bleu_corpus(
    hypotheses: &[Vec<String>],
    references: &[Vec<Vec<String>>],
) -> Result<f64, NumericError> {
    if hypotheses.is_empty() {
        return Err(NumericError::Invalid("empty hypothesis list".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(NumericError::Invalid(format!(
            "{} hypotheses vs {} reference sets",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (hyp, refs) in hypotheses.iter().zip(references) {
        if refs.is_empty() {
            return Err(NumericError::Invalid("hypothesis with no reference".into()));
        }
        hyp_len += hyp.len();
        ref_len += effective_ref_len(hyp.len(), refs);
        for n in 1..=MAX_ORDER {
            let (m, t) = clipped_matches(hyp, refs, n);
            matches[n - 1] += m;
            totals[n - 1] += t;
        }
    }
    // Effective order: n-gram orders with no hypothesis n-grams at all are
    // excluded from the geometric mean; a zero match count with a nonzero
    // total still collapses the score to 0 (no corpus-level smoothing).
    let mut log_prec = 0.0;
    let mut orders = 0usize;
    for n in 0..MAX_ORDER {
        if totals[n] == 0 {
            continue;
        }
        if matches[n] == 0 {
            return Ok(0.0);
        }
        log_prec += (matches[n] as f64 / totals[n] as f64).ln();
        orders += 1;
    }
    if orders == 0 {
        return Ok(0.0);
    }
    Ok(brevity_penalty(hyp_len, ref_len) * (log_prec / orders as f64).exp())
}

/// Sentence-level BLEU-4 with add-epsilon smoothing on zero n-gram counts.
/// Comparable across candidates; used for argmax alignment.
pub fn bleu_sentence(hyp: &[String], reference: &[String]) -> f64 {
    const EPS: f64 = 1e-9;
    if hyp.is_empty() {
        return 0.0;
    }
    let reference_owned = reference.to_vec();
    let refs = std::slice::from_ref(&reference_owned);
    let mut log_prec = 0.0;
    for n in 1..=MAX_ORDER {
        let (m, t) = clipped_matches(hyp, refs, n);
        let p = if t == 0 { EPS } else { (m as f64).max(EPS) / t as f64 };
        log_prec += p.ln();
    }
    brevity_penalty(hyp.len(), reference.len()) * (log_prec / MAX_ORDER as f64).exp()
}

/// Normalized mutual information between two clusterings:
/// 2 I(A;B) / (H(A) + H(B)), natural logs, arithmetic-mean denominator.
/// When both clusterings are single-cluster (H = 0), defined as 1.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64, NumericError> {
    if a.len() != b.len() {
        return Err(NumericError::Invalid(format!(
            "label length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(NumericError::Invalid("empty labelings".into()));
    }
    let n = a.len() as f64;
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    let mut ca: HashMap<usize, f64> = HashMap::new();
    let mut cb: HashMap<usize, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_insert(0.0) += 1.0;
        *ca.entry(x).or_insert(0.0) += 1.0;
        *cb.entry(y).or_insert(0.0) += 1.0;
    }
    let h = |counts: &HashMap<usize, f64>| -> f64 {
        counts
            .values()
            .map(|&c| {
                let p = c / n;
                -p * p.ln()
            })
            .sum()
    };
    let ha = h(&ca);
    let hb = h(&cb);
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    // identical partitions (a bijection between cluster ids) give exactly 1,
    // without floating-point residue from the entropy sums
    if ca.len() == cb.len() && joint.len() == ca.len() {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (&(x, y), &c) in &joint {
        let pxy = c / n;
        let px = ca[&x] / n;
        let py = cb[&y] / n;
        mi += pxy * (pxy / (px * py)).ln();
    }
    Ok((2.0 * mi / (ha + hb)).clamp(0.0, 1.0))
}

/// Coverage/hallucination report for one generated text.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FaithfulnessReport {
    pub omitted_tuples: Vec<usize>,
    pub extraneous_token_ratio: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct FaithfulnessConfig {
    /// Fraction of a field's content tokens that must appear in the text.
    pub coverage_threshold: f64,
    /// Maximum tolerated fraction of unattributable content tokens.
    pub extraneous_threshold: f64,
}

impl Default for FaithfulnessConfig {
    fn default() -> Self {
        FaithfulnessConfig { coverage_threshold: 0.6, extraneous_threshold: 0.25 }
    }
}

fn content_tokens(text: &str) -> Vec<String> {
    normalize(text)
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !stop_words().contains(t))
        .map(str::to_string)
        .collect()
}

fn field_covered(field: &str, text_tokens: &HashSet<String>, tau: f64) -> bool {
    let toks: Vec<String> = content_tokens(field);
    if toks.is_empty() {
        return true;
    }
    let hit = toks.iter().filter(|t| text_tokens.contains(*t)).count();
    hit as f64 / toks.len() as f64 >= tau
}

/// Slot-coverage proxy for hallucination/omission checking. A tuple is
/// covered when enough of its subject and object content tokens appear in
/// the text; extraneous ratio is the fraction of text content tokens not
/// attributable to any input field.
pub fn faithfulness(
    record: &CorpusRecord,
    text: &str,
    cfg: FaithfulnessConfig,
) -> FaithfulnessReport {
    let text_tokens: Vec<String> = content_tokens(text);
    let text_set: HashSet<String> = text_tokens.iter().cloned().collect();
    let mut omitted = Vec::new();
    let mut input_tokens: HashSet<String> = HashSet::new();
    for (i, t) in record.tuples.iter().enumerate() {
        let sub_ok = field_covered(&t.subject, &text_set, cfg.coverage_threshold);
        let obj_ok = field_covered(&t.object, &text_set, cfg.coverage_threshold);
        if !(sub_ok && obj_ok) {
            omitted.push(i);
        }
        for tok in tuple_content_tokens(t) {
            for piece in content_tokens(&tok) {
                input_tokens.insert(piece);
            }
        }
    }
    let extraneous = if text_tokens.is_empty() {
        0.0
    } else {
        let stray = text_tokens.iter().filter(|t| !input_tokens.contains(*t)).count();
        stray as f64 / text_tokens.len() as f64
    };
    FaithfulnessReport {
        ok: omitted.is_empty() && extraneous <= cfg.extraneous_threshold,
        omitted_tuples: omitted,
        extraneous_token_ratio: extraneous,
    }
}
