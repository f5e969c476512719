//! Silver alignment of tuples to reference sentences, rule-based text
//! preprocessing, and the Hungarian assignment used in RL training.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize, tuple_content_tokens, Corpus, CorpusRecord};
use crate::error::NumericError;
use crate::metrics::bleu_sentence;

/// Bundled word list for greedy segmentation of glued predicates.
fn segmentation_dict() -> &'static HashSet<&'static str> {
    use std::sync::OnceLock;
    static DICT: OnceLock<HashSet<&'static str>> = OnceLock::new();
    DICT.get_or_init(|| {
        include_str!("../data/wordlist.txt")
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect()
    })
}

/// Tuple-to-sentence assignment for one record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SilverAlignment {
    pub id: String,
    pub assignment: Vec<usize>,
}

impl SilverAlignment {
    /// Partition of tuple indices by sentence index, ordered by sentence.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut by_sentence: Vec<(usize, Vec<usize>)> = Vec::new();
        for (i, &s) in self.assignment.iter().enumerate() {
            match by_sentence.iter_mut().find(|(sent, _)| *sent == s) {
                Some((_, members)) => members.push(i),
                None => by_sentence.push((s, vec![i])),
            }
        }
        by_sentence.sort_by_key(|(s, _)| *s);
        by_sentence.into_iter().map(|(_, m)| m).collect()
    }

    /// Cluster label per tuple (labels numbered by sentence order).
    pub fn labels(&self) -> Vec<usize> {
        let mut sentences: Vec<usize> = self.assignment.clone();
        sentences.sort_unstable();
        sentences.dedup();
        self.assignment
            .iter()
            .map(|s| sentences.iter().position(|x| x == s).unwrap())
            .collect()
    }
}

/// Rule-based sentence splitter: a sentence ends at a run of `.`/`!`/`?`
/// (plus closing quotes or brackets) followed by whitespace. Text without
/// terminal punctuation is a single sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        if matches!(chars[i], '.' | '!' | '?') {
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j], '.' | '!' | '?' | '"' | '\'' | ')' | ']') {
                j += 1;
            }
            if j >= chars.len() || chars[j].is_whitespace() {
                let sent: String = chars[start..j].iter().collect();
                let sent = sent.trim().to_string();
                if !sent.is_empty() {
                    sentences.push(sent);
                }
                while j < chars.len() && chars[j].is_whitespace() {
                    j += 1;
                }
                start = j;
            }
            i = j.max(i + 1);
        } else {
            i += 1;
        }
    }
    if start < chars.len() {
        let tail: String = chars[start..].iter().collect();
        let tail = tail.trim().to_string();
        if !tail.is_empty() {
            sentences.push(tail);
        }
    }
    if sentences.is_empty() {
        sentences.push(text.trim().to_string());
    }
    sentences
}

/// Greedy longest-prefix segmentation over the bundled word list.
/// Returns None when the word cannot be fully segmented.
fn segment_glued(word: &str) -> Option<Vec<String>> {
    let dict = segmentation_dict();
    let mut rest = word;
    let mut parts = Vec::new();
    while !rest.is_empty() {
        let mut matched = None;
        for end in (2..=rest.len()).rev() {
            if !rest.is_char_boundary(end) {
                continue;
            }
            if dict.contains(&rest[..end]) {
                matched = Some(end);
                break;
            }
        }
        let end = matched?;
        parts.push(rest[..end].to_string());
        rest = &rest[end..];
    }
    if parts.len() > 1 {
        Some(parts)
    } else {
        None
    }
}

/// Tokenize a predicate: split on case transitions, underscores, digits and
/// punctuation, lowercase, then greedily segment residual glued words.
pub fn tokenize_predicate(p: &str) -> Vec<String> {
    let mut raw: Vec<String> = Vec::new();
    let mut cur = String::new();
    let mut prev: Option<char> = None;
    for c in p.chars() {
        let boundary = match prev {
            None => false,
            Some(pc) => {
                (pc.is_lowercase() && c.is_uppercase())
                    || (pc.is_alphabetic() && c.is_ascii_digit())
                    || (pc.is_ascii_digit() && c.is_alphabetic())
            }
        };
        if !c.is_alphanumeric() {
            if !cur.is_empty() {
                raw.push(std::mem::take(&mut cur));
            }
            prev = None;
            continue;
        }
        if boundary && !cur.is_empty() {
            raw.push(std::mem::take(&mut cur));
        }
        cur.push(c);
        prev = Some(c);
    }
    if !cur.is_empty() {
        raw.push(cur);
    }
    let mut out = Vec::new();
    for tok in raw {
        let lower = tok.to_lowercase();
        if lower.chars().all(|c| c.is_alphabetic())
            && !segmentation_dict().contains(lower.as_str())
        {
            if let Some(parts) = segment_glued(&lower) {
                out.extend(parts);
                continue;
            }
        }
        out.push(lower);
    }
    out
}

/// Align each tuple of a record to the argmax-BLEU sentence of the FIRST
/// reference; ties break toward the lowest sentence index.
pub fn align_tuples(record: &CorpusRecord) -> SilverAlignment {
    let sentences = record.references[0].sentence_list();
    let sent_tokens: Vec<Vec<String>> =
        sentences.iter().map(|s| text_tokens(s)).collect();
    let mut assignment = Vec::with_capacity(record.tuples.len());
    for t in &record.tuples {
        let hyp = tuple_content_tokens(t);
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for (j, sent) in sent_tokens.iter().enumerate() {
            let score = bleu_sentence(&hyp, sent);
            if score > best_score {
                best_score = score;
                best = j;
            }
        }
        assignment.push(best);
    }
    SilverAlignment { id: record.id.clone(), assignment }
}

/// Alphanumeric-run tokenizer used when comparing tuples to sentences.
pub fn text_tokens(s: &str) -> Vec<String> {
    normalize(s)
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Bijective cluster-to-sentence assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub cluster_to_sentence: Vec<usize>,
}

/// Minimum-cost assignment via the Hungarian algorithm (potentials and
/// shortest augmenting paths). Rectangular inputs are padded to square with
/// 10 * max|entry| + 1; padded rows/columns are dropped from the result.
pub fn hungarian_assign(cost: &[Vec<f64>]) -> Result<(Assignment, f64), NumericError> {
    let rows = cost.len();
    if rows == 0 {
        return Ok((Assignment { cluster_to_sentence: vec![] }, 0.0));
    }
    let cols = cost[0].len();
    if cost.iter().any(|r| r.len() != cols) {
        return Err(NumericError::Invalid("ragged cost matrix".into()));
    }
    let mut max_abs = 0.0f64;
    for row in cost {
        for &v in row {
            if !v.is_finite() {
                return Err(NumericError::NonFinite("cost matrix".into()));
            }
            max_abs = max_abs.max(v.abs());
        }
    }
    let dim = rows.max(cols);
    let pad = 10.0 * max_abs + 1.0;
    let a = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            cost[i][j]
        } else {
            pad
        }
    };

    // Classic 1-indexed potential formulation.
    let inf = f64::INFINITY;
    let mut u = vec![0.0f64; dim + 1];
    let mut v = vec![0.0f64; dim + 1];
    let mut p = vec![0usize; dim + 1]; // column -> row
    let mut way = vec![0usize; dim + 1];
    for i in 1..=dim {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; dim + 1];
        let mut used = vec![false; dim + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=dim {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=dim {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![usize::MAX; dim];
    for j in 1..=dim {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    let mut total = 0.0;
    let mut mapping = Vec::with_capacity(rows);
    for (i, &j) in row_to_col.iter().enumerate().take(rows) {
        if j < cols {
            total += cost[i][j];
            mapping.push(j);
        } else {
            // padded column: only possible for rectangular input
            mapping.push(usize::MAX);
        }
    }
    Ok((Assignment { cluster_to_sentence: mapping }, total))
}

/// Per-predicate count of training records whose tuple with that predicate
/// is silver-aligned to the first sentence.
pub fn first_sentence_counts(corpus: &Corpus) -> HashMap<String, usize> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for record in &corpus.records {
        let alignment = align_tuples(record);
        let mut seen: HashSet<String> = HashSet::new();
        for (i, &s) in alignment.assignment.iter().enumerate() {
            if s == 0 {
                seen.insert(normalize(&record.tuples[i].predicate));
            }
        }
        for p in seen {
            *counts.entry(p).or_insert(0) += 1;
        }
    }
    counts
}

/// Write silver alignments as JSONL.
pub fn save_alignments(
    alignments: &[SilverAlignment],
    path: &std::path::Path,
) -> Result<(), crate::error::DataError> {
    use std::io::Write;
    let mut out = std::fs::File::create(path)
        .map_err(|e| crate::error::DataError::Io(e.to_string()))?;
    for a in alignments {
        let line = serde_json::to_string(a)
            .map_err(|e| crate::error::DataError::Parse(e.to_string()))?;
        out.write_all(line.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| crate::error::DataError::Io(e.to_string()))?;
    }
    Ok(())
}

/// Load silver alignments from JSONL, keyed by record id.
pub fn load_alignments(
    path: &std::path::Path,
) -> Result<HashMap<String, SilverAlignment>, crate::error::DataError> {
    use std::io::BufRead;
    let file = std::fs::File::open(path)
        .map_err(|e| crate::error::DataError::Io(format!("{}: {e}", path.display())))?;
    let mut map = HashMap::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| crate::error::DataError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let a: SilverAlignment = serde_json::from_str(&line).map_err(|e| {
            crate::error::DataError::Parse(format!("line {}: {e}", lineno + 1))
        })?;
        map.insert(a.id.clone(), a);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Reference, Tuple};
    use proptest::prelude::*;

    #[test]
    fn split_on_period_boundaries() {
        assert_eq!(split_sentences("a is b. c is d."), vec!["a is b.", "c is d."]);
    }

    #[test]
    fn split_hand_corpus() {
        let cases: Vec<(&str, Vec<&str>)> = vec![
            ("it is 1932-07-27. done.", vec!["it is 1932-07-27.", "done."]),
            ("pi is 3.14 exactly.", vec!["pi is 3.14 exactly."]),
            ("what? yes! ok.", vec!["what?", "yes!", "ok."]),
            ("no punctuation here", vec!["no punctuation here"]),
            ("trailing space. ", vec!["trailing space."]),
            ("one. two.  three.", vec!["one.", "two.", "three."]),
            ("a.b stays glued. next.", vec!["a.b stays glued.", "next."]),
            ("ends mid sentence", vec!["ends mid sentence"]),
            ("he said \"stop.\" then left.", vec!["he said \"stop.\"", "then left."]),
            ("born 1955-01-02.", vec!["born 1955-01-02."]),
            ("x!", vec!["x!"]),
            ("a. b. c", vec!["a.", "b.", "c"]),
            ("version 2.0 shipped. hooray.", vec!["version 2.0 shipped.", "hooray."]),
            ("multi...dots. end.", vec!["multi...dots.", "end."]),
            ("tab\tseparated. fine.", vec!["tab\tseparated.", "fine."]),
            ("period at end.", vec!["period at end."]),
            ("(quoted.) after.", vec!["(quoted.)", "after."]),
            ("5 km long. 3 m wide.", vec!["5 km long.", "3 m wide."]),
            ("a!? b.", vec!["a!?", "b."]),
            ("single", vec!["single"]),
        ];
        for (input, expected) in cases {
            assert_eq!(split_sentences(input), expected, "input: {input:?}");
        }
    }

    #[test]
    fn tokenize_camel_case() {
        assert_eq!(tokenize_predicate("leaderName"), vec!["leader", "name"]);
    }

    #[test]
    fn tokenize_underscore_digit() {
        assert_eq!(tokenize_predicate("isPartOf_1"), vec!["is", "part", "of", "1"]);
    }

    #[test]
    fn tokenize_glued_words() {
        assert_eq!(tokenize_predicate("runwaylength"), vec!["runway", "length"]);
        assert_eq!(tokenize_predicate("birthplace"), vec!["birthplace"]); // in dict as-is
        assert_eq!(tokenize_predicate("deathdate"), vec!["death", "date"]);
    }

    fn rec(tuples: Vec<Tuple>, text: &str) -> CorpusRecord {
        CorpusRecord {
            id: "t".into(),
            tuples,
            references: vec![Reference::new(text)],
        }
    }

    #[test]
    fn align_single_sentence_forces_group_zero() {
        let r = rec(
            vec![Tuple::new("a", "p", "b"), Tuple::new("c", "q", "d")],
            "a p b and c q d.",
        );
        let a = align_tuples(&r);
        assert_eq!(a.assignment, vec![0, 0]);
        assert_eq!(a.groups(), vec![vec![0, 1]]);
    }

    #[test]
    fn align_two_sentences() {
        let r = rec(
            vec![Tuple::new("a", "p", "b"), Tuple::new("c", "q", "d")],
            "a p b. c q d.",
        );
        assert_eq!(align_tuples(&r).assignment, vec![0, 1]);
    }

    #[test]
    fn align_permutation_equivariant() {
        let t1 = Tuple::new("a", "p", "b");
        let t2 = Tuple::new("c", "q", "d");
        let text = "a p b. c q d.";
        let fwd = align_tuples(&rec(vec![t1.clone(), t2.clone()], text));
        let rev = align_tuples(&rec(vec![t2, t1], text));
        assert_eq!(fwd.assignment, vec![0, 1]);
        assert_eq!(rev.assignment, vec![1, 0]);
    }

    #[test]
    fn hungarian_two_by_two() {
        let (a, cost) = hungarian_assign(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert_eq!(a.cluster_to_sentence, vec![0, 1]);
        assert_eq!(cost, 2.0);
    }

    #[test]
    fn hungarian_zero_diagonal() {
        let m = 4;
        let cost: Vec<Vec<f64>> = (0..m)
            .map(|i| (0..m).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
            .collect();
        let (a, total) = hungarian_assign(&cost).unwrap();
        assert_eq!(a.cluster_to_sentence, vec![0, 1, 2, 3]);
        assert_eq!(total, 0.0);
    }

    #[test]
    fn hungarian_rejects_non_finite() {
        assert!(hungarian_assign(&[vec![f64::NAN]]).is_err());
    }

    fn brute_force_min(cost: &[Vec<f64>]) -> f64 {
        let m = cost.len();
        let mut perm: Vec<usize> = (0..m).collect();
        let mut best = f64::INFINITY;
        permute(&mut perm, 0, &mut |p| {
            let c: f64 = p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
            if c < best {
                best = c;
            }
        });
        best
    }

    fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }

    proptest! {
        #[test]
        fn hungarian_matches_brute_force(m in 1usize..=6, vals in prop::collection::vec(0.0f64..10.0, 36)) {
            let cost: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| vals[i*6+j]).collect()).collect();
            let (_, total) = hungarian_assign(&cost).unwrap();
            let best = brute_force_min(&cost);
            prop_assert!((total - best).abs() < 1e-9, "{total} vs {best}");
        }

        #[test]
        fn hungarian_row_shift_invariance(m in 2usize..=5, vals in prop::collection::vec(0.0f64..10.0, 25), row in 0usize..5, shift in -5.0f64..5.0) {
            let row = row % m;
            let cost: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| vals[i*5+j]).collect()).collect();
            let mut shifted = cost.clone();
            for v in &mut shifted[row] {
                *v += shift;
            }
            let (a1, _) = hungarian_assign(&cost).unwrap();
            let (a2, _) = hungarian_assign(&shifted).unwrap();
            // argmin invariance only guaranteed when the optimum is unique;
            // compare totals through the original matrix instead.
            let t1: f64 = a1.cluster_to_sentence.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
            let t2: f64 = a2.cluster_to_sentence.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
            prop_assert!((t1 - t2).abs() < 1e-9);
        }
    }

    #[test]
    fn hungarian_rectangular_padding() {
        // 2 clusters, 3 sentences: best columns picked, one sentence unused
        let cost = vec![vec![5.0, 1.0, 9.0], vec![2.0, 6.0, 1.0]];
        let (a, total) = hungarian_assign(&cost).unwrap();
        assert_eq!(a.cluster_to_sentence, vec![1, 2]);
        assert_eq!(total, 2.0);
    }

    #[test]
    fn first_sentence_counts_hand_tally() {
        let corpus = Corpus {
            records: vec![
                rec(vec![Tuple::new("a", "p", "b"), Tuple::new("c", "q", "d")], "a p b. c q d."),
                rec(vec![Tuple::new("a", "p", "b")], "a p b."),
                rec(vec![Tuple::new("c", "q", "d")], "c q d."),
            ],
        };
        let counts = first_sentence_counts(&corpus);
        // q aligns to the second sentence of the first record, so only the
        // third record contributes to its first-sentence tally
        assert_eq!(counts.get("p"), Some(&2));
        assert_eq!(counts.get("q"), Some(&1));
    }

    #[test]
    fn labels_number_by_sentence_order() {
        let a = SilverAlignment { id: "x".into(), assignment: vec![2, 0, 2, 0] };
        assert_eq!(a.labels(), vec![1, 0, 1, 0]);
        assert_eq!(a.groups(), vec![vec![1, 3], vec![0, 2]]);
    }
}
