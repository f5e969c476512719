//! Data model and JSONL I/O for tuple-based data-to-text corpora.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::DataError;

/// Normalize text: Unicode NFC, lowercase, collapse whitespace runs.
pub fn normalize(s: &str) -> String {
    let nfc: String = s.nfc().collect();
    nfc.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// A (subject, predicate, object) triple, the atomic input unit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tuple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl Tuple {
    pub fn new(subject: &str, predicate: &str, object: &str) -> Self {
        Tuple {
            subject: subject.to_string(),
            predicate: predicate.to_string(),
            object: object.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.predicate.trim().is_empty() {
            return Err(DataError::Invalid("empty predicate".into()));
        }
        if self.subject.is_empty() || self.object.is_empty() {
            return Err(DataError::Invalid("empty subject or object".into()));
        }
        Ok(())
    }
}

/// A reference text, optionally pre-split into sentences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sentences: Option<Vec<String>>,
}

impl Reference {
    pub fn new(text: &str) -> Self {
        Reference { text: text.to_string(), sentences: None }
    }

    /// Sentences of this reference: the pre-split list when present,
    /// otherwise the rule-based splitter output.
    pub fn sentence_list(&self) -> Vec<String> {
        match &self.sentences {
            Some(s) => s.clone(),
            None => crate::align::split_sentences(&self.text),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if let Some(sents) = &self.sentences {
            let joined = normalize(&sents.join(" "));
            if joined != normalize(&self.text) {
                return Err(DataError::Invalid(format!(
                    "sentences do not reconstruct text: {:?}",
                    self.text
                )));
            }
        }
        Ok(())
    }
}

/// One corpus example: input tuples plus one or more reference texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub tuples: Vec<Tuple>,
    pub references: Vec<Reference>,
}

impl CorpusRecord {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.tuples.is_empty() {
            return Err(DataError::Invalid(format!("record {}: no tuples", self.id)));
        }
        if self.references.is_empty() {
            return Err(DataError::Invalid(format!("record {}: no references", self.id)));
        }
        for t in &self.tuples {
            t.validate()?;
        }
        for r in &self.references {
            r.validate()?;
        }
        Ok(())
    }

    /// Order-agnostic multiset of this record's predicates.
    pub fn composition_key(&self) -> PredicateComposition {
        let mut preds: Vec<String> =
            self.tuples.iter().map(|t| normalize(&t.predicate)).collect();
        preds.sort();
        PredicateComposition(preds)
    }
}

/// Lexicographically sorted multiset of predicate strings.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PredicateComposition(pub Vec<String>);

impl fmt::Display for PredicateComposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.0.join(","))
    }
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub records: Vec<CorpusRecord>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CorpusRecord> {
        self.records.iter().find(|r| r.id == id)
    }
}

/// Load a JSONL corpus; one record per line, ids unique.
pub fn load_corpus(path: &Path) -> Result<Corpus, DataError> {
    let file = std::fs::File::open(path)
        .map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| DataError::Io(format!("line {lineno}: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(&line)
            .map_err(|e| DataError::Parse(format!("line {lineno}: {e}")))?;
        rec.validate()?;
        if let Some(prev) = seen.insert(rec.id.clone(), lineno) {
            return Err(DataError::DuplicateId(format!(
                "duplicate id {} (lines {prev},{lineno})",
                rec.id
            )));
        }
        records.push(rec);
    }
    Ok(Corpus { records })
}

/// Write a corpus as UTF-8 JSONL, `\n`-terminated lines.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), DataError> {
    let mut out = std::fs::File::create(path)
        .map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    for rec in &corpus.records {
        let line = serde_json::to_string(rec)
            .map_err(|e| DataError::Parse(e.to_string()))?;
        out.write_all(line.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| DataError::Io(e.to_string()))?;
    }
    Ok(())
}

/// Linearize a tuple with the `<SUB>`/`<PRED>`/`<OBJ>` markers, lowercased,
/// whitespace-tokenized.
pub fn linearize_tuple(t: &Tuple) -> Vec<String> {
    let mut toks = vec!["<SUB>".to_string()];
    toks.extend(normalize(&t.subject).split(' ').map(str::to_string));
    toks.push("<PRED>".to_string());
    toks.extend(normalize(&t.predicate).split(' ').map(str::to_string));
    toks.push("<OBJ>".to_string());
    toks.extend(normalize(&t.object).split(' ').map(str::to_string));
    toks
}

/// Content tokens of a tuple: linearization without the marker tokens.
pub fn tuple_content_tokens(t: &Tuple) -> Vec<String> {
    linearize_tuple(t)
        .into_iter()
        .filter(|tok| !tok.starts_with('<'))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(id: &str, preds: &[&str]) -> CorpusRecord {
        CorpusRecord {
            id: id.to_string(),
            tuples: preds.iter().map(|p| Tuple::new("s", p, "o")).collect(),
            references: vec![Reference::new("s p o.")],
        }
    }

    #[test]
    fn load_round_trip() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            r#"{{"id":"e1","tuples":[{{"subject":"a","predicate":"p","object":"b"}},{{"subject":"c","predicate":"q","object":"d"}}],"references":[{{"text":"a p b. c q d."}}]}}"#
        )
        .unwrap();
        let c = load_corpus(f.path()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.records[0].tuples.len(), 2);
    }

    #[test]
    fn duplicate_id_names_both_lines() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for i in 1..=7 {
            let id = if i == 3 || i == 7 { "e1".to_string() } else { format!("x{i}") };
            writeln!(
                f,
                r#"{{"id":"{id}","tuples":[{{"subject":"a","predicate":"p","object":"b"}}],"references":[{{"text":"a p b."}}]}}"#
            )
            .unwrap();
        }
        let err = load_corpus(f.path()).unwrap_err();
        assert_eq!(err.to_string(), "duplicate id e1 (lines 3,7)");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            r#"{{"id":"e1","tuples":[{{"subject":"a","predicate":"p","object":"b"}}],"references":[{{"text":"t."}}]}}"#
        )
        .unwrap();
        writeln!(f, "not json").unwrap();
        let err = load_corpus(f.path()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn linearize_paper_example() {
        let t = Tuple::new("spain", "language", "Spanish Language");
        assert_eq!(
            linearize_tuple(&t),
            vec!["<SUB>", "spain", "<PRED>", "language", "<OBJ>", "spanish", "language"]
        );
    }

    #[test]
    fn linearize_lowercases() {
        let t = Tuple::new("A", "p", "B");
        assert_eq!(linearize_tuple(&t), vec!["<SUB>", "a", "<PRED>", "p", "<OBJ>", "b"]);
    }

    #[test]
    fn linearize_token_count() {
        let t = Tuple::new("one two", "pred", "x y z");
        assert_eq!(linearize_tuple(&t).len(), 3 + 2 + 1 + 3);
    }

    #[test]
    fn composition_key_sorted_multiset() {
        assert_eq!(record("e", &["b", "a"]).composition_key().0, vec!["a", "b"]);
        assert_eq!(
            record("e", &["a", "a", "b"]).composition_key().0,
            vec!["a", "a", "b"]
        );
    }

    proptest! {
        #[test]
        fn composition_key_permutation_invariant(perm in prop::sample::subsequence(vec![0usize,1,2,3,4,5], 6)) {
            let preds = ["p1", "p2", "p2", "q", "r", "s"];
            let base = record("e", &preds);
            let mut shuffled = base.clone();
            let mut order: Vec<usize> = (0..6).collect();
            // deterministic permutation from the sampled subsequence
            for (i, &j) in perm.iter().enumerate() {
                order.swap(i, j);
            }
            shuffled.tuples = order.iter().map(|&i| base.tuples[i].clone()).collect();
            prop_assert_eq!(base.composition_key(), shuffled.composition_key());
        }

        #[test]
        fn save_load_identity(n in 1usize..10, seed in 0u64..1000) {
            let mut records = Vec::new();
            for i in 0..n {
                let mut r = record(&format!("id{i}"), &["p", "q"]);
                r.tuples[0].subject = format!("subj {} {seed}", i);
                records.push(r);
            }
            let corpus = Corpus { records };
            let f = tempfile::NamedTempFile::new().unwrap();
            save_corpus(&corpus, f.path()).unwrap();
            let loaded = load_corpus(f.path()).unwrap();
            prop_assert_eq!(corpus.records, loaded.records);
        }
    }
}
