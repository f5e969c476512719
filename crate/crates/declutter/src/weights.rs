//! Closed-form co-occurrence weights and the gamma matrix of Bernoulli
//! parameters over tuple pairs.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::align::SilverAlignment;
use crate::corpus::{normalize, Corpus, CorpusRecord};
use crate::error::DataError;

/// Predicate occurrence and same-sentence co-occurrence counts.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PairStats {
    pub single: HashMap<String, usize>,
    /// Keyed by the sorted pair "p\u{1f}q".
    pub joint: HashMap<String, usize>,
}

fn pair_key(p: &str, q: &str) -> String {
    if p <= q {
        format!("{p}\u{1f}{q}")
    } else {
        format!("{q}\u{1f}{p}")
    }
}

impl PairStats {
    pub fn single_count(&self, p: &str) -> usize {
        self.single.get(p).copied().unwrap_or(0)
    }

    pub fn joint_count(&self, p: &str, q: &str) -> usize {
        self.joint.get(&pair_key(p, q)).copied().unwrap_or(0)
    }
}

/// Count predicate statistics from silver-aligned records. Records with a
/// single tuple are discarded entirely. Joint counts increment once per
/// unordered predicate pair co-located in the same silver group.
pub fn count_stats(
    corpus: &Corpus,
    alignments: &HashMap<String, SilverAlignment>,
) -> Result<PairStats, DataError> {
    let mut stats = PairStats::default();
    for record in &corpus.records {
        if record.tuples.len() < 2 {
            continue;
        }
        let alignment = alignments
            .get(&record.id)
            .ok_or_else(|| DataError::MissingAlignment(record.id.clone()))?;
        if alignment.assignment.len() != record.tuples.len() {
            return Err(DataError::Invalid(format!(
                "alignment length mismatch for record {}",
                record.id
            )));
        }
        let preds: Vec<String> = record
            .tuples
            .iter()
            .map(|t| normalize(&t.predicate))
            .collect();
        // one occurrence per record per predicate type
        let mut seen: Vec<&str> = preds.iter().map(String::as_str).collect();
        seen.sort_unstable();
        seen.dedup();
        for p in seen {
            *stats.single.entry(p.to_string()).or_insert(0) += 1;
        }
        for group in alignment.groups() {
            for (a, &i) in group.iter().enumerate() {
                for &j in &group[a + 1..] {
                    *stats.joint.entry(pair_key(&preds[i], &preds[j])).or_insert(0) += 1;
                }
            }
        }
    }
    Ok(stats)
}

/// Co-occurrence weight #(p,q) / (#(p) + #(q)); 0 on a zero denominator.
pub fn gamma_numerical(stats: &PairStats, p: &str, q: &str) -> f64 {
    let denom = stats.single_count(p) + stats.single_count(q);
    if denom == 0 {
        return 0.0;
    }
    stats.joint_count(p, q) as f64 / denom as f64
}

/// Symmetric matrix of Bernoulli parameters over tuple pairs; unit diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaMatrix {
    pub n: usize,
    pub rows: Vec<Vec<f64>>,
}

impl GammaMatrix {
    pub fn zeros(n: usize) -> Self {
        let mut rows = vec![vec![0.0; n]; n];
        for (i, row) in rows.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        GammaMatrix { n, rows }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j]
    }

    /// Set the symmetric pair (i,j) and (j,i).
    pub fn set_pair(&mut self, i: usize, j: usize, v: f64) {
        self.rows[i][j] = v;
        self.rows[j][i] = v;
    }

    pub fn validate(&self) -> Result<(), crate::error::NumericError> {
        for i in 0..self.n {
            if (self.rows[i][i] - 1.0).abs() > 1e-12 {
                return Err(crate::error::NumericError::Invalid(
                    "gamma diagonal must be 1".into(),
                ));
            }
            for j in 0..self.n {
                let v = self.rows[i][j];
                if !(0.0..=1.0).contains(&v) {
                    return Err(crate::error::NumericError::Invalid(format!(
                        "gamma entry out of range: {v}"
                    )));
                }
                if (v - self.rows[j][i]).abs() > 1e-12 {
                    return Err(crate::error::NumericError::Asymmetric(
                        (v - self.rows[j][i]).abs(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A source of pairwise predicate weights.
pub trait WeightSource {
    fn weight(&self, record: &CorpusRecord, i: usize, j: usize) -> f64;
}

/// Closed-form counts-based source.
pub struct NumericalSource<'a> {
    pub stats: &'a PairStats,
}

impl WeightSource for NumericalSource<'_> {
    fn weight(&self, record: &CorpusRecord, i: usize, j: usize) -> f64 {
        let p = normalize(&record.tuples[i].predicate);
        let q = normalize(&record.tuples[j].predicate);
        gamma_numerical(self.stats, &p, &q)
    }
}

/// True when tuples i and j share a normalized argument string.
pub fn tuples_share_argument(record: &CorpusRecord, i: usize, j: usize) -> bool {
    let a = &record.tuples[i];
    let b = &record.tuples[j];
    let args_a = [normalize(&a.subject), normalize(&a.object)];
    let args_b = [normalize(&b.subject), normalize(&b.object)];
    args_a.iter().any(|x| args_b.contains(x))
}

/// Build the gamma matrix for one record from a weight source, zeroing
/// entries whose tuples share no argument.
pub fn build_gamma(record: &CorpusRecord, source: &dyn WeightSource) -> GammaMatrix {
    let n = record.tuples.len();
    let mut gamma = GammaMatrix::zeros(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let w = if tuples_share_argument(record, i, j) {
                source.weight(record, i, j).clamp(0.0, 1.0)
            } else {
                0.0
            };
            gamma.set_pair(i, j, w);
        }
    }
    gamma
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Reference, Tuple};

    fn rec(id: &str, tuples: Vec<Tuple>, text: &str) -> CorpusRecord {
        CorpusRecord {
            id: id.into(),
            tuples,
            references: vec![Reference::new(text)],
        }
    }

    fn aligned(id: &str, assignment: Vec<usize>) -> (String, SilverAlignment) {
        (id.to_string(), SilverAlignment { id: id.to_string(), assignment })
    }

    #[test]
    fn count_stats_hand_example() {
        // e1 groups {a,b},{c}; e2 groups {a,b}
        let corpus = Corpus {
            records: vec![
                rec(
                    "e1",
                    vec![
                        Tuple::new("s", "a", "o"),
                        Tuple::new("s", "b", "o"),
                        Tuple::new("s", "c", "o"),
                    ],
                    "x.",
                ),
                rec("e2", vec![Tuple::new("s", "a", "o"), Tuple::new("s", "b", "o")], "x."),
            ],
        };
        let alignments: HashMap<_, _> =
            [aligned("e1", vec![0, 0, 1]), aligned("e2", vec![0, 0])].into();
        let stats = count_stats(&corpus, &alignments).unwrap();
        assert_eq!(stats.joint_count("a", "b"), 2);
        assert_eq!(stats.single_count("a"), 2);
        assert_eq!(stats.single_count("b"), 2);
        assert_eq!(stats.single_count("c"), 1);
        assert_eq!(stats.joint_count("a", "c"), 0);
        assert!((gamma_numerical(&stats, "a", "b") - 0.5).abs() < 1e-12);
        assert_eq!(gamma_numerical(&stats, "a", "zzz"), 0.0);
        assert_eq!(gamma_numerical(&stats, "a", "c"), 0.0);
    }

    #[test]
    fn single_tuple_records_discarded() {
        let corpus = Corpus {
            records: vec![rec("e1", vec![Tuple::new("s", "a", "o")], "x.")],
        };
        let alignments: HashMap<_, _> = [aligned("e1", vec![0])].into();
        let stats = count_stats(&corpus, &alignments).unwrap();
        assert_eq!(stats.single_count("a"), 0);
    }

    #[test]
    fn duplicate_predicate_pair() {
        let corpus = Corpus {
            records: vec![rec(
                "e1",
                vec![Tuple::new("s", "a", "o"), Tuple::new("s", "a", "o2")],
                "x.",
            )],
        };
        let alignments: HashMap<_, _> = [aligned("e1", vec![0, 0])].into();
        let stats = count_stats(&corpus, &alignments).unwrap();
        assert_eq!(stats.joint_count("a", "a"), 1);
        assert_eq!(stats.single_count("a"), 1);
        // (a,a) -> 1/(1+1)
        assert!((gamma_numerical(&stats, "a", "a") - 0.5).abs() < 1e-12);
    }

    #[test]
    fn missing_alignment_errors_with_record() {
        let corpus = Corpus {
            records: vec![rec(
                "e9",
                vec![Tuple::new("s", "a", "o"), Tuple::new("s", "b", "o")],
                "x.",
            )],
        };
        let err = count_stats(&corpus, &HashMap::new()).unwrap_err();
        assert!(err.to_string().contains("e9"));
    }

    #[test]
    fn gamma_symmetric_bound_on_duplicate_free() {
        let corpus = Corpus {
            records: vec![
                rec("e1", vec![Tuple::new("s", "a", "o"), Tuple::new("s", "b", "o")], "x."),
                rec("e2", vec![Tuple::new("s", "a", "o"), Tuple::new("s", "c", "o")], "x."),
            ],
        };
        let alignments: HashMap<_, _> =
            [aligned("e1", vec![0, 0]), aligned("e2", vec![0, 1])].into();
        let stats = count_stats(&corpus, &alignments).unwrap();
        for (p, q) in [("a", "b"), ("a", "c"), ("b", "c")] {
            let g = gamma_numerical(&stats, p, q);
            assert!((0.0..=0.5).contains(&g));
            assert_eq!(g, gamma_numerical(&stats, q, p));
        }
    }

    struct ConstSource(f64);
    impl WeightSource for ConstSource {
        fn weight(&self, _: &CorpusRecord, _: usize, _: usize) -> f64 {
            self.0
        }
    }

    #[test]
    fn build_gamma_argument_mask() {
        let shared = rec(
            "e",
            vec![Tuple::new("x", "p", "y"), Tuple::new("x", "q", "z")],
            "t.",
        );
        let g = build_gamma(&shared, &ConstSource(0.5));
        assert_eq!(g.get(0, 1), 0.5);

        let disjoint = rec(
            "e",
            vec![Tuple::new("x", "p", "y"), Tuple::new("w", "q", "z")],
            "t.",
        );
        let g = build_gamma(&disjoint, &ConstSource(0.9));
        assert_eq!(g.get(0, 1), 0.0);
        g.validate().unwrap();
    }

    #[test]
    fn build_gamma_permutation_conjugation() {
        let tuples = vec![
            Tuple::new("x", "p", "y"),
            Tuple::new("x", "q", "z"),
            Tuple::new("z", "r", "w"),
        ];
        let base = rec("e", tuples.clone(), "t.");
        // source keyed by predicate pair so it permutes with the tuples
        struct PredSource;
        impl WeightSource for PredSource {
            fn weight(&self, r: &CorpusRecord, i: usize, j: usize) -> f64 {
                let mut ps = [r.tuples[i].predicate.clone(), r.tuples[j].predicate.clone()];
                ps.sort();
                match (ps[0].as_str(), ps[1].as_str()) {
                    ("p", "q") => 0.3,
                    ("q", "r") => 0.7,
                    _ => 0.1,
                }
            }
        }
        let g = build_gamma(&base, &PredSource);
        let perm = [2usize, 0, 1];
        let permuted = rec("e", perm.iter().map(|&i| tuples[i].clone()).collect(), "t.");
        let gp = build_gamma(&permuted, &PredSource);
        for a in 0..3 {
            for b in 0..3 {
                assert!((gp.get(a, b) - g.get(perm[a], perm[b])).abs() < 1e-12);
            }
        }
    }
}
