//! Inference-time decomposition: minimal-k search over spectral clusterings
//! gated by the effective-cluster test, plus cluster ordering.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize, CorpusRecord};
use crate::error::NumericError;
use crate::spectral::{spectral_cluster, Clustering};
use crate::weights::{build_gamma, GammaMatrix, WeightSource};

/// Ordered partition of tuple indices into clusters, one sentence each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decomposition {
    pub id: String,
    pub clusters: Vec<Vec<usize>>,
}

impl Decomposition {
    pub fn from_clustering(id: &str, c: &Clustering) -> Self {
        let mut clusters = vec![Vec::new(); c.k];
        for (i, &l) in c.labels.iter().enumerate() {
            clusters[l].push(i);
        }
        Decomposition { id: id.to_string(), clusters }
    }

    /// Cluster label per tuple index.
    pub fn labels(&self, n: usize) -> Vec<usize> {
        let mut labels = vec![0usize; n];
        for (c, members) in self.clusters.iter().enumerate() {
            for &i in members {
                labels[i] = c;
            }
        }
        labels
    }

    pub fn validate(&self, n: usize) -> Result<(), NumericError> {
        let mut seen = vec![false; n];
        for cluster in &self.clusters {
            if cluster.is_empty() {
                return Err(NumericError::Invalid("empty cluster".into()));
            }
            for &i in cluster {
                if i >= n || seen[i] {
                    return Err(NumericError::Invalid(format!(
                        "invalid or repeated tuple index {i}"
                    )));
                }
                seen[i] = true;
            }
        }
        if seen.iter().all(|&s| s) {
            Ok(())
        } else {
            Err(NumericError::Invalid("clusters do not cover all tuples".into()))
        }
    }
}

/// True iff every intra-cluster pair weight exceeds epsilon; singleton
/// clusters are vacuously effective.
pub fn effective_cluster(gamma: &GammaMatrix, c: &Clustering, epsilon: f64) -> bool {
    for cluster_id in 0..c.k {
        let members: Vec<usize> = (0..c.labels.len())
            .filter(|&i| c.labels[i] == cluster_id)
            .collect();
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                if gamma.get(i, j) <= epsilon {
                    return false;
                }
            }
        }
    }
    true
}

/// Minimal-k decomposition: try k = 1..n in order and stop at the first
/// effective clustering; k = n (all singletons) always terminates.
pub fn decompose_gamma(
    id: &str,
    gamma: &GammaMatrix,
    epsilon: f64,
    seed: u64,
) -> Result<Decomposition, NumericError> {
    let n = gamma.n;
    for k in 1..=n {
        let c = spectral_cluster(gamma, k, seed)?;
        if effective_cluster(gamma, &c, epsilon) {
            return Ok(Decomposition::from_clustering(id, &c));
        }
    }
    unreachable!("k = n clustering is all singletons and vacuously effective");
}

/// Full inference path for one record: build gamma, minimal-k search, then
/// order the clusters.
pub fn decompose(
    record: &CorpusRecord,
    source: &dyn WeightSource,
    epsilon: f64,
    seed: u64,
    counts: &HashMap<String, usize>,
) -> Result<Decomposition, NumericError> {
    let gamma = build_gamma(record, source);
    let d = decompose_gamma(&record.id, &gamma, epsilon, seed)?;
    Ok(sort_clusters(&d, record, counts))
}

fn cluster_args(record: &CorpusRecord, cluster: &[usize]) -> HashSet<String> {
    let mut args = HashSet::new();
    for &i in cluster {
        args.insert(normalize(&record.tuples[i].subject));
        args.insert(normalize(&record.tuples[i].object));
    }
    args
}

/// Order clusters: first the cluster with the highest summed first-sentence
/// counts of its predicates; then repeatedly the unplaced cluster sharing
/// the most unique argument strings with the immediately preceding one.
/// Ties break toward the lower original cluster index.
pub fn sort_clusters(
    d: &Decomposition,
    record: &CorpusRecord,
    counts: &HashMap<String, usize>,
) -> Decomposition {
    let m = d.clusters.len();
    if m <= 1 {
        return d.clone();
    }
    let mut remaining: Vec<usize> = (0..m).collect();
    let first = *remaining
        .iter()
        .max_by_key(|&&c| {
            let score: usize = d.clusters[c]
                .iter()
                .map(|&i| {
                    counts
                        .get(&normalize(&record.tuples[i].predicate))
                        .copied()
                        .unwrap_or(0)
                })
                .sum();
            (score, std::cmp::Reverse(c))
        })
        .unwrap();
    remaining.retain(|&c| c != first);
    let mut order = vec![first];
    while !remaining.is_empty() {
        let prev_args = cluster_args(record, &d.clusters[*order.last().unwrap()]);
        let next = *remaining
            .iter()
            .max_by_key(|&&c| {
                let overlap = cluster_args(record, &d.clusters[c])
                    .intersection(&prev_args)
                    .count();
                (overlap, std::cmp::Reverse(c))
            })
            .unwrap();
        remaining.retain(|&c| c != next);
        order.push(next);
    }
    Decomposition {
        id: d.id.clone(),
        clusters: order.into_iter().map(|c| d.clusters[c].clone()).collect(),
    }
}

/// Write decompositions as JSONL.
pub fn save_decompositions(
    ds: &[Decomposition],
    path: &std::path::Path,
) -> Result<(), crate::error::DataError> {
    use std::io::Write;
    let mut out = std::fs::File::create(path)
        .map_err(|e| crate::error::DataError::Io(e.to_string()))?;
    for d in ds {
        let line = serde_json::to_string(d)
            .map_err(|e| crate::error::DataError::Parse(e.to_string()))?;
        out.write_all(line.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| crate::error::DataError::Io(e.to_string()))?;
    }
    Ok(())
}

pub fn load_decompositions(
    path: &std::path::Path,
) -> Result<Vec<Decomposition>, crate::error::DataError> {
    use std::io::BufRead;
    let file = std::fs::File::open(path)
        .map_err(|e| crate::error::DataError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| crate::error::DataError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            crate::error::DataError::Parse(format!("line {}: {e}", lineno + 1))
        })?);
    }
    Ok(out)
}
