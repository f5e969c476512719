//! Compositional-generalization training splits: CGFull-k keeps records
//! with at most k tuples; CGOneShot-k additionally keeps one record per
//! predicate composition, chosen by a seeded deterministic draw.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, PredicateComposition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Full,
    OneShot,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub kind: SplitKind,
    pub k: usize,
    pub seed: u64,
}

/// Derive a per-key RNG from the split seed salted with the composition key.
/// SHA-256 keeps the derivation portable and order-insensitive.
pub fn salted_rng(seed: u64, salt: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(salt.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Records with |tuples| <= k, in corpus order.
pub fn build_cgfull(corpus: &Corpus, k: usize) -> Corpus {
    Corpus {
        records: corpus
            .records
            .iter()
            .filter(|r| r.tuples.len() <= k)
            .cloned()
            .collect(),
    }
}

/// One record per predicate composition among records with |tuples| <= k.
/// Candidates of each key are shuffled under the key-salted seed and the
/// first is kept; output preserves corpus order.
pub fn build_cgoneshot(corpus: &Corpus, k: usize, seed: u64) -> Corpus {
    let full = build_cgfull(corpus, k);
    let mut by_key: HashMap<PredicateComposition, Vec<usize>> = HashMap::new();
    for (i, r) in full.records.iter().enumerate() {
        by_key.entry(r.composition_key()).or_default().push(i);
    }
    let mut chosen: Vec<usize> = by_key
        .into_iter()
        .map(|(key, mut candidates)| {
            let mut rng = salted_rng(seed, &key.to_string());
            candidates.shuffle(&mut rng);
            candidates[0]
        })
        .collect();
    chosen.sort_unstable();
    Corpus {
        records: chosen.into_iter().map(|i| full.records[i].clone()).collect(),
    }
}

pub fn build_split(corpus: &Corpus, spec: &SplitSpec) -> Corpus {
    match spec.kind {
        SplitKind::Full => build_cgfull(corpus, spec.k),
        SplitKind::OneShot => build_cgoneshot(corpus, spec.k, spec.seed),
    }
}

/// Sidecar metadata written next to every split artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitMetadata {
    pub kind: SplitKind,
    pub k: usize,
    pub seed: u64,
    pub input_sha256: String,
    pub count: usize,
}

pub fn sha256_file(path: &std::path::Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}
