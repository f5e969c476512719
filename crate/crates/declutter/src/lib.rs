//! Predicate decomposition toolkit for compositional data-to-text
//! generation: learn pairwise predicate affinities (counts, a small
//! transformer pair scorer, and a REINFORCE-trained scorer), cluster tuples
//! into sentence-sized groups, realize text group by group, and evaluate
//! decompositions and generations.

pub mod align;
pub mod corpus;
pub mod decompose;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod realize;
pub mod rl;
pub mod scorer;
pub mod spectral;
pub mod splits;
pub mod weights;
