//! REINFORCE training of the pair scorer: Bernoulli adjacency sampling,
//! straight-through clustering of sampled graphs, pairwise log-probability
//! of a decomposition, Hungarian-aligned rewards with a random-decomposition
//! baseline, and the Taylor/Jensen sanity checks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{hungarian_assign, text_tokens, SilverAlignment};
use crate::corpus::{linearize_tuple, normalize, tuple_content_tokens, Corpus, CorpusRecord, Tuple};
use crate::decompose::Decomposition;
use crate::error::NumericError;
use crate::metrics::{bleu_sentence, nmi};
use crate::nn;
use crate::scorer::{backward, encode_pair, forward_logit, EncodedPair, ScorerParams};
use crate::spectral::spectral_cluster;
use crate::splits::salted_rng;
use crate::weights::{tuples_share_argument, GammaMatrix};

/// One sampled binary co-membership matrix M ~ B(γ).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencySample {
    pub m: Vec<Vec<u8>>,
}

impl AdjacencySample {
    pub fn n(&self) -> usize {
        self.m.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RLConfig {
    pub samples_per_example: usize,
    /// Clamp applied to γ before logarithms in Eq-style pair likelihoods.
    pub delta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Number of baseline draws averaged per sample (1 = single draw).
    pub baseline_draws: usize,
}

impl Default for RLConfig {
    fn default() -> Self {
        RLConfig {
            samples_per_example: 4,
            delta: 1e-4,
            learning_rate: 1e-3,
            batch_size: 1,
            epochs: 1,
            seed: 0,
            baseline_draws: 1,
        }
    }
}

impl RLConfig {
    pub fn validate(&self) -> Result<(), NumericError> {
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(NumericError::Invalid(format!("delta {} outside (0, 0.5)", self.delta)));
        }
        Ok(())
    }
}

/// Sample each unordered pair independently from Bernoulli(γ_ij); the matrix
/// is mirrored and the diagonal forced to 1.
pub fn sample_adjacency(gamma: &GammaMatrix, rng: &mut ChaCha8Rng) -> AdjacencySample {
    let n = gamma.n;
    let mut m = vec![vec![0u8; n]; n];
    for i in 0..n {
        m[i][i] = 1;
        for j in i + 1..n {
            let bit = (rng.gen::<f64>() < gamma.get(i, j)) as u8;
            m[i][j] = bit;
            m[j][i] = bit;
        }
    }
    AdjacencySample { m }
}

/// Straight-through decomposition draw: cluster M ⊙ γ (diagonal restored to
/// 1) into m_clusters with the spectral pipeline.
pub fn sample_decomposition(
    gamma: &GammaMatrix,
    m_clusters: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(AdjacencySample, Decomposition), NumericError> {
    let sample = sample_adjacency(gamma, rng);
    let n = gamma.n;
    let mut masked = GammaMatrix::zeros(n);
    for i in 0..n {
        for j in i + 1..n {
            masked.set_pair(i, j, sample.m[i][j] as f64 * gamma.get(i, j));
        }
    }
    let clustering = spectral_cluster(&masked, m_clusters, rng.gen())?;
    Ok((sample, Decomposition::from_clustering("", &clustering)))
}

/// Log-probability of a decomposition under independent pair Bernoullis:
/// Σ_{i<j} k_ij log γ̃_ij + (1 − k_ij) log(1 − γ̃_ij), γ̃ clamped to
/// [δ, 1−δ]; k_ij = 1 iff i and j share a cluster.
pub fn log_prob_decomposition(gamma: &GammaMatrix, d: &Decomposition, delta: f64) -> f64 {
    let n = gamma.n;
    let labels = d.labels(n);
    let mut lp = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let g = gamma.get(i, j).clamp(delta, 1.0 - delta);
            lp += if labels[i] == labels[j] { g.ln() } else { (1.0 - g).ln() };
        }
    }
    lp
}

/// Gradient of log_prob_decomposition with respect to each γ_ij (upper
/// triangle); zero where the clamp is active.
pub fn log_prob_grad(gamma: &GammaMatrix, labels: &[usize], delta: f64) -> Vec<Vec<f64>> {
    let n = gamma.n;
    let mut grad = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let g = gamma.get(i, j);
            if g <= delta || g >= 1.0 - delta {
                continue;
            }
            let d = if labels[i] == labels[j] { 1.0 / g } else { -1.0 / (1.0 - g) };
            grad[i][j] = d;
            grad[j][i] = d;
        }
    }
    grad
}

/// Uniform random decomposition into m_clusters labeled cells, resampled in
/// full until no cluster is empty.
pub fn random_decomposition(n: usize, m_clusters: usize, rng: &mut ChaCha8Rng) -> Decomposition {
    assert!(m_clusters >= 1 && m_clusters <= n);
    loop {
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..m_clusters)).collect();
        let mut clusters = vec![Vec::new(); m_clusters];
        for (i, &l) in labels.iter().enumerate() {
            clusters[l].push(i);
        }
        if clusters.iter().all(|c| !c.is_empty()) {
            return Decomposition { id: String::new(), clusters };
        }
    }
}

/// A sentence-level likelihood model used as the REINFORCE reward.
pub trait RewardModel {
    /// Log-likelihood of `sentence` given one cluster's tuples.
    fn log_likelihood(&self, tuples: &[&Tuple], sentence: &str) -> Result<f64, String>;
}

/// Declared proxy for a fine-tuned LM likelihood: log of smoothed token-level
/// F1 between the cluster's linearized tuples and the sentence.
pub struct SurrogateReward;

const F1_EPS: f64 = 1e-9;

fn token_f1(hyp: &[String], reference: &[String]) -> f64 {
    use std::collections::HashMap;
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in reference {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in hyp {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if hyp.is_empty() || reference.is_empty() {
        return F1_EPS;
    }
    let p = overlap as f64 / hyp.len() as f64;
    let r = overlap as f64 / reference.len() as f64;
    if p + r == 0.0 {
        F1_EPS
    } else {
        (2.0 * p * r / (p + r)).max(F1_EPS)
    }
}

impl RewardModel for SurrogateReward {
    fn log_likelihood(&self, tuples: &[&Tuple], sentence: &str) -> Result<f64, String> {
        let mut hyp: Vec<String> = Vec::new();
        for t in tuples {
            hyp.extend(tuple_content_tokens(t));
        }
        Ok(token_f1(&hyp, &text_tokens(sentence)).ln())
    }
}

/// Align clusters to reference sentences (Hungarian on negative sentence
/// BLEU) and sum the model's per-sentence log-likelihoods.
pub fn reward(
    record: &CorpusRecord,
    d: &Decomposition,
    model: &dyn RewardModel,
) -> Result<f64, NumericError> {
    let sentences = record.references[0].sentence_list();
    let sent_tokens: Vec<Vec<String>> = sentences.iter().map(|s| text_tokens(s)).collect();
    let cluster_tuples: Vec<Vec<&Tuple>> = d
        .clusters
        .iter()
        .map(|c| c.iter().map(|&i| &record.tuples[i]).collect())
        .collect();
    let cost: Vec<Vec<f64>> = cluster_tuples
        .iter()
        .map(|tuples| {
            let mut hyp: Vec<String> = Vec::new();
            for t in tuples {
                hyp.extend(linearize_tuple(t));
            }
            sent_tokens.iter().map(|s| -bleu_sentence(&hyp, s)).collect()
        })
        .collect();
    let (assignment, _) = hungarian_assign(&cost)?;
    let mut total = 0.0;
    for (c, tuples) in cluster_tuples.iter().enumerate() {
        let s = assignment.cluster_to_sentence[c];
        if s == usize::MAX || s >= sentences.len() {
            continue; // more clusters than sentences: unmatched cluster
        }
        total += model.log_likelihood(tuples, &sentences[s]).map_err(|e| {
            NumericError::Invalid(format!("reward model failed at cluster {c}: {e}"))
        })?;
    }
    Ok(total)
}

/// Build γ for a record from the scorer, keeping forward caches so the RL
/// gradient can be chained back onto the parameters. Pairs whose tuples
/// share no argument are masked to 0 and carry no gradient.
struct PairForward {
    i: usize,
    j: usize,
    enc_ab: EncodedPair,
    enc_ba: EncodedPair,
    cache_ab: crate::scorer::ForwardCache,
    cache_ba: crate::scorer::ForwardCache,
    p_ab: f64,
    p_ba: f64,
}

fn scorer_gamma(
    params: &ScorerParams,
    record: &CorpusRecord,
) -> Result<(GammaMatrix, Vec<PairForward>), NumericError> {
    let n = record.tuples.len();
    let mut gamma = GammaMatrix::zeros(n);
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if !tuples_share_argument(record, i, j) {
                continue;
            }
            let a = normalize(&record.tuples[i].predicate);
            let b = normalize(&record.tuples[j].predicate);
            let enc_ab = encode_pair(&a, &b, &params.vocab, params.cfg.max_seq);
            let enc_ba = encode_pair(&b, &a, &params.vocab, params.cfg.max_seq);
            let cache_ab = forward_logit(params, &enc_ab, None)?;
            let cache_ba = forward_logit(params, &enc_ba, None)?;
            let p_ab = nn::sigmoid(cache_ab.logit);
            let p_ba = nn::sigmoid(cache_ba.logit);
            gamma.set_pair(i, j, 0.5 * (p_ab + p_ba));
            pairs.push(PairForward { i, j, enc_ab, enc_ba, cache_ab, cache_ba, p_ab, p_ba });
        }
    }
    Ok((gamma, pairs))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_advantage: f64,
    pub grad_norm: f64,
    pub nmi_vs_silver: Option<f64>,
    pub skipped: bool,
}

/// One REINFORCE update on a single record: draw S decompositions, compute
/// advantages against random-decomposition baselines, accumulate
/// A · ∇_φ log p(C | γ(φ)) through the scorer, and apply one Adam step.
/// Single-tuple records are a logged no-op.
pub fn reinforce_step(
    record: &CorpusRecord,
    params: &mut ScorerParams,
    opt: &mut nn::Adam,
    cfg: &RLConfig,
    model: &dyn RewardModel,
    step: usize,
    silver: Option<&SilverAlignment>,
) -> Result<StepDiagnostics, NumericError> {
    cfg.validate()?;
    let n = record.tuples.len();
    let noop = StepDiagnostics {
        step,
        mean_reward: 0.0,
        mean_advantage: 0.0,
        grad_norm: 0.0,
        nmi_vs_silver: None,
        skipped: true,
    };
    if n < 2 {
        return Ok(noop);
    }
    let m_clusters = record.references[0].sentence_list().len().clamp(1, n);
    let mut rng = salted_rng(cfg.seed, &format!("rl:{step}:{}", record.id));
    let (gamma, pairs) = scorer_gamma(params, record)?;

    let s_draws = cfg.samples_per_example.max(1);
    let mut dgamma = vec![vec![0.0; n]; n];
    let mut sum_reward = 0.0;
    let mut sum_adv = 0.0;
    let mut sum_nmi = 0.0;
    for _ in 0..s_draws {
        let (_, mut d) = sample_decomposition(&gamma, m_clusters, &mut rng)?;
        d.id = record.id.clone();
        let r = reward(record, &d, model)?;
        let mut baseline = 0.0;
        for _ in 0..cfg.baseline_draws.max(1) {
            let mut rd = random_decomposition(n, m_clusters, &mut rng);
            rd.id = record.id.clone();
            baseline += reward(record, &rd, model)?;
        }
        baseline /= cfg.baseline_draws.max(1) as f64;
        let advantage = r - baseline;
        sum_reward += r;
        sum_adv += advantage;
        let labels = d.labels(n);
        if let Some(sa) = silver {
            sum_nmi += nmi(&labels, &sa.assignment)?;
        }
        let lg = log_prob_grad(&gamma, &labels, cfg.delta);
        for p in &pairs {
            dgamma[p.i][p.j] += advantage * lg[p.i][p.j];
        }
    }
    let scale = 1.0 / s_draws as f64;

    // gradient ascent on the expected-reward lower bound: Adam minimizes, so
    // negate; chain dγ → dlogit through the symmetrized sigmoid pair.
    let mut grads = vec![0.0; params.num_params()];
    for p in &pairs {
        let dg = -scale * dgamma[p.i][p.j];
        if dg == 0.0 {
            continue;
        }
        let dlogit_ab = dg * 0.5 * p.p_ab * (1.0 - p.p_ab);
        let dlogit_ba = dg * 0.5 * p.p_ba * (1.0 - p.p_ba);
        backward(params, &p.enc_ab, &p.cache_ab, dlogit_ab, &mut grads);
        backward(params, &p.enc_ba, &p.cache_ba, dlogit_ba, &mut grads);
    }
    let grad_norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !grad_norm.is_finite() {
        return Err(NumericError::NonFinite(format!(
            "reinforce gradient at step {step} (record {}, mean reward {})",
            record.id,
            sum_reward * scale
        )));
    }
    if grad_norm > 0.0 {
        opt.step(&mut params.data, &grads);
    }
    Ok(StepDiagnostics {
        step,
        mean_reward: sum_reward * scale,
        mean_advantage: sum_adv * scale,
        grad_norm,
        nmi_vs_silver: silver.map(|_| sum_nmi * scale),
        skipped: false,
    })
}

/// REINFORCE training loop over a corpus (warm-started parameters supplied
/// by the caller). Returns the per-step diagnostics stream.
pub fn train_rl(
    corpus: &Corpus,
    alignments: &std::collections::HashMap<String, SilverAlignment>,
    params: &mut ScorerParams,
    cfg: &RLConfig,
    model: &dyn RewardModel,
) -> Result<Vec<StepDiagnostics>, NumericError> {
    let mut opt = nn::Adam::new(cfg.learning_rate, params.num_params());
    let mut diagnostics = Vec::new();
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        for record in &corpus.records {
            let d = reinforce_step(
                record,
                params,
                &mut opt,
                cfg,
                model,
                step,
                alignments.get(&record.id),
            )?;
            if !d.skipped {
                step += 1;
            }
            diagnostics.push(d);
        }
    }
    Ok(diagnostics)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaylorJensenReport {
    /// |E_M[p(M)] − p(E[M])| for the linear surrogate (exhaustive, n ≤ 4).
    pub linear_gap: f64,
    /// Monte-Carlo estimate of log E[p²] − E[log p²] for the squared
    /// (nonlinear) surrogate; Jensen says this is ≥ 0 up to noise.
    pub jensen_gap: f64,
    /// Standard error of the Monte-Carlo Jensen estimate.
    pub jensen_sigma: f64,
    pub ok: bool,
}

/// Enumerate all binary symmetric matrices over γ's unordered pairs,
/// yielding (probability, pair-bit vector in i<j order).
pub fn enumerate_adjacency(gamma: &GammaMatrix) -> Vec<(f64, Vec<u8>)> {
    let n = gamma.n;
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            pairs.push(gamma.get(i, j));
        }
    }
    let np = pairs.len();
    assert!(np <= 20, "enumeration only feasible for small n");
    let mut out = Vec::with_capacity(1 << np);
    for mask in 0u32..(1 << np) {
        let mut prob = 1.0;
        let mut bits = Vec::with_capacity(np);
        for (b, &g) in pairs.iter().enumerate() {
            let bit = ((mask >> b) & 1) as u8;
            prob *= if bit == 1 { g } else { 1.0 - g };
            bits.push(bit);
        }
        out.push((prob, bits));
    }
    out
}

/// Verify (i) a linear surrogate p(M) = a + Σ b·M satisfies
/// E[p(M)] = p(E[M]) exactly (first-order Taylor is exact for linear p) and
/// (ii) Jensen's inequality E[log p] ≤ log E[p] for a nonlinear surrogate,
/// by Monte Carlo with `trials` draws.
pub fn taylor_jensen_check(
    gamma: &GammaMatrix,
    a: f64,
    b: &[f64],
    trials: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TaylorJensenReport, NumericError> {
    let n = gamma.n;
    let np = n * (n - 1) / 2;
    if b.len() != np {
        return Err(NumericError::Invalid(format!(
            "expected {np} linear coefficients, got {}",
            b.len()
        )));
    }
    let p_of = |bits: &[u8]| -> f64 {
        a + bits.iter().zip(b).map(|(&m, &c)| m as f64 * c).sum::<f64>()
    };
    // (i) exhaustive expectation vs surrogate at the mean
    let mut e_p = 0.0;
    for (prob, bits) in enumerate_adjacency(gamma) {
        let p = p_of(&bits);
        if p <= 0.0 {
            return Err(NumericError::Invalid("surrogate not positive over all M".into()));
        }
        e_p += prob * p;
    }
    let mut mean_bits = Vec::with_capacity(np);
    for i in 0..n {
        for j in i + 1..n {
            mean_bits.push(gamma.get(i, j));
        }
    }
    let p_at_mean = a + mean_bits.iter().zip(b).map(|(&m, &c)| m * c).sum::<f64>();
    let linear_gap = (e_p - p_at_mean).abs();

    // (ii) Jensen on the squared surrogate p², which is strictly convex in p
    let mut logs = Vec::with_capacity(trials);
    let mut vals = Vec::with_capacity(trials);
    for _ in 0..trials {
        let m = sample_adjacency(gamma, rng);
        let mut bits = Vec::with_capacity(np);
        for i in 0..n {
            for j in i + 1..n {
                bits.push(m.m[i][j]);
            }
        }
        let p2 = p_of(&bits).powi(2);
        vals.push(p2);
        logs.push(p2.ln());
    }
    let t = trials.max(1) as f64;
    let mean_val = vals.iter().sum::<f64>() / t;
    let mean_log = logs.iter().sum::<f64>() / t;
    let jensen_gap = mean_val.ln() - mean_log;
    let var_log = logs.iter().map(|l| (l - mean_log).powi(2)).sum::<f64>() / t;
    let jensen_sigma = (var_log / t).sqrt();
    let ok = linear_gap <= 1e-10 && jensen_gap >= -3.0 * jensen_sigma;
    Ok(TaylorJensenReport { linear_gap, jensen_gap, jensen_sigma, ok })
}

/// Desk-scale unbiasedness check of the score-function estimator: with the
/// decomposition identified with M itself (k_ij = M_ij), the exhaustive
/// average of (R − b) · ∇ log p over all M equals ∇ E[R] for any constant
/// baseline b. Returns the max per-coordinate gap.
pub fn estimator_unbiasedness_gap(
    gamma: &GammaMatrix,
    reward_of: &dyn Fn(&[u8]) -> f64,
    baseline: f64,
    delta: f64,
) -> f64 {
    let n = gamma.n;
    let mut pair_gammas = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            pair_gammas.push(gamma.get(i, j));
        }
    }
    let np = pair_gammas.len();
    let configs = enumerate_adjacency(gamma);
    // true gradient of E[R] wrt each γ: d prob / d γ_b = prob · s_b where
    // s_b = M_b/γ̃ − (1−M_b)/(1−γ̃)
    let score = |bits: &[u8], b: usize| -> f64 {
        let g = pair_gammas[b].clamp(delta, 1.0 - delta);
        if bits[b] == 1 {
            1.0 / g
        } else {
            -1.0 / (1.0 - g)
        }
    };
    let mut max_gap = 0.0f64;
    for b in 0..np {
        let mut true_grad = 0.0;
        let mut estimator = 0.0;
        for (prob, bits) in &configs {
            let s = score(bits, b);
            true_grad += reward_of(bits) * prob * s;
            estimator += prob * (reward_of(bits) - baseline) * s;
        }
        max_gap = max_gap.max((true_grad - estimator).abs());
    }
    max_gap
}
