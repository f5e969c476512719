//! Transformer pair scorer: predicts whether two predicates should be
//! described in the same sentence. Pre-norm encoder with GELU feed-forward,
//! manual backpropagation, Adam training, finite-difference gradient
//! checking, and a binary parameter file format.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{tokenize_predicate, SilverAlignment};
use crate::corpus::{normalize, Corpus, CorpusRecord};
use crate::error::NumericError;
use crate::nn;
use crate::splits::salted_rng;
use crate::weights::WeightSource;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub layers: usize,
    pub dropout: f64,
    pub max_seq: usize,
    pub vocab_size: usize,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            d_model: 128,
            d_ff: 256,
            heads: 4,
            layers: 2,
            dropout: 0.1,
            max_seq: 32,
            vocab_size: 0,
        }
    }
}

impl ScorerConfig {
    /// Reduced-size config for fast tests and desk-scale experiments.
    pub fn small() -> Self {
        ScorerConfig {
            d_model: 32,
            d_ff: 64,
            heads: 2,
            layers: 2,
            dropout: 0.0,
            max_seq: 16,
            vocab_size: 0,
        }
    }

    pub fn validate(&self) -> Result<(), NumericError> {
        if self.d_model % self.heads != 0 {
            return Err(NumericError::Invalid(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

/// Whole-word vocabulary built from training predicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    pub words: Vec<String>,
}

impl Vocab {
    /// Build from a predicate iterator; special tokens occupy ids 0..4.
    pub fn build<'a>(predicates: impl Iterator<Item = &'a str>) -> Self {
        let mut tokens: Vec<String> = predicates
            .flat_map(|p| tokenize_predicate(p))
            .collect();
        tokens.sort();
        tokens.dedup();
        let mut words =
            vec!["[PAD]".to_string(), "[UNK]".to_string(), "[CLS]".to_string(), "[SEP]".to_string()];
        words.extend(tokens);
        Vocab { words }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.words
            .iter()
            .position(|w| w == word)
            .map(|i| i as u32)
            .unwrap_or(UNK)
    }
}

/// Token ids padded to max_seq plus the effective length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub ids: Vec<u32>,
    pub len: usize,
}

/// [CLS] + tokens(a) + [SEP] + tokens(b), truncated to max_seq with [CLS]
/// retained, padded with [PAD].
pub fn encode_pair(a: &str, b: &str, vocab: &Vocab, max_seq: usize) -> EncodedPair {
    let mut ids = vec![CLS];
    for t in tokenize_predicate(a) {
        ids.push(vocab.id(&t));
    }
    ids.push(SEP);
    for t in tokenize_predicate(b) {
        ids.push(vocab.id(&t));
    }
    ids.truncate(max_seq);
    let len = ids.len();
    ids.resize(max_seq, PAD);
    EncodedPair { ids, len }
}

/// A supervised training example: two predicates and a same-sentence label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairExample {
    pub predicate_a: String,
    pub predicate_b: String,
    pub label: u8,
}

#[derive(Debug, Clone)]
struct Layout {
    ranges: Vec<(String, Range<usize>)>,
    index: HashMap<String, usize>,
    total: usize,
}

impl Layout {
    fn build(cfg: &ScorerConfig) -> Self {
        let d = cfg.d_model;
        let ff = cfg.d_ff;
        let mut ranges: Vec<(String, Range<usize>)> = Vec::new();
        let mut off = 0usize;
        let push = |name: String, len: usize, off: &mut usize, ranges: &mut Vec<(String, Range<usize>)>| {
            ranges.push((name, *off..*off + len));
            *off += len;
        };
        push("tok_emb".into(), cfg.vocab_size * d, &mut off, &mut ranges);
        push("pos_emb".into(), cfg.max_seq * d, &mut off, &mut ranges);
        for l in 0..cfg.layers {
            for (suffix, len) in [
                ("ln1.g", d),
                ("ln1.b", d),
                ("wq", d * d),
                ("bq", d),
                ("wk", d * d),
                ("bk", d),
                ("wv", d * d),
                ("bv", d),
                ("wo", d * d),
                ("bo", d),
                ("ln2.g", d),
                ("ln2.b", d),
                ("w1", d * ff),
                ("b1", ff),
                ("w2", ff * d),
                ("b2", d),
            ] {
                push(format!("l{l}.{suffix}"), len, &mut off, &mut ranges);
            }
        }
        push("lnf.g".into(), d, &mut off, &mut ranges);
        push("lnf.b".into(), d, &mut off, &mut ranges);
        push("head.w".into(), d, &mut off, &mut ranges);
        push("head.b".into(), 1, &mut off, &mut ranges);
        let index = ranges
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.clone(), i))
            .collect();
        Layout { ranges, index, total: off }
    }

    fn range(&self, name: &str) -> Range<usize> {
        self.ranges[self.index[name]].1.clone()
    }
}

/// Scorer parameters as one flat f64 buffer with a named-tensor layout.
#[derive(Debug, Clone)]
pub struct ScorerParams {
    pub cfg: ScorerConfig,
    pub vocab: Vocab,
    layout: Layout,
    pub data: Vec<f64>,
}

impl ScorerParams {
    /// Scaled-uniform initialization; layer-norm gains 1, all biases 0.
    pub fn init(cfg: ScorerConfig, vocab: Vocab, seed: u64) -> Result<Self, NumericError> {
        let mut cfg = cfg;
        cfg.vocab_size = vocab.len();
        cfg.validate()?;
        let layout = Layout::build(&cfg);
        let mut data = vec![0.0; layout.total];
        let mut rng = salted_rng(seed, "scorer-init");
        let d = cfg.d_model;
        let ff = cfg.d_ff;
        let init_tensor = |name: &str, fan_in: usize, fan_out: usize, data: &mut Vec<f64>, layout: &Layout, rng: &mut ChaCha8Rng| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut data[layout.range(name)] {
                *v = rng.gen_range(-bound..bound);
            }
        };
        init_tensor("tok_emb", cfg.vocab_size, d, &mut data, &layout, &mut rng);
        init_tensor("pos_emb", cfg.max_seq, d, &mut data, &layout, &mut rng);
        for l in 0..cfg.layers {
            for w in ["wq", "wk", "wv", "wo"] {
                init_tensor(&format!("l{l}.{w}"), d, d, &mut data, &layout, &mut rng);
            }
            init_tensor(&format!("l{l}.w1"), d, ff, &mut data, &layout, &mut rng);
            init_tensor(&format!("l{l}.w2"), ff, d, &mut data, &layout, &mut rng);
            for g in ["ln1.g", "ln2.g"] {
                data[layout.range(&format!("l{l}.{g}"))].fill(1.0);
            }
        }
        data[layout.range("lnf.g")].fill(1.0);
        init_tensor("head.w", d, 1, &mut data, &layout, &mut rng);
        Ok(ScorerParams { cfg, vocab, layout, data })
    }

    /// All-zero parameters (useful for degenerate-case tests).
    pub fn zeros(cfg: ScorerConfig, vocab: Vocab) -> Result<Self, NumericError> {
        let mut p = Self::init(cfg, vocab, 0)?;
        p.data.fill(0.0);
        Ok(p)
    }

    pub fn tensor(&self, name: &str) -> &[f64] {
        &self.data[self.layout.range(name)]
    }

    pub fn tensor_names(&self) -> Vec<String> {
        self.layout.ranges.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn tensor_range(&self, name: &str) -> Range<usize> {
        self.layout.range(name)
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }
}

struct LayerCache {
    xhat1: Vec<f64>,
    istd1: Vec<f64>,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>, // heads * s * s
    ctx: Vec<f64>,
    drop1: Option<Vec<f64>>,
    xhat2: Vec<f64>,
    istd2: Vec<f64>,
    bb: Vec<f64>,
    ff_pre: Vec<f64>,
    ff_act: Vec<f64>,
    drop2: Option<Vec<f64>>,
}

pub struct ForwardCache {
    s: usize,
    layers: Vec<LayerCache>,
    xhatf: Vec<f64>,
    istdf: Vec<f64>,
    cls_h: Vec<f64>,
    pub logit: f64,
}

fn dropout_mask(len: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) })
        .collect()
}

/// Forward pass on one encoded pair. Returns the pre-sigmoid logit and the
/// activation cache. Pad positions are excluded from computation, which is
/// equivalent to key masking. Dropout applies only when an RNG is supplied.
pub fn forward_logit(
    params: &ScorerParams,
    input: &EncodedPair,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardCache, NumericError> {
    let cfg = &params.cfg;
    let d = cfg.d_model;
    let ff = cfg.d_ff;
    let h = cfg.heads;
    let dh = d / h;
    let s = input.len.max(1);
    let scale = 1.0 / (dh as f64).sqrt();

    let tok_emb = params.tensor("tok_emb");
    let pos_emb = params.tensor("pos_emb");
    let mut x = vec![0.0; s * d];
    for i in 0..s {
        let tid = input.ids[i] as usize;
        for j in 0..d {
            x[i * d + j] = tok_emb[tid * d + j] + pos_emb[i * d + j];
        }
    }

    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let x_in = x.clone();
        let mut xhat1 = vec![0.0; s * d];
        let mut istd1 = vec![0.0; s];
        let mut a = vec![0.0; s * d];
        nn::layer_norm(
            &x_in,
            params.tensor(&format!("l{l}.ln1.g")),
            params.tensor(&format!("l{l}.ln1.b")),
            &mut a,
            &mut xhat1,
            &mut istd1,
            s,
            d,
        );
        let mut q = vec![0.0; s * d];
        let mut k = vec![0.0; s * d];
        let mut v = vec![0.0; s * d];
        nn::linear(&a, params.tensor(&format!("l{l}.wq")), params.tensor(&format!("l{l}.bq")), &mut q, s, d, d);
        nn::linear(&a, params.tensor(&format!("l{l}.wk")), params.tensor(&format!("l{l}.bk")), &mut k, s, d, d);
        nn::linear(&a, params.tensor(&format!("l{l}.wv")), params.tensor(&format!("l{l}.bv")), &mut v, s, d, d);
        let mut probs = vec![0.0; h * s * s];
        let mut ctx = vec![0.0; s * d];
        for head in 0..h {
            let base = head * dh;
            for i in 0..s {
                let row = &mut probs[head * s * s + i * s..head * s * s + (i + 1) * s];
                for j in 0..s {
                    let mut dot = 0.0;
                    for t in 0..dh {
                        dot += q[i * d + base + t] * k[j * d + base + t];
                    }
                    row[j] = dot * scale;
                }
                nn::softmax_row(row);
                for j in 0..s {
                    let p = row[j];
                    if p == 0.0 {
                        continue;
                    }
                    for t in 0..dh {
                        ctx[i * d + base + t] += p * v[j * d + base + t];
                    }
                }
            }
        }
        let mut attn_out = vec![0.0; s * d];
        nn::linear(&ctx, params.tensor(&format!("l{l}.wo")), params.tensor(&format!("l{l}.bo")), &mut attn_out, s, d, d);
        let drop1 = match dropout_rng.as_deref_mut() {
            Some(rng) if cfg.dropout > 0.0 => {
                let mask = dropout_mask(s * d, cfg.dropout, rng);
                for (o, m) in attn_out.iter_mut().zip(&mask) {
                    *o *= m;
                }
                Some(mask)
            }
            _ => None,
        };
        let x_mid: Vec<f64> = x_in.iter().zip(&attn_out).map(|(a, b)| a + b).collect();

        let mut xhat2 = vec![0.0; s * d];
        let mut istd2 = vec![0.0; s];
        let mut bb = vec![0.0; s * d];
        nn::layer_norm(
            &x_mid,
            params.tensor(&format!("l{l}.ln2.g")),
            params.tensor(&format!("l{l}.ln2.b")),
            &mut bb,
            &mut xhat2,
            &mut istd2,
            s,
            d,
        );
        let mut ff_pre = vec![0.0; s * ff];
        nn::linear(&bb, params.tensor(&format!("l{l}.w1")), params.tensor(&format!("l{l}.b1")), &mut ff_pre, s, d, ff);
        let ff_act: Vec<f64> = ff_pre.iter().map(|&z| nn::gelu(z)).collect();
        let mut ff_out = vec![0.0; s * d];
        nn::linear(&ff_act, params.tensor(&format!("l{l}.w2")), params.tensor(&format!("l{l}.b2")), &mut ff_out, s, ff, d);
        let drop2 = match dropout_rng.as_deref_mut() {
            Some(rng) if cfg.dropout > 0.0 => {
                let mask = dropout_mask(s * d, cfg.dropout, rng);
                for (o, m) in ff_out.iter_mut().zip(&mask) {
                    *o *= m;
                }
                Some(mask)
            }
            _ => None,
        };
        x = x_mid.iter().zip(&ff_out).map(|(a, b)| a + b).collect();
        layers.push(LayerCache {
            xhat1,
            istd1,
            a,
            q,
            k,
            v,
            probs,
            ctx,
            drop1,
            xhat2,
            istd2,
            bb,
            ff_pre,
            ff_act,
            drop2,
        });
    }

    let x_final = x;
    let mut xhatf = vec![0.0; s * d];
    let mut istdf = vec![0.0; s];
    let mut normed = vec![0.0; s * d];
    nn::layer_norm(
        &x_final,
        params.tensor("lnf.g"),
        params.tensor("lnf.b"),
        &mut normed,
        &mut xhatf,
        &mut istdf,
        s,
        d,
    );
    let cls_h = normed[..d].to_vec();
    let head_w = params.tensor("head.w");
    let head_b = params.tensor("head.b")[0];
    let logit: f64 = cls_h.iter().zip(head_w).map(|(a, b)| a * b).sum::<f64>() + head_b;
    if !logit.is_finite() {
        return Err(NumericError::NonFinite("scorer logit".into()));
    }
    Ok(ForwardCache { s, layers, xhatf, istdf, cls_h, logit })
}

/// Same-sentence probability for an encoded pair (inference mode).
pub fn forward(params: &ScorerParams, input: &EncodedPair) -> Result<f64, NumericError> {
    Ok(nn::sigmoid(forward_logit(params, input, None)?.logit))
}

/// Backward pass: accumulates d(loss)/d(params) into `grads` given
/// d(loss)/d(logit).
pub fn backward(
    params: &ScorerParams,
    input: &EncodedPair,
    cache: &ForwardCache,
    dlogit: f64,
    grads: &mut [f64],
) {
    let cfg = &params.cfg;
    let d = cfg.d_model;
    let ff = cfg.d_ff;
    let h = cfg.heads;
    let dh = d / h;
    let s = cache.s;
    let scale = 1.0 / (dh as f64).sqrt();
    let layout = &params.layout;
    let r = |name: &str| layout.range(name);

    // head
    let head_w = params.tensor("head.w");
    {
        let hw_range = r("head.w");
        for j in 0..d {
            grads[hw_range.start + j] += dlogit * cache.cls_h[j];
        }
        grads[r("head.b").start] += dlogit;
    }
    // d wrt final layer norm output: only CLS row receives gradient
    let mut dnormed = vec![0.0; s * d];
    for j in 0..d {
        dnormed[j] = dlogit * head_w[j];
    }
    let mut dx = vec![0.0; s * d];
    {
        let (gslice, _) = grads.split_at_mut(0); // silence borrow; use indices below
        let _ = gslice;
        let gr = r("lnf.g");
        let br = r("lnf.b");
        let mut dg = vec![0.0; d];
        let mut db = vec![0.0; d];
        nn::layer_norm_backward(
            &cache.xhatf,
            &cache.istdf,
            params.tensor("lnf.g"),
            &dnormed,
            &mut dx,
            &mut dg,
            &mut db,
            s,
            d,
        );
        for j in 0..d {
            grads[gr.start + j] += dg[j];
            grads[br.start + j] += db[j];
        }
    }

    for l in (0..cfg.layers).rev() {
        let lc = &cache.layers[l];
        // x = x_mid + dropout(ff_out)
        let mut dff_out = dx.clone();
        if let Some(mask) = &lc.drop2 {
            for (g, m) in dff_out.iter_mut().zip(mask) {
                *g *= m;
            }
        }
        let mut dx_mid = dx.clone();
        // ff_out = ff_act W2 + b2
        let mut dff_act = vec![0.0; s * ff];
        {
            let mut dw2 = vec![0.0; ff * d];
            let mut db2 = vec![0.0; d];
            nn::linear_backward(
                &lc.ff_act,
                params.tensor(&format!("l{l}.w2")),
                &dff_out,
                &mut dff_act,
                &mut dw2,
                &mut db2,
                s,
                ff,
                d,
            );
            let w2r = r(&format!("l{l}.w2"));
            let b2r = r(&format!("l{l}.b2"));
            for (i, v) in dw2.into_iter().enumerate() {
                grads[w2r.start + i] += v;
            }
            for (i, v) in db2.into_iter().enumerate() {
                grads[b2r.start + i] += v;
            }
        }
        // gelu
        let dff_pre: Vec<f64> = dff_act
            .iter()
            .zip(&lc.ff_pre)
            .map(|(&g, &z)| g * nn::gelu_grad(z))
            .collect();
        // ff_pre = bb W1 + b1
        let mut dbb = vec![0.0; s * d];
        {
            let mut dw1 = vec![0.0; d * ff];
            let mut db1 = vec![0.0; ff];
            nn::linear_backward(
                &lc.bb,
                params.tensor(&format!("l{l}.w1")),
                &dff_pre,
                &mut dbb,
                &mut dw1,
                &mut db1,
                s,
                d,
                ff,
            );
            let w1r = r(&format!("l{l}.w1"));
            let b1r = r(&format!("l{l}.b1"));
            for (i, v) in dw1.into_iter().enumerate() {
                grads[w1r.start + i] += v;
            }
            for (i, v) in db1.into_iter().enumerate() {
                grads[b1r.start + i] += v;
            }
        }
        // bb = LN2(x_mid)
        {
            let mut dg = vec![0.0; d];
            let mut db = vec![0.0; d];
            let mut dx_ln = vec![0.0; s * d];
            nn::layer_norm_backward(
                &lc.xhat2,
                &lc.istd2,
                params.tensor(&format!("l{l}.ln2.g")),
                &dbb,
                &mut dx_ln,
                &mut dg,
                &mut db,
                s,
                d,
            );
            let gr2 = r(&format!("l{l}.ln2.g"));
            let br2 = r(&format!("l{l}.ln2.b"));
            for j in 0..d {
                grads[gr2.start + j] += dg[j];
                grads[br2.start + j] += db[j];
            }
            for i in 0..s * d {
                dx_mid[i] += dx_ln[i];
            }
        }
        // x_mid = x_in + dropout(attn_out)
        let mut dattn_out = dx_mid.clone();
        if let Some(mask) = &lc.drop1 {
            for (g, m) in dattn_out.iter_mut().zip(mask) {
                *g *= m;
            }
        }
        let mut dx_in = dx_mid; // residual path
        // attn_out = ctx Wo + bo
        let mut dctx = vec![0.0; s * d];
        {
            let mut dwo = vec![0.0; d * d];
            let mut dbo = vec![0.0; d];
            nn::linear_backward(
                &lc.ctx,
                params.tensor(&format!("l{l}.wo")),
                &dattn_out,
                &mut dctx,
                &mut dwo,
                &mut dbo,
                s,
                d,
                d,
            );
            let wor = r(&format!("l{l}.wo"));
            let bor = r(&format!("l{l}.bo"));
            for (i, v) in dwo.into_iter().enumerate() {
                grads[wor.start + i] += v;
            }
            for (i, v) in dbo.into_iter().enumerate() {
                grads[bor.start + i] += v;
            }
        }
        // attention core
        let mut dq = vec![0.0; s * d];
        let mut dk = vec![0.0; s * d];
        let mut dv = vec![0.0; s * d];
        for head in 0..h {
            let base = head * dh;
            for i in 0..s {
                let probs = &lc.probs[head * s * s + i * s..head * s * s + (i + 1) * s];
                // dprobs from ctx = probs . v
                let mut dprobs = vec![0.0; s];
                for j in 0..s {
                    let mut acc = 0.0;
                    for t in 0..dh {
                        acc += dctx[i * d + base + t] * lc.v[j * d + base + t];
                        dv[j * d + base + t] += probs[j] * dctx[i * d + base + t];
                    }
                    dprobs[j] = acc;
                }
                let mut dscores = vec![0.0; s];
                nn::softmax_backward_row(probs, &dprobs, &mut dscores);
                for j in 0..s {
                    let g = dscores[j] * scale;
                    if g == 0.0 {
                        continue;
                    }
                    for t in 0..dh {
                        dq[i * d + base + t] += g * lc.k[j * d + base + t];
                        dk[j * d + base + t] += g * lc.q[i * d + base + t];
                    }
                }
            }
        }
        // q/k/v = a W + b
        let mut da = vec![0.0; s * d];
        for (name_w, name_b, dout) in [("wq", "bq", &dq), ("wk", "bk", &dk), ("wv", "bv", &dv)] {
            let mut dw = vec![0.0; d * d];
            let mut db = vec![0.0; d];
            let mut da_part = vec![0.0; s * d];
            nn::linear_backward(
                &lc.a,
                params.tensor(&format!("l{l}.{name_w}")),
                dout,
                &mut da_part,
                &mut dw,
                &mut db,
                s,
                d,
                d,
            );
            let wr = r(&format!("l{l}.{name_w}"));
            let br = r(&format!("l{l}.{name_b}"));
            for (i, v) in dw.into_iter().enumerate() {
                grads[wr.start + i] += v;
            }
            for (i, v) in db.into_iter().enumerate() {
                grads[br.start + i] += v;
            }
            for i in 0..s * d {
                da[i] += da_part[i];
            }
        }
        // a = LN1(x_in)
        {
            let mut dg = vec![0.0; d];
            let mut db = vec![0.0; d];
            let mut dx_ln = vec![0.0; s * d];
            nn::layer_norm_backward(
                &lc.xhat1,
                &lc.istd1,
                params.tensor(&format!("l{l}.ln1.g")),
                &da,
                &mut dx_ln,
                &mut dg,
                &mut db,
                s,
                d,
            );
            let gr1 = r(&format!("l{l}.ln1.g"));
            let br1 = r(&format!("l{l}.ln1.b"));
            for j in 0..d {
                grads[gr1.start + j] += dg[j];
                grads[br1.start + j] += db[j];
            }
            for i in 0..s * d {
                dx_in[i] += dx_ln[i];
            }
        }
        dx = dx_in;
    }

    // embeddings
    let ter = r("tok_emb");
    let per = r("pos_emb");
    for i in 0..s {
        let tid = input.ids[i] as usize;
        for j in 0..d {
            grads[ter.start + tid * d + j] += dx[i * d + j];
            grads[per.start + i * d + j] += dx[i * d + j];
        }
    }
}

/// Mean binary cross-entropy of a batch plus its parameter gradient.
pub fn batch_loss_and_grad(
    params: &ScorerParams,
    batch: &[(EncodedPair, f64)],
    grads: Option<&mut [f64]>,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<f64, NumericError> {
    let n = batch.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grads = grads;
    let mut rng = dropout_rng;
    for (input, label) in batch {
        let cache = forward_logit(params, input, rng.as_deref_mut())?;
        let p = nn::sigmoid(cache.logit);
        let eps = 1e-12;
        loss += -(label * (p + eps).ln() + (1.0 - label) * (1.0 - p + eps).ln());
        if let Some(g) = grads.as_deref_mut() {
            let dlogit = (p - label) / n;
            backward(params, input, &cache, dlogit, g);
        }
    }
    Ok(loss / n)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of pairs held out for early stopping (0 disables).
    pub validation_fraction: f64,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 50,
            seed: 0,
            validation_fraction: 0.1,
            patience: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_trace: Vec<f64>,
    pub val_trace: Vec<f64>,
    pub epochs_run: usize,
}

/// Train the scorer on labeled pairs with Adam and mean BCE. Deterministic
/// for a fixed seed; zero epochs returns the initialization unchanged.
pub fn train_scorer(
    pairs: &[PairExample],
    cfg: ScorerConfig,
    hp: &TrainConfig,
) -> Result<(ScorerParams, TrainReport), NumericError> {
    if pairs.is_empty() {
        return Err(NumericError::Invalid("no training pairs".into()));
    }
    let vocab = Vocab::build(
        pairs
            .iter()
            .flat_map(|p| [p.predicate_a.as_str(), p.predicate_b.as_str()]),
    );
    let mut params = ScorerParams::init(cfg, vocab, hp.seed)?;
    let encoded: Vec<(EncodedPair, f64)> = pairs
        .iter()
        .map(|p| {
            (
                encode_pair(&p.predicate_a, &p.predicate_b, &params.vocab, params.cfg.max_seq),
                p.label as f64,
            )
        })
        .collect();
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut rng = salted_rng(hp.seed, "scorer-train");
    order.shuffle(&mut rng);
    let n_val = ((encoded.len() as f64) * hp.validation_fraction).floor() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    let train_set: Vec<(EncodedPair, f64)> =
        train_idx.iter().map(|&i| encoded[i].clone()).collect();
    let val_set: Vec<(EncodedPair, f64)> =
        val_idx.iter().map(|&i| encoded[i].clone()).collect();

    let mut opt = nn::Adam::new(hp.learning_rate, params.num_params());
    let mut report = TrainReport { loss_trace: vec![], val_trace: vec![], epochs_run: 0 };
    let mut best_val = f64::INFINITY;
    let mut since_best = 0usize;
    let mut step = 0usize;
    let mut train_order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..hp.epochs {
        train_order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in train_order.chunks(hp.batch_size.max(1)) {
            let batch: Vec<(EncodedPair, f64)> =
                chunk.iter().map(|&i| train_set[i].clone()).collect();
            let mut grads = vec![0.0; params.num_params()];
            let loss = batch_loss_and_grad(
                &params,
                &batch,
                Some(&mut grads),
                if params.cfg.dropout > 0.0 { Some(&mut rng) } else { None },
            )?;
            if !loss.is_finite() {
                return Err(NumericError::NanLoss(step));
            }
            opt.step(&mut params.data, &grads);
            epoch_loss += loss;
            batches += 1;
            step += 1;
        }
        report.loss_trace.push(epoch_loss / batches.max(1) as f64);
        report.epochs_run = epoch + 1;
        if !val_set.is_empty() {
            let val = batch_loss_and_grad(&params, &val_set, None, None)?;
            report.val_trace.push(val);
            if val < best_val - 1e-6 {
                best_val = val;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= hp.patience {
                    break;
                }
            }
        }
    }
    Ok((params, report))
}

/// Accuracy of the scorer on labeled pairs at threshold 0.5.
pub fn pair_accuracy(params: &ScorerParams, pairs: &[PairExample]) -> Result<f64, NumericError> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for p in pairs {
        let e = encode_pair(&p.predicate_a, &p.predicate_b, &params.vocab, params.cfg.max_seq);
        let prob = forward(params, &e)?;
        if (prob >= 0.5) == (p.label == 1) {
            correct += 1;
        }
    }
    Ok(correct as f64 / pairs.len() as f64)
}

/// Build supervised pairs from silver alignments: positives are same-group
/// pairs, negatives are cross-group pairs; single-group records pair each
/// predicate with a seeded-random out-of-record predicate.
pub fn make_training_pairs(
    alignments: &HashMap<String, SilverAlignment>,
    corpus: &Corpus,
    seed: u64,
) -> Result<Vec<PairExample>, NumericError> {
    let mut all_preds: Vec<String> = corpus
        .records
        .iter()
        .flat_map(|r| r.tuples.iter().map(|t| normalize(&t.predicate)))
        .collect();
    all_preds.sort();
    all_preds.dedup();
    if all_preds.len() < 2 {
        return Err(NumericError::Invalid(
            "need at least 2 distinct predicates".into(),
        ));
    }
    let mut out = Vec::new();
    for record in &corpus.records {
        let Some(alignment) = alignments.get(&record.id) else { continue };
        let preds: Vec<String> = record
            .tuples
            .iter()
            .map(|t| normalize(&t.predicate))
            .collect();
        let groups = alignment.groups();
        for group in &groups {
            for (a, &i) in group.iter().enumerate() {
                for &j in &group[a + 1..] {
                    out.push(PairExample {
                        predicate_a: preds[i].clone(),
                        predicate_b: preds[j].clone(),
                        label: 1,
                    });
                }
            }
        }
        if groups.len() > 1 {
            for (gi, ga) in groups.iter().enumerate() {
                for gb in &groups[gi + 1..] {
                    for &i in ga {
                        for &j in gb {
                            out.push(PairExample {
                                predicate_a: preds[i].clone(),
                                predicate_b: preds[j].clone(),
                                label: 0,
                            });
                        }
                    }
                }
            }
        } else {
            // single-group record: negatives pair each predicate with a
            // random predicate outside the record
            let in_record: Vec<&String> = preds.iter().collect();
            let candidates: Vec<&String> = all_preds
                .iter()
                .filter(|p| !in_record.contains(p))
                .collect();
            if candidates.is_empty() {
                continue;
            }
            let mut rng = salted_rng(seed, &format!("negpairs:{}", record.id));
            for p in &preds {
                let other = candidates[rng.gen_range(0..candidates.len())];
                out.push(PairExample {
                    predicate_a: p.clone(),
                    predicate_b: other.clone(),
                    label: 0,
                });
            }
        }
    }
    Ok(out)
}

/// Finite-difference gradient check: central differences (step `h`) on a
/// seeded sample of coordinates. Returns the max relative error; near-zero
/// pairs are compared with absolute tolerance 1e-8.
pub fn grad_check(
    params: &ScorerParams,
    batch: &[(EncodedPair, f64)],
    h: f64,
    n_coords: usize,
    seed: u64,
) -> Result<f64, NumericError> {
    let mut analytic = vec![0.0; params.num_params()];
    batch_loss_and_grad(params, batch, Some(&mut analytic), None)?;
    let mut rng = salted_rng(seed, "grad-check");
    let mut max_err = 0.0f64;
    let mut probe = params.clone();
    for _ in 0..n_coords {
        let i = rng.gen_range(0..params.num_params());
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let lp = batch_loss_and_grad(&probe, batch, None, None)?;
        probe.data[i] = orig - h;
        let lm = batch_loss_and_grad(&probe, batch, None, None)?;
        probe.data[i] = orig;
        let fd = (lp - lm) / (2.0 * h);
        let a = analytic[i];
        let denom = a.abs().max(fd.abs());
        let err = if denom < 1e-8 { (a - fd).abs() } else { (a - fd).abs() / denom };
        max_err = max_err.max(err);
    }
    Ok(max_err)
}

/// Neural weight source: symmetrized scorer probability, so the gamma
/// matrix stays symmetric despite the ordered input.
pub struct NeuralSource<'a> {
    pub params: &'a ScorerParams,
}

impl WeightSource for NeuralSource<'_> {
    fn weight(&self, record: &CorpusRecord, i: usize, j: usize) -> f64 {
        let a = normalize(&record.tuples[i].predicate);
        let b = normalize(&record.tuples[j].predicate);
        let max_seq = self.params.cfg.max_seq;
        let eab = encode_pair(&a, &b, &self.params.vocab, max_seq);
        let eba = encode_pair(&b, &a, &self.params.vocab, max_seq);
        let fab = forward(self.params, &eab).unwrap_or(0.0);
        let fba = forward(self.params, &eba).unwrap_or(0.0);
        0.5 * (fab + fba)
    }
}

const MAGIC: &[u8; 4] = b"DCLS";
const VERSION: u32 = 1;

/// Serialize parameters: magic "DCLS", version, config block, vocabulary,
/// then a tensor manifest followed by row-major little-endian f32 data.
pub fn save_params(params: &ScorerParams, path: &Path) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    for v in [
        params.cfg.d_model,
        params.cfg.d_ff,
        params.cfg.heads,
        params.cfg.layers,
        params.cfg.max_seq,
        params.cfg.vocab_size,
    ] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    out.write_all(&(params.cfg.dropout as f32).to_le_bytes())?;
    out.write_all(&(params.vocab.words.len() as u32).to_le_bytes())?;
    for w in &params.vocab.words {
        let bytes = w.as_bytes();
        out.write_all(&(bytes.len() as u32).to_le_bytes())?;
        out.write_all(bytes)?;
    }
    let names = params.tensor_names();
    out.write_all(&(names.len() as u32).to_le_bytes())?;
    for name in &names {
        let bytes = name.as_bytes();
        out.write_all(&(bytes.len() as u32).to_le_bytes())?;
        out.write_all(bytes)?;
        let t = params.tensor(name);
        out.write_all(&(t.len() as u32).to_le_bytes())?;
        for &v in t {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_string(r: &mut impl Read) -> std::io::Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

pub fn load_params(path: &Path) -> std::io::Result<ScorerParams> {
    let bad = |msg: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string());
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    if read_u32(&mut r)? != VERSION {
        return Err(bad("unsupported version"));
    }
    let d_model = read_u32(&mut r)? as usize;
    let d_ff = read_u32(&mut r)? as usize;
    let heads = read_u32(&mut r)? as usize;
    let layers = read_u32(&mut r)? as usize;
    let max_seq = read_u32(&mut r)? as usize;
    let vocab_size = read_u32(&mut r)? as usize;
    let mut f32buf = [0u8; 4];
    r.read_exact(&mut f32buf)?;
    let dropout = f32::from_le_bytes(f32buf) as f64;
    let n_words = read_u32(&mut r)? as usize;
    let mut words = Vec::with_capacity(n_words);
    for _ in 0..n_words {
        words.push(read_string(&mut r)?);
    }
    let cfg = ScorerConfig { d_model, d_ff, heads, layers, dropout, max_seq, vocab_size };
    let mut params = ScorerParams::zeros(cfg, Vocab { words })
        .map_err(|e| bad(&e.to_string()))?;
    let n_tensors = read_u32(&mut r)? as usize;
    for _ in 0..n_tensors {
        let name = read_string(&mut r)?;
        let len = read_u32(&mut r)? as usize;
        let range = params.tensor_range(&name);
        if range.len() != len {
            return Err(bad(&format!("tensor {name}: expected {} values, got {len}", range.len())));
        }
        for i in 0..len {
            r.read_exact(&mut f32buf)?;
            params.data[range.start + i] = f32::from_le_bytes(f32buf) as f64;
        }
    }
    Ok(params)
}
