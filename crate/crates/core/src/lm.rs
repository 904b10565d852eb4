//! Absolute-discount backoff n-gram language model over the concatenated
//! sequence BOS · message · SEP · reply · EOS.
//!
//! Each order level reserves mass d per distinct continuation and hands it to
//! the next shorter order; the chain bottoms out in an add-one unigram over
//! every token except PAD and BOS, so those two always score −∞ and every
//! other token stays reachable.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, TokenId, BOS, EOS, PAD, SEP};
use crate::error::{Error, Result};
use crate::scalar::{real, Real};

#[derive(Debug, Clone, PartialEq)]
struct CtxEntry {
    /// Sum of continuation counts; the denominator of this context's
    /// distribution, which is why each level sums to 1 exactly.
    total: u64,
    /// Sorted by token id.
    continuations: Vec<(TokenId, u64)>,
}

#[derive(Debug, Clone)]
pub struct NGramModel<S: Real> {
    order: usize,
    discount: f64,
    vocab_size: usize,
    /// `levels[len]` maps contexts of `len` tokens to their continuations;
    /// `levels[0]` holds the single empty context with raw unigram counts.
    levels: Vec<HashMap<Box<[TokenId]>, CtxEntry>>,
    /// Add-one-smoothed unigram probabilities, zero at PAD and BOS.
    unigram: Vec<S>,
}

/// One serialized n-gram level: `(context, continuation counts)` rows.
pub type LevelRows = Vec<(Vec<TokenId>, Vec<(TokenId, u64)>)>;

/// Serialized form: counts only, so the bytes are identical for every scalar
/// type and stable across runs (contexts and continuations sorted).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NGramRepr {
    pub order: usize,
    pub discount: f64,
    pub vocab_size: usize,
    pub levels: Vec<LevelRows>,
}

impl<S: Real> NGramModel<S> {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Raw count of a k-gram, k in `1..=order`.
    pub fn count(&self, gram: &[TokenId]) -> u64 {
        assert!(
            !gram.is_empty() && gram.len() <= self.order,
            "gram length must lie in 1..=order"
        );
        let (ctx, tok) = gram.split_at(gram.len() - 1);
        self.levels[ctx.len()]
            .get(ctx)
            .and_then(|e| {
                e.continuations
                    .binary_search_by_key(&tok[0], |&(t, _)| t)
                    .ok()
                    .map(|i| e.continuations[i].1)
            })
            .unwrap_or(0)
    }

    /// Sum of continuation counts after `context` (the denominator used at
    /// that level), 0 for unseen contexts.
    pub fn context_total(&self, context: &[TokenId]) -> u64 {
        assert!(context.len() < self.order, "context longer than order − 1");
        self.levels[context.len()]
            .get(context)
            .map_or(0, |e| e.total)
    }

    /// Log-probabilities of every next token given the context, which must
    /// hold at least BOS. Only the last `order − 1` context tokens matter.
    pub fn next_token_logprobs(&self, context: &[TokenId]) -> Vec<S> {
        assert!(!context.is_empty(), "context must hold at least BOS");
        let mut p = self.unigram.clone();
        let d = real::<S>(self.discount);
        let max_len = (self.order - 1).min(context.len());
        for len in 1..=max_len {
            let ctx = &context[context.len() - len..];
            let Some(entry) = self.levels[len].get(ctx) else {
                continue;
            };
            let total = real::<S>(entry.total as f64);
            let lambda = d * real::<S>(entry.continuations.len() as f64) / total;
            for v in p.iter_mut() {
                *v = *v * lambda;
            }
            for &(tok, cnt) in &entry.continuations {
                p[tok as usize] = p[tok as usize] + (real::<S>(cnt as f64) - d) / total;
            }
        }
        p.into_iter().map(|v| v.ln()).collect()
    }

    /// Total log-probability of generating `reply` after `message`, including
    /// the closing EOS step.
    pub fn sequence_logprob(&self, message: &[TokenId], reply: &[TokenId]) -> S {
        assert!(!reply.is_empty(), "reply must be non-empty");
        let mut context = prediction_context(message);
        let mut lp = S::zero();
        for &tok in reply {
            lp = lp + self.next_token_logprobs(&context)[tok as usize];
            context.push(tok);
        }
        lp + self.next_token_logprobs(&context)[EOS as usize]
    }

    fn to_repr(&self) -> NGramRepr {
        let levels = self
            .levels
            .iter()
            .map(|level| {
                let mut rows: LevelRows = level
                    .iter()
                    .map(|(ctx, e)| (ctx.to_vec(), e.continuations.clone()))
                    .collect();
                rows.sort_by(|a, b| a.0.cmp(&b.0));
                rows
            })
            .collect();
        NGramRepr {
            order: self.order,
            discount: self.discount,
            vocab_size: self.vocab_size,
            levels,
        }
    }

    fn from_repr(repr: NGramRepr) -> Result<Self> {
        validate_params(repr.order, repr.discount)?;
        if repr.levels.len() != repr.order {
            return Err(Error::ArtifactFormat(format!(
                "expected {} count levels, found {}",
                repr.order,
                repr.levels.len()
            )));
        }
        let mut levels: Vec<HashMap<Box<[TokenId]>, CtxEntry>> =
            vec![HashMap::new(); repr.order];
        for (len, rows) in repr.levels.into_iter().enumerate() {
            for (ctx, continuations) in rows {
                if ctx.len() != len {
                    return Err(Error::ArtifactFormat(format!(
                        "context {ctx:?} filed under length {len}"
                    )));
                }
                if continuations.is_empty() {
                    return Err(Error::ArtifactFormat(format!(
                        "context {ctx:?} has no continuations"
                    )));
                }
                let mut total = 0u64;
                for window in continuations.windows(2) {
                    if window[0].0 >= window[1].0 {
                        return Err(Error::ArtifactFormat(format!(
                            "continuations of {ctx:?} are not sorted by token"
                        )));
                    }
                }
                for &(tok, cnt) in &continuations {
                    if tok as usize >= repr.vocab_size || cnt == 0 {
                        return Err(Error::ArtifactFormat(format!(
                            "continuation ({tok}, {cnt}) of {ctx:?} is out of range"
                        )));
                    }
                    total += cnt;
                }
                if ctx.iter().any(|&t| t as usize >= repr.vocab_size) {
                    return Err(Error::ArtifactFormat(format!(
                        "context {ctx:?} holds out-of-range token ids"
                    )));
                }
                levels[len].insert(ctx.into_boxed_slice(), CtxEntry {
                    total,
                    continuations,
                });
            }
        }
        let unigram = unigram_probs(&levels[0], repr.vocab_size);
        Ok(Self {
            order: repr.order,
            discount: repr.discount,
            vocab_size: repr.vocab_size,
            levels,
            unigram,
        })
    }
}

impl<S: Real> Serialize for NGramModel<S> {
    fn serialize<Ser: serde::Serializer>(&self, ser: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        self.to_repr().serialize(ser)
    }
}

impl<'de, S: Real> Deserialize<'de> for NGramModel<S> {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let repr = NGramRepr::deserialize(de)?;
        Self::from_repr(repr).map_err(serde::de::Error::custom)
    }
}

/// The LM context that precedes the first reply token.
pub fn prediction_context(message: &[TokenId]) -> Vec<TokenId> {
    let mut context = Vec::with_capacity(message.len() + 2);
    context.push(BOS);
    context.extend_from_slice(message);
    context.push(SEP);
    context
}

fn validate_params(order: usize, discount: f64) -> Result<()> {
    if order == 0 {
        return Err(Error::InvalidConfig("order must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&discount) {
        return Err(Error::InvalidConfig(format!(
            "discount must lie in [0, 1), got {discount}"
        )));
    }
    Ok(())
}

fn unigram_probs<S: Real>(
    level0: &HashMap<Box<[TokenId]>, CtxEntry>,
    vocab_size: usize,
) -> Vec<S> {
    let mut counts = vec![0u64; vocab_size];
    if let Some(entry) = level0.get(&[] as &[TokenId]) {
        for &(tok, cnt) in &entry.continuations {
            counts[tok as usize] = cnt;
        }
    }
    let support: Vec<usize> = (0..vocab_size)
        .filter(|&v| v != PAD as usize && v != BOS as usize)
        .collect();
    let total: u64 = support.iter().map(|&v| counts[v]).sum();
    let denom = real::<S>((total + support.len() as u64) as f64);
    let mut probs = vec![S::zero(); vocab_size];
    for &v in &support {
        probs[v] = real::<S>((counts[v] + 1) as f64) / denom;
    }
    probs
}

type CountBuilder = HashMap<Box<[TokenId]>, HashMap<TokenId, u64>>;

/// Counts n-grams over each sequence wrapped as BOS · seq · EOS. Sequences
/// hold content (and SEP) tokens only; BOS is kept out of the unigram table
/// since nothing ever predicts it.
pub fn train_sequences<S: Real>(
    sequences: &[Vec<TokenId>],
    vocab_size: usize,
    order: usize,
    discount: f64,
) -> Result<NGramModel<S>> {
    validate_params(order, discount)?;
    if sequences.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut builders: Vec<CountBuilder> = vec![HashMap::new(); order];
    for seq in sequences {
        for &tok in seq {
            assert!(
                (tok as usize) < vocab_size,
                "token id {tok} outside vocab of {vocab_size}"
            );
        }
        let mut wrapped = Vec::with_capacity(seq.len() + 2);
        wrapped.push(BOS);
        wrapped.extend_from_slice(seq);
        wrapped.push(EOS);
        for (i, &tok) in wrapped.iter().enumerate() {
            if tok != BOS {
                *builders[0]
                    .entry(Box::from(&[] as &[TokenId]))
                    .or_default()
                    .entry(tok)
                    .or_insert(0) += 1;
            }
            for len in 1..order.min(i + 1) {
                let ctx = &wrapped[i - len..i];
                *builders[len]
                    .entry(Box::from(ctx))
                    .or_default()
                    .entry(tok)
                    .or_insert(0) += 1;
            }
        }
    }
    let levels: Vec<HashMap<Box<[TokenId]>, CtxEntry>> = builders
        .into_iter()
        .map(|level| {
            level
                .into_iter()
                .map(|(ctx, conts)| {
                    let mut continuations: Vec<(TokenId, u64)> = conts.into_iter().collect();
                    continuations.sort_by_key(|&(t, _)| t);
                    let total = continuations.iter().map(|&(_, c)| c).sum();
                    (ctx, CtxEntry {
                        total,
                        continuations,
                    })
                })
                .collect()
        })
        .collect();
    let unigram = unigram_probs(&levels[0], vocab_size);
    Ok(NGramModel {
        order,
        discount,
        vocab_size,
        levels,
        unigram,
    })
}

/// Trains on every BOS · message · SEP · reply · EOS sequence of the split.
pub fn train_ngram<S: Real>(train: &Dataset, order: usize, discount: f64) -> Result<NGramModel<S>> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let sequences: Vec<Vec<TokenId>> = train
        .examples
        .iter()
        .map(|ex| {
            let mut seq = Vec::with_capacity(ex.message.len() + ex.reply.len() + 1);
            seq.extend_from_slice(&ex.message);
            seq.push(SEP);
            seq.extend_from_slice(&ex.reply);
            seq
        })
        .collect();
    train_sequences(&sequences, train.vocab.len(), order, discount)
}
