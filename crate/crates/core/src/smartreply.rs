//! Retrieval smart replies: a dual encoder mapping messages and candidate
//! replies into one vector space, and an index over deduplicated training
//! replies that serves the top-K nearest candidates with their intents.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifiers::{featurize_text_ids, FeatureVector, N_BUCKETS};
use crate::corpus::{Dataset, IntentLabel, TokenId, Vocab};
use crate::error::{Error, Result};
use crate::scalar::{real, Real};

pub const DEFAULT_K: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Embedding width.
    pub d: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d: 64,
            lr: 0.1,
            epochs: 10,
            batch: 64,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidConfig("embedding width must be positive".into()));
        }
        if self.batch < 2 {
            return Err(Error::InvalidConfig(
                "contrastive batches need at least 2 pairs".into(),
            ));
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Two linear maps from the hashed-feature space into ℝ^d, one per side.
/// Rows are bucket-major so embedding a sparse vector touches contiguous
/// memory.
#[derive(Debug, Clone)]
pub struct DualEncoder<S: Real> {
    d: usize,
    n_buckets: usize,
    message_proj: Vec<S>,
    reply_proj: Vec<S>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderRepr {
    pub d: usize,
    pub n_buckets: usize,
    /// Nonzero rows only: (bucket, d weights), sorted by bucket.
    pub message_rows: Vec<(u32, Vec<f64>)>,
    pub reply_rows: Vec<(u32, Vec<f64>)>,
}

impl<S: Real> DualEncoder<S> {
    pub fn zeroed(d: usize, n_buckets: usize) -> Self {
        Self {
            d,
            n_buckets,
            message_proj: vec![S::zero(); d * n_buckets],
            reply_proj: vec![S::zero(); d * n_buckets],
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    fn embed(&self, proj: &[S], features: &FeatureVector) -> Vec<S> {
        let mut out = vec![S::zero(); self.d];
        for (bucket, count) in features.iter() {
            debug_assert!((bucket as usize) < self.n_buckets);
            let row = bucket as usize * self.d;
            let c = real::<S>(count);
            for (k, o) in out.iter_mut().enumerate() {
                *o = *o + proj[row + k] * c;
            }
        }
        out
    }

    pub fn embed_message(&self, features: &FeatureVector) -> Vec<S> {
        self.embed(&self.message_proj, features)
    }

    pub fn embed_reply(&self, features: &FeatureVector) -> Vec<S> {
        self.embed(&self.reply_proj, features)
    }

    fn to_repr(&self) -> EncoderRepr {
        let rows = |proj: &[S]| {
            let mut out = Vec::new();
            for bucket in 0..self.n_buckets {
                let row = &proj[bucket * self.d..(bucket + 1) * self.d];
                if row.iter().any(|w| *w != S::zero()) {
                    out.push((
                        bucket as u32,
                        row.iter().map(|w| w.to_f64().unwrap()).collect::<Vec<f64>>(),
                    ));
                }
            }
            out
        };
        EncoderRepr {
            d: self.d,
            n_buckets: self.n_buckets,
            message_rows: rows(&self.message_proj),
            reply_rows: rows(&self.reply_proj),
        }
    }

    fn from_repr(repr: EncoderRepr) -> Result<Self> {
        if repr.d == 0 || repr.n_buckets == 0 {
            return Err(Error::ArtifactFormat("encoder dimensions must be positive".into()));
        }
        let mut enc = Self::zeroed(repr.d, repr.n_buckets);
        for (rows, proj) in [
            (&repr.message_rows, &mut enc.message_proj),
            (&repr.reply_rows, &mut enc.reply_proj),
        ] {
            let mut prev: Option<u32> = None;
            for (bucket, row) in rows {
                if row.len() != repr.d || *bucket as usize >= repr.n_buckets {
                    return Err(Error::ArtifactFormat(format!(
                        "projection row at bucket {bucket} is malformed"
                    )));
                }
                if prev.is_some_and(|p| p >= *bucket) {
                    return Err(Error::ArtifactFormat(
                        "projection rows are not sorted by bucket".into(),
                    ));
                }
                prev = Some(*bucket);
                for (k, &w) in row.iter().enumerate() {
                    if !w.is_finite() {
                        return Err(Error::ArtifactFormat(format!(
                            "non-finite projection weight at bucket {bucket}"
                        )));
                    }
                    proj[*bucket as usize * repr.d + k] = real::<S>(w);
                }
            }
        }
        Ok(enc)
    }
}

impl<S: Real> Serialize for DualEncoder<S> {
    fn serialize<Ser: serde::Serializer>(&self, ser: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        self.to_repr().serialize(ser)
    }
}

impl<'de, S: Real> Deserialize<'de> for DualEncoder<S> {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let repr = EncoderRepr::deserialize(de)?;
        Self::from_repr(repr).map_err(serde::de::Error::custom)
    }
}

fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Mean in-batch contrastive loss of one batch: each message must pick out
/// its own reply among all replies in the batch by dot product.
pub fn in_batch_loss<S: Real>(
    encoder: &DualEncoder<S>,
    messages: &[FeatureVector],
    replies: &[FeatureVector],
) -> S {
    assert_eq!(messages.len(), replies.len());
    assert!(messages.len() >= 2, "contrastive loss needs at least 2 pairs");
    let msg_emb: Vec<Vec<S>> = messages.iter().map(|f| encoder.embed_message(f)).collect();
    let rep_emb: Vec<Vec<S>> = replies.iter().map(|f| encoder.embed_reply(f)).collect();
    let b = messages.len();
    let mut loss = S::zero();
    for i in 0..b {
        let scores: Vec<S> = (0..b).map(|j| dot(&msg_emb[i], &rep_emb[j])).collect();
        let lp = crate::classifiers::log_softmax(&scores);
        loss = loss - lp[i];
    }
    loss / real::<S>(b as f64)
}

/// Mean of [`in_batch_loss`] over sequential full batches (the tail short of
/// a full batch is skipped, matching training).
pub fn mean_batch_loss<S: Real>(
    encoder: &DualEncoder<S>,
    messages: &[FeatureVector],
    replies: &[FeatureVector],
    batch: usize,
) -> S {
    let n_batches = messages.len() / batch;
    assert!(n_batches > 0, "fewer pairs than one batch");
    let mut total = S::zero();
    for b in 0..n_batches {
        let range = b * batch..(b + 1) * batch;
        total = total + in_batch_loss(encoder, &messages[range.clone()], &replies[range]);
    }
    total / real::<S>(n_batches as f64)
}

/// Encoder-side features are scaled to unit L2 norm so dot-product retrieval
/// ranks by direction rather than by text length.
fn encoder_features(vocab: &Vocab, tokens: &[TokenId]) -> FeatureVector {
    featurize_text_ids(vocab, tokens).l2_normalized()
}

fn side_features(dataset: &Dataset) -> (Vec<FeatureVector>, Vec<FeatureVector>) {
    let messages = dataset
        .examples
        .iter()
        .map(|ex| encoder_features(&dataset.vocab, &ex.message))
        .collect();
    let replies = dataset
        .examples
        .iter()
        .map(|ex| encoder_features(&dataset.vocab, &ex.reply))
        .collect();
    (messages, replies)
}

/// Trains both projections by seeded mini-batch descent on the in-batch
/// loss. All-zero weights are a stationary point of that loss, so active
/// buckets start at small seeded values instead; untouched buckets stay zero
/// and vanish from the artifact.
pub fn train_dual_encoder<S: Real>(train: &Dataset, config: &EncoderConfig) -> Result<DualEncoder<S>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if config.batch > train.len() {
        return Err(Error::InvalidConfig(format!(
            "batch of {} exceeds the {} training pairs",
            config.batch,
            train.len()
        )));
    }
    let (messages, replies) = side_features(train);

    let mut active: Vec<u32> = messages
        .iter()
        .chain(&replies)
        .flat_map(|f| f.iter().map(|(b, _)| b))
        .collect();
    active.sort_unstable();
    active.dedup();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut encoder = DualEncoder::<S>::zeroed(config.d, N_BUCKETS);
    for proj in [&mut encoder.message_proj, &mut encoder.reply_proj] {
        for &bucket in &active {
            let row = bucket as usize * config.d;
            for k in 0..config.d {
                proj[row + k] = real::<S>(rng.gen_range(-0.01..0.01));
            }
        }
    }

    let n = train.len();
    let lr = real::<S>(config.lr);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks_exact(config.batch) {
            let b = chunk.len();
            let inv_b = real::<S>(1.0 / b as f64);
            let msg_emb: Vec<Vec<S>> = chunk
                .iter()
                .map(|&i| encoder.embed_message(&messages[i]))
                .collect();
            let rep_emb: Vec<Vec<S>> = chunk
                .iter()
                .map(|&i| encoder.embed_reply(&replies[i]))
                .collect();
            let probs: Vec<Vec<S>> = (0..b)
                .map(|i| {
                    let scores: Vec<S> = (0..b).map(|j| dot(&msg_emb[i], &rep_emb[j])).collect();
                    crate::classifiers::log_softmax(&scores)
                        .into_iter()
                        .map(|lp| lp.exp())
                        .collect()
                })
                .collect();

            let mut msg_grad = vec![S::zero(); b * config.d];
            let mut rep_grad = vec![S::zero(); b * config.d];
            for i in 0..b {
                for j in 0..b {
                    let coeff = (probs[i][j] - if i == j { S::one() } else { S::zero() }) * inv_b;
                    for k in 0..config.d {
                        msg_grad[i * config.d + k] =
                            msg_grad[i * config.d + k] + coeff * rep_emb[j][k];
                        rep_grad[j * config.d + k] =
                            rep_grad[j * config.d + k] + coeff * msg_emb[i][k];
                    }
                }
            }
            for (pos, &i) in chunk.iter().enumerate() {
                for (bucket, count) in messages[i].iter() {
                    let row = bucket as usize * config.d;
                    let c = real::<S>(count) * lr;
                    for k in 0..config.d {
                        encoder.message_proj[row + k] =
                            encoder.message_proj[row + k] - c * msg_grad[pos * config.d + k];
                    }
                }
                for (bucket, count) in replies[i].iter() {
                    let row = bucket as usize * config.d;
                    let c = real::<S>(count) * lr;
                    for k in 0..config.d {
                        encoder.reply_proj[row + k] =
                            encoder.reply_proj[row + k] - c * rep_grad[pos * config.d + k];
                    }
                }
            }
        }
    }
    Ok(encoder)
}

// ── Reply index and retrieval ───────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct ReplyCandidate<S: Real> {
    pub tokens: Vec<TokenId>,
    pub intent: IntentLabel,
    pub embedding: Vec<S>,
}

/// Deduplicated training replies in first-occurrence order with precomputed
/// embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplyIndex<S: Real> {
    pub candidates: Vec<ReplyCandidate<S>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplyIndexRepr {
    pub candidates: Vec<(Vec<TokenId>, IntentLabel, Vec<f64>)>,
}

impl<S: Real> ReplyIndex<S> {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    fn to_repr(&self) -> ReplyIndexRepr {
        ReplyIndexRepr {
            candidates: self
                .candidates
                .iter()
                .map(|c| {
                    (
                        c.tokens.clone(),
                        c.intent.clone(),
                        c.embedding.iter().map(|v| v.to_f64().unwrap()).collect(),
                    )
                })
                .collect(),
        }
    }

    fn from_repr(repr: ReplyIndexRepr) -> Result<Self> {
        let mut candidates = Vec::with_capacity(repr.candidates.len());
        let width = repr.candidates.first().map(|(_, _, e)| e.len());
        for (tokens, intent, embedding) in repr.candidates {
            if tokens.is_empty() || Some(embedding.len()) != width {
                return Err(Error::ArtifactFormat(
                    "reply candidate with empty tokens or ragged embedding".into(),
                ));
            }
            candidates.push(ReplyCandidate {
                tokens,
                intent,
                embedding: embedding.into_iter().map(real::<S>).collect(),
            });
        }
        Ok(Self { candidates })
    }
}

impl<S: Real> Serialize for ReplyIndex<S> {
    fn serialize<Ser: serde::Serializer>(&self, ser: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        self.to_repr().serialize(ser)
    }
}

impl<'de, S: Real> Deserialize<'de> for ReplyIndex<S> {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let repr = ReplyIndexRepr::deserialize(de)?;
        Self::from_repr(repr).map_err(serde::de::Error::custom)
    }
}

/// Deduplicates training replies by token sequence (first occurrence fixes
/// the position), assigns each the majority intent across its occurrences
/// with ties to the lexicographically smaller label, and embeds it.
pub fn build_reply_index<S: Real>(encoder: &DualEncoder<S>, train: &Dataset) -> Result<ReplyIndex<S>> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut order: Vec<&[TokenId]> = Vec::new();
    let mut label_counts: HashMap<&[TokenId], HashMap<&IntentLabel, usize>> = HashMap::new();
    for ex in &train.examples {
        let slot = label_counts.entry(&ex.reply).or_insert_with(|| {
            order.push(&ex.reply);
            HashMap::new()
        });
        *slot.entry(&ex.intent).or_insert(0) += 1;
    }
    let candidates = order
        .into_iter()
        .map(|tokens| {
            let counts = &label_counts[tokens];
            let intent = counts
                .iter()
                .map(|(label, &n)| (n, *label))
                .max_by(|a, b| a.0.cmp(&b.0).then_with(|| b.1.cmp(a.1)))
                .map(|(_, label)| label.clone())
                .expect("every indexed reply was observed at least once");
            let embedding = encoder.embed_reply(&encoder_features(&train.vocab, tokens));
            ReplyCandidate {
                tokens: tokens.to_vec(),
                intent,
                embedding,
            }
        })
        .collect();
    Ok(ReplyIndex { candidates })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub tokens: Vec<TokenId>,
    pub intent: IntentLabel,
    pub score: f64,
}

/// Exactly K suggestions, scores non-increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionSet {
    pub entries: Vec<Suggestion>,
}

impl SuggestionSet {
    /// The distinct suggested intents 𝐳ₛ, sorted.
    pub fn intents(&self) -> Vec<IntentLabel> {
        let mut out: Vec<IntentLabel> = self.entries.iter().map(|e| e.intent.clone()).collect();
        out.sort();
        out.dedup();
        out
    }
}

fn ranked_candidates<S: Real>(
    encoder: &DualEncoder<S>,
    index: &ReplyIndex<S>,
    message: &[TokenId],
    vocab: &crate::corpus::Vocab,
) -> Vec<(usize, S)> {
    let msg_emb = encoder.embed_message(&encoder_features(vocab, message));
    let mut scored: Vec<(usize, S)> = index
        .candidates
        .iter()
        .enumerate()
        .map(|(i, c)| (i, dot(&msg_emb, &c.embedding)))
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("retrieval scores are finite")
            .then_with(|| a.0.cmp(&b.0))
    });
    scored
}

fn take_suggestions<S: Real>(index: &ReplyIndex<S>, ranked: &[(usize, S)]) -> SuggestionSet {
    let entries = ranked
        .iter()
        .map(|&(i, score)| Suggestion {
            tokens: index.candidates[i].tokens.clone(),
            intent: index.candidates[i].intent.clone(),
            score: score.to_f64().unwrap(),
        })
        .collect();
    SuggestionSet { entries }
}

/// Top-K candidates by dot product against the embedded message; score ties
/// keep index insertion order.
pub fn retrieve_suggestions<S: Real>(
    encoder: &DualEncoder<S>,
    index: &ReplyIndex<S>,
    message: &[TokenId],
    vocab: &crate::corpus::Vocab,
    k: usize,
) -> Result<SuggestionSet> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be positive".into()));
    }
    if k > index.len() {
        return Err(Error::InvalidConfig(format!(
            "K of {k} exceeds the {} indexed replies",
            index.len()
        )));
    }
    let scored = ranked_candidates(encoder, index, message, vocab);
    Ok(take_suggestions(index, &scored[..k]))
}

/// Like [`retrieve_suggestions`] but each intent appears at most once: the
/// scan keeps the best-scoring reply per intent until K distinct intents are
/// collected.
pub fn retrieve_suggestions_dedup<S: Real>(
    encoder: &DualEncoder<S>,
    index: &ReplyIndex<S>,
    message: &[TokenId],
    vocab: &crate::corpus::Vocab,
    k: usize,
) -> Result<SuggestionSet> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be positive".into()));
    }
    let distinct = index
        .candidates
        .iter()
        .map(|c| &c.intent)
        .collect::<std::collections::HashSet<_>>()
        .len();
    if k > distinct {
        return Err(Error::InvalidConfig(format!(
            "K of {k} exceeds the {distinct} distinct indexed intents"
        )));
    }
    let scored = ranked_candidates(encoder, index, message, vocab);
    let mut seen: Vec<&IntentLabel> = Vec::with_capacity(k);
    let mut picked: Vec<(usize, S)> = Vec::with_capacity(k);
    for &(i, score) in &scored {
        if seen.contains(&&index.candidates[i].intent) {
            continue;
        }
        seen.push(&index.candidates[i].intent);
        picked.push((i, score));
        if picked.len() == k {
            break;
        }
    }
    Ok(take_suggestions(index, &picked))
}
