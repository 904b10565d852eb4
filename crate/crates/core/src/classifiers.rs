//! Linear softmax classifiers over hashed message/prefix features.
//!
//! One feature pipeline serves three models: the intent-from-prefix
//! classifier that steers guided decoding, the binary accept/reject action
//! classifier, and the separately seeded intent classifier used only for
//! scoring. Features are FNV-1a-hashed namespaced strings so two
//! implementations of this interface produce identical buckets.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Example, TokenId, Vocab};
use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// Number of hash buckets; fixed so artifacts stay interchangeable.
pub const N_BUCKETS: usize = 1 << 18;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

/// 64-bit FNV-1a over the concatenation of the segments.
pub fn fnv1a64<T: AsRef<[u8]>>(segments: &[T]) -> u64 {
    let mut hash = FNV_OFFSET;
    for segment in segments {
        for &byte in segment.as_ref() {
            hash ^= u64::from(byte);
            hash = hash.wrapping_mul(FNV_PRIME);
        }
    }
    hash
}

/// Sparse feature counts, sorted by bucket id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(Vec<(u32, f64)>);

impl FeatureVector {
    fn from_buckets(mut buckets: Vec<u32>) -> Self {
        buckets.sort_unstable();
        let mut pairs: Vec<(u32, f64)> = Vec::new();
        for b in buckets {
            match pairs.last_mut() {
                Some(last) if last.0 == b => last.1 += 1.0,
                _ => pairs.push((b, 1.0)),
            }
        }
        Self(pairs)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.0.iter().copied()
    }

    /// Counts scaled to unit L2 norm; an empty vector stays empty.
    pub fn l2_normalized(mut self) -> Self {
        let norm = self.0.iter().map(|(_, c)| c * c).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, c) in &mut self.0 {
                *c /= norm;
            }
        }
        self
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

struct BucketAccum(Vec<u32>);

impl BucketAccum {
    fn push(&mut self, segments: &[&str]) {
        let bytes: Vec<&[u8]> = segments.iter().map(|s| s.as_bytes()).collect();
        self.0.push((fnv1a64(&bytes) % N_BUCKETS as u64) as u32);
    }

    fn side(&mut self, namespace: &str, tokens: &[&str]) {
        for tok in tokens {
            self.push(&[namespace, tok]);
        }
        for pair in tokens.windows(2) {
            self.push(&[namespace, pair[0], " ", pair[1]]);
        }
    }
}

fn featurize_strs(message: &[&str], prefix: &[&str]) -> FeatureVector {
    assert!(!message.is_empty(), "message must be non-empty");
    let mut accum = BucketAccum(Vec::with_capacity(message.len() + prefix.len() + 3));
    accum.side("m:", message);
    accum.side("p:", prefix);
    accum.push(&["len:", &(prefix.len() / 5).to_string()]);
    FeatureVector::from_buckets(accum.0)
}

/// Hashes message unigrams/bigrams under `m:`, prefix ones under `p:`, and a
/// bucketed prefix-length feature `len:⌊|prefix|/5⌋`.
pub fn featurize<T: AsRef<str>>(message: &[T], prefix: &[T]) -> FeatureVector {
    let message: Vec<&str> = message.iter().map(|t| t.as_ref()).collect();
    let prefix: Vec<&str> = prefix.iter().map(|t| t.as_ref()).collect();
    featurize_strs(&message, &prefix)
}

/// [`featurize`] over token ids, borrowing strings from the vocabulary.
pub fn featurize_ids(vocab: &Vocab, message: &[TokenId], prefix: &[TokenId]) -> FeatureVector {
    let message: Vec<&str> = message.iter().map(|&t| vocab.token(t)).collect();
    let prefix: Vec<&str> = prefix.iter().map(|&t| vocab.token(t)).collect();
    featurize_strs(&message, &prefix)
}

/// Message-namespace features of a bare token sequence (unigrams and bigrams
/// under `m:`, no length feature). Both sides of the retrieval encoder use
/// this, which is what puts messages and replies in one bucket space.
pub fn featurize_text<T: AsRef<str>>(tokens: &[T]) -> FeatureVector {
    let tokens: Vec<&str> = tokens.iter().map(|t| t.as_ref()).collect();
    assert!(!tokens.is_empty(), "token sequence must be non-empty");
    let mut accum = BucketAccum(Vec::with_capacity(tokens.len() * 2));
    accum.side("m:", &tokens);
    FeatureVector::from_buckets(accum.0)
}

/// [`featurize_text`] over token ids.
pub fn featurize_text_ids(vocab: &Vocab, tokens: &[TokenId]) -> FeatureVector {
    let tokens: Vec<&str> = tokens.iter().map(|&t| vocab.token(t)).collect();
    assert!(!tokens.is_empty(), "token sequence must be non-empty");
    let mut accum = BucketAccum(Vec::with_capacity(tokens.len() * 2));
    accum.side("m:", &tokens);
    FeatureVector::from_buckets(accum.0)
}

// ── Model ───────────────────────────────────────────────────────────────────

/// Softmax regression with a bucket-major weight layout: the weights of one
/// bucket across all classes sit contiguously, which keeps sparse scoring
/// cache-friendly.
#[derive(Debug, Clone)]
pub struct LinearSoftmaxModel<S: Real> {
    n_classes: usize,
    n_buckets: usize,
    class_names: Vec<String>,
    weights: Vec<S>,
    bias: Vec<S>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SoftmaxRepr {
    pub n_classes: usize,
    pub n_buckets: usize,
    pub class_names: Vec<String>,
    pub bias: Vec<f64>,
    /// Nonzero rows only: (bucket, per-class weights), sorted by bucket.
    pub rows: Vec<(u32, Vec<f64>)>,
}

impl<S: Real> LinearSoftmaxModel<S> {
    pub fn zeroed(class_names: Vec<String>, n_buckets: usize) -> Result<Self> {
        let n_classes = class_names.len();
        if n_classes < 2 {
            return Err(Error::InvalidConfig(
                "a classifier needs at least two classes".into(),
            ));
        }
        if n_buckets == 0 {
            return Err(Error::InvalidConfig("bucket count must be positive".into()));
        }
        Ok(Self {
            n_classes,
            n_buckets,
            class_names,
            weights: vec![S::zero(); n_classes * n_buckets],
            bias: vec![S::zero(); n_classes],
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    fn scores(&self, features: &FeatureVector) -> Vec<S> {
        let mut scores = self.bias.clone();
        for (bucket, count) in features.iter() {
            debug_assert!((bucket as usize) < self.n_buckets);
            let row = bucket as usize * self.n_classes;
            let c = real::<S>(count);
            for (j, s) in scores.iter_mut().enumerate() {
                *s = *s + self.weights[row + j] * c;
            }
        }
        scores
    }

    /// Class log-probabilities; exponentials sum to 1 up to rounding.
    pub fn predict_logprobs(&self, features: &FeatureVector) -> Vec<S> {
        log_softmax(&self.scores(features))
    }

    pub fn predict_class(&self, features: &FeatureVector) -> usize {
        let lp = self.predict_logprobs(features);
        let mut best = 0;
        for (j, &v) in lp.iter().enumerate().skip(1) {
            if v > lp[best] {
                best = j;
            }
        }
        best
    }

    fn to_repr(&self) -> SoftmaxRepr {
        let mut rows = Vec::new();
        for bucket in 0..self.n_buckets {
            let row = &self.weights[bucket * self.n_classes..(bucket + 1) * self.n_classes];
            if row.iter().any(|w| *w != S::zero()) {
                rows.push((
                    bucket as u32,
                    row.iter().map(|w| w.to_f64().unwrap()).collect(),
                ));
            }
        }
        SoftmaxRepr {
            n_classes: self.n_classes,
            n_buckets: self.n_buckets,
            class_names: self.class_names.clone(),
            bias: self.bias.iter().map(|b| b.to_f64().unwrap()).collect(),
            rows,
        }
    }

    fn from_repr(repr: SoftmaxRepr) -> Result<Self> {
        if repr.class_names.len() != repr.n_classes || repr.bias.len() != repr.n_classes {
            return Err(Error::ArtifactFormat(
                "class names, bias, and class count disagree".into(),
            ));
        }
        let mut model = Self::zeroed(repr.class_names, repr.n_buckets)
            .map_err(|e| Error::ArtifactFormat(e.to_string()))?;
        model.bias = repr.bias.iter().map(|&b| real::<S>(b)).collect();
        let mut prev: Option<u32> = None;
        for (bucket, row) in repr.rows {
            if row.len() != repr.n_classes || bucket as usize >= repr.n_buckets {
                return Err(Error::ArtifactFormat(format!(
                    "weight row at bucket {bucket} is malformed"
                )));
            }
            if prev.is_some_and(|p| p >= bucket) {
                return Err(Error::ArtifactFormat(
                    "weight rows are not sorted by bucket".into(),
                ));
            }
            prev = Some(bucket);
            for (j, &w) in row.iter().enumerate() {
                if !w.is_finite() {
                    return Err(Error::ArtifactFormat(format!(
                        "non-finite weight at bucket {bucket}"
                    )));
                }
                model.weights[bucket as usize * repr.n_classes + j] = real::<S>(w);
            }
        }
        Ok(model)
    }
}

impl<S: Real> Serialize for LinearSoftmaxModel<S> {
    fn serialize<Ser: serde::Serializer>(&self, ser: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        self.to_repr().serialize(ser)
    }
}

impl<'de, S: Real> Deserialize<'de> for LinearSoftmaxModel<S> {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let repr = SoftmaxRepr::deserialize(de)?;
        Self::from_repr(repr).map_err(serde::de::Error::custom)
    }
}

pub(crate) fn log_softmax<S: Real>(scores: &[S]) -> Vec<S> {
    let max = scores
        .iter()
        .copied()
        .fold(S::neg_infinity(), |a, b| if b > a { b } else { a });
    if max == S::neg_infinity() {
        return scores.to_vec();
    }
    let sum = scores
        .iter()
        .fold(S::zero(), |acc, &s| acc + (s - max).exp());
    let lse = max + sum.ln();
    scores.iter().map(|&s| s - lse).collect()
}

// ── Training ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            epochs: 20,
            l2: 1e-4,
            batch: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.l2 < 0.0 || !self.l2.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "l2 must be non-negative, got {}",
                self.l2
            )));
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::InvalidConfig(
                "epochs and batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Mean cross-entropy of the model on the samples plus `l2/2 · ‖W‖²`.
pub fn softmax_loss<S: Real>(
    model: &LinearSoftmaxModel<S>,
    samples: &[FeatureVector],
    labels: &[usize],
    l2: f64,
) -> S {
    assert_eq!(samples.len(), labels.len());
    let n = real::<S>(samples.len() as f64);
    let mut loss = S::zero();
    for (fv, &y) in samples.iter().zip(labels) {
        loss = loss - model.predict_logprobs(fv)[y];
    }
    let sq = model
        .weights
        .iter()
        .fold(S::zero(), |acc, &w| acc + w * w);
    loss / n + real::<S>(l2 / 2.0) * sq
}

/// Batch gradient of [`softmax_loss`] with respect to weights and bias,
/// returned dense. Exposed so the update rule can be checked against finite
/// differences.
pub fn softmax_loss_and_grad<S: Real>(
    model: &LinearSoftmaxModel<S>,
    samples: &[FeatureVector],
    labels: &[usize],
    l2: f64,
) -> (S, Vec<S>, Vec<S>) {
    assert_eq!(samples.len(), labels.len());
    let j = model.n_classes;
    let inv_n = real::<S>(1.0 / samples.len() as f64);
    let mut grad_w = vec![S::zero(); model.weights.len()];
    let mut grad_b = vec![S::zero(); j];
    let mut loss = S::zero();
    for (fv, &y) in samples.iter().zip(labels) {
        let lp = model.predict_logprobs(fv);
        loss = loss - lp[y] * inv_n;
        for (cls, g) in grad_b.iter_mut().enumerate() {
            let coeff = (lp[cls].exp() - if cls == y { S::one() } else { S::zero() }) * inv_n;
            *g = *g + coeff;
            for (bucket, count) in fv.iter() {
                grad_w[bucket as usize * j + cls] =
                    grad_w[bucket as usize * j + cls] + coeff * real::<S>(count);
            }
        }
    }
    let l2s = real::<S>(l2);
    let mut sq = S::zero();
    for (g, &w) in grad_w.iter_mut().zip(&model.weights) {
        *g = *g + l2s * w;
        sq = sq + w * w;
    }
    (loss + real::<S>(l2 / 2.0) * sq, grad_w, grad_b)
}

/// Seeded mini-batch gradient descent on cross-entropy with L2 decay. The
/// decay multiplies a global scale factor instead of touching every weight,
/// which is algebraically identical to dense decay and keeps steps sparse;
/// weights are materialized before returning.
pub fn train_softmax<S: Real>(
    samples: &[FeatureVector],
    labels: &[usize],
    class_names: Vec<String>,
    n_buckets: usize,
    config: &TrainConfig,
) -> Result<LinearSoftmaxModel<S>> {
    config.validate()?;
    if samples.len() != labels.len() {
        return Err(Error::LengthMismatch(format!(
            "{} samples vs {} labels",
            samples.len(),
            labels.len()
        )));
    }
    if samples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let n_classes = class_names.len();
    let distinct: HashSet<usize> = labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::SingleClass);
    }
    if labels.iter().any(|&y| y >= n_classes) {
        return Err(Error::InvalidConfig(
            "label index outside the class set".into(),
        ));
    }

    let mut model = LinearSoftmaxModel::<S>::zeroed(class_names, n_buckets)?;
    let mut scale = 1.0f64;
    let n = samples.len();
    let batches_per_epoch = n.div_ceil(config.batch);
    let total_steps = (config.epochs * batches_per_epoch) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch) {
            let lr_t = config.lr * (1.0 - step as f64 / total_steps);
            step += 1;
            let inv_b = real::<S>(1.0 / chunk.len() as f64);
            let scale_s = real::<S>(scale);
            let lps: Vec<Vec<S>> = chunk
                .iter()
                .map(|&i| {
                    let mut scores = model.bias.clone();
                    for (bucket, count) in samples[i].iter() {
                        let row = bucket as usize * n_classes;
                        let c = real::<S>(count);
                        for (cls, s) in scores.iter_mut().enumerate() {
                            *s = *s + model.weights[row + cls] * scale_s * c;
                        }
                    }
                    log_softmax(&scores)
                })
                .collect();
            scale *= 1.0 - lr_t * config.l2;
            let inv_new_scale = real::<S>(lr_t / scale);
            let lr_s = real::<S>(lr_t);
            for (lp, &i) in lps.iter().zip(chunk) {
                for (cls, &lp_cls) in lp.iter().enumerate() {
                    let coeff =
                        (lp_cls.exp() - if cls == labels[i] { S::one() } else { S::zero() })
                            * inv_b;
                    model.bias[cls] = model.bias[cls] - lr_s * coeff;
                    for (bucket, count) in samples[i].iter() {
                        let idx = bucket as usize * n_classes + cls;
                        model.weights[idx] =
                            model.weights[idx] - inv_new_scale * coeff * real::<S>(count);
                    }
                }
            }
        }
    }
    let scale_s = real::<S>(scale);
    for w in &mut model.weights {
        *w = *w * scale_s;
    }
    Ok(model)
}

// ── Prefix samples and the three trainers ───────────────────────────────────

/// One training row: a message, a (possibly empty) reply prefix, and the
/// class the finished reply carries.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixSample {
    pub message: Vec<TokenId>,
    pub prefix: Vec<TokenId>,
    pub label: usize,
}

/// Expands each example into T+1 samples, one per prefix length 0..=T, all
/// labeled with the example's final attribute.
pub fn make_prefix_samples<F>(dataset: &Dataset, labeler: F) -> Vec<PrefixSample>
where
    F: Fn(&Example) -> usize,
{
    let mut out = Vec::new();
    for ex in &dataset.examples {
        let label = labeler(ex);
        for t in 0..=ex.reply.len() {
            out.push(PrefixSample {
                message: ex.message.clone(),
                prefix: ex.reply[..t].to_vec(),
                label,
            });
        }
    }
    out
}

fn featurize_samples(vocab: &Vocab, samples: &[PrefixSample]) -> (Vec<FeatureVector>, Vec<usize>) {
    let features = samples
        .iter()
        .map(|s| featurize_ids(vocab, &s.message, &s.prefix))
        .collect();
    let labels = samples.iter().map(|s| s.label).collect();
    (features, labels)
}

/// Classifier p(intent | message, reply prefix) used to steer decoding.
/// Classes follow the catalog order.
pub fn train_intent_prefix_classifier<S: Real>(
    train: &Dataset,
    config: &TrainConfig,
) -> Result<LinearSoftmaxModel<S>> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let samples = make_prefix_samples(train, |ex| {
        train
            .catalog
            .index_of(&ex.intent)
            .expect("dataset invariant: every intent is cataloged")
    });
    let (features, labels) = featurize_samples(&train.vocab, &samples);
    let names = train
        .catalog
        .labels()
        .iter()
        .map(|l| l.as_str().to_string())
        .collect();
    train_softmax(&features, &labels, names, N_BUCKETS, config)
}

pub const ACTION_ACCEPT: usize = 0;
pub const ACTION_REJECT: usize = 1;

/// Binary classifier p(reject | message, reply prefix); examples whose id is
/// in `rejected_ids` carry the reject label on every prefix.
pub fn train_action_classifier<S: Real>(
    train: &Dataset,
    rejected_ids: &HashSet<String>,
    config: &TrainConfig,
) -> Result<LinearSoftmaxModel<S>> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let known: HashSet<&str> = train.examples.iter().map(|e| e.id.as_str()).collect();
    if let Some(unknown) = rejected_ids.iter().find(|id| !known.contains(id.as_str())) {
        return Err(Error::InvalidDataset(format!(
            "rejected id {unknown:?} is not in the train split"
        )));
    }
    let samples = make_prefix_samples(train, |ex| {
        if rejected_ids.contains(&ex.id) {
            ACTION_REJECT
        } else {
            ACTION_ACCEPT
        }
    });
    let (features, labels) = featurize_samples(&train.vocab, &samples);
    let names = vec!["accept".to_string(), "reject".to_string()];
    train_softmax(&features, &labels, names, N_BUCKETS, config)
}

/// Intent classifier for scoring only: trained on full replies (no prefix
/// expansion) with its own seed so it never shares parameters with the
/// guidance classifier.
pub fn train_eval_intent_classifier<S: Real>(
    train: &Dataset,
    config: &TrainConfig,
    seed: u64,
) -> Result<LinearSoftmaxModel<S>> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut config = config.clone();
    config.seed = seed;
    let features: Vec<FeatureVector> = train
        .examples
        .iter()
        .map(|ex| featurize_ids(&train.vocab, &ex.message, &ex.reply))
        .collect();
    let labels: Vec<usize> = train
        .examples
        .iter()
        .map(|ex| {
            train
                .catalog
                .index_of(&ex.intent)
                .expect("dataset invariant: every intent is cataloged")
        })
        .collect();
    let names = train
        .catalog
        .labels()
        .iter()
        .map(|l| l.as_str().to_string())
        .collect();
    train_softmax(&features, &labels, names, N_BUCKETS, &config)
}
