//! Reply generation: vanilla beam search plus six steered variants that share
//! one beam engine and differ only in how a candidate expansion is scored.
//!
//! Guided methods add α · log p(attribute | message, prefix ⊕ token) to each
//! candidate's generator score, evaluated on the extended prefix, and only the
//! top `top_k_rescore` tokens per step are eligible. With α = 0 every guided
//! score equals its base score bit for bit, so the baseline reduction is exact
//! rather than approximate.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifiers::{featurize_ids, LinearSoftmaxModel, ACTION_REJECT};
use crate::corpus::{IntentLabel, TokenId, Vocab, EOS, SEP};
use crate::error::{Error, Result};
use crate::lm::{prediction_context, NGramModel};
use crate::scalar::{real, Real};
use crate::smartreply::SuggestionSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    NiftyIntent,
    NiftyAction,
    RerankIntent,
    RerankAction,
    Unlikelihood,
    Rules,
}

pub const ALL_METHODS: [Method; 7] = [
    Method::Baseline,
    Method::NiftyIntent,
    Method::NiftyAction,
    Method::RerankIntent,
    Method::RerankAction,
    Method::Unlikelihood,
    Method::Rules,
];

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::NiftyIntent => "nifty_intent",
            Method::NiftyAction => "nifty_action",
            Method::RerankIntent => "rerank_intent",
            Method::RerankAction => "rerank_action",
            Method::Unlikelihood => "unlikelihood",
            Method::Rules => "rules",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_METHODS
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub method: Method,
    pub alpha: f64,
    pub beams: usize,
    pub top_k_rescore: usize,
    pub max_len: usize,
    pub unlikelihood_beta: f64,
    pub reselect_intent_each_step: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            method: Method::Baseline,
            alpha: 1.0,
            beams: 5,
            top_k_rescore: 10,
            max_len: 30,
            unlikelihood_beta: 2.0,
            reselect_intent_each_step: false,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beams == 0 {
            return Err(Error::InvalidConfig("beams must be positive".into()));
        }
        if self.top_k_rescore < self.beams {
            return Err(Error::InvalidConfig(format!(
                "top_k_rescore of {} is below the beam width {}",
                self.top_k_rescore, self.beams
            )));
        }
        if self.max_len == 0 {
            return Err(Error::InvalidConfig("max_len must be at least 1".into()));
        }
        for (name, v) in [("alpha", self.alpha), ("unlikelihood_beta", self.unlikelihood_beta)] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be a non-negative finite number, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// The attribute a guided or reranked decode steers toward.
#[derive(Debug, Clone, PartialEq)]
pub enum Attribute {
    Intent(IntentLabel),
    /// The reject class of the action classifier.
    Action,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis<S: Real> {
    /// Reply so far, without BOS/SEP/EOS.
    pub tokens: Vec<TokenId>,
    /// Sum of generator log-terms (penalty-adjusted for unlikelihood).
    pub base_logprob: S,
    /// Base plus α-scaled classifier terms; equals base for unguided methods.
    pub combined_logprob: S,
    pub finished: bool,
}

/// One scored expansion of a hypothesis. `token` may be EOS, which finishes
/// the hypothesis without entering its token list.
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion<S: Real> {
    pub token: TokenId,
    pub base_step: S,
    pub combined_step: S,
}

fn attribute_class<S: Real>(
    classifier: &LinearSoftmaxModel<S>,
    attribute: &Attribute,
) -> Result<usize> {
    match attribute {
        Attribute::Intent(label) => classifier.class_index(label.as_str()).ok_or_else(|| {
            Error::InvalidConfig(format!("intent {label} is not a classifier class"))
        }),
        Attribute::Action => Ok(ACTION_REJECT),
    }
}

/// Top `k` finite-probability tokens by base logprob, ties to the smaller
/// id. SEP can never continue a reply, so it is no candidate even when the
/// backoff gives it mass.
fn top_candidates<S: Real>(logprobs: &[S], k: usize) -> Vec<(TokenId, S)> {
    let mut scored: Vec<(TokenId, S)> = logprobs
        .iter()
        .enumerate()
        .filter(|(tok, lp)| **lp > S::neg_infinity() && *tok != SEP as usize)
        .map(|(tok, &lp)| (tok as TokenId, lp))
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("logprobs are never NaN")
            .then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(k);
    scored
}

enum StepMode<'a, S: Real> {
    Plain,
    Guided {
        classifier: &'a LinearSoftmaxModel<S>,
        vocab: &'a Vocab,
        class: usize,
        alpha: S,
        /// Re-derive the target class for each hypothesis from its own
        /// prefix, constrained to these eligible class indices.
        reselect_among: Option<&'a [usize]>,
    },
    Penalized {
        penalty: &'a HashSet<TokenId>,
        beta: S,
    },
}

fn log_sum_exp<S: Real>(values: impl Iterator<Item = S> + Clone) -> S {
    let max = values
        .clone()
        .fold(S::neg_infinity(), |a, b| if b > a { b } else { a });
    if max == S::neg_infinity() {
        return max;
    }
    let sum = values.fold(S::zero(), |acc, v| acc + (v - max).exp());
    max + sum.ln()
}

/// Shifts penalized candidates down by `beta`, then adds back the mass the
/// penalty removed from the candidate set, so the set keeps its total
/// probability. With `beta = 0` the correction is exactly zero.
fn penalize_candidates<S: Real>(
    candidates: &[(TokenId, S)],
    penalty: &HashSet<TokenId>,
    beta: S,
) -> Vec<(TokenId, S)> {
    let shifted: Vec<(TokenId, S)> = candidates
        .iter()
        .map(|&(tok, lp)| {
            (
                tok,
                if penalty.contains(&tok) { lp - beta } else { lp },
            )
        })
        .collect();
    let mass = log_sum_exp(candidates.iter().map(|&(_, lp)| lp));
    let penalized_mass = log_sum_exp(shifted.iter().map(|&(_, lp)| lp));
    let correction = mass - penalized_mass;
    shifted
        .into_iter()
        .map(|(tok, lp)| (tok, lp + correction))
        .collect()
}

fn expand_hypothesis<S: Real>(
    lm: &NGramModel<S>,
    mode: &StepMode<'_, S>,
    message: &[TokenId],
    hyp: &Hypothesis<S>,
    config: &GuidanceConfig,
) -> Vec<Expansion<S>> {
    assert!(!hyp.finished, "finished hypotheses are never extended");
    let mut context = prediction_context(message);
    context.extend_from_slice(&hyp.tokens);
    let logprobs = lm.next_token_logprobs(&context);
    let candidates = top_candidates(&logprobs, config.top_k_rescore);
    match mode {
        StepMode::Plain => candidates
            .into_iter()
            .map(|(token, lp)| Expansion {
                token,
                base_step: lp,
                combined_step: lp,
            })
            .collect(),
        StepMode::Guided {
            classifier,
            vocab,
            class,
            alpha,
            reselect_among,
        } => {
            let class = match reselect_among {
                Some(eligible) => {
                    let lp = classifier
                        .predict_logprobs(&featurize_ids(vocab, message, &hyp.tokens));
                    masked_argmax(classifier, &lp, eligible)
                }
                None => *class,
            };
            let mut extended = hyp.tokens.clone();
            candidates
                .into_iter()
                .map(|(token, lp)| {
                    extended.push(token);
                    let clf = classifier
                        .predict_logprobs(&featurize_ids(vocab, message, &extended))[class];
                    extended.pop();
                    Expansion {
                        token,
                        base_step: lp,
                        combined_step: lp + *alpha * clf,
                    }
                })
                .collect()
        }
        StepMode::Penalized { penalty, beta } => penalize_candidates(&candidates, penalty, *beta)
            .into_iter()
            .map(|(token, lp)| Expansion {
                token,
                base_step: lp,
                combined_step: lp,
            })
            .collect(),
    }
}

/// Candidate expansions of one unfinished hypothesis under classifier
/// guidance: the top `top_k_rescore` tokens by generator score, each combined
/// with α · log p(attribute | message, prefix ⊕ token).
pub fn guided_step<S: Real>(
    lm: &NGramModel<S>,
    classifier: &LinearSoftmaxModel<S>,
    attribute: &Attribute,
    hypothesis: &Hypothesis<S>,
    message: &[TokenId],
    vocab: &Vocab,
    config: &GuidanceConfig,
) -> Result<Vec<Expansion<S>>> {
    config.validate()?;
    let class = attribute_class(classifier, attribute)?;
    let mode = StepMode::Guided {
        classifier,
        vocab,
        class,
        alpha: real::<S>(config.alpha),
        reselect_among: None,
    };
    Ok(expand_hypothesis(lm, &mode, message, hypothesis, config))
}

fn rank_key<S: Real>(a: &Hypothesis<S>, b: &Hypothesis<S>) -> std::cmp::Ordering {
    b.combined_logprob
        .partial_cmp(&a.combined_logprob)
        .expect("scores are never NaN")
        .then_with(|| a.tokens.cmp(&b.tokens))
}

fn beam_core<S: Real>(
    lm: &NGramModel<S>,
    mode: &StepMode<'_, S>,
    message: &[TokenId],
    config: &GuidanceConfig,
) -> Vec<Hypothesis<S>> {
    let mut active = vec![Hypothesis {
        tokens: Vec::new(),
        base_logprob: S::zero(),
        combined_logprob: S::zero(),
        finished: false,
    }];
    let mut finished: Vec<Hypothesis<S>> = Vec::new();

    for _ in 0..config.max_len {
        if active.is_empty() {
            break;
        }
        let mut pool: Vec<Hypothesis<S>> = Vec::new();
        for hyp in &active {
            for exp in expand_hypothesis(lm, mode, message, hyp, config) {
                let is_eos = exp.token == EOS;
                let mut tokens = hyp.tokens.clone();
                if !is_eos {
                    tokens.push(exp.token);
                }
                let next = Hypothesis {
                    tokens,
                    base_logprob: hyp.base_logprob + exp.base_step,
                    combined_logprob: hyp.combined_logprob + exp.combined_step,
                    finished: is_eos,
                };
                if is_eos {
                    finished.push(next);
                } else {
                    pool.push(next);
                }
            }
        }
        pool.sort_by(rank_key);
        pool.truncate(config.beams);
        active = pool;
    }
    // Hypotheses still active at the cap finish without an EOS term.
    for mut hyp in active {
        hyp.finished = true;
        finished.push(hyp);
    }
    finished.sort_by(rank_key);
    finished.truncate(config.beams);
    finished
}

/// Width-n beam search by generator score alone. Hypotheses finish on EOS
/// (scored, not emitted) or at `max_len` (unscored); the returned list is
/// ranked by total base logprob with ties to the lexicographically smaller
/// token sequence, no length normalization.
pub fn beam_search<S: Real>(
    lm: &NGramModel<S>,
    message: &[TokenId],
    config: &GuidanceConfig,
) -> Result<Vec<Hypothesis<S>>> {
    config.validate()?;
    Ok(beam_core(lm, &StepMode::Plain, message, config))
}

fn masked_argmax<S: Real>(
    classifier: &LinearSoftmaxModel<S>,
    logprobs: &[S],
    eligible: &[usize],
) -> usize {
    let mut best = eligible[0];
    for &j in &eligible[1..] {
        if logprobs[j] > logprobs[best]
            || (logprobs[j] == logprobs[best]
                && classifier.class_names()[j] < classifier.class_names()[best])
        {
            best = j;
        }
    }
    best
}

fn eligible_classes<S: Real>(
    classifier: &LinearSoftmaxModel<S>,
    suggested: &[IntentLabel],
) -> Result<Vec<usize>> {
    let eligible: Vec<usize> = classifier
        .class_names()
        .iter()
        .enumerate()
        .filter(|(_, name)| !suggested.iter().any(|z| z.as_str() == name.as_str()))
        .map(|(j, _)| j)
        .collect();
    if eligible.is_empty() {
        return Err(Error::NoEligibleIntent);
    }
    Ok(eligible)
}

/// The most probable intent under the classifier that the suggestions do not
/// already cover, given the message and reply prefix. Ties go to the
/// lexicographically smallest label.
pub fn select_target_intent<S: Real>(
    classifier: &LinearSoftmaxModel<S>,
    vocab: &Vocab,
    message: &[TokenId],
    suggested: &[IntentLabel],
    prefix: &[TokenId],
) -> Result<IntentLabel> {
    let eligible = eligible_classes(classifier, suggested)?;
    let lp = classifier.predict_logprobs(&featurize_ids(vocab, message, prefix));
    let best = masked_argmax(classifier, &lp, &eligible);
    IntentLabel::try_from(classifier.class_names()[best].clone())
}

fn decode_top_tokens<S: Real>(hyps: Vec<Hypothesis<S>>) -> Vec<TokenId> {
    hyps.into_iter()
        .next()
        .map(|h| h.tokens)
        .unwrap_or_default()
}

/// Classifier-guided beam search toward a fixed attribute; the top hypothesis
/// by combined score wins. For per-step intent reselection use
/// [`nifty_intent_decode`], which knows the suggested set.
pub fn nifty_decode<S: Real>(
    lm: &NGramModel<S>,
    classifier: &LinearSoftmaxModel<S>,
    attribute: &Attribute,
    message: &[TokenId],
    vocab: &Vocab,
    config: &GuidanceConfig,
) -> Result<Vec<TokenId>> {
    config.validate()?;
    if config.reselect_intent_each_step {
        return Err(Error::InvalidConfig(
            "per-step reselection needs the suggested intents; call nifty_intent_decode".into(),
        ));
    }
    let class = attribute_class(classifier, attribute)?;
    let mode = StepMode::Guided {
        classifier,
        vocab,
        class,
        alpha: real::<S>(config.alpha),
        reselect_among: None,
    };
    Ok(decode_top_tokens(beam_core(lm, &mode, message, config)))
}

/// Selects the target intent (empty prefix) and runs the guided decode;
/// honors `reselect_intent_each_step` by re-deriving the target from each
/// hypothesis's own prefix. Returns the initially selected intent with the
/// tokens.
pub fn nifty_intent_decode<S: Real>(
    lm: &NGramModel<S>,
    classifier: &LinearSoftmaxModel<S>,
    suggested: &[IntentLabel],
    message: &[TokenId],
    vocab: &Vocab,
    config: &GuidanceConfig,
) -> Result<(IntentLabel, Vec<TokenId>)> {
    config.validate()?;
    let target = select_target_intent(classifier, vocab, message, suggested, &[])?;
    let eligible;
    let mode = StepMode::Guided {
        classifier,
        vocab,
        class: attribute_class(classifier, &Attribute::Intent(target.clone()))?,
        alpha: real::<S>(config.alpha),
        reselect_among: if config.reselect_intent_each_step {
            eligible = eligible_classes(classifier, suggested)?;
            Some(&eligible)
        } else {
            None
        },
    };
    let tokens = decode_top_tokens(beam_core(lm, &mode, message, config));
    Ok((target, tokens))
}

/// Vanilla beam search, then the finished beam with the best classifier score
/// for the attribute wins; ties go to the higher base score, then the smaller
/// token sequence.
pub fn rerank_decode<S: Real>(
    lm: &NGramModel<S>,
    classifier: &LinearSoftmaxModel<S>,
    attribute: &Attribute,
    message: &[TokenId],
    vocab: &Vocab,
    config: &GuidanceConfig,
) -> Result<Vec<TokenId>> {
    config.validate()?;
    let class = attribute_class(classifier, attribute)?;
    let beams = beam_core(lm, &StepMode::Plain, message, config);
    let best = beams
        .iter()
        .map(|h| {
            let clf = classifier.predict_logprobs(&featurize_ids(vocab, message, &h.tokens))[class];
            (clf, h)
        })
        .max_by(|(ca, ha), (cb, hb)| {
            ca.partial_cmp(cb)
                .expect("scores are never NaN")
                .then_with(|| {
                    ha.base_logprob
                        .partial_cmp(&hb.base_logprob)
                        .expect("scores are never NaN")
                })
                .then_with(|| hb.tokens.cmp(&ha.tokens))
        })
        .map(|(_, h)| h.tokens.clone());
    Ok(best.unwrap_or_default())
}

/// The reserved ids that never enter an unlikelihood penalty set.
fn is_reserved(token: TokenId) -> bool {
    (token as usize) < crate::corpus::RESERVED_TOKENS.len()
}

/// Vanilla beam search over penalty-adjusted generator scores: every
/// non-reserved token that appears in any suggested reply loses `beta`, and
/// each step's candidate set is renormalized to keep its probability mass.
pub fn unlikelihood_decode<S: Real>(
    lm: &NGramModel<S>,
    suggestions: &SuggestionSet,
    message: &[TokenId],
    config: &GuidanceConfig,
) -> Result<Vec<TokenId>> {
    config.validate()?;
    let penalty: HashSet<TokenId> = suggestions
        .entries
        .iter()
        .flat_map(|s| s.tokens.iter().copied())
        .filter(|&t| !is_reserved(t))
        .collect();
    let mode = StepMode::Penalized {
        penalty: &penalty,
        beta: real::<S>(config.unlikelihood_beta),
    };
    Ok(decode_top_tokens(beam_core(lm, &mode, message, config)))
}

/// Vanilla beam search, then beams whose predicted intent is among the
/// suggested ones are dropped; the best survivor by base score wins, falling
/// back to the top base beam when nothing survives.
pub fn rules_decode<S: Real>(
    lm: &NGramModel<S>,
    eval_classifier: &LinearSoftmaxModel<S>,
    suggested: &[IntentLabel],
    message: &[TokenId],
    vocab: &Vocab,
    config: &GuidanceConfig,
) -> Result<Vec<TokenId>> {
    config.validate()?;
    let beams = beam_core(lm, &StepMode::Plain, message, config);
    let survivor = beams.iter().find(|h| {
        if h.tokens.is_empty() {
            return false;
        }
        let class = eval_classifier.predict_class(&featurize_ids(vocab, message, &h.tokens));
        let name = &eval_classifier.class_names()[class];
        !suggested.iter().any(|z| z.as_str() == name.as_str())
    });
    Ok(survivor
        .or(beams.first())
        .map(|h| h.tokens.clone())
        .unwrap_or_default())
}

/// Everything a method dispatch needs to generate one reply.
#[derive(Clone, Copy)]
pub struct DecodeModels<'a, S: Real> {
    pub lm: &'a NGramModel<S>,
    pub intent_classifier: &'a LinearSoftmaxModel<S>,
    pub action_classifier: &'a LinearSoftmaxModel<S>,
    pub eval_classifier: &'a LinearSoftmaxModel<S>,
    pub vocab: &'a Vocab,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutcome {
    pub tokens: Vec<TokenId>,
    /// The target the decode steered toward, present for the intent-steered
    /// methods; always chosen from outside the suggested set.
    pub target_intent: Option<IntentLabel>,
}

/// Runs `config.method` for one message against one suggestion set.
pub fn decode_reply<S: Real>(
    models: &DecodeModels<'_, S>,
    message: &[TokenId],
    suggestions: &SuggestionSet,
    config: &GuidanceConfig,
) -> Result<DecodeOutcome> {
    config.validate()?;
    let suggested = suggestions.intents();
    let outcome = match config.method {
        Method::Baseline => DecodeOutcome {
            tokens: decode_top_tokens(beam_core(models.lm, &StepMode::Plain, message, config)),
            target_intent: None,
        },
        Method::NiftyIntent => {
            let (target, tokens) = nifty_intent_decode(
                models.lm,
                models.intent_classifier,
                &suggested,
                message,
                models.vocab,
                config,
            )?;
            DecodeOutcome {
                tokens,
                target_intent: Some(target),
            }
        }
        Method::NiftyAction => DecodeOutcome {
            tokens: nifty_decode(
                models.lm,
                models.action_classifier,
                &Attribute::Action,
                message,
                models.vocab,
                config,
            )?,
            target_intent: None,
        },
        Method::RerankIntent => {
            let target = select_target_intent(
                models.intent_classifier,
                models.vocab,
                message,
                &suggested,
                &[],
            )?;
            DecodeOutcome {
                tokens: rerank_decode(
                    models.lm,
                    models.intent_classifier,
                    &Attribute::Intent(target.clone()),
                    message,
                    models.vocab,
                    config,
                )?,
                target_intent: Some(target),
            }
        }
        Method::RerankAction => DecodeOutcome {
            tokens: rerank_decode(
                models.lm,
                models.action_classifier,
                &Attribute::Action,
                message,
                models.vocab,
                config,
            )?,
            target_intent: None,
        },
        Method::Unlikelihood => DecodeOutcome {
            tokens: unlikelihood_decode(models.lm, suggestions, message, config)?,
            target_intent: None,
        },
        Method::Rules => DecodeOutcome {
            tokens: rules_decode(
                models.lm,
                models.eval_classifier,
                &suggested,
                message,
                models.vocab,
                config,
            )?,
            target_intent: None,
        },
    };
    Ok(outcome)
}
