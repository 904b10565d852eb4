//! Scripted user: accepts a suggestion only when its intent equals the
//! ground-truth intent exactly, rejects all otherwise. The rejected examples
//! form the filtered dataset D′ that downstream generation is evaluated on.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Dataset, Example, Split};
use crate::error::Result;
use crate::scalar::Real;
use crate::smartreply::{retrieve_suggestions, retrieve_suggestions_dedup, DualEncoder, ReplyIndex, SuggestionSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UserDecision {
    /// Index of the first suggestion whose intent matches exactly.
    Accept(usize),
    RejectAll,
}

/// Composite labels must match in full; sharing one atom with the truth is
/// still a rejection.
pub fn simulate_user(example: &Example, suggestions: &SuggestionSet) -> UserDecision {
    suggestions
        .entries
        .iter()
        .position(|s| s.intent == example.intent)
        .map_or(UserDecision::RejectAll, UserDecision::Accept)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFilterCounts {
    pub split: Split,
    pub pre_count: usize,
    pub post_count: usize,
    /// Fraction of examples the user rejected: post / pre.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub splits: Vec<SplitFilterCounts>,
    pub intent_count: usize,
}

impl FilterReport {
    /// Plain-text table: one row per split, pre/post sizes and rejection
    /// rate, with the catalog size underneath.
    pub fn render_text(&self) -> String {
        let mut out = String::from("split  pre      post     rate\n");
        for row in &self.splits {
            out.push_str(&format!(
                "{:<6} {:<8} {:<8} {:.3}\n",
                row.split, row.pre_count, row.post_count, row.rate
            ));
        }
        out.push_str(&format!("intents: {}\n", self.intent_count));
        out
    }
}

fn filter_split<S: Real>(
    dataset: &Dataset,
    encoder: &DualEncoder<S>,
    index: &ReplyIndex<S>,
    k: usize,
    dedup: bool,
) -> Result<(Dataset, HashSet<String>, SplitFilterCounts)> {
    let mut kept = Vec::new();
    let mut rejected_ids = HashSet::new();
    for ex in &dataset.examples {
        let suggestions = if dedup {
            retrieve_suggestions_dedup(encoder, index, &ex.message, &dataset.vocab, k)?
        } else {
            retrieve_suggestions(encoder, index, &ex.message, &dataset.vocab, k)?
        };
        if simulate_user(ex, &suggestions) == UserDecision::RejectAll {
            kept.push(ex.clone());
            rejected_ids.insert(ex.id.clone());
        }
    }
    let counts = SplitFilterCounts {
        split: dataset.split,
        pre_count: dataset.len(),
        post_count: kept.len(),
        rate: if dataset.is_empty() {
            0.0
        } else {
            kept.len() as f64 / dataset.len() as f64
        },
    };
    let filtered = Dataset::new(
        dataset.split,
        kept,
        dataset.vocab.clone(),
        dataset.catalog.clone(),
    )?;
    Ok((filtered, rejected_ids, counts))
}

/// Runs the user over one split: D′ keeps exactly the rejected examples in
/// input order, and the returned id set feeds the action classifier.
pub fn build_filtered_dataset<S: Real>(
    dataset: &Dataset,
    encoder: &DualEncoder<S>,
    index: &ReplyIndex<S>,
    k: usize,
) -> Result<(Dataset, HashSet<String>, SplitFilterCounts)> {
    filter_split(dataset, encoder, index, k, false)
}

/// [`build_filtered_dataset`] over intent-deduplicated suggestions.
pub fn build_filtered_dataset_dedup<S: Real>(
    dataset: &Dataset,
    encoder: &DualEncoder<S>,
    index: &ReplyIndex<S>,
    k: usize,
) -> Result<(Dataset, HashSet<String>, SplitFilterCounts)> {
    filter_split(dataset, encoder, index, k, true)
}

fn filter_all<S: Real>(
    corpus: &Corpus,
    encoder: &DualEncoder<S>,
    index: &ReplyIndex<S>,
    k: usize,
    dedup: bool,
) -> Result<(Corpus, HashSet<String>, FilterReport)> {
    let (train, rejected_train, train_counts) =
        filter_split(&corpus.train, encoder, index, k, dedup)?;
    let (valid, _, valid_counts) = filter_split(&corpus.valid, encoder, index, k, dedup)?;
    let (test, _, test_counts) = filter_split(&corpus.test, encoder, index, k, dedup)?;
    let report = FilterReport {
        splits: vec![train_counts, valid_counts, test_counts],
        intent_count: corpus.catalog().len(),
    };
    Ok((
        Corpus {
            train,
            valid,
            test,
        },
        rejected_train,
        report,
    ))
}

/// Filters all three splits against one suggestion model and assembles the
/// combined report. The returned id set covers the train split only, since
/// that is what the action classifier may see.
pub fn filter_corpus<S: Real>(
    corpus: &Corpus,
    encoder: &DualEncoder<S>,
    index: &ReplyIndex<S>,
    k: usize,
) -> Result<(Corpus, HashSet<String>, FilterReport)> {
    filter_all(corpus, encoder, index, k, false)
}

/// [`filter_corpus`] over intent-deduplicated suggestions.
pub fn filter_corpus_dedup<S: Real>(
    corpus: &Corpus,
    encoder: &DualEncoder<S>,
    index: &ReplyIndex<S>,
    k: usize,
) -> Result<(Corpus, HashSet<String>, FilterReport)> {
    filter_all(corpus, encoder, index, k, true)
}
