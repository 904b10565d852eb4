//! Metrics and the experiment harness: ROUGE-L as token-level F1, intent
//! recall at 1 via a separately trained scoring classifier, paired bootstrap
//! significance, the per-method results table, and the α sweep.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifiers::{featurize_ids, LinearSoftmaxModel};
use crate::corpus::{Dataset, Example, TokenId, Vocab};
use crate::decoding::{beam_search, decode_reply, DecodeModels, GuidanceConfig, Method};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::smartreply::{retrieve_suggestions, retrieve_suggestions_dedup, DualEncoder, ReplyIndex};

/// Longest common subsequence length by dynamic programming over two rows.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// LCS-based F1: with L the subsequence length, precision L/|hyp| and recall
/// L/|ref| combine to 2L/(|hyp|+|ref|). An empty hypothesis scores 0.
pub fn rouge_l<T: PartialEq>(hypothesis: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    if hypothesis.is_empty() {
        return Ok(0.0);
    }
    let l = lcs_length(hypothesis, reference);
    if l == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * l as f64 / (hypothesis.len() + reference.len()) as f64)
}

/// Whether each generated reply's predicted intent equals its reference's
/// exact composite label, via the full-utterance scoring classifier.
pub fn r_at_1_hits<S: Real>(
    predictions: &[Vec<TokenId>],
    references: &[Example],
    eval_classifier: &LinearSoftmaxModel<S>,
    vocab: &Vocab,
) -> Result<Vec<bool>> {
    if predictions.len() != references.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions vs {} references",
            predictions.len(),
            references.len()
        )));
    }
    Ok(predictions
        .iter()
        .zip(references)
        .map(|(pred, ex)| {
            let class =
                eval_classifier.predict_class(&featurize_ids(vocab, &ex.message, pred));
            eval_classifier.class_names()[class] == ex.intent.as_str()
        })
        .collect())
}

pub fn r_at_1<S: Real>(
    predictions: &[Vec<TokenId>],
    references: &[Example],
    eval_classifier: &LinearSoftmaxModel<S>,
    vocab: &Vocab,
) -> Result<f64> {
    let hits = r_at_1_hits(predictions, references, eval_classifier, vocab)?;
    let n = hits.len().max(1);
    Ok(hits.iter().filter(|h| **h).count() as f64 / n as f64)
}

/// Fraction of paired resamples where side `a` fails to beat side `b` on the
/// mean, so small values mean `a` wins consistently. Deterministic per seed.
pub fn paired_bootstrap(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(format!(
            "{} scores vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidConfig(
            "paired bootstrap needs at least 2 score pairs".into(),
        ));
    }
    if resamples == 0 {
        return Err(Error::InvalidConfig("resamples must be positive".into()));
    }
    let n = a.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut at_most = 0usize;
    for _ in 0..resamples {
        let mut sum_a = 0.0;
        let mut sum_b = 0.0;
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            sum_a += a[i];
            sum_b += b[i];
        }
        if sum_a <= sum_b {
            at_most += 1;
        }
    }
    Ok(at_most as f64 / resamples as f64)
}

pub const DEFAULT_RESAMPLES: usize = 10_000;

const SIGNIFICANCE_NOTE: &str = "p = fraction of paired bootstrap resamples where the method's \
mean does not exceed the baseline's; small p means the method wins consistently";

/// Everything the harness needs to retrieve, decode, and score.
pub struct EvalModels<'a, S: Real> {
    pub decode: DecodeModels<'a, S>,
    pub encoder: &'a DualEncoder<S>,
    pub index: &'a ReplyIndex<S>,
    pub suggestion_k: usize,
    /// Deduplicate suggestion intents during retrieval; off by default.
    pub suggestion_dedup: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: Method,
    /// Mean ROUGE-L in [0,1]; tables render it ×100.
    pub rouge_l: f64,
    /// Intent recall at 1 in [0,1]; tables render it as a percentage.
    pub r_at_1: f64,
    pub n: usize,
    pub p_rouge_vs_baseline: Option<f64>,
    pub p_r_at_1_vs_baseline: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<MethodRow>,
    pub n_examples: usize,
    /// Mean count of distinct predicted intents among the vanilla beams,
    /// reported as a diagnostic of how little rerankers have to choose from.
    pub beam_diversity: f64,
    pub seed: u64,
    pub resamples: usize,
    pub significance: String,
    pub config: GuidanceConfig,
}

/// One decoded example, dumpable as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub method: Method,
    pub example_id: String,
    pub suggested_intents: Vec<String>,
    pub target_intent: Option<String>,
    pub prediction: String,
    pub rouge_l: f64,
    pub hit: bool,
}

pub struct ExperimentOutput {
    pub report: EvalReport,
    pub traces: Vec<DecodeTrace>,
}

struct ScoredMethod {
    row: MethodRow,
    rouge_scores: Vec<f64>,
    hit_scores: Vec<f64>,
}

fn beam_diversity<S: Real>(
    models: &EvalModels<'_, S>,
    test: &Dataset,
    config: &GuidanceConfig,
) -> Result<f64> {
    if test.is_empty() {
        return Ok(0.0);
    }
    let clf = models.decode.eval_classifier;
    let mut total = 0.0;
    for ex in &test.examples {
        let beams = beam_search(models.decode.lm, &ex.message, config)?;
        let mut intents: Vec<usize> = beams
            .iter()
            .map(|h| clf.predict_class(&featurize_ids(&test.vocab, &ex.message, &h.tokens)))
            .collect();
        intents.sort_unstable();
        intents.dedup();
        total += intents.len() as f64;
    }
    Ok(total / test.examples.len() as f64)
}

/// Decodes every test example under every requested method, scores against
/// the references, and attaches paired-bootstrap significance against the
/// baseline rows when a baseline run is present.
pub fn run_experiment<S: Real>(
    models: &EvalModels<'_, S>,
    test: &Dataset,
    methods: &[Method],
    config: &GuidanceConfig,
    resamples: usize,
    seed: u64,
) -> Result<ExperimentOutput> {
    config.validate()?;
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no methods requested".into()));
    }
    if test.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let suggestions: Vec<_> = test
        .examples
        .iter()
        .map(|ex| {
            let retrieve = if models.suggestion_dedup {
                retrieve_suggestions_dedup
            } else {
                retrieve_suggestions
            };
            retrieve(
                models.encoder,
                models.index,
                &ex.message,
                &test.vocab,
                models.suggestion_k,
            )
        })
        .collect::<Result<_>>()?;

    let mut scored: Vec<ScoredMethod> = Vec::new();
    let mut traces: Vec<DecodeTrace> = Vec::new();
    for &method in methods {
        let method_config = GuidanceConfig {
            method,
            ..config.clone()
        };
        let mut rouge_scores = Vec::with_capacity(test.len());
        let mut predictions = Vec::with_capacity(test.len());
        let mut targets = Vec::with_capacity(test.len());
        for (ex, sugg) in test.examples.iter().zip(&suggestions) {
            let outcome = decode_reply(&models.decode, &ex.message, sugg, &method_config)?;
            rouge_scores.push(rouge_l(&outcome.tokens, &ex.reply)?);
            predictions.push(outcome.tokens);
            targets.push(outcome.target_intent);
        }
        let hits = r_at_1_hits(
            &predictions,
            &test.examples,
            models.decode.eval_classifier,
            &test.vocab,
        )?;
        for ((((ex, sugg), pred), target), (rl, hit)) in test
            .examples
            .iter()
            .zip(&suggestions)
            .zip(&predictions)
            .zip(&targets)
            .zip(rouge_scores.iter().zip(&hits))
        {
            traces.push(DecodeTrace {
                method,
                example_id: ex.id.clone(),
                suggested_intents: sugg.intents().iter().map(|z| z.to_string()).collect(),
                target_intent: target.as_ref().map(|z| z.to_string()),
                prediction: test.vocab.decode_text(pred),
                rouge_l: *rl,
                hit: *hit,
            });
        }
        let n = test.len();
        let hit_scores: Vec<f64> = hits.iter().map(|&h| if h { 1.0 } else { 0.0 }).collect();
        scored.push(ScoredMethod {
            row: MethodRow {
                method,
                rouge_l: rouge_scores.iter().sum::<f64>() / n as f64,
                r_at_1: hit_scores.iter().sum::<f64>() / n as f64,
                n,
                p_rouge_vs_baseline: None,
                p_r_at_1_vs_baseline: None,
            },
            rouge_scores,
            hit_scores,
        });
    }

    let baseline = scored
        .iter()
        .position(|s| s.row.method == Method::Baseline);
    if let Some(b) = baseline {
        let base_rouge = scored[b].rouge_scores.clone();
        let base_hits = scored[b].hit_scores.clone();
        for s in &mut scored {
            if s.row.method == Method::Baseline {
                continue;
            }
            s.row.p_rouge_vs_baseline =
                Some(paired_bootstrap(&s.rouge_scores, &base_rouge, resamples, seed)?);
            s.row.p_r_at_1_vs_baseline =
                Some(paired_bootstrap(&s.hit_scores, &base_hits, resamples, seed)?);
        }
    }

    let report = EvalReport {
        rows: scored.into_iter().map(|s| s.row).collect(),
        n_examples: test.len(),
        beam_diversity: beam_diversity(models, test, config)?,
        seed,
        resamples,
        significance: SIGNIFICANCE_NOTE.to_string(),
        config: config.clone(),
    };
    Ok(ExperimentOutput { report, traces })
}

fn fmt_p(p: Option<f64>) -> String {
    match p {
        Some(p) => format!("{p:.4}"),
        None => "-".to_string(),
    }
}

/// Aligned per-method results table; scores ×100, two decimals.
pub fn render_report(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<14} {:>8} {:>8} {:>9} {:>9}\n",
        "method", "rouge-l", "r@1", "p(r-l)", "p(r@1)"
    ));
    for row in &report.rows {
        out.push_str(&format!(
            "{:<14} {:>8.2} {:>8.2} {:>9} {:>9}\n",
            row.method.as_str(),
            row.rouge_l * 100.0,
            row.r_at_1 * 100.0,
            fmt_p(row.p_rouge_vs_baseline),
            fmt_p(row.p_r_at_1_vs_baseline),
        ));
    }
    out.push_str(&format!(
        "n: {}  beam diversity: {:.2}  seed: {}\n",
        report.n_examples, report.beam_diversity, report.seed
    ));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub rouge_l: f64,
    pub r_at_1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub method: Method,
    pub rows: Vec<SweepRow>,
    pub n_examples: usize,
    pub seed: u64,
}

pub const DEFAULT_ALPHAS: [f64; 3] = [0.5, 1.0, 2.0];

/// One intent-guided experiment per α, keyed by α in the given order.
pub fn sweep_alpha<S: Real>(
    models: &EvalModels<'_, S>,
    test: &Dataset,
    alphas: &[f64],
    config: &GuidanceConfig,
    resamples: usize,
    seed: u64,
) -> Result<SweepTable> {
    if alphas.is_empty() {
        return Err(Error::InvalidConfig("no alpha values requested".into()));
    }
    for (i, a) in alphas.iter().enumerate() {
        if alphas[..i].contains(a) {
            return Err(Error::InvalidConfig(format!("duplicate alpha {a}")));
        }
    }
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let run_config = GuidanceConfig {
            alpha,
            method: Method::NiftyIntent,
            ..config.clone()
        };
        let output = run_experiment(
            models,
            test,
            &[Method::NiftyIntent],
            &run_config,
            resamples,
            seed,
        )?;
        let row = &output.report.rows[0];
        rows.push(SweepRow {
            alpha,
            rouge_l: row.rouge_l,
            r_at_1: row.r_at_1,
        });
    }
    Ok(SweepTable {
        method: Method::NiftyIntent,
        rows,
        n_examples: test.len(),
        seed,
    })
}

/// Aligned α-sweep table; scores ×100, two decimals.
pub fn render_sweep(table: &SweepTable) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<7} {:>8} {:>8}\n",
        "alpha", "rouge-l", "r@1"
    ));
    for row in &table.rows {
        out.push_str(&format!(
            "{:<7.2} {:>8.2} {:>8.2}\n",
            row.alpha,
            row.rouge_l * 100.0,
            row.r_at_1 * 100.0
        ));
    }
    out.push_str(&format!(
        "method: {}  n: {}  seed: {}\n",
        table.method, table.n_examples, table.seed
    ));
    out
}
