//! Stage orchestration: one config and one master seed drive data generation,
//! training, filtering, and evaluation, with every intermediate product saved
//! to disk so stages can run separately or as one pass.
//!
//! Each stage draws its own seed from the master via [`derive_seed`], so a
//! single `seed` value reproduces the entire run while stages stay decoupled.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifact::{load_artifact, save_artifact};
use crate::classifiers::{
    fnv1a64, train_action_classifier, train_eval_intent_classifier,
    train_intent_prefix_classifier, LinearSoftmaxModel, TrainConfig,
};
use crate::corpus::{
    generate_synthetic, load_splits, save_dataset, Corpus, Dataset, SyntheticSpec,
};
use crate::decoding::{DecodeModels, GuidanceConfig, Method, ALL_METHODS};
use crate::error::{Error, Result};
use crate::eval::{
    run_experiment, sweep_alpha, render_report, render_sweep, DecodeTrace, EvalModels,
    EvalReport, SweepTable, DEFAULT_ALPHAS, DEFAULT_RESAMPLES,
};
use crate::lm::{train_ngram, NGramModel};
use crate::simulator::{
    build_filtered_dataset, build_filtered_dataset_dedup, filter_corpus, filter_corpus_dedup,
    FilterReport,
};
use crate::smartreply::{
    build_reply_index, train_dual_encoder, DualEncoder, EncoderConfig, ReplyIndex, DEFAULT_K,
};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const VALID_FILE: &str = "valid.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const FILTERED_TRAIN_FILE: &str = "filtered-train.jsonl";
pub const FILTERED_VALID_FILE: &str = "filtered-valid.jsonl";
pub const FILTERED_TEST_FILE: &str = "filtered-test.jsonl";

pub const ENCODER_FILE: &str = "encoder.json";
pub const INDEX_FILE: &str = "reply-index.json";
pub const LM_FILE: &str = "lm.json";
pub const INTENT_CLF_FILE: &str = "intent-classifier.json";
pub const ACTION_CLF_FILE: &str = "action-classifier.json";
pub const EVAL_CLF_FILE: &str = "eval-classifier.json";
pub const REJECTED_IDS_FILE: &str = "rejected-ids.json";

pub const FILTER_REPORT_JSON: &str = "filter-report.json";
pub const FILTER_REPORT_TEXT: &str = "filter-report.txt";
pub const EVAL_REPORT_JSON: &str = "eval-report.json";
pub const EVAL_REPORT_TEXT: &str = "eval-report.txt";
pub const TRACES_FILE: &str = "decode-traces.jsonl";
pub const SWEEP_JSON: &str = "alpha-sweep.json";
pub const SWEEP_TEXT: &str = "alpha-sweep.txt";

/// Deterministic per-stage seed from the master seed and a stage label.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    fnv1a64(&[&master.to_le_bytes()[..], label.as_bytes()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunPaths {
    pub data: PathBuf,
    pub artifacts: PathBuf,
    pub reports: PathBuf,
}

impl Default for RunPaths {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            artifacts: PathBuf::from("artifacts"),
            reports: PathBuf::from("reports"),
        }
    }
}

/// Everything one experiment needs. All fields except `seed` have defaults;
/// the seed must be given explicitly so no run is accidentally unrepeatable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub paths: RunPaths,
    #[serde(default)]
    pub synthetic: SyntheticSpec,
    #[serde(default = "default_lm_order")]
    pub lm_order: usize,
    #[serde(default = "default_lm_discount")]
    pub lm_discount: f64,
    #[serde(default)]
    pub classifier: TrainConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default = "default_suggestion_k")]
    pub suggestion_k: usize,
    /// Deduplicate suggestion intents during retrieval; off by default.
    #[serde(default)]
    pub dedup_suggestions: bool,
    #[serde(default)]
    pub guidance: GuidanceConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    pub seed: u64,
}

fn default_lm_order() -> usize {
    3
}

fn default_lm_discount() -> f64 {
    0.75
}

fn default_suggestion_k() -> usize {
    DEFAULT_K
}

fn default_methods() -> Vec<Method> {
    ALL_METHODS.to_vec()
}

fn default_alphas() -> Vec<f64> {
    DEFAULT_ALPHAS.to_vec()
}

fn default_resamples() -> usize {
    DEFAULT_RESAMPLES
}

impl RunConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            paths: RunPaths::default(),
            synthetic: SyntheticSpec::default(),
            lm_order: default_lm_order(),
            lm_discount: default_lm_discount(),
            classifier: TrainConfig::default(),
            encoder: EncoderConfig::default(),
            suggestion_k: default_suggestion_k(),
            dedup_suggestions: false,
            guidance: GuidanceConfig::default(),
            methods: default_methods(),
            alphas: default_alphas(),
            resamples: default_resamples(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        self.classifier.validate()?;
        self.encoder.validate()?;
        self.guidance.validate()?;
        if self.lm_order == 0 {
            return Err(Error::InvalidConfig("lm_order must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.lm_discount) {
            return Err(Error::InvalidConfig(format!(
                "lm_discount must lie in [0,1), got {}",
                self.lm_discount
            )));
        }
        if self.suggestion_k == 0 {
            return Err(Error::InvalidConfig("suggestion_k must be positive".into()));
        }
        if self.resamples == 0 {
            return Err(Error::InvalidConfig("resamples must be positive".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("methods must be non-empty".into()));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(Error::InvalidConfig(format!("duplicate method {m}")));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingArtifact(path.display().to_string()));
        }
        let text = fs::read_to_string(path)?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.display().to_string()))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// Generates the synthetic corpus under the run's data seed and writes the
/// three canonical splits.
pub fn stage_gen_data(config: &RunConfig) -> Result<Corpus> {
    config.validate()?;
    let mut spec = config.synthetic.clone();
    spec.seed = derive_seed(config.seed, "data");
    let corpus = generate_synthetic(&spec)?;
    fs::create_dir_all(&config.paths.data)?;
    save_dataset(&corpus.train, &config.paths.data.join(TRAIN_FILE))?;
    save_dataset(&corpus.valid, &config.paths.data.join(VALID_FILE))?;
    save_dataset(&corpus.test, &config.paths.data.join(TEST_FILE))?;
    Ok(corpus)
}

/// Reloads the canonical splits; the vocabulary comes from the train split.
pub fn load_corpus(config: &RunConfig) -> Result<Corpus> {
    let train = config.paths.data.join(TRAIN_FILE);
    let valid = config.paths.data.join(VALID_FILE);
    let test = config.paths.data.join(TEST_FILE);
    for path in [&train, &valid, &test] {
        require_file(path)?;
    }
    load_splits(&train, &valid, &test, None)
}

pub fn stage_train_retriever(config: &RunConfig) -> Result<(DualEncoder<f64>, ReplyIndex<f64>)> {
    config.validate()?;
    let corpus = load_corpus(config)?;
    let mut enc_config = config.encoder.clone();
    enc_config.seed = derive_seed(config.seed, "encoder");
    let encoder = train_dual_encoder::<f64>(&corpus.train, &enc_config)?;
    let index = build_reply_index(&encoder, &corpus.train)?;
    let dir = &config.paths.artifacts;
    save_artifact(&dir.join(ENCODER_FILE), "dual-encoder", config.seed, &encoder)?;
    save_artifact(&dir.join(INDEX_FILE), "reply-index", config.seed, &index)?;
    Ok((encoder, index))
}

fn load_retriever(config: &RunConfig) -> Result<(DualEncoder<f64>, ReplyIndex<f64>)> {
    let dir = &config.paths.artifacts;
    let encoder = load_artifact::<DualEncoder<f64>>(&dir.join(ENCODER_FILE), "dual-encoder")?;
    let index = load_artifact::<ReplyIndex<f64>>(&dir.join(INDEX_FILE), "reply-index")?;
    Ok((encoder.payload, index.payload))
}

/// Simulates the user over all three splits, writes the surviving (rejected)
/// splits plus the pre/post report, and records which train ids were
/// rejected for the action classifier.
pub fn stage_filter(config: &RunConfig) -> Result<FilterReport> {
    config.validate()?;
    let corpus = load_corpus(config)?;
    let (encoder, index) = load_retriever(config)?;
    let (filtered, rejected_train, report) = if config.dedup_suggestions {
        filter_corpus_dedup(&corpus, &encoder, &index, config.suggestion_k)?
    } else {
        filter_corpus(&corpus, &encoder, &index, config.suggestion_k)?
    };

    fs::create_dir_all(&config.paths.data)?;
    save_dataset(&filtered.train, &config.paths.data.join(FILTERED_TRAIN_FILE))?;
    save_dataset(&filtered.valid, &config.paths.data.join(FILTERED_VALID_FILE))?;
    save_dataset(&filtered.test, &config.paths.data.join(FILTERED_TEST_FILE))?;

    let mut rejected: Vec<String> = rejected_train.into_iter().collect();
    rejected.sort();
    save_artifact(
        &config.paths.artifacts.join(REJECTED_IDS_FILE),
        "rejected-ids",
        config.seed,
        &rejected,
    )?;

    fs::create_dir_all(&config.paths.reports)?;
    let json = serde_json::to_string_pretty(&report)?;
    write_text(&config.paths.reports.join(FILTER_REPORT_JSON), &json)?;
    write_text(
        &config.paths.reports.join(FILTER_REPORT_TEXT),
        &report.render_text(),
    )?;
    Ok(report)
}

pub fn stage_train_lm(config: &RunConfig) -> Result<NGramModel<f64>> {
    config.validate()?;
    let corpus = load_corpus(config)?;
    let lm = train_ngram::<f64>(&corpus.train, config.lm_order, config.lm_discount)?;
    save_artifact(
        &config.paths.artifacts.join(LM_FILE),
        "ngram-lm",
        config.seed,
        &lm,
    )?;
    Ok(lm)
}

pub struct TrainedClassifiers {
    pub intent: LinearSoftmaxModel<f64>,
    pub action: LinearSoftmaxModel<f64>,
    pub eval: LinearSoftmaxModel<f64>,
}

/// Trains the guidance, action, and scoring classifiers on the full train
/// split. Needs the rejected-id artifact from the filter stage for action
/// labels.
pub fn stage_train_classifiers(config: &RunConfig) -> Result<TrainedClassifiers> {
    config.validate()?;
    let corpus = load_corpus(config)?;
    let rejected = load_artifact::<Vec<String>>(
        &config.paths.artifacts.join(REJECTED_IDS_FILE),
        "rejected-ids",
    )?;
    let rejected: HashSet<String> = rejected.payload.into_iter().collect();

    let mut intent_config = config.classifier.clone();
    intent_config.seed = derive_seed(config.seed, "intent");
    let intent = train_intent_prefix_classifier::<f64>(&corpus.train, &intent_config)?;

    let mut action_config = config.classifier.clone();
    action_config.seed = derive_seed(config.seed, "action");
    let action = train_action_classifier::<f64>(&corpus.train, &rejected, &action_config)?;

    let eval = train_eval_intent_classifier::<f64>(
        &corpus.train,
        &config.classifier,
        derive_seed(config.seed, "eval-intent"),
    )?;

    let dir = &config.paths.artifacts;
    save_artifact(&dir.join(INTENT_CLF_FILE), "intent-classifier", config.seed, &intent)?;
    save_artifact(&dir.join(ACTION_CLF_FILE), "action-classifier", config.seed, &action)?;
    save_artifact(&dir.join(EVAL_CLF_FILE), "eval-classifier", config.seed, &eval)?;
    Ok(TrainedClassifiers {
        intent,
        action,
        eval,
    })
}

/// Every artifact the eval and demo paths need, loaded and owned.
pub struct LoadedModels {
    pub corpus: Corpus,
    pub encoder: DualEncoder<f64>,
    pub index: ReplyIndex<f64>,
    pub lm: NGramModel<f64>,
    pub intent_classifier: LinearSoftmaxModel<f64>,
    pub action_classifier: LinearSoftmaxModel<f64>,
    pub eval_classifier: LinearSoftmaxModel<f64>,
}

impl LoadedModels {
    pub fn decode_models(&self) -> DecodeModels<'_, f64> {
        DecodeModels {
            lm: &self.lm,
            intent_classifier: &self.intent_classifier,
            action_classifier: &self.action_classifier,
            eval_classifier: &self.eval_classifier,
            vocab: &self.corpus.train.vocab,
        }
    }

    pub fn eval_models(&self, suggestion_k: usize, suggestion_dedup: bool) -> EvalModels<'_, f64> {
        EvalModels {
            decode: self.decode_models(),
            encoder: &self.encoder,
            index: &self.index,
            suggestion_k,
            suggestion_dedup,
        }
    }
}

pub fn load_models(config: &RunConfig) -> Result<LoadedModels> {
    let corpus = load_corpus(config)?;
    let (encoder, index) = load_retriever(config)?;
    let dir = &config.paths.artifacts;
    let lm = load_artifact::<NGramModel<f64>>(&dir.join(LM_FILE), "ngram-lm")?;
    let intent = load_artifact::<LinearSoftmaxModel<f64>>(
        &dir.join(INTENT_CLF_FILE),
        "intent-classifier",
    )?;
    let action = load_artifact::<LinearSoftmaxModel<f64>>(
        &dir.join(ACTION_CLF_FILE),
        "action-classifier",
    )?;
    let eval = load_artifact::<LinearSoftmaxModel<f64>>(
        &dir.join(EVAL_CLF_FILE),
        "eval-classifier",
    )?;
    Ok(LoadedModels {
        corpus,
        encoder,
        index,
        lm: lm.payload,
        intent_classifier: intent.payload,
        action_classifier: action.payload,
        eval_classifier: eval.payload,
    })
}

/// The rejected test split every method is evaluated on, rebuilt
/// deterministically from the canonical test split and the retriever.
pub fn filtered_test_split(config: &RunConfig, models: &LoadedModels) -> Result<Dataset> {
    let filter = if config.dedup_suggestions {
        build_filtered_dataset_dedup
    } else {
        build_filtered_dataset
    };
    let (test, _, _) = filter(
        &models.corpus.test,
        &models.encoder,
        &models.index,
        config.suggestion_k,
    )?;
    Ok(test)
}

fn write_traces(path: &Path, traces: &[DecodeTrace]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    for trace in traces {
        writeln!(w, "{}", serde_json::to_string(trace)?)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the per-method experiment over the rejected test split and writes
/// the report (JSON and text) plus per-example traces.
pub fn stage_eval(config: &RunConfig, methods: Option<&[Method]>) -> Result<EvalReport> {
    config.validate()?;
    let models = load_models(config)?;
    let test = filtered_test_split(config, &models)?;
    let methods = methods.unwrap_or(&config.methods);
    let output = run_experiment(
        &models.eval_models(config.suggestion_k, config.dedup_suggestions),
        &test,
        methods,
        &config.guidance,
        config.resamples,
        derive_seed(config.seed, "bootstrap"),
    )?;
    let json = serde_json::to_string_pretty(&output.report)?;
    write_text(&config.paths.reports.join(EVAL_REPORT_JSON), &json)?;
    write_text(
        &config.paths.reports.join(EVAL_REPORT_TEXT),
        &render_report(&output.report),
    )?;
    write_traces(&config.paths.reports.join(TRACES_FILE), &output.traces)?;
    Ok(output.report)
}

/// Runs the α sweep for the intent-guided method and writes its table.
pub fn stage_sweep(config: &RunConfig, alphas: Option<&[f64]>) -> Result<SweepTable> {
    config.validate()?;
    let models = load_models(config)?;
    let test = filtered_test_split(config, &models)?;
    let alphas = alphas.unwrap_or(&config.alphas);
    let table = sweep_alpha(
        &models.eval_models(config.suggestion_k, config.dedup_suggestions),
        &test,
        alphas,
        &config.guidance,
        config.resamples,
        derive_seed(config.seed, "bootstrap"),
    )?;
    let json = serde_json::to_string_pretty(&table)?;
    write_text(&config.paths.reports.join(SWEEP_JSON), &json)?;
    write_text(&config.paths.reports.join(SWEEP_TEXT), &render_sweep(&table))?;
    Ok(table)
}

/// The whole pipeline in dependency order, returning the final report.
pub fn run_full(config: &RunConfig) -> Result<EvalReport> {
    stage_gen_data(config)?;
    stage_train_retriever(config)?;
    stage_filter(config)?;
    stage_train_lm(config)?;
    stage_train_classifiers(config)?;
    stage_eval(config, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        let a = derive_seed(7, "data");
        let b = derive_seed(7, "encoder");
        let c = derive_seed(8, "data");
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(7, "data"));
    }

    #[test]
    fn config_requires_a_seed_to_parse() {
        let err = serde_json::from_str::<RunConfig>("{}").unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
        let ok: RunConfig = serde_json::from_str("{\"seed\": 3}").unwrap();
        assert_eq!(ok.seed, 3);
        assert_eq!(ok.lm_order, 3);
        assert_eq!(ok.methods.len(), ALL_METHODS.len());
    }

    #[test]
    fn config_validation_rejects_bad_knobs() {
        let mut config = RunConfig::with_seed(1);
        config.lm_discount = 1.0;
        assert!(config.validate().is_err());
        let mut config = RunConfig::with_seed(1);
        config.methods = vec![Method::Baseline, Method::Baseline];
        assert!(config.validate().is_err());
        let mut config = RunConfig::with_seed(1);
        config.suggestion_k = 0;
        assert!(config.validate().is_err());
    }

    fn tiny_config(root: &Path, seed: u64) -> RunConfig {
        let mut config = RunConfig::with_seed(seed);
        config.paths = RunPaths {
            data: root.join("data"),
            artifacts: root.join("artifacts"),
            reports: root.join("reports"),
        };
        config.synthetic = SyntheticSpec {
            n_atomic_intents: 4,
            n_templates_per_intent: 3,
            n_train: 100,
            n_valid: 25,
            n_test: 25,
            seed: 0,
            ..SyntheticSpec::default()
        };
        config.encoder = EncoderConfig {
            epochs: 3,
            batch: 16,
            ..EncoderConfig::default()
        };
        config.classifier = TrainConfig {
            epochs: 4,
            ..TrainConfig::default()
        };
        config.guidance.beams = 3;
        config.guidance.max_len = 12;
        config.methods = vec![Method::Baseline, Method::NiftyIntent];
        config.resamples = 100;
        config
    }

    #[test]
    fn full_runs_are_byte_identical_for_one_seed() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let report_a = run_full(&tiny_config(dir_a.path(), 21)).unwrap();
        let report_b = run_full(&tiny_config(dir_b.path(), 21)).unwrap();
        let json_a = fs::read(dir_a.path().join("reports").join(EVAL_REPORT_JSON)).unwrap();
        let json_b = fs::read(dir_b.path().join("reports").join(EVAL_REPORT_JSON)).unwrap();
        assert_eq!(json_a, json_b);
        assert_eq!(report_a, report_b);
        assert!(dir_a.path().join("reports").join(TRACES_FILE).is_file());
    }

    #[test]
    fn eval_before_training_names_the_missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path(), 4);
        stage_gen_data(&config).unwrap();
        let err = stage_eval(&config, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("missing artifact: "), "{msg}");
        assert!(msg.contains(ENCODER_FILE), "{msg}");
    }

    #[test]
    fn stagewise_run_matches_the_single_pass() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let config_a = tiny_config(dir_a.path(), 33);
        let config_b = tiny_config(dir_b.path(), 33);

        let report_a = run_full(&config_a).unwrap();

        stage_gen_data(&config_b).unwrap();
        stage_train_retriever(&config_b).unwrap();
        stage_filter(&config_b).unwrap();
        stage_train_lm(&config_b).unwrap();
        stage_train_classifiers(&config_b).unwrap();
        let report_b = stage_eval(&config_b, None).unwrap();
        assert_eq!(report_a, report_b);
    }
}
