//! Datasets: tokenization, vocabulary, intent labels, JSONL ingestion, and
//! the seeded synthetic corpus generator.

mod synthetic;

pub use synthetic::{generate_synthetic, SyntheticSpec};

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const BOS: TokenId = 2;
pub const EOS: TokenId = 3;
pub const SEP: TokenId = 4;

/// Reserved token strings occupying ids `0..5` in every vocabulary.
pub const RESERVED_TOKENS: [&str; 5] = ["<pad>", "<unk>", "<bos>", "<eos>", "<sep>"];

const SPLIT_PUNCT: [char; 6] = ['.', ',', '!', '?', ';', ':'];

/// Lowercases, splits on whitespace, and splits `.,!?;:` off as standalone
/// tokens. Empty input yields an empty sequence.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if SPLIT_PUNCT.contains(&ch) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_string());
        } else {
            current.extend(ch.to_lowercase());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Inverse of [`tokenize`] up to case and spacing: joins with single spaces.
pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

// ── Vocabulary ──────────────────────────────────────────────────────────────

/// Token-string table with dense ids; ids `0..5` are the reserved tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    fn from_token_list(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED_TOKENS.len()
            || tokens[..RESERVED_TOKENS.len()] != RESERVED_TOKENS
        {
            return Err(Error::InvalidDataset(
                "vocabulary must start with the reserved tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id as TokenId).is_some() {
                return Err(Error::InvalidDataset(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Id of a content token; unknown tokens and reserved-looking strings in
    /// running text map to [`UNK`] so reserved ids never leak into sequences.
    pub fn id(&self, token: &str) -> TokenId {
        match self.index.get(token) {
            Some(&id) if id >= RESERVED_TOKENS.len() as TokenId => id,
            _ => UNK,
        }
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&id| self.token(id).to_string()).collect()
    }

    pub fn decode_text(&self, ids: &[TokenId]) -> String {
        detokenize(&self.decode(ids))
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_token_list(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

/// Builds a vocabulary from token sequences, keeping tokens with frequency
/// ≥ `min_count`. Ids follow descending frequency, ties broken
/// lexicographically, so identical input always yields identical ids.
pub fn build_vocab<'a, I>(texts: I, min_count: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut seen_any = false;
    for seq in texts {
        seen_any = true;
        for tok in seq {
            *counts.entry(tok.as_str()).or_insert(0) += 1;
        }
    }
    if !seen_any || counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(tok, n)| *n >= min_count && !RESERVED_TOKENS.contains(tok))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(kept.into_iter().map(|(tok, _)| tok.to_string()));
    Vocab::from_token_list(tokens)
}

// ── Intent labels ───────────────────────────────────────────────────────────

/// A dialogue-act label. Composite labels are the sorted atomic names joined
/// with `+` and match only exactly — never by partial overlap.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct IntentLabel(String);

impl IntentLabel {
    /// Canonical label from atomic intent names: sorted ascending, deduped,
    /// joined with `+`.
    pub fn from_atoms<I, T>(atoms: I) -> Result<Self>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        let mut parts: Vec<String> = Vec::new();
        for atom in atoms {
            let atom = atom.as_ref();
            if atom.is_empty()
                || atom
                    .chars()
                    .any(|c| c.is_uppercase() || c.is_whitespace() || c == '+')
            {
                return Err(Error::InvalidIntent(atom.to_string()));
            }
            parts.push(atom.to_string());
        }
        if parts.is_empty() {
            return Err(Error::EmptyIntent);
        }
        parts.sort();
        parts.dedup();
        Ok(Self(parts.join("+")))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn atoms(&self) -> impl Iterator<Item = &str> {
        self.0.split('+')
    }

    pub fn is_composite(&self) -> bool {
        self.0.contains('+')
    }
}

impl fmt::Display for IntentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for IntentLabel {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Self::from_atoms(s.split('+'))
    }
}

impl From<IntentLabel> for String {
    fn from(label: IntentLabel) -> Self {
        label.0
    }
}

/// The closed set 𝐳 of intent labels with stable indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<IntentLabel>", into = "Vec<IntentLabel>")]
pub struct IntentCatalog {
    labels: Vec<IntentLabel>,
    index: HashMap<IntentLabel, usize>,
}

impl IntentCatalog {
    pub fn new(labels: Vec<IntentLabel>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::InvalidDataset(
                "intent catalog needs at least two labels".into(),
            ));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            if index.insert(label.clone(), i).is_some() {
                return Err(Error::InvalidDataset(format!(
                    "duplicate intent label {label}"
                )));
            }
        }
        Ok(Self { labels, index })
    }

    /// Catalog of the distinct labels observed, in lexicographic order.
    pub fn from_observed<I>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = IntentLabel>,
    {
        let unique: BTreeSet<IntentLabel> = labels.into_iter().collect();
        Self::new(unique.into_iter().collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, idx: usize) -> &IntentLabel {
        &self.labels[idx]
    }

    pub fn index_of(&self, label: &IntentLabel) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn contains(&self, label: &IntentLabel) -> bool {
        self.index.contains_key(label)
    }

    pub fn labels(&self) -> &[IntentLabel] {
        &self.labels
    }
}

impl TryFrom<Vec<IntentLabel>> for IntentCatalog {
    type Error = Error;

    fn try_from(labels: Vec<IntentLabel>) -> Result<Self> {
        Self::new(labels)
    }
}

impl From<IntentCatalog> for Vec<IntentLabel> {
    fn from(c: IntentCatalog) -> Self {
        c.labels
    }
}

// ── Examples and datasets ───────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub message: Vec<TokenId>,
    pub reply: Vec<TokenId>,
    pub intent: IntentLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub examples: Vec<Example>,
    pub vocab: Vocab,
    pub catalog: IntentCatalog,
}

impl Dataset {
    /// Validates the invariants: unique ids, non-empty message/reply, token
    /// ids in range, no reserved ids inside sequences, intents in catalog.
    pub fn new(
        split: Split,
        examples: Vec<Example>,
        vocab: Vocab,
        catalog: IntentCatalog,
    ) -> Result<Self> {
        let v = vocab.len() as TokenId;
        let mut ids = HashSet::with_capacity(examples.len());
        for ex in &examples {
            if !ids.insert(ex.id.as_str()) {
                return Err(Error::InvalidDataset(format!("duplicate id {:?}", ex.id)));
            }
            if ex.message.is_empty() || ex.reply.is_empty() {
                return Err(Error::InvalidDataset(format!(
                    "example {:?} has an empty message or reply",
                    ex.id
                )));
            }
            for &t in ex.message.iter().chain(&ex.reply) {
                if t >= v {
                    return Err(Error::InvalidDataset(format!(
                        "example {:?} holds token id {t} outside vocab of {v}",
                        ex.id
                    )));
                }
                if t != UNK && t < RESERVED_TOKENS.len() as TokenId {
                    return Err(Error::InvalidDataset(format!(
                        "example {:?} holds reserved token id {t}",
                        ex.id
                    )));
                }
            }
            if !catalog.contains(&ex.intent) {
                return Err(Error::InvalidDataset(format!(
                    "example {:?} carries intent {} outside the catalog",
                    ex.id, ex.intent
                )));
            }
        }
        drop(ids);
        Ok(Self {
            split,
            examples,
            vocab,
            catalog,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// The three splits of one corpus, sharing a vocabulary (built from train
/// only) and an intent catalog (union over splits).
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

impl Corpus {
    pub fn vocab(&self) -> &Vocab {
        &self.train.vocab
    }

    pub fn catalog(&self) -> &IntentCatalog {
        &self.train.catalog
    }
}

// ── JSONL ingestion ─────────────────────────────────────────────────────────

struct RawExample {
    line: usize,
    id: String,
    message: Vec<String>,
    reply: Vec<String>,
    label: IntentLabel,
}

#[derive(Debug)]
pub struct LoadOutcome {
    pub dataset: Dataset,
    /// Examples dropped because message or reply tokenized to nothing.
    pub skipped_empty: usize,
}

fn field_str<'v>(
    obj: &'v serde_json::Map<String, serde_json::Value>,
    name: &str,
    line: usize,
) -> Result<&'v str> {
    let value = obj.get(name).ok_or_else(|| Error::DataFormat {
        line,
        message: format!("missing field {name}"),
    })?;
    value.as_str().ok_or_else(|| Error::DataFormat {
        line,
        message: format!("field {name} must be a string"),
    })
}

fn parse_line(line_no: usize, line: &str) -> Result<(String, String, String, Vec<String>)> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| Error::DataFormat {
            line: line_no,
            message: format!("invalid json: {e}"),
        })?;
    let obj = value.as_object().ok_or_else(|| Error::DataFormat {
        line: line_no,
        message: "expected a json object".into(),
    })?;
    let id = field_str(obj, "id", line_no)?.to_string();
    let message = field_str(obj, "message", line_no)?.to_string();
    let reply = field_str(obj, "reply", line_no)?.to_string();
    let intents_value = obj.get("intents").ok_or_else(|| Error::DataFormat {
        line: line_no,
        message: "missing field intents".into(),
    })?;
    let intents_arr = intents_value.as_array().ok_or_else(|| Error::DataFormat {
        line: line_no,
        message: "field intents must be an array of strings".into(),
    })?;
    let mut intents = Vec::with_capacity(intents_arr.len());
    for item in intents_arr {
        let s = item.as_str().ok_or_else(|| Error::DataFormat {
            line: line_no,
            message: "field intents must be an array of strings".into(),
        })?;
        intents.push(s.to_string());
    }
    Ok((id, message, reply, intents))
}

fn read_raw(path: &Path) -> Result<(Vec<RawExample>, usize)> {
    let file = File::open(path)?;
    let mut raw = Vec::new();
    let mut skipped = 0usize;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, message, reply, intents) = parse_line(line_no, &line)?;
        let label = IntentLabel::from_atoms(&intents).map_err(|e| Error::DataFormat {
            line: line_no,
            message: e.to_string(),
        })?;
        let message = tokenize(&message);
        let reply = tokenize(&reply);
        if message.is_empty() || reply.is_empty() {
            skipped += 1;
            continue;
        }
        raw.push(RawExample {
            line: line_no,
            id,
            message,
            reply,
            label,
        });
    }
    Ok((raw, skipped))
}

fn assemble(
    raw: Vec<RawExample>,
    split: Split,
    vocab: &Vocab,
    catalog: &IntentCatalog,
) -> Result<Dataset> {
    let mut examples = Vec::with_capacity(raw.len());
    for r in raw {
        if !catalog.contains(&r.label) {
            return Err(Error::DataFormat {
                line: r.line,
                message: format!("intent {} not in catalog", r.label),
            });
        }
        examples.push(Example {
            id: r.id,
            message: vocab.encode(&r.message),
            reply: vocab.encode(&r.reply),
            intent: r.label,
        });
    }
    Dataset::new(split, examples, vocab.clone(), catalog.clone())
}

/// Loads one JSONL split file. The vocabulary is built from this file's own
/// tokens, so call this on the train split (or use [`load_splits`] to share
/// the train vocabulary across all three splits). The catalog defaults to the
/// labels observed in the file.
pub fn load_dataset(
    path: &Path,
    split: Split,
    catalog: Option<&IntentCatalog>,
) -> Result<LoadOutcome> {
    let (raw, skipped_empty) = read_raw(path)?;
    let texts: Vec<&[String]> = raw
        .iter()
        .flat_map(|r| [r.message.as_slice(), r.reply.as_slice()])
        .collect();
    let vocab = build_vocab(texts, 1)?;
    let catalog = match catalog {
        Some(c) => c.clone(),
        None => IntentCatalog::from_observed(raw.iter().map(|r| r.label.clone()))?,
    };
    let dataset = assemble(raw, split, &vocab, &catalog)?;
    Ok(LoadOutcome {
        dataset,
        skipped_empty,
    })
}

/// Loads train/valid/test JSONL files into a [`Corpus`]: vocabulary from the
/// train split only, catalog the union of labels across splits unless
/// supplied. Unknown valid/test tokens map to UNK.
pub fn load_splits(
    train_path: &Path,
    valid_path: &Path,
    test_path: &Path,
    catalog: Option<&IntentCatalog>,
) -> Result<Corpus> {
    let (train_raw, _) = read_raw(train_path)?;
    let (valid_raw, _) = read_raw(valid_path)?;
    let (test_raw, _) = read_raw(test_path)?;

    let texts: Vec<&[String]> = train_raw
        .iter()
        .flat_map(|r| [r.message.as_slice(), r.reply.as_slice()])
        .collect();
    let vocab = build_vocab(texts, 1)?;
    let catalog = match catalog {
        Some(c) => c.clone(),
        None => IntentCatalog::from_observed(
            train_raw
                .iter()
                .chain(&valid_raw)
                .chain(&test_raw)
                .map(|r| r.label.clone()),
        )?,
    };

    Ok(Corpus {
        train: assemble(train_raw, Split::Train, &vocab, &catalog)?,
        valid: assemble(valid_raw, Split::Valid, &vocab, &catalog)?,
        test: assemble(test_raw, Split::Test, &vocab, &catalog)?,
    })
}

/// Writes a dataset back to the canonical JSONL schema.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for ex in &dataset.examples {
        let record = serde_json::json!({
            "id": ex.id,
            "message": dataset.vocab.decode_text(&ex.message),
            "reply": dataset.vocab.decode_text(&ex.reply),
            "intents": ex.intent.atoms().collect::<Vec<_>>(),
        });
        writeln!(w, "{record}")?;
    }
    w.flush()?;
    Ok(())
}

/// Seeded shuffle-and-partition into train/valid/test by ratios summing to 1.
/// The parent vocabulary and catalog are inherited unchanged so splitting
/// never changes token ids.
pub fn split_dataset(
    dataset: &Dataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (a, b, c) = ratios;
    if (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "split ratios must sum to 1, got {}",
            a + b + c
        )));
    }
    let mut order: Vec<usize> = (0..dataset.examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n = order.len();
    let n_train = (a * n as f64).floor() as usize;
    let n_valid = (b * n as f64).floor() as usize;

    let take = |idx: &[usize], split: Split| -> Result<Dataset> {
        let examples = idx.iter().map(|&i| dataset.examples[i].clone()).collect();
        Dataset::new(
            split,
            examples,
            dataset.vocab.clone(),
            dataset.catalog.clone(),
        )
    };
    Ok((
        take(&order[..n_train], Split::Train)?,
        take(&order[n_train..n_train + n_valid], Split::Valid)?,
        take(&order[n_train + n_valid..], Split::Test)?,
    ))
}
