//! Seeded generator for a synthetic assistant-chat corpus.
//!
//! Conversations are grounded in topic domains (hotel, taxi, ...), each with
//! four outcome acts: confirm, decline, schedule, pricing. A message is mostly
//! act-agnostic (the user cannot know the outcome), the reply realizes one
//! act, and the intent label is `{topic}-{act}`. A small fraction of examples
//! concatenate two acts from the same topic into a composite intent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    build_vocab, tokenize, Corpus, Dataset, Example, IntentCatalog, IntentLabel, Split,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    /// Number of atomic `{topic}-{act}` intents; a multiple of 4 uses whole
    /// topics, 2..=32.
    pub n_atomic_intents: usize,
    /// Message templates per intent, 2..=8. The last template is held out of
    /// train/valid and appears only in test messages.
    pub n_templates_per_intent: usize,
    /// Probability an example carries a two-act composite intent.
    pub multi_intent_prob: f64,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    /// Per-token probability of swapping a token for a listed synonym.
    pub lexical_noise_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_atomic_intents: 12,
            n_templates_per_intent: 6,
            multi_intent_prob: 0.10,
            n_train: 5000,
            n_valid: 1000,
            n_test: 1000,
            lexical_noise_prob: 0.15,
            seed: 17,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(2..=32).contains(&self.n_atomic_intents) {
            return Err(Error::InvalidConfig(format!(
                "n_atomic_intents must lie in 2..=32, got {}",
                self.n_atomic_intents
            )));
        }
        if !(2..=8).contains(&self.n_templates_per_intent) {
            return Err(Error::InvalidConfig(format!(
                "n_templates_per_intent must lie in 2..=8, got {}",
                self.n_templates_per_intent
            )));
        }
        for (name, p) in [
            ("multi_intent_prob", self.multi_intent_prob),
            ("lexical_noise_prob", self.lexical_noise_prob),
        ] {
            if !(0.0..=1.0).contains(&p) || p.is_nan() {
                return Err(Error::InvalidConfig(format!(
                    "{name} must lie in [0, 1], got {p}"
                )));
            }
        }
        for (name, n) in [
            ("n_train", self.n_train),
            ("n_valid", self.n_valid),
            ("n_test", self.n_test),
        ] {
            if n == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

const ACTS: [&str; 4] = ["confirm", "decline", "schedule", "pricing"];

struct Topic {
    name: &'static str,
    nouns: [&'static str; 3],
    keywords: [&'static str; 4],
}

const TOPICS: [Topic; 8] = [
    Topic {
        name: "hotel",
        nouns: ["room", "suite", "hostel"],
        keywords: ["checkin", "nights", "breakfast", "deposit"],
    },
    Topic {
        name: "restaurant",
        nouns: ["table", "booth", "terrace"],
        keywords: ["dinner", "menu", "party", "window"],
    },
    Topic {
        name: "taxi",
        nouns: ["cab", "pickup", "ride"],
        keywords: ["driver", "plate", "airport", "meter"],
    },
    Topic {
        name: "train",
        nouns: ["seat", "coach", "ticket"],
        keywords: ["platform", "departure", "express", "return"],
    },
    Topic {
        name: "flight",
        nouns: ["flight", "fare", "cabin"],
        keywords: ["gate", "layover", "luggage", "aisle"],
    },
    Topic {
        name: "cinema",
        nouns: ["screening", "showing", "premiere"],
        keywords: ["screen", "row", "matinee", "subtitles"],
    },
    Topic {
        name: "clinic",
        nouns: ["appointment", "consultation", "checkup"],
        keywords: ["doctor", "referral", "insurance", "followup"],
    },
    Topic {
        name: "museum",
        nouns: ["tour", "exhibit", "pass"],
        keywords: ["gallery", "guide", "audio", "members"],
    },
];

/// Message templates. `{n}` takes the topic noun; messages avoid naming the
/// outcome so intent is mostly decided by the reply side.
const MESSAGE_PATTERNS: [&str; 8] = [
    "i need a {n} for tomorrow please",
    "can you sort out a {n} for us",
    "hi , looking for a {n} this weekend",
    "hello , any chance of a {n} later today",
    "could you check on a {n} for two people",
    "we would like a {n} sometime next week",
    "is there a {n} available on friday",
    "please help me arrange a {n} soon",
];

/// Generic message tails; one in three templates instead appends an
/// act-specific hint so guidance has some message signal to work with.
const GENERIC_TAILS: [&str; 4] = [
    "thanks a lot",
    "let me know",
    "that would be great",
    "whenever suits",
];

const ACT_TAILS: [&str; 4] = [
    "hoping it works out",
    "no worries if not",
    "timing is flexible",
    "what would it cost",
];

/// Reply templates per act. `{n}` noun, `{k}` topic keyword, `{d}` number.
/// Every act keeps a distinguishing slot so the eight variants per act stay
/// distinct.
const REPLY_PATTERNS: [[&str; 8]; 4] = [
    [
        "your {n} is booked , the {k} is all set",
        "done , i reserved the {n} with {k} included",
        "all confirmed , the {n} is yours and {k} is covered",
        "great news , your {n} is secured with the {k} sorted",
        "the {n} is booked , reference covers the {k} too",
        "confirmed just now , {n} held and {k} arranged",
        "booked it , your {n} comes with the {k}",
        "that {n} is reserved , {k} details are in the note",
    ],
    [
        "sorry , no {n} is free and the {k} list is full",
        "unfortunately the {n} fell through , {k} was the blocker",
        "i could not hold the {n} , the {k} option is gone",
        "bad news , every {n} is taken and {k} is unavailable",
        "no luck on the {n} , they closed the {k} slots",
        "afraid the {n} is sold out , {k} included",
        "they declined the {n} request citing the {k}",
        "that {n} is not possible , the {k} ran out",
    ],
    [
        "the {n} can be moved to {d} pm if that helps",
        "i can pencil the {n} in at {d} pm tomorrow",
        "would {d} pm work for the {n} instead",
        "the earliest {n} slot is {d} pm on thursday",
        "how about the {n} at {d} pm , same place",
        "they offered a {n} window around {d} pm",
        "rescheduled options show the {n} at {d} pm",
        "shall i lock the {n} for {d} pm then",
    ],
    [
        "the {n} runs {d} pounds including the {k}",
        "pricing came back , the {n} is {d} pounds with {k}",
        "expect about {d} pounds for the {n} , {k} extra",
        "the quote lists the {n} at {d} pounds plus {k}",
        "it is {d} pounds total for the {n} and {k}",
        "cost wise the {n} sits at {d} pounds , {k} waived",
        "they charge {d} pounds per {n} , {k} is free",
        "budget {d} pounds for the {n} once {k} is added",
    ],
];

/// Filler-word synonym pairs used for lexical noise. Both directions of each
/// pair appear so the swap never invents an unseen token after one epoch of
/// noise.
const SYNONYMS: [(&str, &str); 10] = [
    ("please", "kindly"),
    ("kindly", "please"),
    ("great", "lovely"),
    ("lovely", "great"),
    ("sorry", "apologies"),
    ("apologies", "sorry"),
    ("tomorrow", "tmrw"),
    ("tmrw", "tomorrow"),
    ("thanks", "cheers"),
    ("cheers", "thanks"),
];

#[derive(Clone, Copy)]
struct AtomicIntent {
    topic: usize,
    act: usize,
}

impl AtomicIntent {
    fn label(&self) -> IntentLabel {
        IntentLabel::from_atoms([format!("{}-{}", TOPICS[self.topic].name, ACTS[self.act])])
            .expect("generated intent names are valid atoms")
    }
}

fn intent_table(n: usize) -> Vec<AtomicIntent> {
    (0..n)
        .map(|g| AtomicIntent {
            topic: (g / ACTS.len()) % TOPICS.len(),
            act: g % ACTS.len(),
        })
        .collect()
}

/// Message text for intent `g`, template index `t`. Rotations keep the
/// template pool varied across intents while staying act-light: only
/// templates with `t % 3 == 2` leak an act hint.
fn message_text(intent: &AtomicIntent, g: usize, t: usize) -> String {
    let topic = &TOPICS[intent.topic];
    let pattern = MESSAGE_PATTERNS[(t + 2 * intent.act + 3 * g) % MESSAGE_PATTERNS.len()];
    let noun = topic.nouns[(t + intent.act) % topic.nouns.len()];
    let tail = if t % 3 == 2 {
        ACT_TAILS[intent.act]
    } else {
        GENERIC_TAILS[(t + g) % GENERIC_TAILS.len()]
    };
    format!("{} , {}", pattern.replace("{n}", noun), tail)
}

/// Reply text for intent `g`, template index `t`.
fn reply_text(intent: &AtomicIntent, g: usize, t: usize) -> String {
    let topic = &TOPICS[intent.topic];
    let pattern = REPLY_PATTERNS[intent.act][(t + g) % 8];
    let noun = topic.nouns[(t + g) % topic.nouns.len()];
    let keyword = topic.keywords[(t + 2 * g) % topic.keywords.len()];
    let number = (2 + (t + 3 * g) % 8).to_string();
    pattern
        .replace("{n}", noun)
        .replace("{k}", keyword)
        .replace("{d}", &number)
}

fn apply_noise(text: &str, prob: f64, rng: &mut ChaCha8Rng) -> String {
    if prob == 0.0 {
        return text.to_string();
    }
    let swapped: Vec<String> = text
        .split(' ')
        .map(|tok| {
            if rng.gen::<f64>() < prob {
                if let Some(&(_, to)) = SYNONYMS.iter().find(|&&(from, _)| from == tok) {
                    return to.to_string();
                }
            }
            tok.to_string()
        })
        .collect();
    swapped.join(" ")
}

struct RawPair {
    message: String,
    reply: String,
    label: IntentLabel,
}

/// Draws one example: pick an intent and a template index from the allowed
/// range; with `multi_intent_prob` concatenate a second act from the same
/// topic group into a composite.
fn draw_pair(
    spec: &SyntheticSpec,
    intents: &[AtomicIntent],
    template_range: std::ops::Range<usize>,
    rng: &mut ChaCha8Rng,
) -> RawPair {
    let g = rng.gen_range(0..intents.len());
    let t = rng.gen_range(template_range.clone());
    let first = intents[g];

    let composite = rng.gen::<f64>() < spec.multi_intent_prob;
    let partner = if composite {
        let group = g / ACTS.len() * ACTS.len();
        let group_len = (intents.len() - group).min(ACTS.len());
        if group_len > 1 {
            let mut other = group + rng.gen_range(0..group_len);
            if other == g {
                other = group + (other - group + 1) % group_len;
            }
            Some((other, intents[other]))
        } else {
            None
        }
    } else {
        None
    };

    let message = apply_noise(
        &message_text(&first, g, t),
        spec.lexical_noise_prob,
        rng,
    );
    let mut reply = reply_text(&first, g, t);
    let label = match partner {
        Some((og, other)) => {
            reply = format!("{} . {}", reply, reply_text(&other, og, t));
            IntentLabel::from_atoms([
                format!("{}-{}", TOPICS[first.topic].name, ACTS[first.act]),
                format!("{}-{}", TOPICS[other.topic].name, ACTS[other.act]),
            ])
            .expect("generated intent names are valid atoms")
        }
        None => first.label(),
    };
    let reply = apply_noise(&reply, spec.lexical_noise_prob, rng);
    RawPair {
        message,
        reply,
        label,
    }
}

fn draw_split(
    spec: &SyntheticSpec,
    intents: &[AtomicIntent],
    n: usize,
    template_range: std::ops::Range<usize>,
    prefix: &str,
    rng: &mut ChaCha8Rng,
) -> Vec<(String, RawPair)> {
    (0..n)
        .map(|i| {
            (
                format!("{prefix}{i:05}"),
                draw_pair(spec, intents, template_range.clone(), rng),
            )
        })
        .collect()
}

/// Generates the corpus: train/valid draw from message templates
/// `0..n_templates-1`, test draws from the full range and then a forced pass
/// rewrites the first examples so every atomic intent shows up in test with
/// the held-out message template.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus> {
    spec.validate()?;
    let intents = intent_table(spec.n_atomic_intents);
    let seen = 0..spec.n_templates_per_intent - 1;
    let full = 0..spec.n_templates_per_intent;
    let held_out = spec.n_templates_per_intent - 1;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train_raw = draw_split(spec, &intents, spec.n_train, seen.clone(), "train-", &mut rng);
    let valid_raw = draw_split(spec, &intents, spec.n_valid, seen, "valid-", &mut rng);
    let mut test_raw = draw_split(spec, &intents, spec.n_test, full, "test-", &mut rng);

    for (g, intent) in intents.iter().enumerate() {
        if g >= test_raw.len() {
            break;
        }
        test_raw[g].1 = RawPair {
            message: apply_noise(
                &message_text(intent, g, held_out),
                spec.lexical_noise_prob,
                &mut rng,
            ),
            reply: reply_text(intent, g, held_out),
            label: intent.label(),
        };
    }

    let train_tokens: Vec<(Vec<String>, Vec<String>)> = train_raw
        .iter()
        .map(|(_, p)| (tokenize(&p.message), tokenize(&p.reply)))
        .collect();
    let texts: Vec<&[String]> = train_tokens
        .iter()
        .flat_map(|(m, r)| [m.as_slice(), r.as_slice()])
        .collect();
    let vocab = build_vocab(texts, 1)?;

    let catalog = IntentCatalog::from_observed(
        train_raw
            .iter()
            .chain(&valid_raw)
            .chain(&test_raw)
            .map(|(_, p)| p.label.clone()),
    )?;

    let to_dataset = |raw: &[(String, RawPair)], split: Split| -> Result<Dataset> {
        let examples = raw
            .iter()
            .map(|(id, p)| Example {
                id: id.clone(),
                message: vocab.encode(&tokenize(&p.message)),
                reply: vocab.encode(&tokenize(&p.reply)),
                intent: p.label.clone(),
            })
            .collect();
        Dataset::new(split, examples, vocab.clone(), catalog.clone())
    };

    Ok(Corpus {
        train: to_dataset(&train_raw, Split::Train)?,
        valid: to_dataset(&valid_raw, Split::Valid)?,
        test: to_dataset(&test_raw, Split::Test)?,
    })
}
