//! Interactive loop over trained artifacts: show the top suggestions for a
//! typed message, let the user accept one, or reject them all and compare
//! the plain generator against the intent-guided one.

use std::io::{BufRead, Write};

use replylab_core::corpus::tokenize;
use replylab_core::decoding::{decode_reply, GuidanceConfig, Method};
use replylab_core::pipeline::{load_models, LoadedModels, RunConfig};
use replylab_core::smartreply::{retrieve_suggestions, retrieve_suggestions_dedup, SuggestionSet};
use replylab_core::Result;

/// One parsed keystroke of the suggestion prompt.
#[derive(Debug, PartialEq, Eq)]
enum Choice {
    Quit,
    Reject,
    Accept(usize),
    Invalid,
}

fn parse_choice(line: &str, k: usize) -> Choice {
    let line = line.trim();
    match line {
        "q" => Choice::Quit,
        "r" => Choice::Reject,
        _ => match line.parse::<usize>() {
            Ok(n) if (1..=k).contains(&n) => Choice::Accept(n),
            _ => Choice::Invalid,
        },
    }
}

/// `None` means the input stream ended, which quits as cleanly as `q`.
fn read_line(input: &mut dyn BufRead) -> Result<Option<String>> {
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        Ok(None)
    } else {
        Ok(Some(line))
    }
}

pub fn run(config: &RunConfig, input: &mut dyn BufRead, output: &mut dyn Write) -> Result<()> {
    let models = load_models(config)?;
    session(config, &models, input, output)
}

fn session(
    config: &RunConfig,
    models: &LoadedModels,
    input: &mut dyn BufRead,
    output: &mut dyn Write,
) -> Result<()> {
    let vocab = &models.corpus.train.vocab;
    let k = config.suggestion_k;
    loop {
        write!(output, "message (q quits)> ")?;
        output.flush()?;
        let Some(line) = read_line(input)? else {
            return Ok(());
        };
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if text == "q" {
            return Ok(());
        }
        let message = vocab.encode(&tokenize(text));
        let suggestions = if config.dedup_suggestions {
            retrieve_suggestions_dedup(&models.encoder, &models.index, &message, vocab, k)?
        } else {
            retrieve_suggestions(&models.encoder, &models.index, &message, vocab, k)?
        };
        writeln!(output)?;
        for (i, s) in suggestions.entries.iter().enumerate() {
            writeln!(output, "  {}. [{}] {}", i + 1, s.intent, vocab.decode_text(&s.tokens))?;
        }
        loop {
            write!(output, "pick 1..{k}, r rejects all, q quits> ")?;
            output.flush()?;
            let Some(line) = read_line(input)? else {
                return Ok(());
            };
            match parse_choice(&line, k) {
                Choice::Quit => return Ok(()),
                Choice::Accept(n) => {
                    let picked = &suggestions.entries[n - 1];
                    writeln!(output, "sent: {}", vocab.decode_text(&picked.tokens))?;
                    break;
                }
                Choice::Reject => {
                    rejected_view(config, models, &message, &suggestions, output)?;
                    break;
                }
                Choice::Invalid => {
                    writeln!(output, "enter a number in 1..{k}, r, or q")?;
                }
            }
        }
    }
}

/// Generates both replies for a rejected suggestion set and prints them with
/// the intent the guided decode steered toward.
fn rejected_view(
    config: &RunConfig,
    models: &LoadedModels,
    message: &[replylab_core::corpus::TokenId],
    suggestions: &SuggestionSet,
    output: &mut dyn Write,
) -> Result<()> {
    let vocab = &models.corpus.train.vocab;
    let decode_models = models.decode_models();
    let plain = decode_reply(
        &decode_models,
        message,
        suggestions,
        &GuidanceConfig {
            method: Method::Baseline,
            ..config.guidance.clone()
        },
    )?;
    let guided = decode_reply(
        &decode_models,
        message,
        suggestions,
        &GuidanceConfig {
            method: Method::NiftyIntent,
            ..config.guidance.clone()
        },
    )?;
    let target = guided
        .target_intent
        .expect("the intent-guided method always selects a target");
    writeln!(output, "baseline    : {}", vocab.decode_text(&plain.tokens))?;
    writeln!(
        output,
        "nifty_intent: [{}] {}",
        target,
        vocab.decode_text(&guided.tokens)
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn choices_parse_digits_keys_and_garbage() {
        assert_eq!(parse_choice("q\n", 3), Choice::Quit);
        assert_eq!(parse_choice(" r ", 3), Choice::Reject);
        assert_eq!(parse_choice("1", 3), Choice::Accept(1));
        assert_eq!(parse_choice("3\n", 3), Choice::Accept(3));
        assert_eq!(parse_choice("0", 3), Choice::Invalid);
        assert_eq!(parse_choice("4", 3), Choice::Invalid);
        assert_eq!(parse_choice("x", 3), Choice::Invalid);
        assert_eq!(parse_choice("", 3), Choice::Invalid);
    }

    #[test]
    fn reading_an_exhausted_stream_yields_none() {
        let mut empty: &[u8] = b"";
        assert_eq!(read_line(&mut empty).unwrap(), None);
        let mut one: &[u8] = b"hi\n";
        assert_eq!(read_line(&mut one).unwrap(), Some("hi\n".into()));
        assert_eq!(read_line(&mut one).unwrap(), None);
    }
}
