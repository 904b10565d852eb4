//! Subprocess tests for the replylab binary: exit codes, stream discipline,
//! artifact chaining, and the interactive demo script.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::OnceLock;

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_replylab");

fn tiny_config_json(seed: u64) -> String {
    serde_json::json!({
        "seed": seed,
        "synthetic": {
            "n_atomic_intents": 4,
            "n_templates_per_intent": 3,
            "n_train": 100,
            "n_valid": 25,
            "n_test": 25
        },
        "encoder": {"epochs": 3, "batch": 16},
        "classifier": {"epochs": 4},
        "guidance": {"beams": 3, "max_len": 12},
        "methods": ["baseline", "nifty_intent"],
        "resamples": 100
    })
    .to_string()
}

fn run_in(dir: &Path, args: &[&str], stdin: Option<&str>) -> Output {
    let mut child = Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary spawns");
    if let Some(text) = stdin {
        child
            .stdin
            .as_mut()
            .expect("stdin is piped")
            .write_all(text.as_bytes())
            .expect("stdin accepts the script");
    }
    drop(child.stdin.take());
    child.wait_with_output().expect("binary exits")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout is utf-8")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("stderr is utf-8")
}

struct Workspace {
    dir: TempDir,
    config: PathBuf,
}

impl Workspace {
    fn config_arg(&self) -> &str {
        self.config.to_str().expect("tempdir paths are utf-8")
    }

    fn out_arg(&self) -> &str {
        self.dir.path().to_str().expect("tempdir paths are utf-8")
    }

    fn report(&self, name: &str) -> PathBuf {
        self.dir.path().join("reports").join(name)
    }
}

/// One fully trained tiny run shared by the read-only tests below.
fn trained() -> &'static Workspace {
    static WORKSPACE: OnceLock<Workspace> = OnceLock::new();
    WORKSPACE.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let config = dir.path().join("run.json");
        fs::write(&config, tiny_config_json(11)).expect("config written");
        let ws = Workspace { dir, config };
        for sub in [
            "gen-data",
            "train-retriever",
            "filter",
            "train-lm",
            "train-classifiers",
        ] {
            let out = run_in(
                ws.dir.path(),
                &[sub, "--config", ws.config_arg(), "--out", ws.out_arg()],
                None,
            );
            assert!(out.status.success(), "{sub} failed: {}", stderr_of(&out));
        }
        ws
    })
}

#[test]
fn gen_data_writes_three_splits_and_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["gen-data", "--seed", "7", "--out", "a"], None);
    assert!(out.status.success(), "{}", stderr_of(&out));

    let listed: Vec<PathBuf> = stdout_of(&out).lines().map(PathBuf::from).collect();
    assert_eq!(listed.len(), 3, "one stdout line per split");
    for path in &listed {
        assert!(dir.path().join(path).is_file(), "{} missing", path.display());
    }

    let again = run_in(dir.path(), &["gen-data", "--seed", "7", "--out", "b"], None);
    assert!(again.status.success());
    let other = run_in(dir.path(), &["gen-data", "--seed", "8", "--out", "c"], None);
    assert!(other.status.success());

    let train = |root: &str| fs::read(dir.path().join(root).join("data/train.jsonl")).unwrap();
    assert_eq!(train("a"), train("b"), "same seed, same bytes");
    assert_ne!(train("a"), train("c"), "different seed, different data");
}

#[test]
fn eval_scores_exactly_the_requested_methods() {
    let ws = trained();
    let out = run_in(
        ws.dir.path(),
        &[
            "eval",
            "--config",
            ws.config_arg(),
            "--out",
            ws.out_arg(),
            "--methods",
            "baseline,nifty_intent",
        ],
        None,
    );
    assert!(out.status.success(), "{}", stderr_of(&out));

    let stdout = stdout_of(&out);
    for name in ["eval-report.json", "eval-report.txt", "decode-traces.jsonl"] {
        assert!(stdout.contains(name), "stdout lacks {name}: {stdout}");
        assert!(ws.report(name).is_file(), "{name} not written");
    }

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ws.report("eval-report.json")).unwrap()).unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["method"], "baseline");
    assert_eq!(rows[1]["method"], "nifty_intent");
}

#[test]
fn eval_without_artifacts_names_the_missing_file_and_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let gen = run_in(dir.path(), &["gen-data", "--seed", "5", "--out", "."], None);
    assert!(gen.status.success());

    let out = run_in(dir.path(), &["eval", "--seed", "5", "--out", "."], None);
    assert_eq!(out.status.code(), Some(2));
    let stderr = stderr_of(&out);
    assert!(stderr.contains("missing artifact"), "{stderr}");
    assert!(stderr.contains("encoder.json"), "{stderr}");
    assert!(stdout_of(&out).is_empty(), "no paths on failure");
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["frobnicate"], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).to_lowercase().contains("usage"));
}

#[test]
fn missing_seed_and_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["gen-data"], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("--seed"), "{}", stderr_of(&out));
}

#[test]
fn sweep_alpha_honors_the_alpha_list() {
    let ws = trained();
    let out = run_in(
        ws.dir.path(),
        &[
            "sweep-alpha",
            "--config",
            ws.config_arg(),
            "--out",
            ws.out_arg(),
            "--alphas",
            "0.5,2.0",
        ],
        None,
    );
    assert!(out.status.success(), "{}", stderr_of(&out));

    let table: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ws.report("alpha-sweep.json")).unwrap()).unwrap();
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["alpha"], 0.5);
    assert_eq!(rows[1]["alpha"], 2.0);
}

/// Intents shown as `[label]` on the numbered suggestion lines of one
/// interaction block.
fn suggested_intents(block: &str) -> Vec<String> {
    block
        .lines()
        .filter(|l| l.contains(". ["))
        .map(|l| {
            let start = l.find('[').unwrap() + 1;
            let end = l.find(']').unwrap();
            l[start..end].to_string()
        })
        .collect()
}

#[test]
fn demo_accepts_rejects_reprompts_and_quits_cleanly() {
    let ws = trained();
    let script = "please book the room\nx\n2\nwhat time is the meeting\nr\nq\n";
    let out = run_in(
        ws.dir.path(),
        &[
            "demo",
            "--config",
            ws.config_arg(),
            "--out",
            ws.out_arg(),
        ],
        Some(script),
    );
    assert!(out.status.success(), "{}", stderr_of(&out));

    let stdout = stdout_of(&out);
    assert!(stdout.contains("enter a number in 1..3"), "{stdout}");
    assert!(stdout.contains("sent: "), "{stdout}");
    assert!(stdout.contains("baseline    : "), "{stdout}");
    assert!(stdout.contains("nifty_intent: ["), "{stdout}");

    let blocks: Vec<&str> = stdout.split("message (q quits)> ").collect();
    let reject_block = blocks
        .iter()
        .find(|b| b.contains("nifty_intent: ["))
        .expect("one interaction rejected the suggestions");
    let shown = suggested_intents(reject_block);
    assert_eq!(shown.len(), 3, "three numbered suggestions: {reject_block}");

    let steered_line = reject_block
        .lines()
        .find(|l| l.contains("nifty_intent: ["))
        .unwrap();
    let start = steered_line.find('[').unwrap() + 1;
    let end = steered_line.find(']').unwrap();
    let steered = &steered_line[start..end];
    assert!(
        !shown.iter().any(|z| z == steered),
        "steered intent {steered} was among the shown suggestions {shown:?}"
    );
}

#[test]
fn demo_treats_end_of_input_as_quit() {
    let ws = trained();
    let out = run_in(
        ws.dir.path(),
        &["demo", "--config", ws.config_arg(), "--out", ws.out_arg()],
        Some(""),
    );
    assert!(out.status.success(), "{}", stderr_of(&out));
}

#[test]
fn convert_rewrites_records_into_the_canonical_schema() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("raw.jsonl");
    let output = dir.path().join("clean.jsonl");
    fs::write(
        &input,
        concat!(
            "{\"id\":\"a\",\"message\":\"Hello THERE \",\"reply\":\"General Kenobi!\",\"intents\":[\"x-inform\"]}\n",
            "\n",
            "{\"id\":\"b\",\"message\":\"ok\",\"reply\":\"Fine, thanks.\",\"intents\":[\"x-request\",\"x-inform\"]}\n",
        ),
    )
    .unwrap();

    let out = run_in(
        dir.path(),
        &[
            "convert",
            "--input",
            input.to_str().unwrap(),
            "--output",
            output.to_str().unwrap(),
        ],
        None,
    );
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(stdout_of(&out).contains("clean.jsonl"));

    let text = fs::read_to_string(&output).unwrap();
    let lines: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2, "blank line dropped");
    assert_eq!(lines[0]["message"], "hello there");
    assert_eq!(lines[0]["reply"], "general kenobi !");
    assert_eq!(lines[1]["intents"][0], "x-inform", "atoms are sorted");
    assert_eq!(lines[1]["intents"][1], "x-request");
}

#[test]
fn convert_with_a_missing_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["convert", "--input", "absent.jsonl", "--output", "o.jsonl"],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!stderr_of(&out).is_empty());
}
