use o2m_core::corpus::{load_corpus, LoadOptions};
use o2m_core::odrp::OdrpModel;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const MOCK: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/mock.toml");
const JUDGMENTS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/judgments.jsonl");

fn o2m(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_o2m")).current_dir(dir).args(args).output().expect("run o2m")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = o2m(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A 10-sample fixture corpus with preferences.
fn fixture(dir: &Path) -> (PathBuf, PathBuf) {
    ok(dir, &["fixture", "--seed", "42", "--count", "10", "--out", "corpus.jsonl", "--preferences", "prefs.jsonl"]);
    (dir.join("corpus.jsonl"), dir.join("prefs.jsonl"))
}

fn two_contexts(dir: &Path) -> PathBuf {
    let (corpus, _) = fixture(dir);
    let text = fs::read_to_string(corpus).unwrap();
    let path = dir.join("contexts.jsonl");
    fs::write(&path, text.lines().take(2).map(|l| format!("{l}\n")).collect::<String>()).unwrap();
    path
}

#[test]
fn help_exits_zero_without_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in
        ["fixture", "generate", "metrics", "evaluate", "select", "demos", "train", "tally", "significance", "serve"]
    {
        let out = o2m(dir.path(), &[cmd, "--help"]);
        assert_eq!(code(&out), 0, "{cmd}");
        assert!(!out.stdout.is_empty());
    }
    assert_eq!(code(&o2m(dir.path(), &["--help"])), 0);
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn bad_flags_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&o2m(dir.path(), &["generate"])), 1);
    assert_eq!(code(&o2m(dir.path(), &["nonsense"])), 1);
    assert_eq!(code(&o2m(dir.path(), &["fixture", "--count", "many"])), 1);
}

#[test]
fn fixture_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["fixture", "--seed", "42", "--count", "10", "--out", "a.jsonl"]);
    ok(dir.path(), &["fixture", "--seed", "42", "--count", "10", "--out", "b.jsonl"]);
    let a = fs::read(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.jsonl")).unwrap());
    assert_eq!(a.iter().filter(|b| **b == b'\n').count(), 10);
    let stdout = ok(dir.path(), &["fixture", "--seed", "42", "--count", "10"]);
    assert_eq!(stdout.as_bytes(), a.as_slice());
}

#[test]
fn generate_pc_writes_full_sets() {
    let dir = tempfile::tempdir().unwrap();
    let contexts = two_contexts(dir.path());
    let out = o2m(
        dir.path(),
        &["generate", "--strategy", "pc", "--n", "5", "--input", contexts.to_str().unwrap(), "--output", "sets.jsonl",
          "--log", "log.jsonl", "--config", MOCK],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("[2/2]"));
    let sets = load_corpus(dir.path().join("sets.jsonl"), &LoadOptions::with_n(5)).unwrap();
    assert_eq!(sets.len(), 2);
    assert!(sets.iter().all(|s| s.responses.n() == 5 && s.responses.present_count() == 5));
    let log = fs::read_to_string(dir.path().join("log.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["log"]["calls"], 5);
}

#[test]
fn generate_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let contexts = two_contexts(dir.path());
    let c = contexts.to_str().unwrap();
    for (name, seed) in [("a.jsonl", "3"), ("b.jsonl", "3"), ("c.jsonl", "4")] {
        ok(dir.path(), &["generate", "--strategy", "mi", "--input", c, "--output", name, "--seed", seed, "--config", MOCK]);
    }
    let read = |n: &str| fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
    assert_ne!(read("a.jsonl"), read("c.jsonl"));
}

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let contexts = two_contexts(dir.path());
    let out = o2m(dir.path(), &["generate", "--input", contexts.to_str().unwrap(), "--output", "x.jsonl"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("o2m.toml"), "{}", stderr(&out));
    let out = o2m(
        dir.path(),
        &["generate", "--input", contexts.to_str().unwrap(), "--output", "x.jsonl", "--config", "elsewhere/b.toml"],
    );
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("elsewhere/b.toml"));
    assert!(!dir.path().join("x.jsonl").exists());
}

#[test]
fn set_strategy_needs_two_slots() {
    let dir = tempfile::tempdir().unwrap();
    let contexts = two_contexts(dir.path());
    let out = o2m(
        dir.path(),
        &["generate", "--strategy", "fs", "--n", "1", "--input", contexts.to_str().unwrap(), "--output", "x.jsonl",
          "--config", MOCK],
    );
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("n >= 2"));
    let out = o2m(
        dir.path(),
        &["generate", "--strategy", "pc", "--shots", "2", "--input", contexts.to_str().unwrap(), "--output", "x.jsonl",
          "--config", MOCK],
    );
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_input_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = o2m(dir.path(), &["generate", "--input", "absent.jsonl", "--output", "x.jsonl", "--config", MOCK]);
    assert_eq!(code(&out), 2);
    fs::write(dir.path().join("broken.jsonl"), "{not json\n").unwrap();
    let out = o2m(dir.path(), &["generate", "--input", "broken.jsonl", "--output", "x.jsonl", "--config", MOCK]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 1"));
}

#[test]
fn unreachable_backend_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let contexts = two_contexts(dir.path());
    fs::write(
        dir.path().join("down.toml"),
        "[chat]\nprovider = \"openai\"\nbase_url = \"http://127.0.0.1:9/v1\"\nmax_retries = 1\nbackoff_ms = 1\n\
         timeout_ms = 500\n[embed]\nprovider = \"mock\"\n[nli]\nprovider = \"mock\"\n",
    )
    .unwrap();
    let out = o2m(
        dir.path(),
        &["generate", "--input", contexts.to_str().unwrap(), "--output", "x.jsonl", "--config", "down.toml"],
    );
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(!dir.path().join("x.jsonl").exists());
}

#[test]
fn train_defaults_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let args = |out: &'static str| {
        vec!["train", "--prefs", "prefs.jsonl", "--contexts", "corpus.jsonl", "--seed", "5", "--out", out, "--config", MOCK]
    };
    ok(dir.path(), &args("m1.json"));
    ok(dir.path(), &args("m2.json"));
    let m1 = fs::read(dir.path().join("m1.json")).unwrap();
    assert_eq!(m1, fs::read(dir.path().join("m2.json")).unwrap());
    let model = OdrpModel::load(dir.path().join("m1.json")).unwrap();
    let meta = model.training_meta.unwrap();
    assert_eq!((meta.epochs, meta.learning_rate, meta.seed, meta.hard_negative), (2, 2e-4, 5, false));
    let trace = fs::read_to_string(dir.path().join("m1.json.loss.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "epoch,loss");
    assert_eq!(lines.len(), 3);
}

#[test]
fn hard_negatives_need_a_base_model() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let out = o2m(
        dir.path(),
        &["train", "--prefs", "prefs.jsonl", "--contexts", "corpus.jsonl", "--hard-negatives", "--out", "hn.json",
          "--config", MOCK],
    );
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("base-model"));
    ok(dir.path(), &["train", "--prefs", "prefs.jsonl", "--contexts", "corpus.jsonl", "--out", "base.json", "--config", MOCK]);
    ok(
        dir.path(),
        &["train", "--prefs", "prefs.jsonl", "--contexts", "corpus.jsonl", "--hard-negatives", "--base-model",
          "base.json", "--out", "hn.json", "--trace", "hn.csv", "--config", MOCK],
    );
    let meta = OdrpModel::load(dir.path().join("hn.json")).unwrap().training_meta.unwrap();
    assert_eq!((meta.epochs, meta.hard_negative), (4, true));
    // 100 fixture pairs, half mined.
    assert_eq!(meta.pairs, 50);
    assert_eq!(fs::read_to_string(dir.path().join("hn.csv")).unwrap().lines().count(), 5);
}

#[test]
fn divergent_training_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let out = o2m(
        dir.path(),
        &["train", "--prefs", "prefs.jsonl", "--contexts", "corpus.jsonl", "--lr", "1e300", "--out", "m.json",
          "--config", MOCK],
    );
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(!dir.path().join("m.json").exists());
}

#[test]
fn demos_prints_k_ids_in_ascending_score_order() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let stdout = ok(dir.path(), &["demos", "--input", "corpus.jsonl", "--k", "3", "--scores", "--config", MOCK]);
    let rows: Vec<(String, f64)> = stdout
        .lines()
        .map(|l| {
            let (id, s) = l.split_once('\t').unwrap();
            (id.to_string(), s.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.windows(2).all(|w| w[0].1 <= w[1].1));
    let ids = ok(dir.path(), &["demos", "--input", "corpus.jsonl", "--k", "3", "--config", MOCK]);
    assert_eq!(ids.lines().collect::<Vec<_>>(), rows.iter().map(|r| r.0.as_str()).collect::<Vec<_>>());
    let out = o2m(dir.path(), &["demos", "--input", "corpus.jsonl", "--k", "11", "--config", MOCK]);
    assert_ne!(code(&out), 0);
}

#[test]
fn tally_reproduces_hand_counts() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["tally", "--input", JUDGMENTS]);
    // Hand tally of the fixture: 11/5/4 of 20, 17/2/1 of 20, 7/6/2 of 15.
    assert_eq!(
        stdout,
        "comparison_id,judgments,win,tie,loss\nodrp_vs_base,20,55,25,20\nodrp_vs_rand,20,85,10,5\nodrp_hn_vs_odrp,15,47,40,13\n"
    );
    fs::write(dir.path().join("bad.jsonl"), "{\"comparison_id\":\"x\",\"verdict\":\"draw\"}\n").unwrap();
    let out = o2m(dir.path(), &["tally", "--input", "bad.jsonl"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("draw"));
}

#[test]
fn evaluate_select_and_significance() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    ok(dir.path(), &["train", "--prefs", "prefs.jsonl", "--contexts", "corpus.jsonl", "--out", "m.json", "--config", MOCK]);
    let table = ok(
        dir.path(),
        &["evaluate", "--sets", "corpus.jsonl", "--selector", "rand,odrp", "--model", "m.json", "--records",
          "records.jsonl", "--config", MOCK],
    );
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "system,Dist-1,Dist-2,UE,UniEval");
    assert!(lines[1].starts_with("rand,") && lines[2].starts_with("odrp,"));
    let records = fs::read_to_string(dir.path().join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 20);

    let picks = ok(dir.path(), &["select", "--input", "corpus.jsonl", "--model", "m.json", "--config", MOCK]);
    assert_eq!(picks.lines().count(), 10);
    let first: serde_json::Value = serde_json::from_str(picks.lines().next().unwrap()).unwrap();
    assert_eq!(first["scores"].as_array().unwrap().len(), 5);

    let (a, b): (Vec<&str>, Vec<&str>) = records.lines().partition(|l| l.contains("\"selector_name\":\"rand\""));
    fs::write(dir.path().join("a.jsonl"), a.join("\n")).unwrap();
    fs::write(dir.path().join("b.jsonl"), b.join("\n")).unwrap();
    let result = ok(dir.path(), &["significance", "--a", "a.jsonl", "--b", "a.jsonl"]);
    let v: serde_json::Value = serde_json::from_str(&result).unwrap();
    assert_eq!((v["p_value"].as_f64(), v["significant"].as_bool()), (Some(1.0), Some(false)));
    let result = ok(dir.path(), &["significance", "--a", "a.jsonl", "--b", "b.jsonl", "--test", "paired", "--metric", "d-lex"]);
    assert!(result.contains("\"test\":\"paired\""));
}

#[test]
fn evaluate_generates_when_given_contexts() {
    let dir = tempfile::tempdir().unwrap();
    let contexts = two_contexts(dir.path());
    let table = ok(
        dir.path(),
        &["evaluate", "--input", contexts.to_str().unwrap(), "--strategy", "mi", "--n", "3", "--selector", "rand",
          "--selector", "base", "--summary", "t.csv", "--config", MOCK],
    );
    assert!(table.is_empty());
    let csv = fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let out = o2m(
        dir.path(),
        &["evaluate", "--input", contexts.to_str().unwrap(), "--selector", "odrp", "--config", MOCK],
    );
    assert_eq!(code(&out), 1);
}
