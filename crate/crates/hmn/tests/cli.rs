//! Binary-level checks: exit codes, determinism of generated artifacts, the
//! train/evaluate/generate flow and the REPL.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::OnceLock;

fn hmn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hmn"))
}

fn run(args: &[&str]) -> Output {
    hmn().args(args).output().expect("spawn hmn")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    entries.sort();
    entries
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn gen_data_is_deterministic_and_reports_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let output = run(&[
            "gen-data",
            "--entities",
            "6",
            "--dialogs",
            "18",
            "--oov-frac",
            "0.5",
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_code(&output, 0);
        let stdout = String::from_utf8_lossy(&output.stdout);
        assert!(stdout.contains("train: 18 dialogues"), "{stdout}");
        assert!(stdout.contains("entities:"), "{stdout}");
    }
    assert_eq!(read_dir_bytes(&a), read_dir_bytes(&b), "reruns must be byte-identical");
    for f in ["train.jsonl", "dev.jsonl", "test.jsonl", "test-oov.jsonl", "entities.txt"] {
        assert!(a.join(f).exists(), "{f} missing");
    }
}

#[test]
fn gen_data_validates_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let bad_frac = run(&[
        "gen-data",
        "--entities",
        "6",
        "--dialogs",
        "10",
        "--oov-frac",
        "1.5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_code(&bad_frac, 2);
    let bad_task = run(&[
        "gen-data",
        "--task",
        "quiz",
        "--entities",
        "6",
        "--dialogs",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_code(&bad_task, 2);
    let unknown_flag = run(&["gen-data", "--no-such-flag"]);
    assert_code(&unknown_flag, 2);
}

#[test]
fn train_requires_a_config() {
    let missing = run(&["train"]);
    assert_code(&missing, 2);
    let absent = run(&["train", "--config", "/nonexistent/config.toml"]);
    assert_code(&absent, 2);
}

#[test]
fn evaluate_with_bad_checkpoint_fails_at_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let fake = dir.path().join("model.hmn");
    std::fs::write(&fake, b"HMN1junkjunkjunk").unwrap();
    let out = run(&[
        "evaluate",
        "--ckpt",
        fake.to_str().unwrap(),
        "--data",
        dir.path().to_str().unwrap(),
    ]);
    assert_code(&out, 1);
}

struct Trained {
    _dir: tempfile::TempDir,
    data: PathBuf,
    ckpt: PathBuf,
    out: PathBuf,
}

fn trained() -> &'static Trained {
    static FIXTURE: OnceLock<Trained> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let out = dir.path().join("run");
        assert_code(
            &run(&[
                "gen-data",
                "--entities",
                "6",
                "--dialogs",
                "30",
                "--oov-frac",
                "0.3",
                "--seed",
                "3",
                "--out",
                data.to_str().unwrap(),
            ]),
            0,
        );
        let config = dir.path().join("train.toml");
        std::fs::write(
            &config,
            "embed_dim = 16\nbatch_size = 8\nepochs = 4\nseed = 3\nearly_stop_patience = 0\n",
        )
        .unwrap();
        let output = run(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_code(&output, 0);
        let stdout = String::from_utf8_lossy(&output.stdout);
        assert!(stdout.contains("dev per_response"), "{stdout}");
        Trained {
            data,
            ckpt: out.join("model.hmn"),
            out,
            _dir: dir,
        }
    })
}

#[test]
fn train_writes_checkpoint_and_loss_log() {
    let t = trained();
    assert!(t.ckpt.exists());
    let csv = std::fs::read_to_string(t.out.join("loss.csv")).unwrap();
    assert!(csv.starts_with("epoch,split,loss"));
    assert_eq!(csv.matches(",train,").count(), 4, "one train row per epoch");
    assert_eq!(csv.matches(",dev,").count(), 4);
}

#[test]
fn evaluate_is_deterministic_and_writes_diagnostics() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let r1 = dir.path().join("r1.json");
    let r2 = dir.path().join("r2.json");
    for r in [&r1, &r2] {
        let out = run(&[
            "evaluate",
            "--ckpt",
            t.ckpt.to_str().unwrap(),
            "--data",
            t.data.to_str().unwrap(),
            "--split",
            "test",
            "--report",
            r.to_str().unwrap(),
        ]);
        assert_code(&out, 0);
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(stdout.contains("per_response:"), "{stdout}");
        assert!(stdout.contains("bleu:"), "{stdout}");
        assert!(stdout.contains("entity_f1:"), "{stdout}");
    }
    let b1 = std::fs::read(&r1).unwrap();
    assert_eq!(b1, std::fs::read(&r2).unwrap(), "report bytes must match");
    let report: serde_json::Value = serde_json::from_slice(&b1).unwrap();
    let diag = report["diagnostics"].as_array().unwrap();
    assert!(!diag.is_empty());
    for d in diag {
        let generated = d["generated"].as_array().unwrap();
        let sources = d["sources"].as_array().unwrap();
        assert_eq!(generated.len(), sources.len(), "a tag per generated word");
        for s in sources {
            assert!(matches!(s.as_str().unwrap(), "his" | "kb" | "vocab"));
        }
    }
}

#[test]
fn generate_emits_tagged_jsonl() {
    let t = trained();
    let out = run(&[
        "generate",
        "--ckpt",
        t.ckpt.to_str().unwrap(),
        "--data",
        t.data.to_str().unwrap(),
        "--split",
        "dev",
    ]);
    assert_code(&out, 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let mut lines = 0;
    for line in stdout.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["dialogue_id"].is_string());
        assert_eq!(
            v["generated"].as_array().unwrap().len(),
            v["sources"].as_array().unwrap().len()
        );
        lines += 1;
    }
    assert!(lines > 0);
}

#[test]
fn chat_supports_meta_commands_and_tagged_replies() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let kb = dir.path().join("kb.txt");
    std::fs::write(&kb, "resto_1 phone resto_1_phone\nresto_1 address resto_1_address\n").unwrap();

    let mut child = hmn()
        .args(["chat", "--ckpt", t.ckpt.to_str().unwrap(), "--kb", kb.to_str().unwrap()])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    write!(
        stdin,
        "hello\nwhat is the phone of resto_1\n:reset\n:kb /nonexistent/file\nhi again\n:quit\n"
    )
    .unwrap();
    drop(stdin);
    let out = child.wait_with_output().unwrap();
    assert_code(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let sys_lines = stdout.matches("sys>").count();
    assert_eq!(sys_lines, 3, "one reply per user line: {stdout}");
    assert!(stdout.contains("history cleared"), "{stdout}");
    assert!(stdout.contains("kb not loaded"), "{stdout}");
    // Replies carry per-word source tags.
    let first_reply = stdout.lines().find(|l| l.contains("sys>")).unwrap();
    assert!(
        first_reply.contains("[vocab]") || first_reply.contains("[his]") || first_reply.contains("[kb]"),
        "{first_reply}"
    );
}

#[test]
fn chat_with_missing_checkpoint_fails_at_runtime() {
    let out = hmn()
        .args(["chat", "--ckpt", "/nonexistent/model.hmn"])
        .stdin(Stdio::null())
        .output()
        .unwrap();
    assert_code(&out, 1);
}
