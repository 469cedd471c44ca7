use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::io::Write;

const TINY: &str = "\
dialogues = 200
epochs = 1
hidden_dim = 8
embed_dim = 4
holdout_dialogues = 600
test_inputs = 5
iterations_per_stage = 2
rl_episodes_per_update = 2
mi_batch_size = 8
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_s2srl"))
}

fn workdir() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(&conf, format!("workdir = {}\n{TINY}", dir.path().display())).unwrap();
    (dir, conf)
}

fn run(conf: &Path, args: &[&str]) -> Output {
    bin().args(args).arg("--config").arg(conf).output().unwrap()
}

fn ok(conf: &Path, args: &[&str]) -> Output {
    let out = run(conf, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn error_line(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().expect("an error line");
    serde_json::from_str(last).unwrap_or_else(|e| panic!("not JSON ({e}): {last}"))
}

fn trained() -> (tempfile::TempDir, PathBuf) {
    let (dir, conf) = workdir();
    for stage in ["gen-corpus", "pretrain", "train-backward", "mi-train", "rl-train"] {
        ok(&conf, &[stage]);
    }
    (dir, conf)
}

#[test]
fn gen_corpus_is_deterministic() {
    let (dir, conf) = workdir();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    ok(&conf, &["gen-corpus", "--seed", "1", "--out", a.to_str().unwrap()]);
    ok(&conf, &["gen-corpus", "--seed", "1", "--out", b.to_str().unwrap()]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let c = dir.path().join("c.txt");
    ok(&conf, &["gen-corpus", "--seed", "2", "--out", c.to_str().unwrap()]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn rl_train_needs_mi_checkpoint() {
    let (_dir, conf) = workdir();
    ok(&conf, &["gen-corpus"]);
    ok(&conf, &["pretrain"]);
    ok(&conf, &["train-backward"]);
    let out = run(&conf, &["rl-train"]);
    assert_eq!(out.status.code(), Some(3));
    let e = error_line(&out);
    assert_eq!(e["error"], "missing_stage");
    assert!(e["message"].as_str().unwrap().contains("`mi`"));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = bin().args(["pretrain", "--learnign_rate", "0.1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_config_error() {
    let (dir, _) = workdir();
    let conf = dir.path().join("bad.conf");
    fs::write(&conf, "seed = 1\nlearnign_rate = 0.1\n").unwrap();
    let out = run(&conf, &["gen-corpus"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(error_line(&out)["message"].as_str().unwrap().contains("learnign_rate"));
}

#[test]
fn invalid_value_is_config_error() {
    let (_dir, conf) = workdir();
    let out = run(&conf, &["gen-corpus", "--lambda_coherence", "0.9"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["error"], "config");
}

#[test]
fn flags_override_file_and_config_is_echoed() {
    let (_dir, conf) = workdir();
    let out = ok(&conf, &["gen-corpus", "--dialogues", "17"]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.lines().any(|l| l == "config dialogues=17"), "{stderr}");
    assert!(stderr.lines().any(|l| l == "config hidden_dim=8"), "{stderr}");
    assert!(stderr.contains("17 dialogues"));
}

#[test]
fn manifest_of_fresh_dir_lists_all_stages_absent() {
    let (_dir, conf) = workdir();
    let out = ok(&conf, &["manifest"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.split('\t').nth(1) == Some("false")));
}

#[test]
fn full_pipeline_then_eval_chat_and_manifest() {
    let (dir, conf) = trained();

    let out = ok(&conf, &["manifest"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().skip(1).all(|r| r.split('\t').nth(1) == Some("true")), "{text}");

    let models = ["mle", "mi", "rl"].map(|s| dir.path().join(format!("{s}.ckpt")).display().to_string()).join(",");
    let out = ok(&conf, &["eval", "--models", &models]);
    let report = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "model\tavg_len\tdistinct1\tdistinct2\tn_episodes");
    assert_eq!(lines.len(), 4);
    assert_eq!(lines.iter().skip(1).map(|l| l.split('\t').next().unwrap()).collect::<Vec<_>>(), ["mle", "mi", "rl"]);
    assert!(lines[1..].iter().all(|l| l.ends_with("\t5")));

    let training_log = fs::read_to_string(dir.path().join("training_log.tsv")).unwrap();
    assert_eq!(training_log.lines().count(), 1 + 4 * 2);
    let stages = fs::read_to_string(dir.path().join("rl_stages.tsv")).unwrap();
    let limits: Vec<&str> = stages.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(limits, ["2", "3", "4", "5"]);

    let out = ok(&conf, &["simulate", "--input", "do you like tea", "--input", "i read comics"]);
    let dumps: Vec<serde_json::Value> =
        String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(dumps.len(), 2);
    assert_eq!(dumps[0]["initial"], "do you like tea");
    assert!(dumps.iter().all(|d| d["cause"].is_string() && d["turns"].as_array().unwrap().len() <= 8));

    // A checkpoint built on another vocabulary breaks the manifest.
    let other = dir.path().join("other");
    fs::create_dir(&other).unwrap();
    let other_conf = other.join("run.conf");
    fs::write(&other_conf, format!("workdir = {}\n{TINY}seed = 99\ndialogues = 30\n", other.display())).unwrap();
    ok(&other_conf, &["gen-corpus"]);
    ok(&other_conf, &["pretrain"]);
    fs::copy(other.join("mle.ckpt"), dir.path().join("mle.ckpt")).unwrap();
    let out = run(&conf, &["manifest"]);
    assert_eq!(out.status.code(), Some(3));
    let e = error_line(&out);
    assert_eq!(e["error"], "vocab_mismatch");
    assert!(e["message"].as_str().unwrap().contains("mle="));
}

fn chat(conf: &Path, script: &str, extra: &[&str]) -> Output {
    let mut child = bin()
        .arg("chat")
        .args(extra)
        .arg("--config")
        .arg(conf)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(script.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

#[test]
fn chat_transcripts() {
    let (dir, conf) = trained();

    let out = chat(&conf, "/quit\n", &[]);
    assert_eq!(out.status.code(), Some(0));

    let script = "do you like tea\ni read comics\n/quit\n";
    let a = chat(&conf, script, &["--show-rewards"]);
    let b = chat(&conf, script, &["--show-rewards"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.starts_with("> do you like tea\n< "), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("< ")).count(), 2);
    assert_eq!(text.lines().filter(|l| l.starts_with("# r1=")).count(), 2);

    // A blank line re-prompts and leaves the dialogue where it was.
    let with_blank = chat(&conf, "do you like tea\n\ni read comics\n/quit\n", &[]);
    let without = chat(&conf, "do you like tea\ni read comics\n/quit\n", &[]);
    let replies = |o: &Output| -> Vec<String> {
        String::from_utf8_lossy(&o.stdout).lines().filter(|l| l.starts_with("< ")).map(String::from).collect()
    };
    assert_eq!(replies(&with_blank), replies(&without));

    // Out-of-vocabulary words do not crash the session.
    let out = chat(&conf, "zyxxy plover\n/quit\n", &[]);
    assert!(out.status.success());

    // Scripts may come from a file too.
    let file = dir.path().join("script.txt");
    fs::write(&file, script).unwrap();
    let out = ok(&conf, &["chat", "--script", file.to_str().unwrap()]);
    assert_eq!(replies(&out), replies(&chat(&conf, script, &[])));
}

#[test]
fn stages_are_reproducible() {
    let (d1, c1) = trained();
    let (d2, c2) = trained();
    for f in ["corpus.txt", "vocab.txt", "mle.ckpt", "backward.ckpt", "mi.ckpt", "rl.ckpt", "training_log.tsv"] {
        assert_eq!(fs::read(d1.path().join(f)).unwrap(), fs::read(d2.path().join(f)).unwrap(), "{f}");
    }
    let e1 = ok(&c1, &["eval"]).stdout;
    let e2 = ok(&c2, &["eval"]).stdout;
    assert_eq!(e1, e2);
    let s1 = ok(&c1, &["simulate", "--sample"]).stdout;
    let s2 = ok(&c2, &["simulate", "--sample"]).stdout;
    assert_eq!(s1, s2);
}
