mod chat;
mod commands;
mod config;

use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

use config::{ConfigError, RunConfig, KEYS};

const EXIT_OTHER: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_CONFIG: u8 = 3;

fn config_args() -> Vec<Arg> {
    let mut args = vec![Arg::new("config").long("config").value_name("FILE").help("key=value settings file")];
    args.push(Arg::new("corpus").long("corpus").value_name("FILE").help("corpus file [default: <workdir>/corpus.txt]"));
    for k in KEYS {
        args.push(Arg::new(k.name).long(k.name).value_name("VALUE").help(k.help));
    }
    args
}

fn out_arg(help: &'static str) -> Arg {
    Arg::new("out").long("out").value_name("FILE").help(help)
}

fn cli() -> Command {
    let common = config_args();
    let sub = |name: &'static str, about: &'static str| Command::new(name).about(about).args(common.clone());
    Command::new("s2srl")
        .about("Seq2seq dialogue policy trained with MLE, mutual information and REINFORCE")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(sub("gen-corpus", "Generate the synthetic corpus").arg(out_arg("output [default: <workdir>/corpus.txt]")))
        .subcommand(sub("pretrain", "Train the forward model by maximum likelihood"))
        .subcommand(sub("train-backward", "Train the backward model by maximum likelihood"))
        .subcommand(sub("mi-train", "Mutual-information pretraining from the MLE checkpoint"))
        .subcommand(
            sub("rl-train", "Curriculum REINFORCE from the MI checkpoint")
                .arg(Arg::new("stage-checkpoints").long("stage-checkpoints").action(ArgAction::SetTrue).help("write rl_stage<N>.ckpt after every stage")),
        )
        .subcommand(
            sub("simulate", "Self-play from test inputs or given messages; writes episodes as JSON lines")
                .arg(Arg::new("model").long("model").value_name("CKPT").help("policy [default: <workdir>/rl.ckpt]"))
                .arg(Arg::new("input").long("input").value_name("TEXT").action(ArgAction::Append).help("initial message; repeatable"))
                .arg(Arg::new("sample").long("sample").action(ArgAction::SetTrue).help("sample candidates as in training instead of beam search"))
                .arg(out_arg("episode dump [default: stdout]")),
        )
        .subcommand(
            sub("eval", "Dialogue length and distinct-n on held-out test inputs")
                .arg(Arg::new("models").long("models").value_name("CKPTS").help("comma-separated checkpoints [default: mle, mi and rl in workdir]"))
                .arg(Arg::new("episodes").long("episodes").value_name("DIR").help("also write <tag>.episodes.jsonl per model"))
                .arg(out_arg("report [default: stdout]")),
        )
        .subcommand(
            sub("chat", "Talk to a policy; `/quit` exits")
                .arg(Arg::new("model").long("model").value_name("CKPT").help("policy [default: <workdir>/rl.ckpt]"))
                .arg(Arg::new("show-rewards").long("show-rewards").action(ArgAction::SetTrue).help("print r1, r2, r3 and the total for each reply"))
                .arg(Arg::new("script").long("script").value_name("FILE").help("read user lines from a file instead of stdin")),
        )
        .subcommand(sub("manifest", "Report which stage checkpoints exist and whether their vocabularies agree"))
}

/// Defaults, then the config file, then flags.
fn run_config(m: &ArgMatches) -> Result<RunConfig, ConfigError> {
    let mut rc = RunConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        rc.apply_file(path.as_ref())?;
    }
    if let Some(c) = m.get_one::<String>("corpus") {
        rc.set("corpus", c)?;
    }
    for k in KEYS {
        if let Some(v) = m.get_one::<String>(k.name) {
            rc.set(k.name, v)?;
        }
    }
    rc.validate()?;
    Ok(rc)
}

fn exit_code(e: &anyhow::Error) -> (u8, &'static str) {
    if e.downcast_ref::<ConfigError>().is_some() {
        return (EXIT_CONFIG, "config");
    }
    match e.downcast_ref::<s2srl::Error>() {
        Some(s2srl::Error::MissingStage { .. }) => (EXIT_CONFIG, "missing_stage"),
        Some(s2srl::Error::VocabMismatch(_)) => (EXIT_CONFIG, "vocab_mismatch"),
        Some(err) if err.is_config() => (EXIT_CONFIG, "config"),
        Some(s2srl::Error::Io(_)) => (EXIT_OTHER, "io"),
        Some(_) => (EXIT_OTHER, "runtime"),
        None if e.downcast_ref::<std::io::Error>().is_some() => (EXIT_OTHER, "io"),
        None => (EXIT_OTHER, "runtime"),
    }
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let result = run_config(sub).map_err(anyhow::Error::from).and_then(|rc| {
        for (k, v) in rc.entries() {
            eprintln!("config {k}={v}");
        }
        commands::run(name, sub, &rc)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, kind) = exit_code(&e);
            let line = serde_json::json!({ "error": kind, "command": name, "message": format!("{e:#}") });
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}
