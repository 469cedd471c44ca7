use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, IsTerminal, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ArgMatches;
use s2srl::corpus::{corpus_to_string, generate_synthetic_corpus, parse_corpus};
use s2srl::eval::reports_to_tsv;
use s2srl::model::checkpoint::{load_checkpoint, save_checkpoint};
use s2srl::pipeline::{self, pipeline_manifest, CorpusData, Manifest};
use s2srl::rl::{simulate_dialogue, Decoding, Episode, SimConfig, StageSnapshot, UpdateLog};
use s2srl::{Direction, DullSet, Error, ModelParams, RewardModel, RngStream, Utterance, Vocab};

use crate::chat::{chat_repl, ChatOptions};
use crate::config::{ConfigError, RunConfig};

const SIMULATE_STREAM: u64 = 7;
const VOCAB_FILE: &str = "vocab.txt";

pub fn run(name: &str, m: &ArgMatches, rc: &RunConfig) -> Result<()> {
    match name {
        "gen-corpus" => gen_corpus(m, rc),
        "pretrain" => pretrain(rc, Direction::Forward),
        "train-backward" => pretrain(rc, Direction::Backward),
        "mi-train" => mi_train(rc),
        "rl-train" => rl_train(m, rc),
        "simulate" => simulate(m, rc),
        "eval" => eval(m, rc),
        "chat" => chat(m, rc),
        "manifest" => manifest(rc),
        other => unreachable!("clap rejects unknown subcommand {other}"),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn save(params: &ModelParams, path: &Path) -> Result<()> {
    fs::create_dir_all(path.parent().unwrap_or(Path::new(".")))?;
    save_checkpoint(params, path)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn load_corpus(rc: &RunConfig) -> Result<CorpusData> {
    let path = rc.corpus_path();
    let text = fs::read_to_string(&path)
        .map_err(|e| ConfigError(format!("corpus {} unreadable ({e}); run gen-corpus first", path.display())))?;
    Ok(CorpusData::build(parse_corpus(&text)?, rc.pipeline.max_vocab)?)
}

fn load_vocab(rc: &RunConfig) -> Result<Vocab> {
    let path = rc.path(VOCAB_FILE);
    if !path.exists() {
        return Err(ConfigError(format!("{} missing; run pretrain first", path.display())).into());
    }
    Ok(Vocab::load(&path)?)
}

fn stage(manifest: &Manifest, name: &str) -> Result<ModelParams> {
    Ok(load_checkpoint(manifest.require(name)?)?)
}

fn load_policy(path: &Path, vocab: &Vocab) -> Result<ModelParams> {
    let params = load_checkpoint(path)?;
    if params.vocab_hash() != vocab.hash() {
        return Err(Error::VocabMismatch(format!(
            "{} has vocab {}, {} has {}",
            path.display(),
            params.vocab_hash(),
            VOCAB_FILE,
            vocab.hash()
        ))
        .into());
    }
    if params.direction() != Direction::Forward {
        return Err(Error::Config(format!("{} is a {} model, not a policy", path.display(), params.direction())).into());
    }
    Ok(params)
}

fn model_arg(m: &ArgMatches, rc: &RunConfig) -> PathBuf {
    m.get_one::<String>("model").map(PathBuf::from).unwrap_or_else(|| rc.path("rl.ckpt"))
}

fn gen_corpus(m: &ArgMatches, rc: &RunConfig) -> Result<()> {
    let out = m.get_one::<String>("out").map(PathBuf::from).unwrap_or_else(|| rc.corpus_path());
    let raw = generate_synthetic_corpus(&rc.pipeline.grammar, rc.pipeline.seed)?;
    write_file(&out, &corpus_to_string(&raw))?;
    let turns: usize = raw.iter().map(Vec::len).sum();
    eprintln!("wrote {} ({} dialogues, {turns} turns)", out.display(), raw.len());
    Ok(())
}

fn pretrain(rc: &RunConfig, direction: Direction) -> Result<()> {
    let data = load_corpus(rc)?;
    let (params, report) = match direction {
        Direction::Forward => pipeline::pretrain(&data, &rc.pipeline)?,
        Direction::Backward => pipeline::train_backward(&data, &rc.pipeline)?,
    };
    for (i, loss) in report.epoch_losses.iter().enumerate() {
        eprintln!("epoch {}\tloss {loss:.6}", i + 1);
    }
    fs::create_dir_all(&rc.workdir)?;
    data.vocab.save(&rc.path(VOCAB_FILE))?;
    let file = if direction == Direction::Forward { "mle.ckpt" } else { "backward.ckpt" };
    save(&params, &rc.path(file))
}

fn mi_train(rc: &RunConfig) -> Result<()> {
    let manifest = pipeline_manifest(&rc.workdir)?;
    let (mle, backward) = (stage(&manifest, "mle")?, stage(&manifest, "backward")?);
    let data = load_corpus(rc)?;
    let (mi, report) = pipeline::mi_train(&data, &mle, &backward, &rc.pipeline)?;
    for (i, (r3, loss)) in report.mean_r3.iter().zip(&report.mle_losses).enumerate() {
        eprintln!("epoch {}\tmean_r3 {r3:.6}\tmle_loss {loss:.6}", i + 1);
    }
    save(&mi, &rc.path("mi.ckpt"))
}

fn stage_row(s: &StageSnapshot) -> String {
    let cands: Vec<String> = s.candidates_observed.iter().map(usize::to_string).collect();
    format!(
        "{}\t{}\t{}\t{}\t{:.6}\t{:.4}\t{}\t{}",
        s.turn_limit,
        s.candidates_per_step,
        s.iterations,
        s.episodes,
        s.mean_return,
        s.mean_length,
        cands.join(","),
        s.max_turns_observed
    )
}

fn rl_train(m: &ArgMatches, rc: &RunConfig) -> Result<()> {
    let manifest = pipeline_manifest(&rc.workdir)?;
    let mi = stage(&manifest, "mi")?;
    let (mle, backward) = (stage(&manifest, "mle")?, stage(&manifest, "backward")?);
    let data = load_corpus(rc)?;
    let inputs = pipeline::training_inputs(&data, &mle, &rc.pipeline)?;
    eprintln!("{} training inputs", inputs.len());
    let write_stages = m.get_flag("stage-checkpoints");
    let mut stages = String::from(
        "turn_limit\tcandidates_per_step\titerations\tepisodes\tmean_return\tmean_length\tcandidates_observed\tmax_turns_observed\n",
    );
    let outcome = pipeline::rl_train(&data.vocab, &mi, &mle, &backward, &inputs, &rc.pipeline, |s, params| {
        let row = stage_row(s);
        eprintln!("stage {row}");
        writeln!(stages, "{row}").unwrap();
        if write_stages {
            save_checkpoint(params, &rc.path(&format!("rl_stage{}.ckpt", s.turn_limit)))?;
        }
        Ok(())
    })?;
    write_file(&rc.path("rl_stages.tsv"), &stages)?;
    write_file(&rc.path("training_log.tsv"), &UpdateLog::to_tsv(&outcome.log))?;
    save(&outcome.params, &rc.path("rl.ckpt"))
}

fn episode_lines(episodes: &[Episode], vocab: &Vocab) -> Result<String> {
    let mut s = String::new();
    for e in episodes {
        s.push_str(&serde_json::to_string(&e.to_record(vocab))?);
        s.push('\n');
    }
    Ok(s)
}

fn emit(out: Option<&String>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            write_file(path.as_ref(), text)?;
            eprintln!("wrote {path}");
            Ok(())
        }
        None => Ok(io::stdout().write_all(text.as_bytes())?),
    }
}

fn simulate(m: &ArgMatches, rc: &RunConfig) -> Result<()> {
    let vocab = load_vocab(rc)?;
    let manifest = pipeline_manifest(&rc.workdir)?;
    let (mle, backward) = (stage(&manifest, "mle")?, stage(&manifest, "backward")?);
    let policy = load_policy(&model_arg(m, rc), &vocab)?;
    let inputs: Vec<Utterance> = match m.get_many::<String>("input") {
        Some(texts) => texts.map(|t| vocab.encode(t)).collect::<s2srl::Result<_>>()?,
        None => pipeline::test_inputs(&vocab, &mle, &rc.pipeline)?,
    };
    let cfg = &rc.pipeline;
    let sim = if m.get_flag("sample") {
        SimConfig {
            decoding: Decoding::Sample {
                candidates: cfg.schedule.candidates_per_step,
                temperature: cfg.rl.temperature,
                selection: cfg.rl.selection,
            },
            max_decode_len: cfg.rl.max_decode_len,
            rule: cfg.rule(&vocab),
        }
    } else {
        cfg.eval_sim(&vocab)
    };
    let dull = DullSet::default_for(&vocab);
    let rewards = RewardModel::new(&mle, &backward, &dull, cfg.weights)?;
    let base = RngStream::new(cfg.seed).fork(SIMULATE_STREAM);
    let episodes = inputs
        .iter()
        .enumerate()
        .map(|(i, input)| simulate_dialogue(&policy, input, cfg.max_turns, &sim, &rewards, &mut base.fork(i as u64)))
        .collect::<s2srl::Result<Vec<_>>>()?;
    emit(m.get_one::<String>("out"), &episode_lines(&episodes, &vocab)?)
}

fn eval(m: &ArgMatches, rc: &RunConfig) -> Result<()> {
    let vocab = load_vocab(rc)?;
    let manifest = pipeline_manifest(&rc.workdir)?;
    let (mle, backward) = (stage(&manifest, "mle")?, stage(&manifest, "backward")?);
    let paths: Vec<PathBuf> = match m.get_one::<String>("models") {
        Some(list) => list.split(',').filter(|s| !s.is_empty()).map(PathBuf::from).collect(),
        None => ["mle", "mi", "rl"].iter().map(|s| manifest.require(s).map(Path::to_path_buf)).collect::<s2srl::Result<_>>()?,
    };
    if paths.is_empty() {
        return Err(ConfigError("--models lists no checkpoints".into()).into());
    }
    let inputs = pipeline::test_inputs(&vocab, &mle, &rc.pipeline)?;
    let mut reports = Vec::new();
    for path in &paths {
        let tag = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string());
        let policy = load_policy(path, &vocab)?;
        let result = pipeline::evaluate(&tag, &policy, &vocab, &mle, &backward, &inputs, &rc.pipeline)?;
        if let Some(dir) = m.get_one::<String>("episodes") {
            write_file(&Path::new(dir).join(format!("{tag}.episodes.jsonl")), &episode_lines(&result.episodes, &vocab)?)?;
        }
        reports.push(result.report);
    }
    emit(m.get_one::<String>("out"), &reports_to_tsv(&reports))
}

fn chat(m: &ArgMatches, rc: &RunConfig) -> Result<()> {
    let vocab = load_vocab(rc)?;
    let policy = load_policy(&model_arg(m, rc), &vocab)?;
    let show_rewards = m.get_flag("show-rewards");
    let reward_models = if show_rewards {
        let manifest = pipeline_manifest(&rc.workdir)?;
        Some((stage(&manifest, "mle")?, stage(&manifest, "backward")?))
    } else {
        None
    };
    let dull = DullSet::default_for(&vocab);
    let rewards = match &reward_models {
        Some((mle, backward)) => Some(RewardModel::new(mle, backward, &dull, rc.pipeline.weights)?),
        None => None,
    };
    let rule = rc.pipeline.rule(&vocab);
    let input: Box<dyn BufRead> = match m.get_one::<String>("script") {
        Some(path) => Box::new(BufReader::new(fs::File::open(path).with_context(|| format!("opening {path}"))?)),
        None => Box::new(io::stdin().lock()),
    };
    let echo = m.get_one::<String>("script").is_some() || !io::stdin().is_terminal();
    let opts = ChatOptions {
        beam_width: rc.pipeline.hyper.beam_width,
        max_decode_len: rc.pipeline.hyper.max_decode_len,
        rule: &rule,
        rewards,
        echo,
    };
    chat_repl(&policy, &vocab, &opts, input, &mut io::stdout().lock())
}

fn manifest(rc: &RunConfig) -> Result<()> {
    let manifest = pipeline_manifest(&rc.workdir)?;
    let mut s = String::from("stage\tpresent\tvocab_hash\tpath\n");
    for e in &manifest.entries {
        let hash = e.vocab_hash.as_deref().unwrap_or("-");
        writeln!(s, "{}\t{}\t{hash}\t{}", e.stage, e.vocab_hash.is_some(), e.path.display()).unwrap();
    }
    emit(None, &s)
}
