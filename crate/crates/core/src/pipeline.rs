//! Stage functions wiring corpus, models, rewards and evaluation together,
//! and the on-disk manifest that enforces stage ordering.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::corpus::{
    candidate_messages, filter_initial_inputs, generate_synthetic_corpus, make_backward_pairs,
    make_context_pairs, make_training_pairs, ContextPair, Dialogue, GrammarConfig, RawDialogue, TrainingPair,
};
use crate::error::{Error, Result};
use crate::eval::{avg_dialogue_length, build_report, EvalReport, OverlapWindow, TerminationCause, TerminationRule};
use crate::model::checkpoint::read_metadata;
use crate::model::{train_mle, Direction, HyperConfig, ModelParams, TrainReport};
use crate::rewards::{RewardModel, RewardWeights};
use crate::rl::{
    curriculum_train, mi_pretrain, CurriculumSchedule, Decoding, Episode, MiConfig, MiReport, RlConfig, SimConfig,
    StageSnapshot, UpdateLog,
};
use crate::rng::RngStream;
use crate::vocab::{DullSet, Utterance, Vocab};

// Stream labels; each stage draws from its own fork of the run seed.
const MLE_STREAM: u64 = 1;
const BACKWARD_STREAM: u64 = 2;
const MI_STREAM: u64 = 3;
const RL_STREAM: u64 = 4;
const EVAL_STREAM: u64 = 5;
const HOLDOUT_STREAM: u64 = 6;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub seed: u64,
    pub grammar: GrammarConfig,
    /// Dialogues in the held-out corpus that supplies test inputs.
    pub holdout_dialogues: usize,
    pub max_vocab: usize,
    pub hyper: HyperConfig,
    pub mi: MiConfig,
    pub rl: RlConfig,
    pub schedule: CurriculumSchedule,
    pub weights: RewardWeights,
    pub overlap_threshold: f64,
    pub overlap_window: OverlapWindow,
    pub max_turns: usize,
    pub keep_fraction: f64,
    pub test_inputs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            grammar: GrammarConfig::default(),
            holdout_dialogues: 30_000,
            max_vocab: 200,
            hyper: HyperConfig::default(),
            mi: MiConfig::default(),
            rl: RlConfig::default(),
            schedule: CurriculumSchedule::default(),
            weights: RewardWeights::default(),
            overlap_threshold: 0.8,
            overlap_window: OverlapWindow::Two,
            max_turns: 8,
            keep_fraction: 0.08,
            test_inputs: 200,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.grammar.validate()?;
        self.hyper.validate()?;
        self.mi.validate()?;
        self.rl.validate()?;
        self.schedule.validate()?;
        self.weights.validate()?;
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::Config(format!("keep_fraction must be in (0, 1], got {}", self.keep_fraction)));
        }
        if self.test_inputs == 0 {
            return Err(Error::Config("test_inputs must be positive".into()));
        }
        let dummy = Vocab::build::<Vec<&str>, &str>(&[], 5)?;
        self.rule(&dummy).validate()
    }

    pub fn rule(&self, vocab: &Vocab) -> TerminationRule {
        TerminationRule {
            dull: DullSet::default_for(vocab),
            overlap_threshold: self.overlap_threshold,
            window: self.overlap_window,
            max_turns: self.max_turns,
        }
    }

    /// Self-play settings used for evaluation: beam search, top hypothesis.
    pub fn eval_sim(&self, vocab: &Vocab) -> SimConfig {
        SimConfig {
            decoding: Decoding::Beam { width: self.hyper.beam_width },
            max_decode_len: self.hyper.max_decode_len,
            rule: self.rule(vocab),
        }
    }

    fn stream(&self, label: u64) -> RngStream {
        RngStream::new(self.seed).fork(label)
    }
}

/// A corpus with its vocabulary and encoded dialogues.
#[derive(Debug, Clone)]
pub struct CorpusData {
    pub raw: Vec<RawDialogue>,
    pub vocab: Vocab,
    pub dialogues: Vec<Dialogue>,
}

impl CorpusData {
    pub fn build(raw: Vec<RawDialogue>, max_vocab: usize) -> Result<Self> {
        let vocab = Vocab::build(&raw, max_vocab)?;
        Self::with_vocab(raw, vocab)
    }

    pub fn with_vocab(raw: Vec<RawDialogue>, vocab: Vocab) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::EmptyInput("corpus".into()));
        }
        let dialogues = raw.iter().map(|d| Dialogue::encode(d, &vocab)).collect::<Result<_>>()?;
        Ok(CorpusData { raw, vocab, dialogues })
    }

    pub fn forward_pairs(&self) -> Vec<TrainingPair> {
        self.dialogues.iter().flat_map(make_training_pairs).collect()
    }

    pub fn backward_pairs(&self) -> Vec<TrainingPair> {
        self.dialogues.iter().flat_map(make_backward_pairs).collect()
    }

    pub fn context_pairs(&self) -> Vec<ContextPair> {
        self.dialogues.iter().flat_map(make_context_pairs).collect()
    }
}

pub fn generate_corpus(cfg: &PipelineConfig) -> Result<CorpusData> {
    CorpusData::build(generate_synthetic_corpus(&cfg.grammar, cfg.seed)?, cfg.max_vocab)
}

fn train_direction(
    pairs: &[TrainingPair],
    vocab: &Vocab,
    hyper: &HyperConfig,
    direction: Direction,
    mut rng: RngStream,
) -> Result<(ModelParams, TrainReport)> {
    let init = ModelParams::random(hyper.dims(vocab.len()), direction, vocab.hash(), hyper.init_scale, &mut rng);
    train_mle(pairs, init, hyper, &mut rng)
}

pub fn pretrain(data: &CorpusData, cfg: &PipelineConfig) -> Result<(ModelParams, TrainReport)> {
    train_direction(&data.forward_pairs(), &data.vocab, &cfg.hyper, Direction::Forward, cfg.stream(MLE_STREAM))
}

pub fn train_backward(data: &CorpusData, cfg: &PipelineConfig) -> Result<(ModelParams, TrainReport)> {
    train_direction(&data.backward_pairs(), &data.vocab, &cfg.hyper, Direction::Backward, cfg.stream(BACKWARD_STREAM))
}

fn check_stage(params: &ModelParams, vocab: &Vocab, direction: Direction, stage: &str) -> Result<()> {
    if params.vocab_hash() != vocab.hash() {
        return Err(Error::VocabMismatch(format!(
            "{stage} checkpoint vocab {} != corpus vocab {}",
            params.vocab_hash(),
            vocab.hash()
        )));
    }
    if params.direction() != direction {
        return Err(Error::Config(format!("{stage} checkpoint has direction {}, expected {direction}", params.direction())));
    }
    Ok(())
}

pub fn mi_train(
    data: &CorpusData,
    mle: &ModelParams,
    backward: &ModelParams,
    cfg: &PipelineConfig,
) -> Result<(ModelParams, MiReport)> {
    check_stage(mle, &data.vocab, Direction::Forward, "mle")?;
    check_stage(backward, &data.vocab, Direction::Backward, "backward")?;
    let mut rng = cfg.stream(MI_STREAM);
    mi_pretrain(mle.clone(), mle, backward, &data.context_pairs(), &cfg.mi, &mut rng)
}

/// Initial messages for RL training: the filtered non-dull turns of the
/// training corpus.
pub fn training_inputs(data: &CorpusData, mle: &ModelParams, cfg: &PipelineConfig) -> Result<Vec<Utterance>> {
    let dull = DullSet::default_for(&data.vocab);
    let pool = candidate_messages(&data.dialogues, &dull);
    filter_initial_inputs(&pool, mle, &dull, cfg.keep_fraction)
}

/// Test messages: the filtered non-dull turns of a held-out corpus drawn from
/// the same grammar, truncated to `test_inputs`.
pub fn test_inputs(vocab: &Vocab, mle: &ModelParams, cfg: &PipelineConfig) -> Result<Vec<Utterance>> {
    let grammar = GrammarConfig { dialogues: cfg.holdout_dialogues, ..cfg.grammar.clone() };
    let seed = cfg.stream(HOLDOUT_STREAM).next_u64();
    let raw = generate_synthetic_corpus(&grammar, seed)?;
    let dialogues = raw.iter().map(|d| Dialogue::encode(d, vocab)).collect::<Result<Vec<_>>>()?;
    let dull = DullSet::default_for(vocab);
    let pool = candidate_messages(&dialogues, &dull);
    let mut kept = filter_initial_inputs(&pool, mle, &dull, cfg.keep_fraction)?;
    if kept.len() < cfg.test_inputs {
        return Err(Error::Config(format!(
            "held-out pool yields {} filtered inputs, {} requested",
            kept.len(),
            cfg.test_inputs
        )));
    }
    kept.truncate(cfg.test_inputs);
    Ok(kept)
}

#[derive(Debug, Clone)]
pub struct RlOutcome {
    pub params: ModelParams,
    pub snapshots: Vec<StageSnapshot>,
    pub log: Vec<UpdateLog>,
}

#[allow(clippy::too_many_arguments)]
pub fn rl_train(
    vocab: &Vocab,
    mi: &ModelParams,
    mle: &ModelParams,
    backward: &ModelParams,
    inputs: &[Utterance],
    cfg: &PipelineConfig,
    on_stage: impl FnMut(&StageSnapshot, &ModelParams) -> Result<()>,
) -> Result<RlOutcome> {
    check_stage(mi, vocab, Direction::Forward, "mi")?;
    check_stage(mle, vocab, Direction::Forward, "mle")?;
    check_stage(backward, vocab, Direction::Backward, "backward")?;
    let dull = DullSet::default_for(vocab);
    let rewards = RewardModel::new(mle, backward, &dull, cfg.weights)?;
    let rule = cfg.rule(vocab);
    let mut rng = cfg.stream(RL_STREAM);
    let (params, snapshots, log) =
        curriculum_train(mi.clone(), inputs, &cfg.schedule, &cfg.rl, &rewards, &rule, &mut rng, on_stage)?;
    Ok(RlOutcome { params, snapshots, log })
}

#[derive(Debug, Clone)]
pub struct ModelEval {
    pub report: EvalReport,
    pub episodes: Vec<Episode>,
    /// Top beam reply to each test input.
    pub responses: Vec<Utterance>,
}

impl ModelEval {
    pub fn count(&self, cause: TerminationCause) -> usize {
        self.episodes.iter().filter(|e| e.cause == Some(cause)).count()
    }
}

/// Beam-search self-play from every test input, scored with the frozen
/// forward and backward reward models.
pub fn evaluate(
    tag: &str,
    params: &ModelParams,
    vocab: &Vocab,
    mle: &ModelParams,
    backward: &ModelParams,
    inputs: &[Utterance],
    cfg: &PipelineConfig,
) -> Result<ModelEval> {
    check_stage(params, vocab, Direction::Forward, tag)?;
    let dull = DullSet::default_for(vocab);
    let rewards = RewardModel::new(mle, backward, &dull, cfg.weights)?;
    let sim = cfg.eval_sim(vocab);
    let mut rng = cfg.stream(EVAL_STREAM);
    let (_, episodes) = avg_dialogue_length(params, inputs, &sim, &rewards, &mut rng)?;
    let responses: Vec<Utterance> = episodes.iter().map(|e| e.turns[0].utterance.clone()).collect();
    let report = build_report(tag, &episodes, &responses)?;
    Ok(ModelEval { report, episodes, responses })
}

/// Every stage of a run, kept in memory.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub data: CorpusData,
    pub mle: ModelParams,
    pub mle_report: TrainReport,
    pub backward: ModelParams,
    pub mi: ModelParams,
    pub mi_report: MiReport,
    pub rl: RlOutcome,
    pub train_inputs: Vec<Utterance>,
    pub test_inputs: Vec<Utterance>,
    pub evals: Vec<ModelEval>,
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    let data = generate_corpus(cfg)?;
    let (mle, mle_report) = pretrain(&data, cfg)?;
    let (backward, _) = train_backward(&data, cfg)?;
    let (mi, mi_report) = mi_train(&data, &mle, &backward, cfg)?;
    let train_inputs = training_inputs(&data, &mle, cfg)?;
    let test = test_inputs(&data.vocab, &mle, cfg)?;
    let rl = rl_train(&data.vocab, &mi, &mle, &backward, &train_inputs, cfg, |_, _| Ok(()))?;
    let mut evals = Vec::new();
    for (tag, p) in [("mle", &mle), ("mi", &mi), ("rl", &rl.params)] {
        evals.push(evaluate(tag, p, &data.vocab, &mle, &backward, &test, cfg)?);
    }
    Ok(PipelineRun { data, mle, mle_report, backward, mi, mi_report, rl, train_inputs, test_inputs: test, evals })
}

/// Checkpoint file name of each stage, in pipeline order.
pub const STAGES: [(&str, &str); 4] =
    [("mle", "mle.ckpt"), ("backward", "backward.ckpt"), ("mi", "mi.ckpt"), ("rl", "rl.ckpt")];

#[derive(Debug, Clone, PartialEq)]
pub struct StageEntry {
    pub stage: &'static str,
    pub path: PathBuf,
    /// Vocabulary hash recorded in the checkpoint, if it exists.
    pub vocab_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<StageEntry>,
}

impl Manifest {
    pub fn entry(&self, stage: &str) -> Option<&StageEntry> {
        self.entries.iter().find(|e| e.stage == stage)
    }

    pub fn present(&self, stage: &str) -> bool {
        self.entry(stage).is_some_and(|e| e.vocab_hash.is_some())
    }

    /// Path of a stage checkpoint that must already exist.
    pub fn require(&self, stage: &str) -> Result<&Path> {
        let e = self
            .entries
            .iter()
            .find(|e| e.stage == stage)
            .ok_or_else(|| Error::Config(format!("unknown stage '{stage}'")))?;
        if e.vocab_hash.is_none() {
            return Err(Error::MissingStage { stage: e.stage, path: e.path.clone() });
        }
        Ok(&e.path)
    }
}

/// Which stage checkpoints exist under `workdir`, with their vocabulary
/// hashes. Fails when present checkpoints disagree on the vocabulary.
pub fn pipeline_manifest(workdir: &Path) -> Result<Manifest> {
    if !workdir.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} is not a directory", workdir.display()),
        )));
    }
    let mut entries = Vec::new();
    for (stage, file) in STAGES {
        let path = workdir.join(file);
        let vocab_hash = if path.exists() {
            let meta: BTreeMap<String, String> = read_metadata(&path)?;
            Some(meta.get("vocab_hash").cloned().ok_or_else(|| {
                Error::Format(format!("{} has no vocab_hash", path.display()))
            })?)
        } else {
            None
        };
        entries.push(StageEntry { stage, path, vocab_hash });
    }
    let present: Vec<&StageEntry> = entries.iter().filter(|e| e.vocab_hash.is_some()).collect();
    if let Some(first) = present.first() {
        let h = first.vocab_hash.as_deref().unwrap();
        if present.iter().any(|e| e.vocab_hash.as_deref() != Some(h)) {
            let listing: Vec<String> =
                present.iter().map(|e| format!("{}={}", e.stage, e.vocab_hash.as_deref().unwrap())).collect();
            return Err(Error::VocabMismatch(listing.join(",")));
        }
    }
    Ok(Manifest { entries })
}
