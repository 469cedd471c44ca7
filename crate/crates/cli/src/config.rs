//! `RunConfig`: built-in defaults, overridden by a `key=value` file,
//! overridden by `--key value` flags.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use s2srl::eval::OverlapWindow;
use s2srl::pipeline::PipelineConfig;
use s2srl::rl::CandidateSelection;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

trait Value: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn show(&self) -> String;
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                <$t as FromStr>::from_str(s).map_err(|e| e.to_string())
            }
            fn show(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

from_str_value!(usize, u64, f64, bool);

impl Value for PathBuf {
    fn parse_value(s: &str) -> Result<Self, String> {
        Ok(PathBuf::from(s))
    }
    fn show(&self) -> String {
        self.display().to_string()
    }
}

impl Value for OverlapWindow {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "2" | "two" => Ok(OverlapWindow::Two),
            "3" | "three" => Ok(OverlapWindow::Three),
            _ => Err(format!("expected 2 or 3, got '{s}'")),
        }
    }
    fn show(&self) -> String {
        match self {
            OverlapWindow::Two => "2".into(),
            OverlapWindow::Three => "3".into(),
        }
    }
}

impl Value for CandidateSelection {
    fn parse_value(s: &str) -> Result<Self, String> {
        CandidateSelection::parse(s).map_err(|e| e.to_string())
    }
    fn show(&self) -> String {
        match self {
            CandidateSelection::Uniform => "uniform".into(),
            CandidateSelection::BestReward => "best_reward".into(),
        }
    }
}

/// Every tunable setting of a run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub workdir: PathBuf,
    pub corpus: Option<PathBuf>,
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { workdir: PathBuf::from("."), corpus: None, pipeline: PipelineConfig::default() }
    }
}

pub struct Key {
    pub name: &'static str,
    pub help: &'static str,
    set: fn(&mut RunConfig, &str) -> Result<(), String>,
    get: fn(&RunConfig) -> String,
}

macro_rules! keys {
    ($($name:literal, $help:literal, |$c:ident| $field:expr;)*) => {
        pub const KEYS: &[Key] = &[$(
            Key {
                name: $name,
                help: $help,
                set: |$c, s| {
                    $field = Value::parse_value(s)?;
                    Ok(())
                },
                get: |$c| Value::show(&$field),
            },
        )*];
    };
}

keys! {
    "workdir", "directory holding stage checkpoints and outputs", |c| c.workdir;
    "seed", "run seed; every stage draws from its own fork", |c| c.pipeline.seed;
    "dialogues", "dialogues in the synthetic training corpus", |c| c.pipeline.grammar.dialogues;
    "corpus_min_turns", "shortest synthetic dialogue", |c| c.pipeline.grammar.min_turns;
    "corpus_max_turns", "longest synthetic dialogue", |c| c.pipeline.grammar.max_turns;
    "holdout_dialogues", "dialogues in the held-out corpus supplying test inputs", |c| c.pipeline.holdout_dialogues;
    "max_vocab", "vocabulary size cap", |c| c.pipeline.max_vocab;
    "embed_dim", "embedding width", |c| c.pipeline.hyper.embed_dim;
    "hidden_dim", "LSTM hidden width", |c| c.pipeline.hyper.hidden_dim;
    "attention", "additive attention over encoder states", |c| c.pipeline.hyper.attention;
    "learning_rate", "SGD step size for MLE training", |c| c.pipeline.hyper.learning_rate;
    "clip_norm", "global gradient-norm clip for MLE training", |c| c.pipeline.hyper.clip_norm;
    "batch_size", "MLE minibatch size", |c| c.pipeline.hyper.batch_size;
    "epochs", "MLE epochs", |c| c.pipeline.hyper.epochs;
    "beam_width", "beam width for evaluation and chat", |c| c.pipeline.hyper.beam_width;
    "max_decode_len", "longest decoded reply", |c| c.pipeline.hyper.max_decode_len;
    "init_scale", "half-width of the uniform weight initialization", |c| c.pipeline.hyper.init_scale;
    "mi_alpha_start", "MLE weight at the first MI step", |c| c.pipeline.mi.alpha_start;
    "mi_alpha_end", "MLE weight at the last MI step", |c| c.pipeline.mi.alpha_end;
    "mi_epochs", "MI epochs", |c| c.pipeline.mi.epochs;
    "mi_batch_size", "MI minibatch size", |c| c.pipeline.mi.batch_size;
    "mi_learning_rate", "MI step size", |c| c.pipeline.mi.learning_rate;
    "mi_clip_norm", "MI gradient-norm clip", |c| c.pipeline.mi.clip_norm;
    "mi_temperature", "MI sampling temperature", |c| c.pipeline.mi.temperature;
    "mi_baseline_decay", "MI baseline moving-average decay", |c| c.pipeline.mi.baseline_decay;
    "rl_episodes_per_update", "episodes per REINFORCE update", |c| c.pipeline.rl.episodes_per_update;
    "rl_learning_rate", "REINFORCE step size", |c| c.pipeline.rl.learning_rate;
    "rl_clip_norm", "REINFORCE gradient-norm clip", |c| c.pipeline.rl.clip_norm;
    "rl_baseline_decay", "REINFORCE baseline moving-average decay", |c| c.pipeline.rl.baseline_decay;
    "rl_temperature", "sampling temperature during self-play training", |c| c.pipeline.rl.temperature;
    "rl_selection", "candidate choice during training: uniform or best_reward", |c| c.pipeline.rl.selection;
    "start_turns", "turn limit of the first curriculum stage", |c| c.pipeline.schedule.start_turns;
    "end_turns", "turn limit of the last curriculum stage", |c| c.pipeline.schedule.end_turns;
    "candidates_per_step", "sampled candidates per simulated turn", |c| c.pipeline.schedule.candidates_per_step;
    "iterations_per_stage", "REINFORCE updates per curriculum stage", |c| c.pipeline.schedule.iterations_per_stage;
    "lambda_simplicity", "weight of the dull-avoidance reward", |c| c.pipeline.weights.simplicity;
    "lambda_information", "weight of the information-flow reward", |c| c.pipeline.weights.information_flow;
    "lambda_coherence", "weight of the mutual-information reward", |c| c.pipeline.weights.coherence;
    "overlap_threshold", "unigram Jaccard at which a repeat ends a dialogue", |c| c.pipeline.overlap_threshold;
    "overlap_window", "own turns compared for repeats: 2 or 3", |c| c.pipeline.overlap_window;
    "max_turns", "turn cap of simulated dialogues", |c| c.pipeline.max_turns;
    "keep_fraction", "share of candidate inputs kept by the dull-reply filter", |c| c.pipeline.keep_fraction;
    "test_inputs", "number of held-out test inputs", |c| c.pipeline.test_inputs;
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if key == "corpus" {
            self.corpus = Some(PathBuf::from(value));
            return Ok(());
        }
        let k = KEYS.iter().find(|k| k.name == key).ok_or_else(|| err(format!("unknown key '{key}'")))?;
        (k.set)(self, value).map_err(|e| err(format!("{key}={value}: {e}")))
    }

    /// Applies a `key=value` file; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
            self.set(k.trim(), v.trim()).map_err(|e| err(format!("{}:{}: {e}", path.display(), i + 1)))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.pipeline.validate().map_err(|e| err(e.to_string()))
    }

    /// Every setting as `key=value`, in declaration order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out: Vec<(&'static str, String)> = KEYS.iter().map(|k| (k.name, (k.get)(self))).collect();
        out.insert(1, ("corpus", self.corpus_path().display().to_string()));
        out
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.corpus.clone().unwrap_or_else(|| self.workdir.join("corpus.txt"))
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.workdir.join(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_round_trips() {
        let base = RunConfig::default();
        for (k, v) in base.entries() {
            let mut c = RunConfig::default();
            c.set(k, &v).unwrap();
            assert_eq!(c.entries(), base.entries(), "{k}");
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let mut c = RunConfig::default();
        assert!(c.set("learnign_rate", "0.1").unwrap_err().0.contains("learnign_rate"));
    }

    #[test]
    fn bad_value_rejected() {
        let mut c = RunConfig::default();
        assert!(c.set("epochs", "many").is_err());
        assert!(c.set("overlap_window", "4").is_err());
    }

    #[test]
    fn file_values_and_comments() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.conf");
        std::fs::write(&p, "# settings\nseed = 9\n\nepochs=3 # short\nrl_selection=best_reward\n").unwrap();
        let mut c = RunConfig::default();
        c.apply_file(&p).unwrap();
        assert_eq!(c.pipeline.seed, 9);
        assert_eq!(c.pipeline.hyper.epochs, 3);
        assert_eq!(c.pipeline.rl.selection, CandidateSelection::BestReward);
    }

    #[test]
    fn file_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.conf");
        std::fs::write(&p, "seed=1\nbogus=2\n").unwrap();
        let e = RunConfig::default().apply_file(&p).unwrap_err();
        assert!(e.0.contains(":2:") && e.0.contains("bogus"), "{e}");
    }

    #[test]
    fn invalid_values_fail_validation() {
        let mut c = RunConfig::default();
        c.set("lambda_coherence", "0.9").unwrap();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.set("start_turns", "1").unwrap();
        assert!(c.validate().is_err());
    }
}
