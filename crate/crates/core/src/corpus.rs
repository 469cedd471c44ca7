//! Dialogue corpora: the synthetic template generator, the TAB-separated
//! corpus file format, training-pair construction and initial-input
//! filtering.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::rng::RngStream;
use crate::vocab::{normalize, DialogueState, DullSet, TokenId, Utterance, Vocab};

/// A text dialogue: one string per turn.
pub type RawDialogue = Vec<String>;

/// An encoded dialogue; turns alternate between the two speakers.
#[derive(Debug, Clone, PartialEq)]
pub struct Dialogue {
    pub turns: Vec<Utterance>,
}

impl Dialogue {
    pub fn encode(raw: &[String], vocab: &Vocab) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::EmptyInput("dialogue".into()));
        }
        Ok(Dialogue { turns: raw.iter().map(|t| vocab.encode(t)).collect::<Result<_>>()? })
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub source: Vec<TokenId>,
    pub target: Utterance,
}

/// A turn together with the dialogue state it answers.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextPair {
    pub state: DialogueState,
    pub target: Utterance,
}

impl ContextPair {
    pub fn to_training_pair(&self) -> TrainingPair {
        TrainingPair { source: self.state.source(), target: self.target.clone() }
    }
}

/// For every turn after the first, the two preceding turns (the previous one
/// absent when only one exists) and the turn itself.
pub fn make_context_pairs(d: &Dialogue) -> Vec<ContextPair> {
    (1..d.turns.len())
        .map(|t| {
            let prev = (t >= 2).then(|| d.turns[t - 2].clone());
            ContextPair {
                state: DialogueState::new(prev, d.turns[t - 1].clone()),
                target: d.turns[t].clone(),
            }
        })
        .collect()
}

/// Forward pairs: for every turn after the first, the two preceding turns
/// (empty-context marker when only one exists) predict the turn.
pub fn make_training_pairs(d: &Dialogue) -> Vec<TrainingPair> {
    make_context_pairs(d).iter().map(ContextPair::to_training_pair).collect()
}

/// Backward pairs: each turn predicts the turn before it.
pub fn make_backward_pairs(d: &Dialogue) -> Vec<TrainingPair> {
    (1..d.turns.len())
        .map(|t| TrainingPair {
            source: DialogueState::opening(d.turns[t].clone()).source(),
            target: d.turns[t - 1].clone(),
        })
        .collect()
}

/// One dialogue per line, turns separated by a single TAB.
pub fn corpus_to_string(corpus: &[RawDialogue]) -> String {
    let mut s = String::new();
    for d in corpus {
        s.push_str(&d.join("\t"));
        s.push('\n');
    }
    s
}

pub fn parse_corpus(text: &str) -> Result<Vec<RawDialogue>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let turns: Vec<String> = line.split('\t').map(normalize).collect();
            if turns.iter().any(|t| t.is_empty()) {
                return Err(Error::Parse(format!("corpus line {}: empty turn", n + 1)));
            }
            Ok(turns)
        })
        .collect()
}

/// A subject of conversation: `{noun}`, `{verb}` and the `{x}` fillers.
#[derive(Debug, Clone, PartialEq)]
pub struct Topic {
    pub noun: String,
    pub verb: String,
    pub fillers: Vec<String>,
}

/// A question template and the answers that fit it.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionForm {
    pub template: String,
    pub answers: Vec<String>,
    /// Probability that the reply to this question is dull.
    pub dull_prob: f64,
}

/// Relative weights of the next dialogue act.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActWeights {
    pub question: f64,
    pub comment: f64,
    pub generic: f64,
    pub dull: f64,
}

impl ActWeights {
    fn as_array(&self) -> [f64; 4] {
        [self.question, self.comment, self.generic, self.dull]
    }

    fn validate(&self, name: &str) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(format!("{name}: act weights must be non-negative and not all zero")));
        }
        Ok(())
    }
}

/// Template grammar for synthetic dialogues.
///
/// A dialogue opens with a question. A question is answered, or drawn a dull
/// reply with the form's `dull_prob`. Every other turn picks its act from the
/// weights for the previous act: a follow-up question, a comment on the
/// filler just discussed, a generic remark, or a dull reply. A comment never
/// repeats the template of a comment it follows. Generic remarks
/// and dull replies are drawn from weighted pools whatever preceded them.
#[derive(Debug, Clone, PartialEq)]
pub struct GrammarConfig {
    pub dialogues: usize,
    pub min_turns: usize,
    pub max_turns: usize,
    /// Probability that a follow-up question stays on the current topic.
    pub topic_stay: f64,
    /// Probability that a follow-up question reuses the filler just mentioned.
    pub filler_stay: f64,
    pub topics: Vec<Topic>,
    pub questions: Vec<QuestionForm>,
    /// Comment templates on the current filler.
    pub comments: Vec<String>,
    /// Generic remarks and their relative weights.
    pub generic: Vec<(String, f64)>,
    pub after_answer: ActWeights,
    pub after_comment: ActWeights,
    pub after_generic: ActWeights,
    pub after_dull: ActWeights,
    /// Dull replies and their relative weights.
    pub dull_responses: Vec<(String, f64)>,
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl Default for GrammarConfig {
    fn default() -> Self {
        let topic = |noun: &str, verb: &str, fillers: &[&str]| Topic {
            noun: noun.into(),
            verb: verb.into(),
            fillers: strings(fillers),
        };
        let q = |template: &str, answers: &[&str], dull_prob: f64| QuestionForm {
            template: template.into(),
            answers: strings(answers),
            dull_prob,
        };
        let acts = |question, comment, generic, dull| ActWeights { question, comment, generic, dull };
        GrammarConfig {
            dialogues: 2000,
            min_turns: 2,
            max_turns: 8,
            topic_stay: 0.7,
            filler_stay: 0.5,
            topics: vec![
                topic("food", "eat", &["pizza", "pasta", "rice", "soup", "cake"]),
                topic("sport", "play", &["football", "tennis", "golf", "hockey", "chess"]),
                topic("music", "hear", &["jazz", "rock", "piano", "guitar", "opera"]),
                topic("city", "visit", &["paris", "london", "tokyo", "rome", "cairo"]),
                topic("pet", "feed", &["dogs", "cats", "horses", "rabbits", "goats"]),
                topic("book", "read", &["novels", "poems", "comics", "plays", "myths"]),
                topic("drink", "drink", &["tea", "coffee", "milk", "juice", "cocoa"]),
            ],
            questions: vec![
                q(
                    "do you like {x}?",
                    &["yes i love {x}.", "no i do not like {x}.", "yes {x} is great.", "i like {x} a lot.", "sometimes i like {x}."],
                    0.05,
                ),
                q(
                    "why do you like {x}?",
                    &["because {x} is fun.", "because my friend likes {x}.", "{x} makes me happy.", "{x} reminds me of home.", "i grew up with {x}."],
                    0.1,
                ),
                q(
                    "how often do you {verb} {x}?",
                    &["i {verb} {x} every day.", "i {verb} {x} on weekends.", "i {verb} {x} once a week.", "i {verb} {x} when i can.", "i rarely {verb} {x}."],
                    0.15,
                ),
                q(
                    "where do you {verb} {x}?",
                    &["i {verb} {x} at home.", "i {verb} {x} with my family.", "i {verb} {x} near my school.", "i {verb} {x} in the park.", "i {verb} {x} with friends."],
                    0.2,
                ),
                q(
                    "do you {verb} {x} with friends?",
                    &["yes we {verb} {x} together.", "no i {verb} {x} alone.", "my friends {verb} {x} with me.", "we {verb} {x} every summer.", "only with my best friend."],
                    0.1,
                ),
                q(
                    "who taught you about {x}?",
                    &["my father taught me about {x}.", "i learned about {x} at school.", "a friend showed me {x}.", "i found {x} on my own.", "my teacher loved {x}."],
                    0.1,
                ),
                q(
                    "when did you first {verb} {x}?",
                    &["i first {verb} {x} as a child.", "i first {verb} {x} last year.", "i first {verb} {x} at school.", "i first {verb} {x} with my uncle.", "i first {verb} {x} on a trip."],
                    0.3,
                ),
                q(
                    "is {x} popular where you live?",
                    &["yes {x} is very popular here.", "{x} is popular in my town.", "not many people like {x} here.", "everyone here loves {x}.", "{x} is rare where i live."],
                    0.3,
                ),
                q(
                    "is {x} your favorite {noun}?",
                    &["yes {x} is my favorite {noun}.", "no but i like {x}.", "{x} is one of my favorites.", "i like {x} a little.", "not really but {x} is fine."],
                    0.4,
                ),
                q(
                    "what do you know about {x}?",
                    &["i know a lot about {x}.", "i know a little about {x}.", "{x} is new to me.", "i read about {x} once.", "{x} is famous."],
                    0.4,
                ),
                q(
                    "can you tell me about {x}?",
                    &["{x} is very nice.", "i think {x} is good.", "{x} is not bad.", "{x} is interesting.", "there is a lot to say about {x}."],
                    0.5,
                ),
                q(
                    "what do you think of {x}?",
                    &["{x} is okay.", "i think {x} is fine.", "{x} is wonderful.", "{x} is boring.", "i have mixed feelings about {x}."],
                    0.5,
                ),
            ],
            comments: strings(&["i like {x} too.", "{x} sounds fun.", "my sister loves {x}.", "i want to {verb} {x} today."]),
            generic: vec![
                ("that is nice.".into(), 0.7),
                ("cool.".into(), 0.1),
                ("really.".into(), 0.1),
                ("okay.".into(), 0.1),
            ],
            after_answer: acts(0.2, 0.35, 0.45, 0.0),
            after_comment: acts(0.25, 0.3, 0.45, 0.0),
            after_generic: acts(0.3, 0.0, 0.6, 0.1),
            after_dull: acts(0.6, 0.0, 0.0, 0.4),
            dull_responses: vec![
                ("i don't know".into(), 0.5),
                ("i have no idea".into(), 0.1),
                ("i'm sorry".into(), 0.06),
                ("i'm ok".into(), 0.06),
                ("see you later".into(), 0.08),
                ("i don't know what you are talking about".into(), 0.08),
                ("i'm not sure what you're talking about".into(), 0.06),
                ("i have no idea what you're talking about".into(), 0.06),
            ],
        }
    }
}

impl GrammarConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("topic_stay", self.topic_stay), ("filler_stay", self.filler_stay)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.min_turns < 2 || self.max_turns < self.min_turns {
            return Err(Error::Config(format!(
                "turn range [{}, {}] invalid (need 2 <= min <= max)",
                self.min_turns, self.max_turns
            )));
        }
        if self.topics.is_empty() || self.topics.iter().any(|t| t.fillers.is_empty()) {
            return Err(Error::Config("grammar needs topics with fillers".into()));
        }
        if self.questions.is_empty() || self.questions.iter().any(|q| q.answers.is_empty()) {
            return Err(Error::Config("grammar needs questions with answers".into()));
        }
        if self.questions.iter().any(|q| !(0.0..=1.0).contains(&q.dull_prob)) {
            return Err(Error::Config("dull_prob must be in [0, 1]".into()));
        }
        let tables = [
            ("after_answer", &self.after_answer),
            ("after_comment", &self.after_comment),
            ("after_generic", &self.after_generic),
            ("after_dull", &self.after_dull),
        ];
        for (name, w) in tables {
            w.validate(name)?;
            if w.comment > 0.0 && self.comments.is_empty() {
                return Err(Error::Config(format!("{name} allows comments but none are defined")));
            }
            if w.generic > 0.0 && (self.generic.is_empty() || self.generic.iter().all(|(_, g)| *g <= 0.0)) {
                return Err(Error::Config(format!("{name} allows generic remarks but none are defined")));
            }
        }
        if self.after_comment.comment > 0.0 && self.comments.len() < 2 {
            return Err(Error::Config("comments following comments need at least two comment templates".into()));
        }
        let may_be_dull =
            self.questions.iter().any(|q| q.dull_prob > 0.0) || tables.iter().any(|(_, w)| w.dull > 0.0);
        if may_be_dull && (self.dull_responses.is_empty() || self.dull_responses.iter().all(|(_, w)| *w <= 0.0)) {
            return Err(Error::Config("dull responses needed when dull turns can occur".into()));
        }
        Ok(())
    }

    /// Same grammar with every dull reply removed.
    pub fn without_dull(&self) -> Self {
        let mut g = self.clone();
        for q in &mut g.questions {
            q.dull_prob = 0.0;
        }
        for w in [&mut g.after_answer, &mut g.after_comment, &mut g.after_generic, &mut g.after_dull] {
            w.dull = 0.0;
        }
        g
    }
}

fn fill(template: &str, topic: &Topic, x: &str) -> String {
    normalize(&template.replace("{x}", x).replace("{noun}", &topic.noun).replace("{verb}", &topic.verb))
}

fn weighted(rng: &mut RngStream, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    crate::math::sample_index(weights, rng.next_f64() * total)
}

#[derive(Clone, Copy)]
enum Act {
    Question(usize),
    Answer,
    Comment(usize),
    Generic(usize),
    Dull,
}

/// Generates a corpus from the template grammar.
pub fn generate_synthetic_corpus(cfg: &GrammarConfig, seed: u64) -> Result<Vec<RawDialogue>> {
    cfg.validate()?;
    let mut rng = RngStream::new(seed);
    let dull_weights: Vec<f64> = cfg.dull_responses.iter().map(|(_, w)| *w).collect();
    let generic_weights: Vec<f64> = cfg.generic.iter().map(|(_, w)| *w).collect();
    let mut out = Vec::with_capacity(cfg.dialogues);

    for _ in 0..cfg.dialogues {
        let n = cfg.min_turns + rng.below(cfg.max_turns - cfg.min_turns + 1);
        let mut turns = Vec::with_capacity(n);
        let mut topic = rng.below(cfg.topics.len());
        let mut filler = rng.below(cfg.topics[topic].fillers.len());
        let mut last: Option<Act> = None;

        while turns.len() < n {
            let act = match last {
                None => Act::Question(rng.below(cfg.questions.len())),
                Some(Act::Question(form)) => {
                    if rng.bernoulli(cfg.questions[form].dull_prob) {
                        Act::Dull
                    } else {
                        Act::Answer
                    }
                }
                Some(prev) => {
                    let table = match prev {
                        Act::Answer => &cfg.after_answer,
                        Act::Comment(..) => &cfg.after_comment,
                        Act::Generic(..) => &cfg.after_generic,
                        _ => &cfg.after_dull,
                    };
                    match weighted(&mut rng, &table.as_array()) {
                        0 => {
                            if !rng.bernoulli(cfg.topic_stay) {
                                topic = rng.below(cfg.topics.len());
                                filler = rng.below(cfg.topics[topic].fillers.len());
                            } else if !rng.bernoulli(cfg.filler_stay) {
                                filler = rng.below(cfg.topics[topic].fillers.len());
                            }
                            Act::Question(rng.below(cfg.questions.len()))
                        }
                        1 => match prev {
                            Act::Comment(j) => {
                                let k = rng.below(cfg.comments.len() - 1);
                                Act::Comment(if k >= j { k + 1 } else { k })
                            }
                            _ => Act::Comment(rng.below(cfg.comments.len())),
                        },
                        2 => Act::Generic(weighted(&mut rng, &generic_weights)),
                        _ => Act::Dull,
                    }
                }
            };
            let tp = &cfg.topics[topic];
            let x = &tp.fillers[filler];
            let text = match act {
                Act::Question(form) => fill(&cfg.questions[form].template, tp, x),
                Act::Answer => match last {
                    Some(Act::Question(form)) => fill(rng.choose(&cfg.questions[form].answers), tp, x),
                    _ => unreachable!("answers only follow questions"),
                },
                Act::Comment(i) => fill(&cfg.comments[i], tp, x),
                Act::Generic(i) => normalize(&cfg.generic[i].0),
                Act::Dull => normalize(&cfg.dull_responses[weighted(&mut rng, &dull_weights)].0),
            };
            turns.push(text);
            last = Some(act);
        }
        out.push(turns);
    }
    Ok(out)
}

/// Non-dull turns of `corpus`, deduplicated, in order of first appearance.
pub fn candidate_messages(corpus: &[Dialogue], dull: &DullSet) -> Vec<Utterance> {
    let mut seen = HashSet::new();
    corpus
        .iter()
        .flat_map(|d| d.turns.iter())
        .filter(|u| !dull.contains(u) && seen.insert((*u).clone()))
        .cloned()
        .collect()
}

/// Score used to rank initial inputs: the highest length-normalized
/// log-probability of any dull reply.
pub fn dull_reply_score(message: &Utterance, model: &ModelParams, dull: &DullSet) -> Result<f64> {
    let enc = model.encode(&DialogueState::opening(message.clone()).source())?;
    let mut best = f64::NEG_INFINITY;
    for s in dull.utterances() {
        best = best.max(model.log_prob_encoded(&enc, s)? / s.len() as f64);
    }
    Ok(best)
}

/// Keeps the `ceil(keep_fraction * n)` messages least likely to draw a dull
/// reply, preserving their original order. Ties go to the earlier message.
pub fn filter_initial_inputs(
    messages: &[Utterance],
    model: &ModelParams,
    dull: &DullSet,
    keep_fraction: f64,
) -> Result<Vec<Utterance>> {
    if messages.is_empty() {
        return Err(Error::EmptyInput("initial messages".into()));
    }
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::Config(format!("keep_fraction must be in (0, 1], got {keep_fraction}")));
    }
    let keep = keep_count(messages.len(), keep_fraction);
    let scores = messages
        .iter()
        .map(|m| dull_reply_score(m, model, dull))
        .collect::<Result<Vec<f64>>>()?;
    Ok(select_lowest(&scores, keep).into_iter().map(|i| messages[i].clone()).collect())
}

pub(crate) fn keep_count(n: usize, fraction: f64) -> usize {
    // guard against 0.07999999 * 100 style rounding
    (((n as f64) * fraction) - 1e-9).ceil().clamp(1.0, n as f64) as usize
}

/// Indices of the `keep` lowest scores, returned in ascending index order.
fn select_lowest(scores: &[f64], keep: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = order.into_iter().take(keep).collect();
    kept.sort_unstable();
    kept
}
