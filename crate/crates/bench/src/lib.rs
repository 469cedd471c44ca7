//! Fixtures shared by the benchmarks.

use s2srl::corpus::{generate_synthetic_corpus, GrammarConfig};
use s2srl::{Direction, DialogueState, ModelDims, ModelParams, RngStream, Utterance, Vocab};

pub struct Fixture {
    pub vocab: Vocab,
    pub forward: ModelParams,
    pub backward: ModelParams,
    pub utterances: Vec<Utterance>,
}

impl Fixture {
    /// Random models of the default size over a synthetic corpus vocabulary.
    pub fn new(hidden: usize, embed: usize) -> Fixture {
        let grammar = GrammarConfig { dialogues: 200, ..GrammarConfig::default() };
        let raw = generate_synthetic_corpus(&grammar, 0).expect("default grammar is valid");
        let vocab = Vocab::build(&raw, 200).expect("corpus is non-empty");
        let dims = ModelDims { vocab: vocab.len(), embed, hidden, attention: false };
        let mut rng = RngStream::new(0);
        let forward = ModelParams::random(dims, Direction::Forward, vocab.hash(), 0.08, &mut rng);
        let backward = ModelParams::random(dims, Direction::Backward, vocab.hash(), 0.08, &mut rng);
        let utterances = raw.iter().flatten().take(64).map(|t| vocab.encode(t).expect("non-empty turn")).collect();
        Fixture { vocab, forward, backward, utterances }
    }

    pub fn state(&self, i: usize) -> DialogueState {
        let n = self.utterances.len();
        DialogueState::new(Some(self.utterances[i % n].clone()), self.utterances[(i + 1) % n].clone())
    }
}
