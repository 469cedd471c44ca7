//! Whitespace tokenization and the token/id bijection.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
/// Separator between the two context turns of a source sequence. Always id 4.
pub const SEP: TokenId = 4;

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];
const SEP_TOKEN: &str = "<sep>";

/// Number of implicit reserved ids (PAD, BOS, EOS, UNK).
pub const NUM_RESERVED: usize = 4;

/// Lowercase and split on whitespace.
/// Lowercased whitespace tokens, with trailing sentence punctuation split off
/// as tokens of its own: `"tea?"` gives `["tea", "?"]`.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let word = word.to_lowercase();
        let stem = word.trim_end_matches(PUNCTUATION);
        if !stem.is_empty() {
            out.push(stem.to_string());
        }
        out.extend(word[stem.len()..].chars().map(String::from));
    }
    out
}

const PUNCTUATION: [char; 4] = ['.', '?', '!', ','];

/// Canonical single-spaced lowercase form of `text`.
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    fn from_tokens(extra: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.push(SEP_TOKEN.to_string());
        tokens.extend(extra);
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Parse(format!("duplicate vocab token `{t}`")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// Builds a vocabulary from text dialogues. Tokens are ranked by
    /// descending frequency, ties broken lexicographically. `max_size` counts
    /// the reserved ids and the separator.
    pub fn build<D, T>(corpus: &[D], max_size: usize) -> Result<Self>
    where
        D: AsRef<[T]>,
        T: AsRef<str>,
    {
        if max_size < NUM_RESERVED + 1 {
            return Err(Error::Config(format!(
                "vocab max_size must be at least {}, got {max_size}",
                NUM_RESERVED + 1
            )));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for dialogue in corpus {
            for turn in dialogue.as_ref() {
                for tok in tokenize(turn.as_ref()) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        for r in RESERVED.iter().chain(std::iter::once(&SEP_TOKEN)) {
            counts.remove(*r);
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let room = max_size - NUM_RESERVED - 1;
        Self::from_tokens(ranked.into_iter().take(room).map(|(t, _)| t))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.tokens.get(id as usize).map(String::as_str).unwrap_or(RESERVED[UNK as usize])
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Encodes text as content tokens followed by EOS.
    pub fn encode(&self, text: &str) -> Result<Utterance> {
        let mut ids: Vec<TokenId> = tokenize(text).iter().map(|t| self.id(t)).collect();
        if ids.is_empty() {
            return Err(Error::EmptyUtterance);
        }
        ids.push(EOS);
        Utterance::new(ids)
    }

    /// Space-joined content tokens; EOS is dropped.
    pub fn decode(&self, u: &Utterance) -> String {
        u.content().iter().map(|&id| self.token(id)).collect::<Vec<_>>().join(" ")
    }

    /// Stable content hash, used to tie checkpoints to the vocabulary they
    /// were trained with.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// One token per line; line `n` holds id `n + 4`. Reserved ids are implicit.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens[NUM_RESERVED..] {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(SEP_TOKEN) => {}
            other => {
                return Err(Error::Parse(format!(
                    "vocab file must start with `{SEP_TOKEN}`, found {other:?}"
                )))
            }
        }
        Self::from_tokens(lines.map(str::to_string))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// A token sequence: non-empty, no PAD, at most one EOS and only at the end.
///
/// Utterances produced by [`Vocab::encode`] always end in EOS; decoder output
/// cut off at the length limit may not.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Utterance(Vec<TokenId>);

impl Utterance {
    pub fn new(ids: Vec<TokenId>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyUtterance);
        }
        if ids.contains(&PAD) {
            return Err(Error::Parse("utterance contains PAD".into()));
        }
        if let Some(pos) = ids.iter().position(|&t| t == EOS) {
            if pos + 1 != ids.len() {
                return Err(Error::Parse("EOS before end of utterance".into()));
            }
        }
        Ok(Utterance(ids))
    }

    /// All ids, including a trailing EOS if present.
    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    /// Ids without the trailing EOS.
    pub fn content(&self) -> &[TokenId] {
        match self.0.split_last() {
            Some((&EOS, rest)) => rest,
            _ => &self.0,
        }
    }

    /// Token count including EOS.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ends_with_eos(&self) -> bool {
        self.0.last() == Some(&EOS)
    }
}

impl fmt::Display for Utterance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|t| t.to_string()).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

/// The two previous turns `[p, q]`; `previous` is absent at the start of a
/// dialogue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueState {
    pub previous: Option<Utterance>,
    pub current: Utterance,
}

impl DialogueState {
    pub fn new(previous: Option<Utterance>, current: Utterance) -> Self {
        DialogueState { previous, current }
    }

    /// State with no earlier context.
    pub fn opening(current: Utterance) -> Self {
        DialogueState { previous: None, current }
    }

    /// Encoder input: `previous SEP current`, with BOS standing in for an
    /// absent previous turn.
    pub fn source(&self) -> Vec<TokenId> {
        let mut src = Vec::new();
        match &self.previous {
            Some(p) => src.extend_from_slice(p.content()),
            None => src.push(BOS),
        }
        src.push(SEP);
        src.extend_from_slice(self.current.content());
        src
    }
}

/// Responses the policy should learn to avoid.
#[derive(Debug, Clone)]
pub struct DullSet {
    utterances: Vec<Utterance>,
}

/// Generic replies used by default.
pub const DEFAULT_DULL_RESPONSES: [&str; 8] = [
    "I don't know",
    "I don't know what you are talking about",
    "I have no idea",
    "I'm not sure what you're talking about",
    "I'm sorry",
    "I'm OK",
    "see you later",
    "I have no idea what you're talking about",
];

impl DullSet {
    pub fn from_texts<S: AsRef<str>>(texts: &[S], vocab: &Vocab) -> Result<Self> {
        let utterances = texts
            .iter()
            .filter(|t| !t.as_ref().trim().is_empty())
            .map(|t| vocab.encode(t.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        if utterances.is_empty() {
            return Err(Error::Config("dull set is empty".into()));
        }
        Ok(DullSet { utterances })
    }

    pub fn default_for(vocab: &Vocab) -> Self {
        Self::from_texts(&DEFAULT_DULL_RESPONSES, vocab).expect("default dull set is non-empty")
    }

    /// One utterance per line.
    pub fn load(path: &Path, vocab: &Vocab) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let lines: Vec<&str> = text.lines().collect();
        Self::from_texts(&lines, vocab)
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Exact match on content tokens.
    pub fn contains(&self, u: &Utterance) -> bool {
        self.utterances.iter().any(|d| d.content() == u.content())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny() -> Vocab {
        Vocab::build(&[vec!["a b a"]], 10).unwrap()
    }

    #[test]
    fn build_ranks_by_frequency_then_lexicographic() {
        let v = tiny();
        assert_eq!(v.tokens(), &["<pad>", "<bos>", "<eos>", "<unk>", "<sep>", "a", "b"]);
        let v = Vocab::build(&[vec!["c b", "b c d"]], 10).unwrap();
        assert_eq!(&v.tokens()[5..], &["b", "c", "d"]);
    }

    #[test]
    fn tokenize_splits_trailing_punctuation() {
        assert_eq!(tokenize("Do you like TEA?"), ["do", "you", "like", "tea", "?"]);
        assert_eq!(tokenize("i don't know."), ["i", "don't", "know", "."]);
        assert_eq!(tokenize("well, ok !"), ["well", ",", "ok", "!"]);
        assert_eq!(tokenize("?!"), ["?", "!"]);
        assert_eq!(normalize("  that is nice.  "), "that is nice .");
    }

    #[test]
    fn build_empty_and_bad_size() {
        let empty: Vec<Vec<String>> = vec![];
        let v = Vocab::build(&empty, 10).unwrap();
        assert_eq!(v.len(), 5);
        assert!(matches!(Vocab::build(&empty, 3), Err(Error::Config(_))));
        assert!(matches!(Vocab::build(&empty, 4), Err(Error::Config(_))));
    }

    #[test]
    fn build_respects_max_size() {
        let v = Vocab::build(&[vec!["a b c d e f"]], 7).unwrap();
        assert_eq!(v.len(), 7);
    }

    #[test]
    fn encode_decode() {
        let v = tiny();
        let u = v.encode("a b").unwrap();
        assert_eq!(u.ids(), &[5, 6, EOS]);
        assert_eq!(v.decode(&u), "a b");
        assert_eq!(v.encode("zzz").unwrap().content(), &[UNK]);
        assert!(matches!(v.encode(""), Err(Error::EmptyUtterance)));
        assert!(matches!(v.encode("   "), Err(Error::EmptyUtterance)));
        assert_eq!(v.decode(&v.encode("A  B").unwrap()), "a b");
    }

    #[test]
    fn utterance_invariants() {
        assert!(Utterance::new(vec![]).is_err());
        assert!(Utterance::new(vec![5, PAD]).is_err());
        assert!(Utterance::new(vec![5, EOS, 6]).is_err());
        let u = Utterance::new(vec![5, 6]).unwrap();
        assert!(!u.ends_with_eos());
        assert_eq!(u.content(), &[5, 6]);
    }

    #[test]
    fn file_round_trip() {
        let v = Vocab::build(&[vec!["hello world", "hello there"]], 50).unwrap();
        let text = v.to_file_string();
        assert!(text.starts_with("<sep>\nhello\n"));
        let back = Vocab::parse(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
        assert!(Vocab::parse("hello\n").is_err());
    }

    #[test]
    fn state_source_layout() {
        let v = tiny();
        let a = v.encode("a").unwrap();
        let b = v.encode("b a").unwrap();
        assert_eq!(DialogueState::opening(b.clone()).source(), vec![BOS, SEP, 6, 5]);
        assert_eq!(DialogueState::new(Some(a), b).source(), vec![5, SEP, 6, 5]);
    }

    #[test]
    fn dull_set_matching() {
        let v = Vocab::build(&[vec!["i don't know", "see you later", "i know"]], 50).unwrap();
        let dull = DullSet::default_for(&v);
        assert_eq!(dull.len(), 8);
        assert!(dull.contains(&v.encode("I don't   know").unwrap()));
        assert!(!dull.contains(&v.encode("i don't know it").unwrap()));
        assert!(DullSet::from_texts::<&str>(&[], &v).is_err());
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(words in prop::collection::vec("[a-e]{1,3}", 1..8)) {
            let text = words.join(" ");
            let v = Vocab::build(&[vec![text.clone()]], 100).unwrap();
            prop_assert_eq!(v.decode(&v.encode(&text).unwrap()), text);
        }
    }
}
