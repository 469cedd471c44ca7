//! Beam search, greedy and sampled decoding.
//!
//! PAD, BOS, UNK and SEP are never emitted: they are skipped during
//! expansion and sampling. Scores are the model's unnormalized-over-the-
//! allowed-set log-probabilities, i.e. exactly what [`ModelParams::log_prob`]
//! returns for the produced sequence.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::math::sample_index;
use crate::rng::RngStream;
use crate::vocab::{TokenId, Utterance, BOS, EOS, PAD, SEP, UNK};

use super::network::{DecoderState, Encoded};
use super::ModelParams;

/// Temperatures below this decode greedily.
pub const GREEDY_TEMPERATURE: f64 = 1e-6;

/// Whether the decoder may emit `tok`.
pub fn is_generatable(tok: TokenId) -> bool {
    !matches!(tok, PAD | BOS | UNK | SEP)
}

fn allowed(vocab: usize) -> impl Iterator<Item = TokenId> {
    (0..vocab as TokenId).filter(|&t| is_generatable(t))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub utterance: Utterance,
    /// Total log-probability.
    pub score: f64,
}

struct Live {
    tokens: Vec<TokenId>,
    score: f64,
    state: DecoderState,
}

fn by_score_then_tokens(a: (f64, &[TokenId]), b: (f64, &[TokenId])) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(b.1))
}

/// Beam search from an already encoded source. Returns at most `width`
/// hypotheses sorted by descending score; ties are ordered by token ids.
pub fn beam_search_encoded(
    params: &ModelParams,
    enc: &Encoded,
    width: usize,
    max_len: usize,
) -> Result<Vec<Hypothesis>> {
    if width == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    if max_len == 0 {
        return Err(Error::Config("max decode length must be at least 1".into()));
    }
    let vocab = params.vocab_size();
    let mut live = vec![Live { tokens: Vec::new(), score: 0.0, state: params.decoder_start(enc) }];
    let mut finished: Vec<(Vec<TokenId>, f64)> = Vec::new();

    for step in 0..max_len {
        let mut expanded: Vec<(usize, DecoderState, Vec<f64>)> = Vec::with_capacity(live.len());
        let mut cands: Vec<(f64, Vec<TokenId>, usize)> = Vec::new();
        for (i, hyp) in live.iter().enumerate() {
            let input = hyp.tokens.last().copied().unwrap_or(BOS);
            let (next, lp) = params.decoder_step(enc, &hyp.state, input);
            for tok in allowed(vocab) {
                let mut toks = hyp.tokens.clone();
                toks.push(tok);
                cands.push((hyp.score + lp[tok as usize], toks, i));
            }
            expanded.push((i, next, lp));
        }
        cands.sort_by(|a, b| by_score_then_tokens((a.0, &a.1), (b.0, &b.1)));
        cands.truncate(width);

        let mut next_live = Vec::new();
        for (score, toks, parent) in cands {
            if *toks.last().unwrap() == EOS || step + 1 == max_len {
                finished.push((toks, score));
            } else {
                next_live.push(Live { tokens: toks, score, state: expanded[parent].1.clone() });
            }
        }
        live = next_live;
        if live.is_empty() {
            break;
        }
        if finished.len() >= width {
            finished.sort_by(|a, b| by_score_then_tokens((a.1, &a.0), (b.1, &b.0)));
            let cutoff = finished[width - 1].1;
            let best_live = live.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
            if best_live < cutoff {
                break;
            }
        }
    }
    finished.sort_by(|a, b| by_score_then_tokens((a.1, &a.0), (b.1, &b.0)));
    finished.truncate(width);
    finished
        .into_iter()
        .map(|(toks, score)| Ok(Hypothesis { utterance: Utterance::new(toks)?, score }))
        .collect()
}

pub fn beam_search(
    params: &ModelParams,
    source: &[TokenId],
    width: usize,
    max_len: usize,
) -> Result<Vec<Hypothesis>> {
    let enc = params.encode(source)?;
    beam_search_encoded(params, &enc, width, max_len)
}

/// Argmax decoding; ties go to the lowest token id.
pub fn greedy_decode_encoded(params: &ModelParams, enc: &Encoded, max_len: usize) -> Result<Utterance> {
    let vocab = params.vocab_size();
    let mut state = params.decoder_start(enc);
    let mut tokens = Vec::new();
    let mut input = BOS;
    for _ in 0..max_len.max(1) {
        let (next, lp) = params.decoder_step(enc, &state, input);
        let mut best: Option<TokenId> = None;
        for tok in allowed(vocab) {
            if best.is_none_or(|b| lp[tok as usize] > lp[b as usize]) {
                best = Some(tok);
            }
        }
        let tok = best.ok_or_else(|| Error::Config("vocabulary has no generatable tokens".into()))?;
        tokens.push(tok);
        if tok == EOS {
            break;
        }
        state = next;
        input = tok;
    }
    Utterance::new(tokens)
}

pub fn greedy_decode(params: &ModelParams, source: &[TokenId], max_len: usize) -> Result<Utterance> {
    let enc = params.encode(source)?;
    greedy_decode_encoded(params, &enc, max_len)
}

/// Ancestral sampling from the temperature-scaled distribution restricted to
/// generatable tokens.
pub fn sample_decode_encoded(
    params: &ModelParams,
    enc: &Encoded,
    rng: &mut RngStream,
    temperature: f64,
    max_len: usize,
) -> Result<Utterance> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    if temperature < GREEDY_TEMPERATURE {
        return greedy_decode_encoded(params, enc, max_len);
    }
    let vocab = params.vocab_size();
    let ids: Vec<TokenId> = allowed(vocab).collect();
    if ids.is_empty() {
        return Err(Error::Config("vocabulary has no generatable tokens".into()));
    }
    let mut state = params.decoder_start(enc);
    let mut tokens = Vec::new();
    let mut input = BOS;
    let mut weights = vec![0.0; ids.len()];
    for _ in 0..max_len.max(1) {
        let (next, lp) = params.decoder_step(enc, &state, input);
        let max = ids.iter().map(|&t| lp[t as usize]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (w, &t) in weights.iter_mut().zip(&ids) {
            *w = ((lp[t as usize] - max) / temperature).exp();
            total += *w;
        }
        let tok = ids[sample_index(&weights, rng.next_f64() * total)];
        tokens.push(tok);
        if tok == EOS {
            break;
        }
        state = next;
        input = tok;
    }
    Utterance::new(tokens)
}

pub fn sample_decode(
    params: &ModelParams,
    source: &[TokenId],
    rng: &mut RngStream,
    temperature: f64,
    max_len: usize,
) -> Result<Utterance> {
    let enc = params.encode(source)?;
    sample_decode_encoded(params, &enc, rng, temperature, max_len)
}
