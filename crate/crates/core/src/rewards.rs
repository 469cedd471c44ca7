//! Per-utterance rewards: ease of answering, information flow and semantic
//! coherence, and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::cosine_similarity;
use crate::model::{EncoderState, ModelParams};
use crate::vocab::{DialogueState, DullSet, Utterance};

/// Cosine similarities are clamped to at least this before the log.
pub const COSINE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub simplicity: f64,
    pub information_flow: f64,
    pub coherence: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { simplicity: 0.25, information_flow: 0.25, coherence: 0.5 }
    }
}

impl RewardWeights {
    pub fn new(simplicity: f64, information_flow: f64, coherence: f64) -> Result<Self> {
        let w = RewardWeights { simplicity, information_flow, coherence };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.simplicity, self.information_flow, self.coherence];
        if ws.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::Config(format!("reward weights must lie in [0, 1]: {ws:?}")));
        }
        let sum: f64 = ws.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("reward weights must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub total: f64,
}

/// How the outer normalizer of the simplicity reward is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimplicityNorm {
    /// `-(1/|S|) sum_s (1/N_s) log p(s|a)`.
    #[default]
    Cardinality,
    /// `-sum_s (1/N_s^2) log p(s|a)`: both factors are the token count.
    Literal,
}

/// `r1`: negative mean length-normalized log-likelihood of replying to `a`
/// with a dull response.
pub fn simplicity_reward(a: &Utterance, dull: &DullSet, fwd: &ModelParams) -> Result<f64> {
    simplicity_reward_with(a, dull, fwd, SimplicityNorm::Cardinality)
}

pub fn simplicity_reward_with(
    a: &Utterance,
    dull: &DullSet,
    fwd: &ModelParams,
    norm: SimplicityNorm,
) -> Result<f64> {
    if dull.is_empty() {
        return Err(Error::Config("dull set is empty".into()));
    }
    let enc = fwd.encode(&DialogueState::opening(a.clone()).source())?;
    let mut acc = 0.0;
    for s in dull.utterances() {
        let n = s.len() as f64;
        let lp = fwd.log_prob_encoded(&enc, s)?;
        acc += match norm {
            SimplicityNorm::Cardinality => lp / n,
            SimplicityNorm::Literal => lp / (n * n),
        };
    }
    Ok(match norm {
        SimplicityNorm::Cardinality => -acc / dull.len() as f64,
        SimplicityNorm::Literal => -acc,
    })
}

/// `r2 = -ln(max(cos(h_prev, h_cur), 1e-8))`.
pub fn information_flow_reward(h_prev: &EncoderState, h_cur: &EncoderState) -> Result<f64> {
    let cos = cosine_similarity(&h_prev.h, &h_cur.h)?;
    Ok(0.0 - cos.max(COSINE_FLOOR).ln())
}

/// `r3 = (1/N_a) log p_fwd(a | state) + (1/N_q) log p_bwd(q | a)` with `q`
/// the most recent turn of `state`.
pub fn coherence_reward(
    a: &Utterance,
    state: &DialogueState,
    fwd: &ModelParams,
    bwd: &ModelParams,
) -> Result<f64> {
    let forward = fwd.log_prob(&state.source(), a)? / a.len() as f64;
    let q = &state.current;
    let backward = bwd.log_prob(&DialogueState::opening(a.clone()).source(), q)? / q.len() as f64;
    Ok(forward + backward)
}

pub fn combined_reward(r1: f64, r2: f64, r3: f64, w: &RewardWeights) -> Result<RewardBreakdown> {
    w.validate()?;
    Ok(RewardBreakdown {
        r1,
        r2,
        r3,
        total: w.simplicity * r1 + w.information_flow * r2 + w.coherence * r3,
    })
}

/// Frozen models and settings used to score simulated turns.
#[derive(Debug, Clone, Copy)]
pub struct RewardModel<'a> {
    pub forward: &'a ModelParams,
    pub backward: &'a ModelParams,
    pub dull: &'a DullSet,
    pub weights: RewardWeights,
    pub norm: SimplicityNorm,
}

impl<'a> RewardModel<'a> {
    pub fn new(
        forward: &'a ModelParams,
        backward: &'a ModelParams,
        dull: &'a DullSet,
        weights: RewardWeights,
    ) -> Result<Self> {
        weights.validate()?;
        Ok(RewardModel { forward, backward, dull, weights, norm: SimplicityNorm::default() })
    }

    /// Encoder representation of a single utterance, used for `r2`.
    pub fn represent(&self, u: &Utterance) -> Result<EncoderState> {
        self.forward.encode_state(&DialogueState::opening(u.clone()))
    }

    /// Rewards for emitting `a` in `state`. `own_previous` is the acting
    /// agent's previous utterance; without one, `r2` is 0.
    pub fn score(
        &self,
        a: &Utterance,
        state: &DialogueState,
        own_previous: Option<&Utterance>,
    ) -> Result<RewardBreakdown> {
        let r1 = simplicity_reward_with(a, self.dull, self.forward, self.norm)?;
        let r2 = match own_previous {
            Some(prev) => {
                let (hp, hc) = (self.represent(prev)?, self.represent(a)?);
                match information_flow_reward(&hp, &hc) {
                    Ok(r) => r,
                    // a zero encoding has no direction; treat as orthogonal
                    Err(Error::Degenerate(_)) => -COSINE_FLOOR.ln(),
                    Err(e) => return Err(e),
                }
            }
            None => 0.0,
        };
        let r3 = coherence_reward(a, state, self.forward, self.backward)?;
        combined_reward(r1, r2, r3, &self.weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Direction, ModelDims};
    use crate::rng::RngStream;
    use crate::vocab::Vocab;
    use proptest::prelude::*;

    fn vocab() -> Vocab {
        Vocab::build(&[vec!["i don't know", "what is this", "see you later"]], 50).unwrap()
    }

    fn zero_model(v: &Vocab, direction: Direction) -> ModelParams {
        let dims = ModelDims { vocab: v.len(), embed: 3, hidden: 4, attention: false };
        ModelParams::zeros(dims, direction, v.hash())
    }

    #[test]
    fn simplicity_under_uniform_model_is_ln_v() {
        let v = vocab();
        let m = zero_model(&v, Direction::Forward);
        let dull = DullSet::from_texts(&["i don't know"], &v).unwrap();
        let r1 = simplicity_reward(&v.encode("what is this").unwrap(), &dull, &m).unwrap();
        assert!((r1 - (v.len() as f64).ln()).abs() < 1e-9);
        // also for the full default set: every term is -ln V
        let full = DullSet::default_for(&v);
        let r1 = simplicity_reward(&v.encode("what").unwrap(), &full, &m).unwrap();
        assert!((r1 - (v.len() as f64).ln()).abs() < 1e-9);
    }

    /// A model that emits "know EOS" with probability ~1 regardless of the
    /// source: the decoder input selects which hidden unit fires.
    fn certain_model(v: &Vocab) -> ModelParams {
        let mut m = zero_model(v, Direction::Forward);
        let (bos, know, eos) = (crate::vocab::BOS as usize, v.id("know") as usize, crate::vocab::EOS as usize);
        m.embedding.set(bos, 0, 1.0);
        m.embedding.set(know, 1, 1.0);
        let h = 4;
        for k in 0..h {
            m.decoder.bias[k] = 50.0; // input gate open
            m.decoder.bias[h + k] = -50.0; // forget gate closed
            m.decoder.bias[3 * h + k] = 50.0; // output gate open
        }
        m.decoder.weight.set(2 * h, 0, 50.0);
        m.decoder.weight.set(2 * h + 1, 1, 50.0);
        m.output.set(know, 0, 100.0);
        m.output.set(eos, 1, 100.0);
        m
    }

    #[test]
    fn simplicity_zero_when_dull_is_certain() {
        let v = vocab();
        let m = certain_model(&v);
        let dull = DullSet::from_texts(&["know"], &v).unwrap();
        let r1 = simplicity_reward(&v.encode("what is this").unwrap(), &dull, &m).unwrap();
        assert!(r1.abs() < 1e-9, "{r1}");
    }

    #[test]
    fn coherence_zero_when_both_models_certain() {
        let v = vocab();
        let f = certain_model(&v);
        let b = certain_model(&v).with_direction(Direction::Backward);
        let know = v.encode("know").unwrap();
        let state = DialogueState::new(None, know.clone());
        let r3 = coherence_reward(&know, &state, &f, &b).unwrap();
        assert!(r3.abs() < 1e-9, "{r3}");
    }

    #[test]
    fn simplicity_formula_arithmetic() {
        // S = {s1 (N=2, log p=-2), s2 (N=3, log p=-3)}:
        // r1 = -(1/2)[(1/2)(-2) + (1/3)(-3)] = 1
        let terms: [(f64, f64); 2] = [(2.0, -2.0), (3.0, -3.0)];
        let r1 = -terms.iter().map(|(n, lp)| lp / n).sum::<f64>() / 2.0;
        assert!((r1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn information_flow_examples() {
        let h = EncoderState { h: vec![0.3, -0.2, 0.9] };
        assert_eq!(information_flow_reward(&h, &h).unwrap(), 0.0);

        let c = (-1.0f64).exp();
        let a = EncoderState { h: vec![1.0, 0.0] };
        let b = EncoderState { h: vec![c, (1.0 - c * c).sqrt()] };
        assert!((information_flow_reward(&a, &b).unwrap() - 1.0).abs() < 1e-12);

        let o = EncoderState { h: vec![0.0, 1.0] };
        let r = information_flow_reward(&a, &o).unwrap();
        assert!((r - 18.420680744).abs() < 1e-8);

        let z = EncoderState { h: vec![0.0, 0.0] };
        assert!(matches!(information_flow_reward(&a, &z), Err(Error::Degenerate(_))));
    }

    #[test]
    fn coherence_under_uniform_models() {
        let v = vocab();
        let f = zero_model(&v, Direction::Forward);
        let b = zero_model(&v, Direction::Backward);
        let state = DialogueState::new(Some(v.encode("see you").unwrap()), v.encode("what is this").unwrap());
        let r3 = coherence_reward(&v.encode("i don't know").unwrap(), &state, &f, &b).unwrap();
        assert!((r3 + 2.0 * (v.len() as f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn coherence_normalizers_cancel() {
        // p_fwd = e^{-N_a}, p_bwd = e^{-N_q}  =>  r3 = -1 - 1
        let (na, nq) = (4.0, 3.0);
        let r3 = (-na) / na + (-nq) / nq;
        assert_eq!(r3, -2.0);
    }

    #[test]
    fn combined_examples() {
        let w = RewardWeights::default();
        assert!((combined_reward(1.0, 1.0, 1.0, &w).unwrap().total - 1.0).abs() < 1e-15);
        let b = combined_reward(0.4, 0.8, 0.2, &w).unwrap();
        assert!((b.total - 0.4).abs() < 1e-12);
        assert!(RewardWeights::new(0.5, 0.6, 0.2).is_err());
        assert!(RewardWeights::new(-0.5, 1.0, 0.5).is_err());
        let bad = RewardWeights { simplicity: 0.5, information_flow: 0.6, coherence: 0.2 };
        assert!(matches!(combined_reward(1.0, 1.0, 1.0, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn simplicity_falls_as_dull_probability_rises() {
        let v = vocab();
        let dull = DullSet::from_texts(&["know"], &v).unwrap();
        let know = v.id("know") as usize;
        let a = v.encode("what is").unwrap();
        let src = DialogueState::opening(a.clone()).source();
        let mut seen = Vec::new();
        for bias in [-2.0, -1.0, 0.0, 0.5, 1.0, 2.0, 4.0] {
            let mut m = zero_model(&v, Direction::Forward);
            m.output_bias[know] = bias;
            let lp = m.log_prob(&src, &dull.utterances()[0]).unwrap();
            seen.push((lp, simplicity_reward(&a, &dull, &m).unwrap()));
        }
        seen.sort_by(|x, y| x.0.total_cmp(&y.0));
        for w in seen.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-12);
        }
    }

    #[test]
    fn literal_norm_differs() {
        let v = vocab();
        let m = zero_model(&v, Direction::Forward);
        let dull = DullSet::from_texts(&["i don't know"], &v).unwrap();
        let a = v.encode("what").unwrap();
        let lit = simplicity_reward_with(&a, &dull, &m, SimplicityNorm::Literal).unwrap();
        // single s with N=4: literal = ln V / 4
        assert!((lit - (v.len() as f64).ln() / 4.0).abs() < 1e-9);
    }

    #[test]
    fn reward_model_first_turn_has_no_flow_term() {
        let v = vocab();
        let mut rng = RngStream::new(1);
        let dims = ModelDims { vocab: v.len(), embed: 3, hidden: 4, attention: false };
        let f = ModelParams::random(dims, Direction::Forward, v.hash(), 0.3, &mut rng);
        let b = ModelParams::random(dims, Direction::Backward, v.hash(), 0.3, &mut rng);
        let dull = DullSet::default_for(&v);
        let rm = RewardModel::new(&f, &b, &dull, RewardWeights::default()).unwrap();
        let a = v.encode("see you later").unwrap();
        let state = DialogueState::opening(v.encode("what is this").unwrap());
        let r = rm.score(&a, &state, None).unwrap();
        assert_eq!(r.r2, 0.0);
        let r = rm.score(&a, &state, Some(&a)).unwrap();
        assert!(r.r2.abs() < 1e-12);
        let expect = 0.25 * r.r1 + 0.25 * r.r2 + 0.5 * r.r3;
        assert!((r.total - expect).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn combined_is_linear(
            r in prop::array::uniform3(-10.0f64..10.0),
            alpha in -5.0f64..5.0,
            l1 in 0.0f64..1.0,
            l2f in 0.0f64..1.0,
        ) {
            let l2 = (1.0 - l1) * l2f;
            let w = RewardWeights::new(l1, l2, 1.0 - l1 - l2).unwrap();
            let base = combined_reward(r[0], r[1], r[2], &w).unwrap().total;
            let scaled = combined_reward(alpha * r[0], alpha * r[1], alpha * r[2], &w).unwrap().total;
            prop_assert!((scaled - alpha * base).abs() < 1e-9);
        }

        #[test]
        fn flow_scale_invariant_and_monotone(
            u in prop::collection::vec(-3.0f64..3.0, 4),
            v in prop::collection::vec(-3.0f64..3.0, 4),
            s in 0.01f64..50.0,
        ) {
            prop_assume!(crate::math::norm(&u) > 1e-3 && crate::math::norm(&v) > 1e-3);
            let a = EncoderState { h: u.clone() };
            let b = EncoderState { h: v.clone() };
            let scaled = EncoderState { h: v.iter().map(|x| x * s).collect() };
            let r = information_flow_reward(&a, &b).unwrap();
            prop_assert!((r - information_flow_reward(&a, &scaled).unwrap()).abs() < 1e-9);
            prop_assert!(information_flow_reward(&a, &a).unwrap() == 0.0);
            prop_assert!(r >= -1e-12);
        }
    }
}
