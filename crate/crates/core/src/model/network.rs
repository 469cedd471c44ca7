//! Forward passes and hand-derived backpropagation through time.
//!
//! LSTM cell, gate order `i, f, g, o`:
//!
//! ```text
//! z  = [x; h_prev]
//! i  = sigmoid(W_i z + b_i)    f = sigmoid(W_f z + b_f)
//! g  = tanh(W_g z + b_g)       o = sigmoid(W_o z + b_o)
//! c  = f * c_prev + i * g
//! h  = o * tanh(c)
//! ```
//!
//! The decoder starts from the encoder's final `(h, c)` and is fed `BOS`
//! followed by the target shifted right. With attention enabled, the output
//! projection sees `[h; ctx]` where `ctx` is the softmax-weighted sum of
//! encoder hidden states.

use crate::error::{Error, Result};
use crate::math::{axpy, dot, log_sum_exp, min_log_prob, sigmoid};
use crate::vocab::{DialogueState, TokenId, Utterance, BOS};

use super::{AttentionWeights, LstmWeights, ModelParams};

#[derive(Debug, Clone)]
pub(crate) struct LstmCache {
    z: Vec<f64>,
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

fn lstm_forward(w: &LstmWeights, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmCache {
    let hd = h_prev.len();
    let mut z = Vec::with_capacity(x.len() + hd);
    z.extend_from_slice(x);
    z.extend_from_slice(h_prev);

    let mut gates: Vec<f64> = w
        .weight
        .as_slice()
        .chunks_exact(z.len())
        .zip(&w.bias)
        .map(|(row, b)| dot(row, &z) + b)
        .collect();
    let mut c = vec![0.0; hd];
    let mut tanh_c = vec![0.0; hd];
    let mut h = vec![0.0; hd];
    for k in 0..hd {
        let i = sigmoid(gates[k]);
        let f = sigmoid(gates[hd + k]);
        let g = gates[2 * hd + k].tanh();
        let o = sigmoid(gates[3 * hd + k]);
        gates[k] = i;
        gates[hd + k] = f;
        gates[2 * hd + k] = g;
        gates[3 * hd + k] = o;
        c[k] = f * c_prev[k] + i * g;
        tanh_c[k] = c[k].tanh();
        h[k] = o * tanh_c[k];
    }
    LstmCache { z, gates, c_prev: c_prev.to_vec(), c, tanh_c, h }
}

/// Backpropagates one cell. `dh` is the total gradient on this step's `h`;
/// `dc` holds the gradient on this step's `c` from the future and is
/// overwritten with the gradient on `c_prev`. Returns the gradient on `z`.
fn lstm_backward(
    w: &LstmWeights,
    grad: &mut LstmWeights,
    cache: &LstmCache,
    dh: &[f64],
    dc: &mut [f64],
) -> Vec<f64> {
    let hd = dh.len();
    let g = &cache.gates;
    let mut dpre = vec![0.0; 4 * hd];
    for k in 0..hd {
        let (i, f, cand, o) = (g[k], g[hd + k], g[2 * hd + k], g[3 * hd + k]);
        let tc = cache.tanh_c[k];
        let d_o = dh[k] * tc;
        let dck = dc[k] + dh[k] * o * (1.0 - tc * tc);
        dpre[k] = dck * cand * i * (1.0 - i);
        dpre[hd + k] = dck * cache.c_prev[k] * f * (1.0 - f);
        dpre[2 * hd + k] = dck * i * (1.0 - cand * cand);
        dpre[3 * hd + k] = d_o * o * (1.0 - o);
        dc[k] = dck * f;
    }
    grad.weight.add_outer(1.0, &dpre, &cache.z);
    axpy(1.0, &dpre, &mut grad.bias);
    let mut dz = vec![0.0; cache.z.len()];
    w.weight.add_matvec_transposed(&dpre, &mut dz);
    dz
}

/// Encoder pass over one source sequence, with everything the decoder and
/// the backward pass need.
#[derive(Debug, Clone)]
pub struct Encoded {
    source: Vec<TokenId>,
    steps: Vec<LstmCache>,
    /// `K e_j` per source position; empty without attention.
    keys: Vec<Vec<f64>>,
}

impl Encoded {
    pub fn source(&self) -> &[TokenId] {
        &self.source
    }

    pub fn final_hidden(&self) -> &[f64] {
        &self.steps.last().expect("non-empty source").h
    }

    fn final_cell(&self) -> &[f64] {
        &self.steps.last().expect("non-empty source").c
    }

    pub fn state(&self) -> EncoderState {
        EncoderState { h: self.final_hidden().to_vec() }
    }
}

/// Final encoder hidden vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    h: Vec<f64>,
    c: Vec<f64>,
}

#[derive(Debug, Clone)]
struct AttnCache {
    /// `tanh(Q h + K e_j)` per source position.
    act: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

#[derive(Debug, Clone)]
struct DecCache {
    lstm: LstmCache,
    attn: Option<AttnCache>,
    feature: Vec<f64>,
    log_probs: Vec<f64>,
}

fn attend(att: &AttentionWeights, enc: &Encoded, h: &[f64]) -> (AttnCache, Vec<f64>) {
    let q = att.query.matvec(h).expect("query dims");
    let mut act = Vec::with_capacity(enc.steps.len());
    let mut scores = Vec::with_capacity(enc.steps.len());
    for key in &enc.keys {
        let a: Vec<f64> = q.iter().zip(key).map(|(x, y)| (x + y).tanh()).collect();
        scores.push(dot(&att.score, &a));
        act.push(a);
    }
    crate::math::softmax_in_place(&mut scores);
    let mut ctx = vec![0.0; h.len()];
    for (w, step) in scores.iter().zip(&enc.steps) {
        axpy(*w, &step.h, &mut ctx);
    }
    (AttnCache { act, weights: scores }, ctx)
}

#[allow(clippy::too_many_arguments)]
fn attend_backward(
    att: &AttentionWeights,
    grad: &mut AttentionWeights,
    enc: &Encoded,
    h_dec: &[f64],
    cache: &AttnCache,
    dctx: &[f64],
    dh_dec: &mut [f64],
    d_enc: &mut [Vec<f64>],
) {
    let n = enc.steps.len();
    let mut dalpha = vec![0.0; n];
    for j in 0..n {
        dalpha[j] = dot(dctx, &enc.steps[j].h);
        axpy(cache.weights[j], dctx, &mut d_enc[j]);
    }
    let mean: f64 = cache.weights.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
    let mut dq = vec![0.0; h_dec.len()];
    for j in 0..n {
        let ds = cache.weights[j] * (dalpha[j] - mean);
        if ds == 0.0 {
            continue;
        }
        let a = &cache.act[j];
        axpy(ds, a, &mut grad.score);
        let dpre: Vec<f64> =
            att.score.iter().zip(a).map(|(v, a)| ds * v * (1.0 - a * a)).collect();
        axpy(1.0, &dpre, &mut dq);
        grad.key.add_outer(1.0, &dpre, &enc.steps[j].h);
        att.key.add_matvec_transposed(&dpre, &mut d_enc[j]);
    }
    grad.query.add_outer(1.0, &dq, h_dec);
    att.query.add_matvec_transposed(&dq, dh_dec);
}

impl ModelParams {
    fn check_tokens(&self, ids: &[TokenId]) -> Result<()> {
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= self.dims().vocab) {
            return Err(Error::IndexOutOfRange { index: bad as usize, len: self.dims().vocab });
        }
        Ok(())
    }

    /// Runs the encoder over `source`.
    pub fn encode(&self, source: &[TokenId]) -> Result<Encoded> {
        if source.is_empty() {
            return Err(Error::EmptyInput("encoder source".into()));
        }
        self.check_tokens(source)?;
        let hd = self.dims().hidden;
        let mut steps: Vec<LstmCache> = Vec::with_capacity(source.len());
        let zeros = vec![0.0; hd];
        for &tok in source {
            let (h, c) = match steps.last() {
                Some(s) => (&s.h, &s.c),
                None => (&zeros, &zeros),
            };
            let step = lstm_forward(&self.encoder, self.embedding.row(tok as usize), h, c);
            steps.push(step);
        }
        let keys = match &self.attention {
            Some(att) => steps.iter().map(|s| att.key.matvec(&s.h).expect("key dims")).collect(),
            None => Vec::new(),
        };
        Ok(Encoded { source: source.to_vec(), steps, keys })
    }

    /// Final encoder hidden vector for `previous SEP current`.
    pub fn encode_state(&self, state: &DialogueState) -> Result<EncoderState> {
        Ok(self.encode(&state.source())?.state())
    }

    pub fn decoder_start(&self, enc: &Encoded) -> DecoderState {
        DecoderState { h: enc.final_hidden().to_vec(), c: enc.final_cell().to_vec() }
    }

    fn decoder_forward(&self, enc: &Encoded, input: TokenId, h: &[f64], c: &[f64]) -> DecCache {
        let lstm = lstm_forward(&self.decoder, self.embedding.row(input as usize), h, c);
        let (attn, feature) = match &self.attention {
            Some(att) => {
                let (cache, ctx) = attend(att, enc, &lstm.h);
                let mut f = lstm.h.clone();
                f.extend_from_slice(&ctx);
                (Some(cache), f)
            }
            None => (None, lstm.h.clone()),
        };
        let mut logits: Vec<f64> = self
            .output
            .as_slice()
            .chunks_exact(feature.len())
            .zip(&self.output_bias)
            .map(|(row, b)| dot(row, &feature) + b)
            .collect();
        let lse = log_sum_exp(&logits);
        logits.iter_mut().for_each(|v| *v -= lse);
        DecCache { lstm, attn, feature, log_probs: logits }
    }

    /// One decoder step: feeds `input`, returns the next state and the
    /// log-distribution over the vocabulary (unclamped).
    pub fn decoder_step(
        &self,
        enc: &Encoded,
        state: &DecoderState,
        input: TokenId,
    ) -> (DecoderState, Vec<f64>) {
        let d = self.decoder_forward(enc, input, &state.h, &state.c);
        (DecoderState { h: d.lstm.h, c: d.lstm.c }, d.log_probs)
    }

    /// Per-step clamped log-probabilities of `target` under teacher forcing.
    pub fn step_log_probs(&self, enc: &Encoded, target: &Utterance) -> Result<Vec<f64>> {
        self.check_tokens(target.ids())?;
        let floor = min_log_prob();
        let mut state = self.decoder_start(enc);
        let mut input = BOS;
        let mut out = Vec::with_capacity(target.len());
        for &y in target.ids() {
            let (next, lp) = self.decoder_step(enc, &state, input);
            out.push(lp[y as usize].max(floor));
            state = next;
            input = y;
        }
        Ok(out)
    }

    /// `log p(target | encoded source)`, summed over decoder steps.
    pub fn log_prob_encoded(&self, enc: &Encoded, target: &Utterance) -> Result<f64> {
        Ok(self.step_log_probs(enc, target)?.iter().sum())
    }

    pub fn log_prob(&self, source: &[TokenId], target: &Utterance) -> Result<f64> {
        let enc = self.encode(source)?;
        self.log_prob_encoded(&enc, target)
    }

    /// Adds `weight * d(-log p(target | source)) / d(params)` into `grads`
    /// and returns `log p(target | source)`.
    pub fn accumulate_gradient(
        &self,
        source: &[TokenId],
        target: &Utterance,
        weight: f64,
        grads: &mut ModelParams,
    ) -> Result<f64> {
        self.check_tokens(target.ids())?;
        let enc = self.encode(source)?;
        let dims = self.dims();
        let hd = dims.hidden;
        let ed = dims.embed;
        let floor = min_log_prob();

        let mut decs: Vec<DecCache> = Vec::with_capacity(target.len());
        let mut h = enc.final_hidden().to_vec();
        let mut c = enc.final_cell().to_vec();
        let mut input = BOS;
        let mut log_p = 0.0;
        for &y in target.ids() {
            let d = self.decoder_forward(&enc, input, &h, &c);
            log_p += d.log_probs[y as usize].max(floor);
            h.clone_from(&d.lstm.h);
            c.clone_from(&d.lstm.c);
            input = y;
            decs.push(d);
        }
        if weight == 0.0 {
            return Ok(log_p);
        }

        let mut dh_next = vec![0.0; hd];
        let mut dc = vec![0.0; hd];
        let mut d_enc = if self.attention.is_some() {
            vec![vec![0.0; hd]; enc.steps.len()]
        } else {
            Vec::new()
        };
        let mut dlogits = vec![0.0; dims.vocab];
        for t in (0..decs.len()).rev() {
            let d = &decs[t];
            let y = target.ids()[t] as usize;
            let mut dh = std::mem::take(&mut dh_next);
            if d.log_probs[y] >= floor {
                for (k, (dl, lp)) in dlogits.iter_mut().zip(&d.log_probs).enumerate() {
                    *dl = weight * (lp.exp() - if k == y { 1.0 } else { 0.0 });
                }
                grads.output.add_outer(1.0, &dlogits, &d.feature);
                axpy(1.0, &dlogits, &mut grads.output_bias);
                let mut dfeat = vec![0.0; d.feature.len()];
                self.output.add_matvec_transposed(&dlogits, &mut dfeat);
                axpy(1.0, &dfeat[..hd], &mut dh);
                if let (Some(att), Some(cache)) = (&self.attention, &d.attn) {
                    let gatt = grads.attention.as_mut().expect("gradient has attention");
                    attend_backward(att, gatt, &enc, &d.lstm.h, cache, &dfeat[hd..], &mut dh, &mut d_enc);
                }
            }
            let dz = lstm_backward(&self.decoder, &mut grads.decoder, &d.lstm, &dh, &mut dc);
            let fed = if t == 0 { BOS } else { target.ids()[t - 1] };
            axpy(1.0, &dz[..ed], grads.embedding.row_mut(fed as usize));
            dh_next = dz[ed..].to_vec();
        }

        for j in (0..enc.steps.len()).rev() {
            let mut dh = std::mem::take(&mut dh_next);
            if let Some(extra) = d_enc.get(j) {
                axpy(1.0, extra, &mut dh);
            }
            let dz = lstm_backward(&self.encoder, &mut grads.encoder, &enc.steps[j], &dh, &mut dc);
            axpy(1.0, &dz[..ed], grads.embedding.row_mut(enc.source[j] as usize));
            dh_next = dz[ed..].to_vec();
        }
        Ok(log_p)
    }
}
