//! Incremental decoding with a per-layer key/value cache. Read-only over
//! the parameters, so evaluation parallelizes freely across instances.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::model::ParameterSet;
use super::tensor::{axpy, dot, Scalar, Tensor};
use super::NnError;

const LN_EPS: f64 = 1e-5;

/// How to pick the next token.
#[derive(Clone, Debug, PartialEq)]
pub enum DecodeMode {
    /// Argmax; ties break toward the lowest token id.
    Greedy,
    /// Softmax sampling at the given temperature (> 0).
    Temperature(f64),
}

/// Decoding controls for [`sample`].
#[derive(Clone, Debug)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub max_new_tokens: usize,
    pub stop_token: u32,
    /// Literal tokens the output must begin with; decoded through the model
    /// so the cache stays consistent.
    pub force_prefix: Option<Vec<u32>>,
}

impl DecodeConfig {
    pub fn greedy(max_new_tokens: usize, stop_token: u32) -> Self {
        DecodeConfig { mode: DecodeMode::Greedy, max_new_tokens, stop_token, force_prefix: None }
    }

    pub fn temperature(tau: f64, max_new_tokens: usize, stop_token: u32) -> Self {
        DecodeConfig {
            mode: DecodeMode::Temperature(tau),
            max_new_tokens,
            stop_token,
            force_prefix: None,
        }
    }
}

/// Token-at-a-time forward state. Cloning forks the cache, so one prefilled
/// prompt can branch into several continuations.
#[derive(Clone)]
pub struct Generator<'a, E> {
    params: &'a ParameterSet<E>,
    k_cache: Vec<Tensor<E>>,
    v_cache: Vec<Tensor<E>>,
    len: usize,
}

impl<'a, E: Scalar> Generator<'a, E> {
    pub fn new(params: &'a ParameterSet<E>) -> Self {
        let cfg = params.cfg;
        let mk = || {
            (0..cfg.n_layers)
                .map(|_| Tensor::zeros(vec![cfg.ctx_len, cfg.d_model]))
                .collect::<Vec<_>>()
        };
        Generator { params, k_cache: mk(), v_cache: mk(), len: 0 }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Feeds one token; returns the logit row predicting the next token.
    pub fn append(&mut self, token: u32) -> Result<Vec<E>, NnError> {
        let cfg = self.params.cfg;
        if self.len >= cfg.ctx_len {
            return Err(NnError::SequenceTooLong { len: self.len + 1, ctx: cfg.ctx_len });
        }
        if token as usize >= cfg.vocab {
            return Err(NnError::OutOfVocab { id: token, vocab: cfg.vocab });
        }
        let pos = self.len;
        let mut h: Vec<E> = self.params.tensor(cfg.idx_tok()).row(token as usize).to_vec();
        let prow = self.params.tensor(cfg.idx_pos()).row(pos);
        for (x, &p) in h.iter_mut().zip(prow.iter()) {
            *x = *x + p;
        }
        for l in 0..cfg.n_layers {
            let xn = layer_norm_row(
                &h,
                self.params.tensor(cfg.idx_layer(l, 0)).data(),
                self.params.tensor(cfg.idx_layer(l, 1)).data(),
            );
            let q = matvec(&xn, self.params.tensor(cfg.idx_layer(l, 2)));
            let k = matvec(&xn, self.params.tensor(cfg.idx_layer(l, 3)));
            let v = matvec(&xn, self.params.tensor(cfg.idx_layer(l, 4)));
            self.k_cache[l].row_mut(pos).copy_from_slice(&k);
            self.v_cache[l].row_mut(pos).copy_from_slice(&v);

            let ctx = self.attend(l, &q, pos);
            let att = matvec(&ctx, self.params.tensor(cfg.idx_layer(l, 5)));
            for (x, &a) in h.iter_mut().zip(att.iter()) {
                *x = *x + a;
            }

            let xn2 = layer_norm_row(
                &h,
                self.params.tensor(cfg.idx_layer(l, 6)).data(),
                self.params.tensor(cfg.idx_layer(l, 7)).data(),
            );
            let mut f1 = matvec(&xn2, self.params.tensor(cfg.idx_layer(l, 8)));
            for x in f1.iter_mut() {
                *x = gelu(*x);
            }
            let f2 = matvec(&f1, self.params.tensor(cfg.idx_layer(l, 9)));
            for (x, &a) in h.iter_mut().zip(f2.iter()) {
                *x = *x + a;
            }
        }
        let hf = layer_norm_row(
            &h,
            self.params.tensor(cfg.idx_final_ln_gain()).data(),
            self.params.tensor(cfg.idx_final_ln_offset()).data(),
        );
        let logits = matvec(&hf, self.params.tensor(cfg.idx_out()));
        self.len += 1;
        Ok(logits)
    }

    fn attend(&self, layer: usize, q: &[E], pos: usize) -> Vec<E> {
        let cfg = self.params.cfg;
        let hd = cfg.d_model / cfg.n_heads;
        let scale = E::from_f64(1.0 / (hd as f64).sqrt());
        let mut ctx = vec![E::zero(); cfg.d_model];
        let mut weights = vec![E::zero(); pos + 1];
        for head in 0..cfg.n_heads {
            let lo = head * hd;
            let hi = lo + hd;
            let qh = &q[lo..hi];
            let mut max = E::neg_infinity();
            for (j, w) in weights.iter_mut().enumerate() {
                let s = dot(qh, &self.k_cache[layer].row(j)[lo..hi]) * scale;
                *w = s;
                if s > max {
                    max = s;
                }
            }
            let mut sum = E::zero();
            for w in weights.iter_mut() {
                *w = (*w - max).exp();
                sum = sum + *w;
            }
            let inv = sum.recip();
            for (j, w) in weights.iter().enumerate() {
                axpy(*w * inv, &self.v_cache[layer].row(j)[lo..hi], &mut ctx[lo..hi]);
            }
        }
        ctx
    }
}

fn layer_norm_row<E: Scalar>(x: &[E], gain: &[E], offset: &[E]) -> Vec<E> {
    let inv_n = E::from_f64(1.0 / x.len() as f64);
    let mut m = E::zero();
    for &v in x {
        m = m + v;
    }
    m = m * inv_n;
    let mut var = E::zero();
    for &v in x {
        let dv = v - m;
        var = var + dv * dv;
    }
    var = var * inv_n;
    let r = (var + E::from_f64(LN_EPS)).sqrt().recip();
    x.iter()
        .zip(gain.iter().zip(offset.iter()))
        .map(|(&v, (&g, &b))| (v - m) * r * g + b)
        .collect()
}

fn matvec<E: Scalar>(x: &[E], w: &Tensor<E>) -> Vec<E> {
    debug_assert_eq!(x.len(), w.rows());
    let mut out = vec![E::zero(); w.cols()];
    for (kk, &xv) in x.iter().enumerate() {
        axpy(xv, w.row(kk), &mut out);
    }
    out
}

fn gelu<E: Scalar>(x: E) -> E {
    let c = E::from_f64(0.797_884_560_802_865_4);
    let a = E::from_f64(0.044715);
    let half = E::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (E::one() + u.tanh())
}

/// Argmax with ties broken toward the lowest token id.
pub fn argmax_lowest<E: Scalar>(row: &[E]) -> u32 {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

fn pick_temperature<E: Scalar>(row: &[E], tau: f64, rng: &mut ChaCha8Rng) -> u32 {
    let mut max = f64::NEG_INFINITY;
    for &v in row {
        let x = v.as_f64() / tau;
        if x > max {
            max = x;
        }
    }
    let weights: Vec<f64> = row.iter().map(|&v| ((v.as_f64() / tau) - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i as u32;
        }
    }
    (row.len() - 1) as u32
}

/// Runs the prompt through a fresh generator; returns the state and the
/// logits predicting the first continuation token.
pub fn prefill<'a, E: Scalar>(
    params: &'a ParameterSet<E>,
    prompt: &[u32],
) -> Result<(Generator<'a, E>, Vec<E>), NnError> {
    if prompt.is_empty() {
        return Err(NnError::Contract("sampling needs a non-empty prompt".into()));
    }
    let mut gen = Generator::new(params);
    let mut logits = Vec::new();
    for &t in prompt {
        logits = gen.append(t)?;
    }
    Ok((gen, logits))
}

/// Continues decoding from a prefilled state. Returns the generated tokens
/// with the stop token excluded; halts at the stop token, at
/// `max_new_tokens`, or when the context window fills.
pub fn continue_sample<E: Scalar>(
    gen: &mut Generator<E>,
    mut logits: Vec<E>,
    decode: &DecodeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<u32>, NnError> {
    if let DecodeMode::Temperature(tau) = decode.mode {
        if !(tau > 0.0) {
            return Err(NnError::Contract(format!("temperature must be > 0, got {tau}")));
        }
    }
    let ctx_len = gen.params.cfg.ctx_len;
    let mut out = Vec::new();
    let prefix = decode.force_prefix.clone().unwrap_or_default();
    while out.len() < decode.max_new_tokens && gen.len() < ctx_len {
        let next = if out.len() < prefix.len() {
            prefix[out.len()]
        } else {
            match decode.mode {
                DecodeMode::Greedy => argmax_lowest(&logits),
                DecodeMode::Temperature(tau) => pick_temperature(&logits, tau, rng),
            }
        };
        if next == decode.stop_token && out.len() >= prefix.len() {
            break;
        }
        out.push(next);
        if out.len() < decode.max_new_tokens && gen.len() < ctx_len {
            logits = gen.append(next)?;
        }
    }
    Ok(out)
}

/// Prefill plus continuation in one call.
pub fn sample<E: Scalar>(
    params: &ParameterSet<E>,
    prompt: &[u32],
    decode: &DecodeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<u32>, NnError> {
    let (mut gen, logits) = prefill(params, prompt)?;
    continue_sample(&mut gen, logits, decode, rng)
}

/// Per-token log-probabilities of `response` continuing a prefilled state.
/// Consumes a fork of the state; the caller keeps the original.
pub fn logprobs_from_state<E: Scalar>(
    mut gen: Generator<E>,
    mut logits: Vec<E>,
    response: &[u32],
) -> Result<Vec<f64>, NnError> {
    let mut out = Vec::with_capacity(response.len());
    for (i, &t) in response.iter().enumerate() {
        if t as usize >= gen.params.cfg.vocab {
            return Err(NnError::OutOfVocab { id: t, vocab: gen.params.cfg.vocab });
        }
        let (lp, _) = super::tensor::log_softmax_pick_f64(&logits, t as usize);
        out.push(lp);
        if i + 1 < response.len() {
            logits = gen.append(t)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::{forward, sequence_score, ModelConfig};
    use crate::rng::stream_rng;

    fn cfg() -> ModelConfig {
        ModelConfig { vocab: 11, d_model: 16, n_layers: 2, n_heads: 4, ctx_len: 32 }
    }

    #[test]
    fn incremental_logits_match_full_forward() {
        let mut rng = stream_rng(31, "infer");
        let params = ParameterSet::<f64>::init_random(cfg(), &mut rng);
        let tokens = [0u32, 4, 9, 2, 7, 7, 1];
        let full = forward(&params, &tokens).unwrap();
        let mut gen = Generator::new(&params);
        for (i, &t) in tokens.iter().enumerate() {
            let row = gen.append(t).unwrap();
            for (a, b) in row.iter().zip(full.row(i).iter()) {
                assert!(
                    (a - b).abs() < 1e-9,
                    "position {i}: incremental {a} vs full {b}"
                );
            }
        }
    }

    #[test]
    fn greedy_is_deterministic_and_seed_independent() {
        let mut rng = stream_rng(32, "infer");
        let params = ParameterSet::<f32>::init_random(cfg(), &mut rng);
        let dc = DecodeConfig::greedy(10, 0);
        let mut r1 = stream_rng(1, "a");
        let mut r2 = stream_rng(999, "b");
        let a = sample(&params, &[1, 2, 3], &dc, &mut r1).unwrap();
        let b = sample(&params, &[1, 2, 3], &dc, &mut r2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_temperature_limit_equals_greedy() {
        let mut rng = stream_rng(33, "infer");
        let params = ParameterSet::<f32>::init_random(cfg(), &mut rng);
        let greedy = sample(&params, &[3, 1], &DecodeConfig::greedy(12, 0), &mut rng).unwrap();
        let mut srng = stream_rng(34, "infer");
        let sampled =
            sample(&params, &[3, 1], &DecodeConfig::temperature(1e-6, 12, 0), &mut srng).unwrap();
        assert_eq!(greedy, sampled);
    }

    #[test]
    fn forced_prefix_is_emitted_literally() {
        let mut rng = stream_rng(35, "infer");
        let params = ParameterSet::<f32>::init_random(cfg(), &mut rng);
        let mut dc = DecodeConfig::greedy(8, 0);
        dc.force_prefix = Some(vec![9, 8, 7]);
        let out = sample(&params, &[1], &dc, &mut rng).unwrap();
        assert!(out.len() >= 3);
        assert_eq!(&out[..3], &[9, 8, 7]);
    }

    #[test]
    fn generation_respects_context_bound() {
        let mut rng = stream_rng(36, "infer");
        let params = ParameterSet::<f32>::init_random(cfg(), &mut rng);
        let prompt: Vec<u32> = vec![1; 30];
        let out = sample(&params, &prompt, &DecodeConfig::greedy(100, 0), &mut rng).unwrap();
        assert!(prompt.len() + out.len() <= 32);
    }

    #[test]
    fn incremental_scoring_matches_the_tape_score() {
        let mut rng = stream_rng(38, "infer");
        let params = ParameterSet::<f32>::init_random(cfg(), &mut rng);
        let prompt = [1u32, 5, 9, 2];
        let response = [7u32, 3, 0, 4, 2];
        let tape_score = sequence_score(&params, &prompt, &response).unwrap();
        let (gen, logits) = prefill(&params, &prompt).unwrap();
        let lps = logprobs_from_state(gen, logits, &response).unwrap();
        let inc_score = crate::nn::sequence_score_from_logprobs(&lps);
        assert!(
            (tape_score - inc_score).abs() < 1e-4,
            "tape {tape_score} vs incremental {inc_score}"
        );
    }

    #[test]
    fn forked_states_are_independent() {
        let mut rng = stream_rng(39, "infer");
        let params = ParameterSet::<f32>::init_random(cfg(), &mut rng);
        let (gen, logits) = prefill(&params, &[1, 2, 3]).unwrap();
        let mut a = gen.clone();
        let mut b = gen.clone();
        let la = a.append(4).unwrap();
        let lb = b.append(9).unwrap();
        assert_ne!(la, lb);
        let (gen2, _) = prefill(&params, &[1, 2, 3]).unwrap();
        let mut c = gen2.clone();
        assert_eq!(c.append(4).unwrap(), la);
    }

    #[test]
    fn temperature_zero_rejected() {
        let mut rng = stream_rng(37, "infer");
        let params = ParameterSet::<f32>::init_random(cfg(), &mut rng);
        assert!(sample(&params, &[1], &DecodeConfig::temperature(0.0, 4, 0), &mut rng).is_err());
    }
}
