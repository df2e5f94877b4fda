//! The tiny decoder-only language model: parameter layout, initialization,
//! the differentiable forward pass, and the sequence scoring / NLL
//! primitives both training stages consume.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::{NodeId, Tape};
use super::tensor::{Scalar, Tensor};
use super::NnError;

pub use super::tape::ParamId;

/// Architecture hyperparameters. Every tensor shape derives from these.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub vocab: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ctx_len: usize,
}

impl ModelConfig {
    /// Desk-scale default: trains on a laptop CPU in minutes per stage
    /// while still being able to learn tool-call syntax.
    pub fn desk_default(vocab: usize) -> Self {
        ModelConfig { vocab, d_model: 64, n_layers: 2, n_heads: 4, ctx_len: 256 }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.d_model % self.n_heads != 0 {
            return Err(NnError::ShapeMismatch(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab == 0 || self.d_model == 0 || self.n_layers == 0 || self.ctx_len == 0 {
            return Err(NnError::ShapeMismatch("all dimensions must be nonzero".into()));
        }
        Ok(())
    }

    /// Hidden width of the feed-forward block.
    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }

    const PER_LAYER: usize = 10;

    /// Named shapes in checkpoint declaration order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.d_model;
        let mut out = vec![
            ("token_embedding".to_string(), vec![self.vocab, d]),
            ("position_embedding".to_string(), vec![self.ctx_len, d]),
        ];
        for l in 0..self.n_layers {
            out.push((format!("layer{l}.ln1_gain"), vec![d]));
            out.push((format!("layer{l}.ln1_offset"), vec![d]));
            out.push((format!("layer{l}.attn_wq"), vec![d, d]));
            out.push((format!("layer{l}.attn_wk"), vec![d, d]));
            out.push((format!("layer{l}.attn_wv"), vec![d, d]));
            out.push((format!("layer{l}.attn_wo"), vec![d, d]));
            out.push((format!("layer{l}.ln2_gain"), vec![d]));
            out.push((format!("layer{l}.ln2_offset"), vec![d]));
            out.push((format!("layer{l}.ff_w1"), vec![d, self.d_ff()]));
            out.push((format!("layer{l}.ff_w2"), vec![self.d_ff(), d]));
        }
        out.push(("final_ln_gain".to_string(), vec![d]));
        out.push(("final_ln_offset".to_string(), vec![d]));
        out.push(("output_projection".to_string(), vec![d, self.vocab]));
        out
    }

    pub fn n_param_tensors(&self) -> usize {
        5 + Self::PER_LAYER * self.n_layers
    }

    // Indices into the parameter list.
    pub(crate) fn idx_tok(&self) -> ParamId {
        0
    }
    pub(crate) fn idx_pos(&self) -> ParamId {
        1
    }
    pub(crate) fn idx_layer(&self, l: usize, slot: usize) -> ParamId {
        2 + l * Self::PER_LAYER + slot
    }
    pub(crate) fn idx_final_ln_gain(&self) -> ParamId {
        2 + Self::PER_LAYER * self.n_layers
    }
    pub(crate) fn idx_final_ln_offset(&self) -> ParamId {
        self.idx_final_ln_gain() + 1
    }
    pub(crate) fn idx_out(&self) -> ParamId {
        self.idx_final_ln_gain() + 2
    }
}

/// All trainable weights of the model.
#[derive(Clone, Debug)]
pub struct ParameterSet<E> {
    pub cfg: ModelConfig,
    tensors: Vec<Tensor<E>>,
}

impl<E: Scalar> ParameterSet<E> {
    /// Random initialization: weights from N(0, 0.02^2), layer-norm gains 1,
    /// offsets 0.
    pub fn init_random(cfg: ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        cfg.validate().expect("valid model config");
        let mut tensors = Vec::with_capacity(cfg.n_param_tensors());
        for (name, shape) in cfg.param_layout() {
            let n: usize = shape.iter().product();
            let t = if name.ends_with("gain") {
                Tensor::new(vec![E::one(); n], shape)
            } else if name.ends_with("offset") {
                Tensor::zeros(shape)
            } else {
                let data = (0..n).map(|_| E::from_f64(0.02 * normal(rng))).collect();
                Tensor::new(data, shape)
            };
            tensors.push(t);
        }
        ParameterSet { cfg, tensors }
    }

    /// All-zero weights (gains included): logits are exactly zero, so the
    /// model is exactly uniform. Used by tests.
    pub fn zeros(cfg: ModelConfig) -> Self {
        cfg.validate().expect("valid model config");
        let tensors = cfg.param_layout().into_iter().map(|(_, s)| Tensor::zeros(s)).collect();
        ParameterSet { cfg, tensors }
    }

    pub fn tensors(&self) -> &[Tensor<E>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<E>] {
        &mut self.tensors
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<E> {
        &self.tensors[id]
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors.iter().map(|t| t.shape().to_vec()).collect()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
    }

    pub fn cast<F: Scalar>(&self) -> ParameterSet<F> {
        let tensors = self
            .tensors
            .iter()
            .map(|t| {
                Tensor::new(
                    t.data().iter().map(|&v| F::from_f64(v.as_f64())).collect(),
                    t.shape().to_vec(),
                )
            })
            .collect();
        ParameterSet { cfg: self.cfg, tensors }
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<(), NnError> {
        if tokens.len() > self.cfg.ctx_len {
            return Err(NnError::SequenceTooLong { len: tokens.len(), ctx: self.cfg.ctx_len });
        }
        for &t in tokens {
            if t as usize >= self.cfg.vocab {
                return Err(NnError::OutOfVocab { id: t, vocab: self.cfg.vocab });
            }
        }
        Ok(())
    }
}

/// Box-Muller standard normal.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Parameter leaves bound onto a tape, shared by every forward built on it.
pub struct BoundParams {
    node_ids: Vec<NodeId>,
    cfg: ModelConfig,
}

impl BoundParams {
    pub fn bind<E: Scalar>(tape: &mut Tape<E>, params: &ParameterSet<E>) -> Self {
        let node_ids = params
            .tensors
            .iter()
            .enumerate()
            .map(|(pid, t)| tape.param(pid, t.clone()))
            .collect();
        BoundParams { node_ids, cfg: params.cfg }
    }

    fn id(&self, pid: ParamId) -> NodeId {
        self.node_ids[pid]
    }
}

/// Per-layer key/value nodes of an already-encoded prefix; suffix rows
/// attend across these, and gradients flow back through them exactly.
pub struct PrefixState {
    pub len: usize,
    layer_kv: Vec<(NodeId, NodeId)>,
}

/// The transformer stack over one span of tokens. With a prefix, this span
/// starts at position `prefix.len` and its attention covers the prefix's
/// keys and values.
fn stack<E: Scalar>(
    tape: &mut Tape<E>,
    bound: &BoundParams,
    tokens: &[u32],
    prefix: Option<&PrefixState>,
    mut record_kv: Option<&mut Vec<(NodeId, NodeId)>>,
) -> NodeId {
    let cfg = &bound.cfg;
    let offset = prefix.map_or(0, |p| p.len);
    let pos_ids: Vec<u32> = (0..tokens.len()).map(|i| (offset + i) as u32).collect();
    let tok = tape.gather_rows(bound.id(cfg.idx_tok()), tokens);
    let pos = tape.gather_rows(bound.id(cfg.idx_pos()), &pos_ids);
    let mut h = tape.add(tok, pos);
    for l in 0..cfg.n_layers {
        let xn = tape.layer_norm(h, bound.id(cfg.idx_layer(l, 0)), bound.id(cfg.idx_layer(l, 1)));
        let q = tape.matmul(xn, bound.id(cfg.idx_layer(l, 2)));
        let k = tape.matmul(xn, bound.id(cfg.idx_layer(l, 3)));
        let v = tape.matmul(xn, bound.id(cfg.idx_layer(l, 4)));
        let (k_all, v_all) = match prefix {
            Some(p) => {
                let (pk, pv) = p.layer_kv[l];
                (tape.concat_rows(pk, k), tape.concat_rows(pv, v))
            }
            None => (k, v),
        };
        if let Some(rec) = record_kv.as_deref_mut() {
            rec.push((k_all, v_all));
        }
        let ctx = tape.masked_attend(q, k_all, v_all, cfg.n_heads, offset);
        let att = tape.matmul(ctx, bound.id(cfg.idx_layer(l, 5)));
        h = tape.add(h, att);
        let xn2 = tape.layer_norm(h, bound.id(cfg.idx_layer(l, 6)), bound.id(cfg.idx_layer(l, 7)));
        let f1 = tape.matmul(xn2, bound.id(cfg.idx_layer(l, 8)));
        let act = tape.gelu(f1);
        let f2 = tape.matmul(act, bound.id(cfg.idx_layer(l, 9)));
        h = tape.add(h, f2);
    }
    h
}

fn final_logits<E: Scalar>(tape: &mut Tape<E>, bound: &BoundParams, h: NodeId) -> NodeId {
    let cfg = &bound.cfg;
    let hf =
        tape.layer_norm(h, bound.id(cfg.idx_final_ln_gain()), bound.id(cfg.idx_final_ln_offset()));
    tape.matmul(hf, bound.id(cfg.idx_out()))
}

/// Differentiable forward pass: returns the node holding one logit row per
/// input position.
pub fn logits_node<E: Scalar>(tape: &mut Tape<E>, bound: &BoundParams, tokens: &[u32]) -> NodeId {
    let h = stack(tape, bound, tokens, None, None);
    final_logits(tape, bound, h)
}

/// Encodes a shared prompt prefix once; several target or candidate
/// branches can then continue from it on the same tape, each contributing
/// exact gradients through the shared nodes.
pub fn encode_prefix<E: Scalar>(
    tape: &mut Tape<E>,
    bound: &BoundParams,
    tokens: &[u32],
) -> PrefixState {
    let mut kv = Vec::with_capacity(bound.cfg.n_layers);
    let _ = stack(tape, bound, tokens, None, Some(&mut kv));
    PrefixState { len: tokens.len(), layer_kv: kv }
}

/// Logits for a continuation span that attends across the prefix.
pub fn suffix_logits<E: Scalar>(
    tape: &mut Tape<E>,
    bound: &BoundParams,
    prefix: &PrefixState,
    tokens: &[u32],
) -> NodeId {
    let h = stack(tape, bound, tokens, Some(prefix), None);
    final_logits(tape, bound, h)
}

/// Plain forward: one logit row (vocab wide) per input position.
pub fn forward<E: Scalar>(params: &ParameterSet<E>, tokens: &[u32]) -> Result<Tensor<E>, NnError> {
    params.check_tokens(tokens)?;
    if tokens.is_empty() {
        return Err(NnError::Contract("forward needs at least one token".into()));
    }
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params);
    let node = logits_node(&mut tape, &bound, tokens);
    Ok(tape.value(node).clone())
}

/// Builds the summed NLL node for `target` given `context` on an existing
/// tape. Returns the scalar node; divide by token count for a mean.
pub fn nll_node<E: Scalar>(
    tape: &mut Tape<E>,
    bound: &BoundParams,
    params: &ParameterSet<E>,
    context: &[u32],
    target: &[u32],
) -> Result<NodeId, NnError> {
    if target.is_empty() {
        return Err(NnError::Contract("nll target must be non-empty".into()));
    }
    if context.is_empty() {
        return Err(NnError::Contract("context must be non-empty".into()));
    }
    let mut full: Vec<u32> = Vec::with_capacity(context.len() + target.len());
    full.extend_from_slice(context);
    full.extend_from_slice(target);
    params.check_tokens(&full)?;
    // Row p of the logits predicts token p+1, so the last target token only
    // needs rows up to full.len()-2.
    let input = &full[..full.len() - 1];
    let logits = logits_node(tape, bound, input);
    let picks: Vec<(usize, u32)> =
        (0..target.len()).map(|j| (context.len() - 1 + j, target[j])).collect();
    Ok(tape.nll_pick(logits, picks))
}

/// [`nll_node`] continuing from a shared prefix. The caller guarantees
/// `context[..prefix.len]` is exactly the prefix's token span.
pub fn nll_node_shared<E: Scalar>(
    tape: &mut Tape<E>,
    bound: &BoundParams,
    params: &ParameterSet<E>,
    prefix: &PrefixState,
    context: &[u32],
    target: &[u32],
) -> Result<NodeId, NnError> {
    if target.is_empty() {
        return Err(NnError::Contract("nll target must be non-empty".into()));
    }
    let p = prefix.len;
    if p >= context.len() {
        return Err(NnError::Contract("prefix must be shorter than the context".into()));
    }
    let mut full: Vec<u32> = Vec::with_capacity(context.len() + target.len());
    full.extend_from_slice(context);
    full.extend_from_slice(target);
    params.check_tokens(&full)?;
    let input: Vec<u32> = full[p..full.len() - 1].to_vec();
    let logits = suffix_logits(tape, bound, prefix, &input);
    let picks: Vec<(usize, u32)> =
        (0..target.len()).map(|j| (context.len() - 1 + j - p, target[j])).collect();
    Ok(tape.nll_pick(logits, picks))
}

/// Differentiable length-normalized score of a response continuing from a
/// shared prefix of its context.
pub fn score_node_shared<E: Scalar>(
    tape: &mut Tape<E>,
    bound: &BoundParams,
    params: &ParameterSet<E>,
    prefix: &PrefixState,
    context: &[u32],
    response: &[u32],
) -> Result<NodeId, NnError> {
    if response.is_empty() {
        return Err(NnError::Contract(
            "sequence_score needs a non-empty response (normalizer would be zero)".into(),
        ));
    }
    let nll = nll_node_shared(tape, bound, params, prefix, context, response)?;
    Ok(tape.scale(nll, -1.0 / response.len() as f64))
}

/// `-sum log p(target | context)`, as a fresh single-use tape plus its loss
/// node, ready for `backward`.
pub fn nll_loss<E: Scalar>(
    params: &ParameterSet<E>,
    context: &[u32],
    target: &[u32],
) -> Result<(Tape<E>, NodeId), NnError> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params);
    let node = nll_node(&mut tape, &bound, params, context, target)?;
    Ok((tape, node))
}

/// Length-normalized conditional log-probability of `response` given
/// `context`: `sum_m log p(y_m | context, y_<m>) / len(response)`.
pub fn sequence_score<E: Scalar>(
    params: &ParameterSet<E>,
    context: &[u32],
    response: &[u32],
) -> Result<f64, NnError> {
    let (tape, node) = score_node_with_tape(params, context, response)?;
    Ok(tape.value(node).item().as_f64())
}

/// Differentiable version of [`sequence_score`] on an existing tape.
pub fn score_node<E: Scalar>(
    tape: &mut Tape<E>,
    bound: &BoundParams,
    params: &ParameterSet<E>,
    context: &[u32],
    response: &[u32],
) -> Result<NodeId, NnError> {
    if response.is_empty() {
        return Err(NnError::Contract(
            "sequence_score needs a non-empty response (normalizer would be zero)".into(),
        ));
    }
    let nll = nll_node(tape, bound, params, context, response)?;
    Ok(tape.scale(nll, -1.0 / response.len() as f64))
}

fn score_node_with_tape<E: Scalar>(
    params: &ParameterSet<E>,
    context: &[u32],
    response: &[u32],
) -> Result<(Tape<E>, NodeId), NnError> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params);
    let node = score_node(&mut tape, &bound, params, context, response)?;
    Ok((tape, node))
}

/// The normalization step of the score on its own: mean of per-token log
/// probabilities.
pub fn sequence_score_from_logprobs(logprobs: &[f64]) -> f64 {
    assert!(!logprobs.is_empty(), "empty response has no score");
    logprobs.iter().sum::<f64>() / logprobs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::softmax_inplace;
    use crate::rng::stream_rng;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig { vocab: 11, d_model: 16, n_layers: 2, n_heads: 4, ctx_len: 32 }
    }

    #[test]
    fn softmax_of_every_logit_row_sums_to_one() {
        let mut rng = stream_rng(3, "model-test");
        let params = ParameterSet::<f32>::init_random(tiny_cfg(), &mut rng);
        let logits = forward(&params, &[1, 2, 3, 4, 0]).unwrap();
        assert_eq!(logits.shape(), &[5, 11]);
        for i in 0..5 {
            let mut row = logits.row(i).to_vec();
            softmax_inplace(&mut row);
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6, "row {i} sums to {s}");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = stream_rng(4, "model-test");
        let params = ParameterSet::<f32>::init_random(tiny_cfg(), &mut rng);
        let a = forward(&params, &[5, 6, 7]).unwrap();
        let b = forward(&params, &[5, 6, 7]).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let mut rng = stream_rng(5, "model-test");
        let params = ParameterSet::<f32>::init_random(tiny_cfg(), &mut rng);
        let too_long: Vec<u32> = vec![0; 33];
        assert!(matches!(
            forward(&params, &too_long),
            Err(NnError::SequenceTooLong { .. })
        ));
        assert!(matches!(forward(&params, &[0, 99]), Err(NnError::OutOfVocab { .. })));
    }

    #[test]
    fn zero_model_is_exactly_uniform() {
        let params = ParameterSet::<f32>::zeros(tiny_cfg());
        let (tape, node) = nll_loss(&params, &[0, 1], &[2, 3, 4]).unwrap();
        let per_token = tape.value(node).item() / 3.0;
        let ln_v = (11.0f32).ln();
        assert!((per_token - ln_v).abs() < 1e-6, "{per_token} vs {ln_v}");
    }

    #[test]
    fn nll_equals_negative_len_times_score() {
        let mut rng = stream_rng(6, "model-test");
        let params = ParameterSet::<f64>::init_random(tiny_cfg(), &mut rng);
        let context = [0u32, 3, 5];
        let target = [1u32, 2, 9, 4];
        let (tape, node) = nll_loss(&params, &context, &target).unwrap();
        let nll = tape.value(node).item();
        let score = sequence_score(&params, &context, &target).unwrap();
        assert!((nll - (-(target.len() as f64) * score)).abs() < 1e-9);
        assert!(score <= 0.0);
    }

    #[test]
    fn empty_response_is_a_contract_error() {
        let mut rng = stream_rng(7, "model-test");
        let params = ParameterSet::<f32>::init_random(tiny_cfg(), &mut rng);
        assert!(matches!(
            sequence_score(&params, &[0, 1], &[]),
            Err(NnError::Contract(_))
        ));
    }

    #[test]
    fn score_normalization_helper() {
        assert_eq!(sequence_score_from_logprobs(&[-1.0, -2.0, -3.0]), -2.0);
        assert_eq!(sequence_score_from_logprobs(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn sequence_score_is_shift_free() {
        // The score depends only on the model's logit rows: recomputing it
        // from cached logits reproduces the from-scratch value bit for bit.
        let mut rng = stream_rng(14, "model-test");
        let params = ParameterSet::<f32>::init_random(tiny_cfg(), &mut rng);
        let context = [1u32, 4, 9];
        let response = [5u32, 5, 0, 8];
        let a = sequence_score(&params, &context, &response).unwrap();
        let b = sequence_score(&params, &context, &response).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());

        let mut full = context.to_vec();
        full.extend_from_slice(&response[..response.len() - 1]);
        let logits = forward(&params, &full).unwrap();
        let mut sum = 0.0f64;
        for (j, &tok) in response.iter().enumerate() {
            let (lp, _) = crate::nn::tensor::log_softmax_pick_f64(
                logits.row(context.len() - 1 + j),
                tok as usize,
            );
            sum -= lp;
        }
        // Mirror the node arithmetic: the summed NLL is stored at f32, then
        // scaled by -1/len at f32.
        let from_cached =
            ((sum as f32) * ((-1.0 / response.len() as f64) as f32)) as f64;
        assert_eq!(a.to_bits(), from_cached.to_bits());
    }

    #[test]
    fn shared_prefix_nll_matches_plain_nll() {
        let mut rng = stream_rng(8, "model-test");
        let params = ParameterSet::<f32>::init_random(tiny_cfg(), &mut rng);
        let context = [1u32, 4, 9, 2, 7, 3];
        let target = [5u32, 5, 0, 8];
        let (tape, node) = nll_loss(&params, &context, &target).unwrap();
        let plain = tape.value(node).item();

        let mut tape2 = Tape::new();
        let bound = BoundParams::bind(&mut tape2, &params);
        let prefix = encode_prefix(&mut tape2, &bound, &context[..context.len() - 1]);
        let shared =
            nll_node_shared(&mut tape2, &bound, &params, &prefix, &context, &target).unwrap();
        let shared_val = tape2.value(shared).item();
        assert!(
            (plain - shared_val).abs() < 1e-5,
            "plain {plain} vs shared-prefix {shared_val}"
        );

        // Several branches off one prefix still match their plain values.
        let other = [2u32, 2];
        let shared_other =
            nll_node_shared(&mut tape2, &bound, &params, &prefix, &context, &other).unwrap();
        let (tape3, node3) = nll_loss(&params, &context, &other).unwrap();
        assert!((tape2.value(shared_other).item() - tape3.value(node3).item()).abs() < 1e-5);
    }

    #[test]
    fn shared_prefix_gradients_match_finite_differences() {
        let cfg = tiny_cfg();
        let mut rng = stream_rng(9, "model-test");
        let params = ParameterSet::<f64>::init_random(cfg, &mut rng);
        let context = [0u32, 7, 2, 10, 1];
        let targets = [vec![5u32, 3, 9], vec![1u32, 1], vec![8u32, 6, 4, 2]];
        let err = crate::nn::finite_diff_check(
            |p: &ParameterSet<f64>| {
                let mut tape = Tape::new();
                let bound = BoundParams::bind(&mut tape, p);
                let prefix = encode_prefix(&mut tape, &bound, &context[..context.len() - 1]);
                let mut parts = Vec::new();
                for t in &targets {
                    parts.push(nll_node_shared(&mut tape, &bound, p, &prefix, &context, t)?);
                }
                let loss = tape.sum_scalars(parts);
                Ok((tape, loss))
            },
            &params,
            1e-4,
            120,
            &mut stream_rng(10, "model-test"),
        )
        .unwrap();
        assert!(err < 1e-3, "shared-prefix gradient check error {err}");
    }
}
