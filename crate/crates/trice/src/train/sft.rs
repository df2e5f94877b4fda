//! The supervised engine: batched negative-log-likelihood training over
//! (prompt, target) pairs, with an optional second pair per example for the
//! answer-after-tool-result pass. Behavior cloning, the fine-tuning
//! baselines, and the stage-II SFT term all run through here so their
//! gradients are built from identical op sequences.

use rayon::prelude::*;

use super::{LogRow, TrainError, TrainLog};
use crate::dataprep::ToolInstance;
use crate::nn::{
    adam_step, clip_global_norm, encode_prefix, nll_node_shared, BoundParams, GradientSet, NodeId,
    OptimizerState, ParameterSet, PrefixState, Tape,
};
use crate::rng::stream_rng;
use crate::tasks::{pass1_prompt, pass2_prompt, target_tokens, Instance, Vocabulary};
use crate::tools::ToolEnv;

/// One supervised example: the answer-or-tool pair, plus the tool-result
/// answer pair when a tool label exists.
#[derive(Clone, Debug, PartialEq)]
pub struct SftExample {
    pub prompt: Vec<u32>,
    pub target: Vec<u32>,
    pub pass2: Option<(Vec<u32>, Vec<u32>)>,
}

impl SftExample {
    pub fn token_count(&self) -> usize {
        self.target.len() + self.pass2.as_ref().map_or(0, |(_, t)| t.len())
    }
}

/// Behavior-cloning example: target is the regulated output `o`; tool labels
/// also train the second pass against the executed tool result.
pub fn sft_example_from_tool_instance(item: &ToolInstance) -> Result<SftExample, TrainError> {
    let vocab = Vocabulary::standard();
    let prompt = pass1_prompt(vocab, &item.instance)?;
    let target = target_tokens(vocab, &item.output)?;
    let pass2 = match (&item.label, &item.tool_result) {
        (Some(_), Some(result)) => Some((
            pass2_prompt(vocab, &item.instance, result)?,
            target_tokens(vocab, &item.instance.answer)?,
        )),
        _ => None,
    };
    Ok(SftExample { prompt, target, pass2 })
}

/// Question-answer pair only (the 0%-tool baseline and generic pretraining).
pub fn sft_example_answer_only(inst: &Instance) -> Result<SftExample, TrainError> {
    let vocab = Vocabulary::standard();
    Ok(SftExample {
        prompt: pass1_prompt(vocab, inst)?,
        target: target_tokens(vocab, &inst.answer)?,
        pass2: None,
    })
}

/// Question-tool pair for every instance (the 100%-tool baseline), with the
/// second pass trained on the executed result.
pub fn sft_example_tool_only(inst: &Instance, env: &ToolEnv) -> Result<Option<SftExample>, TrainError> {
    let vocab = Vocabulary::standard();
    let Some(call) = inst.gold_tool() else {
        return Ok(None);
    };
    let result = env.execute(&call);
    Ok(Some(SftExample {
        prompt: pass1_prompt(vocab, inst)?,
        target: target_tokens(vocab, &call.render())?,
        pass2: Some((
            pass2_prompt(vocab, inst, &result.output)?,
            target_tokens(vocab, &inst.answer)?,
        )),
    }))
}

/// Encodes the shared part of an example's prompts once. The pass-2 prompt
/// extends the pass-1 prompt, so one prefix serves both passes (and, in
/// stage II, every candidate branch).
pub(crate) fn item_prefix(
    tape: &mut Tape<f32>,
    bound: &BoundParams,
    ex: &SftExample,
) -> PrefixState {
    encode_prefix(tape, bound, &ex.prompt[..ex.prompt.len() - 1])
}

/// Builds the summed-NLL node for one example (both passes) on top of the
/// example's shared prefix.
pub(crate) fn item_sft_node(
    tape: &mut Tape<f32>,
    bound: &BoundParams,
    params: &ParameterSet<f32>,
    prefix: &PrefixState,
    ex: &SftExample,
) -> Result<NodeId, TrainError> {
    let n1 = nll_node_shared(tape, bound, params, prefix, &ex.prompt, &ex.target)?;
    match &ex.pass2 {
        Some((p2, t2)) => {
            debug_assert!(p2.starts_with(&ex.prompt[..ex.prompt.len() - 1]));
            let n2 = nll_node_shared(tape, bound, params, prefix, p2, t2)?;
            Ok(tape.sum_scalars(vec![n1, n2]))
        }
        None => Ok(n1),
    }
}

/// One optimizer step on a batch; returns the mean loss per target token.
///
/// Per-item gradients are computed in parallel but reduced in index order,
/// so the update is bit-identical regardless of thread scheduling.
pub(crate) fn sft_batch_step(
    model: &mut ParameterSet<f32>,
    batch: &[&SftExample],
    state: &mut OptimizerState<f32>,
    grad_clip: f64,
) -> Result<f64, TrainError> {
    let total_tokens: usize = batch.iter().map(|ex| ex.token_count()).sum();
    let scale = 1.0 / total_tokens as f64;
    let snapshot = &*model;
    let results: Vec<Result<(GradientSet<f32>, f64), TrainError>> = batch
        .par_iter()
        .map(|ex| {
            let mut tape = Tape::new();
            let bound = BoundParams::bind(&mut tape, snapshot);
            let prefix = item_prefix(&mut tape, &bound, ex);
            let sum = item_sft_node(&mut tape, &bound, snapshot, &prefix, ex)?;
            let loss = tape.scale(sum, scale);
            let value = tape.value(sum).item() as f64;
            let grads = tape.backward(loss, &snapshot.shapes())?;
            Ok((grads, value))
        })
        .collect();

    let mut grads = GradientSet::zeros(&model.shapes());
    let mut loss_sum = 0.0f64;
    for r in results {
        let (g, v) = r?;
        grads.add_assign(&g);
        loss_sum += v;
    }
    clip_global_norm(&mut grads, grad_clip);
    adam_step(model, &grads, state)?;
    Ok(loss_sum * scale)
}

/// Epoch/batch schedule shared by the supervised runs.
#[derive(Clone, Debug)]
pub struct SftRunConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub log_interval: usize,
    pub seed: u64,
    /// Seed-stream name; each run kind gets its own stream.
    pub stream: String,
}

/// Full supervised training loop. Aborts with a diagnostic if the loss
/// stops being finite.
pub fn train_sft_model(
    model: &mut ParameterSet<f32>,
    examples: &[SftExample],
    cfg: &SftRunConfig,
) -> Result<TrainLog, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::Config("no training examples".into()));
    }
    let mut state = OptimizerState::new(model, cfg.lr);
    let mut log = TrainLog::default();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut stream_rng(cfg.seed, &format!("{}/epoch{epoch}", cfg.stream)));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&SftExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let loss = sft_batch_step(model, &batch, &mut state, cfg.grad_clip)?;
            step += 1;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { step });
            }
            if step % cfg.log_interval == 0 || step == 1 {
                if !model.all_finite() {
                    return Err(TrainError::Diverged { step });
                }
                log.rows.push(LogRow {
                    step,
                    l_rank: 0.0,
                    l_sft: loss,
                    l_total: loss,
                    eval_accuracy: None,
                    tool_usage_rate: None,
                });
            }
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelConfig;
    use crate::rng::stream_rng;
    use crate::tasks::gen_math;

    #[test]
    fn batch_step_reduces_loss_on_a_fixed_batch() {
        let vocab_size = Vocabulary::standard().size();
        let cfg = ModelConfig { vocab: vocab_size, d_model: 32, n_layers: 1, n_heads: 2, ctx_len: 256 };
        let mut model = ParameterSet::init_random(cfg, &mut stream_rng(71, "sft-test"));
        let examples: Vec<SftExample> = gen_math(71, 8, 0.0)
            .iter()
            .map(|i| sft_example_answer_only(i).unwrap())
            .collect();
        let refs: Vec<&SftExample> = examples.iter().collect();
        let mut state = OptimizerState::new(&model, 3e-3);
        let first = sft_batch_step(&mut model, &refs, &mut state, 1.0).unwrap();
        let mut last = first;
        for _ in 0..30 {
            last = sft_batch_step(&mut model, &refs, &mut state, 1.0).unwrap();
        }
        assert!(last < first * 0.7, "loss {first} -> {last} should drop");
    }

    #[test]
    fn steps_are_bit_deterministic() {
        let vocab_size = Vocabulary::standard().size();
        let cfg = ModelConfig { vocab: vocab_size, d_model: 16, n_layers: 1, n_heads: 2, ctx_len: 256 };
        let examples: Vec<SftExample> = gen_math(72, 6, 0.5)
            .iter()
            .map(|i| sft_example_answer_only(i).unwrap())
            .collect();
        let refs: Vec<&SftExample> = examples.iter().collect();
        let run = || {
            let mut model = ParameterSet::init_random(cfg, &mut stream_rng(73, "sft-test"));
            let mut state = OptimizerState::new(&model, 1e-3);
            for _ in 0..3 {
                sft_batch_step(&mut model, &refs, &mut state, 1.0).unwrap();
            }
            crate::nn::checkpoint_content_id(&model)
        };
        assert_eq!(run(), run());
    }
}
