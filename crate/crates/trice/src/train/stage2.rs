//! The two training stages. Stage I is behavior cloning over the prepared
//! dataset. Stage II minimizes `alpha * L_rank + L_sft`, where the ranking
//! loss aligns length-normalized response scores with execution-derived
//! reward levels, with periodic held-out evaluation and best-checkpoint
//! selection.

use rayon::prelude::*;

use super::candidates::{generate_candidates, Candidate, CandidateRecord};
use super::sft::{item_sft_node, sft_example_from_tool_instance, train_sft_model, SftExample, SftRunConfig};
use super::{LogRow, TrainConfig, TrainError, TrainLog};
use crate::dataprep::ToolInstance;
use crate::eval::{accuracy, evaluate, tool_usage_rate};
use crate::nn::{
    adam_step, clip_global_norm, BoundParams, GradientSet, OptimizerState, ParameterSet, Tape,
};
use crate::rng::{item_rng, stream_rng};
use crate::tasks::{target_tokens, Instance, Vocabulary};
use crate::tools::ToolEnv;

/// Reference value of the ranking loss: the exhaustive double loop over all
/// ordered pairs, `sum over r_i < r_j of max(0, p_i - p_j)` in f64.
pub fn rank_loss_value(scores: &[f64], rewards: &[u8]) -> f64 {
    assert_eq!(scores.len(), rewards.len());
    let mut sum = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if rewards[i] < rewards[j] {
                sum += (scores[i] - scores[j]).max(0.0);
            }
        }
    }
    sum
}

/// Stage I: behavior cloning on the prepared dataset.
pub fn train_stage1(
    model: &mut ParameterSet<f32>,
    d_tool: &[ToolInstance],
    cfg: &TrainConfig,
) -> Result<TrainLog, TrainError> {
    cfg.validate()?;
    let examples: Vec<SftExample> = d_tool
        .iter()
        .map(sft_example_from_tool_instance)
        .collect::<Result<_, _>>()?;
    train_sft_model(
        model,
        &examples,
        &SftRunConfig {
            epochs: cfg.epochs_stage1,
            lr: cfg.lr_stage1,
            batch_size: cfg.batch_size,
            grad_clip: cfg.grad_clip,
            log_interval: cfg.log_interval,
            seed: cfg.seed,
            stream: "stage1".to_string(),
        },
    )
}

/// One stage-II question: the supervised target plus the tokenized candidate
/// responses with their reward levels.
#[derive(Clone, Debug)]
pub struct QuestionItem {
    pub example: SftExample,
    pub prompt: Vec<u32>,
    pub responses: Vec<(Vec<u32>, u8)>,
}

pub fn question_item(item: &ToolInstance, cands: &[Candidate]) -> Result<QuestionItem, TrainError> {
    let vocab = Vocabulary::standard();
    let example = sft_example_from_tool_instance(item)?;
    let prompt = example.prompt.clone();
    let responses = cands
        .iter()
        .map(|c| Ok((target_tokens(vocab, &c.response)?, c.reward)))
        .collect::<Result<_, TrainError>>()?;
    Ok(QuestionItem { example, prompt, responses })
}

pub(crate) struct StepStats {
    pub l_rank: f64,
    pub l_sft: f64,
    pub l_total: f64,
}

/// One combined-objective step. Questions whose candidates all share one
/// reward level skip the ranking term but still contribute the SFT term;
/// with `alpha == 0` the built tape degenerates to the stage-I op sequence,
/// so updates match behavior cloning bit for bit.
pub(crate) fn rlef_batch_step(
    model: &mut ParameterSet<f32>,
    batch: &[&QuestionItem],
    alpha: f64,
    state: &mut OptimizerState<f32>,
    grad_clip: f64,
) -> Result<StepStats, TrainError> {
    let total_tokens: usize = batch.iter().map(|q| q.example.token_count()).sum();
    let sft_scale = 1.0 / total_tokens as f64;
    let n_questions = batch.len();
    let rank_scale = alpha / n_questions as f64;
    let snapshot = &*model;

    let results: Vec<Result<(GradientSet<f32>, f64, f64), TrainError>> = batch
        .par_iter()
        .map(|q| {
            let mut tape = Tape::new();
            let bound = BoundParams::bind(&mut tape, snapshot);
            let prefix = super::sft::item_prefix(&mut tape, &bound, &q.example);
            let sft_sum = item_sft_node(&mut tape, &bound, snapshot, &prefix, &q.example)?;
            let rewards: Vec<u8> = q.responses.iter().map(|(_, r)| *r).collect();
            let rankable = alpha > 0.0 && rewards.iter().any(|&r| r != rewards[0]);
            let (loss, rank_value) = if rankable {
                let mut score_nodes = Vec::with_capacity(q.responses.len());
                for (resp, _) in &q.responses {
                    score_nodes.push(crate::nn::score_node_shared(
                        &mut tape, &bound, snapshot, &prefix, &q.prompt, resp,
                    )?);
                }
                let rank = tape.rank_hinge(score_nodes, rewards)?;
                let rank_value = tape.value(rank).item() as f64;
                let scaled_rank = tape.scale(rank, rank_scale);
                let scaled_sft = tape.scale(sft_sum, sft_scale);
                (tape.sum_scalars(vec![scaled_rank, scaled_sft]), rank_value)
            } else {
                (tape.scale(sft_sum, sft_scale), 0.0)
            };
            let sft_value = tape.value(sft_sum).item() as f64;
            let grads = tape.backward(loss, &snapshot.shapes())?;
            Ok((grads, rank_value, sft_value))
        })
        .collect();

    let mut grads = GradientSet::zeros(&model.shapes());
    let mut rank_sum = 0.0;
    let mut sft_sum = 0.0;
    for r in results {
        let (g, rv, sv) = r?;
        grads.add_assign(&g);
        rank_sum += rv;
        sft_sum += sv;
    }
    clip_global_norm(&mut grads, grad_clip);
    adam_step(model, &grads, state)?;
    let l_rank = rank_sum / n_questions as f64;
    let l_sft = sft_sum * sft_scale;
    Ok(StepStats { l_rank, l_sft, l_total: alpha * l_rank + l_sft })
}

/// What stage II hands back: the best checkpoint by held-out mixed-task
/// accuracy, the log, and the candidate records it trained on.
pub struct Stage2Outcome {
    pub best: ParameterSet<f32>,
    pub best_step: usize,
    pub best_accuracy: f64,
    pub log: TrainLog,
    pub candidates: Vec<CandidateRecord>,
}

fn build_items(
    model: &ParameterSet<f32>,
    train_items: &[ToolInstance],
    cfg: &TrainConfig,
    env: &ToolEnv,
    stream: &str,
) -> Result<(Vec<QuestionItem>, Vec<CandidateRecord>), TrainError> {
    let generated: Vec<Result<(QuestionItem, CandidateRecord), TrainError>> = train_items
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let mut rng = item_rng(cfg.seed, stream, i);
            let cands = generate_candidates(model, item, cfg, env, &mut rng)?;
            let q = question_item(item, &cands)?;
            let rec = CandidateRecord {
                question_idx: i,
                question: item.instance.question.clone(),
                candidates: cands,
            };
            Ok((q, rec))
        })
        .collect();
    let mut items = Vec::with_capacity(train_items.len());
    let mut records = Vec::with_capacity(train_items.len());
    for r in generated {
        let (q, rec) = r?;
        items.push(q);
        records.push(rec);
    }
    Ok((items, records))
}

/// Stage II: candidates are pregenerated from the stage-I checkpoint
/// (sampling and training stay separated) unless the config asks for
/// per-epoch regeneration. Every `eval_interval` steps the current model is
/// evaluated on the held-out split with tools enabled, and the best
/// checkpoint by mixed-task accuracy is retained.
pub fn train_stage2(
    theta_clone: &ParameterSet<f32>,
    train_items: &[ToolInstance],
    held_out: &[Instance],
    cfg: &TrainConfig,
    env: &ToolEnv,
) -> Result<Stage2Outcome, TrainError> {
    cfg.validate()?;
    if train_items.is_empty() {
        return Err(TrainError::Config("stage II needs training questions".into()));
    }
    let mut model = theta_clone.clone();
    let mut state = OptimizerState::new(&model, cfg.lr_stage2);
    let mut log = TrainLog::default();

    let (mut items, mut records) =
        build_items(theta_clone, train_items, cfg, env, "stage2-candidates")?;

    let mut best = model.clone();
    let mut best_accuracy = f64::NEG_INFINITY;
    let mut best_step = 0usize;
    let mut step = 0usize;

    for epoch in 0..cfg.epochs_stage2 {
        if cfg.regenerate_candidates && epoch > 0 {
            let stream = format!("stage2-candidates/epoch{epoch}");
            let rebuilt = build_items(&model, train_items, cfg, env, &stream)?;
            items = rebuilt.0;
            records = rebuilt.1;
        }
        let mut order: Vec<usize> = (0..items.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut stream_rng(cfg.seed, &format!("stage2-train/epoch{epoch}")));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&QuestionItem> = chunk.iter().map(|&i| &items[i]).collect();
            let stats = rlef_batch_step(&mut model, &batch, cfg.alpha, &mut state, cfg.grad_clip)?;
            step += 1;
            if !stats.l_total.is_finite() {
                return Err(TrainError::Diverged { step });
            }
            if step % cfg.log_interval == 0 && !model.all_finite() {
                return Err(TrainError::Diverged { step });
            }
            let eval_due = step % cfg.eval_interval == 0;
            let (eval_accuracy, usage) = if eval_due && !held_out.is_empty() {
                let preds = evaluate(&model, held_out, env, true)?;
                let acc = accuracy(&preds);
                let usage = tool_usage_rate(&preds)?;
                if acc > best_accuracy {
                    best_accuracy = acc;
                    best = model.clone();
                    best_step = step;
                }
                (Some(acc), Some(usage))
            } else {
                (None, None)
            };
            if step % cfg.log_interval == 0 || step == 1 || eval_due {
                log.rows.push(LogRow {
                    step,
                    l_rank: stats.l_rank,
                    l_sft: stats.l_sft,
                    l_total: stats.l_total,
                    eval_accuracy,
                    tool_usage_rate: usage,
                });
            }
        }
    }
    // Final evaluation so short runs still pick a checkpoint.
    if !held_out.is_empty() {
        let preds = evaluate(&model, held_out, env, true)?;
        let acc = accuracy(&preds);
        if acc > best_accuracy {
            best_accuracy = acc;
            best = model.clone();
            best_step = step;
        }
    } else {
        best = model.clone();
        best_accuracy = f64::NAN;
        best_step = step;
    }
    Ok(Stage2Outcome { best, best_step, best_accuracy, log, candidates: records })
}
