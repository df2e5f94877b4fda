//! Candidate response generation for stage II: one gold response, forced
//! tool-call samples, and free-choice samples, each executed and scored.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::reward::reward;
use super::{TrainConfig, TrainError};
use crate::dataprep::ToolInstance;
use crate::eval::{PASS1_MAX_NEW, PASS2_MAX_NEW};
use crate::nn::{
    continue_sample, logprobs_from_state, prefill, DecodeConfig, Generator, ParameterSet,
};
use crate::tasks::{pass1_prompt, pass2_prompt, target_tokens, Vocabulary};
use crate::tools::{parse_output, ModelOutput, ToolEnv};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CandidateSource {
    Gold,
    ForcedTool { temperature: f64 },
    FreeChoice { temperature: f64 },
}

/// One of the k candidate responses for a question.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// The raw first-pass emission being scored.
    pub response: String,
    pub parsed: ModelOutput,
    /// Reward level 0-4.
    pub reward: u8,
    /// Length-normalized log-probability under the scoring model, filled
    /// once computed.
    pub score: Option<f64>,
    pub source: CandidateSource,
    /// The post-execution final answer used for correctness.
    pub executed_answer: String,
}

/// Executes a response the way inference would: tool invocations run the
/// tool and greedy-decode a final answer from the result. The prompt state
/// is forked rather than recomputed.
fn execute_response(
    item: &ToolInstance,
    response: &str,
    env: &ToolEnv,
    prompt_state: &Generator<'_, f32>,
    prompt_logits: &[f32],
    prompt_len: usize,
) -> Result<(ModelOutput, String), TrainError> {
    let vocab = Vocabulary::standard();
    let parsed = parse_output(response);
    let executed = match &parsed {
        ModelOutput::Answer { text, .. } => text.clone(),
        ModelOutput::Malformed { raw, .. } => raw.clone(),
        ModelOutput::ToolInvocation(call) => {
            let result = env.execute(call);
            // The pass-2 prompt extends the pass-1 prompt with the result
            // and a separator; continue from the fork.
            let p2 = pass2_prompt(vocab, &item.instance, &result.output)?;
            let mut gen = prompt_state.clone();
            let mut logits = prompt_logits.to_vec();
            for &t in &p2[prompt_len..] {
                logits = gen.append(t)?;
            }
            let decode = DecodeConfig::greedy(PASS2_MAX_NEW, Vocabulary::EOS);
            let mut rng = crate::rng::stream_rng(0, "greedy");
            let toks = continue_sample(&mut gen, logits, &decode, &mut rng)?;
            vocab.detokenize(&toks).trim().to_string()
        }
    };
    Ok((parsed, executed))
}

fn sample_response(
    prompt_state: &Generator<'_, f32>,
    prompt_logits: &[f32],
    temperature: f64,
    force_prefix: Option<Vec<u32>>,
    rng: &mut ChaCha8Rng,
) -> Result<String, TrainError> {
    let vocab = Vocabulary::standard();
    let mut decode = DecodeConfig::temperature(temperature, PASS1_MAX_NEW, Vocabulary::EOS);
    decode.force_prefix = force_prefix;
    // An empty sample gets one retry before being kept as-is.
    for _ in 0..2 {
        let mut gen = prompt_state.clone();
        let toks = continue_sample(&mut gen, prompt_logits.to_vec(), &decode, rng)?;
        if !toks.is_empty() {
            return Ok(vocab.detokenize(&toks));
        }
    }
    Ok(String::new())
}

/// Generates the candidate set for one question: the gold response from the
/// prepared dataset, `(k-1)/2` forced-tool samples constrained to open with
/// the task's tool name, and the rest free-choice samples. Everything is
/// executed, rewarded, and scored against the scoring model.
pub fn generate_candidates(
    model: &ParameterSet<f32>,
    item: &ToolInstance,
    cfg: &TrainConfig,
    env: &ToolEnv,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Candidate>, TrainError> {
    let vocab = Vocabulary::standard();
    let prompt = pass1_prompt(vocab, &item.instance)?;
    let (prompt_state, prompt_logits) = prefill(model, &prompt)?;
    let n_forced = (cfg.k - 1) / 2;
    let n_free = cfg.k - 1 - n_forced;
    let temps = &cfg.sampler_temperatures;

    let mut raw: Vec<(String, CandidateSource)> = Vec::with_capacity(cfg.k);
    raw.push((item.output.clone(), CandidateSource::Gold));
    let tool_prefix = format!("{}(", item.instance.task.tool_name());
    let prefix_toks = vocab.tokenize(&tool_prefix)?;
    for i in 0..n_forced {
        let t = temps[i % temps.len()];
        let resp =
            sample_response(&prompt_state, &prompt_logits, t, Some(prefix_toks.clone()), rng)?;
        raw.push((resp, CandidateSource::ForcedTool { temperature: t }));
    }
    for i in 0..n_free {
        let t = temps[i % temps.len()];
        let resp = sample_response(&prompt_state, &prompt_logits, t, None, rng)?;
        raw.push((resp, CandidateSource::FreeChoice { temperature: t }));
    }

    let gold_output = parse_output(&item.output);
    let mut out = Vec::with_capacity(cfg.k);
    for (response, source) in raw {
        let (parsed, executed_answer) = if source == CandidateSource::Gold {
            // The gold response's execution is consistent with the gold
            // answer by construction of the prepared dataset.
            (gold_output.clone(), item.instance.answer.clone())
        } else {
            execute_response(item, &response, env, &prompt_state, &prompt_logits, prompt.len())?
        };
        let mut cand = Candidate {
            response,
            parsed,
            reward: 0,
            score: None,
            source,
            executed_answer,
        };
        cand.reward = reward(&gold_output, &cand, &item.instance.answer, item.instance.task);
        let resp_toks = target_tokens(vocab, &cand.response)?;
        let lps = logprobs_from_state(prompt_state.clone(), prompt_logits.clone(), &resp_toks)?;
        cand.score = Some(crate::nn::sequence_score_from_logprobs(&lps));
        out.push(cand);
    }
    Ok(out)
}

/// Cache-file record: one line per question.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub question_idx: usize,
    pub question: String,
    pub candidates: Vec<Candidate>,
}

pub fn save_candidate_cache(path: &Path, records: &[CandidateRecord]) -> Result<(), TrainError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    for rec in records {
        writeln!(f, "{}", serde_json::to_string(rec).expect("candidate record serializes"))?;
    }
    Ok(())
}

pub fn load_candidate_cache(path: &Path) -> Result<Vec<CandidateRecord>, TrainError> {
    let f = fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| TrainError::Config(format!("candidate cache malformed: {e}")))?,
        );
    }
    Ok(out)
}
