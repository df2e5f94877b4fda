//! Builds the tool-annotated dataset: run the unprepared model over the raw
//! instances with tools disabled, keep correct predictions as no-tool
//! examples, and annotate the rest with teacher tool labels.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{infer, EvalError};
use crate::nn::{checkpoint_content_id, ParameterSet};
use crate::rng::item_rng;
use crate::tasks::{load_instances, save_instances, Instance, TaskError, TaskKind};
use crate::tools::{ToolCall, ToolEnv};

pub const TEACHER_ID: &str = "gold-oracle-v1";

#[derive(Debug, Error)]
pub enum PrepError {
    #[error("instance {index} has no stored gold tool to annotate with")]
    MissingGoldTool { index: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One prepared example: the original instance with its tool decision, the
/// rendered gold output, and (for tool labels) the executed tool result the
/// second inference pass trains against.
#[derive(Clone, Debug, PartialEq)]
pub struct ToolInstance {
    pub instance: Instance,
    /// `None` means the model answered correctly without help, so the gold
    /// output is the answer itself.
    pub label: Option<ToolCall>,
    /// The gold output `o`: the rendered tool call, or the gold answer.
    pub output: String,
    pub tool_result: Option<String>,
}

impl ToolInstance {
    pub fn uses_tool(&self) -> bool {
        self.label.is_some()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepCounts {
    pub tool: usize,
    pub no_tool: usize,
    pub dropped: usize,
}

/// Provenance manifest emitted next to the prepared dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_checkpoint_id: String,
    pub teacher_id: String,
    pub seed: u64,
    pub noise_fraction: f64,
    pub per_task: BTreeMap<String, PrepCounts>,
    pub dropped: Vec<DroppedInstance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroppedInstance {
    pub index: usize,
    pub reason: String,
}

/// The prepared dataset: ordered like the input minus dropped instances.
#[derive(Clone, Debug)]
pub struct ToolDataset {
    pub items: Vec<ToolInstance>,
    pub provenance: Provenance,
}

#[derive(Clone, Copy, Debug)]
pub struct PrepOptions {
    pub seed: u64,
    /// Fraction of teacher labels deliberately corrupted (robustness knob).
    pub noise_fraction: f64,
}

impl Default for PrepOptions {
    fn default() -> Self {
        PrepOptions { seed: 0, noise_fraction: 0.0 }
    }
}

/// Returns the generator-stored gold tool call for the instance.
pub fn teacher_annotate(instance: &Instance, index: usize) -> Result<ToolCall, PrepError> {
    instance.gold_tool().ok_or(PrepError::MissingGoldTool { index })
}

fn corrupt_call(call: &ToolCall, env: &ToolEnv, rng: &mut rand_chacha::ChaCha8Rng) -> ToolCall {
    match call.name() {
        "calculator" => {
            // Perturb the first digit run by one.
            let input = call.input();
            let mut out = String::with_capacity(input.len() + 1);
            let mut done = false;
            for c in input.chars() {
                if !done && c.is_ascii_digit() {
                    let d = c.to_digit(10).unwrap();
                    out.push(char::from_digit((d + 1) % 10, 10).unwrap());
                    done = true;
                } else {
                    out.push(c);
                }
            }
            ToolCall::new("calculator", &out).unwrap_or_else(|_| call.clone())
        }
        "wikisearch" | "qa" => {
            let n = env.kb.len();
            if n == 0 {
                return call.clone();
            }
            let pick = rng.gen_range(0..n);
            let key = env.kb.iter().nth(pick).map(|(k, _)| k.to_string());
            match key {
                Some(k) => ToolCall::new(call.name(), &k).unwrap_or_else(|_| call.clone()),
                None => call.clone(),
            }
        }
        _ => {
            // Swap the first two letters of the cipher input.
            let mut chars: Vec<char> = call.input().chars().collect();
            if chars.len() >= 2 {
                chars.swap(0, 1);
            }
            let s: String = chars.into_iter().collect();
            ToolCall::new(call.name(), &s).unwrap_or_else(|_| call.clone())
        }
    }
}

enum Labeled {
    NoTool,
    Tool { call: ToolCall, result: String },
    Dropped { reason: String },
}

/// Executes the teacher call and checks its consistency with the gold
/// answer: the tool output must equal the answer, except for cipher-qa
/// where the translator returns the deciphered question and the answer must
/// instead sit verbatim in the instance's context.
fn verify_execution(
    instance: &Instance,
    call: &ToolCall,
    env: &ToolEnv,
) -> Result<String, String> {
    let result = env.execute(call);
    if !result.success {
        return Err(format!("teacher call failed: {}", result.output));
    }
    let consistent = match instance.task {
        TaskKind::CipherQa => instance.question.contains(&instance.answer),
        _ => result.output == instance.answer,
    };
    if !consistent {
        return Err(format!(
            "teacher call output {:?} inconsistent with gold answer {:?}",
            result.output, instance.answer
        ));
    }
    Ok(result.output)
}

/// Two-pass construction of the tool dataset from the raw one: instances the
/// model already answers correctly (greedy, tools disabled) get `t = None`;
/// the rest get teacher labels. Teacher failures drop the instance with a
/// logged reason.
pub fn build_tool_dataset(
    model: &ParameterSet<f32>,
    d_init: &[Instance],
    env: &ToolEnv,
    opts: &PrepOptions,
) -> Result<ToolDataset, PrepError> {
    let labeled: Vec<(usize, Result<Labeled, PrepError>)> = d_init
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let pred = match infer(model, inst, i, env, false) {
                Ok(p) => p,
                Err(e) => return (i, Err(PrepError::Eval(e))),
            };
            if pred.correct {
                return (i, Ok(Labeled::NoTool));
            }
            let call = match teacher_annotate(inst, i) {
                Ok(c) => c,
                Err(_) => {
                    return (
                        i,
                        Ok(Labeled::Dropped { reason: "no gold tool available".to_string() }),
                    )
                }
            };
            let mut rng = item_rng(opts.seed, "data-prep.noise", i);
            let (call, corrupted) = if opts.noise_fraction > 0.0
                && rng.gen_bool(opts.noise_fraction)
            {
                (corrupt_call(&call, env, &mut rng), true)
            } else {
                (call, false)
            };
            if corrupted {
                // Deliberate noise: keep whatever the corrupted call returns.
                let result = env.execute(&call);
                return (i, Ok(Labeled::Tool { call, result: result.output }));
            }
            match verify_execution(inst, &call, env) {
                Ok(result) => (i, Ok(Labeled::Tool { call, result })),
                Err(reason) => (i, Ok(Labeled::Dropped { reason })),
            }
        })
        .collect();

    let mut items = Vec::with_capacity(d_init.len());
    let mut per_task: BTreeMap<String, PrepCounts> = BTreeMap::new();
    let mut dropped = Vec::new();
    for (i, lab) in labeled {
        let inst = &d_init[i];
        let counts = per_task.entry(inst.task.as_str().to_string()).or_default();
        match lab? {
            Labeled::NoTool => {
                counts.no_tool += 1;
                items.push(ToolInstance {
                    instance: inst.clone(),
                    label: None,
                    output: inst.answer.clone(),
                    tool_result: None,
                });
            }
            Labeled::Tool { call, result } => {
                counts.tool += 1;
                items.push(ToolInstance {
                    instance: inst.clone(),
                    output: call.render(),
                    label: Some(call),
                    tool_result: Some(result),
                });
            }
            Labeled::Dropped { reason } => {
                counts.dropped += 1;
                dropped.push(DroppedInstance { index: i, reason });
            }
        }
    }
    let provenance = Provenance {
        model_checkpoint_id: checkpoint_content_id(model),
        teacher_id: TEACHER_ID.to_string(),
        seed: opts.seed,
        noise_fraction: opts.noise_fraction,
        per_task,
        dropped,
    };
    Ok(ToolDataset { items, provenance })
}

impl ToolDataset {
    /// Serializes as the standard instance JSONL (tool fields holding the
    /// label, null for no-tool) plus a provenance manifest.
    pub fn save(&self, data_path: &Path, provenance_path: &Path) -> Result<(), PrepError> {
        let instances: Vec<Instance> = self
            .items
            .iter()
            .map(|it| {
                let mut inst = it.instance.clone();
                match &it.label {
                    Some(call) => {
                        inst.tool_name = Some(call.name().to_string());
                        inst.tool_input = Some(call.input().to_string());
                    }
                    None => {
                        inst.tool_name = None;
                        inst.tool_input = None;
                    }
                }
                inst
            })
            .collect();
        save_instances(data_path, &instances)?;
        if let Some(dir) = provenance_path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(
            provenance_path,
            serde_json::to_string_pretty(&self.provenance).expect("provenance serializes"),
        )?;
        Ok(())
    }

    /// Rebuilds the in-memory dataset, re-executing tool labels to recover
    /// the pass-2 tool results.
    pub fn load(
        data_path: &Path,
        provenance_path: &Path,
        env: &ToolEnv,
    ) -> Result<Self, PrepError> {
        let instances = load_instances(data_path)?;
        let provenance: Provenance =
            serde_json::from_str(&fs::read_to_string(provenance_path)?)
                .map_err(|e| PrepError::Task(TaskError::Malformed(e.to_string())))?;
        let items = instances
            .into_iter()
            .map(|inst| match inst.gold_tool() {
                Some(call) => {
                    let result = env.execute(&call);
                    ToolInstance {
                        instance: inst,
                        output: call.render(),
                        label: Some(call),
                        tool_result: Some(result.output),
                    }
                }
                None => ToolInstance {
                    output: inst.answer.clone(),
                    instance: inst,
                    label: None,
                    tool_result: None,
                },
            })
            .collect();
        Ok(ToolDataset { items, provenance })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelConfig;
    use crate::rng::stream_rng;
    use crate::tasks::{gen_lookup_qa, gen_math, Vocabulary};
    use crate::tools::{Cipher, KnowledgeBase};

    fn tiny_model() -> ParameterSet<f32> {
        let vocab = Vocabulary::standard().size();
        let cfg = ModelConfig { vocab, d_model: 16, n_layers: 1, n_heads: 2, ctx_len: 256 };
        ParameterSet::init_random(cfg, &mut stream_rng(61, "prep-test"))
    }

    fn env_for(kb: KnowledgeBase) -> ToolEnv {
        ToolEnv { kb, cipher: Cipher::generate(&mut stream_rng(62, "prep-test")) }
    }

    #[test]
    fn random_model_labels_match_its_accuracy() {
        let model = tiny_model();
        let (insts, kb) = gen_lookup_qa(63, 60, 100, 0.1, crate::tasks::LookupStyle::WikiSearch);
        let mut d_init = gen_math(63, 60, 0.5);
        d_init.extend(insts);
        let env = env_for(kb);
        let ds = build_tool_dataset(&model, &d_init, &env, &PrepOptions::default()).unwrap();

        // Recount: tool fraction equals 1 - lenient accuracy of the model.
        let preds = crate::eval::evaluate(&model, &d_init, &env, false).unwrap();
        let n_correct = preds.iter().filter(|p| p.correct).count();
        let n_tool = ds.items.iter().filter(|it| it.uses_tool()).count();
        let n_none = ds.items.iter().filter(|it| !it.uses_tool()).count();
        assert_eq!(n_none, n_correct);
        assert_eq!(n_tool + n_none + ds.provenance.dropped.len(), d_init.len());

        for it in &ds.items {
            match &it.label {
                Some(call) => {
                    assert_eq!(it.output, call.render());
                    assert!(it.tool_result.is_some());
                }
                None => assert_eq!(it.output, it.instance.answer),
            }
        }
    }

    #[test]
    fn correct_prediction_forces_no_tool_label() {
        // A zero model emits only padding, never the right answer, so force
        // the complementary case instead: every wrong prediction gets the
        // teacher's gold call, which must execute and match the answer.
        let model = tiny_model();
        let d_init = gen_math(64, 30, 0.5);
        let env = env_for(KnowledgeBase::new());
        let ds = build_tool_dataset(&model, &d_init, &env, &PrepOptions::default()).unwrap();
        for it in &ds.items {
            if let Some(call) = &it.label {
                let result = env.execute(call);
                assert!(result.success);
                assert_eq!(result.output, it.instance.answer);
            }
        }
        assert!(ds.provenance.dropped.is_empty());
    }

    #[test]
    fn missing_gold_tool_drops_with_reason() {
        let model = tiny_model();
        let mut d_init = gen_math(65, 4, 1.0);
        for inst in d_init.iter_mut() {
            inst.tool_name = None;
            inst.tool_input = None;
        }
        let env = env_for(KnowledgeBase::new());
        let ds = build_tool_dataset(&model, &d_init, &env, &PrepOptions::default()).unwrap();
        // A random model answers none of these, so all lack teacher labels.
        assert_eq!(ds.provenance.dropped.len(), 4);
        assert!(ds.provenance.dropped[0].reason.contains("no gold tool"));
        assert!(ds.items.is_empty());
    }

    #[test]
    fn rebuild_is_byte_identical() {
        let model = tiny_model();
        let d_init = gen_math(66, 40, 0.5);
        let env = env_for(KnowledgeBase::new());
        let opts = PrepOptions { seed: 9, noise_fraction: 0.0 };
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.jsonl"), dir.path().join("a.json"));
        let (q1, q2) = (dir.path().join("b.jsonl"), dir.path().join("b.json"));
        build_tool_dataset(&model, &d_init, &env, &opts).unwrap().save(&p1, &p2).unwrap();
        build_tool_dataset(&model, &d_init, &env, &opts).unwrap().save(&q1, &q2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&q1).unwrap());
        assert_eq!(fs::read(&p2).unwrap(), fs::read(&q2).unwrap());
    }

    #[test]
    fn noise_knob_corrupts_some_labels() {
        let model = tiny_model();
        let d_init = gen_math(67, 60, 1.0);
        let env = env_for(KnowledgeBase::new());
        let clean =
            build_tool_dataset(&model, &d_init, &env, &PrepOptions { seed: 1, noise_fraction: 0.0 })
                .unwrap();
        let noisy =
            build_tool_dataset(&model, &d_init, &env, &PrepOptions { seed: 1, noise_fraction: 0.5 })
                .unwrap();
        let differing = clean
            .items
            .iter()
            .zip(noisy.items.iter())
            .filter(|(a, b)| a.label != b.label)
            .count();
        assert!(differing > 0, "noise should corrupt some labels");
    }
}
