//! Synthetic task families, the character tokenizer, prompt rendering, and
//! dataset serialization.

mod dataset;
mod generate;
mod vocab;

pub use dataset::{load_instances, save_instances, DatasetManifest, SplitCounts};
pub use generate::{gen_cipher_qa, gen_lookup_qa, gen_math, LookupStyle};
pub use vocab::Vocabulary;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tools::ToolCall;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("character {0:?} not in vocabulary")]
    UnknownChar(char),
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset malformed: {0}")]
    Malformed(String),
}

/// The four task families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "math")]
    Math,
    #[serde(rename = "lookup-qa")]
    LookupQa,
    #[serde(rename = "cloze-qa")]
    ClozeQa,
    #[serde(rename = "cipher-qa")]
    CipherQa,
}

impl TaskKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Math => "math",
            TaskKind::LookupQa => "lookup-qa",
            TaskKind::ClozeQa => "cloze-qa",
            TaskKind::CipherQa => "cipher-qa",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "math" => Some(TaskKind::Math),
            "lookup-qa" => Some(TaskKind::LookupQa),
            "cloze-qa" => Some(TaskKind::ClozeQa),
            "cipher-qa" => Some(TaskKind::CipherQa),
            _ => None,
        }
    }

    /// The tool this task's instruction advertises.
    pub fn tool_name(&self) -> &'static str {
        match self {
            TaskKind::Math => "calculator",
            TaskKind::LookupQa => "wikisearch",
            TaskKind::ClozeQa => "qa",
            TaskKind::CipherQa => "translator",
        }
    }

    pub fn instruction(&self) -> &'static str {
        match self {
            TaskKind::Math => {
                "Given a math problem, please solve it and you can use a calculator for help."
            }
            TaskKind::LookupQa => {
                "Given a question, please answer it and you can use a WikiSearch for help."
            }
            TaskKind::ClozeQa => {
                "Given a question, please answer it and you can use a QA model for help."
            }
            TaskKind::CipherQa => {
                "Given a context, please answer the question in English and you can use a translator for help."
            }
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Difficulty {
    #[serde(rename = "easy")]
    Easy,
    #[serde(rename = "hard")]
    Hard,
}

/// One task example: instruction `s`, question `q`, optional gold tool `t`,
/// gold answer `a`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub task: TaskKind,
    pub difficulty: Difficulty,
    pub instruction: String,
    pub question: String,
    pub tool_name: Option<String>,
    pub tool_input: Option<String>,
    pub answer: String,
}

impl Instance {
    /// The generator-stored gold tool call, when present.
    pub fn gold_tool(&self) -> Option<ToolCall> {
        match (&self.tool_name, &self.tool_input) {
            (Some(name), Some(input)) => ToolCall::new(name, input).ok(),
            _ => None,
        }
    }
}

// Prompt rendering. The textual input is the instruction and question
// joined by a newline; SEP always means "begin output".

pub fn render_input(instruction: &str, question: &str) -> String {
    format!("{instruction}\n{question}")
}

/// `[BOS] s \n q [SEP]` — the model answers or invokes a tool after this.
pub fn pass1_prompt(vocab: &Vocabulary, inst: &Instance) -> Result<Vec<u32>, TaskError> {
    let mut toks = vec![Vocabulary::BOS];
    toks.extend(vocab.tokenize(&render_input(&inst.instruction, &inst.question))?);
    toks.push(Vocabulary::SEP);
    Ok(toks)
}

/// `[BOS] s \n q [SEP] tool-result [SEP]` — the model answers after this.
pub fn pass2_prompt(
    vocab: &Vocabulary,
    inst: &Instance,
    tool_result: &str,
) -> Result<Vec<u32>, TaskError> {
    let mut toks = pass1_prompt(vocab, inst)?;
    toks.extend(vocab.tokenize(tool_result)?);
    toks.push(Vocabulary::SEP);
    Ok(toks)
}

/// Output text followed by EOS.
pub fn target_tokens(vocab: &Vocabulary, text: &str) -> Result<Vec<u32>, TaskError> {
    let mut toks = vocab.tokenize(text)?;
    toks.push(Vocabulary::EOS);
    Ok(toks)
}
