//! The sandboxed tool environment: the `name(input)` call grammar, the
//! classifier that decides whether raw model text is an answer or a tool
//! invocation, and deterministic executors for the registered tools.

mod calculator;
mod cipher;
mod kb;

pub use calculator::{eval_expr, CalcError};
pub use cipher::Cipher;
pub use kb::KnowledgeBase;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The closed set of tool names. Nothing outside this list ever executes.
pub const REGISTERED_TOOLS: [&str; 4] = ["calculator", "wikisearch", "qa", "translator"];

pub fn is_registered(name: &str) -> bool {
    REGISTERED_TOOLS.contains(&name)
}

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("unregistered tool name: {0}")]
    UnregisteredName(String),
    #[error("tool input has unbalanced parentheses: {0}")]
    UnbalancedInput(String),
}

/// A validated tool invocation. Constructing one requires a registered name
/// and an input whose parentheses balance, so the rendered form always
/// parses back to the same call.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    name: String,
    input: String,
}

impl ToolCall {
    pub fn new(name: &str, input: &str) -> Result<Self, ToolError> {
        if !is_registered(name) {
            return Err(ToolError::UnregisteredName(name.to_string()));
        }
        if !parens_balanced(input) {
            return Err(ToolError::UnbalancedInput(input.to_string()));
        }
        Ok(ToolCall { name: name.to_string(), input: input.to_string() })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input(&self) -> &str {
        &self.input
    }

    /// Exactly `name(input)`.
    pub fn render(&self) -> String {
        format!("{}({})", self.name, self.input)
    }
}

/// What the model's raw generation turned out to be.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelOutput {
    Answer {
        text: String,
        /// True when the model emitted the literal `None` to decline tools.
        explicit_no_tool: bool,
    },
    ToolInvocation(ToolCall),
    Malformed {
        raw: String,
        reason: String,
    },
}

impl ModelOutput {
    pub fn answer(text: &str) -> Self {
        ModelOutput::Answer { text: text.to_string(), explicit_no_tool: false }
    }

    pub fn uses_tool(&self) -> bool {
        // Malformed counts as an attempted tool use: the model tried the
        // call syntax and failed.
        matches!(self, ModelOutput::ToolInvocation(_) | ModelOutput::Malformed { .. })
    }
}

/// Result of executing one tool call.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    pub tool: String,
    pub output: String,
    pub success: bool,
}

impl ToolResult {
    fn ok(tool: &str, output: String) -> Self {
        ToolResult { tool: tool.to_string(), output, success: true }
    }

    fn fail(tool: &str, diagnostic: String) -> Self {
        assert!(!diagnostic.is_empty(), "failures carry a diagnostic");
        ToolResult { tool: tool.to_string(), output: diagnostic, success: false }
    }
}

fn parens_balanced(s: &str) -> bool {
    let mut depth = 0i64;
    for c in s.chars() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return false;
                }
            }
            _ => {}
        }
    }
    depth == 0
}

fn looks_tool_like(s: &str) -> Option<usize> {
    let open = s.find('(')?;
    if open == 0 {
        return None;
    }
    let head = &s[..open];
    if head.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        Some(open)
    } else {
        None
    }
}

/// Classifies raw post-stop-token generation. Total: every input maps to a
/// variant.
///
/// - `name(...)` with a registered name and balanced parentheses wrapping
///   the whole text becomes a [`ModelOutput::ToolInvocation`];
/// - the literal `None` becomes an explicit no-tool answer;
/// - anything tool-shaped but invalid becomes [`ModelOutput::Malformed`];
/// - everything else is a plain trimmed answer.
pub fn parse_output(text: &str) -> ModelOutput {
    let trimmed = text.trim();
    if trimmed == "None" {
        return ModelOutput::Answer { text: String::new(), explicit_no_tool: true };
    }
    let Some(open) = looks_tool_like(trimmed) else {
        return ModelOutput::answer(trimmed);
    };
    let name = &trimmed[..open];
    let raw = trimmed.to_string();
    if !trimmed.ends_with(')') || !parens_balanced(&trimmed[open..]) {
        return ModelOutput::Malformed { raw, reason: "unbalanced parenthesis".to_string() };
    }
    // The outer parentheses must wrap everything after the name: depth may
    // only return to zero at the final character.
    let inner = &trimmed[open + 1..trimmed.len() - 1];
    let mut depth = 0i64;
    for c in inner.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            _ => {}
        }
        if depth < 0 {
            return ModelOutput::Malformed {
                raw,
                reason: "text outside the call parentheses".to_string(),
            };
        }
    }
    if !is_registered(name) {
        return ModelOutput::Malformed { raw, reason: format!("unregistered tool name: {name}") };
    }
    match ToolCall::new(name, inner) {
        Ok(call) => ModelOutput::ToolInvocation(call),
        Err(e) => ModelOutput::Malformed { raw, reason: e.to_string() },
    }
}

/// The immutable per-experiment tool environment: knowledge base plus
/// cipher. All executors are pure functions of (env, call).
#[derive(Clone, Debug)]
pub struct ToolEnv {
    pub kb: KnowledgeBase,
    pub cipher: Cipher,
}

impl ToolEnv {
    pub fn execute(&self, call: &ToolCall) -> ToolResult {
        match call.name() {
            "calculator" => match eval_expr(call.input()) {
                Ok(v) => ToolResult::ok("calculator", v),
                Err(e) => ToolResult::fail("calculator", e.to_string()),
            },
            // "qa" serves the same store under a different instruction-facing
            // name, so each task can advertise its own tool.
            "wikisearch" | "qa" => match self.kb.lookup(call.input()) {
                Some(v) => ToolResult::ok(call.name(), v.to_string()),
                None => ToolResult::fail(call.name(), format!("no entry for: {}", call.input())),
            },
            "translator" => ToolResult::ok("translator", self.cipher.translate(call.input())),
            other => unreachable!("unregistered tool {other} cannot be constructed"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_calculator_example() {
        let out = parse_output("calculator(50/5)");
        let ModelOutput::ToolInvocation(call) = out else {
            panic!("expected invocation, got {out:?}");
        };
        assert_eq!(call.name(), "calculator");
        assert_eq!(call.input(), "50/5");
    }

    #[test]
    fn literal_none_is_an_explicit_no_tool_answer() {
        assert_eq!(
            parse_output("None"),
            ModelOutput::Answer { text: String::new(), explicit_no_tool: true }
        );
    }

    #[test]
    fn unbalanced_call_is_malformed() {
        let out = parse_output("calculator(50/5");
        let ModelOutput::Malformed { reason, .. } = out else {
            panic!("expected malformed, got {out:?}");
        };
        assert!(reason.contains("unbalanced"));
    }

    #[test]
    fn unregistered_name_is_malformed_not_executed() {
        let out = parse_output("websearch(somewhere)");
        assert!(matches!(out, ModelOutput::Malformed { .. }));
        assert!(ToolCall::new("websearch", "x").is_err());
    }

    #[test]
    fn plain_text_is_an_answer() {
        assert_eq!(parse_output("  the answer is 10 "), ModelOutput::answer("the answer is 10"));
    }

    #[test]
    fn nested_parens_inside_input_are_fine() {
        let out = parse_output("calculator((2+3)*4)");
        let ModelOutput::ToolInvocation(call) = out else { panic!() };
        assert_eq!(call.input(), "(2+3)*4");
    }

    #[test]
    fn trailing_text_after_call_is_malformed() {
        assert!(matches!(parse_output("calculator(1)(2)"), ModelOutput::Malformed { .. }));
    }

    #[test]
    fn render_parse_round_trip() {
        for (name, input) in [
            ("calculator", "50/5"),
            ("wikisearch", "capital of freland"),
            ("translator", "xku vjku"),
            ("qa", "who made (this)"),
        ] {
            let call = ToolCall::new(name, input).unwrap();
            let out = parse_output(&call.render());
            assert_eq!(out, ModelOutput::ToolInvocation(call));
        }
    }

    #[test]
    fn malformed_counts_as_tool_use() {
        assert!(parse_output("calculator(1").uses_tool());
        assert!(!parse_output("hello").uses_tool());
    }
}
