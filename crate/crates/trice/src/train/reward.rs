//! The five-level reward: gold response maximal, then correctness of the
//! executed answer ordered above consistency of tool usage with the gold
//! response.

use super::candidates::{Candidate, CandidateSource};
use crate::eval::lenient_match;
use crate::tasks::TaskKind;
use crate::tools::ModelOutput;

/// Levels: 4 gold, 3 TrueYes, 2 TrueNo, 1 FalseYes, 0 FalseNo. Candidates
/// in the same state receive the same score.
pub fn reward(gold_output: &ModelOutput, cand: &Candidate, gold_answer: &str, task: TaskKind) -> u8 {
    if cand.source == CandidateSource::Gold {
        return 4;
    }
    let correct = lenient_match(task, &cand.executed_answer, gold_answer);
    let aligned = cand.parsed.uses_tool() == gold_output.uses_tool();
    match (correct, aligned) {
        (true, true) => 3,
        (true, false) => 2,
        (false, true) => 1,
        (false, false) => 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tools::{parse_output, ToolCall};

    fn cand(source: CandidateSource, response: &str, executed: &str) -> Candidate {
        Candidate {
            response: response.to_string(),
            parsed: parse_output(response),
            reward: 0,
            score: None,
            source,
            executed_answer: executed.to_string(),
        }
    }

    #[test]
    fn gold_is_always_maximal() {
        let gold = parse_output("calculator(50/5)");
        let c = cand(CandidateSource::Gold, "calculator(50/5)", "10");
        assert_eq!(reward(&gold, &c, "10", TaskKind::Math), 4);
    }

    #[test]
    fn ordering_true_yes_to_false_no() {
        // Gold uses a tool, so "aligned" means the candidate does too.
        let gold = ModelOutput::ToolInvocation(ToolCall::new("calculator", "50/5").unwrap());
        let true_yes = cand(CandidateSource::FreeChoice { temperature: 1.0 }, "calculator(50/5)", "10");
        let true_no = cand(CandidateSource::FreeChoice { temperature: 1.0 }, "10", "10");
        let false_yes = cand(CandidateSource::FreeChoice { temperature: 1.0 }, "calculator(50/6)", "25/3");
        let false_no = cand(CandidateSource::FreeChoice { temperature: 1.0 }, "7", "7");
        let r = |c: &Candidate| reward(&gold, c, "10", TaskKind::Math);
        assert_eq!(r(&true_yes), 3);
        assert_eq!(r(&true_no), 2);
        assert_eq!(r(&false_yes), 1);
        assert_eq!(r(&false_no), 0);
    }

    #[test]
    fn identical_states_get_identical_scores() {
        let gold = ModelOutput::ToolInvocation(ToolCall::new("calculator", "2+3").unwrap());
        let a = cand(CandidateSource::ForcedTool { temperature: 0.8 }, "calculator(2+3)", "5");
        let b = cand(CandidateSource::FreeChoice { temperature: 1.0 }, "calculator(1+4)", "5");
        assert_eq!(
            reward(&gold, &a, "5", TaskKind::Math),
            reward(&gold, &b, "5", TaskKind::Math)
        );
    }

    #[test]
    fn malformed_counts_as_attempted_tool_use() {
        let gold = ModelOutput::ToolInvocation(ToolCall::new("calculator", "2+3").unwrap());
        let broken = cand(CandidateSource::FreeChoice { temperature: 1.0 }, "calculator(2+3", "calculator(2+3");
        // Wrong answer, but usage aligns with the tool-using gold.
        assert_eq!(reward(&gold, &broken, "5", TaskKind::Math), 1);
    }

    #[test]
    fn alignment_flips_when_gold_answers_directly() {
        let gold = ModelOutput::answer("7");
        let with_tool = cand(CandidateSource::FreeChoice { temperature: 1.0 }, "calculator(3+4)", "7");
        let direct = cand(CandidateSource::FreeChoice { temperature: 1.0 }, "7", "7");
        assert_eq!(reward(&gold, &with_tool, "7", TaskKind::Math), 2);
        assert_eq!(reward(&gold, &direct, "7", TaskKind::Math), 3);
    }
}
