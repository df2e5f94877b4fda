//! The lenient correctness criteria: last-number equality for math,
//! containment of the gold answer within the first twenty words otherwise.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::pow::Pow;

use crate::tasks::TaskKind;

const WORD_WINDOW: usize = 20;

/// Lenient match: for math, the last maximal numeric substring of the
/// prediction (optional sign, optional fraction part) must equal the gold
/// answer as exact rationals; for the other tasks the gold answer must
/// appear contiguously, case-insensitively, within the first twenty
/// whitespace-delimited words of the prediction.
pub fn lenient_match(task: TaskKind, prediction: &str, gold: &str) -> bool {
    match task {
        TaskKind::Math => match (last_number(prediction), parse_decimal(gold)) {
            (Some(p), Some(g)) => p == g,
            _ => false,
        },
        _ => contains_in_first_words(prediction, gold),
    }
}

/// Extracts the last maximal numeric substring (`-?digits[.digits]`) as an
/// exact rational. A minus sign binds only when it does not follow a digit
/// or closing parenthesis, so `10-2` ends in `2`, not `-2`.
fn last_number(text: &str) -> Option<BigRational> {
    let bytes = text.as_bytes();
    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let mut start = i;
            if start > 0 && bytes[start - 1] == b'-' {
                let before = text[..start - 1].trim_end().as_bytes().last().copied();
                let sign_binds = !matches!(before, Some(b) if b.is_ascii_digit() || b == b')');
                if sign_binds {
                    start -= 1;
                }
            }
            let mut end = i;
            while end < bytes.len() && bytes[end].is_ascii_digit() {
                end += 1;
            }
            if end + 1 < bytes.len() && bytes[end] == b'.' && bytes[end + 1].is_ascii_digit() {
                end += 1;
                while end < bytes.len() && bytes[end].is_ascii_digit() {
                    end += 1;
                }
            }
            best = Some((start, end));
            i = end;
        } else {
            i += 1;
        }
    }
    best.and_then(|(s, e)| parse_decimal(&text[s..e]))
}

/// Parses `-?digits[.digits]` into an exact rational.
fn parse_decimal(text: &str) -> Option<BigRational> {
    let text = text.trim();
    let (neg, digits) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return None;
    }
    let scale = BigInt::from(10).pow(frac_part.len() as u32);
    let whole: BigInt = if int_part.is_empty() { BigInt::from(0) } else { int_part.parse().ok()? };
    let frac: BigInt = if frac_part.is_empty() { BigInt::from(0) } else { frac_part.parse().ok()? };
    let mut value = BigRational::new(whole * &scale + frac, scale);
    if neg {
        value = -value;
    }
    Some(value)
}

fn normalize_word(w: &str) -> String {
    w.trim_matches(|c: char| !c.is_ascii_alphanumeric()).to_lowercase()
}

fn contains_in_first_words(prediction: &str, gold: &str) -> bool {
    let window: Vec<String> =
        prediction.split_whitespace().take(WORD_WINDOW).map(normalize_word).collect();
    let needle: Vec<String> = gold.split_whitespace().map(normalize_word).collect();
    if needle.is_empty() || needle.len() > window.len() {
        return false;
    }
    window.windows(needle.len()).any(|w| w == needle.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn math_checks_the_last_number() {
        assert!(lenient_match(TaskKind::Math, "so she buys 10 pencils", "10"));
        assert!(!lenient_match(TaskKind::Math, "10 then 12", "10"));
        assert!(lenient_match(TaskKind::Math, "50/5 = 10", "10"));
        assert!(lenient_match(TaskKind::Math, "10.0", "10"));
        assert!(!lenient_match(TaskKind::Math, "no numbers here", "10"));
    }

    #[test]
    fn math_handles_signs() {
        assert!(lenient_match(TaskKind::Math, "the result is -40", "-40"));
        assert!(lenient_match(TaskKind::Math, "12-40", "40"));
        assert!(!lenient_match(TaskKind::Math, "12-40", "-40"));
    }

    #[test]
    fn qa_checks_the_first_twenty_words() {
        let w18 = "a b c d e f g h i j k l m n o p q r Poland x y z";
        assert!(lenient_match(TaskKind::LookupQa, w18, "Poland"));
        let w21 = "a b c d e f g h i j k l m n o p q r s t Poland";
        assert!(!lenient_match(TaskKind::LookupQa, w21, "Poland"));
    }

    #[test]
    fn qa_is_case_insensitive_and_punctuation_tolerant() {
        assert!(lenient_match(TaskKind::CipherQa, "The answer is VARNIS.", "varnis"));
        assert!(lenient_match(TaskKind::ClozeQa, "poland, I think", "Poland"));
    }

    #[test]
    fn multi_word_gold_must_be_contiguous() {
        assert!(lenient_match(TaskKind::LookupQa, "it was more than 40 missions", "more than 40"));
        assert!(!lenient_match(TaskKind::LookupQa, "more missions than maybe 40", "more than 40"));
    }

    #[test]
    fn verdict_is_stable_under_suffixes() {
        // Non-numeric suffixes never change a math verdict.
        assert!(lenient_match(TaskKind::Math, "10", "10"));
        assert!(lenient_match(TaskKind::Math, "10 apples, clearly", "10"));
        // Words beyond position twenty never change a QA verdict.
        let base = "x ".repeat(5) + "varnis";
        assert!(lenient_match(TaskKind::LookupQa, &base, "varnis"));
        let extended = base + &" pad".repeat(30);
        assert!(lenient_match(TaskKind::LookupQa, &extended, "varnis"));
    }

    #[test]
    fn empty_prediction_is_wrong() {
        assert!(!lenient_match(TaskKind::Math, "", "10"));
        assert!(!lenient_match(TaskKind::LookupQa, "", "x"));
    }
}
