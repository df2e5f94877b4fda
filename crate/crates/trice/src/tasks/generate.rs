//! Seeded generators for the synthetic task families. Every instance is
//! self-consistent: executing its gold tool call yields (or contains) its
//! gold answer.
//!
//! Difficulty is structural. Easy instances draw from small recurring
//! pattern pools a tiny model can memorize and answer directly; hard
//! instances are unmemorizable by construction (fresh operands, one-shot
//! keys, novel cipher strings), so only the tool path cracks them.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

use super::{Difficulty, Instance, TaskKind};
use crate::tools::{eval_expr, Cipher, KnowledgeBase};

const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

fn pseudo_word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
        w.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
    }
    if rng.gen_bool(0.4) {
        w.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
    }
    w
}

fn fresh_word(rng: &mut ChaCha8Rng, used: &mut HashSet<String>, syllables: usize) -> String {
    loop {
        let w = pseudo_word(rng, syllables);
        if used.insert(w.clone()) {
            return w;
        }
    }
}

// ---------------------------------------------------------------------------
// Math
// ---------------------------------------------------------------------------

const EASY_NAMES: [&str; 4] = ["Ann", "Ben", "Mia", "Sam"];
const EASY_ITEMS: [&str; 4] = ["apples", "pens", "cards", "coins"];
const BUDGET_NAMES: [&str; 4] = ["Hilt", "Reed", "Page", "Cole"];
const BUDGET_ITEMS: [&str; 4] = ["pencil", "eraser", "sticker", "button"];

fn math_instance(question: String, expr: String, difficulty: Difficulty) -> Instance {
    let answer = eval_expr(&expr).expect("generated expressions evaluate");
    Instance {
        task: TaskKind::Math,
        difficulty,
        instruction: TaskKind::Math.instruction().to_string(),
        question,
        tool_name: Some("calculator".to_string()),
        tool_input: Some(expr),
        answer,
    }
}

fn easy_math(rng: &mut ChaCha8Rng) -> Instance {
    let name = EASY_NAMES[rng.gen_range(0..EASY_NAMES.len())];
    let item = EASY_ITEMS[rng.gen_range(0..EASY_ITEMS.len())];
    let template = rng.gen_range(0..6);
    let (question, expr) = match template {
        0 => {
            let a = rng.gen_range(1..=9);
            let b = rng.gen_range(1..=9);
            (
                format!("{name} has {a} {item} and gets {b} more. How many {item} now?"),
                format!("{a}+{b}"),
            )
        }
        1 => {
            let a = rng.gen_range(1..=9);
            let b = rng.gen_range(1..=9);
            (
                format!("{name} puts {a} {item} with {b} other {item}. How many {item} altogether?"),
                format!("{a}+{b}"),
            )
        }
        2 => {
            let a = rng.gen_range(2..=9);
            let b = rng.gen_range(1..=a);
            (
                format!("{name} had {a} {item} and lost {b}. How many {item} are left?"),
                format!("{a}-{b}"),
            )
        }
        3 => {
            let a = rng.gen_range(2..=9);
            let b = rng.gen_range(1..=a);
            (
                format!("{name} had {a} {item} and gave {b} away. How many {item} remain?"),
                format!("{a}-{b}"),
            )
        }
        4 => {
            let a = rng.gen_range(2..=9);
            let b = rng.gen_range(2..=9);
            (
                format!("A box holds {a} rows of {b} {item}. How many {item} are there?"),
                format!("{a}*{b}"),
            )
        }
        _ => {
            let a = rng.gen_range(2..=9);
            let b = rng.gen_range(2..=9);
            (
                format!("{name} buys {a} packs of {b} {item}. How many {item} in total?"),
                format!("{a}*{b}"),
            )
        }
    };
    math_instance(question, expr, Difficulty::Easy)
}

/// Budget word problem: total = price * count, tool input `total/price`.
pub(crate) fn budget_instance(name: &str, item: &str, total: i64, price: i64) -> Instance {
    let question = format!(
        "Mrs. {name} has {total} cents. A {item} costs {price} cents. How many {item}s can she buy with the money she has?"
    );
    math_instance(question, format!("{total}/{price}"), Difficulty::Hard)
}

fn hard_math(rng: &mut ChaCha8Rng) -> Instance {
    if rng.gen_bool(0.3) {
        let name = BUDGET_NAMES[rng.gen_range(0..BUDGET_NAMES.len())];
        let item = BUDGET_ITEMS[rng.gen_range(0..BUDGET_ITEMS.len())];
        let price = rng.gen_range(2..=9);
        let count = rng.gen_range(2..=19);
        return budget_instance(name, item, price * count, price);
    }
    // Expression-in-question problems: copyable tool input, unmemorizable
    // answer space.
    let a = rng.gen_range(11..=99);
    let b = rng.gen_range(2..=9);
    let c = rng.gen_range(11..=99);
    let d = rng.gen_range(2..=9);
    let expr = match rng.gen_range(0..6) {
        0 => format!("{a}*{b}+{c}"),
        1 => format!("{a}*{b}-{c}"),
        2 => format!("{c}+{a}*{b}"),
        3 => format!("{a}-{c}+{b}"),
        4 => format!("({a}-{c})*{b}"),
        _ => format!("{a}+{c}*{d}"),
    };
    let question = match rng.gen_range(0..3) {
        0 => format!("Compute {expr}."),
        1 => format!("Calculate {expr}."),
        _ => format!("What is {expr}?"),
    };
    math_instance(question, expr, Difficulty::Hard)
}

/// Math reasoning instances. Easy: single-digit word problems where the
/// operator must be inferred from the phrasing. Hard: multi-operator
/// expressions with 2-3 digit operands, plus budget word problems.
pub fn gen_math(seed: u64, n: usize, hard_fraction: f64) -> Vec<Instance> {
    assert!((0.0..=1.0).contains(&hard_fraction), "hard_fraction in [0,1]");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_hard = (n as f64 * hard_fraction).round() as usize;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i < n_hard {
            out.push(hard_math(&mut rng));
        } else {
            out.push(easy_math(&mut rng));
        }
    }
    out.shuffle(&mut rng);
    out
}

// ---------------------------------------------------------------------------
// Lookup QA (WikiSearch and QA-model flavors)
// ---------------------------------------------------------------------------

const ATTRIBUTES: [&str; 5] = ["capital", "currency", "language", "founder", "anthem"];

/// Which retrieval tool the instructions advertise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LookupStyle {
    /// `lookup-qa` task, `wikisearch` tool.
    WikiSearch,
    /// `cloze-qa` task, `qa` tool.
    QaModel,
}

impl LookupStyle {
    fn task(&self) -> TaskKind {
        match self {
            LookupStyle::WikiSearch => TaskKind::LookupQa,
            LookupStyle::QaModel => TaskKind::ClozeQa,
        }
    }
}

/// Fact-lookup instances plus the knowledge base they resolve against.
///
/// `frequent_fraction` of the keys form a small pool reused across many easy
/// instances (memorizable); the remaining keys appear in at most one hard
/// instance each (tool required).
pub fn gen_lookup_qa(
    seed: u64,
    n: usize,
    kb_size: usize,
    frequent_fraction: f64,
    style: LookupStyle,
) -> (Vec<Instance>, KnowledgeBase) {
    assert!((0.0..=1.0).contains(&frequent_fraction), "frequent_fraction in [0,1]");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let task = style.task();
    let mut used = HashSet::new();
    let mut kb = KnowledgeBase::new();
    let mut keys = Vec::with_capacity(kb_size);
    for k in 0..kb_size {
        let attr = ATTRIBUTES[k % ATTRIBUTES.len()];
        let entity = fresh_word(&mut rng, &mut used, 3);
        let value = fresh_word(&mut rng, &mut used, 2);
        let key = format!("{attr} of {entity}");
        kb.insert(&key, &value);
        keys.push(key);
    }
    let frequent_count = ((kb_size as f64 * frequent_fraction).round() as usize).clamp(1, kb_size);
    let (frequent, rare) = keys.split_at(frequent_count);
    let n_hard = n / 2;
    assert!(
        n_hard <= rare.len(),
        "need {n_hard} rare keys but only {} available; grow kb_size",
        rare.len()
    );
    let mut rare_order: Vec<&String> = rare.iter().collect();
    rare_order.shuffle(&mut rng);

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (key, difficulty) = if i < n_hard {
            (rare_order[i].as_str(), Difficulty::Hard)
        } else {
            (frequent[rng.gen_range(0..frequent.len())].as_str(), Difficulty::Easy)
        };
        let value = kb.lookup(key).expect("generated key resolves").to_string();
        let question = match style {
            LookupStyle::WikiSearch => match rng.gen_range(0..2) {
                0 => format!("what is the {key}?"),
                _ => format!("tell me the {key}."),
            },
            LookupStyle::QaModel => format!("the {key} is"),
        };
        out.push(Instance {
            task,
            difficulty,
            instruction: task.instruction().to_string(),
            question,
            tool_name: Some(task.tool_name().to_string()),
            tool_input: Some(key.to_string()),
            answer: value,
        });
    }
    out.shuffle(&mut rng);
    (out, kb)
}

// ---------------------------------------------------------------------------
// Cipher QA
// ---------------------------------------------------------------------------

const SLOTS: [&str; 6] = ["code", "word", "number", "name", "sign", "key"];
const FREQUENT_SLOTS: usize = 2;
const FILLERS: [&str; 10] =
    ["please", "kindly", "now", "today", "first", "again", "quickly", "really", "just", "then"];

fn slot_value(rng: &mut ChaCha8Rng, slot: &str) -> String {
    if slot == "number" {
        rng.gen_range(2..=999).to_string()
    } else {
        pseudo_word(rng, 2)
    }
}

/// Cipher QA: a plaintext context naming two slot values plus an enciphered
/// question asking for one of them. The gold tool input is the enciphered
/// question verbatim; the answer sits verbatim in the context.
///
/// Easy questions come from a two-string pool (memorizable ciphertext);
/// hard ones embed filler words, so their ciphertext is effectively unique.
pub fn gen_cipher_qa(seed: u64, n: usize, cipher: &Cipher) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_hard = n / 2;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let hard = i < n_hard;
        let slot_idx = if hard {
            rng.gen_range(FREQUENT_SLOTS..SLOTS.len())
        } else {
            rng.gen_range(0..FREQUENT_SLOTS)
        };
        let slot = SLOTS[slot_idx];
        let decoy_idx = loop {
            let j = rng.gen_range(0..SLOTS.len());
            if j != slot_idx {
                break j;
            }
        };
        let decoy = SLOTS[decoy_idx];
        let value = slot_value(&mut rng, slot);
        let decoy_value = slot_value(&mut rng, decoy);

        let mut facts = [format!("the {slot} is {value}."), format!("the {decoy} is {decoy_value}.")];
        if rng.gen_bool(0.5) {
            facts.swap(0, 1);
        }
        let context = facts.join(" ");

        let plain_question = if hard {
            let f1 = FILLERS[rng.gen_range(0..FILLERS.len())];
            let f2 = FILLERS[rng.gen_range(0..FILLERS.len())];
            match rng.gen_range(0..3) {
                0 => format!("{f1} tell me the {slot} {f2}."),
                1 => format!("{f1} what is the {slot} {f2}?"),
                _ => format!("i {f1} need the {slot} {f2}."),
            }
        } else {
            format!("what is the {slot}?")
        };
        let enciphered = cipher.encipher(&plain_question);
        let question = format!("context: {context} question: {enciphered}");
        out.push(Instance {
            task: TaskKind::CipherQa,
            difficulty: if hard { Difficulty::Hard } else { Difficulty::Easy },
            instruction: TaskKind::CipherQa.instruction().to_string(),
            question,
            tool_name: Some("translator".to_string()),
            tool_input: Some(enciphered),
            answer: value,
        });
    }
    out.shuffle(&mut rng);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::tasks::{pass1_prompt, pass2_prompt, Vocabulary};
    use crate::tools::{eval_expr, ToolEnv};

    #[test]
    fn budget_template_matches_the_canonical_example() {
        let inst = budget_instance("Hilt", "pencil", 50, 5);
        assert!(inst.question.contains("has 50 cents"));
        assert!(inst.question.contains("A pencil costs 5 cents"));
        assert_eq!(inst.tool_name.as_deref(), Some("calculator"));
        assert_eq!(inst.tool_input.as_deref(), Some("50/5"));
        assert_eq!(inst.answer, "10");
    }

    #[test]
    fn generators_are_deterministic_under_seed() {
        let a = gen_math(7, 50, 0.5);
        let b = gen_math(7, 50, 0.5);
        assert_eq!(a, b);
        let cipher = Cipher::generate(&mut stream_rng(1, "cipher"));
        assert_eq!(gen_cipher_qa(9, 30, &cipher), gen_cipher_qa(9, 30, &cipher));
        let (la, ka) = gen_lookup_qa(11, 40, 60, 0.1, LookupStyle::WikiSearch);
        let (lb, kbb) = gen_lookup_qa(11, 40, 60, 0.1, LookupStyle::WikiSearch);
        assert_eq!(la, lb);
        assert_eq!(
            ka.iter().collect::<Vec<_>>(),
            kbb.iter().collect::<Vec<_>>()
        );
    }

    #[test]
    fn math_answers_match_calculator_on_a_thousand_instances() {
        for inst in gen_math(13, 1000, 0.5) {
            let expr = inst.tool_input.as_deref().expect("math has a gold expression");
            assert_eq!(eval_expr(expr).unwrap(), inst.answer, "q: {}", inst.question);
        }
    }

    #[test]
    fn every_lookup_key_resolves_to_its_answer() {
        let (insts, kb) = gen_lookup_qa(17, 500, 500, 0.05, LookupStyle::WikiSearch);
        assert_eq!(kb.len(), 500);
        for inst in &insts {
            let key = inst.tool_input.as_deref().unwrap();
            assert_eq!(kb.lookup(key), Some(inst.answer.as_str()));
            assert!(inst.question.contains(key), "question embeds the key");
        }
    }

    #[test]
    fn lookup_difficulty_tracks_key_frequency() {
        let (insts, _) = gen_lookup_qa(19, 400, 400, 0.05, LookupStyle::WikiSearch);
        use std::collections::HashMap;
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for inst in &insts {
            *counts.entry(inst.tool_input.as_deref().unwrap()).or_default() += 1;
        }
        for inst in &insts {
            let c = counts[inst.tool_input.as_deref().unwrap()];
            match inst.difficulty {
                Difficulty::Hard => assert_eq!(c, 1, "hard keys appear at most once"),
                Difficulty::Easy => assert!(c >= 1),
            }
        }
        let easy = insts.iter().filter(|i| i.difficulty == Difficulty::Easy).count();
        assert_eq!(easy, 200);
    }

    #[test]
    fn cipher_instances_roundtrip_and_contain_answers() {
        let cipher = Cipher::generate(&mut stream_rng(2, "cipher"));
        let insts = gen_cipher_qa(23, 200, &cipher);
        for inst in &insts {
            let enc = inst.tool_input.as_deref().unwrap();
            assert!(inst.question.ends_with(enc), "tool input is the enciphered question");
            let plain = cipher.translate(enc);
            assert!(plain.contains("the"), "deciphered question is english-ish: {plain}");
            assert!(
                inst.question.contains(&format!(" is {}.", inst.answer)),
                "answer appears verbatim in context: {} / {}",
                inst.question,
                inst.answer
            );
        }
    }

    #[test]
    fn rendered_prompts_tokenize_and_fit_the_context_budget() {
        let vocab = Vocabulary::standard();
        let cipher = Cipher::generate(&mut stream_rng(3, "cipher"));
        let (lookups, kb) = gen_lookup_qa(29, 200, 300, 0.1, LookupStyle::QaModel);
        let env = ToolEnv { kb, cipher: cipher.clone() };
        let mut all = gen_math(29, 200, 0.5);
        all.extend(lookups);
        all.extend(gen_cipher_qa(29, 200, &cipher));
        for inst in &all {
            let p1 = pass1_prompt(vocab, inst).expect("pass-1 prompt tokenizes");
            let call = inst.gold_tool().expect("generators always store a gold tool");
            let result = env.execute(&call);
            assert!(result.success, "gold tool executes: {:?}", result);
            let p2 = pass2_prompt(vocab, inst, &result.output).expect("pass-2 prompt tokenizes");
            assert!(p1.len() <= 200, "pass-1 prompt too long: {} for {}", p1.len(), inst.question);
            assert!(p2.len() <= 232, "pass-2 prompt too long: {} for {}", p2.len(), inst.question);
            let call_len = call.render().len();
            assert!(call_len <= 56, "tool call too long: {call_len}");
        }
    }
}
