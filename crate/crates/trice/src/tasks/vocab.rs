//! Character-level tokenizer: a small auditable alphabet plus four special
//! tokens. Special ids are fixed and never collide with text characters.

use std::collections::HashMap;
use std::sync::OnceLock;

use super::TaskError;

const TEXT_CHARS: &str = " \nabcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789.,?!'\"()+-*/=:;_%";

/// Bijective char <-> id map with PAD/BOS/EOS/SEP in front.
#[derive(Debug)]
pub struct Vocabulary {
    chars: Vec<char>,
    to_id: HashMap<char, u32>,
}

impl Vocabulary {
    pub const PAD: u32 = 0;
    pub const BOS: u32 = 1;
    pub const EOS: u32 = 2;
    pub const SEP: u32 = 3;
    const N_SPECIAL: u32 = 4;

    /// The one vocabulary every component shares.
    pub fn standard() -> &'static Vocabulary {
        static VOCAB: OnceLock<Vocabulary> = OnceLock::new();
        VOCAB.get_or_init(|| {
            let chars: Vec<char> = TEXT_CHARS.chars().collect();
            let to_id = chars
                .iter()
                .enumerate()
                .map(|(i, &c)| (c, Self::N_SPECIAL + i as u32))
                .collect();
            Vocabulary { chars, to_id }
        })
    }

    pub fn size(&self) -> usize {
        self.chars.len() + Self::N_SPECIAL as usize
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>, TaskError> {
        text.chars()
            .map(|c| self.to_id.get(&c).copied().ok_or(TaskError::UnknownChar(c)))
            .collect()
    }

    /// Inverse of [`tokenize`]; special tokens render as nothing.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter_map(|&id| {
                if id < Self::N_SPECIAL {
                    None
                } else {
                    self.chars.get((id - Self::N_SPECIAL) as usize).copied()
                }
            })
            .collect()
    }

    pub fn contains(&self, c: char) -> bool {
        self.to_id.contains_key(&c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn roundtrip_simple() {
        let v = Vocabulary::standard();
        let text = "Given a math problem: what is 2+3*4?";
        assert_eq!(v.detokenize(&v.tokenize(text).unwrap()), text);
    }

    #[test]
    fn empty_text_is_an_empty_sequence() {
        let v = Vocabulary::standard();
        assert_eq!(v.tokenize("").unwrap(), Vec::<u32>::new());
        assert_eq!(v.detokenize(&[]), "");
    }

    #[test]
    fn unknown_character_is_rejected() {
        let v = Vocabulary::standard();
        assert!(matches!(v.tokenize("naïve"), Err(TaskError::UnknownChar('ï'))));
    }

    #[test]
    fn specials_never_collide_with_text() {
        let v = Vocabulary::standard();
        for text in ["abc", "1+1", "?!"] {
            for id in v.tokenize(text).unwrap() {
                assert!(id >= 4);
            }
        }
        assert_eq!(v.size(), 4 + super::TEXT_CHARS.chars().count());
    }

    proptest! {
        #[test]
        fn roundtrip_over_vocabulary_text(text in "[ a-zA-Z0-9.,?!'()+*/=:;_%-]{0,80}") {
            let v = Vocabulary::standard();
            prop_assert_eq!(v.detokenize(&v.tokenize(&text).unwrap()), text);
        }
    }
}
