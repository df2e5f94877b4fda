//! Fixed substitution cipher over the lowercase alphabet. The generator
//! enciphers questions with it; the `translator` tool applies the inverse.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

/// A bijective map over `a..=z`. Characters outside the alphabet pass
/// through both directions unchanged.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cipher {
    forward: [u8; 26],
    inverse: [u8; 26],
}

impl Cipher {
    pub fn generate(rng: &mut ChaCha8Rng) -> Self {
        let mut perm: Vec<u8> = (b'a'..=b'z').collect();
        perm.shuffle(rng);
        let mut forward = [0u8; 26];
        forward.copy_from_slice(&perm);
        Self::from_forward(forward)
    }

    fn from_forward(forward: [u8; 26]) -> Self {
        let mut inverse = [0u8; 26];
        for (i, &c) in forward.iter().enumerate() {
            inverse[(c - b'a') as usize] = b'a' + i as u8;
        }
        Cipher { forward, inverse }
    }

    pub fn encipher(&self, text: &str) -> String {
        text.chars()
            .map(|c| {
                if c.is_ascii_lowercase() {
                    self.forward[(c as u8 - b'a') as usize] as char
                } else {
                    c
                }
            })
            .collect()
    }

    /// The inverse substitution; this is what the `translator` tool runs.
    pub fn translate(&self, text: &str) -> String {
        text.chars()
            .map(|c| {
                if c.is_ascii_lowercase() {
                    self.inverse[(c as u8 - b'a') as usize] as char
                } else {
                    c
                }
            })
            .collect()
    }

    /// One JSON object mapping each plain character to its cipher character.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let map: BTreeMap<String, String> = (0..26)
            .map(|i| (((b'a' + i as u8) as char).to_string(), (self.forward[i] as char).to_string()))
            .collect();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string_pretty(&map)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let map: BTreeMap<String, String> = serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let mut forward = [0u8; 26];
        let mut seen = [false; 26];
        for (k, v) in &map {
            let (kb, vb) = (k.as_bytes(), v.as_bytes());
            if kb.len() != 1 || vb.len() != 1 || !kb[0].is_ascii_lowercase() || !vb[0].is_ascii_lowercase()
            {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("bad cipher pair {k:?} -> {v:?}"),
                ));
            }
            forward[(kb[0] - b'a') as usize] = vb[0];
            seen[(vb[0] - b'a') as usize] = true;
        }
        if map.len() != 26 || seen.iter().any(|s| !s) {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "cipher map must be a bijection over a..z",
            ));
        }
        Ok(Self::from_forward(forward))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn translate_inverts_encipher() {
        let cipher = Cipher::generate(&mut stream_rng(51, "cipher"));
        let text = "how many red boxes does liam keep?";
        assert_eq!(cipher.translate(&cipher.encipher(text)), text);
    }

    #[test]
    fn empty_string_maps_to_empty_string() {
        let cipher = Cipher::generate(&mut stream_rng(52, "cipher"));
        assert_eq!(cipher.translate(""), "");
        assert_eq!(cipher.encipher(""), "");
    }

    #[test]
    fn out_of_alphabet_characters_pass_through() {
        let cipher = Cipher::generate(&mut stream_rng(53, "cipher"));
        let enc = cipher.encipher("A 12, Z!");
        assert_eq!(enc, "A 12, Z!");
        assert_eq!(cipher.translate("A 12, Z!"), "A 12, Z!");
    }

    #[test]
    fn persists_and_reloads() {
        let cipher = Cipher::generate(&mut stream_rng(54, "cipher"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cipher.json");
        cipher.save(&path).unwrap();
        assert_eq!(Cipher::load(&path).unwrap(), cipher);
    }
}
