//! The key-value store behind the `wikisearch` and `qa` tools. Exact-key
//! lookup only, so tool success is attributable entirely to the generated
//! tool input.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Serialize, Deserialize)]
struct Record {
    key: String,
    value: String,
}

/// Fixed per experiment and persisted with the dataset.
#[derive(Clone, Debug, Default)]
pub struct KnowledgeBase {
    entries: Vec<(String, String)>,
    index: HashMap<String, usize>,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a fact; later inserts under the same key win on lookup.
    pub fn insert(&mut self, key: &str, value: &str) {
        if let Some(&i) = self.index.get(key) {
            self.entries[i].1 = value.to_string();
        } else {
            self.index.insert(key.to_string(), self.entries.len());
            self.entries.push((key.to_string(), value.to_string()));
        }
    }

    pub fn lookup(&self, key: &str) -> Option<&str> {
        self.index.get(key).map(|&i| self.entries[i].1.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// JSON Lines, one `{"key": ..., "value": ...}` per line, in insertion
    /// order.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut f = fs::File::create(path)?;
        for (key, value) in &self.entries {
            let line = serde_json::to_string(&Record { key: key.clone(), value: value.clone() })
                .expect("kb record serializes");
            writeln!(f, "{line}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let f = fs::File::open(path)?;
        let mut kb = KnowledgeBase::new();
        for line in BufReader::new(f).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            kb.insert(&rec.key, &rec.value);
        }
        Ok(kb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hit_returns_the_stored_value_byte_exact() {
        let mut kb = KnowledgeBase::new();
        kb.insert("capital of freland", "Varnis");
        assert_eq!(kb.lookup("capital of freland"), Some("Varnis"));
    }

    #[test]
    fn miss_returns_none() {
        let kb = KnowledgeBase::new();
        assert_eq!(kb.lookup("anything"), None);
    }

    #[test]
    fn roundtrips_through_jsonl() {
        let mut kb = KnowledgeBase::new();
        kb.insert("a", "1");
        kb.insert("b", "two words");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.jsonl");
        kb.save(&path).unwrap();
        let loaded = KnowledgeBase::load(&path).unwrap();
        assert_eq!(loaded.lookup("a"), Some("1"));
        assert_eq!(loaded.lookup("b"), Some("two words"));
        assert_eq!(loaded.len(), 2);
    }
}
