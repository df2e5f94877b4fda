//! Dataset files: JSON Lines of instances plus a manifest recording how
//! they were generated.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Instance, TaskError};

pub fn save_instances(path: &Path, instances: &[Instance]) -> Result<(), TaskError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    for inst in instances {
        let line = serde_json::to_string(inst).expect("instance serializes");
        writeln!(f, "{line}")?;
    }
    Ok(())
}

pub fn load_instances(path: &Path) -> Result<Vec<Instance>, TaskError> {
    let f = fs::File::open(path)?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: Instance = serde_json::from_str(&line)
            .map_err(|e| TaskError::Malformed(format!("line {}: {e}", lineno + 1)))?;
        out.push(inst);
    }
    Ok(out)
}

/// Generation provenance persisted next to the dataset files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub generator_version: String,
    pub seed: u64,
    /// Instances per task, split into train/test counts.
    pub counts: BTreeMap<String, SplitCounts>,
    pub kb_path: Option<String>,
    pub cipher_path: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<(), TaskError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string_pretty(self).expect("manifest serializes"))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TaskError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| TaskError::Malformed(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::gen_math;

    #[test]
    fn instances_roundtrip_through_jsonl() {
        let insts = gen_math(3, 20, 0.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("math.jsonl");
        save_instances(&path, &insts).unwrap();
        assert_eq!(load_instances(&path).unwrap(), insts);
    }

    #[test]
    fn null_tool_fields_serialize_as_null() {
        let mut inst = gen_math(4, 1, 0.0).pop().unwrap();
        inst.tool_name = None;
        inst.tool_input = None;
        let line = serde_json::to_string(&inst).unwrap();
        assert!(line.contains("\"tool_name\":null"));
        let back: Instance = serde_json::from_str(&line).unwrap();
        assert_eq!(back, inst);
    }

    #[test]
    fn manifest_roundtrips() {
        let mut counts = BTreeMap::new();
        counts.insert("math".to_string(), SplitCounts { train: 10, test: 2 });
        let m = DatasetManifest {
            generator_version: "1".to_string(),
            seed: 7,
            counts,
            kb_path: Some("kb.jsonl".to_string()),
            cipher_path: Some("cipher.json".to_string()),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        m.save(&path).unwrap();
        assert_eq!(DatasetManifest::load(&path).unwrap(), m);
    }
}
