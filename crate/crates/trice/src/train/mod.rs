//! Stage-I behavior cloning and stage-II reinforcement with execution
//! feedback, plus the shared supervised engine both stages (and the
//! fine-tuning baselines) run on.

mod candidates;
mod reward;
mod sft;
mod stage2;

pub use candidates::{generate_candidates, load_candidate_cache, save_candidate_cache, Candidate, CandidateSource};
pub use reward::reward;
pub use sft::{sft_example_answer_only, sft_example_from_tool_instance, sft_example_tool_only, train_sft_model, SftExample, SftRunConfig};
pub use stage2::{question_item, rank_loss_value, train_stage1, train_stage2, QuestionItem, Stage2Outcome};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::EvalError;
use crate::nn::NnError;
use crate::tasks::TaskError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged: loss not finite at step {step}")]
    Diverged { step: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Hyperparameters for both training stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub lr_stage1: f64,
    pub lr_stage2: f64,
    pub batch_size: usize,
    /// Weight of the ranking loss in the combined stage-II objective.
    pub alpha: f64,
    /// Candidate responses per question, the gold one included.
    pub k: usize,
    /// Steps between held-out evaluations during stage II.
    pub eval_interval: usize,
    pub seed: u64,
    pub sampler_temperatures: Vec<f64>,
    /// Regenerate candidate sets at each stage-II epoch instead of reusing
    /// the pregenerated ones.
    pub regenerate_candidates: bool,
    pub grad_clip: f64,
    pub log_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_stage1: 5,
            epochs_stage2: 2,
            lr_stage1: 1e-3,
            lr_stage2: 1e-4,
            batch_size: 16,
            alpha: 1.0,
            k: 5,
            eval_interval: 25,
            seed: 0,
            sampler_temperatures: vec![0.8, 1.0],
            regenerate_candidates: false,
            grad_clip: 1.0,
            log_interval: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.alpha > 0.0) {
            return Err(TrainError::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.k < 2 {
            return Err(TrainError::Config(format!("k must be >= 2, got {}", self.k)));
        }
        if self.epochs_stage1 < 1 {
            return Err(TrainError::Config("stage-I epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if self.sampler_temperatures.is_empty()
            || self.sampler_temperatures.iter().any(|&t| !(t > 0.0))
        {
            return Err(TrainError::Config("sampler temperatures must all be > 0".into()));
        }
        if self.eval_interval == 0 || self.log_interval == 0 {
            return Err(TrainError::Config("intervals must be >= 1".into()));
        }
        Ok(())
    }
}

/// One training-log row; evaluation columns fill only on eval steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub l_rank: f64,
    pub l_sft: f64,
    pub l_total: f64,
    pub eval_accuracy: Option<f64>,
    pub tool_usage_rate: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn save_csv(&self, path: &Path) -> Result<(), TrainError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut out = String::from("step,L_rank,L_sft,L_total,eval_accuracy,tool_usage_rate\n");
        for r in &self.rows {
            let ev = r.eval_accuracy.map(|v| v.to_string()).unwrap_or_default();
            let tu = r.tool_usage_rate.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step, r.l_rank, r.l_sft, r.l_total, ev, tu
            ));
        }
        fs::write(path, out)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn the_alpha_grid_is_accepted() {
        for alpha in [0.01, 0.1, 1.0] {
            let cfg = TrainConfig { alpha, ..TrainConfig::default() };
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn bad_configs_are_rejected() {
        for cfg in [
            TrainConfig { alpha: 0.0, ..TrainConfig::default() },
            TrainConfig { k: 1, ..TrainConfig::default() },
            TrainConfig { epochs_stage1: 0, ..TrainConfig::default() },
            TrainConfig { sampler_temperatures: vec![0.0], ..TrainConfig::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn csv_log_has_the_expected_columns() {
        let log = TrainLog {
            rows: vec![
                LogRow {
                    step: 1,
                    l_rank: 0.5,
                    l_sft: 2.0,
                    l_total: 2.5,
                    eval_accuracy: None,
                    tool_usage_rate: None,
                },
                LogRow {
                    step: 2,
                    l_rank: 0.0,
                    l_sft: 1.0,
                    l_total: 1.0,
                    eval_accuracy: Some(0.5),
                    tool_usage_rate: Some(0.25),
                },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        log.save_csv(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,L_rank,L_sft,L_total,eval_accuracy,tool_usage_rate\n"));
        assert!(text.contains("2,0,1,1,0.5,0.25"));
    }
}
