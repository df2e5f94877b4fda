//! Command-line entry point: configuration loading and merging, seed
//! management, artifact persistence, and the pipeline subcommands.

mod commands;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::eval::{parse_cell, ExperimentError, GridCell, TrainMode};
use crate::tasks::TaskKind;
use crate::train::{TrainConfig, TrainError};

/// Default output root when `--out` is absent; overridden by `TRICE_OUT`.
pub const OUT_ENV_VAR: &str = "TRICE_OUT";
const DEFAULT_OUT: &str = "trice-out";

/// Failure classes map one-to-one onto exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("data prep: {0}")]
    Prep(String),
    #[error("training ({stage}): {message}")]
    Train { stage: String, message: String },
    #[error("evaluation: {0}")]
    Eval(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Prep(_) => 3,
            CliError::Train { .. } => 4,
            CliError::Eval(_) => 5,
        }
    }

    fn from_experiment(e: ExperimentError, stage: &str) -> Self {
        match e {
            ExperimentError::UnknownCell(c) => CliError::Config(format!("unknown grid cell {c}")),
            ExperimentError::Train(TrainError::Config(m)) => CliError::Config(m),
            ExperimentError::Train(t) => {
                CliError::Train { stage: stage.to_string(), message: t.to_string() }
            }
            ExperimentError::Prep(p) => CliError::Prep(p.to_string()),
            ExperimentError::Eval(e) => CliError::Eval(e.to_string()),
            ExperimentError::Io(e) => CliError::Config(format!("io: {e}")),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "trice", version, about = "Two-stage tool learning on synthetic tasks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Config file: key=value lines, or a JSON object with the same keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Root seed; every stage derives its own stream from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Comma-separated task list (math, lookup-qa, cloze-qa, cipher-qa).
    #[arg(long, global = true)]
    pub tasks: Option<String>,

    /// Ranking-loss weight for stage II.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,

    /// Candidates per question.
    #[arg(long, global = true)]
    pub k: Option<usize>,

    #[arg(long = "epochs-stage1", global = true)]
    pub epochs_stage1: Option<usize>,

    #[arg(long = "epochs-stage2", global = true)]
    pub epochs_stage2: Option<usize>,

    /// Comma-separated grid cells (e.g. zero-shot,0%-tool,trice-all).
    #[arg(long, global = true)]
    pub grid: Option<String>,

    /// Output directory root.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Validate the configuration and print the plan without side effects.
    #[arg(long, global = true)]
    pub dry_run: bool,

    /// Training instances per task.
    #[arg(long = "n-train", global = true)]
    pub n_train: Option<usize>,

    /// Test instances per task.
    #[arg(long = "n-test", global = true)]
    pub n_test: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate datasets, knowledge base, and cipher files.
    Generate,
    /// Build the base checkpoint and the tool-annotated dataset.
    Prepare,
    /// Stage I: behavior cloning on the prepared dataset.
    TrainStage1,
    /// Stage II: reinforcement with execution feedback.
    TrainStage2,
    /// Evaluate a checkpoint on the test split.
    Evaluate {
        /// Checkpoint path; defaults to the latest stage available.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run configured grid cells and write reports plus a comparison table.
    Grid,
    /// Print the comparison table from an earlier grid run.
    Report,
    /// End-to-end: generate, prepare, both stages, evaluate, report.
    Pipeline,
}

fn default_grid() -> Vec<String> {
    ["zero-shot", "0%-tool", "100%-tool", "trice-split", "trice-all"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn default_tasks() -> Vec<String> {
    vec!["math".to_string(), "lookup-qa".to_string(), "cipher-qa".to_string()]
}

/// The effective run configuration: defaults, overlaid by the config file,
/// overlaid by flags. Echoed into the output directory on every run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub tasks: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub hard_fraction: f64,
    pub frequent_fraction: f64,
    pub train: TrainConfig,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub val_fraction: f64,
    pub noise_fraction: f64,
    pub grid: Vec<String>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            tasks: default_tasks(),
            n_train: 2000,
            n_test: 400,
            hard_fraction: 0.5,
            frequent_fraction: 0.02,
            train: TrainConfig::default(),
            pretrain_epochs: 2,
            pretrain_lr: 1e-3,
            val_fraction: 0.1,
            noise_fraction: 0.0,
            grid: default_grid(),
            out: PathBuf::from(DEFAULT_OUT),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.trim().parse().map_err(|_| CliError::Config(format!("bad value for {key}: {value:?}")))
}

impl RunConfig {
    fn apply_kv(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "tasks" => self.tasks = value.split(',').map(|s| s.trim().to_string()).collect(),
            "n_train" => self.n_train = parse_num(key, value)?,
            "n_test" => self.n_test = parse_num(key, value)?,
            "hard_fraction" => self.hard_fraction = parse_num(key, value)?,
            "frequent_fraction" => self.frequent_fraction = parse_num(key, value)?,
            "alpha" => self.train.alpha = parse_num(key, value)?,
            "k" => self.train.k = parse_num(key, value)?,
            "epochs_stage1" => self.train.epochs_stage1 = parse_num(key, value)?,
            "epochs_stage2" => self.train.epochs_stage2 = parse_num(key, value)?,
            "lr_stage1" => self.train.lr_stage1 = parse_num(key, value)?,
            "lr_stage2" => self.train.lr_stage2 = parse_num(key, value)?,
            "batch_size" => self.train.batch_size = parse_num(key, value)?,
            "eval_interval" => self.train.eval_interval = parse_num(key, value)?,
            "log_interval" => self.train.log_interval = parse_num(key, value)?,
            "grad_clip" => self.train.grad_clip = parse_num(key, value)?,
            "regenerate_candidates" => self.train.regenerate_candidates = parse_num(key, value)?,
            "sampler_temperatures" => {
                self.train.sampler_temperatures = value
                    .split(',')
                    .map(|s| parse_num::<f64>(key, s))
                    .collect::<Result<_, _>>()?
            }
            "pretrain_epochs" => self.pretrain_epochs = parse_num(key, value)?,
            "pretrain_lr" => self.pretrain_lr = parse_num(key, value)?,
            "val_fraction" => self.val_fraction = parse_num(key, value)?,
            "noise_fraction" => self.noise_fraction = parse_num(key, value)?,
            "grid" => self.grid = value.split(',').map(|s| s.trim().to_string()).collect(),
            "out" => self.out = PathBuf::from(value.trim()),
            other => return Err(CliError::Config(format!("unknown config key: {other}"))),
        }
        Ok(())
    }

    fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let trimmed = text.trim_start();
        if trimmed.starts_with('{') {
            let map: BTreeMap<String, serde_json::Value> = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("bad JSON config: {e}")))?;
            for (k, v) in map {
                let rendered = match v {
                    serde_json::Value::String(s) => s,
                    serde_json::Value::Array(items) => items
                        .into_iter()
                        .map(|i| match i {
                            serde_json::Value::String(s) => s,
                            other => other.to_string(),
                        })
                        .collect::<Vec<_>>()
                        .join(","),
                    other => other.to_string(),
                };
                self.apply_kv(&k, &rendered)?;
            }
        } else {
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    CliError::Config(format!("config line {} is not key=value: {line:?}", lineno + 1))
                })?;
                self.apply_kv(k.trim(), v)?;
            }
        }
        Ok(())
    }

    /// Defaults, then config file, then flags. The root seed also lands in
    /// the embedded train config.
    pub fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Ok(root) = std::env::var(OUT_ENV_VAR) {
            if !root.is_empty() {
                cfg.out = PathBuf::from(root);
            }
        }
        if let Some(path) = &cli.config {
            cfg.load_file(path)?;
        }
        if let Some(seed) = cli.seed {
            cfg.seed = seed;
        }
        if let Some(tasks) = &cli.tasks {
            cfg.apply_kv("tasks", tasks)?;
        }
        if let Some(alpha) = cli.alpha {
            cfg.train.alpha = alpha;
        }
        if let Some(k) = cli.k {
            cfg.train.k = k;
        }
        if let Some(e1) = cli.epochs_stage1 {
            cfg.train.epochs_stage1 = e1;
        }
        if let Some(e2) = cli.epochs_stage2 {
            cfg.train.epochs_stage2 = e2;
        }
        if let Some(grid) = &cli.grid {
            cfg.apply_kv("grid", grid)?;
        }
        if let Some(out) = &cli.out {
            cfg.out = out.clone();
        }
        if let Some(n) = cli.n_train {
            cfg.n_train = n;
        }
        if let Some(n) = cli.n_test {
            cfg.n_test = n;
        }
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.tasks.is_empty() {
            return Err(CliError::Config("task list is empty".into()));
        }
        for t in &self.tasks {
            if TaskKind::parse(t).is_none() {
                return Err(CliError::Config(format!("unknown task: {t}")));
            }
        }
        for cell in &self.grid {
            parse_cell(cell).map_err(|e| CliError::Config(e.to_string()))?;
        }
        if !(0.0..=1.0).contains(&self.hard_fraction)
            || !(0.0..=1.0).contains(&self.frequent_fraction)
            || !(0.0..=1.0).contains(&self.val_fraction)
            || !(0.0..=1.0).contains(&self.noise_fraction)
        {
            return Err(CliError::Config("fractions must lie in [0,1]".into()));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(CliError::Config("n_train and n_test must be positive".into()));
        }
        Ok(())
    }

    pub fn task_kinds(&self) -> Vec<TaskKind> {
        self.tasks.iter().filter_map(|t| TaskKind::parse(t)).collect()
    }

    pub fn grid_cells(&self) -> Result<Vec<(GridCell, TrainMode)>, CliError> {
        self.grid
            .iter()
            .map(|c| parse_cell(c).map_err(|e| CliError::Config(e.to_string())))
            .collect()
    }

    /// Stable identity of everything that shapes results. Output paths stay
    /// out of it so identical runs in different directories match.
    pub fn fingerprint(&self) -> String {
        let mut probe = self.clone();
        probe.out = PathBuf::new();
        let canonical = serde_json::to_string(&probe).expect("config serializes");
        let mut h = Sha256::new();
        h.update(canonical.as_bytes());
        let digest = h.finalize();
        hex16(&digest)
    }

    // Artifact layout under the output directory.
    pub fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }
    pub fn prep_dir(&self) -> PathBuf {
        self.out.join("prep")
    }
    pub fn checkpoint_dir(&self) -> PathBuf {
        self.out.join("checkpoints")
    }
    pub fn log_dir(&self) -> PathBuf {
        self.out.join("logs")
    }
    pub fn report_dir(&self) -> PathBuf {
        self.out.join("reports")
    }
}

fn hex16(digest: &[u8]) -> String {
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Dispatches a parsed command line; errors carry their exit codes.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&cli)?;
    if cli.dry_run {
        commands::print_plan(&cli.command, &cfg);
        return Ok(());
    }
    commands::echo_effective_config(&cfg)?;
    match &cli.command {
        Command::Generate => commands::cmd_generate(&cfg),
        Command::Prepare => commands::cmd_prepare(&cfg),
        Command::TrainStage1 => commands::cmd_train_stage1(&cfg),
        Command::TrainStage2 => commands::cmd_train_stage2(&cfg),
        Command::Evaluate { checkpoint } => commands::cmd_evaluate(&cfg, checkpoint.as_deref()),
        Command::Grid => commands::cmd_grid(&cfg),
        Command::Report => commands::cmd_report(&cfg),
        Command::Pipeline => commands::cmd_pipeline(&cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    fn cli(args: &[&str]) -> Cli {
        Cli::parse_from(std::iter::once("trice").chain(args.iter().copied()))
    }

    #[test]
    fn flags_override_defaults() {
        let c = cli(&["pipeline", "--seed", "9", "--alpha", "0.1", "--k", "7"]);
        let cfg = RunConfig::resolve(&c).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.train.alpha, 0.1);
        assert_eq!(cfg.train.k, 7);
    }

    #[test]
    fn config_file_then_flag_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "seed=5\nalpha=0.01\nn_train=100\n").unwrap();
        let c = cli(&["pipeline", "--config", path.to_str().unwrap(), "--seed", "11"]);
        let cfg = RunConfig::resolve(&c).unwrap();
        assert_eq!(cfg.seed, 11, "flag beats file");
        assert_eq!(cfg.train.alpha, 0.01, "file beats default");
        assert_eq!(cfg.n_train, 100);
    }

    #[test]
    fn json_config_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"seed": 3, "tasks": ["math"], "alpha": 1}"#).unwrap();
        let c = cli(&["generate", "--config", path.to_str().unwrap()]);
        let cfg = RunConfig::resolve(&c).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.tasks, vec!["math"]);
    }

    #[test]
    fn bad_inputs_are_config_errors() {
        let c = cli(&["pipeline", "--tasks", "chess"]);
        let err = RunConfig::resolve(&c).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let c = cli(&["pipeline", "--grid", "warp"]);
        assert_eq!(RunConfig::resolve(&c).unwrap_err().exit_code(), 2);
        let c = cli(&["pipeline", "--alpha", "0"]);
        assert_eq!(RunConfig::resolve(&c).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn fingerprint_ignores_output_path_but_tracks_seed() {
        let a = RunConfig { out: PathBuf::from("/tmp/a"), ..RunConfig::default() };
        let b = RunConfig { out: PathBuf::from("/tmp/b"), ..RunConfig::default() };
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = RunConfig { seed: 1, ..RunConfig::default() };
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn default_grid_is_the_headline_cells() {
        let cfg = RunConfig::default();
        let cells = cfg.grid_cells().unwrap();
        assert_eq!(cells.len(), 5);
        assert!(cells.contains(&(GridCell::TriceAll, TrainMode::PerTask)));
        assert!(cells.contains(&(GridCell::TriceAll, TrainMode::Mix)));
    }
}
