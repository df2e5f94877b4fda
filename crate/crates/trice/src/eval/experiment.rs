//! The experiment grid: zero-shot and fine-tuning baselines, the two-stage
//! runs, and the stage ablations, each evaluated into a metrics report and
//! a combined comparison table.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{evaluate, EvalError, FinalPrediction, MetricsReport};
use crate::dataprep::{build_tool_dataset, PrepError, PrepOptions, ToolDataset};
use crate::nn::{ModelConfig, ParameterSet};
use crate::rng::{stream_rng, stream_seed};
use crate::tasks::{Instance, TaskKind, Vocabulary};
use crate::tools::ToolEnv;
use crate::train::{
    save_candidate_cache, sft_example_answer_only, sft_example_tool_only, train_sft_model,
    train_stage1, train_stage2, SftExample, SftRunConfig, TrainConfig, TrainError,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown grid cell: {0}")]
    UnknownCell(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Prep(#[from] PrepError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Experiment cells. `trice-split` is shorthand for the full two-stage run
/// trained separately per task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GridCell {
    ZeroShot,
    ZeroPctTool,
    HundredPctTool,
    TriceStage1Only,
    TriceStage2Only,
    TriceAll,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrainMode {
    /// One model per task; macro metrics combine the per-task models.
    PerTask,
    /// One model over the union of all tasks' data.
    Mix,
}

impl GridCell {
    pub fn label(&self) -> &'static str {
        match self {
            GridCell::ZeroShot => "zero-shot",
            GridCell::ZeroPctTool => "0%-tool",
            GridCell::HundredPctTool => "100%-tool",
            GridCell::TriceStage1Only => "trice-stage1-only",
            GridCell::TriceStage2Only => "trice-stage2-only",
            GridCell::TriceAll => "trice-all",
        }
    }
}

/// Parses `name` or `name:mode` (mode `mix` or `per-task`). `trice-split`
/// expands to `trice-all:per-task`; `trice-mix` to `trice-all:mix`.
pub fn parse_cell(text: &str) -> Result<(GridCell, TrainMode), ExperimentError> {
    let (name, mode) = match text.split_once(':') {
        Some((n, m)) => (n, Some(m)),
        None => (text, None),
    };
    let mode = match mode {
        None => None,
        Some("mix") => Some(TrainMode::Mix),
        Some("per-task") => Some(TrainMode::PerTask),
        Some(other) => return Err(ExperimentError::UnknownCell(format!("{text} (mode {other})"))),
    };
    let (cell, default_mode) = match name {
        "zero-shot" => (GridCell::ZeroShot, TrainMode::Mix),
        "0%-tool" => (GridCell::ZeroPctTool, TrainMode::Mix),
        "100%-tool" => (GridCell::HundredPctTool, TrainMode::Mix),
        "trice-stage1-only" => (GridCell::TriceStage1Only, TrainMode::Mix),
        "trice-stage2-only" => (GridCell::TriceStage2Only, TrainMode::Mix),
        "trice-all" | "trice-mix" => (GridCell::TriceAll, TrainMode::Mix),
        "trice-split" => (GridCell::TriceAll, TrainMode::PerTask),
        other => return Err(ExperimentError::UnknownCell(other.to_string())),
    };
    Ok((cell, mode.unwrap_or(default_mode)))
}

pub fn cell_display(cell: GridCell, mode: TrainMode) -> String {
    match (cell, mode) {
        (GridCell::TriceAll, TrainMode::PerTask) => "trice-split".to_string(),
        (c, TrainMode::Mix) => c.label().to_string(),
        (c, TrainMode::PerTask) => format!("{}:per-task", c.label()),
    }
}

/// Which cells to run, over which seeds.
#[derive(Clone, Debug)]
pub struct GridConfig {
    pub cells: Vec<(GridCell, TrainMode)>,
    pub seeds: Vec<u64>,
}

/// Everything a grid run needs besides the grid itself.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub train: Vec<Instance>,
    pub test: Vec<Instance>,
    pub env: ToolEnv,
    pub tasks: Vec<TaskKind>,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Generic warmup epochs that stand in for the base model's prior
    /// competence before the tool dataset is prepared.
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    /// Fraction of the train split held out for stage-II model selection.
    pub val_fraction: f64,
    pub noise_fraction: f64,
    pub fingerprint: String,
}

impl ExperimentConfig {
    pub fn desk_default(seed: u64, fingerprint: &str) -> Self {
        ExperimentConfig {
            model: ModelConfig::desk_default(Vocabulary::standard().size()),
            train: TrainConfig { seed, ..TrainConfig::default() },
            pretrain_epochs: 2,
            pretrain_lr: 1e-3,
            val_fraction: 0.1,
            noise_fraction: 0.0,
            fingerprint: fingerprint.to_string(),
        }
    }
}

/// One evaluated grid cell. Two-stage cells also keep their intermediate
/// stage-I report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellOutcome {
    pub cell: String,
    pub seed: u64,
    pub report: MetricsReport,
    pub stage1_report: Option<MetricsReport>,
}

fn group_by_task(
    instances: &[Instance],
    preds: Vec<FinalPrediction>,
    tasks: &[TaskKind],
) -> Vec<(TaskKind, Vec<FinalPrediction>)> {
    let mut groups: BTreeMap<TaskKind, Vec<FinalPrediction>> =
        tasks.iter().map(|&t| (t, Vec::new())).collect();
    for p in preds {
        let task = instances[p.instance_idx].task;
        groups.entry(task).or_default().push(p);
    }
    groups.into_iter().filter(|(_, v)| !v.is_empty()).collect()
}

fn report_for(
    model: &ParameterSet<f32>,
    stage: &str,
    data: &ExperimentData,
    tools_enabled: bool,
    seed: u64,
    fingerprint: &str,
) -> Result<MetricsReport, ExperimentError> {
    let preds = evaluate(model, &data.test, &data.env, tools_enabled)?;
    let groups = group_by_task(&data.test, preds, &data.tasks);
    Ok(MetricsReport::from_predictions(stage, fingerprint, vec![seed], &groups)?)
}

pub fn pretrain_base(
    seed: u64,
    train: &[Instance],
    cfg: &ExperimentConfig,
) -> Result<ParameterSet<f32>, ExperimentError> {
    let mut model =
        ParameterSet::init_random(cfg.model, &mut stream_rng(seed, "init"));
    if cfg.pretrain_epochs > 0 {
        let examples: Vec<SftExample> = train
            .iter()
            .map(sft_example_answer_only)
            .collect::<Result<_, _>>()?;
        train_sft_model(
            &mut model,
            &examples,
            &SftRunConfig {
                epochs: cfg.pretrain_epochs,
                lr: cfg.pretrain_lr,
                batch_size: cfg.train.batch_size,
                grad_clip: cfg.train.grad_clip,
                log_interval: cfg.train.log_interval,
                seed,
                stream: "data-prep.pretrain".to_string(),
            },
        )?;
    }
    Ok(model)
}

/// Deterministic stage-II holdout: a seeded shuffle of the train indices.
pub fn split_train_val(train: &[Instance], seed: u64, val_fraction: f64) -> (Vec<Instance>, Vec<Instance>) {
    let mut order: Vec<usize> = (0..train.len()).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut stream_rng(seed, "val-split"));
    let n_val = ((train.len() as f64) * val_fraction).round() as usize;
    let (val_idx, train_idx) = order.split_at(n_val.min(train.len()));
    let mut val_idx = val_idx.to_vec();
    let mut train_idx = train_idx.to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    (
        train_idx.into_iter().map(|i| train[i].clone()).collect(),
        val_idx.into_iter().map(|i| train[i].clone()).collect(),
    )
}

struct TriceArtifacts {
    stage1_model: ParameterSet<f32>,
    final_model: ParameterSet<f32>,
    d_tool: ToolDataset,
}

fn run_trice(
    base: &ParameterSet<f32>,
    train: &[Instance],
    data: &ExperimentData,
    cfg: &ExperimentConfig,
    seed: u64,
    cell: GridCell,
    artifact_dir: Option<&Path>,
    tag: &str,
) -> Result<TriceArtifacts, ExperimentError> {
    let (train_insts, val_insts) = split_train_val(train, seed, cfg.val_fraction);
    let prep_opts = PrepOptions { seed: stream_seed(seed, "data-prep"), noise_fraction: cfg.noise_fraction };
    let d_tool = build_tool_dataset(base, &train_insts, &data.env, &prep_opts)?;

    let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
    let mut stage1_model = if cell == GridCell::TriceStage2Only {
        // Stage ablation: reinforcement from a fresh random initialization,
        // with the same prepared data.
        ParameterSet::init_random(cfg.model, &mut stream_rng(seed, "stage2-only-init"))
    } else {
        base.clone()
    };
    let mut stage1_log = None;
    if cell != GridCell::TriceStage2Only {
        stage1_log = Some(train_stage1(&mut stage1_model, &d_tool.items, &train_cfg)?);
    }

    let final_model = if cell == GridCell::TriceStage1Only {
        stage1_model.clone()
    } else {
        let outcome = train_stage2(&stage1_model, &d_tool.items, &val_insts, &train_cfg, &data.env)?;
        if let Some(dir) = artifact_dir {
            save_candidate_cache(&dir.join(format!("{tag}-candidates.jsonl")), &outcome.candidates)?;
            outcome.log.save_csv(&dir.join(format!("{tag}-stage2-log.csv")))?;
        }
        outcome.best
    };
    if let (Some(dir), Some(log)) = (artifact_dir, &stage1_log) {
        log.save_csv(&dir.join(format!("{tag}-stage1-log.csv")))?;
    }
    Ok(TriceArtifacts { stage1_model, final_model, d_tool })
}

/// Like [`run_cell`] but hands back the trained models for inspection.
pub fn run_cell_model(
    cell: GridCell,
    base: &ParameterSet<f32>,
    train: &[Instance],
    data: &ExperimentData,
    cfg: &ExperimentConfig,
    seed: u64,
    artifact_dir: Option<&Path>,
    tag: &str,
) -> Result<(ParameterSet<f32>, Option<ParameterSet<f32>>, Option<ToolDataset>), ExperimentError> {
    match cell {
        GridCell::ZeroShot => Ok((base.clone(), None, None)),
        GridCell::ZeroPctTool => {
            let mut model = base.clone();
            let examples: Vec<SftExample> = train
                .iter()
                .map(sft_example_answer_only)
                .collect::<Result<_, _>>()?;
            train_sft_model(
                &mut model,
                &examples,
                &SftRunConfig {
                    epochs: cfg.train.epochs_stage1,
                    lr: cfg.train.lr_stage1,
                    batch_size: cfg.train.batch_size,
                    grad_clip: cfg.train.grad_clip,
                    log_interval: cfg.train.log_interval,
                    seed,
                    stream: "sft-0pct".to_string(),
                },
            )?;
            Ok((model, None, None))
        }
        GridCell::HundredPctTool => {
            let mut model = base.clone();
            let mut examples = Vec::with_capacity(train.len());
            for inst in train {
                if let Some(ex) = sft_example_tool_only(inst, &data.env)? {
                    examples.push(ex);
                }
            }
            train_sft_model(
                &mut model,
                &examples,
                &SftRunConfig {
                    epochs: cfg.train.epochs_stage1,
                    lr: cfg.train.lr_stage1,
                    batch_size: cfg.train.batch_size,
                    grad_clip: cfg.train.grad_clip,
                    log_interval: cfg.train.log_interval,
                    seed,
                    stream: "sft-100pct".to_string(),
                },
            )?;
            Ok((model, None, None))
        }
        GridCell::TriceStage1Only | GridCell::TriceStage2Only | GridCell::TriceAll => {
            let arts = run_trice(base, train, data, cfg, seed, cell, artifact_dir, tag)?;
            let stage1 = (cell == GridCell::TriceAll).then(|| arts.stage1_model.clone());
            Ok((arts.final_model, stage1, Some(arts.d_tool)))
        }
    }
}

fn stage_tag(cell: GridCell) -> &'static str {
    match cell {
        GridCell::ZeroShot => "zero-shot",
        GridCell::ZeroPctTool => "0%-tool",
        GridCell::HundredPctTool => "100%-tool",
        GridCell::TriceStage1Only => "stage-I",
        GridCell::TriceStage2Only => "stage-II-only",
        GridCell::TriceAll => "stage-II",
    }
}

fn filter_task(data: &ExperimentData, task: TaskKind) -> ExperimentData {
    ExperimentData {
        train: data.train.iter().filter(|i| i.task == task).cloned().collect(),
        test: data.test.iter().filter(|i| i.task == task).cloned().collect(),
        env: data.env.clone(),
        tasks: vec![task],
    }
}

/// Runs one (cell, mode, seed) and returns its outcome. The same base
/// checkpoint (seeded warmup) backs every cell of a seed.
pub fn run_cell(
    cell: GridCell,
    mode: TrainMode,
    seed: u64,
    data: &ExperimentData,
    cfg: &ExperimentConfig,
    base: &ParameterSet<f32>,
    artifact_dir: Option<&Path>,
) -> Result<CellOutcome, ExperimentError> {
    let display = cell_display(cell, mode);
    let tools_enabled = cell != GridCell::ZeroPctTool;
    let (report, stage1_report) = match mode {
        TrainMode::Mix => {
            let tag = format!("{display}-seed{seed}");
            let (model, stage1, _) =
                run_cell_model(cell, base, &data.train, data, cfg, seed, artifact_dir, &tag)?;
            let report =
                report_for(&model, stage_tag(cell), data, tools_enabled, seed, &cfg.fingerprint)?;
            let stage1_report = match stage1 {
                Some(m) => {
                    Some(report_for(&m, "stage-I", data, tools_enabled, seed, &cfg.fingerprint)?)
                }
                None => None,
            };
            (report, stage1_report)
        }
        TrainMode::PerTask => {
            let mut groups = Vec::new();
            let mut stage1_groups = Vec::new();
            for &task in &data.tasks {
                let sub = filter_task(data, task);
                if sub.train.is_empty() || sub.test.is_empty() {
                    continue;
                }
                let tag = format!("{display}-{task}-seed{seed}");
                let (model, stage1, _) =
                    run_cell_model(cell, base, &sub.train, &sub, cfg, seed, artifact_dir, &tag)?;
                let preds = evaluate(&model, &sub.test, &sub.env, tools_enabled)?;
                groups.push((task, preds));
                if let Some(m) = stage1 {
                    let preds1 = evaluate(&m, &sub.test, &sub.env, tools_enabled)?;
                    stage1_groups.push((task, preds1));
                }
            }
            let report = MetricsReport::from_predictions(
                stage_tag(cell),
                &cfg.fingerprint,
                vec![seed],
                &groups,
            )?;
            let stage1_report = if stage1_groups.is_empty() {
                None
            } else {
                Some(MetricsReport::from_predictions(
                    "stage-I",
                    &cfg.fingerprint,
                    vec![seed],
                    &stage1_groups,
                )?)
            };
            (report, stage1_report)
        }
    };
    Ok(CellOutcome { cell: display, seed, report, stage1_report })
}

/// Runs the whole grid. When `out_dir` is set, each cell's report lands in
/// `<fingerprint>-<cell>-seed<seed>.json` and the combined comparison table
/// in `<fingerprint>-comparison.csv`.
pub fn run_experiment(
    grid: &GridConfig,
    data: &ExperimentData,
    cfg: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<CellOutcome>, ExperimentError> {
    let mut outcomes = Vec::new();
    for &seed in &grid.seeds {
        eprintln!("[grid] seed {seed}: building base checkpoint");
        let base = pretrain_base(seed, &data.train, cfg)?;
        for &(cell, mode) in &grid.cells {
            let display = cell_display(cell, mode);
            eprintln!("[grid] seed {seed}: running {display}");
            let outcome = run_cell(cell, mode, seed, data, cfg, &base, out_dir)?;
            eprintln!(
                "[grid] seed {seed}: {display} macro accuracy {:.3}, tool usage {:.3}",
                outcome.report.macro_accuracy, outcome.report.macro_tool_usage
            );
            if let Some(dir) = out_dir {
                fs::create_dir_all(dir)?;
                let path = dir.join(format!("{}-{}-seed{}.json", cfg.fingerprint, display, seed));
                fs::write(&path, outcome.report.to_json())?;
                if let Some(s1) = &outcome.stage1_report {
                    let path =
                        dir.join(format!("{}-{}-seed{}-stage1.json", cfg.fingerprint, display, seed));
                    fs::write(&path, s1.to_json())?;
                }
            }
            outcomes.push(outcome);
        }
    }
    if let Some(dir) = out_dir {
        let csv = comparison_csv(&outcomes, &data.tasks);
        fs::write(dir.join(format!("{}-comparison.csv", cfg.fingerprint)), csv)?;
    }
    Ok(outcomes)
}

/// One row per (cell, seed) plus mean/stddev aggregate rows per cell.
pub fn comparison_csv(outcomes: &[CellOutcome], tasks: &[TaskKind]) -> String {
    let mut header = String::from("cell,seed,macro_accuracy,macro_tool_usage");
    for t in tasks {
        header.push_str(&format!(",accuracy_{t},usage_{t}"));
    }
    header.push('\n');
    let mut out = header;
    let mut by_cell: BTreeMap<&str, Vec<&CellOutcome>> = BTreeMap::new();
    for o in outcomes {
        by_cell.entry(o.cell.as_str()).or_default().push(o);
        out.push_str(&format!(
            "{},{},{},{}",
            o.cell, o.seed, o.report.macro_accuracy, o.report.macro_tool_usage
        ));
        for t in tasks {
            match o.report.task(t.as_str()) {
                Some(m) => out.push_str(&format!(",{},{}", m.accuracy, m.tool_usage_rate)),
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    for (cell, group) in by_cell {
        let accs: Vec<f64> = group.iter().map(|o| o.report.macro_accuracy).collect();
        let usages: Vec<f64> = group.iter().map(|o| o.report.macro_tool_usage).collect();
        out.push_str(&format!("{cell},mean,{},{}", mean(&accs), mean(&usages)));
        for _ in tasks {
            out.push_str(",,");
        }
        out.push('\n');
        out.push_str(&format!("{cell},stddev,{},{}", stddev(&accs), stddev(&usages)));
        for _ in tasks {
            out.push_str(",,");
        }
        out.push('\n');
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

fn stddev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_names_parse() {
        assert_eq!(parse_cell("zero-shot").unwrap(), (GridCell::ZeroShot, TrainMode::Mix));
        assert_eq!(parse_cell("trice-split").unwrap(), (GridCell::TriceAll, TrainMode::PerTask));
        assert_eq!(parse_cell("trice-mix").unwrap(), (GridCell::TriceAll, TrainMode::Mix));
        assert_eq!(
            parse_cell("100%-tool:per-task").unwrap(),
            (GridCell::HundredPctTool, TrainMode::PerTask)
        );
        assert!(matches!(parse_cell("warp-drive"), Err(ExperimentError::UnknownCell(_))));
    }

    #[test]
    fn comparison_table_has_aggregate_rows() {
        let mk = |cell: &str, seed: u64, acc: f64| CellOutcome {
            cell: cell.to_string(),
            seed,
            report: MetricsReport {
                stage: "stage-II".into(),
                config_fingerprint: "fp".into(),
                seeds: vec![seed],
                per_task: vec![],
                macro_accuracy: acc,
                macro_tool_usage: 0.5,
            },
            stage1_report: None,
        };
        let outcomes = vec![mk("trice-all", 1, 0.6), mk("trice-all", 2, 0.8)];
        let csv = comparison_csv(&outcomes, &[]);
        assert!(csv.contains("trice-all,1,0.6"));
        assert!(csv.contains(&format!("trice-all,mean,{}", mean(&[0.6, 0.8]))));
        assert!(csv.contains(&format!("trice-all,stddev,{}", stddev(&[0.6, 0.8]))));
    }
}
