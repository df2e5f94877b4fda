//! Implementations of the subcommands: artifact paths, stage wiring, and
//! the end-to-end pipeline.

use std::fs;
use std::path::{Path, PathBuf};

use super::{CliError, Command, RunConfig};
use crate::dataprep::{build_tool_dataset, PrepOptions, ToolDataset};
use crate::eval::{
    evaluate, pretrain_base, run_experiment, split_train_val, ExperimentConfig, ExperimentData,
    GridConfig, MetricsReport,
};
use crate::nn::{load_checkpoint, save_checkpoint};
use crate::rng::{stream_rng, stream_seed};
use crate::tasks::{
    gen_cipher_qa, gen_lookup_qa, gen_math, load_instances, save_instances, DatasetManifest,
    Instance, LookupStyle, SplitCounts, TaskKind,
};
use crate::tools::{Cipher, KnowledgeBase, ToolEnv};
use crate::train::{train_stage1, train_stage2, TrainError};

pub fn echo_effective_config(cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Config(format!("cannot create output dir: {e}")))?;
    let text = serde_json::to_string_pretty(cfg).expect("config serializes");
    fs::write(cfg.out.join("effective-config.json"), text)
        .map_err(|e| CliError::Config(format!("cannot write effective config: {e}")))?;
    Ok(())
}

pub fn print_plan(command: &Command, cfg: &RunConfig) {
    println!("plan: {command:?}");
    println!("  seed:   {}", cfg.seed);
    println!("  tasks:  {}", cfg.tasks.join(","));
    println!("  sizes:  {} train / {} test per task", cfg.n_train, cfg.n_test);
    println!("  grid:   {}", cfg.grid.join(","));
    println!("  alpha:  {}  k: {}", cfg.train.alpha, cfg.train.k);
    println!(
        "  epochs: {} stage-I / {} stage-II (+{} pretrain)",
        cfg.train.epochs_stage1, cfg.train.epochs_stage2, cfg.pretrain_epochs
    );
    println!("  out:    {}", cfg.out.display());
    println!("  fingerprint: {}", cfg.fingerprint());
    println!("(dry run: no files were written)");
}

struct DataPaths {
    train: PathBuf,
    test: PathBuf,
    kb: PathBuf,
    cipher: PathBuf,
    manifest: PathBuf,
}

fn data_paths(cfg: &RunConfig) -> DataPaths {
    let d = cfg.data_dir();
    DataPaths {
        train: d.join("train.jsonl"),
        test: d.join("test.jsonl"),
        kb: d.join("kb.jsonl"),
        cipher: d.join("cipher.json"),
        manifest: d.join("manifest.json"),
    }
}

/// Generates every selected task with its own seed stream and splits into
/// train/test. The shared cipher is always emitted; the knowledge base only
/// when a lookup-style task is selected.
pub fn cmd_generate(cfg: &RunConfig) -> Result<(), CliError> {
    let paths = data_paths(cfg);
    let n_total = cfg.n_train + cfg.n_test;
    let cipher = Cipher::generate(&mut stream_rng(cfg.seed, "task-gen/cipher"));
    let mut kb = KnowledgeBase::new();
    let mut train: Vec<Instance> = Vec::new();
    let mut test: Vec<Instance> = Vec::new();
    let mut counts = std::collections::BTreeMap::new();

    for task in cfg.task_kinds() {
        let seed = stream_seed(cfg.seed, &format!("task-gen/{task}"));
        let instances = match task {
            TaskKind::Math => gen_math(seed, n_total, cfg.hard_fraction),
            TaskKind::LookupQa | TaskKind::ClozeQa => {
                let style = if task == TaskKind::LookupQa {
                    LookupStyle::WikiSearch
                } else {
                    LookupStyle::QaModel
                };
                let kb_size = n_total + 64;
                let (instances, task_kb) =
                    gen_lookup_qa(seed, n_total, kb_size, cfg.frequent_fraction, style);
                for (k, v) in task_kb.iter() {
                    kb.insert(k, v);
                }
                instances
            }
            TaskKind::CipherQa => gen_cipher_qa(seed, n_total, &cipher),
        };
        counts.insert(
            task.as_str().to_string(),
            SplitCounts { train: cfg.n_train, test: cfg.n_test },
        );
        train.extend_from_slice(&instances[..cfg.n_train]);
        test.extend_from_slice(&instances[cfg.n_train..]);
    }

    let io = |e: crate::tasks::TaskError| CliError::Config(format!("generate: {e}"));
    save_instances(&paths.train, &train).map_err(io)?;
    save_instances(&paths.test, &test).map_err(io)?;
    cipher
        .save(&paths.cipher)
        .map_err(|e| CliError::Config(format!("generate: cipher: {e}")))?;
    if !kb.is_empty() {
        kb.save(&paths.kb).map_err(|e| CliError::Config(format!("generate: kb: {e}")))?;
    }
    let manifest = DatasetManifest {
        generator_version: "1".to_string(),
        seed: cfg.seed,
        counts,
        kb_path: (!kb.is_empty()).then(|| "kb.jsonl".to_string()),
        cipher_path: Some("cipher.json".to_string()),
    };
    manifest.save(&paths.manifest).map_err(io)?;
    eprintln!(
        "[generate] {} train / {} test instances across {} tasks -> {}",
        train.len(),
        test.len(),
        cfg.tasks.len(),
        cfg.data_dir().display()
    );
    Ok(())
}

pub fn load_data(cfg: &RunConfig) -> Result<ExperimentData, CliError> {
    let paths = data_paths(cfg);
    let missing = |p: &Path| {
        CliError::Config(format!("missing {}; run `trice generate` first", p.display()))
    };
    if !paths.manifest.exists() {
        return Err(missing(&paths.manifest));
    }
    let io = |e: crate::tasks::TaskError| CliError::Config(format!("load data: {e}"));
    let train = load_instances(&paths.train).map_err(io)?;
    let test = load_instances(&paths.test).map_err(io)?;
    let kb = if paths.kb.exists() {
        KnowledgeBase::load(&paths.kb).map_err(|e| CliError::Config(format!("kb: {e}")))?
    } else {
        KnowledgeBase::new()
    };
    let cipher = if paths.cipher.exists() {
        Cipher::load(&paths.cipher).map_err(|e| CliError::Config(format!("cipher: {e}")))?
    } else {
        return Err(missing(&paths.cipher));
    };
    Ok(ExperimentData { train, test, env: ToolEnv { kb, cipher }, tasks: cfg.task_kinds() })
}

fn experiment_config(cfg: &RunConfig) -> ExperimentConfig {
    let mut exp = ExperimentConfig::desk_default(cfg.seed, &cfg.fingerprint());
    exp.train = cfg.train.clone();
    exp.pretrain_epochs = cfg.pretrain_epochs;
    exp.pretrain_lr = cfg.pretrain_lr;
    exp.val_fraction = cfg.val_fraction;
    exp.noise_fraction = cfg.noise_fraction;
    exp
}

fn base_ckpt(cfg: &RunConfig) -> PathBuf {
    cfg.checkpoint_dir().join(format!("base-seed{}.ckpt", cfg.seed))
}
fn stage1_ckpt(cfg: &RunConfig) -> PathBuf {
    cfg.checkpoint_dir().join(format!("stage1-seed{}.ckpt", cfg.seed))
}
fn stage2_ckpt(cfg: &RunConfig) -> PathBuf {
    cfg.checkpoint_dir().join(format!("stage2-seed{}.ckpt", cfg.seed))
}

/// Builds (or warms up) the base checkpoint and the tool-annotated dataset.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_data(cfg)?;
    let exp = experiment_config(cfg);
    eprintln!("[prepare] warming up the base checkpoint ({} epochs)", cfg.pretrain_epochs);
    let base = pretrain_base(cfg.seed, &data.train, &exp)
        .map_err(|e| CliError::from_experiment(e, "pretrain"))?;
    save_checkpoint(&base_ckpt(cfg), &base, "base", cfg.seed)
        .map_err(|e| CliError::Prep(format!("save base checkpoint: {e}")))?;

    let (train_insts, _val) = split_train_val(&data.train, cfg.seed, cfg.val_fraction);
    let opts =
        PrepOptions { seed: stream_seed(cfg.seed, "data-prep"), noise_fraction: cfg.noise_fraction };
    let d_tool = build_tool_dataset(&base, &train_insts, &data.env, &opts)
        .map_err(|e| CliError::Prep(e.to_string()))?;
    let prep = cfg.prep_dir();
    d_tool
        .save(&prep.join("d_tool.jsonl"), &prep.join("provenance.json"))
        .map_err(|e| CliError::Prep(e.to_string()))?;
    let n_tool = d_tool.items.iter().filter(|i| i.uses_tool()).count();
    eprintln!(
        "[prepare] {} instances: {} tool-labeled, {} no-tool, {} dropped",
        d_tool.items.len(),
        n_tool,
        d_tool.items.len() - n_tool,
        d_tool.provenance.dropped.len()
    );
    Ok(())
}

fn load_prepared(cfg: &RunConfig, data: &ExperimentData) -> Result<ToolDataset, CliError> {
    let prep = cfg.prep_dir();
    let d_path = prep.join("d_tool.jsonl");
    if !d_path.exists() {
        return Err(CliError::Config(format!(
            "missing {}; run `trice prepare` first",
            d_path.display()
        )));
    }
    ToolDataset::load(&d_path, &prep.join("provenance.json"), &data.env)
        .map_err(|e| CliError::Prep(e.to_string()))
}

fn map_train_err(stage: &str) -> impl Fn(TrainError) -> CliError + '_ {
    move |e| match e {
        TrainError::Config(m) => CliError::Config(m),
        other => CliError::Train { stage: stage.to_string(), message: other.to_string() },
    }
}

pub fn cmd_train_stage1(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_data(cfg)?;
    let d_tool = load_prepared(cfg, &data)?;
    let (mut model, header) = load_checkpoint(&base_ckpt(cfg))
        .map_err(|e| CliError::Config(format!("base checkpoint: {e}")))?;
    eprintln!("[stage-I] cloning tool behavior from {} instances", d_tool.items.len());
    let log = train_stage1(&mut model, &d_tool.items, &cfg.train).map_err(map_train_err("stage-I"))?;
    save_checkpoint(&stage1_ckpt(cfg), &model, "stage-I", header.seed)
        .map_err(|e| CliError::Train { stage: "stage-I".into(), message: e.to_string() })?;
    log.save_csv(&cfg.log_dir().join(format!("stage1-seed{}.csv", cfg.seed)))
        .map_err(map_train_err("stage-I"))?;
    eprintln!("[stage-I] checkpoint saved to {}", stage1_ckpt(cfg).display());
    Ok(())
}

pub fn cmd_train_stage2(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_data(cfg)?;
    let d_tool = load_prepared(cfg, &data)?;
    let (theta_clone, header) = load_checkpoint(&stage1_ckpt(cfg))
        .map_err(|e| CliError::Config(format!("stage-I checkpoint: {e}")))?;
    let (_train_insts, val) = split_train_val(&data.train, cfg.seed, cfg.val_fraction);
    eprintln!(
        "[stage-II] reinforcement over {} questions, {} held out for selection",
        d_tool.items.len(),
        val.len()
    );
    let outcome = train_stage2(&theta_clone, &d_tool.items, &val, &cfg.train, &data.env)
        .map_err(map_train_err("stage-II"))?;
    save_checkpoint(&stage2_ckpt(cfg), &outcome.best, "stage-II", header.seed)
        .map_err(|e| CliError::Train { stage: "stage-II".into(), message: e.to_string() })?;
    outcome
        .log
        .save_csv(&cfg.log_dir().join(format!("stage2-seed{}.csv", cfg.seed)))
        .map_err(map_train_err("stage-II"))?;
    crate::train::save_candidate_cache(
        &cfg.log_dir().join(format!("candidates-seed{}.jsonl", cfg.seed)),
        &outcome.candidates,
    )
    .map_err(map_train_err("stage-II"))?;
    eprintln!(
        "[stage-II] best checkpoint from step {} (held-out accuracy {:.3})",
        outcome.best_step, outcome.best_accuracy
    );
    Ok(())
}

pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let data = load_data(cfg)?;
    let path = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => [stage2_ckpt(cfg), stage1_ckpt(cfg), base_ckpt(cfg)]
            .into_iter()
            .find(|p| p.exists())
            .ok_or_else(|| CliError::Config("no checkpoint found; train something first".into()))?,
    };
    let (model, header) = load_checkpoint(&path)
        .map_err(|e| CliError::Config(format!("checkpoint {}: {e}", path.display())))?;
    eprintln!("[evaluate] {} ({} on {} test instances)", path.display(), header.stage_tag, data.test.len());
    let preds = evaluate(&model, &data.test, &data.env, true).map_err(|e| CliError::Eval(e.to_string()))?;
    let mut groups: std::collections::BTreeMap<TaskKind, Vec<crate::eval::FinalPrediction>> =
        Default::default();
    for p in preds {
        groups.entry(data.test[p.instance_idx].task).or_default().push(p);
    }
    let groups: Vec<_> = groups.into_iter().collect();
    let report = MetricsReport::from_predictions(
        &header.stage_tag,
        &cfg.fingerprint(),
        vec![cfg.seed],
        &groups,
    )
    .map_err(|e| CliError::Eval(e.to_string()))?;
    let out = cfg
        .report_dir()
        .join(format!("{}-evaluate-{}-seed{}.json", cfg.fingerprint(), header.stage_tag, cfg.seed));
    fs::create_dir_all(cfg.report_dir()).map_err(|e| CliError::Eval(e.to_string()))?;
    fs::write(&out, report.to_json()).map_err(|e| CliError::Eval(e.to_string()))?;
    for t in &report.per_task {
        println!(
            "{}: accuracy {:.3}, tool usage {:.3} (n={})",
            t.task, t.accuracy, t.tool_usage_rate, t.n
        );
    }
    println!("macro accuracy {:.3}", report.macro_accuracy);
    Ok(())
}

pub fn cmd_grid(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_data(cfg)?;
    let exp = experiment_config(cfg);
    let grid = GridConfig { cells: cfg.grid_cells()?, seeds: vec![cfg.seed] };
    let outcomes = run_experiment(&grid, &data, &exp, Some(&cfg.report_dir()))
        .map_err(|e| CliError::from_experiment(e, "grid"))?;
    let csv = crate::eval::comparison_csv(&outcomes, &data.tasks);
    print!("{csv}");
    Ok(())
}

pub fn cmd_report(cfg: &RunConfig) -> Result<(), CliError> {
    let path = cfg.report_dir().join(format!("{}-comparison.csv", cfg.fingerprint()));
    let text = fs::read_to_string(&path).map_err(|_| {
        CliError::Config(format!("no comparison table at {}; run `trice grid` first", path.display()))
    })?;
    print!("{text}");
    Ok(())
}

/// The end-to-end run: generate, prepare + both stages via the grid cells,
/// evaluate, and print the final comparison table.
pub fn cmd_pipeline(cfg: &RunConfig) -> Result<(), CliError> {
    eprintln!("[pipeline] stage 1/3: generate");
    cmd_generate(cfg)?;
    eprintln!("[pipeline] stage 2/3: grid ({} cells)", cfg.grid.len());
    let data = load_data(cfg)?;
    let exp = experiment_config(cfg);
    let grid = GridConfig { cells: cfg.grid_cells()?, seeds: vec![cfg.seed] };
    let outcomes = run_experiment(&grid, &data, &exp, Some(&cfg.report_dir()))
        .map_err(|e| CliError::from_experiment(e, "pipeline"))?;
    eprintln!("[pipeline] stage 3/3: report");
    let csv = crate::eval::comparison_csv(&outcomes, &data.tasks);
    print!("{csv}");
    Ok(())
}
