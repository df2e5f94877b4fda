//! Scratch harness for tuning the synthetic benchmark: runs selected grid
//! cells on a reduced dataset and prints per-task, per-difficulty metrics.

use std::time::Instant;

use trice::eval::{
    evaluate, parse_cell, pretrain_base, run_cell_model, ExperimentConfig, ExperimentData,
};
use trice::rng::{stream_rng, stream_seed};
use trice::tasks::{gen_cipher_qa, gen_lookup_qa, gen_math, Difficulty, Instance, LookupStyle, TaskKind};
use trice::tools::{Cipher, KnowledgeBase, ToolEnv};
use trice::ParameterSet;

fn build_data(seed: u64, n_train: usize, n_test: usize, tasks: &[TaskKind]) -> ExperimentData {
    let n_total = n_train + n_test;
    let cipher = Cipher::generate(&mut stream_rng(seed, "task-gen/cipher"));
    let mut kb = KnowledgeBase::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for &task in tasks {
        let s = stream_seed(seed, &format!("task-gen/{task}"));
        let insts = match task {
            TaskKind::Math => gen_math(s, n_total, 0.5),
            TaskKind::LookupQa => {
                let (i, k) = gen_lookup_qa(s, n_total, n_total + 64, 0.02, LookupStyle::WikiSearch);
                for (kk, v) in k.iter() {
                    kb.insert(kk, v);
                }
                i
            }
            TaskKind::ClozeQa => {
                let (i, k) = gen_lookup_qa(s, n_total, n_total + 64, 0.02, LookupStyle::QaModel);
                for (kk, v) in k.iter() {
                    kb.insert(kk, v);
                }
                i
            }
            TaskKind::CipherQa => gen_cipher_qa(s, n_total, &cipher),
        };
        train.extend_from_slice(&insts[..n_train]);
        test.extend_from_slice(&insts[n_train..]);
    }
    ExperimentData { train, test, env: ToolEnv { kb, cipher }, tasks: tasks.to_vec() }
}

fn detail(
    label: &str,
    model: &ParameterSet<f32>,
    data: &ExperimentData,
    tools: bool,
) {
    let preds = evaluate(model, &data.test, &data.env, tools).unwrap();
    for &task in &data.tasks {
        let mut stats = std::collections::BTreeMap::new();
        for p in &preds {
            let inst: &Instance = &data.test[p.instance_idx];
            if inst.task != task {
                continue;
            }
            let e = stats.entry(inst.difficulty).or_insert((0usize, 0usize, 0usize));
            e.0 += 1;
            e.1 += p.correct as usize;
            e.2 += p.used_tool as usize;
        }
        let fmt = |d: Difficulty| {
            stats
                .get(&d)
                .map(|(n, c, u)| {
                    format!("acc {:.2} use {:.2} (n={})", *c as f64 / *n as f64, *u as f64 / *n as f64, n)
                })
                .unwrap_or_else(|| "-".into())
        };
        eprintln!(
            "    {label:<22} {task:<10} easy[{}] hard[{}]",
            fmt(Difficulty::Easy),
            fmt(Difficulty::Hard)
        );
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut n_train = 600usize;
    let mut n_test = 200usize;
    let mut seed = 0u64;
    let mut cells: Vec<String> = vec!["trice-all".into()];
    let mut tasks = vec![TaskKind::Math];
    let mut pretrain_epochs = 2usize;
    let mut alpha = 1.0f64;
    let mut i = 0;
    while i < args.len() {
        match args[i].as_str() {
            "--n" => {
                n_train = args[i + 1].parse().unwrap();
                i += 2;
            }
            "--n-test" => {
                n_test = args[i + 1].parse().unwrap();
                i += 2;
            }
            "--seed" => {
                seed = args[i + 1].parse().unwrap();
                i += 2;
            }
            "--cells" => {
                cells = args[i + 1].split(',').map(String::from).collect();
                i += 2;
            }
            "--tasks" => {
                tasks = args[i + 1].split(',').map(|t| TaskKind::parse(t).unwrap()).collect();
                i += 2;
            }
            "--pretrain" => {
                pretrain_epochs = args[i + 1].parse().unwrap();
                i += 2;
            }
            "--alpha" => {
                alpha = args[i + 1].parse().unwrap();
                i += 2;
            }
            other => panic!("unknown arg {other}"),
        }
    }
    let data = build_data(seed, n_train, n_test, &tasks);
    let mut cfg = ExperimentConfig::desk_default(seed, "calibrate");
    cfg.pretrain_epochs = pretrain_epochs;
    cfg.train.alpha = alpha;
    eprintln!(
        "calibrate: {} train / {} test per task, tasks {:?}, seed {seed}, alpha {alpha}",
        n_train, n_test, tasks
    );

    let t0 = Instant::now();
    let base = pretrain_base(seed, &data.train, &cfg).unwrap();
    eprintln!("  base built in {:.1}s", t0.elapsed().as_secs_f64());
    detail("base (tools off)", &base, &data, false);
    detail("base (tools on)", &base, &data, true);

    for cell_name in &cells {
        let (cell, mode) = parse_cell(cell_name).unwrap();
        if mode != trice::eval::TrainMode::Mix {
            eprintln!("  (calibrate only runs mix cells; skipping {cell_name})");
            continue;
        }
        let t0 = Instant::now();
        let (model, stage1, _) =
            run_cell_model(cell, &base, &data.train, &data, &cfg, seed, None, cell_name).unwrap();
        eprintln!("  cell {cell_name}: {:.1}s", t0.elapsed().as_secs_f64());
        let tools = cell != trice::eval::GridCell::ZeroPctTool;
        if let Some(s1) = stage1 {
            detail("  stage-I", &s1, &data, tools);
        }
        detail(&format!("  {cell_name}"), &model, &data, tools);
    }
}
