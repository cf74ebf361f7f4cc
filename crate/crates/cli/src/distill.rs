use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use blockattn::distill::{evaluate, train_language_model, DistillConfig, DistillSample, Distiller, LmTrainConfig};
use blockattn::model::{checkpoint, ToyModel};
use blockattn::synthetic::{ParagraphTask, RecallTask};
use clap::{Args, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::run::{finish, Classify, CmdResult, Run, METRICS_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Key-value facts spread over context blocks, queried in the last block.
    Recall,
    /// Numbered paragraphs with topic headers; queries ask a topic's number.
    Paragraph,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[arg(long, value_enum, default_value = "recall")]
    task: Task,
    #[arg(long, default_value_t = 512)]
    train_samples: usize,
    #[arg(long, default_value_t = 64)]
    eval_samples: usize,
    /// Teacher checkpoint; without it a teacher is pretrained first.
    #[arg(long)]
    teacher: Option<PathBuf>,
    /// Pretraining steps for a fresh teacher.
    #[arg(long, default_value_t = 300)]
    teacher_steps: usize,
}

struct Setup {
    train: Vec<DistillSample>,
    held: Vec<DistillSample>,
    fresh: ToyModel,
}

fn setup(args: &DistillArgs, seed: u64) -> CmdResult<Setup> {
    let (train, held, config) = match args.task {
        Task::Recall => {
            let t = RecallTask::default();
            (t.corpus(args.train_samples, seed, "train"), t.corpus(args.eval_samples, seed, "held"), t.model_config(2, 2, 16, seed))
        }
        Task::Paragraph => {
            let t = ParagraphTask::default();
            (t.corpus(args.train_samples, seed, "train"), t.corpus(args.eval_samples, seed, "held"), t.model_config(2, 2, 16, seed))
        }
    };
    let fresh = ToyModel::new(config).usage("bad model config")?;
    Ok(Setup { train, held, fresh })
}

pub fn distill(run: &Run, args: &DistillArgs) -> CmdResult<()> {
    let mut cfg = match run.read_config()? {
        Some(text) => DistillConfig::from_toml(&text).usage("bad distillation config")?,
        None => DistillConfig::default(),
    };
    cfg.seed = run.seed_or(cfg.seed);
    let out = run.require_out("distill")?;
    let Setup { train, held, fresh } = setup(args, cfg.seed)?;

    let mut manifest = run.manifest("distill", cfg.seed).format("checkpoint", checkpoint::VERSION);
    let teacher_cfg = LmTrainConfig {
        steps: args.teacher_steps,
        seed: cfg.seed,
        sinks_per_block: cfg.sinks_per_block,
        ..LmTrainConfig::default()
    };
    let teacher = match &args.teacher {
        Some(path) => checkpoint::load(path).usage(&format!("cannot load teacher {}", path.display()))?,
        None => {
            let mut t = fresh;
            let losses = train_language_model(&mut t, &train, &teacher_cfg).data("teacher pretraining failed")?;
            log::info!("teacher pretrained for {} steps, final loss {:.4}", losses.len(), losses.last().copied().unwrap_or(f64::NAN));
            t
        }
    };
    checkpoint::save(&teacher, out.join("teacher.bkvm")).usage("cannot write teacher")?;

    let before = evaluate(&teacher, &teacher, &held, cfg.sinks_per_block).data("evaluation failed")?;
    let metrics_path = out.join("metrics.jsonl");
    let mut metrics = BufWriter::new(File::create(&metrics_path).usage("cannot create metrics file")?);
    let mut distiller = Distiller::new(&teacher, teacher.clone(), cfg.clone()).data("cannot start distillation")?;
    for _ in 0..cfg.steps {
        let m = distiller.train_step(&train).data("training step failed")?;
        log::info!("step {} loss {:.4} kl {:.4} corrupted blocks {:?}", m.step, m.total, m.kl, m.corrupted);
        let line = serde_json::to_string(&m).expect("metrics serialize");
        writeln!(metrics, "{line}").usage("cannot write metrics")?;
    }
    metrics.flush().usage("cannot write metrics")?;
    let student = distiller.into_student();
    checkpoint::save(&student, out.join("student.bkvm")).usage("cannot write student")?;
    let after = evaluate(&teacher, &student, &held, cfg.sinks_per_block).data("evaluation failed")?;

    let result = json!({
        "steps": cfg.steps,
        "eval_before": before,
        "eval_after": after,
        "teacher": out.join("teacher.bkvm"),
        "student": out.join("student.bkvm"),
        "metrics": metrics_path,
    });
    manifest = manifest.format("metrics", METRICS_VERSION).resolved(json!({
        "distill": cfg,
        "task": args.task,
        "train_samples": args.train_samples,
        "eval_samples": args.eval_samples,
        "teacher": args.teacher,
        "teacher_pretraining": args.teacher.is_none().then_some(&teacher_cfg),
    }));
    finish(run, manifest, result)
}
