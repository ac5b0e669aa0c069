//! End-to-end commands over a run directory:
//! `data/`, `checkpoints/`, `logs/`, `reports/`, `manifests/`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::forge::{curate, read_dataset, write_dataset, CurationReport, ToySample};
use crate::model::checkpoint::{self, CheckpointMeta, StageLabel};
use crate::model::Model;
use crate::rl::{self, Algo, RlOutcome};
use crate::sft::{self, TargetLatentStore, TrainLog};

use super::config::{RunConfig, Split};
use super::evaluate::{evaluate, MetricsRow};
use super::report::{emit_report, read_metrics, write_metrics};
use super::HarnessError;

#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn id(&self) -> String {
        self.root
            .file_name()
            .map_or_else(|| "run".into(), |n| n.to_string_lossy().into_owned())
    }

    fn sub(&self, dir: &str, file: &str) -> Result<PathBuf, HarnessError> {
        let d = self.root.join(dir);
        fs::create_dir_all(&d)?;
        Ok(d.join(file))
    }

    pub fn data(&self, split: Split) -> Result<PathBuf, HarnessError> {
        self.sub("data", &format!("{}.jsonl", split.name()))
    }

    /// Checkpoint base path (`.manifest` and `.bin` are appended).
    pub fn checkpoint(&self, name: &str) -> Result<PathBuf, HarnessError> {
        self.sub("checkpoints", name)
    }

    pub fn targets(&self) -> Result<PathBuf, HarnessError> {
        self.sub("checkpoints", "targets.lat")
    }

    pub fn log(&self, name: &str) -> Result<PathBuf, HarnessError> {
        self.sub("logs", &format!("{name}.csv"))
    }

    pub fn reports(&self) -> Result<PathBuf, HarnessError> {
        let d = self.root.join("reports");
        fs::create_dir_all(&d)?;
        Ok(d)
    }
}

/// Curates the train, RL-prompt and eval splits from disjoint seeds.
pub fn gen_data(cfg: &RunConfig, run: &RunDir) -> Result<Vec<(Split, CurationReport)>, HarnessError> {
    Split::ALL
        .iter()
        .map(|&split| {
            let (records, report) = curate(&cfg.data.split(cfg.seed, split))?;
            write_dataset(&records, &run.data(split)?)?;
            log::info!("{}: kept {} of {} candidates", split.name(), report.kept, report.candidates);
            Ok((split, report))
        })
        .collect()
}

pub fn load_split(run: &RunDir, split: Split) -> Result<Vec<ToySample>, HarnessError> {
    Ok(read_dataset(&run.data(split)?)?
        .into_iter()
        .map(|r| r.sample)
        .collect())
}

pub fn load_checkpoint(run: &RunDir, name: &str) -> Result<Model, HarnessError> {
    Ok(checkpoint::load(&run.checkpoint(name)?)?.0)
}

fn save(run: &RunDir, name: &str, model: &Model, stage: StageLabel, step: usize, seed: u64) -> Result<(), HarnessError> {
    let meta = CheckpointMeta {
        stage,
        step: step as u64,
        seed,
    };
    checkpoint::save(model, &meta, &run.checkpoint(name)?)?;
    Ok(())
}

/// Checkpoint written by each SFT stage.
pub fn stage_checkpoint(stage: u8) -> &'static str {
    match stage {
        1 => "warm-up",
        2 => "stage2",
        _ => "sft",
    }
}

pub fn rl_checkpoint(algo: Algo) -> String {
    format!("rl-{algo}")
}

/// Runs one SFT stage. Stage 1 starts from a fresh model; stages 2 and 3
/// start from the warm-up checkpoint, stage 3 also reads the stage-2 targets.
pub fn train_sft(cfg: &RunConfig, run: &RunDir, stage: u8) -> Result<TrainLog, HarnessError> {
    let train = load_split(run, Split::Train)?;
    let (log, model) = match stage {
        1 => {
            let eval = load_split(run, Split::Eval)?;
            let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
            let log = sft::run_stage1(&mut model, &train, &eval, &cfg.stage1)?;
            (log, model)
        }
        2 => {
            let teacher = load_checkpoint(run, stage_checkpoint(1))?;
            let mut model = teacher.clone();
            let out = sft::run_stage2(&mut model, &teacher, &train, &cfg.stage2, &cfg.weights)?;
            out.store.save(&run.targets()?)?;
            (out.log, model)
        }
        3 => {
            let store = TargetLatentStore::load(&run.targets()?)?;
            let mut model = load_checkpoint(run, stage_checkpoint(1))?;
            let log = sft::run_stage3(&mut model, &store, &train, &cfg.stage3, &cfg.weights)?;
            (log, model)
        }
        other => return Err(HarnessError::Config(format!("no SFT stage {other}"))),
    };
    let label = [StageLabel::WarmUp, StageLabel::Stage2, StageLabel::Sft][stage as usize - 1];
    let steps = log.last().map_or(0, |r| r.step);
    save(run, stage_checkpoint(stage), &model, label, steps, cfg.seed)?;
    log.write_csv(&run.log(&format!("stage{stage}"))?)?;
    Ok(log)
}

/// RL from the SFT checkpoint on the held-back prompt split.
pub fn train_rl(cfg: &RunConfig, run: &RunDir, algo: Algo) -> Result<RlOutcome, HarnessError> {
    let prompts = load_split(run, Split::Rl)?;
    let mut model = load_checkpoint(run, stage_checkpoint(3))?;
    let outcome = rl::train_rl(&mut model, &prompts, &cfg.rl, algo)?;
    let name = rl_checkpoint(algo);
    save(run, &name, &model, StageLabel::Rl, outcome.log.len(), cfg.seed)?;
    outcome.write_csv(&run.log(&name)?)?;
    Ok(outcome)
}

fn eval_set(cfg: &RunConfig, run: &RunDir) -> Result<Vec<ToySample>, HarnessError> {
    let mut eval = load_split(run, Split::Eval)?;
    if let Some(n) = cfg.eval.limit {
        eval.truncate(n);
    }
    Ok(eval)
}

/// Evaluates `checkpoint` at `k_test` and appends the row to `reports/metrics.csv`.
pub fn eval(cfg: &RunConfig, run: &RunDir, checkpoint: &str, k_test: usize) -> Result<MetricsRow, HarnessError> {
    let model = load_checkpoint(run, checkpoint)?;
    let row = evaluate(&model, &eval_set(cfg, run)?, k_test, &run.id(), checkpoint)?;
    let path = run.reports()?.join("metrics.csv");
    let mut rows = if path.exists() { read_metrics(&path)? } else { Vec::new() };
    rows.push(row.clone());
    write_metrics(&rows, &path)?;
    Ok(row)
}

/// Evaluates `checkpoint` over `cfg.eval.k_list`; the dashed baseline is the
/// `k_test = 0` accuracy of `baseline` when given. Writes `reports/sweep.{csv,svg}`.
pub fn sweep(cfg: &RunConfig, run: &RunDir, checkpoint: &str, baseline: Option<&str>) -> Result<Vec<MetricsRow>, HarnessError> {
    let model = load_checkpoint(run, checkpoint)?;
    let eval = eval_set(cfg, run)?;
    let rows = cfg
        .eval
        .k_list
        .iter()
        .map(|&k| evaluate(&model, &eval, k, &run.id(), checkpoint))
        .collect::<Result<Vec<_>, _>>()?;
    let base = match baseline {
        Some(name) => Some(evaluate(&load_checkpoint(run, name)?, &eval, 0, &run.id(), name)?.accuracy),
        None => None,
    };
    emit_report(&rows, &run.reports()?, "sweep", base)?;
    Ok(rows)
}
