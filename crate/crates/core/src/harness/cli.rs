//! Argument parsing and subcommand dispatch for the `monet` binary.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::rl::Algo;

use super::config::{RunConfig, Split};
use super::gradcheck::{run_gradcheck, GradCheckConfig};
use super::manifest::write_manifest;
use super::pipeline::{self, RunDir};
use super::HarnessError;

#[derive(Debug, Parser)]
#[command(name = "monet", about = "Latent visual reasoning on a toy multimodal transformer")]
struct Cli {
    /// Run directory holding data, checkpoints, logs and reports.
    #[arg(long, global = true, default_value = "runs/default")]
    run_dir: PathBuf,
    /// Flat key=value configuration file (a manifest also works).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override one configuration key, e.g. --set stage1.epochs=1.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AlgoArg {
    Grpo,
    Vlpo,
}

impl From<AlgoArg> for Algo {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Grpo => Algo::Grpo,
            AlgoArg::Vlpo => Algo::Vlpo,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Curate the train, RL-prompt and eval splits.
    GenData,
    /// Run one supervised stage.
    TrainSft {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        stage: u8,
    },
    /// Policy optimization from the SFT checkpoint.
    TrainRl {
        #[arg(long, value_enum)]
        algo: AlgoArg,
    },
    /// Greedy exact-match accuracy at a fixed latent count.
    Eval {
        #[arg(long)]
        k_test: usize,
        #[arg(long, default_value = "sft")]
        checkpoint: String,
    },
    /// Accuracy over a list of latent counts, with CSV and SVG output.
    Sweep {
        /// Comma-separated latent counts; defaults to eval.k_list.
        #[arg(long, value_delimiter = ',')]
        k_list: Option<Vec<usize>>,
        #[arg(long, default_value = "sft")]
        checkpoint: String,
        /// Checkpoint whose K=0 accuracy is drawn as a dashed line.
        #[arg(long)]
        baseline: Option<String>,
    },
    /// Finite-difference check of every objective on a tiny model.
    Gradcheck {
        #[arg(long, default_value_t = 64)]
        coords: usize,
    },
}

fn build_config(cli: &Cli) -> Result<RunConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("--set expects KEY=VALUE, got {o:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    Ok(cfg)
}

fn run(cli: Cli, argv: &[String]) -> Result<(), HarnessError> {
    let mut cfg = build_config(&cli)?;
    let dir = RunDir::new(&cli.run_dir);
    let data = |s: Split| dir.data(s);
    let ckpt = |n: &str| dir.checkpoint(n).map(|p| p.with_extension("bin"));
    match cli.command {
        Command::GenData => {
            for (split, r) in pipeline::gen_data(&cfg, &dir)? {
                println!(
                    "{}: {} candidates, {} dropped by weak judge, {} by strong judge, {} kept ({} lookup, {} count)",
                    split.name(),
                    r.candidates,
                    r.dropped_stage1,
                    r.dropped_stage2,
                    r.kept,
                    r.kept_lookup,
                    r.kept_count
                );
            }
            write_manifest(dir.root(), "gen-data", argv, &cfg, &[])?;
        }
        Command::TrainSft { stage } => {
            let log = pipeline::train_sft(&cfg, &dir, stage)?;
            if let Some(r) = log.last() {
                println!("stage {stage}: {} steps, loss {:.4} (ntp {:.4}, align {:.4})", r.step, r.loss, r.ntp, r.align);
            }
            if let Some((_, acc)) = log.diagnostics().last() {
                println!(
                    "observation accuracy: {:.3} with aux, {:.3} without",
                    acc.with_aux, acc.without_aux
                );
            }
            let mut inputs = vec![data(Split::Train)?];
            if stage > 1 {
                inputs.push(ckpt("warm-up")?);
            }
            if stage == 3 {
                inputs.push(dir.targets()?);
            }
            let refs: Vec<_> = inputs.iter().map(|p| p.as_path()).collect();
            write_manifest(dir.root(), &format!("train-sft-{stage}"), argv, &cfg, &refs)?;
        }
        Command::TrainRl { algo } => {
            let algo = Algo::from(algo);
            let out = pipeline::train_rl(&cfg, &dir, algo)?;
            let rewards = out.batch_rewards();
            println!(
                "{algo}: {} updates, first batch reward {:.3}, last {:.3}",
                out.log.len(),
                rewards.first().copied().unwrap_or(0.0),
                rewards.last().copied().unwrap_or(0.0)
            );
            let inputs = [data(Split::Rl)?, ckpt("sft")?];
            let refs: Vec<_> = inputs.iter().map(|p| p.as_path()).collect();
            write_manifest(dir.root(), &format!("train-rl-{algo}"), argv, &cfg, &refs)?;
        }
        Command::Eval { k_test, checkpoint } => {
            let row = pipeline::eval(&cfg, &dir, &checkpoint, k_test)?;
            println!(
                "{checkpoint} k_test={k_test}: accuracy {:.3} (lookup {}, count {}) over {} samples",
                row.accuracy,
                fmt_opt(row.lookup_accuracy),
                fmt_opt(row.count_accuracy),
                row.samples
            );
            let inputs = [data(Split::Eval)?, ckpt(&checkpoint)?];
            let refs: Vec<_> = inputs.iter().map(|p| p.as_path()).collect();
            write_manifest(dir.root(), "eval", argv, &cfg, &refs)?;
        }
        Command::Sweep {
            k_list,
            checkpoint,
            baseline,
        } => {
            if let Some(ks) = k_list {
                cfg.eval.k_list = ks;
            }
            for row in pipeline::sweep(&cfg, &dir, &checkpoint, baseline.as_deref())? {
                println!("k_test={:2} accuracy {:.3}", row.k_test, row.accuracy);
            }
            let inputs = [data(Split::Eval)?, ckpt(&checkpoint)?];
            let refs: Vec<_> = inputs.iter().map(|p| p.as_path()).collect();
            write_manifest(dir.root(), "sweep", argv, &cfg, &refs)?;
        }
        Command::Gradcheck { coords } => {
            let gc = GradCheckConfig {
                coords,
                seed: cfg.seed,
                ..GradCheckConfig::default()
            };
            let reports = run_gradcheck(&gc)?;
            let mut ok = true;
            for r in &reports {
                ok &= r.report.passed();
                println!(
                    "{:13} {} coords, max rel err {:.2e}, max abs err {:.2e} {}",
                    r.objective,
                    r.report.checked,
                    r.report.max_rel,
                    r.report.max_abs,
                    if r.report.passed() { "ok" } else { "FAILED" }
                );
            }
            if !ok {
                return Err(HarnessError::GradCheckFailed);
            }
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit code: 0 on success, 2 for usage errors, 1 for failures.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli, &argv[1.min(argv.len())..]) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
