//! `deepflow`: generate data, train, evaluate and run Monte Carlo UQ.
//!
//! Every flag can also be set through an environment variable with the
//! `DEEPFLOW_` prefix, e.g. `DEEPFLOW_SEED=7`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use deepflow::config::RunConfig;
use deepflow::dataset::Split;
use deepflow::pipeline;
use deepflow::train::TrainMode;
use deepflow::Error;

#[derive(Parser, Debug)]
#[command(name = "deepflow", version, about = "Surrogate modeling of two-phase flow in random media")]
struct Cli {
    /// Run configuration (TOML); replaces the preset.
    #[arg(long, global = true, env = "DEEPFLOW_CONFIG")]
    config: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value = "desk", env = "DEEPFLOW_PRESET")]
    preset: Preset,

    #[arg(long, global = true, env = "DEEPFLOW_SEED")]
    seed: Option<u64>,

    /// Run directory; defaults to the configured one.
    #[arg(long, global = true, env = "DEEPFLOW_OUT")]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value = "mse-bce", env = "DEEPFLOW_MODE")]
    mode: Mode,

    #[arg(long, global = true, env = "DEEPFLOW_EPOCHS")]
    epochs: Option<usize>,

    #[arg(long, global = true, env = "DEEPFLOW_BATCH")]
    batch: Option<usize>,

    #[arg(long, global = true, env = "DEEPFLOW_THREADS")]
    threads: Option<usize>,

    /// Single worker thread. Outputs are identical either way; this only
    /// removes scheduling from the picture.
    #[arg(long, global = true, env = "DEEPFLOW_DETERMINISTIC")]
    deterministic: bool,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Mse,
    MseBce,
}

impl From<Mode> for TrainMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Mse => TrainMode::Mse,
            Mode::MseBce => TrainMode::MseBce,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample permeability fields, simulate them and write train/test shards.
    Generate,
    /// Train the surrogate on the generated training split.
    Train {
        /// Continue from a checkpoint written by an earlier `train`.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on a stored split.
    Eval {
        /// Defaults to the final checkpoint of `--mode`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Also write raw predictions.
        #[arg(long)]
        dump: bool,
    },
    /// Monte Carlo through surrogate and simulator on fresh realizations.
    Uq {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print the resolved configuration.
    Config,
}

fn resolve(cli: &Cli) -> deepflow::Result<RunConfig> {
    let mut c = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => match cli.preset {
            Preset::Desk => RunConfig::desk(),
            Preset::Paper => RunConfig::paper(),
        },
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(o) = &cli.out {
        c.io.out_dir = o.clone();
    }
    if let Some(e) = cli.epochs {
        c.training.epochs = e;
    }
    if let Some(b) = cli.batch {
        c.training.batch_size = b;
    }
    if let Some(t) = cli.threads {
        c.threads = t;
    }
    if cli.deterministic {
        c.threads = 1;
    }
    c.validate()?;
    Ok(c)
}

fn run(cli: &Cli) -> deepflow::Result<()> {
    let config = resolve(cli)?;
    let out = config.io.out_dir.clone();
    let mode = TrainMode::from(cli.mode);
    let default_ckpt = || pipeline::model_dir(&out, mode).join("final.ckpt");
    match &cli.command {
        Command::Generate => {
            let [train, test] = pipeline::generate(&config, &out)?;
            println!(
                "train: {} samples, test: {} samples, {} times, in {}",
                train.samples,
                test.samples,
                train.times_days.len(),
                out.join("data").display()
            );
        }
        Command::Train { resume } => {
            let o = pipeline::train(&config, &out, mode, resume.as_deref())?;
            if let Some(last) = o.trainer.record.epochs.last() {
                println!(
                    "{} epochs, final train rmse {:.5}; checkpoint {}",
                    o.trainer.record.epochs.len(),
                    last.train_rmse,
                    o.checkpoint.display()
                );
            }
        }
        Command::Eval {
            checkpoint,
            split,
            dump,
        } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let ckpt = checkpoint.clone().unwrap_or_else(default_ckpt);
            let report = pipeline::eval_command(&config, &out, &ckpt, split, *dump)?;
            print!("{}", report.to_csv());
        }
        Command::Uq { checkpoint } => {
            let ckpt = checkpoint.clone().unwrap_or_else(default_ckpt);
            let report = pipeline::uq_command(&config, &out, &ckpt)?;
            print!("{}", report.fields_csv());
        }
        Command::Config => print!("{}", config.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn report(e: &Error) {
    eprintln!("error: {e}");
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        eprintln!("  caused by: {s}");
        source = s.source();
    }
}
