use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tsg_core::TsgModel;
use tsg_segbench::{generate_dataset, read_dataset, read_sample, write_dataset};
use tsg_tensor::Real;
use tsg_train::train::CONFIG_FILE;
use tsg_train::{
    ablate, checkpoint, dump_gates, evaluate, train, Precision, Preset, Result, RunConfig, Suite,
};

#[derive(Parser)]
#[command(name = "tsg", version, about = "Scale-gated transformer segmentation on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (PPM images, PGM labels, JSON meta).
    GenData {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Run config supplying image size, classes and noise settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model and write metrics, checkpoint and resolved config.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset directory.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Defaults to the resolved config next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Export decoder scale gates for one sample (its .json meta path).
    Gates {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train every model of a suite over several seeds.
    Ablate {
        #[arg(long)]
        suite: Suite,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
}

fn run_config(config: Option<&Path>, preset: Option<Preset>) -> Result<RunConfig> {
    let mut cfg = RunConfig::preset(preset.unwrap_or(Preset::Desk));
    if let Some(p) = config {
        let text = std::fs::read_to_string(p).map_err(|source| tsg_train::TrainError::Io {
            path: p.to_path_buf(),
            source,
        })?;
        cfg.apply_text(&text)?;
    }
    Ok(cfg)
}

fn ckpt_config(ckpt: &Path, config: Option<&Path>) -> Result<RunConfig> {
    let default = ckpt.parent().unwrap_or(Path::new(".")).join(CONFIG_FILE);
    RunConfig::load(config.unwrap_or(&default))
}

fn load_model<F: Real>(cfg: &RunConfig, ckpt: &Path) -> Result<TsgModel<F>> {
    let model = TsgModel::<F>::new(cfg.model_config()?, cfg.seed)?;
    checkpoint::load(&model.store, ckpt)?;
    Ok(model)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            seed,
            count,
            out,
            config,
        } => {
            let cfg = run_config(config.as_deref(), None)?;
            let samples = generate_dataset(seed, count, &cfg.gen_config())?;
            write_dataset(&out, &samples)?;
            println!("wrote {count} samples to {}", out.display());
        }
        Command::Train {
            config,
            preset,
            seed,
            out,
        } => {
            let mut cfg = run_config(config.as_deref(), preset)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let report = match cfg.precision {
                Precision::F32 => train::<f32>(&cfg, Some(&out))?.final_eval,
                Precision::F64 => train::<f64>(&cfg, Some(&out))?.final_eval,
            };
            println!("{}", report.to_csv());
        }
        Command::Eval {
            ckpt,
            data,
            report,
            config,
        } => {
            let cfg = ckpt_config(&ckpt, config.as_deref())?;
            let samples = read_dataset(&data)?;
            let r = match cfg.precision {
                Precision::F32 => evaluate(&load_model::<f32>(&cfg, &ckpt)?, &samples)?,
                Precision::F64 => evaluate(&load_model::<f64>(&cfg, &ckpt)?, &samples)?,
            };
            r.write_csv(&report)?;
            print!("{}", r.to_csv());
        }
        Command::Gates {
            ckpt,
            sample,
            out,
            config,
        } => {
            let cfg = ckpt_config(&ckpt, config.as_deref())?;
            let s = read_sample(&sample)?;
            let files = match cfg.precision {
                Precision::F32 => dump_gates(&load_model::<f32>(&cfg, &ckpt)?, &s, &out)?,
                Precision::F64 => dump_gates(&load_model::<f64>(&cfg, &ckpt)?, &s, &out)?,
            };
            println!("wrote {} files to {}", files.len(), out.display());
        }
        Command::Ablate {
            suite,
            out,
            config,
            seeds,
        } => {
            let cfg = run_config(config.as_deref(), None)?;
            let seeds: Vec<u64> = (0..seeds).collect();
            let rows = ablate(suite, &cfg, &seeds, &out, |r| {
                println!(
                    "{} seed {}: mIoU {}",
                    r.model,
                    r.seed,
                    tsg_train::eval::fmt_opt(r.miou)
                );
            })?;
            print!("{}", tsg_train::ablate::summary(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
