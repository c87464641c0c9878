use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kdfl_core::oracle::AccuracyTable;
use kdfl_core::runner::commands::{cmd_allocate, cmd_dump_oracle, cmd_experiment, cmd_kd_demo, cmd_solve, cmd_train_q};
use kdfl_core::runner::Scheme;

#[derive(Parser)]
#[command(name = "kdfl", version, about = "Offloading, model selection and resource allocation for KD-assisted federated learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal CPU and bandwidth split for the [decision] of a scenario file.
    Allocate {
        #[command(flatten)]
        common: Common,
    },
    /// Train the agent on a fixed scenario; with --method other than
    /// `proposed`, run that scheme instead.
    TrainQ {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, value_name = "NAME", default_value = "proposed")]
        method: Scheme,
    },
    /// Seeded multi-trial comparison of the schemes.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Run only this scheme.
        #[arg(long, value_name = "NAME")]
        method: Option<Scheme>,
    },
    /// Toy distillation comparison on synthetic blobs.
    KdDemo {
        #[command(flatten)]
        common: Common,
        /// First seed; runs use consecutive seeds.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the built-in accuracy table as CSV.
    DumpOracle {
        #[command(flatten)]
        common: Common,
    },
}

fn need_config(c: &Common) -> kdfl_core::Result<&Path> {
    c.config
        .as_deref()
        .ok_or_else(|| kdfl_core::Error::config("--config", "this subcommand needs --config PATH"))
}

fn out_dir(c: &Common) -> PathBuf {
    c.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn run(cli: Cli) -> kdfl_core::Result<Vec<PathBuf>> {
    let table = AccuracyTable::builtin();
    match cli.command {
        Command::Allocate { common } => cmd_allocate(need_config(&common)?, &out_dir(&common), &table),
        Command::TrainQ { common, seed, episodes, method } => {
            let config = need_config(&common)?;
            if method == Scheme::Proposed {
                cmd_train_q(config, &out_dir(&common), seed, episodes, &table)
            } else {
                if episodes.is_some() {
                    log::warn!("--episodes only applies to the proposed scheme here; set [q] episodes in the config");
                }
                cmd_solve(config, &out_dir(&common), seed, method, &table)
            }
        }
        Command::Experiment { common, seed, episodes, method } => {
            let (report, files) = cmd_experiment(common.config.as_deref(), common.out.as_deref(), seed, method, episodes, &table)?;
            for m in report.summary().methods {
                println!(
                    "{:<10} trials {:>4}  objective {:>10.5}  delay {:>8.3} s  acc_own {:.4}  acc_avg {:.4}",
                    m.method, m.trials, m.objective_mean, m.avg_delay_s_mean, m.acc_own_mean, m.acc_avg_mean
                );
            }
            Ok(files)
        }
        Command::KdDemo { common, seed } => {
            let (s, files) = cmd_kd_demo(common.config.as_deref(), &out_dir(&common), seed)?;
            println!(
                "{} runs  teacher {:.3}  hard-only {:.3} (own {:.3})  kd {:.3} (own {:.3})  simkd {:.3} (own {:.3})",
                s.runs, s.teacher_full, s.hard_full, s.hard_own, s.kd_full, s.kd_own, s.simkd_full, s.simkd_own
            );
            Ok(files)
        }
        Command::DumpOracle { common } => cmd_dump_oracle(&out_dir(&common), &table),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
