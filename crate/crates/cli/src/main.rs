//! `dpa`: train partition-aggregation ensembles and certify them against
//! training-set poisoning.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dpa_core::verification::AttackKind;

#[derive(Parser)]
#[command(name = "dpa", version, about = "Certified poisoning defenses by partition aggregation")]
struct Cli {
    /// Worker threads. Results never depend on it, so it is not part of any cache key.
    #[arg(long, global = true, env = "DPA_JOBS")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the configured datasets and write canonical containers.
    Ingest {
        #[arg(long)]
        config: PathBuf,
    },
    /// Partition the training set and train (or reuse) every base model.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Certify every test sample: certificates, curve and summary.
    Certify {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the certified-accuracy curve from stored certificates.
    Curve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        rho_max: Option<u32>,
    },
    /// Attack one test sample exhaustively: exit 0 sound, 2 counterexample, 3 refused.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = parse_threat)]
        threat: AttackKind,
        /// Defaults to the sample's certified radius.
        #[arg(long)]
        rho: Option<u32>,
        /// Index into the test set, in file order.
        #[arg(long)]
        sample: usize,
        /// Overrides `enumeration_cap` from the config.
        #[arg(long)]
        cap: Option<u64>,
    },
    /// Compare random label ablation with the partition bound.
    RaCompare {
        #[arg(long)]
        m: u64,
        #[arg(long)]
        s: u64,
        #[arg(long)]
        r: u64,
    },
    /// Two-class 2-means consensus with one global certificate.
    #[command(name = "binary2means")]
    Binary2Means {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        class_a: u32,
        #[arg(long)]
        class_b: u32,
        #[arg(long, default_value_t = dpa_core::binary_cluster::DEFAULT_MAX_ITERS)]
        max_iters: usize,
    },
}

fn parse_threat(s: &str) -> Result<AttackKind, String> {
    s.parse().map_err(|e: dpa_core::Error| e.to_string())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    let cfg = |path: &PathBuf| commands::load_config(path);
    match cli.command {
        Command::Ingest { config } => commands::ingest(&cfg(&config)?)?,
        Command::Train { config } => commands::train(&cfg(&config)?)?,
        Command::Certify { config } => commands::certify(&cfg(&config)?)?,
        Command::Curve { config, rho_max } => commands::curve(&cfg(&config)?, rho_max)?,
        Command::Verify {
            config,
            threat,
            rho,
            sample,
            cap,
        } => return commands::verify_cmd(&cfg(&config)?, threat, rho, sample, cap),
        Command::RaCompare { m, s, r } => commands::ra_compare_cmd(m, s, r)?,
        Command::Binary2Means {
            config,
            class_a,
            class_b,
            max_iters,
        } => commands::binary2means(&cfg(&config)?, class_a, class_b, max_iters)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
