use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use manifold_dd_bench::commands::{self, RunFlags};
use manifold_dd_bench::{CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "manifold-dd", version, about = "Reduced Schwarz experiments with learned local solution manifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Sampler seed (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Exit with code 4 when a Schwarz iteration does not converge.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build and save the local dictionaries.
    Offline,
    /// Run the reduced Schwarz iteration.
    Online {
        /// Number of neighbors; defaults to the first configured value.
        #[arg(long)]
        k: Option<usize>,
        /// Dictionary file, for configurations with one (eps, buffer) pair.
        #[arg(long)]
        dict: Option<PathBuf>,
    },
    /// Run classical Schwarz with true local solves.
    Classical,
    /// Solve the monolithic problem on the reference mesh.
    Reference,
    /// Singular values of the centered dictionary on the analysed patch.
    BenchSvd {
        #[arg(long)]
        dict: Option<PathBuf>,
    },
    /// Projection error of the reference onto nearest-neighbor spans.
    BenchProjection {
        #[arg(long)]
        dict: Option<PathBuf>,
    },
    /// Global error of the reduced solution against k, eps and buffer.
    BenchErrorVsK {
        #[arg(long)]
        dict: Option<PathBuf>,
    },
    /// Reduced online against classical Schwarz wall time.
    BenchTiming {
        #[arg(long)]
        dict: Option<PathBuf>,
        /// Run both methods on the full thread pool instead of one thread.
        #[arg(long)]
        parallel: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli.config.ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let mut cfg = ExperimentConfig::load(&path)?;
    if let Some(out) = cli.out {
        cfg.output = out;
    }
    if let Some(seed) = cli.seed {
        cfg.sampler.seed = seed;
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let mut flags = RunFlags {
        strict: cli.strict,
        ..RunFlags::default()
    };
    match cli.command {
        Command::Offline => {
            commands::offline(&cfg)?;
        }
        Command::Online { k, dict } => {
            flags.k = k;
            flags.dict = dict;
            commands::online(&cfg, &flags)?;
        }
        Command::Classical => {
            commands::classical(&cfg, &flags)?;
        }
        Command::Reference => {
            for p in commands::reference(&cfg)? {
                println!("{}", p.display());
            }
        }
        Command::BenchSvd { dict } => {
            flags.dict = dict;
            commands::bench_svd(&cfg, &flags)?;
        }
        Command::BenchProjection { dict } => {
            flags.dict = dict;
            commands::bench_projection(&cfg, &flags)?;
        }
        Command::BenchErrorVsK { dict } => {
            flags.dict = dict;
            let rows = commands::bench_error_vs_k(&cfg, &flags)?;
            if flags.strict && rows.iter().any(|r| !r.converged) {
                return Err(CliError::NotConverged("some bench-error-vs-k runs did not converge".into()));
            }
        }
        Command::BenchTiming { dict, parallel } => {
            flags.dict = dict;
            flags.parallel = parallel;
            let rows = commands::bench_timing(&cfg, &flags)?;
            if flags.strict && rows.iter().any(|r| !r.converged) {
                return Err(CliError::NotConverged("some bench-timing runs did not converge".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
