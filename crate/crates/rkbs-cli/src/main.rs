use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rkbs_cli::commands::{self, GlobalFlags};
use rkbs_cli::compare;
use rkbs_cli::config::RunConfig;
use rkbs_core::model::to_json_string;
use rkbs_core::Error;

/// Group-sparse measure networks: train, sparsify, verify, export.
#[derive(Parser)]
#[command(name = "rkbs", version, about)]
struct Cli {
    /// Override the relevant seed (generator or trainer).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Report output path (sparsify).
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    /// Trace output path (train: objective trace, sparsify: solver trace).
    #[arg(long, global = true)]
    trace: Option<PathBuf>,
    /// Machine-readable JSON output where supported.
    #[arg(long, global = true)]
    json: bool,
    /// Worker thread cap for grid scans.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration JSON.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic teacher-student dataset CSV.
    GenData {
        #[command(flatten)]
        config: ConfigArg,
        /// Output CSV path (defaults to paths.dataset from the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a measure network by proximal gradient with the TV penalty.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Dataset CSV (defaults to the config's dataset path).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Sparsify a trained model layer by layer and export a finite network.
    Sparsify {
        #[command(flatten)]
        config: ConfigArg,
        /// Model file (defaults to paths.model from the config).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Dataset CSV (defaults to the config's dataset path).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output path for the finite network (defaults to paths.finite).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute risk, norms and Lipschitz probes for a model file.
    Verify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Optional config supplying the loss and objective lambda.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Lipschitz probes per layer.
        #[arg(long, default_value_t = 64)]
        probes: usize,
    },
    /// Export a deep-measure model to the finite representation directly.
    Export {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the seeded solver-vs-oracle cross-check batches.
    OracleCompare {
        /// Instances for the regularized-objective check.
        #[arg(long, default_value_t = 200)]
        regularized: usize,
        /// Instances for the interpolation-TV check.
        #[arg(long, default_value_t = 100)]
        interpolation: usize,
    },
}

fn load_config(path: &PathBuf) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(path)?;
    cfg.resolve_paths(path);
    Ok(cfg)
}

fn run(cli: Cli) -> Result<u8, Error> {
    let flags = GlobalFlags {
        seed: cli.seed,
        report: cli.report,
        trace: cli.trace,
        json: cli.json,
    };
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = load_config(&config.config)?;
            let path = commands::cmd_gen_data(&cfg, &flags, out.as_deref())?;
            println!("{}", path.display());
            Ok(0)
        }
        Command::Train { config, data } => {
            let cfg = load_config(&config.config)?;
            let summary = commands::cmd_train(&cfg, &flags, data.as_deref())?;
            println!(
                "model: {}\ntrace: {}\nfinal objective: {:.12e}\natoms alive: {}",
                summary.model_path.display(),
                summary.trace_path.display(),
                summary.final_objective,
                summary.atoms_alive
            );
            Ok(0)
        }
        Command::Sparsify {
            config,
            model,
            data,
            out,
        } => {
            let cfg = load_config(&config.config)?;
            let summary = commands::cmd_sparsify(
                &cfg,
                &flags,
                model.as_deref(),
                data.as_deref(),
                out.as_deref(),
            )?;
            print!("{}", summary.outcome.report.to_text());
            println!("finite network: {}", summary.finite_path.display());
            println!("report: {}", summary.report_path.display());
            if summary.outcome.report.bounds_hold() {
                Ok(0)
            } else {
                Ok(2)
            }
        }
        Command::Verify {
            model,
            data,
            config,
            probes,
        } => {
            let cfg = config.as_ref().map(load_config).transpose()?;
            let output = commands::cmd_verify(&model, &data, cfg.as_ref(), probes)?;
            if flags.json {
                println!("{}", to_json_string(&output)?);
            } else {
                print!("{}", output.to_text());
            }
            Ok(if output.lipschitz_all_ok { 0 } else { 2 })
        }
        Command::Export { model, out } => {
            commands::cmd_export(&model, &out)?;
            println!("{}", out.display());
            Ok(0)
        }
        Command::OracleCompare {
            regularized,
            interpolation,
        } => {
            let seed = flags.seed.unwrap_or(2024);
            let outcome = compare::run_comparison(regularized, interpolation, seed)?;
            if flags.json {
                println!("{}", to_json_string(&outcome)?);
            } else {
                print!("{}", outcome.to_table());
            }
            Ok(if outcome.pass { 0 } else { 2 })
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Infeasible { .. } => 3,
        Error::SupportBound { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("RKBS_LOG", "warn"))
        .init();
    let cli = Cli::parse();
    if cli.threads > 1 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            log::warn!("could not size the worker pool: {e}");
        }
    } else {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global();
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
