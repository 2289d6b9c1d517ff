mod commands;
mod config;
mod error;
mod io;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hessix::eval::{InjectionSpec, SyntheticSpec};
use hessix::interactions::ReportMeta;
use hessix::Exec;

use crate::commands::Ctx;
use crate::config::{Clusters, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{read_text, Output};

/// Detect global pairwise feature interactions with uncertainty estimates.
#[derive(Parser, Debug)]
#[command(name = "hessix", version, about)]
struct Cli {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "hessix-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Input CSV (header row, numeric values).
    #[arg(long)]
    data: PathBuf,
    /// Target column name (default: last column).
    #[arg(long)]
    target: Option<String>,
}

#[derive(Args, Debug, Default)]
struct DetectArgs {
    /// 0 for input features, l > 0 for the activations entering layer l.
    #[arg(long)]
    layer: Option<usize>,
    /// Number of clusters M, or "auto".
    #[arg(long)]
    clusters: Option<Clusters>,
    /// Posterior mask samples K.
    #[arg(long)]
    mc_samples: Option<usize>,
    /// Evaluate on at most this many rows.
    #[arg(long)]
    max_rows: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic train/val/test splits and the true pairs.
    Simulate {
        /// Simulator spec JSON (overrides the config's "simulate" section).
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Train the hybrid model and write a checkpoint and training curve.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Bayesian group-expected-Hessian report for a trained model.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        detect: DetectArgs,
        /// Report effects in raw feature/target units.
        #[arg(long)]
        raw_units: bool,
        /// Also write per-point Hessians at the mean mask.
        #[arg(long)]
        hessian_dump: bool,
    },
    /// Scan the number of clusters and apply the tau rule.
    SelectM {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        detect: DetectArgs,
        #[arg(long)]
        min_m: Option<usize>,
        #[arg(long)]
        max_m: Option<usize>,
    },
    /// Permutation null: false-positive rates and permutation p-values.
    Permute {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        detect: DetectArgs,
        /// Number of target permutations.
        #[arg(long)]
        permutations: Option<usize>,
        /// Report whose interactions receive permutation p-values.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Add a synthetic interaction to a dataset's target.
    Inject {
        #[command(flatten)]
        data: DataArgs,
        /// Injection spec JSON (overrides the config's "inject" section).
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn apply_detect(config: &mut RunConfig, a: &DetectArgs) {
    let d = &mut config.detect;
    if let Some(l) = a.layer {
        d.layer = l;
    }
    if let Some(c) = a.clusters {
        d.clusters = c;
    }
    if let Some(k) = a.mc_samples {
        d.mc_samples = k;
    }
    if let Some(n) = a.max_rows {
        d.max_rows = Some(n);
    }
}

fn apply_data(config: &mut RunConfig, a: &DataArgs) {
    if a.target.is_some() {
        config.data.target = a.target.clone();
    }
}

/// Merge command flags into the file config.
fn resolve(cli: &Cli) -> CliResult<RunConfig> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Simulate { spec } => {
            if let Some(p) = spec {
                config.simulate = load_json::<SyntheticSpec>(p)?;
            }
        }
        Command::Train { data, .. } => apply_data(&mut config, data),
        Command::Detect {
            data,
            detect,
            raw_units,
            hessian_dump,
            ..
        } => {
            apply_data(&mut config, data);
            apply_detect(&mut config, detect);
            config.detect.raw_units |= raw_units;
            config.detect.hessian_dump |= hessian_dump;
        }
        Command::SelectM {
            data,
            detect,
            min_m,
            max_m,
            ..
        } => {
            apply_data(&mut config, data);
            apply_detect(&mut config, detect);
            if let Some(m) = min_m {
                config.detect.min_m = *m;
            }
            if let Some(m) = max_m {
                config.detect.max_m = *m;
            }
        }
        Command::Permute {
            data,
            detect,
            permutations,
            ..
        } => {
            apply_data(&mut config, data);
            apply_detect(&mut config, detect);
            if let Some(p) = permutations {
                config.permute.permutations = *p;
            }
        }
        Command::Inject { data, spec } => {
            apply_data(&mut config, data);
            if let Some(p) = spec {
                config.inject = Some(load_json::<InjectionSpec>(p)?);
            }
        }
    }
    config.resolve_seed(cli.seed);
    config.validate()?;
    Ok(config)
}

fn init_logging() -> CliResult<()> {
    let level = std::env::var("HESSIX_LOG").unwrap_or_else(|_| "error".into());
    let filter = match level.as_str() {
        "error" => log::LevelFilter::Error,
        "info" => log::LevelFilter::Info,
        "debug" => log::LevelFilter::Debug,
        other => {
            return Err(CliError::Usage(format!(
                "HESSIX_LOG must be one of error, info, debug; got \"{other}\""
            )))
        }
    };
    env_logger::Builder::new().filter_level(filter).format_timestamp(None).init();
    Ok(())
}

fn init_threads(threads: Option<usize>) -> CliResult<()> {
    match threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        #[cfg(feature = "parallel")]
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {n} threads: {e}"))),
        #[cfg(not(feature = "parallel"))]
        Some(_) => Ok(()),
        None => Ok(()),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads(cli.threads)?;
    let config = resolve(&cli)?;
    let meta = ReportMeta::new(config.digest(), config.seed);
    let ctx = Ctx {
        out: Output::new(&cli.out, meta)?,
        config,
        exec: Exec::default(),
    };
    match &cli.command {
        Command::Simulate { .. } => commands::simulate_cmd(&ctx),
        Command::Train { data, val, test } => commands::train_cmd(&ctx, &data.data, val.as_deref(), test.as_deref()),
        Command::Detect { model, data, .. } => commands::detect_cmd(&ctx, model, &data.data),
        Command::SelectM { model, data, .. } => commands::select_m_cmd(&ctx, model, &data.data),
        Command::Permute { data, report, .. } => commands::permute_cmd(&ctx, &data.data, report.as_deref()),
        Command::Inject { data, .. } => commands::inject_cmd(&ctx, &data.data),
    }
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    if let Err(e) = init_logging() {
        return fail(e);
    }
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(CliError::Usage(e.to_string().trim().to_string())),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}
