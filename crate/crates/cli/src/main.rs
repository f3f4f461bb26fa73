mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, PriorPreset, Scale};

#[derive(Parser, Debug)]
#[command(name = "surveysynth", version, about = "Bias-adjusted synthesis of repeated survey panels")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// TOML run configuration; flags take precedence over its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed (default 0).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Chain lengths and replication counts.
    #[arg(long, global = true, value_enum)]
    scale: Option<Scale>,
    /// Bias model, `KIND` for every non-anchor survey or `SURVEY=KIND`
    /// (label or 1-based index). Repeatable.
    #[arg(long, global = true, value_name = "KIND|SURVEY=KIND")]
    bias: Vec<String>,
    /// Prior preset for fitted models.
    #[arg(long, global = true, value_enum)]
    priors: Option<PriorPreset>,
    /// Exact non-central hypergeometric likelihood instead of the binomial approximation.
    #[arg(long, global = true)]
    exact_nchg: bool,
    /// Non-decreasing latent walk.
    #[arg(long, global = true)]
    monotone: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "SURVEYSYNTH_WORKERS")]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a synthetic panel and its truth.
    Simulate(commands::SimulateArgs),
    /// Full-data inference.
    Fit(commands::FitArgs),
    /// Now-cast every time point from the data up to it.
    Nowcast(commands::FitArgs),
    /// Truth-by-fit simulation grid.
    SimStudy(commands::SimStudyArgs),
    /// Build a panel from dated records.
    Align(commands::AlignArgs),
    /// Width ratios, effective sample sizes and coverage from stored rates.
    Report(commands::ReportArgs),
}

fn exit_code(category: &str) -> u8 {
    match category {
        "config" => 2,
        "io" => 3,
        "format" => 4,
        "data" => 5,
        "model" => 6,
        "sampler" => 7,
        _ => 1,
    }
}

fn category(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return "config";
        }
        if let Some(e) = cause.downcast_ref::<surveysynth::Error>() {
            return e.category();
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "internal"
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    if let Some(n) = g.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ConfigError(format!("worker pool: {e}")))?;
    }
    let file = match &g.config {
        Some(p) => config::RunConfig::load(p)?,
        None => config::RunConfig::default(),
    };
    let flags = config::FlagValues {
        seed: g.seed,
        scale: g.scale,
        out: g.out.as_deref(),
        bias: &g.bias,
        priors: g.priors,
        monotone: g.monotone,
        exact_nchg: g.exact_nchg,
    };
    let resolved = config::resolve(&file, &flags)?;
    match &cli.command {
        Command::Simulate(a) => commands::simulate(a, &file, &resolved),
        Command::Fit(a) => commands::fit(a, &file, &resolved),
        Command::Nowcast(a) => commands::nowcast(a, &file, &resolved),
        Command::SimStudy(a) => commands::sim_study(a, &file, &resolved),
        Command::Align(a) => commands::align(a, &file, &resolved),
        Command::Report(a) => commands::report(a, &file, &resolved),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let cat = category(&e);
            eprintln!("error[{cat}]: {e:#}");
            ExitCode::from(exit_code(cat))
        }
    }
}
