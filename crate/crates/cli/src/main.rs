use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod output;

/// Locational marginal burden analysis on DC optimal power flow cases.
///
/// Exit codes: 0 success, 1 other failure, 2 infeasible dispatch, 3 unreadable
/// or malformed input, 4 singular KKT Jacobian (diagnostics still written),
/// 5 `check` tolerance exceeded, 64 bad command line.
#[derive(Debug, Parser)]
#[command(name = "lmb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the dispatch and write dispatch, flow, dual and LMP tables.
    Solve(SolveArgs),
    /// Compute static burden and the LMB matrix.
    Lmb(LmbArgs),
    /// Compare analytic sensitivities against finite differences.
    Check(CheckArgs),
    /// Compute retail prices under pricing model 0, 1 or 2.
    Price(PriceArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CaseFormatArg {
    Matpower,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct CaseArgs {
    /// Network case file.
    #[arg(long)]
    case: PathBuf,
    /// Case format; inferred from the extension (`.m` is MATPOWER) when omitted.
    #[arg(long, value_enum)]
    case_format: Option<CaseFormatArg>,
}

#[derive(Debug, Args)]
struct SolverArgs {
    #[arg(long, default_value_t = 1e-8)]
    kkt_tol: f64,
    #[arg(long, default_value_t = 1e-7)]
    act_tol: f64,
    /// Quadratic regularization on line flows.
    #[arg(long, default_value_t = 1e-6)]
    tau: f64,
    /// Complementarity gap below which a constraint counts as degenerate.
    #[arg(long, default_value_t = lmb_core::sensitivity::DEFAULT_GAP_TOL)]
    gap_tol: f64,
}

#[derive(Debug, Args)]
struct OutArgs {
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: OutputFormat,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct LmbArgs {
    #[command(flatten)]
    case: CaseArgs,
    /// Per-bus income CSV.
    #[arg(long)]
    income: PathBuf,
    /// Retail pricing config (JSON); defaults to model 0 with no adders.
    #[arg(long)]
    pricing: Option<PathBuf>,
    /// Also emit LMB values per MW sustained over the income period.
    #[arg(long)]
    per_mw_period: bool,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[command(flatten)]
    case: CaseArgs,
    /// Per-bus income CSV; enables the burden comparison.
    #[arg(long)]
    income: Option<PathBuf>,
    /// Retail pricing config (JSON); defaults to model 0 with no adders.
    #[arg(long)]
    pricing: Option<PathBuf>,
    /// Relative finite-difference step, scaled by max(1, |θ|).
    #[arg(long, default_value_t = 1e-5)]
    fd_step: f64,
    /// Largest accepted relative deviation.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Optional output directory for the comparison table.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: OutputFormat,
}

#[derive(Debug, Args)]
struct PriceArgs {
    /// Network case; required for model 0 and for time series without LMPs.
    #[arg(long)]
    case: Option<PathBuf>,
    #[arg(long, value_enum)]
    case_format: Option<CaseFormatArg>,
    /// Retail pricing config (JSON).
    #[arg(long)]
    pricing: PathBuf,
    /// Nodal time series CSV for models 1 and 2.
    #[arg(long)]
    series: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    out: OutArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => commands::solve(a),
        Command::Lmb(a) => commands::lmb(a),
        Command::Check(a) => commands::check(a),
        Command::Price(a) => commands::price(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
