use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flmm_cli::commands;
use flmm_cli::config::{Params, VERSION};
use flmm_cli::error::{CliError, CliResult};
use flmm_cli::output::Report;
use serde_json::json;

#[derive(Parser)]
#[command(name = "flmm", version = VERSION, about = "Exchange options under price impact: pricing, Greeks, studies, surrogate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Run {
    /// Flat JSON config; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    params: Params,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo price with a 99% interval (one row per entry of n_list).
    Price(Run),
    /// Closed-form frictionless price and Greeks.
    Greeks(Run),
    /// Liquidity valuation adjustment over an (s1, s2) grid.
    Lva(Run),
    /// Pathwise deltas and their excess over the frictionless deltas.
    Delta(Run),
    /// Timing over step counts (and path counts with n_list).
    Bench(Run),
    /// Strong error of the frictionless scheme against exact terminal values.
    Convergence(Run),
    /// Generate a labelled dataset (resumable shards at the `data` stem).
    Dataset(Run),
    /// Train a surrogate network and save it to `model`.
    Train(Run),
    /// Evaluate a saved model on a dataset stem or labelled CSV.
    Eval(Run),
    /// Predict prices for the rows of an input CSV.
    Predict(Run),
}

fn resolve(run: Run) -> CliResult<Params> {
    let base = match &run.config {
        Some(path) => Params::from_file(path)?,
        None => Params::default(),
    };
    let params = base.merged(&run.params);
    if let Some(n) = params.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::validation("threads", e.to_string()))?;
    }
    Ok(params)
}

fn execute(cmd: Command) -> CliResult<()> {
    let (run, f): (Run, fn(&Params) -> CliResult<Report>) = match cmd {
        Command::Price(r) => (r, commands::price),
        Command::Greeks(r) => (r, commands::greeks),
        Command::Lva(r) => (r, commands::lva),
        Command::Delta(r) => (r, commands::delta),
        Command::Bench(r) => (r, commands::bench),
        Command::Convergence(r) => (r, commands::convergence),
        Command::Dataset(r) => (r, commands::dataset),
        Command::Train(r) => (r, commands::train_cmd),
        Command::Eval(r) => (r, commands::eval),
        Command::Predict(r) => (r, commands::predict),
    };
    let params = resolve(run)?;
    let report = f(&params)?;
    report.emit(&params)?;
    if report.command == "bench" {
        commands::check_bench(&report)?;
    }
    Ok(())
}

fn fail(err: &CliError) -> ExitCode {
    eprintln!("{}", err.to_json());
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::new(
                flmm_cli::error::Category::Validation,
                "usage",
                e.kind().to_string(),
                json!({ "detail": e.to_string().trim() }),
            );
            return fail(&err);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
