use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use diaggeo::harness::run::{run_sweep, sweep_configs};
use diaggeo::harness::{compare_runs, default_levels, load_run, run_to_dir, ExperimentConfig, RunStatus};
use diaggeo::verify::{hessian_check, run_suite};

const EXIT_USAGE: u8 = 1;
const EXIT_DIVERGED: u8 = 2;
const EXIT_VERIFY_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "diaggeo", version, about = "Hessian-diagonal geometry of SGDM and Adam on deep linear networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its run directory.
    Run {
        config: PathBuf,
        /// Output directory; defaults to `output.path` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two run directories at matched loss levels.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        /// Comma-separated loss levels; defaults to d/2, d/10, d/100.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Run a config once per value of one parameter, in parallel.
    Sweep {
        config: PathBuf,
        /// `name=v1,v2,...` with name one of d, alpha, eta, sigma, steps, seed.
        #[arg(long)]
        param: String,
        /// Root directory; each run goes to `<root>/<name>=<value>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an acceptance suite (or `all`) and print a JSON report.
    Verify {
        suite: String,
        /// Also write the report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Check the closed-form Hessian at a config's initial weights against
    /// finite differences.
    HessianCheck { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn dispatch(command: Command) -> diaggeo::Result<ExitCode> {
    match command {
        Command::Run { config, out } => run(&config, out.as_deref()),
        Command::Compare {
            run_a,
            run_b,
            levels,
            json,
        } => compare(&run_a, &run_b, levels, json),
        Command::Sweep { config, param, out } => sweep(&config, &param, out),
        Command::Verify { suite, report } => verify(&suite, report.as_deref()),
        Command::HessianCheck { config } => {
            let report = hessian_check(&ExperimentConfig::load(&config)?)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(exit_if(report.pass, EXIT_VERIFY_FAILED))
        }
    }
}

fn exit_if(ok: bool, code: u8) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(code)
    }
}

fn run(config: &Path, out: Option<&Path>) -> diaggeo::Result<ExitCode> {
    let cfg = ExperimentConfig::load(config)?;
    let output = run_to_dir(&cfg, out)?;
    let summary = output.summary();
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(exit_if(!output.diverged(), EXIT_DIVERGED))
}

fn compare(a: &Path, b: &Path, levels: Option<Vec<f64>>, json: bool) -> diaggeo::Result<ExitCode> {
    let (a, b) = (load_run(a)?, load_run(b)?);
    let levels = levels.unwrap_or_else(|| default_levels(a.config.problem.d));
    let table = compare_runs(&a, &b, &levels)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&table)?);
    } else {
        print!("{table}");
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep(config: &Path, param: &str, out: Option<PathBuf>) -> diaggeo::Result<ExitCode> {
    let cfg = ExperimentConfig::load(config)?;
    let (name, values) = param
        .split_once('=')
        .ok_or_else(|| diaggeo::Error::InvalidConfig(format!("expected name=v1,v2,... but got {param:?}")))?;
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_owned()).collect();
    let root = out
        .or_else(|| cfg.output.path.clone())
        .ok_or_else(|| diaggeo::Error::InvalidConfig("no output directory given".into()))?;
    let configs = sweep_configs(&cfg, name, &values)?;
    let mut diverged = false;
    let mut failed = None;
    for (dir, res) in run_sweep(&configs, &root) {
        match res {
            Ok(summary) => {
                diverged |= matches!(summary.status, RunStatus::Diverged { .. });
                println!("{}: {}", dir.display(), serde_json::to_string(&summary)?);
            }
            Err(e) => {
                eprintln!("{}: error: {e}", dir.display());
                failed = Some(e);
            }
        }
    }
    if let Some(e) = failed {
        return Err(e);
    }
    Ok(exit_if(!diverged, EXIT_DIVERGED))
}

fn verify(suite: &str, report_path: Option<&Path>) -> diaggeo::Result<ExitCode> {
    let report = run_suite(suite)?;
    for c in &report.criteria {
        eprintln!("{}", c.line());
    }
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(path) = report_path {
        std::fs::write(path, text + "\n")?;
    }
    Ok(exit_if(report.pass, EXIT_VERIFY_FAILED))
}
