use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use nmembranes::config::{parse_config, ProblemConfig};
use nmembranes::experiments::{
    run_asymptotic, run_oracle_compare, run_perturb, run_solve, run_stationary, run_verify, VerifyOptions,
};
use nmembranes::output::write_file;
use nmembranes::Error;

#[derive(Parser)]
#[command(name = "nmembranes", version, about = "Evolutionary N-membranes problem with the p-Laplacian")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for independent runs of a sweep.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// March the penalized system and write snapshots and a time series.
    Solve(Common),
    /// Solve the stationary problem for the limit forcing.
    Stationary(Common),
    /// Compare penalized runs with the projected solver at the final time.
    OracleCompare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        eps_list: Vec<f64>,
        /// Exponents to compare; defaults to the configured p.
        #[arg(long, value_delimiter = ',')]
        p_list: Vec<f64>,
    },
    /// Check Lewy-Stampacchia bounds, the reaction identity, T-monotonicity
    /// and the ordering defect.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Skip the rerun with halved h and dt.
        #[arg(long)]
        no_refine: bool,
    },
    /// Tabulate the continuous-dependence ratio under forcing perturbations.
    Perturb {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 2)]
        halvings: usize,
    },
    /// Track convergence to the stationary solution.
    Asymptotic {
        #[command(flatten)]
        common: Common,
        /// Time between comparisons with the stationary solution.
        #[arg(long, default_value_t = 1.0)]
        check_interval: f64,
    },
}

enum Failure {
    Config(anyhow::Error),
    Solver(anyhow::Error),
    Verification(String),
    Other(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NewtonFailure { .. } | Error::ProjectionFailure { .. } => Failure::Solver(e.into()),
            Error::Config { .. } => Failure::Config(e.into()),
            other => Failure::Other(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn load(path: &Path) -> Result<ProblemConfig, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Config)?;
    let cfg = parse_config(&text)
        .with_context(|| format!("in {}", path.display()))
        .map_err(Failure::Config)?;
    for w in &cfg.warnings {
        eprintln!("{w}");
    }
    Ok(cfg)
}

fn report(out: &Path, lines: &[(String, bool)]) -> Result<bool, Failure> {
    let mut text = String::new();
    for (line, ok) in lines {
        let tag = if *ok { "PASS" } else { "FAIL" };
        text.push_str(&format!("{tag} {line}\n"));
    }
    print!("{text}");
    write_file(out, "report.txt", &text)?;
    Ok(lines.iter().all(|(_, ok)| *ok))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Solve(c) => {
            let cfg = load(&c.config)?;
            let run = run_solve(&cfg)?;
            run.write(&c.out)?;
            let last = run.trajectory.last();
            println!(
                "reached t = {} in {} steps; max ordering defect {:e}",
                last.t,
                last.step_index,
                run.timeseries.iter().map(|r| r.ordering_defect).fold(0.0, f64::max)
            );
        }
        Command::Stationary(c) => {
            let cfg = load(&c.config)?;
            let run = run_stationary(&cfg)?;
            run.write(&c.out)?;
            println!("stationary solution after {} sweeps", run.sweeps);
        }
        Command::OracleCompare { common, eps_list, p_list } => {
            let cfg = load(&common.config)?;
            let p_list = if p_list.is_empty() { vec![cfg.p] } else { p_list };
            let table = run_oracle_compare(&cfg, &eps_list, &p_list, common.jobs)?;
            write_file(&common.out, "oracle_compare.csv", &table.to_csv())?;
            print!("{}", table.to_csv());
        }
        Command::Verify { common, no_refine } => {
            let cfg = load(&common.config)?;
            let opts = VerifyOptions {
                refine: !no_refine,
                jobs: common.jobs,
                ..VerifyOptions::default()
            };
            let r = run_verify(&cfg, &opts)?;
            if !report(&common.out, &r.lines(10.0 * cfg.tolerances.newton_tol))? {
                return Err(Failure::Verification("verification failed".into()));
            }
        }
        Command::Perturb { common, delta, halvings } => {
            let cfg = load(&common.config)?;
            let table = run_perturb(&cfg, delta, halvings, common.jobs)?;
            write_file(&common.out, "perturb.csv", &table.to_csv())?;
            print!("{}", table.to_csv());
        }
        Command::Asymptotic { common, check_interval } => {
            let cfg = load(&common.config)?;
            let r = run_asymptotic(&cfg, check_interval)?;
            r.write(&common.out)?;
            print!("{}", r.summary());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Solver(e)) => {
            eprintln!("solver failure: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Verification(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(3)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
