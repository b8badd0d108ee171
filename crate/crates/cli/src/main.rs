use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use qoctl::config::RunConfig;
use qoctl::run::{self, Artifacts};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    /// Eigenstates of a grid system: energies.tsv, dipoles.tsv.
    Eigen,
    /// Optimal control run: field, spectrum, occupations, convergence, summary.
    Optimize,
    /// Pulse-area estimate versus optimal control for a list of durations.
    Twolevel,
    /// Lie-algebra rank test.
    Controllability,
}

#[derive(Debug, Parser)]
#[command(name = "qoctl", version, about = "Quantum optimal control runs from configuration files")]
struct Cli {
    command: Command,
    #[arg(long)]
    config: PathBuf,
    /// Run directory; overrides output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent sweep points.
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides optimizer.max_iters and twolevel.max_iters.
    #[arg(long)]
    max_iters: Option<usize>,
}

fn execute(cli: &Cli) -> Result<bool> {
    let cfg = RunConfig::load(&cli.config)?;
    if let Some(n) = cli.jobs {
        set_jobs(n)?;
    }
    let dir = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let out = Artifacts::create(&dir, &cfg)?;
    match cli.command {
        Command::Eigen => run::eigen(&cfg, &out)?,
        Command::Optimize => {
            let s = run::run_optimize(&cfg, &out, cli.max_iters)?;
            println!("best J1 {}", run::num(s.best_j1));
            return Ok(s.best_j1 >= cfg.output.floor);
        }
        Command::Twolevel => {
            for r in run::twolevel(&cfg, &out, cli.max_iters)? {
                match (r.oct, r.oct_final) {
                    (Some((p, e)), Some((pf, ef))) => println!(
                        "T {:>6}  P_RWA {:.4}  P_OCT {:.4}  E0_RWA {:.4}  E0_OCT {:.4}  final P {:.4} E0 {:.4}",
                        r.t_final, r.p_rwa, p, r.e0_rwa, e, pf, ef
                    ),
                    _ => println!("T {:>6}  P_RWA {:.4}  E0_RWA {:.4}", r.t_final, r.p_rwa, r.e0_rwa),
                }
            }
        }
        Command::Controllability => println!("{}", run::controllability(&cfg, &out)?),
    }
    Ok(true)
}

#[cfg(feature = "parallel")]
fn set_jobs(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")
}

#[cfg(not(feature = "parallel"))]
fn set_jobs(n: usize) -> Result<()> {
    if n > 1 {
        log::warn!("built without the parallel feature; --jobs {n} runs sequentially");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("best J1 is below output.floor");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
