use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use curvectrl::cli::{run_optimize, run_solve, run_study, run_verify, Config, Fault, SolveOptions};

#[derive(Parser)]
#[command(name = "curvectrl", version, about = "Heat equation with a point source moving along a curve")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Forward solve on the coarsest level; writes trajectory.csv.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also solve the adjoint for the configured target.
        #[arg(long)]
        adjoint: bool,
        /// Write every frame to trajectory.txt.
        #[arg(long)]
        dump: bool,
    },
    /// Optimal control on the coarsest level; writes control.csv and diagnostics.txt.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convergence study over all levels; writes study.csv.
    Study {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs the diagnostic battery; exits non-zero if any check fails.
    Verify {
        #[arg(long, hide = true, value_enum)]
        inject_fault: Option<FaultArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    StiffnessSign,
}

fn load(config: &Path, out: Option<PathBuf>) -> Result<(Config, PathBuf)> {
    let cfg = Config::from_file(config).with_context(|| format!("reading config {}", config.display()))?;
    let out = out
        .or_else(|| cfg.output_dir.clone())
        .context("no output directory: pass --out or set [output] dir")?;
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Solve {
            config,
            out,
            adjoint,
            dump,
        } => {
            let (cfg, out) = load(&config, out)?;
            run_solve(&cfg, &out, SolveOptions { adjoint, dump }).context("solve failed")?;
            println!("wrote {}", out.join("trajectory.csv").display());
        }
        Command::Optimize { config, out } => {
            let (cfg, out) = load(&config, out)?;
            let o = run_optimize(&cfg, &out)
                .with_context(|| format!("optimization failed; see {}", out.join("diagnostics.txt").display()))?;
            println!(
                "converged in {} outer iterations, residual {:.3e}, objective {:.12e}",
                o.report.outer_iterations,
                o.report.residual(),
                o.objective
            );
        }
        Command::Study { config, out } => {
            let (cfg, out) = load(&config, out)?;
            let rows = run_study(&cfg, &out).context("study failed")?;
            println!("level  h           err_control  err_l2l1     eoc_control  eoc_state");
            let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4e}"));
            for r in &rows {
                println!(
                    "{:<6} {:<11.4e} {:<12} {:<12} {:<12} {}",
                    r.level,
                    r.h,
                    cell(r.err_control),
                    cell(r.err_state_l2l1),
                    cell(r.eoc_control),
                    cell(r.eoc_state)
                );
            }
            println!("wrote {}", out.join("study.csv").display());
        }
        Command::Verify { inject_fault } => {
            let fault = inject_fault.map(|FaultArg::StiffnessSign| Fault::StiffnessSign);
            let report = run_verify(fault)?;
            println!("{report}");
            if !report.all_pass() {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
