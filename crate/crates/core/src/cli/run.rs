//! Single forward solves and single optimization runs.

use std::fmt::Write as _;
use std::path::Path;

use super::config::{Config, Method};
use super::{fmt_cell, metadata, write_output};
use crate::error::{Error, Result};
use crate::fespace::FeSpace;
use crate::heat::{eval_along_curve, HeatSolver, Trajectory};
use crate::mesh::{Mesh, Point};
use crate::ocp::{OcpProblem, SolveReport};
use crate::sparse::dot;
use crate::timeline::{discretize_curve, Control, TimePartition};

/// Mesh, time grid and discrete curve of study level `level`.
pub(crate) fn level_setup(cfg: &Config, level: usize) -> Result<(FeSpace, TimePartition, Vec<Point>)> {
    let space = FeSpace::new(Mesh::uniform_square(cfg.n_at(level))?);
    let partition = cfg.partition_at(level)?;
    let points = discretize_curve(&cfg.build_curve()?, &partition, space.mesh(), cfg.margin)?;
    Ok((space, partition, points))
}

/// The configured fixed control averaged over each interval, or zero.
pub(crate) fn fixed_control(cfg: &Config, partition: &TimePartition) -> Result<Control> {
    Ok(match cfg.fixed_control()? {
        Some(q) => Control::from_fn_mean(partition, q),
        None => Control::zeros(partition.n_intervals()),
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolveOptions {
    /// Also solve the adjoint for the configured target and report `z` along the curve.
    pub adjoint: bool,
    /// Write every frame to `trajectory.txt`.
    pub dump: bool,
}

/// One forward solve on level 0. With `[data] f_expr` the source is that
/// field; otherwise it is the point source of intensity `q` on the curve.
/// Writes `trajectory.csv` and `metadata.txt`.
pub fn run_solve(cfg: &Config, out: &Path, opts: SolveOptions) -> Result<Trajectory> {
    let (space, partition, points) = level_setup(cfg, 0)?;
    let heat = HeatSolver::new(&space, partition.clone());
    let q = fixed_control(cfg, &partition)?;
    let u = match &cfg.f_expr {
        Some(src) => heat.solve_forward_field(Config::field(src)?.as_ref())?,
        None => heat.solve_forward_source(&points, &q)?,
    };
    let at_curve = eval_along_curve(&space, &u, &points)?;
    let z_at_curve = if opts.adjoint {
        let target = Config::field(&cfg.uhat_expr)?;
        let z = heat.solve_adjoint(&u, target.as_ref())?;
        Some(eval_along_curve(&space, &z, &points)?)
    } else {
        None
    };

    let mut csv = String::from("m,t_m,q_m,u_at_curve,norm_M");
    if z_at_curve.is_some() {
        csv.push_str(",z_at_curve");
    }
    csv.push('\n');
    let nodes = partition.nodes();
    for m in 0..partition.n_intervals() {
        let frame = u.frame(m);
        let norm = dot(&space.mass().spmv(frame)?, frame).sqrt();
        let _ = write!(
            csv,
            "{m},{},{},{},{}",
            fmt_cell(Some(nodes[m + 1])),
            fmt_cell(Some(q.values[m])),
            fmt_cell(Some(at_curve[m])),
            fmt_cell(Some(norm))
        );
        if let Some(z) = &z_at_curve {
            let _ = write!(csv, ",{}", fmt_cell(Some(z[m])));
        }
        csv.push('\n');
    }
    write_output(out, "trajectory.csv", &csv)?;
    if opts.dump {
        write_output(out, "trajectory.txt", &u.to_text())?;
    }
    let source = if cfg.f_expr.is_some() { "field" } else { "point" };
    let extra = [
        ("source".to_string(), source.to_string()),
        ("n_dofs".to_string(), space.n_dofs().to_string()),
    ];
    write_output(out, "metadata.txt", &metadata("solve", cfg, &extra))?;
    Ok(u)
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub control: Control,
    pub report: SolveReport,
    /// Objective including the constant `1/2 ||u_hat||^2`.
    pub objective: f64,
}

pub(crate) fn solve_problem(cfg: &Config, problem: &OcpProblem<'_>) -> Result<(Control, SolveReport)> {
    let q0 = problem.default_start();
    match cfg.method {
        Method::Pdas => problem.solve_pdas(&q0, cfg.tol, cfg.max_outer),
        Method::ProjectedGradient => problem.solve_projected_gradient(&q0, cfg.tol, cfg.max_outer),
    }
}

pub(crate) fn build_problem<'a>(
    cfg: &Config,
    space: &'a FeSpace,
    partition: TimePartition,
    points: Vec<Point>,
) -> Result<OcpProblem<'a>> {
    OcpProblem::new(space, partition, points, cfg.alpha, cfg.bounds(), cfg.u_hat()?)
}

fn diagnostics(cfg: &Config, problem: &OcpProblem<'_>, outcome: std::result::Result<&OptimizeOutcome, &Error>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "method = {}", if cfg.method == Method::Pdas { "pdas" } else { "pg" });
    let _ = writeln!(s, "n_dofs = {}", problem.space().n_dofs());
    let _ = writeln!(s, "intervals = {}", problem.n_intervals());
    let _ = writeln!(s, "tol = {:e}", cfg.tol);
    match outcome {
        Ok(o) => {
            let r = &o.report;
            let _ = writeln!(s, "status = converged");
            let _ = writeln!(s, "outer_iterations = {}", r.outer_iterations);
            let _ = writeln!(s, "inner_iterations = {}", r.inner_iterations);
            let _ = writeln!(s, "gradient_residual = {:.16e}", r.gradient_residual);
            let _ = writeln!(s, "optimality_residual = {:.16e}", r.optimality_residual);
            let _ = writeln!(s, "objective = {:.16e}", o.objective);
            let _ = writeln!(s, "active_lower = {}", r.active_lower);
            let _ = writeln!(s, "active_upper = {}", r.active_upper);
            for (i, v) in r.values.iter().enumerate() {
                let _ = writeln!(s, "value[{i}] = {:.16e}", v + 0.5 * problem.u_hat_norm_sq());
            }
        }
        Err(e) => {
            let _ = writeln!(s, "status = failed");
            let _ = writeln!(s, "error = {e}");
        }
    }
    s
}

/// Solves the control problem on level 0 and writes `control.csv`,
/// `diagnostics.txt` and `metadata.txt`. Diagnostics are written before a
/// solver failure is returned.
pub fn run_optimize(cfg: &Config, out: &Path) -> Result<OptimizeOutcome> {
    let (space, partition, points) = level_setup(cfg, 0)?;
    let problem = build_problem(cfg, &space, partition.clone(), points)?;
    write_output(out, "metadata.txt", &metadata("optimize", cfg, &[]))?;
    let outcome = solve_problem(cfg, &problem).and_then(|(control, report)| {
        let objective = problem.reduced_value(&control)?;
        Ok(OptimizeOutcome {
            control,
            report,
            objective,
        })
    });
    write_output(out, "diagnostics.txt", &diagnostics(cfg, &problem, outcome.as_ref()))?;
    let outcome = outcome?;

    let mut csv = String::from("m,t_m,q_m,z_at_curve\n");
    let nodes = partition.nodes();
    for m in 0..partition.n_intervals() {
        let _ = writeln!(
            csv,
            "{m},{},{},{}",
            fmt_cell(Some(nodes[m + 1])),
            fmt_cell(Some(outcome.control.values[m])),
            fmt_cell(Some(outcome.report.trace[m]))
        );
    }
    write_output(out, "control.csv", &csv)?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(dir: &Path, name: &str) -> String {
        std::fs::read_to_string(dir.join(name)).unwrap()
    }

    #[test]
    fn zero_control_gives_zero_trace() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = Config::parse("[domain]\nn = 6\n[time]\nM = 5").unwrap();
        run_solve(&cfg, dir.path(), SolveOptions::default()).unwrap();
        let csv = read(dir.path(), "trajectory.csv");
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "m,t_m,q_m,u_at_curve,norm_M");
        assert_eq!(lines.len(), 6);
        for line in &lines[1..] {
            let cells: Vec<f64> = line.split(',').skip(3).map(|c| c.parse().unwrap()).collect();
            assert!(cells.iter().all(|&v| v == 0.0), "{line}");
        }
    }

    #[test]
    fn single_step_example() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = Config::parse("[domain]\nn = 2\n[time]\nM = 1\nT = 0.1\n[control]\nq_expr = 1").unwrap();
        let u = run_solve(&cfg, dir.path(), SolveOptions::default()).unwrap();
        // one interior node with M = 1/8 and A = 4: (1/8 + 4k) u = k
        assert!((u.frame(0)[0] - 4.0 / 21.0).abs() < 1e-14);
        let csv = read(dir.path(), "trajectory.csv");
        let cell: f64 = csv.lines().nth(1).unwrap().split(',').nth(3).unwrap().parse().unwrap();
        assert!((cell - 4.0 / 21.0).abs() < 1e-15);
    }

    #[test]
    fn solve_is_deterministic() {
        let text = "[domain]\nn = 6\n[time]\nM = 6\n[curve]\nkind = circle\n[control]\nq_expr = sin(2*pi*t)\n[data]\nuhat_expr = x*y*t";
        let cfg = Config::parse(text).unwrap();
        let opts = SolveOptions { adjoint: true, dump: true };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_solve(&cfg, a.path(), opts).unwrap();
        run_solve(&cfg, b.path(), opts).unwrap();
        for name in ["trajectory.csv", "trajectory.txt", "metadata.txt"] {
            assert_eq!(read(a.path(), name), read(b.path(), name));
        }
        assert!(read(a.path(), "trajectory.csv").starts_with("m,t_m,q_m,u_at_curve,norm_M,z_at_curve\n"));
    }

    #[test]
    fn optimize_writes_certified_control() {
        let dir = tempfile::tempdir().unwrap();
        let text = "[domain]\nn = 6\n[time]\nM = 8\n[curve]\nkind = circle\n[control]\nalpha = 1e-3\nqa = -0.5\nqb = 0.5\n\
                    [data]\nuhat_expr = 10*sin(pi*x)*sin(pi*y)*sin(2*pi*t)";
        let cfg = Config::parse(text).unwrap();
        let out = run_optimize(&cfg, dir.path()).unwrap();
        assert!(out.report.residual() <= 1e-8);
        assert!(out.report.active_lower + out.report.active_upper > 0);
        let csv = read(dir.path(), "control.csv");
        assert_eq!(csv.lines().count(), 9);
        assert!(read(dir.path(), "diagnostics.txt").contains("status = converged"));
    }
}
