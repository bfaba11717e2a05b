//! Convergence studies over nested space-time levels.
//!
//! Level `l` uses `n * 2^l` subdivisions and `M * c^l` time steps with
//! `c = 4` for `k ~ h^2` and `c = 2` for `k ~ h`. Unless an exact solution
//! is configured, errors are measured against a reference computed
//! `extra_levels` levels beyond the finest study level: coarse frames are
//! carried to the reference mesh by nodal evaluation, and interval `j` of
//! the reference grid is compared with the coarse interval containing it.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use super::config::Config;
use super::run::{build_problem, fixed_control, level_setup, solve_problem};
use super::{eoc, fmt_cell, metadata, write_output, THREADS_ENV};
use crate::error::{Error, Result};
use crate::fespace::{FeSpace, Prolongation};
use crate::heat::{curve_functionals, error_norms, eval_along_curve, p1_norms, HeatSolver, Trajectory};
use crate::mesh::Point;
use crate::timeline::{Control, TimePartition};

/// One row of `study.csv`. Empty cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub level: usize,
    pub h: f64,
    pub k: f64,
    pub m: usize,
    pub n_dofs: usize,
    pub err_control: Option<f64>,
    pub err_state_l2l2: Option<f64>,
    pub err_state_l2l1: Option<f64>,
    pub err_curve: Option<f64>,
    pub eoc_control: Option<f64>,
    pub eoc_state: Option<f64>,
    pub wall_ms: Option<f64>,
}

pub const CSV_HEADER: &str =
    "level,h,k,M,n_dofs,err_control,err_state_l2l2,err_state_l2l1,err_curve,eoc_control,eoc_state,wall_ms";

impl StudyRow {
    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.level,
            fmt_cell(Some(self.h)),
            fmt_cell(Some(self.k)),
            self.m,
            self.n_dofs,
            fmt_cell(self.err_control),
            fmt_cell(self.err_state_l2l2),
            fmt_cell(self.err_state_l2l1),
            fmt_cell(self.err_curve),
            fmt_cell(self.eoc_control),
            fmt_cell(self.eoc_state),
            fmt_cell(self.wall_ms),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    /// `f_expr` and `exact_expr`: errors against the exact solution.
    Manufactured,
    /// `f_expr` alone: forward problem with a fine reference.
    Field,
    /// `q_expr`: point source of fixed intensity with a fine reference.
    FixedControl,
    /// Optimal control at every level and on the reference.
    Optimize,
}

impl Mode {
    fn of(cfg: &Config) -> Self {
        match (&cfg.f_expr, &cfg.exact_expr, &cfg.q_expr) {
            (Some(_), Some(_), _) => Self::Manufactured,
            (Some(_), None, _) => Self::Field,
            (None, _, Some(_)) => Self::FixedControl,
            (None, _, None) => Self::Optimize,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Manufactured => "manufactured",
            Self::Field => "field",
            Self::FixedControl => "fixed-control",
            Self::Optimize => "optimize",
        }
    }
}

/// What one level (or the reference) hands to the error computation.
struct Solved {
    space: FeSpace,
    partition: TimePartition,
    points: Vec<Point>,
    /// Coarse state; `None` for the reference, whose state is streamed.
    state: Option<Trajectory>,
    control: Option<Control>,
    /// Adjoint trace (optimize) or state trace (field) along the curve.
    trace: Option<Vec<f64>>,
    norms: Option<[f64; 3]>,
    wall_ms: f64,
}

fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs `job(0..n)` on at most `threads` threads; results keep job order.
fn run_jobs<T: Send>(n: usize, threads: usize, job: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.min(n) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let r = job(i);
                slots.lock().expect("job panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("job panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

fn solve_level(cfg: &Config, mode: Mode, level: usize, is_reference: bool) -> Result<Solved> {
    let start = Instant::now();
    let (space, partition, points) = level_setup(cfg, level)?;
    let mut solved = Solved {
        state: None,
        control: None,
        trace: None,
        norms: None,
        wall_ms: 0.0,
        space,
        partition,
        points,
    };
    match mode {
        Mode::Manufactured => {
            let heat = HeatSolver::new(&solved.space, solved.partition.clone());
            let f = Config::field(cfg.f_expr.as_deref().expect("mode"))?;
            let exact = Config::field(cfg.exact_expr.as_deref().expect("mode"))?;
            let u = heat.solve_forward_field(f.as_ref())?;
            let e = error_norms(&solved.space, exact.as_ref(), &u, &solved.points)?;
            solved.norms = Some([e.l2l2, e.l2l1, e.curve_l2]);
        }
        Mode::Field => {
            if !is_reference {
                let heat = HeatSolver::new(&solved.space, solved.partition.clone());
                let f = Config::field(cfg.f_expr.as_deref().expect("mode"))?;
                let u = heat.solve_forward_field(f.as_ref())?;
                solved.trace = Some(eval_along_curve(&solved.space, &u, &solved.points)?);
                solved.state = Some(u);
            }
        }
        Mode::FixedControl => {
            let q = fixed_control(cfg, &solved.partition)?;
            if !is_reference {
                let heat = HeatSolver::new(&solved.space, solved.partition.clone());
                solved.state = Some(heat.solve_forward_source(&solved.points, &q)?);
            }
            solved.control = Some(q);
        }
        Mode::Optimize => {
            let problem = build_problem(cfg, &solved.space, solved.partition.clone(), solved.points.clone())?;
            let (q, report) = solve_problem(cfg, &problem).map_err(|e| level_failure(level, is_reference, e))?;
            let state = if is_reference { None } else { Some(problem.state(&q)?) };
            drop(problem);
            solved.state = state;
            solved.trace = Some(report.trace);
            solved.control = Some(q);
        }
    }
    solved.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(solved)
}

fn level_failure(level: usize, is_reference: bool, e: Error) -> Error {
    let which = if is_reference {
        format!("reference level {level}")
    } else {
        format!("level {level}")
    };
    match e {
        Error::NonConvergence { iterations, residual, .. } => Error::InvalidArgument(format!(
            "optimizer did not converge on {which}: {iterations} iterations, best residual {residual:e}"
        )),
        other => Error::InvalidArgument(format!("{which}: {other}")),
    }
}

/// Accumulated squared errors of one level against the reference.
#[derive(Default, Clone, Copy)]
struct Sums {
    control: f64,
    l2l2: f64,
    l2l1: f64,
    curve: f64,
}

/// Streams the reference state and accumulates the errors of every level.
fn compare_with_reference(cfg: &Config, mode: Mode, reference: &Solved, levels: &[Solved]) -> Result<Vec<Sums>> {
    let rp = &reference.partition;
    let steps = rp.steps();
    let mut ratios = Vec::with_capacity(levels.len());
    let mut prolongations = Vec::with_capacity(levels.len());
    for lv in levels {
        if !lv.partition.is_nested_in(rp) {
            return Err(Error::Config("time grids are not nested across levels".into()));
        }
        ratios.push(rp.n_intervals() / lv.partition.n_intervals());
        prolongations.push(Prolongation::new(&lv.space, &reference.space)?);
    }
    let mut sums = vec![Sums::default(); levels.len()];

    for (s, lv) in sums.iter_mut().zip(levels) {
        let r = rp.n_intervals() / lv.partition.n_intervals();
        if let (Some(qr), Some(qc)) = (&reference.control, &lv.control) {
            if mode == Mode::Optimize {
                s.control = (0..rp.n_intervals())
                    .map(|j| steps[j] * (qr.values[j] - qc.values[j / r]).powi(2))
                    .sum();
            }
        }
        if let (Some(zr), Some(zc), Mode::Optimize) = (&reference.trace, &lv.trace, mode) {
            s.curve = (0..rp.n_intervals()).map(|j| steps[j] * (zr[j] - zc[j / r]).powi(2)).sum();
        }
    }

    let heat = HeatSolver::new(&reference.space, rp.clone());
    let ref_functionals = curve_functionals(&reference.space, &reference.points)?;
    let mut cached: Vec<Option<(usize, Vec<f64>)>> = vec![None; levels.len()];
    let mut visit = |j: usize, u: &[f64]| -> Result<()> {
        for (l, lv) in levels.iter().enumerate() {
            let c = j / ratios[l];
            if cached[l].as_ref().is_none_or(|(idx, _)| *idx != c) {
                let state = lv.state.as_ref().expect("coarse state");
                cached[l] = Some((c, prolongations[l].apply(state.frame(c))?));
            }
            let fine = &cached[l].as_ref().expect("filled").1;
            let e: Vec<f64> = u.iter().zip(fine).map(|(a, b)| a - b).collect();
            let (l2sq, l1) = p1_norms(&reference.space, &e);
            sums[l].l2l2 += steps[j] * l2sq;
            sums[l].l2l1 += steps[j] * l1 * l1;
            if mode == Mode::Field {
                let zc = lv.trace.as_ref().expect("state trace");
                sums[l].curve += steps[j] * (ref_functionals[j].eval(u) - zc[c]).powi(2);
            }
        }
        Ok(())
    };
    match mode {
        Mode::Field => {
            let f = Config::field(cfg.f_expr.as_deref().expect("mode"))?;
            heat.sweep_forward(
                |m, rhs| {
                    for (r, v) in rhs.iter_mut().zip(heat.time_load(m, f.as_ref())) {
                        *r += v;
                    }
                    Ok(())
                },
                &mut visit,
            )?;
        }
        Mode::FixedControl | Mode::Optimize => {
            let q = reference.control.as_ref().expect("reference control");
            heat.forward_source_visit(&reference.points, q, &mut visit)?;
        }
        Mode::Manufactured => unreachable!("no reference in manufactured mode"),
    }
    Ok(sums)
}

/// Runs the study and writes `study.csv` and `metadata.txt` to `out`.
pub fn run_study(cfg: &Config, out: &Path) -> Result<Vec<StudyRow>> {
    cfg.validate_study()?;
    let mode = Mode::of(cfg);
    let threads = thread_count()?;
    let with_reference = mode != Mode::Manufactured;
    let n_jobs = cfg.levels + usize::from(with_reference);
    let ref_level = cfg.reference_level();

    let results = run_jobs(n_jobs, threads, |i| {
        if i < cfg.levels {
            solve_level(cfg, mode, i, false)
        } else {
            solve_level(cfg, mode, ref_level, true)
        }
    });
    let mut solved = Vec::with_capacity(n_jobs);
    for r in results {
        match r {
            Ok(s) => solved.push(s),
            Err(e) => {
                let note = format!("status = failed\nerror = {e}\n\n{}", metadata(mode.name(), cfg, &[]));
                write_output(out, "failure.txt", &note)?;
                return Err(e);
            }
        }
    }
    let reference = if with_reference { solved.pop() } else { None };

    let errors: Vec<[Option<f64>; 4]> = match &reference {
        None => solved
            .iter()
            .map(|s| {
                let [a, b, c] = s.norms.expect("manufactured norms");
                [None, Some(a), Some(b), Some(c)]
            })
            .collect(),
        Some(reference) => compare_with_reference(cfg, mode, reference, &solved)?
            .into_iter()
            .map(|s| {
                let control = (mode == Mode::Optimize).then(|| s.control.sqrt());
                let curve = matches!(mode, Mode::Optimize | Mode::Field).then(|| s.curve.sqrt());
                [control, Some(s.l2l2.sqrt()), Some(s.l2l1.sqrt()), curve]
            })
            .collect(),
    };

    let mut rows: Vec<StudyRow> = Vec::with_capacity(cfg.levels);
    for (level, (s, e)) in solved.iter().zip(&errors).enumerate() {
        let prev = rows.last();
        let rate = |f: fn(&StudyRow) -> Option<f64>, cur: Option<f64>| match (prev.and_then(f), cur) {
            (Some(a), Some(b)) => eoc(a, b),
            _ => None,
        };
        let row = StudyRow {
            level,
            h: s.space.h(),
            k: s.partition.max_step(),
            m: s.partition.n_intervals(),
            n_dofs: s.space.n_dofs(),
            err_control: e[0],
            err_state_l2l2: e[1],
            err_state_l2l1: e[2],
            err_curve: e[3],
            eoc_control: rate(|r| r.err_control, e[0]),
            eoc_state: rate(|r| r.err_state_l2l1, e[2]),
            wall_ms: cfg.timings.then_some(s.wall_ms),
        };
        rows.push(row);
    }

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        let _ = writeln!(csv, "{}", r.to_csv());
    }
    write_output(out, "study.csv", &csv)?;

    let mut extra = vec![
        ("levels".to_string(), cfg.levels.to_string()),
        ("space_levels".to_string(), format!("n = {} * 2^l", cfg.n)),
        ("time_levels".to_string(), format!("M = {} * {}^l", cfg.m, cfg.coupling.factor())),
    ];
    match &reference {
        Some(r) => {
            extra.push(("reference_n".to_string(), cfg.n_at(ref_level).to_string()));
            extra.push(("reference_M".to_string(), r.partition.n_intervals().to_string()));
            if cfg.timings {
                extra.push(("reference_wall_ms".to_string(), format!("{:.3}", r.wall_ms)));
            }
        }
        None => extra.push(("reference".to_string(), "exact solution".to_string())),
    }
    extra.push(("eoc_state_from".to_string(), "err_state_l2l1".to_string()));
    write_output(out, "metadata.txt", &metadata(mode.name(), cfg, &extra))?;
    Ok(rows)
}

/// Reads a `study.csv` back into rows.
pub fn parse_study_csv(text: &str) -> Result<Vec<StudyRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => {
            return Err(Error::Format {
                what: "study csv",
                line: 1,
                message: "unexpected header".into(),
            })
        }
    }
    let bad = |line: usize, message: String| Error::Format {
        what: "study csv",
        line: line + 1,
        message,
    };
    lines
        .map(|(i, line)| {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 12 {
                return Err(bad(i, format!("expected 12 cells, got {}", cells.len())));
            }
            let opt = |c: &str| -> Result<Option<f64>> {
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse().map(Some).map_err(|_| bad(i, format!("bad number '{c}'")))
                }
            };
            let int = |c: &str| -> Result<usize> { c.parse().map_err(|_| bad(i, format!("bad integer '{c}'"))) };
            Ok(StudyRow {
                level: int(cells[0])?,
                h: opt(cells[1])?.unwrap_or(f64::NAN),
                k: opt(cells[2])?.unwrap_or(f64::NAN),
                m: int(cells[3])?,
                n_dofs: int(cells[4])?,
                err_control: opt(cells[5])?,
                err_state_l2l2: opt(cells[6])?,
                err_state_l2l1: opt(cells[7])?,
                err_curve: opt(cells[8])?,
                eoc_control: opt(cells[9])?,
                eoc_state: opt(cells[10])?,
                wall_ms: opt(cells[11])?,
            })
        })
        .collect()
}
