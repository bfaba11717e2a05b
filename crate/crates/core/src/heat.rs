//! dG(0)cG(1) time stepping for the heat equation.
//!
//! Testing the space-time form with the indicator of interval `m` times a
//! basis function gives the backward-Euler-type step
//! `(M + k_m A) U_m = M U_{m-1} + (right-hand side on I_m)`, and the dual
//! form gives the matching backward sweep for adjoint problems.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fespace::{abs_integral_linear, FeSpace, PointFunctional};
use crate::mesh::Point;
use crate::quadrature::gauss2;
use crate::sparse::{cg_prepared, dot, CgOptions, CsrMatrix, PreparedPreconditioner, Preconditioner};
use crate::timeline::{Control, TimePartition};

/// Scalar field on `I x Omega`, evaluated as `f(t, [x, y])`.
pub type SpaceTimeField = Arc<dyn Fn(f64, Point) -> f64 + Send + Sync>;

/// Default relative tolerance of the per-step CG solves.
pub const STEP_TOL: f64 = 1e-12;

/// Piecewise constant in time, P1 in space: frame `m` is the coefficient
/// vector on interval `m`. The value before `t = 0` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    partition: TimePartition,
    frames: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(partition: TimePartition, frames: Vec<Vec<f64>>) -> Result<Self> {
        if frames.len() != partition.n_intervals() {
            return Err(Error::DimensionMismatch {
                expected: partition.n_intervals(),
                got: frames.len(),
            });
        }
        if let Some(first) = frames.first() {
            if let Some(bad) = frames.iter().find(|f| f.len() != first.len()) {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    got: bad.len(),
                });
            }
        }
        Ok(Self { partition, frames })
    }

    pub fn zeros(partition: TimePartition, n_dofs: usize) -> Self {
        let frames = vec![vec![0.0; n_dofs]; partition.n_intervals()];
        Self { partition, frames }
    }

    pub fn partition(&self) -> &TimePartition {
        &self.partition
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    pub fn frame(&self, m: usize) -> &[f64] {
        &self.frames[m]
    }

    pub fn into_frames(self) -> Vec<Vec<f64>> {
        self.frames
    }

    pub fn n_intervals(&self) -> usize {
        self.frames.len()
    }

    pub fn n_dofs(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    /// `frame_{m+1} - frame_m`, taking the frame after the last interval as zero.
    pub fn jump(&self, m: usize) -> Vec<f64> {
        let cur = &self.frames[m];
        match self.frames.get(m + 1) {
            Some(next) => next.iter().zip(cur).map(|(a, b)| a - b).collect(),
            None => cur.iter().map(|b| -b).collect(),
        }
    }

    /// Text dump: a header `frame m t_m` (1-based interval, right endpoint)
    /// followed by one line of coefficients per interval.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (m, f) in self.frames.iter().enumerate() {
            let _ = writeln!(s, "frame {} {:.16e}", m + 1, self.partition.nodes()[m + 1]);
            let line: Vec<String> = f.iter().map(|v| format!("{v:.16e}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }
}

struct StepOperator {
    matrix: CsrMatrix,
    precond: PreparedPreconditioner,
}

/// Step matrices `M + k A` for one space and one partition, cached per
/// distinct step length.
pub struct HeatSolver<'a> {
    space: &'a FeSpace,
    partition: TimePartition,
    ops: Vec<StepOperator>,
    op_of: Vec<usize>,
    opts: CgOptions,
}

impl<'a> HeatSolver<'a> {
    pub fn new(space: &'a FeSpace, partition: TimePartition) -> Self {
        let mut index: HashMap<u64, usize> = HashMap::new();
        let mut ops = Vec::new();
        let op_of = partition
            .steps()
            .iter()
            .map(|&k| {
                *index.entry(k.to_bits()).or_insert_with(|| {
                    let matrix = space
                        .mass()
                        .linear_combination(1.0, space.stiffness(), k)
                        .expect("mass and stiffness share a pattern");
                    let precond = PreparedPreconditioner::new(&matrix, Preconditioner::IncompleteCholesky)
                        .or_else(|_| PreparedPreconditioner::new(&matrix, Preconditioner::Jacobi))
                        .expect("Jacobi setup cannot fail");
                    ops.push(StepOperator { matrix, precond });
                    ops.len() - 1
                })
            })
            .collect();
        Self {
            space,
            partition,
            ops,
            op_of,
            opts: CgOptions::with_tol(STEP_TOL),
        }
    }

    pub fn with_tolerance(mut self, rel_tol: f64) -> Self {
        self.opts.rel_tol = rel_tol;
        self
    }

    pub fn space(&self) -> &'a FeSpace {
        self.space
    }

    pub fn partition(&self) -> &TimePartition {
        &self.partition
    }

    pub fn n_dofs(&self) -> usize {
        self.space.n_dofs()
    }

    /// The matrix `M + k_m A` used on interval `m`.
    pub fn step_matrix(&self, m: usize) -> &CsrMatrix {
        &self.ops[self.op_of[m]].matrix
    }

    fn step_solve(&self, m: usize, rhs: &[f64], guess: &[f64]) -> Result<Vec<f64>> {
        let op = &self.ops[self.op_of[m]];
        Ok(cg_prepared(&op.matrix, rhs, Some(guess), &op.precond, &self.opts)?.x)
    }

    /// Forward sweep from the zero initial value. `source(m, rhs)` adds the
    /// interval-`m` right-hand side to `rhs = M U_{m-1}`; `visit` sees every
    /// new frame.
    pub fn sweep_forward(
        &self,
        mut source: impl FnMut(usize, &mut [f64]) -> Result<()>,
        mut visit: impl FnMut(usize, &[f64]) -> Result<()>,
    ) -> Result<()> {
        let n = self.n_dofs();
        let mut prev = vec![0.0; n];
        let mut older = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for m in 0..self.partition.n_intervals() {
            self.space.mass().spmv_into(&prev, &mut rhs);
            source(m, &mut rhs)?;
            let x = self.step_solve(m, &rhs, &extrapolate(&prev, &older))?;
            older = std::mem::replace(&mut prev, x);
            visit(m, &prev)?;
        }
        Ok(())
    }

    /// Backward sweep from a zero final value; `rhs = M Z_{m+1}` before
    /// `source(m, rhs)` is applied.
    pub fn sweep_backward(
        &self,
        mut source: impl FnMut(usize, &mut [f64]) -> Result<()>,
        mut visit: impl FnMut(usize, &[f64]) -> Result<()>,
    ) -> Result<()> {
        let n = self.n_dofs();
        let mut next = vec![0.0; n];
        let mut later = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for m in (0..self.partition.n_intervals()).rev() {
            self.space.mass().spmv_into(&next, &mut rhs);
            source(m, &mut rhs)?;
            let x = self.step_solve(m, &rhs, &extrapolate(&next, &later))?;
            later = std::mem::replace(&mut next, x);
            visit(m, &next)?;
        }
        Ok(())
    }

    fn collect(&self, frames: &mut [Vec<f64>], m: usize, x: &[f64]) {
        frames[m] = x.to_vec();
    }

    fn check_curve(&self, points: &[Point]) -> Result<()> {
        if points.len() != self.partition.n_intervals() {
            return Err(Error::DimensionMismatch {
                expected: self.partition.n_intervals(),
                got: points.len(),
            });
        }
        Ok(())
    }

    /// Point source of intensity `q_m` at `points[m]`, streamed to `visit`.
    pub fn forward_source_visit(
        &self,
        points: &[Point],
        q: &Control,
        visit: impl FnMut(usize, &[f64]) -> Result<()>,
    ) -> Result<()> {
        self.check_curve(points)?;
        if q.len() != self.partition.n_intervals() {
            return Err(Error::DimensionMismatch {
                expected: self.partition.n_intervals(),
                got: q.len(),
            });
        }
        let functionals = curve_functionals(self.space, points)?;
        let steps = self.partition.steps();
        self.sweep_forward(
            |m, rhs| {
                functionals[m].add_to(rhs, steps[m] * q.values[m]);
                Ok(())
            },
            visit,
        )
    }

    pub fn solve_forward_source(&self, points: &[Point], q: &Control) -> Result<Trajectory> {
        let mut frames = vec![Vec::new(); self.partition.n_intervals()];
        self.forward_source_visit(points, q, |m, x| {
            self.collect(&mut frames, m, x);
            Ok(())
        })?;
        Trajectory::new(self.partition.clone(), frames)
    }

    /// `int_{I_m} (f(t), phi_i) dt` with two Gauss points in time.
    pub fn time_load(&self, m: usize, f: &(impl Fn(f64, Point) -> f64 + ?Sized)) -> Vec<f64> {
        let (a, b) = self.partition.interval(m);
        let mut out = vec![0.0; self.n_dofs()];
        for (t, w) in gauss2(a, b) {
            let l = self.space.assemble_load(|x| f(t, x));
            for (o, v) in out.iter_mut().zip(&l) {
                *o += w * v;
            }
        }
        out
    }

    pub fn solve_forward_field(&self, f: &(impl Fn(f64, Point) -> f64 + ?Sized)) -> Result<Trajectory> {
        let mut frames = vec![Vec::new(); self.partition.n_intervals()];
        self.sweep_forward(
            |m, rhs| {
                for (r, v) in rhs.iter_mut().zip(self.time_load(m, f)) {
                    *r += v;
                }
                Ok(())
            },
            |m, x| {
                self.collect(&mut frames, m, x);
                Ok(())
            },
        )?;
        Trajectory::new(self.partition.clone(), frames)
    }

    /// Backward sweep with right-hand side `k_m M U_m - target(m)`, where
    /// `target(m, rhs)` subtracts the tracking load of interval `m` in place.
    /// `u = None` stands for the zero state.
    pub fn adjoint_visit(
        &self,
        u: Option<&Trajectory>,
        mut target: impl FnMut(usize, &mut [f64]) -> Result<()>,
        visit: impl FnMut(usize, &[f64]) -> Result<()>,
    ) -> Result<()> {
        if let Some(u) = u {
            if u.n_intervals() != self.partition.n_intervals() {
                return Err(Error::DimensionMismatch {
                    expected: self.partition.n_intervals(),
                    got: u.n_intervals(),
                });
            }
            if u.n_dofs() != self.n_dofs() {
                return Err(Error::DimensionMismatch {
                    expected: self.n_dofs(),
                    got: u.n_dofs(),
                });
            }
        }
        let steps = self.partition.steps();
        let mut mu = vec![0.0; self.n_dofs()];
        self.sweep_backward(
            |m, rhs| {
                if let Some(u) = u {
                    self.space.mass().spmv_into(u.frame(m), &mut mu);
                    for (r, v) in rhs.iter_mut().zip(&mu) {
                        *r += steps[m] * v;
                    }
                }
                target(m, rhs)
            },
            visit,
        )
    }

    /// Adjoint state for tracking `u_hat` with the state `u`.
    pub fn solve_adjoint(&self, u: &Trajectory, u_hat: &(impl Fn(f64, Point) -> f64 + ?Sized)) -> Result<Trajectory> {
        let mut frames = vec![Vec::new(); self.partition.n_intervals()];
        self.adjoint_visit(
            Some(u),
            |m, rhs| {
                for (r, v) in rhs.iter_mut().zip(self.time_load(m, u_hat)) {
                    *r -= v;
                }
                Ok(())
            },
            |m, x| {
                self.collect(&mut frames, m, x);
                Ok(())
            },
        )?;
        Trajectory::new(self.partition.clone(), frames)
    }

    /// Backward problem driven by `v_m(gamma_m)` times the smoothed delta at
    /// `points[m]`.
    pub fn solve_regularized_dual(&self, v: &Trajectory, points: &[Point]) -> Result<Trajectory> {
        self.check_curve(points)?;
        let n = self.n_dofs();
        let loads: Vec<Vec<f64>> = points
            .iter()
            .map(|&x| Ok(self.space.smoothed_delta(x)?.load_vector(n)))
            .collect::<Result<_>>()?;
        let values = eval_along_curve(self.space, v, points)?;
        let steps = self.partition.steps();
        let mut frames = vec![Vec::new(); self.partition.n_intervals()];
        self.sweep_backward(
            |m, rhs| {
                let s = steps[m] * values[m];
                for (r, b) in rhs.iter_mut().zip(&loads[m]) {
                    *r += s * b;
                }
                Ok(())
            },
            |m, x| {
                self.collect(&mut frames, m, x);
                Ok(())
            },
        )?;
        Trajectory::new(self.partition.clone(), frames)
    }
}

/// Linear extrapolation `2 a - b` used as the CG starting guess.
fn extrapolate(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| 2.0 * x - y).collect()
}

pub fn curve_functionals(space: &FeSpace, points: &[Point]) -> Result<Vec<PointFunctional>> {
    points.iter().map(|&x| space.point_functional(x)).collect()
}

/// Frame `m` evaluated at `points[m]`.
pub fn eval_along_curve(space: &FeSpace, v: &Trajectory, points: &[Point]) -> Result<Vec<f64>> {
    if points.len() != v.n_intervals() {
        return Err(Error::DimensionMismatch {
            expected: v.n_intervals(),
            got: points.len(),
        });
    }
    points
        .iter()
        .zip(v.frames())
        .map(|(&x, f)| Ok(space.point_functional(x)?.eval(f)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BFormMode {
    Primal,
    Dual,
}

/// The space-time bilinear form on piecewise constant trajectories.
///
/// Primal: `sum k_m (A v_m, w_m) + sum (M (v_m - v_{m-1}), w_m)` with `v_{-1} = 0`.
/// Dual: `sum k_m (A v_m, w_m) - sum_{m<M-1} (M v_m, w_{m+1} - w_m) + (M v_{M-1}, w_{M-1})`.
pub fn b_form(space: &FeSpace, v: &Trajectory, w: &Trajectory, mode: BFormMode) -> Result<f64> {
    if v.n_intervals() != w.n_intervals() || v.partition() != w.partition() {
        return Err(Error::DimensionMismatch {
            expected: v.n_intervals(),
            got: w.n_intervals(),
        });
    }
    if v.n_dofs() != w.n_dofs() || v.n_dofs() != space.n_dofs() {
        return Err(Error::DimensionMismatch {
            expected: space.n_dofs(),
            got: w.n_dofs(),
        });
    }
    let steps = v.partition().steps();
    let n_int = v.n_intervals();
    let mut av = vec![0.0; space.n_dofs()];
    let mut mv = vec![0.0; space.n_dofs()];
    let mut s = 0.0;
    for m in 0..n_int {
        space.stiffness().spmv_into(v.frame(m), &mut av);
        s += steps[m] * dot(&av, w.frame(m));
    }
    match mode {
        BFormMode::Primal => {
            let mut mprev = vec![0.0; space.n_dofs()];
            for m in 0..n_int {
                space.mass().spmv_into(v.frame(m), &mut mv);
                s += dot(&mv, w.frame(m)) - dot(&mprev, w.frame(m));
                std::mem::swap(&mut mv, &mut mprev);
            }
        }
        BFormMode::Dual => {
            for m in 0..n_int {
                space.mass().spmv_into(v.frame(m), &mut mv);
                if m + 1 < n_int {
                    let wm = w.frame(m);
                    let wn = w.frame(m + 1);
                    s -= mv.iter().zip(wn.iter().zip(wm)).map(|(a, (b, c))| a * (b - c)).sum::<f64>();
                } else {
                    s += dot(&mv, w.frame(m));
                }
            }
        }
    }
    Ok(s)
}

/// `L^2(I; L^2)`, `L^2(I; L^1)` and along-curve `L^2(I)` norms of an error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorNorms {
    pub l2l2: f64,
    pub l2l1: f64,
    pub curve_l2: f64,
}

/// Errors of `v` against a space-time field: two Gauss points per interval
/// in time, the space's triangle rule in space; the `L^1` norm uses `|.|`
/// at the quadrature points.
pub fn error_norms(
    space: &FeSpace,
    exact: &(impl Fn(f64, Point) -> f64 + ?Sized),
    v: &Trajectory,
    points: &[Point],
) -> Result<ErrorNorms> {
    let functionals = curve_functionals(space, points)?;
    if functionals.len() != v.n_intervals() {
        return Err(Error::DimensionMismatch {
            expected: v.n_intervals(),
            got: functionals.len(),
        });
    }
    let (mut l2l2, mut l2l1, mut curve) = (0.0, 0.0, 0.0);
    for m in 0..v.n_intervals() {
        let (a, b) = v.partition().interval(m);
        let frame = v.frame(m);
        let at_curve = functionals[m].eval(frame);
        for (t, w) in gauss2(a, b) {
            l2l2 += w * space.integrate_elementwise(frame, |e| e * e, |x| exact(t, x));
            let l1 = space.integrate_elementwise(frame, f64::abs, |x| exact(t, x));
            l2l1 += w * l1 * l1;
            curve += w * (exact(t, points[m]) - at_curve).powi(2);
        }
    }
    Ok(ErrorNorms {
        l2l2: l2l2.sqrt(),
        l2l1: l2l1.sqrt(),
        curve_l2: curve.sqrt(),
    })
}

/// `(||e_m||_{L^2}^2, ||e_m||_{L^1})` for a P1 difference `e_m` on `space`,
/// both exact.
pub fn p1_norms(space: &FeSpace, e: &[f64]) -> (f64, f64) {
    let l2sq = dot(&space.mass().spmv(e).expect("length checked by caller"), e);
    let mesh = space.mesh();
    let l1 = (0..mesh.n_triangles())
        .map(|t| abs_integral_linear(mesh.area(t), space.local_values(e, t)))
        .sum();
    (l2sq, l1)
}
