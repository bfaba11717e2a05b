//! The discrete reduced control problem
//! `min_q 1/2 ||u_kh(q) - u_hat||^2 + alpha/2 ||q||^2` over the box `[q_a, q_b]`.
//!
//! The reduced gradient is `alpha q + z_kh(q)(t, gamma_k(t))`. Writing the
//! adjoint trace as `T q + d`, with `T` the trace of the adjoint driven by
//! the state alone and `d` the trace driven by `u_hat` alone, the Hessian is
//! `alpha I + T`, self-adjoint in the inner product `sum_m k_m a_m b_m`.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::fespace::{FeSpace, PointFunctional};
use crate::heat::{curve_functionals, HeatSolver, SpaceTimeField, Trajectory};
use crate::mesh::Point;
use crate::quadrature::gauss2;
use crate::sparse::dot;
use crate::timeline::{Bounds, Control, TimePartition};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_OUTER: usize = 50;

/// Tracking loads are cached when `M * n_dofs` stays below this many entries.
const TARGET_CACHE_LIMIT: usize = 40_000_000;

pub struct OcpProblem<'a> {
    heat: HeatSolver<'a>,
    points: Vec<Point>,
    functionals: Vec<PointFunctional>,
    alpha: f64,
    bounds: Bounds,
    u_hat: Option<SpaceTimeField>,
    targets: Option<Vec<Vec<f64>>>,
    u_hat_norm_sq: OnceLock<f64>,
}

/// Iteration record of a solver run.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// Active-set evaluations (PDAS) or gradient steps (projected gradient).
    pub outer_iterations: usize,
    /// Conjugate-gradient iterations of the inner linear solves (PDAS only).
    pub inner_iterations: usize,
    /// `||q - P(q - g)||` in the weighted `L^2(I)` norm.
    pub gradient_residual: f64,
    /// `||q - P(-z(gamma)/alpha)||` in the weighted `L^2(I)` norm.
    pub optimality_residual: f64,
    /// Objective minus the constant `1/2 ||u_hat||^2`, one entry per outer iteration.
    pub values: Vec<f64>,
    pub active_lower: usize,
    pub active_upper: usize,
    /// Adjoint values `z(gamma_m)` at the returned control.
    pub trace: Vec<f64>,
}

impl SolveReport {
    pub fn residual(&self) -> f64 {
        self.gradient_residual.max(self.optimality_residual)
    }
}

impl<'a> OcpProblem<'a> {
    /// `u_hat = None` stands for the zero target.
    pub fn new(
        space: &'a FeSpace,
        partition: TimePartition,
        points: Vec<Point>,
        alpha: f64,
        bounds: Bounds,
        u_hat: Option<SpaceTimeField>,
    ) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        if points.len() != partition.n_intervals() {
            return Err(Error::DimensionMismatch {
                expected: partition.n_intervals(),
                got: points.len(),
            });
        }
        let functionals = curve_functionals(space, &points)?;
        let heat = HeatSolver::new(space, partition);
        let n_int = heat.partition().n_intervals();
        let targets = match &u_hat {
            Some(f) if n_int * space.n_dofs() <= TARGET_CACHE_LIMIT => {
                Some((0..n_int).map(|m| heat.time_load(m, f.as_ref())).collect())
            }
            _ => None,
        };
        Ok(Self {
            heat,
            points,
            functionals,
            alpha,
            bounds,
            u_hat,
            targets,
            u_hat_norm_sq: OnceLock::new(),
        })
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        self.alpha = alpha;
        Ok(self)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn partition(&self) -> &TimePartition {
        self.heat.partition()
    }

    pub fn space(&self) -> &'a FeSpace {
        self.heat.space()
    }

    pub fn heat(&self) -> &HeatSolver<'a> {
        &self.heat
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn u_hat(&self) -> Option<&SpaceTimeField> {
        self.u_hat.as_ref()
    }

    pub fn n_intervals(&self) -> usize {
        self.points.len()
    }

    fn steps(&self) -> &[f64] {
        self.heat.partition().steps()
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n_intervals() {
            return Err(Error::DimensionMismatch {
                expected: self.n_intervals(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Adds `sign * int_{I_m} (u_hat, phi_i) dt` to `rhs`.
    fn add_target(&self, m: usize, rhs: &mut [f64], sign: f64) {
        if let Some(cache) = &self.targets {
            for (r, f) in rhs.iter_mut().zip(&cache[m]) {
                *r += sign * f;
            }
        } else if let Some(f) = &self.u_hat {
            for (r, v) in rhs.iter_mut().zip(self.heat.time_load(m, f.as_ref())) {
                *r += sign * v;
            }
        }
    }

    fn target_dot(&self, m: usize, u: &[f64]) -> f64 {
        if let Some(cache) = &self.targets {
            dot(&cache[m], u)
        } else if let Some(f) = &self.u_hat {
            dot(&self.heat.time_load(m, f.as_ref()), u)
        } else {
            0.0
        }
    }

    /// `int_I ||u_hat||^2` with the same quadrature as the tracking loads.
    pub fn u_hat_norm_sq(&self) -> f64 {
        *self.u_hat_norm_sq.get_or_init(|| {
            let Some(f) = &self.u_hat else { return 0.0 };
            let space = self.space();
            let zero = vec![0.0; space.n_dofs()];
            (0..self.n_intervals())
                .map(|m| {
                    let (a, b) = self.partition().interval(m);
                    gauss2(a, b)
                        .iter()
                        .map(|&(t, w)| w * space.integrate_elementwise(&zero, |e| e * e, |x| f(t, x)))
                        .sum::<f64>()
                })
                .sum()
        })
    }

    pub fn state(&self, q: &Control) -> Result<Trajectory> {
        self.heat.solve_forward_source(&self.points, q)
    }

    /// Adjoint values along the curve for the state `u` (zero when `None`),
    /// with or without the tracking term.
    pub fn adjoint_trace(&self, u: Option<&Trajectory>, with_target: bool) -> Result<Vec<f64>> {
        let mut trace = vec![0.0; self.n_intervals()];
        self.heat.adjoint_visit(
            u,
            |m, rhs| {
                if with_target {
                    self.add_target(m, rhs, -1.0);
                }
                Ok(())
            },
            |m, z| {
                trace[m] = self.functionals[m].eval(z);
                Ok(())
            },
        )?;
        Ok(trace)
    }

    /// `T p`: the adjoint trace of the state generated by `p` without tracking data.
    pub fn apply_state_part(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.check_len(p)?;
        if p.iter().all(|&v| v == 0.0) {
            return Ok(vec![0.0; p.len()]);
        }
        let u = self.state(&Control::new(p.to_vec()))?;
        self.adjoint_trace(Some(&u), false)
    }

    /// `d`: the adjoint trace of the zero state with tracking data.
    pub fn data_part(&self) -> Result<Vec<f64>> {
        if self.u_hat.is_none() {
            return Ok(vec![0.0; self.n_intervals()]);
        }
        self.adjoint_trace(None, true)
    }

    /// `(alpha I + T) p`.
    pub fn hessian_apply(&self, p: &[f64]) -> Result<Vec<f64>> {
        let tp = self.apply_state_part(p)?;
        Ok(p.iter().zip(tp).map(|(a, b)| self.alpha * a + b).collect())
    }

    /// `1/2 int ||u_kh(q) - u_hat||^2 dt + alpha/2 sum k_m q_m^2`.
    pub fn reduced_value(&self, q: &Control) -> Result<f64> {
        self.check_len(&q.values)?;
        let steps = self.steps();
        let space = self.space();
        let mut mu = vec![0.0; space.n_dofs()];
        let (mut uu, mut uf) = (0.0, 0.0);
        self.heat.forward_source_visit(&self.points, q, |m, u| {
            space.mass().spmv_into(u, &mut mu);
            uu += steps[m] * dot(&mu, u);
            uf += self.target_dot(m, u);
            Ok(())
        })?;
        let reg: f64 = self.partition().weighted_dot(&q.values, &q.values);
        Ok(0.5 * (uu - 2.0 * uf + self.u_hat_norm_sq()) + 0.5 * self.alpha * reg)
    }

    /// `g_m = alpha q_m + z_m(gamma_m)` with `z` the adjoint of the state of `q`.
    pub fn reduced_gradient(&self, q: &Control) -> Result<Vec<f64>> {
        self.check_len(&q.values)?;
        let u = self.state(q)?;
        let z = self.adjoint_trace(Some(&u), true)?;
        Ok(q.values.iter().zip(z).map(|(a, b)| self.alpha * a + b).collect())
    }

    pub fn project_admissible(&self, v: &[f64]) -> Control {
        Control::new(v.iter().map(|&x| self.bounds.clamp(x)).collect())
    }

    /// `||q - P(-z(gamma)/alpha)||` in the weighted `L^2(I)` norm.
    pub fn optimality_residual(&self, q: &Control) -> Result<f64> {
        let g = self.reduced_gradient(q)?;
        let z: Vec<f64> = g.iter().zip(&q.values).map(|(g, q)| g - self.alpha * q).collect();
        Ok(self.residuals(&q.values, &z).1)
    }

    /// Projected-gradient and projection-formula residuals for the adjoint trace `z`.
    fn residuals(&self, q: &[f64], z: &[f64]) -> (f64, f64) {
        let p = self.partition();
        let pg: Vec<f64> = q
            .iter()
            .zip(z)
            .map(|(&q, &z)| q - self.bounds.clamp(q - (self.alpha * q + z)))
            .collect();
        let opt: Vec<f64> = q.iter().zip(z).map(|(&q, &z)| q - self.bounds.clamp(-z / self.alpha)).collect();
        (p.weighted_norm(&pg), p.weighted_norm(&opt))
    }

    /// Objective minus `1/2 ||u_hat||^2` from `T q` and `d`.
    fn model_value(&self, q: &[f64], tq: &[f64], d: &[f64]) -> f64 {
        let p = self.partition();
        0.5 * p.weighted_dot(q, tq) + p.weighted_dot(q, d) + 0.5 * self.alpha * p.weighted_dot(q, q)
    }

    fn check_start(&self, q0: &Control) -> Result<()> {
        self.check_len(&q0.values)?;
        if !q0.is_feasible(&self.bounds) {
            return Err(Error::InvalidArgument("initial control is not admissible".into()));
        }
        Ok(())
    }

    /// The default starting point `P(0)`.
    pub fn default_start(&self) -> Control {
        self.project_admissible(&vec![0.0; self.n_intervals()])
    }

    /// Primal-dual active set method. Each outer iteration fixes the control
    /// on `{-z/alpha < q_a}` and `{-z/alpha > q_b}` and solves the reduced
    /// system on the remaining intervals by CG in the weighted inner product
    /// (relative tolerance `1e-2 * tol`).
    pub fn solve_pdas(&self, q0: &Control, tol: f64, max_outer: usize) -> Result<(Control, SolveReport)> {
        self.check_start(q0)?;
        let n = self.n_intervals();
        let steps = self.steps().to_vec();
        let d = self.data_part()?;
        let mut q = q0.values.clone();
        let mut prev_sets: Option<Vec<i8>> = None;
        let mut best = (f64::INFINITY, q.clone());
        let mut inner_total = 0;
        let mut values = Vec::new();

        for outer in 1..=max_outer {
            let tq = self.apply_state_part(&q)?;
            let z: Vec<f64> = tq.iter().zip(&d).map(|(a, b)| a + b).collect();
            let (r_pg, r_opt) = self.residuals(&q, &z);
            let res = r_pg.max(r_opt);
            if res < best.0 {
                best = (res, q.clone());
            }
            values.push(self.model_value(&q, &tq, &d));
            let sets: Vec<i8> = z
                .iter()
                .map(|&z| {
                    let w = -z / self.alpha;
                    if w > self.bounds.upper {
                        1
                    } else if w < self.bounds.lower {
                        -1
                    } else {
                        0
                    }
                })
                .collect();
            if res <= tol && prev_sets.as_ref().is_none_or(|p| *p == sets) {
                let report = SolveReport {
                    outer_iterations: outer,
                    inner_iterations: inner_total,
                    gradient_residual: r_pg,
                    optimality_residual: r_opt,
                    values,
                    active_lower: sets.iter().filter(|&&s| s < 0).count(),
                    active_upper: sets.iter().filter(|&&s| s > 0).count(),
                    trace: z,
                };
                return Ok((Control::new(q), report));
            }

            let mut next = vec![0.0; n];
            for m in 0..n {
                next[m] = match sets[m] {
                    1 => self.bounds.upper,
                    -1 => self.bounds.lower,
                    _ => 0.0,
                };
            }
            let inactive: Vec<usize> = (0..n).filter(|&m| sets[m] == 0).collect();
            if !inactive.is_empty() {
                let t_active = self.apply_state_part(&next)?;
                let rhs: Vec<f64> = inactive.iter().map(|&m| -d[m] - t_active[m]).collect();
                let k_i: Vec<f64> = inactive.iter().map(|&m| steps[m]).collect();
                let (x, iters) = self.inner_cg(&inactive, &k_i, &rhs, 1e-2 * tol)?;
                inner_total += iters;
                for (&m, v) in inactive.iter().zip(x) {
                    next[m] = v;
                }
            }
            q = next;
            prev_sets = Some(sets);
        }
        Err(Error::NonConvergence {
            iterations: max_outer,
            residual: best.0,
            best: best.1,
        })
    }

    /// CG for `((alpha I + T) x)_I = rhs` in the inner product weighted by `k`.
    fn inner_cg(&self, idx: &[usize], k: &[f64], rhs: &[f64], rel_tol: f64) -> Result<(Vec<f64>, usize)> {
        let n = self.n_intervals();
        let wdot = |a: &[f64], b: &[f64]| -> f64 { k.iter().zip(a.iter().zip(b)).map(|(k, (x, y))| k * x * y).sum() };
        let apply = |x: &[f64]| -> Result<Vec<f64>> {
            let mut full = vec![0.0; n];
            for (&m, v) in idx.iter().zip(x) {
                full[m] = *v;
            }
            let h = self.hessian_apply(&full)?;
            Ok(idx.iter().map(|&m| h[m]).collect())
        };
        let b_norm = wdot(rhs, rhs).sqrt();
        let mut x = vec![0.0; idx.len()];
        if b_norm == 0.0 {
            return Ok((x, 0));
        }
        let mut r = rhs.to_vec();
        let mut p = r.clone();
        let mut rr = wdot(&r, &r);
        let max_iter = idx.len() + 20;
        for it in 1..=max_iter {
            let hp = apply(&p)?;
            let php = wdot(&p, &hp);
            if php <= 0.0 {
                return Err(Error::SolverFailure {
                    iterations: it,
                    residual: rr.sqrt() / b_norm,
                });
            }
            let a = rr / php;
            for i in 0..x.len() {
                x[i] += a * p[i];
                r[i] -= a * hp[i];
            }
            let rr_new = wdot(&r, &r);
            if rr_new.sqrt() <= rel_tol * b_norm {
                return Ok((x, it));
            }
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..p.len() {
                p[i] = r[i] + beta * p[i];
            }
        }
        Ok((x, max_iter))
    }

    /// Projected gradient iteration along `P(-z/alpha) - q` with exact line
    /// search (the step is clipped to `[0, 1]`, which keeps iterates admissible).
    pub fn solve_projected_gradient(&self, q0: &Control, tol: f64, max_iter: usize) -> Result<(Control, SolveReport)> {
        self.check_start(q0)?;
        let p = self.partition().clone();
        let d = self.data_part()?;
        let mut q = q0.values.clone();
        let mut tq = self.apply_state_part(&q)?;
        let mut values = Vec::new();
        let mut best = (f64::INFINITY, q.clone());
        for it in 1..=max_iter {
            let z: Vec<f64> = tq.iter().zip(&d).map(|(a, b)| a + b).collect();
            let g: Vec<f64> = q.iter().zip(&z).map(|(q, z)| self.alpha * q + z).collect();
            let (r_pg, r_opt) = self.residuals(&q, &z);
            let res = r_pg.max(r_opt);
            if res < best.0 {
                best = (res, q.clone());
            }
            values.push(self.model_value(&q, &tq, &d));
            if res <= tol {
                let report = SolveReport {
                    outer_iterations: it,
                    inner_iterations: 0,
                    gradient_residual: r_pg,
                    optimality_residual: r_opt,
                    values,
                    active_lower: q.iter().filter(|&&v| v == self.bounds.lower).count(),
                    active_upper: q.iter().filter(|&&v| v == self.bounds.upper).count(),
                    trace: z,
                };
                return Ok((Control::new(q), report));
            }
            let dir: Vec<f64> = q
                .iter()
                .zip(&z)
                .map(|(&q, &z)| self.bounds.clamp(-z / self.alpha) - q)
                .collect();
            let tdir = self.apply_state_part(&dir)?;
            let hd: Vec<f64> = dir.iter().zip(&tdir).map(|(a, b)| self.alpha * a + b).collect();
            let curvature = p.weighted_dot(&dir, &hd);
            if curvature <= 0.0 {
                return Err(Error::SolverFailure {
                    iterations: it,
                    residual: res,
                });
            }
            let s = (-p.weighted_dot(&g, &dir) / curvature).clamp(0.0, 1.0);
            for m in 0..q.len() {
                q[m] = self.bounds.clamp(q[m] + s * dir[m]);
                tq[m] += s * tdir[m];
            }
        }
        Err(Error::NonConvergence {
            iterations: max_iter,
            residual: best.0,
            best: best.1,
        })
    }
}
