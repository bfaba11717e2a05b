//! Fixed diagnostic battery on small canonical instances.

use std::fmt;
use std::sync::Arc;

use crate::error::Result;
use crate::fespace::{local_mass, local_stiffness, FeSpace};
use crate::heat::{b_form, BFormMode, HeatSolver, SpaceTimeField, Trajectory};
use crate::mesh::{Mesh, Point};
use crate::ocp::OcpProblem;
use crate::quadrature::DEGREE_4;
use crate::sparse::dot;
use crate::timeline::{discretize_curve, sigma_k, Bounds, Control, Curve, TimePartition, DEFAULT_MARGIN};

/// Deliberate corruption used to show that the battery can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negate the stiffness matrix of the space used by the bilinear-form checks.
    StiffnessSign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub measured: f64,
    /// Human-readable acceptance condition, e.g. `<= 1e-10`.
    pub threshold: String,
    pub pass: bool,
}

impl Check {
    fn at_most(name: &'static str, measured: f64, limit: f64) -> Self {
        Self {
            name,
            measured,
            threshold: format!("<= {limit:e}"),
            pass: measured <= limit,
        }
    }

    fn at_least(name: &'static str, measured: f64, limit: f64) -> Self {
        Self {
            name,
            measured,
            threshold: format!(">= {limit:e}"),
            pass: measured >= limit,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{tag} {} {:.6e} {}", self.name, self.measured, self.threshold)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.checks.iter().filter(|c| !c.pass).count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

/// Linear congruential stream in [-1, 1], fixed seed per call site.
struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((self.0 >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    fn vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next()).collect()
    }

    fn trajectory(&mut self, p: &TimePartition, n: usize) -> Trajectory {
        let frames = (0..p.n_intervals()).map(|_| self.vec(n)).collect();
        Trajectory::new(p.clone(), frames).expect("consistent sizes")
    }
}

fn target() -> SpaceTimeField {
    Arc::new(|t: f64, x: Point| {
        (std::f64::consts::PI * x[0]).sin() * (std::f64::consts::PI * x[1]).sin() * (2.0 * std::f64::consts::PI * t).sin()
    })
}

/// Runs every check; failures are report content, not errors.
pub fn run_verify(fault: Option<Fault>) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    checks.extend(local_matrices());

    let mut b_space = FeSpace::new(Mesh::uniform_square(8)?);
    if fault == Some(Fault::StiffnessSign) {
        b_space.corrupt_stiffness_sign();
    }
    checks.extend(b_form_checks(&b_space)?);

    let space = FeSpace::new(Mesh::uniform_square(8)?);
    checks.push(step_residual(&space)?);
    checks.push(gradient_check(&space)?);
    checks.push(duality(&space)?);
    checks.extend(smoothed_delta()?);
    checks.extend(sigma_scaling()?);
    Ok(VerifyReport { checks })
}

/// Mass `|tau|/12 (1 + delta_ij)` and the cotangent stiffness formula on
/// arbitrary triangles.
fn local_matrices() -> Vec<Check> {
    let mut rng = Lcg(11);
    let (mut mass_dev, mut stiff_dev) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let pts: [Point; 3] = std::array::from_fn(|_| [rng.next(), rng.next()]);
        let area = 0.5 * ((pts[1][0] - pts[0][0]) * (pts[2][1] - pts[0][1]) - (pts[2][0] - pts[0][0]) * (pts[1][1] - pts[0][1]));
        if area.abs() < 1e-2 {
            continue;
        }
        let pts = if area < 0.0 { [pts[0], pts[2], pts[1]] } else { pts };
        let area = area.abs();
        let m = local_mass(&pts);
        let k = local_stiffness(&pts);
        // cot of the angle at vertex c, opposite edge (a, b)
        let cot = |c: usize| {
            let (a, b) = ((c + 1) % 3, (c + 2) % 3);
            let u = [pts[a][0] - pts[c][0], pts[a][1] - pts[c][1]];
            let v = [pts[b][0] - pts[c][0], pts[b][1] - pts[c][1]];
            (u[0] * v[0] + u[1] * v[1]) / (u[0] * v[1] - u[1] * v[0]).abs()
        };
        let k_scale = (0..3).map(|c| cot(c).abs()).fold(1.0, f64::max);
        for i in 0..3 {
            for j in 0..3 {
                let m_ref = area / 12.0 * if i == j { 2.0 } else { 1.0 };
                mass_dev = mass_dev.max((m[i][j] - m_ref).abs() / area);
                let k_ref = if i == j {
                    0.5 * (cot((i + 1) % 3) + cot((i + 2) % 3))
                } else {
                    -0.5 * cot(3 - i - j)
                };
                stiff_dev = stiff_dev.max((k[i][j] - k_ref).abs() / k_scale);
            }
        }
    }
    vec![
        Check::at_most("local_mass_oracle", mass_dev, 1e-14),
        Check::at_most("local_stiffness_oracle", stiff_dev, 1e-14),
    ]
}

fn b_form_checks(space: &FeSpace) -> Result<Vec<Check>> {
    let p = TimePartition::new(vec![0.0, 0.1, 0.25, 0.3, 0.55, 0.8, 1.0])?;
    let mut rng = Lcg(23);
    let mut agreement = 0.0f64;
    let mut coercivity = f64::INFINITY;
    for _ in 0..50 {
        let v = rng.trajectory(&p, space.n_dofs());
        let w = rng.trajectory(&p, space.n_dofs());
        let primal = b_form(space, &v, &w, BFormMode::Primal)?;
        let dual = b_form(space, &v, &w, BFormMode::Dual)?;
        agreement = agreement.max((primal - dual).abs() / primal.abs().max(dual.abs()).max(1e-300));
        let bvv = b_form(space, &v, &v, BFormMode::Primal)?;
        let grad: f64 = (0..p.n_intervals())
            .map(|m| p.steps()[m] * space.gradient_norm_sq(v.frame(m)))
            .sum();
        coercivity = coercivity.min(bvv / grad);
    }
    Ok(vec![
        Check::at_most("b_form_primal_dual", agreement, 1e-10),
        Check::at_least("b_form_coercivity_ratio", coercivity, 1.0 - 1e-12),
    ])
}

fn circle_points(space: &FeSpace, p: &TimePartition) -> Result<Vec<Point>> {
    discretize_curve(&Curve::circle_once([0.5, 0.5], 0.2, p.t_end()), p, space.mesh(), DEFAULT_MARGIN)
}

/// `(M + k_m A) U_m - M U_{m-1} - k_m q_m delta_{gamma_m}` relative to the right-hand side.
fn step_residual(space: &FeSpace) -> Result<Check> {
    let p = TimePartition::uniform(1.0, 12)?;
    let points = circle_points(space, &p)?;
    let q = Control::new(Lcg(5).vec(p.n_intervals()));
    let heat = HeatSolver::new(space, p.clone());
    let u = heat.solve_forward_source(&points, &q)?;
    let mut worst = 0.0f64;
    let zero = vec![0.0; space.n_dofs()];
    for m in 0..p.n_intervals() {
        let k = p.steps()[m];
        let prev = if m == 0 { &zero[..] } else { u.frame(m - 1) };
        let mut rhs = space.mass().spmv(prev)?;
        space.point_functional(points[m])?.add_to(&mut rhs, k * q.values[m]);
        let lhs = heat.step_matrix(m).spmv(u.frame(m))?;
        let r: f64 = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        worst = worst.max(r / dot(&rhs, &rhs).sqrt().max(1e-300));
    }
    Ok(Check::at_most("step_residual", worst, 1e-8))
}

/// Reduced gradient against central differences of the reduced functional.
fn gradient_check(space: &FeSpace) -> Result<Check> {
    let p = TimePartition::uniform(1.0, 8)?;
    let points = circle_points(space, &p)?;
    let problem = OcpProblem::new(space, p.clone(), points, 0.5, Bounds::unbounded(), Some(target()))?;
    let q = Control::new(Lcg(7).vec(p.n_intervals()));
    let g = problem.reduced_gradient(&q)?;
    let eps = 1e-3;
    let mut worst = 0.0f64;
    for m in 0..p.n_intervals() {
        let shifted = |s: f64| {
            let mut v = q.values.clone();
            v[m] += s;
            problem.reduced_value(&Control::new(v))
        };
        let fd = (shifted(eps)? - shifted(-eps)?) / (2.0 * eps);
        // the gradient is the Riesz representative in sum_m k_m a_m b_m
        worst = worst.max((fd / p.steps()[m] - g[m]).abs());
    }
    Ok(Check::at_most("gradient_central_difference", worst, 1e-6))
}

/// `sum k (T p)_m q_m = int (u(p), u(q))`: the adjoint trace is the adjoint
/// of the control-to-state map.
fn duality(space: &FeSpace) -> Result<Check> {
    let p = TimePartition::uniform(1.0, 10)?;
    let points = circle_points(space, &p)?;
    let problem = OcpProblem::new(space, p.clone(), points, 1.0, Bounds::unbounded(), None)?;
    let mut rng = Lcg(31);
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let a = rng.vec(p.n_intervals());
        let b = rng.vec(p.n_intervals());
        let lhs = p.weighted_dot(&problem.apply_state_part(&a)?, &b);
        let ua = problem.state(&Control::new(a))?;
        let ub = problem.state(&Control::new(b))?;
        let rhs: f64 = (0..p.n_intervals())
            .map(|m| Ok(p.steps()[m] * dot(&space.mass().spmv(ua.frame(m))?, ub.frame(m))))
            .sum::<Result<f64>>()?;
        worst = worst.max((lhs - rhs).abs() / rhs.abs().max(1e-300));
    }
    Ok(Check::at_most("adjoint_duality", worst, 1e-8))
}

/// Reproduction of P1 point values and `||delta||_{L^2} ~ 1/h` at a point
/// that stays a triangle centroid under uniform refinement.
fn smoothed_delta() -> Result<Vec<Check>> {
    let mut mesh = Mesh::uniform_square(2)?;
    let tri = mesh.triangle_points(0);
    let x = [(tri[0][0] + tri[1][0] + tri[2][0]) / 3.0, (tri[0][1] + tri[1][1] + tri[2][1]) / 3.0];
    let mut rng = Lcg(41);
    let mut reproduction = 0.0f64;
    let mut norms = Vec::new();
    for _ in 0..5 {
        mesh = mesh.refine_uniform();
        let space = FeSpace::new(mesh.clone());
        for y in [x, [0.3141, 0.2718], [0.71, 0.45]] {
            let delta = space.smoothed_delta(y)?;
            let v = rng.vec(space.n_dofs());
            let (t, _) = mesh.locate_point(y)?;
            let exact = space.evaluate(&v, y)?;
            let got = delta.integrate_linear(space.local_values(&v, t));
            reproduction = reproduction.max((got - exact).abs());
        }
        norms.push(space.smoothed_delta(x)?.l2_norm());
    }
    let eoc_dev = norms
        .windows(2)
        .map(|w| ((w[0] / w[1]).log2() + 1.0).abs())
        .fold(0.0, f64::max);
    Ok(vec![
        Check::at_most("smoothed_delta_reproduction", reproduction, 1e-12),
        Check::at_most("smoothed_delta_l2_eoc_deviation", eoc_dev, 0.05),
    ])
}

/// `||sigma_k^{-1}||_{L^2(I x Omega)} / sqrt(|ln h|)` over five meshes:
/// bounded, and nearly constant.
fn sigma_scaling() -> Result<Vec<Check>> {
    let p = TimePartition::uniform(1.0, 8)?;
    let mut ratios = Vec::new();
    for n in [8, 16, 32, 64, 128] {
        let mesh = Mesh::uniform_square(n)?;
        let points = discretize_curve(&Curve::circle_once([0.5, 0.5], 0.2, 1.0), &p, &mesh, DEFAULT_MARGIN)?;
        let h = mesh.h();
        let mut total = 0.0;
        for m in 0..p.n_intervals() {
            let mut space_int = 0.0;
            for t in 0..mesh.n_triangles() {
                let area = mesh.area(t);
                for (y, _, w) in DEGREE_4.map(&mesh.triangle_points(t)) {
                    space_int += area * w / sigma_k(&points, h, m, y).powi(2);
                }
            }
            total += p.steps()[m] * space_int;
        }
        ratios.push(total.sqrt() / h.ln().abs().sqrt());
    }
    let max = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(vec![
        Check::at_most("sigma_inverse_log_ratio_max", max, 4.0),
        Check::at_most("sigma_inverse_log_ratio_spread", max / min, 1.5),
    ])
}
