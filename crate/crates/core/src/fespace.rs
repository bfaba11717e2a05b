//! Continuous piecewise linear elements with homogeneous Dirichlet data.
//!
//! Only interior vertices carry degrees of freedom; DOF `i` is the hat
//! function of vertex `mesh.interior_vertices()[i]`. Mass and stiffness
//! matrices are integrated exactly and share one sparsity pattern, so that
//! `M + k A` is a value-wise combination.

use crate::error::{Error, Result};
use crate::mesh::{barycentric, Mesh, Point, LOCATE_TOL};
use crate::quadrature::TriangleRule;
use crate::sparse::{cg_solve, CgOptions, CsrMatrix};

/// Tolerance for the mass and stiffness solves inside projections.
pub const PROJECTION_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct FeSpace {
    mesh: Mesh,
    tri_dofs: Vec<[Option<usize>; 3]>,
    mass: CsrMatrix,
    stiffness: CsrMatrix,
    rule: TriangleRule,
    quadrature_order: usize,
}

impl FeSpace {
    pub fn new(mesh: Mesh) -> Self {
        Self::with_quadrature_order(mesh, 4)
    }

    pub fn with_quadrature_order(mesh: Mesh, quadrature_order: usize) -> Self {
        let tri_dofs: Vec<[Option<usize>; 3]> = mesh
            .triangles()
            .iter()
            .map(|t| t.map(|v| mesh.interior_index(v)))
            .collect();
        let n = mesh.n_interior();
        let mut mass_t = Vec::with_capacity(9 * mesh.n_triangles());
        let mut stiff_t = Vec::with_capacity(9 * mesh.n_triangles());
        for (t, dofs) in tri_dofs.iter().enumerate() {
            let pts = mesh.triangle_points(t);
            let lm = local_mass(&pts);
            let ls = local_stiffness(&pts);
            for a in 0..3 {
                let Some(i) = dofs[a] else { continue };
                for b in 0..3 {
                    let Some(j) = dofs[b] else { continue };
                    mass_t.push((i, j, lm[a][b]));
                    stiff_t.push((i, j, ls[a][b]));
                }
            }
        }
        let mass = CsrMatrix::from_triplets(n, n, &mass_t).expect("dofs in range");
        let stiffness = CsrMatrix::from_triplets(n, n, &stiff_t).expect("dofs in range");
        Self {
            mesh,
            tri_dofs,
            mass,
            stiffness,
            rule: TriangleRule::for_order(quadrature_order),
            quadrature_order,
        }
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.n_interior()
    }

    pub fn quadrature_order(&self) -> usize {
        self.quadrature_order
    }

    pub fn h(&self) -> f64 {
        self.mesh.h()
    }

    /// DOF numbers of the three vertices of triangle `t`.
    pub fn triangle_dofs(&self, t: usize) -> [Option<usize>; 3] {
        self.tri_dofs[t]
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn assemble_mass(&self) -> CsrMatrix {
        self.mass.clone()
    }

    pub fn assemble_stiffness(&self) -> CsrMatrix {
        self.stiffness.clone()
    }

    /// Flips the sign of the assembled stiffness matrix. Only used for
    /// fault injection in the diagnostics runner.
    #[doc(hidden)]
    pub fn corrupt_stiffness_sign(&mut self) {
        for v in self.stiffness.values_mut() {
            *v = -*v;
        }
    }

    /// The point-evaluation functional `chi -> chi(x)` restricted to the DOFs.
    pub fn point_functional(&self, x: Point) -> Result<PointFunctional> {
        let (triangle, lambda) = self.mesh.locate_point(x)?;
        Ok(PointFunctional {
            triangle,
            dofs: self.tri_dofs[triangle],
            weights: lambda,
        })
    }

    /// Dense vector `L_i = phi_i(x)`.
    pub fn point_load(&self, x: Point) -> Result<Vec<f64>> {
        let f = self.point_functional(x)?;
        let mut l = vec![0.0; self.n_dofs()];
        f.add_to(&mut l, 1.0);
        Ok(l)
    }

    /// `F_i = int f phi_i` by the space quadrature rule.
    pub fn assemble_load(&self, f: impl Fn(Point) -> f64) -> Vec<f64> {
        let mut load = vec![0.0; self.n_dofs()];
        for t in 0..self.mesh.n_triangles() {
            let dofs = self.tri_dofs[t];
            if dofs.iter().all(Option::is_none) {
                continue;
            }
            let pts = self.mesh.triangle_points(t);
            let area = self.mesh.area(t);
            let mut local = [0.0; 3];
            for (x, lambda, w) in self.rule.map(&pts) {
                let fw = w * f(x);
                for a in 0..3 {
                    local[a] += fw * lambda[a];
                }
            }
            for a in 0..3 {
                if let Some(i) = dofs[a] {
                    load[i] += area * local[a];
                }
            }
        }
        load
    }

    pub fn l2_project(&self, v: impl Fn(Point) -> f64) -> Result<FeFunction<'_>> {
        let rhs = self.assemble_load(v);
        let c = cg_solve(&self.mass, &rhs, &CgOptions::with_tol(PROJECTION_TOL))?.x;
        Ok(FeFunction::new(self, c))
    }

    /// Ritz projection from the gradient of the projected function.
    pub fn ritz_project(&self, grad: impl Fn(Point) -> [f64; 2]) -> Result<FeFunction<'_>> {
        let mut rhs = vec![0.0; self.n_dofs()];
        for t in 0..self.mesh.n_triangles() {
            let dofs = self.tri_dofs[t];
            let pts = self.mesh.triangle_points(t);
            let area = self.mesh.area(t);
            let gl = barycentric_gradients(&pts);
            let mut mean_grad = [0.0; 2];
            for (x, _, w) in self.rule.map(&pts) {
                let g = grad(x);
                mean_grad[0] += w * g[0];
                mean_grad[1] += w * g[1];
            }
            for a in 0..3 {
                if let Some(i) = dofs[a] {
                    rhs[i] += area * (mean_grad[0] * gl[a][0] + mean_grad[1] * gl[a][1]);
                }
            }
        }
        let c = cg_solve(&self.stiffness, &rhs, &CgOptions::with_tol(PROJECTION_TOL))?.x;
        Ok(FeFunction::new(self, c))
    }

    /// `w = Delta_h v`, i.e. the solution of `M w = -A v`.
    pub fn discrete_laplacian(&self, v: &FeFunction<'_>) -> Result<FeFunction<'_>> {
        let rhs: Vec<f64> = self.stiffness.spmv(&v.coeffs)?.iter().map(|x| -x).collect();
        let c = cg_solve(&self.mass, &rhs, &CgOptions::with_tol(PROJECTION_TOL))?.x;
        Ok(FeFunction::new(self, c))
    }

    /// One-cell P1 density reproducing point evaluation at `x` for linear
    /// functions on the cell found by point location.
    pub fn smoothed_delta(&self, x: Point) -> Result<SmoothedDelta> {
        let (triangle, lambda) = self.mesh.locate_point(x)?;
        let pts = self.mesh.triangle_points(triangle);
        let density = solve3(local_mass(&pts), lambda);
        Ok(SmoothedDelta {
            triangle,
            dofs: self.tri_dofs[triangle],
            points: pts,
            area: self.mesh.area(triangle),
            density,
        })
    }

    pub fn nodal_interpolant(&self, f: impl Fn(Point) -> f64) -> FeFunction<'_> {
        let v = self.mesh.vertices();
        let c = self.mesh.interior_vertices().iter().map(|&i| f(v[i])).collect();
        FeFunction::new(self, c)
    }

    /// Value of the finite element function with coefficients `c` at `x`.
    pub fn evaluate(&self, c: &[f64], x: Point) -> Result<f64> {
        Ok(self.point_functional(x)?.eval(c))
    }

    /// Local nodal values of `c` on triangle `t` (zero on the boundary).
    pub fn local_values(&self, c: &[f64], t: usize) -> [f64; 3] {
        self.tri_dofs[t].map(|d| d.map_or(0.0, |i| c[i]))
    }

    /// `||c||_{L^2}` through the mass matrix.
    pub fn l2_norm(&self, c: &[f64]) -> f64 {
        let mc = self.mass.spmv(c).expect("coefficient length");
        crate::sparse::dot(c, &mc).max(0.0).sqrt()
    }

    /// Exact `||c||_{L^1}` for a P1 function.
    pub fn l1_norm(&self, c: &[f64]) -> f64 {
        (0..self.mesh.n_triangles())
            .map(|t| abs_integral_linear(self.mesh.area(t), self.local_values(c, t)))
            .sum()
    }

    /// `||grad c||^2_{L^2}` summed element by element from nodal values,
    /// without going through the assembled stiffness matrix.
    pub fn gradient_norm_sq(&self, c: &[f64]) -> f64 {
        (0..self.mesh.n_triangles())
            .map(|t| {
                let pts = self.mesh.triangle_points(t);
                let g = barycentric_gradients(&pts);
                let v = self.local_values(c, t);
                let gx: f64 = (0..3).map(|a| v[a] * g[a][0]).sum();
                let gy: f64 = (0..3).map(|a| v[a] * g[a][1]).sum();
                self.mesh.area(t) * (gx * gx + gy * gy)
            })
            .sum()
    }

    /// `||u - c||_{L^2}` by the space quadrature rule.
    pub fn l2_error(&self, c: &[f64], u: impl Fn(Point) -> f64) -> f64 {
        self.integrate_elementwise(c, |diff| diff * diff, u).sqrt()
    }

    /// `||grad(u - c)||_{L^2}` by the space quadrature rule.
    pub fn h1_seminorm_error(&self, c: &[f64], grad: impl Fn(Point) -> [f64; 2]) -> f64 {
        let mut s = 0.0;
        for t in 0..self.mesh.n_triangles() {
            let pts = self.mesh.triangle_points(t);
            let g = barycentric_gradients(&pts);
            let v = self.local_values(c, t);
            let gh = [
                (0..3).map(|a| v[a] * g[a][0]).sum::<f64>(),
                (0..3).map(|a| v[a] * g[a][1]).sum::<f64>(),
            ];
            let area = self.mesh.area(t);
            for (x, _, w) in self.rule.map(&pts) {
                let ge = grad(x);
                s += area * w * ((ge[0] - gh[0]).powi(2) + (ge[1] - gh[1]).powi(2));
            }
        }
        s.sqrt()
    }

    /// `sum_tau |tau| sum_q w_q phi(u(x_q) - c(x_q))`.
    pub(crate) fn integrate_elementwise(&self, c: &[f64], phi: impl Fn(f64) -> f64, u: impl Fn(Point) -> f64) -> f64 {
        let mut s = 0.0;
        for t in 0..self.mesh.n_triangles() {
            let pts = self.mesh.triangle_points(t);
            let v = self.local_values(c, t);
            let area = self.mesh.area(t);
            for (x, l, w) in self.rule.map(&pts) {
                let ch = l[0] * v[0] + l[1] * v[1] + l[2] * v[2];
                s += area * w * phi(u(x) - ch);
            }
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct FeFunction<'a> {
    pub space: &'a FeSpace,
    pub coeffs: Vec<f64>,
}

impl<'a> FeFunction<'a> {
    pub fn new(space: &'a FeSpace, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), space.n_dofs(), "coefficient length");
        Self { space, coeffs }
    }

    pub fn eval(&self, x: Point) -> Result<f64> {
        self.space.evaluate(&self.coeffs, x)
    }
}

/// Point evaluation `chi -> chi(x)` for `chi` in the discrete space:
/// barycentric weights on the containing triangle, boundary vertices dropped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointFunctional {
    pub triangle: usize,
    pub dofs: [Option<usize>; 3],
    pub weights: [f64; 3],
}

impl PointFunctional {
    pub fn eval(&self, c: &[f64]) -> f64 {
        (0..3).map(|a| self.dofs[a].map_or(0.0, |i| self.weights[a] * c[i])).sum()
    }

    /// `rhs += scale * L`.
    pub fn add_to(&self, rhs: &mut [f64], scale: f64) {
        for a in 0..3 {
            if let Some(i) = self.dofs[a] {
                rhs[i] += scale * self.weights[a];
            }
        }
    }
}

/// P1 density supported on a single triangle with
/// `int_tau chi d = chi(x)` for every linear `chi`.
#[derive(Debug, Clone)]
pub struct SmoothedDelta {
    pub triangle: usize,
    pub dofs: [Option<usize>; 3],
    pub points: [Point; 3],
    pub area: f64,
    /// Nodal values of the density at the triangle vertices.
    pub density: [f64; 3],
}

impl SmoothedDelta {
    /// `int_tau chi d` for the linear `chi` with the given nodal values.
    pub fn integrate_linear(&self, values: [f64; 3]) -> f64 {
        let md = mat3_vec(local_mass(&self.points), self.density);
        (0..3).map(|a| md[a] * values[a]).sum()
    }

    /// `(d, phi_i)` for every DOF, i.e. the load vector of the density.
    pub fn load_vector(&self, n_dofs: usize) -> Vec<f64> {
        let md = mat3_vec(local_mass(&self.points), self.density);
        let mut l = vec![0.0; n_dofs];
        for a in 0..3 {
            if let Some(i) = self.dofs[a] {
                l[i] += md[a];
            }
        }
        l
    }

    /// Density value at `x`; zero outside the supporting triangle.
    pub fn value_at(&self, x: Point) -> f64 {
        let l = barycentric(self.points, x);
        if l.iter().any(|&v| v < -LOCATE_TOL) {
            return 0.0;
        }
        (0..3).map(|a| l[a] * self.density[a]).sum()
    }

    pub fn l1_norm(&self) -> f64 {
        abs_integral_linear(self.area, self.density)
    }

    pub fn l2_norm(&self) -> f64 {
        let md = mat3_vec(local_mass(&self.points), self.density);
        (0..3).map(|a| md[a] * self.density[a]).sum::<f64>().sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.density.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Exact P1 mass matrix on a triangle: `|tau|/12 * (1 + delta_ij)`.
pub fn local_mass(pts: &[Point; 3]) -> [[f64; 3]; 3] {
    let area = triangle_area(pts);
    std::array::from_fn(|i| std::array::from_fn(|j| if i == j { area / 6.0 } else { area / 12.0 }))
}

/// Exact P1 stiffness matrix on a triangle.
pub fn local_stiffness(pts: &[Point; 3]) -> [[f64; 3]; 3] {
    let area = triangle_area(pts);
    let g = barycentric_gradients(pts);
    std::array::from_fn(|i| std::array::from_fn(|j| area * (g[i][0] * g[j][0] + g[i][1] * g[j][1])))
}

/// Gradients of the three barycentric coordinates (constant on the triangle).
pub fn barycentric_gradients(pts: &[Point; 3]) -> [[f64; 2]; 3] {
    let two_area = 2.0 * triangle_area(pts);
    std::array::from_fn(|i| {
        let b = pts[(i + 1) % 3];
        let c = pts[(i + 2) % 3];
        [(b[1] - c[1]) / two_area, (c[0] - b[0]) / two_area]
    })
}

pub fn triangle_area(pts: &[Point; 3]) -> f64 {
    let [a, b, c] = *pts;
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// `int_tau |v|` for the linear function with nodal values `v`.
pub fn abs_integral_linear(area: f64, v: [f64; 3]) -> f64 {
    let pos = v.iter().filter(|&&x| x > 0.0).count();
    let neg = v.iter().filter(|&&x| x < 0.0).count();
    let total = area * (v[0] + v[1] + v[2]) / 3.0;
    if pos == 0 || neg == 0 {
        return total.abs();
    }
    // Cut off the corner whose sign differs from the other two.
    let lone = if pos == 1 {
        v.iter().position(|&x| x > 0.0)
    } else {
        v.iter().position(|&x| x < 0.0)
    }
    .unwrap();
    let va = v[lone];
    let (vb, vc) = (v[(lone + 1) % 3], v[(lone + 2) % 3]);
    let sb = va / (va - vb);
    let sc = va / (va - vc);
    let corner = area * sb * sc * va / 3.0;
    corner.abs() + (total - corner).abs()
}

/// Solves a 3x3 system by Gaussian elimination with partial pivoting.
pub fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for c in 0..3 {
        let p = (c..3).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..3 {
            let f = a[r][c] / a[c][c];
            for k in c..3 {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = (r + 1..3).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn mat3_vec(a: [[f64; 3]; 3], x: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| (0..3).map(|j| a[i][j] * x[j]).sum())
}

/// Exact transfer of P1 functions from a coarse mesh to a nested finer one
/// by nodal evaluation at the fine interior vertices.
#[derive(Debug, Clone)]
pub struct Prolongation {
    rows: Vec<PointFunctional>,
    n_coarse: usize,
}

impl Prolongation {
    pub fn new(coarse: &FeSpace, fine: &FeSpace) -> Result<Self> {
        let v = fine.mesh().vertices();
        let rows = fine
            .mesh()
            .interior_vertices()
            .iter()
            .map(|&i| coarse.point_functional(v[i]))
            .collect::<Result<_>>()?;
        Ok(Self {
            rows,
            n_coarse: coarse.n_dofs(),
        })
    }

    pub fn apply(&self, coarse: &[f64]) -> Result<Vec<f64>> {
        if coarse.len() != self.n_coarse {
            return Err(Error::DimensionMismatch {
                expected: self.n_coarse,
                got: coarse.len(),
            });
        }
        Ok(self.rows.iter().map(|f| f.eval(coarse)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::dot;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    const REF: [Point; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

    fn space(n: usize) -> FeSpace {
        FeSpace::new(Mesh::uniform_square(n).unwrap())
    }

    #[test]
    fn local_mass_matches_quadrature_oracle() {
        let m = local_mass(&REF);
        // order-2 rule integrates products of linears exactly
        for i in 0..3 {
            for j in 0..3 {
                let q: f64 = crate::quadrature::DEGREE_2.map(&REF).map(|(_, l, w)| 0.5 * w * l[i] * l[j]).sum();
                assert_abs_diff_eq!(m[i][j], q, epsilon = 1e-14);
            }
            assert_abs_diff_eq!(m[i].iter().sum::<f64>(), 0.5 / 3.0, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(m[0][0], 1.0 / 12.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m[0][1], 1.0 / 24.0, epsilon = 1e-14);
    }

    #[test]
    fn local_stiffness_matches_analytic_oracle() {
        let k = local_stiffness(&REF);
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(k[i][j], expect[i][j], epsilon = 1e-14);
            }
            assert_abs_diff_eq!(k[i].iter().sum::<f64>(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn single_interior_dof_entries() {
        let s = space(2);
        assert_eq!(s.n_dofs(), 1);
        assert_abs_diff_eq!(s.mass().get(0, 0), 1.0 / 8.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.stiffness().get(0, 0), 4.0, epsilon = 1e-14);
    }

    #[test]
    fn matrices_symmetric_positive_definite() {
        let s = space(6);
        assert!(s.mass().is_symmetric(1e-14));
        assert!(s.stiffness().is_symmetric(1e-14));
        let n = s.n_dofs();
        for seed in 0..10u64 {
            let v: Vec<f64> = (0..n).map(|i| ((i as u64 * 7919 + seed * 104729) % 997) as f64 / 997.0 - 0.5).collect();
            assert!(dot(&v, &s.mass().spmv(&v).unwrap()) > 0.0);
            assert!(dot(&v, &s.stiffness().spmv(&v).unwrap()) > 0.0);
        }
        assert_eq!(s.mass().row_ptr(), s.stiffness().row_ptr());
        assert_eq!(s.mass().col_idx(), s.stiffness().col_idx());
    }

    #[test]
    fn point_load_examples() {
        let s = space(4);
        let verts = s.mesh().vertices();
        let v3 = s.mesh().interior_vertices()[3];
        let l = s.point_load(verts[v3]).unwrap();
        assert_eq!(l.iter().filter(|&&x| x != 0.0).count(), 1);
        assert_abs_diff_eq!(l[3], 1.0, epsilon = 1e-15);

        let t = (0..s.mesh().n_triangles())
            .find(|&t| s.triangle_dofs(t).iter().all(Option::is_some))
            .unwrap();
        let p = s.mesh().triangle_points(t);
        let c = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
        let l = s.point_load(c).unwrap();
        for d in s.triangle_dofs(t) {
            assert_abs_diff_eq!(l[d.unwrap()], 1.0 / 3.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(l.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert!(s.point_load([1.5, 0.5]).is_err());
    }

    #[test]
    fn point_load_matches_locate_point() {
        let s = space(5);
        for &x in &[[0.31, 0.77], [0.5, 0.123], [0.9, 0.9]] {
            let (t, lambda) = s.mesh().locate_point(x).unwrap();
            let l = s.point_load(x).unwrap();
            for a in 0..3 {
                if let Some(i) = s.triangle_dofs(t)[a] {
                    assert_eq!(l[i], lambda[a]);
                }
            }
        }
    }

    #[test]
    fn load_examples() {
        let s = space(4);
        assert!(s.assemble_load(|_| 0.0).iter().all(|&v| v == 0.0));
        let ones = s.assemble_load(|_| 1.0);
        let tris = s.mesh().triangles();
        for (i, &v) in s.mesh().interior_vertices().iter().enumerate() {
            let expect: f64 = (0..tris.len()).filter(|&t| tris[t].contains(&v)).map(|t| s.mesh().area(t) / 3.0).sum();
            assert_abs_diff_eq!(ones[i], expect, epsilon = 1e-15);
        }
        // f = x on the n = 2 square: the support of the hat at (1/2,1/2) is
        // point-symmetric about that vertex, so int x phi = 1/2 * int phi
        // = 1/2 * 6 * (1/8)/3 = 1/8.
        let s2 = space(2);
        assert_abs_diff_eq!(s2.assemble_load(|p| p[0])[0], 1.0 / 8.0, epsilon = 1e-15);
    }

    #[test]
    fn projections_reproduce_discrete_functions() {
        let s = space(6);
        let v = s.nodal_interpolant(|p| p[0] * (1.0 - p[0]) * p[1]);
        let pv = s.l2_project(|x| s.evaluate(&v.coeffs, x).unwrap()).unwrap();
        for (a, b) in pv.coeffs.iter().zip(&v.coeffs) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        let rv = s
            .ritz_project(|x| {
                let (t, _) = s.mesh().locate_point(x).unwrap();
                let g = barycentric_gradients(&s.mesh().triangle_points(t));
                let vals = s.local_values(&v.coeffs, t);
                [
                    (0..3).map(|a| vals[a] * g[a][0]).sum(),
                    (0..3).map(|a| vals[a] * g[a][1]).sum(),
                ]
            })
            .unwrap();
        for (a, b) in rv.coeffs.iter().zip(&v.coeffs) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        assert!(s.l2_project(|_| 0.0).unwrap().coeffs.iter().all(|&c| c == 0.0));
        assert!(s.ritz_project(|_| [0.0, 0.0]).unwrap().coeffs.iter().all(|&c| c == 0.0));
    }

    fn bump(p: Point) -> f64 {
        (PI * p[0]).sin() * (PI * p[1]).sin()
    }

    fn bump_grad(p: Point) -> [f64; 2] {
        [
            PI * (PI * p[0]).cos() * (PI * p[1]).sin(),
            PI * (PI * p[0]).sin() * (PI * p[1]).cos(),
        ]
    }

    #[test]
    fn projection_convergence_orders() {
        let (mut l2, mut h1) = (Vec::new(), Vec::new());
        for n in [8, 16, 32] {
            let s = space(n);
            let p = s.l2_project(bump).unwrap();
            l2.push(s.l2_error(&p.coeffs, bump));
            let r = s.ritz_project(bump_grad).unwrap();
            h1.push(s.h1_seminorm_error(&r.coeffs, bump_grad));
        }
        for w in l2.windows(2) {
            assert!(((w[0] / w[1]).log2() - 2.0).abs() < 0.15, "l2 {l2:?}");
        }
        for w in h1.windows(2) {
            assert!(((w[0] / w[1]).log2() - 1.0).abs() < 0.15, "h1 {h1:?}");
        }
    }

    #[test]
    fn ritz_galerkin_orthogonality() {
        let s = space(8);
        let r = s.ritz_project(bump_grad).unwrap();
        // (grad R v, grad phi_i) - (grad v, grad phi_i) for every basis function
        let lhs = s.stiffness().spmv(&r.coeffs).unwrap();
        let mut rhs = vec![0.0; s.n_dofs()];
        for t in 0..s.mesh().n_triangles() {
            let pts = s.mesh().triangle_points(t);
            let g = barycentric_gradients(&pts);
            for (x, _, w) in crate::quadrature::DEGREE_4.map(&pts) {
                let gv = bump_grad(x);
                for a in 0..3 {
                    if let Some(i) = s.triangle_dofs(t)[a] {
                        rhs[i] += s.mesh().area(t) * w * (gv[0] * g[a][0] + gv[1] * g[a][1]);
                    }
                }
            }
        }
        for (a, b) in lhs.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn discrete_laplacian_identity_and_consistency() {
        let s = space(8);
        let zero = FeFunction::new(&s, vec![0.0; s.n_dofs()]);
        assert!(s.discrete_laplacian(&zero).unwrap().coeffs.iter().all(|&c| c == 0.0));

        let v = s.l2_project(bump).unwrap();
        let lap = s.discrete_laplacian(&v).unwrap();
        let av = s.stiffness().spmv(&v.coeffs).unwrap();
        let m_lap = s.mass().spmv(&lap.coeffs).unwrap();
        for k in 0..20 {
            let chi: Vec<f64> = (0..s.n_dofs()).map(|i| (((i + 3) * (k + 11)) % 17) as f64 - 8.0).collect();
            let lhs = -dot(&m_lap, &chi);
            let rhs = dot(&av, &chi);
            assert!((lhs - rhs).abs() <= 1e-8 * rhs.abs().max(1.0));
        }

        // -Delta bump = 2 pi^2 bump; the discrete residual shrinks with h.
        let mut res = Vec::new();
        for n in [4, 8, 16] {
            let s = space(n);
            let v = s.l2_project(bump).unwrap();
            let lap = s.discrete_laplacian(&v).unwrap();
            let r: Vec<f64> = lap.coeffs.iter().zip(&v.coeffs).map(|(l, u)| l + 2.0 * PI * PI * u).collect();
            res.push(s.l2_norm(&r));
        }
        assert!(res[1] < res[0] && res[2] < res[1], "{res:?}");
    }

    #[test]
    fn smoothed_delta_reproduces_point_values() {
        let s = space(4);
        for &x in &[[0.3, 0.6], [0.5, 0.5], [0.26, 0.71]] {
            let d = s.smoothed_delta(x).unwrap();
            assert_abs_diff_eq!(d.integrate_linear([1.0; 3]), 1.0, epsilon = 1e-12);
            let lambda = barycentric(d.points, x);
            for a in 0..3 {
                let mut e = [0.0; 3];
                e[a] = 1.0;
                assert_abs_diff_eq!(d.integrate_linear(e), lambda[a], epsilon = 1e-12);
            }
            // closed form of the dual basis: d_a = 3 (4 lambda_a - 1) / |tau|
            for a in 0..3 {
                assert_abs_diff_eq!(d.density[a], 3.0 * (4.0 * lambda[a] - 1.0) / d.area, epsilon = 1e-9);
            }
            // its load vector is the point load
            let l = s.point_load(x).unwrap();
            for (a, b) in d.load_vector(s.n_dofs()).iter().zip(&l) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn abs_integral_matches_fine_quadrature() {
        let pts = [[0.0, 0.0], [2.0, 0.0], [0.5, 1.5]];
        let area = triangle_area(&pts);
        for v in [[1.0, -2.0, 0.5], [-1.0, -1.0, 3.0], [0.0, 1.0, -1.0], [2.0, 1.0, 0.0]] {
            // subdivide 6 times and use the midpoint rule as oracle
            let m = Mesh::new(pts.to_vec(), vec![[0, 1, 2]], vec![true; 3]).unwrap();
            let mut fine = m;
            for _ in 0..6 {
                fine = fine.refine_uniform();
            }
            let oracle: f64 = (0..fine.n_triangles())
                .map(|t| {
                    let p = fine.triangle_points(t);
                    let c = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
                    let l = barycentric(pts, c);
                    fine.area(t) * (l[0] * v[0] + l[1] * v[1] + l[2] * v[2]).abs()
                })
                .sum();
            assert_abs_diff_eq!(abs_integral_linear(area, v), oracle, epsilon = 2e-3);
        }
    }

    #[test]
    fn prolongation_is_exact_on_nested_meshes() {
        let coarse = space(4);
        let fine = FeSpace::new(coarse.mesh().refine_uniform());
        let p = Prolongation::new(&coarse, &fine).unwrap();
        let v = coarse.nodal_interpolant(|x| x[0] * x[1] * (1.0 - x[0]) * (1.0 - x[1]));
        let fv = p.apply(&v.coeffs).unwrap();
        for &x in &[[0.13, 0.41], [0.77, 0.5], [0.33, 0.9]] {
            assert_abs_diff_eq!(fine.evaluate(&fv, x).unwrap(), coarse.evaluate(&v.coeffs, x).unwrap(), epsilon = 1e-14);
        }
    }
}
