//! Conforming triangulations of convex polygons.
//!
//! Vertices carry a boundary flag; interior vertices are numbered
//! consecutively (in vertex order) and become the degrees of freedom of the
//! homogeneous Dirichlet P1 space.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::OnceLock;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Tolerance on barycentric coordinates used by point location.
pub const LOCATE_TOL: f64 = 1e-12;

/// Meshes below this size are searched by a plain scan.
const BUCKET_THRESHOLD: usize = 64;

#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    interior_index: Vec<Option<usize>>,
    interior_vertices: Vec<usize>,
    boundary_edges: Vec<[usize; 2]>,
    h: f64,
    grid: OnceLock<BucketGrid>,
}

impl Mesh {
    /// Builds a mesh from raw data and checks orientation, conformity and the
    /// consistency of the boundary flags with the mesh topology.
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>, boundary: Vec<bool>) -> Result<Self> {
        if boundary.len() != vertices.len() {
            return Err(Error::DimensionMismatch {
                expected: vertices.len(),
                got: boundary.len(),
            });
        }
        if triangles.is_empty() {
            return Err(Error::InvalidArgument("mesh has no triangles".into()));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::InvalidArgument(format!("triangle {t} references a missing vertex")));
            }
            if signed_area(&vertices, tri) <= 0.0 {
                return Err(Error::InvalidArgument(format!("triangle {t} is not counterclockwise")));
            }
        }

        // Directed edge counts: an interior edge must appear once in each direction.
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &triangles {
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                *directed.entry((a, b)).or_default() += 1;
            }
        }
        let mut boundary_edges = Vec::new();
        let mut on_boundary_edge = vec![false; vertices.len()];
        for tri in &triangles {
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                if directed[&(a, b)] > 1 {
                    return Err(Error::InvalidArgument(format!("edge ({a}, {b}) is shared with equal orientation")));
                }
                if !directed.contains_key(&(b, a)) {
                    boundary_edges.push([a, b]);
                    on_boundary_edge[a] = true;
                    on_boundary_edge[b] = true;
                }
            }
        }
        if let Some(v) = (0..vertices.len()).find(|&v| on_boundary_edge[v] != boundary[v]) {
            return Err(Error::InvalidArgument(format!(
                "boundary flag of vertex {v} disagrees with the mesh topology"
            )));
        }

        let mut interior_index = vec![None; vertices.len()];
        let mut interior_vertices = Vec::new();
        for v in 0..vertices.len() {
            if !boundary[v] {
                interior_index[v] = Some(interior_vertices.len());
                interior_vertices.push(v);
            }
        }

        let h = triangles
            .iter()
            .flat_map(|tri| (0..3).map(move |e| (tri[e], tri[(e + 1) % 3])))
            .map(|(a, b)| distance(vertices[a], vertices[b]))
            .fold(0.0, f64::max);

        Ok(Self {
            vertices,
            triangles,
            boundary,
            interior_index,
            interior_vertices,
            boundary_edges,
            h,
            grid: OnceLock::new(),
        })
    }

    /// Unit square split into `n x n` cells, each cut along the diagonal
    /// from its lower-left to its upper-right corner.
    pub fn uniform_square(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("square mesh needs n >= 1".into()));
        }
        let np = n + 1;
        let mut vertices = Vec::with_capacity(np * np);
        let mut boundary = Vec::with_capacity(np * np);
        for j in 0..np {
            for i in 0..np {
                vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
                boundary.push(i == 0 || j == 0 || i == n || j == n);
            }
        }
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let v00 = i + j * np;
                let v10 = v00 + 1;
                let v01 = v00 + np;
                let v11 = v01 + 1;
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        Self::new(vertices, triangles, boundary)
    }

    /// Quadrisection of every triangle through its edge midpoints. Parent
    /// vertices keep their indices and coordinates.
    pub fn refine_uniform(&self) -> Self {
        let mut vertices = self.vertices.clone();
        let mut boundary = self.boundary.clone();
        let boundary_edges: std::collections::HashSet<(usize, usize)> = self
            .boundary_edges
            .iter()
            .map(|&[a, b]| (a.min(b), a.max(b)))
            .collect();
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Point>, boundary: &mut Vec<bool>| {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let (pa, pb) = (vertices[a], vertices[b]);
                vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                boundary.push(boundary_edges.contains(&key));
                vertices.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for &[a, b, c] in &self.triangles {
            let ab = midpoint(a, b, &mut vertices, &mut boundary);
            let bc = midpoint(b, c, &mut vertices, &mut boundary);
            let ca = midpoint(c, a, &mut vertices, &mut boundary);
            triangles.push([a, ab, ca]);
            triangles.push([ab, b, bc]);
            triangles.push([ca, bc, c]);
            triangles.push([ab, bc, ca]);
        }
        Self::new(vertices, triangles, boundary).expect("refinement of a valid mesh is valid")
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    /// Interior-DOF number of vertex `v`, if it is interior.
    pub fn interior_index(&self, v: usize) -> Option<usize> {
        self.interior_index[v]
    }

    /// Vertex index of each interior DOF.
    pub fn interior_vertices(&self) -> &[usize] {
        &self.interior_vertices
    }

    pub fn n_interior(&self) -> usize {
        self.interior_vertices.len()
    }

    pub fn boundary_edges(&self) -> &[[usize; 2]] {
        &self.boundary_edges
    }

    /// Maximal edge length.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self, t: usize) -> f64 {
        signed_area(&self.vertices, &self.triangles[t])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.area(t)).sum()
    }

    /// Largest value of `h / |tau|^(1/2)` over the mesh.
    pub fn quasi_uniformity(&self) -> f64 {
        (0..self.n_triangles())
            .map(|t| self.h / self.area(t).sqrt())
            .fold(0.0, f64::max)
    }

    /// Distance from `x` to the boundary polygon.
    pub fn distance_to_boundary(&self, x: Point) -> f64 {
        self.boundary_edges
            .iter()
            .map(|&[a, b]| segment_distance(x, self.vertices[a], self.vertices[b]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Finds the lowest-indexed triangle containing `x` and the barycentric
    /// coordinates of `x` with respect to its vertices.
    pub fn locate_point(&self, x: Point) -> Result<(usize, [f64; 3])> {
        if !x[0].is_finite() || !x[1].is_finite() {
            return Err(Error::PointOutsideDomain { x: x[0], y: x[1] });
        }
        let found = if self.triangles.len() < BUCKET_THRESHOLD {
            (0..self.triangles.len()).find_map(|t| self.contains(t, x))
        } else {
            let grid = self.grid.get_or_init(|| BucketGrid::new(self));
            grid.candidates(x)
                .and_then(|cands| cands.iter().find_map(|&t| self.contains(t as usize, x)))
        };
        found.ok_or(Error::PointOutsideDomain { x: x[0], y: x[1] })
    }

    /// Barycentric coordinates of `x` in triangle `t` (no containment check).
    pub fn barycentric(&self, t: usize, x: Point) -> [f64; 3] {
        barycentric(self.triangle_points(t), x)
    }

    fn contains(&self, t: usize, x: Point) -> Option<(usize, [f64; 3])> {
        let lambda = self.barycentric(t, x);
        lambda.iter().all(|&l| l >= -LOCATE_TOL).then_some((t, lambda))
    }

    /// Plain-text export: `mesh v1 <nv> <nt>`, then `x y flag` per vertex,
    /// then `i j k` per triangle.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mesh v1 {} {}", self.n_vertices(), self.n_triangles());
        for (p, &b) in self.vertices.iter().zip(&self.boundary) {
            let _ = writeln!(s, "{} {} {}", p[0], p[1], u8::from(b));
        }
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, message: &str| Error::Format {
            what: "mesh",
            line,
            message: message.to_string(),
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty input"))?;
        let head: Vec<&str> = header.split_whitespace().collect();
        if head.len() != 4 || head[0] != "mesh" || head[1] != "v1" {
            return Err(bad(1, "expected `mesh v1 <n_vertices> <n_triangles>`"));
        }
        let nv: usize = head[2].parse().map_err(|_| bad(1, "bad vertex count"))?;
        let nt: usize = head[3].parse().map_err(|_| bad(1, "bad triangle count"))?;

        let mut vertices = Vec::with_capacity(nv);
        let mut boundary = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (i, line) = lines.next().ok_or_else(|| bad(0, "missing vertex lines"))?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad(i + 1, "expected `x y boundary_flag`"));
            }
            let x = f[0].parse().map_err(|_| bad(i + 1, "bad x"))?;
            let y = f[1].parse().map_err(|_| bad(i + 1, "bad y"))?;
            let flag = match f[2] {
                "0" => false,
                "1" => true,
                _ => return Err(bad(i + 1, "boundary flag must be 0 or 1")),
            };
            vertices.push([x, y]);
            boundary.push(flag);
        }
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let (i, line) = lines.next().ok_or_else(|| bad(0, "missing triangle lines"))?;
            let idx: Vec<usize> = line
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| bad(i + 1, "bad vertex index")))
                .collect::<Result<_>>()?;
            if idx.len() != 3 {
                return Err(bad(i + 1, "expected `i j k`"));
            }
            triangles.push([idx[0], idx[1], idx[2]]);
        }
        if let Some((i, _)) = lines.next() {
            return Err(bad(i + 1, "trailing data"));
        }
        Self::new(vertices, triangles, boundary)
    }
}

/// Uniform grid of buckets over the bounding box. Each bucket lists, in
/// increasing order, the triangles whose (slightly inflated) bounding box
/// overlaps it, so the first hit is the lowest-indexed containing triangle.
#[derive(Debug, Clone)]
struct BucketGrid {
    origin: Point,
    cell: [f64; 2],
    dims: [usize; 2],
    start: Vec<u32>,
    items: Vec<u32>,
}

impl BucketGrid {
    fn new(mesh: &Mesh) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &mesh.vertices {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let side = ((mesh.n_triangles() as f64 / 2.0).sqrt().ceil() as usize).max(1);
        let dims = [side, side];
        let cell = [
            ((hi[0] - lo[0]) / side as f64).max(f64::MIN_POSITIVE),
            ((hi[1] - lo[1]) / side as f64).max(f64::MIN_POSITIVE),
        ];
        let pad = 1e-9 * (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let clamp = |v: f64, d: usize| -> usize { (((v - lo[d]) / cell[d]).floor().max(0.0) as usize).min(dims[d] - 1) };

        let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); side * side];
        for t in 0..mesh.n_triangles() {
            let pts = mesh.triangle_points(t);
            let bx0 = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min) - pad;
            let bx1 = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max) + pad;
            let by0 = pts.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min) - pad;
            let by1 = pts.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max) + pad;
            for j in clamp(by0, 1)..=clamp(by1, 1) {
                for i in clamp(bx0, 0)..=clamp(bx1, 0) {
                    buckets[i + j * side].push(t as u32);
                }
            }
        }
        let mut start = Vec::with_capacity(buckets.len() + 1);
        let mut items = Vec::new();
        start.push(0);
        for b in buckets {
            items.extend(b);
            start.push(items.len() as u32);
        }
        Self {
            origin: lo,
            cell,
            dims,
            start,
            items,
        }
    }

    fn candidates(&self, x: Point) -> Option<&[u32]> {
        let mut idx = [0usize; 2];
        for d in 0..2 {
            let extent = self.cell[d] * self.dims[d] as f64;
            let rel = x[d] - self.origin[d];
            if rel < -1e-9 * extent.max(1.0) || rel > extent * (1.0 + 1e-9) + 1e-12 {
                return None;
            }
            idx[d] = ((rel / self.cell[d]).floor().max(0.0) as usize).min(self.dims[d] - 1);
        }
        let b = idx[0] + idx[1] * self.dims[0];
        Some(&self.items[self.start[b] as usize..self.start[b + 1] as usize])
    }
}

pub fn signed_area(vertices: &[Point], tri: &[usize; 3]) -> f64 {
    let [a, b, c] = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

pub fn barycentric(pts: [Point; 3], x: Point) -> [f64; 3] {
    let [a, b, c] = pts;
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let l1 = ((x[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (x[1] - a[1])) / det;
    let l2 = ((b[0] - a[0]) * (x[1] - a[1]) - (x[0] - a[0]) * (b[1] - a[1])) / det;
    [1.0 - l1 - l2, l1, l2]
}

pub fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn segment_distance(x: Point, a: Point, b: Point) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let s = (((x[0] - a[0]) * d[0] + (x[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
    distance(x, [a[0] + s * d[0], a[1] + s * d[1]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn square_counts() {
        let m = Mesh::uniform_square(1).unwrap();
        assert_eq!((m.n_vertices(), m.n_triangles()), (4, 2));
        assert_eq!(m.n_interior(), 0);

        let m = Mesh::uniform_square(2).unwrap();
        assert_eq!((m.n_vertices(), m.n_triangles()), (9, 8));
        assert_eq!(m.n_interior(), 1);
        assert_eq!(m.vertices()[m.interior_vertices()[0]], [0.5, 0.5]);
    }

    #[test]
    fn square_h_matches_brute_force_edge_scan() {
        let m = Mesh::uniform_square(2).unwrap();
        let mut hmax: f64 = 0.0;
        for t in 0..m.n_triangles() {
            let p = m.triangle_points(t);
            for i in 0..3 {
                for j in 0..3 {
                    hmax = hmax.max(distance(p[i], p[j]));
                }
            }
        }
        assert_abs_diff_eq!(hmax, 2f64.sqrt() / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.h(), hmax, epsilon = 1e-15);
    }

    #[test]
    fn zero_cells_rejected() {
        assert!(matches!(Mesh::uniform_square(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn refinement_halves_h_and_nests() {
        let m1 = Mesh::uniform_square(1).unwrap();
        let r = m1.refine_uniform();
        assert_eq!(r.n_triangles(), 8);
        assert_eq!(r.n_vertices(), Mesh::uniform_square(2).unwrap().n_vertices());
        assert_eq!(r.h(), m1.h() / 2.0);
        assert_eq!(&r.vertices()[..4], m1.vertices());
        // the diagonal midpoint is interior, edge midpoints are boundary
        let center = r.vertices().iter().position(|p| *p == [0.5, 0.5]).unwrap();
        assert!(!r.is_boundary(center));
        assert_eq!(r.n_interior(), 1);

        let r2 = Mesh::uniform_square(2).unwrap().refine_uniform();
        assert_eq!(r2.h(), 2f64.sqrt() / 4.0);
    }

    #[test]
    fn refined_boundary_flags_match_geometry() {
        let m = Mesh::uniform_square(3).unwrap().refine_uniform().refine_uniform();
        for (p, &b) in m.vertices().iter().zip(m.boundary_flags()) {
            let geometric = p[0] == 0.0 || p[1] == 0.0 || p[0] == 1.0 || p[1] == 1.0;
            assert_eq!(b, geometric, "vertex {p:?}");
        }
        assert_abs_diff_eq!(m.total_area(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn quasi_uniformity_constant_across_refinements() {
        let mut m = Mesh::uniform_square(2).unwrap();
        let c0 = m.quasi_uniformity();
        for _ in 0..3 {
            m = m.refine_uniform();
            assert_abs_diff_eq!(m.quasi_uniformity(), c0, epsilon = 1e-9);
        }
    }

    #[test]
    fn locate_vertex_centroid_and_outside() {
        let m = Mesh::uniform_square(2).unwrap();
        let (t, l) = m.locate_point([0.5, 0.5]).unwrap();
        let p = m.triangle_points(t);
        let k = (0..3).find(|&i| p[i] == [0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(l[k], 1.0, epsilon = 1e-15);

        let c = m.triangle_points(0);
        let centroid = [(c[0][0] + c[1][0] + c[2][0]) / 3.0, (c[0][1] + c[1][1] + c[2][1]) / 3.0];
        let (t, l) = m.locate_point(centroid).unwrap();
        assert_eq!(t, 0);
        for v in l {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
        assert!(matches!(m.locate_point([2.0, 2.0]), Err(Error::PointOutsideDomain { .. })));
    }

    #[test]
    fn shared_edge_tie_break_is_lowest_index() {
        // (0.25, 0.25) lies on the diagonal shared by triangles 0 and 1.
        let m = Mesh::uniform_square(2).unwrap();
        assert_eq!(m.locate_point([0.25, 0.25]).unwrap().0, 0);
    }

    #[test]
    fn bucket_search_agrees_with_scan() {
        let m = Mesh::uniform_square(16).unwrap();
        assert!(m.n_triangles() >= BUCKET_THRESHOLD);
        for i in 0..=40 {
            for j in 0..=40 {
                let x = [i as f64 / 40.0, j as f64 / 40.0];
                let scan = (0..m.n_triangles()).find_map(|t| m.contains(t, x)).map(|r| r.0);
                assert_eq!(m.locate_point(x).ok().map(|r| r.0), scan, "at {x:?}");
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let m = Mesh::uniform_square(3).unwrap().refine_uniform();
        let back = Mesh::from_text(&m.to_text()).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.triangles(), m.triangles());
        assert_eq!(back.boundary_flags(), m.boundary_flags());
    }

    #[test]
    fn inconsistent_boundary_flags_rejected() {
        let m = Mesh::uniform_square(2).unwrap();
        let mut flags = m.boundary_flags().to_vec();
        flags[4] = true;
        assert!(Mesh::new(m.vertices().to_vec(), m.triangles().to_vec(), flags).is_err());
    }

    #[test]
    fn clockwise_triangle_rejected() {
        let v = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(Mesh::new(v, vec![[0, 2, 1]], vec![true; 3]).is_err());
    }
}
