//! Quadrature rules on the reference triangle and on intervals.

use crate::mesh::Point;

/// A rule on a triangle, given in barycentric coordinates with weights
/// summing to one (multiply by the area).
#[derive(Debug, Clone, Copy)]
pub struct TriangleRule {
    pub points: &'static [[f64; 3]],
    pub weights: &'static [f64],
    pub degree: usize,
}

const A4: f64 = 0.445_948_490_915_965;
const B4: f64 = 0.091_576_213_509_771;
const WA4: f64 = 0.223_381_589_678_011;
const WB4: f64 = 0.109_951_743_655_322;

/// Six-point rule exact for polynomials of degree 4.
pub const DEGREE_4: TriangleRule = TriangleRule {
    points: &[
        [A4, A4, 1.0 - 2.0 * A4],
        [A4, 1.0 - 2.0 * A4, A4],
        [1.0 - 2.0 * A4, A4, A4],
        [B4, B4, 1.0 - 2.0 * B4],
        [B4, 1.0 - 2.0 * B4, B4],
        [1.0 - 2.0 * B4, B4, B4],
    ],
    weights: &[WA4, WA4, WA4, WB4, WB4, WB4],
    degree: 4,
};

/// Edge-midpoint rule, exact for quadratics.
pub const DEGREE_2: TriangleRule = TriangleRule {
    points: &[[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]],
    weights: &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
    degree: 2,
};

impl TriangleRule {
    pub fn for_order(order: usize) -> Self {
        if order <= 2 {
            DEGREE_2
        } else {
            DEGREE_4
        }
    }

    /// Physical quadrature points and barycentric coordinates on `pts`.
    pub fn map(&self, pts: &[Point; 3]) -> impl Iterator<Item = (Point, [f64; 3], f64)> + '_ {
        let pts = *pts;
        self.points.iter().zip(self.weights).map(move |(l, &w)| {
            let x = [
                l[0] * pts[0][0] + l[1] * pts[1][0] + l[2] * pts[2][0],
                l[0] * pts[0][1] + l[1] * pts[1][1] + l[2] * pts[2][1],
            ];
            (x, *l, w)
        })
    }
}

/// Two-point Gauss-Legendre nodes and weights on `[a, b]`.
pub fn gauss2(a: f64, b: f64) -> [(f64, f64); 2] {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let s = r / 3f64.sqrt();
    [(c - s, r), (c + s, r)]
}

/// Five-point Gauss-Legendre nodes and weights on `[a, b]`.
pub fn gauss5(a: f64, b: f64) -> [(f64, f64); 5] {
    const X: [f64; 5] = [
        -0.906_179_845_938_663_99,
        -0.538_469_310_105_683_09,
        0.0,
        0.538_469_310_105_683_09,
        0.906_179_845_938_663_99,
    ];
    const W: [f64; 5] = [
        0.236_926_885_056_189_09,
        0.478_628_670_499_366_47,
        128.0 / 225.0,
        0.478_628_670_499_366_47,
        0.236_926_885_056_189_09,
    ];
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    std::array::from_fn(|i| (c + r * X[i], r * W[i]))
}
