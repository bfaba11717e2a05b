//! Time partitions, the curve carrying the point source, controls and the
//! regularized distance weights.
//!
//! Intervals are indexed from zero: interval `m` is `(t_m, t_{m+1}]` and a
//! piecewise constant function takes its value there from the right
//! endpoint `t_{m+1}`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};
use crate::quadrature::gauss5;

/// Number of samples used for curve checks and derivative bounds.
pub const CURVE_SAMPLES: usize = 1000;

/// Default distance kept between the curve and the boundary.
pub const DEFAULT_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct TimePartition {
    nodes: Vec<f64>,
    steps: Vec<f64>,
    kappa: f64,
}

impl TimePartition {
    /// Partition from explicit nodes `0 = t_0 < ... < t_M = T`.
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidArgument("a partition needs at least one interval".into()));
        }
        if nodes[0] != 0.0 {
            return Err(Error::InvalidArgument("partition must start at t = 0".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) || nodes.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("partition nodes must be strictly increasing".into()));
        }
        let steps: Vec<f64> = nodes.windows(2).map(|w| w[1] - w[0]).collect();
        let kappa = steps.windows(2).map(|w| w[1] / w[0]).fold(1.0, f64::max);
        Ok(Self { nodes, steps, kappa })
    }

    /// `M` equal steps of length `T / M`; node `m` is `m * T / M`.
    pub fn uniform(t_end: f64, m: usize) -> Result<Self> {
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::InvalidArgument(format!("end time must be positive, got {t_end}")));
        }
        if m == 0 {
            return Err(Error::InvalidArgument("number of time steps must be at least 1".into()));
        }
        let nodes = (0..=m).map(|i| i as f64 * t_end / m as f64).collect();
        Self::new(nodes)
    }

    /// Bisects every interval.
    pub fn refine(&self) -> Self {
        let mut nodes = Vec::with_capacity(2 * self.nodes.len() - 1);
        for w in self.nodes.windows(2) {
            nodes.push(w[0]);
            nodes.push(0.5 * (w[0] + w[1]));
        }
        nodes.push(self.t_end());
        Self::new(nodes).expect("bisection keeps nodes increasing")
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn n_intervals(&self) -> usize {
        self.steps.len()
    }

    pub fn t_end(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// Largest ratio `k_{m+1} / k_m` (one for uniform partitions).
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn max_step(&self) -> f64 {
        self.steps.iter().copied().fold(0.0, f64::max)
    }

    pub fn interval(&self, m: usize) -> (f64, f64) {
        (self.nodes[m], self.nodes[m + 1])
    }

    /// `sqrt(sum_m k_m v_m^2)`, the `L^2(I)` norm of a piecewise constant function.
    pub fn weighted_norm(&self, v: &[f64]) -> f64 {
        self.weighted_dot(v, v).sqrt()
    }

    pub fn weighted_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.steps.iter().zip(a.iter().zip(b)).map(|(k, (x, y))| k * x * y).sum()
    }

    /// True when every node of `self` is a node of `fine`.
    pub fn is_nested_in(&self, fine: &TimePartition) -> bool {
        let mut j = 0;
        self.nodes.iter().all(|t| {
            while j < fine.nodes.len() && fine.nodes[j] < *t {
                j += 1;
            }
            j < fine.nodes.len() && fine.nodes[j] == *t
        })
    }
}

/// Right-endpoint projection onto piecewise constants: interval `m` takes
/// the value `v(t_{m+1})`.
pub fn pi_k<T>(partition: &TimePartition, v: impl Fn(f64) -> T) -> Vec<T> {
    partition.nodes()[1..].iter().map(|&t| v(t)).collect()
}

/// A `C^1` path `t -> gamma(t)` for the point source.
#[derive(Clone)]
pub enum Curve {
    Fixed {
        point: Point,
    },
    /// `center + radius (cos(omega t + phase), sin(omega t + phase))`
    Circle {
        center: Point,
        radius: f64,
        omega: f64,
        phase: f64,
    },
    /// Constant-speed motion from `start` (t = 0) to `end` (t = duration).
    Segment {
        start: Point,
        end: Point,
        duration: f64,
    },
    /// `center + (ax sin(fx t + phase), ay sin(fy t))`
    Lissajous {
        center: Point,
        amplitude: [f64; 2],
        frequency: [f64; 2],
        phase: f64,
    },
    /// User-supplied path; derivatives by central differences.
    Custom(Arc<dyn Fn(f64) -> Point + Send + Sync>),
}

impl fmt::Debug for Curve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fixed { point } => f.debug_struct("Fixed").field("point", point).finish(),
            Self::Circle {
                center,
                radius,
                omega,
                phase,
            } => f
                .debug_struct("Circle")
                .field("center", center)
                .field("radius", radius)
                .field("omega", omega)
                .field("phase", phase)
                .finish(),
            Self::Segment { start, end, duration } => f
                .debug_struct("Segment")
                .field("start", start)
                .field("end", end)
                .field("duration", duration)
                .finish(),
            Self::Lissajous {
                center,
                amplitude,
                frequency,
                phase,
            } => f
                .debug_struct("Lissajous")
                .field("center", center)
                .field("amplitude", amplitude)
                .field("frequency", frequency)
                .field("phase", phase)
                .finish(),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Curve {
    /// Circle traversed once on `[0, t_end]`.
    pub fn circle_once(center: Point, radius: f64, t_end: f64) -> Self {
        Self::Circle {
            center,
            radius,
            omega: 2.0 * PI / t_end,
            phase: 0.0,
        }
    }

    pub fn eval(&self, t: f64) -> Point {
        match self {
            Self::Fixed { point } => *point,
            Self::Circle {
                center,
                radius,
                omega,
                phase,
            } => {
                let a = omega * t + phase;
                [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
            }
            Self::Segment { start, end, duration } => {
                let s = t / duration;
                [start[0] + s * (end[0] - start[0]), start[1] + s * (end[1] - start[1])]
            }
            Self::Lissajous {
                center,
                amplitude,
                frequency,
                phase,
            } => [
                center[0] + amplitude[0] * (frequency[0] * t + phase).sin(),
                center[1] + amplitude[1] * (frequency[1] * t).sin(),
            ],
            Self::Custom(f) => f(t),
        }
    }

    pub fn derivative(&self, t: f64) -> [f64; 2] {
        match self {
            Self::Fixed { .. } => [0.0, 0.0],
            Self::Circle { radius, omega, phase, .. } => {
                let a = omega * t + phase;
                [-radius * omega * a.sin(), radius * omega * a.cos()]
            }
            Self::Segment { start, end, duration } => [(end[0] - start[0]) / duration, (end[1] - start[1]) / duration],
            Self::Lissajous {
                amplitude,
                frequency,
                phase,
                ..
            } => [
                amplitude[0] * frequency[0] * (frequency[0] * t + phase).cos(),
                amplitude[1] * frequency[1] * (frequency[1] * t).cos(),
            ],
            Self::Custom(f) => {
                let e = 1e-6;
                let (a, b) = (f(t + e), f(t - e));
                [(a[0] - b[0]) / (2.0 * e), (a[1] - b[1]) / (2.0 * e)]
            }
        }
    }

    /// `max_t |gamma'(t)|` on `[0, t_end]`: exact for fixed, circle and
    /// segment curves, sampled otherwise.
    pub fn c_gamma(&self, t_end: f64) -> f64 {
        match self {
            Self::Fixed { .. } => 0.0,
            Self::Circle { radius, omega, .. } => (radius * omega).abs(),
            Self::Segment { start, end, duration } => crate::mesh::distance(*start, *end) / duration,
            Self::Lissajous { .. } | Self::Custom(_) => {
                let n = 10 * CURVE_SAMPLES;
                (0..=n)
                    .map(|i| {
                        let d = self.derivative(i as f64 * t_end / n as f64);
                        d[0].hypot(d[1])
                    })
                    .fold(0.0, f64::max)
            }
        }
    }

    /// Checks that `gamma(t)` stays inside the mesh at distance at least
    /// `margin` from the boundary, on a uniform sample of `[0, t_end]`.
    pub fn check_containment(&self, mesh: &Mesh, margin: f64, t_end: f64) -> Result<()> {
        (0..=CURVE_SAMPLES).try_for_each(|i| check_point(self, mesh, margin, i as f64 * t_end / CURVE_SAMPLES as f64))
    }
}

fn check_point(curve: &Curve, mesh: &Mesh, margin: f64, t: f64) -> Result<()> {
    let p = curve.eval(t);
    let inside = mesh.locate_point(p).is_ok();
    if !inside || mesh.distance_to_boundary(p) < margin {
        return Err(Error::CurveOutsideDomain { t, x: p[0], y: p[1] });
    }
    Ok(())
}

/// Piecewise constant curve: interval `m` is assigned `gamma(t_{m+1})`.
pub fn discretize_curve(curve: &Curve, partition: &TimePartition, mesh: &Mesh, margin: f64) -> Result<Vec<Point>> {
    curve.check_containment(mesh, margin, partition.t_end())?;
    for &t in &partition.nodes()[1..] {
        check_point(curve, mesh, margin, t)?;
    }
    Ok(pi_k(partition, |t| curve.eval(t)))
}

/// `sqrt(|x - center|^2 + h^2)`.
pub fn sigma(center: Point, h: f64, x: Point) -> f64 {
    let dx = x[0] - center[0];
    let dy = x[1] - center[1];
    (dx * dx + dy * dy + h * h).sqrt()
}

/// Weight of the discrete curve on interval `m`.
pub fn sigma_k(points: &[Point], h: f64, m: usize, x: Point) -> f64 {
    sigma(points[m], h, x)
}

/// Weight of the continuous curve at time `t`.
pub fn sigma_t(curve: &Curve, h: f64, t: f64, x: Point) -> f64 {
    sigma(curve.eval(t), h, x)
}

/// Box `[lower, upper]` for the control; either side may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower > upper || lower == f64::INFINITY || upper == f64::NEG_INFINITY {
            return Err(Error::InvalidArgument(format!("invalid control bounds [{lower}, {upper}]")));
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded() -> Self {
        Self {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.max(self.lower).min(self.upper)
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

/// Piecewise constant control, one value per interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    pub values: Vec<f64>,
}

impl Control {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(m: usize) -> Self {
        Self::constant(m, 0.0)
    }

    pub fn constant(m: usize, c: f64) -> Self {
        Self { values: vec![c; m] }
    }

    /// Interval means of `q` (five-point Gauss rule per interval), so that
    /// `k_m q_m` equals the integral of `q` over interval `m`.
    pub fn from_fn_mean(partition: &TimePartition, q: impl Fn(f64) -> f64) -> Self {
        let values = (0..partition.n_intervals())
            .map(|m| {
                let (a, b) = partition.interval(m);
                gauss5(a, b).iter().map(|(t, w)| w * q(*t)).sum::<f64>() / (b - a)
            })
            .collect();
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_feasible(&self, bounds: &Bounds) -> bool {
        self.values.iter().all(|&v| bounds.contains(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_partition_examples() {
        let p = TimePartition::uniform(1.0, 4).unwrap();
        assert_eq!(p.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(p.kappa(), 1.0);
        assert!(p.is_nested_in(&TimePartition::uniform(1.0, 8).unwrap()));
        assert!(p.is_nested_in(&p.refine()));
        assert!(!TimePartition::uniform(1.0, 3).unwrap().is_nested_in(&p));
        assert!(TimePartition::uniform(0.0, 4).is_err());
        assert!(TimePartition::uniform(1.0, 0).is_err());
    }

    #[test]
    fn doubling_nests_exactly() {
        for m in [3usize, 5, 7, 10] {
            let mut coarse = TimePartition::uniform(0.7, m).unwrap();
            for _ in 0..5 {
                let fine = TimePartition::uniform(0.7, 2 * coarse.n_intervals()).unwrap();
                assert!(coarse.is_nested_in(&fine));
                coarse = fine;
            }
        }
    }

    #[test]
    fn nonuniform_kappa() {
        let p = TimePartition::new(vec![0.0, 0.1, 0.3, 0.4]).unwrap();
        assert_abs_diff_eq!(p.kappa(), 2.0, epsilon = 1e-12);
        assert!(TimePartition::new(vec![0.0, 0.3, 0.2]).is_err());
    }

    #[test]
    fn pi_k_examples() {
        let p = TimePartition::uniform(1.0, 2).unwrap();
        assert_eq!(pi_k(&p, |t| t * t), vec![0.25, 1.0]);
        assert_eq!(pi_k(&p, |_| 3.0), vec![3.0, 3.0]);
        // right-continuous piecewise constant on the same partition
        let vals = [1.5, -2.0];
        let pc = |t: f64| if t <= 0.5 { vals[0] } else { vals[1] };
        assert_eq!(pi_k(&p, pc), vals.to_vec());
    }

    #[test]
    fn discretize_fixed_and_circle() {
        let mesh = Mesh::uniform_square(4).unwrap();
        let p = TimePartition::uniform(1.0, 8).unwrap();
        let fixed = discretize_curve(&Curve::Fixed { point: [0.4, 0.6] }, &p, &mesh, DEFAULT_MARGIN).unwrap();
        assert!(fixed.iter().all(|x| *x == [0.4, 0.6]));

        let c = Curve::circle_once([0.5, 0.5], 0.2, 1.0);
        let pts = discretize_curve(&c, &p, &mesh, DEFAULT_MARGIN).unwrap();
        for (m, x) in pts.iter().enumerate() {
            let t = (m + 1) as f64 / 8.0;
            assert_abs_diff_eq!(x[0], 0.5 + 0.2 * (2.0 * PI * t).cos(), epsilon = 1e-15);
            assert_abs_diff_eq!(x[1], 0.5 + 0.2 * (2.0 * PI * t).sin(), epsilon = 1e-15);
        }
    }

    #[test]
    fn discrete_curve_error_bounded_by_speed_times_step() {
        let mesh = Mesh::uniform_square(4).unwrap();
        let curves = [
            Curve::circle_once([0.5, 0.5], 0.2, 1.0),
            Curve::Segment {
                start: [0.2, 0.3],
                end: [0.8, 0.6],
                duration: 1.0,
            },
            Curve::Lissajous {
                center: [0.5, 0.5],
                amplitude: [0.3, 0.2],
                frequency: [2.0 * PI, 4.0 * PI],
                phase: 0.3,
            },
        ];
        for curve in &curves {
            let p = TimePartition::uniform(1.0, 16).unwrap();
            let pts = discretize_curve(curve, &p, &mesh, DEFAULT_MARGIN).unwrap();
            let bound = curve.c_gamma(1.0) * p.max_step() + 1e-12;
            for m in 0..16 {
                let (a, b) = p.interval(m);
                for s in 0..=50 {
                    let t = a + (b - a) * s as f64 / 50.0;
                    let g = curve.eval(t);
                    assert!(crate::mesh::distance(g, pts[m]) <= bound, "{curve:?} t={t}");
                }
            }
        }
    }

    #[test]
    fn c_gamma_matches_sampling() {
        let curves = [
            Curve::circle_once([0.5, 0.5], 0.2, 1.0),
            Curve::Fixed { point: [0.5, 0.5] },
            Curve::Segment {
                start: [0.2, 0.3],
                end: [0.8, 0.6],
                duration: 2.0,
            },
            Curve::Custom(Arc::new(|t: f64| [0.5 + 0.1 * t * t, 0.5])),
        ];
        for c in &curves {
            let sampled = (0..=CURVE_SAMPLES)
                .map(|i| {
                    let d = c.derivative(i as f64 / CURVE_SAMPLES as f64);
                    d[0].hypot(d[1])
                })
                .fold(0.0, f64::max);
            let exact = c.c_gamma(1.0);
            assert!((sampled - exact).abs() <= 0.01 * exact.max(1e-12), "{c:?}: {sampled} vs {exact}");
        }
    }

    #[test]
    fn containment_violation_reported() {
        let mesh = Mesh::uniform_square(4).unwrap();
        let p = TimePartition::uniform(1.0, 4).unwrap();
        let c = Curve::circle_once([0.5, 0.5], 0.45, 1.0);
        assert!(matches!(
            discretize_curve(&c, &p, &mesh, DEFAULT_MARGIN),
            Err(Error::CurveOutsideDomain { .. })
        ));
        let outside = Curve::Fixed { point: [1.5, 0.5] };
        assert!(discretize_curve(&outside, &p, &mesh, 0.0).is_err());
    }

    #[test]
    fn sigma_examples() {
        let pts = [[0.5, 0.5], [0.0, 0.0]];
        assert_eq!(sigma_k(&pts, 0.1, 0, [0.5, 0.5]), 0.1);
        assert_abs_diff_eq!(sigma_k(&pts, 4.0, 1, [3.0, 0.0]), 5.0, epsilon = 1e-15);
    }

    #[test]
    fn sigma_lipschitz_in_time_and_gradient_bound() {
        let c = Curve::circle_once([0.5, 0.5], 0.2, 1.0);
        let cg = c.c_gamma(1.0);
        let h = 0.05;
        let pts = pi_k(&TimePartition::uniform(1.0, 10).unwrap(), |t| c.eval(t));
        for i in 0..40 {
            let x = [0.05 + 0.9 * ((i * 7) % 40) as f64 / 40.0, 0.05 + 0.9 * ((i * 13) % 40) as f64 / 40.0];
            for j in 0..20 {
                let (t, s) = (j as f64 / 20.0, (j as f64 + 0.37) / 20.0);
                assert!((sigma_t(&c, h, t, x) - sigma_t(&c, h, s, x)).abs() <= cg * (t - s).abs() + 1e-15);
            }
            for m in 0..10 {
                let e = 1e-6;
                let gx = (sigma_k(&pts, h, m, [x[0] + e, x[1]]) - sigma_k(&pts, h, m, [x[0] - e, x[1]])) / (2.0 * e);
                let gy = (sigma_k(&pts, h, m, [x[0], x[1] + e]) - sigma_k(&pts, h, m, [x[0], x[1] - e])) / (2.0 * e);
                assert!(gx.hypot(gy) <= 1.0 + 1e-6);
            }
        }
    }

    #[test]
    fn bounds_and_controls() {
        let b = Bounds::new(0.0, 1.0).unwrap();
        assert_eq!(b.clamp(1.5), 1.0);
        assert_eq!(b.clamp(-0.3), 0.0);
        assert_eq!(b.clamp(0.4), 0.4);
        assert_eq!(Bounds::unbounded().clamp(-7.0), -7.0);
        assert!(Bounds::new(1.0, 0.0).is_err());
        assert!(Bounds::new(0.5, 0.5).is_ok());

        let p = TimePartition::uniform(1.0, 4).unwrap();
        let q = Control::from_fn_mean(&p, |t| 3.0 * t * t);
        // interval means of 3 t^2: (b^3 - a^3) / (b - a)
        for m in 0..4 {
            let (a, b) = p.interval(m);
            assert_abs_diff_eq!(q.values[m], (b * b * b - a * a * a) / (b - a), epsilon = 1e-14);
        }
        assert!(Control::constant(4, 0.5).is_feasible(&b));
        assert!(!Control::constant(4, 1.5).is_feasible(&b));
    }
}
