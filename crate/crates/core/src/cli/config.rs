//! INI run configuration.
//!
//! Every key is optional; missing keys take the defaults below and are
//! remembered so that output metadata can list them as tool-chosen.
//! [`Config::to_ini`] writes the normal form: every section and key in a
//! fixed order with explicit values.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use ini::Ini;

use super::expr::Expression;
use crate::error::{Error, Result};
use crate::heat::SpaceTimeField;
use crate::timeline::{Bounds, Curve, TimePartition, DEFAULT_MARGIN};

/// How the number of time steps grows with the space level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// `k ~ h^2`: M is multiplied by 4 per level.
    H2,
    /// `k ~ h`: M is doubled per level.
    H1,
}

impl Coupling {
    pub fn factor(self) -> usize {
        match self {
            Self::H2 => 4,
            Self::H1 => 2,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::H2 => "h2",
            Self::H1 => "h1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Pdas,
    ProjectedGradient,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Self::Pdas => "pdas",
            Self::ProjectedGradient => "pg",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CurveSpec {
    Fixed { x0: f64, y0: f64 },
    Circle { cx: f64, cy: f64, radius: f64, omega: f64, phase: f64 },
    Segment { x0: f64, y0: f64, x1: f64, y1: f64 },
    Lissajous { cx: f64, cy: f64, ax: f64, ay: f64, fx: f64, fy: f64, phase: f64 },
    Expr { x_expr: String, y_expr: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// Mesh subdivisions per side on the coarsest level.
    pub n: usize,
    /// Number of study levels.
    pub levels: usize,
    /// Time steps on the coarsest level.
    pub m: usize,
    pub t_end: f64,
    pub coupling: Coupling,
    pub alpha: f64,
    pub qa: f64,
    pub qb: f64,
    /// Fixed control `q(t)`; when set, studies run the forward problem only.
    pub q_expr: Option<String>,
    pub curve: CurveSpec,
    pub margin: f64,
    pub uhat_expr: String,
    /// Right-hand side `f(t,x,y)`; when set, studies solve the heat equation
    /// with this source instead of the point source.
    pub f_expr: Option<String>,
    /// Exact solution for studies with `f_expr`; a fine reference is used otherwise.
    pub exact_expr: Option<String>,
    pub method: Method,
    pub tol: f64,
    pub max_outer: usize,
    pub extra_levels: usize,
    pub output_dir: Option<PathBuf>,
    /// Record wall-clock times in the study table.
    pub timings: bool,
    /// `section.key` names that were absent and took their default.
    pub defaulted: Vec<String>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            n: 8,
            levels: 3,
            m: 32,
            t_end: 1.0,
            coupling: Coupling::H2,
            alpha: 1.0,
            qa: f64::NEG_INFINITY,
            qb: f64::INFINITY,
            q_expr: None,
            curve: CurveSpec::Fixed { x0: 0.5, y0: 0.5 },
            margin: DEFAULT_MARGIN,
            uhat_expr: "0".into(),
            f_expr: None,
            exact_expr: None,
            method: Method::Pdas,
            tol: crate::ocp::DEFAULT_TOL,
            max_outer: crate::ocp::DEFAULT_MAX_OUTER,
            extra_levels: 2,
            output_dir: None,
            timings: true,
            defaulted: Vec::new(),
        }
    }
}

/// Accepted keys per section.
const KEYS: &[(&str, &[&str])] = &[
    ("domain", &["n", "levels"]),
    ("time", &["M", "T", "coupling"]),
    ("control", &["alpha", "qa", "qb", "q_expr"]),
    (
        "curve",
        &[
            "kind", "x0", "y0", "x1", "y1", "cx", "cy", "radius", "omega", "phase", "ax", "ay", "fx", "fy", "x_expr",
            "y_expr", "margin",
        ],
    ),
    ("data", &["uhat_expr", "f_expr", "exact_expr"]),
    ("solver", &["method", "tol", "max_outer"]),
    ("reference", &["extra_levels"]),
    ("output", &["dir", "timings"]),
];

struct Reader<'a> {
    ini: &'a Ini,
    defaulted: Vec<String>,
}

impl Reader<'_> {
    fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.ini.section(Some(section)).and_then(|s| s.get(key)).map(str::trim)
    }

    fn parse<T: std::str::FromStr>(&mut self, section: &str, key: &str, default: T) -> Result<T> {
        match self.raw(section, key) {
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("[{section}] {key}: cannot parse '{v}'"))),
            None => {
                self.defaulted.push(format!("{section}.{key}"));
                Ok(default)
            }
        }
    }

    fn string(&mut self, section: &str, key: &str) -> Option<String> {
        self.raw(section, key).map(str::to_string)
    }
}

impl Config {
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(Error::Config(format!("key '{k}' outside of a section")));
                }
                continue;
            };
            let Some((_, keys)) = KEYS.iter().find(|(s, _)| *s == section) else {
                return Err(Error::Config(format!("unknown section [{section}]")));
            };
            for (k, _) in props.iter() {
                if !keys.contains(&k) {
                    return Err(Error::Config(format!("unknown key '{k}' in [{section}]")));
                }
            }
        }

        let d = Config::default();
        let mut r = Reader {
            ini: &ini,
            defaulted: Vec::new(),
        };
        let n = r.parse("domain", "n", d.n)?;
        let levels = r.parse("domain", "levels", d.levels)?;
        let t_end: f64 = r.parse("time", "T", d.t_end)?;
        let coupling = match r.raw("time", "coupling") {
            None => {
                r.defaulted.push("time.coupling".into());
                Coupling::H2
            }
            Some("h2") => Coupling::H2,
            Some("h1") => Coupling::H1,
            Some(other) => return Err(Error::Config(format!("[time] coupling: expected h2 or h1, got '{other}'"))),
        };
        // default: k <= h^2 with h = sqrt(2)/n on the coarsest level
        let default_m = ((t_end * (n * n) as f64 / 2.0).ceil() as usize).max(1);
        let m = r.parse("time", "M", default_m)?;

        let alpha = r.parse("control", "alpha", d.alpha)?;
        let qa = r.parse("control", "qa", d.qa)?;
        let qb = r.parse("control", "qb", d.qb)?;
        let q_expr = r.string("control", "q_expr");

        let kind = r.raw("curve", "kind").map(str::to_string);
        if kind.is_none() {
            r.defaulted.push("curve.kind".into());
        }
        let curve = match kind.as_deref().unwrap_or("fixed") {
            "fixed" => CurveSpec::Fixed {
                x0: r.parse("curve", "x0", 0.5)?,
                y0: r.parse("curve", "y0", 0.5)?,
            },
            "circle" => CurveSpec::Circle {
                cx: r.parse("curve", "cx", 0.5)?,
                cy: r.parse("curve", "cy", 0.5)?,
                radius: r.parse("curve", "radius", 0.2)?,
                omega: r.parse("curve", "omega", 2.0 * PI / t_end)?,
                phase: r.parse("curve", "phase", 0.0)?,
            },
            "segment" => CurveSpec::Segment {
                x0: r.parse("curve", "x0", 0.3)?,
                y0: r.parse("curve", "y0", 0.3)?,
                x1: r.parse("curve", "x1", 0.7)?,
                y1: r.parse("curve", "y1", 0.7)?,
            },
            "lissajous" => CurveSpec::Lissajous {
                cx: r.parse("curve", "cx", 0.5)?,
                cy: r.parse("curve", "cy", 0.5)?,
                ax: r.parse("curve", "ax", 0.2)?,
                ay: r.parse("curve", "ay", 0.2)?,
                fx: r.parse("curve", "fx", 2.0 * PI / t_end)?,
                fy: r.parse("curve", "fy", 4.0 * PI / t_end)?,
                phase: r.parse("curve", "phase", 0.0)?,
            },
            "expr" => {
                let (Some(x_expr), Some(y_expr)) = (r.string("curve", "x_expr"), r.string("curve", "y_expr")) else {
                    return Err(Error::Config("[curve] kind = expr needs x_expr and y_expr".into()));
                };
                CurveSpec::Expr { x_expr, y_expr }
            }
            other => return Err(Error::Config(format!("[curve] unknown kind '{other}'"))),
        };
        let margin = r.parse("curve", "margin", d.margin)?;

        let uhat_expr = r.string("data", "uhat_expr").unwrap_or_else(|| {
            r.defaulted.push("data.uhat_expr".into());
            d.uhat_expr.clone()
        });
        let f_expr = r.string("data", "f_expr");
        let exact_expr = r.string("data", "exact_expr");

        let method = match r.raw("solver", "method") {
            None => {
                r.defaulted.push("solver.method".into());
                Method::Pdas
            }
            Some("pdas") => Method::Pdas,
            Some("pg") => Method::ProjectedGradient,
            Some(other) => return Err(Error::Config(format!("[solver] method: expected pdas or pg, got '{other}'"))),
        };
        let tol = r.parse("solver", "tol", d.tol)?;
        let max_outer = r.parse("solver", "max_outer", d.max_outer)?;
        let extra_levels = r.parse("reference", "extra_levels", d.extra_levels)?;
        let output_dir = r.string("output", "dir").map(PathBuf::from);
        let timings = r.parse("output", "timings", d.timings)?;

        let cfg = Config {
            n,
            levels,
            m,
            t_end,
            coupling,
            alpha,
            qa,
            qb,
            q_expr,
            curve,
            margin,
            uhat_expr,
            f_expr,
            exact_expr,
            method,
            tol,
            max_outer,
            extra_levels,
            output_dir,
            timings,
            defaulted: r.defaulted,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n == 0 {
            return fail("[domain] n must be at least 1".into());
        }
        if self.levels == 0 {
            return fail("[domain] levels must be at least 1".into());
        }
        if self.m == 0 {
            return fail("[time] M must be at least 1".into());
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return fail(format!("[time] T must be positive, got {}", self.t_end));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return fail(format!("[control] alpha must be positive, got {}", self.alpha));
        }
        Bounds::new(self.qa, self.qb).map_err(|e| Error::Config(format!("[control] {e}")))?;
        if !(self.tol > 0.0) {
            return fail(format!("[solver] tol must be positive, got {}", self.tol));
        }
        if !(self.margin >= 0.0) {
            return fail(format!("[curve] margin must be nonnegative, got {}", self.margin));
        }
        for src in [Some(&self.uhat_expr), self.q_expr.as_ref(), self.f_expr.as_ref(), self.exact_expr.as_ref()]
            .into_iter()
            .flatten()
        {
            Expression::parse(src).map_err(|e| Error::Config(format!("expression '{src}': {e}")))?;
        }
        if let CurveSpec::Expr { x_expr, y_expr } = &self.curve {
            for src in [x_expr, y_expr] {
                Expression::parse(src).map_err(|e| Error::Config(format!("expression '{src}': {e}")))?;
            }
        }
        Ok(())
    }

    /// Checks that only make sense for convergence studies.
    pub fn validate_study(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::Config("[domain] levels must be at least 2 for rates".into()));
        }
        let needs_reference = self.f_expr.is_none() || self.exact_expr.is_none();
        if needs_reference && self.extra_levels == 0 {
            return Err(Error::Config(
                "[reference] extra_levels must be at least 1: the reference must be finer than every study level".into(),
            ));
        }
        Ok(())
    }

    pub fn bounds(&self) -> Bounds {
        Bounds::new(self.qa, self.qb).expect("validated")
    }

    /// Mesh size parameter `n` on study level `level`.
    pub fn n_at(&self, level: usize) -> usize {
        self.n << level
    }

    pub fn m_at(&self, level: usize) -> usize {
        self.m * self.coupling.factor().pow(level as u32)
    }

    pub fn partition_at(&self, level: usize) -> Result<TimePartition> {
        TimePartition::uniform(self.t_end, self.m_at(level))
    }

    pub fn reference_level(&self) -> usize {
        self.levels - 1 + self.extra_levels
    }

    pub fn build_curve(&self) -> Result<Curve> {
        Ok(match &self.curve {
            CurveSpec::Fixed { x0, y0 } => Curve::Fixed { point: [*x0, *y0] },
            CurveSpec::Circle {
                cx,
                cy,
                radius,
                omega,
                phase,
            } => Curve::Circle {
                center: [*cx, *cy],
                radius: *radius,
                omega: *omega,
                phase: *phase,
            },
            CurveSpec::Segment { x0, y0, x1, y1 } => Curve::Segment {
                start: [*x0, *y0],
                end: [*x1, *y1],
                duration: self.t_end,
            },
            CurveSpec::Lissajous {
                cx,
                cy,
                ax,
                ay,
                fx,
                fy,
                phase,
            } => Curve::Lissajous {
                center: [*cx, *cy],
                amplitude: [*ax, *ay],
                frequency: [*fx, *fy],
                phase: *phase,
            },
            CurveSpec::Expr { x_expr, y_expr } => {
                let ex = Expression::parse(x_expr)?;
                let ey = Expression::parse(y_expr)?;
                Curve::Custom(Arc::new(move |t| [ex.eval(t, 0.0, 0.0), ey.eval(t, 0.0, 0.0)]))
            }
        })
    }

    /// The tracking target, or `None` when it is identically zero.
    pub fn u_hat(&self) -> Result<Option<SpaceTimeField>> {
        let e = Expression::parse(&self.uhat_expr)?;
        if e.is_constant() && e.eval(0.0, 0.0, 0.0) == 0.0 {
            return Ok(None);
        }
        Ok(Some(e.into_field()))
    }

    pub fn field(src: &str) -> Result<SpaceTimeField> {
        Ok(Expression::parse(src)?.into_field())
    }

    /// Fixed control as a function of `t`.
    pub fn fixed_control(&self) -> Result<Option<impl Fn(f64) -> f64>> {
        match &self.q_expr {
            None => Ok(None),
            Some(src) => {
                let e = Expression::parse(src)?;
                Ok(Some(move |t: f64| e.eval(t, 0.0, 0.0)))
            }
        }
    }

    /// Normal form: all sections and keys, fixed order, explicit values.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[domain]\nn = {}\nlevels = {}\n", self.n, self.levels);
        let _ = writeln!(
            s,
            "[time]\nM = {}\nT = {}\ncoupling = {}\n",
            self.m,
            self.t_end,
            self.coupling.name()
        );
        let _ = writeln!(s, "[control]\nalpha = {}\nqa = {}\nqb = {}", self.alpha, self.qa, self.qb);
        if let Some(q) = &self.q_expr {
            let _ = writeln!(s, "q_expr = {q}");
        }
        s.push_str("\n[curve]\n");
        match &self.curve {
            CurveSpec::Fixed { x0, y0 } => {
                let _ = writeln!(s, "kind = fixed\nx0 = {x0}\ny0 = {y0}");
            }
            CurveSpec::Circle {
                cx,
                cy,
                radius,
                omega,
                phase,
            } => {
                let _ = writeln!(
                    s,
                    "kind = circle\ncx = {cx}\ncy = {cy}\nradius = {radius}\nomega = {omega}\nphase = {phase}"
                );
            }
            CurveSpec::Segment { x0, y0, x1, y1 } => {
                let _ = writeln!(s, "kind = segment\nx0 = {x0}\ny0 = {y0}\nx1 = {x1}\ny1 = {y1}");
            }
            CurveSpec::Lissajous {
                cx,
                cy,
                ax,
                ay,
                fx,
                fy,
                phase,
            } => {
                let _ = writeln!(
                    s,
                    "kind = lissajous\ncx = {cx}\ncy = {cy}\nax = {ax}\nay = {ay}\nfx = {fx}\nfy = {fy}\nphase = {phase}"
                );
            }
            CurveSpec::Expr { x_expr, y_expr } => {
                let _ = writeln!(s, "kind = expr\nx_expr = {x_expr}\ny_expr = {y_expr}");
            }
        }
        let _ = writeln!(s, "margin = {}\n", self.margin);
        let _ = writeln!(s, "[data]\nuhat_expr = {}", self.uhat_expr);
        if let Some(f) = &self.f_expr {
            let _ = writeln!(s, "f_expr = {f}");
        }
        if let Some(e) = &self.exact_expr {
            let _ = writeln!(s, "exact_expr = {e}");
        }
        let _ = writeln!(
            s,
            "\n[solver]\nmethod = {}\ntol = {:e}\nmax_outer = {}\n",
            self.method.name(),
            self.tol,
            self.max_outer
        );
        let _ = writeln!(s, "[reference]\nextra_levels = {}\n", self.extra_levels);
        s.push_str("[output]\n");
        if let Some(d) = &self.output_dir {
            let _ = writeln!(s, "dir = {}", d.display());
        }
        let _ = writeln!(s, "timings = {}", self.timings);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
[domain]
n = 8
levels = 3

[time]
M = 8
T = 1
coupling = h2

[control]
alpha = 1
qa = -0.5
qb = 0.5

[curve]
kind = circle
cx = 0.5
cy = 0.5
radius = 0.2

[data]
uhat_expr = sin(pi*x)*sin(pi*y)*sin(2*pi*t)

[solver]
method = pdas
tol = 1e-8
";

    #[test]
    fn parses_sample() {
        let c = Config::parse(SAMPLE).unwrap();
        assert_eq!(c.n, 8);
        assert_eq!(c.m_at(2), 128);
        assert_eq!(c.n_at(2), 32);
        assert_eq!(c.reference_level(), 4);
        assert_eq!(c.bounds(), Bounds::new(-0.5, 0.5).unwrap());
        match c.curve {
            CurveSpec::Circle { omega, .. } => assert!((omega - 2.0 * PI).abs() < 1e-15),
            ref other => panic!("{other:?}"),
        }
        assert!(c.defaulted.contains(&"curve.omega".to_string()));
        assert!(c.defaulted.contains(&"reference.extra_levels".to_string()));
        assert!(!c.defaulted.contains(&"domain.n".to_string()));
    }

    #[test]
    fn normal_form_is_idempotent() {
        for text in [SAMPLE, "", "[curve]\nkind = expr\nx_expr = 0.5+0.1*cos(t)\ny_expr = 0.5\n[control]\nq_expr = t"] {
            let once = Config::parse(text).unwrap().to_ini();
            let twice = Config::parse(&once).unwrap().to_ini();
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn infinite_bounds_by_default() {
        let c = Config::parse("").unwrap();
        assert_eq!(c.qa, f64::NEG_INFINITY);
        assert_eq!(c.qb, f64::INFINITY);
        assert_eq!(c.m, 32);
        let text = c.to_ini();
        assert!(text.contains("qa = -inf") && text.contains("qb = inf"));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Config::parse("[domain]\nsize = 3"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("[nowhere]\nn = 3"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("[domain]\nn = three"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("[control]\nalpha = 0"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("[control]\nqa = 1\nqb = 0"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("[data]\nuhat_expr = sin(q)"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("[curve]\nkind = spiral"), Err(Error::Config(_))));
        let c = Config::parse("[reference]\nextra_levels = 0").unwrap();
        assert!(c.validate_study().is_err());
        let c = Config::parse("[domain]\nlevels = 1").unwrap();
        assert!(c.validate_study().is_err());
    }

    #[test]
    fn curve_and_fields() {
        let c = Config::parse("[curve]\nkind = segment\nx0 = 0.2\ny0 = 0.3\nx1 = 0.8\ny1 = 0.3").unwrap();
        let curve = c.build_curve().unwrap();
        assert_eq!(curve.eval(0.5), [0.5, 0.3]);
        assert!(c.u_hat().unwrap().is_none());
        let c = Config::parse("[data]\nuhat_expr = x + t").unwrap();
        let f = c.u_hat().unwrap().unwrap();
        assert_eq!(f(1.0, [2.0, 0.0]), 3.0);
    }
}
