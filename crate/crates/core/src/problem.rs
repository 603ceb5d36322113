//! Time-varying constrained problem definitions.
//!
//! A [`TimeVaryingProblem`] bundles pure evaluators for the objective
//! `f(x,t)`, its gradient, the equality constraints `h(x,t)` with Jacobian
//! and time partial, and an optional inequality family `g(x,t)`. Problems
//! are immutable after construction and evaluators must be safe to call
//! concurrently.
//!
//! Inequalities are removed by the slack transform: each `g_j(x,t) ≤ 0`
//! becomes the equality `g_j(x,t) + z_j² = 0` over the extended variable
//! `(x, z)`. See [`slack_augment`] and [`slack_lift_point`].

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub type ScalarEval = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
pub type VectorEval = Arc<dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync>;
pub type MatrixEval = Arc<dyn Fn(&[f64], f64) -> DenseMatrix + Send + Sync>;

/// A time-varying problem
/// `min f(x,t)  s.t.  h(x,t) = 0,  g(x,t) ≤ 0`
/// with analytic first derivatives supplied by the caller.
#[derive(Clone)]
pub struct TimeVaryingProblem {
    /// Dimension of the decision variable.
    pub n: usize,
    /// Number of equality constraints.
    pub p: usize,
    /// Number of inequality constraints.
    pub q: usize,
    pub objective: ScalarEval,
    pub gradient: VectorEval,
    pub equality: VectorEval,
    pub equality_jacobian: MatrixEval,
    pub equality_time_partial: VectorEval,
    pub inequality: Option<VectorEval>,
    pub inequality_jacobian: Option<MatrixEval>,
    pub inequality_time_partial: Option<VectorEval>,
    /// Sorted, strictly increasing times at which f, h, g may jump.
    pub discontinuity_times: Vec<f64>,
}

impl std::fmt::Debug for TimeVaryingProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TimeVaryingProblem")
            .field("n", &self.n)
            .field("p", &self.p)
            .field("q", &self.q)
            .field("discontinuity_times", &self.discontinuity_times)
            .finish()
    }
}

impl TimeVaryingProblem {
    /// Unconstrained problem from objective and gradient evaluators.
    pub fn unconstrained(
        n: usize,
        objective: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64], f64) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            n,
            p: 0,
            q: 0,
            objective: Arc::new(objective),
            gradient: Arc::new(gradient),
            equality: Arc::new(|_, _| Vec::new()),
            equality_jacobian: Arc::new(move |_, _| DenseMatrix::zeros(0, n)),
            equality_time_partial: Arc::new(|_, _| Vec::new()),
            inequality: None,
            inequality_jacobian: None,
            inequality_time_partial: None,
            discontinuity_times: Vec::new(),
        }
    }

    /// Adds an equality block to an existing problem description.
    pub fn with_equalities(
        mut self,
        p: usize,
        equality: impl Fn(&[f64], f64) -> Vec<f64> + Send + Sync + 'static,
        jacobian: impl Fn(&[f64], f64) -> DenseMatrix + Send + Sync + 'static,
        time_partial: impl Fn(&[f64], f64) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.p = p;
        self.equality = Arc::new(equality);
        self.equality_jacobian = Arc::new(jacobian);
        self.equality_time_partial = Arc::new(time_partial);
        self
    }

    /// Adds an inequality block to an existing problem description.
    pub fn with_inequalities(
        mut self,
        q: usize,
        inequality: impl Fn(&[f64], f64) -> Vec<f64> + Send + Sync + 'static,
        jacobian: impl Fn(&[f64], f64) -> DenseMatrix + Send + Sync + 'static,
        time_partial: impl Fn(&[f64], f64) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.q = q;
        self.inequality = Some(Arc::new(inequality));
        self.inequality_jacobian = Some(Arc::new(jacobian));
        self.inequality_time_partial = Some(Arc::new(time_partial));
        self
    }

    pub fn with_discontinuities(mut self, times: Vec<f64>) -> Self {
        debug_assert!(times.windows(2).all(|w| w[0] < w[1]));
        self.discontinuity_times = times;
        self
    }

    /// True when the problem has no inequality block.
    pub fn is_equality_only(&self) -> bool {
        self.q == 0
    }

    pub fn f(&self, x: &[f64], t: f64) -> f64 {
        (self.objective)(x, t)
    }

    pub fn grad(&self, x: &[f64], t: f64) -> Vec<f64> {
        (self.gradient)(x, t)
    }

    pub fn h(&self, x: &[f64], t: f64) -> Vec<f64> {
        (self.equality)(x, t)
    }

    pub fn jac_h(&self, x: &[f64], t: f64) -> DenseMatrix {
        (self.equality_jacobian)(x, t)
    }

    pub fn h_time(&self, x: &[f64], t: f64) -> Vec<f64> {
        (self.equality_time_partial)(x, t)
    }
}

/// Feasibility tolerance used when lifting a point onto the slack manifold.
pub const SLACK_FEASIBILITY_TOL: f64 = 1e-9;

/// Rewrites a problem with inequalities as an equality-only problem over
/// `(x, z)`: each `g_j(x,t) ≤ 0` becomes `g_j(x,t) + z_j² = 0`. The
/// objective ignores `z`; the equality block stacks `h` on top of the
/// slack rows; the Jacobian gains the diagonal `2 z_j` columns.
pub fn slack_augment(problem: &TimeVaryingProblem) -> Result<TimeVaryingProblem> {
    if problem.q == 0 {
        return Err(Error::Configuration(
            "slack_augment: problem has no inequality constraints".to_string(),
        ));
    }
    let (g, jg, gt) = match (
        &problem.inequality,
        &problem.inequality_jacobian,
        &problem.inequality_time_partial,
    ) {
        (Some(g), Some(jg), Some(gt)) => (g.clone(), jg.clone(), gt.clone()),
        _ => {
            return Err(Error::Configuration(
                "slack_augment: inequality evaluators missing".to_string(),
            ))
        }
    };

    let n = problem.n;
    let p = problem.p;
    let q = problem.q;
    let n_aug = n + q;
    let p_aug = p + q;

    let objective = problem.objective.clone();
    let gradient = problem.gradient.clone();
    let equality = problem.equality.clone();
    let jac = problem.equality_jacobian.clone();
    let h_time = problem.equality_time_partial.clone();

    let eq_g = g.clone();
    let eq_h = equality.clone();
    let time_g = gt;
    let time_h = h_time;

    Ok(TimeVaryingProblem {
        n: n_aug,
        p: p_aug,
        q: 0,
        objective: Arc::new(move |xz, t| objective(&xz[..n], t)),
        gradient: Arc::new(move |xz, t| {
            let mut out = gradient(&xz[..n], t);
            out.resize(n_aug, 0.0);
            out
        }),
        equality: Arc::new(move |xz, t| {
            let (x, z) = xz.split_at(n);
            let mut out = eq_h(x, t);
            for (gj, zj) in eq_g(x, t).into_iter().zip(z) {
                out.push(gj + zj * zj);
            }
            out
        }),
        equality_jacobian: Arc::new(move |xz, t| {
            let (x, z) = xz.split_at(n);
            let jh = jac(x, t);
            let jgx = jg(x, t);
            let mut out = DenseMatrix::zeros(p_aug, n_aug);
            for i in 0..p {
                for jcol in 0..n {
                    out.set(i, jcol, jh.get(i, jcol));
                }
            }
            for i in 0..q {
                for jcol in 0..n {
                    out.set(p + i, jcol, jgx.get(i, jcol));
                }
                out.set(p + i, n + i, 2.0 * z[i]);
            }
            out
        }),
        equality_time_partial: Arc::new(move |xz, t| {
            let x = &xz[..n];
            let mut out = time_h(x, t);
            out.extend(time_g(x, t));
            out
        }),
        inequality: None,
        inequality_jacobian: None,
        inequality_time_partial: None,
        discontinuity_times: problem.discontinuity_times.clone(),
    })
}

/// Lifts a feasible point `x` of the original problem onto the slack
/// manifold: returns `(x, z)` with `z_j = sqrt(−g_j(x,t))`. Fails when any
/// inequality is violated beyond [`SLACK_FEASIBILITY_TOL`].
pub fn slack_lift_point(problem: &TimeVaryingProblem, x: &[f64], t: f64) -> Result<Vec<f64>> {
    let g = problem.inequality.as_ref().ok_or_else(|| {
        Error::Configuration("slack_lift_point: problem has no inequalities".to_string())
    })?;
    if x.len() != problem.n {
        return Err(Error::Dimension {
            context: "slack_lift_point",
            expected: problem.n,
            got: x.len(),
        });
    }
    let gv = g(x, t);
    let mut out = x.to_vec();
    for (j, gj) in gv.into_iter().enumerate() {
        if gj > SLACK_FEASIBILITY_TOL {
            return Err(Error::Infeasible {
                index: j,
                value: gj,
                tol: SLACK_FEASIBILITY_TOL,
            });
        }
        out.push((-gj).max(0.0).sqrt());
    }
    Ok(out)
}

/// Result of comparing supplied derivatives against central finite
/// differences at one probe point.
#[derive(Debug, Clone)]
pub struct DerivativeReport {
    pub gradient_deviation: f64,
    pub equality_jacobian_deviation: Option<f64>,
    pub equality_time_partial_deviation: Option<f64>,
    pub inequality_jacobian_deviation: Option<f64>,
    pub inequality_time_partial_deviation: Option<f64>,
    pub pass: bool,
    pub probe_x: Vec<f64>,
    pub probe_t: f64,
}

impl DerivativeReport {
    pub fn max_deviation(&self) -> f64 {
        [
            Some(self.gradient_deviation),
            self.equality_jacobian_deviation,
            self.equality_time_partial_deviation,
            self.inequality_jacobian_deviation,
            self.inequality_time_partial_deviation,
        ]
        .into_iter()
        .flatten()
        .fold(0.0f64, f64::max)
    }
}

fn require_finite(what: &str, v: &[f64], x: &[f64], t: f64) -> Result<()> {
    if v.iter().any(|e| !e.is_finite()) {
        return Err(Error::Evaluation {
            what: what.to_string(),
            t,
            x: x.to_vec(),
        });
    }
    Ok(())
}

/// Checks the supplied analytic derivatives of `problem` at `(x, t)`
/// against central finite differences with step `fd_step`. The report
/// passes when every deviation is at most `tol`.
pub fn check_derivatives(
    problem: &TimeVaryingProblem,
    x: &[f64],
    t: f64,
    fd_step: f64,
    tol: f64,
) -> Result<DerivativeReport> {
    assert!(fd_step > 0.0, "fd_step must be positive");
    let n = problem.n;

    // Gradient against a central difference of the objective, coordinate
    // by coordinate.
    let grad = problem.grad(x, t);
    require_finite("gradient", &grad, x, t)?;
    let mut gradient_deviation = 0.0f64;
    let mut xp = x.to_vec();
    for i in 0..n {
        xp[i] = x[i] + fd_step;
        let fp = problem.f(&xp, t);
        xp[i] = x[i] - fd_step;
        let fm = problem.f(&xp, t);
        xp[i] = x[i];
        require_finite("objective", &[fp, fm], x, t)?;
        gradient_deviation = gradient_deviation.max((grad[i] - (fp - fm) / (2.0 * fd_step)).abs());
    }

    let mut report = DerivativeReport {
        gradient_deviation,
        equality_jacobian_deviation: None,
        equality_time_partial_deviation: None,
        inequality_jacobian_deviation: None,
        inequality_time_partial_deviation: None,
        pass: false,
        probe_x: x.to_vec(),
        probe_t: t,
    };

    if problem.p > 0 {
        let jac = problem.jac_h(x, t);
        let mut dev = 0.0f64;
        for i in 0..n {
            xp[i] = x[i] + fd_step;
            let hp = problem.h(&xp, t);
            xp[i] = x[i] - fd_step;
            let hm = problem.h(&xp, t);
            xp[i] = x[i];
            require_finite("equality", &hp, x, t)?;
            require_finite("equality", &hm, x, t)?;
            for r in 0..problem.p {
                dev = dev.max((jac.get(r, i) - (hp[r] - hm[r]) / (2.0 * fd_step)).abs());
            }
        }
        report.equality_jacobian_deviation = Some(dev);

        let ht = problem.h_time(x, t);
        let hp = problem.h(x, t + fd_step);
        let hm = problem.h(x, t - fd_step);
        require_finite("equality_time_partial", &ht, x, t)?;
        let dev_t = ht
            .iter()
            .zip(hp.iter().zip(&hm))
            .fold(0.0f64, |m, (a, (p, q))| {
                m.max((a - (p - q) / (2.0 * fd_step)).abs())
            });
        report.equality_time_partial_deviation = Some(dev_t);
    }

    if problem.q > 0 {
        let g = problem.inequality.as_ref().unwrap();
        let jg = problem.inequality_jacobian.as_ref().unwrap();
        let gt = problem.inequality_time_partial.as_ref().unwrap();
        let jac = jg(x, t);
        let mut dev = 0.0f64;
        for i in 0..n {
            xp[i] = x[i] + fd_step;
            let gp = g(&xp, t);
            xp[i] = x[i] - fd_step;
            let gm = g(&xp, t);
            xp[i] = x[i];
            require_finite("inequality", &gp, x, t)?;
            require_finite("inequality", &gm, x, t)?;
            for r in 0..problem.q {
                dev = dev.max((jac.get(r, i) - (gp[r] - gm[r]) / (2.0 * fd_step)).abs());
            }
        }
        report.inequality_jacobian_deviation = Some(dev);

        let gtv = gt(x, t);
        let gp = g(x, t + fd_step);
        let gm = g(x, t - fd_step);
        require_finite("inequality_time_partial", &gtv, x, t)?;
        let dev_t = gtv
            .iter()
            .zip(gp.iter().zip(&gm))
            .fold(0.0f64, |m, (a, (p, q))| {
                m.max((a - (p - q) / (2.0 * fd_step)).abs())
            });
        report.inequality_time_partial_deviation = Some(dev_t);
    }

    report.pass = report.max_deviation() <= tol;
    Ok(report)
}

/// Region over which the brute-force oracle scans for critical structure.
#[derive(Clone)]
pub enum ScanRegion {
    /// Axis-aligned box, per-axis `(lo, hi)` with a grid of `resolution`
    /// points per axis. Unconstrained problems only, `n ≤ 2`.
    Box {
        bounds: Vec<(f64, f64)>,
        resolution: usize,
    },
    /// One-parameter constraint manifold: maps an angle-like parameter in
    /// `[lo, hi)` (periodic) onto feasible points.
    Manifold {
        param: Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>,
        lo: f64,
        hi: f64,
        resolution: usize,
    },
}

impl std::fmt::Debug for ScanRegion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScanRegion::Box { bounds, resolution } => f
                .debug_struct("Box")
                .field("bounds", bounds)
                .field("resolution", resolution)
                .finish(),
            ScanRegion::Manifold { lo, hi, resolution, .. } => f
                .debug_struct("Manifold")
                .field("lo", lo)
                .field("hi", hi)
                .field("resolution", resolution)
                .finish(),
        }
    }
}

/// A catalog problem together with the oracle helpers the CLI needs: a
/// default scan region and, where one exists, a closed form for the
/// benchmark minimum value.
#[derive(Clone)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub problem: TimeVaryingProblem,
    pub region: Option<ScanRegion>,
    pub f_star_closed_form: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
}

pub const CATALOG_NAMES: [&str; 4] = [
    "quartic_switch",
    "pitchfork",
    "circle_linear",
    "clamped_quadratic",
];

/// Looks up a catalog problem by name.
pub fn catalog_get(name: &str) -> Result<TimeVaryingProblem> {
    catalog_entry(name).map(|e| e.problem)
}

/// Looks up a catalog entry (problem plus oracle helpers) by name.
pub fn catalog_entry(name: &str) -> Result<CatalogEntry> {
    match name {
        "quartic_switch" => Ok(quartic_switch()),
        "pitchfork" => Ok(pitchfork()),
        "circle_linear" => Ok(circle_linear()),
        "clamped_quadratic" => Ok(clamped_quadratic()),
        _ => Err(Error::UnknownProblem {
            name: name.to_string(),
            valid: CATALOG_NAMES.join(", "),
        }),
    }
}

/// Univariate quartic whose left well flattens into the saddle at `x = −3`
/// as `t` grows to 10:
/// `f(x,t) = x⁴ + 8x³ + 18x² − 2x²(10−t)/10` for `t ≤ 10`, the cubic part
/// alone afterwards. Continuous at `t = 10`.
fn quartic_switch() -> CatalogEntry {
    let f = |x: &[f64], t: f64| {
        let x = x[0];
        let base = x.powi(4) + 8.0 * x.powi(3) + 18.0 * x * x;
        if t <= 10.0 {
            base - 0.2 * x * x * (10.0 - t)
        } else {
            base
        }
    };
    let grad = |x: &[f64], t: f64| {
        let x = x[0];
        let base = 4.0 * x.powi(3) + 24.0 * x * x + 36.0 * x;
        vec![if t <= 10.0 {
            base - 0.4 * x * (10.0 - t)
        } else {
            base
        }]
    };
    CatalogEntry {
        name: "quartic_switch",
        problem: TimeVaryingProblem::unconstrained(1, f, grad),
        region: Some(ScanRegion::Box {
            bounds: vec![(-6.0, 2.0)],
            resolution: 2001,
        }),
        f_star_closed_form: None,
    }
}

/// `f(x,t) = x⁴ − 2 t x²`: a pitchfork whose minima sit at `±√t` for
/// `t ≥ 0` and merge at the origin for `t ≤ 0`.
fn pitchfork() -> CatalogEntry {
    let f = |x: &[f64], t: f64| {
        let x = x[0];
        x.powi(4) - 2.0 * t * x * x
    };
    let grad = |x: &[f64], t: f64| {
        let x = x[0];
        vec![4.0 * x.powi(3) - 4.0 * t * x]
    };
    CatalogEntry {
        name: "pitchfork",
        problem: TimeVaryingProblem::unconstrained(1, f, grad),
        region: Some(ScanRegion::Box {
            bounds: vec![(-3.0, 3.0)],
            resolution: 2001,
        }),
        f_star_closed_form: None,
    }
}

/// Rotating linear objective on the unit circle:
/// `f(x,t) = x₁ cos t + x₂ sin t`, `h(x,t) = x₁² + x₂² − 1`.
/// The minimizer is `−(cos t, sin t)` with value −1 at all times.
fn circle_linear() -> CatalogEntry {
    let f = |x: &[f64], t: f64| x[0] * t.cos() + x[1] * t.sin();
    let grad = |_x: &[f64], t: f64| vec![t.cos(), t.sin()];
    let problem = TimeVaryingProblem::unconstrained(2, f, grad).with_equalities(
        1,
        |x, _t| vec![x[0] * x[0] + x[1] * x[1] - 1.0],
        |x, _t| DenseMatrix::from_rows(&[&[2.0 * x[0], 2.0 * x[1]]]),
        |_x, _t| vec![0.0],
    );
    CatalogEntry {
        name: "circle_linear",
        problem,
        region: Some(ScanRegion::Manifold {
            param: Arc::new(|theta: f64| vec![theta.cos(), theta.sin()]),
            lo: 0.0,
            hi: std::f64::consts::TAU,
            resolution: 720,
        }),
        f_star_closed_form: Some(Arc::new(|_t| -1.0)),
    }
}

/// Quadratic pulled rightwards past the boundary `x ≤ 0`:
/// `f(x,t) = (x − s(t))²` with `s(t) = t − 1`, `g(x,t) = x`. The
/// unconstrained minimizer crosses the boundary at `t = 1`.
fn clamped_quadratic() -> CatalogEntry {
    let f = |x: &[f64], t: f64| {
        let s = t - 1.0;
        (x[0] - s) * (x[0] - s)
    };
    let grad = |x: &[f64], t: f64| vec![2.0 * (x[0] - (t - 1.0))];
    let problem = TimeVaryingProblem::unconstrained(1, f, grad).with_inequalities(
        1,
        |x, _t| vec![x[0]],
        |_x, _t| DenseMatrix::from_rows(&[&[1.0]]),
        |_x, _t| vec![0.0],
    );
    CatalogEntry {
        name: "clamped_quadratic",
        problem,
        region: None,
        // min over x ≤ 0 of (x − s(t))²: 0 while the target is inside,
        // s(t)² once it has crossed.
        f_star_closed_form: Some(Arc::new(|t| {
            let s = t - 1.0;
            if s <= 0.0 {
                0.0
            } else {
                s * s
            }
        })),
    }
}

/// Deterministic dense family used for cost-scaling measurements:
/// `f(x,t) = ½‖x − c(t)‖²` with `c_i(t) = sin(t + i)`, subject to
/// `p = n/2` dense linear constraints `A x = b(t)`, `b_i(t) = sin(2t + i)`.
pub fn synthetic_dense(n: usize) -> TimeVaryingProblem {
    assert!(n >= 2 && n % 2 == 0, "synthetic_dense needs even n >= 2");
    let p = n / 2;
    // Fixed full-row-rank A: identity block plus a dense trigonometric tail.
    let mut a = DenseMatrix::zeros(p, n);
    for i in 0..p {
        a.set(i, i, 1.0);
        for j in 0..n {
            let v = ((i * n + j) as f64).sin() * 0.3;
            a.set(i, j, a.get(i, j) + v);
        }
    }
    let a = Arc::new(a);
    let a_f = a.clone();
    let a_j = a.clone();

    let target = |t: f64, i: usize| (t + i as f64).sin();
    let rhs = |t: f64, i: usize| (2.0 * t + i as f64).sin();

    TimeVaryingProblem {
        n,
        p,
        q: 0,
        objective: Arc::new(move |x, t| {
            x.iter()
                .enumerate()
                .map(|(i, xi)| {
                    let d = xi - target(t, i);
                    0.5 * d * d
                })
                .sum()
        }),
        gradient: Arc::new(move |x, t| {
            x.iter()
                .enumerate()
                .map(|(i, xi)| xi - target(t, i))
                .collect()
        }),
        equality: Arc::new(move |x, t| {
            (0..p)
                .map(|i| {
                    let row: f64 = a_f.row(i).iter().zip(x).map(|(aij, xj)| aij * xj).sum();
                    row - rhs(t, i)
                })
                .collect()
        }),
        equality_jacobian: Arc::new(move |_x, _t| (*a_j).clone()),
        equality_time_partial: Arc::new(move |_x, t| {
            (0..p).map(|i| -2.0 * (2.0 * t + i as f64).cos()).collect()
        }),
        inequality: None,
        inequality_jacobian: None,
        inequality_time_partial: None,
        discontinuity_times: Vec::new(),
    }
}
