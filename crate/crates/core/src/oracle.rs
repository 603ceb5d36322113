//! Ground-truth machinery for validating the tracker.
//!
//! * [`static_local_solve`] — frozen-time projected gradient flow followed
//!   by a Newton polish on the stationarity-plus-feasibility system; the
//!   reference way to produce a local solution at a fixed time.
//! * [`grid_scan`] / [`f_star`] — brute-force scans for the critical
//!   structure of desk-scale problems, giving the benchmark minimum value
//!   the tracked objective is compared against.
//! * [`discrete_solution`] — the sampled-time formulation: a sequence of
//!   penalized static solves `min f(x, τ_k) + (α/2)‖x − x_{k−1}‖²/Δτ_k`
//!   whose tight-partition limit the tracking flow reproduces.

use std::sync::Arc;

use crate::dynamics::{frozen_field, NewtonSystem};
use crate::error::{Error, Result};
use crate::integrate::rk4_step;
use crate::linalg::{matvec, matvec_transpose, norm_inf, project_tangent, solve_spd, DenseMatrix};
use crate::problem::{ScanRegion, TimeVaryingProblem};
use crate::tracker::kkt_residual;

const FLOW_STEP: f64 = 5e-3;
const MAX_FLOW_STEPS: usize = 60_000;
const FLOW_CHECK_EVERY: usize = 10;
const NEWTON_POLISH_ITERS: usize = 20;
const FD_JACOBIAN_STEP: f64 = 1e-6;
const DEDUP_RADIUS: f64 = 1e-4;
const PROBE_DELTA: f64 = 1e-3;
const CANDIDATE_NEWTON_ITERS: usize = 60;

/// Residual the frozen flow can actually drive to zero: the projected
/// gradient. Feasibility is restored by the Newton polish, not the flow.
fn stationarity_residual(problem: &TimeVaryingProblem, x: &[f64], t: f64) -> Result<f64> {
    let grad = problem.grad(x, t);
    if problem.p == 0 {
        return Ok(norm_inf(&grad));
    }
    let j = problem.jac_h(x, t);
    Ok(norm_inf(&project_tangent(&j, &grad)?))
}

/// Stationarity-plus-feasibility system over `(x, λ)`:
/// `F(x, λ) = [∇ₓf + Jᵀλ; h]`, Jacobian by central differences.
fn kkt_newton_system(problem: &TimeVaryingProblem, t: f64) -> NewtonSystem {
    let n = problem.n;
    let p = problem.p;
    let dim = n + p;
    let pb = problem.clone();
    let residual = move |y: &[f64]| -> Result<Vec<f64>> {
        let (x, lam) = y.split_at(n);
        let mut out = pb.grad(x, t);
        if p > 0 {
            let j = pb.jac_h(x, t);
            let jt_lam = matvec_transpose(&j, lam)?;
            for (o, c) in out.iter_mut().zip(&jt_lam) {
                *o += c;
            }
            out.extend(pb.h(x, t));
        }
        Ok(out)
    };
    let res_for_jac = residual.clone();
    let jacobian = move |y: &[f64]| -> Result<DenseMatrix> {
        let mut jac = DenseMatrix::zeros(dim, dim);
        let mut yp = y.to_vec();
        for col in 0..dim {
            yp[col] = y[col] + FD_JACOBIAN_STEP;
            let fp = res_for_jac(&yp)?;
            yp[col] = y[col] - FD_JACOBIAN_STEP;
            let fm = res_for_jac(&yp)?;
            yp[col] = y[col];
            for row in 0..dim {
                jac.set(row, col, (fp[row] - fm[row]) / (2.0 * FD_JACOBIAN_STEP));
            }
        }
        Ok(jac)
    };
    NewtonSystem::new(dim, residual, jacobian)
}

/// Least-squares multiplier fit `λ = −(JJᵀ)⁻¹ J ∇ₓf`, the starting point
/// for the Newton polish.
fn least_squares_multipliers(problem: &TimeVaryingProblem, x: &[f64], t: f64) -> Result<Vec<f64>> {
    if problem.p == 0 {
        return Ok(Vec::new());
    }
    let j = problem.jac_h(x, t);
    let j_grad = matvec(&j, &problem.grad(x, t))?;
    let lam = solve_spd(&j.gram(), &j_grad)?;
    Ok(lam.into_iter().map(|v| -v).collect())
}

fn flow_until(
    problem: &TimeVaryingProblem,
    t: f64,
    x0: &[f64],
    target: f64,
    max_steps: usize,
) -> Result<(Vec<f64>, f64)> {
    let field = frozen_field(problem, t)?;
    let mut x = x0.to_vec();
    let mut res = stationarity_residual(problem, &x, t)?;
    let mut s = 0.0;
    let mut steps = 0;
    while res > target && steps < max_steps {
        for _ in 0..FLOW_CHECK_EVERY {
            x = rk4_step(&field, &x, s, FLOW_STEP)?;
            s += FLOW_STEP;
            steps += 1;
            if steps >= max_steps {
                break;
            }
        }
        res = stationarity_residual(problem, &x, t)?;
    }
    Ok((x, res))
}

fn newton_polish(
    problem: &TimeVaryingProblem,
    t: f64,
    x0: &[f64],
    tol: f64,
) -> Result<Option<Vec<f64>>> {
    let system = kkt_newton_system(problem, t);
    let mut y = x0.to_vec();
    match least_squares_multipliers(problem, x0, t) {
        Ok(lam) => y.extend(lam),
        Err(_) => return Ok(None),
    }
    for _ in 0..NEWTON_POLISH_ITERS {
        let x = &y[..problem.n];
        if kkt_residual(problem, x, t)? <= tol {
            return Ok(Some(x.to_vec()));
        }
        let f = (system.residual)(&y)?;
        let jac = (system.jacobian)(&y)?;
        let w = match crate::dynamics::solve_square(&jac, &f) {
            Ok(w) => w,
            Err(Error::Singular { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        for (yi, wi) in y.iter_mut().zip(&w) {
            *yi -= wi;
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }
    }
    let x = &y[..problem.n];
    if kkt_residual(problem, x, t)? <= tol {
        Ok(Some(x.to_vec()))
    } else {
        Ok(None)
    }
}

/// Local solution of the problem frozen at time `t`, started from `x0`:
/// projected gradient flow down to ten times the tolerance, then up to 20
/// Newton steps on the stationarity system. A singular Newton system falls
/// back to pure flow.
pub fn static_local_solve(
    problem: &TimeVaryingProblem,
    t: f64,
    x0: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    assert!(tol > 0.0, "tol must be positive");
    let (x_flow, res_flow) = flow_until(problem, t, x0, 10.0 * tol, MAX_FLOW_STEPS)?;

    if let Some(x) = newton_polish(problem, t, &x_flow, tol)? {
        return Ok(x);
    }

    // Pure-flow fallback: keep flowing toward the tolerance itself.
    if res_flow <= tol && kkt_residual(problem, &x_flow, t)? <= tol {
        return Ok(x_flow);
    }
    let (x_more, res_more) = flow_until(problem, t, &x_flow, tol, MAX_FLOW_STEPS)?;
    if kkt_residual(problem, &x_more, t)? <= tol {
        return Ok(x_more);
    }
    Err(Error::NoConvergence {
        context: "static_local_solve",
        residual: res_more,
        tol,
    })
}

/// Classification of a critical point by sampled shape probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticalClass {
    Minimum,
    Maximum,
    SaddleOrDegenerate,
}

#[derive(Debug, Clone)]
pub struct CriticalPoint {
    pub x: Vec<f64>,
    pub f: f64,
    pub class: CriticalClass,
}

/// Critical structure of the problem frozen at one time, sorted by
/// objective value.
#[derive(Debug, Clone)]
pub struct CriticalPointSet {
    pub t: f64,
    pub points: Vec<CriticalPoint>,
}

impl CriticalPointSet {
    pub fn minima(&self) -> impl Iterator<Item = &CriticalPoint> {
        self.points
            .iter()
            .filter(|p| p.class == CriticalClass::Minimum)
    }
}

/// Plain Newton iteration on the stationarity system. Used to refine
/// non-minimum candidates, which the descent flow would run away from.
/// Returns the start point unchanged when Newton fails.
fn refine_by_newton(problem: &TimeVaryingProblem, t: f64, x0: &[f64]) -> Vec<f64> {
    let system = kkt_newton_system(problem, t);
    let mut y = x0.to_vec();
    match least_squares_multipliers(problem, x0, t) {
        Ok(lam) => y.extend(lam),
        Err(_) => return x0.to_vec(),
    }
    let span = 1.0 + norm_inf(x0);
    for _ in 0..CANDIDATE_NEWTON_ITERS {
        let f = match (system.residual)(&y) {
            Ok(f) => f,
            Err(_) => return x0.to_vec(),
        };
        if norm_inf(&f) < 1e-12 {
            break;
        }
        let jac = match (system.jacobian)(&y) {
            Ok(j) => j,
            Err(_) => return x0.to_vec(),
        };
        let w = match crate::dynamics::solve_square(&jac, &f) {
            Ok(w) => w,
            Err(_) => return x0.to_vec(),
        };
        for (yi, wi) in y.iter_mut().zip(&w) {
            *yi -= wi;
        }
        let x = &y[..problem.n];
        if x.iter().any(|v| !v.is_finite()) || norm_inf(x) > 10.0 * span {
            return x0.to_vec();
        }
    }
    y[..problem.n].to_vec()
}

/// Shape classification from one-sided probes: a V is a minimum, a Λ a
/// maximum, anything monotone or flat is saddle/degenerate. In more than
/// one probe direction, all-V means minimum and all-Λ means maximum.
fn classify_by_probes(values: &[(f64, f64, f64)]) -> CriticalClass {
    let all_v = values.iter().all(|&(lo, mid, hi)| lo > mid && hi > mid);
    if all_v {
        return CriticalClass::Minimum;
    }
    let all_cap = values.iter().all(|&(lo, mid, hi)| lo < mid && hi < mid);
    if all_cap {
        return CriticalClass::Maximum;
    }
    CriticalClass::SaddleOrDegenerate
}

fn dedup_points(points: Vec<CriticalPoint>) -> Vec<CriticalPoint> {
    let mut kept: Vec<CriticalPoint> = Vec::new();
    for p in points {
        let dup = kept.iter_mut().find(|k| {
            k.x.iter()
                .zip(&p.x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                <= DEDUP_RADIUS
        });
        match dup {
            Some(k) => {
                // Keep the better-classified / lower of the two.
                if p.f < k.f {
                    *k = p;
                }
            }
            None => kept.push(p),
        }
    }
    kept
}

fn scan_box_1d(
    problem: &TimeVaryingProblem,
    t: f64,
    lo: f64,
    hi: f64,
    resolution: usize,
) -> Result<CriticalPointSet> {
    let m = resolution.max(3);
    let dx = (hi - lo) / (m - 1) as f64;
    let xs: Vec<f64> = (0..m).map(|i| lo + i as f64 * dx).collect();
    let fs: Vec<f64> = xs.iter().map(|&x| problem.f(&[x], t)).collect();

    // Central-difference slopes, for spotting zero-slope candidates that
    // are not grid extrema (degenerate points the extremum test misses).
    let slope: Vec<f64> = (0..m)
        .map(|i| {
            if i == 0 || i + 1 == m {
                f64::INFINITY
            } else {
                (fs[i + 1] - fs[i - 1]) / (2.0 * dx)
            }
        })
        .collect();
    let slope_cut = 0.05
        * slope
            .iter()
            .filter(|s| s.is_finite())
            .fold(0.0f64, |a, &b| a.max(b.abs()));

    let mut raw = Vec::new();
    for i in 1..m - 1 {
        let grid_min = fs[i] < fs[i - 1] && fs[i] < fs[i + 1];
        let grid_max = fs[i] > fs[i - 1] && fs[i] > fs[i + 1];
        let slope_dip = slope[i].abs() <= slope[i - 1].abs()
            && slope[i].abs() <= slope[i + 1].abs()
            && slope[i].abs() < slope_cut;
        if !(grid_min || grid_max || slope_dip) {
            continue;
        }
        let refined = if grid_min {
            static_local_solve(problem, t, &[xs[i]], 1e-9).unwrap_or(vec![xs[i]])
        } else {
            refine_by_newton(problem, t, &[xs[i]])
        };
        let x = refined[0];
        let mid = problem.f(&[x], t);
        let probes = [(
            problem.f(&[x - PROBE_DELTA], t),
            mid,
            problem.f(&[x + PROBE_DELTA], t),
        )];
        raw.push(CriticalPoint {
            x: vec![x],
            f: mid,
            class: classify_by_probes(&probes),
        });
    }
    let mut points = dedup_points(raw);
    points.sort_by(|a, b| a.f.total_cmp(&b.f));
    Ok(CriticalPointSet { t, points })
}

fn scan_box_2d(
    problem: &TimeVaryingProblem,
    t: f64,
    bounds: &[(f64, f64)],
    resolution: usize,
) -> Result<CriticalPointSet> {
    let m = resolution.max(3);
    let (lo0, hi0) = bounds[0];
    let (lo1, hi1) = bounds[1];
    let d0 = (hi0 - lo0) / (m - 1) as f64;
    let d1 = (hi1 - lo1) / (m - 1) as f64;
    let at = |i: usize, j: usize| [lo0 + i as f64 * d0, lo1 + j as f64 * d1];
    let mut fs = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            fs[i * m + j] = problem.f(&at(i, j), t);
        }
    }
    let mut raw = Vec::new();
    for i in 1..m - 1 {
        for j in 1..m - 1 {
            let c = fs[i * m + j];
            let neigh = [
                fs[(i - 1) * m + j],
                fs[(i + 1) * m + j],
                fs[i * m + j - 1],
                fs[i * m + j + 1],
            ];
            let grid_min = neigh.iter().all(|&v| c < v);
            let grid_max = neigh.iter().all(|&v| c > v);
            if !(grid_min || grid_max) {
                continue;
            }
            let start = at(i, j);
            let refined = if grid_min {
                static_local_solve(problem, t, &start, 1e-9).unwrap_or(start.to_vec())
            } else {
                refine_by_newton(problem, t, &start)
            };
            let mid = problem.f(&refined, t);
            let probes = [
                (
                    problem.f(&[refined[0] - PROBE_DELTA, refined[1]], t),
                    mid,
                    problem.f(&[refined[0] + PROBE_DELTA, refined[1]], t),
                ),
                (
                    problem.f(&[refined[0], refined[1] - PROBE_DELTA], t),
                    mid,
                    problem.f(&[refined[0], refined[1] + PROBE_DELTA], t),
                ),
            ];
            raw.push(CriticalPoint {
                x: refined,
                f: mid,
                class: classify_by_probes(&probes),
            });
        }
    }
    let mut points = dedup_points(raw);
    points.sort_by(|a, b| a.f.total_cmp(&b.f));
    Ok(CriticalPointSet { t, points })
}

fn scan_manifold(
    problem: &TimeVaryingProblem,
    t: f64,
    param: &Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>,
    lo: f64,
    hi: f64,
    resolution: usize,
) -> Result<CriticalPointSet> {
    let m = resolution.max(3);
    let dth = (hi - lo) / m as f64; // periodic: hi not repeated
    let thetas: Vec<f64> = (0..m).map(|i| lo + i as f64 * dth).collect();
    let fs: Vec<f64> = thetas.iter().map(|&th| problem.f(&param(th), t)).collect();

    let mut raw = Vec::new();
    for i in 0..m {
        let prev = fs[(i + m - 1) % m];
        let next = fs[(i + 1) % m];
        let c = fs[i];
        let grid_min = c < prev && c < next;
        let grid_max = c > prev && c > next;
        if !(grid_min || grid_max) {
            continue;
        }
        let start = param(thetas[i]);
        let refined = if grid_min {
            static_local_solve(problem, t, &start, 1e-9).unwrap_or(start.clone())
        } else {
            refine_by_newton(problem, t, &start)
        };
        let mid = problem.f(&refined, t);
        // Probe along the parametrization around the candidate angle.
        let probes = [(
            problem.f(&param(thetas[i] - PROBE_DELTA), t),
            fs[i].min(mid),
            problem.f(&param(thetas[i] + PROBE_DELTA), t),
        )];
        raw.push(CriticalPoint {
            x: refined,
            f: mid,
            class: classify_by_probes(&probes),
        });
    }
    let mut points = dedup_points(raw);
    points.sort_by(|a, b| a.f.total_cmp(&b.f));
    Ok(CriticalPointSet { t, points })
}

/// Brute-force scan for the critical structure of the problem frozen at
/// `t`. Supports one- and two-dimensional boxes for unconstrained
/// problems, and one-parameter manifold scans for constrained ones.
pub fn grid_scan(
    problem: &TimeVaryingProblem,
    t: f64,
    region: &ScanRegion,
) -> Result<CriticalPointSet> {
    match region {
        ScanRegion::Box { bounds, resolution } => {
            if problem.p != 0 || problem.q != 0 {
                return Err(Error::Unsupported(
                    "box grid_scan requires an unconstrained problem; use a manifold region"
                        .to_string(),
                ));
            }
            if bounds.len() != problem.n {
                return Err(Error::Dimension {
                    context: "grid_scan bounds",
                    expected: problem.n,
                    got: bounds.len(),
                });
            }
            match problem.n {
                1 => scan_box_1d(problem, t, bounds[0].0, bounds[0].1, *resolution),
                2 => scan_box_2d(problem, t, bounds, *resolution),
                n => Err(Error::Unsupported(format!(
                    "grid_scan supports n <= 2, got n = {n}"
                ))),
            }
        }
        ScanRegion::Manifold {
            param,
            lo,
            hi,
            resolution,
        } => scan_manifold(problem, t, param, *lo, *hi, *resolution),
    }
}

/// Benchmark minimum value over the region's critical structure at time
/// `t`: the lowest refined local minimum found by [`grid_scan`].
pub fn f_star(problem: &TimeVaryingProblem, t: f64, region: &ScanRegion) -> Result<f64> {
    let set = grid_scan(problem, t, region)?;
    set.minima()
        .map(|p| p.f)
        .min_by(f64::total_cmp)
        .ok_or_else(|| Error::NoConvergence {
            context: "f_star",
            residual: f64::NAN,
            tol: 0.0,
        })
}

/// A sampled-time grid starting at 0 with bounded gaps.
#[derive(Debug, Clone)]
pub struct TimePartition {
    times: Vec<f64>,
}

impl TimePartition {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::Configuration(
                "partition needs at least two times".to_string(),
            ));
        }
        if times[0] != 0.0 {
            return Err(Error::Configuration(
                "partition must start at 0".to_string(),
            ));
        }
        if !times.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Configuration(
                "partition times must be strictly increasing".to_string(),
            ));
        }
        Ok(Self { times })
    }

    /// Uniform partition of `[0, t_end]` with gaps of at most `delta`,
    /// ending exactly on `t_end`.
    pub fn uniform(t_end: f64, delta: f64) -> Result<Self> {
        if t_end <= 0.0 || delta <= 0.0 {
            return Err(Error::Configuration(
                "uniform partition needs t_end > 0 and delta > 0".to_string(),
            ));
        }
        let k = (t_end / delta).ceil() as usize;
        let mut times: Vec<f64> = (0..k).map(|i| i as f64 * delta).collect();
        times.push(t_end);
        if times[k - 1] >= t_end {
            times.remove(k - 1);
        }
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Largest consecutive gap.
    pub fn tightness(&self) -> f64 {
        self.times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }
}

/// The penalized problem of one sampled-time step: the objective gains
/// `(α/2)‖x − prev‖²/Δτ` and its gradient `α(x − prev)/Δτ`; constraints
/// are untouched.
fn penalized_problem(
    problem: &TimeVaryingProblem,
    alpha: f64,
    prev: Vec<f64>,
    dt: f64,
) -> TimeVaryingProblem {
    let mut out = problem.clone();
    let base_f = problem.objective.clone();
    let base_g = problem.gradient.clone();
    let prev_f = prev.clone();
    out.objective = Arc::new(move |x, t| {
        let d2: f64 = x
            .iter()
            .zip(&prev_f)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        base_f(x, t) + 0.5 * alpha * d2 / dt
    });
    out.gradient = Arc::new(move |x, t| {
        base_g(x, t)
            .into_iter()
            .zip(x.iter().zip(&prev))
            .map(|(g, (xi, pi))| g + alpha * (xi - pi) / dt)
            .collect()
    });
    out
}

const DISCRETE_SOLVE_TOL: f64 = 1e-8;

/// The sampled-time solution: `x₀` solves the problem at the first
/// partition time, and each subsequent `x_k` locally solves the penalized
/// program at `τ_k`, warm-started at `x_{k−1}`.
pub fn discrete_solution(
    problem: &TimeVaryingProblem,
    alpha: f64,
    partition: &TimePartition,
    x_guess: &[f64],
) -> Result<Vec<Vec<f64>>> {
    assert!(alpha > 0.0, "alpha must be positive");
    let times = partition.times();
    let mut iterates = Vec::with_capacity(times.len());
    let x0 = static_local_solve(problem, times[0], x_guess, DISCRETE_SOLVE_TOL)
        .map_err(|e| annotate_index(e, 0))?;
    iterates.push(x0);
    for k in 1..times.len() {
        let dt = times[k] - times[k - 1];
        let prev = iterates[k - 1].clone();
        let penalized = penalized_problem(problem, alpha, prev.clone(), dt);
        let xk = static_local_solve(&penalized, times[k], &prev, DISCRETE_SOLVE_TOL)
            .map_err(|e| annotate_index(e, k))?;
        iterates.push(xk);
    }
    Ok(iterates)
}

fn annotate_index(e: Error, k: usize) -> Error {
    Error::Segment {
        index: k,
        start: f64::NAN,
        end: f64::NAN,
        source: Box::new(e),
    }
}
