//! Right-hand sides of the tracking dynamics.
//!
//! All systems are exposed as [`OdeField`] values over a flat state vector,
//! the common currency between problem definitions and the integrator:
//!
//! * [`reference_field`] — the tracking flow
//!   `ẋ = −(1/α) P ∇ₓf − Jᵀ(JJᵀ)⁻¹ h'`, which keeps `h` conserved while
//!   descending `f`. Needs one SPD solve per evaluation.
//! * [`lifted_field`] — the inversion-free replacement over `(x, u, v)`:
//!   `ẋ = −(1/α)∇ₓf + (1/α)Jᵀu − Jᵀv`,
//!   `u̇ = ρ (J∇ₓf − JJᵀu)`, `v̇ = ρ (h' − JJᵀv)`.
//!   Only matrix-vector products; `u, v` relax toward `(JJᵀ)⁻¹J∇ₓf` and
//!   `(JJᵀ)⁻¹h'`, recovering the reference flow as `ρ → ∞`.
//! * [`frozen_field`] / [`rescaled_field`] — projected gradient flow with
//!   time held at `t₀`, and its `α`-rescaled bridge back to real time.
//! * [`newton_field`] / [`newton_lift_field`] — continuous Newton
//!   `u̇ = −F'(u)⁻¹F(u)` on a root-finding system, and its inversion-free
//!   vector lift `u̇ = −v`, `v̇ = ρ[F(u) − F'(u)v]`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{
    self, gram_apply, matvec, matvec_transpose, project_tangent, solve_spd, DenseMatrix,
};
use crate::problem::TimeVaryingProblem;

type RhsFn = Arc<dyn Fn(&[f64], f64) -> Result<Vec<f64>> + Send + Sync>;

/// A right-hand-side evaluator over a flat state vector.
#[derive(Clone)]
pub struct OdeField {
    state_dim: usize,
    label: String,
    rhs: RhsFn,
}

impl OdeField {
    pub fn new(
        state_dim: usize,
        label: impl Into<String>,
        rhs: impl Fn(&[f64], f64) -> Result<Vec<f64>> + Send + Sync + 'static,
    ) -> Self {
        Self {
            state_dim,
            label: label.into(),
            rhs: Arc::new(rhs),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Evaluates the right-hand side, enforcing the output-length
    /// invariant.
    pub fn eval(&self, state: &[f64], t: f64) -> Result<Vec<f64>> {
        debug_assert_eq!(state.len(), self.state_dim);
        let out = (self.rhs)(state, t)?;
        if out.len() != self.state_dim {
            return Err(Error::Dimension {
                context: "OdeField::eval output",
                expected: self.state_dim,
                got: out.len(),
            });
        }
        Ok(out)
    }
}

impl std::fmt::Debug for OdeField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OdeField")
            .field("state_dim", &self.state_dim)
            .field("label", &self.label)
            .finish()
    }
}

fn expect_equality_only(problem: &TimeVaryingProblem, what: &str) -> Result<()> {
    if !problem.is_equality_only() {
        return Err(Error::Configuration(format!(
            "{what}: problem has inequality constraints; apply slack_augment first"
        )));
    }
    Ok(())
}

fn singular_at(e: Error, what: &str, x: &[f64], t: f64) -> Error {
    match e {
        Error::Singular { row, pivot, .. } => Error::Singular {
            context: format!("{what} at t={t:.6} x={x:?}"),
            row,
            pivot,
        },
        other => other,
    }
}

/// The tracking flow `ẋ = −(1/α) P ∇ₓf(x,t) − Jᵀ(JJᵀ)⁻¹ h'(x,t)`.
/// For an unconstrained problem this is plain gradient flow `−(1/α)∇ₓf`.
pub fn reference_field(problem: &TimeVaryingProblem, alpha: f64) -> Result<OdeField> {
    assert!(alpha > 0.0, "alpha must be positive");
    expect_equality_only(problem, "reference_field")?;
    let pb = problem.clone();
    let n = problem.n;
    Ok(OdeField::new(n, "reference", move |x, t| {
        let grad = pb.grad(x, t);
        if pb.p == 0 {
            return Ok(grad.iter().map(|g| -g / alpha).collect());
        }
        let j = pb.jac_h(x, t);
        let descent =
            project_tangent(&j, &grad).map_err(|e| singular_at(e, "reference_field", x, t))?;
        let ht = pb.h_time(x, t);
        let w = solve_spd(&j.gram(), &ht)
            .map_err(|e| singular_at(e, "reference_field", x, t))?;
        let drift = matvec_transpose(&j, &w)?;
        Ok(descent
            .iter()
            .zip(&drift)
            .map(|(d, r)| -d / alpha - r)
            .collect())
    }))
}

/// The right-hand side of the tracking flow split into its two terms:
/// the right pseudoinverse `Jᵀ(JJᵀ)⁻¹` (n×p, the multiplier basis) and the
/// projected gradient `P ∇ₓf`. The reference field equals
/// `−(1/α)·projected_gradient − pseudoinverse·h'` exactly.
pub fn pinv_and_projected_gradient(
    problem: &TimeVaryingProblem,
    x: &[f64],
    t: f64,
) -> Result<(DenseMatrix, Vec<f64>)> {
    expect_equality_only(problem, "pinv_and_projected_gradient")?;
    let j = problem.jac_h(x, t);
    let p = j.rows();
    let n = j.cols();
    let gram = j.gram();
    let mut pinv = DenseMatrix::zeros(n, p);
    // Column by column: pinv e_k = Jᵀ (JJᵀ)⁻¹ e_k.
    for k in 0..p {
        let mut e = vec![0.0; p];
        e[k] = 1.0;
        let w = solve_spd(&gram, &e)
            .map_err(|err| singular_at(err, "pinv_and_projected_gradient", x, t))?;
        let col = matvec_transpose(&j, &w)?;
        for i in 0..n {
            pinv.set(i, k, col[i]);
        }
    }
    let grad = problem.grad(x, t);
    let eta = project_tangent(&j, &grad)
        .map_err(|err| singular_at(err, "pinv_and_projected_gradient", x, t))?;
    Ok((pinv, eta))
}

/// The inversion-free lifted system over the stacked state `(x, u, v)`
/// of dimension `n + 2p`. Uses only matrix-vector and Gram products —
/// never an SPD solve.
pub fn lifted_field(problem: &TimeVaryingProblem, alpha: f64, rho: f64) -> Result<OdeField> {
    assert!(alpha > 0.0, "alpha must be positive");
    assert!(rho > 0.0, "rho must be positive");
    expect_equality_only(problem, "lifted_field")?;
    let pb = problem.clone();
    let n = problem.n;
    let p = problem.p;
    Ok(OdeField::new(n + 2 * p, "lifted", move |state, t| {
        let (x, uv) = state.split_at(n);
        let (u, v) = uv.split_at(p);
        let grad = pb.grad(x, t);
        if p == 0 {
            return Ok(grad.iter().map(|g| -g / alpha).collect());
        }
        let j = pb.jac_h(x, t);
        let jt_u = matvec_transpose(&j, u)?;
        let jt_v = matvec_transpose(&j, v)?;
        let j_grad = matvec(&j, &grad)?;
        let g_u = gram_apply(&j, u)?;
        let g_v = gram_apply(&j, v)?;
        let ht = pb.h_time(x, t);

        let mut out = Vec::with_capacity(n + 2 * p);
        for i in 0..n {
            out.push(-grad[i] / alpha + jt_u[i] / alpha - jt_v[i]);
        }
        for i in 0..p {
            out.push(rho * (j_grad[i] - g_u[i]));
        }
        for i in 0..p {
            out.push(rho * (ht[i] - g_v[i]));
        }
        Ok(out)
    }))
}

/// Projected gradient flow with time frozen at `t0`:
/// `ẋ(s) = −P ∇ₓf(x, t0)`. Autonomous; the integration variable is
/// ignored.
pub fn frozen_field(problem: &TimeVaryingProblem, t0: f64) -> Result<OdeField> {
    expect_equality_only(problem, "frozen_field")?;
    let pb = problem.clone();
    let n = problem.n;
    Ok(OdeField::new(n, "frozen", move |x, _s| {
        let grad = pb.grad(x, t0);
        if pb.p == 0 {
            return Ok(grad.iter().map(|g| -g).collect());
        }
        let j = pb.jac_h(x, t0);
        let eta =
            project_tangent(&j, &grad).map_err(|e| singular_at(e, "frozen_field", x, t0))?;
        Ok(eta.iter().map(|g| -g).collect())
    }))
}

/// The tracking flow in rescaled time `s = (t − t0)/α`:
/// `ẋ(s) = −P ∇ₓf(x, αs + t0) − α Jᵀ(JJᵀ)⁻¹ h'(x, αs + t0)`.
/// At `α = 0` this coincides with [`frozen_field`] bitwise.
pub fn rescaled_field(problem: &TimeVaryingProblem, alpha: f64, t0: f64) -> Result<OdeField> {
    assert!(alpha >= 0.0, "alpha must be non-negative");
    expect_equality_only(problem, "rescaled_field")?;
    let pb = problem.clone();
    let n = problem.n;
    Ok(OdeField::new(n, "rescaled", move |x, s| {
        let t = alpha * s + t0;
        let grad = pb.grad(x, t);
        if pb.p == 0 {
            return Ok(grad.iter().map(|g| -g).collect());
        }
        let j = pb.jac_h(x, t);
        let eta =
            project_tangent(&j, &grad).map_err(|e| singular_at(e, "rescaled_field", x, t))?;
        if alpha == 0.0 {
            return Ok(eta.iter().map(|g| -g).collect());
        }
        let ht = pb.h_time(x, t);
        let w = solve_spd(&j.gram(), &ht).map_err(|e| singular_at(e, "rescaled_field", x, t))?;
        let drift = matvec_transpose(&j, &w)?;
        Ok(eta
            .iter()
            .zip(&drift)
            .map(|(e, d)| -e - alpha * d)
            .collect())
    }))
}

type ResidualFn = Arc<dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync>;
type JacobianFn = Arc<dyn Fn(&[f64]) -> Result<DenseMatrix> + Send + Sync>;

/// A square root-finding system `F(u) = 0` with its Jacobian `F'`.
#[derive(Clone)]
pub struct NewtonSystem {
    pub dim: usize,
    pub residual: ResidualFn,
    pub jacobian: JacobianFn,
}

impl NewtonSystem {
    pub fn new(
        dim: usize,
        residual: impl Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync + 'static,
        jacobian: impl Fn(&[f64]) -> Result<DenseMatrix> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            residual: Arc::new(residual),
            jacobian: Arc::new(jacobian),
        }
    }
}

/// Solves the square system `A w = b` through the normal equations
/// `(AᵀA) w = Aᵀ b`. `A` need not be symmetric; a singular `A` surfaces as
/// the SPD solve failing.
pub(crate) fn solve_square(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let dim = a.rows();
    let mut ata = DenseMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..=i {
            let mut s = 0.0;
            for k in 0..dim {
                s += a.get(k, i) * a.get(k, j);
            }
            ata.set(i, j, s);
            ata.set(j, i, s);
        }
    }
    let mut atb = vec![0.0; dim];
    for (i, out) in atb.iter_mut().enumerate() {
        for k in 0..dim {
            *out += a.get(k, i) * b[k];
        }
    }
    solve_spd(&ata, &atb)
}

/// Continuous Newton flow `u̇ = −F'(u)⁻¹ F(u)` toward a root of `F`.
pub fn newton_field(system: &NewtonSystem) -> OdeField {
    let sys = system.clone();
    OdeField::new(system.dim, "newton", move |u, _t| {
        let f = (sys.residual)(u)?;
        let fp = (sys.jacobian)(u)?;
        let w = solve_square(&fp, &f).map_err(|e| match e {
            Error::Singular { row, pivot, .. } => Error::Singular {
                context: format!("newton_field at u={u:?}"),
                row,
                pivot,
            },
            other => other,
        })?;
        Ok(w.into_iter().map(|wi| -wi).collect())
    })
}

/// Inversion-free vector lift of the continuous Newton flow over `(u, v)`:
/// `u̇ = −v`, `v̇ = ρ [F(u) − F'(u) v]`. Uses only residual evaluations and
/// Jacobian-vector products; `u` converges to a root of `F`.
pub fn newton_lift_field(system: &NewtonSystem, rho: f64) -> OdeField {
    assert!(rho > 0.0, "rho must be positive");
    let sys = system.clone();
    let dim = system.dim;
    OdeField::new(2 * dim, "newton-lift", move |state, _t| {
        let (u, v) = state.split_at(dim);
        let f = (sys.residual)(u)?;
        let fp = (sys.jacobian)(u)?;
        let fpv = matvec(&fp, v)?;
        let mut out: Vec<f64> = v.iter().map(|vi| -vi).collect();
        out.extend(f.iter().zip(&fpv).map(|(fi, ji)| rho * (fi - ji)));
        Ok(out)
    })
}

/// Continuous Newton on the stationarity system `F(x) = ∇ₓf(x, t)` of an
/// unconstrained problem, with the time argument passed through and the
/// Hessian approximated by central differences of the gradient.
pub fn gradient_newton_field(problem: &TimeVaryingProblem, fd_step: f64) -> Result<OdeField> {
    if problem.p != 0 || problem.q != 0 {
        return Err(Error::Configuration(
            "gradient_newton_field supports unconstrained problems only".to_string(),
        ));
    }
    let pb = problem.clone();
    let n = problem.n;
    Ok(OdeField::new(n, "gradient-newton", move |x, t| {
        let f = pb.grad(x, t);
        let fp = fd_hessian(&pb, x, t, fd_step);
        let w = solve_square(&fp, &f).map_err(|e| singular_at(e, "gradient_newton_field", x, t))?;
        Ok(w.into_iter().map(|wi| -wi).collect())
    }))
}

/// Central-difference Hessian of the objective, symmetrized.
pub fn fd_hessian(problem: &TimeVaryingProblem, x: &[f64], t: f64, fd_step: f64) -> DenseMatrix {
    let n = problem.n;
    let mut h = DenseMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        xp[j] = x[j] + fd_step;
        let gp = problem.grad(&xp, t);
        xp[j] = x[j] - fd_step;
        let gm = problem.grad(&xp, t);
        xp[j] = x[j];
        for i in 0..n {
            h.set(i, j, (gp[i] - gm[i]) / (2.0 * fd_step));
        }
    }
    // Symmetrize to wash out finite-difference asymmetry.
    let mut sym = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            sym.set(i, j, 0.5 * (h.get(i, j) + h.get(j, i)));
        }
    }
    sym
}

/// The three terms of `d f(x(t), t)/dt` along the tracking flow:
/// `descent = −(1/α) ∇ₓfᵀ P ∇ₓf` (always ≤ 0),
/// `drift = −∇ₓfᵀ Jᵀ(JJᵀ)⁻¹ h'`, and
/// `partial = ∂f/∂t` by central difference with step 1e−6.
pub fn lyapunov_rate(
    problem: &TimeVaryingProblem,
    x: &[f64],
    t: f64,
    alpha: f64,
) -> Result<(f64, f64, f64)> {
    assert!(alpha > 0.0, "alpha must be positive");
    expect_equality_only(problem, "lyapunov_rate")?;
    let grad = problem.grad(x, t);
    let (descent, drift) = if problem.p == 0 {
        (-linalg::dot(&grad, &grad) / alpha, 0.0)
    } else {
        let j = problem.jac_h(x, t);
        let eta =
            project_tangent(&j, &grad).map_err(|e| singular_at(e, "lyapunov_rate", x, t))?;
        let ht = problem.h_time(x, t);
        let w = solve_spd(&j.gram(), &ht).map_err(|e| singular_at(e, "lyapunov_rate", x, t))?;
        let j_grad = matvec(&j, &grad)?;
        (
            -linalg::dot(&grad, &eta) / alpha,
            -linalg::dot(&j_grad, &w),
        )
    };
    const DT: f64 = 1e-6;
    let partial = (problem.f(x, t + DT) - problem.f(x, t - DT)) / (2.0 * DT);
    Ok((descent, drift, partial))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm_inf;
    use crate::problem::catalog_get;

    fn scalar_quadratic() -> TimeVaryingProblem {
        TimeVaryingProblem::unconstrained(
            1,
            |x, _| 0.5 * (x[0] - 1.0) * (x[0] - 1.0),
            |x, _| vec![x[0] - 1.0],
        )
    }

    #[test]
    fn reference_unconstrained_is_gradient_flow() {
        let field = reference_field(&scalar_quadratic(), 1.0).unwrap();
        let rhs = field.eval(&[0.0], 0.0).unwrap();
        assert!((rhs[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reference_vanishes_at_constrained_stationary_point() {
        // (1, 0) is a stationary point of f = x₁ on the unit circle: the
        // gradient is normal to the manifold and h' = 0.
        let p = catalog_get("circle_linear").unwrap();
        let field = reference_field(&p, 1.0).unwrap();
        let rhs = field.eval(&[1.0, 0.0], 0.0).unwrap();
        assert!(norm_inf(&rhs) < 1e-14);
    }

    #[test]
    fn reference_projects_and_scales() {
        let p = catalog_get("circle_linear").unwrap();
        let field = reference_field(&p, 0.5).unwrap();
        let rhs = field.eval(&[0.0, 1.0], 0.0).unwrap();
        assert!((rhs[0] + 2.0).abs() < 1e-14);
        assert!(rhs[1].abs() < 1e-14);
    }

    #[test]
    fn pinv_axis_constraint() {
        let p = TimeVaryingProblem::unconstrained(
            2,
            |x, _| x[0] + 3.0 * x[1],
            |_, _| vec![1.0, 3.0],
        )
        .with_equalities(
            1,
            |x, _| vec![x[0]],
            |_, _| DenseMatrix::from_rows(&[&[1.0, 0.0]]),
            |_, _| vec![0.0],
        );
        let (pinv, eta) = pinv_and_projected_gradient(&p, &[0.0, 0.5], 0.0).unwrap();
        assert_eq!((pinv.rows(), pinv.cols()), (2, 1));
        assert!((pinv.get(0, 0) - 1.0).abs() < 1e-14);
        assert!(pinv.get(1, 0).abs() < 1e-14);
        // eta keeps only the free coordinate of the gradient.
        assert!(eta[0].abs() < 1e-14);
        assert!((eta[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn pinv_circle_column() {
        let p = catalog_get("circle_linear").unwrap();
        let (pinv, _eta) = pinv_and_projected_gradient(&p, &[0.0, 1.0], 0.0).unwrap();
        // J = [0, 2], JJᵀ = 4, so the column is Jᵀ/4 = (0, 0.5).
        assert!(pinv.get(0, 0).abs() < 1e-14);
        assert!((pinv.get(1, 0) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn lifted_equilibrium_at_relaxed_multipliers() {
        let p = catalog_get("circle_linear").unwrap();
        let field = lifted_field(&p, 1.0, 3.0).unwrap();
        // u* = (JJᵀ)⁻¹ J ∇f = 2/4 = 0.5 at x = (1,0); v* = 0 since h' = 0.
        let rhs = field.eval(&[1.0, 0.0, 0.5, 0.0], 0.0).unwrap();
        assert!(norm_inf(&rhs) < 1e-14);
    }

    #[test]
    fn lifted_at_zero_multipliers() {
        let p = catalog_get("circle_linear").unwrap();
        let field = lifted_field(&p, 1.0, 5.0).unwrap();
        let rhs = field.eval(&[0.0, 1.0, 0.0, 0.0], 0.0).unwrap();
        // ẋ = −∇f = (−1, 0); J∇f = 0 so u̇ = 0; h' = 0 so v̇ = 0.
        assert!((rhs[0] + 1.0).abs() < 1e-14);
        assert!(rhs[1].abs() < 1e-14);
        assert!(rhs[2].abs() < 1e-14);
        assert!(rhs[3].abs() < 1e-14);
    }

    #[test]
    fn lifted_unconstrained_has_no_multiplier_block() {
        let p = catalog_get("pitchfork").unwrap();
        let field = lifted_field(&p, 2.0, 10.0).unwrap();
        assert_eq!(field.state_dim(), 1);
        let rhs = field.eval(&[1.0], 1.0).unwrap();
        // −(1/α) f' = −(4 − 4)/2 = 0 at the t=1 minimum x=1.
        assert!(rhs[0].abs() < 1e-14);
    }

    #[test]
    fn frozen_field_examples() {
        let p = catalog_get("quartic_switch").unwrap();
        let f10 = frozen_field(&p, 10.0).unwrap();
        assert!(f10.eval(&[-3.0], 0.0).unwrap()[0].abs() < 1e-12);
        let f0 = frozen_field(&p, 0.0).unwrap();
        assert!(f0.eval(&[-4.0], 0.0).unwrap()[0].abs() < 1e-12);

        let pf = catalog_get("pitchfork").unwrap();
        let f1 = frozen_field(&pf, 1.0).unwrap();
        assert!((f1.eval(&[2.0], 0.0).unwrap()[0] + 24.0).abs() < 1e-12);
    }

    #[test]
    fn rescaled_matches_frozen_at_zero_alpha() {
        let p = catalog_get("circle_linear").unwrap();
        let frozen = frozen_field(&p, 0.3).unwrap();
        let rescaled = rescaled_field(&p, 0.0, 0.3).unwrap();
        for k in 0..20 {
            let ang = 0.31 * k as f64;
            let x = [ang.cos(), ang.sin()];
            let s = 0.17 * k as f64;
            assert_eq!(frozen.eval(&x, s).unwrap(), rescaled.eval(&x, s).unwrap());
        }
    }

    #[test]
    fn rescaled_unconstrained_is_time_shift_at_unit_alpha() {
        let p = catalog_get("quartic_switch").unwrap();
        let field = rescaled_field(&p, 1.0, 0.0).unwrap();
        for &(x, s) in &[(-3.5, 0.0), (1.0, 2.0), (-0.5, 9.0)] {
            let rhs = field.eval(&[x], s).unwrap();
            assert!((rhs[0] + p.grad(&[x], s)[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn rescaled_circle_drops_drift_when_h_constant() {
        let p = catalog_get("circle_linear").unwrap();
        let field = rescaled_field(&p, 0.5, 0.0).unwrap();
        let rhs = field.eval(&[0.0, 1.0], 0.0).unwrap();
        assert!((rhs[0] + 1.0).abs() < 1e-14);
        assert!(rhs[1].abs() < 1e-14);
    }

    #[test]
    fn newton_scalar_shift() {
        let sys = NewtonSystem::new(
            1,
            |u| Ok(vec![u[0] - 3.0]),
            |_| Ok(DenseMatrix::identity(1)),
        );
        let field = newton_field(&sys);
        let rhs = field.eval(&[5.0], 0.0).unwrap();
        assert!((rhs[0] + 2.0).abs() < 1e-14);
    }

    #[test]
    fn newton_diagonal_linear_system() {
        let sys = NewtonSystem::new(
            2,
            |u| Ok(vec![2.0 * u[0] - 2.0, 4.0 * u[1] - 4.0]),
            |_| Ok(DenseMatrix::from_rows(&[&[2.0, 0.0], &[0.0, 4.0]])),
        );
        let field = newton_field(&sys);
        let rhs = field.eval(&[0.0, 0.0], 0.0).unwrap();
        assert!((rhs[0] - 1.0).abs() < 1e-12);
        assert!((rhs[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn newton_on_quartic_gradient_after_switch() {
        // f'(−4) = 4·(−4)·(−4+3)² = −16 and f''(−4) = 36 once the switch
        // has passed, so the Newton field is 16/36 = 4/9.
        let p = catalog_get("quartic_switch").unwrap();
        let field = gradient_newton_field(&p, 1e-5).unwrap();
        let rhs = field.eval(&[-4.0], 12.0).unwrap();
        assert!((rhs[0] - 4.0 / 9.0).abs() < 1e-6, "got {}", rhs[0]);
    }

    #[test]
    fn newton_singularity_carries_location() {
        let sys = NewtonSystem::new(
            1,
            |u| Ok(vec![u[0] * u[0]]),
            |_| Ok(DenseMatrix::from_rows(&[&[0.0]])),
        );
        let field = newton_field(&sys);
        match field.eval(&[0.7], 0.0) {
            Err(Error::Singular { context, .. }) => assert!(context.contains("0.7")),
            other => panic!("expected singularity, got {other:?}"),
        }
    }

    #[test]
    fn newton_lift_definition_and_fixed_point() {
        let sys = NewtonSystem::new(1, |u| Ok(vec![u[0]]), |_| Ok(DenseMatrix::identity(1)));
        let field = newton_lift_field(&sys, 2.0);
        let rhs = field.eval(&[1.0, 0.0], 0.0).unwrap();
        assert_eq!(rhs, vec![0.0, 2.0]);
        // At (root, 0) the lift is at rest.
        let rest = field.eval(&[0.0, 0.0], 0.0).unwrap();
        assert_eq!(rest, vec![0.0, 0.0]);
    }

    #[test]
    fn lyapunov_rate_at_kkt_point_has_zero_descent() {
        let p = catalog_get("circle_linear").unwrap();
        let (descent, drift, _partial) = lyapunov_rate(&p, &[1.0, 0.0], 0.0, 0.1).unwrap();
        assert!(descent.abs() < 1e-14);
        assert!(drift.abs() < 1e-14);
    }

    #[test]
    fn lyapunov_rate_unconstrained_signs() {
        let p = scalar_quadratic();
        let (descent, drift, partial) = lyapunov_rate(&p, &[0.0], 0.0, 2.0).unwrap();
        assert!((descent + 0.5).abs() < 1e-12); // −‖∇f‖²/α = −1/2
        assert_eq!(drift, 0.0);
        assert!(partial.abs() < 1e-9);
    }
}
