//! Fixed-step fourth-order Runge-Kutta integration.
//!
//! The classic four-stage scheme: slopes
//! `s₁ = F(t, y)`, `s₂ = F(t + h/2, y + (h/2)s₁)`,
//! `s₃ = F(t + h/2, y + (h/2)s₂)`, `s₄ = F(t + h, y + h s₃)`,
//! combined as `y + h (s₁ + 2s₂ + 2s₃ + s₄)/6`. No step-size control:
//! adaptive stepping would confound per-iteration cost measurements, so
//! the step is fixed and the final step of a horizon is shortened to land
//! exactly on the end time.

use crate::dynamics::OdeField;
use crate::error::{Error, Result};

/// Step size and budget for a fixed-step integration run.
#[derive(Debug, Clone, Copy)]
pub struct StepperConfig {
    pub step: f64,
    pub max_steps: usize,
}

impl StepperConfig {
    pub fn new(step: f64, max_steps: usize) -> Self {
        assert!(step > 0.0, "step must be positive");
        assert!(max_steps >= 1, "max_steps must be at least 1");
        Self { step, max_steps }
    }
}

/// State snapshot handed to observers after each accepted step.
#[derive(Debug, Clone)]
pub struct Observation {
    pub t: f64,
    pub state: Vec<f64>,
    pub step_index: usize,
}

fn check_stage(stage: &[f64], t: f64, index: usize) -> Result<()> {
    if stage.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { t, stage: index });
    }
    Ok(())
}

/// One Runge-Kutta step of size `h > 0` from `(state, t)`. Exactly four
/// right-hand-side evaluations.
pub fn rk4_step(field: &OdeField, state: &[f64], t: f64, h: f64) -> Result<Vec<f64>> {
    debug_assert!(h > 0.0);
    let half = 0.5 * h;

    let s1 = field.eval(state, t)?;
    check_stage(&s1, t, 1)?;

    let y2: Vec<f64> = state.iter().zip(&s1).map(|(y, s)| y + half * s).collect();
    let s2 = field.eval(&y2, t + half)?;
    check_stage(&s2, t, 2)?;

    let y3: Vec<f64> = state.iter().zip(&s2).map(|(y, s)| y + half * s).collect();
    let s3 = field.eval(&y3, t + half)?;
    check_stage(&s3, t, 3)?;

    let y4: Vec<f64> = state.iter().zip(&s3).map(|(y, s)| y + h * s).collect();
    let s4 = field.eval(&y4, t + h)?;
    check_stage(&s4, t, 4)?;

    Ok(state
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let weighted = s1[i] + 2.0 * s2[i] + 2.0 * s3[i] + s4[i];
            y + h * (weighted / 6.0)
        })
        .collect())
}

/// Integrates `field` from `t0` to `t1 ≥ t0`, taking `⌈(t1−t0)/step⌉`
/// steps with the final step shortened to land exactly on `t1`. The
/// observer runs after every step.
pub fn integrate_to(
    field: &OdeField,
    state: &[f64],
    t0: f64,
    t1: f64,
    cfg: &StepperConfig,
    mut observer: impl FnMut(&Observation),
) -> Result<Vec<f64>> {
    if t1 < t0 {
        return Err(Error::Ordering { t0, t1 });
    }
    if t1 == t0 {
        return Ok(state.to_vec());
    }
    let span = t1 - t0;
    let mut n_steps = (span / cfg.step).ceil() as usize;
    n_steps = n_steps.max(1);
    // Guard against a penultimate grid point landing at or past t1 through
    // rounding of span/step.
    while n_steps > 1 && t0 + (n_steps - 1) as f64 * cfg.step >= t1 {
        n_steps -= 1;
    }
    if n_steps > cfg.max_steps {
        return Err(Error::Budget {
            context: "integrate_to",
            detail: format!("{n_steps} steps needed, max_steps = {}", cfg.max_steps),
        });
    }

    let mut y = state.to_vec();
    let mut t = t0;
    for k in 0..n_steps {
        let t_next = if k + 1 == n_steps {
            t1
        } else {
            t0 + (k + 1) as f64 * cfg.step
        };
        let h = t_next - t;
        y = rk4_step(field, &y, t, h)?;
        t = t_next;
        observer(&Observation {
            t,
            state: y.clone(),
            step_index: k,
        });
    }
    Ok(y)
}

/// Splits `[t0, t1]` into maximal closed segments whose interiors contain
/// none of the listed times. Segments abut exactly at the listed times;
/// times outside the open interval are ignored.
pub fn split_at_discontinuities(t0: f64, t1: f64, times: &[f64]) -> Result<Vec<(f64, f64)>> {
    if t1 < t0 {
        return Err(Error::Ordering { t0, t1 });
    }
    debug_assert!(times.windows(2).all(|w| w[0] < w[1]));
    let mut segments = Vec::new();
    let mut start = t0;
    for &s in times.iter().filter(|&&s| s > t0 && s < t1) {
        segments.push((start, s));
        start = s;
    }
    segments.push((start, t1));
    Ok(segments)
}
