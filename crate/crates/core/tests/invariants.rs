//! Property suites over random instances: projection identities, order of
//! convergence, derivative consistency of the catalog, descent signs, and
//! the inversion-free structure of the lifted dynamics.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use odetrack_core::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random full-row-rank J with p < n ≤ 8. Resamples until the Gram matrix
/// factorizes comfortably, so the projection tolerances are meaningful.
fn random_full_rank(rng: &mut ChaCha8Rng) -> DenseMatrix {
    loop {
        let n = rng.gen_range(2..=8usize);
        let p = rng.gen_range(1..n);
        let data: Vec<f64> = (0..p * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let j = DenseMatrix::new(p, n, data).unwrap();
        let gram = j.gram();
        if let Ok(x) = solve_spd(&gram, &vec![1.0; p]) {
            // Reject badly conditioned draws.
            if x.iter().all(|v| v.abs() < 1e4) {
                return j;
            }
        }
    }
}

#[test]
fn projection_identities_on_random_instances() {
    let mut rng = rng(42);
    for _ in 0..100 {
        let j = random_full_rank(&mut rng);
        let n = j.cols();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();

        let pv = project_tangent(&j, &v).unwrap();
        let ppv = project_tangent(&j, &pv).unwrap();
        let pu = project_tangent(&j, &u).unwrap();

        // Idempotence: P(Pv) = Pv.
        let idem = pv
            .iter()
            .zip(&ppv)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(idem <= 1e-10, "idempotence violated: {idem:e}");

        // Self-adjointness: ⟨Pu, v⟩ = ⟨u, Pv⟩.
        let lhs: f64 = pu.iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.iter().zip(&pv).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-10, "self-adjointness: {lhs} vs {rhs}");

        // Annihilation: J (Pv) = 0.
        let jpv = matvec(&j, &pv).unwrap();
        let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let ann = jpv.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(ann <= 1e-9 * vmax, "annihilation: {ann:e} vs scale {vmax}");

        // Contraction: ‖Pv‖₂ ≤ ‖v‖₂.
        let norm = |w: &[f64]| w.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm(&pv) <= norm(&v) * (1.0 + 1e-12));
    }
}

#[test]
fn gram_apply_matches_explicit_gram_matrix() {
    let mut rng = rng(7);
    for _ in 0..50 {
        let j = random_full_rank(&mut rng);
        let p = j.rows();
        let w: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let fast = gram_apply(&j, &w).unwrap();
        let slow = matvec(&j.gram(), &w).unwrap();
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn catalog_derivatives_pass_at_random_probes() {
    let mut rng = rng(11);
    let cases: [(&str, f64, f64, f64); 4] = [
        ("quartic_switch", 6.0, 0.0, 12.0),
        ("pitchfork", 3.0, 0.0, 4.0),
        ("circle_linear", 2.0, 0.0, 6.28),
        ("clamped_quadratic", 3.0, 0.0, 3.0),
    ];
    for (name, xr, t_lo, t_hi) in cases {
        let p = catalog_get(name).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..p.n).map(|_| rng.gen_range(-xr..xr)).collect();
            let t = rng.gen_range(t_lo..t_hi);
            let report = check_derivatives(&p, &x, t, 1e-5, 1e-4).unwrap();
            assert!(
                report.pass,
                "{name} at x={x:?} t={t}: max deviation {}",
                report.max_deviation()
            );
        }
    }
}

#[test]
fn slack_lift_then_augment_is_feasible_and_consistent() {
    let mut rng = rng(13);
    let p = catalog_get("clamped_quadratic").unwrap();
    let aug = slack_augment(&p).unwrap();
    for _ in 0..30 {
        let x = vec![rng.gen_range(-3.0..0.0)];
        let t = rng.gen_range(0.0..3.0);
        let lifted = slack_lift_point(&p, &x, t).unwrap();
        let res = aug.h(&lifted, t);
        assert!(res.iter().all(|r| r.abs() <= 1e-12), "{res:?}");
        // The assembled augmented Jacobian agrees with finite differences.
        let report = check_derivatives(&aug, &lifted, t, 1e-5, 1e-4).unwrap();
        assert!(report.pass, "{}", report.max_deviation());
    }
}

#[test]
fn licq_holds_on_the_unit_circle() {
    let mut rng = rng(17);
    let p = catalog_get("circle_linear").unwrap();
    for _ in 0..50 {
        let th = rng.gen_range(0.0..std::f64::consts::TAU);
        let x = [th.cos(), th.sin()];
        let j = p.jac_h(&x, rng.gen_range(0.0..3.0));
        // p = 1: the minimal singular value is the Gram scalar's root.
        let sigma = j.gram().get(0, 0).sqrt();
        assert!(sigma >= 1.0, "sigma = {sigma}");
        assert!((sigma - 2.0).abs() < 1e-12);
    }
}

#[test]
fn reference_field_matches_pseudoinverse_decomposition() {
    let mut rng = rng(23);
    let p = catalog_get("circle_linear").unwrap();
    let alpha = 0.2;
    let field = reference_field(&p, alpha).unwrap();
    for _ in 0..50 {
        let th = rng.gen_range(0.0..std::f64::consts::TAU);
        let x = [th.cos(), th.sin()];
        let t = rng.gen_range(0.0..3.0);
        let rhs = field.eval(&x, t).unwrap();
        let (pinv, eta) = pinv_and_projected_gradient(&p, &x, t).unwrap();
        let ht = p.h_time(&x, t);
        let drift = matvec(&pinv, &ht).unwrap();
        for i in 0..2 {
            let expect = -eta[i] / alpha - drift[i];
            assert!(
                (rhs[i] - expect).abs() <= 1e-12,
                "component {i}: {} vs {expect}",
                rhs[i]
            );
        }
    }
}

#[test]
fn lifted_multiplier_relaxation_recovers_reference_velocity() {
    let mut rng = rng(29);
    let p = catalog_get("circle_linear").unwrap();
    let alpha = 0.1;
    let reference = reference_field(&p, alpha).unwrap();
    let lifted = lifted_field(&p, alpha, 1.0).unwrap();
    let cfg = TrackerConfig {
        inner_threshold: 1e-10,
        inner_max_iters: 2000,
        ..TrackerConfig::with_alpha_rho(alpha, 1.0)
    };
    for _ in 0..10 {
        let th = rng.gen_range(0.0..std::f64::consts::TAU);
        let x = vec![th.cos(), th.sin()];
        let t = rng.gen_range(0.0..3.0);
        let state = TrackerState {
            t,
            x: x.clone(),
            u: vec![0.0],
            v: vec![0.0],
        };
        let (relaxed, _iters) = inner_relax(&p, &state, &cfg).unwrap();

        // Relaxation residuals below 1e-8 in both blocks.
        let j = p.jac_h(&x, t);
        let j_grad = matvec(&j, &p.grad(&x, t)).unwrap();
        let gu = gram_apply(&j, &relaxed.u).unwrap();
        assert!((j_grad[0] - gu[0]).abs() < 1e-8);
        let ht = p.h_time(&x, t);
        let gv = gram_apply(&j, &relaxed.v).unwrap();
        assert!((ht[0] - gv[0]).abs() < 1e-8);

        // With relaxed multipliers, the x block of the lifted field equals
        // the reference right-hand side.
        let mut full = x.clone();
        full.push(relaxed.u[0]);
        full.push(relaxed.v[0]);
        let lift_rhs = lifted.eval(&full, t).unwrap();
        let ref_rhs = reference.eval(&x, t).unwrap();
        for i in 0..2 {
            assert!(
                (lift_rhs[i] - ref_rhs[i]).abs() <= 1e-6,
                "{} vs {}",
                lift_rhs[i],
                ref_rhs[i]
            );
        }
    }
}

#[test]
fn lifted_path_performs_no_spd_solves() {
    let mut rng = rng(31);
    let p = catalog_get("circle_linear").unwrap();
    let field = lifted_field(&p, 0.05, 50.0).unwrap();
    let before = OpCounter::snapshot();
    for _ in 0..100 {
        let th = rng.gen_range(0.0..std::f64::consts::TAU);
        let state = vec![
            th.cos(),
            th.sin(),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        field.eval(&state, rng.gen_range(0.0..3.0)).unwrap();
    }
    let spent = OpCounter::snapshot().since(&before);
    assert_eq!(spent.solves, 0);
    assert!(spent.grams > 0);
}

#[test]
fn descent_term_is_nonpositive_and_vanishes_only_at_kkt_points() {
    let mut rng = rng(37);
    let p = catalog_get("circle_linear").unwrap();
    for _ in 0..50 {
        let th = rng.gen_range(0.0..std::f64::consts::TAU);
        let x = [th.cos(), th.sin()];
        let t = rng.gen_range(0.0..3.0);
        let (descent, _drift, _partial) = lyapunov_rate(&p, &x, t, 0.1).unwrap();
        assert!(descent <= 1e-15, "descent = {descent}");
        let kkt = kkt_residual(&p, &x, t).unwrap();
        if kkt <= 1e-10 {
            assert!(descent.abs() <= 1e-18);
        }
        if descent.abs() <= 1e-18 {
            assert!(kkt <= 1e-8, "kkt = {kkt} with zero descent");
        }
    }
    // Unconstrained: descent = −‖∇f‖²/α, drift = 0, and for a
    // time-invariant problem the whole rate is the descent term.
    let q = TimeVaryingProblem::unconstrained(
        1,
        |x, _| x[0] * x[0],
        |x, _| vec![2.0 * x[0]],
    );
    let (descent, drift, partial) = lyapunov_rate(&q, &[1.5], 0.0, 0.5).unwrap();
    assert!((descent + 9.0 / 0.5).abs() < 1e-12);
    assert_eq!(drift, 0.0);
    assert!(partial.abs() < 1e-9);
}

#[test]
fn chain_rule_along_reference_trajectory() {
    // Finite differences of f along an integrated trajectory against the
    // analytic rate decomposition, in the transient where the rate is
    // well away from zero.
    let p = catalog_get("circle_linear").unwrap();
    let alpha = 0.05;
    let field = reference_field(&p, alpha).unwrap();
    let h = 5e-4;
    let cfg = StepperConfig::new(h, 100_000);
    let mut states = Vec::new();
    integrate_to(&field, &[0.0, 1.0], 0.0, 0.05, &cfg, |obs| {
        states.push((obs.t, obs.state.clone()));
    })
    .unwrap();
    let fs: Vec<f64> = states.iter().map(|(t, x)| p.f(x, *t)).collect();
    let mut checked = 0;
    for k in 10..states.len() - 10 {
        let fd = (fs[k + 1] - fs[k - 1]) / (2.0 * h);
        if fd.abs() < 0.05 {
            continue;
        }
        let (t, x) = &states[k];
        let (descent, drift, partial) = lyapunov_rate(&p, x, *t, alpha).unwrap();
        let total = descent + drift + partial;
        let rel = (fd - total).abs() / fd.abs();
        assert!(rel <= 1e-4, "k={k}: fd={fd} total={total} rel={rel:e}");
        checked += 1;
    }
    assert!(checked > 20, "only {checked} usable samples");
}

#[test]
fn rk4_is_fourth_order_on_linear_decay() {
    let field = OdeField::new(1, "decay", |y, _| Ok(vec![-y[0]]));
    let exact = (-1.0f64).exp();
    let mut errors = Vec::new();
    let mut step = 0.1;
    while step >= 0.00625 {
        let cfg = StepperConfig::new(step, 1_000_000);
        let y = integrate_to(&field, &[1.0], 0.0, 1.0, &cfg, |_| {}).unwrap();
        errors.push((y[0] - exact).abs());
        step /= 2.0;
    }
    for w in errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!(
            (14.0..=18.0).contains(&ratio),
            "halving ratio {ratio} outside [14, 18]; errors: {errors:?}"
        );
    }
}

#[test]
fn integration_is_deterministic() {
    let p = catalog_get("circle_linear").unwrap();
    let field = reference_field(&p, 0.05).unwrap();
    let cfg = StepperConfig::new(1e-3, 100_000);
    let run = || {
        let mut seen = Vec::new();
        let out = integrate_to(&field, &[-1.0, 0.0], 0.0, 0.3, &cfg, |obs| {
            seen.push(obs.state.clone())
        })
        .unwrap();
        (out, seen)
    };
    let (a_end, a_states) = run();
    let (b_end, b_states) = run();
    assert_eq!(a_end, b_end);
    assert_eq!(a_states, b_states);
}

#[test]
fn segment_cover_is_exact_and_disjoint() {
    let mut rng = rng(41);
    for _ in 0..50 {
        let t0 = rng.gen_range(-5.0..5.0);
        let t1 = t0 + rng.gen_range(0.1..10.0);
        let mut times: Vec<f64> = (0..rng.gen_range(0..6))
            .map(|_| rng.gen_range(-6.0..12.0))
            .collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let segments = split_at_discontinuities(t0, t1, &times).unwrap();
        assert_eq!(segments.first().unwrap().0, t0);
        assert_eq!(segments.last().unwrap().1, t1);
        for w in segments.windows(2) {
            assert_eq!(w[0].1, w[1].0); // abut exactly
            assert!(w[0].0 < w[0].1);
        }
        for (a, b) in &segments {
            assert!(times.iter().all(|s| s <= a || s >= b));
        }
    }
}

#[test]
fn tracker_loop_performs_no_spd_solves() {
    let p = catalog_get("circle_linear").unwrap();
    let cfg = TrackerConfig::default();
    let outcome = track(&p, &cfg, 0.0, 0.5, &[-1.0, 0.0], &OracleOptions::off()).unwrap();
    assert_eq!(outcome.loop_ops.solves, 0, "{:?}", outcome.loop_ops);
    assert!(outcome.init_ops.solves > 0);
    assert!(outcome.loop_ops.grams > 0);
    assert!(outcome.total_inner_iterations > 0);
}

#[test]
fn constraint_residual_stays_small_along_circle_track() {
    let p = catalog_get("circle_linear").unwrap();
    let cfg = TrackerConfig::default();
    let outcome = track(
        &p,
        &cfg,
        0.0,
        std::f64::consts::PI,
        &[-1.0, 0.0],
        &OracleOptions::off(),
    )
    .unwrap();
    let worst = outcome
        .records
        .iter()
        .map(|r| r.constraint_residual)
        .fold(0.0f64, f64::max);
    assert!(worst <= 1e-5, "max constraint residual {worst:e}");
}

#[test]
fn frozen_time_objective_is_monotone_after_switch() {
    // Past the switch the quartic no longer depends on t, so the tracked
    // objective must decrease monotonically.
    let p = catalog_get("quartic_switch").unwrap();
    let cfg = TrackerConfig::with_alpha_rho(0.05, 50.0);
    let outcome = track(&p, &cfg, 10.0, 12.0, &[-1.0], &OracleOptions::off()).unwrap();
    let mut prev = f64::INFINITY;
    for r in &outcome.records {
        assert!(r.f <= prev + 1e-12, "f rose: {prev} -> {} at t={}", r.f, r.t);
        prev = r.f;
    }
}

#[test]
fn inner_iteration_counts_sit_in_the_expected_band() {
    // Warm-started relaxations settle into the ten-to-thirty band on the
    // catalog defaults.
    let p = catalog_get("circle_linear").unwrap();
    let cfg = TrackerConfig::default();
    let outcome = track(&p, &cfg, 0.0, 0.2, &[-1.0, 0.0], &OracleOptions::off()).unwrap();
    let tail = &outcome.records[10..];
    let avg: f64 =
        tail.iter().map(|r| r.inner_iterations as f64).sum::<f64>() / tail.len() as f64;
    assert!(
        (1.0..=30.0).contains(&avg),
        "average inner iterations {avg}"
    );
}

#[test]
fn grid_scan_minima_track_sqrt_t() {
    let entry = catalog_entry("pitchfork").unwrap();
    for &t in &[0.25, 1.0, 4.0] {
        let set = grid_scan(&entry.problem, t, entry.region.as_ref().unwrap()).unwrap();
        let mut mins: Vec<f64> = set.minima().map(|p| p.x[0]).collect();
        mins.sort_by(f64::total_cmp);
        assert_eq!(mins.len(), 2, "t={t}: {set:?}");
        assert!((mins[0] + t.sqrt()).abs() < 2e-3, "t={t}: {}", mins[0]);
        assert!((mins[1] - t.sqrt()).abs() < 2e-3, "t={t}: {}", mins[1]);
    }
}

#[test]
fn penalized_objective_descends_along_discrete_solution() {
    let p = catalog_get("circle_linear").unwrap();
    let alpha = 0.05;
    let partition = TimePartition::uniform(1.0, 0.02).unwrap();
    let iterates = discrete_solution(&p, alpha, &partition, &[-1.0, 0.0]).unwrap();
    let times = partition.times();
    for k in 1..times.len() {
        let dt = times[k] - times[k - 1];
        let penalty = |x: &[f64]| {
            let d2: f64 = x
                .iter()
                .zip(&iterates[k - 1])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            0.5 * alpha * d2 / dt
        };
        let at_solution = p.f(&iterates[k], times[k]) + penalty(&iterates[k]);
        let at_warm_start = p.f(&iterates[k - 1], times[k]) + penalty(&iterates[k - 1]);
        assert!(
            at_solution <= at_warm_start + 1e-10,
            "k={k}: {at_solution} vs {at_warm_start}"
        );
    }
}
