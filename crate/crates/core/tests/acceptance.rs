//! Acceptance suite: one test per criterion, each printing a pass line
//! with the measured numbers (run with `-- --nocapture` to see them).

use biofilm_fem::analysis::{appendix_rate_check, convergence_study, planned_study, AppendixCheck};
use biofilm_fem::experiments::{builtin_experiment, experiment_names};
use biofilm_fem::model::{
    zero_source, BoundaryKind, DiffusivityLaw, GrowthLaw, InitialData, ModelSpec, MonodSpec,
};
use biofilm_fem::solver::enumeration::run_comparison;
use biofilm_fem::solver::{check_complementarity, NewtonOptions, Stepper};
use biofilm_fem::timeloop::{initialize, run_to_completion, MeshSource, RunConfig, Trajectory};

fn in_band(orders: &[f64], lo: f64, hi: f64) -> bool {
    !orders.is_empty() && orders.iter().all(|&o| (lo..=hi).contains(&o))
}

/// Criterion 1: three-level 1D study, ERR1 orders in [0.85, 1.15] and
/// ERR2 orders in [1.3, 1.6], against a nested fine surrogate.
#[test]
fn criterion_1_ex5_1_convergence() {
    let (exp, plan) = planned_study::<f64>("ex5_1", None).unwrap();
    let report = convergence_study(&exp.model, &plan).unwrap();
    assert!(
        report.failure.is_none(),
        "study failed: {:?}",
        report.failure
    );
    let (o1, o2) = report.table.observed_orders();
    assert_eq!(o1.len(), 2);
    assert!(
        in_band(&o1, 0.85, 1.15),
        "ERR1 orders {o1:?} outside [0.85, 1.15]"
    );
    assert!(
        in_band(&o2, 1.3, 1.6),
        "ERR2 orders {o2:?} outside [1.3, 1.6]"
    );
    // The middle row reproduces the reported error magnitudes within a
    // factor of two (h = 0.005, dt = 0.005 against the fine surrogate).
    let mid = report.table.rows[1];
    assert!(
        (0.7e-4..=2.8e-4).contains(&mid.err1),
        "ERR1 at h=0.005 is {}, expected about 1.4e-4",
        mid.err1
    );
    assert!(
        (0.5e-4..=2.0e-4).contains(&mid.err2),
        "ERR2 at h=0.005 is {}, expected about 1.0e-4",
        mid.err2
    );
    println!(
        "criterion 1: PASS  ERR1 orders {:.4?}, ERR2 orders {:.4?}, ERR1(h=0.005) = {:.3e}",
        o1, o2, mid.err1
    );
}

/// Criterion 2: 2D studies (Dirichlet and Neumann), ERR1 orders in
/// [0.9, 1.7] and ERR2 orders in [0.85, 1.8].
#[test]
fn criterion_2_ex5_3_convergence() {
    let (exp, plan) = planned_study::<f64>("ex5_3", None).unwrap();
    let report = convergence_study(&exp.model, &plan).unwrap();
    assert!(
        report.failure.is_none(),
        "study failed: {:?}",
        report.failure
    );
    let (o1, o2) = report.table.observed_orders();
    assert!(
        in_band(&o1, 0.9, 1.7),
        "ERR1 orders {o1:?} outside [0.9, 1.7]"
    );
    assert!(
        in_band(&o2, 0.85, 1.8),
        "ERR2 orders {o2:?} outside [0.85, 1.8]"
    );
    println!("criterion 2 (Dirichlet): PASS  ERR1 orders {o1:.4?}, ERR2 orders {o2:.4?}");
}

#[test]
fn criterion_2_ex5_4_convergence() {
    let (exp, plan) = planned_study::<f64>("ex5_4", None).unwrap();
    let report = convergence_study(&exp.model, &plan).unwrap();
    assert!(
        report.failure.is_none(),
        "study failed: {:?}",
        report.failure
    );
    let (o1, o2) = report.table.observed_orders();
    assert!(
        in_band(&o1, 0.9, 1.7),
        "ERR1 orders {o1:?} outside [0.9, 1.7]"
    );
    assert!(
        in_band(&o2, 0.85, 1.8),
        "ERR2 orders {o2:?} outside [0.85, 1.8]"
    );
    println!("criterion 2 (Neumann): PASS  ERR1 orders {o1:.4?}, ERR2 orders {o2:.4?}");
}

/// Criterion 3: mean Newton iterations per step of the 1D reference run
/// stay within [1, 4] at tol = 1e-6.
#[test]
fn criterion_3_newton_cost() {
    let e = builtin_experiment::<f64>("ex5_1").unwrap();
    assert_eq!(e.config.tol, 1e-6);
    let traj = run_to_completion(&e.model, &e.config).unwrap();
    let mean = traj.mean_newton_iterations();
    assert!(
        (1.0..=4.0).contains(&mean),
        "mean Newton iterations {mean} outside [1, 4]"
    );
    println!("criterion 3: PASS  mean Newton iterations {mean:.2}");
}

fn capture_every_step(cfg: &RunConfig<f64>) -> RunConfig<f64> {
    let mut cfg = cfg.clone();
    let n_steps = (cfg.t_final / cfg.dt).round() as usize;
    cfg.sample_times = (0..=n_steps).map(|k| k as f64 * cfg.dt).collect();
    cfg
}

/// Criterion 4: complementarity holds at every step of every built-in
/// experiment. Upper-bound-only experiments check the literal triple
/// {B <= B* + 1e-10, lambda <= 1e-10, |lambda (B - B*)| <= 1e-8}; the
/// double-obstacle problem checks the two-sided generalization.
#[test]
fn criterion_4_complementarity_suite() {
    let mut checked = 0usize;
    for name in experiment_names() {
        let e = builtin_experiment::<f64>(name).unwrap();
        let cfg = capture_every_step(&e.config);
        let traj =
            run_to_completion(&e.model, &cfg).unwrap_or_else(|err| panic!("{name} failed: {err}"));
        assert_eq!(traj.captured.len(), traj.series.len(), "{name} capture gap");
        let upper_only = e.model.b_lower == f64::NEG_INFINITY;
        for state in &traj.captured {
            let c = check_complementarity(state, e.model.b_lower, e.model.b_upper);
            assert!(
                c.max_bound_violation <= 1e-10,
                "{name}: bound violation {} at t = {}",
                c.max_bound_violation,
                state.t
            );
            if upper_only {
                assert!(
                    c.max_lambda_sign <= 1e-10,
                    "{name}: positive multiplier {} at t = {}",
                    c.max_lambda_sign,
                    state.t
                );
            }
            assert!(
                c.max_product <= 1e-8,
                "{name}: complementarity defect {} at t = {}",
                c.max_product,
                state.t
            );
            checked += 1;
        }
        // Smoke-test expectations for the porescale runs: consumption
        // under Neumann conditions never increases total nutrient.
        if e.model.bc == BoundaryKind::NeumannZero {
            for w in traj.series.windows(2) {
                assert!(
                    w[1].total_n <= w[0].total_n + 1e-12,
                    "{name}: nutrient grew at step {}",
                    w[1].step
                );
            }
        }
    }
    println!("criterion 4: PASS  complementarity at {checked} captured states, zero failures");
}

fn conservation_model(dim: usize) -> (ModelSpec<f64>, RunConfig<f64>) {
    let model = ModelSpec {
        d_b: DiffusivityLaw::Constant(0.3),
        d_n: DiffusivityLaw::Constant(0.7),
        growth: GrowthLaw::Monod(MonodSpec {
            kappa_b: 0.0,
            kappa_n: 0.0,
            n_half: 1.0,
        }),
        b_lower: f64::NEG_INFINITY,
        b_upper: f64::INFINITY,
        f_source: zero_source(),
        g_source: zero_source(),
        bc: BoundaryKind::NeumannZero,
        b_init: InitialData::func(|x: &[f64]| 0.02 + 0.01 * (3.0 * x[0]).sin()),
        n_init: InitialData::func(|x: &[f64]| {
            1.0 + 0.4 * (2.0 * x[0]).cos() * if x.len() > 1 { (1.5 * x[1]).sin() } else { 1.0 }
        }),
        nutrient_enabled: true,
    };
    let mesh = if dim == 1 {
        MeshSource::Interval {
            a: 0.0,
            b: 1.0,
            cells: 30,
        }
    } else {
        MeshSource::Rectangle {
            x: (-1.0, 1.0),
            y: (-1.0, 1.0),
            cells_per_side: 8,
        }
    };
    (model, RunConfig::new(mesh, 0.002, 0.1, vec![]))
}

/// Criterion 5: with Neumann conditions, no reactions, and no sources,
/// total biomass and nutrient are conserved to 1e-10 relative at every
/// step; consumption-only runs have nonincreasing total nutrient.
#[test]
fn criterion_5_conservation() {
    for dim in [1, 2] {
        let (model, cfg) = conservation_model(dim);
        let traj = run_to_completion(&model, &cfg).unwrap();
        let b0 = traj.series[0].total_b;
        let n0 = traj.series[0].total_n;
        for d in &traj.series {
            assert!(
                (d.total_b - b0).abs() <= 1e-10 * b0.abs(),
                "{dim}D biomass drift {} at step {}",
                (d.total_b - b0).abs() / b0.abs(),
                d.step
            );
            assert!(
                (d.total_n - n0).abs() <= 1e-10 * n0.abs(),
                "{dim}D nutrient drift at step {}",
                d.step
            );
        }
    }
    // Consumption only: Monod utilization, no sources, Neumann.
    let e = builtin_experiment::<f64>("ex5_2_i").unwrap();
    let traj = run_to_completion(&e.model, &e.config).unwrap();
    for w in traj.series.windows(2) {
        assert!(w[1].total_n <= w[0].total_n + 1e-12);
    }
    println!(
        "criterion 5: PASS  conservation to 1e-10 relative (1D and 2D), nutrient nonincreasing"
    );
}

/// Criterion 6: semismooth Newton agrees with active-set enumeration on
/// 20 randomized small instances to 1e-8 in max norm.
#[test]
fn criterion_6_oracle_equivalence() {
    let mut activated = 0usize;
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let report = run_comparison::<f64>(seed, false).unwrap();
        assert!(
            report.max_diff <= 1e-8,
            "seed {seed}: disagreement {} at node {} ({})",
            report.max_diff,
            report.worst_node,
            report.worst_component
        );
        if report.active_nodes > 0 {
            activated += 1;
        }
        worst = worst.max(report.max_diff);
    }
    assert!(activated >= 3, "too few active instances ({activated}/20)");
    println!(
        "criterion 6: PASS  20/20 instances agree (worst diff {worst:.2e}, {activated} with active sets)"
    );
}

/// Criterion 7: the unconstrained study at dt = c h^2 shows ERR1 order
/// in [1.7, 2.2], and the constrained solver with B* = +inf matches the
/// plain Galerkin path to 1e-10 over a full run.
#[test]
fn criterion_7_unconstrained_order_and_consistency() {
    let report = appendix_rate_check::<f64>(AppendixCheck::Unconstrained).unwrap();
    assert!(report.failure.is_none());
    let (o1, o2) = report.table.observed_orders();
    assert!(
        in_band(&o1, 1.7, 2.2),
        "ERR1 orders {o1:?} outside [1.7, 2.2]"
    );

    let e = builtin_experiment::<f64>("appendix_A2").unwrap();
    assert_eq!(e.model.b_upper, f64::INFINITY);
    let mesh = e.config.build_mesh().unwrap();
    let mut newton = Stepper::new(&mesh, &e.model, false);
    let mut plain = Stepper::new(&mesh, &e.model, false);
    let mut s_newton = initialize(&e.model, &mesh).unwrap();
    let mut s_plain = s_newton.clone();
    let opts = NewtonOptions::default();
    let n_steps = (e.config.t_final / e.config.dt).round() as usize;
    let mut worst = 0.0f64;
    for _ in 0..n_steps {
        let (next, _) = newton
            .newton_step(&e.model, &s_newton, e.config.dt, &opts)
            .unwrap();
        s_newton = next;
        s_plain = plain
            .unconstrained_step(&e.model, &s_plain, e.config.dt)
            .unwrap();
        for (a, b) in s_newton.b.values().iter().zip(s_plain.b.values()) {
            worst = worst.max((a - b).abs());
        }
        for (a, b) in s_newton.n.values().iter().zip(s_plain.n.values()) {
            worst = worst.max((a - b).abs());
        }
        for &l in s_newton.lambda.values() {
            worst = worst.max(l.abs());
        }
    }
    assert!(
        worst <= 1e-10,
        "constrained/unconstrained paths differ by {worst}"
    );
    println!(
        "criterion 7: PASS  ERR1 orders {:.4?} (ERR2 {:.4?}), path agreement {worst:.2e}",
        o1, o2
    );
}

fn log_slope(traj: &Trajectory<f64>, from_t: f64, to_t: f64) -> f64 {
    let at = |t: f64| {
        let d = traj
            .series
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .unwrap();
        (d.t, d.total_b.ln())
    };
    let (t0, y0) = at(from_t);
    let (t1, y1) = at(to_t);
    (y1 - y0) / (t1 - t0)
}

/// Criterion 8: for all four diffusivity variants, the late-time slope
/// of log total biomass is below half the pre-activation slope, and the
/// steep law tapers at least as strongly as the linear law.
#[test]
fn criterion_8_tapering() {
    let mut late_slopes = std::collections::HashMap::new();
    for name in ["ex5_2_i", "ex5_2_ii", "ex5_2_iii", "ex5_2_iv"] {
        let e = builtin_experiment::<f64>(name).unwrap();
        let traj = run_to_completion(&e.model, &e.config).unwrap();
        let (act_step, act_t) = traj
            .first_activation()
            .unwrap_or_else(|| panic!("{name}: constraint never activated"));
        assert!(act_step > 1, "{name}: no pre-activation phase");
        let pre = log_slope(&traj, traj.series[1].t, act_t);
        let late = log_slope(&traj, 0.75 * e.config.t_final, e.config.t_final);
        assert!(
            late < 0.5 * pre,
            "{name}: late slope {late:.3} not below half of pre-activation slope {pre:.3}"
        );
        late_slopes.insert(name, (pre, late));
    }
    let iii = late_slopes["ex5_2_iii"].1;
    let iv = late_slopes["ex5_2_iv"].1;
    assert!(
        iv <= iii + 1e-9,
        "steep law late slope {iv:.4} exceeds linear law late slope {iii:.4}"
    );
    println!(
        "criterion 8: PASS  pre/late slopes: {:?}; steep vs linear late slope {iv:.3} <= {iii:.3}",
        late_slopes
    );
}

/// Criterion 9: the accumulated measure of saturation-classification
/// flips in the 1D reference run stays bounded by the domain measure.
#[test]
fn criterion_9_free_boundary_bounded() {
    let e = builtin_experiment::<f64>("ex5_1").unwrap();
    let traj = run_to_completion(&e.model, &e.config).unwrap();
    let dn_sum = traj.series.last().unwrap().dn_sum;
    assert!(
        dn_sum <= 1.0 + 1e-12,
        "accumulated flip measure {dn_sum} exceeds measure of the domain"
    );
    assert!(traj.first_activation().is_some(), "run never activated");
    println!("criterion 9: PASS  accumulated flip measure {dn_sum:.4} <= 1");
}

/// Companion to criterion 7: the scalar double-obstacle problem at
/// dt = O(h) converges at roughly first order in ERR1 (the constrained
/// analogue of the quadratic unconstrained rate).
#[test]
fn scalar_pvi_rate_check() {
    let report = appendix_rate_check::<f64>(AppendixCheck::ScalarPvi).unwrap();
    assert!(report.failure.is_none());
    let (o1, _) = report.table.observed_orders();
    assert!(
        in_band(&o1, 0.85, 1.3),
        "ERR1 orders {o1:?} outside [0.85, 1.3]"
    );
    println!("scalar double-obstacle rates: PASS  ERR1 orders {o1:.4?}");
}

/// Monotone activation (solver invariant alongside criterion 9): the
/// active set of the 1D reference run is empty until some step and
/// nonempty from then on.
#[test]
fn activation_is_monotone_in_ex5_1() {
    let e = builtin_experiment::<f64>("ex5_1").unwrap();
    let traj = run_to_completion(&e.model, &e.config).unwrap();
    let first = traj.first_activation().map(|(s, _)| s).unwrap();
    for d in &traj.series {
        if d.step < first {
            assert_eq!(d.active_nodes, 0, "active before step {first}");
        } else {
            assert!(d.active_nodes > 0, "active set vanished at step {}", d.step);
        }
    }
}
