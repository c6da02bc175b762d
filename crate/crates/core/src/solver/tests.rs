use std::sync::Arc;

use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::mesh::generate_interval;
use crate::model::{DiffusivityLaw, InitialData, MonodSpec};

fn simple_model(b_star: f64, bc: BoundaryKind) -> ModelSpec<f64> {
    ModelSpec {
        d_b: DiffusivityLaw::Constant(0.5),
        d_n: DiffusivityLaw::Constant(0.1),
        growth: GrowthLaw::Monod(MonodSpec {
            kappa_b: 4.0,
            kappa_n: 2.0,
            n_half: 0.7,
        }),
        b_lower: f64::NEG_INFINITY,
        b_upper: b_star,
        f_source: crate::model::zero_source(),
        g_source: crate::model::zero_source(),
        bc,
        b_init: InitialData::constant(0.0),
        n_init: InitialData::constant(0.0),
        nutrient_enabled: true,
    }
}

fn state_from(
    mesh: &SimplicialMesh<f64>,
    b: Vec<f64>,
    lam: Vec<f64>,
    n: Vec<f64>,
) -> SystemState<f64> {
    SystemState {
        b: NodalField::new(mesh, b).unwrap(),
        lambda: NodalField::new(mesh, lam).unwrap(),
        n: NodalField::new(mesh, n).unwrap(),
        t: 0.0,
    }
}

#[test]
fn evans_projection_cases() {
    assert_eq!(evans_projection(0.5, f64::NEG_INFINITY, 0.02), 0.02);
    assert_eq!(evans_projection(0.01, f64::NEG_INFINITY, 0.02), 0.01);
    assert_eq!(evans_projection(-0.1, -0.04, 0.06), -0.04);
    assert_eq!(evans_projection(1.0, f64::NEG_INFINITY, f64::INFINITY), 1.0);
}

#[test]
fn residual_vanishes_at_unconstrained_solution() {
    let mesh = generate_interval(0.0, 1.0, 6).unwrap();
    let model = simple_model(10.0, BoundaryKind::DirichletZero);
    let q = mesh.n_vertices();
    let prev = state_from(
        &mesh,
        (0..q)
            .map(|i| if mesh.is_boundary(i) { 0.0 } else { 0.5 })
            .collect(),
        vec![0.0; q],
        (0..q)
            .map(|i| if mesh.is_boundary(i) { 0.0 } else { 1.0 })
            .collect(),
    );
    let dt = 0.05;
    let mut stepper = Stepper::new(&mesh, &model, false);
    let sol = stepper.unconstrained_step(&model, &prev, dt).unwrap();
    let mats = stepper.assemble_step(&model, &prev, dt).unwrap();
    let res = build_residual(&sol, &prev, &mats, dt, &model, stepper.dirichlet()).unwrap();
    let (rb, rest) = res.split_at(q);
    let (rc, _) = rest.split_at(q);
    for &v in rb {
        assert!(v.abs() < 1e-12, "res_B entry {v}");
    }
    for &v in rc {
        assert!(v.abs() < 1e-12, "res_C entry {v}");
    }
}

#[test]
fn residual_complementarity_row_zero_at_active_node() {
    let mesh = generate_interval(0.0, 1.0, 4).unwrap();
    let b_star = 0.3;
    let model = simple_model(b_star, BoundaryKind::NeumannZero);
    let q = mesh.n_vertices();
    let mut b = vec![0.1; q];
    let mut lam = vec![0.0; q];
    b[2] = b_star;
    lam[2] = -0.05;
    let guess = state_from(&mesh, b, lam, vec![0.5; q]);
    let prev = state_from(&mesh, vec![0.1; q], vec![0.0; q], vec![0.5; q]);
    let mut stepper = Stepper::new(&mesh, &model, false);
    let mats = stepper.assemble_step(&model, &prev, 0.01).unwrap();
    let res = build_residual(&guess, &prev, &mats, 0.01, &model, stepper.dirichlet()).unwrap();
    assert_eq!(res[q + 2], 0.0);
    // Inactive node: res_C = Λ.
    assert_eq!(res[q + 1], 0.0);
}

#[test]
fn residual_matches_dense_reference_on_small_system() {
    let mesh = generate_interval(0.0, 1.0, 3).unwrap();
    let model = simple_model(0.4, BoundaryKind::NeumannZero);
    let q = mesh.n_vertices();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rnd = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| rng.gen_range(lo..hi);
    let guess = state_from(
        &mesh,
        (0..q).map(|_| rnd(&mut rng, 0.0, 0.5)).collect(),
        (0..q).map(|_| rnd(&mut rng, -0.2, 0.0)).collect(),
        (0..q).map(|_| rnd(&mut rng, 0.0, 1.0)).collect(),
    );
    let prev = state_from(
        &mesh,
        (0..q).map(|_| rnd(&mut rng, 0.0, 0.4)).collect(),
        vec![0.0; q],
        (0..q).map(|_| rnd(&mut rng, 0.0, 1.0)).collect(),
    );
    let dt = 0.07;
    let mut stepper = Stepper::new(&mesh, &model, false);
    let mats = stepper.assemble_step(&model, &prev, dt).unwrap();
    let res = build_residual(&guess, &prev, &mats, dt, &model, stepper.dirichlet()).unwrap();

    // Independent dense evaluation of the stacked formulas.
    let md = mats.mass.to_dense();
    let ad = mats.stiff_b.to_dense();
    let an = mats.stiff_n.to_dense();
    let rd = mats.reaction.to_dense();
    let (kb, kn) = (model.growth_coefficient(), model.utilization_coefficient());
    for i in 0..q {
        let mut r_b = -dt * mats.load_b[i];
        let mut r_n = -dt * mats.load_n[i];
        for j in 0..q {
            r_b += (md[i][j] + dt * ad[i][j] - kb * dt * rd[i][j]) * guess.b[j]
                - dt * md[i][j] * guess.lambda[j]
                - md[i][j] * prev.b[j];
            r_n += (md[i][j] + dt * an[i][j]) * guess.n[j] + kn * dt * rd[i][j] * guess.b[j]
                - md[i][j] * prev.n[j];
        }
        let r_c = guess.b[i]
            - evans_projection(
                guess.b[i] - dt * guess.lambda[i],
                model.b_lower,
                model.b_upper,
            );
        assert_relative_eq!(res[i], r_b, max_relative = 1e-12, epsilon = 1e-14);
        assert_relative_eq!(res[q + i], r_c, max_relative = 1e-12, epsilon = 1e-14);
        assert_relative_eq!(res[2 * q + i], r_n, max_relative = 1e-12, epsilon = 1e-14);
    }
}

#[test]
fn jacobian_rows_encode_active_branches() {
    let mesh = generate_interval(0.0, 1.0, 3).unwrap();
    let model = simple_model(0.4, BoundaryKind::NeumannZero);
    let q = mesh.n_vertices();
    let mut b = vec![0.1; q];
    let mut lam = vec![0.0; q];
    // Node 1 pushed beyond the bound: active row pins B.
    b[1] = 0.45;
    lam[1] = -0.01;
    let guess = state_from(&mesh, b, lam, vec![0.2; q]);
    let prev = state_from(&mesh, vec![0.1; q], vec![0.0; q], vec![0.2; q]);
    let mut stepper = Stepper::new(&mesh, &model, false);
    let mats = stepper.assemble_step(&model, &prev, 0.02).unwrap();
    let jac = select_jacobian(&guess, &mats, 0.02, &model, stepper.dirichlet());
    // Active node 1: C-row has a single 1 in the B block.
    assert_eq!(jac.get(q + 1, 1), 1.0);
    assert_eq!(jac.get(q + 1, q + 1), 0.0);
    // Inactive node 0: C-row is the scaled identity on Λ.
    assert_eq!(jac.get(q, 0), 0.0);
    assert_eq!(jac.get(q, q), 0.02);
}

#[test]
fn jacobian_matches_finite_differences_away_from_kinks() {
    let mesh = generate_interval(0.0, 1.0, 2).unwrap();
    let model = simple_model(0.4, BoundaryKind::NeumannZero);
    let q = mesh.n_vertices();
    let guess = state_from(
        &mesh,
        vec![0.10, 0.45, 0.20],
        vec![0.0, -0.02, 0.0],
        vec![0.3, 0.6, 0.9],
    );
    let prev = state_from(&mesh, vec![0.1; q], vec![0.0; q], vec![0.5; q]);
    let dt = 0.03;
    let mut stepper = Stepper::new(&mesh, &model, false);
    let mats = stepper.assemble_step(&model, &prev, dt).unwrap();
    let jac = select_jacobian(&guess, &mats, dt, &model, stepper.dirichlet());

    let eval = |x: &[f64]| {
        let s = state_from(
            &mesh,
            x[0..q].to_vec(),
            x[q..2 * q].to_vec(),
            x[2 * q..3 * q].to_vec(),
        );
        build_residual(&s, &prev, &mats, dt, &model, stepper.dirichlet()).unwrap()
    };
    let mut x0 = Vec::new();
    x0.extend_from_slice(guess.b.values());
    x0.extend_from_slice(guess.lambda.values());
    x0.extend_from_slice(guess.n.values());
    let h = 1e-7;
    for j in 0..3 * q {
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[j] += h;
        xm[j] -= h;
        let fp = eval(&xp);
        let fm = eval(&xm);
        for i in 0..3 * q {
            let fd = (fp[i] - fm[i]) / (2.0 * h);
            let ja = jac.get(i, j);
            assert!(
                (fd - ja).abs() <= 1e-6 * (1.0 + ja.abs()),
                "J[{i}][{j}] = {ja}, fd = {fd}"
            );
        }
    }
}

#[test]
fn block_elimination_equals_monolithic_solve() {
    for seed in [1u64, 2, 3, 9] {
        let inst = enumeration::random_instance::<f64>(seed);
        let mut stepper = Stepper::new(&inst.mesh, &inst.model, false);
        let mats = stepper
            .assemble_step(&inst.model, &inst.prev, inst.dt)
            .unwrap();
        let q = inst.mesh.n_vertices();
        // A deliberately rough guess so both paths do real work.
        let guess = state_from(
            &inst.mesh,
            inst.prev.b.values().to_vec(),
            vec![0.0; q],
            inst.prev.n.values().to_vec(),
        );
        let res = build_residual(
            &guess,
            &inst.prev,
            &mats,
            inst.dt,
            &inst.model,
            stepper.dirichlet(),
        )
        .unwrap();
        let kappa_b = inst.model.growth_coefficient();
        let kappa_n = inst.model.utilization_coefficient();
        let e = mats
            .mass
            .add_scaled(inst.dt, &mats.stiff_b)
            .add_scaled(-kappa_b * inst.dt, &mats.reaction);
        let w = eliminate_rows(
            &mats.mass.add_scaled(inst.dt, &mats.stiff_n),
            stepper.dirichlet(),
        );
        let wf = (LuFactors::factorize(&w).unwrap(), w);
        let s_block = solve_newton_lagged(
            &guess,
            &e,
            &mats,
            Some(&wf),
            &res,
            inst.dt,
            kappa_n,
            &inst.model,
            stepper.dirichlet(),
        )
        .unwrap();
        let jac = select_jacobian(&guess, &mats, inst.dt, &inst.model, stepper.dirichlet());
        let rhs: Vec<f64> = res.iter().map(|&r| -r).collect();
        let s_mono = linear_solve(&jac, &rhs).unwrap();
        for i in 0..3 * q {
            assert!(
                (s_block[i] - s_mono[i]).abs() < 1e-9 * (1.0 + s_mono[i].abs()),
                "seed {seed} component {i}: {} vs {}",
                s_block[i],
                s_mono[i]
            );
        }
    }
}

#[test]
fn linear_regime_converges_in_one_iteration() {
    let mesh = generate_interval(0.0, 1.0, 8).unwrap();
    let model = simple_model(100.0, BoundaryKind::NeumannZero);
    let q = mesh.n_vertices();
    let prev = state_from(&mesh, vec![0.01; q], vec![0.0; q], vec![1.0; q]);
    let mut stepper = Stepper::new(&mesh, &model, false);
    let (state, report) = stepper
        .newton_step(&model, &prev, 0.01, &NewtonOptions::default())
        .unwrap();
    assert!(report.converged);
    assert_eq!(report.iterations, 1);
    assert_eq!(report.active_node_count, 0);
    assert!(state.b.values().iter().all(|&b| b > 0.01));
}

#[test]
fn unconstrained_limit_matches_plain_galerkin() {
    let mesh = generate_interval(0.0, 1.0, 10).unwrap();
    let model = simple_model(f64::INFINITY, BoundaryKind::DirichletZero);
    let q = mesh.n_vertices();
    let prev = state_from(
        &mesh,
        (0..q)
            .map(|i| if mesh.is_boundary(i) { 0.0 } else { 0.3 })
            .collect(),
        vec![0.0; q],
        (0..q)
            .map(|i| if mesh.is_boundary(i) { 0.0 } else { 0.8 })
            .collect(),
    );
    let dt = 0.02;
    let mut s1 = Stepper::new(&mesh, &model, false);
    let (state, _) = s1
        .newton_step(&model, &prev, dt, &NewtonOptions::default())
        .unwrap();
    let mut s2 = Stepper::new(&mesh, &model, false);
    let plain = s2.unconstrained_step(&model, &prev, dt).unwrap();
    for i in 0..q {
        assert!((state.b[i] - plain.b[i]).abs() < 1e-10);
        assert!((state.n[i] - plain.n[i]).abs() < 1e-10);
        assert!(state.lambda[i].abs() < 1e-12);
    }
}

#[test]
fn activation_step_agrees_with_enumeration() {
    // Strong uniform source over one step with a tight bound activates
    // interior nodes; compare against the exhaustive oracle.
    let mesh = generate_interval(0.0, 1.0, 4).unwrap();
    let mut model = simple_model(0.2, BoundaryKind::DirichletZero);
    model.f_source = Arc::new(|_: &[f64], _| 5.0);
    let q = mesh.n_vertices();
    let prev = state_from(
        &mesh,
        (0..q)
            .map(|i| if mesh.is_boundary(i) { 0.0 } else { 0.15 })
            .collect(),
        vec![0.0; q],
        (0..q)
            .map(|i| if mesh.is_boundary(i) { 0.0 } else { 1.0 })
            .collect(),
    );
    let dt = 0.2;
    let mut stepper = Stepper::new(&mesh, &model, false);
    let (state, report) = stepper
        .newton_step(
            &model,
            &prev,
            dt,
            &NewtonOptions {
                tol: 1e-12,
                max_iter: 50,
                fully_implicit: false,
            },
        )
        .unwrap();
    let oracle = enumeration::enumerate_step(&mesh, &model, &prev, dt).unwrap();
    assert!(!oracle.active_set.is_empty(), "instance must activate");
    assert_eq!(report.active_node_count, oracle.active_set.len());
    for i in 0..q {
        assert!((state.b[i] - oracle.b[i]).abs() < 1e-8);
        assert!((state.lambda[i] - oracle.lambda[i]).abs() < 1e-8);
        assert!((state.n[i] - oracle.n[i]).abs() < 1e-8);
    }
}

#[test]
fn fully_implicit_mode_converges_and_matches_lagged_limit() {
    // With a small time step the lagged and implicit solutions are close
    // but not identical; both must satisfy their own residuals.
    let mesh = generate_interval(0.0, 1.0, 8).unwrap();
    let model = simple_model(0.5, BoundaryKind::NeumannZero);
    let q = mesh.n_vertices();
    let prev = state_from(&mesh, vec![0.4; q], vec![0.0; q], vec![0.6; q]);
    let dt = 0.05;
    let mut s_lag = Stepper::new(&mesh, &model, false);
    let (lagged, _) = s_lag
        .newton_step(&model, &prev, dt, &NewtonOptions::default())
        .unwrap();
    let mut s_imp = Stepper::new(&mesh, &model, false);
    let (implicit, rep) = s_imp
        .newton_step(
            &model,
            &prev,
            dt,
            &NewtonOptions {
                fully_implicit: true,
                ..NewtonOptions::default()
            },
        )
        .unwrap();
    assert!(rep.converged);
    for i in 0..q {
        assert!((lagged.b[i] - implicit.b[i]).abs() < 0.05);
    }
}

#[test]
fn nonconvergence_carries_report_data() {
    let mesh = generate_interval(0.0, 1.0, 4).unwrap();
    let model = simple_model(0.2, BoundaryKind::NeumannZero);
    let q = mesh.n_vertices();
    let prev = state_from(&mesh, vec![0.1; q], vec![0.0; q], vec![1.0; q]);
    let mut stepper = Stepper::new(&mesh, &model, false);
    // An unreachable tolerance forces the failure path.
    match stepper.newton_step(
        &model,
        &prev,
        0.05,
        &NewtonOptions {
            tol: 0.0,
            max_iter: 2,
            fully_implicit: false,
        },
    ) {
        Err(Error::NonConvergence { iterations: 2, .. }) => {}
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn single_precision_instantiation_solves() {
    let mesh = generate_interval(0.0f32, 1.0, 6).unwrap();
    let model: ModelSpec<f32> = ModelSpec {
        d_b: DiffusivityLaw::Constant(0.5),
        d_n: DiffusivityLaw::Constant(0.1),
        growth: GrowthLaw::Monod(MonodSpec {
            kappa_b: 4.0,
            kappa_n: 2.0,
            n_half: 0.7,
        }),
        b_lower: f32::NEG_INFINITY,
        b_upper: 0.3,
        f_source: crate::model::zero_source(),
        g_source: crate::model::zero_source(),
        bc: BoundaryKind::NeumannZero,
        b_init: InitialData::constant(0.0),
        n_init: InitialData::constant(0.0),
        nutrient_enabled: true,
    };
    let q = mesh.n_vertices();
    let prev = SystemState {
        b: NodalField::new(&mesh, vec![0.25f32; q]).unwrap(),
        lambda: NodalField::new(&mesh, vec![0.0; q]).unwrap(),
        n: NodalField::new(&mesh, vec![1.0; q]).unwrap(),
        t: 0.0,
    };
    let mut stepper = Stepper::new(&mesh, &model, false);
    let (state, report) = stepper
        .newton_step(
            &model,
            &prev,
            0.05,
            &NewtonOptions {
                tol: 1e-4,
                max_iter: 30,
                fully_implicit: false,
            },
        )
        .unwrap();
    assert!(report.converged);
    assert!(state.b.values().iter().all(|&b| b <= 0.3 + 1e-5));
}

#[test]
fn timestep_advisory_branches() {
    let mesh = generate_interval(0.0, 1.0, 10).unwrap();
    // Huge diffusivities: branch (i), always satisfied.
    let mut model = simple_model(0.5, BoundaryKind::DirichletZero);
    model.d_b = DiffusivityLaw::Constant(100.0);
    model.d_n = DiffusivityLaw::Constant(100.0);
    let adv = check_timestep_condition(&model, &mesh, 1.0);
    assert!(adv.diffusive_branch && adv.satisfied);

    // Small diffusivities: branch (ii) with a finite bound.
    model.d_b = DiffusivityLaw::Constant(0.01);
    model.d_n = DiffusivityLaw::Constant(0.01);
    let adv = check_timestep_condition(&model, &mesh, 1.0e-4);
    assert!(!adv.diffusive_branch);
    assert!(adv.dt_bound.is_finite());
    assert!(adv.satisfied);

    // Gamma exactly at the threshold falls to branch (ii) with an
    // unbounded Δt allowance.
    let c_pf = mesh.diameter() / std::f64::consts::PI;
    let lip = 4.0f64; // max(kappa_b, kappa_n) of simple_model
    let gamma = 2.0 * lip * c_pf * c_pf;
    model.d_b = DiffusivityLaw::Constant(gamma);
    model.d_n = DiffusivityLaw::Constant(gamma);
    let adv = check_timestep_condition(&model, &mesh, 5.0);
    assert!(!adv.diffusive_branch);
    assert!(adv.dt_bound.is_infinite() && adv.satisfied);
}

#[test]
fn complementarity_check_flags_violations() {
    let mesh = generate_interval(0.0, 1.0, 2).unwrap();
    let good = state_from(
        &mesh,
        vec![0.1, 0.3, 0.1],
        vec![0.0, -0.2, 0.0],
        vec![0.0; 3],
    );
    let c = check_complementarity(&good, f64::NEG_INFINITY, 0.3);
    assert!(c.max_bound_violation == 0.0);
    assert!(c.max_lambda_sign == 0.0);
    assert!(c.max_product < 1e-15);

    let bad = state_from(
        &mesh,
        vec![0.1, 0.25, 0.1],
        vec![0.0, -0.2, 0.0],
        vec![0.0; 3],
    );
    let c = check_complementarity(&bad, f64::NEG_INFINITY, 0.3);
    assert!(c.max_product > 1e-3, "multiplier active away from bound");
}
