//! Active-set enumeration oracle for small time-lagged steps.
//!
//! For every candidate active set the equality-constrained linear system
//! is solved densely (independent Gaussian elimination, not the sparse
//! production path); the candidate whose solution satisfies B <= B* and
//! Λ <= 0 is the step solution. Exponential in the node count, usable
//! only for test instances; the production solver is never routed here.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NewtonOptions, Stepper, SystemState};
use crate::assembly::NodalField;
use crate::error::{Error, Result};
use crate::mesh::{generate_interval, SimplicialMesh};
use crate::model::{zero_source, BoundaryKind, GrowthLaw, InitialData, ModelSpec, MonodSpec};
use crate::scalar::{cast, Real};

/// Dense Gaussian elimination with partial pivoting.
pub fn dense_solve<T: Real>(mut a: Vec<Vec<T>>, mut b: Vec<T>) -> Option<Vec<T>> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| {
            a[i][k]
                .abs()
                .partial_cmp(&a[j][k].abs())
                .expect("finite pivot candidates")
        })?;
        if a[piv][k].abs() <= T::zero() {
            return None;
        }
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            if f != T::zero() {
                for j in k..n {
                    let v = a[k][j];
                    a[i][j] = a[i][j] - f * v;
                }
                b[i] = b[i] - f * b[k];
            }
        }
    }
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in k + 1..n {
            s = s - a[k][j] * b[j];
        }
        b[k] = s / a[k][k];
    }
    Some(b)
}

/// Result of the enumeration.
#[derive(Debug, Clone)]
pub struct OracleOutcome<T> {
    pub b: Vec<T>,
    pub lambda: Vec<T>,
    pub n: Vec<T>,
    pub active_set: Vec<usize>,
}

/// Solve one time-lagged step by enumerating active sets (upper bound
/// only). Errors if no candidate set yields a feasible solution.
pub fn enumerate_step<T: Real>(
    mesh: &SimplicialMesh<T>,
    model: &ModelSpec<T>,
    prev: &SystemState<T>,
    dt: T,
) -> Result<OracleOutcome<T>> {
    let q = mesh.n_vertices();
    let mut stepper = Stepper::new(mesh, model, false);
    let mats = stepper.assemble_step(model, prev, dt)?;
    let dirichlet = stepper.dirichlet().to_vec();
    let kappa_b = model.growth_coefficient();
    let kappa_n = model.utilization_coefficient();
    let b_star = model.b_upper;

    let free: Vec<usize> = (0..q).filter(|&i| !dirichlet[i]).collect();
    if free.len() > 16 {
        return Err(Error::InvalidConfig(format!(
            "enumeration oracle limited to 16 free nodes, got {}",
            free.len()
        )));
    }

    let e_dense = {
        let e = mats
            .mass
            .add_scaled(dt, &mats.stiff_b)
            .add_scaled(-kappa_b * dt, &mats.reaction);
        e.to_dense()
    };
    let m_dense = mats.mass.to_dense();
    let mb_prev = mats.mass.mul_vec(prev.b.values());
    let feas_tol: T = cast(1e-9);

    for mask in 0u32..(1u32 << free.len()) {
        let active: Vec<usize> = free
            .iter()
            .enumerate()
            .filter(|&(k, _)| mask & (1 << k) != 0)
            .map(|(_, &i)| i)
            .collect();
        let is_active = {
            let mut v = vec![false; q];
            for &i in &active {
                v[i] = true;
            }
            v
        };

        // Unknowns x = [B; Λ].
        let n2 = 2 * q;
        let mut a = vec![vec![T::zero(); n2]; n2];
        let mut rhs = vec![T::zero(); n2];
        for i in 0..q {
            if dirichlet[i] {
                a[i][i] = T::one();
                a[q + i][q + i] = T::one();
                continue;
            }
            for j in 0..q {
                a[i][j] = e_dense[i][j];
                a[i][q + j] = -dt * m_dense[i][j];
            }
            rhs[i] = dt * mats.load_b[i] + mb_prev[i];
            if is_active[i] {
                a[q + i][i] = T::one();
                rhs[q + i] = b_star;
            } else {
                a[q + i][q + i] = T::one();
            }
        }
        let Some(x) = dense_solve(a, rhs) else {
            continue;
        };
        let (b, lam) = x.split_at(q);
        let feasible =
            b.iter().all(|&v| v <= b_star + feas_tol) && lam.iter().all(|&v| v <= feas_tol);
        if !feasible {
            continue;
        }

        // Nutrient back-substitution.
        let n_vals = if model.nutrient_enabled {
            let mut w = mats.mass.add_scaled(dt, &mats.stiff_n).to_dense();
            let mn_prev = mats.mass.mul_vec(prev.n.values());
            let rb = mats.reaction.mul_vec(b);
            let mut rhs_n = vec![T::zero(); q];
            for i in 0..q {
                if dirichlet[i] {
                    for j in 0..q {
                        w[i][j] = if i == j { T::one() } else { T::zero() };
                    }
                } else {
                    rhs_n[i] = dt * mats.load_n[i] + mn_prev[i] - kappa_n * dt * rb[i];
                }
            }
            dense_solve(w, rhs_n)
                .ok_or_else(|| Error::InvalidConfig("oracle nutrient system singular".into()))?
        } else {
            prev.n.values().to_vec()
        };

        return Ok(OracleOutcome {
            b: b.to_vec(),
            lambda: lam.to_vec(),
            n: n_vals,
            active_set: active,
        });
    }
    Err(Error::InvalidConfig(
        "enumeration found no feasible active set".into(),
    ))
}

/// A randomized small 1D instance for oracle comparisons. Sizes keep the
/// free node count at 6 or below.
pub struct RandomInstance<T> {
    pub mesh: SimplicialMesh<T>,
    pub model: ModelSpec<T>,
    pub prev: SystemState<T>,
    pub dt: T,
}

pub fn random_instance<T: Real>(seed: u64) -> RandomInstance<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirichlet = rng.gen_bool(0.5);
    let n_cells = if dirichlet {
        rng.gen_range(3..=7usize)
    } else {
        rng.gen_range(2..=5usize)
    };
    let mesh = generate_interval(T::zero(), T::one(), n_cells).expect("interval");
    let b_star: T = cast(rng.gen_range(0.4..1.2));
    let kappa_b: T = cast(rng.gen_range(2.0..25.0));
    let kappa_n: T = cast::<T>(rng.gen_range(0.5..1.0)) * kappa_b;
    let model = ModelSpec {
        d_b: crate::model::DiffusivityLaw::Constant(cast(rng.gen_range(0.05..1.0))),
        d_n: crate::model::DiffusivityLaw::Constant(cast(rng.gen_range(0.05..1.0))),
        growth: GrowthLaw::Monod(MonodSpec {
            kappa_b,
            kappa_n,
            n_half: cast(rng.gen_range(0.1..1.0)),
        }),
        b_lower: T::neg_infinity(),
        b_upper: b_star,
        f_source: {
            let amp = rng.gen_range(0.0..4.0);
            std::sync::Arc::new(move |_: &[T], _| cast(amp))
        },
        g_source: zero_source(),
        bc: if dirichlet {
            BoundaryKind::DirichletZero
        } else {
            BoundaryKind::NeumannZero
        },
        b_init: InitialData::constant(T::zero()),
        n_init: InitialData::constant(T::zero()),
        nutrient_enabled: true,
    };
    let q = mesh.n_vertices();
    let b: Vec<T> = (0..q)
        .map(|i| {
            if dirichlet && mesh.is_boundary(i) {
                T::zero()
            } else {
                b_star * cast(rng.gen_range(0.2..0.98))
            }
        })
        .collect();
    let n: Vec<T> = (0..q)
        .map(|i| {
            if dirichlet && mesh.is_boundary(i) {
                T::zero()
            } else {
                cast(rng.gen_range(0.0..1.5))
            }
        })
        .collect();
    let prev = SystemState {
        b: NodalField::new(&mesh, b).unwrap(),
        lambda: NodalField::new(&mesh, vec![T::zero(); q]).unwrap(),
        n: NodalField::new(&mesh, n).unwrap(),
        t: T::zero(),
    };
    // Keep the implicit step in the well-posed regime (Δt small against
    // the reaction Lipschitz constant); far beyond it the discrete step
    // loses monotonicity and the unglobalized iteration may cycle, which
    // is the documented retry-with-smaller-Δt failure, not a solver
    // property worth fuzzing.
    let dt: T = cast::<T>(rng.gen_range(0.05..0.5)) / kappa_b.max(kappa_n);
    RandomInstance {
        mesh,
        model,
        prev,
        dt,
    }
}

/// Outcome of one Newton-vs-enumeration comparison.
#[derive(Debug, Clone)]
pub struct ComparisonReport<T> {
    pub seed: u64,
    pub max_diff: T,
    pub worst_node: usize,
    pub worst_component: &'static str,
    pub active_nodes: usize,
    pub newton_iterations: usize,
}

/// Run the semismooth Newton step and the enumeration oracle on one
/// random instance and report the worst disagreement.
/// `flip_lambda_sign` is a fault-injection hook for exercising the
/// failure path of the comparison harness.
pub fn run_comparison<T: Real>(seed: u64, flip_lambda_sign: bool) -> Result<ComparisonReport<T>> {
    let inst = random_instance::<T>(seed);
    let mut stepper = Stepper::new(&inst.mesh, &inst.model, false);
    let (state, report) = stepper.newton_step(
        &inst.model,
        &inst.prev,
        inst.dt,
        &NewtonOptions {
            tol: cast(1e-12),
            max_iter: 60,
            fully_implicit: false,
        },
    )?;
    let oracle = enumerate_step(&inst.mesh, &inst.model, &inst.prev, inst.dt)?;

    let mut lambda = state.lambda.values().to_vec();
    if flip_lambda_sign {
        for l in &mut lambda {
            *l = -*l;
        }
    }
    let mut worst = (T::zero(), 0usize, "B");
    let mut track = |values: &[T], reference: &[T], component: &'static str| {
        for (i, (&a, &b)) in values.iter().zip(reference).enumerate() {
            let d = (a - b).abs();
            if d > worst.0 {
                worst = (d, i, component);
            }
        }
    };
    track(state.b.values(), &oracle.b, "B");
    track(&lambda, &oracle.lambda, "Lambda");
    track(state.n.values(), &oracle.n, "N");

    Ok(ComparisonReport {
        seed,
        max_diff: worst.0,
        worst_node: worst.1,
        worst_component: worst.2,
        active_nodes: oracle.active_set.len(),
        newton_iterations: report.iterations,
    })
}
