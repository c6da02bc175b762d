//! One backward-Euler step of the constrained system: semismooth residual,
//! generalized Jacobian, and the Newton iteration.
//!
//! The step solves, for nodal vectors (B, Λ, N),
//!
//! ```text
//! (M + Δt A_B − κ_B Δt R) B − Δt M Λ − Δt F_B − M B_prev = 0
//! B − P_[B_*,B*](B − Δt Λ)                               = 0   (componentwise)
//! (M + Δt A_N) N + κ_N Δt R B − Δt F_N − M N_prev        = 0
//! ```
//!
//! where the clamp `P` encodes the complementarity condition. By default
//! the Monod factor in R and the diffusivity arguments are time-lagged;
//! a fully-implicit mode rebuilds R from the current Newton iterate.
//!
//! Newton corrections solve the block Jacobian exactly. In the default
//! time-lagged mode this is done by eliminating the complementarity rows
//! and the nutrient block (the system then reduces to one sparse solve of
//! mesh size plus one reusable factorization); the fully-implicit mode
//! assembles the full 3q Jacobian and hands it to the sparse LU. Both
//! paths produce the same correction up to solver roundoff.

pub mod enumeration;
pub mod lu;

use std::sync::Arc;

pub use lu::{linear_solve, linear_solve_with, LuFactors};

use crate::assembly::{
    assemble_load, assemble_mass_with, assemble_stiffness_with, assemble_weighted_mass2,
    assemble_weighted_mass_with, fe_pattern, nodal_interpolate, NodalField,
};
use crate::error::{Error, Result};
use crate::mesh::SimplicialMesh;
use crate::model::{eval_diffusivity, monod_p, monod_p_prime, BoundaryKind, GrowthLaw, ModelSpec};
use crate::scalar::{cast, Real};
use crate::sparse::{SparseMatrix, SparsityPattern};

/// Nodal unknowns at one time level.
#[derive(Debug, Clone)]
pub struct SystemState<T> {
    pub b: NodalField<T>,
    pub lambda: NodalField<T>,
    pub n: NodalField<T>,
    pub t: T,
}

/// Diagnostics of one Newton solve.
#[derive(Debug, Clone, Copy)]
pub struct NewtonReport<T> {
    pub iterations: usize,
    pub final_residual_maxnorm: T,
    pub active_node_count: usize,
    pub converged: bool,
}

/// Solver knobs; defaults follow the solver interface contract
/// (max-norm tolerance 1e-6, at most 50 iterations, time-lagged mode).
#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions<T> {
    pub tol: T,
    pub max_iter: usize,
    pub fully_implicit: bool,
}

impl<T: Real> Default for NewtonOptions<T> {
    fn default() -> Self {
        Self {
            tol: cast(1e-6),
            max_iter: 50,
            fully_implicit: false,
        }
    }
}

/// Clamp onto [B_*, B*]; either bound may be infinite.
pub fn evans_projection<T: Real>(psi: T, b_lower: T, b_upper: T) -> T {
    if psi > b_upper {
        b_upper
    } else if psi < b_lower {
        b_lower
    } else {
        psi
    }
}

/// Assembled operators of one time step.
#[derive(Debug, Clone)]
pub struct StepMatrices<T> {
    /// Mass matrix (lumped when the run requests it).
    pub mass: SparseMatrix<T>,
    /// Biomass stiffness with the lagged diffusivity coefficient.
    pub stiff_b: SparseMatrix<T>,
    /// Nutrient stiffness.
    pub stiff_n: SparseMatrix<T>,
    /// Reaction weight matrix R (Monod factor or spatial coefficient).
    pub reaction: SparseMatrix<T>,
    /// Loads at the new time level.
    pub load_b: Vec<T>,
    pub load_n: Vec<T>,
    /// ∂(R(N) B)/∂N weighted mass; present only in fully-implicit mode.
    pub reaction_n_derivative: Option<SparseMatrix<T>>,
}

/// Dirichlet mask: true where rows are replaced by identity rows with
/// zero targets. Empty constraint under Neumann conditions.
pub fn dirichlet_mask<T: Real>(mesh: &SimplicialMesh<T>, bc: BoundaryKind) -> Vec<bool> {
    match bc {
        BoundaryKind::DirichletZero => (0..mesh.n_vertices())
            .map(|v| mesh.is_boundary(v))
            .collect(),
        BoundaryKind::NeumannZero => vec![false; mesh.n_vertices()],
    }
}

/// Semismooth residual of the step, stacked as [res_B, res_C, res_N].
///
/// The complementarity rows use the Δt-scaled multiplier,
/// `res_C = B − P(B − Δt Λ)`, an equivalent encoding of the same
/// complementarity condition (any positive scaling of Λ works). The
/// pointwise multiplier carries the scale of excess density per Δt, so
/// the unscaled clamp argument mixes scales badly: a transiently positive
/// Λ at an upper-pinned node can throw B − Λ across a finite lower bound
/// and lock the iteration into bound-flipping cycles. With the Δt
/// scaling both summands carry the density scale and misclassified nodes
/// release cleanly.
///
/// Dirichlet rows of all three blocks are identity rows with zero
/// targets; boundary nodes never enter the active set.
pub fn build_residual<T: Real>(
    guess: &SystemState<T>,
    prev: &SystemState<T>,
    mats: &StepMatrices<T>,
    dt: T,
    model: &ModelSpec<T>,
    dirichlet: &[bool],
) -> Result<Vec<T>> {
    let q = guess.b.len();
    if prev.b.len() != q || mats.load_b.len() != q || mats.mass.n_rows() != q {
        return Err(Error::DimensionMismatch(
            "residual operands live on different meshes".into(),
        ));
    }
    let kappa_b = model.growth_coefficient();
    let kappa_n = model.utilization_coefficient();

    let b = guess.b.values();
    let lam = guess.lambda.values();
    let n = guess.n.values();

    let mb = mats.mass.mul_vec(b);
    let ab = mats.stiff_b.mul_vec(b);
    let rb = mats.reaction.mul_vec(b);
    let mlam = mats.mass.mul_vec(lam);
    let mb_prev = mats.mass.mul_vec(prev.b.values());

    let mut res = vec![T::zero(); 3 * q];
    for i in 0..q {
        res[i] = if dirichlet[i] {
            b[i]
        } else {
            mb[i] + dt * ab[i]
                - kappa_b * dt * rb[i]
                - dt * mlam[i]
                - dt * mats.load_b[i]
                - mb_prev[i]
        };
        res[q + i] = if dirichlet[i] {
            lam[i]
        } else {
            b[i] - evans_projection(b[i] - dt * lam[i], model.b_lower, model.b_upper)
        };
    }

    if model.nutrient_enabled {
        let mn = mats.mass.mul_vec(n);
        let an = mats.stiff_n.mul_vec(n);
        let mn_prev = mats.mass.mul_vec(prev.n.values());
        for i in 0..q {
            res[2 * q + i] = if dirichlet[i] {
                n[i]
            } else {
                mn[i] + dt * an[i] + kappa_n * dt * rb[i] - dt * mats.load_n[i] - mn_prev[i]
            };
        }
    } else {
        // Frozen nutrient: the block degenerates to N = N_prev.
        for i in 0..q {
            res[2 * q + i] = n[i] - prev.n[i];
        }
    }
    Ok(res)
}

/// Indicator of the inactive branch of the clamp: true where
/// B_* < (B − Δt Λ)_i < B*. Kink points count as active; Dirichlet
/// nodes are forced inactive.
pub fn inactive_mask<T: Real>(
    guess: &SystemState<T>,
    dt: T,
    b_lower: T,
    b_upper: T,
    dirichlet: &[bool],
) -> Vec<bool> {
    guess
        .b
        .values()
        .iter()
        .zip(guess.lambda.values())
        .zip(dirichlet)
        .map(|((&b, &l), &dir)| {
            if dir {
                true
            } else {
                let psi = b - dt * l;
                b_lower < psi && psi < b_upper
            }
        })
        .collect()
}

/// Assemble the selected generalized Jacobian as one sparse 3q x 3q
/// matrix (block order B, Λ, N).
pub fn select_jacobian<T: Real>(
    guess: &SystemState<T>,
    mats: &StepMatrices<T>,
    dt: T,
    model: &ModelSpec<T>,
    dirichlet: &[bool],
) -> SparseMatrix<T> {
    let q = guess.b.len();
    let kappa_b = model.growth_coefficient();
    let kappa_n = model.utilization_coefficient();
    let inactive = inactive_mask(guess, dt, model.b_lower, model.b_upper, dirichlet);

    let mut trips: Vec<(usize, usize, T)> = Vec::new();
    for i in 0..q {
        if dirichlet[i] {
            trips.push((i, i, T::one()));
            trips.push((q + i, q + i, T::one()));
            trips.push((2 * q + i, 2 * q + i, T::one()));
            continue;
        }
        // Row-block B: [M + Δt A_B − κ_B Δt R, −Δt M, −κ_B Δt S].
        let (cols, mvals) = mats.mass.row(i);
        let avals = mats.stiff_b.row(i).1;
        let rvals = mats.reaction.row(i).1;
        for (k, &j) in cols.iter().enumerate() {
            let e = mvals[k] + dt * avals[k] - kappa_b * dt * rvals[k];
            if e != T::zero() {
                trips.push((i, j, e));
            }
            if mvals[k] != T::zero() {
                trips.push((i, q + j, -dt * mvals[k]));
            }
        }
        if let Some(s) = &mats.reaction_n_derivative {
            let (scols, svals) = s.row(i);
            for (&j, &v) in scols.iter().zip(svals) {
                if v != T::zero() {
                    trips.push((i, 2 * q + j, -kappa_b * dt * v));
                }
            }
        }
        // Row-block C: diag(1−p) on B, Δt·diag(p) on Λ.
        if inactive[i] {
            trips.push((q + i, q + i, dt));
        } else {
            trips.push((q + i, i, T::one()));
        }
        // Row-block N: [κ_N Δt R, 0, M + Δt A_N] (identity when frozen).
        if model.nutrient_enabled {
            let nvals = mats.stiff_n.row(i).1;
            for (k, &j) in cols.iter().enumerate() {
                if kappa_n != T::zero() && rvals[k] != T::zero() {
                    trips.push((2 * q + i, j, kappa_n * dt * rvals[k]));
                }
                let w = mvals[k] + dt * nvals[k];
                if w != T::zero() {
                    trips.push((2 * q + i, 2 * q + j, w));
                }
            }
        } else {
            trips.push((2 * q + i, 2 * q + i, T::one()));
        }
        // Keep the diagonal structurally present for every block row.
        trips.push((i, i, T::zero()));
        trips.push((q + i, q + i, T::zero()));
        trips.push((2 * q + i, 2 * q + i, T::zero()));
    }
    SparseMatrix::from_triplets(3 * q, 3 * q, &trips)
}

/// Advisory uniqueness check for the step size: either the diffusivities
/// dominate the reaction Lipschitz constant, or Δt must stay under an
/// explicit bound. Never blocks a run.
#[derive(Debug, Clone, Copy)]
pub struct TimestepAdvisory<T> {
    /// min of the diffusivity lower bounds.
    pub gamma: T,
    /// Estimated reaction Lipschitz constant.
    pub lipschitz: T,
    /// Poincare-Friedrichs constant estimate diam(Ω)/π.
    pub c_pf: T,
    /// True when the diffusive branch already guarantees uniqueness.
    pub diffusive_branch: bool,
    /// Δt bound when the diffusive branch fails (infinite otherwise).
    pub dt_bound: T,
    pub satisfied: bool,
}

pub fn check_timestep_condition<T: Real>(
    model: &ModelSpec<T>,
    mesh: &SimplicialMesh<T>,
    dt: T,
) -> TimestepAdvisory<T> {
    let gamma = model.d_b.min_value().min(model.d_n.min_value());
    let sample: Vec<Vec<T>> = (0..mesh.n_vertices())
        .map(|v| mesh.vertex(v).to_vec())
        .collect();
    let lipschitz = model.reaction_lipschitz(&sample);
    let c_pf = mesh.diameter() / T::from_f64(std::f64::consts::PI).unwrap();
    let two = cast::<T>(2.0);
    let threshold = two * lipschitz * c_pf * c_pf;
    if gamma > threshold {
        return TimestepAdvisory {
            gamma,
            lipschitz,
            c_pf,
            diffusive_branch: true,
            dt_bound: T::infinity(),
            satisfied: true,
        };
    }
    let denom = threshold - gamma;
    let dt_bound = if denom > T::zero() {
        c_pf * c_pf / denom
    } else {
        T::infinity()
    };
    TimestepAdvisory {
        gamma,
        lipschitz,
        c_pf,
        diffusive_branch: false,
        dt_bound,
        satisfied: dt < dt_bound,
    }
}

/// Per-step solver; caches the sparsity pattern, the mass matrix, the
/// Dirichlet mask, and the spatial reaction weight across steps on one
/// mesh.
pub struct Stepper<'m, T: Real> {
    mesh: &'m SimplicialMesh<T>,
    pattern: Arc<SparsityPattern>,
    mass: SparseMatrix<T>,
    dirichlet: Vec<bool>,
    lumped: bool,
    spatial_weight: Option<NodalField<T>>,
    /// Negative-nutrient clamps seen by the Monod factor, cumulative.
    pub clamp_count: u64,
}

impl<'m, T: Real> Stepper<'m, T> {
    pub fn new(mesh: &'m SimplicialMesh<T>, model: &ModelSpec<T>, lumped: bool) -> Self {
        let pattern = fe_pattern(mesh);
        let consistent = assemble_mass_with(mesh, pattern.clone());
        let mass = if lumped {
            consistent.lumped()
        } else {
            consistent
        };
        let spatial_weight = match &model.growth {
            GrowthLaw::SpatialLinear(c) => {
                let c = c.clone();
                Some(nodal_interpolate(mesh, &move |x: &[T]| (c)(x)))
            }
            GrowthLaw::Monod(_) => None,
        };
        Self {
            mesh,
            pattern,
            mass,
            dirichlet: dirichlet_mask(mesh, model.bc),
            lumped,
            spatial_weight,
            clamp_count: 0,
        }
    }

    pub fn mesh(&self) -> &SimplicialMesh<T> {
        self.mesh
    }

    pub fn mass(&self) -> &SparseMatrix<T> {
        &self.mass
    }

    pub fn dirichlet(&self) -> &[bool] {
        &self.dirichlet
    }

    /// Reaction weight matrix R for a given nutrient field: the Monod
    /// factor of the (possibly lagged) nutrient, or the fixed spatial
    /// coefficient for scalar problems.
    fn reaction_matrix(
        &mut self,
        model: &ModelSpec<T>,
        n_field: &NodalField<T>,
    ) -> Result<SparseMatrix<T>> {
        match &model.growth {
            GrowthLaw::Monod(m) => {
                let n_half = m.n_half;
                let mut clamps = 0u64;
                let r = assemble_weighted_mass_with(
                    self.mesh,
                    self.pattern.clone(),
                    n_field,
                    &mut |n| {
                        if n < T::zero() {
                            clamps += 1;
                        }
                        monod_p(n, n_half)
                    },
                )?;
                self.clamp_count += clamps;
                Ok(r)
            }
            GrowthLaw::SpatialLinear(_) => {
                let w = self.spatial_weight.as_ref().expect("spatial weight cached");
                assemble_weighted_mass_with(self.mesh, self.pattern.clone(), w, &mut |c| c)
            }
        }
    }

    /// Assemble the lagged operators of one step ending at `t_next`.
    pub fn assemble_step(
        &mut self,
        model: &ModelSpec<T>,
        prev: &SystemState<T>,
        dt: T,
    ) -> Result<StepMatrices<T>> {
        let t_next = prev.t + dt;
        let d_b = model.d_b;
        let stiff_b =
            assemble_stiffness_with(self.mesh, self.pattern.clone(), &prev.b, &mut |b| {
                eval_diffusivity(&d_b, b)
            })?;
        let d_n = model.d_n;
        let stiff_n =
            assemble_stiffness_with(self.mesh, self.pattern.clone(), &prev.b, &mut |b| {
                eval_diffusivity(&d_n, b)
            })?;
        let mut reaction = self.reaction_matrix(model, &prev.n)?;
        if self.lumped {
            reaction = reaction.lumped();
        }
        let f = model.f_source.clone();
        let g = model.g_source.clone();
        let load_b = assemble_load(self.mesh, &move |x: &[T], t| (f)(x, t), t_next);
        let load_n = assemble_load(self.mesh, &move |x: &[T], t| (g)(x, t), t_next);
        Ok(StepMatrices {
            mass: self.mass.clone(),
            stiff_b,
            stiff_n,
            reaction,
            load_b,
            load_n,
            reaction_n_derivative: None,
        })
    }

    /// Run the semismooth Newton iteration for one step.
    pub fn newton_step(
        &mut self,
        model: &ModelSpec<T>,
        prev: &SystemState<T>,
        dt: T,
        opts: &NewtonOptions<T>,
    ) -> Result<(SystemState<T>, NewtonReport<T>)> {
        let q = self.mesh.n_vertices();
        if prev.b.len() != q {
            return Err(Error::MeshMismatch {
                field_len: prev.b.len(),
                n_vertices: q,
            });
        }
        model.validate()?;
        let mut mats = self.assemble_step(model, prev, dt)?;
        let t_next = prev.t + dt;

        let mut b = prev.b.values().to_vec();
        let mut lam = prev.lambda.values().to_vec();
        let mut n = prev.n.values().to_vec();

        // Time-lagged mode: E and the eliminated nutrient operator are
        // fixed for the whole step, so factor the nutrient block once.
        let kappa_b = model.growth_coefficient();
        let kappa_n = model.utilization_coefficient();
        let lagged = !opts.fully_implicit;
        let mut e_matrix = if lagged {
            Some(
                self.mass
                    .add_scaled(dt, &mats.stiff_b)
                    .add_scaled(-kappa_b * dt, &mats.reaction),
            )
        } else {
            None
        };
        let w_factors = if lagged && model.nutrient_enabled {
            let w = eliminate_rows(&self.mass.add_scaled(dt, &mats.stiff_n), &self.dirichlet);
            Some((
                LuFactors::factorize(&w).map_err(|e| Error::SingularIteration {
                    iteration: 0,
                    source: Box::new(e),
                })?,
                w,
            ))
        } else {
            None
        };

        let mut iterations = 0usize;
        let mut mask_of_last_solve: Option<Vec<bool>> = None;
        for k in 0..=opts.max_iter {
            if opts.fully_implicit {
                let n_field = NodalField::new(self.mesh, n.clone())?;
                mats.reaction = self.reaction_matrix(model, &n_field)?;
                if let GrowthLaw::Monod(m) = &model.growth {
                    let n_half = m.n_half;
                    let b_field = NodalField::new(self.mesh, b.clone())?;
                    mats.reaction_n_derivative = Some(assemble_weighted_mass2(
                        self.mesh,
                        self.pattern.clone(),
                        &n_field,
                        &b_field,
                        &mut |nv, bv| monod_p_prime(nv, n_half) * bv,
                    )?);
                }
                e_matrix = Some(
                    self.mass
                        .add_scaled(dt, &mats.stiff_b)
                        .add_scaled(-kappa_b * dt, &mats.reaction),
                );
            }

            let guess = SystemState {
                b: NodalField::new(self.mesh, b.clone())?,
                lambda: NodalField::new(self.mesh, lam.clone())?,
                n: NodalField::new(self.mesh, n.clone())?,
                t: t_next,
            };
            let res = build_residual(&guess, prev, &mats, dt, model, &self.dirichlet)?;
            let rmax = res
                .iter()
                .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m });
            if !rmax.is_finite() {
                return Err(Error::NonFinite {
                    step: k,
                    what: "Newton residual".into(),
                });
            }
            // Stopping rule: at least one correction is always taken
            // (the absolute tolerance can exceed the residual scale of a
            // whole step when Δt·h is small), and the classification
            // must not have changed in the last update, so bound
            // crossings within tolerance still get pinned exactly.
            let mask = inactive_mask(&guess, dt, model.b_lower, model.b_upper, &self.dirichlet);
            if rmax < opts.tol && mask_of_last_solve.as_ref() == Some(&mask) {
                let active = mask.iter().filter(|&&p| !p).count();
                return Ok((
                    guess,
                    NewtonReport {
                        iterations,
                        final_residual_maxnorm: rmax,
                        active_node_count: active,
                        converged: true,
                    },
                ));
            }
            mask_of_last_solve = Some(mask);
            if k == opts.max_iter {
                return Err(Error::NonConvergence {
                    iterations,
                    residual: rmax.to_f64().unwrap_or(f64::NAN),
                });
            }

            let correction = if lagged {
                solve_newton_lagged(
                    &guess,
                    e_matrix.as_ref().expect("lagged E"),
                    &mats,
                    w_factors.as_ref(),
                    &res,
                    dt,
                    kappa_n,
                    model,
                    &self.dirichlet,
                )
            } else {
                let jac = select_jacobian(&guess, &mats, dt, model, &self.dirichlet);
                let rhs: Vec<T> = res.iter().map(|&r| -r).collect();
                linear_solve(&jac, &rhs)
            }
            .map_err(|e| Error::SingularIteration {
                iteration: k,
                source: Box::new(e),
            })?;

            for i in 0..q {
                b[i] = b[i] + correction[i];
                lam[i] = lam[i] + correction[q + i];
                n[i] = n[i] + correction[2 * q + i];
            }
            iterations = k + 1;
        }
        unreachable!("loop returns or errors at k == max_iter");
    }

    /// Plain backward-Euler Galerkin step with the constraint ignored
    /// (Λ = 0). Consistency reference for the unconstrained limit.
    pub fn unconstrained_step(
        &mut self,
        model: &ModelSpec<T>,
        prev: &SystemState<T>,
        dt: T,
    ) -> Result<SystemState<T>> {
        let mats = self.assemble_step(model, prev, dt)?;
        let kappa_b = model.growth_coefficient();
        let kappa_n = model.utilization_coefficient();
        let e = eliminate_rows(
            &self
                .mass
                .add_scaled(dt, &mats.stiff_b)
                .add_scaled(-kappa_b * dt, &mats.reaction),
            &self.dirichlet,
        );
        let mb_prev = self.mass.mul_vec(prev.b.values());
        let q = self.mesh.n_vertices();
        let mut rhs_b = vec![T::zero(); q];
        for i in 0..q {
            if !self.dirichlet[i] {
                rhs_b[i] = dt * mats.load_b[i] + mb_prev[i];
            }
        }
        let b = linear_solve(&e, &rhs_b)?;
        let n = if model.nutrient_enabled {
            let w = eliminate_rows(&self.mass.add_scaled(dt, &mats.stiff_n), &self.dirichlet);
            let mn_prev = self.mass.mul_vec(prev.n.values());
            let rb = mats.reaction.mul_vec(&b);
            let mut rhs_n = vec![T::zero(); q];
            for i in 0..q {
                if !self.dirichlet[i] {
                    rhs_n[i] = dt * mats.load_n[i] + mn_prev[i] - kappa_n * dt * rb[i];
                }
            }
            linear_solve(&w, &rhs_n)?
        } else {
            prev.n.values().to_vec()
        };
        Ok(SystemState {
            b: NodalField::new(self.mesh, b)?,
            lambda: NodalField::new(self.mesh, vec![T::zero(); q])?,
            n: NodalField::new(self.mesh, n)?,
            t: prev.t + dt,
        })
    }
}

/// Replace masked rows by identity rows.
fn eliminate_rows<T: Real>(a: &SparseMatrix<T>, mask: &[bool]) -> SparseMatrix<T> {
    let mut out = a.clone();
    for (r, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        let lo = {
            let (cols, _) = out.row(r);
            cols.to_vec()
        };
        for c in lo {
            let v = if c == r { T::one() } else { T::zero() };
            let k = out.pattern().find(r, c).unwrap();
            out.values_mut()[k] = v;
        }
    }
    out
}

/// Exact solve of the time-lagged Newton system by block elimination:
/// complementarity rows pin one unknown per node, the remaining mixed
/// (B, Λ) system has mesh size, and the nutrient block back-substitutes
/// with a factorization reused across iterations.
#[allow(clippy::too_many_arguments)]
fn solve_newton_lagged<T: Real>(
    guess: &SystemState<T>,
    e_matrix: &SparseMatrix<T>,
    mats: &StepMatrices<T>,
    w_factors: Option<&(LuFactors<T>, SparseMatrix<T>)>,
    res: &[T],
    dt: T,
    kappa_n: T,
    model: &ModelSpec<T>,
    dirichlet: &[bool],
) -> Result<Vec<T>> {
    let q = guess.b.len();
    let inactive = inactive_mask(guess, dt, model.b_lower, model.b_upper, dirichlet);

    // Complementarity rows: sΛ known where inactive (scaled rows), sB
    // known where active.
    let mut s_b = vec![T::zero(); q];
    let mut s_lam = vec![T::zero(); q];
    for i in 0..q {
        if inactive[i] {
            s_lam[i] = if dirichlet[i] {
                -res[q + i]
            } else {
                -res[q + i] / dt
            };
        } else {
            s_b[i] = -res[q + i];
        }
    }

    // Reduced system G u = rhs with u_j = sB_j (inactive) or sΛ_j (active).
    let mut g = SparseMatrix::zeros(e_matrix.pattern().clone());
    let mut rhs = vec![T::zero(); q];
    for i in 0..q {
        if dirichlet[i] {
            let k = g.pattern().find(i, i).unwrap();
            g.values_mut()[k] = T::one();
            rhs[i] = -res[i];
            continue;
        }
        let (cols, evals) = e_matrix.row(i);
        let mvals = mats.mass.row(i).1;
        let mut acc = -res[i];
        for (k, &j) in cols.iter().enumerate() {
            let kk = g.pattern().find(i, j).unwrap();
            if inactive[j] {
                g.values_mut()[kk] = evals[k];
                acc = acc + dt * mvals[k] * s_lam[j];
            } else {
                g.values_mut()[kk] = -dt * mvals[k];
                acc = acc - evals[k] * s_b[j];
            }
        }
        rhs[i] = acc;
    }
    let u = linear_solve(&g, &rhs)?;
    for i in 0..q {
        if inactive[i] {
            s_b[i] = u[i];
        } else {
            s_lam[i] = u[i];
        }
    }

    // Nutrient block.
    let mut s_n = vec![T::zero(); q];
    if let Some((factors, w)) = w_factors {
        let r_sb = mats.reaction.mul_vec(&s_b);
        let mut rhs_n = vec![T::zero(); q];
        for i in 0..q {
            rhs_n[i] = if dirichlet[i] {
                -res[2 * q + i]
            } else {
                -res[2 * q + i] - kappa_n * dt * r_sb[i]
            };
        }
        s_n = linear_solve_with(factors, w, &rhs_n)?;
    } else {
        for i in 0..q {
            s_n[i] = -res[2 * q + i];
        }
    }

    let mut out = Vec::with_capacity(3 * q);
    out.extend_from_slice(&s_b);
    out.extend_from_slice(&s_lam);
    out.extend_from_slice(&s_n);
    Ok(out)
}

/// Self-contained single step: assembles everything on the fly and runs
/// the Newton iteration. Time loops should hold a [`Stepper`] instead to
/// reuse the pattern and mass matrix across steps.
pub fn semismooth_newton<T: Real>(
    state_prev: &SystemState<T>,
    dt: T,
    model: &ModelSpec<T>,
    mesh: &SimplicialMesh<T>,
    tol: T,
    max_iter: usize,
) -> Result<(SystemState<T>, NewtonReport<T>)> {
    let mut stepper = Stepper::new(mesh, model, false);
    stepper.newton_step(
        model,
        state_prev,
        dt,
        &NewtonOptions {
            tol,
            max_iter,
            fully_implicit: false,
        },
    )
}

/// Worst-case complementarity violations of a state against bounds.
#[derive(Debug, Clone, Copy)]
pub struct ComplementarityCheck<T> {
    /// Positive part of the feasibility excess max(B−B*, B_*−B).
    pub max_bound_violation: T,
    /// Upper-bound-only sign condition max(Λ, 0).
    pub max_lambda_sign: T,
    /// Worst per-node complementarity defect (two-sided aware).
    pub max_product: T,
}

pub fn check_complementarity<T: Real>(
    state: &SystemState<T>,
    b_lower: T,
    b_upper: T,
) -> ComplementarityCheck<T> {
    let mut bound = T::zero();
    let mut sign = T::zero();
    let mut product = T::zero();
    let side = |lam: T, b: T, bnd: T, upper: bool| -> T {
        if !bnd.is_finite() {
            return lam.abs();
        }
        let sign_v = if upper {
            lam.max(T::zero())
        } else {
            (-lam).max(T::zero())
        };
        sign_v.max((lam * (b - bnd)).abs())
    };
    for (&b, &lam) in state.b.values().iter().zip(state.lambda.values()) {
        let over = (b - b_upper).max(b_lower - b).max(T::zero());
        if over > bound {
            bound = over;
        }
        let s = lam.max(T::zero());
        if s > sign {
            sign = s;
        }
        let v = side(lam, b, b_upper, true).min(side(lam, b, b_lower, false));
        if v > product {
            product = v;
        }
    }
    ComplementarityCheck {
        max_bound_violation: bound,
        max_lambda_sign: sign,
        max_product: product,
    }
}

#[cfg(test)]
mod tests;
