//! Time stepping: initialization, the uniform backward-Euler loop with
//! per-step diagnostics, scheduled state capture, and scalar outputs
//! (total biomass, free-boundary activity).

use std::path::PathBuf;

use crate::assembly::{assemble_mass, NodalField};
use crate::error::{Error, Result};
use crate::mesh::{
    generate_interval, generate_rectangle, import_mesh, parse_mesh, refine_uniform, SimplicialMesh,
};
use crate::model::{BoundaryKind, ModelSpec};
use crate::scalar::{cast, Real};
use crate::solver::{check_complementarity, NewtonOptions, Stepper, SystemState};

/// Where the mesh of a run comes from.
#[derive(Debug, Clone)]
pub enum MeshSource<T> {
    Interval {
        a: T,
        b: T,
        cells: usize,
    },
    Rectangle {
        x: (T, T),
        y: (T, T),
        cells_per_side: usize,
    },
    File(PathBuf),
    /// Fixture carried inside the binary (named for error messages).
    Embedded {
        name: &'static str,
        text: &'static str,
    },
}

/// Full description of one run.
#[derive(Debug, Clone)]
pub struct RunConfig<T> {
    pub mesh: MeshSource<T>,
    /// Uniform refinements applied after building the base mesh.
    pub refine: usize,
    pub dt: T,
    pub t_final: T,
    /// Sample times Υ; each must land on a time step.
    pub sample_times: Vec<T>,
    pub tol: T,
    pub max_iter: usize,
    pub fully_implicit: bool,
    pub lumped_mass: bool,
    /// Initialize by L2 projection instead of nodal interpolation
    /// (mass-consistent data for quadratic-order studies).
    pub project_initial_data: bool,
    /// Store full fields at sample times (scalar series are always kept).
    pub capture_fields: bool,
}

impl<T: Real> RunConfig<T> {
    pub fn new(mesh: MeshSource<T>, dt: T, t_final: T, sample_times: Vec<T>) -> Self {
        Self {
            mesh,
            refine: 0,
            dt,
            t_final,
            sample_times,
            tol: cast(1e-6),
            max_iter: 50,
            fully_implicit: false,
            lumped_mass: false,
            project_initial_data: false,
            capture_fields: true,
        }
    }

    pub fn build_mesh(&self) -> Result<SimplicialMesh<T>> {
        let mut mesh = match &self.mesh {
            MeshSource::Interval { a, b, cells } => generate_interval(*a, *b, *cells)?,
            MeshSource::Rectangle {
                x,
                y,
                cells_per_side,
            } => generate_rectangle(*x, *y, *cells_per_side)?,
            MeshSource::File(path) => import_mesh(path)?,
            MeshSource::Embedded { text, .. } => parse_mesh(text)?,
        };
        for _ in 0..self.refine {
            mesh = refine_uniform(&mesh)?.0;
        }
        Ok(mesh)
    }

    /// Number of steps and the snapped sample schedule.
    /// Sample times that miss the step grid by more than the snapping
    /// tolerance are configuration errors, not silently interpolated.
    pub fn schedule(&self) -> Result<(usize, Vec<usize>)> {
        // Negated form also rejects a NaN time step.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.dt > T::zero()) {
            return Err(Error::InvalidConfig("dt must be positive".into()));
        }
        if self.t_final == T::zero() {
            // Zero steps: the trajectory holds only the initial state.
            if self.sample_times.iter().any(|&s| s != T::zero()) {
                return Err(Error::InvalidConfig(
                    "sample times must be empty or {0} when t_final is 0".into(),
                ));
            }
            return Ok((0, vec![0; usize::from(!self.sample_times.is_empty())]));
        }
        if self.t_final < self.dt {
            return Err(Error::InvalidConfig("t_final must be at least dt".into()));
        }
        let steps_f = (self.t_final / self.dt).to_f64().unwrap();
        let n_steps = steps_f.round() as usize;
        let snap_tol = cast::<T>(1e-12)
            * if self.t_final > T::one() {
                self.t_final
            } else {
                T::one()
            };
        let landed = cast::<T>(n_steps as f64) * self.dt - self.t_final;
        if landed.abs() > snap_tol {
            return Err(Error::InvalidConfig(format!(
                "t_final {} is not a multiple of dt {}",
                self.t_final, self.dt
            )));
        }
        let mut indices = Vec::with_capacity(self.sample_times.len());
        let mut last = None;
        for &s in &self.sample_times {
            if s < T::zero() || s > self.t_final + snap_tol {
                return Err(Error::InvalidConfig(format!(
                    "sample time {s} outside [0, {}]",
                    self.t_final
                )));
            }
            let idx = (s / self.dt).to_f64().unwrap().round() as usize;
            let miss = cast::<T>(idx as f64) * self.dt - s;
            if miss.abs() > snap_tol {
                return Err(Error::InvalidConfig(format!(
                    "sample time {s} does not land on the dt = {} grid",
                    self.dt
                )));
            }
            if let Some(prev) = last {
                if idx <= prev {
                    return Err(Error::InvalidConfig(
                        "sample times must be strictly increasing".into(),
                    ));
                }
            }
            last = Some(idx);
            indices.push(idx);
        }
        Ok((n_steps, indices))
    }
}

/// Scalar diagnostics of one accepted step (row 0 describes the initial
/// state).
#[derive(Debug, Clone, Copy)]
pub struct StepDiagnostics<T> {
    pub step: usize,
    pub t: T,
    pub total_b: T,
    pub total_n: T,
    pub active_nodes: usize,
    pub newton_iters: usize,
    pub residual: T,
    pub clamp_count: u64,
    /// Measure of cells whose saturation classification flipped during
    /// this step.
    pub dn_increment: T,
    /// Running sum of the increments.
    pub dn_sum: T,
}

/// Everything a run produces.
#[derive(Debug)]
pub struct Trajectory<T> {
    pub dt: T,
    pub t_final: T,
    pub h_max: T,
    pub n_vertices: usize,
    /// Per-step scalar series, length = accepted steps + 1.
    pub series: Vec<StepDiagnostics<T>>,
    /// Full states at the sample times (when capture is enabled).
    pub captured: Vec<SystemState<T>>,
    pub capture_times: Vec<T>,
    /// Set when the run aborted; the series and captures up to the
    /// failing step are preserved.
    pub failure: Option<Box<Error>>,
}

impl<T: Real> Trajectory<T> {
    /// First step at which the constraint became active.
    pub fn first_activation(&self) -> Option<(usize, T)> {
        self.series
            .iter()
            .find(|d| d.active_nodes > 0)
            .map(|d| (d.step, d.t))
    }

    /// Mean Newton iterations per accepted step.
    pub fn mean_newton_iterations(&self) -> f64 {
        let steps: Vec<_> = self.series.iter().skip(1).collect();
        if steps.is_empty() {
            return 0.0;
        }
        steps.iter().map(|d| d.newton_iters as f64).sum::<f64>() / steps.len() as f64
    }
}

/// Interpolate initial data, enforce essential boundary values, and
/// check the initial constraint node by node.
pub fn initialize<T: Real>(
    model: &ModelSpec<T>,
    mesh: &SimplicialMesh<T>,
) -> Result<SystemState<T>> {
    initialize_with(model, mesh, false)
}

/// As [`initialize`], optionally replacing nodal interpolation by the L2
/// projection (mass solve). Nodal interpolation of a characteristic
/// function biases the initial mass by O(h); the projection is
/// mass-consistent across refinement levels, which the quadratic-order
/// study of the unconstrained system needs. Tag-driven data always uses
/// nodal values.
pub fn initialize_with<T: Real>(
    model: &ModelSpec<T>,
    mesh: &SimplicialMesh<T>,
    project: bool,
) -> Result<SystemState<T>> {
    model.validate()?;
    let eval_field = |data: &crate::model::InitialData<T>| -> Result<Vec<T>> {
        if project {
            if let crate::model::InitialData::Function(f) = data {
                let f = f.clone();
                let load =
                    crate::assembly::assemble_load(mesh, &move |x: &[T], _| (f)(x), T::zero());
                let mass = assemble_mass(mesh);
                return crate::solver::linear_solve(&mass, &load);
            }
        }
        Ok((0..mesh.n_vertices()).map(|v| data.eval(mesh, v)).collect())
    };
    let mut b: Vec<T> = eval_field(&model.b_init)?;
    let mut n: Vec<T> = eval_field(&model.n_init)?;
    if model.bc == BoundaryKind::DirichletZero {
        for v in 0..mesh.n_vertices() {
            if mesh.is_boundary(v) {
                b[v] = T::zero();
                n[v] = T::zero();
            }
        }
    }
    for (node, &bv) in b.iter().enumerate() {
        if bv > model.b_upper {
            return Err(Error::InitialConstraintViolation {
                node,
                value: bv.to_f64().unwrap_or(f64::NAN),
                bound: model.b_upper.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    Ok(SystemState {
        b: NodalField::new(mesh, b)?,
        lambda: NodalField::new(mesh, vec![T::zero(); mesh.n_vertices()])?,
        n: NodalField::new(mesh, n)?,
        t: T::zero(),
    })
}

/// Integral of the P1 interpolant of B over the domain (row sums of the
/// consistent mass matrix applied to the coefficient vector).
pub fn total_biomass<T: Real>(state: &SystemState<T>, mesh: &SimplicialMesh<T>) -> T {
    let volumes = assemble_mass(mesh).row_sums();
    dot(&volumes, state.b.values())
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Node counts as saturated when B is within the activity tolerance of
/// the upper bound (the Newton solve pins active nodes to the bound
/// exactly, up to linear-solver roundoff).
fn saturated_nodes<T: Real>(b: &[T], b_upper: T) -> Vec<bool> {
    if !b_upper.is_finite() {
        return vec![false; b.len()];
    }
    let tol = cast::<T>(1e-9)
        * if b_upper.abs() > T::one() {
            b_upper.abs()
        } else {
            T::one()
        };
    b.iter().map(|&v| v >= b_upper - tol).collect()
}

fn classify_cells<T: Real>(mesh: &SimplicialMesh<T>, saturated: &[bool]) -> Vec<bool> {
    (0..mesh.n_cells())
        .map(|c| mesh.cell(c).iter().any(|&v| saturated[v]))
        .collect()
}

/// Run the full time loop. Mesh or configuration problems fail fast;
/// a solver failure mid-run returns the partial trajectory with the
/// failure recorded.
pub fn run<T: Real>(model: &ModelSpec<T>, config: &RunConfig<T>) -> Result<Trajectory<T>> {
    let mesh = config.build_mesh()?;
    run_on_mesh(model, config, &mesh)
}

/// Same as [`run`] with a caller-provided mesh (hierarchy studies build
/// their meshes once and share them).
pub fn run_on_mesh<T: Real>(
    model: &ModelSpec<T>,
    config: &RunConfig<T>,
    mesh: &SimplicialMesh<T>,
) -> Result<Trajectory<T>> {
    let (n_steps, sample_idx) = config.schedule()?;
    let mut state = initialize_with(model, mesh, config.project_initial_data)?;
    let mut stepper = Stepper::new(mesh, model, config.lumped_mass);
    let nodal_volumes = stepper.mass().row_sums();
    let opts = NewtonOptions {
        tol: config.tol,
        max_iter: config.max_iter,
        fully_implicit: config.fully_implicit,
    };

    let mut traj = Trajectory {
        dt: config.dt,
        t_final: config.t_final,
        h_max: mesh.h_max(),
        n_vertices: mesh.n_vertices(),
        series: Vec::with_capacity(n_steps + 1),
        captured: Vec::new(),
        capture_times: Vec::new(),
        failure: None,
    };

    let saturated = saturated_nodes(state.b.values(), model.b_upper);
    let mut cell_class = classify_cells(mesh, &saturated);
    let mut dn_sum = T::zero();
    let mut clamp_prev = 0u64;

    let record = |traj: &mut Trajectory<T>,
                  state: &SystemState<T>,
                  step: usize,
                  iters: usize,
                  residual: T,
                  clamps: u64,
                  saturated: &[bool],
                  dn_increment: T,
                  dn_sum: T| {
        traj.series.push(StepDiagnostics {
            step,
            t: state.t,
            total_b: dot(&nodal_volumes, state.b.values()),
            total_n: dot(&nodal_volumes, state.n.values()),
            active_nodes: saturated.iter().filter(|&&s| s).count(),
            newton_iters: iters,
            residual,
            clamp_count: clamps,
            dn_increment,
            dn_sum,
        });
    };

    record(
        &mut traj,
        &state,
        0,
        0,
        T::zero(),
        0,
        &saturated,
        T::zero(),
        dn_sum,
    );
    if sample_idx.contains(&0) && config.capture_fields {
        traj.captured.push(state.clone());
        traj.capture_times.push(state.t);
    }

    for step in 1..=n_steps {
        match stepper.newton_step(model, &state, config.dt, &opts) {
            Ok((next, report)) => {
                // Time accumulates as n*dt to keep sample times exact.
                let mut next = next;
                next.t = cast::<T>(step as f64) * config.dt;
                let sat_next = saturated_nodes(next.b.values(), model.b_upper);
                let class_next = classify_cells(mesh, &sat_next);
                let mut dn_increment = T::zero();
                for (c, (&a, &b)) in cell_class.iter().zip(&class_next).enumerate() {
                    if a != b {
                        dn_increment = dn_increment + mesh.cell_volume(c);
                    }
                }
                dn_sum = dn_sum + dn_increment;
                let clamps = stepper.clamp_count - clamp_prev;
                clamp_prev = stepper.clamp_count;
                record(
                    &mut traj,
                    &next,
                    step,
                    report.iterations,
                    report.final_residual_maxnorm,
                    clamps,
                    &sat_next,
                    dn_increment,
                    dn_sum,
                );
                if sample_idx.contains(&step) && config.capture_fields {
                    traj.captured.push(next.clone());
                    traj.capture_times.push(next.t);
                }
                cell_class = class_next;
                state = next;
            }
            Err(e) => {
                traj.failure = Some(Box::new(Error::StepFailed {
                    step,
                    t: (cast::<T>(step as f64) * config.dt)
                        .to_f64()
                        .unwrap_or(f64::NAN),
                    source: Box::new(e),
                }));
                return Ok(traj);
            }
        }
    }
    Ok(traj)
}

/// Run and require success (convergence harnesses need every step).
pub fn run_to_completion<T: Real>(
    model: &ModelSpec<T>,
    config: &RunConfig<T>,
) -> Result<Trajectory<T>> {
    let traj = run(model, config)?;
    match traj.failure {
        Some(e) => Err(*e),
        None => Ok(traj),
    }
}

/// Aggregate view of the saturation-front movement.
#[derive(Debug, Clone)]
pub struct FreeBoundaryActivity<T> {
    pub per_step: Vec<T>,
    pub total: T,
    /// True when the last quarter of the run contributed less than 1% of
    /// the total (or nothing moved at all).
    pub plateaued: bool,
}

/// Running sum of the measure of cells whose saturation classification
/// changed between consecutive steps. Diagnostic only.
pub fn free_boundary_activity<T: Real>(trajectory: &Trajectory<T>) -> FreeBoundaryActivity<T> {
    let per_step: Vec<T> = trajectory
        .series
        .iter()
        .skip(1)
        .map(|d| d.dn_increment)
        .collect();
    let total: T = per_step.iter().copied().sum();
    let plateaued = if total == T::zero() {
        true
    } else {
        let tail_from = per_step.len() - per_step.len() / 4;
        let tail: T = per_step[tail_from..].iter().copied().sum();
        tail <= cast::<T>(0.01) * total
    };
    FreeBoundaryActivity {
        per_step,
        total,
        plateaued,
    }
}

/// Worst complementarity violation across every step of a trajectory
/// requires captured states; the per-step check runs on capture times.
pub fn worst_complementarity<T: Real>(
    trajectory: &Trajectory<T>,
    b_lower: T,
    b_upper: T,
) -> crate::solver::ComplementarityCheck<T> {
    let mut worst = crate::solver::ComplementarityCheck {
        max_bound_violation: T::zero(),
        max_lambda_sign: T::zero(),
        max_product: T::zero(),
    };
    for s in &trajectory.captured {
        let c = check_complementarity(s, b_lower, b_upper);
        worst.max_bound_violation = worst.max_bound_violation.max(c.max_bound_violation);
        worst.max_lambda_sign = worst.max_lambda_sign.max(c.max_lambda_sign);
        worst.max_product = worst.max_product.max(c.max_product);
    }
    worst
}
