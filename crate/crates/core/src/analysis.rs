//! Error measurement against nested fine-grid surrogates and
//! convergence-order estimation.
//!
//! Errors are computed in the fine space after exact P1 prolongation
//! (meshes must belong to one nested hierarchy), which avoids point
//! location and quadrature mismatch at the cost of slightly flattering
//! the observed rates; acceptance bands account for this.

use std::collections::VecDeque;
use std::sync::Mutex;

use crate::assembly::{assemble_mass, assemble_stiffness, NodalField};
use crate::error::{Error, Result};
use crate::experiments::{builtin_experiment, Experiment};
use crate::mesh::{MeshHierarchy, VertexOrigin};
use crate::model::ModelSpec;
use crate::scalar::{cast, Real};
use crate::sparse::SparseMatrix;
use crate::timeloop::{run_on_mesh, MeshSource, RunConfig, Trajectory};

/// Exact prolongation of a nodal field from its own hierarchy level to
/// `target_level`. The source level is inferred from the field length;
/// fields not matching any level are rejected as non-nested.
pub fn transfer_to_fine<T: Real>(
    field: &NodalField<T>,
    hierarchy: &MeshHierarchy<T>,
    target_level: usize,
) -> Result<NodalField<T>> {
    let from = (0..hierarchy.n_levels())
        .find(|&k| hierarchy.level(k).n_vertices() == field.len())
        .ok_or_else(|| {
            Error::StudyMismatch(format!(
                "field with {} values matches no hierarchy level",
                field.len()
            ))
        })?;
    if target_level < from || target_level >= hierarchy.n_levels() {
        return Err(Error::StudyMismatch(format!(
            "cannot transfer from level {from} to level {target_level}"
        )));
    }
    let mut values = field.values().to_vec();
    let half = cast::<T>(0.5);
    for k in from..target_level {
        let map = hierarchy.refinement(k);
        let mut fine = Vec::with_capacity(map.vertex_origin.len());
        for origin in &map.vertex_origin {
            match *origin {
                VertexOrigin::Coarse(i) => fine.push(values[i]),
                VertexOrigin::EdgeMidpoint(a, b) => fine.push((values[a] + values[b]) * half),
            }
        }
        values = fine;
    }
    NodalField::new(hierarchy.level(target_level), values)
}

/// Matrices backing the norm evaluations on one mesh.
struct NormContext<T> {
    mass: SparseMatrix<T>,
    stiff: SparseMatrix<T>,
}

impl<T: Real> NormContext<T> {
    fn new(mesh: &crate::mesh::SimplicialMesh<T>) -> Self {
        let ones = NodalField::constant(mesh, T::one());
        Self {
            mass: assemble_mass(mesh),
            stiff: assemble_stiffness(mesh, &ones, &mut |_| T::one())
                .expect("unit coefficient is nonnegative"),
        }
    }

    fn norms(&self, a: &[T], b: &[T]) -> (T, T) {
        let e: Vec<T> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
        let l2sq = self.mass.quadratic_form(&e);
        let h1sq = l2sq + self.stiff.quadratic_form(&e);
        (l2sq.max(T::zero()).sqrt(), h1sq.max(T::zero()).sqrt())
    }
}

/// L2 and full H1 norms of the difference of two fields on one mesh.
pub fn fe_norms<T: Real>(
    field: &NodalField<T>,
    reference: &NodalField<T>,
    mesh: &crate::mesh::SimplicialMesh<T>,
) -> Result<(T, T)> {
    if field.len() != mesh.n_vertices() || reference.len() != mesh.n_vertices() {
        return Err(Error::MeshMismatch {
            field_len: field.len().min(reference.len()),
            n_vertices: mesh.n_vertices(),
        });
    }
    Ok(NormContext::new(mesh).norms(field.values(), reference.values()))
}

/// Errors of one sampled time.
#[derive(Debug, Clone, Copy)]
pub struct SampleErrors<T> {
    pub t: T,
    pub l2_b: T,
    pub l2_n: T,
    pub h1_b: T,
    pub h1_n: T,
}

/// Per-run error summary over the sample set.
#[derive(Debug, Clone)]
pub struct ErrorReport<T> {
    pub per_sample: Vec<SampleErrors<T>>,
    /// max over samples of (|e_B|_0 + |e_N|_0).
    pub err1: T,
    /// sqrt of Δt-weighted sum over samples of (|e_B|_1^2 + |e_N|_1^2).
    pub err2: T,
    pub h: T,
    pub dt: T,
}

fn aggregate<T: Real>(per_sample: &[SampleErrors<T>], dt: T) -> (T, T) {
    let err1 = per_sample
        .iter()
        .map(|s| s.l2_b + s.l2_n)
        .fold(T::zero(), |m, v| if v > m { v } else { m });
    let err2 = per_sample
        .iter()
        .map(|s| (s.h1_b * s.h1_b + s.h1_n * s.h1_n) * dt)
        .sum::<T>()
        .sqrt();
    (err1, err2)
}

fn error_report_with<T: Real>(
    ctx: &NormContext<T>,
    coarse: &Trajectory<T>,
    fine: &Trajectory<T>,
    hierarchy: &MeshHierarchy<T>,
    fine_level: usize,
) -> Result<ErrorReport<T>> {
    if coarse.captured.len() != fine.captured.len() {
        return Err(Error::StudyMismatch(format!(
            "sample sets differ: {} vs {} captured states",
            coarse.captured.len(),
            fine.captured.len()
        )));
    }
    let tol = cast::<T>(1e-9);
    let mut per_sample = Vec::with_capacity(coarse.captured.len());
    for (cs, fs) in coarse.captured.iter().zip(&fine.captured) {
        if (cs.t - fs.t).abs() > tol {
            return Err(Error::StudyMismatch(format!(
                "sample times differ: {} vs {}",
                cs.t, fs.t
            )));
        }
        let b_up = transfer_to_fine(&cs.b, hierarchy, fine_level)?;
        let n_up = transfer_to_fine(&cs.n, hierarchy, fine_level)?;
        let (l2_b, h1_b) = ctx.norms(b_up.values(), fs.b.values());
        let (l2_n, h1_n) = ctx.norms(n_up.values(), fs.n.values());
        per_sample.push(SampleErrors {
            t: cs.t,
            l2_b,
            l2_n,
            h1_b,
            h1_n,
        });
    }
    let (err1, err2) = aggregate(&per_sample, coarse.dt);
    Ok(ErrorReport {
        per_sample,
        err1,
        err2,
        h: coarse.h_max,
        dt: coarse.dt,
    })
}

/// Compare a coarse trajectory against a fine surrogate captured at the
/// same sample times; both meshes must live in `hierarchy`.
pub fn compute_error_report<T: Real>(
    coarse: &Trajectory<T>,
    fine: &Trajectory<T>,
    hierarchy: &MeshHierarchy<T>,
    fine_level: usize,
) -> Result<ErrorReport<T>> {
    let ctx = NormContext::new(hierarchy.level(fine_level));
    error_report_with(&ctx, coarse, fine, hierarchy, fine_level)
}

/// One row of a convergence table.
#[derive(Debug, Clone, Copy)]
pub struct TableRow<T> {
    pub h: T,
    pub dt: T,
    pub err1: T,
    pub err2: T,
    pub order1: Option<T>,
    pub order2: Option<T>,
}

#[derive(Debug, Clone)]
pub struct ConvergenceTable<T> {
    pub rows: Vec<TableRow<T>>,
}

impl<T: Real> ConvergenceTable<T> {
    /// Build from (h, dt, err1, err2) tuples; orders come from
    /// consecutive rows (rows must be sorted by decreasing h).
    pub fn from_errors(entries: &[(T, T, T, T)]) -> Self {
        let mut rows: Vec<TableRow<T>> = Vec::with_capacity(entries.len());
        for &(h, dt, err1, err2) in entries {
            let (order1, order2) = match rows.last() {
                None => (None, None),
                Some(prev) => {
                    let denom = (prev.h / h).ln();
                    (
                        Some((prev.err1 / err1).ln() / denom),
                        Some((prev.err2 / err2).ln() / denom),
                    )
                }
            };
            rows.push(TableRow {
                h,
                dt,
                err1,
                err2,
                order1,
                order2,
            });
        }
        Self { rows }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,dt,err1,err2,order1,order2\n");
        for r in &self.rows {
            let fmt = |o: Option<T>| o.map(|v| format!("{v}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.h,
                r.dt,
                r.err1,
                r.err2,
                fmt(r.order1),
                fmt(r.order2)
            ));
        }
        out
    }

    pub fn observed_orders(&self) -> (Vec<T>, Vec<T>) {
        (
            self.rows.iter().filter_map(|r| r.order1).collect(),
            self.rows.iter().filter_map(|r| r.order2).collect(),
        )
    }
}

/// How Δt shrinks per refinement level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DtScaling {
    /// Δt ∝ h (halves per level).
    LinearInH,
    /// Δt ∝ h² (quarters per level).
    QuadraticInH,
}

/// A convergence study: coarse levels refine the base config's mesh with
/// Δt scaled per level, plus a deeper fine surrogate level.
#[derive(Debug, Clone)]
pub struct StudyPlan<T> {
    /// Coarsest run (mesh source and Δt of level 0, plus Υ, T, solver
    /// options shared by every run).
    pub base: RunConfig<T>,
    pub coarse_levels: usize,
    /// Extra refinements separating the finest coarse level from the
    /// surrogate.
    pub fine_extra: usize,
    pub dt_fine: T,
    pub scaling: DtScaling,
}

/// Study result: rows for every completed level; `failure` is set when a
/// constituent run aborted (the table then covers the completed prefix).
#[derive(Debug)]
pub struct StudyReport<T> {
    pub table: ConvergenceTable<T>,
    pub failure: Option<Box<Error>>,
}

fn max_workers() -> usize {
    std::env::var("PVI_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// Run independent jobs on a bounded pool; results keep job order.
fn run_pool<F, R>(jobs: Vec<F>) -> Vec<R>
where
    F: FnOnce() -> R + Send,
    R: Send,
{
    let n = jobs.len();
    let workers = max_workers().min(n).max(1);
    let queue: Mutex<VecDeque<(usize, F)>> = Mutex::new(jobs.into_iter().enumerate().collect());
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let job = queue.lock().unwrap().pop_front();
                let Some((idx, f)) = job else { break };
                let r = f();
                results.lock().unwrap()[idx] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("worker filled every slot"))
        .collect()
}

/// Execute a study: all runs (parallel over levels), then one error
/// report per coarse level against the fine surrogate.
pub fn convergence_study<T: Real>(
    model: &ModelSpec<T>,
    plan: &StudyPlan<T>,
) -> Result<StudyReport<T>> {
    if plan.coarse_levels < 2 {
        return Err(Error::InvalidConfig(
            "a study needs at least two coarse levels".into(),
        ));
    }
    if plan.fine_extra < 1 {
        return Err(Error::InvalidConfig(
            "the fine surrogate must be strictly finer than the coarse levels".into(),
        ));
    }
    let root = plan.base.build_mesh()?;
    let total = plan.coarse_levels + plan.fine_extra;
    let hierarchy = MeshHierarchy::with_levels(root, total)?;
    let fine_level = total - 1;

    let dt_at = |level: usize| -> T {
        let factor = match plan.scaling {
            DtScaling::LinearInH => 2f64.powi(level as i32),
            DtScaling::QuadraticInH => 4f64.powi(level as i32),
        };
        plan.base.dt / cast::<T>(factor)
    };

    let mut jobs: Vec<Box<dyn FnOnce() -> Result<Trajectory<T>> + Send>> = Vec::new();
    for level in 0..plan.coarse_levels {
        let mut cfg = plan.base.clone();
        cfg.dt = dt_at(level);
        let mesh = hierarchy.level(level);
        jobs.push(Box::new(move || {
            let traj = run_on_mesh(model, &cfg, mesh)?;
            match traj.failure {
                Some(e) => Err(*e),
                None => Ok(traj),
            }
        }));
    }
    {
        let mut cfg = plan.base.clone();
        cfg.dt = plan.dt_fine;
        let mesh = hierarchy.level(fine_level);
        jobs.push(Box::new(move || {
            let traj = run_on_mesh(model, &cfg, mesh)?;
            match traj.failure {
                Some(e) => Err(*e),
                None => Ok(traj),
            }
        }));
    }

    let mut outcomes = run_pool(jobs);
    let fine = match outcomes.pop().expect("fine job present") {
        Ok(t) => t,
        Err(e) => {
            return Ok(StudyReport {
                table: ConvergenceTable { rows: Vec::new() },
                failure: Some(Box::new(e)),
            })
        }
    };

    let ctx = NormContext::new(hierarchy.level(fine_level));
    let mut entries = Vec::new();
    let mut failure = None;
    for outcome in outcomes {
        match outcome {
            Ok(coarse) => {
                let report = error_report_with(&ctx, &coarse, &fine, &hierarchy, fine_level)?;
                entries.push((report.h, report.dt, report.err1, report.err2));
            }
            Err(e) => {
                failure = Some(Box::new(e));
                break;
            }
        }
    }
    Ok(StudyReport {
        table: ConvergenceTable::from_errors(&entries),
        failure,
    })
}

/// Which appendix study to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppendixCheck {
    ScalarPvi,
    Unconstrained,
}

/// Stock study plans per experiment, shared by the CLI and the
/// acceptance suite. Experiments without a nested-mesh study are
/// rejected.
pub fn planned_study<T: Real>(
    name: &str,
    coarse_levels: Option<usize>,
) -> Result<(Experiment<T>, StudyPlan<T>)> {
    let exp = builtin_experiment::<T>(name)?;
    let mut plan = match name {
        "ex5_1" => StudyPlan {
            base: RunConfig::new(
                MeshSource::Interval {
                    a: T::zero(),
                    b: T::one(),
                    cells: 100,
                },
                cast(0.01),
                cast(0.1),
                vec![cast(0.05), cast(0.1)],
            ),
            coarse_levels: 3,
            fine_extra: 2,
            dt_fine: cast(1e-4),
            scaling: DtScaling::LinearInH,
        },
        // The box edges of the Neumann experiment's initial data
        // (-0.75, 0, +-0.5) are grid lines of every level of the m = 8
        // family only; misaligned data is erratically resolved across
        // levels and pollutes the coarsest order estimate. The disk data
        // of the Dirichlet experiment behaves best on the m = 10 family.
        "ex5_3" | "ex5_4" => StudyPlan {
            base: RunConfig::new(
                MeshSource::Rectangle {
                    x: (cast(-1.0), T::one()),
                    y: (cast(-1.0), T::one()),
                    cells_per_side: if name == "ex5_3" { 10 } else { 8 },
                },
                cast(0.0125),
                cast(0.3),
                vec![cast(0.1), cast(0.2), cast(0.3)],
            ),
            coarse_levels: 3,
            fine_extra: 1,
            dt_fine: cast(0.1 / 256.0),
            scaling: DtScaling::LinearInH,
        },
        "appendix_A1" => StudyPlan {
            // Early samples catch the free-boundary formation transient,
            // where the first-order behavior of the constrained problem
            // actually shows.
            base: RunConfig::new(
                MeshSource::Interval {
                    a: T::zero(),
                    b: T::one(),
                    cells: 25,
                },
                cast(0.005),
                cast(0.1),
                vec![cast(0.01), cast(0.02), cast(0.05), cast(0.1)],
            ),
            coarse_levels: 3,
            fine_extra: 3,
            dt_fine: cast(1e-4),
            scaling: DtScaling::LinearInH,
        },
        "appendix_A2" => {
            // Quadratic spatial order is only observable with
            // mass-consistent initial data and grid-aligned jumps of the
            // characteristic nutrient band (0.25 and 0.75 are vertices of
            // every level of the n = 20 family).
            let mut base = RunConfig::new(
                MeshSource::Interval {
                    a: T::zero(),
                    b: T::one(),
                    cells: 20,
                },
                cast(0.01 / 64.0),
                cast(0.02),
                vec![cast(0.01), cast(0.02)],
            );
            base.project_initial_data = true;
            StudyPlan {
                base,
                coarse_levels: 3,
                fine_extra: 3,
                dt_fine: cast(0.01 / 4096.0),
                scaling: DtScaling::QuadraticInH,
            }
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "experiment `{other}` has no nested-mesh convergence study"
            )))
        }
    };
    if let Some(levels) = coarse_levels {
        if levels < 2 {
            return Err(Error::InvalidConfig("--levels must be at least 2".into()));
        }
        plan.coarse_levels = levels;
    }
    Ok((exp, plan))
}

/// Convergence check of the appendix problems: the scalar
/// double-obstacle problem at Δt = O(h), and the unconstrained coupled
/// system at Δt = O(h²) to expose the quadratic spatial order.
pub fn appendix_rate_check<T: Real>(which: AppendixCheck) -> Result<StudyReport<T>> {
    let name = match which {
        AppendixCheck::ScalarPvi => "appendix_A1",
        AppendixCheck::Unconstrained => "appendix_A2",
    };
    let (exp, plan) = planned_study::<T>(name, None)?;
    convergence_study(&exp.model, &plan)
}
