//! Command-line driver: run experiments, convergence studies, and the
//! solver-vs-enumeration oracle check.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use biofilm_fem::analysis::{convergence_study, planned_study};
use biofilm_fem::experiments::{builtin_experiment, experiment_names, Experiment};
use biofilm_fem::io::{series_csv, vtk_snapshot};
use biofilm_fem::solver::enumeration::run_comparison;
use biofilm_fem::timeloop::{MeshSource, RunConfig};
use biofilm_fem::Error as FemError;

/// Finite-element solver for constrained biofilm-nutrient growth.
///
/// The environment variable PVI_THREADS caps the worker count of
/// convergence sweeps.
#[derive(Parser)]
#[command(name = "biofilm-fem", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write series.csv plus VTK snapshots.
    Run(RunArgs),
    /// Run a nested-mesh convergence study and write convergence.csv.
    Converge(ConvergeArgs),
    /// List the built-in experiments.
    List,
    /// Compare the Newton solver against active-set enumeration on
    /// randomized small instances.
    OracleCheck(OracleArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Built-in experiment name (see `list`).
    experiment: Option<String>,
    /// Key-value config file instead of a built-in name.
    #[arg(long, conflicts_with = "experiment")]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the time step.
    #[arg(long)]
    dt: Option<f64>,
    /// Override the final time.
    #[arg(long)]
    t_final: Option<f64>,
    /// Uniform refinements applied to the base mesh.
    #[arg(long)]
    refine: Option<usize>,
    /// Newton tolerance (max norm).
    #[arg(long)]
    tol: Option<f64>,
    /// Rebuild the Monod factor from the current Newton iterate.
    #[arg(long)]
    fully_implicit: bool,
    /// Use the row-sum lumped mass matrix.
    #[arg(long)]
    lumped_mass: bool,
    /// Skip VTK snapshots (series.csv is always written).
    #[arg(long)]
    no_vtk: bool,
}

#[derive(Args)]
struct ConvergeArgs {
    /// Experiment with a configured nested-mesh study.
    experiment: String,
    /// Number of coarse levels.
    #[arg(long)]
    levels: Option<usize>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    /// Number of randomized instances.
    #[arg(long, default_value_t = 20)]
    instances: u64,
    /// Base seed; instance k uses seed + k.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fault-injection hook: flip the sign of the Newton multiplier
    /// before comparing (the check must then fail).
    #[arg(long, hide = true)]
    inject_lambda_flip: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Converge(args) => cmd_converge(args),
        Command::List => cmd_list(),
        Command::OracleCheck(args) => cmd_oracle_check(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            // Configuration and input errors exit with 2, runtime
            // failures with 1.
            let config_error = e.downcast_ref::<FemError>().is_some_and(|fe| {
                matches!(
                    fe,
                    FemError::InvalidConfig(_)
                        | FemError::UnknownExperiment { .. }
                        | FemError::MeshParse { .. }
                        | FemError::InvalidMesh(_)
                        | FemError::CellIndexOutOfRange { .. }
                        | FemError::DegenerateCell { .. }
                        | FemError::NonConforming { .. }
                        | FemError::RefineUnsupported { .. }
                )
            });
            if config_error {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn cmd_list() -> anyhow::Result<ExitCode> {
    for name in experiment_names() {
        let e = builtin_experiment::<f64>(name).expect("registered name");
        println!("{:<12} {}", e.name, e.description);
    }
    Ok(ExitCode::SUCCESS)
}

fn load_experiment(args: &RunArgs) -> anyhow::Result<Experiment<f64>> {
    let mut exp = match (&args.experiment, &args.config) {
        (Some(name), None) => builtin_experiment::<f64>(name)?,
        (None, Some(path)) => parse_config_file(path)?,
        (None, None) => bail!("specify an experiment name or --config FILE (see `list`)"),
        (Some(_), Some(_)) => unreachable!("clap enforces the conflict"),
    };
    if let Some(dt) = args.dt {
        exp.config.dt = dt;
        // Default samples may no longer land on the grid; keep only the
        // final time, which the caller controls.
        exp.config.sample_times = vec![exp.config.t_final];
    }
    if let Some(t) = args.t_final {
        exp.config.t_final = t;
        exp.config.sample_times.retain(|&s| s <= t);
        if exp.config.sample_times.is_empty() {
            exp.config.sample_times = vec![t];
        }
    }
    if let Some(r) = args.refine {
        exp.config.refine = r;
    }
    if let Some(tol) = args.tol {
        exp.config.tol = tol;
    }
    exp.config.fully_implicit |= args.fully_implicit;
    exp.config.lumped_mass |= args.lumped_mass;
    Ok(exp)
}

fn cmd_run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let exp = load_experiment(&args)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output directory {}", args.out.display()))?;

    let mesh = exp.config.build_mesh()?;
    println!(
        "{}: {} vertices, {} cells, h = {:.6}, dt = {}, T = {}",
        exp.name,
        mesh.n_vertices(),
        mesh.n_cells(),
        mesh.h_max(),
        exp.config.dt,
        exp.config.t_final
    );
    let advisory = biofilm_fem::solver::check_timestep_condition(&exp.model, &mesh, exp.config.dt);
    if !advisory.satisfied {
        println!(
            "note: uniqueness advisory suggests dt < {:.3e} (gamma = {:.3e}, Lipschitz = {:.3e})",
            advisory.dt_bound, advisory.gamma, advisory.lipschitz
        );
    }

    let traj = biofilm_fem::timeloop::run_on_mesh(&exp.model, &exp.config, &mesh)?;

    std::fs::write(args.out.join("series.csv"), series_csv(&traj))?;
    if !args.no_vtk {
        for (k, state) in traj.captured.iter().enumerate() {
            let path = args.out.join(format!("state_t{k:04}.vtk"));
            std::fs::write(path, vtk_snapshot(&mesh, state))?;
        }
    }

    match traj.first_activation() {
        Some((step, t)) => println!("constraint first active at step {step} (t = {t})"),
        None => println!("constraint never active"),
    }
    let last = traj.series.last().expect("series nonempty");
    println!(
        "steps: {}, mean Newton iterations: {:.2}, final total B: {:.6e}, total N: {:.6e}",
        traj.series.len() - 1,
        traj.mean_newton_iterations(),
        last.total_b,
        last.total_n
    );
    if let Some(failure) = &traj.failure {
        eprintln!("run aborted: {failure}");
        eprintln!("partial outputs written to {}", args.out.display());
        return Ok(ExitCode::FAILURE);
    }
    println!("outputs written to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_converge(args: ConvergeArgs) -> anyhow::Result<ExitCode> {
    let (exp, plan) = planned_study::<f64>(&args.experiment, args.levels)?;
    std::fs::create_dir_all(&args.out)?;
    println!(
        "{}: {} coarse levels + fine surrogate ({} extra refinements), dt_fine = {:.3e}",
        exp.name, plan.coarse_levels, plan.fine_extra, plan.dt_fine
    );
    let report = convergence_study(&exp.model, &plan)?;
    let csv = report.table.to_csv();
    std::fs::write(args.out.join("convergence.csv"), &csv)?;
    print!("{csv}");
    let (o1, o2) = report.table.observed_orders();
    println!("observed orders: ERR1 {o1:?}, ERR2 {o2:?}");
    if let Some(failure) = &report.failure {
        eprintln!("study aborted: {failure}");
        return Ok(ExitCode::FAILURE);
    }
    println!("convergence.csv written to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_oracle_check(args: OracleArgs) -> anyhow::Result<ExitCode> {
    let mut failures = 0usize;
    for k in 0..args.instances {
        let seed = args.seed + k;
        match run_comparison::<f64>(seed, args.inject_lambda_flip) {
            Ok(report) => {
                let ok = report.max_diff <= 1e-8;
                println!(
                    "seed {seed}: max diff {:.3e} at node {} ({}), {} active, {} iterations [{}]",
                    report.max_diff,
                    report.worst_node,
                    report.worst_component,
                    report.active_nodes,
                    report.newton_iterations,
                    if ok { "ok" } else { "MISMATCH" }
                );
                if !ok {
                    failures += 1;
                }
            }
            Err(e) => {
                println!("seed {seed}: solver failed: {e}");
                failures += 1;
            }
        }
    }
    if failures > 0 {
        eprintln!("{failures} of {} instances disagreed", args.instances);
        return Ok(ExitCode::FAILURE);
    }
    println!("all {} instances agree within 1e-8", args.instances);
    Ok(ExitCode::SUCCESS)
}

/// Flat key-value config: `key = value` lines, `#` comments. Unknown
/// keys are errors.
fn parse_config_file(path: &Path) -> anyhow::Result<Experiment<f64>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut experiment: Option<String> = None;
    let mut pairs: Vec<(usize, String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| config_err(lineno + 1, "expected `key = value`"))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key == "experiment" {
            experiment = Some(value);
        } else {
            pairs.push((lineno + 1, key, value));
        }
    }
    let name = experiment.ok_or_else(|| config_err(0, "missing `experiment = <name>` line"))?;
    let mut exp = builtin_experiment::<f64>(&name)?;
    let mut samples_set = false;
    for (lineno, key, value) in pairs {
        apply_key(&mut exp.config, &key, &value, &mut samples_set)
            .map_err(|msg| config_err(lineno, &msg))?;
    }
    Ok(exp)
}

fn config_err(line: usize, msg: &str) -> anyhow::Error {
    anyhow!(FemError::InvalidConfig(format!(
        "config line {line}: {msg}"
    )))
}

fn apply_key(
    cfg: &mut RunConfig<f64>,
    key: &str,
    value: &str,
    samples_set: &mut bool,
) -> Result<(), String> {
    let parse_f64 = |v: &str| {
        v.parse::<f64>()
            .map_err(|_| format!("invalid number `{v}`"))
    };
    let parse_bool = |v: &str| match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("invalid boolean `{v}`")),
    };
    match key {
        "dt" => cfg.dt = parse_f64(value)?,
        "t_final" => cfg.t_final = parse_f64(value)?,
        "samples" => {
            cfg.sample_times = value
                .split(',')
                .map(|s| parse_f64(s.trim()))
                .collect::<Result<_, _>>()?;
            *samples_set = true;
        }
        "tol" => cfg.tol = parse_f64(value)?,
        "max_iter" => {
            cfg.max_iter = value
                .parse()
                .map_err(|_| format!("invalid integer `{value}`"))?
        }
        "refine" => {
            cfg.refine = value
                .parse()
                .map_err(|_| format!("invalid integer `{value}`"))?
        }
        "fully_implicit" => cfg.fully_implicit = parse_bool(value)?,
        "lumped_mass" => cfg.lumped_mass = parse_bool(value)?,
        "project_initial_data" => cfg.project_initial_data = parse_bool(value)?,
        "capture_fields" => cfg.capture_fields = parse_bool(value)?,
        "mesh" => {
            let toks: Vec<&str> = value.split_whitespace().collect();
            cfg.mesh = match toks.as_slice() {
                ["interval", a, b, n] => MeshSource::Interval {
                    a: parse_f64(a)?,
                    b: parse_f64(b)?,
                    cells: n.parse().map_err(|_| format!("invalid cell count `{n}`"))?,
                },
                ["rectangle", x0, x1, y0, y1, m] => MeshSource::Rectangle {
                    x: (parse_f64(x0)?, parse_f64(x1)?),
                    y: (parse_f64(y0)?, parse_f64(y1)?),
                    cells_per_side: m.parse().map_err(|_| format!("invalid cell count `{m}`"))?,
                },
                ["file", path] => MeshSource::File(PathBuf::from(path)),
                _ => {
                    return Err(format!(
                        "invalid mesh spec `{value}` (interval A B N | rectangle X0 X1 Y0 Y1 M | file PATH)"
                    ))
                }
            };
        }
        other => return Err(format!("unknown key `{other}`")),
    }
    Ok(())
}
