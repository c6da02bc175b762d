//! File outputs: legacy ASCII VTK snapshots and the per-step CSV series.

use std::fmt::Write as _;

use crate::mesh::SimplicialMesh;
use crate::scalar::Real;
use crate::solver::SystemState;
use crate::timeloop::Trajectory;

/// VTK cell type codes for simplices by dimension.
fn vtk_cell_type(dim: usize) -> u8 {
    match dim {
        1 => 3,  // VTK_LINE
        2 => 5,  // VTK_TRIANGLE
        3 => 10, // VTK_TETRA
        _ => unreachable!(),
    }
}

/// Render one state as a legacy ASCII `DATASET UNSTRUCTURED_GRID` file
/// with point scalars B, N, Lambda. Output is byte-deterministic.
pub fn vtk_snapshot<T: Real>(mesh: &SimplicialMesh<T>, state: &SystemState<T>) -> String {
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(out, "biofilm state at t = {}", state.t);
    out.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");

    let nv = mesh.n_vertices();
    let _ = writeln!(out, "POINTS {nv} double");
    for v in 0..nv {
        let p = mesh.vertex(v);
        let get = |k: usize| p.get(k).copied().unwrap_or_else(T::zero);
        let _ = writeln!(out, "{} {} {}", get(0), get(1), get(2));
    }

    let nc = mesh.n_cells();
    let vpc = mesh.dim() + 1;
    let _ = writeln!(out, "CELLS {nc} {}", nc * (vpc + 1));
    for c in 0..nc {
        let _ = write!(out, "{vpc}");
        for &v in mesh.cell(c) {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    let _ = writeln!(out, "CELL_TYPES {nc}");
    let code = vtk_cell_type(mesh.dim());
    for _ in 0..nc {
        let _ = writeln!(out, "{code}");
    }

    let _ = writeln!(out, "POINT_DATA {nv}");
    for (name, values) in [
        ("B", state.b.values()),
        ("N", state.n.values()),
        ("Lambda", state.lambda.values()),
    ] {
        let _ = writeln!(out, "SCALARS {name} double 1");
        out.push_str("LOOKUP_TABLE default\n");
        for v in values {
            let _ = writeln!(out, "{v}");
        }
    }
    out
}

/// Fixed-layout per-step diagnostics table.
pub fn series_csv<T: Real>(trajectory: &Trajectory<T>) -> String {
    let mut out = String::from(
        "step,t,total_B,total_N,active_nodes,newton_iters,residual,clamp_count,dn_sum\n",
    );
    for d in &trajectory.series {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            d.step,
            d.t,
            d.total_b,
            d.total_n,
            d.active_nodes,
            d.newton_iters,
            d.residual,
            d.clamp_count,
            d.dn_sum
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::NodalField;
    use crate::mesh::{generate_interval, generate_rectangle};

    fn dummy_state(mesh: &SimplicialMesh<f64>) -> SystemState<f64> {
        let q = mesh.n_vertices();
        SystemState {
            b: NodalField::new(mesh, (0..q).map(|i| i as f64 * 0.1).collect()).unwrap(),
            lambda: NodalField::new(mesh, vec![0.0; q]).unwrap(),
            n: NodalField::new(mesh, vec![1.0; q]).unwrap(),
            t: 0.25,
        }
    }

    #[test]
    fn vtk_structure_1d() {
        let mesh = generate_interval(0.0, 1.0, 2).unwrap();
        let text = vtk_snapshot(&mesh, &dummy_state(&mesh));
        assert!(text.starts_with("# vtk DataFile Version 3.0\n"));
        assert!(text.contains("DATASET UNSTRUCTURED_GRID"));
        assert!(text.contains("POINTS 3 double"));
        assert!(text.contains("CELLS 2 6"));
        assert!(text.contains("\n3\n3\n")); // VTK_LINE codes
        assert!(text.contains("SCALARS B double 1"));
        assert!(text.contains("SCALARS Lambda double 1"));
        // Padded z-coordinates.
        assert!(text.contains("0.5 0 0"));
    }

    #[test]
    fn vtk_triangle_codes() {
        let mesh = generate_rectangle((0.0, 1.0), (0.0, 1.0), 1).unwrap();
        let text = vtk_snapshot(&mesh, &dummy_state(&mesh));
        assert!(text.contains("CELL_TYPES 2\n5\n5\n"));
    }

    #[test]
    fn vtk_is_deterministic() {
        let mesh = generate_rectangle((0.0, 1.0), (0.0, 1.0), 3).unwrap();
        let a = vtk_snapshot(&mesh, &dummy_state(&mesh));
        let b = vtk_snapshot(&mesh, &dummy_state(&mesh));
        assert_eq!(a, b);
    }
}
