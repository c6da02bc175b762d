//! P1 Galerkin assembly on simplicial meshes: mass, weighted mass,
//! variable-coefficient stiffness, load vectors, and nodal interpolation.
//!
//! Quadrature is the degree-2 symmetric rule in each dimension (2-point
//! Gauss on segments, edge midpoints on triangles, the symmetric 4-point
//! rule on tetrahedra), so products of linears integrate exactly and
//! coefficient fields are sampled at quadrature points from their P1
//! interpolants.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::SimplicialMesh;
use crate::scalar::{cast, Real};
use crate::sparse::{SparseMatrix, SparsityPattern};

/// One nodal value per mesh vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField<T> {
    values: Vec<T>,
}

impl<T: Real> NodalField<T> {
    /// Wrap nodal values, checking length and finiteness.
    pub fn new(mesh: &SimplicialMesh<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != mesh.n_vertices() {
            return Err(Error::MeshMismatch {
                field_len: values.len(),
                n_vertices: mesh.n_vertices(),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: 0,
                what: format!("nodal value at vertex {k}"),
            });
        }
        Ok(Self { values })
    }

    pub fn constant(mesh: &SimplicialMesh<T>, value: T) -> Self {
        Self {
            values: vec![value; mesh.n_vertices()],
        }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }
}

impl<T> std::ops::Index<usize> for NodalField<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.values[i]
    }
}

/// Barycentric quadrature rule of degree 2 on a d-simplex: (d+1) points.
fn quadrature(dim: usize) -> Vec<(Vec<f64>, f64)> {
    match dim {
        1 => {
            let g = 0.5 / 3f64.sqrt();
            vec![(vec![0.5 + g, 0.5 - g], 0.5), (vec![0.5 - g, 0.5 + g], 0.5)]
        }
        2 => vec![
            (vec![0.5, 0.5, 0.0], 1.0 / 3.0),
            (vec![0.5, 0.0, 0.5], 1.0 / 3.0),
            (vec![0.0, 0.5, 0.5], 1.0 / 3.0),
        ],
        3 => {
            let a = (5.0 + 3.0 * 5f64.sqrt()) / 20.0;
            let b = (5.0 - 5f64.sqrt()) / 20.0;
            (0..4)
                .map(|k| {
                    let mut bary = vec![b; 4];
                    bary[k] = a;
                    (bary, 0.25)
                })
                .collect()
        }
        _ => unreachable!(),
    }
}

/// Constant gradients of the P1 basis on one cell, one row per local
/// basis function.
fn p1_gradients<T: Real>(mesh: &SimplicialMesh<T>, cell: usize) -> Vec<Vec<T>> {
    let d = mesh.dim();
    let cv = mesh.cell(cell);
    let n = d + 1;
    // Solve V c_i = e_i with rows [1, x_j]; gradient of basis i is the
    // coefficient part of c_i.
    let mut a = vec![vec![T::zero(); n]; n];
    for (j, &v) in cv.iter().enumerate() {
        a[j][0] = T::one();
        for (k, &x) in mesh.vertex(v).iter().enumerate() {
            a[j][k + 1] = x;
        }
    }
    let mut rhs = vec![vec![T::zero(); n]; n];
    for (i, r) in rhs.iter_mut().enumerate() {
        r[i] = T::one();
    }
    // Gaussian elimination with partial pivoting on the tiny system.
    for k in 0..n {
        let piv = (k..n)
            .max_by(|&p, &q| {
                a[p][k]
                    .abs()
                    .partial_cmp(&a[q][k].abs())
                    .expect("finite coordinates")
            })
            .unwrap();
        a.swap(k, piv);
        rhs.swap(k, piv);
        let akk = a[k][k];
        for i in 0..n {
            if i == k {
                continue;
            }
            let f = a[i][k] / akk;
            for j in k..n {
                let v = a[k][j];
                a[i][j] = a[i][j] - f * v;
            }
            for j in 0..n {
                let v = rhs[k][j];
                rhs[i][j] = rhs[i][j] - f * v;
            }
        }
    }
    for k in 0..n {
        let akk = a[k][k];
        for j in 0..n {
            rhs[k][j] = rhs[k][j] / akk;
        }
    }
    // rhs is now V⁻¹; column i holds the coefficients of basis i, whose
    // gradient occupies rows 1..=d.
    (0..n)
        .map(|i| (1..n).map(|r| rhs[r][i]).collect())
        .collect()
}

/// Shared sparsity of all P1 operators on a mesh (vertex adjacency).
pub fn fe_pattern<T: Real>(mesh: &SimplicialMesh<T>) -> Arc<SparsityPattern> {
    let mut pairs = Vec::with_capacity(mesh.n_cells() * (mesh.dim() + 1) * (mesh.dim() + 1));
    for c in 0..mesh.n_cells() {
        let cv = mesh.cell(c);
        for &i in cv {
            for &j in cv {
                pairs.push((i, j));
            }
        }
    }
    Arc::new(SparsityPattern::from_pairs(
        mesh.n_vertices(),
        mesh.n_vertices(),
        &pairs,
    ))
}

/// Consistent P1 mass matrix.
pub fn assemble_mass<T: Real>(mesh: &SimplicialMesh<T>) -> SparseMatrix<T> {
    assemble_mass_with(mesh, fe_pattern(mesh))
}

pub fn assemble_mass_with<T: Real>(
    mesh: &SimplicialMesh<T>,
    pattern: Arc<SparsityPattern>,
) -> SparseMatrix<T> {
    let mut m = SparseMatrix::zeros(pattern);
    let rule = quadrature(mesh.dim());
    for c in 0..mesh.n_cells() {
        let cv = mesh.cell(c);
        let vol = mesh.cell_volume(c);
        for (bary, w) in &rule {
            let wq = cast::<T>(*w) * vol;
            for (li, &gi) in cv.iter().enumerate() {
                let phi_i = cast::<T>(bary[li]);
                for (lj, &gj) in cv.iter().enumerate() {
                    let phi_j = cast::<T>(bary[lj]);
                    m.add_at(gi, gj, wq * phi_i * phi_j);
                }
            }
        }
    }
    debug_assert!(m.asymmetry() <= cast::<T>(1e-12), "mass matrix asymmetric");
    m
}

/// Weighted mass matrix: entries of `map(w_h(x))`-weighted products of
/// basis functions, with `w_h` the P1 interpolant of `weight` sampled at
/// quadrature points.
pub fn assemble_weighted_mass<T: Real>(
    mesh: &SimplicialMesh<T>,
    weight: &NodalField<T>,
    map: &mut dyn FnMut(T) -> T,
) -> Result<SparseMatrix<T>> {
    assemble_weighted_mass_with(mesh, fe_pattern(mesh), weight, map)
}

pub fn assemble_weighted_mass_with<T: Real>(
    mesh: &SimplicialMesh<T>,
    pattern: Arc<SparsityPattern>,
    weight: &NodalField<T>,
    map: &mut dyn FnMut(T) -> T,
) -> Result<SparseMatrix<T>> {
    if weight.len() != mesh.n_vertices() {
        return Err(Error::MeshMismatch {
            field_len: weight.len(),
            n_vertices: mesh.n_vertices(),
        });
    }
    let mut m = SparseMatrix::zeros(pattern);
    let rule = quadrature(mesh.dim());
    for c in 0..mesh.n_cells() {
        let cv = mesh.cell(c);
        let vol = mesh.cell_volume(c);
        for (bary, w) in &rule {
            let wq_base = cast::<T>(*w) * vol;
            let mut w_at_q = T::zero();
            for (li, &gi) in cv.iter().enumerate() {
                w_at_q = w_at_q + cast::<T>(bary[li]) * weight[gi];
            }
            let wq = wq_base * map(w_at_q);
            for (li, &gi) in cv.iter().enumerate() {
                let phi_i = cast::<T>(bary[li]);
                for (lj, &gj) in cv.iter().enumerate() {
                    let phi_j = cast::<T>(bary[lj]);
                    m.add_at(gi, gj, wq * phi_i * phi_j);
                }
            }
        }
    }
    Ok(m)
}

/// Mass matrix weighted by a pointwise function of two nodal fields,
/// sampled at quadrature points from their P1 interpolants.
pub fn assemble_weighted_mass2<T: Real>(
    mesh: &SimplicialMesh<T>,
    pattern: Arc<SparsityPattern>,
    w1: &NodalField<T>,
    w2: &NodalField<T>,
    map: &mut dyn FnMut(T, T) -> T,
) -> Result<SparseMatrix<T>> {
    if w1.len() != mesh.n_vertices() || w2.len() != mesh.n_vertices() {
        return Err(Error::MeshMismatch {
            field_len: w1.len().min(w2.len()),
            n_vertices: mesh.n_vertices(),
        });
    }
    let mut m = SparseMatrix::zeros(pattern);
    let rule = quadrature(mesh.dim());
    for c in 0..mesh.n_cells() {
        let cv = mesh.cell(c);
        let vol = mesh.cell_volume(c);
        for (bary, w) in &rule {
            let mut a = T::zero();
            let mut b = T::zero();
            for (li, &gi) in cv.iter().enumerate() {
                let lam = cast::<T>(bary[li]);
                a = a + lam * w1[gi];
                b = b + lam * w2[gi];
            }
            let wq = cast::<T>(*w) * vol * map(a, b);
            for (li, &gi) in cv.iter().enumerate() {
                let phi_i = cast::<T>(bary[li]);
                for (lj, &gj) in cv.iter().enumerate() {
                    let phi_j = cast::<T>(bary[lj]);
                    m.add_at(gi, gj, wq * phi_i * phi_j);
                }
            }
        }
    }
    Ok(m)
}

/// Variable-coefficient stiffness matrix: gradients are cellwise
/// constant, the coefficient `map(c_h(x))` is averaged by quadrature.
/// A negative evaluated coefficient is an error naming the cell.
pub fn assemble_stiffness<T: Real>(
    mesh: &SimplicialMesh<T>,
    coefficient: &NodalField<T>,
    map: &mut dyn FnMut(T) -> T,
) -> Result<SparseMatrix<T>> {
    assemble_stiffness_with(mesh, fe_pattern(mesh), coefficient, map)
}

pub fn assemble_stiffness_with<T: Real>(
    mesh: &SimplicialMesh<T>,
    pattern: Arc<SparsityPattern>,
    coefficient: &NodalField<T>,
    map: &mut dyn FnMut(T) -> T,
) -> Result<SparseMatrix<T>> {
    if coefficient.len() != mesh.n_vertices() {
        return Err(Error::MeshMismatch {
            field_len: coefficient.len(),
            n_vertices: mesh.n_vertices(),
        });
    }
    let mut m = SparseMatrix::zeros(pattern);
    let rule = quadrature(mesh.dim());
    let d = mesh.dim();
    for c in 0..mesh.n_cells() {
        let cv = mesh.cell(c);
        let vol = mesh.cell_volume(c);
        let grads = p1_gradients(mesh, c);
        // Quadrature average of the evaluated coefficient over the cell.
        let mut coef_avg = T::zero();
        for (bary, w) in &rule {
            let mut c_at_q = T::zero();
            for (li, &gi) in cv.iter().enumerate() {
                c_at_q = c_at_q + cast::<T>(bary[li]) * coefficient[gi];
            }
            let mapped = map(c_at_q);
            if mapped < T::zero() {
                return Err(Error::NegativeDiffusivity {
                    cell: c,
                    value: mapped.to_f64().unwrap_or(f64::NAN),
                });
            }
            coef_avg = coef_avg + cast::<T>(*w) * mapped;
        }
        for (li, &gi) in cv.iter().enumerate() {
            for (lj, &gj) in cv.iter().enumerate() {
                let mut dot = T::zero();
                for k in 0..d {
                    dot = dot + grads[li][k] * grads[lj][k];
                }
                m.add_at(gi, gj, coef_avg * vol * dot);
            }
        }
    }
    debug_assert!(
        m.asymmetry() <= cast::<T>(1e-12) * (T::one() + m.max_abs()),
        "stiffness matrix asymmetric"
    );
    Ok(m)
}

/// Load vector of a space-time source at time `t` by degree-2 quadrature.
pub fn assemble_load<T: Real>(
    mesh: &SimplicialMesh<T>,
    source: &dyn Fn(&[T], T) -> T,
    t: T,
) -> Vec<T> {
    let mut f = vec![T::zero(); mesh.n_vertices()];
    let rule = quadrature(mesh.dim());
    let d = mesh.dim();
    let mut point = vec![T::zero(); d];
    for c in 0..mesh.n_cells() {
        let cv = mesh.cell(c);
        let vol = mesh.cell_volume(c);
        for (bary, w) in &rule {
            for p in point.iter_mut() {
                *p = T::zero();
            }
            for (li, &gi) in cv.iter().enumerate() {
                let lam = cast::<T>(bary[li]);
                for (p, &x) in point.iter_mut().zip(mesh.vertex(gi)) {
                    *p = *p + lam * x;
                }
            }
            let fval = source(&point, t) * cast::<T>(*w) * vol;
            for (li, &gi) in cv.iter().enumerate() {
                f[gi] = f[gi] + fval * cast::<T>(bary[li]);
            }
        }
    }
    f
}

/// Vertex values of a spatial function.
pub fn nodal_interpolate<T: Real>(
    mesh: &SimplicialMesh<T>,
    function: &dyn Fn(&[T]) -> T,
) -> NodalField<T> {
    let values = (0..mesh.n_vertices())
        .map(|v| function(mesh.vertex(v)))
        .collect();
    NodalField { values }
}
