//! Conforming simplicial meshes: intervals (d=1), triangulated rectangles
//! (d=2), and imported simplicial domains up to d=3.
//!
//! Meshes are immutable after construction and safe to share across
//! threads. `h` is the maximum edge length over all cells.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{cast, Real};

/// A conforming simplicial mesh.
///
/// Vertices are stored flat with stride `dim`; cells flat with stride
/// `dim + 1`. Cell volumes are cached and strictly positive.
#[derive(Debug, Clone)]
pub struct SimplicialMesh<T> {
    dim: usize,
    coords: Vec<T>,
    cells: Vec<usize>,
    boundary: Vec<bool>,
    cell_volumes: Vec<T>,
    vertex_tags: Vec<i32>,
    cell_tags: Vec<i32>,
}

/// How each fine vertex of a refinement arises from the coarse mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexOrigin {
    /// Same vertex as coarse vertex `i` (indices are preserved).
    Coarse(usize),
    /// Midpoint of the coarse edge (a, b).
    EdgeMidpoint(usize, usize),
}

/// One uniform refinement step: fine-vertex provenance plus the coarse
/// parent of every fine cell.
#[derive(Debug, Clone)]
pub struct RefinementMap {
    pub vertex_origin: Vec<VertexOrigin>,
    pub parent_cell: Vec<usize>,
}

/// A nested family of meshes; level k+1 uniformly refines level k.
#[derive(Debug)]
pub struct MeshHierarchy<T> {
    levels: Vec<SimplicialMesh<T>>,
    refinements: Vec<RefinementMap>,
}

impl<T: Real> SimplicialMesh<T> {
    /// Validate raw arrays and build a mesh. Checks index ranges, strictly
    /// positive volumes, and facet conformity (a facet is shared by at
    /// most two cells).
    pub fn from_raw(
        dim: usize,
        coords: Vec<T>,
        cells: Vec<usize>,
        vertex_tags: Vec<i32>,
        cell_tags: Vec<i32>,
    ) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidMesh(format!("unsupported dim {dim}")));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::InvalidMesh(format!(
                "coordinate array length {} not divisible by dim {dim}",
                coords.len()
            )));
        }
        let n_vertices = coords.len() / dim;
        let verts_per_cell = dim + 1;
        if !cells.len().is_multiple_of(verts_per_cell) {
            return Err(Error::InvalidMesh(format!(
                "cell array length {} not divisible by {verts_per_cell}",
                cells.len()
            )));
        }
        let n_cells = cells.len() / verts_per_cell;
        if vertex_tags.len() != n_vertices || cell_tags.len() != n_cells {
            return Err(Error::InvalidMesh("tag array length mismatch".into()));
        }

        for c in 0..n_cells {
            let cv = &cells[c * verts_per_cell..(c + 1) * verts_per_cell];
            for &v in cv {
                if v >= n_vertices {
                    return Err(Error::CellIndexOutOfRange {
                        cell: c,
                        index: v,
                        n_vertices,
                    });
                }
            }
            for i in 0..verts_per_cell {
                for j in i + 1..verts_per_cell {
                    if cv[i] == cv[j] {
                        return Err(Error::InvalidMesh(format!(
                            "cell {c} repeats vertex {}",
                            cv[i]
                        )));
                    }
                }
            }
        }

        let mut mesh = Self {
            dim,
            coords,
            cells,
            boundary: Vec::new(),
            cell_volumes: Vec::new(),
            vertex_tags,
            cell_tags,
        };

        mesh.cell_volumes = (0..n_cells)
            .map(|c| {
                let v = mesh.signed_volume(c);
                if v <= T::zero() {
                    Err(Error::DegenerateCell {
                        cell: c,
                        volume: v.to_f64().unwrap_or(f64::NAN),
                    })
                } else {
                    Ok(v)
                }
            })
            .collect::<Result<_>>()?;

        mesh.boundary = mesh.classify_boundary()?;
        Ok(mesh)
    }

    fn signed_volume(&self, cell: usize) -> T {
        let cv = self.cell(cell);
        let d = self.dim;
        match d {
            1 => self.coords[cv[1]] - self.coords[cv[0]],
            2 => {
                let (a, b, c) = (self.vertex(cv[0]), self.vertex(cv[1]), self.vertex(cv[2]));
                let det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
                det / cast(2.0)
            }
            3 => {
                let a = self.vertex(cv[0]);
                let e: Vec<[T; 3]> = (1..4)
                    .map(|k| {
                        let p = self.vertex(cv[k]);
                        [p[0] - a[0], p[1] - a[1], p[2] - a[2]]
                    })
                    .collect();
                let det = e[0][0] * (e[1][1] * e[2][2] - e[1][2] * e[2][1])
                    - e[0][1] * (e[1][0] * e[2][2] - e[1][2] * e[2][0])
                    + e[0][2] * (e[1][0] * e[2][1] - e[1][1] * e[2][0]);
                det / cast(6.0)
            }
            _ => unreachable!(),
        }
    }

    /// Facet-count conformity check; returns the boundary flags.
    fn classify_boundary(&self) -> Result<Vec<bool>> {
        let mut facets: HashMap<Vec<usize>, usize> = HashMap::new();
        for c in 0..self.n_cells() {
            let cv = self.cell(c);
            for skip in 0..cv.len() {
                let mut f: Vec<usize> = cv
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != skip)
                    .map(|(_, &v)| v)
                    .collect();
                f.sort_unstable();
                *facets.entry(f).or_insert(0) += 1;
            }
        }
        let mut boundary = vec![false; self.n_vertices()];
        for (f, count) in &facets {
            if *count > 2 {
                return Err(Error::NonConforming {
                    facet: f.clone(),
                    count: *count,
                });
            }
            if *count == 1 {
                for &v in f {
                    boundary[v] = true;
                }
            }
        }
        Ok(boundary)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_vertices(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len() / (self.dim + 1)
    }

    pub fn vertex(&self, i: usize) -> &[T] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        &self.cells[c * (self.dim + 1)..(c + 1) * (self.dim + 1)]
    }

    pub fn cell_volume(&self, c: usize) -> T {
        self.cell_volumes[c]
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn boundary_vertices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_vertices()).filter(|&v| self.boundary[v])
    }

    pub fn n_boundary_vertices(&self) -> usize {
        self.boundary.iter().filter(|&&b| b).count()
    }

    pub fn vertex_tag(&self, v: usize) -> i32 {
        self.vertex_tags[v]
    }

    pub fn cell_tag(&self, c: usize) -> i32 {
        self.cell_tags[c]
    }

    /// Total measure of the domain.
    pub fn measure(&self) -> T {
        self.cell_volumes.iter().copied().sum()
    }

    /// Maximum edge length over all cells.
    pub fn h_max(&self) -> T {
        let mut h = T::zero();
        for c in 0..self.n_cells() {
            let cv = self.cell(c);
            for i in 0..cv.len() {
                for j in i + 1..cv.len() {
                    let d = self.distance(cv[i], cv[j]);
                    if d > h {
                        h = d;
                    }
                }
            }
        }
        h
    }

    fn distance(&self, a: usize, b: usize) -> T {
        let pa = self.vertex(a);
        let pb = self.vertex(b);
        pa.iter()
            .zip(pb)
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<T>()
            .sqrt()
    }

    /// Euclidean diameter of the vertex set (bounding estimate for
    /// Poincare constants).
    pub fn diameter(&self) -> T {
        // Diameter of the bounding box: adequate for the advisory
        // time-step estimate and cheap to compute.
        let d = self.dim;
        let mut span = T::zero();
        let mut acc = T::zero();
        for k in 0..d {
            let mut lo = T::infinity();
            let mut hi = T::neg_infinity();
            for v in 0..self.n_vertices() {
                let x = self.vertex(v)[k];
                if x < lo {
                    lo = x;
                }
                if x > hi {
                    hi = x;
                }
            }
            acc = acc + (hi - lo) * (hi - lo);
        }
        span = span.max(acc.sqrt());
        span
    }

    /// Barycenter of a cell.
    pub fn cell_barycenter(&self, c: usize) -> Vec<T> {
        let cv = self.cell(c);
        let k = cast::<T>(cv.len() as f64);
        let mut b = vec![T::zero(); self.dim];
        for &v in cv {
            for (bi, &x) in b.iter_mut().zip(self.vertex(v)) {
                *bi = *bi + x;
            }
        }
        for bi in &mut b {
            *bi = *bi / k;
        }
        b
    }

    /// True if `point` lies in the closed cell `c` (barycentric test).
    pub fn cell_contains(&self, c: usize, point: &[T]) -> bool {
        let tol = cast::<T>(1e-10) * self.h_cell(c);
        let cv = self.cell(c);
        let vol = self.cell_volumes[c];
        // Replace each vertex by the query point; all sub-simplex signed
        // volumes must be nonnegative.
        let mut scratch: Vec<T> = Vec::new();
        for skip in 0..cv.len() {
            scratch.clear();
            for (k, &v) in cv.iter().enumerate() {
                if k == skip {
                    scratch.extend_from_slice(point);
                } else {
                    scratch.extend_from_slice(self.vertex(v));
                }
            }
            let sub = signed_volume_of(self.dim, &scratch);
            if sub < -tol * vol {
                return false;
            }
        }
        true
    }

    fn h_cell(&self, c: usize) -> T {
        let cv = self.cell(c);
        let mut h = T::zero();
        for i in 0..cv.len() {
            for j in i + 1..cv.len() {
                let d = self.distance(cv[i], cv[j]);
                if d > h {
                    h = d;
                }
            }
        }
        h
    }
}

fn signed_volume_of<T: Real>(dim: usize, pts: &[T]) -> T {
    match dim {
        1 => pts[1] - pts[0],
        2 => {
            let (ax, ay, bx, by, cx, cy) = (pts[0], pts[1], pts[2], pts[3], pts[4], pts[5]);
            ((bx - ax) * (cy - ay) - (by - ay) * (cx - ax)) / cast(2.0)
        }
        3 => {
            let a = &pts[0..3];
            let mut e = [[T::zero(); 3]; 3];
            for k in 0..3 {
                for j in 0..3 {
                    e[k][j] = pts[(k + 1) * 3 + j] - a[j];
                }
            }
            let det = e[0][0] * (e[1][1] * e[2][2] - e[1][2] * e[2][1])
                - e[0][1] * (e[1][0] * e[2][2] - e[1][2] * e[2][0])
                + e[0][2] * (e[1][0] * e[2][1] - e[1][1] * e[2][0]);
            det / cast(6.0)
        }
        _ => unreachable!(),
    }
}

/// Uniform partition of the interval (a, b) into `n_cells` segments.
pub fn generate_interval<T: Real>(a: T, b: T, n_cells: usize) -> Result<SimplicialMesh<T>> {
    if n_cells < 1 {
        return Err(Error::InvalidMesh(
            "interval needs at least one cell".into(),
        ));
    }
    if a >= b {
        return Err(Error::InvalidMesh(format!("empty interval [{a}, {b}]")));
    }
    let n = cast::<T>(n_cells as f64);
    let coords: Vec<T> = (0..=n_cells)
        .map(|i| a + (b - a) * cast::<T>(i as f64) / n)
        .collect();
    let cells: Vec<usize> = (0..n_cells).flat_map(|i| [i, i + 1]).collect();
    let nv = coords.len();
    SimplicialMesh::from_raw(1, coords, cells, vec![0; nv], vec![0; n_cells])
}

/// Structured triangulation of a rectangle: m x m squares, each split
/// into two triangles along the (low, low) -> (high, high) diagonal.
pub fn generate_rectangle<T: Real>(
    x_range: (T, T),
    y_range: (T, T),
    m: usize,
) -> Result<SimplicialMesh<T>> {
    if m < 1 {
        return Err(Error::InvalidMesh(
            "rectangle needs at least one cell per side".into(),
        ));
    }
    if x_range.0 >= x_range.1 || y_range.0 >= y_range.1 {
        return Err(Error::InvalidMesh("empty rectangle range".into()));
    }
    let mf = cast::<T>(m as f64);
    let mut coords = Vec::with_capacity((m + 1) * (m + 1) * 2);
    // Row-major vertex layout: x varies fastest.
    for j in 0..=m {
        for i in 0..=m {
            let x = x_range.0 + (x_range.1 - x_range.0) * cast::<T>(i as f64) / mf;
            let y = y_range.0 + (y_range.1 - y_range.0) * cast::<T>(j as f64) / mf;
            coords.push(x);
            coords.push(y);
        }
    }
    let mut cells = Vec::with_capacity(m * m * 6);
    for j in 0..m {
        for i in 0..m {
            let v00 = j * (m + 1) + i;
            let v10 = v00 + 1;
            let v01 = v00 + (m + 1);
            let v11 = v01 + 1;
            cells.extend_from_slice(&[v00, v10, v11]);
            cells.extend_from_slice(&[v00, v11, v01]);
        }
    }
    let nv = (m + 1) * (m + 1);
    let nc = 2 * m * m;
    SimplicialMesh::from_raw(2, coords, cells, vec![0; nv], vec![0; nc])
}

/// Uniformly refine a mesh: bisection in d=1, red refinement in d=2.
/// d=3 is unsupported; import pre-refined meshes instead.
pub fn refine_uniform<T: Real>(
    mesh: &SimplicialMesh<T>,
) -> Result<(SimplicialMesh<T>, RefinementMap)> {
    match mesh.dim() {
        1 => refine_interval(mesh),
        2 => refine_red(mesh),
        d => Err(Error::RefineUnsupported { dim: d }),
    }
}

fn midpoint_tag(a: i32, b: i32) -> i32 {
    if a == b {
        a
    } else {
        0
    }
}

fn refine_interval<T: Real>(
    mesh: &SimplicialMesh<T>,
) -> Result<(SimplicialMesh<T>, RefinementMap)> {
    let nv = mesh.n_vertices();
    let mut coords: Vec<T> = mesh.coords.clone();
    let mut vtags = mesh.vertex_tags.clone();
    let mut origin: Vec<VertexOrigin> = (0..nv).map(VertexOrigin::Coarse).collect();
    let mut cells = Vec::with_capacity(mesh.n_cells() * 4);
    let mut parent = Vec::with_capacity(mesh.n_cells() * 2);
    let mut ctags = Vec::with_capacity(mesh.n_cells() * 2);
    let half = cast::<T>(0.5);
    for c in 0..mesh.n_cells() {
        let cv = mesh.cell(c);
        let (a, b) = (cv[0], cv[1]);
        let mid = coords.len();
        coords.push((mesh.coords[a] + mesh.coords[b]) * half);
        vtags.push(midpoint_tag(mesh.vertex_tags[a], mesh.vertex_tags[b]));
        origin.push(VertexOrigin::EdgeMidpoint(a, b));
        cells.extend_from_slice(&[a, mid]);
        cells.extend_from_slice(&[mid, b]);
        parent.extend_from_slice(&[c, c]);
        ctags.extend_from_slice(&[mesh.cell_tags[c], mesh.cell_tags[c]]);
    }
    let fine = SimplicialMesh::from_raw(1, coords, cells, vtags, ctags)?;
    Ok((
        fine,
        RefinementMap {
            vertex_origin: origin,
            parent_cell: parent,
        },
    ))
}

fn refine_red<T: Real>(mesh: &SimplicialMesh<T>) -> Result<(SimplicialMesh<T>, RefinementMap)> {
    let nv = mesh.n_vertices();
    let mut coords: Vec<T> = mesh.coords.clone();
    let mut vtags = mesh.vertex_tags.clone();
    let mut origin: Vec<VertexOrigin> = (0..nv).map(VertexOrigin::Coarse).collect();
    let mut edge_mid: HashMap<(usize, usize), usize> = HashMap::new();
    let half = cast::<T>(0.5);

    let mut midpoint = |a: usize,
                        b: usize,
                        coords: &mut Vec<T>,
                        vtags: &mut Vec<i32>,
                        origin: &mut Vec<VertexOrigin>|
     -> usize {
        let key = (a.min(b), a.max(b));
        if let Some(&m) = edge_mid.get(&key) {
            return m;
        }
        let m = coords.len() / 2;
        let pa: [T; 2] = [mesh.coords[a * 2], mesh.coords[a * 2 + 1]];
        let pb: [T; 2] = [mesh.coords[b * 2], mesh.coords[b * 2 + 1]];
        coords.push((pa[0] + pb[0]) * half);
        coords.push((pa[1] + pb[1]) * half);
        vtags.push(midpoint_tag(mesh.vertex_tags[a], mesh.vertex_tags[b]));
        origin.push(VertexOrigin::EdgeMidpoint(key.0, key.1));
        edge_mid.insert(key, m);
        m
    };

    let mut cells = Vec::with_capacity(mesh.n_cells() * 12);
    let mut parent = Vec::with_capacity(mesh.n_cells() * 4);
    let mut ctags = Vec::with_capacity(mesh.n_cells() * 4);
    for c in 0..mesh.n_cells() {
        let cv = mesh.cell(c);
        let (v0, v1, v2) = (cv[0], cv[1], cv[2]);
        let m01 = midpoint(v0, v1, &mut coords, &mut vtags, &mut origin);
        let m12 = midpoint(v1, v2, &mut coords, &mut vtags, &mut origin);
        let m02 = midpoint(v0, v2, &mut coords, &mut vtags, &mut origin);
        for tri in [
            [v0, m01, m02],
            [m01, v1, m12],
            [m02, m12, v2],
            [m01, m12, m02],
        ] {
            cells.extend_from_slice(&tri);
            parent.push(c);
            ctags.push(mesh.cell_tags[c]);
        }
    }
    let fine = SimplicialMesh::from_raw(2, coords, cells, vtags, ctags)?;
    Ok((
        fine,
        RefinementMap {
            vertex_origin: origin,
            parent_cell: parent,
        },
    ))
}

impl<T: Real> MeshHierarchy<T> {
    pub fn new(root: SimplicialMesh<T>) -> Self {
        Self {
            levels: vec![root],
            refinements: Vec::new(),
        }
    }

    /// Append one uniform refinement of the finest level.
    pub fn refine(&mut self) -> Result<()> {
        let (fine, map) = refine_uniform(self.finest())?;
        self.levels.push(fine);
        self.refinements.push(map);
        Ok(())
    }

    /// Build a hierarchy with `levels` total levels.
    pub fn with_levels(root: SimplicialMesh<T>, levels: usize) -> Result<Self> {
        assert!(levels >= 1);
        let mut h = Self::new(root);
        for _ in 1..levels {
            h.refine()?;
        }
        Ok(h)
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, k: usize) -> &SimplicialMesh<T> {
        &self.levels[k]
    }

    pub fn finest(&self) -> &SimplicialMesh<T> {
        self.levels.last().unwrap()
    }

    /// Refinement map taking level k to level k+1.
    pub fn refinement(&self, k: usize) -> &RefinementMap {
        &self.refinements[k]
    }
}

/// Parse the plain-text mesh format:
/// header `dim n_vertices n_cells`, then one vertex per line
/// (`dim` coordinates, optional integer tag), then one cell per line
/// (`dim+1` zero-based vertex indices, optional integer tag).
pub fn parse_mesh<T: Real>(text: &str) -> Result<SimplicialMesh<T>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = lines.next().ok_or(Error::MeshParse {
        line: 0,
        msg: "empty file".into(),
    })?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(Error::MeshParse {
            line: hline,
            msg: format!("expected `dim n_vertices n_cells`, got `{header}`"),
        });
    }
    let parse_usize = |s: &str, line: usize| -> Result<usize> {
        s.parse().map_err(|_| Error::MeshParse {
            line,
            msg: format!("invalid integer `{s}`"),
        })
    };
    let dim = parse_usize(parts[0], hline)?;
    if !(1..=3).contains(&dim) {
        return Err(Error::MeshParse {
            line: hline,
            msg: format!("unsupported dim {dim}"),
        });
    }
    let n_vertices = parse_usize(parts[1], hline)?;
    let n_cells = parse_usize(parts[2], hline)?;

    let mut coords = Vec::with_capacity(n_vertices * dim);
    let mut vertex_tags = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let (ln, l) = lines.next().ok_or(Error::MeshParse {
            line: hline,
            msg: "fewer vertex lines than declared".into(),
        })?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != dim && toks.len() != dim + 1 {
            return Err(Error::MeshParse {
                line: ln,
                msg: format!(
                    "expected {dim} coordinates (+ optional tag), got {}",
                    toks.len()
                ),
            });
        }
        for t in &toks[..dim] {
            let v: f64 = t.parse().map_err(|_| Error::MeshParse {
                line: ln,
                msg: format!("invalid coordinate `{t}`"),
            })?;
            coords.push(cast::<T>(v));
        }
        let tag = if toks.len() == dim + 1 {
            toks[dim].parse().map_err(|_| Error::MeshParse {
                line: ln,
                msg: format!("invalid vertex tag `{}`", toks[dim]),
            })?
        } else {
            0
        };
        vertex_tags.push(tag);
    }

    let vpc = dim + 1;
    let mut cells = Vec::with_capacity(n_cells * vpc);
    let mut cell_tags = Vec::with_capacity(n_cells);
    for _ in 0..n_cells {
        let (ln, l) = lines.next().ok_or(Error::MeshParse {
            line: hline,
            msg: "fewer cell lines than declared".into(),
        })?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != vpc && toks.len() != vpc + 1 {
            return Err(Error::MeshParse {
                line: ln,
                msg: format!(
                    "expected {vpc} vertex indices (+ optional tag), got {}",
                    toks.len()
                ),
            });
        }
        for t in &toks[..vpc] {
            cells.push(parse_usize(t, ln)?);
        }
        let tag = if toks.len() == vpc + 1 {
            toks[vpc].parse().map_err(|_| Error::MeshParse {
                line: ln,
                msg: format!("invalid cell tag `{}`", toks[vpc]),
            })?
        } else {
            0
        };
        cell_tags.push(tag);
    }

    if let Some((ln, _)) = lines.next() {
        return Err(Error::MeshParse {
            line: ln,
            msg: "trailing content after declared cells".into(),
        });
    }

    SimplicialMesh::from_raw(dim, coords, cells, vertex_tags, cell_tags)
}

/// Load a mesh from a file in the plain-text format.
pub fn import_mesh<T: Real>(path: &Path) -> Result<SimplicialMesh<T>> {
    let text = std::fs::read_to_string(path)?;
    parse_mesh(&text)
}
