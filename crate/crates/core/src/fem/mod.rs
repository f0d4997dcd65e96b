//! P1 Lagrange finite elements on tetrahedral meshes.
//!
//! Operators are assembled over all mesh vertices and restricted to the
//! interior degrees of freedom (homogeneous Dirichlet data) when solving.

pub mod quadrature;
pub mod sparse;

use nalgebra::{DMatrix, Matrix3};

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};

pub use quadrature::QuadratureRule;
pub use sparse::{solve_spd, solve_spd_in_place, CgOptions, SolveReport, SparseOperator};

/// Numbering of interior (non-boundary) vertices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DofMap {
    to_dof: Vec<Option<usize>>,
    to_vertex: Vec<usize>,
}

impl DofMap {
    pub fn new(mesh: &Mesh) -> Self {
        let mut to_dof = vec![None; mesh.n_vertices()];
        let mut to_vertex = Vec::new();
        for (v, slot) in to_dof.iter_mut().enumerate() {
            if !mesh.is_boundary(v) {
                *slot = Some(to_vertex.len());
                to_vertex.push(v);
            }
        }
        DofMap { to_dof, to_vertex }
    }

    pub fn n_dofs(&self) -> usize {
        self.to_vertex.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.to_dof.len()
    }

    pub fn dof(&self, vertex: usize) -> Option<usize> {
        self.to_dof[vertex]
    }

    pub fn vertex(&self, dof: usize) -> usize {
        self.to_vertex[dof]
    }

    /// Interior values from a full nodal vector.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.to_vertex.iter().map(|&v| full[v]).collect()
    }

    /// Full nodal vector with zero boundary values.
    pub fn extend(&self, interior: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_vertices()];
        for (d, &v) in self.to_vertex.iter().enumerate() {
            full[v] = interior[d];
        }
        full
    }

    pub fn restrict_columns(&self, full: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_dofs(), full.ncols(), |d, j| full[(self.to_vertex[d], j)])
    }

    pub fn extend_columns(&self, interior: &DMatrix<f64>) -> DMatrix<f64> {
        let mut full = DMatrix::zeros(self.n_vertices(), interior.ncols());
        for (d, &v) in self.to_vertex.iter().enumerate() {
            for j in 0..interior.ncols() {
                full[(v, j)] = interior[(d, j)];
            }
        }
        full
    }
}

/// Scalar weight for `∫ w φ_i φ_j`.
pub enum Weight<'a> {
    Constant(f64),
    /// P1 nodal field over all vertices; integrated exactly.
    Nodal(&'a [f64]),
    /// Pointwise callable, integrated with the configured quadrature.
    Analytic(&'a dyn Fn(&Point) -> f64),
}

/// Quadrature selection for analytic weights: an elevated rule is used on
/// tetrahedra close to any of the `hotspots` (nuclei).
#[derive(Debug, Clone)]
pub struct QuadraturePlan {
    pub regular: QuadratureRule,
    pub elevated: QuadratureRule,
    pub hotspots: Vec<Point>,
    /// Elevated rule applies when a hotspot lies within this many element
    /// diameters of the tetrahedron.
    pub radius_in_elements: f64,
}

impl QuadraturePlan {
    pub fn uniform(rule: QuadratureRule) -> Self {
        QuadraturePlan {
            regular: rule.clone(),
            elevated: rule,
            hotspots: Vec::new(),
            radius_in_elements: 0.0,
        }
    }
}

impl Default for QuadraturePlan {
    fn default() -> Self {
        QuadraturePlan::uniform(QuadratureRule::degree2())
    }
}

/// Geometry and sparsity data shared by every operator on one mesh.
#[derive(Debug, Clone)]
pub struct FemSpace {
    mesh: Mesh,
    dofs: DofMap,
    volumes: Vec<f64>,
    grads: Vec<[[f64; 3]; 4]>,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    positions: Vec<[u32; 16]>,
    int_row_ptr: Vec<usize>,
    int_cols: Vec<u32>,
    int_source: Vec<u32>,
}

/// `∫_τ λ_a λ_b λ_c / |τ|` for P1 barycentric coordinates.
fn triple_mean(a: usize, b: usize, c: usize) -> f64 {
    if a == b && b == c {
        1.0 / 20.0
    } else if a == b || b == c || a == c {
        1.0 / 60.0
    } else {
        1.0 / 120.0
    }
}

impl FemSpace {
    pub fn new(mesh: &Mesh) -> Self {
        let nt = mesh.n_tets();
        let nv = mesh.n_vertices();
        let mut volumes = Vec::with_capacity(nt);
        let mut grads = Vec::with_capacity(nt);
        for t in 0..nt {
            let [p0, p1, p2, p3] = mesh.tet_points(t);
            let jac = Matrix3::from_columns(&[p1 - p0, p2 - p0, p3 - p0]);
            volumes.push(jac.determinant().abs() / 6.0);
            let inv = jac.try_inverse().expect("degenerate tetrahedron");
            let mut g = [[0.0; 3]; 4];
            for i in 0..3 {
                for d in 0..3 {
                    g[i + 1][d] = inv[(i, d)];
                    g[0][d] -= inv[(i, d)];
                }
            }
            grads.push(g);
        }

        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); nv];
        for tet in mesh.tets() {
            for &a in tet {
                for &b in tet {
                    rows[a].push(b as u32);
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(nv + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
            cols.extend_from_slice(r);
            row_ptr.push(cols.len());
        }
        drop(rows);
        let positions = mesh
            .tets()
            .iter()
            .map(|tet| {
                let mut pos = [0u32; 16];
                for (ia, &a) in tet.iter().enumerate() {
                    let row = &cols[row_ptr[a]..row_ptr[a + 1]];
                    for (ib, &b) in tet.iter().enumerate() {
                        let k = row.binary_search(&(b as u32)).expect("pattern entry");
                        pos[4 * ia + ib] = (row_ptr[a] + k) as u32;
                    }
                }
                pos
            })
            .collect();

        let dofs = DofMap::new(mesh);
        let mut int_row_ptr = vec![0];
        let mut int_cols = Vec::new();
        let mut int_source = Vec::new();
        for d in 0..dofs.n_dofs() {
            let v = dofs.vertex(d);
            for k in row_ptr[v]..row_ptr[v + 1] {
                if let Some(c) = dofs.dof(cols[k] as usize) {
                    int_cols.push(c as u32);
                    int_source.push(k as u32);
                }
            }
            int_row_ptr.push(int_cols.len());
        }

        FemSpace {
            mesh: mesh.clone(),
            dofs,
            volumes,
            grads,
            row_ptr,
            cols,
            positions,
            int_row_ptr,
            int_cols,
            int_source,
        }
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn dofs(&self) -> &DofMap {
        &self.dofs
    }

    pub fn n_dofs(&self) -> usize {
        self.dofs.n_dofs()
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    /// Gradients of the four barycentric coordinates on tetrahedron `t`.
    pub fn barycentric_gradients(&self, t: usize) -> &[[f64; 3]; 4] {
        &self.grads[t]
    }

    /// Piecewise-constant gradient of a nodal field on tetrahedron `t`.
    pub fn gradient_on(&self, t: usize, field: &[f64]) -> [f64; 3] {
        let tet = &self.mesh.tets()[t];
        let g = &self.grads[t];
        let mut out = [0.0; 3];
        for a in 0..4 {
            for d in 0..3 {
                out[d] += field[tet[a]] * g[a][d];
            }
        }
        out
    }

    fn empty_full(&self) -> SparseOperator {
        SparseOperator::from_pattern(self.row_ptr.clone(), self.cols.clone())
    }

    fn scatter(&self, op: &mut SparseOperator, t: usize, local: &[[f64; 4]; 4]) {
        let pos = &self.positions[t];
        for a in 0..4 {
            for b in 0..4 {
                op.values[pos[4 * a + b] as usize] += local[a][b];
            }
        }
    }

    /// Interior block of a full-vertex operator.
    pub fn restrict(&self, full: &SparseOperator) -> SparseOperator {
        assert_eq!(full.dim(), self.mesh.n_vertices(), "expected a full-vertex operator");
        SparseOperator {
            n: self.n_dofs(),
            row_ptr: self.int_row_ptr.clone(),
            cols: self.int_cols.clone(),
            values: self.int_source.iter().map(|&k| full.values[k as usize]).collect(),
        }
    }

    /// Row-lumped mass `∫ φ_v` per vertex.
    pub fn lumped_mass(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.mesh.n_vertices()];
        for (tet, &vol) in self.mesh.tets().iter().zip(&self.volumes) {
            for &v in tet {
                m[v] += 0.25 * vol;
            }
        }
        m
    }

    /// Integral of a nodal P1 field.
    pub fn integrate_nodal(&self, field: &[f64]) -> f64 {
        self.lumped_mass().iter().zip(field).map(|(m, f)| m * f).sum()
    }
}

/// Full-vertex P1 mass matrix `∫ φ_i φ_j`.
pub fn assemble_mass(space: &FemSpace) -> SparseOperator {
    let mut op = space.empty_full();
    for t in 0..space.mesh.n_tets() {
        let v = space.volumes[t] / 20.0;
        let mut local = [[v; 4]; 4];
        for (a, row) in local.iter_mut().enumerate() {
            row[a] = 2.0 * v;
        }
        space.scatter(&mut op, t, &local);
    }
    op
}

/// Full-vertex P1 stiffness matrix `∫ ∇φ_i · ∇φ_j`.
pub fn assemble_stiffness(space: &FemSpace) -> SparseOperator {
    let mut op = space.empty_full();
    for t in 0..space.mesh.n_tets() {
        let g = &space.grads[t];
        let v = space.volumes[t];
        let mut local = [[0.0; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                local[a][b] = v * (g[a][0] * g[b][0] + g[a][1] * g[b][1] + g[a][2] * g[b][2]);
            }
        }
        space.scatter(&mut op, t, &local);
    }
    op
}

/// Full-vertex weighted mass matrix `∫ w φ_i φ_j`.
pub fn assemble_weighted_mass(space: &FemSpace, weight: &Weight<'_>, plan: &QuadraturePlan) -> Result<SparseOperator> {
    let mesh = &space.mesh;
    let mut op = space.empty_full();
    match weight {
        Weight::Constant(c) => {
            let mut m = assemble_mass(space);
            m.values.iter_mut().for_each(|v| *v *= c);
            return Ok(m);
        }
        Weight::Nodal(w) => {
            if w.len() != mesh.n_vertices() {
                return Err(Error::DimensionMismatch {
                    expected: format!("{} nodal weights", mesh.n_vertices()),
                    found: w.len().to_string(),
                });
            }
            for (t, tet) in mesh.tets().iter().enumerate() {
                let vol = space.volumes[t];
                let mut local = [[0.0; 4]; 4];
                for a in 0..4 {
                    for b in a..4 {
                        let s: f64 = (0..4).map(|c| triple_mean(a, b, c) * w[tet[c]]).sum();
                        local[a][b] = vol * s;
                        local[b][a] = vol * s;
                    }
                }
                space.scatter(&mut op, t, &local);
            }
        }
        Weight::Analytic(f) => {
            let sizes = if plan.hotspots.is_empty() {
                None
            } else {
                Some(mesh.element_sizes())
            };
            for t in 0..mesh.n_tets() {
                let p = mesh.tet_points(t);
                let rule = match &sizes {
                    Some(h) => {
                        let c = mesh.centroid(t);
                        let reach = (plan.radius_in_elements + 1.0) * h.h[t];
                        if plan.hotspots.iter().any(|s| (s - c).norm() <= reach) {
                            &plan.elevated
                        } else {
                            &plan.regular
                        }
                    }
                    None => &plan.regular,
                };
                let vol = space.volumes[t];
                let mut local = [[0.0; 4]; 4];
                for (lam, &wq) in rule.points.iter().zip(&rule.weights) {
                    let x = p[0] * lam[0] + p[1] * lam[1] + p[2] * lam[2] + p[3] * lam[3];
                    let val = f(&x);
                    if !val.is_finite() {
                        return Err(Error::NonFiniteWeight {
                            value: val,
                            x: x.x,
                            y: x.y,
                            z: x.z,
                        });
                    }
                    let s = wq * vol * val;
                    for a in 0..4 {
                        for b in 0..4 {
                            local[a][b] += s * lam[a] * lam[b];
                        }
                    }
                }
                space.scatter(&mut op, t, &local);
            }
        }
    }
    Ok(op)
}

/// Load vector `∫ f φ_i` for a nodal P1 field `f` (consistent mass times `f`).
pub fn nodal_load(space: &FemSpace, mass_full: &SparseOperator, f: &[f64]) -> Vec<f64> {
    debug_assert!(mass_full.dim() == space.mesh.n_vertices());
    mass_full.mul_vec(f)
}

/// Gram matrix `⟨Uᵀ V⟩` with entries `u_iᵀ M v_j`.
pub fn gram(mass: &SparseOperator, u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if u.nrows() != mass.dim() || v.nrows() != mass.dim() || u.ncols() != v.ncols() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} rows and equal column counts", mass.dim()),
            found: format!("{}x{} and {}x{}", u.nrows(), u.ncols(), v.nrows(), v.ncols()),
        });
    }
    Ok(u.transpose() * mass.mul_mat(v))
}
