//! Conforming tetrahedral meshes of axis-aligned boxes.
//!
//! Boxes are split into cubes and every cube into the six Kuhn tetrahedra
//! sharing its main diagonal. Tetrahedra are stored in Maubach order
//! `[x0, x1, x2, x3]` together with a tag `k ∈ {1, 2, 3}`; the refinement
//! edge of a tetrahedron is `(x0, xk)`. Newest-vertex bisection with this
//! bookkeeping keeps Kuhn meshes conforming and cycles through finitely many
//! similarity classes, so shape regularity is preserved under refinement.

mod bisect;
mod vtk;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub use bisect::DEFAULT_CLOSURE_DEPTH;
pub use vtk::write_vtk;

pub type Point = Vector3<f64>;

/// Absolute tolerance used to classify vertices as lying on the box surface.
pub const BOUNDARY_TOL: f64 = 1e-12;

static NEXT_LINEAGE: AtomicU64 = AtomicU64::new(1);

/// Provenance of a vertex: present in the root mesh, or created as the
/// midpoint of an edge between two older vertices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexOrigin {
    Root,
    Midpoint(usize, usize),
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub(crate) vertices: Vec<Point>,
    pub(crate) tets: Vec<[usize; 4]>,
    pub(crate) tags: Vec<u8>,
    pub(crate) boundary: Vec<bool>,
    pub(crate) origins: Vec<VertexOrigin>,
    pub(crate) level: usize,
    pub(crate) lineage: u64,
    pub(crate) lo: Point,
    pub(crate) hi: Point,
}

/// Per-tetrahedron diameter (longest edge length).
#[derive(Debug, Clone, PartialEq)]
pub struct ElementSizeField {
    pub h: Vec<f64>,
}

impl ElementSizeField {
    pub fn min(&self) -> f64 {
        self.h.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.h.iter().copied().fold(0.0, f64::max)
    }
}

/// Kuhn permutations of the unit cube: every tetrahedron walks from corner
/// `(0,0,0)` to `(1,1,1)` along the axes in the listed order.
const KUHN_PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// Builds the Kuhn triangulation of the box `[lo, hi]` with `n[a]` cells along axis `a`.
pub fn build_box_mesh(lo: Point, hi: Point, n: [usize; 3]) -> Result<Mesh> {
    for a in 0..3 {
        if !(hi[a] > lo[a]) || !lo[a].is_finite() || !hi[a].is_finite() {
            return Err(Error::InvalidDomain(format!(
                "axis {a}: lo = {}, hi = {}",
                lo[a], hi[a]
            )));
        }
        if n[a] == 0 {
            return Err(Error::InvalidDomain(format!("axis {a} has zero cells")));
        }
    }
    let [nx, ny, nz] = n;
    let index = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                let coord = |c: usize, cells: usize, a: usize| {
                    // exact end points so boundary classification is clean
                    if c == cells {
                        hi[a]
                    } else {
                        lo[a] + (hi[a] - lo[a]) * c as f64 / cells as f64
                    }
                };
                vertices.push(Point::new(coord(i, nx, 0), coord(j, ny, 1), coord(k, nz, 2)));
            }
        }
    }

    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                for perm in KUHN_PERMUTATIONS {
                    let mut c = [i, j, k];
                    let mut tet = [index(c[0], c[1], c[2]); 4];
                    for (step, &axis) in perm.iter().enumerate() {
                        c[axis] += 1;
                        tet[step + 1] = index(c[0], c[1], c[2]);
                    }
                    tets.push(tet);
                }
            }
        }
    }
    let tags = vec![3u8; tets.len()];
    let origins = vec![VertexOrigin::Root; vertices.len()];
    let mut mesh = Mesh {
        vertices,
        tets,
        tags,
        boundary: Vec::new(),
        origins,
        level: 0,
        lineage: NEXT_LINEAGE.fetch_add(1, Ordering::Relaxed),
        lo,
        hi,
    };
    mesh.boundary = mesh.vertices.iter().map(|p| mesh.on_boundary(p)).collect();
    Ok(mesh)
}

/// Cube mesh helper with the same cell count along every axis.
pub fn build_cube_mesh(lo: f64, hi: f64, n: usize) -> Result<Mesh> {
    build_box_mesh(Point::repeat(lo), Point::repeat(hi), [n; 3])
}

impl Mesh {
    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn lineage(&self) -> u64 {
        self.lineage
    }

    pub fn bounds(&self) -> (Point, Point) {
        (self.lo, self.hi)
    }

    pub fn domain_volume(&self) -> f64 {
        let d = self.hi - self.lo;
        d.x * d.y * d.z
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn boundary_vertices(&self) -> Vec<usize> {
        (0..self.n_vertices()).filter(|&v| self.boundary[v]).collect()
    }

    pub fn origin(&self, v: usize) -> VertexOrigin {
        self.origins[v]
    }

    /// The designated bisection edge of tetrahedron `t`.
    pub fn refinement_edge(&self, t: usize) -> (usize, usize) {
        let tet = &self.tets[t];
        (tet[0], tet[self.tags[t] as usize])
    }

    pub(crate) fn on_boundary(&self, p: &Point) -> bool {
        (0..3).any(|a| (p[a] - self.lo[a]).abs() <= BOUNDARY_TOL || (p[a] - self.hi[a]).abs() <= BOUNDARY_TOL)
    }

    pub fn tet_points(&self, t: usize) -> [Point; 4] {
        let tet = &self.tets[t];
        [
            self.vertices[tet[0]],
            self.vertices[tet[1]],
            self.vertices[tet[2]],
            self.vertices[tet[3]],
        ]
    }

    /// Signed volume `det[x1-x0, x2-x0, x3-x0] / 6` in storage order.
    ///
    /// Maubach ordering alternates orientation between children, so the
    /// orientation convention used by [`Mesh::volume`] is the absolute value.
    pub fn signed_volume(&self, t: usize) -> f64 {
        let [p0, p1, p2, p3] = self.tet_points(t);
        (p1 - p0).dot(&(p2 - p0).cross(&(p3 - p0))) / 6.0
    }

    pub fn volume(&self, t: usize) -> f64 {
        self.signed_volume(t).abs()
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [p0, p1, p2, p3] = self.tet_points(t);
        (p0 + p1 + p2 + p3) * 0.25
    }

    pub fn diameter(&self, t: usize) -> f64 {
        let p = self.tet_points(t);
        let mut h: f64 = 0.0;
        for a in 0..4 {
            for b in (a + 1)..4 {
                h = h.max((p[a] - p[b]).norm());
            }
        }
        h
    }

    pub fn element_sizes(&self) -> ElementSizeField {
        ElementSizeField {
            h: (0..self.n_tets()).map(|t| self.diameter(t)).collect(),
        }
    }

    /// Barycentric coordinates of `p` with respect to tetrahedron `t`.
    pub fn barycentric(&self, t: usize, p: &Point) -> [f64; 4] {
        let [p0, p1, p2, p3] = self.tet_points(t);
        let m = nalgebra::Matrix3::from_columns(&[p1 - p0, p2 - p0, p3 - p0]);
        let l = m
            .lu()
            .solve(&(p - p0))
            .unwrap_or_else(|| Vector3::repeat(f64::NAN));
        [1.0 - l.x - l.y - l.z, l.x, l.y, l.z]
    }

    /// Whether the closed tetrahedron `t` contains `p` (with relative slack `tol`).
    pub fn contains(&self, t: usize, p: &Point, tol: f64) -> bool {
        self.barycentric(t, p).iter().all(|&l| l >= -tol)
    }

    /// Indices of all tetrahedra whose closure contains `p`.
    pub fn tets_containing(&self, p: &Point) -> Vec<usize> {
        (0..self.n_tets())
            .filter(|&t| self.contains(t, p, 1e-10))
            .collect()
    }

    /// Minimum dihedral angle (radians) over all tetrahedra.
    pub fn min_dihedral_angle(&self) -> f64 {
        const FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];
        let mut min_angle = std::f64::consts::PI;
        for t in 0..self.n_tets() {
            let p = self.tet_points(t);
            // outward-agnostic face normals; the dihedral angle between faces
            // i and j is π minus the angle between their outward normals
            let normals: Vec<Point> = FACES
                .iter()
                .enumerate()
                .map(|(opp, f)| {
                    let n = (p[f[1]] - p[f[0]]).cross(&(p[f[2]] - p[f[0]]));
                    let n = n / n.norm();
                    if n.dot(&(p[opp] - p[f[0]])) > 0.0 {
                        -n
                    } else {
                        n
                    }
                })
                .collect();
            for i in 0..4 {
                for j in (i + 1)..4 {
                    let c = normals[i].dot(&normals[j]).clamp(-1.0, 1.0);
                    min_angle = min_angle.min(std::f64::consts::PI - c.acos());
                }
            }
        }
        min_angle
    }

    /// Checks face matching: every face is shared by exactly two tetrahedra
    /// or lies on the box surface. Combined with volume conservation this
    /// rules out hanging vertices and overlaps.
    pub fn conformity_violations(&self) -> Vec<String> {
        let mut faces: HashMap<[usize; 3], u32> = HashMap::with_capacity(2 * self.n_tets());
        for tet in &self.tets {
            for skip in 0..4 {
                let mut f = [0usize; 3];
                let mut c = 0;
                for (i, &v) in tet.iter().enumerate() {
                    if i != skip {
                        f[c] = v;
                        c += 1;
                    }
                }
                f.sort_unstable();
                *faces.entry(f).or_insert(0) += 1;
            }
        }
        let mut problems = Vec::new();
        for (f, count) in faces {
            match count {
                2 => {}
                1 => {
                    let on_same_side = (0..3).any(|a| {
                        let at = |x: f64| f.iter().all(|&v| (self.vertices[v][a] - x).abs() <= BOUNDARY_TOL);
                        at(self.lo[a]) || at(self.hi[a])
                    });
                    if !on_same_side {
                        problems.push(format!("interior face {f:?} has a single neighbour"));
                    }
                }
                _ => problems.push(format!("face {f:?} shared by {count} tetrahedra")),
            }
        }
        for t in 0..self.n_tets() {
            if !(self.volume(t) > 0.0) {
                problems.push(format!("tet {t} is degenerate"));
            }
        }
        problems
    }

    pub fn is_conforming(&self) -> bool {
        self.conformity_violations().is_empty()
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.n_tets()).map(|t| self.volume(t)).sum()
    }

    /// Bisects every tetrahedron whose closure contains one of `points`, `rounds` times.
    pub fn refine_around(&self, points: &[Point], rounds: usize) -> Result<Mesh> {
        let mut mesh = self.clone();
        for _ in 0..rounds {
            let mut marked: Vec<usize> = points.iter().flat_map(|p| mesh.tets_containing(p)).collect();
            marked.sort_unstable();
            marked.dedup();
            mesh = mesh.bisect(&marked)?;
        }
        Ok(mesh)
    }

    /// Bisects every tetrahedron once (plus closure, which is empty for Kuhn meshes).
    pub fn refine_uniform(&self) -> Result<Mesh> {
        let all: Vec<usize> = (0..self.n_tets()).collect();
        self.bisect(&all)
    }

    /// Whether `self` is a bisection descendant of `coarse`.
    pub fn descends_from(&self, coarse: &Mesh) -> bool {
        self.lineage == coarse.lineage
            && self.level >= coarse.level
            && self.n_vertices() >= coarse.n_vertices()
            && self.vertices[..coarse.n_vertices()] == coarse.vertices[..]
    }

    /// Exact P1 transfer of a nodal field from an ancestor mesh.
    pub fn transfer_nodal(&self, coarse: &Mesh, field: &[f64]) -> Result<Vec<f64>> {
        if field.len() != coarse.n_vertices() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} nodal values", coarse.n_vertices()),
                found: field.len().to_string(),
            });
        }
        if !self.descends_from(coarse) {
            return Err(Error::Lineage(format!(
                "mesh (lineage {}, level {}) does not descend from mesh (lineage {}, level {})",
                self.lineage, self.level, coarse.lineage, coarse.level
            )));
        }
        let mut out = Vec::with_capacity(self.n_vertices());
        out.extend_from_slice(field);
        for v in coarse.n_vertices()..self.n_vertices() {
            match self.origins[v] {
                VertexOrigin::Midpoint(a, b) => out.push(0.5 * (out[a] + out[b])),
                VertexOrigin::Root => {
                    return Err(Error::Lineage(format!("vertex {v} has no parent edge")));
                }
            }
        }
        Ok(out)
    }
}

/// Free-function form of [`Mesh::transfer_nodal`].
pub fn transfer_nodal(field: &[f64], coarse: &Mesh, fine: &Mesh) -> Result<Vec<f64>> {
    fine.transfer_nodal(coarse, field)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cube() -> Mesh {
        build_cube_mesh(0.0, 1.0, 1).unwrap()
    }

    #[test]
    fn counts_for_box_meshes() {
        let m = build_cube_mesh(-20.0, 20.0, 4).unwrap();
        assert_eq!(m.n_vertices(), 125);
        assert_eq!(m.n_tets(), 384);
        let u = unit_cube();
        assert_eq!(u.n_vertices(), 8);
        assert_eq!(u.n_tets(), 6);
        assert_eq!(u.boundary_vertices().len(), 8);
    }

    #[test]
    fn degenerate_box_is_rejected() {
        let err = build_box_mesh(Point::zeros(), Point::new(1.0, 0.0, 1.0), [1, 1, 1]).unwrap_err();
        assert!(matches!(err, Error::InvalidDomain(_)));
        assert!(build_box_mesh(Point::zeros(), Point::repeat(1.0), [1, 0, 1]).is_err());
    }

    #[test]
    fn kuhn_cube_volumes_and_sizes() {
        let u = unit_cube();
        for t in 0..6 {
            assert!((u.volume(t) - 1.0 / 6.0).abs() < 1e-15);
            assert!((u.diameter(t) - 3f64.sqrt()).abs() < 1e-15);
            assert_eq!(u.refinement_edge(t), (0, 7));
        }
        assert!(u.is_conforming());
    }

    #[test]
    fn uniform_grid_sizes() {
        let m = build_cube_mesh(-20.0, 20.0, 4).unwrap();
        let h = m.element_sizes();
        let expected = 10.0 * 3f64.sqrt();
        assert!((h.min() - expected).abs() < 1e-12);
        assert!((h.max() - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_marking_is_identity() {
        let m = build_cube_mesh(0.0, 1.0, 2).unwrap();
        let r = m.bisect(&[]).unwrap();
        assert_eq!(r.tets, m.tets);
        assert_eq!(r.vertices, m.vertices);
    }

    #[test]
    fn uniform_bisection_halves_volumes() {
        let u = unit_cube();
        let r = u.refine_uniform().unwrap();
        assert_eq!(r.n_tets(), 12);
        for t in 0..r.n_tets() {
            assert!((r.volume(t) - 1.0 / 12.0).abs() < 1e-15);
        }
        assert!(r.is_conforming());
        assert!(r.element_sizes().max() < 3f64.sqrt());
    }

    #[test]
    fn transfer_reproduces_affine_fields() {
        let coarse = build_cube_mesh(-1.0, 1.0, 2).unwrap();
        let fine = coarse
            .refine_around(&[Point::new(0.1, 0.2, -0.3)], 4)
            .unwrap()
            .refine_uniform()
            .unwrap();
        let f = |p: &Point| p.x + 2.0 * p.y - p.z;
        let field: Vec<f64> = coarse.vertices().iter().map(f).collect();
        let out = fine.transfer_nodal(&coarse, &field).unwrap();
        for (v, p) in fine.vertices().iter().enumerate() {
            assert!((out[v] - f(p)).abs() < 1e-12);
        }
        let ones = fine.transfer_nodal(&coarse, &vec![1.0; coarse.n_vertices()]).unwrap();
        assert!(ones.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn transfer_rejects_foreign_meshes() {
        let a = build_cube_mesh(0.0, 1.0, 2).unwrap();
        let b = build_cube_mesh(0.0, 1.0, 2).unwrap();
        let err = b.transfer_nodal(&a, &vec![0.0; a.n_vertices()]).unwrap_err();
        assert!(matches!(err, Error::Lineage(_)));
        let fine = a.refine_uniform().unwrap();
        assert!(a.transfer_nodal(&fine, &vec![0.0; fine.n_vertices()]).is_err());
    }

    #[test]
    fn boundary_flags_match_geometry() {
        let m = build_cube_mesh(-2.0, 2.0, 2)
            .unwrap()
            .refine_uniform()
            .unwrap()
            .refine_uniform()
            .unwrap();
        for (v, p) in m.vertices().iter().enumerate() {
            let on = p.iter().any(|c| (c.abs() - 2.0).abs() < 1e-12);
            assert_eq!(m.is_boundary(v), on, "vertex {v} at {p:?}");
        }
    }
}
