//! Discrete Poisson problem `-∇²V = 4πρ` for the Hartree potential.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::error::Result;
use crate::fem::{solve_spd_in_place, CgOptions, DofMap, FemSpace, SparseOperator};
use crate::mesh::Point;

/// Dirichlet data for the Hartree potential on the box surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HartreeBc {
    Zero,
    /// Multipole expansion about the charge centroid up to `order` (0, 1 or 2).
    Multipole { order: usize },
}

/// Monopole, dipole and traceless quadrupole moments of a charge distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipoles {
    pub charge: f64,
    pub centroid: Point,
    pub dipole: Vector3<f64>,
    pub quadrupole: Matrix3<f64>,
}

impl Multipoles {
    /// Moments of the nodal load `b_j = ∫ ρ φ_j`. Constant and linear moments
    /// are exact because P1 reproduces affine functions.
    pub fn from_load(points: &[Point], load: &[f64]) -> Self {
        let charge: f64 = load.iter().sum();
        let centroid = if charge.abs() > 0.0 {
            points.iter().zip(load).map(|(p, b)| p * *b).sum::<Vector3<f64>>() / charge
        } else {
            Point::zeros()
        };
        let mut dipole = Vector3::zeros();
        let mut quadrupole = Matrix3::zeros();
        for (p, &b) in points.iter().zip(load) {
            let y = p - centroid;
            dipole += y * b;
            quadrupole += (y * y.transpose() * 3.0 - Matrix3::identity() * y.norm_squared()) * b;
        }
        Multipoles {
            charge,
            centroid,
            dipole,
            quadrupole,
        }
    }

    pub fn potential(&self, x: &Point, order: usize) -> f64 {
        let y = x - self.centroid;
        let r = y.norm();
        let mut v = self.charge / r;
        if order >= 1 {
            v += self.dipole.dot(&y) / r.powi(3);
        }
        if order >= 2 {
            v += 0.5 * (y.transpose() * self.quadrupole * y)[(0, 0)] / r.powi(5);
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct HartreeSolver {
    bc: HartreeBc,
    tol: f64,
    stiffness_full: SparseOperator,
    stiffness: SparseOperator,
    boundary: Vec<usize>,
}

/// Potential together with the variational Hartree energy.
#[derive(Debug, Clone)]
pub struct HartreeSolution {
    /// Full nodal potential (boundary values included).
    pub potential: Vec<f64>,
    pub energy: f64,
    pub iterations: usize,
}

impl HartreeSolver {
    pub fn new(space: &FemSpace, stiffness_full: &SparseOperator, bc: HartreeBc, tol: f64) -> Self {
        HartreeSolver {
            bc,
            tol,
            stiffness_full: stiffness_full.clone(),
            stiffness: space.restrict(stiffness_full),
            boundary: space.mesh().boundary_vertices(),
        }
    }

    pub fn bc(&self) -> HartreeBc {
        self.bc
    }

    /// Solves for the potential of the charge with nodal load `load` (full
    /// vector). `warm` is a previous full potential used as the starting guess.
    ///
    /// The returned energy uses the concave functional
    /// `b_Iᵀv_I − (v_IᵀK_II v_I + v_IᵀK_IB v_B)/8π + b_Bᵀv_B/2`, which equals
    /// `½ ∫ V ρ` at the exact solution and is insensitive to first order in
    /// the interior solve error.
    pub fn solve(&self, space: &FemSpace, load: &[f64], warm: Option<&[f64]>) -> Result<HartreeSolution> {
        let mesh = space.mesh();
        let dofs: &DofMap = space.dofs();
        let nv = mesh.n_vertices();
        let mut boundary_values = vec![0.0; nv];
        if let HartreeBc::Multipole { order } = self.bc {
            let moments = Multipoles::from_load(mesh.vertices(), load);
            if moments.charge.abs() > 0.0 {
                for &v in &self.boundary {
                    boundary_values[v] = moments.potential(&mesh.vertices()[v], order);
                }
            }
        }
        let lift = self.stiffness_full.mul_vec(&boundary_values);
        let rhs: Vec<f64> = (0..dofs.n_dofs())
            .map(|d| {
                let v = dofs.vertex(d);
                4.0 * PI * load[v] - lift[v]
            })
            .collect();
        let mut x = match warm {
            Some(w) => dofs.restrict(w),
            None => vec![0.0; dofs.n_dofs()],
        };
        let report = solve_spd_in_place(&self.stiffness, &rhs, &mut x, CgOptions::with_tol(self.tol))?;

        let kx = self.stiffness.mul_vec(&x);
        let mut energy = 0.0;
        for d in 0..dofs.n_dofs() {
            let v = dofs.vertex(d);
            energy += load[v] * x[d] - (x[d] * kx[d] + x[d] * lift[v]) / (8.0 * PI);
        }
        for &v in &self.boundary {
            energy += 0.5 * load[v] * boundary_values[v];
        }
        let mut potential = boundary_values;
        for d in 0..dofs.n_dofs() {
            potential[dofs.vertex(d)] = x[d];
        }
        Ok(HartreeSolution {
            potential,
            energy,
            iterations: report.iterations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble_mass, assemble_stiffness};
    use crate::mesh::{build_cube_mesh, Mesh};

    /// Gaussian of unit charge; its potential is `erf(√α r)/r`.
    fn gaussian(alpha: f64) -> impl Fn(&Point) -> f64 {
        move |x: &Point| (alpha / PI).powf(1.5) * (-alpha * x.norm_squared()).exp()
    }

    fn erf(x: f64) -> f64 {
        // Maclaurin series, adequate for the moderate arguments used here
        let mut sum: f64 = 0.0;
        let mut term = x;
        let mut n = 0.0;
        while term.abs() > 1e-17 * sum.abs().max(1e-300) || n < 3.0 {
            sum += term / (2.0 * n + 1.0);
            n += 1.0;
            term *= -x * x / n;
        }
        2.0 / PI.sqrt() * sum
    }

    fn potential_error(mesh: &Mesh, bc: HartreeBc, alpha: f64) -> f64 {
        let space = FemSpace::new(mesh);
        let k = assemble_stiffness(&space);
        let m = assemble_mass(&space);
        let rho: Vec<f64> = mesh.vertices().iter().map(gaussian(alpha)).collect();
        let sol = HartreeSolver::new(&space, &k, bc, 1e-12)
            .solve(&space, &m.mul_vec(&rho), None)
            .unwrap();
        let v = mesh
            .vertices()
            .iter()
            .position(|p| (p - Point::new(1.0, 0.0, 0.0)).norm() < 1e-12)
            .unwrap();
        let exact = erf(alpha.sqrt());
        (sol.potential[v] - exact).abs() / exact
    }

    #[test]
    fn erf_series() {
        assert!((erf(1.0) - 0.842_700_792_949_714_9).abs() < 1e-15);
        assert!((erf(2.0) - 0.995_322_265_018_952_7).abs() < 1e-15);
    }

    #[test]
    fn multipole_of_point_like_load() {
        let pts = vec![Point::new(1.0, 0.0, 0.0), Point::new(-1.0, 0.0, 0.0)];
        let m = Multipoles::from_load(&pts, &[1.0, 1.0]);
        assert_eq!(m.charge, 2.0);
        assert_eq!(m.centroid, Point::zeros());
        assert!(m.dipole.norm() < 1e-15);
        let x = Point::new(0.0, 5.0, 0.0);
        let exact = 2.0 / (26.0f64).sqrt();
        let err0 = (m.potential(&x, 0) - exact).abs();
        let err2 = (m.potential(&x, 2) - exact).abs();
        assert!(err2 < 0.1 * err0);
    }

    #[test]
    fn gaussian_potential_converges() {
        let coarse = build_cube_mesh(-8.0, 8.0, 16).unwrap();
        let fine = coarse.refine_uniform().unwrap().refine_uniform().unwrap().refine_uniform().unwrap();
        let bc = HartreeBc::Multipole { order: 2 };
        let e1 = potential_error(&coarse, bc, 1.0);
        let e2 = potential_error(&fine, bc, 1.0);
        assert!(e2 < e1, "{e2} !< {e1}");
        assert!(e2 < 0.02, "{e1} {e2}");
    }

    #[test]
    fn energy_is_half_potential_times_charge() {
        let mesh = build_cube_mesh(-6.0, 6.0, 6).unwrap().refine_uniform().unwrap();
        let space = FemSpace::new(&mesh);
        let k = assemble_stiffness(&space);
        let m = assemble_mass(&space);
        let rho: Vec<f64> = mesh.vertices().iter().map(gaussian(0.8)).collect();
        let load = m.mul_vec(&rho);
        for bc in [HartreeBc::Zero, HartreeBc::Multipole { order: 2 }] {
            let sol = HartreeSolver::new(&space, &k, bc, 1e-13).solve(&space, &load, None).unwrap();
            let half: f64 = 0.5 * load.iter().zip(&sol.potential).map(|(b, v)| b * v).sum::<f64>();
            assert!((sol.energy - half).abs() < 1e-9 * half.abs(), "{bc:?}: {} vs {half}", sol.energy);
        }
    }
}
