//! Kohn–Sham total energy and its gradient on a P1 space.
//!
//! Closed-shell convention: `E_kin = Σ_i (f_i/2) ∫|∇u_i|²` and
//! `ρ = Σ_i f_i u_i²`. The density enters the Hartree and exchange-correlation
//! terms through its nodal values, so their contributions to the gradient are
//! diagonal (row-lumped) weighted masses; the external term keeps the full
//! quadratic form `Σ_i f_i u_iᵀ W_ext u_i`. With these choices the gradient
//! load is the exact derivative of the discrete energy.

pub mod hartree;
pub mod xc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{
    assemble_mass, assemble_stiffness, assemble_weighted_mass, solve_spd_in_place, CgOptions, FemSpace,
    QuadraturePlan, QuadratureRule, SparseOperator, Weight,
};
use crate::mesh::{Mesh, Point};

pub use hartree::{HartreeBc, HartreeSolution, HartreeSolver, Multipoles};
pub use xc::{xc_lda, XcEval};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nucleus {
    pub position: [f64; 3],
    pub charge: f64,
}

impl Nucleus {
    pub fn new(position: [f64; 3], charge: f64) -> Self {
        Nucleus { position, charge }
    }

    pub fn point(&self) -> Point {
        Point::from(self.position)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Molecule {
    pub nuclei: Vec<Nucleus>,
    pub occupations: Vec<f64>,
}

impl Molecule {
    pub fn new(nuclei: Vec<Nucleus>, occupations: Vec<f64>) -> Result<Self> {
        if occupations.is_empty() {
            return Err(Error::Config("at least one orbital is required".into()));
        }
        if let Some(f) = occupations.iter().find(|f| !(**f > 0.0)) {
            return Err(Error::Config(format!("occupations must be positive, got {f}")));
        }
        if let Some(n) = nuclei.iter().find(|n| !(n.charge > 0.0)) {
            return Err(Error::Config(format!("nuclear charges must be positive, got {}", n.charge)));
        }
        Ok(Molecule { nuclei, occupations })
    }

    /// `N` orbitals with the closed-shell occupation 2.
    pub fn closed_shell(nuclei: Vec<Nucleus>, n_orbitals: usize) -> Result<Self> {
        Molecule::new(nuclei, vec![2.0; n_orbitals])
    }

    pub fn n_orbitals(&self) -> usize {
        self.occupations.len()
    }

    pub fn electrons(&self) -> f64 {
        self.occupations.iter().sum()
    }

    pub fn nuclear_repulsion(&self) -> f64 {
        let mut e = 0.0;
        for (j, a) in self.nuclei.iter().enumerate() {
            for b in &self.nuclei[j + 1..] {
                e += a.charge * b.charge / (a.point() - b.point()).norm();
            }
        }
        e
    }

    /// Whether every nucleus lies strictly inside the box `[lo, hi]`.
    pub fn inside(&self, lo: &Point, hi: &Point) -> bool {
        self.nuclei
            .iter()
            .all(|n| (0..3).all(|a| n.position[a] > lo[a] && n.position[a] < hi[a]))
    }
}

/// The external potential of the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExternalModel {
    /// `-Σ_k Z_k / max(|x - R_k|, r_min)`.
    Coulomb,
    /// `½ ω² |x|²`, used by the linear-model oracle.
    Harmonic { omega: f64 },
}

/// Coulomb attraction of the nuclei with the distance capped at `r_min`.
pub fn external_potential(molecule: &Molecule, r_min: f64) -> impl Fn(&Point) -> f64 + '_ {
    move |x: &Point| {
        molecule
            .nuclei
            .iter()
            .map(|n| -n.charge / (x - n.point()).norm().max(r_min))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOptions {
    pub external: ExternalModel,
    pub hartree: Option<HartreeBc>,
    pub xc: bool,
    pub quad_degree: usize,
    pub quad_degree_singular: usize,
    /// Elevated quadrature applies within this many element diameters of a nucleus.
    pub singular_radius: f64,
    pub r_min: f64,
    pub poisson_tol: f64,
    pub mass_tol: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            external: ExternalModel::Coulomb,
            hartree: Some(HartreeBc::Zero),
            xc: true,
            quad_degree: 2,
            quad_degree_singular: 4,
            singular_radius: 2.0,
            r_min: 1e-8,
            poisson_tol: 1e-10,
            mass_tol: 1e-12,
        }
    }
}

impl ModelOptions {
    /// Kinetic plus external energy only.
    pub fn linear(external: ExternalModel) -> Self {
        ModelOptions {
            external,
            hartree: None,
            xc: false,
            ..ModelOptions::default()
        }
    }
}

/// N orbitals as interior nodal coefficients (`n_dofs × N`) plus occupations.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitalSet {
    pub coefficients: DMatrix<f64>,
    pub occupations: Vec<f64>,
}

impl OrbitalSet {
    pub fn new(coefficients: DMatrix<f64>, occupations: Vec<f64>) -> Result<Self> {
        if coefficients.ncols() != occupations.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} orbital columns", occupations.len()),
                found: coefficients.ncols().to_string(),
            });
        }
        Ok(OrbitalSet {
            coefficients,
            occupations,
        })
    }

    pub fn n_orbitals(&self) -> usize {
        self.coefficients.ncols()
    }

    pub fn n_dofs(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn with_coefficients(&self, coefficients: DMatrix<f64>) -> Self {
        OrbitalSet {
            coefficients,
            occupations: self.occupations.clone(),
        }
    }
}

/// Nodal electron density on all vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub kinetic: f64,
    pub external: f64,
    pub hartree: f64,
    pub xc: f64,
    pub nuclear: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn new(kinetic: f64, external: f64, hartree: f64, xc: f64, nuclear: f64) -> Self {
        EnergyBreakdown {
            kinetic,
            external,
            hartree,
            xc,
            nuclear,
            total: kinetic + external + hartree + xc + nuclear,
        }
    }
}

/// Energy of a state plus the intermediates reused by the gradient.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub energy: EnergyBreakdown,
    pub density: DensityField,
    /// Full nodal Hartree potential (empty when Hartree is disabled).
    pub hartree_potential: Vec<f64>,
    /// Nodal exchange-correlation potential (empty when xc is disabled).
    pub xc_potential: Vec<f64>,
    pub poisson_iterations: usize,
    ku: DMatrix<f64>,
    wu: DMatrix<f64>,
}

/// Kohn–Sham model bound to one mesh.
#[derive(Debug, Clone)]
pub struct KsModel {
    space: FemSpace,
    molecule: Molecule,
    options: ModelOptions,
    mass_full: SparseOperator,
    mass: SparseOperator,
    stiffness: SparseOperator,
    external: SparseOperator,
    lumped: Vec<f64>,
    hartree: Option<HartreeSolver>,
}

impl KsModel {
    pub fn new(mesh: &Mesh, molecule: Molecule, options: ModelOptions) -> Result<Self> {
        let space = FemSpace::new(mesh);
        if space.n_dofs() < molecule.n_orbitals() {
            return Err(Error::Config(format!(
                "{} interior dofs cannot hold {} orbitals",
                space.n_dofs(),
                molecule.n_orbitals()
            )));
        }
        let mass_full = assemble_mass(&space);
        let stiffness_full = assemble_stiffness(&space);
        let plan = QuadraturePlan {
            regular: QuadratureRule::of_degree(options.quad_degree),
            elevated: QuadratureRule::of_degree(options.quad_degree_singular),
            hotspots: molecule.nuclei.iter().map(Nucleus::point).collect(),
            radius_in_elements: options.singular_radius,
        };
        let external_full = match options.external {
            ExternalModel::Coulomb => {
                let v = external_potential(&molecule, options.r_min);
                assemble_weighted_mass(&space, &Weight::Analytic(&v), &plan)?
            }
            ExternalModel::Harmonic { omega } => {
                let v = move |x: &Point| 0.5 * omega * omega * x.norm_squared();
                assemble_weighted_mass(&space, &Weight::Analytic(&v), &plan)?
            }
        };
        let hartree = options
            .hartree
            .map(|bc| HartreeSolver::new(&space, &stiffness_full, bc, options.poisson_tol));
        Ok(KsModel {
            mass: space.restrict(&mass_full),
            stiffness: space.restrict(&stiffness_full),
            external: space.restrict(&external_full),
            lumped: space.lumped_mass(),
            mass_full,
            hartree,
            molecule,
            options,
            space,
        })
    }

    pub fn space(&self) -> &FemSpace {
        &self.space
    }

    pub fn mesh(&self) -> &Mesh {
        self.space.mesh()
    }

    pub fn molecule(&self) -> &Molecule {
        &self.molecule
    }

    pub fn options(&self) -> &ModelOptions {
        &self.options
    }

    /// Interior mass matrix.
    pub fn mass(&self) -> &SparseOperator {
        &self.mass
    }

    /// Interior stiffness matrix.
    pub fn stiffness(&self) -> &SparseOperator {
        &self.stiffness
    }

    /// Interior external-potential weighted mass.
    pub fn external_operator(&self) -> &SparseOperator {
        &self.external
    }

    pub fn mass_full(&self) -> &SparseOperator {
        &self.mass_full
    }

    /// `K/2 + W_ext`, the single-particle operator of the linear model.
    pub fn linear_hamiltonian(&self) -> SparseOperator {
        self.external.add_scaled(0.5, &self.stiffness)
    }

    pub fn n_dofs(&self) -> usize {
        self.space.n_dofs()
    }

    fn check(&self, u: &OrbitalSet) -> Result<()> {
        if u.n_dofs() != self.n_dofs() || u.n_orbitals() != self.molecule.n_orbitals() {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.n_dofs(), self.molecule.n_orbitals()),
                found: format!("{}x{}", u.n_dofs(), u.n_orbitals()),
            });
        }
        Ok(())
    }

    /// `ρ_v = Σ_i f_i u_i(x_v)²`, zero on the boundary.
    pub fn density(&self, u: &OrbitalSet) -> DensityField {
        let dofs = self.space.dofs();
        let mut values = vec![0.0; dofs.n_vertices()];
        for d in 0..dofs.n_dofs() {
            let mut r = 0.0;
            for (i, f) in u.occupations.iter().enumerate() {
                let c = u.coefficients[(d, i)];
                r += f * c * c;
            }
            values[dofs.vertex(d)] = r;
        }
        DensityField { values }
    }

    /// Hartree potential of an arbitrary nodal density.
    pub fn hartree_potential(&self, density: &DensityField, warm: Option<&[f64]>) -> Result<Option<HartreeSolution>> {
        match &self.hartree {
            None => Ok(None),
            Some(solver) => {
                let load = self.mass_full.mul_vec(&density.values);
                solver.solve(&self.space, &load, warm).map(Some)
            }
        }
    }

    /// Energy breakdown and cached intermediates; `warm` seeds the Poisson solve.
    pub fn evaluate(&self, u: &OrbitalSet, warm: Option<&[f64]>) -> Result<Evaluation> {
        self.check(u)?;
        let c = &u.coefficients;
        let ku = self.stiffness.mul_mat(c);
        let wu = self.external.mul_mat(c);
        let mut kinetic = 0.0;
        let mut external = 0.0;
        for (i, f) in u.occupations.iter().enumerate() {
            kinetic += 0.5 * f * c.column(i).dot(&ku.column(i));
            external += f * c.column(i).dot(&wu.column(i));
        }
        let density = self.density(u);

        let (hartree, hartree_potential, poisson_iterations) = match self.hartree_potential(&density, warm)? {
            Some(sol) => (sol.energy, sol.potential, sol.iterations),
            None => (0.0, Vec::new(), 0),
        };

        let (xc_energy, xc_potential) = if self.options.xc {
            let mut e = 0.0;
            let mut pot = vec![0.0; density.values.len()];
            for (v, (&rho, m)) in density.values.iter().zip(&self.lumped).enumerate() {
                let x = xc::xc_lda_unchecked(rho.max(0.0));
                e += m * rho * x.eps_xc;
                pot[v] = x.v_xc;
            }
            (e, pot)
        } else {
            (0.0, Vec::new())
        };

        Ok(Evaluation {
            energy: EnergyBreakdown::new(kinetic, external, hartree, xc_energy, self.molecule.nuclear_repulsion()),
            density,
            hartree_potential,
            xc_potential,
            poisson_iterations,
            ku,
            wu,
        })
    }

    pub fn total_energy(&self, u: &OrbitalSet) -> Result<EnergyBreakdown> {
        Ok(self.evaluate(u, None)?.energy)
    }

    /// Nodal diagonal of the density-dependent potentials' contribution:
    /// `(M V_H)_v + m_v v_xc(ρ_v)` on interior vertices.
    fn density_potential_diagonal(&self, eval: &Evaluation) -> Vec<f64> {
        let dofs = self.space.dofs();
        let mh = if eval.hartree_potential.is_empty() {
            None
        } else {
            Some(self.mass_full.mul_vec(&eval.hartree_potential))
        };
        (0..dofs.n_dofs())
            .map(|d| {
                let v = dofs.vertex(d);
                let mut s = 0.0;
                if let Some(mh) = &mh {
                    s += mh[v];
                }
                if !eval.xc_potential.is_empty() {
                    s += self.lumped[v] * eval.xc_potential[v];
                }
                s
            })
            .collect()
    }

    /// Dual representation of `δE/δu_i`: column `i` is
    /// `f_i (K u_i + 2 W_ext u_i + 2 D u_i)` with `D` the diagonal from
    /// [`Self::density_potential_diagonal`].
    pub fn gradient_load(&self, u: &OrbitalSet, eval: &Evaluation) -> DMatrix<f64> {
        let diag = self.density_potential_diagonal(eval);
        let c = &u.coefficients;
        let mut g = DMatrix::zeros(c.nrows(), c.ncols());
        for (i, f) in u.occupations.iter().enumerate() {
            for d in 0..c.nrows() {
                g[(d, i)] = f * (eval.ku[(d, i)] + 2.0 * eval.wu[(d, i)] + 2.0 * diag[d] * c[(d, i)]);
            }
        }
        g
    }

    /// Riesz representatives `g = M⁻¹ G` (one mass solve per column).
    pub fn riesz(&self, load: &DMatrix<f64>, warm: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
        let mut out = match warm {
            Some(w) if w.shape() == load.shape() => w.clone(),
            _ => DMatrix::zeros(load.nrows(), load.ncols()),
        };
        for j in 0..load.ncols() {
            solve_spd_in_place(
                &self.mass,
                load.column(j).as_slice(),
                out.column_mut(j).as_mut_slice(),
                CgOptions::with_tol(self.options.mass_tol),
            )?;
        }
        Ok(out)
    }

    /// `|||∇_G E|||` given loads and their Riesz representatives.
    pub fn residual_norm(&self, u: &OrbitalSet, load: &DMatrix<f64>, riesz: &DMatrix<f64>) -> f64 {
        let c = &u.coefficients;
        let proj = c.transpose() * load;
        let r = riesz - c * proj;
        let mr = self.mass.mul_mat(&r);
        r.component_mul(&mr).sum().max(0.0).sqrt()
    }

    pub fn grassmann_residual(&self, u: &OrbitalSet, load: &DMatrix<f64>) -> Result<f64> {
        let g = self.riesz(load, None)?;
        Ok(self.residual_norm(u, load, &g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_cube_mesh;

    fn helium() -> Molecule {
        Molecule::closed_shell(vec![Nucleus::new([0.0; 3], 2.0)], 1).unwrap()
    }

    #[test]
    fn nuclear_repulsion_of_h2() {
        let m = Molecule::closed_shell(
            vec![Nucleus::new([-0.7414, 0.0, 0.0], 1.0), Nucleus::new([0.7414, 0.0, 0.0], 1.0)],
            1,
        )
        .unwrap();
        assert!((m.nuclear_repulsion() - 1.0 / 1.4828).abs() < 1e-12);
        assert!((m.nuclear_repulsion() - 0.674400).abs() < 1e-6);
    }

    #[test]
    fn external_potential_values() {
        let he = helium();
        let v = external_potential(&he, 1e-8);
        assert!((v(&Point::new(1.0, 0.0, 0.0)) + 2.0).abs() < 1e-15);
        let h2 = Molecule::closed_shell(
            vec![Nucleus::new([-0.7414, 0.0, 0.0], 1.0), Nucleus::new([0.7414, 0.0, 0.0], 1.0)],
            1,
        )
        .unwrap();
        let v = external_potential(&h2, 1e-8);
        assert!((v(&Point::zeros()) + 2.0 / 0.7414).abs() < 1e-12);
        assert!((v(&Point::zeros()) + 2.69760).abs() < 1e-5);
        // capped at the nucleus
        assert!((external_potential(&he, 1e-8)(&Point::zeros()) + 2e8).abs() < 1e-3);
    }

    #[test]
    fn molecule_validation() {
        assert!(Molecule::new(vec![Nucleus::new([0.0; 3], 2.0)], vec![]).is_err());
        assert!(Molecule::new(vec![Nucleus::new([0.0; 3], -1.0)], vec![2.0]).is_err());
        assert!(Molecule::new(vec![Nucleus::new([0.0; 3], 1.0)], vec![0.0]).is_err());
    }

    #[test]
    fn zero_orbitals_give_nuclear_energy_only() {
        let mesh = build_cube_mesh(-4.0, 4.0, 4).unwrap();
        let mol = Molecule::closed_shell(
            vec![Nucleus::new([-1.0, 0.0, 0.0], 1.0), Nucleus::new([1.0, 0.0, 0.0], 1.0)],
            1,
        )
        .unwrap();
        let model = KsModel::new(&mesh, mol, ModelOptions::default()).unwrap();
        let u = OrbitalSet::new(DMatrix::zeros(model.n_dofs(), 1), vec![2.0]).unwrap();
        let e = model.total_energy(&u).unwrap();
        assert_eq!(e.kinetic, 0.0);
        assert_eq!(e.external, 0.0);
        assert_eq!(e.hartree, 0.0);
        assert_eq!(e.xc, 0.0);
        assert_eq!(e.total, e.nuclear);
        assert!((e.nuclear - 0.5).abs() < 1e-15);
        assert!(model.density(&u).values.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn density_is_occupation_weighted_square() {
        let mesh = build_cube_mesh(-1.0, 1.0, 4).unwrap();
        let model = KsModel::new(&mesh, helium(), ModelOptions::default()).unwrap();
        let u = OrbitalSet::new(DMatrix::from_element(model.n_dofs(), 1, 1.0), vec![2.0]).unwrap();
        let rho = model.density(&u);
        for (v, r) in rho.values.iter().enumerate() {
            let expected = if mesh.is_boundary(v) { 0.0 } else { 2.0 };
            assert_eq!(*r, expected);
        }
    }

    #[test]
    fn linear_model_gradient_is_quadratic_form_derivative() {
        let mesh = build_cube_mesh(-3.0, 3.0, 4).unwrap();
        let model = KsModel::new(&mesh, helium(), ModelOptions::linear(ExternalModel::Coulomb)).unwrap();
        let c = DMatrix::from_fn(model.n_dofs(), 1, |d, _| ((d * 7919) % 13) as f64 / 13.0);
        let u = OrbitalSet::new(c.clone(), vec![2.0]).unwrap();
        let eval = model.evaluate(&u, None).unwrap();
        let g = model.gradient_load(&u, &eval);
        let expected = model.linear_hamiltonian().mul_mat(&c) * 4.0;
        assert!((g - expected).norm() < 1e-12);
    }

    #[test]
    fn energy_components_add_up() {
        let mesh = build_cube_mesh(-5.0, 5.0, 4).unwrap().refine_around(&[Point::zeros()], 3).unwrap();
        let model = KsModel::new(&mesh, helium(), ModelOptions::default()).unwrap();
        let c = DMatrix::from_fn(model.n_dofs(), 1, |d, _| {
            let p = mesh.vertices()[model.space().dofs().vertex(d)];
            (-p.norm()).exp()
        });
        let e = model.total_energy(&OrbitalSet::new(c, vec![2.0]).unwrap()).unwrap();
        assert_eq!(e.total, e.kinetic + e.external + e.hartree + e.xc + e.nuclear);
        assert!(e.kinetic > 0.0 && e.external < 0.0 && e.hartree > 0.0 && e.xc < 0.0);
    }
}
