//! Dense generalized-eigenproblem check of the flow on a linear model.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{initial_mesh, run, RunConfig};
use crate::error::{Error, Result};
use crate::ksmodel::KsModel;

/// Largest interior dof count accepted by the dense eigensolver.
pub const MAX_ORACLE_DOFS: usize = 3000;

/// Eigenvalues within this relative distance of `λ_N` count as one cluster
/// when measuring the subspace angle, so near-degenerate levels split by the
/// mesh do not make the angle ill-defined.
pub const CLUSTER_TOL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub dofs: usize,
    pub flow_energy: f64,
    /// `Σ_i f_i λ_i` with occupations sorted in decreasing order.
    pub eigen_energy: f64,
    pub relative_gap: f64,
    /// Largest principal angle between the flow orbitals and the eigenspace.
    pub subspace_angle: f64,
    /// Dimension of the comparison eigenspace (≥ N when `λ_N` is clustered).
    pub eigenspace_dim: usize,
    pub eigenvalues: Vec<f64>,
}

/// Ascending eigenvalues and M-orthonormal eigenvectors of `(H, M)`, the latter
/// returned in the Cholesky-transformed basis `Lᵀx`.
fn generalized_eigen(h: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Config("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Config("singular Cholesky factor".into()))?;
    let c = &linv * h * linv.transpose();
    let eig = ((&c + c.transpose()) * 0.5).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(c.nrows(), order.len(), |r, j| eig.eigenvectors[(r, order[j])]);
    Ok((values, vectors, l.transpose()))
}

/// Runs the flow on a configuration without Hartree and xc and compares it with
/// a dense solve of `(K/2 + W_ext) x = λ M x` on the final mesh.
pub fn run_linear_oracle(config: &RunConfig) -> Result<OracleReport> {
    if config.hartree != super::HartreeMode::None || config.xc {
        return Err(Error::Config("the linear oracle needs hartree = none and xc = off".into()));
    }
    let n = config.occupations.len();
    let dofs = KsModel::new(&initial_mesh(config)?, config.molecule()?, config.model_options())?.n_dofs();
    if dofs > MAX_ORACLE_DOFS {
        return Err(Error::OracleSizeCap(format!("{dofs} dofs exceed {MAX_ORACLE_DOFS}")));
    }
    if n >= dofs {
        return Err(Error::OracleSizeCap(format!("{n} orbitals need more than {dofs} dofs")));
    }
    let report = run(config);
    if let Some(e) = report.error {
        return Err(e);
    }
    let mesh = report.final_mesh.expect("successful run has a final mesh");
    let orbitals = report.final_orbitals.expect("successful run has final orbitals");
    let model = KsModel::new(&mesh, config.molecule()?, config.model_options())?;
    if model.n_dofs() > MAX_ORACLE_DOFS {
        return Err(Error::OracleSizeCap(format!("{} dofs exceed {MAX_ORACLE_DOFS}", model.n_dofs())));
    }
    let flow_energy = model.total_energy(&orbitals)?.total;

    let (values, vectors, lt) = generalized_eigen(&model.linear_hamiltonian().to_dense(), &model.mass().to_dense())?;
    let mut occupations = config.occupations.clone();
    occupations.sort_by(|a, b| b.total_cmp(a));
    let eigen_energy: f64 = occupations.iter().zip(&values).map(|(f, l)| f * l).sum();

    let lambda_n = values[n - 1];
    let dim = n + values[n..]
        .iter()
        .take_while(|&&l| l - lambda_n <= CLUSTER_TOL * lambda_n.abs().max(1.0))
        .count();
    let y = &lt * &orbitals.coefficients;
    let q = vectors.columns(0, dim);
    let outside = &y - &q * (q.transpose() * &y);
    let sin = outside.singular_values().max().min(1.0);

    Ok(OracleReport {
        dofs: model.n_dofs(),
        flow_energy,
        eigen_energy,
        relative_gap: (flow_energy - eigen_energy).abs() / eigen_energy.abs(),
        subspace_angle: sin.asin(),
        eigenspace_dim: dim,
        eigenvalues: values.into_iter().take(dim + 2).collect(),
    })
}
