use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Symmetric sparse matrix in compressed-row layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    pub(crate) n: usize,
    pub(crate) row_ptr: Vec<usize>,
    pub(crate) cols: Vec<u32>,
    pub(crate) values: Vec<f64>,
}

impl SparseOperator {
    pub(crate) fn from_pattern(row_ptr: Vec<usize>, cols: Vec<u32>) -> Self {
        let nnz = cols.len();
        SparseOperator {
            n: row_ptr.len() - 1,
            row_ptr,
            cols,
            values: vec![0.0; nnz],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        match row.binary_search(&(j as u32)) {
            Ok(k) => self.values[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()]
            .iter()
            .zip(&self.values[r])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.values[self.row_ptr[i]..self.row_ptr[i + 1]].iter().sum())
            .collect()
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.cols[k] as usize];
            }
            y[i] = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `self * x` applied column by column.
    pub fn mul_mat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.n, "operator/matrix dimension mismatch");
        let mut y = DMatrix::zeros(self.n, x.ncols());
        for j in 0..x.ncols() {
            self.mul_vec_into(x.column(j).as_slice(), y.column_mut(j).as_mut_slice());
        }
        y
    }

    /// `xᵀ A y`.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            let mut r = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                r += self.values[k] * y[self.cols[k] as usize];
            }
            s += x[i] * r;
        }
        s
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// `self + c * other`; both operators must share a sparsity pattern.
    pub fn add_scaled(&self, c: f64, other: &SparseOperator) -> Self {
        assert!(self.same_pattern(other), "operators have different sparsity patterns");
        let mut out = self.clone();
        for (v, o) in out.values.iter_mut().zip(&other.values) {
            *v += c * o;
        }
        out
    }

    pub fn same_pattern(&self, other: &SparseOperator) -> bool {
        self.n == other.n && self.row_ptr == other.row_ptr && self.cols == other.cols
    }

    /// Largest `|A_ij - A_ji|` relative to the largest entry magnitude.
    pub fn symmetry_defect(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    }

    /// Builds an operator from a dense symmetric matrix, keeping nonzeros.
    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        assert_eq!(a.nrows(), a.ncols());
        let n = a.nrows();
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut values = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if a[(i, j)] != 0.0 || i == j {
                    cols.push(j as u32);
                    values.push(a[(i, j)]);
                }
            }
            row_ptr.push(cols.len());
        }
        SparseOperator { n, row_ptr, cols, values }
    }
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub rel_tol: f64,
    /// Iteration cap; `None` means `10 n`.
    pub max_iterations: Option<usize>,
}

impl CgOptions {
    pub fn with_tol(rel_tol: f64) -> Self {
        CgOptions {
            rel_tol,
            max_iterations: None,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` for symmetric positive definite `A` to `‖Ax − b‖ ≤ rel_tol ‖b‖`.
pub fn solve_spd(a: &SparseOperator, b: &[f64], rel_tol: f64) -> Result<Vec<f64>> {
    let mut x = vec![0.0; b.len()];
    solve_spd_in_place(a, b, &mut x, CgOptions::with_tol(rel_tol))?;
    Ok(x)
}

/// Jacobi-preconditioned conjugate gradients starting from the contents of `x`.
pub fn solve_spd_in_place(a: &SparseOperator, b: &[f64], x: &mut [f64], opts: CgOptions) -> Result<SolveReport> {
    let n = a.dim();
    if b.len() != n || x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("vectors of length {n}"),
            found: format!("b: {}, x: {}", b.len(), x.len()),
        });
    }
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveReport {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let target = opts.rel_tol * b_norm;
    let max_it = opts.max_iterations.unwrap_or(10 * n.max(1));

    let mut r = a.mul_vec(x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut res = dot(&r, &r).sqrt();
    if res <= target {
        return Ok(SolveReport {
            iterations: 0,
            relative_residual: res / b_norm,
        });
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_it {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::SolverStagnation {
                iterations: it,
                residual: res / b_norm,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = dot(&r, &r).sqrt();
        if res <= target {
            // guard against drift of the recursive residual
            let mut true_r = a.mul_vec(x);
            for (ri, bi) in true_r.iter_mut().zip(b) {
                *ri = bi - *ri;
            }
            let true_res = dot(&true_r, &true_r).sqrt();
            if true_res <= target {
                return Ok(SolveReport {
                    iterations: it,
                    relative_residual: true_res / b_norm,
                });
            }
            r = true_r;
            res = true_res;
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverStagnation {
        iterations: max_it,
        residual: res / b_norm,
    })
}
