//! Gradient-recovery error indicators and Dörfler marking.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::FemSpace;
use crate::mesh::Mesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorMode {
    /// `h_τ ∫_τ |∇R(∇ρ)|²`.
    #[default]
    Literal,
    /// `∫_τ |R(∇ρ) − ∇ρ|²` (Zienkiewicz–Zhu).
    Zz,
}

impl FromStr for IndicatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(IndicatorMode::Literal),
            "zz" => Ok(IndicatorMode::Zz),
            other => Err(Error::Config(format!("unknown indicator mode '{other}' (expected literal or zz)"))),
        }
    }
}

impl fmt::Display for IndicatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IndicatorMode::Literal => "literal",
            IndicatorMode::Zz => "zz",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorField {
    pub eta: Vec<f64>,
    pub total: f64,
}

impl IndicatorField {
    pub fn new(eta: Vec<f64>) -> Self {
        let total = eta.iter().sum();
        IndicatorField { eta, total }
    }

    /// Index of the largest indicator (lowest index on ties).
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (t, &e) in self.eta.iter().enumerate() {
            if best.map_or(true, |b| e > self.eta[b]) {
                best = Some(t);
            }
        }
        best
    }

    /// Writes `tet,cx,cy,cz,eta` rows.
    pub fn write_csv(&self, path: &Path, mesh: &Mesh) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut emit = || -> std::io::Result<()> {
            writeln!(w, "tet,cx,cy,cz,eta")?;
            for (t, e) in self.eta.iter().enumerate() {
                let c = mesh.centroid(t);
                writeln!(w, "{t},{},{},{},{e:e}", c[0], c[1], c[2])?;
            }
            w.flush()
        };
        emit().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkSet {
    pub marked: Vec<usize>,
    pub theta: f64,
}

impl MarkSet {
    pub fn is_empty(&self) -> bool {
        self.marked.is_empty()
    }

    pub fn len(&self) -> usize {
        self.marked.len()
    }
}

/// Volume-weighted average of the element gradients around each vertex.
pub fn recover_gradient(space: &FemSpace, rho: &[f64]) -> Vec<[f64; 3]> {
    let mesh = space.mesh();
    let mut acc = vec![[0.0; 3]; mesh.n_vertices()];
    let mut weight = vec![0.0; mesh.n_vertices()];
    for (t, tet) in mesh.tets().iter().enumerate() {
        let g = space.gradient_on(t, rho);
        let vol = space.volumes()[t];
        for &v in tet {
            for d in 0..3 {
                acc[v][d] += vol * g[d];
            }
            weight[v] += vol;
        }
    }
    for (a, w) in acc.iter_mut().zip(&weight) {
        if *w > 0.0 {
            a.iter_mut().for_each(|x| *x /= w);
        }
    }
    acc
}

/// Per-tetrahedron error indicator of the nodal density `rho`.
pub fn indicator(space: &FemSpace, rho: &[f64], mode: IndicatorMode) -> IndicatorField {
    let mesh = space.mesh();
    let recovered = recover_gradient(space, rho);
    let eta = mesh
        .tets()
        .iter()
        .enumerate()
        .map(|(t, tet)| {
            let vol = space.volumes()[t];
            match mode {
                IndicatorMode::Literal => {
                    let grads = space.barycentric_gradients(t);
                    let mut frob = 0.0;
                    for d in 0..3 {
                        for k in 0..3 {
                            let j: f64 = (0..4).map(|a| recovered[tet[a]][d] * grads[a][k]).sum();
                            frob += j * j;
                        }
                    }
                    mesh.diameter(t) * vol * frob
                }
                IndicatorMode::Zz => {
                    let g = space.gradient_on(t, rho);
                    let mut s = 0.0;
                    for d in 0..3 {
                        let e: [f64; 4] = std::array::from_fn(|a| recovered[tet[a]][d] - g[d]);
                        let sum: f64 = e.iter().sum();
                        let sq: f64 = e.iter().map(|x| x * x).sum();
                        s += vol / 20.0 * (sq + sum * sum);
                    }
                    s
                }
            }
        })
        .collect();
    IndicatorField::new(eta)
}

/// Greedy Dörfler marking: the shortest prefix of tets in descending η
/// (ties by index) whose sum reaches `theta · total`.
pub fn mark(eta: &IndicatorField, theta: f64) -> Result<MarkSet> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Config(format!("theta must lie in (0, 1), got {theta}")));
    }
    if !(eta.total > 0.0) {
        return Ok(MarkSet {
            marked: Vec::new(),
            theta,
        });
    }
    let mut order: Vec<usize> = (0..eta.eta.len()).collect();
    order.sort_by(|&a, &b| eta.eta[b].total_cmp(&eta.eta[a]).then(a.cmp(&b)));
    let target = theta * eta.total;
    let mut sum = 0.0;
    let mut marked = Vec::new();
    for t in order {
        marked.push(t);
        sum += eta.eta[t];
        if sum >= target {
            break;
        }
    }
    Ok(MarkSet { marked, theta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_cube_mesh, Point};
    use proptest::prelude::*;

    fn nodal(mesh: &Mesh, f: impl Fn(&Point) -> f64) -> Vec<f64> {
        mesh.vertices().iter().map(f).collect()
    }

    #[test]
    fn affine_density_has_exact_recovery_and_zero_indicator() {
        let mesh = build_cube_mesh(-1.0, 1.0, 4).unwrap().refine_around(&[Point::new(0.2, 0.1, 0.0)], 2).unwrap();
        let space = FemSpace::new(&mesh);
        let rho = nodal(&mesh, |p| 1.0 + 2.0 * p[0] - p[1] + 0.5 * p[2]);
        for g in recover_gradient(&space, &rho) {
            assert!((g[0] - 2.0).abs() < 1e-12 && (g[1] + 1.0).abs() < 1e-12 && (g[2] - 0.5).abs() < 1e-12);
        }
        for mode in [IndicatorMode::Literal, IndicatorMode::Zz] {
            let eta = indicator(&space, &rho, mode);
            assert!(eta.eta.iter().all(|e| e.abs() < 1e-20), "{mode}");
        }
        let zero = indicator(&space, &vec![0.0; mesh.n_vertices()], IndicatorMode::Literal);
        assert_eq!(zero.total, 0.0);
        assert!(mark(&zero, 0.5).unwrap().is_empty());
    }

    #[test]
    fn quadratic_recovery_converges_linearly() {
        let mut mesh = build_cube_mesh(-1.0, 1.0, 4).unwrap();
        let mut errors = Vec::new();
        for _ in 0..3 {
            let space = FemSpace::new(&mesh);
            let rho = nodal(&mesh, |p| p[0] * p[0]);
            let rec = recover_gradient(&space, &rho);
            let err = mesh
                .vertices()
                .iter()
                .enumerate()
                .filter(|(v, _)| !mesh.is_boundary(*v))
                .map(|(v, p)| {
                    let g = rec[v];
                    ((g[0] - 2.0 * p[0]).powi(2) + g[1].powi(2) + g[2].powi(2)).sqrt()
                })
                .fold(0.0, f64::max);
            errors.push(err);
            let h = mesh.element_sizes().max();
            assert!(err <= h, "{err} > {h}");
            for _ in 0..3 {
                mesh = mesh.refine_uniform().unwrap();
            }
        }
    }

    #[test]
    fn indicator_concentrates_at_a_cusp() {
        let mesh = build_cube_mesh(-4.0, 4.0, 8).unwrap().refine_around(&[Point::zeros()], 2).unwrap();
        let space = FemSpace::new(&mesh);
        let rho = nodal(&mesh, |p| (-2.0 * p.norm()).exp());
        let eta = indicator(&space, &rho, IndicatorMode::Literal);
        let t = eta.argmax().unwrap();
        assert!(mesh.centroid(t).norm() <= 2.0 * mesh.diameter(t));
        let total: f64 = eta.eta.iter().sum();
        assert!((eta.total - total).abs() <= 1e-13 * total);
    }

    #[test]
    fn literal_indicator_decreases_under_uniform_refinement() {
        let mut mesh = build_cube_mesh(-3.0, 3.0, 8).unwrap();
        let mut totals = Vec::new();
        for _ in 0..3 {
            let space = FemSpace::new(&mesh);
            let rho = nodal(&mesh, |p| (-0.2 * p.norm_squared()).exp());
            totals.push(indicator(&space, &rho, IndicatorMode::Literal).total);
            for _ in 0..3 {
                mesh = mesh.refine_uniform().unwrap();
            }
        }
        assert!(totals.windows(2).all(|w| w[1] <= w[0]), "{totals:?}");
    }

    #[test]
    fn marking_examples() {
        let eq = IndicatorField::new(vec![1.0; 7]);
        assert_eq!(mark(&eq, 0.5).unwrap().len(), 4);
        let eq = IndicatorField::new(vec![1.0; 8]);
        assert_eq!(mark(&eq, 0.5).unwrap().len(), 4);
        let dom = IndicatorField::new(vec![8.0, 1.0, 1.0]);
        assert_eq!(mark(&dom, 0.5).unwrap().marked, vec![0]);
        let tie = IndicatorField::new(vec![1.0, 3.0, 3.0, 1.0]);
        assert_eq!(mark(&tie, 0.5).unwrap().marked, vec![1, 2]);
        assert!(mark(&dom, 1.0).is_err());
        assert!(mark(&dom, 0.0).is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("zz".parse::<IndicatorMode>().unwrap(), IndicatorMode::Zz);
        assert_eq!("literal".parse::<IndicatorMode>().unwrap(), IndicatorMode::Literal);
        assert!("other".parse::<IndicatorMode>().is_err());
    }

    proptest! {
        #[test]
        fn dorfler_mark_is_minimal(eta in proptest::collection::vec(0.0f64..10.0, 1..40), theta in 0.05f64..0.95) {
            let field = IndicatorField::new(eta.clone());
            prop_assume!(field.total > 0.0);
            let set = mark(&field, theta).unwrap();
            let sum: f64 = set.marked.iter().map(|&t| eta[t]).sum();
            prop_assert!(sum >= theta * field.total * (1.0 - 1e-12));
            // no marked set of smaller cardinality can reach the bound
            let mut sorted = eta.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let best_smaller: f64 = sorted[..set.len() - 1].iter().sum();
            prop_assert!(best_smaller < theta * field.total);
            // dropping the smallest marked element breaks the bound
            let smallest = set.marked.iter().map(|&t| eta[t]).fold(f64::INFINITY, f64::min);
            prop_assert!(sum - smallest < theta * field.total);
        }
    }
}
