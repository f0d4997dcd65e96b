//! Quadrature rules on the reference tetrahedron, in barycentric form with
//! weights normalised to sum to one (multiply by the element volume).

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

fn symmetric_orbit_4(a: f64, b: f64) -> Vec<[f64; 4]> {
    (0..4)
        .map(|i| {
            let mut p = [b; 4];
            p[i] = a;
            p
        })
        .collect()
}

fn symmetric_orbit_6(a: f64, b: f64) -> Vec<[f64; 4]> {
    let mut out = Vec::with_capacity(6);
    for i in 0..4 {
        for j in (i + 1)..4 {
            let mut p = [b; 4];
            p[i] = a;
            p[j] = a;
            out.push(p);
        }
    }
    out
}

impl QuadratureRule {
    /// Vertex (nodal) rule, degree 1. Applied to `∫ w φ_i φ_j` it yields the
    /// row-lumped diagonal `δ_ij w(x_i) |τ|/4`.
    pub fn vertex() -> Self {
        let points = (0..4)
            .map(|i| {
                let mut p = [0.0; 4];
                p[i] = 1.0;
                p
            })
            .collect();
        QuadratureRule {
            points,
            weights: vec![0.25; 4],
            degree: 1,
        }
    }

    pub fn centroid() -> Self {
        QuadratureRule {
            points: vec![[0.25; 4]],
            weights: vec![1.0],
            degree: 1,
        }
    }

    /// Four-point rule exact for quadratics.
    pub fn degree2() -> Self {
        let a = 0.585_410_196_624_968_5;
        let b = 0.138_196_601_125_010_5;
        QuadratureRule {
            points: symmetric_orbit_4(a, b),
            weights: vec![0.25; 4],
            degree: 2,
        }
    }

    /// Keast's eleven-point rule exact for quartics (one negative weight).
    pub fn degree4() -> Self {
        let mut points = vec![[0.25; 4]];
        let mut weights = vec![-0.078_933_333_333_333_33];
        let orbit4 = symmetric_orbit_4(0.785_714_285_714_285_7, 0.071_428_571_428_571_43);
        weights.extend(std::iter::repeat(0.045_733_333_333_333_33).take(orbit4.len()));
        points.extend(orbit4);
        let orbit6 = symmetric_orbit_6(0.399_403_576_166_799_2, 0.100_596_423_833_200_8);
        weights.extend(std::iter::repeat(0.149_333_333_333_333_3).take(orbit6.len()));
        points.extend(orbit6);
        QuadratureRule {
            points,
            weights,
            degree: 4,
        }
    }

    /// Collapsed (Duffy) tensor Gauss–Legendre rule with `n` points per
    /// direction; exact for polynomials of total degree `2n - 3`.
    pub fn collapsed(n: usize) -> Self {
        assert!(n >= 2, "collapsed rule needs at least two points per direction");
        let (x, w) = gauss_legendre(n);
        // map to [0, 1]
        let x: Vec<f64> = x.iter().map(|&t| 0.5 * (t + 1.0)).collect();
        let w: Vec<f64> = w.iter().map(|&t| 0.5 * t).collect();
        let mut points = Vec::with_capacity(n * n * n);
        let mut weights = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let (u, v, s) = (x[i], x[j], x[k]);
                    let l1 = u;
                    let l2 = (1.0 - u) * v;
                    let l3 = (1.0 - u) * (1.0 - v) * s;
                    let l0 = 1.0 - l1 - l2 - l3;
                    // Jacobian (1-u)^2 (1-v); the reference volume is 1/6
                    let jac = (1.0 - u).powi(2) * (1.0 - v);
                    points.push([l0, l1, l2, l3]);
                    weights.push(6.0 * w[i] * w[j] * w[k] * jac);
                }
            }
        }
        QuadratureRule {
            points,
            weights,
            degree: 2 * n - 3,
        }
    }

    /// A rule of at least the requested degree.
    pub fn of_degree(degree: usize) -> Self {
        match degree {
            0 | 1 => Self::centroid(),
            2 => Self::degree2(),
            3 | 4 => Self::degree4(),
            d => Self::collapsed((d + 4) / 2),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { x } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}
