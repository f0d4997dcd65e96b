//! Unpolarized LDA: Dirac exchange with Perdew–Zunger (1981) correlation.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Energy per electron and potential at one density value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XcEval {
    pub eps_xc: f64,
    pub v_xc: f64,
}

// PZ81 Ceperley–Alder fit, unpolarized
const GAMMA: f64 = -0.1423;
const BETA1: f64 = 1.0529;
const BETA2: f64 = 0.3334;
const A: f64 = 0.0311;
const B: f64 = -0.048;
const C: f64 = 0.0020;
const D: f64 = -0.0116;

/// Dirac exchange energy per electron and potential.
pub fn exchange(rho: f64) -> (f64, f64) {
    let cx = -0.75 * (3.0 / PI).cbrt();
    let e = cx * rho.cbrt();
    (e, 4.0 / 3.0 * e)
}

/// PZ81 correlation energy per electron and potential as functions of r_s.
pub fn correlation(rs: f64) -> (f64, f64) {
    if rs >= 1.0 {
        let sq = rs.sqrt();
        let den = 1.0 + BETA1 * sq + BETA2 * rs;
        let e = GAMMA / den;
        let v = e * (1.0 + 7.0 / 6.0 * BETA1 * sq + 4.0 / 3.0 * BETA2 * rs) / den;
        (e, v)
    } else {
        let ln = rs.ln();
        let e = A * ln + B + C * rs * ln + D * rs;
        let v = A * ln + (B - A / 3.0) + 2.0 / 3.0 * C * rs * ln + (2.0 * D - C) / 3.0 * rs;
        (e, v)
    }
}

pub fn xc_lda(rho: f64) -> Result<XcEval> {
    if rho < 0.0 || rho.is_nan() {
        return Err(Error::NegativeDensity(rho));
    }
    Ok(xc_lda_unchecked(rho))
}

/// [`xc_lda`] for densities already known to be non-negative.
#[inline]
pub fn xc_lda_unchecked(rho: f64) -> XcEval {
    if rho <= 0.0 {
        return XcEval { eps_xc: 0.0, v_xc: 0.0 };
    }
    let (ex, vx) = exchange(rho);
    // written so that subnormal densities do not overflow
    let rs = (3.0 / (4.0 * PI)).cbrt() / rho.cbrt();
    let (ec, vc) = correlation(rs);
    XcEval {
        eps_xc: ex + ec,
        v_xc: vx + vc,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_density() {
        assert_eq!(xc_lda(0.0).unwrap(), XcEval { eps_xc: 0.0, v_xc: 0.0 });
        assert!(matches!(xc_lda(-1e-3), Err(Error::NegativeDensity(_))));
    }

    #[test]
    fn tiny_densities_stay_finite() {
        for rho in [1e-300, 5e-310, f64::MIN_POSITIVE] {
            let x = xc_lda(rho).unwrap();
            assert!(x.eps_xc.is_finite() && x.v_xc.is_finite(), "{rho}");
            assert!(x.eps_xc <= 0.0 && x.v_xc <= 0.0);
        }
    }

    #[test]
    fn dirac_exchange_at_unit_density() {
        let (ex, vx) = exchange(1.0);
        assert!((ex + 0.738_558_766_382_022_4).abs() < 1e-12);
        assert!((vx - 4.0 / 3.0 * ex).abs() < 1e-15);
    }

    /// Correlation transcribed in the "textbook" form ε_c − (r_s/3) dε_c/dr_s
    /// with the derivative taken by hand, independent of the closed forms above.
    fn pz81_reference(rs: f64) -> (f64, f64) {
        if rs >= 1.0 {
            let den = 1.0 + 1.0529 * rs.sqrt() + 0.3334 * rs;
            let e = -0.1423 / den;
            let de = 0.1423 * (0.5 * 1.0529 / rs.sqrt() + 0.3334) / (den * den);
            (e, e - rs / 3.0 * de)
        } else {
            let e = 0.0311 * rs.ln() - 0.048 + 0.0020 * rs * rs.ln() - 0.0116 * rs;
            let de = 0.0311 / rs + 0.0020 * (rs.ln() + 1.0) - 0.0116;
            (e, e - rs / 3.0 * de)
        }
    }

    #[test]
    fn correlation_matches_independent_transcription() {
        for &rs in &[0.01, 0.1, 0.5, 0.999, 1.0, 1.5, 4.0, 10.0, 100.0] {
            let (e, v) = correlation(rs);
            let (er, vr) = pz81_reference(rs);
            assert!((e - er).abs() < 1e-14, "rs={rs}");
            assert!((v - vr).abs() < 1e-14, "rs={rs}");
        }
    }

    #[test]
    fn potential_is_density_derivative() {
        let mut rho: f64 = 1e-8;
        while rho <= 1e3 {
            let h = 1e-5 * rho;
            let e = |r: f64| r * xc_lda(r).unwrap().eps_xc;
            let fd = (e(rho + h) - e(rho - h)) / (2.0 * h);
            let v = xc_lda(rho).unwrap().v_xc;
            // PZ81 has a kink at r_s = 1 (rho = 3/(4π)); skip points straddling it
            let kink = 3.0 / (4.0 * PI);
            if ((rho - kink) / kink).abs() > 1e-4 {
                assert!(((fd - v) / v).abs() < 1e-6, "rho={rho}: fd {fd} v {v}");
            }
            rho *= 1.37;
        }
    }
}
