//! The symmetric Fuchsian DPW potential on the 4-punctured sphere
//! `z⁴ = −1`:
//!
//! ```text
//! η = 1/(z⁴+1) · [ −4az                     2√2(b(z²−1) − c(z²+1)) ]
//!                [ 2√2(b(z²−1) + c(z²+1))   4az                    ] dz
//! ```
//!
//! with `a, b, c` Laurent polynomials in λ starting at `λ⁻¹`.

use serde::{Deserialize, Serialize};
use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::fuchsian::{p_punctures, symmetry_matrices, FuchsianSystem, PunctureSet};
use crate::loopalg::{re, LaurentMatrix, LaurentScalar, Matrix2c, C64};
use crate::monodromy::{LambdaSystem, ResidueForm};

/// Laurent coefficients of `(a, b, c)` at angle `t`, each starting at λ⁻¹.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialCoefficients {
    pub t: f64,
    #[serde(rename = "N")]
    pub n: i32,
    pub a: LaurentScalar,
    pub b: LaurentScalar,
    pub c: LaurentScalar,
}

impl PotentialCoefficients {
    /// Coefficients with truncation `N` the largest exponent present.
    pub fn new(t: f64, a: LaurentScalar, b: LaurentScalar, c: LaurentScalar) -> Self {
        let n = a.n_max().max(b.n_max()).max(c.n_max());
        PotentialCoefficients { t, n, a, b, c }
    }

    pub fn zero(t: f64) -> Self {
        Self::new(t, LaurentScalar::zero(), LaurentScalar::zero(), LaurentScalar::zero())
    }

    /// `(a(λ), b(λ), c(λ))`.
    pub fn eval(&self, lam: C64) -> Result<(C64, C64, C64)> {
        Ok((self.a.eval(lam)?, self.b.eval(lam)?, self.c.eval(lam)?))
    }

    /// Reads the `{t, N, a, b, c}` JSON form.
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("coefficients serialize")
    }
}

/// Angle parameter of the Lawson surface of genus `g`: `t = 1/(2g+2)`.
pub fn t_of_genus(g: u32) -> Result<f64> {
    if g == 0 {
        return Err(Error::Input("genus must be at least 1".into()));
    }
    Ok(1.0 / (2.0 * g as f64 + 2.0))
}

/// Inverse of [`t_of_genus`]; `NonCompactAngle` unless `1/t − 2` is an
/// even positive integer within 1e−9.
pub fn genus_of_t(t: f64) -> Result<u32> {
    let g = (1.0 / t - 2.0) / 2.0;
    if !(g.is_finite() && g >= 1.0 - 1e-9 && (g - g.round()).abs() < 1e-9) {
        return Err(Error::NonCompactAngle(t));
    }
    Ok(g.round() as u32)
}

/// Numerator matrix of η at `z`, for fixed values `a, b, c`.
pub fn eta_numerator(a: C64, b: C64, cc: C64, z: C64) -> Matrix2c {
    let z2 = z * z;
    let k = 2.0 * SQRT_2;
    Matrix2c::new(
        -a * z * 4.0,
        (b * (z2 - 1.0) - cc * (z2 + 1.0)) * k,
        (b * (z2 - 1.0) + cc * (z2 + 1.0)) * k,
        a * z * 4.0,
    )
}

/// η at `z` for fixed values `a, b, c` (no λ involved).
pub fn eta_values(a: C64, b: C64, cc: C64, z: C64) -> Result<Matrix2c> {
    let den = z.powi(4) + 1.0;
    if den.norm() < 1e-14 {
        return Err(Error::PoleAtPuncture(format!("{z}")));
    }
    Ok(eta_numerator(a, b, cc, z).scale(den.inv()))
}

/// dz-coefficient of η at `(z, λ)`.
pub fn eta_matrix(coeffs: &PotentialCoefficients, z: C64, lam: C64) -> Result<Matrix2c> {
    let (a, b, cc) = coeffs.eval(lam)?;
    eta_values(a, b, cc, z)
}

/// The λ⁻¹ coefficient of η at `z`; nilpotent for admissible coefficients.
pub fn eta_minus1(coeffs: &PotentialCoefficients, z: C64) -> Result<Matrix2c> {
    eta_values(coeffs.a.coeff(-1), coeffs.b.coeff(-1), coeffs.c.coeff(-1), z)
}

/// Residues at `p₁..p₄` for fixed `a, b, c`: `A_k = −p_k N(p_k)/4` since
/// `p⁴ = −1`. `det A_k = a² − b² − c²`.
pub fn residues_of_values(a: C64, b: C64, cc: C64) -> [Matrix2c; 4] {
    p_punctures().map(|p| eta_numerator(a, b, cc, p).scale(-p / 4.0))
}

/// Unvalidated residue form at λ₀, for the solver's monodromy evaluations.
pub fn residue_form(coeffs: &PotentialCoefficients, lam: C64) -> Result<ResidueForm> {
    let (a, b, cc) = coeffs.eval(lam)?;
    Ok(ResidueForm { points: PunctureSet::p_chart().points, residues: residues_of_values(a, b, cc) })
}

/// Residues at λ₀ as a validated P-chart Fuchsian system of weight t.
pub fn residues_from_eta(coeffs: &PotentialCoefficients, lam: C64) -> Result<FuchsianSystem> {
    let form = residue_form(coeffs, lam)?;
    FuchsianSystem::new(PunctureSet::p_chart(), form.residues, coeffs.t, 1e-8)
}

/// Residues as Laurent matrices in λ.
pub fn lambda_system(coeffs: &PotentialCoefficients) -> LambdaSystem {
    let basis = |a: f64, b: f64, cc: f64| residues_of_values(re(a), re(b), re(cc));
    let (ma, mb, mc) = (basis(1.0, 0.0, 0.0), basis(0.0, 1.0, 0.0), basis(0.0, 0.0, 1.0));
    let residues = std::array::from_fn(|k| {
        let la = LaurentMatrix::from_scalar(&coeffs.a, ma[k]);
        let lb = LaurentMatrix::from_scalar(&coeffs.b, mb[k]);
        let lc = LaurentMatrix::from_scalar(&coeffs.c, mc[k]);
        &(&la + &lb) + &lc
    });
    LambdaSystem { punctures: PunctureSet::p_chart(), residues }
}

/// `a² − b² − c² + t²` as a Laurent polynomial.
pub fn quadric_polynomial(coeffs: &PotentialCoefficients) -> LaurentScalar {
    let q = &(&(&coeffs.a * &coeffs.a) - &(&coeffs.b * &coeffs.b)) - &(&coeffs.c * &coeffs.c);
    let t2 = LaurentScalar::from_real(0, &[coeffs.t * coeffs.t]);
    &q + &t2
}

/// Largest coefficient of `a² − b² − c² + t²`.
pub fn check_quadric(coeffs: &PotentialCoefficients) -> f64 {
    quadric_polynomial(coeffs).coeffs.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `|(Res b)² − (Res c)²| + |(Res a)² − 2(Res b)²|` at λ = 0; zero iff
/// the λ⁻¹ part of η is nilpotent for every z.
pub fn check_nilpotent_residue(coeffs: &PotentialCoefficients) -> Result<f64> {
    let (a, b, cc) = (coeffs.a.coeff(-1), coeffs.b.coeff(-1), coeffs.c.coeff(-1));
    if cc == C64::default() {
        return Err(Error::ZeroResidueC);
    }
    Ok((b * b - cc * cc).norm() + (a * a - b * b * 2.0).norm())
}

/// `a = t(λ⁻¹−λ)/2`, `b = c = −t(λ⁻¹+λ)/(2√2)`, zero-padded to exponent N.
pub fn first_order_seed(t: f64, n: i32) -> Result<PotentialCoefficients> {
    if !(t > 0.0 && t <= 0.25) {
        return Err(Error::InvalidAngle(t));
    }
    if n < 1 {
        return Err(Error::Input(format!("truncation N = {n} must be at least 1")));
    }
    let len = (n + 2) as usize;
    let mut a = vec![0.0; len];
    let mut b = vec![0.0; len];
    a[0] = t / 2.0;
    a[2] = -t / 2.0;
    b[0] = -t / (2.0 * SQRT_2);
    b[2] = b[0];
    let bs = LaurentScalar::from_real(-1, &b);
    Ok(PotentialCoefficients { t, n, a: LaurentScalar::from_real(-1, &a), b: bs.clone(), c: bs })
}

fn symmetry_grid() -> (Vec<C64>, Vec<C64>) {
    let zs = (0..12).map(|k| C64::from_polar(0.3 + 0.15 * (k % 4) as f64, 0.37 + 0.5 * k as f64)).collect();
    let lams = (0..8).map(|j| C64::from_polar(1.0, 0.2 + std::f64::consts::PI * j as f64 / 4.0)).collect();
    (zs, lams)
}

/// Maximal deviations of `δ*η − D⁻¹ηD` and `τ*η − C⁻¹ηC` for any form
/// `f(z, λ)` (the dz-coefficient), with δ(z) = −z and τ(z) = 1/z.
pub fn symmetry_deviation(f: impl Fn(C64, C64) -> Result<Matrix2c>) -> Result<(f64, f64)> {
    let (d, cm) = symmetry_matrices();
    let (di, ci) = (d.inverse(), cm.inverse());
    let (zs, lams) = symmetry_grid();
    let (mut dd, mut dt) = (0.0f64, 0.0f64);
    for &lam in &lams {
        for &z in &zs {
            let e = f(z, lam)?;
            let pull_d = f(-z, lam)? * -1.0;
            let pull_t = f(z.inv(), lam)? * (-z.powi(2).inv());
            dd = dd.max((pull_d - di * e * d).norm());
            dt = dt.max((pull_t - ci * e * cm).norm());
        }
    }
    Ok((dd, dt))
}

/// Equivariance of the ansatz under δ and τ, as `(δ_dev, τ_dev)`.
pub fn check_symmetries(coeffs: &PotentialCoefficients) -> (f64, f64) {
    symmetry_deviation(|z, lam| eta_matrix(coeffs, z, lam)).unwrap_or((f64::INFINITY, f64::INFINITY))
}

/// Unit-circle samples `e^{iπ(2j+1)/n}`, `j = 0..n`.
pub fn unit_circle_samples(n: usize) -> Vec<C64> {
    (0..n).map(|j| C64::from_polar(1.0, std::f64::consts::PI * (2 * j + 1) as f64 / n as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loopalg::{c, eigenvalues_tracefree, is_nilpotent};
    use proptest::prelude::*;

    #[test]
    fn seed_coefficients() {
        let s = first_order_seed(0.05, 6).unwrap();
        assert_eq!(s.a.coeff(-1), re(0.025));
        assert_eq!(s.a.coeff(1), re(-0.025));
        assert!((s.b.coeff(-1).re + 0.0176777).abs() < 1e-7);
        assert_eq!(s.b.coeff(1), s.b.coeff(-1));
        assert_eq!(s.b, s.c);
        assert_eq!(s.n, 6);
        // zero up to the rounding of t/(2√2)
        assert!(check_quadric(&s) <= 4.0 * f64::EPSILON * 0.05f64.powi(2));
        assert!(check_nilpotent_residue(&s).unwrap() <= 4.0 * f64::EPSILON * 0.05f64.powi(2));
        assert!(matches!(first_order_seed(0.3, 6), Err(Error::InvalidAngle(_))));
        assert!(matches!(first_order_seed(0.1, 0), Err(Error::Input(_))));
    }

    #[test]
    fn seed_quadric_by_expansion() {
        // t²(¼(λ⁻¹−λ)² − 2·⅛(λ⁻¹+λ)²) = t²(−½ − ½) = −t²
        let t = 0.13;
        let s = first_order_seed(t, 3).unwrap();
        for lam in unit_circle_samples(7) {
            let (a, b, cc) = s.eval(lam).unwrap();
            assert!((a * a - b * b - cc * cc + t * t).norm() < 1e-16);
        }
    }

    #[test]
    fn eta_examples() {
        let z0 = PotentialCoefficients::zero(0.1);
        assert_eq!(eta_matrix(&z0, c(0.3, 0.1), re(1.0)).unwrap(), Matrix2c::zero());
        let s = first_order_seed(0.05, 2).unwrap();
        let e = eta_matrix(&s, re(0.0), re(1.0)).unwrap();
        assert!(e.a11().norm() < 1e-16);
        assert!((e.a12() - 0.2).norm() < 1e-15);
        assert!(matches!(eta_matrix(&s, p_punctures()[2], re(1.0)), Err(Error::PoleAtPuncture(_))));
        assert!(matches!(eta_matrix(&s, re(0.5), re(0.0)), Err(Error::PoleAtZero)));
    }

    #[test]
    fn residues_are_limits_and_sum_to_zero() {
        let s = first_order_seed(0.1, 2).unwrap();
        let lam = c(0.6, 0.8);
        let form = residue_form(&s, lam).unwrap();
        let sum = form.residues.iter().fold(Matrix2c::zero(), |acc, a| acc + *a);
        assert!(sum.norm() < 1e-15);
        for (k, p) in p_punctures().iter().enumerate() {
            let h = 1e-7;
            let lim = eta_matrix(&s, p + h, lam).unwrap() * h;
            assert!((lim - form.residues[k]).norm() < 1e-6);
        }
        // the partial-fraction sum reproduces η
        let z = c(0.2, -0.7);
        let pf = p_punctures().iter().zip(form.residues.iter()).fold(Matrix2c::zero(), |acc, (p, a)| acc + a.scale((z - p).inv()));
        assert!((pf - eta_matrix(&s, z, lam).unwrap()).norm() < 1e-13);
    }

    #[test]
    fn seed_residues_have_weight_t() {
        let t = 0.07;
        let s = first_order_seed(t, 4).unwrap();
        for lam in unit_circle_samples(16) {
            let sys = residues_from_eta(&s, lam).unwrap();
            for a in &sys.residues {
                let (mu, _) = eigenvalues_tracefree(a).unwrap();
                assert!((mu - t).norm() < 1e-10);
            }
        }
        assert!(residues_from_eta(&PotentialCoefficients::zero(t), re(1.0)).is_err());
    }

    #[test]
    fn lambda_system_matches_direct_residues() {
        let s = first_order_seed(0.09, 3).unwrap();
        let ls = lambda_system(&s);
        let lam = c(-0.28, 0.96);
        let a = ls.at(lam).unwrap();
        let b = residue_form(&s, lam).unwrap();
        for k in 0..4 {
            assert!((a.residues[k] - b.residues[k]).norm() < 1e-15);
        }
    }

    #[test]
    fn quadric_deviation_examples() {
        let z0 = PotentialCoefficients::zero(0.2);
        assert!((check_quadric(&z0) - 0.04).abs() < 1e-17);
        let s = first_order_seed(0.1, 3).unwrap();
        let dev = |eps: f64| {
            let mut p = s.clone();
            p.a.coeffs[1] += re(eps);
            check_quadric(&p)
        };
        let (d1, d2) = (dev(1e-6), dev(2e-6));
        assert!(d1 > 0.0 && (d2 / d1 - 2.0).abs() < 1e-3);
    }

    #[test]
    fn nilpotency_examples() {
        let mut p = PotentialCoefficients::zero(0.1);
        p.a = LaurentScalar::from_real(-1, &[0.0]);
        p.b = LaurentScalar::from_real(-1, &[1.0]);
        p.c = LaurentScalar::from_real(-1, &[2.0]);
        assert!(check_nilpotent_residue(&p).unwrap() > 1.0);
        p.c = LaurentScalar::from_real(-1, &[0.0]);
        assert_eq!(check_nilpotent_residue(&p), Err(Error::ZeroResidueC));
        let s = first_order_seed(0.1, 2).unwrap();
        let mu = c(0.7, -1.1);
        let mut q = s.clone();
        q.a = s.a.scale(mu);
        q.b = s.b.scale(mu);
        q.c = LaurentScalar::from_real(-1, &[0.3]).scale(mu);
        let r0 = {
            let mut q0 = s.clone();
            q0.c = LaurentScalar::from_real(-1, &[0.3]);
            check_nilpotent_residue(&q0).unwrap()
        };
        assert!((check_nilpotent_residue(&q).unwrap() - mu.norm_sqr() * r0).abs() < 1e-14);
    }

    #[test]
    fn seed_eta_minus1_nilpotent_and_nonvanishing() {
        let s = first_order_seed(0.05, 2).unwrap();
        for k in 0..50 {
            let z = C64::from_polar(0.1 + 0.03 * k as f64, 1.3 * k as f64);
            let m = eta_minus1(&s, z).unwrap();
            assert!(m.norm() > 0.0);
            assert!(is_nilpotent(&m, 1e-14));
        }
    }

    #[test]
    fn ansatz_is_equivariant_and_negative_control() {
        let (dd, dt) = check_symmetries(&first_order_seed(0.05, 3).unwrap());
        assert!(dd < 1e-12 && dt < 1e-12);
        let s = first_order_seed(0.05, 3).unwrap();
        let broken = symmetry_deviation(|z, lam| Ok(eta_matrix(&s, z, lam)? + Matrix2c::diag(re(0.01), re(-0.01)))).unwrap();
        assert!(broken.0 > 1e-3);
    }

    #[test]
    fn genus_map() {
        assert_eq!(t_of_genus(2).unwrap(), 1.0 / 6.0);
        assert_eq!(genus_of_t(0.25).unwrap(), 1);
        assert_eq!(genus_of_t(1.0 / 6.0).unwrap(), 2);
        assert!(matches!(genus_of_t(0.2), Err(Error::NonCompactAngle(_))));
        assert!(t_of_genus(0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let s = first_order_seed(0.05, 2).unwrap();
        let js = s.to_json();
        assert!(js.contains("\"N\": 2"));
        assert_eq!(PotentialCoefficients::from_json(&js).unwrap(), s);
    }

    fn arb_coeffs() -> impl Strategy<Value = PotentialCoefficients> {
        prop::collection::vec(-1.0f64..1.0, 18).prop_map(|v| {
            let mk = |o: usize| LaurentScalar::new(-1, (0..3).map(|k| c(v[o + 2 * k], v[o + 2 * k + 1])).collect());
            PotentialCoefficients::new(0.1, mk(0), mk(6), mk(12))
        })
    }

    proptest! {
        #[test]
        fn random_coefficients_are_equivariant(p in arb_coeffs()) {
            let (dd, dt) = check_symmetries(&p);
            prop_assert!(dd < 1e-12 && dt < 1e-12);
        }

        #[test]
        fn residue_det_is_quadric(p in arb_coeffs(), th in 0.0f64..6.28) {
            let lam = C64::from_polar(1.0, th);
            let (a, b, cc) = p.eval(lam).unwrap();
            for r in residues_of_values(a, b, cc) {
                prop_assert!((r.det() - (a * a - b * b - cc * cc)).norm() < 1e-12);
            }
        }
    }
}
