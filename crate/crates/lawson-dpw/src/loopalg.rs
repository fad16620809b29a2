//! Complex 2×2 matrices and finite Laurent polynomials in the spectral
//! parameter λ.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Default tolerance for algebraic identities.
pub const TOL: f64 = 1e-10;

pub const I: C64 = C64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Row-major complex 2×2 matrix `[[a11, a12], [a21, a22]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Matrix2c {
    pub m: [C64; 4],
}

impl Matrix2c {
    pub const fn new(a11: C64, a12: C64, a21: C64, a22: C64) -> Self {
        Matrix2c { m: [a11, a12, a21, a22] }
    }

    pub fn from_real(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        Self::new(re(a11), re(a12), re(a21), re(a22))
    }

    /// Trace-free constructor; rejects `|a11 + a22| >= tol`.
    pub fn new_tracefree(a11: C64, a12: C64, a21: C64, a22: C64, tol: f64) -> Result<Self> {
        let tr = (a11 + a22).norm();
        if tr >= tol {
            return Err(Error::NotTraceFree(tr));
        }
        Ok(Self::new(a11, a12, a21, a22))
    }

    pub const fn zero() -> Self {
        let z = C64::new(0.0, 0.0);
        Self::new(z, z, z, z)
    }

    pub const fn identity() -> Self {
        let z = C64::new(0.0, 0.0);
        let o = C64::new(1.0, 0.0);
        Self::new(o, z, z, o)
    }

    pub fn diag(d1: C64, d2: C64) -> Self {
        Self::new(d1, C64::default(), C64::default(), d2)
    }

    #[inline]
    pub fn a11(&self) -> C64 {
        self.m[0]
    }
    #[inline]
    pub fn a12(&self) -> C64 {
        self.m[1]
    }
    #[inline]
    pub fn a21(&self) -> C64 {
        self.m[2]
    }
    #[inline]
    pub fn a22(&self) -> C64 {
        self.m[3]
    }

    pub fn trace(&self) -> C64 {
        self.m[0] + self.m[3]
    }

    pub fn det(&self) -> C64 {
        self.m[0] * self.m[3] - self.m[1] * self.m[2]
    }

    /// Inverse; callers are responsible for `det != 0`.
    pub fn inverse(&self) -> Self {
        let d = self.det();
        Self::new(self.m[3] / d, -self.m[1] / d, -self.m[2] / d, self.m[0] / d)
    }

    /// Inverse of a determinant-one matrix (the adjugate).
    pub fn inverse_sl2(&self) -> Self {
        Self::new(self.m[3], -self.m[1], -self.m[2], self.m[0])
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::new(self.m[0].conj(), self.m[2].conj(), self.m[1].conj(), self.m[3].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.m[0], self.m[2], self.m[1], self.m[3])
    }

    pub fn scale(&self, s: C64) -> Self {
        Self::new(self.m[0] * s, self.m[1] * s, self.m[2] * s, self.m[3] * s)
    }

    pub fn norm(&self) -> f64 {
        self.m.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn commutator(&self, other: &Self) -> Self {
        *self * *other - *other * *self
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().all(|x| x.re.is_finite() && x.im.is_finite())
    }

    /// Both eigenvalues `tr/2 ± sqrt(tr²/4 − det)`, ordered as in
    /// [`eigenvalues_tracefree`] relative to `tr/2`.
    pub fn eigenvalues(&self) -> (C64, C64) {
        let h = self.trace() * 0.5;
        let mu = order_root((h * h - self.det()).sqrt());
        (h + mu, h - mu)
    }

    /// A unit eigenvector for the eigenvalue `mu`.
    pub fn eigenvector(&self, mu: C64) -> [C64; 2] {
        // rows of (A - mu) annihilate the eigenvector; use the larger row
        let r1 = [self.m[0] - mu, self.m[1]];
        let r2 = [self.m[2], self.m[3] - mu];
        let n1 = r1[0].norm_sqr() + r1[1].norm_sqr();
        let n2 = r2[0].norm_sqr() + r2[1].norm_sqr();
        let r = if n1 >= n2 { r1 } else { r2 };
        let v = if r[0].norm() + r[1].norm() == 0.0 {
            [re(1.0), re(0.0)]
        } else {
            [r[1], -r[0]]
        };
        let n = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
        [v[0] / n, v[1] / n]
    }

    pub fn apply(&self, v: [C64; 2]) -> [C64; 2] {
        [self.m[0] * v[0] + self.m[1] * v[1], self.m[2] * v[0] + self.m[3] * v[1]]
    }

    /// Deviation from unitarity, `‖A*A − Id‖`.
    pub fn unitarity_defect(&self) -> f64 {
        (self.adjoint() * *self - Self::identity()).norm()
    }
}

impl Default for Matrix2c {
    fn default() -> Self {
        Self::zero()
    }
}

impl Add for Matrix2c {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.m[0] + o.m[0], self.m[1] + o.m[1], self.m[2] + o.m[2], self.m[3] + o.m[3])
    }
}

impl AddAssign for Matrix2c {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sub for Matrix2c {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.m[0] - o.m[0], self.m[1] - o.m[1], self.m[2] - o.m[2], self.m[3] - o.m[3])
    }
}

impl Neg for Matrix2c {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(re(-1.0))
    }
}

impl Mul for Matrix2c {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let a = &self.m;
        let b = &o.m;
        Self::new(
            a[0] * b[0] + a[1] * b[2],
            a[0] * b[1] + a[1] * b[3],
            a[2] * b[0] + a[3] * b[2],
            a[2] * b[1] + a[3] * b[3],
        )
    }
}

impl Mul<C64> for Matrix2c {
    type Output = Self;
    fn mul(self, s: C64) -> Self {
        self.scale(s)
    }
}

impl Mul<f64> for Matrix2c {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        self.scale(re(s))
    }
}

fn order_root(mu: C64) -> C64 {
    if mu.re > 0.0 || (mu.re == 0.0 && mu.im >= 0.0) {
        mu
    } else {
        -mu
    }
}

/// Eigenvalues `(μ, −μ)` of a trace-free matrix, `μ² = −det A`, with the
/// first one having nonnegative real part (ties: nonnegative imaginary part).
pub fn eigenvalues_tracefree(a: &Matrix2c) -> Result<(C64, C64)> {
    let tr = a.trace().norm();
    if tr >= TOL {
        return Err(Error::NotTraceFree(tr));
    }
    let mu = order_root((-a.det()).sqrt());
    Ok((mu, -mu))
}

pub fn is_nilpotent(a: &Matrix2c, tol: f64) -> bool {
    a.trace().norm() < tol && a.det().norm() < tol
}

impl Serialize for Matrix2c {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v: Vec<[f64; 2]> = self.m.iter().map(|z| [z.re, z.im]).collect();
        v.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Matrix2c {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v: [[f64; 2]; 4] = Deserialize::deserialize(d)?;
        Ok(Matrix2c { m: v.map(|p| c(p[0], p[1])) })
    }
}

/// Finite Laurent polynomial `Σ_{n=n_min}^{n_max} coeffs[n−n_min] λⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaurentScalar {
    pub n_min: i32,
    pub coeffs: Vec<C64>,
}

#[derive(Serialize, Deserialize)]
struct LaurentRepr<T> {
    n_min: i32,
    coeffs: Vec<T>,
}

impl Serialize for LaurentScalar {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        LaurentRepr { n_min: self.n_min, coeffs: self.coeffs.iter().map(|z| [z.re, z.im]).collect() }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LaurentScalar {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r: LaurentRepr<[f64; 2]> = Deserialize::deserialize(d)?;
        Ok(LaurentScalar { n_min: r.n_min, coeffs: r.coeffs.iter().map(|p| c(p[0], p[1])).collect() })
    }
}

impl LaurentScalar {
    pub fn new(n_min: i32, coeffs: Vec<C64>) -> Self {
        LaurentScalar { n_min, coeffs }
    }

    pub fn from_real(n_min: i32, coeffs: &[f64]) -> Self {
        Self::new(n_min, coeffs.iter().map(|&x| re(x)).collect())
    }

    pub fn zero() -> Self {
        Self::new(0, Vec::new())
    }

    /// Highest represented exponent (the truncation order N).
    pub fn n_max(&self) -> i32 {
        self.n_min + self.coeffs.len() as i32 - 1
    }

    pub fn coeff(&self, n: i32) -> C64 {
        let k = n - self.n_min;
        if k < 0 || k as usize >= self.coeffs.len() {
            C64::default()
        } else {
            self.coeffs[k as usize]
        }
    }

    pub fn eval(&self, lam: C64) -> Result<C64> {
        if lam == C64::default() && self.coeffs.iter().enumerate().any(|(k, z)| {
            self.n_min + (k as i32) < 0 && *z != C64::default()
        }) {
            return Err(Error::PoleAtZero);
        }
        Ok(self.eval_unchecked(lam))
    }

    /// Horner evaluation without the pole check.
    pub fn eval_unchecked(&self, lam: C64) -> C64 {
        let mut acc = C64::default();
        for z in self.coeffs.iter().rev() {
            acc = acc * lam + z;
        }
        acc * lam.powi(self.n_min)
    }

    /// Keeps exponents `<= n`.
    pub fn truncate(&self, n: i32) -> Self {
        let keep = (n - self.n_min + 1).clamp(0, self.coeffs.len() as i32) as usize;
        Self::new(self.n_min, self.coeffs[..keep].to_vec())
    }

    pub fn scale(&self, s: C64) -> Self {
        Self::new(self.n_min, self.coeffs.iter().map(|z| z * s).collect())
    }

    fn binop(&self, o: &Self, f: impl Fn(C64, C64) -> C64) -> Self {
        if self.coeffs.is_empty() {
            return Self::new(o.n_min, o.coeffs.iter().map(|&z| f(C64::default(), z)).collect());
        }
        if o.coeffs.is_empty() {
            return self.clone();
        }
        let lo = self.n_min.min(o.n_min);
        let hi = self.n_max().max(o.n_max());
        Self::new(lo, (lo..=hi).map(|n| f(self.coeff(n), o.coeff(n))).collect())
    }
}

impl Add for &LaurentScalar {
    type Output = LaurentScalar;
    fn add(self, o: &LaurentScalar) -> LaurentScalar {
        self.binop(o, |x, y| x + y)
    }
}

impl Sub for &LaurentScalar {
    type Output = LaurentScalar;
    fn sub(self, o: &LaurentScalar) -> LaurentScalar {
        self.binop(o, |x, y| x - y)
    }
}

/// Full product; every produced exponent is kept.
impl Mul for &LaurentScalar {
    type Output = LaurentScalar;
    fn mul(self, o: &LaurentScalar) -> LaurentScalar {
        if self.coeffs.is_empty() || o.coeffs.is_empty() {
            return LaurentScalar::zero();
        }
        let mut out = vec![C64::default(); self.coeffs.len() + o.coeffs.len() - 1];
        for (i, x) in self.coeffs.iter().enumerate() {
            for (j, y) in o.coeffs.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        LaurentScalar::new(self.n_min + o.n_min, out)
    }
}

/// Finite Laurent polynomial with [`Matrix2c`] coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct LaurentMatrix {
    pub n_min: i32,
    pub coeffs: Vec<Matrix2c>,
}

impl Serialize for LaurentMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        LaurentRepr { n_min: self.n_min, coeffs: self.coeffs.clone() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for LaurentMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r: LaurentRepr<Matrix2c> = Deserialize::deserialize(d)?;
        Ok(LaurentMatrix { n_min: r.n_min, coeffs: r.coeffs })
    }
}

impl LaurentMatrix {
    pub fn new(n_min: i32, coeffs: Vec<Matrix2c>) -> Self {
        LaurentMatrix { n_min, coeffs }
    }

    /// `s(λ)·M`.
    pub fn from_scalar(s: &LaurentScalar, m: Matrix2c) -> Self {
        Self::new(s.n_min, s.coeffs.iter().map(|z| m.scale(*z)).collect())
    }

    pub fn n_max(&self) -> i32 {
        self.n_min + self.coeffs.len() as i32 - 1
    }

    pub fn coeff(&self, n: i32) -> Matrix2c {
        let k = n - self.n_min;
        if k < 0 || k as usize >= self.coeffs.len() {
            Matrix2c::zero()
        } else {
            self.coeffs[k as usize]
        }
    }

    pub fn eval(&self, lam: C64) -> Result<Matrix2c> {
        if lam == C64::default()
            && (self.n_min..0).any(|n| self.coeff(n) != Matrix2c::zero())
        {
            return Err(Error::PoleAtZero);
        }
        let mut acc = Matrix2c::zero();
        for m in self.coeffs.iter().rev() {
            acc = acc.scale(lam) + *m;
        }
        Ok(acc.scale(lam.powi(self.n_min)))
    }

    pub fn truncate(&self, n: i32) -> Self {
        let keep = (n - self.n_min + 1).clamp(0, self.coeffs.len() as i32) as usize;
        Self::new(self.n_min, self.coeffs[..keep].to_vec())
    }
}

impl Add for &LaurentMatrix {
    type Output = LaurentMatrix;
    fn add(self, o: &LaurentMatrix) -> LaurentMatrix {
        if self.coeffs.is_empty() {
            return o.clone();
        }
        if o.coeffs.is_empty() {
            return self.clone();
        }
        let lo = self.n_min.min(o.n_min);
        let hi = self.n_max().max(o.n_max());
        LaurentMatrix::new(lo, (lo..=hi).map(|n| self.coeff(n) + o.coeff(n)).collect())
    }
}

/// Coefficient of λ⁻¹.
pub fn residue_at_zero(p: &LaurentMatrix) -> Matrix2c {
    p.coeff(-1)
}

/// Positive-definite Hermitian matrix with determinant one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HermitianMetric {
    pub h: Matrix2c,
}

impl HermitianMetric {
    pub fn new(h: Matrix2c, tol: f64) -> Result<Self> {
        let herm = (h - h.adjoint()).norm();
        let det = h.det();
        if herm > tol * h.norm().max(1.0) {
            return Err(Error::Input(format!("metric not Hermitian ({herm:.3e})")));
        }
        if h.m[0].re <= 0.0 || det.re <= 0.0 {
            return Err(Error::Input("metric not positive definite".into()));
        }
        if (det - 1.0).norm() > tol {
            return Err(Error::Input(format!("metric determinant {det} != 1")));
        }
        Ok(HermitianMetric { h })
    }

    /// Scales a positive-definite Hermitian matrix to determinant one.
    pub fn normalized(h: Matrix2c) -> Result<Self> {
        let h = (h + h.adjoint()).scale(re(0.5));
        let d = h.det().re;
        if h.m[0].re <= 0.0 || d <= 0.0 {
            return Err(Error::Input("metric not positive definite".into()));
        }
        Ok(HermitianMetric { h: h.scale(re(1.0 / d.sqrt())) })
    }

    /// Upper-triangular `C` with positive diagonal and `C*C = H`.
    pub fn cholesky_upper(&self) -> Matrix2c {
        let h = &self.h.m;
        let c11 = h[0].re.sqrt();
        let c12 = h[1] / c11;
        let c22 = (h[3].re - c12.norm_sqr()).max(0.0).sqrt();
        Matrix2c::new(re(c11), c12, C64::default(), re(c22))
    }
}
